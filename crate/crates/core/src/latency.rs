//! Task latency model.
//!
//! Every simulated command completes after a hidden delay drawn from a Gamma
//! distribution truncated to a closed interval. Multi-stage operations (API
//! validation, pod termination, image pull, container start) each contribute
//! roughly exponential time, and their sum is Gamma distributed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::exec;

/// Consecutive rejections after which truncation bounds are declared infeasible.
pub const MAX_CONSECUTIVE_REJECTIONS: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LatencyError {
    #[error("gamma parameters out of domain: shape={shape}, scale={scale}, x={x}")]
    ParameterDomain { shape: f64, scale: f64, x: f64 },
    #[error("invalid action `{id}`: {reason}")]
    InvalidAction { id: String, reason: String },
    #[error("bounds [{lo_s}, {hi_s}] of action `{id}` rejected {MAX_CONSECUTIVE_REJECTIONS} consecutive draws")]
    InfeasibleBounds { id: String, lo_s: f64, hi_s: f64 },
}

/// One simulated command and the latency distribution behind it.
///
/// `mean_s` is the mean of the parent (untruncated) Gamma. The Gamma scale is
/// always derived as `mean_s / shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub id: String,
    pub name: String,
    pub command: String,
    pub mean_s: f64,
    pub shape: f64,
    pub lo_s: f64,
    pub hi_s: f64,
}

impl ActionSpec {
    pub fn scale(&self) -> f64 {
        self.mean_s / self.shape
    }

    /// Mode of the parent Gamma; zero when `shape <= 1`.
    pub fn mode(&self) -> f64 {
        ((self.shape - 1.0) * self.scale()).max(0.0)
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        let fail = |reason: &str| {
            Err(LatencyError::InvalidAction {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        let finite = [self.mean_s, self.shape, self.lo_s, self.hi_s]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return fail("parameters must be finite");
        }
        if self.id.is_empty() {
            return fail("id must not be empty");
        }
        if self.mean_s <= 0.0 || self.shape <= 0.0 {
            return fail("mean_s and shape must be positive");
        }
        if !(0.0 < self.lo_s && self.lo_s < self.hi_s) {
            return fail("bounds must satisfy 0 < lo_s < hi_s");
        }
        if !(self.lo_s < self.mean_s && self.mean_s < self.hi_s) {
            return fail("bounds must straddle mean_s");
        }
        Ok(())
    }
}

/// The three-command Kubernetes catalog: image update, service restart and
/// cluster scale-up, all with shape 20.
///
/// Bounds keep the heaviest action under 60 s.
pub fn default_actions() -> Vec<ActionSpec> {
    let spec = |id: &str, name: &str, command: &str, mean_s: f64, lo_s: f64, hi_s: f64| ActionSpec {
        id: id.into(),
        name: name.into(),
        command: command.into(),
        mean_s,
        shape: 20.0,
        lo_s,
        hi_s,
    };
    vec![
        spec(
            "A",
            "Image Update",
            "kubectl set image deployment/webapp-frontend new-container=nginx:1.23.4",
            35.0,
            28.0,
            42.0,
        ),
        spec(
            "B",
            "Service Restart",
            "kubectl rollout restart statefulset/prometheus-db",
            45.0,
            36.0,
            54.0,
        ),
        spec(
            "C",
            "Cluster Scale-up",
            "kubectl scale statefulset/etcd-cluster --replicas=5",
            55.0,
            44.0,
            58.0,
        ),
    ]
}

fn check_domain(x: f64, shape: f64, scale: f64) -> Result<(), LatencyError> {
    let ok = shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0 && x >= 0.0;
    if ok {
        Ok(())
    } else {
        Err(LatencyError::ParameterDomain { shape, scale, x })
    }
}

/// Gamma density `x^(k-1) e^(-x/θ) / (Γ(k) θ^k)` in 1/seconds.
pub fn gamma_pdf(x: f64, shape: f64, scale: f64) -> Result<f64, LatencyError> {
    check_domain(x, shape, scale)?;
    if x == 0.0 {
        return Ok(if shape < 1.0 {
            f64::INFINITY
        } else if shape == 1.0 {
            1.0 / scale
        } else {
            0.0
        });
    }
    let ln = (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln();
    Ok(ln.exp())
}

/// Gamma cumulative distribution (regularized lower incomplete gamma).
pub fn gamma_cdf(x: f64, shape: f64, scale: f64) -> Result<f64, LatencyError> {
    check_domain(x, shape, scale)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(gamma_lr(shape, x / scale))
}

/// Seeded source of hidden completion times for one action.
#[derive(Debug, Clone)]
pub struct LatencySampler {
    spec: ActionSpec,
    gamma: Gamma<f64>,
    rng: ChaCha8Rng,
}

impl LatencySampler {
    pub fn new(spec: ActionSpec, seed: u64) -> Result<Self, LatencyError> {
        spec.validate()?;
        let gamma = Gamma::new(spec.shape, spec.scale()).map_err(|_| LatencyError::ParameterDomain {
            shape: spec.shape,
            scale: spec.scale(),
            x: 0.0,
        })?;
        Ok(Self {
            spec,
            gamma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn spec(&self) -> &ActionSpec {
        &self.spec
    }

    /// One draw from the parent Gamma, ignoring the bounds.
    pub fn sample_untruncated(&mut self) -> f64 {
        self.gamma.sample(&mut self.rng)
    }

    /// One draw conditioned on `[lo_s, hi_s]` by rejection.
    pub fn sample_t_true(&mut self) -> Result<f64, LatencyError> {
        for _ in 0..MAX_CONSECUTIVE_REJECTIONS {
            let x = self.gamma.sample(&mut self.rng);
            if x >= self.spec.lo_s && x <= self.spec.hi_s {
                return Ok(x);
            }
        }
        Err(LatencyError::InfeasibleBounds {
            id: self.spec.id.clone(),
            lo_s: self.spec.lo_s,
            hi_s: self.spec.hi_s,
        })
    }
}

/// Draws per independent stream in [`draw_many`].
const DRAW_CHUNK: usize = 65_536;

/// Draws `n` samples split across fixed-size seeded streams.
///
/// The output depends only on `(spec, seed, n, truncated)`, never on whether
/// the chunks ran in parallel.
pub fn draw_many(
    spec: &ActionSpec,
    seed: u64,
    n: usize,
    truncated: bool,
    mode: exec::Execution,
) -> Result<Vec<f64>, LatencyError> {
    spec.validate()?;
    let chunks = n.div_ceil(DRAW_CHUNK);
    let parts = exec::map_indexed(chunks, mode, |c| {
        let len = DRAW_CHUNK.min(n - c * DRAW_CHUNK);
        let mut sampler = LatencySampler::new(spec.clone(), exec::derive_seed(seed, &[c as u64]))?;
        (0..len)
            .map(|_| {
                if truncated {
                    sampler.sample_t_true()
                } else {
                    Ok(sampler.sample_untruncated())
                }
            })
            .collect::<Result<Vec<_>, _>>()
    });
    let mut out = Vec::with_capacity(n);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Two-sided Kolmogorov–Smirnov statistic of `samples` against the parent
/// Gamma CDF of `spec`. Sorts `samples` in place.
pub fn ks_statistic(samples: &mut [f64], shape: f64, scale: f64) -> Result<f64, LatencyError> {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let cdfs = exec::map_indexed(samples.len(), exec::Execution::default(), |i| {
        gamma_cdf(samples[i].max(0.0), shape, scale)
    });
    let mut d: f64 = 0.0;
    for (i, cdf) in cdfs.into_iter().enumerate() {
        let f = cdf?;
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    Ok(d)
}
