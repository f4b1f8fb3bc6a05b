//! Repeated-game experiments.
//!
//! Episodes run strictly in sequence within a replicate because each one sees
//! the history of the ones before it. Replicates are independent and run in
//! parallel when the `parallel` feature is on.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AbortedEpisode, ClockConfig, EnvError, EpisodeRecord, EpisodeState, EpisodeStatus};
use crate::exec::{self, derive_seed, Execution};
use crate::latency::{default_actions, ActionSpec};
use crate::policy::{EpisodeLog, HistorySummary, Policy, PolicyContext, PolicyError, PolicySpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegretError {
    #[error("corrupted record k={k}: t_confirm={t_confirm} < t_true={t_true}")]
    CorruptedRecord { k: usize, t_true: f64, t_confirm: f64 },
    #[error("regret undefined for k={k}: n_check={n_check}, t_true={t_true}")]
    Domain { k: usize, n_check: u32, t_true: f64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Regret(#[from] RegretError),
    #[error("episode driver failed: {0}")]
    Driver(String),
}

/// `n_check · exp((t_confirm − t_true) / t_true)`.
pub fn regret_score(n_check: u32, t_confirm: f64, t_true: f64) -> f64 {
    n_check as f64 * ((t_confirm - t_true) / t_true).exp()
}

/// NaN times are rejected along with out-of-domain ones.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn regret(record: &EpisodeRecord) -> Result<f64, RegretError> {
    if !(record.t_true > 0.0) || record.n_check == 0 {
        return Err(RegretError::Domain {
            k: record.k,
            n_check: record.n_check,
            t_true: record.t_true,
        });
    }
    if !(record.t_confirm >= record.t_true) {
        return Err(RegretError::CorruptedRecord {
            k: record.k,
            t_true: record.t_true,
            t_confirm: record.t_confirm,
        });
    }
    Ok(regret_score(record.n_check, record.t_confirm, record.t_true))
}

/// Order in which actions are issued across episodes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    RoundRobin,
    /// A balanced round-robin multiset, permuted by the replicate's seed.
    SeededShuffle,
    /// Action ids in order; cycled when shorter than the episode count.
    Explicit(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: String,
}

fn default_episodes() -> usize {
    12
}
fn default_replicates() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_actions")]
    pub actions: Vec<ActionSpec>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
    pub policy: PolicySpec,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Number of most recent episodes shown to the policy; unlimited if absent.
    #[serde(default)]
    pub history_window: Option<usize>,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

impl ExperimentConfig {
    pub fn new(policy: PolicySpec, episodes: usize) -> Self {
        Self {
            actions: default_actions(),
            episodes,
            schedule: Schedule::RoundRobin,
            seed: 0,
            policy,
            clock: ClockConfig::default(),
            replicates: 1,
            history_window: None,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::InvalidConfig(m));
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.actions.is_empty() {
            return bad("at least one action is required".into());
        }
        let mut seen = HashSet::new();
        for a in &self.actions {
            a.validate().map_err(|e| RunError::InvalidConfig(e.to_string()))?;
            if !seen.insert(a.id.as_str()) {
                return bad(format!("duplicate action id `{}`", a.id));
            }
        }
        if let Schedule::Explicit(ids) = &self.schedule {
            if ids.is_empty() {
                return bad("explicit schedule is empty".into());
            }
            if let Some(unknown) = ids.iter().find(|id| !seen.contains(id.as_str())) {
                return bad(format!("explicit schedule references unknown action `{unknown}`"));
            }
        }
        if self.history_window == Some(0) {
            return bad("history_window must be at least 1 when set".into());
        }
        self.clock.validate()?;
        Ok(())
    }

    pub fn action(&self, id: &str) -> Option<&ActionSpec> {
        self.actions.iter().find(|a| a.id == id)
    }
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// Action ids for every episode of replicate 0.
pub fn build_schedule(cfg: &ExperimentConfig) -> Result<Vec<String>, RunError> {
    build_schedule_for(cfg, 0)
}

pub fn build_schedule_for(cfg: &ExperimentConfig, replicate: usize) -> Result<Vec<String>, RunError> {
    cfg.validate()?;
    let cycle = |ids: &[String]| -> Vec<String> { ids.iter().cycle().take(cfg.episodes).cloned().collect() };
    let ids: Vec<String> = cfg.actions.iter().map(|a| a.id.clone()).collect();
    Ok(match &cfg.schedule {
        Schedule::RoundRobin => cycle(&ids),
        Schedule::SeededShuffle => {
            let mut order = cycle(&ids);
            let seed = derive_seed(cfg.seed, &[replicate as u64, SHUFFLE_STREAM]);
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            order
        }
        Schedule::Explicit(explicit) => cycle(explicit),
    })
}

/// A finished episode, or one that ran out of moves.
#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeOutcome {
    Completed(EpisodeRecord),
    Aborted(AbortedEpisode),
}

/// What the runner hands an episode driver.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeRequest<'a> {
    pub k: usize,
    pub action: &'a ActionSpec,
    pub history: &'a [HistorySummary],
    pub detailed_history: &'a [EpisodeLog],
    pub seed: u64,
    pub clock: &'a ClockConfig,
}

/// Something that can play one episode: a reference policy or a model.
pub trait EpisodeDriver: Sync {
    fn run_episode(&self, req: EpisodeRequest<'_>) -> Result<EpisodeOutcome, RunError>;
}

/// Plays episodes with a deterministic [`Policy`].
pub struct PolicyDriver<P>(pub P);

impl<P: Policy> EpisodeDriver for PolicyDriver<P> {
    fn run_episode(&self, req: EpisodeRequest<'_>) -> Result<EpisodeOutcome, RunError> {
        let mut state = EpisodeState::start(req.k, req.action, req.seed, req.clock)?;
        let mut ctx = PolicyContext {
            command: req.action.command.clone(),
            k: req.k,
            elapsed_s: 0.0,
            observations: Vec::new(),
            history: req.history.to_vec(),
            detailed_history: req.detailed_history.to_vec(),
        };
        play(&mut state, &mut ctx, |ctx| self.0.decide(ctx))
    }
}

/// Drives `state` to completion, refreshing `ctx` before every decision.
pub fn play<F>(state: &mut EpisodeState, ctx: &mut PolicyContext, mut decide: F) -> Result<EpisodeOutcome, RunError>
where
    F: FnMut(&PolicyContext) -> crate::env::Move,
{
    loop {
        ctx.elapsed_s = state.clock_s();
        ctx.observations.clear();
        ctx.observations.extend_from_slice(state.moves());
        match state.step(decide(ctx)) {
            Ok(_) if state.status() == EpisodeStatus::Done => {
                return Ok(EpisodeOutcome::Completed(state.finish()?));
            }
            Ok(_) => {}
            Err(EnvError::BudgetExceeded { .. }) => {
                return Ok(EpisodeOutcome::Aborted(state.aborted().expect("aborted state")));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// One replicate of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub replicate: usize,
    pub schedule: Vec<String>,
    pub records: Vec<EpisodeRecord>,
    pub aborted: Vec<AbortedEpisode>,
}

impl RunResult {
    pub fn curves(&self) -> Result<BTreeMap<String, Vec<CurvePoint>>, RegretError> {
        learning_curves(self)
    }
}

fn window<T>(items: &[T], size: Option<usize>) -> &[T] {
    match size {
        Some(n) if items.len() > n => &items[items.len() - n..],
        _ => items,
    }
}

pub fn run_replicate<D: EpisodeDriver + ?Sized>(
    cfg: &ExperimentConfig,
    driver: &D,
    replicate: usize,
) -> Result<RunResult, RunError> {
    let schedule = build_schedule_for(cfg, replicate)?;
    let mut history = Vec::new();
    let mut detailed = Vec::new();
    let mut records = Vec::new();
    let mut aborted = Vec::new();
    for (i, id) in schedule.iter().enumerate() {
        let k = i + 1;
        let action = cfg.action(id).expect("schedule ids validated");
        let req = EpisodeRequest {
            k,
            action,
            history: window(&history, cfg.history_window),
            detailed_history: window(&detailed, cfg.history_window),
            seed: derive_seed(cfg.seed, &[replicate as u64, k as u64]),
            clock: &cfg.clock,
        };
        match driver.run_episode(req)? {
            EpisodeOutcome::Completed(record) => {
                history.push(HistorySummary::from_record(&record, &action.command));
                detailed.push(EpisodeLog::from_record(&record, &action.command));
                records.push(record);
            }
            EpisodeOutcome::Aborted(a) => aborted.push(a),
        }
    }
    Ok(RunResult {
        replicate,
        schedule,
        records,
        aborted,
    })
}

/// Replicate 0 of `cfg` with its reference policy.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult, RunError> {
    let policy = cfg.policy.reference()?;
    run_replicate(cfg, &PolicyDriver(policy), 0)
}

/// Every replicate of `cfg`, ordered by replicate index.
pub fn run_replicates<D: EpisodeDriver + ?Sized>(
    cfg: &ExperimentConfig,
    driver: &D,
    mode: Execution,
) -> Result<Vec<RunResult>, RunError> {
    cfg.validate()?;
    exec::map_indexed(cfg.replicates, mode, |r| run_replicate(cfg, driver, r))
        .into_iter()
        .collect()
}

/// All replicates of a reference-policy experiment.
pub fn run_reference(cfg: &ExperimentConfig, mode: Execution) -> Result<Vec<RunResult>, RunError> {
    let policy = cfg.policy.reference()?;
    run_replicates(cfg, &PolicyDriver(policy), mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub regret: f64,
    pub time_diff_s: f64,
    pub n_check: u32,
}

/// Per-action `(k, regret, t_confirm − t_true, n_check)` series, in episode
/// order. Aborted episodes never appear.
pub fn learning_curves(result: &RunResult) -> Result<BTreeMap<String, Vec<CurvePoint>>, RegretError> {
    let mut curves: BTreeMap<String, Vec<CurvePoint>> = BTreeMap::new();
    for r in &result.records {
        curves.entry(r.action_id.clone()).or_default().push(CurvePoint {
            k: r.k,
            regret: regret(r)?,
            time_diff_s: r.t_confirm - r.t_true,
            n_check: r.n_check,
        });
    }
    Ok(curves)
}
