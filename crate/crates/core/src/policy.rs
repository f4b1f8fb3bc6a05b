//! Reference wait policies.
//!
//! Every policy is a pure function of a [`PolicyContext`] and its own
//! configuration. Within an episode they all follow the same rhythm: sleep a
//! planned amount, check, and after a PENDING sleep a recovery step and check
//! again. They differ in how the planned wait is chosen.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{EpisodeRecord, Move, MoveEntry, Observation};
use crate::latency::default_actions;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid policy parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("policy kind `{0}` is not a reference policy")]
    NotReference(&'static str),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> PolicyError {
    PolicyError::InvalidParam {
        field,
        reason: reason.into(),
    }
}

/// Per-episode digest carried into later episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub episode: usize,
    pub command: String,
    pub executed_sleep_s: f64,
    pub check_count: u32,
    pub total_time_s: f64,
}

impl HistorySummary {
    pub fn from_record(record: &EpisodeRecord, command: &str) -> Self {
        Self {
            episode: record.k,
            command: command.to_string(),
            executed_sleep_s: record.total_sleep_s,
            check_count: record.n_check,
            total_time_s: record.t_confirm,
        }
    }
}

/// Move log of a prior episode, without its completion time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub command: String,
    pub moves: Vec<MoveEntry>,
}

impl EpisodeLog {
    pub fn from_record(record: &EpisodeRecord, command: &str) -> Self {
        Self {
            episode: record.k,
            command: command.to_string(),
            moves: record.moves.clone(),
        }
    }
}

/// Everything a policy may see.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyContext {
    pub command: String,
    pub k: usize,
    pub elapsed_s: f64,
    pub observations: Vec<MoveEntry>,
    pub history: Vec<HistorySummary>,
    pub detailed_history: Vec<EpisodeLog>,
}

impl PolicyContext {
    pub fn new(command: impl Into<String>, k: usize) -> Self {
        Self {
            command: command.into(),
            k,
            ..Self::default()
        }
    }

    fn last_observation(&self) -> Option<Observation> {
        self.observations.last().map(|m| m.observation)
    }

    /// Most recent summary for this context's command.
    pub fn last_for_command(&self) -> Option<&HistorySummary> {
        self.history.iter().rev().find(|h| h.command == self.command)
    }
}

pub trait Policy: Send + Sync {
    fn decide(&self, ctx: &PolicyContext) -> Move;
}

/// Sleep `planned`, check, and on PENDING sleep `recovery` then check again.
fn follow_plan(ctx: &PolicyContext, planned: f64, recovery: f64) -> Move {
    match ctx.last_observation() {
        None => Move::sleep(planned),
        Some(Observation::Slept) => Move::Check,
        Some(Observation::Pending) => Move::sleep(recovery),
        Some(Observation::Done) => Move::Check,
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), PolicyError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn unit_fraction(field: &'static str, v: f64) -> Result<(), PolicyError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must lie in (0, 1], got {v}")))
    }
}

/// Polling at a fixed interval.
pub fn decide_periodic(ctx: &PolicyContext, interval_s: f64) -> Move {
    follow_plan(ctx, interval_s, interval_s)
}

pub const STATIC_RECOVERY_S: f64 = 5.0;

/// One fixed wait regardless of history.
pub fn decide_static(ctx: &PolicyContext, wait_s: f64) -> Move {
    follow_plan(ctx, wait_s, STATIC_RECOVERY_S)
}

/// Baseline waits keyed by command: image update 120 s, service restart 90 s,
/// cluster scale-up 60 s.
pub fn default_prior_table() -> BTreeMap<String, f64> {
    let waits = [120.0, 90.0, 60.0];
    default_actions()
        .into_iter()
        .zip(waits)
        .map(|(a, w)| (a.command, w))
        .collect()
}

fn default_prior() -> BTreeMap<String, f64> {
    default_prior_table()
}
fn default_wait() -> f64 {
    120.0
}
fn default_reduction() -> f64 {
    0.10
}
fn default_recovery_frac() -> f64 {
    0.25
}
fn default_failure_margin() -> f64 {
    1.05
}
fn default_floor() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseConfig {
    #[serde(default = "default_prior")]
    pub prior_table: BTreeMap<String, f64>,
    /// Used for commands missing from `prior_table`.
    #[serde(default = "default_wait")]
    pub default_wait_s: f64,
    #[serde(default = "default_reduction")]
    pub reduction: f64,
    #[serde(default = "default_recovery_frac")]
    pub recovery_step_frac: f64,
    #[serde(default = "default_failure_margin")]
    pub failure_margin: f64,
    #[serde(default = "default_floor")]
    pub floor_s: f64,
    /// Never plan below the total time of an earlier failed episode of the
    /// same command.
    #[serde(default = "default_true")]
    pub failure_floor: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TwoPhaseConfig {
    fn default() -> Self {
        Self {
            prior_table: default_prior(),
            default_wait_s: default_wait(),
            reduction: default_reduction(),
            recovery_step_frac: default_recovery_frac(),
            failure_margin: default_failure_margin(),
            floor_s: default_floor(),
            failure_floor: true,
        }
    }
}

impl TwoPhaseConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(0.05..=0.25).contains(&self.reduction) {
            return Err(invalid(
                "reduction",
                format!("must lie in [0.05, 0.25], got {}", self.reduction),
            ));
        }
        unit_fraction("recovery_step_frac", self.recovery_step_frac)?;
        positive("failure_margin", self.failure_margin)?;
        positive("floor_s", self.floor_s)?;
        positive("default_wait_s", self.default_wait_s)?;
        for w in self.prior_table.values() {
            positive("prior_table", *w)?;
        }
        Ok(())
    }

    fn prior_for(&self, command: &str) -> f64 {
        self.prior_table
            .get(command)
            .copied()
            .unwrap_or(self.default_wait_s)
    }
}

/// The wait the two-phase strategy commits to before this episode's first
/// check, using only history for the current command.
pub fn plan_two_phase(ctx: &PolicyContext, cfg: &TwoPhaseConfig) -> f64 {
    match ctx.last_for_command() {
        None => cfg.prior_for(&ctx.command),
        Some(last) if last.check_count <= 1 => {
            let reduced = (last.executed_sleep_s * (1.0 - cfg.reduction)).max(cfg.floor_s);
            if cfg.failure_floor {
                reduced.max(failed_total_floor(ctx))
            } else {
                reduced
            }
        }
        Some(last) => cfg.failure_margin * last.total_time_s,
    }
}

/// Largest total time among failed (multi-check) episodes of this command.
fn failed_total_floor(ctx: &PolicyContext) -> f64 {
    ctx.history
        .iter()
        .filter(|h| h.command == ctx.command && h.check_count > 1)
        .map(|h| h.total_time_s)
        .fold(0.0, f64::max)
}

pub fn decide_two_phase(ctx: &PolicyContext, cfg: &TwoPhaseConfig) -> Move {
    let planned = plan_two_phase(ctx, cfg);
    follow_plan(ctx, planned, (cfg.recovery_step_frac * planned).max(cfg.floor_s))
}

/// Bounds on a hidden completion time implied by one episode's checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoredInterval {
    /// Clock of the last PENDING check, or 0. Exclusive.
    pub lo_s: f64,
    /// Clock of the DONE check. Inclusive.
    pub hi_s: f64,
}

impl CensoredInterval {
    pub fn contains(&self, t: f64) -> bool {
        self.lo_s < t && t <= self.hi_s
    }
}

/// `(last PENDING, DONE]` for every prior episode of `command`. Logs without a
/// DONE check are skipped.
pub fn censored_bounds(detailed_history: &[EpisodeLog], command: &str) -> Vec<CensoredInterval> {
    detailed_history
        .iter()
        .filter(|log| log.command == command)
        .filter_map(|log| {
            let done = log
                .moves
                .iter()
                .position(|m| m.observation == Observation::Done)?;
            let lo_s = log.moves[..done]
                .iter()
                .rev()
                .find(|m| m.observation == Observation::Pending)
                .map_or(0.0, |m| m.clock_s);
            Some(CensoredInterval {
                lo_s,
                hi_s: log.moves[done].clock_s,
            })
        })
        .collect()
}

/// Nearest-rank empirical quantile: the smallest sample `x` with at least a
/// fraction `q` of the sample `<= x`.
pub fn nearest_rank_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

fn default_q() -> f64 {
    0.9
}
fn default_shrink() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileConfig {
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_shrink")]
    pub shrink: f64,
    #[serde(default = "default_prior")]
    pub prior_table: BTreeMap<String, f64>,
    #[serde(default = "default_wait")]
    pub default_wait_s: f64,
    #[serde(default = "default_recovery_frac")]
    pub recovery_step_frac: f64,
    #[serde(default = "default_floor")]
    pub floor_s: f64,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        Self {
            q: default_q(),
            shrink: default_shrink(),
            prior_table: default_prior(),
            default_wait_s: default_wait(),
            recovery_step_frac: default_recovery_frac(),
            floor_s: default_floor(),
        }
    }
}

impl QuantileConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        unit_fraction("q", self.q)?;
        if !(0.0..1.0).contains(&self.shrink) {
            return Err(invalid("shrink", format!("must lie in [0, 1), got {}", self.shrink)));
        }
        unit_fraction("recovery_step_frac", self.recovery_step_frac)?;
        positive("floor_s", self.floor_s)?;
        positive("default_wait_s", self.default_wait_s)?;
        for w in self.prior_table.values() {
            positive("prior_table", *w)?;
        }
        Ok(())
    }
}

pub fn plan_quantile(ctx: &PolicyContext, cfg: &QuantileConfig) -> f64 {
    let intervals = censored_bounds(&ctx.detailed_history, &ctx.command);
    let uppers: Vec<f64> = intervals.iter().map(|i| i.hi_s).collect();
    match nearest_rank_quantile(&uppers, cfg.q) {
        None => cfg
            .prior_table
            .get(&ctx.command)
            .copied()
            .unwrap_or(cfg.default_wait_s),
        Some(upper) => {
            let max_lo = intervals.iter().map(|i| i.lo_s).fold(0.0, f64::max);
            ((1.0 - cfg.shrink) * upper).max(max_lo).max(cfg.floor_s)
        }
    }
}

pub fn decide_quantile(ctx: &PolicyContext, cfg: &QuantileConfig) -> Move {
    let planned = plan_quantile(ctx, cfg);
    follow_plan(ctx, planned, (cfg.recovery_step_frac * planned).max(cfg.floor_s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicParams {
    pub interval_s: f64,
}

impl Default for PeriodicParams {
    fn default() -> Self {
        Self { interval_s: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticParams {
    pub wait_s: f64,
}

impl Default for StaticParams {
    fn default() -> Self {
        Self { wait_s: 60.0 }
    }
}

/// Policy selection as it appears in experiment config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum PolicySpec {
    Periodic(#[serde(default)] PeriodicParams),
    Static(#[serde(default)] StaticParams),
    TwoPhase(#[serde(default)] TwoPhaseConfig),
    Quantile(#[serde(default)] QuantileConfig),
    /// Chat-completion endpoint settings, interpreted by the LLM bridge.
    Llm(#[serde(default)] serde_json::Value),
}

impl PolicySpec {
    pub fn kind(&self) -> &'static str {
        match self {
            PolicySpec::Periodic(_) => "periodic",
            PolicySpec::Static(_) => "static",
            PolicySpec::TwoPhase(_) => "two_phase",
            PolicySpec::Quantile(_) => "quantile",
            PolicySpec::Llm(_) => "llm",
        }
    }

    pub fn reference(&self) -> Result<ReferencePolicy, PolicyError> {
        let policy = match self {
            PolicySpec::Periodic(p) => {
                positive("interval_s", p.interval_s)?;
                ReferencePolicy::Periodic(p.interval_s)
            }
            PolicySpec::Static(p) => {
                positive("wait_s", p.wait_s)?;
                ReferencePolicy::Static(p.wait_s)
            }
            PolicySpec::TwoPhase(c) => {
                c.validate()?;
                ReferencePolicy::TwoPhase(c.clone())
            }
            PolicySpec::Quantile(c) => {
                c.validate()?;
                ReferencePolicy::Quantile(c.clone())
            }
            PolicySpec::Llm(_) => return Err(PolicyError::NotReference("llm")),
        };
        Ok(policy)
    }
}

/// A validated deterministic policy.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferencePolicy {
    Periodic(f64),
    Static(f64),
    TwoPhase(TwoPhaseConfig),
    Quantile(QuantileConfig),
}

impl Policy for ReferencePolicy {
    fn decide(&self, ctx: &PolicyContext) -> Move {
        match self {
            ReferencePolicy::Periodic(interval) => decide_periodic(ctx, *interval),
            ReferencePolicy::Static(wait) => decide_static(ctx, *wait),
            ReferencePolicy::TwoPhase(cfg) => decide_two_phase(ctx, cfg),
            ReferencePolicy::Quantile(cfg) => decide_quantile(ctx, cfg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RESTART: &str = "kubectl rollout restart statefulset/prometheus-db";
    const SCALE: &str = "kubectl scale statefulset/etcd-cluster --replicas=5";
    const IMAGE: &str = "kubectl set image deployment/webapp-frontend new-container=nginx:1.23.4";

    fn entry(clock_s: f64, action: Move, observation: Observation) -> MoveEntry {
        MoveEntry {
            clock_s,
            action,
            observation,
        }
    }

    fn summary(episode: usize, command: &str, sleep: f64, checks: u32, total: f64) -> HistorySummary {
        HistorySummary {
            episode,
            command: command.into(),
            executed_sleep_s: sleep,
            check_count: checks,
            total_time_s: total,
        }
    }

    /// Single-check episode log that confirmed at `upper`.
    fn log(episode: usize, command: &str, upper: f64) -> EpisodeLog {
        EpisodeLog {
            episode,
            command: command.into(),
            moves: vec![
                entry(0.0, Move::sleep(upper), Observation::Slept),
                entry(upper, Move::Check, Observation::Done),
            ],
        }
    }

    #[test]
    fn periodic_alternates() {
        let mut ctx = PolicyContext::new(IMAGE, 1);
        assert_eq!(decide_periodic(&ctx, 10.0), Move::sleep(10.0));
        ctx.observations
            .push(entry(0.0, Move::sleep(10.0), Observation::Slept));
        assert_eq!(decide_periodic(&ctx, 10.0), Move::Check);
        ctx.observations.push(entry(10.0, Move::Check, Observation::Pending));
        assert_eq!(decide_periodic(&ctx, 10.0), Move::sleep(10.0));
    }

    #[test]
    fn static_waits_then_recovers_in_small_steps() {
        let mut ctx = PolicyContext::new(SCALE, 1);
        assert_eq!(decide_static(&ctx, 60.0), Move::sleep(60.0));
        ctx.observations
            .push(entry(0.0, Move::sleep(60.0), Observation::Slept));
        assert_eq!(decide_static(&ctx, 60.0), Move::Check);
        ctx.observations.push(entry(60.0, Move::Check, Observation::Pending));
        assert_eq!(decide_static(&ctx, 60.0), Move::sleep(5.0));
    }

    #[test]
    fn two_phase_cold_starts_from_prior_table() {
        let cfg = TwoPhaseConfig::default();
        assert_eq!(decide_two_phase(&PolicyContext::new(RESTART, 2), &cfg), Move::sleep(90.0));
        assert_eq!(decide_two_phase(&PolicyContext::new(SCALE, 1), &cfg), Move::sleep(60.0));
        assert_eq!(decide_two_phase(&PolicyContext::new(IMAGE, 3), &cfg), Move::sleep(120.0));
        assert_eq!(
            decide_two_phase(&PolicyContext::new("kubectl drain node-7", 1), &cfg),
            Move::sleep(120.0)
        );
    }

    #[test]
    fn two_phase_reduces_after_success() {
        let cfg = TwoPhaseConfig::default();
        let mut ctx = PolicyContext::new(IMAGE, 4);
        ctx.history = vec![
            summary(1, SCALE, 60.0, 1, 60.0),
            summary(2, RESTART, 90.0, 1, 90.0),
            summary(3, IMAGE, 120.0, 1, 120.0),
        ];
        assert_eq!(decide_two_phase(&ctx, &cfg), Move::sleep(108.0));
    }

    #[test]
    fn two_phase_restores_safety_after_failure() {
        let cfg = TwoPhaseConfig::default();
        let mut ctx = PolicyContext::new(SCALE, 6);
        ctx.history = vec![summary(4, SCALE, 62.0, 3, 62.0)];
        let planned = plan_two_phase(&ctx, &cfg);
        assert!((planned - 62.0 * 1.05).abs() < 1e-12);
        // recovery step after a pending check
        ctx.observations
            .push(entry(0.0, Move::sleep(planned), Observation::Slept));
        ctx.observations.push(entry(planned, Move::Check, Observation::Pending));
        assert_eq!(decide_two_phase(&ctx, &cfg), Move::sleep(0.25 * planned));
    }

    #[test]
    fn two_phase_honors_floor() {
        let cfg = TwoPhaseConfig {
            floor_s: 30.0,
            ..TwoPhaseConfig::default()
        };
        let mut ctx = PolicyContext::new(IMAGE, 2);
        ctx.history = vec![summary(1, IMAGE, 31.0, 1, 31.0)];
        assert_eq!(plan_two_phase(&ctx, &cfg), 30.0);
    }

    #[test]
    fn two_phase_stops_reducing_at_failed_total() {
        let mut ctx = PolicyContext::new(SCALE, 9);
        ctx.history = vec![
            summary(3, SCALE, 48.6, 2, 60.75),
            summary(6, SCALE, 63.7875, 1, 63.7875),
        ];
        let cfg = TwoPhaseConfig::default();
        assert_eq!(plan_two_phase(&ctx, &cfg), 60.75);
        let plain = TwoPhaseConfig {
            failure_floor: false,
            ..TwoPhaseConfig::default()
        };
        assert!((plan_two_phase(&ctx, &plain) - 0.9 * 63.7875).abs() < 1e-12);
        // failures of other commands do not count
        ctx.history[0].command = IMAGE.into();
        assert!((plan_two_phase(&ctx, &cfg) - 0.9 * 63.7875).abs() < 1e-12);
    }

    #[test]
    fn two_phase_config_validation() {
        let mut cfg = TwoPhaseConfig::default();
        cfg.validate().unwrap();
        cfg.reduction = 0.5;
        assert!(cfg.validate().is_err());
        let cfg = TwoPhaseConfig {
            floor_s: 0.0,
            ..TwoPhaseConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TwoPhaseConfig {
            recovery_step_frac: 1.5,
            ..TwoPhaseConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn censored_bounds_from_logs() {
        let polled = EpisodeLog {
            episode: 1,
            command: IMAGE.into(),
            moves: vec![
                entry(0.0, Move::sleep(10.0), Observation::Slept),
                entry(10.0, Move::Check, Observation::Pending),
                entry(10.0, Move::sleep(30.0), Observation::Slept),
                entry(40.0, Move::Check, Observation::Done),
            ],
        };
        let single = log(2, IMAGE, 60.0);
        let unfinished = EpisodeLog {
            episode: 3,
            command: IMAGE.into(),
            moves: vec![entry(0.0, Move::Check, Observation::Pending)],
        };
        let other = log(4, SCALE, 70.0);
        let got = censored_bounds(&[polled, single, unfinished, other], IMAGE);
        assert_eq!(
            got,
            vec![
                CensoredInterval { lo_s: 10.0, hi_s: 40.0 },
                CensoredInterval { lo_s: 0.0, hi_s: 60.0 },
            ]
        );
    }

    /// Brute force: the smallest sample value whose empirical CDF reaches q.
    fn quantile_oracle(values: &[f64], q: f64) -> f64 {
        let n = values.len() as f64;
        let mut candidates: Vec<f64> = values
            .iter()
            .copied()
            .filter(|&x| values.iter().filter(|&&y| y <= x).count() as f64 >= q * n - 1e-12)
            .collect();
        candidates.sort_by(f64::total_cmp);
        candidates[0]
    }

    #[test]
    fn quantile_plans() {
        let mut cfg = QuantileConfig {
            q: 1.0,
            shrink: 0.0,
            ..QuantileConfig::default()
        };
        let mut ctx = PolicyContext::new(IMAGE, 4);
        ctx.detailed_history = vec![log(1, IMAGE, 40.0), log(2, IMAGE, 38.0), log(3, IMAGE, 42.0)];
        assert_eq!(decide_quantile(&ctx, &cfg), Move::sleep(42.0));

        cfg.q = 0.5;
        cfg.shrink = 0.1;
        let expected = 0.9 * quantile_oracle(&[40.0, 38.0, 42.0], 0.5);
        assert_eq!(expected, 36.0);
        assert_eq!(decide_quantile(&ctx, &cfg), Move::sleep(36.0));

        let cold = PolicyContext::new(IMAGE, 1);
        assert_eq!(decide_quantile(&cold, &cfg), Move::sleep(120.0));
    }

    #[test]
    fn quantile_floors_at_largest_lower_bound() {
        let cfg = QuantileConfig {
            q: 0.5,
            shrink: 0.5,
            ..QuantileConfig::default()
        };
        let mut ctx = PolicyContext::new(IMAGE, 3);
        ctx.detailed_history = vec![EpisodeLog {
            episode: 1,
            command: IMAGE.into(),
            moves: vec![
                entry(0.0, Move::sleep(30.0), Observation::Slept),
                entry(30.0, Move::Check, Observation::Pending),
                entry(30.0, Move::sleep(10.0), Observation::Slept),
                entry(40.0, Move::Check, Observation::Done),
            ],
        }];
        assert_eq!(plan_quantile(&ctx, &cfg), 30.0);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let json = r#"{"kind":"two_phase","params":{"reduction":0.2}}"#;
        let spec: PolicySpec = serde_json::from_str(json).unwrap();
        match &spec {
            PolicySpec::TwoPhase(c) => {
                assert_eq!(c.reduction, 0.2);
                assert_eq!(c.failure_margin, 1.05);
            }
            other => panic!("unexpected {other:?}"),
        }
        let spec: PolicySpec = serde_json::from_str(r#"{"kind":"static","params":{"wait_s":60}}"#).unwrap();
        assert_eq!(spec.reference().unwrap(), ReferencePolicy::Static(60.0));
        let spec: PolicySpec = serde_json::from_str(r#"{"kind":"llm","params":{"model":"m"}}"#).unwrap();
        assert_eq!(spec.reference().unwrap_err(), PolicyError::NotReference("llm"));
        let bad: PolicySpec = serde_json::from_str(r#"{"kind":"periodic","params":{"interval_s":-1}}"#).unwrap();
        assert!(bad.reference().is_err());
    }

    proptest! {
        #[test]
        fn quantile_matches_oracle(values in proptest::collection::vec(1.0f64..100.0, 1..30), q in 0.01f64..=1.0) {
            prop_assert_eq!(nearest_rank_quantile(&values, q).unwrap(), quantile_oracle(&values, q));
        }

        #[test]
        fn two_phase_non_increasing_under_success(start in 30.0f64..200.0, r in 0.05f64..=0.25, n in 1usize..30) {
            let cfg = TwoPhaseConfig { reduction: r, ..TwoPhaseConfig::default() };
            let mut ctx = PolicyContext::new(IMAGE, 1);
            ctx.history.push(summary(0, IMAGE, start, 1, start));
            let mut prev = start;
            for k in 1..=n {
                let w = plan_two_phase(&ctx, &cfg);
                prop_assert!(w <= prev);
                prop_assert!(w >= cfg.floor_s);
                ctx.history.push(summary(k, IMAGE, w, 1, w));
                prev = w;
            }
        }

        #[test]
        fn two_phase_after_failure_covers_total_time(total in 1.0f64..300.0, checks in 2u32..10, margin in 1.0f64..2.0) {
            let cfg = TwoPhaseConfig { failure_margin: margin, ..TwoPhaseConfig::default() };
            let mut ctx = PolicyContext::new(SCALE, 2);
            ctx.history.push(summary(1, SCALE, total * 0.9, checks, total));
            prop_assert!(plan_two_phase(&ctx, &cfg) >= total);
        }

        #[test]
        fn decisions_are_pure(sleep in 1.0f64..100.0, checks in 1u32..4) {
            let mut ctx = PolicyContext::new(RESTART, 5);
            ctx.history.push(summary(2, RESTART, sleep, checks, sleep + 1.0));
            ctx.detailed_history.push(log(2, RESTART, sleep));
            for p in [
                ReferencePolicy::Periodic(7.0),
                ReferencePolicy::Static(60.0),
                ReferencePolicy::TwoPhase(TwoPhaseConfig::default()),
                ReferencePolicy::Quantile(QuantileConfig::default()),
            ] {
                prop_assert_eq!(p.decide(&ctx), p.decide(&ctx.clone()));
            }
        }
    }
}
