//! Episodic asynchronous-task environment.
//!
//! An episode begins right after a command was issued. The completion time is
//! hidden; the agent can only sleep or check, and a check answers PENDING or
//! DONE. The environment never reveals progress.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::derive_seed;
use crate::latency::{ActionSpec, LatencyError, LatencySampler};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("episode is no longer running")]
    EpisodeClosed,
    #[error("move budget of {budget} exhausted; episode aborted")]
    BudgetExceeded { budget: u32 },
    #[error("invalid move: {0}")]
    InvalidMove(String),
    #[error("episode cannot be finalized while {0:?}")]
    NotFinalizable(EpisodeStatus),
    #[error("invalid clock config: {0}")]
    InvalidClock(String),
    #[error(transparent)]
    Latency(#[from] LatencyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Sleeps advance simulated time instantly.
    #[default]
    Virtual,
    /// Sleeps block the thread and the clock is real elapsed time, so model
    /// response time is charged as it happens.
    Wall,
}

/// Time charged to the clock before every move in virtual mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenLatency {
    Fixed(f64),
    Uniform { lo_s: f64, hi_s: f64 },
}

impl Default for GenLatency {
    fn default() -> Self {
        GenLatency::Fixed(0.0)
    }
}

pub const DEFAULT_MOVE_BUDGET: u32 = 50;

fn default_budget() -> u32 {
    DEFAULT_MOVE_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockConfig {
    #[serde(default)]
    pub mode: ClockMode,
    #[serde(default)]
    pub gen_latency: GenLatency,
    #[serde(default = "default_budget")]
    pub move_budget: u32,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            mode: ClockMode::Virtual,
            gen_latency: GenLatency::default(),
            move_budget: DEFAULT_MOVE_BUDGET,
        }
    }
}

impl ClockConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.move_budget < 2 {
            return Err(EnvError::InvalidClock(format!(
                "move_budget must be at least 2, got {}",
                self.move_budget
            )));
        }
        let ok = match self.gen_latency {
            GenLatency::Fixed(t) => t.is_finite() && t >= 0.0,
            GenLatency::Uniform { lo_s, hi_s } => {
                lo_s.is_finite() && hi_s.is_finite() && 0.0 <= lo_s && lo_s <= hi_s
            }
        };
        if !ok {
            return Err(EnvError::InvalidClock(format!(
                "generation latency must be finite and non-negative: {:?}",
                self.gen_latency
            )));
        }
        Ok(())
    }
}

/// The agent's two actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Move {
    Sleep { duration_s: f64 },
    Check,
}

impl Move {
    pub fn sleep(duration_s: f64) -> Self {
        Move::Sleep { duration_s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    Slept,
    Pending,
    Done,
}

/// One logged move. `clock_s` is the clock when the move took effect, after
/// the generation charge and before any sleep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveEntry {
    pub clock_s: f64,
    #[serde(rename = "move")]
    pub action: Move,
    pub observation: Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Running,
    Done,
    Aborted,
}

#[derive(Debug, Clone)]
enum Clock {
    Virtual { now: f64 },
    Wall { start: Instant, now: f64 },
}

impl Clock {
    fn now(&self) -> f64 {
        match self {
            Clock::Virtual { now } | Clock::Wall { now, .. } => *now,
        }
    }

    fn sync(&mut self) {
        if let Clock::Wall { start, now } = self {
            *now = now.max(start.elapsed().as_secs_f64());
        }
    }

    fn advance(&mut self, secs: f64) {
        match self {
            Clock::Virtual { now } => *now += secs,
            Clock::Wall { start, now } => {
                std::thread::sleep(Duration::from_secs_f64(secs));
                *now = (*now + secs).max(start.elapsed().as_secs_f64());
            }
        }
    }
}

/// A live episode. The completion time stays private.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    k: usize,
    action: ActionSpec,
    t_true: f64,
    config: ClockConfig,
    clock: Clock,
    jitter: ChaCha8Rng,
    n_check: u32,
    t_confirm: Option<f64>,
    moves: Vec<MoveEntry>,
    status: EpisodeStatus,
}

impl EpisodeState {
    /// Starts episode `k`, drawing the hidden completion time from `spec`.
    pub fn start(k: usize, spec: &ActionSpec, seed: u64, config: &ClockConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let t_true = LatencySampler::new(spec.clone(), seed)?.sample_t_true()?;
        let clock = match config.mode {
            ClockMode::Virtual => Clock::Virtual { now: 0.0 },
            ClockMode::Wall => Clock::Wall {
                start: Instant::now(),
                now: 0.0,
            },
        };
        Ok(Self {
            k,
            action: spec.clone(),
            t_true,
            config: config.clone(),
            clock,
            jitter: ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX])),
            n_check: 0,
            t_confirm: None,
            moves: Vec::new(),
            status: EpisodeStatus::Running,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn action(&self) -> &ActionSpec {
        &self.action
    }

    pub fn clock_s(&self) -> f64 {
        self.clock.now()
    }

    pub fn n_check(&self) -> u32 {
        self.n_check
    }

    pub fn moves(&self) -> &[MoveEntry] {
        &self.moves
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    #[cfg(any(test, feature = "test-hooks"))]
    pub fn peek_t_true(&self) -> f64 {
        self.t_true
    }

    #[cfg(any(test, feature = "test-hooks"))]
    pub fn force_t_true(&mut self, t_true: f64) {
        self.t_true = t_true;
    }

    fn gen_charge(&mut self) -> f64 {
        match self.config.gen_latency {
            GenLatency::Fixed(t) => t,
            GenLatency::Uniform { lo_s, hi_s } => lo_s + (hi_s - lo_s) * self.jitter.random::<f64>(),
        }
    }

    pub fn step(&mut self, mv: Move) -> Result<Observation, EnvError> {
        if self.status != EpisodeStatus::Running {
            return Err(EnvError::EpisodeClosed);
        }
        if let Move::Sleep { duration_s } = mv {
            if !(duration_s.is_finite() && duration_s > 0.0) {
                return Err(EnvError::InvalidMove(format!(
                    "sleep duration must be positive and finite, got {duration_s}"
                )));
            }
        }
        if self.moves.len() >= self.config.move_budget as usize {
            self.status = EpisodeStatus::Aborted;
            return Err(EnvError::BudgetExceeded {
                budget: self.config.move_budget,
            });
        }

        match self.config.mode {
            ClockMode::Virtual => {
                let charge = self.gen_charge();
                self.clock.advance(charge);
            }
            ClockMode::Wall => self.clock.sync(),
        }
        let at = self.clock.now();

        let observation = match mv {
            Move::Sleep { duration_s } => {
                self.clock.advance(duration_s);
                Observation::Slept
            }
            Move::Check => {
                self.n_check += 1;
                if at >= self.t_true {
                    self.status = EpisodeStatus::Done;
                    self.t_confirm = Some(at);
                    Observation::Done
                } else {
                    Observation::Pending
                }
            }
        };
        self.moves.push(MoveEntry {
            clock_s: at,
            action: mv,
            observation,
        });
        Ok(observation)
    }

    /// Gives up on a running episode.
    pub fn abort(&mut self) {
        if self.status == EpisodeStatus::Running {
            self.status = EpisodeStatus::Aborted;
        }
    }

    pub fn finish(&self) -> Result<EpisodeRecord, EnvError> {
        let t_confirm = match (self.status, self.t_confirm) {
            (EpisodeStatus::Done, Some(t)) => t,
            (status, _) => return Err(EnvError::NotFinalizable(status)),
        };
        Ok(EpisodeRecord {
            k: self.k,
            action_id: self.action.id.clone(),
            t_true: self.t_true,
            t_confirm,
            n_check: self.n_check,
            total_sleep_s: total_sleep(&self.moves),
            moves: self.moves.clone(),
        })
    }

    /// Diagnostic view of an aborted episode.
    pub fn aborted(&self) -> Option<AbortedEpisode> {
        (self.status == EpisodeStatus::Aborted).then(|| AbortedEpisode {
            k: self.k,
            action_id: self.action.id.clone(),
            clock_s: self.clock.now(),
            n_check: self.n_check,
            moves: self.moves.clone(),
        })
    }
}

pub fn total_sleep(moves: &[MoveEntry]) -> f64 {
    moves
        .iter()
        .map(|m| match m.action {
            Move::Sleep { duration_s } => duration_s,
            Move::Check => 0.0,
        })
        .sum()
}

/// A finished, scoreable episode. Field names and order are the JSON Lines
/// schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub k: usize,
    pub action_id: String,
    pub t_true: f64,
    pub t_confirm: f64,
    pub n_check: u32,
    pub total_sleep_s: f64,
    pub moves: Vec<MoveEntry>,
}

impl EpisodeRecord {
    /// First sleep of the episode, i.e. the wait the policy planned up front.
    pub fn planned_wait_s(&self) -> Option<f64> {
        self.moves.iter().find_map(|m| match m.action {
            Move::Sleep { duration_s } => Some(duration_s),
            Move::Check => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedEpisode {
    pub k: usize,
    pub action_id: String,
    pub clock_s: f64,
    pub n_check: u32,
    pub moves: Vec<MoveEntry>,
}
