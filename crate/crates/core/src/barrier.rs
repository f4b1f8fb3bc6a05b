//! Audits that nothing a policy can see reveals a hidden completion time.
//!
//! Contexts are reconstructed from finished runs exactly as the runner would
//! have assembled them, serialized, and checked for forbidden field names and
//! for the completion time of the current or any earlier episode.

use serde_json::Value;

use crate::env::Observation;
use crate::policy::{EpisodeLog, HistorySummary, PolicyContext};
use crate::runner::{ExperimentConfig, RunResult};

/// Substrings that may not appear in any policy-visible field name.
pub const FORBIDDEN_KEY_FRAGMENTS: &[&str] = &["t_true", "true", "hidden", "t_confirm"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BarrierViolation {
    #[error("policy-visible field `{path}` is forbidden")]
    ForbiddenField { path: String },
    #[error("policy-visible data at `{path}` reveals completion time {value}")]
    ValueLeak { path: String, value: f64 },
    #[error("serialized context is not valid JSON: {0}")]
    Malformed(String),
}

enum Segment<'a> {
    Key(&'a str),
    Index(usize),
}

fn render(path: &[Segment<'_>]) -> String {
    let mut out = String::from("$");
    for seg in path {
        match seg {
            Segment::Key(k) => {
                out.push('.');
                out.push_str(k);
            }
            Segment::Index(i) => out.push_str(&format!("[{i}]")),
        }
    }
    out
}

/// Completion times that must not appear, with their decimal renderings.
struct Secrets {
    values: Vec<f64>,
    texts: Vec<String>,
}

impl Secrets {
    fn new(values: &[f64]) -> Self {
        Self {
            values: values.to_vec(),
            texts: values.iter().map(f64::to_string).collect(),
        }
    }

    fn in_text(&self, text: &str) -> Option<f64> {
        self.texts.iter().position(|t| text.contains(t.as_str())).map(|i| self.values[i])
    }
}

fn walk<'a>(value: &'a Value, path: &mut Vec<Segment<'a>>, secrets: &Secrets) -> Result<(), BarrierViolation> {
    match value {
        Value::Object(map) => {
            for (key, v) in map {
                path.push(Segment::Key(key));
                let lower = key.to_ascii_lowercase();
                if FORBIDDEN_KEY_FRAGMENTS.iter().any(|f| lower.contains(f)) {
                    return Err(BarrierViolation::ForbiddenField { path: render(path) });
                }
                walk(v, path, secrets)?;
                path.pop();
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                path.push(Segment::Index(i));
                walk(v, path, secrets)?;
                path.pop();
            }
        }
        Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                if let Some(&s) = secrets.values.iter().find(|&&s| s == x) {
                    return Err(BarrierViolation::ValueLeak { path: render(path), value: s });
                }
            }
        }
        Value::String(text) => {
            if let Some(s) = secrets.in_text(text) {
                return Err(BarrierViolation::ValueLeak { path: render(path), value: s });
            }
        }
        Value::Bool(_) | Value::Null => {}
    }
    Ok(())
}

fn audit_with(text: &str, secrets: &Secrets) -> Result<(), BarrierViolation> {
    let value: Value = serde_json::from_str(text).map_err(|e| BarrierViolation::Malformed(e.to_string()))?;
    walk(&value, &mut Vec::new(), secrets)?;
    if let Some(s) = secrets.in_text(text) {
        return Err(BarrierViolation::ValueLeak {
            path: "$".into(),
            value: s,
        });
    }
    Ok(())
}

/// Checks one serialized policy-visible structure against `secrets`.
pub fn audit_serialized(text: &str, secrets: &[f64]) -> Result<(), BarrierViolation> {
    audit_with(text, &Secrets::new(secrets))
}

/// Serializer used by the audit; swap it to test the audit itself.
pub type ContextSerializer<'a> = dyn Fn(&PolicyContext) -> String + 'a;

pub fn json_serializer(ctx: &PolicyContext) -> String {
    serde_json::to_string(ctx).expect("context serializes")
}

/// Rebuilds every decision-time context of `result` and audits it, together
/// with each history entry and observation on its own.
pub fn audit_run(
    cfg: &ExperimentConfig,
    result: &RunResult,
    serialize: &ContextSerializer<'_>,
) -> Result<usize, BarrierViolation> {
    let mut history: Vec<HistorySummary> = Vec::new();
    let mut detailed: Vec<EpisodeLog> = Vec::new();
    let mut secrets = Secrets::new(&[]);
    let mut audited = 0;
    for record in &result.records {
        let command = cfg
            .action(&record.action_id)
            .map(|a| a.command.clone())
            .unwrap_or_default();
        secrets.values.push(record.t_true);
        secrets.texts.push(record.t_true.to_string());
        let visible = |n: usize| -> usize {
            match cfg.history_window {
                Some(w) if n > w => n - w,
                _ => 0,
            }
        };
        let mut ctx = PolicyContext {
            command: command.clone(),
            k: record.k,
            elapsed_s: 0.0,
            observations: Vec::new(),
            history: history[visible(history.len())..].to_vec(),
            detailed_history: detailed[visible(detailed.len())..].to_vec(),
        };
        for n in 0..record.moves.len() {
            ctx.observations = record.moves[..n].to_vec();
            ctx.elapsed_s = record.moves[n].clock_s;
            audit_with(&serialize(&ctx), &secrets)?;
            audited += 1;
        }
        for obs in [Observation::Slept, Observation::Pending, Observation::Done] {
            audit_with(&serde_json::to_string(&obs).expect("serializes"), &secrets)?;
        }
        let summary = HistorySummary::from_record(record, &command);
        audit_with(&serde_json::to_string(&summary).expect("serializes"), &secrets)?;
        history.push(summary);
        detailed.push(EpisodeLog::from_record(record, &command));
    }
    Ok(audited)
}
