//! Named self-validation checks.

use std::f64::consts::E;

use clap::ValueEnum;
use tempalign_core::barrier::{audit_run, json_serializer};
use tempalign_core::config::{preset, PRESETS};
use tempalign_core::latency::{draw_many, ks_statistic};
use tempalign_core::runner::{regret, regret_score, run_reference};
use tempalign_core::{default_actions, Execution, PolicyContext};
use tempalign_llm::{format_move, parse_action};

pub const CHECKS: &[&str] = &["sampler-ks", "regret-algebra", "regret-domain", "info-barrier", "grammar-roundtrip"];

/// Deliberate faults, to confirm a check can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Injection {
    /// Tamper one record so it confirms before completion.
    CorruptRecord,
    /// Serialize contexts with the hidden completion time attached.
    LeakySerializer,
}

const KS_DRAWS: usize = 200_000;
const KS_LIMIT: f64 = 0.005;

fn sampler_ks() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for (i, a) in default_actions().iter().enumerate() {
        let mut xs = draw_many(a, 0x5eed + i as u64, KS_DRAWS, false, Execution::default()).map_err(|e| e.to_string())?;
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        if (mean - a.mean_s).abs() > 0.1 {
            return Err(format!("action {}: sample mean {mean:.4} vs {}", a.id, a.mean_s));
        }
        let d = ks_statistic(&mut xs, a.shape, a.scale()).map_err(|e| e.to_string())?;
        if d >= KS_LIMIT {
            return Err(format!("action {}: KS statistic {d:.5} >= {KS_LIMIT}", a.id));
        }
        worst = worst.max(d);
        let truncated = draw_many(a, 0x7a11 + i as u64, 20_000, true, Execution::default()).map_err(|e| e.to_string())?;
        if let Some(x) = truncated.iter().find(|x| !(a.lo_s..=a.hi_s).contains(*x)) {
            return Err(format!("action {}: truncated draw {x} outside [{}, {}]", a.id, a.lo_s, a.hi_s));
        }
    }
    Ok(format!("max KS {worst:.5} over {KS_DRAWS} draws per action"))
}

fn regret_algebra() -> Result<String, String> {
    let cases = [
        (1, 40.0, 40.0, 1.0),
        (2, 120.0, 60.0, 2.0 * E),
        (4, 40.0, 35.0, 4.614_259_979_580_431),
        (1, 60.0, 55.0, 1.095_169_439_874_664_3),
    ];
    for (n, confirm, truth, want) in cases {
        let got = regret_score(n, confirm, truth);
        if (got - want).abs() > 1e-12 {
            return Err(format!("regret({n}, {confirm}, {truth}) = {got}, want {want}"));
        }
    }
    Ok(format!("{} spot values", cases.len()))
}

fn regret_domain(inject: Option<Injection>) -> Result<String, String> {
    let cfg = preset("two-phase-24").expect("preset exists");
    let mut results = run_reference(&cfg, Execution::default()).map_err(|e| e.to_string())?;
    if inject == Some(Injection::CorruptRecord) {
        let r = &mut results[0].records[0];
        r.t_confirm = r.t_true - 1.0;
    }
    let mut n = 0;
    for r in results.iter().flat_map(|r| &r.records) {
        regret(r).map_err(|e| format!("episode {}: {e}", r.k))?;
        n += 1;
    }
    Ok(format!("{n} records scoreable"))
}

fn info_barrier(inject: Option<Injection>) -> Result<String, String> {
    let mut cfg = preset("two-phase-24").expect("preset exists");
    cfg.replicates = 42;
    let results = run_reference(&cfg, Execution::default()).map_err(|e| e.to_string())?;
    let mut audited = 0;
    for result in &results {
        let records = result.records.clone();
        let leaky = move |ctx: &PolicyContext| {
            let mut v = serde_json::to_value(ctx).expect("context serializes");
            if let Some(r) = records.iter().find(|r| r.k == ctx.k) {
                v["t_true"] = r.t_true.into();
            }
            v.to_string()
        };
        let n = match inject {
            Some(Injection::LeakySerializer) => audit_run(&cfg, result, &leaky),
            _ => audit_run(&cfg, result, &json_serializer),
        }
        .map_err(|e| format!("replicate {}: {e}", result.replicate))?;
        audited += n;
    }
    let episodes: usize = results.iter().map(|r| r.records.len()).sum();
    Ok(format!("{audited} contexts over {episodes} episodes"))
}

fn grammar_roundtrip() -> Result<String, String> {
    let mut n = 0;
    for name in PRESETS {
        let mut cfg = preset(name).expect("preset exists");
        cfg.replicates = 3;
        let results = run_reference(&cfg, Execution::default()).map_err(|e| e.to_string())?;
        for m in results.iter().flat_map(|r| &r.records).flat_map(|r| &r.moves) {
            let code = format_move(&m.action);
            if parse_action(&code).into_move() != Ok(m.action) {
                return Err(format!("`{code}` does not parse back to {:?}", m.action));
            }
            n += 1;
        }
    }
    Ok(format!("{n} moves"))
}

pub fn run_check(name: &str, inject: Option<Injection>) -> Result<String, String> {
    match name {
        "sampler-ks" => sampler_ks(),
        "regret-algebra" => regret_algebra(),
        "regret-domain" => regret_domain(inject),
        "info-barrier" => info_barrier(inject),
        "grammar-roundtrip" => grammar_roundtrip(),
        other => Err(format!("unknown check `{other}`")),
    }
}
