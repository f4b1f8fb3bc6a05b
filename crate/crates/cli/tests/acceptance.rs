//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use tempalign_core::barrier::{audit_run, json_serializer};
use tempalign_core::config::{preset, PRESETS};
use tempalign_core::latency::{draw_many, ks_statistic};
use tempalign_core::policy::{PeriodicParams, StaticParams};
use tempalign_core::runner::{
    learning_curves, regret, regret_score, run_reference, run_replicates, ExperimentConfig, RunResult, Schedule,
};
use tempalign_core::{default_actions, ClockConfig, EpisodeState, Execution, HistorySummary, Move, Observation, PolicySpec};
use tempalign_llm::prompt::render_user_prompt;
use tempalign_llm::{render_prompt, wait_then_check, EndpointConfig, FixtureServer, HttpEndpoint, LlmDriver};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Arbitrary-precision (mpmath, 40 digits) reference values.
const TWO_E: f64 = 5.436_563_656_918_090_470_720_574_942_705;
const EXP_1_11: f64 = 1.095_169_439_874_664_284_656_241_323_143;
const FOUR_EXP_1_7: f64 = 4.614_259_979_580_431_013_845_358_497_887;

fn regret_algebra() -> Outcome {
    let exact = regret_score(1, 47.25, 47.25);
    ensure(exact == 1.0, || format!("regret(1, t, t) = {exact}"))?;
    let two_e = regret_score(2, 90.0, 45.0);
    ensure((two_e - TWO_E).abs() < 1e-12, || format!("regret(2, 2t, t) = {two_e}"))?;
    let r = regret_score(1, 60.0, 55.0);
    ensure((r - EXP_1_11).abs() < 1e-12, || format!("regret(1, 60, 55) = {r}"))?;
    Ok(format!("1.0, {two_e:.15}, {r:.15}"))
}

fn sampler_fidelity() -> Outcome {
    let mut details = Vec::new();
    for (i, a) in default_actions().iter().enumerate() {
        let mut xs = draw_many(a, 1000 + i as u64, 1_000_000, false, Execution::default()).map_err(|e| e.to_string())?;
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        ensure((mean - a.mean_s).abs() < 0.1, || format!("{}: mean {mean}", a.id))?;
        let d = ks_statistic(&mut xs, a.shape, a.scale()).map_err(|e| e.to_string())?;
        ensure(d < 0.005, || format!("{}: KS {d}", a.id))?;
        let t = draw_many(a, 2000 + i as u64, 100_000, true, Execution::default()).map_err(|e| e.to_string())?;
        ensure(t.iter().all(|x| (a.lo_s..=a.hi_s).contains(x)), || format!("{}: truncated draw out of bounds", a.id))?;
        details.push(format!("{} mean {mean:.3} KS {d:.5}", a.id));
    }
    Ok(details.join("; "))
}

fn periodic_episode(seed: u64, interval: f64, forced: Option<f64>) -> Result<(f64, tempalign_core::EpisodeRecord), String> {
    let action = &default_actions()[0];
    let mut state = EpisodeState::start(1, action, seed, &ClockConfig::default()).map_err(|e| e.to_string())?;
    if let Some(t) = forced {
        state.force_t_true(t);
    }
    let t_true = state.peek_t_true();
    let policy = PolicySpec::Periodic(PeriodicParams { interval_s: interval }).reference().map_err(|e| e.to_string())?;
    let driver_ctx = tempalign_core::PolicyContext::new(action.command.clone(), 1);
    let mut ctx = driver_ctx;
    tempalign_core::runner::play(&mut state, &mut ctx, |c| tempalign_core::Policy::decide(&policy, c)).map_err(|e| e.to_string())?;
    Ok((t_true, state.finish().map_err(|e| e.to_string())?))
}

fn polling_economics() -> Outcome {
    let (_, r) = periodic_episode(0, 10.0, Some(35.0))?;
    ensure(r.n_check == 4 && r.t_confirm == 40.0, || format!("n_check {} t_confirm {}", r.n_check, r.t_confirm))?;
    let score = regret(&r).map_err(|e| e.to_string())?;
    ensure((score - FOUR_EXP_1_7).abs() < 1e-12, || format!("regret {score}"))?;
    for seed in 0..1000 {
        let (t_true, r) = periodic_episode(seed, 10.0, None)?;
        let overshoot = r.t_confirm - t_true;
        ensure((0.0..10.0).contains(&overshoot), || format!("seed {seed}: overshoot {overshoot}"))?;
        let expect = (t_true / 10.0).ceil() as u32;
        ensure(r.n_check == expect, || format!("seed {seed}: n_check {} vs {expect}", r.n_check))?;
    }
    Ok(format!("forced 35 -> 4 checks, regret {score:.12}; 1000 seeds ok"))
}

/// Spearman rank correlation of two tie-free samples.
fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (rank, i) in idx.into_iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn static_plateau() -> Outcome {
    let mut cfg = ExperimentConfig::new(PolicySpec::Static(StaticParams { wait_s: 60.0 }), 24);
    cfg.replicates = 100;
    let results = run_reference(&cfg, Execution::default()).map_err(|e| e.to_string())?;
    let mut rho: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for result in &results {
        ensure(result.records.iter().all(|r| r.n_check == 1), || format!("replicate {} re-checked", result.replicate))?;
        for (id, pts) in learning_curves(result).map_err(|e| e.to_string())? {
            let ks: Vec<f64> = pts.iter().map(|p| p.k as f64).collect();
            let rs: Vec<f64> = pts.iter().map(|p| p.regret).collect();
            rho.entry(id).or_default().push(spearman(&ks, &rs));
        }
    }
    let mut details = Vec::new();
    for (id, values) in rho {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        ensure(mean.abs() < 0.1, || format!("{id}: mean Spearman {mean}"))?;
        details.push(format!("{id} rho {mean:+.4}"));
    }
    Ok(format!("100% single check; {}", details.join(", ")))
}

struct Calibration {
    early: BTreeMap<String, f64>,
    late: BTreeMap<String, f64>,
    single: BTreeMap<String, (usize, usize)>,
    monotone_violations: usize,
}

fn calibration_stats(results: &[RunResult]) -> Result<Calibration, String> {
    let mut early: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut late: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut single: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut monotone_violations = 0;
    for result in results {
        let mut seen: BTreeMap<&str, Vec<&tempalign_core::EpisodeRecord>> = BTreeMap::new();
        for r in &result.records {
            let score = regret(r).map_err(|e| e.to_string())?;
            if r.k <= 8 {
                early.entry(r.action_id.clone()).or_default().push(score);
            }
            if r.k >= 17 {
                late.entry(r.action_id.clone()).or_default().push(score);
            }
            let prior = seen.entry(&r.action_id).or_default();
            if prior.len() >= 2 {
                let e = single.entry(r.action_id.clone()).or_default();
                e.1 += 1;
                if r.n_check == 1 {
                    e.0 += 1;
                }
            }
            if let Some(prev) = prior.last() {
                if prev.n_check == 1 && r.n_check == 1 && r.planned_wait_s() > prev.planned_wait_s() {
                    monotone_violations += 1;
                }
            }
            prior.push(r);
        }
    }
    let mean = |m: BTreeMap<String, Vec<f64>>| {
        m.into_iter()
            .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
            .collect()
    };
    Ok(Calibration {
        early: mean(early),
        late: mean(late),
        single,
        monotone_violations,
    })
}

fn two_phase_results() -> Result<Vec<RunResult>, String> {
    let mut cfg = preset("two-phase-24").expect("preset exists");
    cfg.replicates = 50;
    run_reference(&cfg, Execution::default()).map_err(|e| e.to_string())
}

fn two_phase_a(results: &[RunResult]) -> Outcome {
    let c = calibration_stats(results)?;
    let mut details = Vec::new();
    let mut failed = false;
    for (id, early) in &c.early {
        let late = c.late[id];
        failed |= late >= *early;
        details.push(format!("{id} {early:.4}->{late:.4}"));
    }
    if failed { Err(details.join(", ")) } else { Ok(details.join(", ")) }
}

fn two_phase_b(results: &[RunResult]) -> Outcome {
    let c = calibration_stats(results)?;
    let (hits, total) = c.single.values().fold((0, 0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let rate = hits as f64 / total as f64;
    let per_action: Vec<String> = c
        .single
        .iter()
        .map(|(id, (h, t))| format!("{id} {:.1}%", 100.0 * *h as f64 / *t as f64))
        .collect();
    let detail = format!("{:.2}% of {total} episodes ({})", 100.0 * rate, per_action.join(", "));
    if rate >= 0.90 { Ok(detail) } else { Err(detail) }
}

fn two_phase_c(results: &[RunResult]) -> Outcome {
    let c = calibration_stats(results)?;
    ensure(c.monotone_violations == 0, || format!("{} increases after a success", c.monotone_violations))?;
    Ok("no increase between consecutive successes".into())
}

fn oracle_optimality() -> Outcome {
    for (i, action) in default_actions().iter().cycle().take(10_000).enumerate() {
        let mut state = EpisodeState::start(1, action, i as u64, &ClockConfig::default()).map_err(|e| e.to_string())?;
        let t = state.peek_t_true();
        state.step(Move::sleep(t)).map_err(|e| e.to_string())?;
        ensure(state.step(Move::Check) == Ok(Observation::Done), || format!("episode {i}: oracle check not done"))?;
        let score = regret(&state.finish().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(score == 1.0, || format!("episode {i}: oracle regret {score}"))?;
    }
    let mut minimum = f64::INFINITY;
    let mut episodes = 0;
    for name in PRESETS {
        let mut cfg = preset(name).expect("preset exists");
        cfg.replicates = 10_000usize.div_ceil(cfg.episodes);
        for result in run_reference(&cfg, Execution::default()).map_err(|e| e.to_string())? {
            for r in &result.records {
                minimum = minimum.min(regret(r).map_err(|e| e.to_string())?);
                episodes += 1;
            }
        }
    }
    ensure(minimum >= 1.0, || format!("reference policy reached regret {minimum}"))?;
    Ok(format!("oracle 1.0 on 10000 episodes; reference minimum {minimum:.6} over {episodes}"))
}

fn prompt_conformance() -> Outcome {
    let actions = default_actions();
    let cmd = |id: &str| actions.iter().find(|a| a.id == id).unwrap().command.clone();
    let history: Vec<HistorySummary> = [(1, "C", 60.0), (2, "B", 90.0), (3, "A", 120.0)]
        .into_iter()
        .map(|(episode, id, s)| HistorySummary {
            episode,
            command: cmd(id),
            executed_sleep_s: s,
            check_count: 1,
            total_time_s: s,
        })
        .collect();
    let golden = include_str!("../../llm/tests/golden/prompt_episode4.txt");
    let rendered = render_user_prompt(&cmd("A"), &history, "(no prior episodes)");
    ensure(rendered == golden, || "rendered prompt differs from golden".into())?;
    ensure(render_prompt(&cmd("A"), &history).messages[1].content == golden, || "transcript differs".into())?;
    ensure(rendered.contains("Your Executed Sleep Time = 120s, Check Count = 1"), || "history line".into())?;
    Ok(format!("{} bytes match", golden.len()))
}

fn bridge_replay() -> Outcome {
    let script = [60.0, 90.0, 120.0, 108.0]
        .into_iter()
        .enumerate()
        .flat_map(|(i, w)| wait_then_check(i + 1, w))
        .collect();
    let server = FixtureServer::start(script).map_err(|e| e.to_string())?;
    let ep_cfg = EndpointConfig::new(server.base_url(), "fixture");
    let endpoint = HttpEndpoint::new(&ep_cfg).map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::new(PolicySpec::Llm(serde_json::json!({})), 4);
    cfg.schedule = Schedule::Explicit(vec!["C".into(), "B".into(), "A".into(), "A".into()]);
    let results = run_replicates(&cfg, &LlmDriver::new(Arc::new(endpoint), ep_cfg), Execution::Sequential)
        .map_err(|e| e.to_string())?;
    let records = &results[0].records;
    let waits: Vec<f64> = records.iter().filter_map(|r| r.planned_wait_s()).collect();
    let checks: Vec<u32> = records.iter().map(|r| r.n_check).collect();
    ensure(waits == [60.0, 90.0, 120.0, 108.0], || format!("waits {waits:?}"))?;
    ensure(checks == [1, 1, 1, 1], || format!("checks {checks:?}"))?;
    Ok(format!("waits {waits:?}, one check each"))
}

fn information_barrier() -> Outcome {
    let mut episodes = 0;
    let mut contexts = 0;
    // Three policies share a budget of at least 10^3 episodes.
    for name in ["two-phase-24", "quantile", "periodic-10"] {
        let mut cfg = preset(name).expect("preset exists");
        cfg.schedule = Schedule::SeededShuffle;
        cfg.seed = 77;
        cfg.replicates = 334usize.div_ceil(cfg.episodes);
        for result in run_reference(&cfg, Execution::default()).map_err(|e| e.to_string())? {
            contexts += audit_run(&cfg, &result, &json_serializer).map_err(|e| format!("{name}: {e}"))?;
            episodes += result.records.len();
        }
    }
    ensure(episodes >= 1000, || format!("only {episodes} episodes audited"))?;
    Ok(format!("{contexts} contexts over {episodes} episodes clean"))
}

fn main() {
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    // The three two-phase criteria share one run; its cost lands on the first.
    let two_phase = std::cell::OnceCell::new();
    let tp = |f: fn(&[RunResult]) -> Outcome| {
        let cache = &two_phase;
        move || match cache.get_or_init(two_phase_results) {
            Ok(r) => f(r),
            Err(e) => Err(e.clone()),
        }
    };
    let criteria: Vec<(&str, Duration, Check)> = vec![
        ("regret-algebra", Duration::from_secs(1), Box::new(regret_algebra)),
        ("sampler-fidelity", Duration::from_secs(10), Box::new(sampler_fidelity)),
        ("polling-economics", Duration::from_secs(1), Box::new(polling_economics)),
        ("static-plateau", Duration::from_secs(5), Box::new(static_plateau)),
        ("two-phase-a-late-below-early", Duration::from_secs(10), Box::new(tp(two_phase_a))),
        ("two-phase-b-single-check-rate", Duration::from_secs(10), Box::new(tp(two_phase_b))),
        ("two-phase-c-non-increasing-waits", Duration::from_secs(10), Box::new(tp(two_phase_c))),
        ("oracle-optimality", Duration::from_secs(5), Box::new(oracle_optimality)),
        ("prompt-conformance", Duration::from_secs(1), Box::new(prompt_conformance)),
        ("bridge-replay", Duration::from_secs(1), Box::new(bridge_replay)),
        ("information-barrier", Duration::from_secs(1), Box::new(information_barrier)),
    ];
    let mut failures = 0;
    for (name, budget, check) in &criteria {
        let started = Instant::now();
        let outcome = check();
        let elapsed = started.elapsed();
        let (verdict, detail) = match outcome {
            Ok(d) if elapsed <= *budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {elapsed:.2?}, budget {budget:.0?}")),
            Err(d) => ("FAIL", d),
        };
        if verdict == "FAIL" {
            failures += 1;
        }
        println!("{verdict} {name:<34} {:>8.3}s  {detail}", elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
