use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use tempalign_core::config::{load_catalog, load_experiment, preset, PRESETS};
use tempalign_core::report::{read_outputs, summarize, validate_records, write_outputs, write_pdf, Summary};
use tempalign_core::runner::{run_reference, run_replicates, ExperimentConfig, RunResult};
use tempalign_core::{default_actions, Execution, PolicySpec};
use tempalign_llm::{EndpointConfig, FixtureServer, FixtureWriter, HttpEndpoint, LlmDriver, RecordingEndpoint};

mod selftest;

#[derive(Parser)]
#[command(name = "tempalign", version, about = "Simulate and score wait-and-check agents on hidden-latency tasks")]
struct Cli {
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write episodes, curves and a summary.
    Simulate(RunArgs),
    /// Recompute curves and the summary from a previous output directory.
    Report {
        /// Directory written by `simulate`.
        #[arg(long)]
        from: PathBuf,
        /// Where to write refreshed artifacts; defaults to `--from`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the parent Gamma densities of each action to pdf.csv.
    Pdf {
        /// Action catalog (`{"actions": [...]}`); defaults to the built-in one.
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Experiment config whose actions to use.
        #[arg(long, conflicts_with = "catalog")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the built-in validation checks.
    Selftest {
        /// Run only these checks.
        #[arg(long = "check", value_parser = clap::builder::PossibleValuesParser::new(selftest::CHECKS))]
        checks: Vec<String>,
        #[arg(long, hide = true)]
        inject: Option<selftest::Injection>,
    },
    /// Run an llm-policy experiment against a live endpoint, saving every exchange.
    RecordFixture(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (JSON).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Output directory; overrides the config's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Replay a recorded fixture directory instead of calling the configured endpoint.
    #[arg(long)]
    fixture: Option<PathBuf>,
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn failed(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

impl RunArgs {
    fn experiment(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => load_experiment(path).map_err(|e| usage(e.to_string()))?,
            (None, Some(name)) => preset(name).ok_or_else(|| usage(format!("unknown preset `{name}`")))?,
            (None, None) => return Err(usage("either --config or --preset is required")),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output.as_ref().map(|o| PathBuf::from(&o.dir)))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn endpoint_config(cfg: &ExperimentConfig, base_url: Option<&str>) -> Result<EndpointConfig, Failure> {
    let PolicySpec::Llm(params) = &cfg.policy else {
        return Err(usage(format!("policy `{}` does not use an endpoint", cfg.policy.kind())));
    };
    let mut params = params.clone();
    if let (Some(url), Some(obj)) = (base_url, params.as_object_mut()) {
        obj.insert("base_url".into(), url.into());
    }
    EndpointConfig::from_params(&params).map_err(|e| usage(e.to_string()))
}

fn run_llm(cfg: &ExperimentConfig, endpoint: Arc<dyn tempalign_llm::ChatEndpoint>, ep_cfg: EndpointConfig) -> Result<Vec<RunResult>, Failure> {
    let driver = LlmDriver::new(endpoint, ep_cfg);
    run_replicates(cfg, &driver, Execution::Sequential).map_err(|e| failed(e.to_string()))
}

fn print_summary(summary: &Summary) {
    println!("policy {} | {} episodes x {} replicate(s) | seed {}", summary.policy, summary.episodes, summary.replicates, summary.seed);
    println!("{:<8} {:>8} {:>14} {:>12} {:>14}", "action", "episodes", "final_regret", "mean_regret", "single_check");
    for (id, a) in &summary.actions {
        println!(
            "{:<8} {:>8} {:>14.4} {:>12.4} {:>13.1}%",
            id,
            a.episodes,
            a.final_mean_regret,
            a.mean_regret,
            100.0 * a.single_check_rate
        );
    }
    if !summary.aborted.is_empty() {
        println!("{} episode(s) aborted", summary.aborted.len());
    }
}

fn finish_run(cfg: &ExperimentConfig, out: &Path, results: &[RunResult]) -> Result<(), Failure> {
    let summary = summarize(cfg.policy.kind(), cfg.episodes, cfg.seed, results).map_err(|e| failed(e.to_string()))?;
    write_outputs(out, &summary, results).map_err(|e| failed(e.to_string()))?;
    print_summary(&summary);
    log::info!("wrote {}", out.display());
    Ok(())
}

fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = args.experiment()?;
    let out = args.out_dir(&cfg);
    let results = match (&cfg.policy, &args.fixture) {
        (PolicySpec::Llm(_), Some(dir)) => {
            let server = FixtureServer::from_dir(dir).map_err(|e| usage(e.to_string()))?;
            let ep_cfg = endpoint_config(&cfg, Some(server.base_url()))?;
            let endpoint = HttpEndpoint::new(&ep_cfg).map_err(|e| usage(e.to_string()))?;
            run_llm(&cfg, Arc::new(endpoint), ep_cfg)?
        }
        (PolicySpec::Llm(_), None) => {
            let ep_cfg = endpoint_config(&cfg, None)?;
            let endpoint = HttpEndpoint::new(&ep_cfg).map_err(|e| usage(e.to_string()))?;
            run_llm(&cfg, Arc::new(endpoint), ep_cfg)?
        }
        (_, Some(_)) => return Err(usage("--fixture needs an llm policy")),
        (_, None) => run_reference(&cfg, Execution::default()).map_err(|e| usage(e.to_string()))?,
    };
    finish_run(&cfg, &out, &results)
}

fn record_fixture(args: &RunArgs) -> Result<(), Failure> {
    if args.fixture.is_some() {
        return Err(usage("record-fixture talks to the configured endpoint; --fixture is not accepted"));
    }
    let cfg = args.experiment()?;
    let out = args.out_dir(&cfg);
    let ep_cfg = endpoint_config(&cfg, None)?;
    let live = HttpEndpoint::new(&ep_cfg).map_err(|e| usage(e.to_string()))?;
    let writer = FixtureWriter::create(&out).map_err(|e| usage(e.to_string()))?;
    let recorder = Arc::new(RecordingEndpoint::new(live, writer));
    let results = run_llm(&cfg, recorder.clone(), ep_cfg)?;
    let recorder = Arc::into_inner(recorder).expect("driver dropped");
    let turns = recorder.finish().map_err(|e| failed(e.to_string()))?;
    let episodes: usize = results.iter().map(|r| r.records.len() + r.aborted.len()).sum();
    println!("recorded {turns} exchange(s) over {episodes} episode(s) into {}", out.display());
    Ok(())
}

fn report(from: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let results = read_outputs(from).map_err(|e| usage(e.to_string()))?;
    for r in &results {
        validate_records(&r.records).map_err(|e| failed(format!("replicate {}: {e}", r.replicate)))?;
    }
    let previous: Option<Summary> = std::fs::read_to_string(from.join("summary.json"))
        .ok()
        .and_then(|text| serde_json::from_str(&text).ok());
    let (policy, episodes, seed) = match &previous {
        Some(s) => (s.policy.clone(), s.episodes, s.seed),
        None => {
            let k = results.iter().map(|r| r.schedule.len()).max().unwrap_or(0);
            ("unknown".to_string(), k, 0)
        }
    };
    let mut summary = summarize(&policy, episodes, seed, &results).map_err(|e| failed(e.to_string()))?;
    if let Some(prev) = previous {
        summary.aborted = prev.aborted;
    }
    let out = out.unwrap_or(from);
    write_outputs(out, &summary, &results).map_err(|e| failed(e.to_string()))?;
    print_summary(&summary);
    Ok(())
}

fn pdf(catalog: Option<&Path>, config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let actions = match (catalog, config) {
        (Some(path), _) => load_catalog(path).map_err(|e| usage(e.to_string()))?.actions,
        (None, Some(path)) => load_experiment(path).map_err(|e| usage(e.to_string()))?.actions,
        (None, None) => default_actions(),
    };
    let path = write_pdf(out, &actions).map_err(|e| failed(e.to_string()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn selftest(checks: &[String], inject: Option<selftest::Injection>) -> Result<(), Failure> {
    let names: Vec<&str> = if checks.is_empty() {
        selftest::CHECKS.to_vec()
    } else {
        checks.iter().map(String::as_str).collect()
    };
    let mut failures = Vec::new();
    for name in names {
        match selftest::run_check(name, inject) {
            Ok(detail) => println!("ok   {name}: {detail}"),
            Err(reason) => {
                println!("FAIL {name}: {reason}");
                failures.push(name);
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failed(format!("failed checks: {}", failures.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let outcome = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Report { from, out } => report(from, out.as_deref()),
        Command::Pdf { catalog, config, out } => pdf(catalog.as_deref(), config.as_deref(), out),
        Command::Selftest { checks, inject } => selftest(checks, *inject),
        Command::RecordFixture(args) => record_fixture(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
