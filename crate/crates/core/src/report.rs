//! Plot-ready artifacts: episode logs, learning curves, summaries and Gamma
//! density tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{AbortedEpisode, EpisodeRecord};
use crate::latency::{gamma_pdf, ActionSpec, LatencyError};
use crate::runner::{learning_curves, regret, RegretError, RunResult};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Jsonl { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Regret(#[from] RegretError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<(), ReportError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn episodes_jsonl(records: &[EpisodeRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn read_episodes_jsonl(path: &Path) -> Result<Vec<EpisodeRecord>, ReportError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| ReportError::Jsonl {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Curve point averaged over replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCurvePoint {
    pub k: usize,
    pub regret: f64,
    pub time_diff_s: f64,
    pub n_check: f64,
    pub samples: usize,
}

/// Per-action curves averaged over replicates at each episode index.
pub fn mean_curves(results: &[RunResult]) -> Result<BTreeMap<String, Vec<MeanCurvePoint>>, RegretError> {
    // Sums of regret, time difference and check count, plus the sample count.
    type Sums = (f64, f64, f64, usize);
    let mut acc: BTreeMap<String, BTreeMap<usize, Sums>> = BTreeMap::new();
    for result in results {
        for (id, points) in learning_curves(result)? {
            let per_k = acc.entry(id).or_default();
            for p in points {
                let e = per_k.entry(p.k).or_insert((0.0, 0.0, 0.0, 0));
                e.0 += p.regret;
                e.1 += p.time_diff_s;
                e.2 += p.n_check as f64;
                e.3 += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(id, per_k)| {
            let points = per_k
                .into_iter()
                .map(|(k, (r, d, n, c))| {
                    let c_f = c as f64;
                    MeanCurvePoint {
                        k,
                        regret: r / c_f,
                        time_diff_s: d / c_f,
                        n_check: n / c_f,
                        samples: c,
                    }
                })
                .collect();
            (id, points)
        })
        .collect())
}

pub fn curve_csv(points: &[MeanCurvePoint]) -> String {
    let mut out = String::from("k,regret,time_diff_s,n_check\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.k, p.regret, p.time_diff_s, p.n_check);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSummary {
    pub episodes: usize,
    pub mean_regret: f64,
    /// Episodes in the first third of the run.
    pub early_mean_regret: Option<f64>,
    /// Episodes in the last third of the run.
    pub late_mean_regret: Option<f64>,
    /// Regret of each replicate's last episode of this action, averaged.
    pub final_mean_regret: f64,
    pub mean_time_diff_s: f64,
    pub single_check_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: String,
    pub episodes: usize,
    pub replicates: usize,
    pub seed: u64,
    pub actions: BTreeMap<String, ActionSummary>,
    pub aborted: Vec<AbortedEpisode>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn summarize(policy: &str, episodes: usize, seed: u64, results: &[RunResult]) -> Result<Summary, RegretError> {
    #[derive(Default)]
    struct Acc {
        regrets: Vec<f64>,
        early: Vec<f64>,
        late: Vec<f64>,
        finals: Vec<f64>,
        diffs: Vec<f64>,
        single: usize,
    }
    let early_end = episodes / 3;
    let late_start = episodes - episodes / 3;
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    for result in results {
        for (id, points) in learning_curves(result)? {
            let a = acc.entry(id).or_default();
            for p in &points {
                a.regrets.push(p.regret);
                a.diffs.push(p.time_diff_s);
                if p.n_check == 1 {
                    a.single += 1;
                }
                if p.k <= early_end {
                    a.early.push(p.regret);
                }
                if p.k > late_start {
                    a.late.push(p.regret);
                }
            }
            if let Some(last) = points.last() {
                a.finals.push(last.regret);
            }
        }
    }
    let actions = acc
        .into_iter()
        .map(|(id, a)| {
            let n = a.regrets.len();
            let s = ActionSummary {
                episodes: n,
                mean_regret: mean(&a.regrets).unwrap_or(f64::NAN),
                early_mean_regret: mean(&a.early),
                late_mean_regret: mean(&a.late),
                final_mean_regret: mean(&a.finals).unwrap_or(f64::NAN),
                mean_time_diff_s: mean(&a.diffs).unwrap_or(f64::NAN),
                single_check_rate: a.single as f64 / n as f64,
            };
            (id, s)
        })
        .collect();
    Ok(Summary {
        policy: policy.to_string(),
        episodes,
        replicates: results.len(),
        seed,
        actions,
        aborted: results.iter().flat_map(|r| r.aborted.iter().cloned()).collect(),
    })
}

fn write_curves(dir: &Path, results: &[RunResult]) -> Result<(), ReportError> {
    for (id, points) in mean_curves(results)? {
        write(&dir.join(format!("curve_{id}.csv")), &curve_csv(&points))?;
    }
    Ok(())
}

/// Writes `episodes.jsonl`, `curve_<id>.csv` and `summary.json` into `dir`.
///
/// Top-level episodes come from replicate 0 and curves are means over all
/// replicates. With more than one replicate each also gets its own
/// `replicates/r<idx>/` directory holding its episodes and curves.
pub fn write_outputs(dir: &Path, summary: &Summary, results: &[RunResult]) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    if let Some(first) = results.first() {
        write(&dir.join("episodes.jsonl"), &episodes_jsonl(&first.records))?;
    }
    write_curves(dir, results)?;
    if results.len() > 1 {
        for r in results {
            let sub = dir.join("replicates").join(format!("r{}", r.replicate));
            fs::create_dir_all(&sub).map_err(io_err(&sub))?;
            write(&sub.join("episodes.jsonl"), &episodes_jsonl(&r.records))?;
            write_curves(&sub, std::slice::from_ref(r))?;
        }
    }
    let json = serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
    write(&dir.join("summary.json"), &json)
}

/// Loads the replicates previously written to `dir`.
pub fn read_outputs(dir: &Path) -> Result<Vec<RunResult>, ReportError> {
    let reps = dir.join("replicates");
    let mut results = Vec::new();
    if reps.is_dir() {
        let mut subdirs: Vec<(usize, PathBuf)> = fs::read_dir(&reps)
            .map_err(io_err(&reps))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().to_string();
                let idx = name.strip_prefix('r')?.parse().ok()?;
                Some((idx, e.path()))
            })
            .collect();
        subdirs.sort();
        for (idx, path) in subdirs {
            results.push(result_from_records(idx, read_episodes_jsonl(&path.join("episodes.jsonl"))?));
        }
    } else {
        results.push(result_from_records(0, read_episodes_jsonl(&dir.join("episodes.jsonl"))?));
    }
    Ok(results)
}

fn result_from_records(replicate: usize, records: Vec<EpisodeRecord>) -> RunResult {
    RunResult {
        replicate,
        schedule: records.iter().map(|r| r.action_id.clone()).collect(),
        records,
        aborted: Vec::new(),
    }
}

/// Sanity check used by the report path: every record must be scoreable.
pub fn validate_records(records: &[EpisodeRecord]) -> Result<(), RegretError> {
    records.iter().try_for_each(|r| regret(r).map(|_| ()))
}

pub const PDF_X_MAX: f64 = 100.0;
pub const PDF_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdfRow {
    pub action_id: String,
    pub x: f64,
    pub density: f64,
}

/// Parent Gamma density of each action on `x = 0, 0.1, …, 100`.
pub fn pdf_rows(actions: &[ActionSpec]) -> Result<Vec<PdfRow>, LatencyError> {
    let mut rows = Vec::with_capacity(actions.len() * (PDF_STEPS + 1));
    for a in actions {
        for i in 0..=PDF_STEPS {
            let x = i as f64 * PDF_X_MAX / PDF_STEPS as f64;
            rows.push(PdfRow {
                action_id: a.id.clone(),
                x,
                density: gamma_pdf(x, a.shape, a.scale())?,
            });
        }
    }
    Ok(rows)
}

pub fn pdf_csv(rows: &[PdfRow]) -> String {
    let mut out = String::from("action_id,x,density\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.action_id, r.x, r.density);
    }
    out
}

pub fn write_pdf(dir: &Path, actions: &[ActionSpec]) -> Result<PathBuf, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("pdf.csv");
    write(&path, &pdf_csv(&pdf_rows(actions)?))?;
    Ok(path)
}
