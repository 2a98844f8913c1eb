//! Result files and their readers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use qdsom::harness::{RunResult, ScenarioSpec};
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::CliError;

pub const GLOBAL_REWARDS: &str = "global_rewards.csv";
pub const AGENT_REWARDS: &str = "agent_rewards.csv";
pub const SUMMARY: &str = "summary.json";
pub const AGGREGATE: &str = "aggregate.json";
pub const SWEEP_TABLE: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: ScenarioSpec,
    pub seed: u64,
    pub steps: u64,
    pub agents: usize,
    pub score: f64,
    pub empty_horizon: bool,
    pub wall_time_secs: f64,
}

impl RunSummary {
    pub fn new(scenario: &ScenarioSpec, result: &RunResult) -> Self {
        Self {
            scenario: scenario.clone(),
            seed: result.meta.seed,
            steps: result.meta.steps,
            agents: result.meta.agents,
            score: result.score,
            empty_horizon: result.empty_horizon,
            wall_time_secs: result.meta.wall_time_secs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    /// `None` for an empty batch.
    pub fn from_runs(seeds: Vec<u64>, scores: Vec<f64>) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self {
            seeds,
            scores,
            mean,
            min,
            max,
        })
    }
}

/// `name=value` pairs of one grid point, in grid order.
pub type Params = Vec<(String, String)>;

/// One row of a sweep table: a parameter combination and its scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub params: Params,
    pub aggregate: Aggregate,
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

fn read_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("cannot read {}: {e}", path.display()))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, body: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| write_err(path, e))?;
    tmp.write_all(body).map_err(|e| write_err(path, e))?;
    tmp.persist(path).map_err(|e| write_err(path, e.error))?;
    Ok(())
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>, csv::Error>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn global_rewards_csv(series: &[f64]) -> Result<Vec<u8>, csv::Error> {
    csv_bytes(
        &["step", "global_reward"],
        series.iter().enumerate().map(|(t, r)| [t.to_string(), r.to_string()]),
    )
}

pub fn agent_rewards_csv(series: &[Vec<f64>]) -> Result<Vec<u8>, csv::Error> {
    let rows = series.iter().enumerate().flat_map(|(t, step)| {
        step.iter()
            .enumerate()
            .map(move |(a, r)| [t.to_string(), a.to_string(), r.to_string()])
    });
    csv_bytes(&["step", "agent_id", "reward"], rows)
}

/// Writes the three files of one run into `dir`.
pub fn write_run(dir: &Path, scenario: &ScenarioSpec, result: &RunResult) -> Result<RunSummary, CliError> {
    let summary = RunSummary::new(scenario, result);
    let global = dir.join(GLOBAL_REWARDS);
    write_atomic(
        &global,
        &global_rewards_csv(&result.global_rewards).map_err(|e| write_err(&global, e))?,
    )?;
    let agents = dir.join(AGENT_REWARDS);
    write_atomic(
        &agents,
        &agent_rewards_csv(&result.agent_rewards).map_err(|e| write_err(&agents, e))?,
    )?;
    write_json(&dir.join(SUMMARY), &summary)?;
    Ok(summary)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut body = serde_json::to_vec_pretty(value).map_err(|e| write_err(path, e))?;
    body.push(b'\n');
    write_atomic(path, &body)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let body = fs::read(path).map_err(|e| read_err(path, e))?;
    serde_json::from_slice(&body).map_err(|e| read_err(path, e))
}

#[derive(Deserialize)]
struct GlobalRow {
    step: usize,
    global_reward: f64,
}

#[derive(Deserialize)]
struct AgentRow {
    step: usize,
    agent_id: usize,
    reward: f64,
}

fn check_index(path: &Path, what: &str, got: usize, want: usize) -> Result<(), CliError> {
    if got != want {
        return Err(read_err(path, format!("{what} {got} where {want} was expected")));
    }
    Ok(())
}

pub fn read_global_rewards(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| read_err(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize::<GlobalRow>() {
        let row = row.map_err(|e| read_err(path, e))?;
        check_index(path, "step", row.step, out.len())?;
        out.push(row.global_reward);
    }
    Ok(out)
}

/// Reads `agent_rewards.csv` back into `series[step][agent]`.
pub fn read_agent_rewards(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| read_err(path, e))?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for row in r.deserialize::<AgentRow>() {
        let row = row.map_err(|e| read_err(path, e))?;
        if row.step == out.len() {
            out.push(Vec::new());
        }
        check_index(path, "step", row.step + 1, out.len())?;
        let step = out.last_mut().expect("pushed above");
        check_index(path, "agent_id", row.agent_id, step.len())?;
        step.push(row.reward);
    }
    Ok(out)
}

/// Sweep rows ranked by mean score, best first.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>, csv::Error> {
    let keys: Vec<&str> = rows
        .first()
        .map(|r| r.params.iter().map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    let mut header = vec!["rank"];
    header.extend(&keys);
    header.extend(["mean_score", "min_score", "max_score", "runs"]);
    let body = rows.iter().enumerate().map(|(i, row)| {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.params.iter().map(|(_, v)| v.clone()));
        rec.extend([
            row.aggregate.mean.to_string(),
            row.aggregate.min.to_string(),
            row.aggregate.max.to_string(),
            row.aggregate.scores.len().to_string(),
        ]);
        rec
    });
    csv_bytes(&header, body)
}

/// Reads a sweep table back as `(parameters, mean score)` pairs in file order.
pub fn read_sweep_table(path: &Path) -> Result<Vec<(Params, f64)>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| read_err(path, e))?;
    let header = r.headers().map_err(|e| read_err(path, e))?.clone();
    let n = header.len();
    if n < 5 {
        return Err(read_err(path, "sweep table header is too short"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| read_err(path, e))?;
        let params = (1..n - 4)
            .map(|i| (header[i].to_string(), rec[i].to_string()))
            .collect();
        let mean = rec[n - 4].parse().map_err(|e| read_err(path, e))?;
        out.push((params, mean));
    }
    Ok(out)
}

/// Directory of one seed inside a batch.
pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}
