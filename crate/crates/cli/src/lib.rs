//! Command-line front end for qdsom experiments.
//!
//! `run` executes one seeded scenario, `batch` repeats it over several
//! seeds, `sweep` ranks hyperparameter combinations and `profiles` exports
//! the bundled consumption profiles as editable CSV files.

pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qdsom::grid_env::{bundled_profile_csv, BuildingKind, ProfileMode};
use qdsom::harness::{self, ScenarioSpec};
use rayon::prelude::*;
use serde_json::Value;

use output::{Aggregate, RunSummary, SweepRow};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, tokens or parameter names.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn usage(e: qdsom::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: qdsom::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "qdsom", version, about = "Multi-agent QSOM/QDSOM smart-grid experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario with one seed.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run one scenario over several seeds and aggregate the scores.
    Batch {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated seeds or a range such as `0..10`.
        #[arg(long, default_value = "0..10")]
        seeds: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate every combination of a parameter grid and rank them.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// `name=v1,v2,...`; repeat for more dimensions.
        #[arg(long = "grid", value_name = "NAME=VALUES")]
        grid: Vec<String>,
        #[arg(long, default_value = "0..3")]
        seeds: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write the bundled consumption profiles as CSV files.
    Profiles {
        #[arg(long, default_value = "daily")]
        mode: String,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// daily | annual
    #[arg(long, default_value = "daily")]
    pub mode: String,
    /// small | medium
    #[arg(long, default_value = "small")]
    pub size: String,
    /// equity | overconsumption | comfort | multiobj-sum | multiobj-prod | adaptability1 | adaptability2
    #[arg(long, default_value = "adaptability2")]
    pub reward: String,
    /// qsom | qdsom
    #[arg(long, default_value = "qsom")]
    pub algo: String,
    #[arg(long)]
    pub steps: Option<u64>,
    /// JSON object of parameter overrides, applied before `--set`.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// `name=value` parameter override; repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    pub set: Vec<String>,
    /// Re-check environment invariants after every step.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "QDSOM_OUT", default_value = "results")]
    pub out: PathBuf,
}

fn split_pair(s: &str) -> Result<(String, String), CliError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| CliError::Usage(format!("expected NAME=VALUE, got '{s}'")))
}

fn config_overrides(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let body = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_slice(&body).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
    };
    map.into_iter()
        .map(|(k, v)| match v {
            Value::String(s) => Ok((k, s)),
            Value::Number(n) => Ok((k, n.to_string())),
            Value::Bool(b) => Ok((k, b.to_string())),
            other => Err(CliError::Usage(format!(
                "{}: '{k}' has unsupported value {other}",
                path.display()
            ))),
        })
        .collect()
}

impl ScenarioArgs {
    pub fn overrides(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut kv = match &self.config {
            Some(path) => config_overrides(path)?,
            None => Vec::new(),
        };
        for s in &self.set {
            kv.push(split_pair(s)?);
        }
        if let Some(steps) = self.steps {
            kv.push(("steps".into(), steps.to_string()));
        }
        Ok(kv)
    }

    /// Builds and fully validates the scenario, environment included.
    pub fn scenario(&self, seed: u64, extra: &[(String, String)]) -> Result<ScenarioSpec, CliError> {
        let mut kv = self.overrides()?;
        kv.extend_from_slice(extra);
        let mut spec =
            harness::build_scenario(&self.mode, &self.size, &self.reward, &self.algo, seed, &kv).map_err(usage)?;
        spec.strict = self.strict;
        spec.env_config().map_err(usage)?;
        Ok(spec)
    }
}

/// Parses `1,2,5`, `0..10` or `0..=9`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("invalid seed list '{s}'"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(CliError::Usage(format!("seed list '{s}' is empty")));
    }
    Ok(seeds)
}

/// Parses `--grid` entries into `(name, values)` dimensions.
pub fn parse_grid(entries: &[String]) -> Result<Vec<(String, Vec<String>)>, CliError> {
    if entries.is_empty() {
        return Err(CliError::Usage("sweep needs at least one --grid NAME=VALUES".into()));
    }
    entries
        .iter()
        .map(|e| {
            let (k, v) = split_pair(e)?;
            let values: Vec<String> = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            if values.is_empty() {
                return Err(CliError::Usage(format!("grid dimension '{k}' has no values")));
            }
            Ok((k, values))
        })
        .collect()
}

/// Cartesian product of the grid, first dimension varying slowest.
pub fn grid_points(grid: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    grid.iter().fold(vec![Vec::new()], |acc, (k, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((k.clone(), v.clone()));
                    p
                })
            })
            .collect()
    })
}

fn run_one(spec: &ScenarioSpec) -> Result<qdsom::harness::RunResult, CliError> {
    harness::run(spec).map_err(runtime)
}

pub fn run_command(scenario: &ScenarioArgs, seed: u64, out: &Path) -> Result<RunSummary, CliError> {
    let spec = scenario.scenario(seed, &[])?;
    let result = run_one(&spec)?;
    output::write_run(out, &spec, &result)
}

pub fn batch_command(scenario: &ScenarioArgs, seeds: &[u64], out: &Path) -> Result<Aggregate, CliError> {
    let specs: Vec<ScenarioSpec> = seeds
        .iter()
        .map(|&s| scenario.scenario(s, &[]))
        .collect::<Result<_, _>>()?;
    let summaries: Vec<RunSummary> = specs
        .par_iter()
        .map(|spec| {
            let result = run_one(spec)?;
            output::write_run(&output::seed_dir(out, spec.seed), spec, &result)
        })
        .collect::<Result<_, _>>()?;
    let aggregate = Aggregate::from_runs(seeds.to_vec(), summaries.iter().map(|s| s.score).collect())
        .ok_or_else(|| CliError::Usage("batch needs at least one seed".into()))?;
    output::write_json(&out.join(output::AGGREGATE), &aggregate)?;
    Ok(aggregate)
}

pub fn sweep_command(
    scenario: &ScenarioArgs,
    grid: &[(String, Vec<String>)],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<SweepRow>, CliError> {
    let points = grid_points(grid);
    let specs: Vec<Vec<ScenarioSpec>> = points
        .iter()
        .map(|p| seeds.iter().map(|&s| scenario.scenario(s, p)).collect())
        .collect::<Result<_, _>>()?;
    let mut rows: Vec<SweepRow> = specs
        .par_iter()
        .zip(&points)
        .map(|(specs, params)| {
            let scores: Vec<f64> = specs
                .par_iter()
                .map(|spec| run_one(spec).map(|r| r.score))
                .collect::<Result<_, _>>()?;
            let aggregate = Aggregate::from_runs(seeds.to_vec(), scores)
                .ok_or_else(|| CliError::Usage("sweep needs at least one seed".into()))?;
            Ok(SweepRow {
                params: params.clone(),
                aggregate,
            })
        })
        .collect::<Result<_, CliError>>()?;
    rows.sort_by(|a, b| b.aggregate.mean.total_cmp(&a.aggregate.mean));
    let path = out.join(output::SWEEP_TABLE);
    let body = output::sweep_csv(&rows).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    output::write_atomic(&path, &body)?;
    Ok(rows)
}

pub fn profiles_command(mode: &str, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mode: ProfileMode = mode.parse().map_err(usage)?;
    BuildingKind::ALL
        .into_iter()
        .map(|kind| {
            let path = out.join(format!("{kind}.csv"));
            output::write_atomic(&path, bundled_profile_csv(kind, mode).as_bytes())?;
            Ok(path)
        })
        .collect()
}

/// Executes a parsed command line, reporting to stdout.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { scenario, seed, out } => {
            let s = run_command(&scenario, seed, &out.out)?;
            println!(
                "score {:.6} ({} agents, {} steps, {:.2} s) -> {}",
                s.score,
                s.agents,
                s.steps,
                s.wall_time_secs,
                out.out.display()
            );
        }
        Command::Batch { scenario, seeds, out } => {
            let seeds = parse_seeds(&seeds)?;
            let a = batch_command(&scenario, &seeds, &out.out)?;
            for (seed, score) in a.seeds.iter().zip(&a.scores) {
                println!("seed {seed}: {score:.6}");
            }
            println!(
                "mean {:.6} min {:.6} max {:.6} -> {}",
                a.mean,
                a.min,
                a.max,
                out.out.display()
            );
        }
        Command::Sweep {
            scenario,
            grid,
            seeds,
            out,
        } => {
            let grid = parse_grid(&grid)?;
            let seeds = parse_seeds(&seeds)?;
            let rows = sweep_command(&scenario, &grid, &seeds, &out.out)?;
            for (i, row) in rows.iter().enumerate() {
                let params: Vec<String> = row.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{:>3}. {:.6}  {}", i + 1, row.aggregate.mean, params.join(" "));
            }
        }
        Command::Profiles { mode, out } => {
            for path in profiles_command(&mode, &out.out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
