//! Scenarios, the observation → decision → step → reward → learn loop, and scoring.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_env::{
    bundled_profiles, load_profile_dir, BuildingKind, EnvConfig, EnvState, ProfileMode, ProfileOverrides, SmartGrid,
    StepSnapshot, ACTION_DIM, OBS_DIM,
};
use crate::policy::{AgentHyper, AgentMind, DecisionTrace, Noise, NoiseMethod};
use crate::rewards::{self, RewardKind};
use crate::seeding::{substream, StreamRole};
use crate::topo_maps::{DsomParams, MapRule, SomParams};

pub const DEFAULT_STEPS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Qsom,
    Qdsom,
}

impl Algorithm {
    pub fn token(self) -> &'static str {
        match self {
            Algorithm::Qsom => "qsom",
            Algorithm::Qdsom => "qdsom",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qsom" => Ok(Algorithm::Qsom),
            "qdsom" => Ok(Algorithm::Qdsom),
            _ => Err(Error::Config(format!("unknown algorithm '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvSize {
    Small,
    Medium,
}

impl EnvSize {
    pub fn roster(self) -> [(BuildingKind, usize); 3] {
        match self {
            EnvSize::Small => [
                (BuildingKind::Household, 20),
                (BuildingKind::Office, 5),
                (BuildingKind::School, 1),
            ],
            EnvSize::Medium => [
                (BuildingKind::Household, 80),
                (BuildingKind::Office, 19),
                (BuildingKind::School, 1),
            ],
        }
    }

    pub fn agent_count(self) -> usize {
        self.roster().iter().map(|(_, n)| n).sum()
    }

    pub fn token(self) -> &'static str {
        match self {
            EnvSize::Small => "small",
            EnvSize::Medium => "medium",
        }
    }
}

impl fmt::Display for EnvSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for EnvSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(EnvSize::Small),
            "medium" => Ok(EnvSize::Medium),
            _ => Err(Error::Config(format!("unknown environment size '{s}'"))),
        }
    }
}

/// Who drives the agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    Learning,
    /// Uniform random actions, no learning. Baseline for comparisons.
    UniformRandom,
}

/// Environment constants a scenario may override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSettings {
    pub scarcity_factor: f64,
    pub buy_price: f64,
    pub sell_price: f64,
    pub initial_charge: f64,
    pub payoff_scale: f64,
    /// Directory holding `household.csv`, `office.csv`, `school.csv`;
    /// bundled synthetic profiles when absent.
    pub profiles_dir: Option<PathBuf>,
    #[serde(default)]
    pub profile_overrides: BTreeMap<BuildingKind, ProfileOverrides>,
}

impl Default for EnvSettings {
    fn default() -> Self {
        Self {
            scarcity_factor: 0.75,
            buy_price: 0.2e-3,
            sell_price: 0.1e-3,
            initial_charge: 0.5,
            payoff_scale: 10.0,
            profiles_dir: None,
            profile_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub mode: ProfileMode,
    pub size: EnvSize,
    pub reward: RewardKind,
    pub algorithm: Algorithm,
    pub steps: u64,
    pub seed: u64,
    pub hyper: AgentHyper,
    pub env: EnvSettings,
    pub controller: Controller,
    /// Re-check environment and agent invariants after every step.
    pub strict: bool,
}

/// Default SOM gaussian width for a map of the given shape.
pub fn default_width(shape: (usize, usize)) -> f64 {
    if shape.0.max(shape.1) <= 3 {
        0.8
    } else {
        1.5
    }
}

/// Default hyperparameters of each algorithm.
pub fn default_hyper(algorithm: Algorithm) -> AgentHyper {
    let (state_shape, action_shape) = ((12, 12), (3, 3));
    match algorithm {
        Algorithm::Qsom => AgentHyper {
            q_learning_rate: 0.6,
            discount: 0.9,
            boltzmann_tau: 0.4,
            noise: Noise {
                method: NoiseMethod::Gaussian,
                param: 0.06,
            },
            state_shape,
            action_shape,
            state_rule: MapRule::Som(SomParams::new(0.5, default_width(state_shape)).unwrap()),
            action_rule: MapRule::Som(SomParams::new(0.2, default_width(action_shape)).unwrap()),
        },
        Algorithm::Qdsom => AgentHyper {
            q_learning_rate: 0.8,
            discount: 0.95,
            boltzmann_tau: 0.6,
            noise: Noise {
                method: NoiseMethod::Gaussian,
                param: 0.09,
            },
            state_shape,
            action_shape,
            state_rule: MapRule::Dsom(DsomParams::new(0.8, 1.0).unwrap()),
            action_rule: MapRule::Dsom(DsomParams::new(0.7, 1.0).unwrap()),
        },
    }
}

/// Names accepted by [`ScenarioSpec::apply_override`].
pub const PARAMETER_NAMES: &[&str] = &[
    "steps",
    "tau",
    "q_learning_rate",
    "discount",
    "noise",
    "noise_method",
    "state_lr",
    "state_width",
    "state_elasticity",
    "state_rows",
    "state_cols",
    "action_lr",
    "action_width",
    "action_elasticity",
    "action_rows",
    "action_cols",
    "scarcity",
    "buy_price",
    "sell_price",
    "initial_charge",
    "payoff_scale",
    "profiles_dir",
    "controller",
];

/// Fields settable per building kind as `<kind>.<field>`, e.g. `office.battery_capacity`.
pub const PROFILE_FIELDS: &[&str] = &["action_range", "battery_capacity", "solar_production"];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn set_learning_rate(rule: &mut MapRule, lr: f64) -> Result<()> {
    *rule = match *rule {
        MapRule::Som(p) => MapRule::Som(SomParams::new(lr, p.neighborhood_width())?),
        MapRule::Dsom(p) => MapRule::Dsom(DsomParams::new(lr, p.elasticity())?),
    };
    Ok(())
}

fn set_width(rule: &mut MapRule, key: &str, width: f64) -> Result<()> {
    match *rule {
        MapRule::Som(p) => {
            *rule = MapRule::Som(SomParams::new(p.learning_rate(), width)?);
            Ok(())
        }
        MapRule::Dsom(_) => Err(Error::Config(format!("'{key}' only applies to qsom"))),
    }
}

fn set_elasticity(rule: &mut MapRule, key: &str, eta: f64) -> Result<()> {
    match *rule {
        MapRule::Dsom(p) => {
            *rule = MapRule::Dsom(DsomParams::new(p.learning_rate(), eta)?);
            Ok(())
        }
        MapRule::Som(_) => Err(Error::Config(format!("'{key}' only applies to qdsom"))),
    }
}

impl ScenarioSpec {
    pub fn agent_count(&self) -> usize {
        self.size.agent_count()
    }

    /// Sets one named parameter from its textual value.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let h = &mut self.hyper;
        match key {
            "steps" => self.steps = parse_num(key, value)?,
            "tau" => h.boltzmann_tau = parse_num(key, value)?,
            "q_learning_rate" => h.q_learning_rate = parse_num(key, value)?,
            "discount" => h.discount = parse_num(key, value)?,
            "noise" => h.noise.param = parse_num(key, value)?,
            "noise_method" => {
                h.noise.method = match value {
                    "gaussian" => NoiseMethod::Gaussian,
                    "epsilon" | "epsilon-uniform" => NoiseMethod::EpsilonUniform,
                    _ => return Err(Error::Config(format!("unknown noise method '{value}'"))),
                }
            }
            "state_lr" => set_learning_rate(&mut h.state_rule, parse_num(key, value)?)?,
            "action_lr" => set_learning_rate(&mut h.action_rule, parse_num(key, value)?)?,
            "state_width" => set_width(&mut h.state_rule, key, parse_num(key, value)?)?,
            "action_width" => set_width(&mut h.action_rule, key, parse_num(key, value)?)?,
            "state_elasticity" => set_elasticity(&mut h.state_rule, key, parse_num(key, value)?)?,
            "action_elasticity" => set_elasticity(&mut h.action_rule, key, parse_num(key, value)?)?,
            "state_rows" => h.state_shape.0 = parse_num(key, value)?,
            "state_cols" => h.state_shape.1 = parse_num(key, value)?,
            "action_rows" => h.action_shape.0 = parse_num(key, value)?,
            "action_cols" => h.action_shape.1 = parse_num(key, value)?,
            "scarcity" => self.env.scarcity_factor = parse_num(key, value)?,
            "buy_price" => self.env.buy_price = parse_num(key, value)?,
            "sell_price" => self.env.sell_price = parse_num(key, value)?,
            "initial_charge" => self.env.initial_charge = parse_num(key, value)?,
            "payoff_scale" => self.env.payoff_scale = parse_num(key, value)?,
            "profiles_dir" => self.env.profiles_dir = Some(PathBuf::from(value)),
            "controller" => {
                self.controller = match value {
                    "learning" => Controller::Learning,
                    "random" | "uniform-random" => Controller::UniformRandom,
                    _ => return Err(Error::Config(format!("unknown controller '{value}'"))),
                }
            }
            _ => match key.split_once('.') {
                Some((kind, field)) => self.set_profile_field(key, kind, field, value)?,
                None => {
                    return Err(Error::Config(format!(
                        "unknown parameter '{key}' (expected one of: {}, or <kind>.<{}>)",
                        PARAMETER_NAMES.join(", "),
                        PROFILE_FIELDS.join("|")
                    )))
                }
            },
        }
        self.hyper.validate()
    }

    fn set_profile_field(&mut self, key: &str, kind: &str, field: &str, value: &str) -> Result<()> {
        let kind: BuildingKind = kind.parse()?;
        let v: f64 = parse_num(key, value)?;
        let o = self.env.profile_overrides.entry(kind).or_default();
        match field {
            "action_range" => o.action_range = Some(v),
            "battery_capacity" => o.battery_capacity = Some(v),
            "solar_production" => o.solar_production = Some(v),
            _ => {
                return Err(Error::Config(format!(
                    "unknown profile field '{field}' (expected one of: {})",
                    PROFILE_FIELDS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let profiles = match &self.env.profiles_dir {
            Some(dir) => load_profile_dir(dir, self.mode)?,
            None => bundled_profiles(self.mode),
        };
        let profiles = profiles
            .into_iter()
            .map(|p| match self.env.profile_overrides.get(&p.kind) {
                Some(o) => p.with_overrides(o),
                None => Ok(p),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = EnvConfig::with_roster(self.mode, profiles, &self.size.roster())?;
        cfg.scarcity_factor = self.env.scarcity_factor;
        cfg.buy_price = self.env.buy_price;
        cfg.sell_price = self.env.sell_price;
        cfg.initial_charge = self.env.initial_charge;
        cfg.payoff_scale = self.env.payoff_scale;
        cfg.horizon = self.steps.max(1);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Builds a scenario from its textual tokens plus `key=value` overrides.
pub fn build_scenario(
    mode: &str,
    size: &str,
    reward: &str,
    algorithm: &str,
    seed: u64,
    overrides: &[(String, String)],
) -> Result<ScenarioSpec> {
    let algorithm: Algorithm = algorithm.parse()?;
    let mut spec = ScenarioSpec {
        mode: mode.parse()?,
        size: size.parse()?,
        reward: reward.parse()?,
        algorithm,
        steps: DEFAULT_STEPS,
        seed,
        hyper: default_hyper(algorithm),
        env: EnvSettings::default(),
        controller: Controller::Learning,
        strict: false,
    };
    for (k, v) in overrides {
        spec.apply_override(k, v)?;
    }
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub steps: u64,
    pub agents: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub global_rewards: Vec<f64>,
    /// `agent_rewards[step][agent]`.
    pub agent_rewards: Vec<Vec<f64>>,
    pub score: f64,
    /// Set when the run had no steps and the score is a placeholder 0.
    pub empty_horizon: bool,
    pub meta: RunMeta,
}

/// Rewards produced by one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRewards {
    pub agents: Vec<f64>,
    pub global: f64,
}

/// Minimal interface the run loop needs from an environment.
pub trait MultiAgentEnv {
    fn agent_count(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Current observation of every agent.
    fn observations(&self) -> Result<Vec<Vec<f64>>>;
    /// Executes one joint action (parameters in `[0,1]`).
    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepRewards>;
}

/// The smart grid wired to a reward function.
pub struct GridTask {
    grid: SmartGrid,
    state: EnvState,
    last: StepSnapshot,
    reward: RewardKind,
    strict: bool,
}

impl GridTask {
    pub fn new(config: EnvConfig, reward: RewardKind) -> Result<Self> {
        let grid = SmartGrid::new(config)?;
        let state = grid.reset();
        let last = grid.initial_snapshot(&state);
        Ok(Self {
            grid,
            state,
            last,
            reward,
            strict: false,
        })
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn last_snapshot(&self) -> &StepSnapshot {
        &self.last
    }

    pub fn grid(&self) -> &SmartGrid {
        &self.grid
    }

    fn check(&self, before: &EnvState, next: &EnvState, snap: &StepSnapshot) -> Result<()> {
        let cfg = self.grid.config();
        for a in 0..self.grid.agent_count() {
            let p = cfg.profile_of(a);
            if !(0.0..=p.battery_capacity).contains(&next.battery[a]) {
                return Err(Error::Invariant(format!(
                    "agent {a} battery {} outside capacity",
                    next.battery[a]
                )));
            }
            let delta = next.battery[a] - before.battery[a];
            let books = snap.battery_inflow(a, p.solar_production) - snap.battery_outflow(a) - snap.waste_per_agent[a];
            if (delta - books).abs() > 1e-9 {
                return Err(Error::Invariant(format!(
                    "agent {a} battery books off by {}",
                    delta - books
                )));
            }
        }
        if snap.over_consumption < 0.0 {
            return Err(Error::Invariant("negative over-consumption".into()));
        }
        let indicators = [snap.equity, snap.autonomy, snap.exclusion, snap.wellbeing];
        if indicators.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invariant(format!("indicator outside [0, 1]: {indicators:?}")));
        }
        Ok(())
    }
}

impl MultiAgentEnv for GridTask {
    fn agent_count(&self) -> usize {
        self.grid.agent_count()
    }

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn observations(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.agent_count())
            .map(|a| {
                let o = self.grid.observe(&self.last, &self.state, a)?;
                if self.strict && o.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(Error::Invariant(format!("agent {a} observation outside [0, 1]")));
                }
                Ok(o.to_vec())
            })
            .collect()
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepRewards> {
        let joint = actions
            .iter()
            .enumerate()
            .map(|(a, p)| self.grid.scale(a, p))
            .collect::<Result<Vec<_>>>()?;
        let t = self.state.t;
        let (next, snap) = self.grid.step(&self.state, &joint)?;
        if self.strict {
            self.check(&self.state, &next, &snap)?;
        }
        let outcome = snap.outcome();
        let agents = (0..snap.agents())
            .map(|a| rewards::agent_reward(self.reward, &outcome, a, t))
            .collect::<Result<Vec<_>>>()?;
        let global = rewards::global_reward(self.reward, &outcome, t);
        if self.strict && !(0.0..=1.0).contains(&global) {
            return Err(Error::Invariant(format!("global reward {global} outside [0, 1]")));
        }
        self.state = next;
        self.last = snap;
        Ok(StepRewards { agents, global })
    }
}

/// Per-step hook called after every agent has learned.
pub trait StepObserver {
    fn after_step(&mut self, step: u64, rewards: &StepRewards, minds: &[AgentMind]) -> Result<()>;
}

impl StepObserver for () {
    fn after_step(&mut self, _: u64, _: &StepRewards, _: &[AgentMind]) -> Result<()> {
        Ok(())
    }
}

/// Series recorded by a loop.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub global: Vec<f64>,
    pub agents: Vec<Vec<f64>>,
}

/// Runs learning agents in `env` for `steps` steps.
///
/// Each step: every agent decides from its observation, the joint action
/// is executed, then every agent learns from its reward and the next
/// observation. Decisions and updates of different agents run in parallel;
/// each mind owns its random stream so the result does not depend on
/// scheduling.
pub fn run_loop<E: MultiAgentEnv, O: StepObserver>(
    env: &mut E,
    minds: &mut [AgentMind],
    steps: u64,
    observer: &mut O,
) -> Result<Series> {
    if minds.len() != env.agent_count() {
        return Err(Error::Contract(format!(
            "{} minds for {} agents",
            minds.len(),
            env.agent_count()
        )));
    }
    let mut series = Series::default();
    let mut obs = env.observations()?;
    for step in 0..steps {
        let traces: Vec<DecisionTrace> = minds
            .par_iter_mut()
            .zip(&obs)
            .map(|(mind, o)| mind.decide(o))
            .collect::<Result<_>>()
            .map_err(|e| e.at_step(step))?;
        let actions: Vec<Vec<f64>> = traces.iter().map(|t| t.action.clone()).collect();
        let rewards = env.step(&actions).map_err(|e| e.at_step(step))?;
        let next_obs = env.observations().map_err(|e| e.at_step(step))?;
        minds
            .par_iter_mut()
            .zip(&traces)
            .zip(&next_obs)
            .zip(&rewards.agents)
            .try_for_each(|(((mind, trace), o), &r)| mind.learn(trace, o, r).map(|_| ()))
            .map_err(|e| e.at_step(step))?;
        observer
            .after_step(step, &rewards, minds)
            .map_err(|e| e.at_step(step))?;
        series.global.push(rewards.global);
        series.agents.push(rewards.agents);
        obs = next_obs;
    }
    Ok(series)
}

/// Runs a uniform-random policy in `env`; nothing learns.
pub fn run_random<E: MultiAgentEnv>(env: &mut E, rngs: &mut [ChaCha8Rng], steps: u64) -> Result<Series> {
    let dim = env.action_dim();
    let mut series = Series::default();
    for step in 0..steps {
        let actions: Vec<Vec<f64>> = rngs
            .iter_mut()
            .map(|r| (0..dim).map(|_| r.random::<f64>()).collect())
            .collect();
        let rewards = env.step(&actions).map_err(|e| e.at_step(step))?;
        series.global.push(rewards.global);
        series.agents.push(rewards.agents);
    }
    Ok(series)
}

/// Fresh minds for `n` agents, each seeded from its own substream.
pub fn spawn_minds(
    hyper: &AgentHyper,
    n: usize,
    obs_dim: usize,
    action_dim: usize,
    seed: u64,
) -> Result<Vec<AgentMind>> {
    (0..n)
        .map(|a| {
            AgentMind::new(
                hyper.clone(),
                obs_dim,
                action_dim,
                substream(seed, a as u64, StreamRole::Agent),
            )
        })
        .collect()
}

pub fn run(spec: &ScenarioSpec) -> Result<RunResult> {
    run_observed(spec, &mut ())
}

pub fn run_observed<O: StepObserver>(spec: &ScenarioSpec, observer: &mut O) -> Result<RunResult> {
    let started = Instant::now();
    spec.hyper.validate()?;
    let mut task = GridTask::new(spec.env_config()?, spec.reward)?.strict(spec.strict);
    let n = task.agent_count();
    let series = match spec.controller {
        Controller::Learning => {
            let mut minds = spawn_minds(&spec.hyper, n, OBS_DIM, ACTION_DIM, spec.seed)?;
            run_loop(&mut task, &mut minds, spec.steps, observer)?
        }
        Controller::UniformRandom => {
            let mut rngs: Vec<ChaCha8Rng> = (0..n)
                .map(|a| substream(spec.seed, a as u64, StreamRole::Baseline))
                .collect();
            run_random(&mut task, &mut rngs, spec.steps)?
        }
    };
    let empty_horizon = series.global.is_empty();
    let run_score = if empty_horizon {
        log::warn!("run with zero steps; score set to 0");
        0.0
    } else {
        score(&series.global)?
    };
    Ok(RunResult {
        global_rewards: series.global,
        agent_rewards: series.agents,
        score: run_score,
        empty_horizon,
        meta: RunMeta {
            seed: spec.seed,
            steps: spec.steps,
            agents: n,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    })
}

/// Mean of the per-step global rewards.
pub fn score(global_rewards: &[f64]) -> Result<f64> {
    if global_rewards.is_empty() {
        return Err(Error::InvalidInput("score of an empty series".into()));
    }
    Ok(global_rewards.iter().sum::<f64>() / global_rewards.len() as f64)
}

/// Trailing mean over the last `min(window, i + 1)` points.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidInput("moving-average window must be >= 1".into()));
    }
    let out = (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            series[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect();
    Ok(out)
}
