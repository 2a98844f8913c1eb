//! The Q-(D)SOM learning agent.
//!
//! An [`AgentMind`] discretizes observations with its State-map, picks a
//! discrete action from the Q-Table with a Boltzmann draw, reads the
//! action's parameters from the Action-map and perturbs them with random
//! noise. Learning then updates, in order, the Action-map (only when the
//! perturbed action looks better than the proposed one), every Q-Value
//! weighted by both maps' neighborhoods, and the State-map.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topo_maps::{MapGrid, MapRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMethod {
    /// Zero-mean normal noise; the parameter is the variance.
    Gaussian,
    /// Uniform noise on `[-param, +param]`.
    EpsilonUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub method: NoiseMethod,
    pub param: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentHyper {
    pub q_learning_rate: f64,
    pub discount: f64,
    pub boltzmann_tau: f64,
    pub noise: Noise,
    pub state_shape: (usize, usize),
    pub action_shape: (usize, usize),
    pub state_rule: MapRule,
    pub action_rule: MapRule,
}

impl AgentHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_learning_rate > 0.0 && self.q_learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "Q learning rate must lie in (0, 1], got {}",
                self.q_learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if !(self.boltzmann_tau > 0.0 && self.boltzmann_tau.is_finite()) {
            return Err(Error::Config(format!(
                "Boltzmann temperature must be > 0, got {}",
                self.boltzmann_tau
            )));
        }
        if !(self.noise.param >= 0.0 && self.noise.param.is_finite()) {
            return Err(Error::Config(format!(
                "noise parameter must be >= 0, got {}",
                self.noise.param
            )));
        }
        let shapes = [self.state_shape, self.action_shape];
        if shapes.iter().any(|&(r, c)| r == 0 || c == 0) {
            return Err(Error::Config("map shapes must be positive".into()));
        }
        Ok(())
    }

    /// `true` when both maps use the DSOM rule.
    pub fn is_dynamic(&self) -> bool {
        matches!(
            (self.state_rule, self.action_rule),
            (MapRule::Dsom(_), MapRule::Dsom(_))
        )
    }
}

/// Interests of every (state neuron, action neuron) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    states: usize,
    actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(states: usize, actions: usize) -> Self {
        Self {
            states,
            actions,
            values: vec![0.0; states * actions],
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.actions..(s + 1) * self.actions]
    }

    /// `V(s) = max_a Q(s, a)`.
    pub fn value(&self, s: usize) -> f64 {
        max_of(self.row(s))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Everything `learn` needs to know about the preceding decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub observations: Vec<f64>,
    /// State hypothesis: BMU of the observations in the State-map.
    pub state: usize,
    /// Identifier of the chosen Action-map neuron.
    pub action_id: usize,
    /// Perturbed action parameters, in `[0,1]^action_dim`.
    pub action: Vec<f64>,
}

/// Softmax of `interests / tau`.
pub fn boltzmann_probabilities(interests: &[f64], tau: f64) -> Result<Vec<f64>> {
    if interests.is_empty() {
        return Err(Error::InvalidInput("no interests to choose from".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("temperature must be > 0, got {tau}")));
    }
    if interests.iter().any(|q| !q.is_finite()) {
        return Err(Error::InvalidInput("non-finite interest".into()));
    }
    let top = max_of(interests);
    let mut p: Vec<f64> = interests.iter().map(|q| ((q - top) / tau).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    Ok(p)
}

/// Draws an index from a probability vector by inverse CDF.
pub fn sample_index<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the last cumulative sum
    probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Adds per-coordinate noise to an action prototype and clamps to `[0,1]`.
pub fn perturb_action<R: Rng + ?Sized>(prototype: &[f64], noise: Noise, rng: &mut R) -> Result<Vec<f64>> {
    if !(noise.param >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "noise parameter must be >= 0, got {}",
            noise.param
        )));
    }
    if noise.param == 0.0 {
        return Ok(prototype.to_vec());
    }
    let out = match noise.method {
        NoiseMethod::Gaussian => {
            let normal = Normal::new(0.0, noise.param.sqrt()).map_err(|e| Error::InvalidInput(e.to_string()))?;
            prototype
                .iter()
                .map(|&w| (w + normal.sample(rng)).clamp(0.0, 1.0))
                .collect()
        }
        NoiseMethod::EpsilonUniform => prototype
            .iter()
            .map(|&w| (w + rng.random_range(-noise.param..=noise.param)).clamp(0.0, 1.0))
            .collect(),
    };
    Ok(out)
}

/// Whether `r + γ·max Q(s', ·)` strictly beats `Q(s, j)`.
pub fn improvement_test(r: f64, gamma: f64, next_state_interests: &[f64], q_sj: f64) -> Result<bool> {
    if next_state_interests.is_empty() {
        return Err(Error::InvalidInput("no next-state interests".into()));
    }
    Ok(r + gamma * max_of(next_state_interests) > q_sj)
}

/// What `learn` did, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LearnOutcome {
    pub next_state: usize,
    pub action_map_updated: bool,
}

#[derive(Debug, Clone)]
pub struct AgentMind {
    state_map: MapGrid,
    action_map: MapGrid,
    qtable: QTable,
    hyper: AgentHyper,
    rng: ChaCha8Rng,
}

impl AgentMind {
    /// A fresh mind with uniformly random prototypes drawn from `rng`, then
    /// the same stream drives all later decisions.
    pub fn new(hyper: AgentHyper, obs_dim: usize, action_dim: usize, mut rng: ChaCha8Rng) -> Result<Self> {
        hyper.validate()?;
        let (sr, sc) = hyper.state_shape;
        let (ar, ac) = hyper.action_shape;
        let state_map = MapGrid::random(sr, sc, obs_dim, &mut rng)?;
        let action_map = MapGrid::random(ar, ac, action_dim, &mut rng)?;
        Self::with_maps(hyper, state_map, action_map, rng)
    }

    pub fn with_maps(hyper: AgentHyper, state_map: MapGrid, action_map: MapGrid, rng: ChaCha8Rng) -> Result<Self> {
        hyper.validate()?;
        if (state_map.rows(), state_map.cols()) != hyper.state_shape
            || (action_map.rows(), action_map.cols()) != hyper.action_shape
        {
            return Err(Error::Config("map shapes disagree with hyperparameters".into()));
        }
        let qtable = QTable::zeros(state_map.len(), action_map.len());
        Ok(Self {
            state_map,
            action_map,
            qtable,
            hyper,
            rng,
        })
    }

    pub fn state_map(&self) -> &MapGrid {
        &self.state_map
    }

    pub fn action_map(&self) -> &MapGrid {
        &self.action_map
    }

    pub fn qtable(&self) -> &QTable {
        &self.qtable
    }

    pub fn hyper(&self) -> &AgentHyper {
        &self.hyper
    }

    pub fn decide(&mut self, observations: &[f64]) -> Result<DecisionTrace> {
        let state = self.state_map.bmu(observations)?;
        let probs = boltzmann_probabilities(self.qtable.row(state), self.hyper.boltzmann_tau)?;
        let action_id = sample_index(&probs, &mut self.rng);
        let action = perturb_action(self.action_map.prototype(action_id), self.hyper.noise, &mut self.rng)?;
        Ok(DecisionTrace {
            observations: observations.to_vec(),
            state,
            action_id,
            action,
        })
    }

    pub fn learn(&mut self, trace: &DecisionTrace, next_observations: &[f64], reward: f64) -> Result<LearnOutcome> {
        self.check_trace(trace)?;
        if !reward.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite reward {reward}")));
        }
        let (s, j) = (trace.state, trace.action_id);
        let o = &trace.observations;
        let a = &trace.action;

        let psi_u = self.hyper.state_rule.neighborhood(&self.state_map, s, o)?;
        let psi_w = self.hyper.action_rule.neighborhood(&self.action_map, j, a)?;

        let next_state = self.state_map.bmu(next_observations)?;
        let gamma = self.hyper.discount;
        let next_interests = self.qtable.row(next_state);
        let target = reward + gamma * max_of(next_interests);
        let improved = improvement_test(reward, gamma, next_interests, self.qtable.get(s, j))?;

        if improved {
            self.hyper.action_rule.apply(&mut self.action_map, a, &psi_w)?;
        }

        let alpha = self.hyper.q_learning_rate;
        let n_actions = self.qtable.actions;
        for (u, row) in self.qtable.values.chunks_exact_mut(n_actions).enumerate() {
            let wu = alpha * psi_u[u];
            if wu == 0.0 {
                continue;
            }
            for (q, &ww) in row.iter_mut().zip(&psi_w) {
                *q += wu * ww * (target - *q);
            }
        }

        self.hyper.state_rule.apply(&mut self.state_map, o, &psi_u)?;

        Ok(LearnOutcome {
            next_state,
            action_map_updated: improved,
        })
    }

    fn check_trace(&self, trace: &DecisionTrace) -> Result<()> {
        if trace.state >= self.state_map.len() || trace.action_id >= self.action_map.len() {
            return Err(Error::Contract(format!(
                "trace indices ({}, {}) out of range",
                trace.state, trace.action_id
            )));
        }
        if trace.action.len() != self.action_map.dim() {
            return Err(Error::Contract("trace action has the wrong dimension".into()));
        }
        if self.state_map.bmu(&trace.observations)? != trace.state {
            return Err(Error::Contract(
                "stale trace: state hypothesis no longer matches the State-map".into(),
            ));
        }
        Ok(())
    }
}
