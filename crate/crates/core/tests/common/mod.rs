#![allow(dead_code)]

use qdsom::harness::{MultiAgentEnv, StepRewards};
use qdsom::policy::{AgentHyper, Noise, NoiseMethod};
use qdsom::topo_maps::{DsomParams, MapRule, SomParams};
use qdsom::Result;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// One agent, fixed observation and action sizes, rewards read from a script.
pub struct ScriptedEnv {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub t: usize,
    pub received: Vec<Vec<f64>>,
}

impl ScriptedEnv {
    pub fn new(observations: Vec<Vec<f64>>, rewards: Vec<f64>) -> Self {
        Self {
            observations,
            rewards,
            t: 0,
            received: Vec::new(),
        }
    }
}

impl MultiAgentEnv for ScriptedEnv {
    fn agent_count(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        self.observations[0].len()
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn observations(&self) -> Result<Vec<Vec<f64>>> {
        Ok(vec![self.observations[self.t % self.observations.len()].clone()])
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepRewards> {
        self.received.push(actions[0].clone());
        let r = self.rewards[self.t];
        self.t += 1;
        Ok(StepRewards {
            agents: vec![r],
            global: r,
        })
    }
}

pub fn tabular_hyper(dynamic: bool, alpha: f64, gamma: f64) -> AgentHyper {
    let (state_rule, action_rule) = if dynamic {
        (
            MapRule::Dsom(DsomParams::new(0.8, 1.0).unwrap()),
            MapRule::Dsom(DsomParams::new(0.7, 1.0).unwrap()),
        )
    } else {
        (
            MapRule::Som(SomParams::new(0.5, 0.8).unwrap()),
            MapRule::Som(SomParams::new(0.2, 0.8).unwrap()),
        )
    };
    AgentHyper {
        q_learning_rate: alpha,
        discount: gamma,
        boltzmann_tau: 0.5,
        noise: Noise {
            method: NoiseMethod::Gaussian,
            param: 0.05,
        },
        state_shape: (1, 1),
        action_shape: (1, 1),
        state_rule,
        action_rule,
    }
}

/// Scalar Q-learning on a single state-action pair.
pub fn scalar_q_trace(alpha: f64, gamma: f64, rewards: &[f64]) -> Vec<f64> {
    let mut q = 0.0;
    rewards
        .iter()
        .map(|r| {
            q += alpha * (r + gamma * q - q);
            q
        })
        .collect()
}

/// Draw from an equal-weight mixture of clipped isotropic gaussians.
pub fn mixture_sample<R: Rng>(rng: &mut R, centers: &[[f64; 2]], sigma: f64) -> Vec<f64> {
    let c = centers[rng.random_range(0..centers.len())];
    let n = Normal::new(0.0, sigma).unwrap();
    c.iter().map(|m| (m + n.sample(rng)).clamp(0.0, 1.0)).collect()
}

pub fn mixture_dataset<R: Rng>(rng: &mut R, centers: &[[f64; 2]], sigma: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| mixture_sample(rng, centers, sigma)).collect()
}
