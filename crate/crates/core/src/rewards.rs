//! Reward functions for the smart-grid agents.
//!
//! Most rewards are *difference rewards*: an agent is credited with
//! `G(z) − G(z₋ᵢ)`, the change of a society-wide quantity caused by its
//! presence. The global counterparts `G(z)` are used to score runs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step at which the adaptability rewards add the equity component.
pub const FIRST_SWITCH: u64 = 2000;
/// Step at which adaptability2 adds the comfort component.
pub const SECOND_SWITCH: u64 = 6000;

pub const SUM_OC_WEIGHT: f64 = 0.8;
pub const SUM_COMFORT_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    Equity,
    Overconsumption,
    Comfort,
    MultiobjSum,
    MultiobjProd,
    Adaptability1,
    Adaptability2,
}

impl RewardKind {
    pub const ALL: [RewardKind; 7] = [
        RewardKind::Equity,
        RewardKind::Overconsumption,
        RewardKind::Comfort,
        RewardKind::MultiobjSum,
        RewardKind::MultiobjProd,
        RewardKind::Adaptability1,
        RewardKind::Adaptability2,
    ];

    pub fn token(self) -> &'static str {
        match self {
            RewardKind::Equity => "equity",
            RewardKind::Overconsumption => "overconsumption",
            RewardKind::Comfort => "comfort",
            RewardKind::MultiobjSum => "multiobj-sum",
            RewardKind::MultiobjProd => "multiobj-prod",
            RewardKind::Adaptability1 => "adaptability1",
            RewardKind::Adaptability2 => "adaptability2",
        }
    }

    pub fn is_time_dependent(self) -> bool {
        matches!(self, RewardKind::Adaptability1 | RewardKind::Adaptability2)
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RewardKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::Config(format!("unknown reward function '{s}'")))
    }
}

/// Hoover index `Σ|x − x̄| / (2·Σx)`; 0 for an all-zero population.
pub fn hoover(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("Hoover index of an empty population".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidInput(format!("Hoover index needs values >= 0, got {v}")));
    }
    Ok(hoover_unchecked(values))
}

fn hoover_unchecked(values: &[f64]) -> f64 {
    let total: f64 = values.iter().sum();
    if total == 0.0 || values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let mean = total / values.len() as f64;
    let spread: f64 = values.iter().map(|v| (v - mean).abs()).sum();
    (spread / (2.0 * total)).clamp(0.0, 1.0)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// The per-step quantities rewards are computed from.
#[derive(Debug, Clone, Copy)]
pub struct Outcome<'a> {
    pub comforts: &'a [f64],
    pub consumed: &'a [f64],
    pub stored: &'a [f64],
    pub over_consumption: f64,
}

impl Outcome<'_> {
    pub fn agents(&self) -> usize {
        self.comforts.len()
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.agents() {
            return Err(Error::Contract(format!(
                "agent {agent} does not exist ({} agents)",
                self.agents()
            )));
        }
        Ok(())
    }

    fn contribution(&self, agent: usize) -> f64 {
        self.consumed[agent] + self.stored[agent]
    }

    fn total_contribution(&self) -> f64 {
        (0..self.agents()).map(|a| self.contribution(a)).sum()
    }

    /// `1 − OC / Σ(consumed + stored)`.
    pub fn global_overconsumption(&self) -> f64 {
        1.0 - ratio(self.over_consumption, self.total_contribution())
    }

    /// `1 − Hoover(comforts)`.
    pub fn global_equity(&self) -> f64 {
        1.0 - hoover_unchecked(self.comforts)
    }

    pub fn mean_comfort(&self) -> f64 {
        self.comforts.iter().sum::<f64>() / self.agents() as f64
    }

    /// Over-consumption difference reward of `agent`.
    pub fn difference_overconsumption(&self, agent: usize) -> Result<f64> {
        self.check_agent(agent)?;
        let mine = self.contribution(agent);
        let others: f64 = (0..self.agents())
            .filter(|&a| a != agent)
            .map(|a| self.contribution(a))
            .sum();
        let without = 1.0 - ratio((self.over_consumption - mine).max(0.0), others);
        Ok(self.global_overconsumption() - without)
    }

    /// Equity difference reward of `agent`.
    pub fn difference_equity(&self, agent: usize) -> Result<f64> {
        self.check_agent(agent)?;
        let rest: Vec<f64> = self
            .comforts
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != agent)
            .map(|(_, &c)| c)
            .collect();
        // a society without its only member is perfectly equal
        let without = if rest.is_empty() {
            1.0
        } else {
            1.0 - hoover_unchecked(&rest)
        };
        Ok(self.global_equity() - without)
    }
}

/// The three building blocks every reward is assembled from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    pub overconsumption: f64,
    pub equity: f64,
    pub comfort: f64,
}

pub fn multiobj_sum(overconsumption: f64, comfort: f64) -> f64 {
    SUM_OC_WEIGHT * overconsumption + SUM_COMFORT_WEIGHT * comfort
}

pub fn multiobj_prod(overconsumption: f64, comfort: f64) -> f64 {
    overconsumption * comfort
}

/// Assembles the reward of `kind` at step `t` from its components.
pub fn combine(kind: RewardKind, c: Components, t: u64) -> f64 {
    match kind {
        RewardKind::Equity => c.equity,
        RewardKind::Overconsumption => c.overconsumption,
        RewardKind::Comfort => c.comfort,
        RewardKind::MultiobjSum => multiobj_sum(c.overconsumption, c.comfort),
        RewardKind::MultiobjProd => multiobj_prod(c.overconsumption, c.comfort),
        RewardKind::Adaptability1 => {
            if t < FIRST_SWITCH {
                c.overconsumption
            } else {
                (c.overconsumption + c.equity) / 2.0
            }
        }
        RewardKind::Adaptability2 => {
            if t < FIRST_SWITCH {
                c.overconsumption
            } else if t < SECOND_SWITCH {
                (c.overconsumption + c.equity) / 2.0
            } else {
                (c.overconsumption + c.equity + c.comfort) / 3.0
            }
        }
    }
}

/// Reward of `agent` for step `t`.
pub fn agent_reward(kind: RewardKind, outcome: &Outcome<'_>, agent: usize, t: u64) -> Result<f64> {
    outcome.check_agent(agent)?;
    let comfort = outcome.comforts[agent];
    let overconsumption = match kind {
        // global form
        RewardKind::MultiobjProd => outcome.global_overconsumption(),
        RewardKind::Equity | RewardKind::Comfort => 0.0,
        _ => outcome.difference_overconsumption(agent)?,
    };
    let equity = match kind {
        RewardKind::Equity | RewardKind::Adaptability1 | RewardKind::Adaptability2 => {
            outcome.difference_equity(agent)?
        }
        _ => 0.0,
    };
    Ok(combine(
        kind,
        Components {
            overconsumption,
            equity,
            comfort,
        },
        t,
    ))
}

/// Society-wide reward for step `t`; always in `[0, 1]`.
pub fn global_reward(kind: RewardKind, outcome: &Outcome<'_>, t: u64) -> f64 {
    let c = Components {
        overconsumption: outcome.global_overconsumption(),
        equity: outcome.global_equity(),
        comfort: outcome.mean_comfort(),
    };
    combine(kind, c, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn outcome<'a>(comforts: &'a [f64], consumed: &'a [f64], stored: &'a [f64], oc: f64) -> Outcome<'a> {
        Outcome {
            comforts,
            consumed,
            stored,
            over_consumption: oc,
        }
    }

    #[test]
    fn hoover_examples() {
        assert_eq!(hoover(&[0.4, 0.4, 0.4]).unwrap(), 0.0);
        assert_eq!(hoover(&[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(hoover(&[3.0, 0.0, 0.0, 0.0]).unwrap(), 0.75);
        assert_eq!(hoover(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(hoover(&[]).is_err());
        assert!(hoover(&[0.5, -0.1]).is_err());
    }

    #[test]
    fn reward_tokens_round_trip() {
        for k in RewardKind::ALL {
            assert_eq!(k.token().parse::<RewardKind>().unwrap(), k);
        }
        assert!("happiness".parse::<RewardKind>().is_err());
        assert!(RewardKind::Adaptability1.is_time_dependent());
        assert!(!RewardKind::Equity.is_time_dependent());
    }

    #[test]
    fn equity_reward_is_zero_when_comforts_equal() {
        let o = outcome(&[0.6; 4], &[1.0, 2.0, 3.0, 4.0], &[0.0; 4], 0.5);
        for a in 0..4 {
            assert_eq!(agent_reward(RewardKind::Equity, &o, a, 0).unwrap(), 0.0);
        }
        assert_eq!(global_reward(RewardKind::Equity, &o, 0), 1.0);
    }

    #[test]
    fn global_reward_examples() {
        let o = outcome(&[1.0, 0.0], &[2.0, 0.0], &[0.0, 0.0], 0.0);
        assert_eq!(global_reward(RewardKind::Overconsumption, &o, 0), 1.0);
        assert_eq!(global_reward(RewardKind::Equity, &o, 0), 0.5);
        assert_eq!(global_reward(RewardKind::Comfort, &o, 0), 0.5);
    }

    #[test]
    fn multiobjective_examples() {
        assert_eq!(multiobj_prod(0.1, 0.9), 0.1 * 0.9);
        assert!((multiobj_prod(0.1, 0.9) - 0.09).abs() <= f64::EPSILON);
        assert_eq!(SUM_OC_WEIGHT + SUM_COMFORT_WEIGHT, 1.0);
        assert_eq!(multiobj_sum(1.0, 0.0), 0.8);
        assert_eq!(multiobj_sum(0.0, 1.0), 0.2);
    }

    #[test]
    fn product_reward_uses_global_overconsumption() {
        let o = outcome(&[0.9, 0.5], &[10.0, 10.0], &[0.0, 0.0], 18.0);
        // G_oc = 1 - 18/20 = 0.1
        let r = agent_reward(RewardKind::MultiobjProd, &o, 0, 0).unwrap();
        assert_eq!(r, multiobj_prod(1.0 - 18.0 / 20.0, 0.9));
    }

    #[test]
    fn overconsumption_difference_by_hand() {
        // contributions 3 and 1, OC 2: G = 1 - 2/4 = 0.5
        // without agent 0: 1 - max(0, 2 - 3)/1 = 1 -> D_0 = -0.5
        // without agent 1: 1 - (2 - 1)/3 = 2/3 -> D_1 = 0.5 - 2/3
        let o = outcome(&[0.5, 0.5], &[2.0, 1.0], &[1.0, 0.0], 2.0);
        assert!((o.difference_overconsumption(0).unwrap() + 0.5).abs() < 1e-15);
        assert!((o.difference_overconsumption(1).unwrap() - (0.5 - 2.0 / 3.0)).abs() < 1e-15);
        assert!(o.difference_overconsumption(2).is_err());
    }

    #[test]
    fn null_agent_gets_zero_difference_rewards() {
        let o = outcome(&[0.0, 0.0, 0.0], &[0.0, 4.0, 3.0], &[0.0, 1.0, 0.0], 2.5);
        assert!(o.difference_overconsumption(0).unwrap().abs() < 1e-12);
        assert!(o.difference_equity(0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn single_agent_equity_is_zero() {
        let o = outcome(&[0.3], &[1.0], &[0.0], 0.0);
        assert_eq!(o.difference_equity(0).unwrap(), 0.0);
    }

    #[test]
    fn adaptability_switch_points() {
        let c = Components {
            overconsumption: 0.3,
            equity: 0.7,
            comfort: 0.2,
        };
        let k2 = RewardKind::Adaptability2;
        assert_eq!(combine(k2, c, 1999), combine(RewardKind::Overconsumption, c, 1999));
        assert_eq!(combine(k2, c, 2000), (0.3 + 0.7) / 2.0);
        assert_eq!(combine(k2, c, 5999), (0.3 + 0.7) / 2.0);
        assert_eq!(combine(k2, c, 6000), (0.3 + 0.7 + 0.2) / 3.0);
        let k1 = RewardKind::Adaptability1;
        assert_eq!(combine(k1, c, 1999), 0.3);
        assert_eq!(combine(k1, c, 2000), 0.5);
        assert_eq!(combine(k1, c, 9000), 0.5);
    }

    proptest! {
        #[test]
        fn hoover_invariances(xs in prop::collection::vec(0.0f64..10.0, 1..40), c in 0.01f64..100.0, seed in any::<u64>()) {
            let h = hoover(&xs).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
            prop_assert!((hoover(&scaled).unwrap() - h).abs() <= 1e-12);
            let mut perm = xs.clone();
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = crate::seeding::splitmix64(s);
                perm.swap(i, (s % (i as u64 + 1)) as usize);
            }
            prop_assert!((hoover(&perm).unwrap() - h).abs() <= 1e-12);
        }

        #[test]
        fn global_rewards_in_unit_interval(
            comforts in prop::collection::vec(0.0f64..=1.0, 1..20),
            frac in 0.0f64..=1.0,
            t in 0u64..10_000,
        ) {
            let consumed: Vec<f64> = comforts.iter().map(|c| c * 100.0).collect();
            let stored = vec![5.0; comforts.len()];
            let total: f64 = consumed.iter().sum::<f64>() + 5.0 * comforts.len() as f64;
            let o = outcome(&comforts, &consumed, &stored, frac * total);
            for k in RewardKind::ALL {
                let g = global_reward(k, &o, t);
                prop_assert!((0.0..=1.0).contains(&g), "{} -> {}", k, g);
            }
        }
    }
}
