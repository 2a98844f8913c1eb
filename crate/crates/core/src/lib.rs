//! Q-Learning over learned discretizations of continuous spaces.
//!
//! Each learning agent couples a *State-map* (a SOM or DSOM over the
//! observation space), an *Action-map* (a SOM or DSOM over the action
//! space) and a Q-Table indexed by the two maps' neurons. The crate also
//! ships a multi-agent smart-grid simulator, the reward functions used to
//! drive agents in it, and a seeded experiment harness.
//!
//! Module overview:
//!
//! - [`topo_maps`]: SOM / DSOM lattices, BMU search, neighborhoods, updates.
//! - [`policy`]: Boltzmann selection, action perturbation, `decide` / `learn`.
//! - [`grid_env`]: building profiles, batteries, the shared energy pool.
//! - [`rewards`]: Hoover index, difference rewards, global rewards.
//! - [`harness`]: scenarios, the run loop, scoring.
//! - [`seeding`]: deterministic random substreams.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid_env;
pub mod harness;
pub mod policy;
pub mod rewards;
pub mod seeding;
pub mod topo_maps;

pub use error::{Error, Result};
