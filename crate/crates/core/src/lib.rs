//! Measuring, regularizing and learning against 1-step adversarial power in
//! finite Markov games.
//!
//! * [`game`]: enumerable games, policies, exact evaluation, seeded simulation.
//! * [`power`]: one-step adversarial power, power rewards and the regularized objective.
//! * [`padv`]: the p-adversarial game and the hazard-matched equivalence check.
//! * [`solve`]: best responses, regularized best responses, equilibrium search and λ sweeps.
//! * [`learn`]: tabular SBPR and PRIM learners.
//! * [`envs`]: matrix games, Coin Division, random games and a micro Overcooked gridworld.

pub mod envs;
pub mod error;
pub mod game;
pub mod learn;
pub mod padv;
pub mod power;
pub mod solve;

pub use error::{Error, Result};
pub use game::{MarkovGame, PolicyProfile, Simulator, StateId};
