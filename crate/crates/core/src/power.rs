//! One-step adversarial power and the power-regularized objective.
//!
//! The power co-player `j` holds over ego `i` at `(s, k)` is the drop in
//! `i`'s expected one-step continuation
//! `q_i(a) = r_i(s, a) + gamma * E[V_i^task(s', k - 1)]` when `j` alone
//! replaces its action by the worst deterministic action for one step:
//!
//! ```text
//! power(i, j | s) = E_{a ~ pi}[q_i(a)] - min_b E_{a_-j ~ pi_-j}[q_i(b, a_-j)]
//! ```
//!
//! Power rewards aggregate over co-players and are negated, and the penalty
//! accumulates them along the on-policy unrolling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    deviation_values, evaluate_task_values, joint_values, next_expectation,
    MarkovGame, PolicyProfile, StateId, TaskValues,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRecord {
    pub ego: usize,
    pub coplayer: usize,
    pub state: StateId,
    pub steps_remaining: usize,
    pub power: f64,
    pub worst_action: usize,
    pub onpolicy_value: f64,
    pub deviated_value: f64,
}

/// How per-co-player powers combine into one power reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Aggregator {
    #[default]
    Mean,
    Max,
    Sum,
}

impl Aggregator {
    pub fn apply(self, powers: &[f64]) -> f64 {
        match self {
            Aggregator::Mean => powers.iter().sum::<f64>() / powers.len() as f64,
            Aggregator::Max => powers.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Sum => powers.iter().sum(),
        }
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "max" => Ok(Aggregator::Max),
            "sum" => Ok(Aggregator::Sum),
            other => Err(Error::argument(format!("unknown aggregator '{other}'"))),
        }
    }
}

/// Accumulation rule for the power penalty `W`.
///
/// * `PlainSum`: `W(s,k) = R(s) + E[W(s',k-1)]`
/// * `Discounted`: `W(s,k) = R(s) + gamma * E[W(s',k-1)]`
/// * `Hazard(h)`: `W(s,k) = h * R(s) + (1 - h) * gamma * E[W(s',k-1)]`
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum PenaltyMode {
    #[default]
    PlainSum,
    Discounted,
    Hazard(f64),
}

impl PenaltyMode {
    /// `(alpha, beta)` with `W = alpha * R + beta * E[W']`.
    pub(crate) fn coefficients(self, gamma: f64) -> (f64, f64) {
        match self {
            PenaltyMode::PlainSum => (1.0, 1.0),
            PenaltyMode::Discounted => (1.0, gamma),
            PenaltyMode::Hazard(h) => (h, (1.0 - h) * gamma),
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            PenaltyMode::Hazard(h) if !(0.0..=1.0).contains(&h) => Err(Error::argument(format!(
                "hazard {h} not in [0, 1]"
            ))),
            _ => Ok(()),
        }
    }
}

impl FromStr for PenaltyMode {
    type Err = Error;

    /// `plain-sum`, `discounted` or `hazard:<h>`.
    fn from_str(s: &str) -> Result<Self> {
        let mode = match s {
            "plain-sum" => PenaltyMode::PlainSum,
            "discounted" => PenaltyMode::Discounted,
            _ => match s.strip_prefix("hazard:") {
                Some(h) => PenaltyMode::Hazard(
                    h.parse()
                        .map_err(|_| Error::argument(format!("bad hazard '{h}'")))?,
                ),
                None => return Err(Error::argument(format!("unknown penalty mode '{s}'"))),
            },
        };
        mode.validate()?;
        Ok(mode)
    }
}

impl fmt::Display for PenaltyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyMode::PlainSum => f.write_str("plain-sum"),
            PenaltyMode::Discounted => f.write_str("discounted"),
            PenaltyMode::Hazard(h) => write!(f, "hazard:{h}"),
        }
    }
}

/// Power of `coplayer` over the holder of `q` at one state, given the local
/// distributions. Returns `(onpolicy, deviated, worst_action)`.
///
/// The on-policy value is assembled as `min + sum_b pi_j(b) (dev(b) - min)`
/// so that power is nonnegative, and exactly zero when every deviation is
/// equally bad, regardless of rounding.
pub(crate) fn local_power(
    game: &MarkovGame,
    s: StateId,
    dists: &[&[f64]],
    q: &[f64],
    coplayer: usize,
) -> (f64, f64, usize) {
    let dev = deviation_values(game, s, dists, q, coplayer);
    let mut worst = 0;
    for (b, &v) in dev.iter().enumerate().skip(1) {
        if v < dev[worst] {
            worst = b;
        }
    }
    let min = dev[worst];
    let excess: f64 = dists[coplayer]
        .iter()
        .zip(&dev)
        .map(|(&p, &v)| p * (v - min))
        .sum();
    (min + excess, min, worst)
}

/// Power reward of `ego` at one state: `-aggregate_j power(ego, j)`.
pub(crate) fn local_power_reward(
    game: &MarkovGame,
    s: StateId,
    dists: &[&[f64]],
    q: &[f64],
    ego: usize,
    aggregator: Aggregator,
) -> f64 {
    let powers: Vec<f64> = (0..game.num_players())
        .filter(|&j| j != ego)
        .map(|j| {
            let (on, dev, _) = local_power(game, s, dists, q, j);
            (on - dev).max(0.0)
        })
        .collect();
    -aggregator.apply(&powers)
}

fn check_layer(game: &MarkovGame, state: StateId, k: usize) -> Result<()> {
    game.check_state(state)?;
    if k == 0 || k > game.horizon() {
        return Err(Error::argument(format!(
            "steps remaining {k} not in 1..={}",
            game.horizon()
        )));
    }
    Ok(())
}

/// Power record from precomputed task values of `profile`.
pub fn power_record(
    game: &MarkovGame,
    profile: &PolicyProfile,
    task: &TaskValues,
    ego: usize,
    coplayer: usize,
    state: StateId,
    k: usize,
) -> Result<PowerRecord> {
    game.check_player(ego)?;
    game.check_player(coplayer)?;
    if ego == coplayer {
        return Err(Error::argument("ego and coplayer must differ"));
    }
    check_layer(game, state, k)?;
    let q = joint_values(game, state, ego, &task.layer(k - 1, ego));
    let dists = profile.local(state, k);
    let (on, dev, worst) = local_power(game, state, &dists, &q, coplayer);
    Ok(PowerRecord {
        ego,
        coplayer,
        state,
        steps_remaining: k,
        power: (on - dev).max(0.0),
        worst_action: worst,
        onpolicy_value: on,
        deviated_value: dev,
    })
}

/// `power(ego, coplayer | state, profile)` with `k` steps remaining.
pub fn one_step_power(
    game: &MarkovGame,
    profile: &PolicyProfile,
    ego: usize,
    coplayer: usize,
    state: StateId,
    k: usize,
) -> Result<PowerRecord> {
    if ego == coplayer {
        return Err(Error::argument("ego and coplayer must differ"));
    }
    let task = evaluate_task_values(game, profile)?;
    power_record(game, profile, &task, ego, coplayer, state, k)
}

/// Every power record of the game: all ordered player pairs, states and layers.
pub fn power_table(game: &MarkovGame, profile: &PolicyProfile) -> Result<Vec<PowerRecord>> {
    let task = evaluate_task_values(game, profile)?;
    let n = game.num_players();
    let mut out = Vec::new();
    for k in 1..=game.horizon() {
        for s in 0..game.num_states() {
            for ego in 0..n {
                for coplayer in (0..n).filter(|&j| j != ego) {
                    out.push(power_record(game, profile, &task, ego, coplayer, s, k)?);
                }
            }
        }
    }
    Ok(out)
}

/// `R_ego^power(state, profile)` with `k` steps remaining.
pub fn power_reward(
    game: &MarkovGame,
    profile: &PolicyProfile,
    ego: usize,
    state: StateId,
    k: usize,
    aggregator: Aggregator,
) -> Result<f64> {
    game.require_players(2, "power reward")?;
    game.check_player(ego)?;
    check_layer(game, state, k)?;
    let task = evaluate_task_values(game, profile)?;
    let q = joint_values(game, state, ego, &task.layer(k - 1, ego));
    Ok(local_power_reward(game, state, &profile.local(state, k), &q, ego, aggregator))
}

/// A per-`(steps remaining, state)` table; layer 0 is zero.
pub type Layered = Vec<Vec<f64>>;

/// Power penalty `W` of `ego` under the mean aggregator.
pub fn power_penalty_values(
    game: &MarkovGame,
    profile: &PolicyProfile,
    ego: usize,
    mode: PenaltyMode,
) -> Result<Layered> {
    power_penalty_values_with(game, profile, ego, mode, Aggregator::Mean)
}

pub fn power_penalty_values_with(
    game: &MarkovGame,
    profile: &PolicyProfile,
    ego: usize,
    mode: PenaltyMode,
    aggregator: Aggregator,
) -> Result<Layered> {
    let task = evaluate_task_values(game, profile)?;
    penalty_from_task(game, profile, &task, ego, mode, aggregator)
}

pub(crate) fn penalty_from_task(
    game: &MarkovGame,
    profile: &PolicyProfile,
    task: &TaskValues,
    ego: usize,
    mode: PenaltyMode,
    aggregator: Aggregator,
) -> Result<Layered> {
    game.require_players(2, "power penalty")?;
    game.check_player(ego)?;
    mode.validate()?;
    let (alpha, beta) = mode.coefficients(game.gamma());
    let mut w: Layered = vec![vec![0.0; game.num_states()]];
    for k in 1..=game.horizon() {
        let cont = task.layer(k - 1, ego);
        let prev = &w[k - 1];
        let layer = (0..game.num_states())
            .map(|s| {
                let dists = profile.local(s, k);
                let q = joint_values(game, s, ego, &cont);
                let r = local_power_reward(game, s, &dists, &q, ego, aggregator);
                alpha * r + beta * next_expectation(game, s, &dists, prev)
            })
            .collect();
        w.push(layer);
    }
    Ok(w)
}

/// Task value, power penalty and regularized value of one player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueBundle {
    pub lambda: f64,
    /// `[k][state]`
    pub task_value: Layered,
    pub power_penalty: Layered,
    pub regularized_value: Layered,
}

impl ValueBundle {
    pub(crate) fn new(lambda: f64, task_value: Layered, power_penalty: Layered) -> Self {
        let regularized_value = task_value
            .iter()
            .zip(&power_penalty)
            .map(|(t, w)| t.iter().zip(w).map(|(t, w)| t + lambda * w).collect())
            .collect();
        ValueBundle {
            lambda,
            task_value,
            power_penalty,
            regularized_value,
        }
    }

    pub fn task(&self, k: usize, s: StateId) -> f64 {
        self.task_value[k][s]
    }

    pub fn penalty(&self, k: usize, s: StateId) -> f64 {
        self.power_penalty[k][s]
    }

    pub fn regularized(&self, k: usize, s: StateId) -> f64 {
        self.regularized_value[k][s]
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::argument(format!("lambda {lambda} must be a finite nonnegative number")))
    }
}

/// `U = U_task + lambda * U_power` for `ego`, at every state and layer.
pub fn regularized_values(
    game: &MarkovGame,
    profile: &PolicyProfile,
    ego: usize,
    lambda: f64,
    mode: PenaltyMode,
) -> Result<ValueBundle> {
    regularized_values_with(game, profile, ego, lambda, mode, Aggregator::Mean)
}

pub fn regularized_values_with(
    game: &MarkovGame,
    profile: &PolicyProfile,
    ego: usize,
    lambda: f64,
    mode: PenaltyMode,
    aggregator: Aggregator,
) -> Result<ValueBundle> {
    check_lambda(lambda)?;
    let task = evaluate_task_values(game, profile)?;
    let penalty = penalty_from_task(game, profile, &task, ego, mode, aggregator)?;
    let task_layers = (0..=game.horizon()).map(|k| task.layer(k, ego)).collect();
    Ok(ValueBundle::new(lambda, task_layers, penalty))
}
