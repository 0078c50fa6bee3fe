use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LearnerState, TrainConfig};
use crate::envs::overcooked::{Overcooked, OvercookedState};
use crate::error::Result;
use crate::game::{evaluate_task_values, MarkovGame, Simulator};
use crate::power::{penalty_from_task, Aggregator, PenaltyMode};

/// Ground-truth metrics of a learner's determinized policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Discounted task return per player from the initial state.
    pub task_return: Vec<f64>,
    /// Undiscounted sum of per-step power others hold over each player.
    pub power_on: Vec<f64>,
    /// Discounted power penalty (non-positive) per player.
    pub penalty: Vec<f64>,
    /// `task_return + lambda * penalty` per player.
    pub regularized: Vec<f64>,
}

/// Environments whose learners can be scored against ground truth.
pub trait GroundTruth: Simulator {
    fn ground_truth(&self, learner: &LearnerState<Self::Key>, config: &TrainConfig) -> Result<Evaluation>;
}

impl GroundTruth for MarkovGame {
    /// Exact evaluation of the layered determinized profile.
    fn ground_truth(&self, learner: &LearnerState<(usize, usize)>, config: &TrainConfig) -> Result<Evaluation> {
        let gamma = config.gamma_for(self);
        let horizon = config.horizon_for(self);
        let game = if gamma != self.gamma() || horizon != self.horizon() {
            self.with_gamma(gamma)?.with_horizon(horizon)?
        } else {
            self.clone()
        };
        let profile = learner.to_profile(&game, horizon);
        let task = evaluate_task_values(&game, &profile)?;
        let s0 = game.initial_state();
        let lambda = config.power_weight();
        let n = game.num_players();
        let mut eval = Evaluation {
            task_return: (0..n).map(|i| task.get(horizon, s0, i)).collect(),
            power_on: vec![0.0; n],
            penalty: vec![0.0; n],
            regularized: vec![0.0; n],
        };
        for i in 0..n {
            if n > 1 {
                let plain = penalty_from_task(&game, &profile, &task, i, PenaltyMode::PlainSum, Aggregator::Mean)?;
                let disc = penalty_from_task(&game, &profile, &task, i, PenaltyMode::Discounted, Aggregator::Mean)?;
                eval.power_on[i] = 0.0 - plain[horizon][s0];
                eval.penalty[i] = disc[horizon][s0];
            }
            eval.regularized[i] = eval.task_return[i] + lambda * eval.penalty[i];
        }
        Ok(eval)
    }
}

impl GroundTruth for Overcooked {
    fn ground_truth(&self, learner: &LearnerState<u128>, config: &TrainConfig) -> Result<Evaluation> {
        rollout_ground_truth(self, learner, config)
    }
}

fn determinized_joint<S: Simulator>(sim: &S, learner: &LearnerState<S::Key>, s: &S::State, k: usize) -> Vec<usize> {
    (0..sim.num_players())
        .map(|p| learner.determinized(p, &sim.observation_key(s, k, p)).min(sim.num_actions(s, p) - 1))
        .collect()
}

/// Discounted return of `player` under the determinized policies.
fn determinized_return<S: Simulator>(
    sim: &S,
    learner: &LearnerState<S::Key>,
    state: &S::State,
    k: usize,
    player: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (mut s, mut total, mut g) = (state.clone(), 0.0, 1.0);
    for left in (1..=k).rev() {
        let joint = determinized_joint(sim, learner, &s, left);
        let (next, r) = sim.step(&s, &joint, rng)?;
        total += g * r[player];
        g *= gamma;
        s = next;
    }
    Ok(total)
}

/// Evaluation by counterfactual rollouts of the determinized policies.
/// Exact for deterministic environments; stochastic transitions use a fixed
/// seed.
pub fn rollout_ground_truth<S: Simulator>(
    sim: &S,
    learner: &LearnerState<S::Key>,
    config: &TrainConfig,
) -> Result<Evaluation> {
    let n = sim.num_players();
    let gamma = config.gamma_for(sim);
    let horizon = config.horizon_for(sim);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut states = vec![sim.initial_state()];
    let mut joints = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let joint = determinized_joint(sim, learner, &states[t], horizon - t);
        let (next, r) = sim.step(&states[t], &joint, &mut rng)?;
        joints.push(joint);
        rewards.push(r);
        states.push(next);
    }
    // Suffix returns G[t][i].
    let mut suffix = vec![vec![0.0; n]; horizon + 1];
    for t in (0..horizon).rev() {
        for i in 0..n {
            suffix[t][i] = rewards[t][i] + gamma * suffix[t + 1][i];
        }
    }

    let lambda = config.power_weight();
    let mut eval = Evaluation {
        task_return: suffix[0].clone(),
        power_on: vec![0.0; n],
        penalty: vec![0.0; n],
        regularized: vec![0.0; n],
    };
    if n > 1 {
        let mut discount = 1.0;
        for t in 0..horizon {
            let k = horizon - t;
            for ego in 0..n {
                let mut powers = Vec::with_capacity(n - 1);
                for j in (0..n).filter(|&j| j != ego) {
                    let mut worst = suffix[t][ego];
                    for b in (0..sim.num_actions(&states[t], j)).filter(|&b| b != joints[t][j]) {
                        let mut dev = joints[t].clone();
                        dev[j] = b;
                        let (next, r) = sim.step(&states[t], &dev, &mut rng)?;
                        let v = r[ego] + gamma * determinized_return(sim, learner, &next, k - 1, ego, gamma, &mut rng)?;
                        worst = worst.min(v);
                    }
                    powers.push((suffix[t][ego] - worst).max(0.0));
                }
                let p = Aggregator::Mean.apply(&powers);
                eval.power_on[ego] += p;
                eval.penalty[ego] -= discount * p;
            }
            discount *= gamma;
        }
    }
    for i in 0..n {
        eval.regularized[i] = eval.task_return[i] + lambda * eval.penalty[i];
    }
    Ok(eval)
}

/// Exhaustive one-step power at one step of a simulator rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPower {
    pub t: usize,
    pub ego: usize,
    pub coplayer: usize,
    pub steps_remaining: usize,
    pub power: f64,
    pub worst_action: usize,
    pub onpolicy_value: f64,
    pub deviated_value: f64,
}

/// How the value after the deviating step is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Continuation {
    /// Return of the determinized policies.
    Rollout,
    /// The learner's task critic.
    ValueFunction,
}

impl std::str::FromStr for Continuation {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rollout" => Ok(Continuation::Rollout),
            "vf" | "value-function" => Ok(Continuation::ValueFunction),
            other => Err(crate::error::Error::argument(format!("unknown continuation '{other}'"))),
        }
    }
}

/// Power of `coplayer` over `ego` at `state` by trying every co-player
/// action, with `value(next, k - 1)` valuing successors for `ego` under
/// discount `gamma`. The
/// worst action is the lowest-index minimizer, the played action included.
pub fn exhaustive_power<S: Simulator>(
    sim: &S,
    state: &S::State,
    k: usize,
    joint: &[usize],
    ego: usize,
    coplayer: usize,
    gamma: f64,
    mut value: impl FnMut(&S::State, usize) -> Result<f64>,
) -> Result<(f64, usize, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut one_step = |joint: &[usize]| -> Result<f64> {
        let (next, r) = sim.step(state, joint, &mut rng)?;
        Ok(r[ego] + gamma * value(&next, k - 1)?)
    };
    let on = one_step(joint)?;
    let (mut worst, mut dev) = (joint[coplayer], on);
    for b in 0..sim.num_actions(state, coplayer) {
        let mut alt = joint.to_vec();
        alt[coplayer] = b;
        let v = if b == joint[coplayer] { on } else { one_step(&alt)? };
        if v < dev || (v == dev && b < worst) {
            worst = b;
            dev = v;
        }
    }
    Ok(((on - dev).max(0.0), worst, on, dev))
}

/// Exhaustive power for every ordered player pair at every step of the
/// determinized rollout from the initial state.
pub fn simulator_power_report<S: Simulator>(
    sim: &S,
    learner: &LearnerState<S::Key>,
    config: &TrainConfig,
    continuation: Continuation,
) -> Result<Vec<StepPower>> {
    let n = sim.num_players();
    let gamma = config.gamma_for(sim);
    let horizon = config.horizon_for(sim);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::new();
    let mut s = sim.initial_state();
    for t in 0..horizon {
        let k = horizon - t;
        let joint = determinized_joint(sim, learner, &s, k);
        for ego in 0..n {
            for coplayer in (0..n).filter(|&j| j != ego) {
                let (power, worst_action, onpolicy_value, deviated_value) =
                    exhaustive_power(sim, &s, k, &joint, ego, coplayer, gamma, |next, left| match continuation {
                        Continuation::Rollout => {
                            determinized_return(sim, learner, next, left, ego, gamma, &mut ChaCha8Rng::seed_from_u64(0))
                        }
                        Continuation::ValueFunction if left == 0 && sim.key_tracks_time() => Ok(0.0),
                        Continuation::ValueFunction => {
                            Ok(super::train::critic_value(sim, learner, super::train::Critic::Task, ego, next, left))
                        }
                    })?;
                out.push(StepPower {
                    t,
                    ego,
                    coplayer,
                    steps_remaining: k,
                    power,
                    worst_action,
                    onpolicy_value,
                    deviated_value,
                });
            }
        }
        s = sim.step(&s, &joint, &mut rng)?.0;
    }
    Ok(out)
}

/// Mixing behaviour of the determinized policies on one Overcooked rollout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    /// Steps at which the policies themselves made a pot heterogeneous.
    pub on_policy: Vec<usize>,
    /// `(step, player)` pairs where that player alone could have made a pot
    /// heterogeneous by changing its action for that step.
    pub exposed: Vec<(usize, usize)>,
}

impl MixingReport {
    pub fn creates_heterogeneous_pot(&self) -> bool {
        !self.on_policy.is_empty() || !self.exposed.is_empty()
    }
}

fn mixed_pots(s: &OvercookedState) -> usize {
    s.pots.iter().filter(|p| p.is_mixed()).count()
}

pub fn mixing_report(sim: &Overcooked, learner: &LearnerState<u128>, config: &TrainConfig) -> Result<MixingReport> {
    let horizon = config.horizon_for(sim);
    let mut report = MixingReport::default();
    let mut s = sim.initial_state();
    for t in 0..horizon {
        let joint = determinized_joint(sim, learner, &s, horizon - t);
        let before = mixed_pots(&s);
        for j in 0..2 {
            for b in (0..sim.num_actions(&s, j)).filter(|&b| b != joint[j]) {
                let mut dev = joint.clone();
                dev[j] = b;
                if mixed_pots(&sim.transition(&s, &dev)?.0) > before {
                    report.exposed.push((t, j));
                    break;
                }
            }
        }
        let next = sim.transition(&s, &joint)?.0;
        if mixed_pots(&next) > before {
            report.on_policy.push(t);
        }
        s = next;
    }
    Ok(report)
}

/// One line of the training metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub seed: u64,
    pub algorithm: String,
    pub lambda_or_p: f64,
    /// Mean discounted task return over players.
    pub task_return: f64,
    pub power_on_agent0: f64,
    pub power_on_agent1: f64,
    pub reg_objective_agent0: f64,
    pub reg_objective_agent1: f64,
}

impl MetricRow {
    pub fn new<S: GroundTruth>(sim: &S, learner: &LearnerState<S::Key>, config: &TrainConfig) -> Result<Self> {
        let e = sim.ground_truth(learner, config)?;
        let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        Ok(MetricRow {
            step: learner.steps,
            seed: config.seed,
            algorithm: config.algorithm.to_string(),
            lambda_or_p: config.lambda_or_p(),
            task_return: e.task_return.iter().sum::<f64>() / e.task_return.len() as f64,
            power_on_agent0: at(&e.power_on, 0),
            power_on_agent1: at(&e.power_on, 1),
            reg_objective_agent0: at(&e.regularized, 0),
            reg_objective_agent1: at(&e.regularized, 1),
        })
    }
}
