use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Algorithm, AdversaryMode, LearnerState, MetricRow, TrainConfig};
use crate::error::{Error, Result};
use crate::game::{sample_index, Simulator};
use crate::learn::GroundTruth;

/// Independent random streams, so that switching a feature off never shifts
/// the draws of the others.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub actions: ChaCha8Rng,
    pub transitions: ChaCha8Rng,
    pub perturbation: ChaCha8Rng,
    pub power: ChaCha8Rng,
    pub adversary: ChaCha8Rng,
    pub starts: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        RngStreams {
            actions: stream(0),
            transitions: stream(1),
            perturbation: stream(2),
            power: stream(3),
            adversary: stream(4),
            starts: stream(5),
        }
    }
}

/// Step sizes and exploration at one point of training.
#[derive(Debug, Clone, Copy)]
struct Knobs {
    actor_lr: f64,
    critic_lr: f64,
    adversary_lr: f64,
    temperature: f64,
    epsilon: f64,
}

impl Knobs {
    fn at(config: &TrainConfig, steps: u64) -> Self {
        let t = if config.total_steps == 0 {
            1.0
        } else {
            (steps as f64 / config.total_steps as f64).min(1.0)
        };
        let decay = 1.0 - t * (1.0 - config.final_lr_fraction);
        let lerp = |a: f64, b: f64| a + (b - a) * t;
        Knobs {
            actor_lr: config.actor_lr * decay,
            critic_lr: config.critic_lr * decay,
            adversary_lr: config.adversary_lr * decay,
            temperature: lerp(config.temperature_start, config.temperature_end),
            epsilon: lerp(config.epsilon_start, config.epsilon_end),
        }
    }
}

/// Domain-randomized start, falling back to the initial state with a
/// warning when the environment has no randomization support. Steps
/// remaining are clipped to the configured horizon.
pub fn domain_randomized_start<S: Simulator, R: Rng + ?Sized>(
    sim: &S,
    config: &TrainConfig,
    rng: &mut R,
) -> (S::State, usize) {
    let horizon = config.horizon_for(sim);
    match sim.sample_start(rng) {
        Some((s, k)) => (s, k.clamp(1, horizon)),
        None => {
            log::warn!("environment has no randomized starts; using the initial state");
            (sim.initial_state(), horizon)
        }
    }
}

fn sample_joint<S: Simulator, R: Rng + ?Sized>(
    sim: &S,
    learner: &LearnerState<S::Key>,
    state: &S::State,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    (0..sim.num_players())
        .map(|p| {
            let key = sim.observation_key(state, k, p);
            let dist = learner.policy(p, &key, sim.num_actions(state, p));
            sample_index(&dist, rng.gen())
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Critic {
    Task,
    Training,
}

/// Critic estimate of `ego` at `state`: the ego's own table plus, under
/// partial observations, one table per co-player.
pub(crate) fn critic_value<S: Simulator>(
    sim: &S,
    learner: &LearnerState<S::Key>,
    critic: Critic,
    ego: usize,
    state: &S::State,
    k: usize,
) -> f64 {
    let (own, peers) = match critic {
        Critic::Task => (&learner.task_values, &learner.peer_task_values),
        Critic::Training => (&learner.values, &learner.peer_values),
    };
    let get = |t: &super::Table<S::Key, f64>, p: usize| t.0.get(&sim.observation_key(state, k, p)).copied().unwrap_or(0.0);
    let mut v = get(&own[ego], ego);
    if sim.partial_observations() {
        let n = sim.num_players();
        for j in (0..n).filter(|&j| j != ego) {
            v += get(&peers[ego * n + j], j);
        }
    }
    v
}

/// Moves the critic estimate at `state` by `amount`, split evenly over its terms.
fn critic_step<S: Simulator>(
    sim: &S,
    learner: &mut LearnerState<S::Key>,
    critic: Critic,
    ego: usize,
    state: &S::State,
    k: usize,
    amount: f64,
) {
    let n = sim.num_players();
    let partial = sim.partial_observations() && n > 1;
    let (own, peers) = match critic {
        Critic::Task => (&mut learner.task_values, &mut learner.peer_task_values),
        Critic::Training => (&mut learner.values, &mut learner.peer_values),
    };
    let share = if partial { amount / n as f64 } else { amount };
    *own[ego].0.entry(sim.observation_key(state, k, ego)).or_insert(0.0) += share;
    if partial {
        for j in (0..n).filter(|&j| j != ego) {
            *peers[ego * n + j].0.entry(sim.observation_key(state, k, j)).or_insert(0.0) += share;
        }
    }
}

/// Task-value estimate of `ego` from `state` with `k` steps left.
fn continuation<S: Simulator, R: Rng + ?Sized>(
    sim: &S,
    learner: &LearnerState<S::Key>,
    config: &TrainConfig,
    ego: usize,
    state: &S::State,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    if k == 0 && sim.key_tracks_time() {
        return Ok(0.0);
    }
    if config.vf_bootstrap {
        return Ok(critic_value(sim, learner, Critic::Task, ego, state, k));
    }
    let gamma = config.gamma_for(sim);
    let (mut s, mut total, mut discount) = (state.clone(), 0.0, 1.0);
    for left in (1..=k).rev() {
        let joint = sample_joint(sim, learner, &s, left, rng);
        let (next, r) = sim.step(&s, &joint, rng)?;
        total += discount * r[ego];
        discount *= gamma;
        s = next;
    }
    Ok(total)
}

/// One-step value of `ego` when `coplayer` plays `action` instead of its
/// part of `joint`.
fn deviated_value<S: Simulator, R: Rng + ?Sized>(
    sim: &S,
    learner: &LearnerState<S::Key>,
    config: &TrainConfig,
    ego: usize,
    coplayer: usize,
    state: &S::State,
    k: usize,
    joint: &[usize],
    action: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut dev = joint.to_vec();
    dev[coplayer] = action;
    let (next, r) = sim.step(state, &dev, rng)?;
    Ok(r[ego] + config.gamma_for(sim) * continuation(sim, learner, config, ego, &next, k - 1, rng)?)
}

/// Co-player action chosen to hurt `ego` at `state`, and the deviated value
/// when it was computed on the way.
fn pick_adversary_action<S: Simulator, R: Rng + ?Sized>(
    sim: &S,
    learner: &LearnerState<S::Key>,
    config: &TrainConfig,
    ego: usize,
    coplayer: usize,
    state: &S::State,
    k: usize,
    joint: &[usize],
    rng: &mut R,
) -> Result<(usize, Option<f64>)> {
    let n = sim.num_actions(state, coplayer);
    match config.adversary_mode {
        AdversaryMode::Learned => {
            let key = sim.key(state, k);
            Ok((learner.adversary(ego, coplayer).action(&key).min(n - 1), None))
        }
        AdversaryMode::FixedAction(a) => Ok((if a < n { a } else { joint[coplayer] }, None)),
        AdversaryMode::Exhaustive => {
            let mut best = (joint[coplayer], None::<f64>);
            for b in 0..n {
                let v = deviated_value(sim, learner, config, ego, coplayer, state, k, joint, b, rng)?;
                if best.1.map_or(true, |w| v < w) {
                    best = (b, Some(v));
                }
            }
            Ok(best)
        }
    }
}

/// Single-sample power of `coplayer` over `ego` at `state`: the realized
/// one-step value minus the value had the co-player switched to its
/// adversarial action. Zero when the adversary picks the played action.
///
/// `realized` is the successor and reward vector actually observed under
/// `joint`.
pub fn compute_power_sample<S: Simulator, R: Rng + ?Sized>(
    sim: &S,
    learner: &LearnerState<S::Key>,
    config: &TrainConfig,
    ego: usize,
    coplayer: usize,
    state: &S::State,
    k: usize,
    joint: &[usize],
    realized: (&S::State, &[f64]),
    rng: &mut R,
) -> Result<f64> {
    if !sim.resettable() {
        return Err(Error::capability(
            "power samples need a resettable simulator for counterfactual steps",
        ));
    }
    if ego == coplayer || k == 0 {
        return Err(Error::argument("power sample needs a co-player and k >= 1"));
    }
    let gamma = config.gamma_for(sim);
    let onpolicy = realized.1[ego] + gamma * continuation(sim, learner, config, ego, realized.0, k - 1, rng)?;
    let (b, value) = pick_adversary_action(sim, learner, config, ego, coplayer, state, k, joint, rng)?;
    if b == joint[coplayer] {
        return Ok(0.0);
    }
    let deviated = match value {
        Some(v) => v,
        None => deviated_value(sim, learner, config, ego, coplayer, state, k, joint, b, rng)?,
    };
    Ok(match config.adversary_mode {
        // The minimum also ranges over the played action.
        AdversaryMode::Exhaustive => (onpolicy - deviated).max(0.0),
        _ => onpolicy - deviated,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchStats {
    pub episodes: u64,
    pub steps: u64,
    /// Mean undiscounted task return of the ego per episode.
    pub mean_return: f64,
    pub substitutions: u64,
}

/// Trains `ego`'s actor and critics on a batch of episodes; the other
/// players act from their current policies but are not updated.
pub fn train_agent<S: Simulator>(
    sim: &S,
    learner: &mut LearnerState<S::Key>,
    config: &TrainConfig,
    ego: usize,
    streams: &mut RngStreams,
) -> Result<BatchStats> {
    let n = sim.num_players();
    let horizon = config.horizon_for(sim);
    let gamma = config.gamma_for(sim);
    let lambda = config.power_weight();
    let coplayers: Vec<usize> = (0..n).filter(|&j| j != ego).collect();
    let perturbed = if coplayers.is_empty() {
        None
    } else {
        Some(coplayers[(learner.batches[ego] % coplayers.len() as u64) as usize])
    };
    let mut stats = BatchStats::default();

    for _ in 0..config.batch_episodes {
        if learner.steps >= config.total_steps {
            break;
        }
        let knobs = Knobs::at(config, learner.steps);
        learner.temperature = knobs.temperature;
        let dr = config.domain_randomization && streams.starts.gen::<f64>() < config.dr_fraction;
        let (mut s, mut k) = if dr {
            domain_randomized_start(sim, config, &mut streams.starts)
        } else {
            (sim.initial_state(), horizon)
        };
        let mut episode_return = 0.0;
        while k > 0 && learner.steps < config.total_steps {
            let key = sim.observation_key(&s, k, ego);
            let num_actions = sim.num_actions(&s, ego);
            let ego_dist = learner.policy(ego, &key, num_actions);
            let mut joint = sample_joint(sim, learner, &s, k, &mut streams.actions);

            if config.algorithm == Algorithm::Sbpr {
                if let Some(j) = perturbed {
                    learner.substitution_chances += 1;
                    if streams.perturbation.gen::<f64>() < config.p.unwrap_or(0.0) {
                        let (b, _) = pick_adversary_action(
                            sim, learner, config, ego, j, &s, k, &joint, &mut streams.power,
                        )?;
                        joint[j] = b;
                        learner.substitutions += 1;
                        stats.substitutions += 1;
                    }
                }
            }

            let (next, rewards) = sim.step(&s, &joint, &mut streams.transitions)?;
            let task_r = rewards[ego];
            let mut r = task_r;
            if lambda > 0.0 && !coplayers.is_empty() {
                let mut total = 0.0;
                for &j in &coplayers {
                    total += compute_power_sample(
                        sim, learner, config, ego, j, &s, k, &joint, (&next, &rewards), &mut streams.power,
                    )?;
                }
                r -= lambda * total / coplayers.len() as f64;
            }

            let k2 = k - 1;
            let terminal = k2 == 0 && sim.key_tracks_time();
            let (vt_next, v_next) = if terminal {
                (0.0, 0.0)
            } else {
                (
                    critic_value(sim, learner, Critic::Task, ego, &next, k2),
                    critic_value(sim, learner, Critic::Training, ego, &next, k2),
                )
            };
            let task_delta = task_r + gamma * vt_next - critic_value(sim, learner, Critic::Task, ego, &s, k);
            critic_step(sim, learner, Critic::Task, ego, &s, k, knobs.critic_lr * task_delta);
            let delta = r + gamma * v_next - critic_value(sim, learner, Critic::Training, ego, &s, k);
            critic_step(sim, learner, Critic::Training, ego, &s, k, knobs.critic_lr * delta);

            let a = joint[ego];
            let prefs = learner.actors[ego].0.entry(key).or_insert_with(|| vec![0.0; num_actions]);
            let step = knobs.actor_lr * config.advantage_clip.map_or(delta, |c| delta.clamp(-c, c));
            let entropy: f64 = -ego_dist.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
            for (b, pref) in prefs.iter_mut().enumerate() {
                let indicator = if b == a { 1.0 } else { 0.0 };
                let pi = ego_dist[b];
                let grad_entropy = if pi > 0.0 { -pi * (pi.ln() + entropy) } else { 0.0 };
                *pref += step * (indicator - pi) + knobs.actor_lr * config.entropy_coef * grad_entropy;
            }

            episode_return += task_r;
            s = next;
            k = k2;
            learner.steps += 1;
            stats.steps += 1;
        }
        learner.episodes += 1;
        stats.episodes += 1;
        stats.mean_return += episode_return;
    }
    if stats.episodes > 0 {
        stats.mean_return /= stats.episodes as f64;
    }
    learner.batches[ego] += 1;
    Ok(stats)
}

/// Start state for one adversary update: randomized with the configured
/// share when enabled, otherwise a random-length on-policy prefix from the
/// initial state.
fn adversary_start<S: Simulator>(
    sim: &S,
    learner: &LearnerState<S::Key>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(S::State, usize)> {
    if config.domain_randomization && rng.gen::<f64>() < config.dr_fraction {
        if let Some(start) = sim.sample_start(rng) {
            let h = config.horizon_for(sim);
            return Ok((start.0, start.1.clamp(1, h)));
        }
    }
    let horizon = config.horizon_for(sim);
    let prefix = rng.gen_range(0..horizon);
    let mut s = sim.initial_state();
    for t in 0..prefix {
        let joint = sample_joint(sim, learner, &s, horizon - t, rng);
        s = sim.step(&s, &joint, rng)?.0;
    }
    Ok((s, horizon - prefix))
}

/// Regression target of the adversary table for playing `action` at
/// `state`: the ego's negated one-step value, shifted by the ego's state
/// value when normalization is on.
pub fn adversary_targets<S: Simulator>(
    sim: &S,
    learner: &LearnerState<S::Key>,
    config: &TrainConfig,
    ego: usize,
    state: &S::State,
    k: usize,
    successor: (&S::State, &[f64]),
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let gamma = config.gamma_for(sim);
    let cont = continuation(sim, learner, config, ego, successor.0, k - 1, rng)?;
    let mut target = -successor.1[ego] - gamma * cont;
    if config.normalize_adversary {
        target += critic_value(sim, learner, Critic::Task, ego, state, k);
    }
    Ok(target)
}

/// Updates the `(ego, coplayer)` adversary table with one batch of
/// epsilon-greedy single-step episodes.
pub fn train_adversarial_agent<S: Simulator>(
    sim: &S,
    learner: &mut LearnerState<S::Key>,
    config: &TrainConfig,
    ego: usize,
    coplayer: usize,
    streams: &mut RngStreams,
) -> Result<()> {
    for _ in 0..config.adversary_batch {
        let (s, k) = adversary_start(sim, learner, config, &mut streams.adversary)?;
        adversary_update(sim, learner, config, ego, coplayer, &s, k, &mut streams.adversary)?;
    }
    Ok(())
}

/// One epsilon-greedy single-step episode of the `(ego, coplayer)`
/// adversary from `state`, followed by its table update.
#[allow(clippy::too_many_arguments)]
pub fn adversary_update<S: Simulator>(
    sim: &S,
    learner: &mut LearnerState<S::Key>,
    config: &TrainConfig,
    ego: usize,
    coplayer: usize,
    state: &S::State,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let knobs = Knobs::at(config, learner.steps);
    let key = sim.key(state, k);
    let n = sim.num_actions(state, coplayer);
    let b = if rng.gen::<f64>() < knobs.epsilon {
        rng.gen_range(0..n)
    } else {
        learner.adversary(ego, coplayer).action(&key).min(n - 1)
    };
    let mut joint = sample_joint(sim, learner, state, k, rng);
    joint[coplayer] = b;
    let (next, rewards) = sim.step(state, &joint, rng)?;
    let target = adversary_targets(sim, learner, config, ego, state, k, (&next, &rewards), rng)?;

    let table = learner.adversary_mut(ego, coplayer);
    let visits = table.visits.0.entry(key.clone()).or_insert_with(|| vec![0; n]);
    visits[b] += 1;
    // Sample average at first, then the scheduled constant step.
    let lr = knobs.adversary_lr.max(1.0 / visits[b] as f64);
    let q = table.values.0.entry(key).or_insert_with(|| vec![0.0; n]);
    q[b] += lr * (target - q[b]);
    learner.adversary_updates += 1;
    Ok(())
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<K: Eq + std::hash::Hash> {
    pub learner: LearnerState<K>,
    pub metrics: Vec<MetricRow>,
}

/// Trains all players from scratch, alternating one batch per player with
/// adversary updates in between, and logs ground-truth metrics.
pub fn run_alternating_training<S: Simulator + GroundTruth>(
    sim: &S,
    config: &TrainConfig,
) -> Result<TrainOutcome<S::Key>> {
    train_from(sim, config, LearnerState::new(sim.num_players(), config.temperature_start))
}

/// Continues training an existing learner until `config.total_steps`.
pub fn train_from<S: Simulator + GroundTruth>(
    sim: &S,
    config: &TrainConfig,
    mut learner: LearnerState<S::Key>,
) -> Result<TrainOutcome<S::Key>> {
    config.validate()?;
    if learner.num_players != sim.num_players() {
        return Err(Error::config(format!(
            "learner has {} players, game has {}",
            learner.num_players,
            sim.num_players()
        )));
    }
    if config.uses_adversary() && !sim.resettable() {
        return Err(Error::capability(
            "power regularization needs a resettable simulator",
        ));
    }
    let n = sim.num_players();
    let mut streams = RngStreams::new(config.seed);
    let mut metrics = Vec::new();
    if config.total_steps == 0 || learner.steps >= config.total_steps {
        return Ok(TrainOutcome { learner, metrics });
    }
    let train_adversary = config.algorithm != Algorithm::TaskOnly
        && config.adversary_mode == AdversaryMode::Learned
        && n > 1;
    metrics.push(MetricRow::new(sim, &learner, config)?);
    let mut next_eval = if config.eval_every > 0 {
        learner.steps + config.eval_every
    } else {
        u64::MAX
    };
    while learner.steps < config.total_steps {
        let before = learner.steps;
        for ego in 0..n {
            train_agent(sim, &mut learner, config, ego, &mut streams)?;
        }
        if train_adversary {
            for ego in 0..n {
                for j in (0..n).filter(|&j| j != ego) {
                    train_adversarial_agent(sim, &mut learner, config, ego, j, &mut streams)?;
                }
            }
        }
        if learner.steps >= next_eval && learner.steps < config.total_steps {
            metrics.push(MetricRow::new(sim, &learner, config)?);
            while next_eval <= learner.steps {
                next_eval += config.eval_every;
            }
        }
        if learner.steps == before {
            break;
        }
    }
    metrics.push(MetricRow::new(sim, &learner, config)?);
    log::info!(
        "trained {} steps over {} episodes ({} adversary updates)",
        learner.steps,
        learner.episodes,
        learner.adversary_updates
    );
    Ok(TrainOutcome { learner, metrics })
}
