use std::collections::BTreeMap;
use std::fmt::Debug;
use std::hash::Hash;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{MarkovGame, PolicyProfile, StateId};
use crate::error::{Error, Result};

/// Generative, resettable game simulator.
///
/// States are plain values: resetting to a state is cloning it, so
/// counterfactual steps never disturb an ongoing rollout.
pub trait Simulator: Sync {
    type State: Clone + Eq + Hash + Debug + Send + Sync;
    /// Table key used by tabular learners.
    type Key: Clone + Eq + Hash + Ord + Debug + Serialize + DeserializeOwned + Send + Sync;

    fn num_players(&self) -> usize;
    fn num_actions(&self, state: &Self::State, player: usize) -> usize;
    fn horizon(&self) -> usize;
    fn gamma(&self) -> f64;
    fn initial_state(&self) -> Self::State;

    /// Samples the successor of `state` under `joint` and returns it with
    /// the per-player reward vector.
    fn step<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        joint: &[usize],
        rng: &mut R,
    ) -> Result<(Self::State, Vec<f64>)>;

    fn key(&self, state: &Self::State, steps_remaining: usize) -> Self::Key;

    /// Key of the actor and critic tables of `player`; the full state key
    /// unless the environment defines a narrower per-player view. Adversary
    /// tables always use [`Simulator::key`].
    fn observation_key(&self, state: &Self::State, steps_remaining: usize, _player: usize) -> Self::Key {
        self.key(state, steps_remaining)
    }

    /// Whether observation keys hide part of the state from a player. Critics
    /// then add a term per co-player, keyed by that co-player's observation.
    fn partial_observations(&self) -> bool {
        false
    }

    /// Whether the key distinguishes steps remaining. When it does not,
    /// learners bootstrap through the horizon cut instead of treating it as terminal.
    fn key_tracks_time(&self) -> bool;

    fn resettable(&self) -> bool {
        true
    }

    /// Domain-randomized start `(state, steps_remaining)`, or `None` when the
    /// environment defines no randomization support.
    fn sample_start<R: Rng + ?Sized>(&self, _rng: &mut R) -> Option<(Self::State, usize)> {
        None
    }

    fn action_name(&self, _player: usize, action: usize) -> String {
        action.to_string()
    }

    /// Stable identity string hashed into persisted learner tables.
    fn fingerprint(&self) -> String;
}

impl Simulator for MarkovGame {
    type State = StateId;
    type Key = (StateId, usize);

    fn num_players(&self) -> usize {
        MarkovGame::num_players(self)
    }

    fn num_actions(&self, state: &StateId, player: usize) -> usize {
        MarkovGame::num_actions(self, *state, player)
    }

    fn horizon(&self) -> usize {
        MarkovGame::horizon(self)
    }

    fn gamma(&self) -> f64 {
        MarkovGame::gamma(self)
    }

    fn initial_state(&self) -> StateId {
        MarkovGame::initial_state(self)
    }

    fn step<R: Rng + ?Sized>(
        &self,
        state: &StateId,
        joint: &[usize],
        rng: &mut R,
    ) -> Result<(StateId, Vec<f64>)> {
        step(self, *state, joint, rng)
    }

    fn key(&self, state: &StateId, steps_remaining: usize) -> (StateId, usize) {
        (*state, steps_remaining)
    }

    fn key_tracks_time(&self) -> bool {
        true
    }

    /// Uniform over states and over steps remaining `1..=T`.
    fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(StateId, usize)> {
        let s = rng.gen_range(0..self.num_states());
        let k = rng.gen_range(1..=MarkovGame::horizon(self));
        Some((s, k))
    }

    fn action_name(&self, player: usize, action: usize) -> String {
        MarkovGame::action_name(self, self.initial_state(), player, action).to_string()
    }

    fn fingerprint(&self) -> String {
        self.content_hash()
    }
}

/// Inverse-CDF sample from a distribution with a uniform draw `u` in `[0, 1)`.
/// Mass lost to rounding falls to the last action with positive probability.
pub fn sample_index(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Samples one transition. Always consumes exactly one uniform draw.
pub fn step<R: Rng + ?Sized>(
    game: &MarkovGame,
    state: StateId,
    joint: &[usize],
    rng: &mut R,
) -> Result<(StateId, Vec<f64>)> {
    let idx = game.joint_index(state, joint)?;
    let out = game.outcome(state, idx);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut next = out.next.last().map(|&(n, _)| n).unwrap_or(state);
    for &(n, p) in &out.next {
        acc += p;
        if u < acc {
            next = n;
            break;
        }
    }
    Ok((next, out.rewards.clone()))
}

/// Where an episode started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartKind {
    Initial,
    Randomized,
}

/// A co-player action replaced during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub player: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step<S> {
    pub state: S,
    pub steps_remaining: usize,
    pub joint_action: Vec<usize>,
    pub rewards: Vec<f64>,
    pub substitution: Option<Substitution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub start: StartKind,
    pub steps: Vec<Step<S>>,
    pub final_state: S,
}

impl<S> Trajectory<S> {
    pub fn discounted_return(&self, player: usize, gamma: f64) -> f64 {
        let mut disc = 1.0;
        let mut total = 0.0;
        for st in &self.steps {
            total += disc * st.rewards[player];
            disc *= gamma;
        }
        total
    }

    pub fn substitutions(&self) -> usize {
        self.steps.iter().filter(|s| s.substitution.is_some()).count()
    }
}

/// Adversary consulted with a fixed probability at every step.
pub struct SampledAdversary<'a> {
    pub coplayer: usize,
    pub probability: f64,
    /// Action to force given `(state, steps_remaining)`.
    pub action: Box<dyn Fn(StateId, usize) -> usize + 'a>,
}

/// Co-player substitutions applied during [`rollout`].
#[derive(Default)]
pub struct PerturbationPlan<'a> {
    forced: BTreeMap<usize, Vec<Substitution>>,
    sampled: Option<SampledAdversary<'a>>,
}

impl<'a> PerturbationPlan<'a> {
    pub fn none() -> Self {
        PerturbationPlan::default()
    }

    /// Forces `player` to play `action` at timestep `t`.
    pub fn force(mut self, t: usize, player: usize, action: usize) -> Self {
        self.forced
            .entry(t)
            .or_default()
            .push(Substitution { player, action });
        self
    }

    /// Independently at every step, with probability `p`, the co-player's
    /// action is replaced by the adversary's.
    pub fn sample(mut self, adversary: SampledAdversary<'a>) -> Self {
        self.sampled = Some(adversary);
        self
    }

    fn validate(&self, game: &MarkovGame) -> Result<()> {
        for subs in self.forced.values() {
            for sub in subs {
                game.check_player(sub.player)?;
            }
        }
        if let Some(sa) = &self.sampled {
            game.check_player(sa.coplayer)?;
            if !(0.0..=1.0).contains(&sa.probability) {
                return Err(Error::argument(format!(
                    "substitution probability {} not in [0, 1]",
                    sa.probability
                )));
            }
        }
        Ok(())
    }
}

/// Rolls out `profile` from `start` for `horizon` steps (capped at the game
/// horizon); step `t` is played with `horizon - t` steps remaining.
///
/// Per step the rng is consumed in a fixed order: one draw per player's
/// action, one draw for the sampled adversary when the plan has one, one
/// draw for the transition.
pub fn rollout<R: Rng + ?Sized>(
    game: &MarkovGame,
    profile: &PolicyProfile,
    start: StateId,
    horizon: usize,
    rng: &mut R,
    plan: &PerturbationPlan<'_>,
) -> Result<Trajectory<StateId>> {
    game.check_state(start)?;
    plan.validate(game)?;
    let horizon = horizon.min(game.horizon());
    let mut state = start;
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let k = horizon - t;
        let mut joint: Vec<usize> = (0..game.num_players())
            .map(|p| sample_index(profile.dist(p, state, k), rng.gen()))
            .collect();
        let mut substitution = None;
        if let Some(sa) = &plan.sampled {
            let u: f64 = rng.gen();
            if u < sa.probability {
                let a = (sa.action)(state, k);
                joint[sa.coplayer] = a;
                substitution = Some(Substitution {
                    player: sa.coplayer,
                    action: a,
                });
            }
        }
        if let Some(forced) = plan.forced.get(&t) {
            for sub in forced {
                if sub.action >= game.num_actions(state, sub.player) {
                    return Err(Error::argument(format!(
                        "forced action {} out of range for player {} at t={t}",
                        sub.action, sub.player
                    )));
                }
                joint[sub.player] = sub.action;
                substitution = Some(*sub);
            }
        }
        let (next, rewards) = step(game, state, &joint, rng)?;
        steps.push(Step {
            state,
            steps_remaining: k,
            joint_action: joint,
            rewards,
            substitution,
        });
        state = next;
    }
    Ok(Trajectory {
        start: if start == game.initial_state() {
            StartKind::Initial
        } else {
            StartKind::Randomized
        },
        steps,
        final_state: state,
    })
}
