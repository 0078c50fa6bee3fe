//! Finite Markov games.
//!
//! Two capability tiers live here. [`MarkovGame`] is the *enumerable* tier:
//! every state, joint action, transition distribution and reward is stored
//! explicitly so values can be computed exactly by backward induction over
//! (state, steps-remaining) layers. [`Simulator`] is the *generative* tier:
//! a resettable step function over opaque states, used by the learners and
//! by environments too large to tabulate.
//!
//! Action sets are per player and may differ between states. Joint actions
//! at a state are addressed by a mixed-radix index with player 0 as the most
//! significant digit.

mod eval;
mod format;
mod policy;
mod sim;

pub use eval::{evaluate_task_values, reachable_states, TaskValues};
pub(crate) use eval::{deviation_values, expectation, joint_values, next_expectation};
pub use format::GameFile;
pub use policy::{PlayerPolicy, PolicyProfile};
pub(crate) use policy::argmax as policy_argmax;
pub use sim::{
    rollout, sample_index, step, PerturbationPlan, SampledAdversary, StartKind, Simulator, Step,
    Substitution, Trajectory,
};

use crate::error::{Error, Result};

pub type StateId = usize;

/// Result of playing one joint action at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Sparse successor distribution, strictly positive probabilities.
    pub next: Vec<(StateId, f64)>,
    /// One reward per player.
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct StateInfo {
    name: String,
    action_names: Vec<Vec<String>>,
    strides: Vec<usize>,
    outcomes: Vec<Outcome>,
}

/// Enumerable finite-horizon Markov game `(N, S, A, T, R, gamma)` with horizon `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame {
    num_players: usize,
    states: Vec<StateInfo>,
    gamma: f64,
    horizon: usize,
    initial_state: StateId,
}

/// Probability mass tolerance applied when a game is built or loaded.
pub const PROB_TOLERANCE: f64 = 1e-9;

impl MarkovGame {
    pub fn num_players(&self) -> usize {
        self.num_players
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_state(&self) -> StateId {
        self.initial_state
    }

    pub fn state_name(&self, s: StateId) -> &str {
        &self.states[s].name
    }

    pub fn state_index(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|st| st.name == name)
    }

    pub fn num_actions(&self, s: StateId, player: usize) -> usize {
        self.states[s].action_names[player].len()
    }

    pub fn action_name(&self, s: StateId, player: usize, action: usize) -> &str {
        &self.states[s].action_names[player][action]
    }

    pub fn action_index(&self, s: StateId, player: usize, name: &str) -> Option<usize> {
        self.states[s].action_names[player]
            .iter()
            .position(|a| a == name)
    }

    /// Number of joint actions available at `s`.
    pub fn num_joint(&self, s: StateId) -> usize {
        self.states[s].outcomes.len()
    }

    pub fn joint_index(&self, s: StateId, joint: &[usize]) -> Result<usize> {
        self.check_state(s)?;
        if joint.len() != self.num_players {
            return Err(Error::argument(format!(
                "joint action has {} entries, game has {} players",
                joint.len(),
                self.num_players
            )));
        }
        let info = &self.states[s];
        let mut idx = 0;
        for (p, &a) in joint.iter().enumerate() {
            let n = info.action_names[p].len();
            if a >= n {
                return Err(Error::argument(format!(
                    "action {a} out of range for player {p} at state '{}' ({n} actions)",
                    info.name
                )));
            }
            idx += a * info.strides[p];
        }
        Ok(idx)
    }

    /// Action of `player` inside joint index `idx` at state `s`.
    #[inline]
    pub fn action_of(&self, s: StateId, idx: usize, player: usize) -> usize {
        let info = &self.states[s];
        (idx / info.strides[player]) % info.action_names[player].len()
    }

    pub fn decode_joint(&self, s: StateId, idx: usize) -> Vec<usize> {
        (0..self.num_players)
            .map(|p| self.action_of(s, idx, p))
            .collect()
    }

    #[inline]
    pub fn outcome(&self, s: StateId, idx: usize) -> &Outcome {
        &self.states[s].outcomes[idx]
    }

    pub(crate) fn check_state(&self, s: StateId) -> Result<()> {
        if s >= self.states.len() {
            Err(Error::argument(format!(
                "state {s} out of range ({} states)",
                self.states.len()
            )))
        } else {
            Ok(())
        }
    }

    pub(crate) fn check_player(&self, p: usize) -> Result<()> {
        if p >= self.num_players {
            Err(Error::argument(format!(
                "player {p} out of range ({} players)",
                self.num_players
            )))
        } else {
            Ok(())
        }
    }

    /// Copy of the game with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let mut g = self.clone();
        g.gamma = gamma;
        Ok(g)
    }

    /// Copy of the game with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::argument("horizon must be positive"));
        }
        let mut g = self.clone();
        g.horizon = horizon;
        Ok(g)
    }

    /// Copy of the game with every reward rewritten by `f(state, joint_idx, player, reward)`.
    pub fn map_rewards(&self, mut f: impl FnMut(StateId, usize, usize, f64) -> f64) -> Self {
        let mut g = self.clone();
        for (s, info) in g.states.iter_mut().enumerate() {
            for (idx, out) in info.outcomes.iter_mut().enumerate() {
                for (p, r) in out.rewards.iter_mut().enumerate() {
                    *r = f(s, idx, p, *r);
                }
            }
        }
        g
    }

    /// SHA-256 over the canonical JSON export.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = self.to_json_string();
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::argument(format!("discount {gamma} not in (0, 1]")))
    }
}

/// Incremental constructor for [`MarkovGame`].
#[derive(Debug, Clone)]
pub struct GameBuilder {
    num_players: usize,
    gamma: f64,
    horizon: usize,
    initial_state: StateId,
    states: Vec<(String, Vec<Vec<String>>)>,
    outcomes: Vec<Vec<Option<Outcome>>>,
}

impl GameBuilder {
    pub fn new(num_players: usize, gamma: f64, horizon: usize) -> Self {
        GameBuilder {
            num_players,
            gamma,
            horizon,
            initial_state: 0,
            states: Vec::new(),
            outcomes: Vec::new(),
        }
    }

    /// Adds a state with per-player action names.
    pub fn add_state(&mut self, name: impl Into<String>, actions: Vec<Vec<String>>) -> StateId {
        let joint: usize = actions.iter().map(Vec::len).product();
        self.states.push((name.into(), actions));
        self.outcomes.push(vec![None; joint]);
        self.states.len() - 1
    }

    /// Adds a state where every player shares the same action names.
    pub fn add_symmetric_state(&mut self, name: impl Into<String>, actions: &[&str]) -> StateId {
        let names: Vec<String> = actions.iter().map(|a| a.to_string()).collect();
        self.add_state(name, vec![names; self.num_players])
    }

    pub fn set_initial_state(&mut self, s: StateId) -> &mut Self {
        self.initial_state = s;
        self
    }

    fn joint_idx(&self, s: StateId, joint: &[usize]) -> Result<usize> {
        let (name, actions) = self
            .states
            .get(s)
            .ok_or_else(|| Error::argument(format!("unknown state {s}")))?;
        if joint.len() != self.num_players {
            return Err(Error::argument(format!(
                "joint action for '{name}' has {} entries, expected {}",
                joint.len(),
                self.num_players
            )));
        }
        let mut idx = 0;
        for (p, &a) in joint.iter().enumerate() {
            if a >= actions[p].len() {
                return Err(Error::argument(format!(
                    "action {a} out of range for player {p} at '{name}'"
                )));
            }
            idx = idx * actions[p].len() + a;
        }
        Ok(idx)
    }

    pub fn set_outcome(
        &mut self,
        s: StateId,
        joint: &[usize],
        next: Vec<(StateId, f64)>,
        rewards: Vec<f64>,
    ) -> Result<()> {
        let idx = self.joint_idx(s, joint)?;
        self.outcomes[s][idx] = Some(Outcome { next, rewards });
        Ok(())
    }

    /// Accumulates transition mass for `(s, joint)`, creating a zero-reward
    /// outcome if none exists yet.
    pub(crate) fn add_transition(
        &mut self,
        s: StateId,
        joint: &[usize],
        next: StateId,
        prob: f64,
    ) -> Result<()> {
        let idx = self.joint_idx(s, joint)?;
        let n = self.num_players;
        let out = self.outcomes[s][idx].get_or_insert_with(|| Outcome {
            next: Vec::new(),
            rewards: vec![0.0; n],
        });
        out.next.push((next, prob));
        Ok(())
    }

    pub(crate) fn set_rewards(&mut self, s: StateId, joint: &[usize], rewards: Vec<f64>) -> Result<()> {
        let idx = self.joint_idx(s, joint)?;
        let n = self.num_players;
        let out = self.outcomes[s][idx].get_or_insert_with(|| Outcome {
            next: Vec::new(),
            rewards: vec![0.0; n],
        });
        out.rewards = rewards;
        Ok(())
    }

    pub(crate) fn state_names(&self) -> impl Iterator<Item = &str> {
        self.states.iter().map(|(n, _)| n.as_str())
    }

    pub(crate) fn state_actions(&self, s: StateId) -> &[Vec<String>] {
        &self.states[s].1
    }

    /// Validates and freezes the game.
    pub fn build(self) -> Result<MarkovGame> {
        if self.num_players == 0 {
            return Err(Error::config("a game needs at least one player"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        check_gamma(self.gamma).map_err(|e| Error::config(e.to_string()))?;
        if self.states.is_empty() {
            return Err(Error::config("a game needs at least one state"));
        }
        if self.initial_state >= self.states.len() {
            return Err(Error::config("initial state out of range"));
        }
        let num_states = self.states.len();
        let mut states = Vec::with_capacity(num_states);
        for ((name, actions), outcomes) in self.states.into_iter().zip(self.outcomes) {
            if actions.len() != self.num_players {
                return Err(Error::config(format!(
                    "state '{name}' lists actions for {} players, expected {}",
                    actions.len(),
                    self.num_players
                )));
            }
            if let Some(p) = actions.iter().position(Vec::is_empty) {
                return Err(Error::config(format!(
                    "player {p} has no actions at state '{name}'"
                )));
            }
            let mut strides = vec![1; self.num_players];
            for p in (0..self.num_players.saturating_sub(1)).rev() {
                strides[p] = strides[p + 1] * actions[p + 1].len();
            }
            let mut frozen = Vec::with_capacity(outcomes.len());
            for (idx, out) in outcomes.into_iter().enumerate() {
                let joint: Vec<usize> = (0..self.num_players)
                    .map(|p| (idx / strides[p]) % actions[p].len())
                    .collect();
                let label = || {
                    let names: Vec<&str> = joint
                        .iter()
                        .enumerate()
                        .map(|(p, &a)| actions[p][a].as_str())
                        .collect();
                    format!("state '{name}', joint action [{}]", names.join(", "))
                };
                let out = out.ok_or_else(|| Error::config(format!("missing transition for {}", label())))?;
                if out.rewards.len() != self.num_players {
                    return Err(Error::config(format!(
                        "reward vector of length {} for {}",
                        out.rewards.len(),
                        label()
                    )));
                }
                if out.rewards.iter().any(|r| !r.is_finite()) {
                    return Err(Error::config(format!("non-finite reward for {}", label())));
                }
                let mut merged: Vec<(StateId, f64)> = Vec::new();
                for (next, p) in out.next {
                    if next >= num_states {
                        return Err(Error::config(format!(
                            "successor {next} out of range for {}",
                            label()
                        )));
                    }
                    if !(p >= 0.0 && p.is_finite()) {
                        return Err(Error::config(format!("invalid probability {p} for {}", label())));
                    }
                    if p == 0.0 {
                        continue;
                    }
                    match merged.iter_mut().find(|(n, _)| *n == next) {
                        Some(entry) => entry.1 += p,
                        None => merged.push((next, p)),
                    }
                }
                let total: f64 = merged.iter().map(|(_, p)| p).sum();
                if (total - 1.0).abs() > PROB_TOLERANCE {
                    return Err(Error::config(format!(
                        "transition probabilities sum to {total} for {}",
                        label()
                    )));
                }
                merged.sort_by_key(|(n, _)| *n);
                frozen.push(Outcome {
                    next: merged,
                    rewards: out.rewards,
                });
            }
            states.push(StateInfo {
                name,
                action_names: actions,
                strides,
                outcomes: frozen,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for st in &states {
            if !seen.insert(st.name.as_str()) {
                return Err(Error::config(format!("duplicate state name '{}'", st.name)));
            }
        }
        Ok(MarkovGame {
            num_players: self.num_players,
            states,
            gamma: self.gamma,
            horizon: self.horizon,
            initial_state: self.initial_state,
        })
    }
}

/// One-state, one-step normal-form game. `payoff(row_action_indices)` returns
/// the reward vector for each joint action.
pub fn matrix_game(
    actions: Vec<Vec<String>>,
    mut payoff: impl FnMut(&[usize]) -> Vec<f64>,
) -> Result<MarkovGame> {
    let n = actions.len();
    let mut b = GameBuilder::new(n, 1.0, 1);
    let root = b.add_state("root", actions.clone());
    let sizes: Vec<usize> = actions.iter().map(Vec::len).collect();
    for joint in joint_actions(&sizes) {
        let r = payoff(&joint);
        b.set_outcome(root, &joint, vec![(root, 1.0)], r)?;
    }
    b.build()
}

/// Every joint action over the given per-player action counts, in joint-index order.
pub fn joint_actions(sizes: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = sizes.iter().product();
    (0..total).map(move |mut idx| {
        let mut joint = vec![0; sizes.len()];
        for p in (0..sizes.len()).rev() {
            joint[p] = idx % sizes[p];
            idx /= sizes[p];
        }
        joint
    })
}
