use serde::{Deserialize, Serialize};

use super::{MarkovGame, StateId};
use crate::error::{Error, Result};

/// Distribution tolerance for profile validation.
const DIST_TOLERANCE: f64 = 1e-12;

/// Tabular policy of every player.
///
/// A profile is either *stationary* (one table used at every step) or
/// *layered* (one table per steps-remaining value `k = 1..=T`, stored at
/// index `k - 1`). Backward-induction solvers produce layered profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyProfile {
    /// `[layer][player][state][action]`
    layers: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Tabular policy of a single player, with the same layer convention as
/// [`PolicyProfile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerPolicy {
    /// `[layer][state][action]`
    layers: Vec<Vec<Vec<f64>>>,
}

fn one_hot(n: usize, a: usize) -> Vec<f64> {
    let mut d = vec![0.0; n];
    d[a] = 1.0;
    d
}

/// Argmax with ties resolved to the lowest index.
pub(crate) fn argmax(d: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in d.iter().enumerate().skip(1) {
        if v > d[best] {
            best = i;
        }
    }
    best
}

impl PolicyProfile {
    /// Uniform distribution over each player's actions at every state.
    pub fn uniform(game: &MarkovGame) -> Self {
        let layer = (0..game.num_players())
            .map(|p| {
                (0..game.num_states())
                    .map(|s| {
                        let n = game.num_actions(s, p);
                        vec![1.0 / n as f64; n]
                    })
                    .collect()
            })
            .collect();
        PolicyProfile { layers: vec![layer] }
    }

    /// Stationary deterministic profile, `actions[player][state]`.
    pub fn from_actions(game: &MarkovGame, actions: &[Vec<usize>]) -> Result<Self> {
        if actions.len() != game.num_players() {
            return Err(Error::config("one action list per player required"));
        }
        let mut layer = Vec::with_capacity(actions.len());
        for (p, per_state) in actions.iter().enumerate() {
            if per_state.len() != game.num_states() {
                return Err(Error::config(format!(
                    "player {p}: {} state entries, game has {} states",
                    per_state.len(),
                    game.num_states()
                )));
            }
            let mut rows = Vec::with_capacity(per_state.len());
            for (s, &a) in per_state.iter().enumerate() {
                let n = game.num_actions(s, p);
                if a >= n {
                    return Err(Error::argument(format!(
                        "action {a} out of range for player {p} at state {s}"
                    )));
                }
                rows.push(one_hot(n, a));
            }
            layer.push(rows);
        }
        Ok(PolicyProfile { layers: vec![layer] })
    }

    /// Stationary deterministic profile where every player plays the same
    /// action index at every state.
    pub fn constant(game: &MarkovGame, joint: &[usize]) -> Result<Self> {
        let actions: Vec<Vec<usize>> = joint
            .iter()
            .map(|&a| vec![a; game.num_states()])
            .collect();
        Self::from_actions(game, &actions)
    }

    /// Stationary deterministic profile from per-player action names applied at every state.
    pub fn constant_named(game: &MarkovGame, names: &[&str]) -> Result<Self> {
        if names.len() != game.num_players() {
            return Err(Error::argument("one action name per player required"));
        }
        let mut actions = Vec::new();
        for (p, name) in names.iter().enumerate() {
            let mut row = Vec::new();
            for s in 0..game.num_states() {
                let a = game.action_index(s, p, name).ok_or_else(|| {
                    Error::argument(format!("player {p} has no action '{name}' at state {s}"))
                })?;
                row.push(a);
            }
            actions.push(row);
        }
        Self::from_actions(game, &actions)
    }

    /// Builds a profile from raw tables, `[layer][player][state][action]`.
    pub fn from_layers(layers: Vec<Vec<Vec<Vec<f64>>>>) -> Self {
        PolicyProfile { layers }
    }

    pub fn is_stationary(&self) -> bool {
        self.layers.len() == 1
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_players(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    #[inline]
    fn layer_index(&self, k: usize) -> usize {
        if self.layers.len() == 1 {
            0
        } else {
            k.max(1) - 1
        }
    }

    /// Distribution of `player` at `state` with `k` steps remaining.
    #[inline]
    pub fn dist(&self, player: usize, state: StateId, k: usize) -> &[f64] {
        &self.layers[self.layer_index(k)][player][state]
    }

    /// All players' distributions at `(state, k)`.
    pub fn local(&self, state: StateId, k: usize) -> Vec<&[f64]> {
        let layer = &self.layers[self.layer_index(k)];
        layer.iter().map(|p| p[state].as_slice()).collect()
    }

    /// Expands a stationary profile into one table per step of `horizon`.
    pub fn to_layered(&self, horizon: usize) -> Self {
        if !self.is_stationary() {
            return self.clone();
        }
        PolicyProfile {
            layers: vec![self.layers[0].clone(); horizon],
        }
    }

    /// Overwrites one distribution. On a stationary profile this changes every layer.
    pub fn set_dist(&mut self, player: usize, state: StateId, k: usize, dist: Vec<f64>) {
        let l = self.layer_index(k);
        self.layers[l][player][state] = dist;
    }

    /// Argmax projection, ties to the lowest action index.
    pub fn determinize(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|rows| {
                        rows.iter()
                            .map(|d| one_hot(d.len(), argmax(d)))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        PolicyProfile { layers }
    }

    pub fn is_deterministic(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .flatten()
            .all(|d| d.iter().all(|&p| p == 0.0 || p == 1.0))
    }

    /// Action chosen at `(state, k)` when the distribution is a point mass.
    pub fn action(&self, player: usize, state: StateId, k: usize) -> Option<usize> {
        let d = self.dist(player, state, k);
        d.iter().position(|&p| p == 1.0)
    }

    /// Replaces one player's policy, converting to a layered profile when needed.
    pub fn with_player(&self, player: usize, policy: &PlayerPolicy, horizon: usize) -> Self {
        let mut out = if self.is_stationary() && policy.layers.len() == 1 {
            self.clone()
        } else {
            self.to_layered(horizon)
        };
        for (l, layer) in out.layers.iter_mut().enumerate() {
            let src = if policy.layers.len() == 1 { 0 } else { l };
            layer[player] = policy.layers[src].clone();
        }
        out
    }

    pub fn player(&self, player: usize) -> PlayerPolicy {
        PlayerPolicy {
            layers: self.layers.iter().map(|l| l[player].clone()).collect(),
        }
    }

    /// Checks that the profile covers every player, state and action of `game`
    /// with valid distributions.
    pub fn validate(&self, game: &MarkovGame) -> Result<()> {
        if self.layers.len() != 1 && self.layers.len() != game.horizon() {
            return Err(Error::config(format!(
                "profile has {} layers; expected 1 or the horizon {}",
                self.layers.len(),
                game.horizon()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.len() != game.num_players() {
                return Err(Error::config(format!(
                    "profile layer {l} covers {} players, game has {}",
                    layer.len(),
                    game.num_players()
                )));
            }
            for (p, rows) in layer.iter().enumerate() {
                if rows.len() != game.num_states() {
                    return Err(Error::config(format!(
                        "profile for player {p} covers {} states, game has {}",
                        rows.len(),
                        game.num_states()
                    )));
                }
                for (s, d) in rows.iter().enumerate() {
                    if d.len() != game.num_actions(s, p) {
                        return Err(Error::config(format!(
                            "player {p} at state '{}': {} probabilities for {} actions",
                            game.state_name(s),
                            d.len(),
                            game.num_actions(s, p)
                        )));
                    }
                    let total: f64 = d.iter().sum();
                    if d.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > DIST_TOLERANCE {
                        return Err(Error::config(format!(
                            "player {p} at state '{}': not a distribution",
                            game.state_name(s)
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl PlayerPolicy {
    pub fn from_layers(layers: Vec<Vec<Vec<f64>>>) -> Self {
        PlayerPolicy { layers }
    }

    pub fn is_stationary(&self) -> bool {
        self.layers.len() == 1
    }

    pub fn dist(&self, state: StateId, k: usize) -> &[f64] {
        let l = if self.layers.len() == 1 { 0 } else { k.max(1) - 1 };
        &self.layers[l][state]
    }

    /// Deterministic action at `(state, k)`, argmax with lowest-index ties.
    pub fn action(&self, state: StateId, k: usize) -> usize {
        argmax(self.dist(state, k))
    }

    pub(crate) fn layered_deterministic(actions: &[Vec<usize>], counts: &[Vec<usize>]) -> Self {
        // actions[k-1][s], counts[k-1][s]
        PlayerPolicy {
            layers: actions
                .iter()
                .zip(counts)
                .map(|(row, n)| row.iter().zip(n).map(|(&a, &n)| one_hot(n, a)).collect())
                .collect(),
        }
    }
}
