//! JSON game files.
//!
//! ```json
//! {
//!   "players": 2,
//!   "states": ["root"],
//!   "actions": [["X", "Y"], ["X", "Y"]],
//!   "transitions": [{"state": "root", "joint_action": ["*", "*"], "next": "root", "prob": 1.0}],
//!   "rewards": [{"state": "root", "joint_action": ["X", "X"], "vector": [3, 3]}],
//!   "gamma": 1.0,
//!   "horizon": 1
//! }
//! ```
//!
//! States and actions may be referenced by name or by index; `"*"` in a
//! joint action matches every action of that player. Rewards are sparse
//! (missing entries are zero). Transition mass must sum to 1 per
//! (state, joint action) within 1e-9. The optional `state_actions` list
//! overrides the per-player action names at individual states, and the
//! optional `initial_state` defaults to the first state.

use serde::{Deserialize, Serialize};

use super::{joint_actions, GameBuilder, MarkovGame, StateId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ref {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub state: Ref,
    pub joint_action: Vec<Ref>,
    pub next: Ref,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardEntry {
    pub state: Ref,
    pub joint_action: Vec<Ref>,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateActions {
    pub state: Ref,
    pub actions: Vec<Vec<String>>,
}

/// Serialized form of a [`MarkovGame`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    pub players: usize,
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub state_actions: Vec<StateActions>,
    pub transitions: Vec<TransitionEntry>,
    #[serde(default)]
    pub rewards: Vec<RewardEntry>,
    pub gamma: f64,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Ref>,
}

fn resolve_state(b: &GameBuilder, r: &Ref) -> Result<StateId> {
    match r {
        Ref::Index(i) => {
            if *i < b.state_names().count() {
                Ok(*i)
            } else {
                Err(Error::config(format!("state index {i} out of range")))
            }
        }
        Ref::Name(n) => b
            .state_names()
            .position(|x| x == n)
            .ok_or_else(|| Error::config(format!("unknown state '{n}'"))),
    }
}

/// Expands a possibly-wildcarded joint action reference into concrete joint actions.
fn resolve_joint(b: &GameBuilder, s: StateId, refs: &[Ref]) -> Result<Vec<Vec<usize>>> {
    let actions = b.state_actions(s);
    if refs.len() != actions.len() {
        return Err(Error::config(format!(
            "joint action has {} entries, expected {}",
            refs.len(),
            actions.len()
        )));
    }
    let mut choices: Vec<Vec<usize>> = Vec::with_capacity(refs.len());
    for (p, r) in refs.iter().enumerate() {
        let names = &actions[p];
        let opts = match r {
            Ref::Name(n) if n == "*" => (0..names.len()).collect(),
            Ref::Name(n) => vec![names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| Error::config(format!("player {p} has no action '{n}'")))?],
            Ref::Index(i) if *i < names.len() => vec![*i],
            Ref::Index(i) => {
                return Err(Error::config(format!(
                    "action index {i} out of range for player {p}"
                )))
            }
        };
        choices.push(opts);
    }
    let sizes: Vec<usize> = choices.iter().map(Vec::len).collect();
    Ok(joint_actions(&sizes)
        .map(|sel| sel.iter().enumerate().map(|(p, &i)| choices[p][i]).collect())
        .collect())
}

impl GameFile {
    pub fn into_game(self) -> Result<MarkovGame> {
        if self.actions.len() != self.players {
            return Err(Error::config(format!(
                "'actions' lists {} players, 'players' is {}",
                self.actions.len(),
                self.players
            )));
        }
        let mut b = GameBuilder::new(self.players, self.gamma, self.horizon);
        for name in &self.states {
            b.add_state(name.clone(), self.actions.clone());
        }
        // Rebuild with overrides applied before any outcome is set.
        if !self.state_actions.is_empty() {
            let mut per_state: Vec<Vec<Vec<String>>> = vec![self.actions.clone(); self.states.len()];
            for sa in &self.state_actions {
                let s = resolve_state(&b, &sa.state)?;
                if sa.actions.len() != self.players {
                    return Err(Error::config("state_actions entry must list every player"));
                }
                per_state[s] = sa.actions.clone();
            }
            b = GameBuilder::new(self.players, self.gamma, self.horizon);
            for (name, acts) in self.states.iter().zip(per_state) {
                b.add_state(name.clone(), acts);
            }
        }
        if let Some(r) = &self.initial_state {
            let s = resolve_state(&b, r)?;
            b.set_initial_state(s);
        }
        for t in &self.transitions {
            let s = resolve_state(&b, &t.state)?;
            let next = resolve_state(&b, &t.next)?;
            for joint in resolve_joint(&b, s, &t.joint_action)? {
                b.add_transition(s, &joint, next, t.prob)?;
            }
        }
        for r in &self.rewards {
            let s = resolve_state(&b, &r.state)?;
            for joint in resolve_joint(&b, s, &r.joint_action)? {
                b.set_rewards(s, &joint, r.vector.clone())?;
            }
        }
        b.build()
    }

    pub fn from_game(game: &MarkovGame) -> Self {
        let n = game.num_players();
        let base: Vec<Vec<String>> = (0..n)
            .map(|p| {
                (0..game.num_actions(0, p))
                    .map(|a| game.action_name(0, p, a).to_string())
                    .collect()
            })
            .collect();
        let mut state_actions = Vec::new();
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for s in 0..game.num_states() {
            let acts: Vec<Vec<String>> = (0..n)
                .map(|p| {
                    (0..game.num_actions(s, p))
                        .map(|a| game.action_name(s, p, a).to_string())
                        .collect()
                })
                .collect();
            if acts != base {
                state_actions.push(StateActions {
                    state: Ref::Name(game.state_name(s).to_string()),
                    actions: acts.clone(),
                });
            }
            for idx in 0..game.num_joint(s) {
                let joint: Vec<Ref> = game
                    .decode_joint(s, idx)
                    .iter()
                    .enumerate()
                    .map(|(p, &a)| Ref::Name(acts[p][a].clone()))
                    .collect();
                let out = game.outcome(s, idx);
                for &(next, prob) in &out.next {
                    transitions.push(TransitionEntry {
                        state: Ref::Name(game.state_name(s).to_string()),
                        joint_action: joint.clone(),
                        next: Ref::Name(game.state_name(next).to_string()),
                        prob,
                    });
                }
                if out.rewards.iter().any(|&r| r != 0.0) {
                    rewards.push(RewardEntry {
                        state: Ref::Name(game.state_name(s).to_string()),
                        joint_action: joint,
                        vector: out.rewards.clone(),
                    });
                }
            }
        }
        GameFile {
            players: n,
            states: (0..game.num_states())
                .map(|s| game.state_name(s).to_string())
                .collect(),
            actions: base,
            state_actions,
            transitions,
            rewards,
            gamma: game.gamma(),
            horizon: game.horizon(),
            initial_state: (game.initial_state() != 0)
                .then(|| Ref::Name(game.state_name(game.initial_state()).to_string())),
        }
    }
}

impl MarkovGame {
    /// Parses a JSON game file. Syntax errors carry line and column.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GameFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_game()
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&GameFile::from_game(self)).expect("game serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;

    #[test]
    fn export_import_preserves_game() {
        for g in [
            envs::attack_defense(),
            envs::larger_attack_defense(),
            envs::random_game(3, 4, 3, 2, 3, 0.7),
            envs::coin_division(0.9, envs::CoinPayout::Members).unwrap().game,
        ] {
            let back = MarkovGame::from_json_str(&g.to_json_string()).unwrap();
            assert_eq!(back, g);
        }
    }

    #[test]
    fn wildcards_and_sparse_rewards() {
        let text = r#"{
            "players": 2, "states": ["root"],
            "actions": [["X","Y"],["X","Y"]],
            "transitions": [{"state":"root","joint_action":["*","*"],"next":"root","prob":1.0}],
            "rewards": [{"state":"root","joint_action":["X","*"],"vector":[1,2]}],
            "gamma": 1.0, "horizon": 1
        }"#;
        let g = MarkovGame::from_json_str(text).unwrap();
        assert_eq!(g.outcome(0, g.joint_index(0, &[0, 1]).unwrap()).rewards, vec![1.0, 2.0]);
        assert_eq!(g.outcome(0, g.joint_index(0, &[1, 0]).unwrap()).rewards, vec![0.0, 0.0]);
    }

    #[test]
    fn probability_mass_checked() {
        let text = r#"{
            "players": 1, "states": ["a", "b"], "actions": [["go"]],
            "transitions": [
                {"state":"a","joint_action":["go"],"next":"a","prob":0.5},
                {"state":"a","joint_action":["go"],"next":"b","prob":0.4999},
                {"state":"b","joint_action":["go"],"next":"b","prob":1.0}],
            "gamma": 1.0, "horizon": 2
        }"#;
        assert!(matches!(MarkovGame::from_json_str(text), Err(Error::Configuration(_))));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = MarkovGame::from_json_str("{\n  \"players\": 2,\n  oops\n}").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
