use std::collections::BTreeSet;

use super::{MarkovGame, PolicyProfile, StateId};
use crate::error::{Error, Result};

/// Exact expected discounted task return of every player, indexed by
/// `(steps remaining, state)`. Layer `k = 0` is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskValues {
    /// `[k][state][player]`
    values: Vec<Vec<Vec<f64>>>,
}

impl TaskValues {
    pub fn get(&self, k: usize, state: StateId, player: usize) -> f64 {
        self.values[k][state][player]
    }

    /// Values of `player` at every state with `k` steps remaining.
    pub fn layer(&self, k: usize, player: usize) -> Vec<f64> {
        self.values[k].iter().map(|v| v[player]).collect()
    }

    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }
}

/// `q(a) = r_ego(s, a) + gamma * E[next(s')]` for every joint action at `s`.
pub(crate) fn joint_values(game: &MarkovGame, s: StateId, ego: usize, next: &[f64]) -> Vec<f64> {
    let gamma = game.gamma();
    (0..game.num_joint(s))
        .map(|idx| {
            let out = game.outcome(s, idx);
            let cont: f64 = out.next.iter().map(|&(n, p)| p * next[n]).sum();
            out.rewards[ego] + gamma * cont
        })
        .collect()
}

/// Probability of every joint action at `s`; the factor of `skip` is left out.
/// The last player varies fastest, matching the joint index layout.
pub(crate) fn joint_weights(game: &MarkovGame, s: StateId, dists: &[&[f64]], skip: Option<usize>) -> Vec<f64> {
    let mut w = Vec::with_capacity(game.num_joint(s));
    w.push(1.0);
    for (p, d) in dists.iter().enumerate() {
        let mut next = Vec::with_capacity(w.len() * d.len());
        for &x in &w {
            if Some(p) == skip {
                next.extend(std::iter::repeat(x).take(d.len()));
            } else {
                next.extend(d.iter().map(|&y| x * y));
            }
        }
        w = next;
    }
    w
}

/// Expectation of a per-joint-action quantity under the local profile.
pub(crate) fn expectation(game: &MarkovGame, s: StateId, dists: &[&[f64]], q: &[f64]) -> f64 {
    joint_weights(game, s, dists, None)
        .iter()
        .zip(q)
        .filter(|(&p, _)| p != 0.0)
        .map(|(&p, &v)| p * v)
        .sum()
}

/// For each action `b` of `coplayer`, the expectation of `q` when the
/// co-player plays `b` and everyone else follows `dists`.
pub(crate) fn deviation_values(
    game: &MarkovGame,
    s: StateId,
    dists: &[&[f64]],
    q: &[f64],
    coplayer: usize,
) -> Vec<f64> {
    let w = joint_weights(game, s, dists, Some(coplayer));
    let nb = game.num_actions(s, coplayer);
    let inner: usize = (coplayer + 1..game.num_players()).map(|p| game.num_actions(s, p)).product();
    let mut out = vec![0.0; nb];
    for (block, chunk) in w.chunks(nb * inner).enumerate() {
        let base = block * nb * inner;
        for (b, o) in out.iter_mut().enumerate() {
            let lo = b * inner;
            for (i, &p) in chunk[lo..lo + inner].iter().enumerate() {
                if p != 0.0 {
                    *o += p * q[base + lo + i];
                }
            }
        }
    }
    out
}

/// `E_{a ~ dists, s' ~ T(s, a)}[w(s')]`.
pub(crate) fn next_expectation(game: &MarkovGame, s: StateId, dists: &[&[f64]], w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (idx, &p) in joint_weights(game, s, dists, None).iter().enumerate() {
        if p != 0.0 {
            let out = game.outcome(s, idx);
            acc += p * out.next.iter().map(|&(n, q)| q * w[n]).sum::<f64>();
        }
    }
    acc
}

/// Exact task values of `profile` by backward induction over steps remaining.
pub fn evaluate_task_values(game: &MarkovGame, profile: &PolicyProfile) -> Result<TaskValues> {
    profile.validate(game)?;
    let n = game.num_players();
    let horizon = game.horizon();
    let mut values = vec![vec![vec![0.0; n]; game.num_states()]];
    for k in 1..=horizon {
        let prev = &values[k - 1];
        let mut layer = vec![vec![0.0; n]; game.num_states()];
        for (s, row) in layer.iter_mut().enumerate() {
            let dists = profile.local(s, k);
            for (idx, &p) in joint_weights(game, s, &dists, None).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let out = game.outcome(s, idx);
                for (pl, v) in row.iter_mut().enumerate() {
                    let cont: f64 = out.next.iter().map(|&(nx, q)| q * prev[nx][pl]).sum();
                    *v += p * (out.rewards[pl] + game.gamma() * cont);
                }
            }
        }
        values.push(layer);
    }
    Ok(TaskValues { values })
}

/// Support of the on-policy state distribution, as `(state, t)` pairs for
/// decision times `t = 0..horizon`.
pub fn reachable_states(
    game: &MarkovGame,
    profile: &PolicyProfile,
    start: StateId,
) -> Result<BTreeSet<(StateId, usize)>> {
    profile.validate(game)?;
    game.check_state(start)?;
    let horizon = game.horizon();
    let mut out = BTreeSet::new();
    let mut frontier = BTreeSet::from([start]);
    for t in 0..horizon {
        let k = horizon - t;
        let mut next = BTreeSet::new();
        for &s in &frontier {
            out.insert((s, t));
            let dists = profile.local(s, k);
            for (idx, &p) in joint_weights(game, s, &dists, None).iter().enumerate() {
                if p > 0.0 {
                    next.extend(game.outcome(s, idx).next.iter().map(|&(n, _)| n));
                }
            }
        }
        frontier = next;
    }
    Ok(out)
}

impl MarkovGame {
    pub(crate) fn require_players(&self, min: usize, what: &str) -> Result<()> {
        if self.num_players() < min {
            Err(Error::capability(format!(
                "{what} needs at least {min} players, game has {}",
                self.num_players()
            )))
        } else {
            Ok(())
        }
    }
}
