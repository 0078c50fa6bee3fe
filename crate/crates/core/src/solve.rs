//! Best responses, power-regularized best responses and λ-PRE search.
//!
//! Every solver here works over deterministic local actions. At a state the
//! regularized value of an action `a` of player `i`, with everyone else
//! fixed, is
//!
//! ```text
//! U(a) = E[r_i + gamma V_task'] + lambda (alpha R_i^power(a) + beta E[W'])
//! ```
//!
//! where both branches of the power term condition on `a`, and `(alpha, beta)`
//! come from the penalty mode. Values within [`TIE_TOLERANCE`] count as ties;
//! for `lambda > 0` a tie goes to the action with the smaller incurred power
//! (larger penalty value), then to the lower index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    expectation, joint_actions, joint_values, next_expectation, MarkovGame, PlayerPolicy,
    PolicyProfile, StateId,
};
use crate::power::{
    check_lambda, local_power_reward, penalty_from_task, Aggregator, Layered, PenaltyMode,
    ValueBundle,
};

pub const TIE_TOLERANCE: f64 = 1e-9;

/// Default cap on simultaneous-adjustment rounds, per joint action.
pub const ITERATION_CAP_FACTOR: usize = 64;

/// Default budget for [`exhaustive_profile_search`].
pub const PROFILE_BUDGET: u128 = 10_000_000;

/// Players (or single `(player, state)` slots) whose play is held fixed.
#[derive(Debug, Clone)]
pub struct FixedPlay {
    pub profile: PolicyProfile,
    /// `[player][state]`, true where the solver chooses the action.
    pub free: Vec<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub mode: PenaltyMode,
    pub aggregator: Aggregator,
    pub fixed: Option<FixedPlay>,
    pub iteration_cap_factor: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            mode: PenaltyMode::PlainSum,
            aggregator: Aggregator::Mean,
            fixed: None,
            iteration_cap_factor: ITERATION_CAP_FACTOR,
        }
    }
}

impl SolveOptions {
    pub fn with_mode(mode: PenaltyMode) -> Self {
        SolveOptions {
            mode,
            ..Default::default()
        }
    }

    fn is_free(&self, player: usize, s: StateId) -> bool {
        self.fixed.as_ref().map_or(true, |f| f.free[player][s])
    }

    fn validate(&self, game: &MarkovGame) -> Result<()> {
        self.mode.validate()?;
        if let Some(f) = &self.fixed {
            f.profile.validate(game)?;
            if f.free.len() != game.num_players()
                || f.free.iter().any(|row| row.len() != game.num_states())
            {
                return Err(Error::config("free mask must cover every player and state"));
            }
        }
        Ok(())
    }
}

fn one_hot(n: usize, a: usize) -> Vec<f64> {
    let mut d = vec![0.0; n];
    d[a] = 1.0;
    d
}

/// Continuation tables of one player for layer `k - 1`.
struct Continuation<'a> {
    task: &'a [f64],
    penalty: &'a [f64],
}

/// Local evaluation of one player at one state.
struct Local {
    /// Task expectation of each joint action, `r_i + gamma V_task'`.
    q: Vec<f64>,
}

impl Local {
    fn new(game: &MarkovGame, s: StateId, player: usize, cont: &Continuation<'_>) -> Self {
        Local {
            q: joint_values(game, s, player, cont.task),
        }
    }

    /// `(task, penalty, regularized)` with the given local distributions.
    #[allow(clippy::too_many_arguments)]
    fn value(
        &self,
        game: &MarkovGame,
        s: StateId,
        dists: &[&[f64]],
        player: usize,
        cont: &Continuation<'_>,
        lambda: f64,
        opts: &SolveOptions,
    ) -> (f64, f64, f64) {
        let task = expectation(game, s, dists, &self.q);
        if game.num_players() < 2 {
            return (task, 0.0, task);
        }
        let (alpha, beta) = opts.mode.coefficients(game.gamma());
        let r = local_power_reward(game, s, dists, &self.q, player, opts.aggregator);
        let penalty = alpha * r + beta * next_expectation(game, s, dists, cont.penalty);
        (task, penalty, task + lambda * penalty)
    }
}

/// Regularized value of every deterministic action of `player`, others as in `dists`.
#[allow(clippy::too_many_arguments)]
fn action_values(
    game: &MarkovGame,
    s: StateId,
    dists: &[Vec<f64>],
    player: usize,
    local: &Local,
    cont: &Continuation<'_>,
    lambda: f64,
    opts: &SolveOptions,
) -> Vec<(f64, f64)> {
    let n = game.num_actions(s, player);
    let mut work: Vec<&[f64]> = dists.iter().map(Vec::as_slice).collect();
    let hots: Vec<Vec<f64>> = (0..n).map(|a| one_hot(n, a)).collect();
    (0..n)
        .map(|a| {
            work[player] = &hots[a];
            let (_, pen, reg) = local.value(game, s, &work, player, cont, lambda, opts);
            (reg, pen)
        })
        .collect()
}

/// Best action under the tie rule.
fn select(values: &[(f64, f64)], lambda: f64) -> usize {
    let max = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<usize> = None;
    for (a, &(u, pen)) in values.iter().enumerate() {
        if u < max - TIE_TOLERANCE {
            continue;
        }
        match best {
            None => best = Some(a),
            Some(b) if lambda > 0.0 && pen > values[b].1 + 1e-12 => best = Some(a),
            _ => {}
        }
    }
    best.unwrap_or(0)
}

/// `U(chosen) - max over other actions`, `None` for single-action players.
fn margin(values: &[(f64, f64)], chosen: usize) -> Option<f64> {
    values
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != chosen)
        .map(|(_, v)| v.0)
        .reduce(f64::max)
        .map(|alt| values[chosen].0 - alt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub player: usize,
    pub state: StateId,
    pub steps_remaining: usize,
    pub action: usize,
    /// Regularized value of the chosen action minus the best alternative.
    pub margin: f64,
}

/// Output of [`solve_pre`]. The solver searches deterministic local actions
/// only; `unresolved` lists `(state, steps remaining)` where no
/// deterministic cell satisfied every player.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub lambdas: Vec<f64>,
    pub mode: PenaltyMode,
    pub profile: PolicyProfile,
    pub values: Vec<ValueBundle>,
    pub certificate: Vec<Certificate>,
    pub unresolved: Vec<(StateId, usize)>,
}

impl SolveResult {
    pub fn min_margin(&self) -> f64 {
        self.certificate
            .iter()
            .map(|c| c.margin)
            .fold(f64::INFINITY, f64::min)
    }

    /// Chosen action of `player` at `(state, k)`, argmax of its distribution.
    pub fn action(&self, player: usize, state: StateId, k: usize) -> usize {
        crate::game::policy_argmax(self.profile.dist(player, state, k))
    }
}

fn broadcast_lambdas(game: &MarkovGame, lambdas: &[f64]) -> Result<Vec<f64>> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    match lambdas.len() {
        1 => Ok(vec![lambdas[0]; game.num_players()]),
        n if n == game.num_players() => Ok(lambdas.to_vec()),
        n => Err(Error::argument(format!(
            "{n} lambdas for {} players",
            game.num_players()
        ))),
    }
}

/// λ-PRE by backward induction with a single λ for every player.
pub fn backward_induction_pre(
    game: &MarkovGame,
    lambda: f64,
    mode: PenaltyMode,
) -> Result<SolveResult> {
    solve_pre(game, &[lambda], &SolveOptions::with_mode(mode))
}

/// λ-PRE by backward induction. `lambdas` holds one value for all players or
/// one per player.
///
/// Layer by layer and state by state, free players repeatedly move to their
/// best regularized action simultaneously. If that does not settle within
/// the iteration cap, every joint cell is checked and the first one where
/// all free players are best-responding is taken; failing that the cell with
/// the smallest worst regret is kept and the state is reported unresolved.
pub fn solve_pre(game: &MarkovGame, lambdas: &[f64], opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate(game)?;
    let lambdas = broadcast_lambdas(game, lambdas)?;
    let n = game.num_players();
    let ns = game.num_states();
    let horizon = game.horizon();
    // [player][k][state]
    let mut task: Vec<Layered> = vec![vec![vec![0.0; ns]]; n];
    let mut penalty: Vec<Layered> = vec![vec![vec![0.0; ns]]; n];
    let mut layers: Vec<Vec<Vec<Vec<f64>>>> = Vec::with_capacity(horizon);
    let mut certificate = Vec::new();
    let mut unresolved = Vec::new();
    let mut prev_actions: Option<Vec<Vec<usize>>> = None;

    for k in 1..=horizon {
        let mut layer: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(ns); n];
        let mut actions_here = vec![vec![0; ns]; n];
        let mut task_k = vec![vec![0.0; ns]; n];
        let mut pen_k = vec![vec![0.0; ns]; n];
        for s in 0..ns {
            let conts: Vec<Continuation<'_>> = (0..n)
                .map(|p| Continuation {
                    task: &task[p][k - 1],
                    penalty: &penalty[p][k - 1],
                })
                .collect();
            let locals: Vec<Local> = (0..n).map(|p| Local::new(game, s, p, &conts[p])).collect();
            let free: Vec<usize> = (0..n).filter(|&p| opts.is_free(p, s)).collect();
            let mut dists: Vec<Vec<f64>> = (0..n)
                .map(|p| match &opts.fixed {
                    Some(f) if !f.free[p][s] => f.profile.dist(p, s, k).to_vec(),
                    _ => {
                        let start = prev_actions.as_ref().map_or(0, |pa| pa[p][s]);
                        one_hot(game.num_actions(s, p), start)
                    }
                })
                .collect();
            let mut current: Vec<usize> = free
                .iter()
                .map(|&p| prev_actions.as_ref().map_or(0, |pa| pa[p][s]))
                .collect();

            let best_responses = |dists: &Vec<Vec<f64>>| -> Vec<(usize, Vec<(f64, f64)>)> {
                free.iter()
                    .map(|&p| {
                        let vals = action_values(game, s, dists, p, &locals[p], &conts[p], lambdas[p], opts);
                        (select(&vals, lambdas[p]), vals)
                    })
                    .collect()
            };

            let free_joint: usize = free.iter().map(|&p| game.num_actions(s, p)).product();
            let cap = opts.iteration_cap_factor.max(1) * free_joint.max(1);
            let mut settled = free.is_empty();
            let mut rounds = 0;
            while !settled && rounds < cap {
                rounds += 1;
                let br = best_responses(&dists);
                let next: Vec<usize> = br.iter().map(|b| b.0).collect();
                if next == current {
                    settled = true;
                } else {
                    for (fi, &p) in free.iter().enumerate() {
                        dists[p] = one_hot(game.num_actions(s, p), next[fi]);
                    }
                    current = next;
                }
            }
            if !settled {
                let sizes: Vec<usize> = free.iter().map(|&p| game.num_actions(s, p)).collect();
                let mut fallback: Option<(f64, Vec<usize>)> = None;
                let mut found = None;
                for cell in joint_actions(&sizes) {
                    for (fi, &p) in free.iter().enumerate() {
                        dists[p] = one_hot(sizes[fi], cell[fi]);
                    }
                    let regret = best_responses(&dists)
                        .iter()
                        .zip(&cell)
                        .map(|((_, vals), &a)| {
                            let max = vals.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
                            max - vals[a].0
                        })
                        .fold(0.0, f64::max);
                    if regret <= TIE_TOLERANCE {
                        found = Some(cell);
                        break;
                    }
                    if fallback.as_ref().map_or(true, |(r, _)| regret < *r) {
                        fallback = Some((regret, cell));
                    }
                }
                current = match found {
                    Some(cell) => cell,
                    None => {
                        unresolved.push((s, k));
                        fallback.expect("at least one cell").1
                    }
                };
                for (fi, &p) in free.iter().enumerate() {
                    dists[p] = one_hot(game.num_actions(s, p), current[fi]);
                }
            }
            for (fi, &p) in free.iter().enumerate() {
                actions_here[p][s] = current[fi];
                let vals = action_values(game, s, &dists, p, &locals[p], &conts[p], lambdas[p], opts);
                if let Some(m) = margin(&vals, current[fi]) {
                    certificate.push(Certificate {
                        player: p,
                        state: s,
                        steps_remaining: k,
                        action: current[fi],
                        margin: m,
                    });
                }
            }
            let refs: Vec<&[f64]> = dists.iter().map(Vec::as_slice).collect();
            for p in 0..n {
                let (t, w, _) = locals[p].value(game, s, &refs, p, &conts[p], lambdas[p], opts);
                task_k[p][s] = t;
                pen_k[p][s] = w;
            }
            for (p, d) in dists.into_iter().enumerate() {
                layer[p].push(d);
            }
        }
        for p in 0..n {
            task[p].push(std::mem::take(&mut task_k[p]));
            penalty[p].push(std::mem::take(&mut pen_k[p]));
        }
        layers.push(layer);
        prev_actions = Some(actions_here);
    }
    let values = (0..n)
        .map(|p| ValueBundle::new(lambdas[p], task[p].clone(), penalty[p].clone()))
        .collect();
    Ok(SolveResult {
        lambdas,
        mode: opts.mode,
        profile: PolicyProfile::from_layers(layers),
        values,
        certificate,
        unresolved,
    })
}

/// Task-optimal deterministic policy of `player` against `profile`, ties to
/// the lowest index.
pub fn best_response(game: &MarkovGame, profile: &PolicyProfile, player: usize) -> Result<PlayerPolicy> {
    profile.validate(game)?;
    game.check_player(player)?;
    let ns = game.num_states();
    let mut v = vec![0.0; ns];
    let mut actions = Vec::with_capacity(game.horizon());
    let mut counts = Vec::with_capacity(game.horizon());
    for k in 1..=game.horizon() {
        let mut next_v = vec![0.0; ns];
        let mut acts = vec![0; ns];
        for s in 0..ns {
            let q = joint_values(game, s, player, &v);
            let mut dists: Vec<Vec<f64>> = profile.local(s, k).iter().map(|d| d.to_vec()).collect();
            let na = game.num_actions(s, player);
            let mut best = (f64::NEG_INFINITY, 0);
            for a in 0..na {
                dists[player] = one_hot(na, a);
                let refs: Vec<&[f64]> = dists.iter().map(Vec::as_slice).collect();
                let u = expectation(game, s, &refs, &q);
                if u > best.0 {
                    best = (u, a);
                }
            }
            next_v[s] = best.0;
            acts[s] = best.1;
        }
        actions.push(acts);
        counts.push((0..ns).map(|s| game.num_actions(s, player)).collect());
        v = next_v;
    }
    Ok(PlayerPolicy::layered_deterministic(&actions, &counts))
}

/// Power-regularized best response of `player` against `profile`, optimal at
/// every state including those the profile never reaches.
pub fn prbr(
    game: &MarkovGame,
    profile: &PolicyProfile,
    player: usize,
    lambda: f64,
    mode: PenaltyMode,
) -> Result<PlayerPolicy> {
    prbr_with(game, profile, player, lambda, &SolveOptions::with_mode(mode))
}

pub fn prbr_with(
    game: &MarkovGame,
    profile: &PolicyProfile,
    player: usize,
    lambda: f64,
    opts: &SolveOptions,
) -> Result<PlayerPolicy> {
    check_lambda(lambda)?;
    opts.mode.validate()?;
    profile.validate(game)?;
    game.check_player(player)?;
    let ns = game.num_states();
    let mut task = vec![0.0; ns];
    let mut pen = vec![0.0; ns];
    let mut actions = Vec::with_capacity(game.horizon());
    let mut counts = Vec::with_capacity(game.horizon());
    for k in 1..=game.horizon() {
        let cont = Continuation {
            task: &task,
            penalty: &pen,
        };
        let mut acts = vec![0; ns];
        let mut t_k = vec![0.0; ns];
        let mut p_k = vec![0.0; ns];
        for s in 0..ns {
            let local = Local::new(game, s, player, &cont);
            let mut dists: Vec<Vec<f64>> = profile.local(s, k).iter().map(|d| d.to_vec()).collect();
            let vals = action_values(game, s, &dists, player, &local, &cont, lambda, opts);
            let a = select(&vals, lambda);
            acts[s] = a;
            dists[player] = one_hot(game.num_actions(s, player), a);
            let refs: Vec<&[f64]> = dists.iter().map(Vec::as_slice).collect();
            let (t, w, _) = local.value(game, s, &refs, player, &cont, lambda, opts);
            t_k[s] = t;
            p_k[s] = w;
        }
        actions.push(acts);
        counts.push((0..ns).map(|s| game.num_actions(s, player)).collect());
        task = t_k;
        pen = p_k;
    }
    Ok(PlayerPolicy::layered_deterministic(&actions, &counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyEntry {
    pub player: usize,
    pub state: StateId,
    pub steps_remaining: usize,
    /// Regularized value of the profile's own play minus the best deterministic alternative.
    pub margin: f64,
    /// The same comparison on task values alone (local Nash check).
    pub nash_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub tolerance: f64,
    pub entries: Vec<VerifyEntry>,
    pub passed: bool,
    pub nash_passed: bool,
}

impl VerifyReport {
    pub fn min_margin(&self) -> f64 {
        self.entries.iter().map(|e| e.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn failures(&self) -> impl Iterator<Item = &VerifyEntry> {
        self.entries.iter().filter(move |e| e.margin < -self.tolerance)
    }
}

/// Checks that every player's play is a regularized best response at every
/// state and layer, holding everyone else fixed. Players with one action
/// and slots held fixed by `opts` are skipped.
pub fn verify_pre(
    game: &MarkovGame,
    profile: &PolicyProfile,
    lambdas: &[f64],
    opts: &SolveOptions,
    tolerance: f64,
) -> Result<VerifyReport> {
    opts.validate(game)?;
    profile.validate(game)?;
    let lambdas = broadcast_lambdas(game, lambdas)?;
    let task = crate::game::evaluate_task_values(game, profile)?;
    let n = game.num_players();
    let penalties: Vec<Layered> = if n >= 2 {
        (0..n)
            .map(|p| penalty_from_task(game, profile, &task, p, opts.mode, opts.aggregator))
            .collect::<Result<_>>()?
    } else {
        vec![vec![vec![0.0; game.num_states()]; game.horizon() + 1]]
    };
    let mut entries = Vec::new();
    for k in 1..=game.horizon() {
        for p in 0..n {
            let task_prev = task.layer(k - 1, p);
            let cont = Continuation {
                task: &task_prev,
                penalty: &penalties[p][k - 1],
            };
            let zero = vec![0.0; game.num_states()];
            let nash_cont = Continuation {
                task: &task_prev,
                penalty: &zero,
            };
            for s in 0..game.num_states() {
                if !opts.is_free(p, s) || game.num_actions(s, p) < 2 {
                    continue;
                }
                let local = Local::new(game, s, p, &cont);
                let dists: Vec<Vec<f64>> = profile.local(s, k).iter().map(|d| d.to_vec()).collect();
                let refs: Vec<&[f64]> = dists.iter().map(Vec::as_slice).collect();
                let own = local.value(game, s, &refs, p, &cont, lambdas[p], opts).2;
                let vals = action_values(game, s, &dists, p, &local, &cont, lambdas[p], opts);
                let best = vals.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
                let own_task = local.value(game, s, &refs, p, &nash_cont, 0.0, opts).0;
                let best_task = action_values(game, s, &dists, p, &local, &nash_cont, 0.0, opts)
                    .iter()
                    .map(|v| v.0)
                    .fold(f64::NEG_INFINITY, f64::max);
                entries.push(VerifyEntry {
                    player: p,
                    state: s,
                    steps_remaining: k,
                    margin: own - best,
                    nash_margin: own_task - best_task,
                });
            }
        }
    }
    let passed = entries.iter().all(|e| e.margin >= -tolerance);
    let nash_passed = entries.iter().all(|e| e.nash_margin >= -tolerance);
    Ok(VerifyReport {
        tolerance,
        entries,
        passed,
        nash_passed,
    })
}

/// All deterministic stationary profiles that pass [`verify_pre`].
pub fn exhaustive_profile_search(
    game: &MarkovGame,
    lambda: f64,
    mode: PenaltyMode,
    budget: u128,
) -> Result<Vec<PolicyProfile>> {
    check_lambda(lambda)?;
    let slots: Vec<(usize, StateId, usize)> = (0..game.num_players())
        .flat_map(|p| (0..game.num_states()).map(move |s| (p, s)))
        .map(|(p, s)| (p, s, game.num_actions(s, p)))
        .collect();
    let total = slots
        .iter()
        .try_fold(1u128, |acc, &(_, _, n)| acc.checked_mul(n as u128))
        .unwrap_or(u128::MAX);
    if total > budget {
        return Err(Error::capability(format!(
            "{total} deterministic profiles exceed the budget of {budget}"
        )));
    }
    let sizes: Vec<usize> = slots.iter().map(|s| s.2).collect();
    let opts = SolveOptions::with_mode(mode);
    let mut out = Vec::new();
    for choice in joint_actions(&sizes) {
        let mut actions = vec![vec![0; game.num_states()]; game.num_players()];
        for (&(p, s, _), &a) in slots.iter().zip(&choice) {
            actions[p][s] = a;
        }
        let profile = PolicyProfile::from_actions(game, &actions)?;
        if verify_pre(game, &profile, &[lambda], &opts, TIE_TOLERANCE)?.passed {
            out.push(profile);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub player: usize,
    pub task_value: f64,
    pub power_penalty: f64,
    pub regularized_value: f64,
    pub chosen_start_action: String,
    pub pareto_flag: bool,
    pub unresolved_states: usize,
}

/// Solves at every λ (in parallel) and reports start-state values per
/// player, flagging rows whose `(task, penalty)` pair is not dominated by
/// another λ's pair for the same player.
pub fn lambda_sweep(game: &MarkovGame, lambdas: &[f64], opts: &SolveOptions) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::argument("empty lambda grid"));
    }
    let results: Vec<SolveResult> = lambdas
        .par_iter()
        .map(|&l| solve_pre(game, &[l], opts))
        .collect::<Result<_>>()?;
    let s0 = game.initial_state();
    let t = game.horizon();
    let mut rows = Vec::new();
    for (&l, res) in lambdas.iter().zip(&results) {
        for p in 0..game.num_players() {
            let v = &res.values[p];
            let a = res.action(p, s0, t);
            rows.push(SweepRow {
                lambda: l,
                player: p,
                task_value: v.task(t, s0),
                power_penalty: v.penalty(t, s0),
                regularized_value: v.regularized(t, s0),
                chosen_start_action: game.action_name(s0, p, a).to_string(),
                pareto_flag: false,
                unresolved_states: res.unresolved.len(),
            });
        }
    }
    for p in 0..game.num_players() {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.player == p)
            .map(|r| (r.task_value, r.power_penalty))
            .collect();
        for r in rows.iter_mut().filter(|r| r.player == p) {
            let me = (r.task_value, r.power_penalty);
            r.pareto_flag = !pts
                .iter()
                .any(|o| o.0 >= me.0 && o.1 >= me.1 && (o.0 > me.0 || o.1 > me.1));
        }
    }
    Ok(rows)
}
