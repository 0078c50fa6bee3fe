//! The p-adversarial game and the equivalence check.
//!
//! Nature watches a fixed ego `i`. At every step, as long as no takeover
//! has happened yet, with probability `h` an adversary takes over one
//! co-player `j` (chosen uniformly) for that single step and plays the
//! action minimizing `i`'s continuation; afterwards play is the plain task
//! game. The ego's value under this hazard model is
//!
//! ```text
//! P(s,k) = (1 - h) E_pi[r_i + gamma P(s',k-1)] + h mean_j E_{pi_-j}[q_i(adv_j(s,k), .)]
//! ```
//!
//! which equals `V_task + W_h` exactly, where `W_h` is the hazard-mode power
//! penalty. With `h = lambda / T` this is compared against the plain-sum
//! objective `V_task + lambda W` to measure how far the two are apart.
//!
//! The independent model, where every step is perturbed with probability
//! `h` regardless of earlier takeovers, is also available.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    deviation_values, evaluate_task_values, expectation, joint_values, MarkovGame, PolicyProfile,
    StateId, TaskValues,
};
use crate::power::{regularized_values, PenaltyMode};

/// Per-`(steps remaining, state)` worst action of `coplayer` against `ego`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryPolicy {
    pub ego: usize,
    pub coplayer: usize,
    /// `[k - 1][state]`
    pub actions: Vec<Vec<usize>>,
}

impl AdversaryPolicy {
    pub fn action(&self, state: StateId, k: usize) -> usize {
        self.actions[k - 1][state]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CoplayerSelection {
    Uniform,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardSpec {
    pub per_step_hazard: f64,
    pub at_most_one_takeover: bool,
    pub coplayer: CoplayerSelection,
}

impl HazardSpec {
    pub fn at_most_one(h: f64) -> Self {
        HazardSpec {
            per_step_hazard: h,
            at_most_one_takeover: true,
            coplayer: CoplayerSelection::Uniform,
        }
    }

    pub fn independent(h: f64) -> Self {
        HazardSpec {
            per_step_hazard: h,
            at_most_one_takeover: false,
            coplayer: CoplayerSelection::Uniform,
        }
    }

    fn validate(&self, game: &MarkovGame, ego: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.per_step_hazard) {
            return Err(Error::argument(format!(
                "hazard {} not in [0, 1]",
                self.per_step_hazard
            )));
        }
        if let CoplayerSelection::Fixed(j) = self.coplayer {
            game.check_player(j)?;
            if j == ego {
                return Err(Error::argument("fixed coplayer equals the ego"));
            }
        }
        Ok(())
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

fn adversary_from_task(
    game: &MarkovGame,
    profile: &PolicyProfile,
    task: &TaskValues,
    ego: usize,
    coplayer: usize,
) -> AdversaryPolicy {
    let actions = (1..=game.horizon())
        .map(|k| {
            let cont = task.layer(k - 1, ego);
            (0..game.num_states())
                .map(|s| {
                    let q = joint_values(game, s, ego, &cont);
                    argmin(&deviation_values(game, s, &profile.local(s, k), &q, coplayer))
                })
                .collect()
        })
        .collect();
    AdversaryPolicy {
        ego,
        coplayer,
        actions,
    }
}

/// The co-player action minimizing the ego's one-step continuation at every
/// state and layer (ties to the lowest index).
pub fn exact_adversary(
    game: &MarkovGame,
    profile: &PolicyProfile,
    ego: usize,
    coplayer: usize,
) -> Result<AdversaryPolicy> {
    game.check_player(ego)?;
    game.check_player(coplayer)?;
    if ego == coplayer {
        return Err(Error::argument("ego and coplayer must differ"));
    }
    let task = evaluate_task_values(game, profile)?;
    Ok(adversary_from_task(game, profile, &task, ego, coplayer))
}

/// Exact adversaries against `ego` for every co-player.
pub fn exact_adversaries(
    game: &MarkovGame,
    profile: &PolicyProfile,
    ego: usize,
) -> Result<Vec<AdversaryPolicy>> {
    game.check_player(ego)?;
    let task = evaluate_task_values(game, profile)?;
    Ok((0..game.num_players())
        .filter(|&j| j != ego)
        .map(|j| adversary_from_task(game, profile, &task, ego, j))
        .collect())
}

/// Ego value in the p-adversarial game at every `(steps remaining, state)`.
pub fn padv_values(
    game: &MarkovGame,
    profile: &PolicyProfile,
    adversaries: &[AdversaryPolicy],
    ego: usize,
    hazard: &HazardSpec,
) -> Result<Vec<Vec<f64>>> {
    game.check_player(ego)?;
    hazard.validate(game, ego)?;
    let coplayers: Vec<usize> = match hazard.coplayer {
        CoplayerSelection::Uniform => (0..game.num_players()).filter(|&j| j != ego).collect(),
        CoplayerSelection::Fixed(j) => vec![j],
    };
    if coplayers.is_empty() {
        return Err(Error::capability("the p-adversarial game needs a co-player"));
    }
    let advs: Vec<&AdversaryPolicy> = coplayers
        .iter()
        .map(|&j| {
            adversaries
                .iter()
                .find(|a| a.ego == ego && a.coplayer == j)
                .ok_or_else(|| Error::config(format!("no adversary for coplayer {j} against ego {ego}")))
        })
        .collect::<Result<_>>()?;
    for a in &advs {
        if a.actions.len() != game.horizon()
            || a.actions.iter().any(|l| l.len() != game.num_states())
        {
            return Err(Error::config("adversary does not cover every state and layer"));
        }
    }
    let task = evaluate_task_values(game, profile)?;
    let h = hazard.per_step_hazard;
    let mut values = vec![vec![0.0; game.num_states()]];
    for k in 1..=game.horizon() {
        let prev = values[k - 1].clone();
        let task_prev = task.layer(k - 1, ego);
        let layer = (0..game.num_states())
            .map(|s| {
                let dists = profile.local(s, k);
                let q_on = joint_values(game, s, ego, &prev);
                let on = expectation(game, s, &dists, &q_on);
                // After a takeover the rest of the episode is the task game
                // under the at-most-one model, the same perturbed game otherwise.
                let q_adv = if hazard.at_most_one_takeover {
                    joint_values(game, s, ego, &task_prev)
                } else {
                    q_on.clone()
                };
                let adv: f64 = advs
                    .iter()
                    .map(|a| {
                        let b = a.action(s, k);
                        deviation_values(game, s, &dists, &q_adv, a.coplayer)[b]
                    })
                    .sum::<f64>()
                    / advs.len() as f64;
                (1.0 - h) * on + h * adv
            })
            .collect();
        values.push(layer);
    }
    Ok(values)
}

/// Ego value in the p-adversarial game at `state` with the full horizon remaining.
pub fn evaluate_padv_value(
    game: &MarkovGame,
    profile: &PolicyProfile,
    adversaries: &[AdversaryPolicy],
    ego: usize,
    state: StateId,
    hazard: &HazardSpec,
) -> Result<f64> {
    game.check_state(state)?;
    Ok(padv_values(game, profile, adversaries, ego, hazard)?[game.horizon()][state])
}

/// Expected reward of every player when Nature also draws the ego uniformly:
/// only the drawn ego is rewarded, so each entry is the ego value over `N`.
pub fn padv_values_uniform_ego(
    game: &MarkovGame,
    profile: &PolicyProfile,
    state: StateId,
    hazard: &HazardSpec,
) -> Result<Vec<f64>> {
    let n = game.num_players();
    (0..n)
        .map(|ego| {
            let advs = exact_adversaries(game, profile, ego)?;
            Ok(evaluate_padv_value(game, profile, &advs, ego, state, hazard)? / n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub lambda: f64,
    pub ego: usize,
    pub state: StateId,
    pub padv_value: f64,
    /// `|P - (V_task + W_{lambda/T})|`, expected to vanish.
    pub residual: f64,
    /// `P - (V_task + lambda W_plain)`.
    pub plain_sum_gap: f64,
    /// `plain_sum_gap / lambda`, zero when `lambda = 0`.
    pub gap_over_lambda: f64,
}

/// Compares the p-adversarial value with `h = lambda / T` against the
/// hazard-matched and the plain-sum regularized objectives, for every ego at
/// `state` with the full horizon remaining.
pub fn check_equivalence(
    game: &MarkovGame,
    profile: &PolicyProfile,
    state: StateId,
    lambda: f64,
) -> Result<Vec<EquivalenceRow>> {
    game.check_state(state)?;
    game.require_players(2, "the equivalence check")?;
    if !(lambda >= 0.0) {
        return Err(Error::argument(format!("lambda {lambda} must be nonnegative")));
    }
    let t = game.horizon();
    let h = lambda / t as f64;
    if h > 1.0 {
        return Err(Error::argument(format!("lambda / T = {h} exceeds 1")));
    }
    let mut rows = Vec::new();
    for ego in 0..game.num_players() {
        let advs = exact_adversaries(game, profile, ego)?;
        let p = evaluate_padv_value(game, profile, &advs, ego, state, &HazardSpec::at_most_one(h))?;
        let hazard = regularized_values(game, profile, ego, 1.0, PenaltyMode::Hazard(h))?;
        let plain = regularized_values(game, profile, ego, lambda, PenaltyMode::PlainSum)?;
        let gap = p - plain.regularized(t, state);
        rows.push(EquivalenceRow {
            lambda,
            ego,
            state,
            padv_value: p,
            residual: (p - hazard.regularized(t, state)).abs(),
            plain_sum_gap: gap,
            gap_over_lambda: if lambda == 0.0 { 0.0 } else { gap / lambda },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;
    use crate::power::one_step_power;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attack_defense_adversary_plays_z() {
        let g = envs::attack_defense();
        let p = PolicyProfile::constant_named(&g, &["X", "X"]).unwrap();
        let adv = exact_adversary(&g, &p, 0, 1).unwrap();
        assert_eq!(adv.action(0, 1), 2);
    }

    #[test]
    fn zero_power_adversary_is_lowest_index() {
        let g = envs::no_power_game();
        let p = PolicyProfile::constant(&g, &[1, 1]).unwrap();
        assert_eq!(exact_adversary(&g, &p, 0, 1).unwrap().action(0, 1), 0);
        assert_eq!(exact_adversary(&g, &p, 1, 0).unwrap().action(0, 1), 0);
    }

    #[test]
    fn adversary_matches_power_witness() {
        let g = envs::random_game(31, 5, 3, 2, 3, 1.0);
        let p = envs::random_profile(&g, 9);
        let adv = exact_adversary(&g, &p, 1, 0).unwrap();
        for k in 1..=3 {
            for s in 0..5 {
                let rec = one_step_power(&g, &p, 1, 0, s, k).unwrap();
                assert_eq!(adv.action(s, k), rec.worst_action);
            }
        }
    }

    #[test]
    fn ego_equal_coplayer_rejected() {
        let g = envs::attack_defense();
        assert!(exact_adversary(&g, &PolicyProfile::uniform(&g), 0, 0).is_err());
    }

    #[test]
    fn missing_adversary_is_configuration_error() {
        let g = envs::attack_defense();
        let p = PolicyProfile::uniform(&g);
        let r = evaluate_padv_value(&g, &p, &[], 0, 0, &HazardSpec::at_most_one(0.1));
        assert!(matches!(r, Err(Error::Configuration(_))));
    }

    #[test]
    fn zero_hazard_is_task_value() {
        let g = envs::random_game(8, 4, 2, 2, 4, 0.9);
        let p = envs::random_profile(&g, 8);
        let task = evaluate_task_values(&g, &p).unwrap();
        let advs = exact_adversaries(&g, &p, 0).unwrap();
        for spec in [HazardSpec::at_most_one(0.0), HazardSpec::independent(0.0)] {
            let v = padv_values(&g, &p, &advs, 0, &spec).unwrap();
            for k in 0..=4 {
                for s in 0..4 {
                    assert_eq!(v[k][s], task.get(k, s, 0));
                }
            }
        }
    }

    #[test]
    fn attack_defense_padv_value() {
        let g = envs::attack_defense();
        let p = PolicyProfile::constant_named(&g, &["X", "X"]).unwrap();
        let advs = exact_adversaries(&g, &p, 0).unwrap();
        for l in [0.0, 0.2, 0.5, 1.0] {
            let v = evaluate_padv_value(&g, &p, &advs, 0, 0, &HazardSpec::at_most_one(l)).unwrap();
            assert!((v - (3.0 - 3.0 * l)).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_step_games_have_no_gap() {
        for g in [envs::no_power_game(), envs::attack_defense(), envs::larger_attack_defense()] {
            let n = g.num_actions(0, 0);
            for a in 0..n {
                for b in 0..n {
                    let p = PolicyProfile::constant(&g, &[a, b]).unwrap();
                    for l in [0.0, 0.1, 0.5, 1.0] {
                        for row in check_equivalence(&g, &p, 0, l).unwrap() {
                            assert!(row.residual <= 1e-12);
                            assert!(row.plain_sum_gap.abs() <= 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn lambda_over_horizon_above_one_rejected() {
        let g = envs::random_game(1, 2, 2, 2, 2, 1.0);
        let p = PolicyProfile::uniform(&g);
        assert!(matches!(check_equivalence(&g, &p, 0, 2.5), Err(Error::Argument(_))));
    }

    #[test]
    fn hazard_residual_on_random_games() {
        for seed in 0..20 {
            let g = envs::random_game(seed, 4, 3, 2, 4, 1.0);
            let p = envs::random_profile(&g, seed + 100);
            for l in [0.01, 0.1, 0.5] {
                for row in check_equivalence(&g, &p, 0, l).unwrap() {
                    assert!(row.residual <= 1e-9, "seed {seed}: {}", row.residual);
                }
            }
        }
    }

    #[test]
    fn gap_over_lambda_shrinks_with_lambda() {
        let g = envs::random_game(77, 4, 2, 2, 4, 1.0);
        let p = envs::random_profile(&g, 3);
        let ratio = |l: f64| check_equivalence(&g, &p, 0, l).unwrap()[0].gap_over_lambda;
        let (a, b, c) = (ratio(0.1), ratio(0.01), ratio(0.001));
        assert!(a >= b && b >= c, "{a} {b} {c}");
        assert!(c >= 0.0);
    }

    // Extensive-form oracle: enumerate Nature's branches explicitly for a
    // one-step game (ego draw, takeover or not, adversary action).
    #[test]
    fn one_step_extensive_form_enumeration() {
        let g = envs::larger_attack_defense();
        let p = envs::random_profile(&g, 12);
        let h = 0.35;
        let payoff = |a: usize, b: usize, who: usize| g.outcome(0, g.joint_index(0, &[a, b]).unwrap()).rewards[who];
        for ego in 0..2 {
            let adv = exact_adversary(&g, &p, ego, 1 - ego).unwrap().action(0, 1);
            let mut total = 0.0;
            for a in 0..6 {
                for b in 0..6 {
                    let pa = p.dist(0, 0, 1)[a];
                    let pb = p.dist(1, 0, 1)[b];
                    total += (1.0 - h) * pa * pb * payoff(a, b, ego);
                    // The taken-over co-player's action is replaced by the adversary's.
                    let (ra, rb) = if ego == 0 { (a, adv) } else { (adv, b) };
                    total += h * pa * pb * payoff(ra, rb, ego);
                }
            }
            let advs = exact_adversaries(&g, &p, ego).unwrap();
            let v = evaluate_padv_value(&g, &p, &advs, ego, 0, &HazardSpec::at_most_one(h)).unwrap();
            assert!((v - total).abs() <= 1e-12);
            let uniform = padv_values_uniform_ego(&g, &p, 0, &HazardSpec::at_most_one(h)).unwrap();
            assert!((uniform[ego] - total / 2.0).abs() <= 1e-12);
        }
    }

    fn sample(d: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in d.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        d.len() - 1
    }

    // Monte-Carlo oracle: simulate Nature's hazard process directly.
    #[test]
    fn at_most_one_matches_nature_rollouts() {
        let g = envs::random_game(404, 3, 2, 2, 4, 1.0);
        let p = envs::random_profile(&g, 5);
        let h = 0.3;
        let ego = 0;
        let adv = exact_adversary(&g, &p, ego, 1).unwrap();
        let exact = evaluate_padv_value(
            &g, &p, &[adv.clone()], ego, 0, &HazardSpec::at_most_one(h),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let mut s = 0;
            let mut taken = false;
            let mut ret = 0.0;
            for k in (1..=4).rev() {
                let mut joint = [sample(p.dist(0, s, k), &mut rng), sample(p.dist(1, s, k), &mut rng)];
                if !taken && rng.gen::<f64>() < h {
                    taken = true;
                    joint[1] = adv.action(s, k);
                }
                let out = g.outcome(s, g.joint_index(s, &joint).unwrap());
                ret += out.rewards[ego];
                s = out.next[sample(&out.next.iter().map(|x| x.1).collect::<Vec<_>>(), &mut rng)].0;
            }
            sum += ret;
            sq += ret * ret;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact} (se {se})");
    }
}
