use powerreg::envs::{self, CoinPayout};
use powerreg::power::PenaltyMode;
use powerreg::solve::{
    backward_induction_pre, best_response, exhaustive_profile_search, lambda_sweep, prbr, solve_pre, verify_pre,
    FixedPlay, SolveOptions, PROFILE_BUDGET,
};
use powerreg::{MarkovGame, PolicyProfile};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

const PLAIN: PenaltyMode = PenaltyMode::PlainSum;

fn grid(n: usize, step: f64) -> Vec<f64> {
    (0..=n).map(|i| i as f64 * step).collect()
}

#[test]
fn attack_defense_prbr_switches_to_y() {
    let g = envs::attack_defense();
    let xx = PolicyProfile::constant_named(&g, &["X", "X"]).unwrap();
    assert_eq!(g.action_name(0, 0, prbr(&g, &xx, 0, 0.2, PLAIN).unwrap().action(0, 1)), "X");
    assert_eq!(g.action_name(0, 0, prbr(&g, &xx, 0, 0.5, PLAIN).unwrap().action(0, 1)), "Y");
    assert_eq!(g.action_name(0, 0, best_response(&g, &xx, 0).unwrap().action(0, 1)), "X");
}

#[test]
fn larger_attack_defense_prbr_at_point_three_is_b() {
    let g = envs::larger_attack_defense();
    let on = PolicyProfile::constant_named(&g, &["A", "A"]).unwrap();
    assert_eq!(g.action_name(0, 0, prbr(&g, &on, 0, 0.3, PLAIN).unwrap().action(0, 1)), "B");
}

#[test]
fn attack_defense_pre_at_half_is_yy_with_positive_margins() {
    let g = envs::attack_defense();
    let r = backward_induction_pre(&g, 0.5, PLAIN).unwrap();
    assert_eq!(r.profile, PolicyProfile::constant_named(&g, &["Y", "Y"]).unwrap());
    assert!(r.certificate.iter().all(|c| c.margin > 0.0));
    assert!(r.unresolved.is_empty());
}

#[test]
fn unregularized_pre_on_a_unique_nash_game_is_that_nash() {
    // Prisoner's dilemma: defect/defect is the unique pure Nash.
    let cd = vec!["C".to_string(), "D".to_string()];
    let pd = [[3.0, 0.0], [5.0, 1.0]];
    let g = powerreg::game::matrix_game(vec![cd.clone(), cd], |j| vec![pd[j[0]][j[1]], pd[j[1]][j[0]]]).unwrap();
    let r = backward_induction_pre(&g, 0.0, PLAIN).unwrap();
    assert_eq!(r.profile, PolicyProfile::constant_named(&g, &["D", "D"]).unwrap());
}

#[test]
fn matrix_game_solutions_verify_and_are_found_by_enumeration() {
    for g in [envs::no_power_game(), envs::attack_defense(), envs::larger_attack_defense()] {
        for lambda in grid(10, 0.1) {
            let r = backward_induction_pre(&g, lambda, PLAIN).unwrap();
            assert!(r.unresolved.is_empty());
            let rep = verify_pre(&g, &r.profile, &[lambda], &SolveOptions::default(), 1e-9).unwrap();
            assert!(rep.passed, "lambda {lambda}");
            let all = exhaustive_profile_search(&g, lambda, PLAIN, PROFILE_BUDGET).unwrap();
            assert!(all.contains(&r.profile), "lambda {lambda}");
        }
    }
}

#[test]
fn verify_reports_half_margin_for_xx_at_half() {
    let g = envs::attack_defense();
    let xx = PolicyProfile::constant_named(&g, &["X", "X"]).unwrap();
    let rep = verify_pre(&g, &xx, &[0.5], &SolveOptions::default(), 1e-9).unwrap();
    assert!(!rep.passed);
    assert_eq!(rep.entries.len(), 2);
    for e in &rep.entries {
        assert!((e.margin + 0.5).abs() <= 1e-12);
    }
    assert!(verify_pre(&g, &xx, &[0.0], &SolveOptions::default(), 1e-9).unwrap().passed);
}

#[test]
fn larger_attack_defense_sweep_crosses_at_the_line_intersections() {
    let g = envs::larger_attack_defense();
    let eps = 1e-3;
    let points = [
        (0.2 - eps, "A"),
        (0.2 + eps, "B"),
        (0.4 - eps, "B"),
        (0.4 + eps, "C"),
        (2.0 / 3.0 - eps, "C"),
        (2.0 / 3.0 + eps, "D"),
        (1.0 - eps, "D"),
        (1.0 + eps, "E"),
    ];
    let lambdas: Vec<f64> = points.iter().map(|p| p.0).collect();
    let rows = lambda_sweep(&g, &lambdas, &SolveOptions::default()).unwrap();
    for (l, want) in points {
        let row = rows.iter().find(|r| r.player == 0 && r.lambda == l).unwrap();
        assert_eq!(row.chosen_start_action, want, "lambda {l}");
    }
}

#[test]
fn sweep_at_zero_is_the_nash_row() {
    let g = envs::attack_defense();
    let rows = lambda_sweep(&g, &[0.0], &SolveOptions::default()).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!((r.task_value, r.regularized_value, r.chosen_start_action.as_str()), (3.0, 3.0, "X"));
    }
}

#[test]
fn sweep_penalty_never_grows_with_lambda_on_matrix_games() {
    for g in [envs::attack_defense(), envs::larger_attack_defense()] {
        let rows = lambda_sweep(&g, &grid(20, 0.05), &SolveOptions::default()).unwrap();
        for p in 0..2 {
            let pen: Vec<f64> = rows.iter().filter(|r| r.player == p).map(|r| r.power_penalty).collect();
            assert!(pen.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{pen:?}");
        }
    }
}

/// Divider's regularized value of an allocation, worked out by hand: each
/// co-player can zero every paying bin it belongs to, and the root holds no
/// power because only the divider moves there.
fn coin_oracle(alloc: &[usize; 6], q: f64, payout: CoinPayout, lambda: f64) -> f64 {
    let c: Vec<f64> = alloc.iter().map(|&x| x as f64).collect();
    let (task, powers) = match payout {
        CoinPayout::Members => (
            q * c[1] + 2.0 * q * q * (c[2] + c[3]),
            [2.0 * q * q * c[2], 2.0 * q * q * c[3], 0.0],
        ),
        CoinPayout::AllPlayers => {
            let shared = 2.0 * q * q * c[4] + 3.0 * q.powi(3) * c[5];
            (
                q * c[1] + 2.0 * q * q * (c[2] + c[3]) + shared,
                [2.0 * q * q * c[2] + shared, 2.0 * q * q * c[3] + shared, 3.0 * q.powi(3) * c[5]],
            )
        }
    };
    task - lambda * powers.iter().sum::<f64>() / 3.0
}

fn coin_check(q: f64, payout: CoinPayout) {
    let cd = envs::coin_division(q, payout).unwrap();
    let opts = SolveOptions {
        fixed: Some(FixedPlay { profile: cd.profile.clone(), free: cd.free.clone() }),
        ..Default::default()
    };
    let root = cd.game.initial_state();
    let mut penalties = Vec::new();
    for lambda in grid(20, 0.05) {
        let r = solve_pre(&cd.game, &[lambda], &opts).unwrap();
        let chosen = r.action(0, root, 2);
        let best = cd.allocations.iter().map(|a| coin_oracle(a, q, payout, lambda)).fold(f64::NEG_INFINITY, f64::max);
        let got = coin_oracle(&cd.allocations[chosen], q, payout, lambda);
        assert!((got - best).abs() <= 1e-9, "q {q} {payout:?} lambda {lambda}: {got} vs {best}");
        assert!((r.values[0].regularized(2, root) - best).abs() <= 1e-9);
        penalties.push(r.values[0].penalty(2, root));
    }
    assert!(penalties.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{penalties:?}");
}

#[test]
fn coin_division_matches_allocation_enumeration() {
    for q in [0.5, 0.9] {
        coin_check(q, CoinPayout::Members);
        coin_check(q, CoinPayout::AllPlayers);
    }
}

fn random_game() -> impl Strategy<Value = MarkovGame> {
    (0u64..10_000, 1usize..4, 1usize..4, 1usize..4).prop_map(|(seed, s, a, t)| envs::random_game(seed, s, a, 2, t, 0.9))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, rng_seed: RngSeed::Fixed(5), ..ProptestConfig::default() })]

    #[test]
    fn zero_lambda_prbr_is_best_response(g in random_game(), seed in 0u64..1000) {
        let p = envs::random_profile(&g, seed);
        for player in 0..2 {
            let a = prbr(&g, &p, player, 0.0, PLAIN).unwrap();
            let b = best_response(&g, &p, player).unwrap();
            for k in 1..=g.horizon() {
                for s in 0..g.num_states() {
                    prop_assert_eq!(a.action(s, k), b.action(s, k));
                }
            }
        }
    }

    #[test]
    fn prbr_choices_are_scale_equivariant(g in random_game(), seed in 0u64..1000, alpha in 0.1f64..10.0, lambda in 0.0f64..2.0) {
        let p = envs::random_profile(&g, seed);
        let scaled = g.map_rewards(|_, _, _, r| alpha * r);
        let a = prbr(&g, &p, 0, lambda, PLAIN).unwrap();
        let b = prbr(&scaled, &p, 0, lambda, PLAIN).unwrap();
        for k in 1..=g.horizon() {
            for s in 0..g.num_states() {
                prop_assert_eq!(a.action(s, k), b.action(s, k));
            }
        }
    }

    #[test]
    fn resolved_solutions_always_verify(g in random_game(), lambda in 0.0f64..2.0) {
        for mode in [PenaltyMode::PlainSum, PenaltyMode::Discounted] {
            let r = backward_induction_pre(&g, lambda, mode).unwrap();
            if r.unresolved.is_empty() {
                let rep = verify_pre(&g, &r.profile, &[lambda], &SolveOptions::with_mode(mode), 1e-9).unwrap();
                prop_assert!(rep.passed);
            }
        }
    }
}
