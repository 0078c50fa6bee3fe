//! Environments: the small matrix games, Coin Division, seeded random games,
//! a shortcut chain and the micro Overcooked gridworld.

mod coin;
pub mod overcooked;

pub use coin::{coin_allocations, coin_division, CoinDivision, CoinPayout, COIN_BINS, COIN_TOTAL};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::game::{joint_actions, matrix_game, GameBuilder, MarkovGame, PolicyProfile};

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn symmetric_matrix(names: &[&str], row_payoff: &[&[f64]]) -> MarkovGame {
    let acts = labels(names);
    matrix_game(vec![acts.clone(), acts], |j| {
        vec![row_payoff[j[0]][j[1]], row_payoff[j[1]][j[0]]]
    })
    .expect("static game is valid")
}

/// The Attack-Defense game: X pays 3 unless the opponent attacks with Z,
/// Y secures 2.
pub fn attack_defense() -> MarkovGame {
    symmetric_matrix(
        &["X", "Y", "Z"],
        &[&[3.0, 3.0, 0.0], &[2.0, 2.0, 2.0], &[0.0, 0.0, 0.0]],
    )
}

/// Six-action attack-defense variant with a graded exposure to the attack F.
pub fn larger_attack_defense() -> MarkovGame {
    symmetric_matrix(
        &["A", "B", "C", "D", "E", "F"],
        &[
            &[3.0, 3.0, 3.0, 3.0, 3.0, -2.0],
            &[2.5, 2.5, 2.5, 2.5, 2.5, 0.0],
            &[2.0, 2.0, 2.0, 2.0, 2.0, 0.75],
            &[1.5, 1.5, 1.5, 1.5, 1.5, 1.0],
            &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ],
    )
}

/// 3x3 game in which each player's reward depends only on its own action.
pub fn no_power_game() -> MarkovGame {
    let acts = labels(&["X", "Y", "Z"]);
    matrix_game(vec![acts.clone(), acts], |j| {
        vec![3.0 - j[0] as f64, -10.0 + j[1] as f64]
    })
    .expect("static game is valid")
}

/// Seeded random game: rewards uniform in `[-1, 1]`, one to three
/// successors per joint action with random weights.
pub fn random_game(
    seed: u64,
    states: usize,
    actions: usize,
    players: usize,
    horizon: usize,
    gamma: f64,
) -> MarkovGame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GameBuilder::new(players, gamma, horizon);
    let names: Vec<String> = (0..actions).map(|a| format!("a{a}")).collect();
    for s in 0..states {
        b.add_state(format!("s{s}"), vec![names.clone(); players]);
    }
    let sizes = vec![actions; players];
    for s in 0..states {
        for joint in joint_actions(&sizes) {
            let fanout = rng.gen_range(1..=3.min(states));
            let mut next = Vec::with_capacity(fanout);
            let mut total = 0.0;
            for _ in 0..fanout {
                let w: f64 = rng.gen_range(0.05..1.0);
                total += w;
                next.push((rng.gen_range(0..states), w));
            }
            for entry in &mut next {
                entry.1 /= total;
            }
            let rewards = (0..players).map(|_| rng.gen_range(-1.0..1.0)).collect();
            b.set_outcome(s, &joint, next, rewards)
                .expect("indices in range");
        }
    }
    b.build().expect("random game is valid")
}

/// Seeded stationary profile with every action given positive probability.
pub fn random_profile(game: &MarkovGame, seed: u64) -> PolicyProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = (0..game.num_players())
        .map(|p| {
            (0..game.num_states())
                .map(|s| {
                    let w: Vec<f64> = (0..game.num_actions(s, p))
                        .map(|_| rng.gen_range(0.05..1.0))
                        .collect();
                    let total: f64 = w.iter().sum();
                    let mut d: Vec<f64> = w.iter().map(|x| x / total).collect();
                    // Absorb rounding so the distribution sums to one.
                    let head: f64 = d[..d.len() - 1].iter().sum();
                    *d.last_mut().unwrap() = 1.0 - head;
                    d
                })
                .collect()
        })
        .collect();
    PolicyProfile::from_layers(vec![layer])
}

/// Seeded stationary deterministic profile.
pub fn random_deterministic_profile(game: &MarkovGame, seed: u64) -> PolicyProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions: Vec<Vec<usize>> = (0..game.num_players())
        .map(|p| {
            (0..game.num_states())
                .map(|s| rng.gen_range(0..game.num_actions(s, p)))
                .collect()
        })
        .collect();
    PolicyProfile::from_actions(game, &actions).expect("actions in range")
}

/// Length of the walkway in [`shortcut_chain`].
pub const CHAIN_CELLS: usize = 8;

/// Ten-state chain with a high-power shortcut.
///
/// A walker (player 0) starts at `c0`. `walk` advances one cell and reaching
/// the goal from `c7` pays 1. `jump` goes straight to the goal for 1, but
/// only if the gatekeeper (player 1) plays `pass`; `block` sends the walker
/// to `crash` for -1, so the gatekeeper holds power 2 over a jumping walker.
/// The gatekeeper earns 0.1 for every `pass` and nothing else, so its own
/// returns never depend on the walker.
pub fn shortcut_chain() -> MarkovGame {
    let mut b = GameBuilder::new(2, 0.9, CHAIN_CELLS);
    let acts = vec![labels(&["walk", "jump"]), labels(&["pass", "block"])];
    let cells: Vec<_> = (0..CHAIN_CELLS)
        .map(|i| b.add_state(format!("c{i}"), acts.clone()))
        .collect();
    let goal = b.add_state("goal", acts.clone());
    let crash = b.add_state("crash", acts);
    let gate = |g: usize| if g == 0 { 0.1 } else { 0.0 };
    for (i, &c) in cells.iter().enumerate() {
        for g in 0..2 {
            let (next, r) = if i + 1 == CHAIN_CELLS { (goal, 1.0) } else { (cells[i + 1], 0.0) };
            b.set_outcome(c, &[0, g], vec![(next, 1.0)], vec![r, gate(g)]).unwrap();
            let (next, r) = if g == 0 { (goal, 1.0) } else { (crash, -1.0) };
            b.set_outcome(c, &[1, g], vec![(next, 1.0)], vec![r, gate(g)]).unwrap();
        }
    }
    for s in [goal, crash] {
        for w in 0..2 {
            for g in 0..2 {
                b.set_outcome(s, &[w, g], vec![(s, 1.0)], vec![0.0, gate(g)]).unwrap();
            }
        }
    }
    b.build().expect("chain is valid")
}
