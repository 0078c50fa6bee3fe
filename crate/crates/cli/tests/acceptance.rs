//! Acceptance battery. Prints one PASS/FAIL line per criterion; a FAIL is a
//! finding, not a crash, so only errors abort the run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use powerreg::envs::overcooked::{Layout, Overcooked};
use powerreg::envs::{self, CoinPayout};
use powerreg::game::{evaluate_task_values, reachable_states, sample_index};
use powerreg::learn::{
    adversary_targets, compute_power_sample, domain_randomized_start, load_learner, mixing_report,
    run_alternating_training, Algorithm, LearnerState, MetricRow, TrainConfig,
};
use powerreg::padv::{check_equivalence, exact_adversary};
use powerreg::power::{one_step_power, PenaltyMode};
use powerreg::solve::{backward_induction_pre, prbr, solve_pre, verify_pre, FixedPlay, SolveOptions};
use powerreg::{MarkovGame, PolicyProfile, Simulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEEDS: u64 = 5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn criterion(id: usize, name: &str, budget: Option<Duration>, run: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let mut v = run();
    let elapsed = start.elapsed();
    if let Some(b) = budget {
        if elapsed > b {
            v.pass = false;
            v.detail.push_str(&format!("; over the {:.0?} budget", b));
        }
    }
    println!(
        "{} [{id:>2}] {name}: {} ({:.1}s)",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64()
    );
    v.pass
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_powerreg"))
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn read_csv(p: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(p).unwrap().records().map(|r| r.unwrap()).collect()
}

fn sweep_rows(env: &str, lambdas: &str, dir: &Path) -> Vec<(f64, usize, f64, String)> {
    let out = dir.join(format!("{env}.csv"));
    let status = bin()
        .args(["sweep", "--env", env, "--lambdas", lambdas, "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "sweep on {env} failed");
    read_csv(&out)
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap(), r[4].parse().unwrap(), r[5].to_string()))
        .collect()
}

fn attack_defense_threshold(dir: &Path) -> Verdict {
    let rows = sweep_rows("attack-defense", "0:1:0.01", dir);
    let mut worst: f64 = 0.0;
    let mut wrong = Vec::new();
    for (l, p, value, action) in &rows {
        let (want_action, want_value) = if *l < 1.0 / 3.0 { ("X", 3.0 - 3.0 * l) } else { ("Y", 2.0) };
        worst = worst.max((value - want_value).abs());
        if action != want_action {
            wrong.push(format!("player {p} at {l}: {action}"));
        }
    }
    verdict(
        rows.len() == 202 && wrong.is_empty() && worst <= 1e-12,
        format!("{} rows, max value error {worst:.1e} (tol 1e-12), wrong actions {wrong:?}", rows.len()),
    )
}

fn zero_power_table() -> Verdict {
    let g = envs::no_power_game();
    let mut nonzero = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            let p = PolicyProfile::constant(&g, &[a, b]).unwrap();
            for (ego, co) in [(0, 1), (1, 0)] {
                let power = one_step_power(&g, &p, ego, co, 0, 1).unwrap().power;
                if power != 0.0 {
                    nonzero.push((a, b, ego, power));
                }
            }
        }
    }
    verdict(nonzero.is_empty(), format!("9 profiles, both directions, nonzero: {nonzero:?}"))
}

/// Value of the symmetric profile (a, a) at λ under the plain-sum penalty:
/// its payoff minus λ times the co-player's one-step power.
fn symmetric_lines(g: &MarkovGame) -> Vec<(f64, f64)> {
    let n = g.num_actions(0, 0);
    (0..n)
        .map(|a| {
            let r = |b: usize| g.outcome(0, g.joint_index(0, &[a, b]).unwrap()).rewards[0];
            let min = (0..n).map(r).fold(f64::INFINITY, f64::min);
            (r(a), r(a) - min)
        })
        .collect()
}

fn larger_attack_defense_frontier(dir: &Path) -> Verdict {
    let g = envs::larger_attack_defense();
    let lines = symmetric_lines(&g);
    let step = 0.01;
    let rows = sweep_rows("larger-attack-defense", "0:1.2:0.01", dir);
    let mut worst: f64 = 0.0;
    let mut chosen: Vec<(f64, String)> = Vec::new();
    for (l, p, value, action) in &rows {
        let best = lines.iter().map(|(r, pw)| r - l * pw).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((value - best).abs());
        if *p == 0 {
            chosen.push((*l, action.clone()));
        }
    }
    let found: Vec<f64> = chosen.windows(2).filter(|w| w[0].1 != w[1].1).map(|w| w[1].0).collect();
    let want = [0.2, 0.4, 2.0 / 3.0, 1.0];
    let located = found.len() == want.len() && found.iter().zip(want).all(|(f, w)| (f - w).abs() <= step + 1e-9);
    verdict(
        worst <= 1e-12 && located,
        format!("max line error {worst:.1e} (tol 1e-12), switches at {found:?} vs {want:?} (grid {step})"),
    )
}

fn random_suite_game(i: u64) -> MarkovGame {
    let mut r = ChaCha8Rng::seed_from_u64(1000 + i);
    let states = r.gen_range(1..=5);
    let actions = r.gen_range(2..=3);
    let horizon = r.gen_range(1..=4);
    envs::random_game(i, states, actions, 2, horizon, 1.0)
}

fn equivalence_suite() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut one_step_gap: f64 = 0.0;
    let (mut multi, mut decreasing) = (0, 0);
    for i in 0..200 {
        let g = random_suite_game(i);
        let p = envs::random_profile(&g, i);
        let s0 = g.initial_state();
        for l in [0.01, 0.1, 0.5] {
            for row in check_equivalence(&g, &p, s0, l).unwrap() {
                worst = worst.max(row.residual);
                if g.horizon() == 1 {
                    one_step_gap = one_step_gap.max(row.plain_sum_gap.abs());
                }
            }
        }
        if g.horizon() > 1 {
            multi += 1;
            let ratios: Vec<Vec<f64>> = [0.1, 0.01, 0.001]
                .iter()
                .map(|&l| check_equivalence(&g, &p, s0, l).unwrap().iter().map(|r| r.gap_over_lambda).collect())
                .collect();
            if (0..2).all(|e| ratios[1][e] < ratios[0][e] && ratios[2][e] < ratios[1][e]) {
                decreasing += 1;
            }
        }
    }
    let share = decreasing as f64 / multi as f64;
    verdict(
        worst <= 1e-9 && one_step_gap <= 1e-12 && share >= 0.95,
        format!(
            "max residual {worst:.1e} (tol 1e-9), one-step gap {one_step_gap:.1e} (tol 1e-12), gap/lambda decreasing on {decreasing}/{multi} multi-step games (need 95%)"
        ),
    )
}

fn pre_soundness() -> Verdict {
    let mut games = vec![envs::no_power_game(), envs::attack_defense(), envs::larger_attack_defense()];
    let tables = games.len();
    games.extend((0..100).map(random_suite_game));
    let (mut failures, mut nash_failures, mut table_unresolved, mut unresolved) = (0, 0, 0, 0);
    for (i, g) in games.iter().enumerate() {
        for l in [0.0, 0.25, 0.5, 1.0] {
            let r = backward_induction_pre(g, l, PenaltyMode::PlainSum).unwrap();
            let flagged: BTreeSet<_> = r.unresolved.iter().copied().collect();
            unresolved += flagged.len();
            if i < tables {
                table_unresolved += flagged.len();
            }
            let rep = verify_pre(g, &r.profile, &[l], &SolveOptions::default(), 1e-9).unwrap();
            let kept = |e: &&powerreg::solve::VerifyEntry| !flagged.contains(&(e.state, e.steps_remaining));
            failures += rep.failures().filter(kept).count();
            if l == 0.0 {
                nash_failures += rep.entries.iter().filter(kept).filter(|e| e.nash_margin < -1e-9).count();
            }
        }
    }
    verdict(
        failures == 0 && nash_failures == 0 && table_unresolved == 0,
        format!(
            "{} games x 4 lambdas: verify failures {failures}, lambda=0 Nash failures {nash_failures}, unresolved {unresolved} (tables {table_unresolved})",
            games.len()
        ),
    )
}

/// Divider's regularized value of an allocation, by hand.
fn coin_oracle(alloc: &[usize; 6], q: f64, payout: CoinPayout, lambda: f64) -> f64 {
    let c: Vec<f64> = alloc.iter().map(|&x| x as f64).collect();
    let (task, powers) = match payout {
        CoinPayout::Members => (q * c[1] + 2.0 * q * q * (c[2] + c[3]), [2.0 * q * q * c[2], 2.0 * q * q * c[3], 0.0]),
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

fn coin_division() -> Verdict {
    let q = 0.5;
    let mut mismatches = Vec::new();
    let mut count = 0;
    for payout in [CoinPayout::Members, CoinPayout::AllPlayers] {
        let cd = envs::coin_division(q, payout).unwrap();
        count = cd.allocations.len();
        let opts = SolveOptions {
            fixed: Some(FixedPlay { profile: cd.profile.clone(), free: cd.free.clone() }),
            ..Default::default()
        };
        let root = cd.game.initial_state();
        for i in 0..=20 {
            let l = i as f64 * 0.05;
            let r = solve_pre(&cd.game, &[l], &opts).unwrap();
            let got = coin_oracle(&cd.allocations[r.action(0, root, 2)], q, payout, l);
            let best = cd.allocations.iter().map(|a| coin_oracle(a, q, payout, l)).fold(f64::NEG_INFINITY, f64::max);
            if (got - best).abs() > 1e-9 {
                mismatches.push((format!("{payout:?}"), l));
            }
        }
    }
    verdict(
        count == 252 && mismatches.is_empty(),
        format!("{count} allocations, 21 lambdas, both payouts, q = {q}; mismatches {mismatches:?}"),
    )
}

fn estimator_unbiasedness() -> Verdict {
    let mut off = Vec::new();
    let mut worst_z: f64 = 0.0;
    for seed in 0..20 {
        let g = envs::random_game(seed, 4, 3, 2, 3, 0.9);
        let profile = envs::random_profile(&g, seed + 100);
        let values = evaluate_task_values(&g, &profile).unwrap();
        let mut l: LearnerState<(usize, usize)> = LearnerState::new(2, 1.0);
        for k in 1..=g.horizon() {
            for s in 0..g.num_states() {
                for (p, d) in profile.local(s, k).iter().enumerate() {
                    l.actors[p].0.insert((s, k), d.iter().map(|&x| x.max(1e-300).ln()).collect());
                    l.task_values[p].0.insert((s, k), values.get(k, s, p));
                }
            }
        }
        let (s, k) = (g.initial_state(), g.horizon());
        let mut q = vec![0.0; g.num_actions(s, 1)];
        q[exact_adversary(&g, &profile, 0, 1).unwrap().action(s, k)] = 1.0;
        l.adversary_mut(0, 1).values.0.insert((s, k), q);
        let exact = one_step_power(&g, &profile, 0, 1, s, k).unwrap().power;

        let config = TrainConfig::prim(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let joint: Vec<usize> =
                    (0..2).map(|p| sample_index(&l.policy(p, &(s, k), g.num_actions(s, p)), rng.gen())).collect();
                let (next, r) = g.step(&s, &joint, &mut rng).unwrap();
                compute_power_sample(&g, &l, &config, 0, 1, &s, k, &joint, (&next, &r), &mut rng).unwrap()
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt();
        let z = if se > 0.0 { (mean - exact).abs() / se } else if mean == exact { 0.0 } else { f64::INFINITY };
        worst_z = worst_z.max(z);
        if z > 3.0 {
            off.push(seed);
        }
    }
    verdict(off.is_empty(), format!("20 games, 1e4 samples each, worst |z| {worst_z:.2} (tol 3), outside: {off:?}"))
}

fn chain_agreement() -> Verdict {
    let g = envs::shortcut_chain();
    let pass = PolicyProfile::constant(&g, &[0, 0]).unwrap();
    let mut details = Vec::new();
    let mut ok = true;
    for lambda in [0.0, 0.5] {
        let exact = prbr(&g, &pass, 0, lambda, PenaltyMode::Discounted).unwrap();
        let mut target = pass.clone();
        for k in 1..=g.horizon() {
            for s in 0..g.num_states() {
                let mut d = vec![0.0; g.num_actions(s, 0)];
                d[exact.action(s, k)] = 1.0;
                target.set_dist(0, s, k, d);
            }
        }
        let on_path = reachable_states(&g, &target, g.initial_state()).unwrap();
        let matches = (0..SEEDS)
            .into_par_iter()
            .filter(|&seed| {
                let config = TrainConfig { seed, total_steps: 100_000, ..TrainConfig::prim(lambda) };
                let out = run_alternating_training(&g, &config).unwrap();
                on_path.iter().all(|&(s, t)| {
                    let k = g.horizon() - t;
                    out.learner.determinized(0, &(s, k)) == exact.action(s, k)
                })
            })
            .count();
        ok &= matches >= 4;
        details.push(format!("lambda {lambda}: {matches}/{SEEDS} seeds"));
    }
    verdict(ok, details.join(", "))
}

fn overcooked_config() -> TrainConfig {
    let text = std::fs::read_to_string(workspace().join("configs/micro-overcooked.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn train_final(sim: &Overcooked, base: &TrainConfig, seed: u64) -> (LearnerState<u128>, MetricRow, TrainConfig) {
    let config = TrainConfig { seed, ..base.clone() };
    let out = run_alternating_training(sim, &config).unwrap();
    let last = out.metrics.last().unwrap().clone();
    (out.learner, last, config)
}

fn overcooked_reproduction() -> Verdict {
    let base = overcooked_config();
    let sim = Overcooked::new(Layout::micro_cpfp());
    let s0 = sim.initial_state();
    let (gamma, horizon) = (sim.gamma(), sim.horizon());
    let private = [sim.private_pots(0), sim.private_pots(1)];
    let gap = sim.plan(&s0, horizon, None, gamma).value - sim.plan(&s0, horizon, Some(&[private[0].clone(), private[1].clone()]), gamma).value;

    let lambda = 0.25;
    let task = base.clone();
    let prim = TrainConfig { algorithm: Algorithm::Prim, lambda: Some(lambda), ..base.clone() };
    let pairs: Vec<(MetricRow, MetricRow)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| (train_final(&sim, &task, seed).1, train_final(&sim, &prim, seed).1))
        .collect();
    let power = |m: &MetricRow| m.power_on_agent0 + m.power_on_agent1;
    let lower = pairs.iter().filter(|(t, p)| power(p) < power(t)).count();
    let dropped = pairs.iter().filter(|(t, p)| ((t.task_return - p.task_return) - gap).abs() <= 1e-3).count();
    let both = pairs
        .iter()
        .filter(|(t, p)| power(p) < power(t) && ((t.task_return - p.task_return) - gap).abs() <= 1e-3)
        .count();
    let returns: Vec<String> = pairs.iter().map(|(t, p)| format!("{:.4}/{:.4}", t.task_return, p.task_return)).collect();

    let esim = Overcooked::new(Layout::micro_cpfp_explosion());
    let eprim = TrainConfig { lambda: Some(1e-4), ..prim.clone() };
    let mixing: Vec<(bool, bool)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let (lt, _, ct) = train_final(&esim, &task, seed);
            let (lp, _, cp) = train_final(&esim, &eprim, seed);
            (
                mixing_report(&esim, &lt, &ct).unwrap().creates_heterogeneous_pot(),
                mixing_report(&esim, &lp, &cp).unwrap().creates_heterogeneous_pot(),
            )
        })
        .collect();
    let task_mixes = mixing.iter().filter(|m| m.0).count();
    let prim_clean = mixing.iter().filter(|m| !m.1).count();

    verdict(
        both >= 4 && prim_clean >= 4 && task_mixes >= 1,
        format!(
            "micro-cpfp lambda {lambda}: PRIM power lower in {lower}/{SEEDS}, return drop equals the private-pot gap {gap:.4} (tol 1e-3) in {dropped}/{SEEDS}, both in {both}/{SEEDS} (task/PRIM returns {returns:?}); \
             explosion lambda 1e-4: PRIM never mixes in {prim_clean}/{SEEDS}, task-only mixes in {task_mixes}/{SEEDS}"
        ),
    )
}

fn train_cli(dir: &Path, name: &str, seeds: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let status = bin()
        .args(["train", "--env", "micro-cpfp-explosion", "--config"])
        .arg(workspace().join("configs/micro-overcooked.json"))
        .args(["--algorithm", "sbpr", "--p", "0.001", "--total-steps", "5000000", "--seeds", seeds, "--out"])
        .arg(&out)
        .args(extra)
        .status()
        .unwrap();
    assert!(status.success(), "ablation run {name} failed");
    out
}

fn mean_final_return(dir: &Path, seeds: u64) -> f64 {
    (0..seeds)
        .map(|s| read_csv(&dir.join(format!("metrics_seed{s}.csv"))).last().unwrap()[4].parse::<f64>().unwrap())
        .sum::<f64>()
        / seeds as f64
}

fn ablation_battery(dir: &Path) -> Verdict {
    let seeds = 3;
    let range = format!("0..{seeds}");
    let interact = format!("fixed-action:{}", powerreg::envs::overcooked::INTERACT);
    let variants: Vec<(&str, Vec<&str>)> = vec![
        ("learned", vec!["--adversary-mode", "learned"]),
        ("exhaustive", vec!["--adversary-mode", "exhaustive"]),
        ("fixed", vec!["--adversary-mode", interact.as_str()]),
        ("normalize-off", vec!["--normalize-adversary", "false"]),
        ("vf-off", vec!["--vf-bootstrap", "false"]),
    ];
    let mut configs = Vec::new();
    let mut dirs = Vec::new();
    for (name, extra) in &variants {
        let out = train_cli(dir, name, &range, extra);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        configs.push(manifest["config"].clone());
        dirs.push(out);
    }
    let distinct = (0..configs.len()).all(|i| (0..i).all(|j| configs[i] != configs[j]));

    // Argmax identity on the normalization-off learner.
    let sim = Overcooked::new(Layout::micro_cpfp_explosion());
    let (cfg, learner) = load_learner(&dirs[3].join("learner_seed0.json"), &sim).unwrap();
    let on = TrainConfig { normalize_adversary: true, ..cfg.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut checked, mut broken) = (0, 0);
    for _ in 0..500 {
        let (s, k) = domain_randomized_start(&sim, &cfg, &mut rng);
        let (mut a, mut z) = (Vec::new(), Vec::new());
        for b in 0..sim.num_actions(&s, 1) {
            let joint = [learner.determinized(0, &sim.observation_key(&s, k, 0)), b];
            let (next, r) = sim.step(&s, &joint, &mut rng).unwrap();
            a.push(adversary_targets(&sim, &learner, &on, 0, &s, k, (&next, &r), &mut rng).unwrap());
            z.push(adversary_targets(&sim, &learner, &cfg, 0, &s, k, (&next, &r), &mut rng).unwrap());
        }
        let argmax = |v: &[f64]| (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best });
        let shift = a[0] - z[0];
        checked += 1;
        if argmax(&a) != argmax(&z) || a.iter().zip(&z).any(|(x, y)| ((x - y) - shift).abs() > 1e-9) {
            broken += 1;
        }
    }

    let learned = mean_final_return(&dirs[0], seeds);
    let fixed = mean_final_return(&dirs[2], seeds);
    verdict(
        distinct && broken == 0 && fixed < learned,
        format!(
            "{} runs, distinct manifests {distinct}; argmax identity broken at {broken}/{checked} states; SBPR mean return learned {learned:.3} vs {interact} {fixed:.3}",
            variants.len()
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters pass flags here; the battery only
    // runs on a plain invocation.
    if std::env::args().skip(1).any(|a| a == "--list") {
        return;
    }
    let dir = tempfile::TempDir::new().unwrap();
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "attack-defense threshold", Some(secs(1)), || attack_defense_threshold(dir.path())),
        criterion(2, "zero-power game", Some(secs(1)), zero_power_table),
        criterion(3, "larger attack-defense frontier", None, || larger_attack_defense_frontier(dir.path())),
        criterion(4, "p-adversarial equivalence", Some(secs(60)), equivalence_suite),
        criterion(5, "PRE solver soundness", Some(secs(60)), pre_soundness),
        criterion(6, "coin division", Some(secs(10)), coin_division),
        criterion(7, "power estimator unbiasedness", None, estimator_unbiasedness),
        criterion(8, "chain learning agrees with the exact response", Some(secs(120 * SEEDS * 2)), chain_agreement),
        criterion(9, "micro-overcooked reproduction", Some(secs(600 * SEEDS * 4)), overcooked_reproduction),
        criterion(10, "ablation battery", None, || ablation_battery(dir.path())),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
}
