use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use powerreg::envs::overcooked::Overcooked;
use powerreg::learn::{
    load_learner, mixing_report, run_alternating_training, save_learner, simulator_power_report, Continuation,
    GroundTruth, TrainConfig,
};
use powerreg::padv::check_equivalence;
use powerreg::power::{power_table, Aggregator, PenaltyMode};
use powerreg::solve::{lambda_sweep, solve_pre, verify_pre, SolveOptions};
use powerreg::{MarkovGame, PolicyProfile, Simulator};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::manifest::{manifest_for, write_atomic, write_csv, Recorder};
use crate::target::{bundled, resolve, Target};
use crate::{Cli, Command, TargetArgs};

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    VerificationFailed,
}

pub const SWEEP_HEADER: &[&str] = &[
    "lambda",
    "player",
    "task_value",
    "power_penalty",
    "regularized_value",
    "chosen_start_action",
    "pareto_flag",
    "unresolved_states",
];
pub const CERTIFICATE_HEADER: &[&str] = &["player", "state", "state_name", "steps_remaining", "action", "action_name", "margin"];
pub const UNRESOLVED_HEADER: &[&str] = &["state", "state_name", "steps_remaining"];
pub const EQUIVALENCE_HEADER: &[&str] = &[
    "lambda",
    "ego",
    "state",
    "padv_value",
    "residual",
    "plain_sum_gap",
    "gap_over_lambda",
];
pub const METRICS_HEADER: &[&str] = &[
    "step",
    "seed",
    "algorithm",
    "lambda_or_p",
    "task_return",
    "power_on_agent0",
    "power_on_agent1",
    "reg_objective_agent0",
    "reg_objective_agent1",
];
pub const GAME_POWER_HEADER: &[&str] = &[
    "ego",
    "coplayer",
    "state",
    "state_name",
    "steps_remaining",
    "power",
    "worst_action",
    "worst_action_name",
    "onpolicy_value",
    "deviated_value",
];
pub const SIM_POWER_HEADER: &[&str] = &[
    "t",
    "ego",
    "coplayer",
    "steps_remaining",
    "power",
    "worst_action",
    "worst_action_name",
    "onpolicy_value",
    "deviated_value",
];

fn arg_error(msg: impl Into<String>) -> anyhow::Error {
    powerreg::Error::Argument(msg.into()).into()
}

/// `start:stop:step` (inclusive), `a,b,c` or a single value.
pub fn parse_lambdas(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| arg_error(format!("bad number '{s}' in '{spec}'")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let out = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                Vec::new()
            } else {
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| start + i as f64 * step).collect()
            }
        }
        [single] if !single.trim().is_empty() => single.split(',').map(num).collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    if out.is_empty() {
        bail!(arg_error(format!("empty lambda grid '{spec}'")));
    }
    Ok(out)
}

/// Comma list or half-open range `a..b`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || arg_error(format!("bad seed list '{spec}'"));
    let out: Vec<u64> = if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if out.is_empty() {
        bail!(bad());
    }
    Ok(out)
}

fn solve_options(target: &Target, penalty_mode: &str, aggregator: &str) -> Result<SolveOptions> {
    let mut opts = SolveOptions::with_mode(penalty_mode.parse::<PenaltyMode>()?);
    opts.aggregator = aggregator.parse::<Aggregator>()?;
    if let Target::Game { fixed: Some(f), .. } = target {
        opts.fixed = Some(f.clone());
    }
    Ok(opts)
}

fn resolve_args(t: &TargetArgs) -> Result<(Target, Vec<PathBuf>)> {
    resolve(t.game.as_deref(), t.layout.as_deref(), t.env.as_deref())
}

pub fn run(cli: Cli) -> Result<Status> {
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        bail!(arg_error("--workers must be positive"));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<Status> {
    match command {
        Command::Solve {
            target,
            lambda,
            penalty_mode,
            aggregator,
            tol,
            out,
        } => cmd_solve(&target, &lambda, &penalty_mode, &aggregator, tol, &out),
        Command::Sweep {
            target,
            lambdas,
            penalty_mode,
            aggregator,
            out,
        } => cmd_sweep(&target, &lambdas, &penalty_mode, &aggregator, &out),
        Command::CheckEquivalence {
            target,
            lambdas,
            tol,
            profile,
            out,
        } => cmd_check_equivalence(&target, &lambdas, tol, profile.as_deref(), &out),
        Command::Train {
            target,
            config,
            seed,
            seeds,
            algorithm,
            lambda,
            p,
            adversary_mode,
            normalize_adversary,
            vf_bootstrap,
            domain_randomization,
            total_steps,
            eval_every,
            out,
        } => {
            let mut cfg = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<TrainConfig>(&text)
                        .map_err(|e| arg_error(format!("config {}: {e}", path.display())))?
                }
                None => TrainConfig::default(),
            };
            if let Some(a) = algorithm {
                cfg.algorithm = a.parse()?;
            }
            if lambda.is_some() {
                cfg.lambda = lambda;
            }
            if p.is_some() {
                cfg.p = p;
            }
            if let Some(m) = adversary_mode {
                cfg.adversary_mode = m.parse()?;
            }
            if let Some(v) = normalize_adversary {
                cfg.normalize_adversary = v;
            }
            if let Some(v) = vf_bootstrap {
                cfg.vf_bootstrap = v;
            }
            if let Some(v) = domain_randomization {
                cfg.domain_randomization = v;
            }
            if let Some(v) = total_steps {
                cfg.total_steps = v;
            }
            if let Some(v) = eval_every {
                cfg.eval_every = v;
            }
            let seeds = match (&seeds, seed) {
                (Some(s), _) => parse_seeds(s)?,
                (None, Some(s)) => vec![s],
                (None, None) => vec![cfg.seed],
            };
            let inputs: Vec<PathBuf> = config.into_iter().collect();
            cmd_train(&target, cfg, &seeds, inputs, &out)
        }
        Command::PowerReport {
            target,
            profile,
            continuation,
            out,
        } => cmd_power_report(&target, &profile, &continuation, &out),
        Command::Export { env, out } => cmd_export(&env, &out),
    }
}

#[derive(Serialize)]
struct CertificateRow<'a> {
    player: usize,
    state: usize,
    state_name: &'a str,
    steps_remaining: usize,
    action: usize,
    action_name: &'a str,
    margin: f64,
}

#[derive(Serialize)]
struct UnresolvedRow<'a> {
    state: usize,
    state_name: &'a str,
    steps_remaining: usize,
}

pub fn cmd_solve(
    target: &TargetArgs,
    lambda: &str,
    penalty_mode: &str,
    aggregator: &str,
    tol: f64,
    out: &Path,
) -> Result<Status> {
    let (target, inputs) = resolve_args(target)?;
    let game = target.game()?;
    let lambdas = parse_lambdas(lambda)?;
    let opts = solve_options(&target, penalty_mode, aggregator)?;
    let mut rec = Recorder::new(
        "solve",
        json!({"lambda": lambdas, "penalty_mode": penalty_mode, "aggregator": aggregator, "tol": tol}),
        inputs,
    );
    let res = solve_pre(game, &lambdas, &opts)?;
    let report = verify_pre(game, &res.profile, &lambdas, &opts, tol)?;

    let profile_path = out.join("profile.json");
    write_atomic(&profile_path, serde_json::to_string_pretty(&res.profile)?.as_bytes())?;
    rec.output(&profile_path);
    let rows: Vec<CertificateRow> = res
        .certificate
        .iter()
        .map(|c| CertificateRow {
            player: c.player,
            state: c.state,
            state_name: game.state_name(c.state),
            steps_remaining: c.steps_remaining,
            action: c.action,
            action_name: game.action_name(c.state, c.player, c.action),
            margin: c.margin,
        })
        .collect();
    let cert_path = out.join("certificate.csv");
    write_csv(&cert_path, CERTIFICATE_HEADER, &rows)?;
    rec.output(&cert_path);
    let unresolved: Vec<UnresolvedRow> = res
        .unresolved
        .iter()
        .map(|&(s, k)| UnresolvedRow {
            state: s,
            state_name: game.state_name(s),
            steps_remaining: k,
        })
        .collect();
    let unresolved_path = out.join("unresolved.csv");
    write_csv(&unresolved_path, UNRESOLVED_HEADER, &unresolved)?;
    rec.output(&unresolved_path);
    rec.finish(&out.join("manifest.json"))?;

    let s0 = game.initial_state();
    let t = game.horizon();
    for p in 0..game.num_players() {
        let a = res.action(p, s0, t);
        println!(
            "player {p}: {} (task {:.6}, penalty {:.6}, regularized {:.6})",
            game.action_name(s0, p, a),
            res.values[p].task(t, s0),
            res.values[p].penalty(t, s0),
            res.values[p].regularized(t, s0)
        );
    }
    println!(
        "verify: {} (min margin {:.3e}), unresolved states: {}",
        if report.passed { "passed" } else { "FAILED" },
        report.min_margin(),
        res.unresolved.len()
    );
    for (s, k) in &res.unresolved {
        eprintln!("unresolved: state {} with {k} steps remaining", game.state_name(*s));
    }
    for f in report.failures() {
        eprintln!(
            "not a best response: player {} at {} (k={}), margin {:.3e}",
            f.player,
            game.state_name(f.state),
            f.steps_remaining,
            f.margin
        );
    }
    Ok(if report.passed && res.unresolved.is_empty() {
        Status::Ok
    } else {
        Status::VerificationFailed
    })
}

pub fn cmd_sweep(target: &TargetArgs, lambdas: &str, penalty_mode: &str, aggregator: &str, out: &Path) -> Result<Status> {
    let (target, inputs) = resolve_args(target)?;
    let game = target.game()?;
    let grid = parse_lambdas(lambdas)?;
    let opts = solve_options(&target, penalty_mode, aggregator)?;
    let mut rec = Recorder::new(
        "sweep",
        json!({"lambdas": lambdas, "penalty_mode": penalty_mode, "aggregator": aggregator}),
        inputs,
    );
    let rows = lambda_sweep(game, &grid, &opts)?;
    write_csv(out, SWEEP_HEADER, &rows)?;
    rec.output(out);
    rec.finish(&manifest_for(out))?;
    info!("{} rows written to {}", rows.len(), out.display());
    Ok(Status::Ok)
}

fn load_profile(path: &Path, game: &MarkovGame) -> Result<PolicyProfile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let profile = match serde_json::from_str::<PolicyProfile>(&text) {
        Ok(p) => p,
        Err(_) => {
            let (cfg, learner) = load_learner(path, game)?;
            learner.to_profile(game, cfg.horizon_for(game))
        }
    };
    profile.validate(game)?;
    Ok(profile)
}

#[derive(Serialize)]
struct EquivalenceCsvRow {
    lambda: f64,
    ego: usize,
    state: usize,
    padv_value: f64,
    residual: f64,
    plain_sum_gap: f64,
    gap_over_lambda: f64,
}

pub fn cmd_check_equivalence(
    target: &TargetArgs,
    lambdas: &str,
    tol: f64,
    profile: Option<&Path>,
    out: &Path,
) -> Result<Status> {
    let (target, mut inputs) = resolve_args(target)?;
    let game = target.game()?;
    if game.gamma() != 1.0 {
        bail!(arg_error(format!(
            "the equivalence holds for undiscounted games only; this game has gamma = {}",
            game.gamma()
        )));
    }
    let grid = parse_lambdas(lambdas)?;
    let profile = match profile {
        Some(p) => {
            inputs.push(p.to_path_buf());
            load_profile(p, game)?
        }
        None => PolicyProfile::uniform(game),
    };
    let mut rec = Recorder::new("check-equivalence", json!({"lambdas": grid, "tol": tol}), inputs);
    let per_lambda: Vec<Vec<_>> = grid
        .par_iter()
        .map(|&l| check_equivalence(game, &profile, game.initial_state(), l))
        .collect::<powerreg::Result<_>>()?;
    let rows: Vec<EquivalenceCsvRow> = per_lambda
        .into_iter()
        .flatten()
        .map(|r| EquivalenceCsvRow {
            lambda: r.lambda,
            ego: r.ego,
            state: r.state,
            padv_value: r.padv_value,
            residual: r.residual,
            plain_sum_gap: r.plain_sum_gap,
            gap_over_lambda: r.gap_over_lambda,
        })
        .collect();
    write_csv(out, EQUIVALENCE_HEADER, &rows)?;
    rec.output(out);
    rec.finish(&manifest_for(out))?;
    let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    println!("max residual {worst:.3e} (tolerance {tol:.1e})");
    Ok(if worst <= tol { Status::Ok } else { Status::VerificationFailed })
}

#[derive(Serialize)]
struct SeedSummary<E: Serialize> {
    seed: u64,
    evaluation: E,
    #[serde(skip_serializing_if = "Option::is_none")]
    mixing: Option<powerreg::learn::MixingReport>,
}

fn train_on<S: GroundTruth>(
    sim: &S,
    config: &TrainConfig,
    seeds: &[u64],
    out: &Path,
    mixing: impl Fn(&S, &powerreg::learn::LearnerState<S::Key>, &TrainConfig) -> Option<powerreg::learn::MixingReport> + Sync,
) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let written: Vec<Vec<PathBuf>> = seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<PathBuf>> {
            let mut cfg = config.clone();
            cfg.seed = seed;
            let outcome = run_alternating_training(sim, &cfg)?;
            let metrics = out.join(format!("metrics_seed{seed}.csv"));
            write_csv(&metrics, METRICS_HEADER, &outcome.metrics)?;
            let learner = out.join(format!("learner_seed{seed}.json"));
            let tmp = out.join(format!(".learner_seed{seed}.json.tmp"));
            save_learner(&tmp, sim, &cfg, &outcome.learner)?;
            std::fs::rename(&tmp, &learner)?;
            let summary = SeedSummary {
                seed,
                evaluation: sim.ground_truth(&outcome.learner, &cfg)?,
                mixing: mixing(sim, &outcome.learner, &cfg),
            };
            let summary_path = out.join(format!("summary_seed{seed}.json"));
            write_atomic(&summary_path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
            info!("seed {seed} done");
            Ok(vec![metrics, learner, summary_path])
        })
        .collect::<Result<_>>()?;
    Ok(written.into_iter().flatten().collect())
}

pub fn cmd_train(
    target: &TargetArgs,
    config: TrainConfig,
    seeds: &[u64],
    inputs: Vec<PathBuf>,
    out: &Path,
) -> Result<Status> {
    let (target, mut all_inputs) = resolve_args(target)?;
    all_inputs.extend(inputs);
    config.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut rec = Recorder::new("train", serde_json::to_value(&config)?, all_inputs);
    rec.seeds(seeds);
    let outputs = match &target {
        Target::Game { game, .. } => train_on(game, &config, seeds, out, |_, _, _| None)?,
        Target::Overcooked(sim) => train_on(sim, &config, seeds, out, |s: &Overcooked, l, c| mixing_report(s, l, c).ok())?,
    };
    for p in &outputs {
        rec.output(p);
    }
    rec.finish(&out.join("manifest.json"))?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct GamePowerRow<'a> {
    ego: usize,
    coplayer: usize,
    state: usize,
    state_name: &'a str,
    steps_remaining: usize,
    power: f64,
    worst_action: usize,
    worst_action_name: &'a str,
    onpolicy_value: f64,
    deviated_value: f64,
}

#[derive(Serialize)]
struct SimPowerRow {
    t: usize,
    ego: usize,
    coplayer: usize,
    steps_remaining: usize,
    power: f64,
    worst_action: usize,
    worst_action_name: String,
    onpolicy_value: f64,
    deviated_value: f64,
}

pub fn cmd_power_report(target: &TargetArgs, profile: &Path, continuation: &str, out: &Path) -> Result<Status> {
    let (target, mut inputs) = resolve_args(target)?;
    inputs.push(profile.to_path_buf());
    let continuation: Continuation = continuation.parse()?;
    let mut rec = Recorder::new("power-report", json!({"continuation": continuation}), inputs);
    match &target {
        Target::Game { game, .. } => {
            let profile = load_profile(profile, game)?;
            let records = power_table(game, &profile)?;
            let rows: Vec<GamePowerRow> = records
                .iter()
                .map(|r| GamePowerRow {
                    ego: r.ego,
                    coplayer: r.coplayer,
                    state: r.state,
                    state_name: game.state_name(r.state),
                    steps_remaining: r.steps_remaining,
                    power: r.power,
                    worst_action: r.worst_action,
                    worst_action_name: game.action_name(r.state, r.coplayer, r.worst_action),
                    onpolicy_value: r.onpolicy_value,
                    deviated_value: r.deviated_value,
                })
                .collect();
            write_csv(out, GAME_POWER_HEADER, &rows)?;
        }
        Target::Overcooked(sim) => {
            let (cfg, learner) = load_learner(profile, sim)?;
            let rows: Vec<SimPowerRow> = simulator_power_report(sim, &learner, &cfg, continuation)?
                .into_iter()
                .map(|r| SimPowerRow {
                    t: r.t,
                    ego: r.ego,
                    coplayer: r.coplayer,
                    steps_remaining: r.steps_remaining,
                    power: r.power,
                    worst_action: r.worst_action,
                    worst_action_name: sim.action_name(r.coplayer, r.worst_action),
                    onpolicy_value: r.onpolicy_value,
                    deviated_value: r.deviated_value,
                })
                .collect();
            write_csv(out, SIM_POWER_HEADER, &rows)?;
        }
    }
    rec.output(out);
    rec.finish(&manifest_for(out))?;
    Ok(Status::Ok)
}

pub fn cmd_export(env: &str, out: &Path) -> Result<Status> {
    let text = match bundled(env)? {
        Target::Game { game, .. } => game.to_json_string(),
        Target::Overcooked(sim) => sim.layout().to_text(),
    };
    let mut rec = Recorder::new("export", json!({"env": env}), Vec::new());
    write_atomic(out, text.as_bytes())?;
    rec.output(out);
    rec.finish(&manifest_for(out))?;
    Ok(Status::Ok)
}

/// Exit code for an error: 3 for missing capabilities, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<powerreg::Error>()) {
        Some(powerreg::Error::Capability(_)) => 3,
        _ => 2,
    }
}
