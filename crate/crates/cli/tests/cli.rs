use std::path::Path;
use std::process::{Command, Output};

use powerreg::{envs, PolicyProfile};
use powerreg_cli::commands::{EQUIVALENCE_HEADER, GAME_POWER_HEADER, METRICS_HEADER, SWEEP_HEADER};
use tempfile::TempDir;

fn powerreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_powerreg"))
        .args(args)
        .env("POWERREG_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn read_csv(p: impl AsRef<Path>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn json(p: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn solve_attack_defense_at_half_plays_y() {
    let dir = TempDir::new().unwrap();
    let out = powerreg(&["solve", "--env", "attack-defense", "--lambda", "0.5", "--out", &path(&dir, "s")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let profile: PolicyProfile = serde_json::from_value(json(dir.path().join("s/profile.json"))).unwrap();
    let g = envs::attack_defense();
    assert_eq!(profile, PolicyProfile::constant_named(&g, &["Y", "Y"]).unwrap());
    assert!(dir.path().join("s/manifest.json").exists());
    let (header, rows) = read_csv(dir.path().join("s/certificate.csv"));
    assert_eq!(header, ["player", "state", "state_name", "steps_remaining", "action", "action_name", "margin"]);
    assert_eq!(rows.len(), 2);
}

#[test]
fn solve_from_an_exported_game_file_at_zero_is_nash() {
    let dir = TempDir::new().unwrap();
    let game = path(&dir, "ad.json");
    assert_eq!(code(&powerreg(&["export", "--env", "attack-defense", "--out", &game])), 0);
    let out = powerreg(&["solve", "--game", &game, "--lambda", "0", "--out", &path(&dir, "s")]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("player 0: X") && stdout.contains("player 1: X"), "{stdout}");
    let manifest = json(dir.path().join("s/manifest.json"));
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn malformed_game_file_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let game = path(&dir, "bad.json");
    std::fs::write(&game, "{\"players\": 2, \"states\": [").unwrap();
    let out = powerreg(&["solve", "--game", &game, "--out", &path(&dir, "s")]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn simulator_targets_cannot_be_solved() {
    let dir = TempDir::new().unwrap();
    let out = powerreg(&["solve", "--env", "micro-cpfp", "--out", &path(&dir, "s")]);
    assert_eq!(code(&out), 3);
}

#[test]
fn equivalence_refuses_discounted_games() {
    let dir = TempDir::new().unwrap();
    let out = powerreg(&["check-equivalence", "--env", "shortcut-chain", "--out", &path(&dir, "eq.csv")]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn equivalence_on_random_games_passes_and_a_negative_tolerance_fails() {
    let dir = TempDir::new().unwrap();
    let csv = path(&dir, "eq.csv");
    let out = powerreg(&["check-equivalence", "--env", "random:3:4:2:4", "--out", &csv]);
    assert_eq!(code(&out), 0);
    let (header, rows) = read_csv(&csv);
    assert_eq!(header, EQUIVALENCE_HEADER);
    assert_eq!(rows.len(), 3 * 2);
    let out = powerreg(&["check-equivalence", "--env", "random:3:4:2:4", "--tol=-1", "--out", &csv]);
    assert_eq!(code(&out), 1);
}

#[test]
fn sweep_writes_the_documented_columns() {
    let dir = TempDir::new().unwrap();
    let csv = path(&dir, "sweep.csv");
    assert_eq!(code(&powerreg(&["sweep", "--env", "larger-attack-defense", "--lambdas", "0:1:0.05", "--out", &csv])), 0);
    let (header, rows) = read_csv(&csv);
    assert_eq!(header, SWEEP_HEADER);
    assert_eq!(rows.len(), 21 * 2);
    assert!(dir.path().join("sweep.csv.manifest.json").exists());

    assert_eq!(code(&powerreg(&["sweep", "--env", "attack-defense", "--lambdas", "0.4", "--out", &csv])), 0);
    let (_, rows) = read_csv(&csv);
    assert!(rows.iter().all(|r| r[0] == "0.4" && r[5] == "Y"));
}

#[test]
fn empty_lambda_grid_is_rejected() {
    let dir = TempDir::new().unwrap();
    let out = powerreg(&["sweep", "--env", "attack-defense", "--lambdas", "1:0:0.1", "--out", &path(&dir, "x.csv")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    for run in ["a", "b"] {
        let out = powerreg(&["sweep", "--env", "coin-division:0.9:all", "--lambdas", "0:1:0.25", "--out", &path(&dir, &format!("{run}.csv"))]);
        assert_eq!(code(&out), 0);
        let out = powerreg(&[
            "train", "--env", "shortcut-chain", "--algorithm", "prim", "--lambda", "0.25", "--seeds", "0,1",
            "--total-steps", "3000", "--eval-every", "1000", "--out", &path(&dir, run),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let same = |name: &str| std::fs::read(dir.path().join("a").join(name)).unwrap() == std::fs::read(dir.path().join("b").join(name)).unwrap();
    assert_eq!(std::fs::read(dir.path().join("a.csv")).unwrap(), std::fs::read(dir.path().join("b.csv")).unwrap());
    for seed in 0..2 {
        assert!(same(&format!("metrics_seed{seed}.csv")));
        assert!(same(&format!("learner_seed{seed}.json")));
        assert!(same(&format!("summary_seed{seed}.json")));
    }
    let (header, rows) = read_csv(dir.path().join("a/metrics_seed0.csv"));
    assert_eq!(header, METRICS_HEADER);
    assert_eq!(rows.len(), 4);
}

#[test]
fn zero_steps_writes_a_header_only_metrics_file() {
    let dir = TempDir::new().unwrap();
    let out = powerreg(&["train", "--env", "attack-defense", "--total-steps", "0", "--seed", "4", "--out", &path(&dir, "t")]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(dir.path().join("t/metrics_seed4.csv")).unwrap();
    assert_eq!(text, format!("{}\n", METRICS_HEADER.join(",")));
}

#[test]
fn invalid_training_combinations_are_rejected() {
    let dir = TempDir::new().unwrap();
    let out = powerreg(&["train", "--env", "attack-defense", "--algorithm", "sbpr", "--lambda", "0.5", "--out", &path(&dir, "t")]);
    assert_eq!(code(&out), 2);
    let out = powerreg(&["train", "--env", "attack-defense", "--algorithm", "prim", "--lambda", "0.5", "--adversary-mode", "oracle", "--out", &path(&dir, "t")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn ablation_runs_record_distinct_manifests() {
    let dir = TempDir::new().unwrap();
    let variants: [&[&str]; 5] = [
        &["--adversary-mode", "learned"],
        &["--adversary-mode", "exhaustive"],
        &["--adversary-mode", "fixed-action:5"],
        &["--normalize-adversary", "false"],
        &["--vf-bootstrap", "false"],
    ];
    let mut configs = Vec::new();
    for (i, extra) in variants.iter().enumerate() {
        let out_dir = path(&dir, &format!("run{i}"));
        let mut args = vec![
            "train", "--env", "micro-cpfp-explosion", "--algorithm", "sbpr", "--p", "0.2", "--total-steps", "500",
            "--out", &out_dir,
        ];
        args.extend_from_slice(extra);
        let out = powerreg(&args);
        assert_eq!(code(&out), 0, "{extra:?}: {}", String::from_utf8_lossy(&out.stderr));
        let m = json(Path::new(&out_dir).join("manifest.json"));
        assert_eq!(m["command"], "train");
        configs.push(m["config"].clone());
    }
    for i in 0..configs.len() {
        for j in 0..i {
            assert_ne!(configs[i], configs[j]);
        }
    }
}

#[test]
fn power_report_on_attack_defense_xx() {
    let dir = TempDir::new().unwrap();
    let g = envs::attack_defense();
    let profile = path(&dir, "xx.json");
    std::fs::write(&profile, serde_json::to_string(&PolicyProfile::constant_named(&g, &["X", "X"]).unwrap()).unwrap()).unwrap();
    let csv = path(&dir, "power.csv");
    assert_eq!(code(&powerreg(&["power-report", "--env", "attack-defense", "--profile", &profile, "--out", &csv])), 0);
    let (header, rows) = read_csv(&csv);
    assert_eq!(header, GAME_POWER_HEADER);
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!((r[5].as_str(), r[7].as_str()), ("3.0", "Z"));
    }

    let g = envs::no_power_game();
    std::fs::write(&profile, serde_json::to_string(&PolicyProfile::constant_named(&g, &["X", "X"]).unwrap()).unwrap()).unwrap();
    assert_eq!(code(&powerreg(&["power-report", "--env", "no-power", "--profile", &profile, "--out", &csv])), 0);
    let (_, rows) = read_csv(&csv);
    let row = rows.iter().find(|r| r[0] == "0" && r[1] == "1").unwrap();
    assert_eq!(row[5], "0.0");
}

#[test]
fn power_report_rejects_a_profile_for_another_game() {
    let dir = TempDir::new().unwrap();
    let g = envs::attack_defense();
    let profile = path(&dir, "xx.json");
    std::fs::write(&profile, serde_json::to_string(&PolicyProfile::constant_named(&g, &["X", "X"]).unwrap()).unwrap()).unwrap();
    let out = powerreg(&["power-report", "--env", "shortcut-chain", "--profile", &profile, "--out", &path(&dir, "p.csv")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulator_power_report_from_a_trained_learner() {
    let dir = TempDir::new().unwrap();
    let run = path(&dir, "t");
    let out = powerreg(&["train", "--env", "micro-cpfp", "--total-steps", "300", "--seed", "0", "--out", &run]);
    assert_eq!(code(&out), 0);
    let csv = path(&dir, "power.csv");
    let learner = Path::new(&run).join("learner_seed0.json").display().to_string();
    let out = powerreg(&["power-report", "--env", "micro-cpfp", "--profile", &learner, "--continuation", "vf", "--out", &csv]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&csv);
    assert_eq!(header, powerreg_cli::commands::SIM_POWER_HEADER);
    assert_eq!(rows.len(), 24 * 2);
}
