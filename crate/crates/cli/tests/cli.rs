use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use phonon_cli::config::parse_config;
use phonon_cli::manifest::count_csv_rows;
use phonon_cli::{run, CliError, Command, RunOptions};
use serde_json::Value;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn check_rows(dir: &Path, m: &Value) {
    for out in m["outputs"].as_array().unwrap() {
        let path = dir.join(out["path"].as_str().unwrap());
        if let Some(rows) = out["rows"].as_u64() {
            assert_eq!(count_csv_rows(&path).unwrap() as u64, rows, "{}", path.display());
        }
    }
}

const SMALL: &str = r#"{
  "setup": {
    "grid": {"n_mu": 10, "n_omega": 3, "omega_min": 1.0, "d_omega": 0.4, "dx_cap": 0.05},
    "sources": [
      {"kind": "grid_delta", "mu0": 0.935, "omega": 1.0},
      {"kind": "grid_delta", "mu0": 0.935, "omega": 1.4},
      {"kind": "grid_delta", "mu0": 0.935, "omega": 1.8}
    ]
  },
  "sweep": {"epsilons": [0.5, 1.0, 2.0]},
  "landscape": {"epsilons": [1.0, 2.0], "n_points": 5}
}"#;

#[test]
fn canned_configs_load_and_validate() {
    let mut n = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let loaded = parse_config(&fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            loaded.config.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 8);
}

#[test]
fn paper_sweep_preset_resolves_to_full_grids() {
    let text = fs::read_to_string(configs_dir().join("fig6_paper.json")).unwrap();
    let config = parse_config(&text).unwrap().config;
    assert_eq!(config.sweep.epsilons, vec![0.125, 0.25, 0.5, 1.0, 4.0]);
    assert_eq!(config.setup.sources.len(), 40);
    let grid = config.setup.grid_for(0.125).unwrap();
    assert_eq!((grid.n_mu(), grid.n_omega()), (200, 40));
    assert!((grid.dx - 0.001).abs() < 1e-15);
}

#[test]
fn empty_config_solve_echoes_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let m = run(Command::Solve, &RunOptions { out: out.clone(), ..RunOptions::default() }).unwrap();
    assert!(m.checks.iter().all(|c| c.passed), "{:?}", m.checks);
    let json = manifest(&out);
    assert_eq!(json["status"], "ok");
    let defaults: Vec<&str> = json["defaults"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for key in ["setup", "solve", "sweep", "version"] {
        assert!(defaults.contains(&key));
    }
    assert_eq!(json["config"]["setup"]["grid"]["n_mu"], 40);
    assert_eq!(json["grids"][0]["n_omega"], 10);
    check_rows(&out, &json);
    let header = fs::read_to_string(out.join("surface_trace.csv")).unwrap();
    assert!(header.starts_with("t,delta_T\n"));
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let mut files = Vec::new();
    for (k, jobs) in [1, 3, 1].into_iter().enumerate() {
        let out = tmp.path().join(format!("run{k}"));
        let opts = RunOptions { config: Some(cfg.clone()), out: out.clone(), jobs, ..RunOptions::default() };
        run(Command::Sweep, &opts).unwrap();
        run(Command::Landscape, &RunOptions { out: out.join("land"), ..opts }).unwrap();
        check_rows(&out, &manifest(&out));
        let read = |p: &str| fs::read(out.join(p)).unwrap();
        files.push([
            read("sweep.csv"),
            read("regression.json"),
            read("lambda_grid.csv"),
            read("land/eps_1/landscape.csv"),
            read("land/eps_2/landscape.csv"),
        ]);
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
}

#[test]
fn noise_depends_only_on_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replacen(r#""landscape": {"#, r#""landscape": {"noise": 0.01, "#, 1);
    let cfg = write_config(tmp.path(), &text);
    let scan = |seed: u64, k: usize| {
        let out = tmp.path().join(format!("n{k}"));
        run(Command::Landscape, &RunOptions { config: Some(cfg.clone()), out: out.clone(), seed, ..RunOptions::default() }).unwrap();
        fs::read(out.join("eps_1/landscape.csv")).unwrap()
    };
    assert_eq!(scan(7, 0), scan(7, 1));
    assert_ne!(scan(7, 2), scan(8, 3));
}

#[test]
fn desk_sweep_has_negative_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fig6");
    let opts = RunOptions { config: Some(configs_dir().join("fig6_desk.json")), out: out.clone(), ..RunOptions::default() };
    run(Command::Sweep, &opts).unwrap();
    let reg: Value = serde_json::from_str(&fs::read_to_string(out.join("regression.json")).unwrap()).unwrap();
    assert!(reg["slope"].as_f64().unwrap() < 0.0);
    assert_eq!(count_csv_rows(&out.join("sweep.csv")).unwrap(), 5);
    check_rows(&out, &manifest(&out));
}

#[test]
fn desk_decomposition_splits_exactly_and_remainder_shrinks() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("split");
    let opts = RunOptions { config: Some(configs_dir().join("thm34_desk.json")), out: out.clone(), strict: true, ..RunOptions::default() };
    let m = run(Command::Decompose, &opts).unwrap();
    for name in ["split_identity", "remainder_shrinks_eta1", "remainder_shrinks_eta2"] {
        assert!(m.checks.iter().any(|c| c.name == name && c.passed), "{name}: {:?}", m.checks);
    }
    let mut r = csv::Reader::from_path(out.join("split.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["epsilon", "theta", "M", "M0", "M1", "m0_asymptotic", "eta_index"]);
    for rec in r.records() {
        let rec = rec.unwrap();
        let v: Vec<f64> = (2..5).map(|k| rec[k].parse().unwrap()).collect();
        assert!((v[0] - v[1] - v[2]).abs() <= 1e-12 * v[0].abs());
    }
}

#[test]
fn bad_configs_exit_with_status_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"setup": {"grid": {"n_mu": -3}}}"#);
    let out = tmp.path().join("never");
    let err = run(Command::Solve, &RunOptions { config: Some(cfg), out: out.clone(), ..RunOptions::default() }).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert!(err.to_string().contains("setup.grid.n_mu"), "{err}");
    assert!(!out.exists());

    let status = Process::new(env!("CARGO_BIN_EXE_phonon"))
        .args(["solve", "--config", tmp.path().join("config.json").to_str().unwrap(), "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn solver_errors_exit_with_status_three_and_keep_the_run_dir() {
    let tmp = tempfile::tempdir().unwrap();
    // eta = 0.3 pushes the derived substrate coefficients out of [0, 1]
    let text = r#"{"setup": {"coupling": {"kind": "coupled"}}, "solve": {"eta": {"kind": "constant", "value": 0.3}}}"#;
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("run");
    let status = Process::new(env!("CARGO_BIN_EXE_phonon"))
        .args(["solve", "--config", cfg.to_str().unwrap(), "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    assert_eq!(manifest(&out)["status"], "error");
}

#[test]
fn strict_mode_turns_failed_checks_into_status_four() {
    let tmp = tempfile::tempdir().unwrap();
    // truth outside the scanned b range, so the argmin check fails
    let text = SMALL.replacen(r#""landscape": {"#, r#""landscape": {"truth": {"kind": "tanh", "a": 1.5, "b": 2.5}, "#, 1);
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("run");
    let args = |strict: bool| {
        let mut p = Process::new(env!("CARGO_BIN_EXE_phonon"));
        p.args(["landscape", "--config", cfg.to_str().unwrap(), "--out"]).arg(&out);
        if strict {
            p.arg("--strict");
        }
        p.status().unwrap().code()
    };
    assert_eq!(args(false), Some(0));
    assert_eq!(args(true), Some(4));
    assert_eq!(manifest(&out)["status"], "failed_checks");
}
