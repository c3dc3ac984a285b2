use std::path::PathBuf;
use std::process::{Command, Output};

use convdyn::cli::{EXIT_INVALID, EXIT_OK, EXIT_SPURIOUS, EXIT_UNDETERMINED};

fn convdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convdyn"))
        .args(args)
        .env_remove("CONVDYN_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("convdyn-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn run_global_writes_csv() {
    let out = tmp("traj.csv");
    let o = convdyn(&["run", "--p", "25", "--k", "20", "--ratio", "4", "--seed", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# convdyn trajectory"));
    assert!(text.lines().count() > 100);
    assert!(stderr(&o).contains("class=global"));
}

#[test]
fn run_with_tiny_initial_angle_cosine_hits_cap() {
    // cos φ⁰ ≈ 0.01 here, and the guaranteed step size is too small to
    // finish within the default cap
    let o = convdyn(&["run", "--p", "25", "--k", "20", "--ratio", "4", "--seed", "7", "--stride", "100000"]);
    assert_eq!(code(&o), EXIT_UNDETERMINED, "{}", stderr(&o));
}

#[test]
fn run_bad_init_is_spurious() {
    let o = convdyn(&[
        "run", "--p", "10", "--k", "15", "--init", "bad", "--ratio", "0", "--step", "safe", "--stride", "100000",
    ]);
    assert_eq!(code(&o), EXIT_SPURIOUS, "{}", stderr(&o));
}

#[test]
fn run_rejects_zero_dimension() {
    let o = convdyn(&["run", "--p", "0"]);
    assert_eq!(code(&o), EXIT_INVALID);
    assert!(!stderr(&o).is_empty());
}

#[test]
fn unknown_override_key_is_rejected() {
    let o = convdyn(&["run", "--set", "pp=3"]);
    assert_eq!(code(&o), EXIT_INVALID);
    assert!(stderr(&o).contains("pp"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&convdyn(&["run", "--bogus"])), EXIT_INVALID);
    assert_eq!(code(&convdyn(&["--help"])), EXIT_OK);
}

#[test]
fn grid_invalid_cell_named() {
    let o = convdyn(&["grid", "--ratio", "30", "--k", "25"]);
    assert_eq!(code(&o), EXIT_INVALID);
    assert!(stderr(&o).contains("k = 25, ratio = 30"), "{}", stderr(&o));
}

#[test]
fn grid_table_axes_give_36_rows_and_reruns_match() {
    let run = |name: &str| {
        let out = tmp(name);
        let o = convdyn(&[
            "grid", "--p", "6", "--k", "25,36,49,64,81,100", "--ratio", "0,1,4,9,16,25", "--trials", "2",
            "--max-iters", "20000", "--seed", "1", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
        std::fs::read(out).unwrap()
    };
    let a = run("grid_a.csv");
    let text = String::from_utf8(a.clone()).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 37);
    assert_eq!(a, run("grid_b.csv"));
}

#[test]
fn grid_results_do_not_depend_on_workers() {
    let run = |w: &str| {
        let o = convdyn(&[
            "grid", "--k", "4,9", "--ratio", "0,1", "--trials", "6", "--max-iters", "50000", "--workers", w,
        ]);
        assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
        o.stdout
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn config_file_then_set_then_flags() {
    let cfg = tmp("run.conf");
    std::fs::write(&cfg, "# small run\np = 5\nk = 4\nratio = 1\nmax_iters = 10\nseed = 2\n").unwrap();
    let c = cfg.to_str().unwrap();
    let json = |extra: &[&str]| {
        let mut args = vec!["run", "--config", c, "--format", "json"];
        args.extend_from_slice(extra);
        let o = convdyn(&args);
        assert!(matches!(code(&o), EXIT_OK | EXIT_UNDETERMINED), "{}", stderr(&o));
        serde_json::from_slice::<serde_json::Value>(&o.stdout).unwrap()
    };
    let v = json(&[]);
    assert_eq!(v["meta"]["config"]["p"], 5);
    assert_eq!(v["meta"]["config"]["max_iters"], 10);
    let v = json(&["--set", "max_iters=20"]);
    assert_eq!(v["meta"]["config"]["max_iters"], 20);
    let v = json(&["--set", "max_iters=20", "--max-iters", "30"]);
    assert_eq!(v["meta"]["config"]["max_iters"], 30);
    assert_eq!(v["meta"]["seed"], 2);
}

#[test]
fn seed_falls_back_to_environment_and_flag_wins() {
    let seed_of = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_convdyn"));
        cmd.args(["run", "--p", "3", "--k", "3", "--ratio", "1", "--max-iters", "5", "--format", "json"]);
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        cmd.env_remove("CONVDYN_SEED");
        if let Some(e) = env {
            cmd.env("CONVDYN_SEED", e);
        }
        let o = cmd.output().unwrap();
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["meta"]["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(None, None), 0);
    assert_eq!(seed_of(Some("41"), None), 41);
    assert_eq!(seed_of(Some("41"), Some("5")), 5);
}

#[test]
fn run_output_is_deterministic() {
    let args = ["run", "--p", "6", "--k", "5", "--ratio", "2", "--seed", "4", "--max-iters", "500"];
    assert_eq!(convdyn(&args).stdout, convdyn(&args).stdout);
}

#[test]
fn phases_reports_transition_for_reference_run() {
    let o = convdyn(&["phases", "--p", "25", "--k", "20", "--seed", "0"]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("phase1_end="));
    assert!(s.contains("at_transition phi="));
    let ratio: f64 = s
        .split_whitespace()
        .find_map(|w| w.strip_prefix("rate_ratio="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(ratio >= 5.0, "{s}");
}

#[test]
fn phases_reports_nothing_for_spurious_run() {
    let o = convdyn(&[
        "phases", "--p", "10", "--k", "15", "--init", "bad", "--ratio", "0", "--step", "safe", "--stride", "1000",
    ]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    assert!(stdout(&o).contains("no phase transition"));
}

#[test]
fn verify_small_run_is_deterministic_and_writes_json() {
    let out = tmp("verify.json");
    let args = [
        "verify", "--n-samples", "20000", "--oracle-samples", "20000", "--seed", "3", "--out", out.to_str().unwrap(),
    ];
    let a = convdyn(&args);
    let b = convdyn(&args);
    assert_eq!(a.stdout, b.stdout);
    let s = stdout(&a);
    assert!(s.lines().any(|l| l.starts_with("PASS fd point0")));
    assert!(s.trim_end().ends_with("failed"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["checks"].as_array().unwrap().len(), 40 + 100 + 20 + 1);
}

#[test]
fn verify_default_passes() {
    let o = convdyn(&["verify"]);
    assert_eq!(code(&o), EXIT_OK, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("161 checks, 0 failed"));
}
