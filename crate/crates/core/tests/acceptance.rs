//! Acceptance suite. Runs every criterion once, prints one PASS/FAIL line
//! per criterion and exits non-zero if any failed.
//!
//! The success-probability grid is the expensive part (36 cells × 2000
//! trials); it is computed once and shared by criteria 1 and 2.

use std::process::ExitCode;
use std::time::Instant;

use convdyn::analytic::{gradients, population_loss, spurious_point};
use convdyn::cli::{TABLE_K, TABLE_RATIO};
use convdyn::dynamics::{run, InvariantCheck};
use convdyn::experiments::{success_grid, trajectory_experiment, GridResult, TrajectoryDump};
use convdyn::init::sample_init;
use convdyn::model::make_target_a;
use convdyn::rng::stream;
use convdyn::verify::{finite_difference_suite, identity_suite, oracle_suite, VerifyOptions};
use convdyn::{ExperimentConfig, InitScheme, StationaryClass, StepSizePolicy, TeacherParams};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

const GRID_SEED: u64 = 0;
const GRID_TRIALS: usize = 2000;

fn table_grid() -> GridResult {
    let cfg = ExperimentConfig {
        p: 6,
        trials: GRID_TRIALS,
        seed: GRID_SEED,
        ..ExperimentConfig::grid_defaults()
    };
    success_grid(&cfg, &TABLE_K, &TABLE_RATIO).expect("grid runs")
}

fn criterion_1(grid: &GridResult) -> Outcome {
    // (k, ratio, lo, hi)
    let cells = [
        (25, 0.0, 0.46, 0.54),
        (25, 25.0, 0.99, 1.0),
        (64, 9.0, 0.66, 0.76),
        (100, 25.0, 0.85, 0.95),
        (100, 0.0, 0.46, 0.54),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, r, lo, hi) in cells {
        let p = grid.cell(k, r).expect("cell present").success_probability;
        let inside = p >= lo - 1e-12 && p <= hi + 1e-12;
        ok &= inside;
        parts.push(format!("({k},{r})={p:.4}{}", if inside { "" } else { "!" }));
    }
    Outcome::new(ok, parts.join(" "))
}

fn criterion_2(grid: &GridResult) -> Outcome {
    const SLACK: f64 = 0.03;
    let prob = |k, r| grid.cell(k, r).expect("cell present").success_probability;
    let mut bad = Vec::new();
    for &k in &TABLE_K {
        for w in TABLE_RATIO.windows(2) {
            let (a, b) = (prob(k, w[0]), prob(k, w[1]));
            if b < a - SLACK {
                bad.push(format!("k={k}: ratio {}→{} drops {a:.4}→{b:.4}", w[0], w[1]));
            }
        }
    }
    for &r in TABLE_RATIO.iter().filter(|&&r| r >= 4.0) {
        for w in TABLE_K.windows(2) {
            let (a, b) = (prob(w[0], r), prob(w[1], r));
            if b > a + SLACK {
                bad.push(format!("ratio={r}: k {}→{} rises {a:.4}→{b:.4}", w[0], w[1]));
            }
        }
    }
    let mut table = String::new();
    for &k in &TABLE_K {
        let row: Vec<String> = TABLE_RATIO.iter().map(|&r| format!("{:.3}", prob(k, r))).collect();
        table.push_str(&format!(" k{k}[{}]", row.join(" ")));
    }
    if bad.is_empty() {
        Outcome::new(true, format!("grid{table}"))
    } else {
        Outcome::new(false, format!("{}; grid{table}", bad.join("; ")))
    }
}

fn criterion_3() -> Outcome {
    let opts = VerifyOptions::default();
    let checks = finite_difference_suite(&opts).expect("suite runs");
    let worst = checks.iter().map(|c| c.metric).fold(0.0, f64::max);
    let ok = checks.len() == 100 && checks.iter().all(|c| c.passed);
    Outcome::new(ok, format!("{} points, max rel err {worst:.3e} (≤ 1e-5)", checks.len()))
}

fn criterion_4() -> Outcome {
    let opts = VerifyOptions::default();
    let oracle = oracle_suite(&opts).expect("oracle runs");
    let ids = identity_suite(&opts).expect("identities run");
    let oz = oracle.iter().map(|c| c.metric).fold(0.0, f64::max);
    let iz = ids.iter().map(|c| c.metric).fold(0.0, f64::max);
    let ok = oracle.len() == 20
        && ids.len() == 40
        && oracle.iter().all(|c| c.passed)
        && ids.iter().all(|c| c.passed);
    Outcome::new(
        ok,
        format!("oracle max|z| {oz:.3} (≤ 4, 20 configs), identity max|z| {iz:.3} (≤ 5, 40 checks)"),
    )
}

fn criterion_5() -> Outcome {
    let mut worst_grad: f64 = 0.0;
    let mut worst_global_loss: f64 = 0.0;
    let mut min_spurious = f64::INFINITY;
    for seed in 0..200u64 {
        let mut rng = stream(seed, &[500]);
        let p = rng.random_range(1..=10usize);
        let k = rng.random_range(2..=30usize);
        // low-ratio teachers for the loss bound, any ratio for stationarity
        let ratio = if seed % 2 == 0 {
            [0.0, 0.005, 0.01][(seed / 2 % 3) as usize]
        } else {
            rng.random_range(0.0..=k as f64)
        };
        let a = make_target_a(k, ratio, rng.random_range(0.2..5.0), &mut rng).expect("target");
        let w: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
        let t = TeacherParams::new(w, a).expect("teacher");
        let scale = t.loss_scale();
        for s in [t.global_minimizer(), spurious_point(&t)] {
            let (gv, ga) = gradients(&s, &t).expect("gradients");
            worst_grad = worst_grad.max((norm(&gv) + norm(&ga)) / (t.a_star_norm() * t.w_star_norm()));
        }
        worst_global_loss = worst_global_loss.max(population_loss(&t.global_minimizer(), &t).expect("loss"));
        if t.ratio() <= 0.01 + 1e-12 {
            min_spurious = min_spurious.min(population_loss(&spurious_point(&t), &t).expect("loss") / scale);
        }
    }
    let ok = worst_grad <= 1e-12 && worst_global_loss <= 1e-20 && min_spurious >= 0.1;
    Outcome::new(
        ok,
        format!(
            "max rel grad norm {worst_grad:.2e} (≤ 1e-12), max global loss {worst_global_loss:.2e} (≤ 1e-20), min spurious loss/scale {min_spurious:.4} (≥ 0.1)"
        ),
    )
}

/// Good-init runs of criterion 6, reused by criterion 8.
fn good_runs() -> Vec<TrajectoryDump> {
    (0..100u64)
        .map(|seed| {
            let cfg = ExperimentConfig {
                p: 10,
                k: 15,
                ratio: [1.0, 4.0, 9.0][(seed % 3) as usize],
                seed,
                init: InitScheme::Good,
                step_size_policy: StepSizePolicy::Auto { scale: 0.5 },
                // no cap is part of the criterion; starts with cos φ⁰ near 0
                // need far more than 10⁶ steps under the theorem's step size
                max_iters: 100_000_000,
                stride: 10_000,
                monitor: true,
                ..ExperimentConfig::default()
            };
            trajectory_experiment(&cfg).expect("good run")
        })
        .collect()
}

fn bad_runs() -> Vec<TrajectoryDump> {
    (0..50u64)
        .map(|seed| {
            let cfg = ExperimentConfig {
                p: 10,
                k: 15,
                ratio: 0.0,
                seed: 1000 + seed,
                init: InitScheme::Bad,
                step_size_policy: StepSizePolicy::Safe { scale: 0.5 },
                stop_when_classified: true,
                stride: 10_000,
                monitor: true,
                ..ExperimentConfig::default()
            };
            trajectory_experiment(&cfg).expect("bad run")
        })
        .collect()
}

fn criterion_6(good: &[TrajectoryDump], bad: &[TrajectoryDump]) -> Outcome {
    let good_global = good.iter().filter(|d| d.class == StationaryClass::Global).count();
    let good_viol: u64 = good.iter().map(|d| d.violation_count).sum();
    let bad_spur = bad.iter().filter(|d| d.class == StationaryClass::SpuriousLocal).count();
    let max_iters = good.iter().map(|d| d.iters_run).max().unwrap_or(0);
    let ok = good_global == 100 && good_viol == 0 && bad_spur == 50;
    let mut detail = format!(
        "good: {good_global}/100 global, {good_viol} violations, longest {max_iters} iters; bad: {bad_spur}/50 spurious"
    );
    if let Some(v) = good.iter().flat_map(|d| d.violations.first()).next() {
        detail.push_str(&format!("; first violation {} at {}", v.check.label(), v.iter));
    }
    Outcome::new(ok, detail)
}

fn criterion_7() -> Outcome {
    let cfg = ExperimentConfig {
        p: 25,
        k: 20,
        seed: 0,
        init: InitScheme::Good,
        max_iters: 100_000,
        ..ExperimentConfig::default()
    };
    let d = trajectory_experiment(&cfg).expect("trajectory");
    let scale = d.teacher.loss_scale();
    let final_loss = d.records.last().expect("records").loss / scale;
    let ratio = d.phase_rates.map(|r| r.ratio());
    let ok = d.iters_run <= 100_000
        && final_loss <= 1e-8
        && d.phase1_end.is_some()
        && ratio.is_some_and(|r| r >= 5.0);
    Outcome::new(
        ok,
        format!(
            "iters {}, final loss/scale {final_loss:.2e} (≤ 1e-8), phase1_end {:?}, post/pre rate {:?} (≥ 5)",
            d.iters_run, d.phase1_end, ratio
        ),
    )
}

fn criterion_8(good: &[TrajectoryDump], bad: &[TrajectoryDump]) -> Outcome {
    // ‖v‖ never decreases, so its maximum is the final value
    let max_v = good.iter().map(|d| norm(d.final_point.v())).fold(0.0, f64::max);
    let unit_start = good.iter().all(|d| (norm(d.initial.v()) - 1.0).abs() <= 1e-12);
    let norm_viol = good
        .iter()
        .flat_map(|d| &d.violations)
        .filter(|v| v.check == InvariantCheck::FilterNorm)
        .count();

    // raw draws from both basins, at the grid's step size
    let mut raw_viol = 0u64;
    let mut raw_classes = [0usize; 3];
    for seed in 0..40u64 {
        let mut rng = stream(seed, &[800]);
        let k = 15;
        let ratio = [0.0, 1.0, 4.0, 9.0][(seed % 4) as usize];
        let a = make_target_a(k, ratio, 1.0, &mut rng).expect("target");
        let w: Vec<f64> = (0..10).map(|_| rng.sample(StandardNormal)).collect();
        let t = TeacherParams::new(w, a).expect("teacher");
        let s0 = sample_init(10, k, &t, 1.0, &mut rng);
        let cfg = ExperimentConfig {
            p: 10,
            k,
            ratio,
            max_iters: 200_000,
            monitor: true,
            stride: 10_000,
            ..ExperimentConfig::grid_defaults()
        };
        let r = run(&s0, &t, &cfg).expect("raw run");
        raw_viol += r
            .invariant_violations
            .iter()
            .filter(|v| v.check == InvariantCheck::SumRecurrence)
            .count() as u64;
        raw_classes[match r.class {
            StationaryClass::Global => 0,
            StationaryClass::SpuriousLocal => 1,
            StationaryClass::Undetermined => 2,
        }] += 1;
    }
    let rec_viol = good
        .iter()
        .chain(bad)
        .flat_map(|d| &d.violations)
        .filter(|v| v.check == InvariantCheck::SumRecurrence)
        .count() as u64
        + raw_viol;
    let ok = unit_start && max_v <= 2.0 && norm_viol == 0 && rec_viol == 0;
    Outcome::new(
        ok,
        format!(
            "max ‖v‖ {max_v:.6} (≤ 2), recurrence violations {rec_viol} over {} runs (raw runs global/spurious/undetermined {:?})",
            good.len() + bad.len() + 40,
            raw_classes
        ),
    )
}

fn report(n: u32, started: Instant, o: &Outcome) {
    println!(
        "{} criterion {n}: {} [{:.1}s]",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--list`; this target has a
    // single entry point and lists nothing
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = Vec::new();
    let mut check = |n: u32, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        report(n, t0, &o);
        if !o.passed {
            failed.push(n);
        }
    };

    check(3, &mut criterion_3);
    check(4, &mut criterion_4);
    check(5, &mut criterion_5);
    check(7, &mut criterion_7);

    let t0 = Instant::now();
    let good = good_runs();
    let bad = bad_runs();
    println!("(runs for criteria 6 and 8 took {:.1}s)", t0.elapsed().as_secs_f64());
    check(6, &mut || criterion_6(&good, &bad));
    check(8, &mut || criterion_8(&good, &bad));

    let t0 = Instant::now();
    let grid = table_grid();
    println!("(grid took {:.1}s)", t0.elapsed().as_secs_f64());
    check(1, &mut || criterion_1(&grid));
    check(2, &mut || criterion_2(&grid));

    if failed.is_empty() {
        println!("acceptance: all 8 criteria passed");
        ExitCode::SUCCESS
    } else {
        failed.sort();
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
