mod common;

use common::*;
use convdyn::model::angle;
use convdyn::verify::*;
use convdyn::{Result, StudentParams, TeacherParams};
use std::f64::consts::PI;

fn small() -> VerifyOptions {
    VerifyOptions {
        seed: 3,
        identity_samples: 20_000,
        identity_pairs: 2,
        fd_points: 10,
        oracle_samples: 20_000,
        oracle_configs: 3,
        nonneg_configs: 500,
        ..VerifyOptions::default()
    }
}

/// Term-by-term loss with the last cross term missing its `1/(2π)`.
fn typo_loss(s: &StudentParams, t: &TeacherParams) -> Result<f64> {
    let phi = angle(s.v(), t.w_star())?;
    let g = (PI - phi) * phi.cos() + phi.sin();
    let c = norm(t.w_star());
    let (a, astar) = (s.a(), t.a_star());
    let (sa, ss) = (sum(a), sum(astar));
    let tp = 2.0 * PI;
    Ok(0.5
        * ((PI - 1.0) * c * c / tp * dot(astar, astar) + (PI - 1.0) / tp * dot(a, a)
            - 2.0 * (g - 1.0) * c / tp * dot(a, astar)
            + c * c / tp * ss * ss
            + sa * sa / tp
            - 2.0 * c * sa * ss))
}

#[test]
fn small_suite_passes() {
    let rep = run_all(&small()).unwrap();
    assert_eq!(rep.checks.len(), 2 * 4 + 10 + 3 + 1);
    for c in rep.failures() {
        panic!("{c}");
    }
}

#[test]
fn report_is_deterministic() {
    let a = run_all(&small()).unwrap();
    let b = run_all(&small()).unwrap();
    assert_eq!(a, b);
    let other = run_all(&VerifyOptions { seed: 4, ..small() }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn typo_loss_is_caught() {
    let opts = small();
    let nonneg = nonnegativity_check_with(&opts, &typo_loss).unwrap();
    assert!(!nonneg.passed, "{nonneg}");
    let oracle = oracle_suite_with(&opts, &typo_loss).unwrap();
    assert!(oracle.iter().any(|c| !c.passed));
}

#[test]
fn display_line_names_the_check() {
    let c = nonnegativity_check(&small()).unwrap();
    let line = c.to_string();
    assert!(line.starts_with("PASS nonnegativity"), "{line}");
}
