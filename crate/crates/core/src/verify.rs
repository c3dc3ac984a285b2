//! Self-checks for the closed forms: Gaussian identities, finite differences
//! of the loss, agreement with sampled losses and gradients, and
//! nonnegativity over random configurations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{grad_a, grad_v, population_loss};
use crate::error::Result;
use crate::linalg::{dist, gaussian_vec, norm};
use crate::model::{angle, StudentParams, TeacherParams};
use crate::montecarlo::{check_identity, empirical_grad_estimate, empirical_loss_estimate, sample_patches, Identity};
use crate::rng::{derive_seed, stream};

const IDENTITY_TAG: u64 = 101;
const FD_TAG: u64 = 102;
const ORACLE_TAG: u64 = 103;
const NONNEG_TAG: u64 = 104;

/// Sizes and thresholds of the suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Samples per identity check.
    pub identity_samples: usize,
    pub identity_pairs: usize,
    pub identity_max_z: f64,
    pub fd_points: usize,
    pub fd_step: f64,
    pub fd_max_rel: f64,
    /// Samples per Monte-Carlo oracle configuration.
    pub oracle_samples: usize,
    pub oracle_configs: usize,
    pub oracle_max_z: f64,
    pub nonneg_configs: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            identity_samples: 1_000_000,
            identity_pairs: 10,
            identity_max_z: 5.0,
            fd_points: 100,
            fd_step: 1e-6,
            fd_max_rel: 1e-5,
            oracle_samples: 100_000,
            oracle_configs: 20,
            oracle_max_z: 4.0,
            nonneg_configs: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Identity,
    FiniteDifference,
    Oracle,
    Nonnegativity,
}

/// One line of the report. `metric` is a z-score, a relative error or (for
/// nonnegativity) the most negative loss seen, compared against `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub kind: CheckKind,
    pub name: String,
    pub metric: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.kind {
            CheckKind::Identity | CheckKind::Oracle => "max|z|",
            CheckKind::FiniteDifference => "rel_err",
            CheckKind::Nonnegativity => "min_loss",
        };
        write!(
            f,
            "{} {} {what}={:.3e} threshold={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.metric,
            self.threshold
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub options: VerifyOptions,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Signature of a population-loss implementation under test.
pub type LossFn = dyn Fn(&StudentParams, &TeacherParams) -> Result<f64> + Sync;

fn random_pair<R: Rng>(rng: &mut R, p: usize, k: usize) -> Result<(StudentParams, TeacherParams)> {
    let t = TeacherParams::new(gaussian_vec(rng, p), gaussian_vec(rng, k))?;
    let s = StudentParams::new(gaussian_vec(rng, p), gaussian_vec(rng, k))?;
    Ok((s, t))
}

/// Every identity on `identity_pairs` random `(w, w*)` pairs.
pub fn identity_suite(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for pair in 0..opts.identity_pairs {
        let mut rng = stream(opts.seed, &[IDENTITY_TAG, pair as u64]);
        let p = rng.random_range(2..=8usize);
        let w = gaussian_vec(&mut rng, p);
        let w_star = gaussian_vec(&mut rng, p);
        for id in Identity::ALL {
            let seed = derive_seed(opts.seed, &[IDENTITY_TAG, pair as u64, id.id() as u64]);
            let rep = check_identity(id.id(), &w, &w_star, opts.identity_samples, seed)?;
            out.push(CheckResult {
                kind: CheckKind::Identity,
                name: format!("identity{} pair{pair} p={p}", id.id()),
                metric: rep.max_abs_z_score,
                threshold: opts.identity_max_z,
                passed: rep.max_abs_z_score <= opts.identity_max_z,
            });
        }
    }
    Ok(out)
}

/// Central differences of `loss` against the closed-form gradients.
///
/// The error at each point is `‖fd − g‖ / max(‖g‖, 1e-3·‖a*‖‖w*‖)` over the
/// stacked `(v, a)` gradient; the floor keeps near-stationary points from
/// dividing by rounding noise.
pub fn finite_difference_suite_with(opts: &VerifyOptions, loss: &LossFn) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let h = opts.fd_step;
    for point in 0..opts.fd_points {
        let mut rng = stream(opts.seed, &[FD_TAG, point as u64]);
        let (s, t) = loop {
            let p = rng.random_range(2..=8usize);
            let k = rng.random_range(1..=10usize);
            let (s, t) = random_pair(&mut rng, p, k)?;
            let phi = angle(s.v(), t.w_star())?;
            if phi > 0.05 && phi < std::f64::consts::PI - 0.05 {
                break (s, t);
            }
        };
        let mut analytic = grad_v(&s, &t)?;
        analytic.extend(grad_a(&s, &t)?);
        let mut theta: Vec<f64> = s.v().iter().chain(s.a()).copied().collect();
        let p = s.p();
        let mut fd = Vec::with_capacity(theta.len());
        for i in 0..theta.len() {
            let x = theta[i];
            theta[i] = x + h;
            let up = loss(&StudentParams::new(theta[..p].to_vec(), theta[p..].to_vec())?, &t)?;
            theta[i] = x - h;
            let down = loss(&StudentParams::new(theta[..p].to_vec(), theta[p..].to_vec())?, &t)?;
            theta[i] = x;
            fd.push((up - down) / (2.0 * h));
        }
        let floor = 1e-3 * t.a_star_norm() * t.w_star_norm();
        let rel = dist(&fd, &analytic) / norm(&analytic).max(floor);
        out.push(CheckResult {
            kind: CheckKind::FiniteDifference,
            name: format!("fd point{point} p={p} k={}", s.k()),
            metric: rel,
            threshold: opts.fd_max_rel,
            passed: rel <= opts.fd_max_rel,
        });
    }
    Ok(out)
}

pub fn finite_difference_suite(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    finite_difference_suite_with(opts, &population_loss)
}

/// Sampled loss and gradients against `loss` and the closed-form gradients,
/// one check per configuration reporting the worst scalar.
pub fn oracle_suite_with(opts: &VerifyOptions, loss: &LossFn) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for cfg in 0..opts.oracle_configs {
        let mut rng = stream(opts.seed, &[ORACLE_TAG, cfg as u64]);
        let p = rng.random_range(1..=8usize);
        let k = rng.random_range(1..=10usize);
        let (s, t) = random_pair(&mut rng, p, k)?;
        let seed = derive_seed(opts.seed, &[ORACLE_TAG, cfg as u64, 1]);
        let batch = sample_patches(opts.oracle_samples, k, p, seed)?;
        let l = empirical_loss_estimate(&batch, &s, &t)?;
        let (gv, ga) = empirical_grad_estimate(&batch, &s, &t)?;
        let z = l
            .max_abs_z(&[loss(&s, &t)?])
            .max(gv.max_abs_z(&grad_v(&s, &t)?))
            .max(ga.max_abs_z(&grad_a(&s, &t)?));
        out.push(CheckResult {
            kind: CheckKind::Oracle,
            name: format!("oracle config{cfg} p={p} k={k}"),
            metric: z,
            threshold: opts.oracle_max_z,
            passed: z <= opts.oracle_max_z,
        });
    }
    Ok(out)
}

pub fn oracle_suite(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    oracle_suite_with(opts, &population_loss)
}

/// `loss ≥ 0` on `nonneg_configs` random configurations.
pub fn nonnegativity_check_with(opts: &VerifyOptions, loss: &LossFn) -> Result<CheckResult> {
    let mut rng = stream(opts.seed, &[NONNEG_TAG]);
    let mut worst = f64::INFINITY;
    for _ in 0..opts.nonneg_configs {
        let p = rng.random_range(1..=8usize);
        let k = rng.random_range(1..=12usize);
        let (s, t) = random_pair(&mut rng, p, k)?;
        worst = worst.min(loss(&s, &t)?);
    }
    Ok(CheckResult {
        kind: CheckKind::Nonnegativity,
        name: format!("nonnegativity configs={}", opts.nonneg_configs),
        metric: worst,
        threshold: 0.0,
        passed: worst >= 0.0,
    })
}

pub fn nonnegativity_check(opts: &VerifyOptions) -> Result<CheckResult> {
    nonnegativity_check_with(opts, &population_loss)
}

/// The full suite.
pub fn run_all(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = identity_suite(opts)?;
    checks.extend(finite_difference_suite(opts)?);
    checks.extend(oracle_suite(opts)?);
    checks.push(nonnegativity_check(opts)?);
    Ok(VerifyReport {
        options: *opts,
        checks,
    })
}
