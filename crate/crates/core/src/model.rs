//! Parameter containers, configuration, and the geometric helpers shared by
//! every other module.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{dot, norm, scaled, sum, unit_sphere};

/// Learnable parameters: the unnormalized filter `v` and the output weights `a`.
///
/// The effective filter is `w = v / ‖v‖₂`, so `v` must never be zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentParams {
    v: Vec<f64>,
    a: Vec<f64>,
}

impl StudentParams {
    pub fn new(v: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        if v.is_empty() || a.is_empty() {
            return domain("student vectors must be non-empty");
        }
        if !(norm(&v) > 0.0) {
            return domain("student filter v must have positive norm");
        }
        if v.iter().chain(&a).any(|x| !x.is_finite()) {
            return domain("student parameters must be finite");
        }
        Ok(Self { v, a })
    }

    pub(crate) fn from_parts_unchecked(v: Vec<f64>, a: Vec<f64>) -> Self {
        Self { v, a }
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn p(&self) -> usize {
        self.v.len()
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    /// The normalized filter `v / ‖v‖₂`.
    pub fn w(&self) -> Vec<f64> {
        scaled(&self.v, 1.0 / norm(&self.v))
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.v, self.a)
    }
}

/// Ground-truth parameters `(w*, a*)` that generate the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherParams {
    w_star: Vec<f64>,
    a_star: Vec<f64>,
}

impl TeacherParams {
    pub fn new(w_star: Vec<f64>, a_star: Vec<f64>) -> Result<Self> {
        if w_star.is_empty() || a_star.is_empty() {
            return domain("teacher vectors must be non-empty");
        }
        if !(norm(&w_star) > 0.0) {
            return domain("teacher filter w* must have positive norm");
        }
        if a_star.iter().all(|&x| x == 0.0) {
            return domain("teacher output weights a* must not be identically zero");
        }
        if w_star.iter().chain(&a_star).any(|x| !x.is_finite()) {
            return domain("teacher parameters must be finite");
        }
        Ok(Self { w_star, a_star })
    }

    pub fn w_star(&self) -> &[f64] {
        &self.w_star
    }

    pub fn a_star(&self) -> &[f64] {
        &self.a_star
    }

    pub fn p(&self) -> usize {
        self.w_star.len()
    }

    pub fn k(&self) -> usize {
        self.a_star.len()
    }

    pub fn w_star_norm(&self) -> f64 {
        norm(&self.w_star)
    }

    pub fn a_star_norm(&self) -> f64 {
        norm(&self.a_star)
    }

    /// `1ᵀa*`
    pub fn sum_a_star(&self) -> f64 {
        sum(&self.a_star)
    }

    /// `(1ᵀa*)² / ‖a*‖₂²`
    pub fn ratio(&self) -> f64 {
        let s = self.sum_a_star();
        s * s / dot(&self.a_star, &self.a_star)
    }

    /// Natural loss scale `‖a*‖₂²‖w*‖₂²`.
    pub fn loss_scale(&self) -> f64 {
        let n = self.a_star_norm() * self.w_star_norm();
        n * n
    }

    /// The student at the global minimum: `v = w*`, `a = ‖w*‖₂ a*`.
    pub fn global_minimizer(&self) -> StudentParams {
        StudentParams {
            v: self.w_star.clone(),
            a: scaled(&self.a_star, self.w_star_norm()),
        }
    }

    pub(crate) fn check_student(&self, s: &StudentParams) -> Result<()> {
        if s.p() != self.p() {
            return Err(Error::DimensionMismatch {
                what: "filter length p",
                expected: self.p(),
                got: s.p(),
            });
        }
        if s.k() != self.k() {
            return Err(Error::DimensionMismatch {
                what: "second-layer width k",
                expected: self.k(),
                got: s.k(),
            });
        }
        Ok(())
    }
}

/// Per-iteration observables of a gradient-descent run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iter: u64,
    /// Angle between `v` and `w*`, in `[0, π]`.
    pub phi: f64,
    pub a_dot_astar: f64,
    /// `1ᵀa`
    pub sum_a: f64,
    pub v_norm: f64,
    pub loss: f64,
    pub grad_v_norm: f64,
    pub grad_a_norm: f64,
    /// `‖a − ‖w*‖₂ a*‖₂`
    pub dist_a: f64,
    /// `|1ᵀa − ‖w*‖₂ 1ᵀa*|`
    pub sum_gap: f64,
}

impl TrajectoryRecord {
    pub fn sin2phi(&self) -> f64 {
        let s = self.phi.sin();
        s * s
    }
}

/// Which stationary family a point belongs to, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StationaryClass {
    Global,
    SpuriousLocal,
    Undetermined,
}

impl std::fmt::Display for StationaryClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StationaryClass::Global => "global",
            StationaryClass::SpuriousLocal => "spurious_local",
            StationaryClass::Undetermined => "undetermined",
        })
    }
}

/// How the step size of a run is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum StepSizePolicy {
    /// `scale` times the four-way minimum of the convergence theorem's step
    /// bound, evaluated at the initial point. Falls back to [`Safe`] when the
    /// initial point does not satisfy that bound's preconditions.
    ///
    /// [`Safe`]: StepSizePolicy::Safe
    Auto { scale: f64 },
    /// `scale · min{1/k, 1/((‖a*‖₂² + (1ᵀa*)²)‖w*‖₂²)}`, independent of the
    /// initial point.
    Safe { scale: f64 },
    Fixed { eta: f64 },
}

/// Initialization scheme for a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// The sign variant satisfying the good-basin conditions.
    Good,
    /// The sign variant satisfying the bad-basin conditions.
    Bad,
    /// The raw draw, no sign selection.
    Raw,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "good" => Ok(InitScheme::Good),
            "bad" => Ok(InitScheme::Bad),
            "raw" => Ok(InitScheme::Raw),
            other => Err(Error::Config(format!("unknown init scheme `{other}`"))),
        }
    }
}

/// Resolved configuration for runs, trajectories and grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub p: usize,
    pub k: usize,
    /// Target `(1ᵀa*)² / ‖a*‖₂²`.
    pub ratio: f64,
    pub w_star_norm: f64,
    pub a_star_norm: f64,
    pub step_size_policy: StepSizePolicy,
    pub max_iters: u64,
    pub grad_tol: f64,
    pub class_tol: f64,
    pub trials: usize,
    pub seed: u64,
    pub init: InitScheme,
    /// Record every `stride`-th iterate (the final iterate is always kept).
    pub stride: u64,
    /// Phase II begins once `cos φ` reaches this value...
    pub phase_cos: f64,
    /// ...and `aᵀa*‖w*‖₂ ≥ phase_signal · ‖a*‖₂²‖w*‖₂²`.
    pub phase_signal: f64,
    /// Stop as soon as the iterate is classified and inside that family's
    /// basin, instead of waiting for the gradient tolerance.
    pub stop_when_classified: bool,
    /// Draw a fresh `a*` for every grid trial instead of once per cell.
    pub resample_target: bool,
    /// Check the invariant monitors at every iteration, whatever the stride.
    pub monitor: bool,
    /// Ball radius used when `1ᵀa* = 0`, as a multiple of `‖a*‖₂‖w*‖₂/√k`.
    pub zero_sum_radius: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            p: 25,
            k: 20,
            ratio: 4.0,
            w_star_norm: 1.0,
            a_star_norm: 1.0,
            step_size_policy: StepSizePolicy::Auto { scale: 0.5 },
            max_iters: 1_000_000,
            grad_tol: 1e-10,
            class_tol: 1e-2,
            trials: 2000,
            seed: 0,
            init: InitScheme::Good,
            stride: 1,
            phase_cos: 0.5,
            phase_signal: 0.25,
            stop_when_classified: false,
            resample_target: false,
            monitor: true,
            zero_sum_radius: 1.0,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for the success-probability grid.
    pub fn grid_defaults() -> Self {
        Self {
            p: 6,
            step_size_policy: StepSizePolicy::Safe { scale: 0.5 },
            init: InitScheme::Raw,
            stride: 1000,
            stop_when_classified: true,
            monitor: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.p == 0 {
            return bad("p must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.ratio >= 0.0) || self.ratio > self.k as f64 {
            return bad(format!(
                "ratio {} must lie in [0, k = {}]",
                self.ratio, self.k
            ));
        }
        if !(self.w_star_norm > 0.0) || !(self.a_star_norm > 0.0) {
            return bad("teacher norms must be positive".into());
        }
        match self.step_size_policy {
            StepSizePolicy::Auto { scale } | StepSizePolicy::Safe { scale } => {
                if !(scale > 0.0 && scale <= 1.0) {
                    return bad(format!("step-size scale {scale} must lie in (0, 1]"));
                }
            }
            StepSizePolicy::Fixed { eta } => {
                if !(eta > 0.0) || !eta.is_finite() {
                    return bad(format!("step size {eta} must be positive"));
                }
            }
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.grad_tol > 0.0) || !(self.class_tol > 0.0) {
            return bad("grad_tol and class_tol must be positive".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if !(self.zero_sum_radius > 0.0) {
            return bad("zero_sum_radius must be positive".into());
        }
        Ok(())
    }
}

/// Angle between two nonzero vectors, in `[0, π]`.
///
/// Uses `2·atan2(‖x̂ − ŷ‖, ‖x̂ + ŷ‖)`, which agrees with the clamped
/// `arccos(⟨x,y⟩/‖x‖‖y‖)` but keeps full relative precision near 0 and π.
pub fn angle(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "angle operands",
            expected: x.len(),
            got: y.len(),
        });
    }
    let nx = norm(x);
    let ny = norm(y);
    if !(nx > 0.0) || !(ny > 0.0) {
        return domain("angle is undefined for a zero vector");
    }
    let (mut d2, mut s2) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (u, w) = (a / nx, b / ny);
        d2 += (u - w) * (u - w);
        s2 += (u + w) * (u + w);
    }
    Ok((2.0 * d2.sqrt().atan2(s2.sqrt())).clamp(0.0, std::f64::consts::PI))
}

/// Draws a second-layer target with `‖a*‖₂ = norm` and `(1ᵀa*)² = ratio·norm²`.
///
/// The vector is `norm·(√(ratio/k)·1/√k + √(1 − ratio/k)·u)` with `u` a random
/// unit vector orthogonal to `1`.
pub fn make_target_a<R: Rng + ?Sized>(
    k: usize,
    ratio: f64,
    norm_target: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if k == 0 {
        return domain("k must be at least 1");
    }
    if !(ratio >= 0.0) || ratio > k as f64 {
        return domain(format!("ratio {ratio} outside [0, k = {k}]"));
    }
    if !(norm_target > 0.0) {
        return domain("target norm must be positive");
    }
    let kf = k as f64;
    let along = (ratio / kf).sqrt();
    let across = (1.0 - ratio / kf).max(0.0).sqrt();
    let mut out = vec![along / kf.sqrt(); k];
    if across > 0.0 {
        if k == 1 {
            return domain(format!("k = 1 only admits ratio 1, got {ratio}"));
        }
        let u = loop {
            let mut g = unit_sphere(rng, k);
            let mean = sum(&g) / kf;
            g.iter_mut().for_each(|x| *x -= mean);
            // second pass removes the rounding residue along 1
            let mean = sum(&g) / kf;
            g.iter_mut().for_each(|x| *x -= mean);
            let n = norm(&g);
            if n > 1e-8 {
                break scaled(&g, 1.0 / n);
            }
        };
        for (o, ui) in out.iter_mut().zip(&u) {
            *o += across * ui;
        }
    }
    Ok(scaled(&out, norm_target))
}

/// Teacher for a config: a random filter direction scaled to `w_star_norm`
/// and a second layer from [`make_target_a`].
pub fn make_teacher<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> Result<TeacherParams> {
    let w = scaled(&unit_sphere(rng, cfg.p), cfg.w_star_norm);
    let a = make_target_a(cfg.k, cfg.ratio, cfg.a_star_norm, rng)?;
    TeacherParams::new(w, a)
}
