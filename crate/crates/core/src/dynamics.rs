//! Gradient descent on the population loss, plus the checks that make sense
//! of a run: stationary-point classification, invariant monitors and
//! phase detection.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::analytic::{
    g_unchecked, grad_a_at, grad_a_into, grad_v_at, grad_v_into, loss_at, spurious_a, Geometry,
};
use crate::error::{domain, Result};
use crate::linalg::{axpy, dist, dot, norm, sum};
use crate::model::{
    angle, ExperimentConfig, StationaryClass, StepSizePolicy, StudentParams, TeacherParams,
    TrajectoryRecord,
};

/// Which term of the four-way step-size minimum is binding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepTerm {
    /// `(a⁰)ᵀa*‖w*‖² cos φ⁰ / D`
    InitialSignal,
    /// `(g(φ⁰) − 1)‖a*‖²‖w*‖² cos φ⁰ / D`
    AngleKernel,
    /// `cos φ⁰ / D`
    Cosine,
    /// `1 / k`
    InverseWidth,
}

/// Step size from the convergence theorem's bound, with
/// `D = (‖a*‖² + (1ᵀa*)²)‖w*‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeBound {
    pub eta: f64,
    pub binding_term: StepTerm,
    /// The four unscaled terms in [`StepTerm`] order.
    pub terms: [f64; 4],
}

const STEP_TERMS: [StepTerm; 4] = [
    StepTerm::InitialSignal,
    StepTerm::AngleKernel,
    StepTerm::Cosine,
    StepTerm::InverseWidth,
];

fn signal_denominator(t: &TeacherParams) -> f64 {
    let an = t.a_star_norm();
    let s = t.sum_a_star();
    let c = t.w_star_norm();
    (an * an + s * s) * c * c
}

pub fn step_size_auto(s0: &StudentParams, t: &TeacherParams, scale: f64) -> Result<StepSizeBound> {
    if !(scale > 0.0 && scale <= 1.0) {
        return domain(format!("scale must lie in (0, 1], got {scale}"));
    }
    let geo = Geometry::of(s0, t)?;
    let inner = dot(s0.a(), t.a_star());
    if !(geo.phi < FRAC_PI_2) {
        return domain(format!("automatic step size needs φ⁰ < π/2, got {}", geo.phi));
    }
    if !(inner > 0.0) {
        return domain(format!("automatic step size needs (a⁰)ᵀa* > 0, got {inner}"));
    }
    let c2 = t.w_star_norm().powi(2);
    let an2 = t.a_star_norm().powi(2);
    let cos0 = geo.phi.cos();
    let d = signal_denominator(t);
    let terms = [
        inner * c2 * cos0 / d,
        (g_unchecked(geo.phi) - 1.0) * an2 * c2 * cos0 / d,
        cos0 / d,
        1.0 / t.k() as f64,
    ];
    let (idx, min) = terms
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, x)| if x < best.1 { (i, x) } else { best });
    Ok(StepSizeBound {
        eta: scale * min,
        binding_term: STEP_TERMS[idx],
        terms,
    })
}

/// `scale · min{1/k, 1/D}`, usable from any starting point.
pub fn safe_step_size(t: &TeacherParams, scale: f64) -> f64 {
    scale * (1.0 / t.k() as f64).min(1.0 / signal_denominator(t))
}

/// Resolves a policy to a concrete step size for a run starting at `s0`.
pub fn resolve_step_size(s0: &StudentParams, t: &TeacherParams, policy: StepSizePolicy) -> f64 {
    match policy {
        StepSizePolicy::Auto { scale } => step_size_auto(s0, t, scale)
            .map(|b| b.eta)
            .unwrap_or_else(|_| safe_step_size(t, scale)),
        StepSizePolicy::Safe { scale } => safe_step_size(t, scale),
        StepSizePolicy::Fixed { eta } => eta,
    }
}

/// One step of gradient descent; both gradients are taken at the incoming point.
pub fn gd_step(s: &StudentParams, t: &TeacherParams, eta: f64) -> Result<StudentParams> {
    if !(eta > 0.0) {
        return domain(format!("step size must be positive, got {eta}"));
    }
    let geo = Geometry::of(s, t)?;
    let gv = grad_v_at(s.v(), s.a(), t, &geo);
    let ga = grad_a_at(s.a(), t, &geo);
    let (mut v, mut a) = s.clone().into_parts();
    axpy(-eta, &gv, &mut v);
    axpy(-eta, &ga, &mut a);
    StudentParams::new(v, a)
}

/// Which stationary family `s` sits in, within `class_tol`.
pub fn classify_stationary(s: &StudentParams, t: &TeacherParams, class_tol: f64) -> StationaryClass {
    let Ok(phi) = angle(s.v(), t.w_star()) else {
        return StationaryClass::Undetermined;
    };
    Targets::new(t).classify(phi, s.a(), class_tol)
}

/// Second-layer vectors of both stationary families, computed once per run.
struct Targets {
    global: Vec<f64>,
    spurious: Vec<f64>,
    scale: f64,
}

impl Targets {
    fn new(t: &TeacherParams) -> Self {
        let c = t.w_star_norm();
        Self {
            global: t.a_star().iter().map(|x| c * x).collect(),
            spurious: spurious_a(t),
            scale: t.a_star_norm() * c,
        }
    }

    fn classify(&self, phi: f64, a: &[f64], tol: f64) -> StationaryClass {
        if phi <= tol && dist(a, &self.global) <= tol * self.scale {
            StationaryClass::Global
        } else if (phi - PI).abs() <= tol && dist(a, &self.spurious) <= tol * self.scale {
            StationaryClass::SpuriousLocal
        } else {
            StationaryClass::Undetermined
        }
    }
}

/// The invariant checks applied by [`monitor_invariants`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantCheck {
    /// (I) positive second-layer signal never increases the angle.
    AngleMonotone,
    /// (II) positive signal stays positive.
    PositiveSignal,
    /// (III) `1ᵀa*·1ᵀa` stays below `(1ᵀa*)²‖w*‖`.
    BoundedSum,
    /// (IV) one-step contraction of `sin²φ`.
    AngleContraction,
    /// (V) `‖v‖ ≤ 2` when started on the unit sphere.
    FilterNorm,
    /// (VI) exact affine recurrence of `1ᵀa`.
    SumRecurrence,
}

impl InvariantCheck {
    pub fn label(self) -> &'static str {
        match self {
            InvariantCheck::AngleMonotone => "I",
            InvariantCheck::PositiveSignal => "II",
            InvariantCheck::BoundedSum => "III",
            InvariantCheck::AngleContraction => "IV",
            InvariantCheck::FilterNorm => "V",
            InvariantCheck::SumRecurrence => "VI",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub iter: u64,
    pub check: InvariantCheck,
    /// Amount by which the inequality failed.
    pub excess: f64,
}

/// Streaming form of [`monitor_invariants`]: feed records in iteration
/// order with [`observe`](InvariantMonitor::observe).
#[derive(Debug, Clone)]
pub struct InvariantMonitor {
    eta: f64,
    k: f64,
    c: f64,
    s_star: f64,
    sum_bound: f64,
    sum_tol: f64,
    rec_scale: f64,
    a_star_sq: f64,
    d: f64,
    /// `(contraction gate, norm gate)`, fixed by the first record.
    gates: Option<(bool, bool)>,
    prev: Option<TrajectoryRecord>,
    violations: Vec<Violation>,
    total: u64,
}

/// At most this many violations are kept; [`InvariantMonitor::total`]
/// counts all of them.
pub const MAX_STORED_VIOLATIONS: usize = 1000;

impl InvariantMonitor {
    pub fn new(t: &TeacherParams, eta: f64) -> Self {
        let c = t.w_star_norm();
        let s_star = t.sum_a_star();
        let sum_bound = s_star * s_star * c;
        Self {
            eta,
            k: t.k() as f64,
            c,
            s_star,
            sum_bound,
            sum_tol: 1e-12 * sum_bound.max(1.0),
            rec_scale: (t.k() as f64).sqrt() * t.a_star_norm() * c,
            a_star_sq: t.a_star_norm().powi(2),
            d: signal_denominator(t),
            gates: None,
            prev: None,
            violations: Vec::new(),
            total: 0,
        }
    }

    fn flag(&mut self, iter: u64, check: InvariantCheck, excess: f64) {
        self.total += 1;
        if self.violations.len() < MAX_STORED_VIOLATIONS {
            self.violations.push(Violation { iter, check, excess });
        }
    }

    /// Whether the step-size hypotheses of the angle-contraction and
    /// norm bounds hold for `(first record, η)`.
    fn contraction_gate(&self, first: &TrajectoryRecord) -> bool {
        if !(first.phi < FRAC_PI_2 && first.a_dot_astar > 0.0) {
            return false;
        }
        let c2 = self.c * self.c;
        let cos0 = first.phi.cos();
        let beta0 = first.a_dot_astar.min((g_unchecked(first.phi) - 1.0) * self.a_star_sq) * c2;
        let bound = (beta0 * cos0 / self.d).min(cos0 / self.d).min(1.0 / self.k);
        self.eta <= bound * (1.0 + 1e-12)
    }

    pub fn observe(&mut self, next: &TrajectoryRecord) {
        let (gated, norm_gate) = match self.gates {
            Some(g) => g,
            None => {
                let gated = self.contraction_gate(next);
                let g = (gated, gated && (next.v_norm - 1.0).abs() <= 1e-12);
                self.gates = Some(g);
                g
            }
        };
        if norm_gate && next.v_norm > 2.0 {
            self.flag(next.iter, InvariantCheck::FilterNorm, next.v_norm - 2.0);
        }
        let prev = self.prev.replace(*next);
        let Some(cur) = prev else { return };
        // a strided trajectory only gets the per-record checks
        if next.iter != cur.iter + 1 {
            return;
        }
        let (eta, k, c, s_star) = (self.eta, self.k, self.c, self.s_star);

        if cur.a_dot_astar > 0.0 && next.phi > cur.phi + 1e-12 {
            self.flag(next.iter, InvariantCheck::AngleMonotone, next.phi - cur.phi);
        }

        let lifted = s_star * cur.sum_a;
        if cur.a_dot_astar > 0.0
            && (0.0..=self.sum_bound).contains(&lifted)
            && cur.phi > 0.0
            && cur.phi < FRAC_PI_2
            && eta < 2.0
            && !(next.a_dot_astar > 0.0)
        {
            self.flag(next.iter, InvariantCheck::PositiveSignal, -next.a_dot_astar);
        }

        if lifted <= self.sum_bound && eta < 2.0 * PI / (k + PI - 1.0) {
            let excess = s_star * next.sum_a - self.sum_bound;
            if excess > self.sum_tol {
                self.flag(next.iter, InvariantCheck::BoundedSum, excess);
            }
        }

        if gated && cur.phi < FRAC_PI_2 && cur.a_dot_astar > 0.0 {
            let lambda =
                c * (PI - cur.phi) * cur.a_dot_astar / (2.0 * PI * cur.v_norm * cur.v_norm);
            let bound = (1.0 - eta * cur.phi.cos() * lambda) * cur.sin2phi();
            let excess = next.sin2phi() - bound;
            if excess > 1e-12 {
                self.flag(next.iter, InvariantCheck::AngleContraction, excess);
            }
        }

        let predicted = (1.0 - eta * (k + PI - 1.0) / (2.0 * PI)) * cur.sum_a
            + eta * (k + g_unchecked(cur.phi) - 1.0) / (2.0 * PI) * c * s_star;
        let scale = next.sum_a.abs().max(predicted.abs()).max(self.rec_scale);
        let err = (next.sum_a - predicted).abs();
        if err > 1e-10 * scale {
            self.flag(next.iter, InvariantCheck::SumRecurrence, err / scale);
        }
    }

    /// Number of violations seen, including any not stored.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn into_violations(self) -> Vec<Violation> {
        self.violations
    }
}

/// Checks invariants (I)–(VI) on every consecutive pair of records.
///
/// Pairs whose iteration indices are not adjacent are skipped, so a strided
/// trajectory only gets the per-record checks.
pub fn monitor_invariants(
    trajectory: &[TrajectoryRecord],
    t: &TeacherParams,
    eta: f64,
) -> Vec<Violation> {
    let mut m = InvariantMonitor::new(t, eta);
    trajectory.iter().for_each(|r| m.observe(r));
    m.into_violations()
}

/// First recorded iteration with `cos φ ≥ cos_threshold` and
/// `aᵀa*‖w*‖ ≥ signal_threshold·‖a*‖²‖w*‖²`.
pub fn detect_phases(
    trajectory: &[TrajectoryRecord],
    t: &TeacherParams,
    cos_threshold: f64,
    signal_threshold: f64,
) -> Option<u64> {
    let c = t.w_star_norm();
    let target = signal_threshold * t.loss_scale();
    trajectory
        .iter()
        .find(|r| r.phi.cos() >= cos_threshold && r.a_dot_astar * c >= target)
        .map(|r| r.iter)
}

/// Decay rates of `sin²φ` on either side of a phase boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRates {
    /// Median per-iteration rate `ln(sin²φᵗ / sin²φᵗ⁺¹)` before the boundary.
    pub pre: f64,
    /// Average geometric rate from the boundary until `sin²φ` reaches
    /// [`SIN2_FLOOR`].
    pub post: f64,
}

impl PhaseRates {
    pub fn ratio(&self) -> f64 {
        self.post / self.pre
    }
}

/// Below this, `sin²φ` is dominated by rounding and no longer informative.
pub const SIN2_FLOOR: f64 = 1e-20;

pub fn phase_rates(trajectory: &[TrajectoryRecord], boundary: u64) -> Option<PhaseRates> {
    let split = trajectory.iter().position(|r| r.iter >= boundary)?;
    let mut pre: Vec<f64> = trajectory[..=split]
        .windows(2)
        .filter(|w| w[1].iter > w[0].iter)
        .map(|w| (w[0].sin2phi() / w[1].sin2phi()).ln() / (w[1].iter - w[0].iter) as f64)
        .collect();
    if pre.is_empty() {
        return None;
    }
    pre.sort_by(f64::total_cmp);
    let pre = pre[pre.len() / 2];

    let start = &trajectory[split];
    let end = trajectory[split..]
        .iter()
        .take_while(|r| r.sin2phi() >= SIN2_FLOOR)
        .last()?;
    if end.iter == start.iter {
        return None;
    }
    let post = (start.sin2phi() / end.sin2phi()).ln() / (end.iter - start.iter) as f64;
    Some(PhaseRates { pre, post })
}

/// Outcome of [`run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub trajectory: Vec<TrajectoryRecord>,
    pub final_point: StudentParams,
    pub class: StationaryClass,
    pub iters_run: u64,
    pub phase1_end: Option<u64>,
    /// Violations found by the per-iteration monitor (empty when
    /// monitoring is off); at most [`MAX_STORED_VIOLATIONS`] are kept.
    pub invariant_violations: Vec<Violation>,
    /// Total violations, including any not stored.
    pub violation_count: u64,
    pub eta: f64,
    /// True when the gradient tolerance was reached.
    pub converged: bool,
}

/// How often the classification stop is evaluated.
const CLASSIFY_EVERY: u64 = 64;

#[allow(clippy::too_many_arguments)]
fn observe(
    iter: u64,
    v: &[f64],
    a: &[f64],
    t: &TeacherParams,
    geo: &Geometry,
    gv: &[f64],
    ga: &[f64],
    global: &[f64],
) -> TrajectoryRecord {
    let sum_a = sum(a);
    TrajectoryRecord {
        iter,
        phi: geo.phi,
        a_dot_astar: dot(a, t.a_star()),
        sum_a,
        v_norm: norm(v),
        loss: loss_at(a, t, geo),
        grad_v_norm: norm(gv),
        grad_a_norm: norm(ga),
        dist_a: dist(a, global),
        sum_gap: (sum_a - sum(global)).abs(),
    }
}

/// Runs gradient descent from `s0` until the combined gradient norm drops
/// below `grad_tol·‖a*‖‖w*‖`, the iteration cap is hit, or (with
/// `stop_when_classified`) the iterate has settled into one of the two
/// stationary families.
pub fn run(s0: &StudentParams, t: &TeacherParams, cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    t.check_student(s0)?;
    let eta = resolve_step_size(s0, t, cfg.step_size_policy);
    let targets = Targets::new(t);
    let tol = cfg.grad_tol * targets.scale;
    let (mut v, mut a) = s0.clone().into_parts();
    let mut trajectory = Vec::new();
    let mut gv = vec![0.0; v.len()];
    let mut ga = vec![0.0; a.len()];
    let mut monitor = cfg.monitor.then(|| InvariantMonitor::new(t, eta));
    let mut iter = 0u64;
    let mut converged;
    let mut class = None;

    loop {
        let geo = Geometry {
            phi: angle(&v, t.w_star())?,
            v_norm: norm(&v),
            w_star_norm: t.w_star_norm(),
        };
        grad_v_into(&v, &a, t, &geo, &mut gv);
        grad_a_into(&a, t, &geo, &mut ga);
        let gnorm = norm(&gv) + norm(&ga);
        let finite = gnorm.is_finite();
        converged = finite && gnorm <= tol;
        let mut stop = converged || !finite || iter >= cfg.max_iters;
        if !stop && cfg.stop_when_classified && iter % CLASSIFY_EVERY == 0 {
            match targets.classify(geo.phi, &a, cfg.class_tol) {
                StationaryClass::Global => stop = true,
                StationaryClass::SpuriousLocal if dot(&a, t.a_star()) < 0.0 => stop = true,
                _ => {}
            }
        }
        let keep = stop || iter % cfg.stride == 0;
        if keep || monitor.is_some() {
            let rec = observe(iter, &v, &a, t, &geo, &gv, &ga, &targets.global);
            if let Some(m) = monitor.as_mut() {
                m.observe(&rec);
            }
            if keep {
                trajectory.push(rec);
            }
        }
        if stop {
            if finite {
                class = Some(targets.classify(geo.phi, &a, cfg.class_tol));
            }
            break;
        }
        axpy(-eta, &gv, &mut v);
        axpy(-eta, &ga, &mut a);
        iter += 1;
    }

    let class = class.unwrap_or(StationaryClass::Undetermined);
    let phase1_end = detect_phases(&trajectory, t, cfg.phase_cos, cfg.phase_signal);
    let violation_count = monitor.as_ref().map_or(0, InvariantMonitor::total);
    let invariant_violations = monitor.map(InvariantMonitor::into_violations).unwrap_or_default();
    // a diverged run keeps its non-finite final iterate for inspection
    let final_point = StudentParams::from_parts_unchecked(v, a);
    Ok(RunResult {
        trajectory,
        final_point,
        class,
        iters_run: iter,
        phase1_end,
        invariant_violations,
        violation_count,
        eta,
        converged,
    })
}
