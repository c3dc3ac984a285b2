//! Closed-form population loss and gradients under standard Gaussian patches.
//!
//! Everything is built from two `k×k` Gram matrices,
//! `A(w) = E[σ(Zw)σ(Zw)ᵀ]` and `B(w, w*) = E[σ(Zw)σ(Zw*)ᵀ]`, each of the form
//! `c·(11ᵀ + d·I)`. [`KernelMatrix`] stores that structure so products are
//! O(k).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::linalg::{dot, norm, sum};
use crate::model::{angle, StudentParams, TeacherParams};

const TWO_PI: f64 = 2.0 * PI;

/// The angle kernel `g(φ) = (π − φ)cos φ + sin φ`.
pub fn g_phi(phi: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&phi) {
        return domain(format!("g(φ) requires φ ∈ [0, π], got {phi}"));
    }
    Ok(g_unchecked(phi))
}

#[inline]
pub(crate) fn g_unchecked(phi: f64) -> f64 {
    (PI - phi) * phi.cos() + phi.sin()
}

/// `π − g(φ)` without the cancellation near `φ = 0`.
fn pi_minus_g(phi: f64) -> f64 {
    let half = (0.5 * phi).sin();
    // sin φ − φ cos φ
    let h = if phi < 0.1 {
        let p2 = phi * phi;
        phi * p2 * (1.0 / 3.0 - p2 * (1.0 / 30.0 - p2 * (1.0 / 840.0 - p2 / 45360.0)))
    } else {
        phi.sin() - phi * phi.cos()
    };
    2.0 * PI * half * half - h
}

/// A `k×k` matrix `ones·11ᵀ + diag·I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub k: usize,
    pub ones: f64,
    pub diag: f64,
}

impl KernelMatrix {
    /// `scale·(11ᵀ + shift·I)`
    pub fn scaled_kernel(k: usize, scale: f64, shift: f64) -> Self {
        Self {
            k,
            ones: scale,
            diag: scale * shift,
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.ones + self.diag
        } else {
            self.ones
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let s = self.ones * sum(x);
        x.iter().map(|xi| s + self.diag * xi).collect()
    }

    /// `xᵀ M y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.ones * sum(x) * sum(y) + self.diag * dot(x, y)
    }

    pub fn sub(&self, other: &KernelMatrix) -> KernelMatrix {
        debug_assert_eq!(self.k, other.k);
        KernelMatrix {
            k: self.k,
            ones: self.ones - other.ones,
            diag: self.diag - other.diag,
        }
    }

    pub fn scale(&self, c: f64) -> KernelMatrix {
        KernelMatrix {
            k: self.k,
            ones: self.ones * c,
            diag: self.diag * c,
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.entry(i, j)).collect())
            .collect()
    }
}

/// `A(w)` and `B(w, w*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramPair {
    pub a_w: KernelMatrix,
    pub b_ww: KernelMatrix,
}

impl GramPair {
    /// Gram pair from the norms of `w`, `w*` and the angle between them.
    pub fn from_geometry(w_norm: f64, w_star_norm: f64, phi: f64, k: usize) -> Self {
        Self {
            a_w: KernelMatrix::scaled_kernel(k, w_norm * w_norm / TWO_PI, PI - 1.0),
            b_ww: KernelMatrix::scaled_kernel(
                k,
                w_norm * w_star_norm / TWO_PI,
                g_unchecked(phi) - 1.0,
            ),
        }
    }
}

pub fn gram_matrices(w: &[f64], w_star: &[f64], k: usize) -> Result<GramPair> {
    if k == 0 {
        return domain("k must be at least 1");
    }
    let phi = angle(w, w_star)?;
    Ok(GramPair::from_geometry(norm(w), norm(w_star), phi, k))
}

fn check(s: &StudentParams, t: &TeacherParams) -> Result<()> {
    t.check_student(s)
}

/// Quantities every closed form below needs, computed once per point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub phi: f64,
    pub v_norm: f64,
    pub w_star_norm: f64,
}

impl Geometry {
    pub fn of(s: &StudentParams, t: &TeacherParams) -> Result<Self> {
        check(s, t)?;
        Ok(Self {
            phi: angle(s.v(), t.w_star())?,
            v_norm: norm(s.v()),
            w_star_norm: t.w_star_norm(),
        })
    }
}

/// Population loss `½ E[(f(Z,v,a) − f(Z,w*,a*))²]`.
///
/// Evaluated from the Gram pair of the unit filter `w = v/‖v‖₂`:
/// `½[a*ᵀA(w*)a* + aᵀA(w)a − 2aᵀB(w,w*)a*]`. Since `A(w*) = ‖w*‖²A(w)` this
/// regroups as `½[rᵀA(w)r + 2aᵀ(‖w*‖A(w) − B)a*]` with `r = a − ‖w*‖a*`, which
/// is what gets computed: both pieces vanish exactly at the global minimum.
pub fn population_loss(s: &StudentParams, t: &TeacherParams) -> Result<f64> {
    let geo = Geometry::of(s, t)?;
    Ok(loss_at(s.a(), t, &geo))
}

pub(crate) fn loss_at(a: &[f64], t: &TeacherParams, geo: &Geometry) -> f64 {
    let c = geo.w_star_norm;
    let a_w = KernelMatrix::scaled_kernel(a.len(), 1.0 / TWO_PI, PI - 1.0);
    let r: Vec<f64> = a.iter().zip(t.a_star()).map(|(x, y)| x - c * y).collect();
    // c·A(w) − B is diagonal: c(π − g(φ))/(2π)·I
    let cross = c * pi_minus_g(geo.phi) / TWO_PI;
    0.5 * a_w.bilinear(&r, &r) + cross * dot(a, t.a_star())
}

/// Expected gradient with respect to `v`:
/// `−(1/(2π‖v‖))(I − vvᵀ/‖v‖²)(aᵀa*)(π − φ)w*`. Always orthogonal to `v`.
pub fn grad_v(s: &StudentParams, t: &TeacherParams) -> Result<Vec<f64>> {
    let geo = Geometry::of(s, t)?;
    Ok(grad_v_at(s.v(), s.a(), t, &geo))
}

pub(crate) fn grad_v_at(v: &[f64], a: &[f64], t: &TeacherParams, geo: &Geometry) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    grad_v_into(v, a, t, geo, &mut out);
    out
}

pub(crate) fn grad_v_into(v: &[f64], a: &[f64], t: &TeacherParams, geo: &Geometry, out: &mut [f64]) {
    let coef = -dot(a, t.a_star()) * (PI - geo.phi) / (TWO_PI * geo.v_norm);
    project_out_into(t.w_star(), v, geo.v_norm, out);
    out.iter_mut().for_each(|x| *x *= coef);
}

/// `(I − vvᵀ/‖v‖²) x`, projected twice so the result is orthogonal to `v` to
/// working precision even when `x` is nearly parallel to `v`.
fn project_out_into(x: &[f64], v: &[f64], v_norm: f64, out: &mut [f64]) {
    let vv = v_norm * v_norm;
    out.copy_from_slice(x);
    for _ in 0..2 {
        let c = dot(out, v) / vv;
        out.iter_mut().zip(v).for_each(|(o, vi)| *o -= c * vi);
    }
}

/// Expected gradient with respect to `a`:
/// `(1/2π)(11ᵀ + (π−1)I)a − (1/2π)(11ᵀ + (g(φ)−1)I)‖w*‖a*`.
pub fn grad_a(s: &StudentParams, t: &TeacherParams) -> Result<Vec<f64>> {
    let geo = Geometry::of(s, t)?;
    Ok(grad_a_at(s.a(), t, &geo))
}

pub(crate) fn grad_a_at(a: &[f64], t: &TeacherParams, geo: &Geometry) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    grad_a_into(a, t, geo, &mut out);
    out
}

pub(crate) fn grad_a_into(a: &[f64], t: &TeacherParams, geo: &Geometry, out: &mut [f64]) {
    let c = geo.w_star_norm;
    let gm1 = g_unchecked(geo.phi) - 1.0;
    let shared = (sum(a) - c * t.sum_a_star()) / TWO_PI;
    for ((o, ai), si) in out.iter_mut().zip(a).zip(t.a_star()) {
        *o = shared + ((PI - 1.0) * ai - gm1 * c * si) / TWO_PI;
    }
}

/// Second layer of the spurious stationary family at `φ = π`:
/// `(11ᵀ + (π−1)I)⁻¹(11ᵀ − I)‖w*‖a*`, using
/// `(11ᵀ + (π−1)I)⁻¹ = (I − 11ᵀ/(k+π−1))/(π−1)`.
pub fn spurious_a(t: &TeacherParams) -> Vec<f64> {
    let k = t.k() as f64;
    let c = t.w_star_norm();
    let s = t.sum_a_star();
    // y = (11ᵀ − I) c a*, and 1ᵀy = c s (k − 1)
    let sum_y = c * s * (k - 1.0);
    let shift = sum_y / (k + PI - 1.0);
    t.a_star()
        .iter()
        .map(|ai| (c * (s - ai) - shift) / (PI - 1.0))
        .collect()
}

/// The spurious stationary point with `v = −w*`.
pub fn spurious_point(t: &TeacherParams) -> StudentParams {
    let v = t.w_star().iter().map(|x| -x).collect();
    StudentParams::new(v, spurious_a(t)).expect("teacher filter is nonzero")
}

/// Both gradients at once, sharing the angle computation.
pub fn gradients(s: &StudentParams, t: &TeacherParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let geo = Geometry::of(s, t)?;
    Ok((grad_v_at(s.v(), s.a(), t, &geo), grad_a_at(s.a(), t, &geo)))
}
