//! Random initialization and sign-variant selection.
//!
//! A raw draw is `v ~ unif(S^{p−1})` and `a ~ unif(B(0, r))` with
//! `r = |1ᵀa*|‖w*‖/√k`. Of its four sign variants, one satisfies the
//! good-basin conditions and, for teachers with small `(1ᵀa*)²/‖a*‖²`,
//! another satisfies the bad-basin conditions.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::g_unchecked;
use crate::linalg::{dot, scaled, unit_sphere};
use crate::model::{angle, StudentParams, TeacherParams};

/// Ball radius for the second layer. When `1ᵀa*` vanishes (relative to
/// `‖a*‖√k`) the radius falls back to `zero_sum_radius·‖a*‖‖w*‖/√k`.
pub fn init_radius(t: &TeacherParams, zero_sum_radius: f64) -> f64 {
    let k = (t.k() as f64).sqrt();
    let s = t.sum_a_star().abs();
    if s <= 1e-12 * t.a_star_norm() * k {
        zero_sum_radius * t.a_star_norm() * t.w_star_norm() / k
    } else {
        s * t.w_star_norm() / k
    }
}

/// Raw draw: unit-sphere `v` and uniform-in-ball `a` (direction times
/// `radius·U^{1/k}`).
pub fn sample_init<R: Rng + ?Sized>(
    p: usize,
    k: usize,
    t: &TeacherParams,
    zero_sum_radius: f64,
    rng: &mut R,
) -> StudentParams {
    let v = unit_sphere(rng, p);
    let dir = unit_sphere(rng, k);
    let u: f64 = rng.random();
    let r = init_radius(t, zero_sum_radius) * u.powf(1.0 / k as f64);
    StudentParams::new(v, scaled(&dir, r)).expect("unit-sphere sample is nonzero")
}

/// `(v,a), (v,−a), (−v,a), (−v,−a)` in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignVariants {
    pub variants: [StudentParams; 4],
}

pub fn sign_variants(s: &StudentParams) -> SignVariants {
    let flip = |x: &[f64], sign: f64| x.iter().map(|y| sign * y).collect::<Vec<_>>();
    let mk = |sv: f64, sa: f64| {
        StudentParams::new(flip(s.v(), sv), flip(s.a(), sa)).expect("sign flips keep norms")
    };
    SignVariants {
        variants: [mk(1.0, 1.0), mk(1.0, -1.0), mk(-1.0, 1.0), mk(-1.0, -1.0)],
    }
}

/// The variant with `(a⁰)ᵀa* > 0` and `φ⁰ < π/2`.
///
/// The third good-basin condition, `|1ᵀa⁰| ≤ |1ᵀa*|‖w*‖`, holds for every
/// variant of a [`sample_init`] draw by the choice of ball radius. Returns
/// `None` on the measure-zero ties `(a⁰)ᵀa* = 0` or `φ⁰ = π/2`.
pub fn select_good_variant(sv: &SignVariants, t: &TeacherParams) -> Option<StudentParams> {
    sv.variants
        .iter()
        .find(|s| {
            angle(s.v(), t.w_star()).is_ok_and(|phi| phi < FRAC_PI_2)
                && dot(s.a(), t.a_star()) > 0.0
        })
        .cloned()
}

/// The variant with `(a⁰)ᵀa* < 0` and `g(φ⁰) ≤ 1 − 2(1ᵀa*)²/‖a*‖²`, if any.
pub fn select_bad_variant(sv: &SignVariants, t: &TeacherParams) -> Option<StudentParams> {
    let threshold = 1.0 - 2.0 * t.ratio();
    sv.variants
        .iter()
        .find(|s| {
            angle(s.v(), t.w_star()).is_ok_and(|phi| g_unchecked(phi) <= threshold)
                && dot(s.a(), t.a_star()) < 0.0
        })
        .cloned()
}
