//! Small dense vector helpers. Every vector here has at most a few hundred
//! entries, so plain slices are enough.

use rand::Rng;
use rand_distr::StandardNormal;

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

#[inline]
pub fn sum(x: &[f64]) -> f64 {
    x.iter().sum()
}

pub fn scaled(x: &[f64], c: f64) -> Vec<f64> {
    x.iter().map(|v| v * c).collect()
}

/// `y += c * x`
#[inline]
pub fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// A uniformly distributed unit vector in `R^n`.
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let g = gaussian_vec(rng, n);
        let nrm = norm(&g);
        if nrm > 1e-12 {
            return scaled(&g, 1.0 / nrm);
        }
    }
}
