//! Sample-based oracle for the closed forms.
//!
//! Draws standard Gaussian patches, evaluates per-sample losses and
//! gradients, and reports batch means with plug-in standard errors. Work is
//! split into fixed-size chunks; chunk `c` draws from the stream
//! `(seed, c)` and chunk statistics are merged in chunk order, so results do
//! not depend on the number of worker threads.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::g_unchecked;
use crate::error::{domain, Error, Result};
use crate::linalg::{dot, norm, scaled};
use crate::model::{angle, StudentParams, TeacherParams};
use crate::rng::stream;

/// Samples per chunk.
pub const CHUNK: usize = 4096;

const PATCH_TAG: u64 = 0x5041_5443;
const IDENTITY_TAG: u64 = 0x4944_454E;
const GRAM_TAG: u64 = 0x4752_414D;

/// `n` independent inputs, each `k` patches of `p` standard normals,
/// stored sample-major then patch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    n: usize,
    k: usize,
    p: usize,
    data: Vec<f64>,
}

impl PatchBatch {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The `k×p` block of sample `i`.
    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.k * self.p;
        &self.data[i * len..(i + 1) * len]
    }

    fn check(&self, s: &StudentParams, t: &TeacherParams) -> Result<()> {
        t.check_student(s)?;
        if self.k != t.k() {
            return Err(Error::DimensionMismatch {
                what: "batch patch count k",
                expected: t.k(),
                got: self.k,
            });
        }
        if self.p != t.p() {
            return Err(Error::DimensionMismatch {
                what: "batch patch length p",
                expected: t.p(),
                got: self.p,
            });
        }
        Ok(())
    }
}

/// Sample mean and standard error of a vector-valued statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub n: usize,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

impl Estimate {
    /// Entrywise `(mean − reference) / std_err`.
    pub fn z_scores(&self, reference: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std_err)
            .zip(reference)
            .map(|((m, se), r)| z_score(*m, *r, *se))
            .collect()
    }

    pub fn max_abs_z(&self, reference: &[f64]) -> f64 {
        self.z_scores(reference)
            .into_iter()
            .fold(0.0, |acc, z| acc.max(z.abs()))
    }
}

fn z_score(mean: f64, reference: f64, se: f64) -> f64 {
    let diff = mean - reference;
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Streaming mean/variance (Welford), mergeable with Chan's update.
#[derive(Debug, Clone)]
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, m2), xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = xi - *m;
            *m += d / self.n;
            *m2 += d * (xi - *m);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.n == 0.0 {
            return;
        }
        let n = self.n + other.n;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * other.n / n;
            self.m2[i] += other.m2[i] + d * d * self.n * other.n / n;
        }
        self.n = n;
    }

    fn finish(self) -> Estimate {
        let n = self.n;
        let std_err = self
            .m2
            .iter()
            .map(|m2| if n > 1.0 { (m2 / (n - 1.0) / n).sqrt() } else { 0.0 })
            .collect();
        Estimate {
            n: n as usize,
            mean: self.mean,
            std_err,
        }
    }
}

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK))
        .map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n)))
        .collect()
}

/// Runs `eval(sample, out)` over freshly drawn samples of `sample_len`
/// standard normals and returns the moments of `out`.
fn stream_estimate<F>(n: usize, sample_len: usize, dim: usize, seed: u64, tag: u64, eval: F) -> Estimate
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let parts: Vec<Moments> = chunk_ranges(n)
        .into_par_iter()
        .enumerate()
        .map(|(c, (lo, hi))| {
            let mut rng = stream(seed, &[tag, c as u64]);
            let mut z = vec![0.0; sample_len];
            let mut out = vec![0.0; dim];
            let mut acc = Moments::new(dim);
            for _ in lo..hi {
                z.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
                eval(&z, &mut out);
                acc.push(&out);
            }
            acc
        })
        .collect();
    reduce(parts, dim)
}

/// Same as [`stream_estimate`] over the samples of a materialized batch.
fn batch_estimate<F>(batch: &PatchBatch, dim: usize, eval: F) -> Estimate
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let parts: Vec<Moments> = chunk_ranges(batch.n)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut out = vec![0.0; dim];
            let mut acc = Moments::new(dim);
            for i in lo..hi {
                eval(batch.sample(i), &mut out);
                acc.push(&out);
            }
            acc
        })
        .collect();
    reduce(parts, dim)
}

fn reduce(parts: Vec<Moments>, dim: usize) -> Estimate {
    let mut total = Moments::new(dim);
    for part in &parts {
        total.merge(part);
    }
    total.finish()
}

pub fn sample_patches(n: usize, k: usize, p: usize, seed: u64) -> Result<PatchBatch> {
    if n == 0 || k == 0 || p == 0 {
        return domain("n, k and p must all be at least 1");
    }
    let len = k * p;
    let mut data = vec![0.0; n * len];
    data.par_chunks_mut(CHUNK * len)
        .enumerate()
        .for_each(|(c, block)| {
            let mut rng = stream(seed, &[PATCH_TAG, c as u64]);
            block.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        });
    Ok(PatchBatch { n, k, p, data })
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Per-sample network outputs and pre-activations.
struct Forward {
    /// `Zᵢᵀw` for the unit student filter
    pre: Vec<f64>,
    residual: f64,
}

fn forward(z: &[f64], w: &[f64], a: &[f64], w_star: &[f64], a_star: &[f64]) -> Forward {
    let p = w.len();
    let mut pre = Vec::with_capacity(a.len());
    let (mut f, mut f_star) = (0.0, 0.0);
    for (i, patch) in z.chunks_exact(p).enumerate() {
        let h = dot(patch, w);
        pre.push(h);
        f += a[i] * relu(h);
        f_star += a_star[i] * relu(dot(patch, w_star));
    }
    Forward {
        pre,
        residual: f - f_star,
    }
}

/// Everything the per-sample evaluators need, in normalized form.
struct Prepared<'a> {
    w: Vec<f64>,
    v: &'a [f64],
    v_norm: f64,
    a: &'a [f64],
    w_star: &'a [f64],
    a_star: &'a [f64],
}

impl<'a> Prepared<'a> {
    fn new(s: &'a StudentParams, t: &'a TeacherParams) -> Self {
        let v_norm = norm(s.v());
        Self {
            w: scaled(s.v(), 1.0 / v_norm),
            v: s.v(),
            v_norm,
            a: s.a(),
            w_star: t.w_star(),
            a_star: t.a_star(),
        }
    }

    fn loss(&self, z: &[f64]) -> f64 {
        let r = forward(z, &self.w, self.a, self.w_star, self.a_star).residual;
        0.5 * r * r
    }

    /// Writes `[∂ℓ/∂w (p entries), ∂ℓ/∂a (k entries)]`.
    fn grad_w_a(&self, z: &[f64], out: &mut [f64]) {
        let p = self.w.len();
        let fw = forward(z, &self.w, self.a, self.w_star, self.a_star);
        let (gw, ga) = out.split_at_mut(p);
        gw.iter_mut().for_each(|x| *x = 0.0);
        for (i, patch) in z.chunks_exact(p).enumerate() {
            let h = fw.pre[i];
            ga[i] = fw.residual * relu(h);
            // ReLU derivative at exactly zero is taken as 0
            if h > 0.0 {
                let c = fw.residual * self.a[i];
                gw.iter_mut().zip(patch).for_each(|(g, zi)| *g += c * zi);
            }
        }
    }

    /// `(1/‖v‖)(I − vvᵀ/‖v‖²) g`
    fn project(&self, g: &[f64]) -> Vec<f64> {
        let vv = self.v_norm * self.v_norm;
        let mut out = g.to_vec();
        for _ in 0..2 {
            let c = dot(&out, self.v) / vv;
            out.iter_mut().zip(self.v).for_each(|(o, vi)| *o -= c * vi);
        }
        out.iter_mut().for_each(|x| *x /= self.v_norm);
        out
    }
}

/// Batch-averaged squared-error loss.
pub fn empirical_loss(batch: &PatchBatch, s: &StudentParams, t: &TeacherParams) -> Result<f64> {
    Ok(empirical_loss_estimate(batch, s, t)?.mean[0])
}

/// [`empirical_loss`] with its standard error.
pub fn empirical_loss_estimate(
    batch: &PatchBatch,
    s: &StudentParams,
    t: &TeacherParams,
) -> Result<Estimate> {
    batch.check(s, t)?;
    let prep = Prepared::new(s, t);
    Ok(batch_estimate(batch, 1, |z, out| out[0] = prep.loss(z)))
}

/// Batch-averaged gradients `(∂/∂v, ∂/∂a)`. The `v` part is the
/// weight-normalization projection of the averaged `w` gradient.
pub fn empirical_grad(
    batch: &PatchBatch,
    s: &StudentParams,
    t: &TeacherParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    batch.check(s, t)?;
    let prep = Prepared::new(s, t);
    let p = s.p();
    let est = batch_estimate(batch, p + s.k(), |z, out| prep.grad_w_a(z, out));
    let gv = prep.project(&est.mean[..p]);
    Ok((gv, est.mean[p..].to_vec()))
}

/// Per-coordinate estimates of the `v` and `a` gradients.
pub fn empirical_grad_estimate(
    batch: &PatchBatch,
    s: &StudentParams,
    t: &TeacherParams,
) -> Result<(Estimate, Estimate)> {
    batch.check(s, t)?;
    let prep = Prepared::new(s, t);
    let (p, k) = (s.p(), s.k());
    let est = batch_estimate(batch, p + k, |z, out| {
        prep.grad_w_a(z, out);
        let gv = prep.project(&out[..p]);
        out[..p].copy_from_slice(&gv);
    });
    let split = |lo: usize, hi: usize| Estimate {
        n: est.n,
        mean: est.mean[lo..hi].to_vec(),
        std_err: est.std_err[lo..hi].to_vec(),
    };
    Ok((split(0, p), split(p, p + k)))
}

/// The four Gaussian identities behind the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Identity {
    /// `E[zzᵀ1{zᵀw ≥ 0}]w = w/2`
    HalfSecondMoment = 1,
    /// `E[z·1{zᵀw ≥ 0}] = w/(√(2π)‖w‖)`
    HalfMean = 2,
    /// `E[zzᵀ1{zᵀw ≥ 0, zᵀw* ≥ 0}]w* = ((π−φ)/2π)w* + (sin φ/2π)(‖w*‖/‖w‖)w`
    JointSecondMoment = 3,
    /// `E[σ(zᵀw)σ(zᵀw*)] = g(φ)‖w‖‖w*‖/2π`
    ReluCorrelation = 4,
}

impl Identity {
    pub const ALL: [Identity; 4] = [
        Identity::HalfSecondMoment,
        Identity::HalfMean,
        Identity::JointSecondMoment,
        Identity::ReluCorrelation,
    ];

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Identity::HalfSecondMoment),
            2 => Ok(Identity::HalfMean),
            3 => Ok(Identity::JointSecondMoment),
            4 => Ok(Identity::ReluCorrelation),
            other => domain(format!("identity id must be 1..=4, got {other}")),
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    /// Right-hand side.
    pub fn closed_form(self, w: &[f64], w_star: &[f64]) -> Result<Vec<f64>> {
        let phi = angle(w, w_star)?;
        let (nw, ns) = (norm(w), norm(w_star));
        Ok(match self {
            Identity::HalfSecondMoment => scaled(w, 0.5),
            Identity::HalfMean => scaled(w, 1.0 / ((2.0 * PI).sqrt() * nw)),
            Identity::JointSecondMoment => w_star
                .iter()
                .zip(w)
                .map(|(s, x)| (PI - phi) / (2.0 * PI) * s + phi.sin() / (2.0 * PI) * ns / nw * x)
                .collect(),
            Identity::ReluCorrelation => vec![g_unchecked(phi) * nw * ns / (2.0 * PI)],
        })
    }

    /// Per-sample integrand of the left-hand side.
    fn integrand(self, z: &[f64], w: &[f64], w_star: &[f64], out: &mut [f64]) {
        let hw = dot(z, w);
        let hs = dot(z, w_star);
        match self {
            Identity::HalfSecondMoment => {
                let c = relu(hw);
                out.iter_mut().zip(z).for_each(|(o, zi)| *o = c * zi);
            }
            Identity::HalfMean => {
                let c = if hw >= 0.0 { 1.0 } else { 0.0 };
                out.iter_mut().zip(z).for_each(|(o, zi)| *o = c * zi);
            }
            Identity::JointSecondMoment => {
                let c = if hw >= 0.0 && hs >= 0.0 { hs } else { 0.0 };
                out.iter_mut().zip(z).for_each(|(o, zi)| *o = c * zi);
            }
            Identity::ReluCorrelation => out[0] = relu(hw) * relu(hs),
        }
    }

    fn dim(self, p: usize) -> usize {
        match self {
            Identity::ReluCorrelation => 1,
            _ => p,
        }
    }
}

/// Outcome of one Monte-Carlo identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheckReport {
    pub identity_id: u8,
    pub estimate: Vec<f64>,
    pub closed_form: Vec<f64>,
    pub std_err: Vec<f64>,
    pub max_abs_z_score: f64,
}

/// Minimum sample count accepted by [`check_identity`].
pub const MIN_IDENTITY_SAMPLES: usize = 10_000;

pub fn check_identity(
    identity_id: u8,
    w: &[f64],
    w_star: &[f64],
    n: usize,
    seed: u64,
) -> Result<IdentityCheckReport> {
    let id = Identity::from_id(identity_id)?;
    if n < MIN_IDENTITY_SAMPLES {
        return domain(format!("identity checks need n ≥ {MIN_IDENTITY_SAMPLES}, got {n}"));
    }
    let closed_form = id.closed_form(w, w_star)?;
    let p = w.len();
    let est = stream_estimate(n, p, id.dim(p), seed, IDENTITY_TAG + id.id() as u64, |z, out| {
        id.integrand(z, w, w_star, out)
    });
    Ok(IdentityCheckReport {
        identity_id: id.id(),
        max_abs_z_score: est.max_abs_z(&closed_form),
        estimate: est.mean,
        closed_form,
        std_err: est.std_err,
    })
}

/// Monte-Carlo estimates of `A(w)` and `B(w, w*)`, flattened row-major.
pub fn gram_estimate(
    w: &[f64],
    w_star: &[f64],
    k: usize,
    n: usize,
    seed: u64,
) -> Result<(Estimate, Estimate)> {
    if k == 0 || n == 0 {
        return domain("k and n must be at least 1");
    }
    angle(w, w_star)?;
    let p = w.len();
    let est = stream_estimate(n, k * p, 2 * k * k, seed, GRAM_TAG, |z, out| {
        let hw: Vec<f64> = z.chunks_exact(p).map(|zi| relu(dot(zi, w))).collect();
        let hs: Vec<f64> = z.chunks_exact(p).map(|zi| relu(dot(zi, w_star))).collect();
        let (oa, ob) = out.split_at_mut(k * k);
        for i in 0..k {
            for j in 0..k {
                oa[i * k + j] = hw[i] * hw[j];
                ob[i * k + j] = hw[i] * hs[j];
            }
        }
    });
    let half = |lo: usize, hi: usize| Estimate {
        n: est.n,
        mean: est.mean[lo..hi].to_vec(),
        std_err: est.std_err[lo..hi].to_vec(),
    };
    Ok((half(0, k * k), half(k * k, 2 * k * k)))
}
