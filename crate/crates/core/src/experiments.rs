//! Trajectory and success-probability experiments, with CSV and JSON output.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{phase_rates, run, PhaseRates, RunResult, Violation};
use crate::error::{Error, Result};
use crate::init::{sample_init, select_bad_variant, select_good_variant, sign_variants};
use crate::model::{
    make_target_a, ExperimentConfig, InitScheme, StationaryClass, StudentParams, TeacherParams,
    TrajectoryRecord,
};
use crate::linalg::{scaled, unit_sphere};
use crate::rng::{stream, SimRng};

/// Version of the CSV/JSON output layout.
pub const SCHEMA_VERSION: u32 = 1;

const TEACHER_TAG: u64 = 1;
const INIT_TAG: u64 = 2;
const CELL_TAG: u64 = 3;
const TRIAL_TAG: u64 = 4;

/// Provenance attached to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
}

impl RunMeta {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            seed: cfg.seed,
            config_hash: config_hash(cfg),
        }
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One cell of the success-probability grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub k: usize,
    pub ratio: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_probability: f64,
    /// Mean iterations per trial.
    pub mean_iters: f64,
    pub spurious_count: usize,
    /// Trials that hit the iteration cap or diverged.
    pub undetermined_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub k_values: Vec<usize>,
    pub ratio_values: Vec<f64>,
    pub meta: RunMeta,
}

impl GridResult {
    pub fn cell(&self, k: usize, ratio: f64) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.k == k && r.ratio == ratio)
    }
}

/// Teacher for grid cell `(k, ratio)`; `trial` is mixed in only when
/// `resample_target` is set.
///
/// The stream is keyed by `k` (and trial) but not by the ratio, so all cells
/// in a row share `w*` and the direction of `a*` orthogonal to `1`.
fn cell_teacher(cfg: &ExperimentConfig, k: usize, ratio: f64, trial: usize) -> Result<TeacherParams> {
    let mut rng = if cfg.resample_target {
        stream(cfg.seed, &[CELL_TAG, k as u64, trial as u64])
    } else {
        stream(cfg.seed, &[CELL_TAG, k as u64])
    };
    teacher_from(cfg.p, k, ratio, cfg, &mut rng)
}

fn teacher_from(
    p: usize,
    k: usize,
    ratio: f64,
    cfg: &ExperimentConfig,
    rng: &mut SimRng,
) -> Result<TeacherParams> {
    let w = scaled(&unit_sphere(rng, p), cfg.w_star_norm);
    let a = make_target_a(k, ratio, cfg.a_star_norm, rng)?;
    TeacherParams::new(w, a)
}

struct TrialOutcome {
    class: StationaryClass,
    iters: u64,
}

fn grid_trial(cfg: &ExperimentConfig, k: usize, ratio: f64, trial: usize) -> Result<TrialOutcome> {
    let t = cell_teacher(cfg, k, ratio, trial)?;
    // shared across the ratio axis: common random numbers for every row
    let mut rng = stream(cfg.seed, &[TRIAL_TAG, k as u64, trial as u64]);
    let s0 = sample_init(cfg.p, k, &t, cfg.zero_sum_radius, &mut rng);
    let cell_cfg = ExperimentConfig {
        k,
        ratio,
        ..cfg.clone()
    };
    let res = run(&s0, &t, &cell_cfg)?;
    Ok(TrialOutcome {
        class: res.class,
        iters: res.iters_run,
    })
}

/// Success probability of gradient descent from raw random draws over a
/// `(k, ratio)` grid.
///
/// Each cell draws one target (or one per trial with `resample_target`),
/// then runs `cfg.trials` independent raw initializations and counts runs
/// that end in the global family. Trial `i` of row `k` draws from the
/// stream `(seed, k, i)` in every ratio column, so columns differ only
/// through the target and the ball radius.
pub fn success_grid(cfg: &ExperimentConfig, k_values: &[usize], ratio_values: &[f64]) -> Result<GridResult> {
    let mut base = cfg.clone();
    base.ratio = 0.0;
    base.validate()?;
    for &k in k_values {
        for &ratio in ratio_values {
            if k == 0 || !(ratio >= 0.0) || ratio > k as f64 {
                return Err(Error::Domain(format!(
                    "grid cell (k = {k}, ratio = {ratio}) violates 0 ≤ ratio ≤ k"
                )));
            }
        }
    }
    let cells: Vec<(usize, f64)> = k_values
        .iter()
        .flat_map(|&k| ratio_values.iter().map(move |&r| (k, r)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(c, trial)| grid_trial(cfg, cells[c].0, cells[c].1, trial))
        .collect::<Result<_>>()?;

    let rows = cells
        .iter()
        .zip(outcomes.chunks(cfg.trials))
        .map(|(&(k, ratio), outs)| {
            let count = |c| outs.iter().filter(|o| o.class == c).count();
            let successes = count(StationaryClass::Global);
            GridRow {
                k,
                ratio,
                trials: outs.len(),
                successes,
                success_probability: successes as f64 / outs.len() as f64,
                mean_iters: outs.iter().map(|o| o.iters as f64).sum::<f64>() / outs.len() as f64,
                spurious_count: count(StationaryClass::SpuriousLocal),
                undetermined_count: count(StationaryClass::Undetermined),
            }
        })
        .collect();
    Ok(GridResult {
        rows,
        k_values: k_values.to_vec(),
        ratio_values: ratio_values.to_vec(),
        meta: RunMeta::new(cfg),
    })
}

/// A single recorded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDump {
    pub records: Vec<TrajectoryRecord>,
    pub phase1_end: Option<u64>,
    pub phase_rates: Option<PhaseRates>,
    pub class: StationaryClass,
    pub iters_run: u64,
    pub eta: f64,
    pub converged: bool,
    pub violations: Vec<Violation>,
    pub violation_count: u64,
    pub teacher: TeacherParams,
    pub initial: StudentParams,
    pub final_point: StudentParams,
    pub meta: RunMeta,
}

/// Teacher used by [`trajectory_experiment`] for `cfg`.
pub fn experiment_teacher(cfg: &ExperimentConfig) -> Result<TeacherParams> {
    let mut rng = stream(cfg.seed, &[TEACHER_TAG]);
    teacher_from(cfg.p, cfg.k, cfg.ratio, cfg, &mut rng)
}

/// Draws the initialization selected by `cfg.init`, redrawing on ties.
pub fn experiment_init(cfg: &ExperimentConfig, t: &TeacherParams) -> Result<StudentParams> {
    const MAX_DRAWS: u64 = 1000;
    for draw in 0..MAX_DRAWS {
        let mut rng = stream(cfg.seed, &[INIT_TAG, draw]);
        let raw = sample_init(cfg.p, cfg.k, t, cfg.zero_sum_radius, &mut rng);
        let picked = match cfg.init {
            InitScheme::Raw => Some(raw),
            InitScheme::Good => select_good_variant(&sign_variants(&raw), t),
            InitScheme::Bad => select_bad_variant(&sign_variants(&raw), t),
        };
        if let Some(s) = picked {
            return Ok(s);
        }
    }
    Err(Error::Domain(format!(
        "no {:?} initialization found in {MAX_DRAWS} draws (ratio {})",
        cfg.init, cfg.ratio
    )))
}

/// One run from the configured initialization, with phase analysis.
pub fn trajectory_experiment(cfg: &ExperimentConfig) -> Result<TrajectoryDump> {
    cfg.validate()?;
    let t = experiment_teacher(cfg)?;
    let s0 = experiment_init(cfg, &t)?;
    let res = run(&s0, &t, cfg)?;
    Ok(dump_from(res, t, s0, cfg))
}

fn dump_from(res: RunResult, teacher: TeacherParams, initial: StudentParams, cfg: &ExperimentConfig) -> TrajectoryDump {
    let phase_rates = res.phase1_end.and_then(|b| phase_rates(&res.trajectory, b));
    TrajectoryDump {
        records: res.trajectory,
        phase1_end: res.phase1_end,
        phase_rates,
        class: res.class,
        iters_run: res.iters_run,
        eta: res.eta,
        converged: res.converged,
        violations: res.invariant_violations,
        violation_count: res.violation_count,
        teacher,
        initial,
        final_point: res.final_point,
        meta: RunMeta::new(cfg),
    }
}

fn write_meta_comment<W: Write>(out: &mut W, kind: &str, meta: &RunMeta) -> Result<()> {
    writeln!(out, "# convdyn {kind} schema={}", meta.schema_version)?;
    writeln!(out, "# config_hash={}", meta.config_hash)?;
    writeln!(out, "# config={}", serde_json::to_string(&meta.config)?)?;
    Ok(())
}

pub const GRID_CSV_HEADER: &str =
    "k,ratio,trials,successes,probability,mean_iters,undetermined_count";

pub fn write_grid_csv<W: Write>(grid: &GridResult, out: &mut W) -> Result<()> {
    write_meta_comment(out, "grid", &grid.meta)?;
    writeln!(out, "{GRID_CSV_HEADER}")?;
    for r in &grid.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k, r.ratio, r.trials, r.successes, r.success_probability, r.mean_iters, r.undetermined_count
        )?;
    }
    Ok(())
}

pub const TRAJECTORY_CSV_HEADER: &str =
    "iter,phi,sin2phi,a_dot_astar,sum_a,v_norm,loss,dist_a,sum_gap";

pub fn write_trajectory_csv<W: Write>(dump: &TrajectoryDump, out: &mut W) -> Result<()> {
    write_meta_comment(out, "trajectory", &dump.meta)?;
    writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
    for r in &dump.records {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.iter,
            r.phi,
            r.sin2phi(),
            r.a_dot_astar,
            r.sum_a,
            r.v_norm,
            r.loss,
            r.dist_a,
            r.sum_gap
        )?;
    }
    Ok(())
}

pub fn write_json<W: Write, T: Serialize>(value: &T, out: &mut W) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}
