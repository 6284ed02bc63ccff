//! Positive-P sampler.
//!
//! Input ensembles use the compact squeezed-state distribution
//! `alpha = d+ w_j + i d- w_{j+M}`, `beta = d+ w_j - i d- w_{j+M}` with
//! `d+- = sqrt((n +- m) / 2)`; `d-` is imaginary when `n < m`. After the
//! network the per-mode vacuum probabilities `exp(-alpha beta)` (threshold)
//! or photon numbers `alpha beta` (PNR) are truncated into their physical
//! range and the truncated samples are repeatedly whitened and recolored
//! towards the untruncated moments. Each projected sample is then treated as
//! a coherent state and measured.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{block_ranges, complex_moments, real_moments, Moments, SampleBlocks, DEFAULT_BLOCK_SIZE};
use crate::dataset::{CountDataset, Detector, Provenance};
use crate::error::{GbsError, Result};
use crate::gaussian_state::{input_moments, SqueezerBank, TransmissionMatrix};
use crate::linalg;
use crate::rng::{block_stream, StreamPurpose};

/// Values within this distance of the physical range are not counted as out
/// of range.
pub const RANGE_TOL: f64 = 1e-12;

/// Default number of whitening/coloring rounds.
pub const DEFAULT_ETA_MAX: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Input,
    Propagated,
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub block_size: usize,
}

/// Paired positive-P amplitudes, `N x M` each.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceEnsemble {
    pub alpha: SampleBlocks<Complex64>,
    pub beta: SampleBlocks<Complex64>,
    pub seed: SeedRecord,
    pub stage: Stage,
}

impl PhaseSpaceEnsemble {
    pub fn samples(&self) -> usize {
        self.alpha.rows()
    }

    pub fn modes(&self) -> usize {
        self.alpha.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    ThresholdP,
    PnrN,
}

impl ProjectionKind {
    pub fn for_detector(d: Detector) -> Self {
        match d {
            Detector::Threshold => ProjectionKind::ThresholdP,
            Detector::Pnr => ProjectionKind::PnrN,
        }
    }

    pub fn clamp(self, x: f64) -> f64 {
        match self {
            ProjectionKind::ThresholdP => x.clamp(0.0, 1.0),
            ProjectionKind::PnrN => x.max(0.0),
        }
    }

    pub fn out_of_range(self, x: f64) -> bool {
        match self {
            ProjectionKind::ThresholdP => x < -RANGE_TOL || x > 1.0 + RANGE_TOL,
            ProjectionKind::PnrN => x < -RANGE_TOL,
        }
    }
}

/// Projected click probabilities or photon numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedVariables {
    pub values: SampleBlocks<f64>,
    pub kind: ProjectionKind,
    pub eta_done: usize,
    /// Fraction of entries outside the physical range before each truncation;
    /// entry 0 is the raw phase-space variable, entry `k` the output of the
    /// `k`-th whitening/coloring round.
    pub out_of_range: Vec<f64>,
}

/// `(d+, d-)` per mode; `d-` is imaginary for modes with `n < m`.
pub fn input_deltas(bank: &SqueezerBank) -> Vec<(f64, Complex64)> {
    let (n, m) = input_moments(bank);
    n.iter()
        .zip(&m)
        .map(|(&n, &m)| (((n + m) / 2.0).max(0.0).sqrt(), Complex64::new((n - m) / 2.0, 0.0).sqrt()))
        .collect()
}

fn draw_block(deltas: &[(f64, Complex64)], rows: usize, seed: u64, block: usize) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let m = deltas.len();
    let mut rng = block_stream(seed, block, StreamPurpose::InputNoise);
    let mut alpha = DMatrix::from_element(rows, m, linalg::C_ZERO);
    let mut beta = alpha.clone();
    let mut w = vec![0.0f64; 2 * m];
    let i = Complex64::new(0.0, 1.0);
    for r in 0..rows {
        for x in w.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        for (j, &(dp, dm)) in deltas.iter().enumerate() {
            let a = Complex64::new(dp * w[j], 0.0);
            let b = i * dm * w[j + m];
            alpha[(r, j)] = a + b;
            beta[(r, j)] = a - b;
        }
    }
    (alpha, beta)
}

/// Draw `n` input samples using the default block size.
pub fn draw_input_samples(bank: &SqueezerBank, n: usize, seed: u64) -> Result<PhaseSpaceEnsemble> {
    draw_input_samples_with(bank, n, seed, DEFAULT_BLOCK_SIZE)
}

pub fn draw_input_samples_with(bank: &SqueezerBank, n: usize, seed: u64, block_size: usize) -> Result<PhaseSpaceEnsemble> {
    if n == 0 {
        return Err(GbsError::Config("need at least one sample".into()));
    }
    if block_size == 0 {
        return Err(GbsError::Config("block size must be positive".into()));
    }
    let deltas = input_deltas(bank);
    let (alpha, beta): (Vec<_>, Vec<_>) = block_ranges(n, block_size)
        .into_par_iter()
        .enumerate()
        .map(|(b, (s, e))| draw_block(&deltas, e - s, seed, b))
        .unzip();
    Ok(PhaseSpaceEnsemble {
        alpha: SampleBlocks::from_blocks(alpha, block_size)?,
        beta: SampleBlocks::from_blocks(beta, block_size)?,
        seed: SeedRecord { seed, block_size },
        stage: Stage::Input,
    })
}

/// `alpha T` and `beta T*` through real matrix products. Shares products when
/// the input has the structure of a freshly drawn ensemble
/// (`Re beta = Re alpha` or `Im beta = -Im alpha`).
fn propagate_block(
    alpha: &DMatrix<Complex64>,
    beta: &DMatrix<Complex64>,
    tr: &DMatrix<f64>,
    ti: &DMatrix<f64>,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let (ar, ai) = linalg::split_complex(alpha);
    let (br, bi) = linalg::split_complex(beta);
    let ai_zero = ai.iter().all(|&x| x == 0.0);
    let same_re = ar == br;
    let mirrored_im = bi.iter().zip(ai.iter()).all(|(b, a)| *b == -*a);

    let p1 = &ar * tr;
    let p2 = &ar * ti;
    let (q1, q2) = if ai_zero { (None, None) } else { (Some(&ai * tr), Some(&ai * ti)) };
    // alpha T = (ar tr - ai ti) + i (ar ti + ai tr)
    let mut a_re = p1.clone();
    let mut a_im = p2.clone();
    if let (Some(q1), Some(q2)) = (&q1, &q2) {
        a_re -= q2;
        a_im += q1;
    }
    // beta T* = (br tr + bi ti) + i (bi tr - br ti)
    let (r1, r2) = if same_re { (p1, p2) } else { (&br * tr, &br * ti) };
    let mut b_re = r1;
    let mut b_im = -r2;
    if mirrored_im {
        if let (Some(q1), Some(q2)) = (&q1, &q2) {
            b_re -= q2;
            b_im -= q1;
        }
    } else {
        b_re += &bi * ti;
        b_im += &bi * tr;
    }
    (linalg::join_complex(&a_re, &a_im), linalg::join_complex(&b_re, &b_im))
}

pub fn propagate(ens: &PhaseSpaceEnsemble, t: &TransmissionMatrix) -> Result<PhaseSpaceEnsemble> {
    if ens.stage != Stage::Input {
        return Err(GbsError::Config(format!("cannot propagate an ensemble at stage {:?}", ens.stage)));
    }
    if ens.modes() != t.inputs() {
        return Err(GbsError::Dimension(format!(
            "ensemble has {} modes but the transmission matrix has {} inputs",
            ens.modes(),
            t.inputs()
        )));
    }
    let (tr, ti) = linalg::split_complex(&t.effective());
    let (alpha, beta): (Vec<_>, Vec<_>) = ens
        .alpha
        .blocks()
        .par_iter()
        .zip(ens.beta.blocks().par_iter())
        .map(|(a, b)| propagate_block(a, b, &tr, &ti))
        .unzip();
    Ok(PhaseSpaceEnsemble {
        alpha: SampleBlocks::from_blocks(alpha, ens.seed.block_size)?,
        beta: SampleBlocks::from_blocks(beta, ens.seed.block_size)?,
        seed: ens.seed,
        stage: Stage::Propagated,
    })
}

/// Entrywise `exp(-alpha beta)`.
pub fn vacuum_probability(ens: &PhaseSpaceEnsemble) -> SampleBlocks<Complex64> {
    ens.alpha
        .zip_map(&ens.beta, |a, b| (-(a * b)).exp())
        .expect("alpha and beta share a layout")
}

/// Entrywise `alpha beta`.
pub fn photon_number(ens: &PhaseSpaceEnsemble) -> SampleBlocks<Complex64> {
    ens.alpha.zip_map(&ens.beta, |a, b| a * b).expect("alpha and beta share a layout")
}

fn truncate(values: &SampleBlocks<Complex64>, kind: ProjectionKind) -> ProjectedVariables {
    ProjectedVariables {
        values: values.map(|z| kind.clamp(z.re)),
        kind,
        eta_done: 0,
        out_of_range: vec![out_of_range_fraction(&values.map(|z| z.re), kind)],
    }
}

/// `min(1, max(Re p, 0))`.
pub fn truncate_threshold(p: &SampleBlocks<Complex64>) -> ProjectedVariables {
    truncate(p, ProjectionKind::ThresholdP)
}

/// `max(Re n, 0)`.
pub fn truncate_pnr(n: &SampleBlocks<Complex64>) -> ProjectedVariables {
    truncate(n, ProjectionKind::PnrN)
}

pub fn out_of_range_fraction(values: &SampleBlocks<f64>, kind: ProjectionKind) -> f64 {
    let total = values.rows() * values.cols();
    if total == 0 {
        return 0.0;
    }
    let bad: usize = values
        .blocks()
        .par_iter()
        .map(|b| b.iter().filter(|&&x| kind.out_of_range(x)).count())
        .sum();
    bad as f64 / total as f64
}

/// Affine map `(x - mu_cur) S_cur^{-1/2} S_tgt^{1/2} + mu_tgt` on every sample,
/// with symmetric matrix roots.
///
/// A ridge of `1e-12 trace / M` regularises the current covariance. Modes
/// whose current variance vanishes are pinned to the target mean; if such a
/// mode has a nonzero target variance the map does not exist and
/// [`GbsError::Singular`] names the modes.
pub fn whiten_color(
    values: &SampleBlocks<f64>,
    target_mean: &DVector<f64>,
    target_cov: &DMatrix<f64>,
    current_mean: &DVector<f64>,
    current_cov: &DMatrix<f64>,
) -> Result<SampleBlocks<f64>> {
    let m = values.cols();
    if target_mean.len() != m || current_mean.len() != m || target_cov.shape() != (m, m) || current_cov.shape() != (m, m) {
        return Err(GbsError::Dimension(format!("moments do not match {m} modes")));
    }
    let max_cur = (0..m).fold(0.0f64, |a, i| a.max(current_cov[(i, i)]));
    let max_tgt = (0..m).fold(0.0f64, |a, i| a.max(target_cov[(i, i)]));
    let frozen_tol = 1e-13 * max_cur.max(max_tgt).max(f64::MIN_POSITIVE);
    let (active, frozen): (Vec<usize>, Vec<usize>) = (0..m).partition(|&i| current_cov[(i, i)] > frozen_tol);
    let offending: Vec<usize> = frozen.iter().copied().filter(|&i| target_cov[(i, i)] > frozen_tol).collect();
    if !offending.is_empty() {
        return Err(GbsError::Singular { modes: offending });
    }

    let k = active.len();
    let cur = current_cov.select_rows(active.iter()).select_columns(active.iter());
    let tgt = target_cov.select_rows(active.iter()).select_columns(active.iter());
    let ridge = 1e-12 * cur.trace() / k.max(1) as f64;
    let w = if k > 0 {
        let inv = linalg::sym_inv_sqrt(&cur, ridge).ok_or_else(|| GbsError::Singular { modes: active.clone() })?;
        inv * linalg::sym_sqrt_psd(&tgt)
    } else {
        DMatrix::zeros(0, 0)
    };
    let mu_c = DVector::from_iterator(k, active.iter().map(|&i| current_mean[i]));
    let mu_t = DVector::from_iterator(k, active.iter().map(|&i| target_mean[i]));

    let blocks: Vec<DMatrix<f64>> = values
        .blocks()
        .par_iter()
        .map(|b| {
            let mut out = b.clone();
            if k > 0 {
                let mut x = b.select_columns(active.iter());
                for (j, mut col) in x.column_iter_mut().enumerate() {
                    col.add_scalar_mut(-mu_c[j]);
                }
                let mut y = x * &w;
                for (j, mut col) in y.column_iter_mut().enumerate() {
                    col.add_scalar_mut(mu_t[j]);
                }
                for (j, &c) in active.iter().enumerate() {
                    out.set_column(c, &y.column(j));
                }
            }
            for &c in &frozen {
                out.column_mut(c).fill(target_mean[c]);
            }
            out
        })
        .collect();
    SampleBlocks::from_blocks(blocks, values.block_size())
}

/// Iterate truncation and whitening/coloring starting from already truncated
/// samples, towards `target` moments of the raw variable.
pub fn iterate_from_truncated(
    mut current: ProjectedVariables,
    target: &Moments,
    eta_max: usize,
) -> Result<ProjectedVariables> {
    let target_cov = target.covariance();
    for _ in 0..eta_max {
        let mo = real_moments(&current.values);
        let mut moved = whiten_color(&current.values, target.mean(), &target_cov, mo.mean(), &mo.covariance())?;
        let kind = current.kind;
        current.out_of_range.push(out_of_range_fraction(&moved, kind));
        moved.blocks_mut().par_iter_mut().for_each(|b| b.apply(|x| *x = kind.clamp(*x)));
        current.values = moved;
        current.eta_done += 1;
    }
    Ok(current)
}

/// Project raw complex phase-space variables (vacuum probabilities or photon
/// numbers) with `eta_max` whitening/coloring rounds.
pub fn project_raw(raw: &SampleBlocks<Complex64>, kind: ProjectionKind, eta_max: usize) -> Result<ProjectedVariables> {
    let target = complex_moments(raw);
    iterate_from_truncated(truncate(raw, kind), &target, eta_max)
}

/// Project a propagated ensemble for the given detector type.
pub fn iterate_projection(ens: &PhaseSpaceEnsemble, detector: Detector, eta_max: usize) -> Result<ProjectedVariables> {
    if ens.stage != Stage::Propagated {
        return Err(GbsError::Config(format!("cannot project an ensemble at stage {:?}", ens.stage)));
    }
    let raw = match detector {
        Detector::Threshold => vacuum_probability(ens),
        Detector::Pnr => photon_number(ens),
    };
    project_raw(&raw, ProjectionKind::for_detector(detector), eta_max)
}

/// Click `c_j ~ Bernoulli(1 - p_j)` independently per mode.
pub fn sample_clicks(proj: &ProjectedVariables, seed: u64) -> Result<CountDataset> {
    if proj.kind != ProjectionKind::ThresholdP {
        return Err(GbsError::Config("click sampling needs projected vacuum probabilities".into()));
    }
    let m = proj.values.cols();
    let parts: Vec<Vec<u8>> = proj
        .values
        .blocks()
        .par_iter()
        .enumerate()
        .map(|(b, block)| {
            let mut rng = block_stream(seed, b, StreamPurpose::Outcomes);
            let mut out = Vec::with_capacity(block.len());
            for r in 0..block.nrows() {
                for j in 0..m {
                    let u: f64 = rng.random();
                    out.push(u8::from(u < 1.0 - block[(r, j)]));
                }
            }
            out
        })
        .collect();
    CountDataset::new(Detector::Threshold, m, 1, parts.concat(), Provenance::Sampler)
}

/// Count `c_j ~ Poisson(n_j)`, clipped at `c_max`.
pub fn sample_counts(proj: &ProjectedVariables, c_max: u8, seed: u64) -> Result<CountDataset> {
    if proj.kind != ProjectionKind::PnrN {
        return Err(GbsError::Config("count sampling needs projected photon numbers".into()));
    }
    let m = proj.values.cols();
    let parts: Vec<Vec<u8>> = proj
        .values
        .blocks()
        .par_iter()
        .enumerate()
        .map(|(b, block)| {
            let mut rng = block_stream(seed, b, StreamPurpose::Outcomes);
            let mut out = Vec::with_capacity(block.len());
            for r in 0..block.nrows() {
                for j in 0..m {
                    let n = block[(r, j)];
                    let c = if n > 0.0 {
                        let d = Poisson::new(n).expect("positive finite mean");
                        let v: f64 = d.sample(&mut rng);
                        v.min(c_max as f64) as u8
                    } else {
                        0
                    };
                    out.push(c);
                }
            }
            out
        })
        .collect();
    CountDataset::new(Detector::Pnr, m, c_max, parts.concat(), Provenance::Sampler)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub samples: usize,
    pub seed: u64,
    pub eta_max: usize,
    pub detector: Detector,
    pub c_max: u8,
    pub block_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerTimings {
    pub generate_seconds: f64,
    pub project_seconds: f64,
    pub outcome_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SamplerRun {
    pub dataset: CountDataset,
    pub out_of_range: Vec<f64>,
    pub timings: SamplerTimings,
}

/// Full sampler pipeline. Blocks are drawn, propagated and reduced to their
/// truncated projection variable one at a time, so the amplitudes are never
/// held for the whole ensemble.
pub fn run_sampler(bank: &SqueezerBank, t: &TransmissionMatrix, cfg: &SamplerConfig) -> Result<SamplerRun> {
    let projected = run_projection(bank, t, cfg)?;
    let generate_seconds = projected.1;
    let project_seconds = projected.2;
    let projected = projected.0;
    let start = Instant::now();
    let dataset = match cfg.detector {
        Detector::Threshold => sample_clicks(&projected, cfg.seed)?,
        Detector::Pnr => sample_counts(&projected, cfg.c_max, cfg.seed)?,
    };
    Ok(SamplerRun {
        dataset,
        out_of_range: projected.out_of_range,
        timings: SamplerTimings { generate_seconds, project_seconds, outcome_seconds: start.elapsed().as_secs_f64() },
    })
}

/// Generation, propagation and projection; returns the projected variables
/// with generation and projection times in seconds.
pub fn run_projection(bank: &SqueezerBank, t: &TransmissionMatrix, cfg: &SamplerConfig) -> Result<(ProjectedVariables, f64, f64)> {
    if cfg.samples == 0 {
        return Err(GbsError::Config("need at least one sample".into()));
    }
    if cfg.block_size == 0 {
        return Err(GbsError::Config("block size must be positive".into()));
    }
    if bank.modes() != t.inputs() {
        return Err(GbsError::Dimension(format!(
            "{} squeezers but the transmission matrix has {} inputs",
            bank.modes(),
            t.inputs()
        )));
    }
    let kind = ProjectionKind::for_detector(cfg.detector);
    let start = Instant::now();
    let deltas = input_deltas(bank);
    let (tr, ti) = linalg::split_complex(&t.effective());
    let parts: Vec<(Moments, usize, DMatrix<f64>)> = block_ranges(cfg.samples, cfg.block_size)
        .into_par_iter()
        .enumerate()
        .map(|(b, (s, e))| {
            let (a, bt) = draw_block(&deltas, e - s, cfg.seed, b);
            let (a, bt) = propagate_block(&a, &bt, &tr, &ti);
            let raw = match cfg.detector {
                Detector::Threshold => a.zip_map(&bt, |x, y| (-(x * y)).exp()),
                Detector::Pnr => a.zip_map(&bt, |x, y| x * y),
            };
            drop(a);
            drop(bt);
            let moments = Moments::of_complex_block(&raw);
            let bad = raw.iter().filter(|z| kind.out_of_range(z.re)).count();
            let truncated = raw.map(|z| kind.clamp(z.re));
            (moments, bad, truncated)
        })
        .collect();
    let m = t.outputs();
    let mut moment_parts = Vec::with_capacity(parts.len());
    let mut bad = 0usize;
    let mut blocks = Vec::with_capacity(parts.len());
    for (mo, b, tr) in parts {
        moment_parts.push(mo);
        bad += b;
        blocks.push(tr);
    }
    let target = Moments::combine(&moment_parts, m);
    drop(moment_parts);
    let generate_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let initial = ProjectedVariables {
        values: SampleBlocks::from_blocks(blocks, cfg.block_size)?,
        kind,
        eta_done: 0,
        out_of_range: vec![bad as f64 / (cfg.samples * m) as f64],
    };
    let projected = iterate_from_truncated(initial, &target, cfg.eta_max)?;
    Ok((projected, generate_seconds, start.elapsed().as_secs_f64()))
}
