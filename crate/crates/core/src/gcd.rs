//! Grouped count distributions (GCDs) and marginals.
//!
//! A GCD is the joint distribution of the total counts `m_j` within disjoint
//! groups of output modes. From a phase-space ensemble the threshold GCD is
//! estimated through its Fourier transform: per sample, group `j` contributes
//! `prod_{k in S_j} (p_k + (1 - p_k) e^{-i q theta_j})` on the grid
//! `theta_j = 2 pi / (|S_j| + 1)`, and one inverse DFT per batch recovers the
//! distribution. PNR GCDs use the Poisson kernel of the group photon number.
//! Errors on ensemble estimates come from batch means; errors on histogrammed
//! records are Poissonian, `sqrt(G / N)`.

use std::collections::HashSet;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::blocks::SampleBlocks;
use crate::dataset::{CountDataset, Detector};
use crate::error::{GbsError, Result};
use crate::linalg::{C_ONE, C_ZERO};
use crate::rng::{stream, StreamPurpose};

/// Default batch-means block size.
pub const DEFAULT_BATCH_SIZE: usize = 10_000;

/// Cap on the number of mode subsets evaluated per marginal order.
pub const MAX_MARGINAL_SUBSETS: usize = 200;

/// Disjoint groups of output modes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    subsets: Vec<Vec<usize>>,
    modes: usize,
}

impl Partition {
    pub fn new(subsets: Vec<Vec<usize>>, modes: usize) -> Result<Self> {
        if subsets.is_empty() {
            return Err(GbsError::Config("partition has no groups".into()));
        }
        let mut seen = HashSet::new();
        for (j, s) in subsets.iter().enumerate() {
            if s.is_empty() {
                return Err(GbsError::Config(format!("group {j} is empty")));
            }
            for &k in s {
                if k >= modes {
                    return Err(GbsError::Config(format!("mode {k} in group {j} is not below {modes}")));
                }
                if !seen.insert(k) {
                    return Err(GbsError::Config(format!("mode {k} appears in more than one group")));
                }
            }
        }
        Ok(Partition { subsets, modes })
    }

    /// All modes in one group.
    pub fn total(modes: usize) -> Result<Self> {
        Self::new(vec![(0..modes).collect()], modes)
    }

    /// First half and second half.
    pub fn halves(modes: usize) -> Result<Self> {
        let h = modes / 2;
        Self::new(vec![(0..h).collect(), (h..modes).collect()], modes)
    }

    /// One singleton group per listed mode.
    pub fn singletons(modes_list: &[usize], modes: usize) -> Result<Self> {
        Self::new(modes_list.iter().map(|&k| vec![k]).collect(), modes)
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn dimension(&self) -> usize {
        self.subsets.len()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn covered_modes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.subsets.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ErrorModel {
    /// `sqrt(G / N)` from `samples` records.
    Poisson { samples: usize },
    BatchMeans { batches: usize, batch_size: usize },
    Exact,
}

/// Probabilities over the bins `m = (m_1, .., m_d)`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcdResult {
    pub kind: Detector,
    pub partition: Partition,
    pub shape: Vec<usize>,
    /// When set, the last bin along every axis collects all larger counts.
    pub overflow: bool,
    pub probabilities: Vec<f64>,
    pub stderr: Vec<f64>,
    pub error_model: ErrorModel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct GcdJson<'a> {
    kind: Detector,
    partition: &'a [Vec<usize>],
    shape: &'a [usize],
    overflow: bool,
    bins: Vec<Vec<usize>>,
    probabilities: &'a [f64],
    stderr: &'a [f64],
    error_model: ErrorModel,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    warnings: &'a [String],
}

pub(crate) fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for a in (0..shape.len()).rev() {
        idx[a] = flat % shape[a];
        flat /= shape[a];
    }
    idx
}

pub(crate) fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

impl GcdResult {
    pub fn exact(kind: Detector, partition: Partition, shape: Vec<usize>, overflow: bool, probabilities: Vec<f64>) -> Self {
        let n = probabilities.len();
        GcdResult { kind, partition, shape, overflow, probabilities, stderr: vec![0.0; n], error_model: ErrorModel::Exact, warnings: vec![] }
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn bin(&self, flat: usize) -> Vec<usize> {
        unravel(flat, &self.shape)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.probabilities[ravel(idx, &self.shape)]
    }

    pub fn sum(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    /// Sum over all axes not in `keep`.
    pub fn marginalize(&self, keep: &[usize]) -> Result<GcdResult> {
        if keep.iter().any(|&a| a >= self.shape.len()) || keep.is_empty() {
            return Err(GbsError::Config(format!("cannot keep axes {keep:?} of a {}-d GCD", self.shape.len())));
        }
        let shape: Vec<usize> = keep.iter().map(|&a| self.shape[a]).collect();
        let size: usize = shape.iter().product();
        let mut p = vec![0.0; size];
        let mut var = vec![0.0; size];
        for flat in 0..self.len() {
            let idx = self.bin(flat);
            let sub: Vec<usize> = keep.iter().map(|&a| idx[a]).collect();
            let k = ravel(&sub, &shape);
            p[k] += self.probabilities[flat];
            var[k] += self.stderr[flat].powi(2);
        }
        let partition = Partition::new(keep.iter().map(|&a| self.partition.subsets[a].clone()).collect(), self.partition.modes)?;
        let stderr = self.recomputed_errors(&p, &var);
        Ok(GcdResult { partition, shape, probabilities: p, stderr, warnings: self.warnings.clone(), ..self.clone() })
    }

    fn recomputed_errors(&self, p: &[f64], summed_var: &[f64]) -> Vec<f64> {
        match self.error_model {
            ErrorModel::Poisson { samples } => p.iter().map(|&g| (g.max(0.0) / samples as f64).sqrt()).collect(),
            ErrorModel::Exact => vec![0.0; p.len()],
            // covariances between merged bins are not tracked
            ErrorModel::BatchMeans { .. } => summed_var.iter().map(|v| v.sqrt()).collect(),
        }
    }

    /// Merge every bin above `m_max` along each axis into one overflow bin.
    pub fn rebin_overflow(&self, m_max: usize) -> GcdResult {
        let shape: Vec<usize> = self.shape.iter().map(|&n| n.min(m_max + 2)).collect();
        let needs_overflow = self.shape.iter().any(|&n| n > m_max + 1);
        if !needs_overflow {
            return self.clone();
        }
        let size: usize = shape.iter().product();
        let mut p = vec![0.0; size];
        let mut var = vec![0.0; size];
        for flat in 0..self.len() {
            let idx: Vec<usize> = self.bin(flat).into_iter().map(|i| i.min(m_max + 1)).collect();
            let k = ravel(&idx, &shape);
            p[k] += self.probabilities[flat];
            var[k] += self.stderr[flat].powi(2);
        }
        let stderr = self.recomputed_errors(&p, &var);
        GcdResult { shape, overflow: true, probabilities: p, stderr, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        let j = GcdJson {
            kind: self.kind,
            partition: &self.partition.subsets,
            shape: &self.shape,
            overflow: self.overflow,
            bins: (0..self.len()).map(|f| self.bin(f)).collect(),
            probabilities: &self.probabilities,
            stderr: &self.stderr,
            error_model: self.error_model,
            warnings: &self.warnings,
        };
        serde_json::to_string_pretty(&j).expect("plain data serialises")
    }

    /// One row per bin: `m_1,..,m_d,probability,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for a in 0..self.shape.len() {
            let _ = write!(out, "m_{},", a + 1);
        }
        out.push_str("probability,stderr\n");
        for f in 0..self.len() {
            for i in self.bin(f) {
                let _ = write!(out, "{i},");
            }
            let _ = writeln!(out, "{:e},{:e}", self.probabilities[f], self.stderr[f]);
        }
        out
    }
}

/// Batch layout: `floor(N / S)` batches; the last batch absorbs the remainder.
fn batches(rows: usize, batch_size: usize) -> Result<Vec<(usize, usize)>> {
    if batch_size == 0 {
        return Err(GbsError::Config("batch size must be positive".into()));
    }
    let nb = rows / batch_size;
    if nb < 2 {
        return Err(GbsError::Config(format!(
            "{rows} samples give fewer than 2 batches of {batch_size}"
        )));
    }
    Ok((0..nb)
        .map(|b| (b * batch_size, if b + 1 == nb { rows } else { (b + 1) * batch_size }))
        .collect())
}

/// Mean over all batches weighted by size, and the batch-means standard error.
fn summarize_batches(estimates: &[(usize, Vec<f64>)]) -> (Vec<f64>, Vec<f64>) {
    let nb = estimates.len() as f64;
    let total: usize = estimates.iter().map(|e| e.0).sum();
    let len = estimates[0].1.len();
    let mut mean = vec![0.0; len];
    let mut plain = vec![0.0; len];
    for (count, e) in estimates {
        for i in 0..len {
            mean[i] += e[i] * *count as f64 / total as f64;
            plain[i] += e[i] / nb;
        }
    }
    let mut var = vec![0.0; len];
    for (_, e) in estimates {
        for i in 0..len {
            var[i] += (e[i] - plain[i]).powi(2) / (nb - 1.0);
        }
    }
    let stderr = var.iter().map(|v| (v / nb).sqrt()).collect();
    (mean, stderr)
}

/// Mean and batch-means standard error of a scalar series.
pub fn batch_means_error(values: &[f64], block_size: usize) -> Result<(f64, f64)> {
    let est: Vec<(usize, Vec<f64>)> = batches(values.len(), block_size)?
        .into_iter()
        .map(|(s, e)| (e - s, vec![values[s..e].iter().sum::<f64>() / (e - s) as f64]))
        .collect();
    let (m, se) = summarize_batches(&est);
    Ok((m[0], se[0]))
}

fn check_partition(part: &Partition, cols: usize) -> Result<()> {
    if part.modes != cols {
        return Err(GbsError::Dimension(format!("partition is over {} modes but the data has {cols}", part.modes)));
    }
    Ok(())
}

/// `acc += kron(factors)` for row-major multi-index order.
fn accumulate_kron(acc: &mut [Complex64], factors: &[Vec<Complex64>], scratch: &mut Vec<Complex64>, next: &mut Vec<Complex64>) {
    scratch.clear();
    scratch.push(C_ONE);
    for f in factors {
        next.clear();
        for &a in scratch.iter() {
            for &b in f {
                next.push(a * b);
            }
        }
        std::mem::swap(scratch, next);
    }
    for (a, s) in acc.iter_mut().zip(scratch.iter()) {
        *a += *s;
    }
}

/// In-place inverse DFT along every axis, divided by the number of points.
fn inverse_dft(data: &mut [Complex64], shape: &[usize]) {
    let mut planner = FftPlanner::<f64>::new();
    let total = data.len();
    let mut stride = total;
    for &n in shape {
        stride /= n;
        if n > 1 {
            let fft = planner.plan_fft_inverse(n);
            let mut line = vec![C_ZERO; n];
            let outer = total / (n * stride);
            for o in 0..outer {
                for inner in 0..stride {
                    let base = o * n * stride + inner;
                    for (k, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + k * stride];
                    }
                    fft.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
        }
    }
    let scale = 1.0 / total as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Threshold GCD from per-sample vacuum probabilities (raw complex or
/// projected real), with batch-means errors.
pub fn gcd_threshold_from_ensemble<T>(p: &SampleBlocks<T>, part: &Partition, batch_size: usize) -> Result<GcdResult>
where
    T: nalgebra::Scalar + Copy + Default + Send + Sync + Into<Complex64>,
{
    check_partition(part, p.cols())?;
    let shape: Vec<usize> = part.subsets.iter().map(|s| s.len() + 1).collect();
    let size: usize = shape.iter().product();
    let twiddles: Vec<Vec<Complex64>> = shape
        .iter()
        .map(|&n| (0..n).map(|q| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * q as f64 / n as f64)).collect())
        .collect();
    let est: Vec<(usize, Vec<f64>)> = batches(p.rows(), batch_size)?
        .into_par_iter()
        .map(|(s, e)| {
            let mut acc = vec![C_ZERO; size];
            let mut row = vec![C_ZERO; p.cols()];
            let mut raw = vec![T::default(); p.cols()];
            let mut factors: Vec<Vec<Complex64>> = shape.iter().map(|&n| vec![C_ONE; n]).collect();
            let (mut scratch, mut next) = (Vec::with_capacity(size), Vec::with_capacity(size));
            for r in s..e {
                p.read_row(r, &mut raw);
                for (dst, src) in row.iter_mut().zip(&raw) {
                    *dst = (*src).into();
                }
                for (j, subset) in part.subsets.iter().enumerate() {
                    let f = &mut factors[j];
                    f.iter_mut().for_each(|x| *x = C_ONE);
                    for &k in subset {
                        let pk = row[k];
                        let qk = C_ONE - pk;
                        for (x, w) in f.iter_mut().zip(&twiddles[j]) {
                            *x *= pk + qk * w;
                        }
                    }
                }
                accumulate_kron(&mut acc, &factors, &mut scratch, &mut next);
            }
            let count = e - s;
            for v in acc.iter_mut() {
                *v /= count as f64;
            }
            inverse_dft(&mut acc, &shape);
            (count, acc.iter().map(|z| z.re).collect())
        })
        .collect();
    Ok(finish_ensemble(Detector::Threshold, part, shape, false, &est, batch_size))
}

fn finish_ensemble(kind: Detector, part: &Partition, shape: Vec<usize>, overflow: bool, est: &[(usize, Vec<f64>)], batch_size: usize) -> GcdResult {
    let (probabilities, stderr) = summarize_batches(est);
    let mut warnings = Vec::new();
    let neg: Vec<usize> = (0..probabilities.len())
        .filter(|&i| probabilities[i] < -5.0 * stderr[i])
        .collect();
    if !neg.is_empty() {
        warnings.push(format!("bins {neg:?} are more than 5 standard errors below zero"));
    }
    GcdResult {
        kind,
        partition: part.clone(),
        shape,
        overflow,
        probabilities,
        stderr,
        error_model: ErrorModel::BatchMeans { batches: est.len(), batch_size },
        warnings,
    }
}

/// Mass above `m_max` that triggers an overflow warning.
pub const OVERFLOW_WARNING: f64 = 0.01;

/// PNR GCD from per-sample photon numbers through the Poisson kernel
/// `n_S^m e^{-n_S} / m!` of each group's total photon number. Bins run over
/// `0..=m_max` plus one overflow bin per axis.
pub fn gcd_pnr_from_ensemble<T>(n: &SampleBlocks<T>, part: &Partition, m_max: usize, batch_size: usize) -> Result<GcdResult>
where
    T: nalgebra::Scalar + Copy + Default + Send + Sync + Into<Complex64>,
{
    check_partition(part, n.cols())?;
    let width = m_max + 2;
    let shape = vec![width; part.dimension()];
    let size: usize = shape.iter().product();
    let est: Vec<(usize, Vec<f64>)> = batches(n.rows(), batch_size)?
        .into_par_iter()
        .map(|(s, e)| {
            let mut acc = vec![C_ZERO; size];
            let mut raw = vec![T::default(); n.cols()];
            let mut factors: Vec<Vec<Complex64>> = vec![vec![C_ZERO; width]; part.dimension()];
            let (mut scratch, mut next) = (Vec::with_capacity(size), Vec::with_capacity(size));
            for r in s..e {
                n.read_row(r, &mut raw);
                for (j, subset) in part.subsets.iter().enumerate() {
                    let total: Complex64 = subset.iter().map(|&k| raw[k].into()).sum();
                    poisson_kernel(total, &mut factors[j]);
                }
                accumulate_kron(&mut acc, &factors, &mut scratch, &mut next);
            }
            let count = e - s;
            (count, acc.iter().map(|z| z.re / count as f64).collect())
        })
        .collect();
    let mut res = finish_ensemble(Detector::Pnr, part, shape, true, &est, batch_size);
    let overflow_mass: f64 = (0..res.len())
        .filter(|&f| res.bin(f).iter().any(|&i| i == width - 1))
        .map(|f| res.probabilities[f])
        .sum();
    if overflow_mass > OVERFLOW_WARNING {
        res.warnings.push(format!("overflow bins hold {overflow_mass:.4} of the probability"));
    }
    Ok(res)
}

/// `out[m] = n^m e^{-n} / m!` for `m < len - 1`; the last entry is the
/// complement.
fn poisson_kernel(n: Complex64, out: &mut [Complex64]) {
    let last = out.len() - 1;
    let mut term = (-n).exp();
    let mut sum = C_ZERO;
    for (m, slot) in out.iter_mut().take(last).enumerate() {
        if m > 0 {
            term = term * n / m as f64;
        }
        *slot = term;
        sum += term;
    }
    out[last] = C_ONE - sum;
}

/// Histogram of group totals from count records.
pub fn gcd_from_counts(data: &CountDataset, part: &Partition) -> Result<GcdResult> {
    gcd_from_counts_capped(data, part, None)
}

/// As [`gcd_from_counts`], with group totals above `cap` merged into one
/// overflow bin per axis.
pub fn gcd_from_counts_capped(data: &CountDataset, part: &Partition, cap: Option<usize>) -> Result<GcdResult> {
    check_partition(part, data.modes())?;
    if data.is_empty() {
        return Err(GbsError::Config("dataset has no records".into()));
    }
    let c_max = data.c_max() as usize;
    let natural: Vec<usize> = part.subsets.iter().map(|s| s.len() * c_max + 1).collect();
    let (shape, overflow) = match cap {
        Some(c) if natural.iter().any(|&n| n > c + 1) => (natural.iter().map(|&n| n.min(c + 2)).collect::<Vec<_>>(), true),
        _ => (natural, false),
    };
    let size: usize = shape.iter().product();
    let n = data.len();
    let chunk = 65_536;
    let counts: Vec<Vec<u64>> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut h = vec![0u64; size];
            let mut idx = vec![0usize; shape.len()];
            for r in c * chunk..((c + 1) * chunk).min(n) {
                let rec = data.record(r);
                for (j, subset) in part.subsets.iter().enumerate() {
                    let s: usize = subset.iter().map(|&k| rec[k] as usize).sum();
                    idx[j] = s.min(shape[j] - 1);
                }
                h[ravel(&idx, &shape)] += 1;
            }
            h
        })
        .collect();
    let mut hist = vec![0u64; size];
    for h in counts {
        for (a, b) in hist.iter_mut().zip(h) {
            *a += b;
        }
    }
    let probabilities: Vec<f64> = hist.iter().map(|&c| c as f64 / n as f64).collect();
    let stderr = probabilities.iter().map(|&g| (g / n as f64).sqrt()).collect();
    Ok(GcdResult {
        kind: data.detector(),
        partition: part.clone(),
        shape,
        overflow,
        probabilities,
        stderr,
        error_model: ErrorModel::Poisson { samples: n },
        warnings: vec![],
    })
}

/// Where a marginal is computed from.
#[derive(Debug, Clone, Copy)]
pub enum MarginalSource<'a> {
    Counts(&'a CountDataset),
    /// Per-sample vacuum probabilities.
    ThresholdEnsemble { p: &'a SampleBlocks<Complex64>, batch_size: usize },
    /// Per-sample photon numbers.
    PnrEnsemble { n: &'a SampleBlocks<Complex64>, batch_size: usize },
}

/// Joint count distribution on the modes in `modes` (order `K = modes.len()`),
/// one axis per mode. For PNR data counts above `cap` share an overflow bin.
pub fn marginal_distribution(source: MarginalSource<'_>, modes: &[usize], cap: usize) -> Result<GcdResult> {
    let total = match source {
        MarginalSource::Counts(d) => d.modes(),
        MarginalSource::ThresholdEnsemble { p, .. } => p.cols(),
        MarginalSource::PnrEnsemble { n, .. } => n.cols(),
    };
    if modes.len() > total {
        return Err(GbsError::Config(format!("marginal order {} exceeds {total} modes", modes.len())));
    }
    let part = Partition::singletons(modes, total)?;
    match source {
        MarginalSource::Counts(d) => match d.detector() {
            Detector::Threshold => gcd_from_counts(d, &part),
            Detector::Pnr => gcd_from_counts_capped(d, &part, Some(cap)),
        },
        MarginalSource::ThresholdEnsemble { p, batch_size } => gcd_threshold_from_ensemble(p, &part, batch_size),
        MarginalSource::PnrEnsemble { n, batch_size } => gcd_pnr_from_ensemble(n, &part, cap, batch_size),
    }
}

/// Mode subsets for order-`k` marginals: every subset when there are at most
/// `max_subsets`, otherwise `max_subsets` drawn uniformly without replacement.
pub fn marginal_subsets(modes: usize, k: usize, max_subsets: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > modes {
        return Err(GbsError::Config(format!("marginal order {k} is not in 1..={modes}")));
    }
    let count = binomial(modes, k);
    if count <= max_subsets as f64 {
        return Ok(combinations(modes, k));
    }
    let mut rng = stream(seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), StreamPurpose::Subsampling);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(max_subsets);
    while out.len() < max_subsets {
        let mut s = sample_indices(&mut rng, modes, k).into_vec();
        s.sort_unstable();
        if seen.insert(s.clone()) {
            out.push(s);
        }
        // keep the generator moving even on duplicates
        let _: u32 = rng.random();
    }
    Ok(out)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}
