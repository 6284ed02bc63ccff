//! Exact probabilities for small systems.
//!
//! The output state is described by its Q-ordered covariance in the
//! `(a, a+)` basis,
//!
//! ```text
//! sigma_Q = [[I + N^T, A], [A^*, I + N]],   N_ij = <a+_i a_j>,  A_ij = <a_i a_j>,
//! ```
//!
//! so the probability that a set of modes `S` is empty is
//! `1 / sqrt(det sigma_Q[S, S])` with doubled indices. Click probabilities use
//! the Torontonian of `O = I - sigma_Q^{-1}`; photon-number probabilities use
//! the Hafnian of `X O` with `X` the block swap.

mod hafnian;
mod torontonian;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;

use crate::dataset::{CountDataset, Detector, Provenance};
use crate::error::{GbsError, Result};
use crate::gaussian_state::{output_moments, SqueezerBank, TransmissionMatrix};
use crate::gcd::{ravel, unravel, GcdResult, Partition};
use crate::linalg::{det_lu, hermitian_eigenvalues, max_abs, C_ONE, C_ZERO};
use crate::rng::{stream, StreamPurpose};
use crate::stats::XebModel;

pub use hafnian::{hafnian, MAX_HAFNIAN_DIM};
pub use torontonian::{torontonian, DET_FLOOR, MAX_TORONTONIAN_MODES};

/// Largest mode count for full click-pattern tables.
pub const MAX_TABLE_MODES: usize = 16;
/// Largest total photon number for a single PNR pattern.
pub const MAX_PATTERN_PHOTONS: usize = 20;
/// Largest total count enumerated by the PNR brute-force GCD.
pub const MAX_PNR_ENUMERATION: usize = 12;

/// Zero-mean Gaussian state of `M` output modes.
#[derive(Debug, Clone)]
pub struct GaussianOutputState {
    normal: DMatrix<Complex64>,
    anomalous: DMatrix<Complex64>,
    sigma_q: DMatrix<Complex64>,
}

impl GaussianOutputState {
    /// Validates Hermiticity of `N`, symmetry of `A` and the uncertainty
    /// relation `[[I + N^T, A], [A^*, N]] >= 0`.
    pub fn from_moments(normal: DMatrix<Complex64>, anomalous: DMatrix<Complex64>) -> Result<Self> {
        let m = normal.nrows();
        if !normal.is_square() || anomalous.shape() != normal.shape() {
            return Err(GbsError::Dimension("normal and anomalous blocks differ in shape".into()));
        }
        let scale = 1.0 + max_abs(&normal).max(max_abs(&anomalous));
        if max_abs(&(&normal - normal.adjoint())) > 1e-10 * scale {
            return Err(GbsError::Validation("normal block is not Hermitian".into()));
        }
        if max_abs(&(&anomalous - anomalous.transpose())) > 1e-10 * scale {
            return Err(GbsError::Validation("anomalous block is not symmetric".into()));
        }
        let mut phys = DMatrix::from_element(2 * m, 2 * m, C_ZERO);
        phys.view_mut((0, 0), (m, m)).copy_from(&(DMatrix::identity(m, m) + normal.transpose()));
        phys.view_mut((0, m), (m, m)).copy_from(&anomalous);
        phys.view_mut((m, 0), (m, m)).copy_from(&anomalous.map(|z| z.conj()));
        phys.view_mut((m, m), (m, m)).copy_from(&normal);
        let phys = (&phys + phys.adjoint()) * Complex64::new(0.5, 0.0);
        let min = hermitian_eigenvalues(&phys).iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if m > 0 && min < -1e-9 * scale {
            return Err(GbsError::Validation(format!("state violates the uncertainty relation (eigenvalue {min:e})")));
        }
        let mut sigma_q = phys;
        for i in m..2 * m {
            sigma_q[(i, i)] += C_ONE;
        }
        Ok(GaussianOutputState { normal, anomalous, sigma_q })
    }

    pub fn from_bank(bank: &SqueezerBank, t: &TransmissionMatrix) -> Result<Self> {
        let (n, a) = output_moments(bank, t)?;
        Self::from_moments(n, a)
    }

    pub fn vacuum(modes: usize) -> Self {
        Self::from_moments(DMatrix::zeros(modes, modes), DMatrix::zeros(modes, modes)).expect("vacuum is physical")
    }

    /// Independent thermal modes with the given mean photon numbers.
    pub fn thermal(nbar: &[f64]) -> Result<Self> {
        let m = nbar.len();
        let n = DMatrix::from_fn(m, m, |i, j| if i == j { Complex64::new(nbar[i], 0.0) } else { C_ZERO });
        Self::from_moments(n, DMatrix::zeros(m, m))
    }

    pub fn modes(&self) -> usize {
        self.normal.nrows()
    }

    pub fn normal(&self) -> &DMatrix<Complex64> {
        &self.normal
    }

    pub fn anomalous(&self) -> &DMatrix<Complex64> {
        &self.anomalous
    }

    /// `2M x 2M` covariance in the `(a, a+)` ordering.
    pub fn sigma_q(&self) -> &DMatrix<Complex64> {
        &self.sigma_q
    }

    pub fn mean_photon_numbers(&self) -> Vec<f64> {
        (0..self.modes()).map(|i| self.normal[(i, i)].re).collect()
    }

    /// Marginal state on `modes`, in the given order.
    pub fn reduced(&self, modes: &[usize]) -> Result<Self> {
        if let Some(&bad) = modes.iter().find(|&&k| k >= self.modes()) {
            return Err(GbsError::Dimension(format!("mode {bad} is not below {}", self.modes())));
        }
        let pick = |m: &DMatrix<Complex64>| DMatrix::from_fn(modes.len(), modes.len(), |i, j| m[(modes[i], modes[j])]);
        Self::from_moments(pick(&self.normal), pick(&self.anomalous))
    }

    fn doubled(&self, modes: &[usize]) -> Vec<usize> {
        let m = self.modes();
        modes.iter().copied().chain(modes.iter().map(|&k| k + m)).collect()
    }

    /// Probability that every mode in `modes` is empty.
    pub fn vacuum_probability(&self, modes: &[usize]) -> Result<f64> {
        if modes.is_empty() {
            return Ok(1.0);
        }
        let idx = self.doubled(modes);
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.sigma_q[(idx[i], idx[j])]);
        let det = match sub.clone().cholesky() {
            Some(ch) => ch.l_dirty().diagonal().iter().map(|d| d.norm_sqr()).product::<f64>(),
            None => det_lu(&sub).re,
        };
        if !(det > DET_FLOOR) {
            return Err(GbsError::NumericalRange(format!("det sigma_Q vanishes on modes {modes:?}")));
        }
        Ok(1.0 / det.sqrt())
    }

    /// `O = I - sigma_Q^{-1}`.
    pub fn o_matrix(&self) -> Result<DMatrix<Complex64>> {
        let n = self.sigma_q.nrows();
        let inv = self
            .sigma_q
            .clone()
            .try_inverse()
            .ok_or_else(|| GbsError::NumericalRange("sigma_Q is singular".into()))?;
        Ok(DMatrix::identity(n, n) - inv)
    }
}

fn check_pattern_len(state: &GaussianOutputState, len: usize) -> Result<()> {
    if len != state.modes() {
        return Err(GbsError::Dimension(format!("pattern has {len} entries but the state has {} modes", state.modes())));
    }
    Ok(())
}

/// Probability of the click pattern (`true` = click) through the
/// Torontonian of the clicked modes.
pub fn click_pattern_probability(state: &GaussianOutputState, pattern: &[bool]) -> Result<f64> {
    check_pattern_len(state, pattern.len())?;
    let m = state.modes();
    let clicked: Vec<usize> = (0..m).filter(|&i| pattern[i]).collect();
    let norm = state.vacuum_probability(&(0..m).collect::<Vec<_>>())?;
    if clicked.is_empty() {
        return Ok(norm);
    }
    let o = state.o_matrix()?;
    let idx = state.doubled(&clicked);
    let o_c = DMatrix::from_fn(idx.len(), idx.len(), |i, j| o[(idx[i], idx[j])]);
    Ok((torontonian(&o_c)? * norm).re)
}

/// Photon-number pattern probabilities for one state, sharing `X O` and the
/// normalisation between calls.
#[derive(Debug, Clone)]
pub struct PnrKernel {
    modes: usize,
    xo: DMatrix<Complex64>,
    norm: f64,
}

impl PnrKernel {
    pub fn new(state: &GaussianOutputState) -> Result<Self> {
        let m = state.modes();
        let o = state.o_matrix()?;
        let xo = DMatrix::from_fn(2 * m, 2 * m, |i, j| o[((i + m) % (2 * m), j)]);
        let xo = (&xo + xo.transpose()) * Complex64::new(0.5, 0.0);
        let norm = state.vacuum_probability(&(0..m).collect::<Vec<_>>())?;
        Ok(PnrKernel { modes: m, xo, norm })
    }

    pub fn probability(&self, counts: &[usize]) -> Result<f64> {
        if counts.len() != self.modes {
            return Err(GbsError::Dimension(format!("pattern has {} entries but the state has {} modes", counts.len(), self.modes)));
        }
        let total: usize = counts.iter().sum();
        if total > MAX_PATTERN_PHOTONS {
            return Err(GbsError::SizeGuard(format!("pattern holds {total} photons, above {MAX_PATTERN_PHOTONS}")));
        }
        let m = self.modes;
        let mut idx = Vec::with_capacity(2 * total);
        for (i, &c) in counts.iter().enumerate() {
            idx.extend(std::iter::repeat_n(i, c));
        }
        for (i, &c) in counts.iter().enumerate() {
            idx.extend(std::iter::repeat_n(i + m, c));
        }
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.xo[(idx[i], idx[j])]);
        let fact: f64 = counts.iter().map(|&c| (1..=c).map(|x| x as f64).product::<f64>()).product();
        Ok(hafnian(&sub)?.re * self.norm / fact)
    }
}

/// Probability of the photon-number pattern.
pub fn pnr_pattern_probability(state: &GaussianOutputState, counts: &[usize]) -> Result<f64> {
    check_pattern_len(state, counts.len())?;
    PnrKernel::new(state)?.probability(counts)
}

/// Probabilities of all `2^M` click patterns, indexed by the bit mask of
/// clicked modes. Built from the vacuum probabilities of every mode subset
/// by Moebius inversion.
pub fn threshold_pattern_table(state: &GaussianOutputState) -> Result<Vec<f64>> {
    let m = state.modes();
    if m > MAX_TABLE_MODES {
        return Err(GbsError::SizeGuard(format!("{m} modes exceed the {MAX_TABLE_MODES}-mode pattern table limit")));
    }
    let full = (1usize << m) - 1;
    // h[U] = P(modes outside U are empty)
    let mut h: Vec<f64> = (0..=full)
        .into_par_iter()
        .map(|u| {
            let empty: Vec<usize> = (0..m).filter(|&i| (full ^ u) >> i & 1 == 1).collect();
            state.vacuum_probability(&empty)
        })
        .collect::<Result<_>>()?;
    for b in 0..m {
        let bit = 1 << b;
        for mask in 0..=full {
            if mask & bit != 0 {
                h[mask] -= h[mask ^ bit];
            }
        }
    }
    Ok(h)
}

/// Exact GCD by enumeration. For PNR the bins are `0..=pnr_cap` plus an
/// overflow bin per axis, matching [`crate::gcd::gcd_pnr_from_ensemble`].
pub fn brute_force_gcd(state: &GaussianOutputState, part: &Partition, detector: Detector, pnr_cap: usize) -> Result<GcdResult> {
    if part.modes() != state.modes() {
        return Err(GbsError::Dimension(format!("partition is over {} modes but the state has {}", part.modes(), state.modes())));
    }
    match detector {
        Detector::Threshold => brute_force_threshold(state, part),
        Detector::Pnr => brute_force_pnr(state, part, pnr_cap),
    }
}

fn brute_force_threshold(state: &GaussianOutputState, part: &Partition) -> Result<GcdResult> {
    let covered = part.covered_modes();
    let reduced = state.reduced(&covered)?;
    let table = threshold_pattern_table(&reduced)?;
    let pos: HashMap<usize, usize> = covered.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let groups: Vec<Vec<usize>> = part.subsets().iter().map(|s| s.iter().map(|k| pos[k]).collect()).collect();
    let shape: Vec<usize> = groups.iter().map(|g| g.len() + 1).collect();
    let mut probs = vec![0.0; shape.iter().product()];
    let mut idx = vec![0; groups.len()];
    for (mask, &p) in table.iter().enumerate() {
        for (j, g) in groups.iter().enumerate() {
            idx[j] = g.iter().filter(|&&i| mask >> i & 1 == 1).count();
        }
        probs[ravel(&idx, &shape)] += p;
    }
    Ok(GcdResult::exact(Detector::Threshold, part.clone(), shape, false, probs))
}

/// All ways to write `total` as an ordered sum of `parts` non-negative terms.
pub fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn brute_force_pnr(state: &GaussianOutputState, part: &Partition, cap: usize) -> Result<GcdResult> {
    let d = part.dimension();
    if cap * d > MAX_PNR_ENUMERATION {
        return Err(GbsError::SizeGuard(format!(
            "{d} groups with cap {cap} enumerate patterns above {MAX_PNR_ENUMERATION} photons"
        )));
    }
    let width = cap + 1;
    // tables[G]: joint distribution of the group totals in G, restricted to totals <= cap
    let mut tables: Vec<Vec<f64>> = vec![vec![1.0]];
    for g in 1usize..1 << d {
        let axes: Vec<usize> = (0..d).filter(|&j| g >> j & 1 == 1).collect();
        let modes: Vec<usize> = axes.iter().flat_map(|&j| part.subsets()[j].iter().copied()).collect();
        let kernel = PnrKernel::new(&state.reduced(&modes)?)?;
        let per_axis: Vec<Vec<(usize, Vec<usize>)>> = axes
            .iter()
            .map(|&j| {
                (0..=cap)
                    .flat_map(|t| compositions(t, part.subsets()[j].len()).into_iter().map(move |c| (t, c)))
                    .collect()
            })
            .collect();
        let mut combos: Vec<Vec<usize>> = vec![vec![]];
        for choices in &per_axis {
            combos = combos
                .into_iter()
                .flat_map(|prefix| (0..choices.len()).map(move |c| prefix.iter().copied().chain([c]).collect()))
                .collect();
        }
        let shape = vec![width; axes.len()];
        let parts: Vec<(usize, f64)> = combos
            .par_iter()
            .map(|combo| {
                let mut counts = Vec::with_capacity(modes.len());
                let mut bin = Vec::with_capacity(axes.len());
                for (a, &c) in combo.iter().enumerate() {
                    let (t, comp) = &per_axis[a][c];
                    bin.push(*t);
                    counts.extend_from_slice(comp);
                }
                Ok((ravel(&bin, &shape), kernel.probability(&counts)?))
            })
            .collect::<Result<_>>()?;
        let mut table = vec![0.0; width.pow(axes.len() as u32)];
        for (i, p) in parts {
            table[i] += p;
        }
        tables.push(table);
    }
    let shape = vec![cap + 2; d];
    let mut probs = vec![0.0; shape.iter().product()];
    for (flat, slot) in probs.iter_mut().enumerate() {
        let bin = unravel(flat, &shape);
        let over: usize = (0..d).filter(|&j| bin[j] == cap + 1).fold(0, |acc, j| acc | 1 << j);
        let fixed = ((1usize << d) - 1) ^ over;
        // inclusion-exclusion over which overflowing axes are instead bounded
        let mut u = over;
        loop {
            let g = fixed | u;
            let sign = if u.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            *slot += sign * bounded_sum(&tables[g], g, d, width, &bin, fixed);
            if u == 0 {
                break;
            }
            u = (u - 1) & over;
        }
    }
    Ok(GcdResult::exact(Detector::Pnr, part.clone(), shape, true, probs))
}

/// Sum of `table` (over the axes in `g`) with axes in `fixed` pinned to `bin`.
fn bounded_sum(table: &[f64], g: usize, d: usize, width: usize, bin: &[usize], fixed: usize) -> f64 {
    let axes: Vec<usize> = (0..d).filter(|&j| g >> j & 1 == 1).collect();
    let shape = vec![width; axes.len()];
    table
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let idx = unravel(*i, &shape);
            axes.iter().zip(&idx).all(|(&a, &v)| fixed >> a & 1 == 0 || bin[a] == v)
        })
        .map(|(_, &p)| p)
        .sum()
}

/// `n` click records drawn from the exact pattern distribution.
pub fn sample_threshold_patterns(state: &GaussianOutputState, n: usize, seed: u64) -> Result<CountDataset> {
    let table = threshold_pattern_table(state)?;
    let weights: Vec<f64> = table.iter().map(|&p| p.max(0.0)).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| GbsError::NumericalRange(format!("pattern table: {e}")))?;
    let m = state.modes();
    let mut rng = stream(seed, StreamPurpose::Outcomes);
    let mut data = Vec::with_capacity(n * m);
    for _ in 0..n {
        let mask = dist.sample(&mut rng);
        data.extend((0..m).map(|i| (mask >> i & 1) as u8));
    }
    CountDataset::new(Detector::Threshold, m, 1, data, Provenance::Oracle)
}

/// XEB model backed by exact pattern tables of the leading-mode marginals.
#[derive(Debug)]
pub struct OracleXebModel {
    state: GaussianOutputState,
    tables: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
}

impl OracleXebModel {
    pub fn new(state: GaussianOutputState) -> Self {
        OracleXebModel { state, tables: Mutex::new(HashMap::new()) }
    }

    fn table(&self, modes: usize) -> Result<Arc<Vec<f64>>> {
        if let Some(t) = self.tables.lock().expect("table cache").get(&modes) {
            return Ok(t.clone());
        }
        let reduced = self.state.reduced(&(0..modes).collect::<Vec<_>>())?;
        let t = Arc::new(threshold_pattern_table(&reduced)?);
        self.tables.lock().expect("table cache").insert(modes, t.clone());
        Ok(t)
    }
}

impl XebModel for OracleXebModel {
    fn pattern_probability(&self, pattern: &[u8]) -> Result<f64> {
        let table = self.table(pattern.len())?;
        let mask = pattern.iter().enumerate().fold(0usize, |acc, (i, &c)| acc | usize::from(c > 0) << i);
        Ok(table[mask])
    }

    fn sector_probability(&self, modes: usize, clicks: usize) -> Result<f64> {
        let table = self.table(modes)?;
        Ok(table.iter().enumerate().filter(|(mask, _)| mask.count_ones() as usize == clicks).map(|(_, &p)| p).sum())
    }
}
