//! Pearson chi-square, Z-scores, validation reports and cross-entropy
//! benchmarking.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::dataset::{CountDataset, Detector};
use crate::error::{GbsError, Result};
use crate::gcd::GcdResult;
use crate::rng::{stream, StreamPurpose};

/// `|Z_WH|` at which the Lugannani-Rice form takes over.
pub const Z_HANDOVER: f64 = 6.0;
/// Largest `|Z|` that counts as agreement.
pub const PASS_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZMethod {
    WilsonHilferty,
    LugannaniRice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub chi2: f64,
    pub k: usize,
    pub z: f64,
    pub method: ZMethod,
    /// Moment-matched `(scale, dof)` used instead of `(1, k)` when the
    /// summed bins are correlated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective: Option<(f64, f64)>,
}

/// `chi2 = sum_i (g_i - s_i)^2 / (sigma_i^2 + sigma_{S,i}^2)`, with
/// `k = (bins used) - 1`. Bins with zero combined variance are skipped when
/// the values agree and rejected otherwise.
pub fn pearson_chi2(truth: &[f64], truth_se: &[f64], sample: &[f64], sample_se: &[f64]) -> Result<(f64, usize)> {
    let n = truth.len();
    if truth_se.len() != n || sample.len() != n || sample_se.len() != n {
        return Err(GbsError::Dimension("chi-square inputs differ in length".into()));
    }
    let mut chi2 = 0.0;
    let mut used = 0usize;
    for i in 0..n {
        let var = truth_se[i].powi(2) + sample_se[i].powi(2);
        let diff = truth[i] - sample[i];
        if var == 0.0 {
            if diff.abs() > 1e-15 {
                return Err(GbsError::Validation(format!("bin {i} differs by {diff:e} with zero variance")));
            }
            continue;
        }
        chi2 += diff * diff / var;
        used += 1;
    }
    if used < 2 {
        return Err(GbsError::Validation(format!("only {used} bins carry variance")));
    }
    Ok((chi2, used - 1))
}

/// [`pearson_chi2`] over two GCDs with identical binning.
pub fn pearson_chi2_gcd(truth: &GcdResult, sample: &GcdResult) -> Result<(f64, usize)> {
    if truth.shape != sample.shape || truth.overflow != sample.overflow {
        return Err(GbsError::Dimension(format!("GCD shapes differ: {:?} vs {:?}", truth.shape, sample.shape)));
    }
    pearson_chi2(&truth.probabilities, &truth.stderr, &sample.probabilities, &sample.stderr)
}

fn wilson_hilferty(chi2: f64, k: f64) -> f64 {
    let v = 2.0 / (9.0 * k);
    ((chi2 / k).cbrt() - (1.0 - v)) / v.sqrt()
}

fn lugannani_rice(chi2: f64, k: f64) -> f64 {
    let x = chi2 / k;
    (x - 1.0).signum() * (k * (x - 1.0 - x.ln())).max(0.0).sqrt()
}

/// Standard-normal equivalent of a chi-square value: Wilson-Hilferty while
/// `|Z| < 6`, Lugannani-Rice beyond.
pub fn z_from_chi2(chi2: f64, k: usize) -> Result<ChiSquareResult> {
    let (z, method) = z_from_chi2_dof(chi2, k as f64)?;
    Ok(ChiSquareResult { chi2, k, z, method, effective: None })
}

/// [`z_from_chi2`] for a possibly fractional number of degrees of freedom.
pub fn z_from_chi2_dof(chi2: f64, k: f64) -> Result<(f64, ZMethod)> {
    if !(chi2 >= 0.0) || !chi2.is_finite() {
        return Err(GbsError::Validation(format!("chi-square {chi2} is not a finite non-negative number")));
    }
    if !(k > 0.0) || !k.is_finite() {
        return Err(GbsError::Validation(format!("chi-square needs positive degrees of freedom, got {k}")));
    }
    let wh = wilson_hilferty(chi2, k);
    // the saddle-point form diverges at chi2 = 0
    if wh.abs() < Z_HANDOVER || chi2 == 0.0 {
        return Ok((wh, ZMethod::WilsonHilferty));
    }
    Ok((lugannani_rice(chi2, k), ZMethod::LugannaniRice))
}

/// Z of `chi2 ~ scale * chi2(dof)`, keeping the nominal `k` for reporting.
pub fn z_from_scaled_chi2(chi2: f64, k: usize, scale: f64, dof: f64) -> Result<ChiSquareResult> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(GbsError::Validation(format!("chi-square scale {scale} is not positive")));
    }
    let (z, method) = z_from_chi2_dof(chi2 / scale, dof)?;
    Ok(ChiSquareResult { chi2, k, z, method, effective: Some((scale, dof)) })
}

/// `|Z_WH - Z_LR|` at the chi-square where `Z_WH = 6`.
pub fn handover_gap(k: usize) -> f64 {
    let kf = k as f64;
    let v = 2.0 / (9.0 * kf);
    let chi2 = kf * (1.0 - v + Z_HANDOVER * v.sqrt()).powi(3);
    (Z_HANDOVER - lugannani_rice(chi2, kf)).abs()
}

/// Chi-square test of a sample GCD against a truth GCD.
pub fn compare_gcd(truth: &GcdResult, sample: &GcdResult) -> Result<ChiSquareResult> {
    let (chi2, k) = pearson_chi2_gcd(truth, sample)?;
    z_from_chi2(chi2, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTest {
    pub name: String,
    #[serde(flatten)]
    pub result: ChiSquareResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tests: Vec<NamedTest>,
    pub max_abs_z: f64,
    pub worst_test: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xeb: Option<XebResult>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serialises")
    }
}

/// Collects named tests, reports the largest `|Z|` and passes when it is at
/// most 3.
pub fn max_z_report(tests: Vec<NamedTest>) -> Result<ValidationReport> {
    let worst = tests
        .iter()
        .max_by(|a, b| a.result.z.abs().total_cmp(&b.result.z.abs()))
        .ok_or_else(|| GbsError::Validation("no tests to report".into()))?;
    let max_abs_z = worst.result.z.abs();
    let worst_test = worst.name.clone();
    Ok(ValidationReport {
        tests,
        max_abs_z,
        worst_test,
        xeb: None,
        pass: max_abs_z <= PASS_THRESHOLD,
        notices: vec![],
        metadata: BTreeMap::new(),
    })
}

/// Probabilities used for cross-entropy scoring. Patterns cover the leading
/// `pattern.len()` modes and are marginalised over the rest.
pub trait XebModel {
    fn pattern_probability(&self, pattern: &[u8]) -> Result<f64>;
    /// Probability of exactly `clicks` clicks among the first `modes` modes.
    fn sector_probability(&self, modes: usize, clicks: usize) -> Result<f64>;
}

/// Every click pattern equally likely.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformModel;

impl XebModel for UniformModel {
    fn pattern_probability(&self, pattern: &[u8]) -> Result<f64> {
        Ok(0.5f64.powi(pattern.len() as i32))
    }

    fn sector_probability(&self, modes: usize, clicks: usize) -> Result<f64> {
        Ok(crate::gcd::binomial(modes, clicks) * 0.5f64.powi(modes as i32))
    }
}

/// `-(1/N) sum_i ln(Pr(S_i) / Pr(n))`.
pub fn xeb_score<F>(records: &[&[u8]], prob_fn: F, prob_n: f64) -> Result<f64>
where
    F: Fn(&[u8]) -> Result<f64>,
{
    if records.is_empty() {
        return Err(GbsError::Validation("no records to score".into()));
    }
    if !(prob_n > 0.0) {
        return Err(GbsError::Validation(format!("sector probability {prob_n} is not positive")));
    }
    let mut total = 0.0;
    for (i, r) in records.iter().enumerate() {
        let p = prob_fn(r)?;
        if !(p > 0.0) {
            return Err(GbsError::Validation(format!("record {i} ({r:?}) has model probability {p}")));
        }
        total += (p / prob_n).ln();
    }
    Ok(-total / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct XebOptions {
    pub n_max: usize,
    pub samples_per_sector: usize,
    pub seed: u64,
}

impl XebOptions {
    pub fn with_seed(seed: u64) -> Self {
        XebOptions { n_max: 15, samples_per_sector: 1000, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XebResult {
    pub per_photon_number: BTreeMap<usize, f64>,
    /// Standard error of each sector's mean log-ratio.
    pub stderr: BTreeMap<usize, f64>,
    pub m_max: usize,
    pub samples_per_sector: usize,
    pub max: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
}

/// Number of records whose first `m` modes hold exactly `n` clicks, for
/// `m = 1..=M` (index `m - 1`).
pub fn sector_populations(data: &CountDataset, n: usize) -> Vec<usize> {
    let mut pop = vec![0usize; data.modes()];
    for r in data.records() {
        let mut s = 0usize;
        for (m, &c) in r.iter().enumerate() {
            s += c as usize;
            if s == n {
                pop[m] += 1;
            }
        }
    }
    pop
}

/// Largest `M_max` maximising the population of the `n_max` sector.
pub fn choose_m_max(data: &CountDataset, n_max: usize) -> usize {
    let pop = sector_populations(data, n_max);
    let best = pop.iter().copied().max().unwrap_or(0);
    pop.iter().rposition(|&p| p == best).map_or(data.modes(), |i| i + 1)
}

/// Per-photon-number XEB on the leading `M_max` modes, scoring a seeded
/// subsample of `samples_per_sector` records in every sector that has enough.
pub fn xeb_protocol(data: &CountDataset, model: &dyn XebModel, opts: XebOptions) -> Result<XebResult> {
    if data.detector() != Detector::Threshold {
        return Err(GbsError::Config("XEB protocol needs threshold data".into()));
    }
    if data.is_empty() {
        return Err(GbsError::Config("dataset has no records".into()));
    }
    if opts.samples_per_sector == 0 {
        return Err(GbsError::Config("samples per sector must be positive".into()));
    }
    let m_max = choose_m_max(data, opts.n_max);
    let mut sectors: Vec<Vec<usize>> = vec![Vec::new(); opts.n_max + 1];
    for (i, r) in data.records().enumerate() {
        let s: usize = r[..m_max].iter().map(|&c| c as usize).sum();
        if s <= opts.n_max {
            sectors[s].push(i);
        }
    }
    let mut per = BTreeMap::new();
    let mut errs = BTreeMap::new();
    let mut notices = Vec::new();
    for (n, members) in sectors.iter().enumerate() {
        if members.len() < opts.samples_per_sector {
            notices.push(format!("sector n={n} skipped: {} records, need {}", members.len(), opts.samples_per_sector));
            continue;
        }
        let mut rng = stream(opts.seed ^ (n as u64).wrapping_mul(0xd1b5_4a32_d192_ed03), StreamPurpose::Subsampling);
        let mut picked: Vec<usize> = sample_indices(&mut rng, members.len(), opts.samples_per_sector).into_vec();
        picked.sort_unstable();
        let records: Vec<&[u8]> = picked.iter().map(|&j| &data.record(members[j])[..m_max]).collect();
        let prob_n = model.sector_probability(m_max, n)?;
        let logs: Vec<f64> = records
            .iter()
            .map(|r| xeb_score(&[r], |p| model.pattern_probability(p), prob_n))
            .collect::<Result<_>>()?;
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (logs.len() as f64 - 1.0).max(1.0);
        per.insert(n, mean);
        errs.insert(n, (var / logs.len() as f64).sqrt());
    }
    if per.is_empty() {
        return Err(GbsError::Validation(format!(
            "no photon-number sector up to {} has {} records",
            opts.n_max, opts.samples_per_sector
        )));
    }
    let max = per.values().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(XebResult { per_photon_number: per, stderr: errs, m_max, samples_per_sector: opts.samples_per_sector, max, notices })
}
