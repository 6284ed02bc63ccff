//! The comparison pipeline: total-count GCD, two-group GCD and low-order
//! marginals of a dataset, each tested against a ground truth, collected
//! into one report.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use rayon::prelude::*;

use crate::blocks::SampleBlocks;
use crate::dataset::{CountDataset, Detector};
use crate::error::{GbsError, Result};
use crate::gcd::{
    gcd_from_counts, gcd_from_counts_capped, gcd_pnr_from_ensemble, gcd_threshold_from_ensemble, marginal_subsets,
    ravel, ErrorModel, GcdResult, Partition, MAX_MARGINAL_SUBSETS,
};
use crate::oracle::{brute_force_gcd, GaussianOutputState};
use crate::stats::{max_z_report, pearson_chi2, z_from_chi2, z_from_scaled_chi2, NamedTest, ValidationReport};

/// Bins whose expected count `N * G` falls below this are pooled.
pub const MIN_EXPECTED_COUNT: f64 = 10.0;

/// Records used to estimate correlations between marginal bins.
pub const CORRELATION_RECORDS: usize = 20_000;

/// Where the comparison distribution comes from.
#[derive(Debug, Clone, Copy)]
pub enum TruthSource<'a> {
    Exact(&'a GaussianOutputState),
    /// Raw per-sample vacuum probabilities (threshold) or photon numbers
    /// (PNR) of a positive-P ensemble.
    Ensemble { values: &'a SampleBlocks<Complex64>, batch_size: usize },
    Counts(&'a CountDataset),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub total_gcd: bool,
    pub gcd2d: bool,
    pub marginal_orders: Vec<usize>,
    /// Count cap for PNR bins; larger counts share an overflow bin.
    pub pnr_cap: usize,
    pub max_subsets: usize,
    pub subset_seed: u64,
    /// Seeded uniform subsample `(records, seed)` applied to the dataset.
    pub subsample: Option<(usize, u64)>,
    pub min_expected: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            total_gcd: true,
            gcd2d: true,
            marginal_orders: vec![1, 2],
            pnr_cap: 4,
            max_subsets: MAX_MARGINAL_SUBSETS,
            subset_seed: 0,
            subsample: None,
            min_expected: MIN_EXPECTED_COUNT,
        }
    }
}

impl TruthSource<'_> {
    pub fn modes(&self) -> usize {
        match self {
            TruthSource::Exact(s) => s.modes(),
            TruthSource::Ensemble { values, .. } => values.cols(),
            TruthSource::Counts(d) => d.modes(),
        }
    }

    /// Truth GCD for `part`; `cap` bounds PNR bins.
    pub fn gcd(&self, part: &Partition, detector: Detector, cap: usize) -> Result<GcdResult> {
        match *self {
            TruthSource::Exact(s) => brute_force_gcd(s, part, detector, cap),
            TruthSource::Ensemble { values, batch_size } => match detector {
                Detector::Threshold => gcd_threshold_from_ensemble(values, part, batch_size),
                Detector::Pnr => gcd_pnr_from_ensemble(values, part, cap, batch_size),
            },
            TruthSource::Counts(d) => sample_gcd(d, part, cap),
        }
    }
}

/// Direct-binned GCD of a dataset; PNR counts above `cap` share an overflow bin.
pub fn sample_gcd(data: &CountDataset, part: &Partition, cap: usize) -> Result<GcdResult> {
    match data.detector() {
        Detector::Threshold => gcd_from_counts(data, part),
        Detector::Pnr => gcd_from_counts_capped(data, part, Some(cap)),
    }
}

/// Pooled truth and sample vectors for one comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledBins {
    pub truth: Vec<f64>,
    pub truth_se: Vec<f64>,
    pub sample: Vec<f64>,
    pub sample_se: Vec<f64>,
    pub pooled: usize,
    /// Original bins behind each kept entry.
    pub groups: Vec<Vec<usize>>,
}

fn pooled_se(g: &GcdResult, idx: &[usize], p: f64) -> f64 {
    match g.error_model {
        ErrorModel::Poisson { samples } => (p.max(0.0) / samples as f64).sqrt(),
        ErrorModel::Exact => 0.0,
        ErrorModel::BatchMeans { .. } => idx.iter().map(|&i| g.stderr[i].powi(2)).sum::<f64>().sqrt(),
    }
}

/// Merge every bin with `n * truth < min_expected` into one bin, which is
/// dropped when it is itself below the threshold.
pub fn pool_low_expectation(truth: &GcdResult, sample: &GcdResult, n: usize, min_expected: f64) -> Result<PooledBins> {
    if truth.shape != sample.shape || truth.overflow != sample.overflow {
        return Err(GbsError::Dimension(format!("GCD shapes differ: {:?} vs {:?}", truth.shape, sample.shape)));
    }
    let low: Vec<usize> = (0..truth.len()).filter(|&i| truth.probabilities[i] * (n as f64) < min_expected).collect();
    let mut out = PooledBins {
        truth: vec![],
        truth_se: vec![],
        sample: vec![],
        sample_se: vec![],
        pooled: low.len(),
        groups: vec![],
    };
    for i in (0..truth.len()).filter(|i| !low.contains(i)) {
        out.groups.push(vec![i]);
        out.truth.push(truth.probabilities[i]);
        out.truth_se.push(truth.stderr[i]);
        out.sample.push(sample.probabilities[i]);
        out.sample_se.push(sample.stderr[i]);
    }
    let tp: f64 = low.iter().map(|&i| truth.probabilities[i]).sum();
    if !low.is_empty() && tp * n as f64 >= min_expected {
        let sp: f64 = low.iter().map(|&i| sample.probabilities[i]).sum();
        out.truth.push(tp);
        out.truth_se.push(pooled_se(truth, &low, tp));
        out.sample.push(sp);
        out.sample_se.push(pooled_se(sample, &low, sp));
        out.groups.push(low);
    }
    Ok(out)
}

fn chi2_pooled(truth: &GcdResult, sample: &GcdResult, n: usize, min_expected: f64) -> Result<(f64, usize)> {
    let b = pool_low_expectation(truth, sample, n, min_expected)?;
    pearson_chi2(&b.truth, &b.truth_se, &b.sample, &b.sample_se)
}

/// Chi-square terms of one marginal subset, with what is needed to
/// correlate them against other subsets.
struct SubsetTerms {
    chi2: f64,
    k: usize,
    modes: Vec<usize>,
    shape: Vec<usize>,
    /// Original bins of each bin that entered the chi-square.
    groups: Vec<Vec<usize>>,
    /// `Var(g_i - s_i) / (sigma_i^2 + sigma_{S,i}^2)` under the null.
    factors: Vec<f64>,
}

fn variance_factor(model: &ErrorModel, p: f64) -> f64 {
    match model {
        // the binomial variance is p (1 - p) / N, the quoted one p / N
        ErrorModel::Poisson { .. } => (1.0 - p).clamp(0.0, 1.0),
        _ => 1.0,
    }
}

fn subset_terms(modes: &[usize], truth: &GcdResult, sample: &GcdResult, n: usize, min_expected: f64) -> Result<SubsetTerms> {
    let b = pool_low_expectation(truth, sample, n, min_expected)?;
    let (chi2, k) = pearson_chi2(&b.truth, &b.truth_se, &b.sample, &b.sample_se)?;
    let mut groups = Vec::new();
    let mut factors = Vec::new();
    for i in 0..b.truth.len() {
        let (vt, vs) = (b.truth_se[i].powi(2), b.sample_se[i].powi(2));
        if vt + vs == 0.0 {
            continue;
        }
        let p = b.truth[i];
        factors.push((vt * variance_factor(&truth.error_model, p) + vs * variance_factor(&sample.error_model, p)) / (vt + vs));
        groups.push(b.groups[i].clone());
    }
    Ok(SubsetTerms { chi2, k, modes: modes.to_vec(), shape: truth.shape.clone(), groups, factors })
}

/// Moment-matched `(scale, dof)` for a sum of chi-square terms from
/// overlapping subsets: `E[Q] = sum f_b`, `Var[Q] = 2 sum_bc rho_bc^2 f_b f_c`,
/// with bin correlations `rho` estimated from up to `CORRELATION_RECORDS`
/// evenly spaced records.
fn correlated_sum(data: &CountDataset, terms: &[SubsetTerms]) -> Option<(f64, f64)> {
    let n = data.len();
    let r = n.min(CORRELATION_RECORDS);
    if terms.is_empty() || r < 2 {
        return None;
    }
    let rows: Vec<usize> = (0..r).map(|i| i * n / r).collect();
    // used-bin index of every sampled record in every subset
    let features: Vec<Vec<u32>> = terms
        .par_iter()
        .map(|t| {
            let mut map = vec![u32::MAX; t.shape.iter().product()];
            for (u, g) in t.groups.iter().enumerate() {
                for &orig in g {
                    map[orig] = u as u32;
                }
            }
            let mut idx = vec![0usize; t.shape.len()];
            rows.iter()
                .map(|&row| {
                    let rec = data.record(row);
                    for (j, &mode) in t.modes.iter().enumerate() {
                        idx[j] = (rec[mode] as usize).min(t.shape[j] - 1);
                    }
                    map[ravel(&idx, &t.shape)]
                })
                .collect()
        })
        .collect();
    let rf = r as f64;
    let marginals: Vec<Vec<f64>> = terms
        .iter()
        .zip(&features)
        .map(|(t, f)| {
            let mut p = vec![0.0; t.groups.len()];
            for &u in f.iter().filter(|&&u| u != u32::MAX) {
                p[u as usize] += 1.0 / rf;
            }
            p
        })
        .collect();
    let spread = |p: f64| (p * (1.0 - p)).max(0.0).sqrt();

    let mean: f64 = terms.iter().flat_map(|t| t.factors.iter()).sum();
    let within: f64 = terms
        .iter()
        .zip(&marginals)
        .map(|(t, p)| {
            let mut v = 0.0;
            for b in 0..p.len() {
                for c in 0..p.len() {
                    let rho2 = if b == c {
                        1.0
                    } else {
                        let d = spread(p[b]) * spread(p[c]);
                        if d > 0.0 { (p[b] * p[c]).powi(2) / (d * d) } else { 0.0 }
                    };
                    v += rho2 * t.factors[b] * t.factors[c];
                }
            }
            v
        })
        .sum();
    let across: f64 = (0..terms.len())
        .into_par_iter()
        .map(|s| {
            let mut v = 0.0;
            for t in s + 1..terms.len() {
                let (bs, bt) = (terms[s].groups.len(), terms[t].groups.len());
                let mut joint = vec![0.0; bs * bt];
                for (&a, &b) in features[s].iter().zip(&features[t]) {
                    if a != u32::MAX && b != u32::MAX {
                        joint[a as usize * bt + b as usize] += 1.0 / rf;
                    }
                }
                for b in 0..bs {
                    for c in 0..bt {
                        let (pb, pc) = (marginals[s][b], marginals[t][c]);
                        let d = spread(pb) * spread(pc);
                        if d > 0.0 {
                            let rho = (joint[b * bt + c] - pb * pc) / d;
                            // remove the 1/R sampling floor of rho^2
                            let rho2 = (rho * rho - 1.0 / rf).max(0.0);
                            v += rho2 * terms[s].factors[b] * terms[t].factors[c];
                        }
                    }
                }
            }
            v
        })
        .sum();
    let var = 2.0 * (within + 2.0 * across);
    if !(mean > 0.0 && var > 0.0) {
        return None;
    }
    Some((var / (2.0 * mean), 2.0 * mean * mean / var))
}

/// Runs the configured tests on `data` against `truth`.
pub fn run_suite(data: &CountDataset, truth: TruthSource<'_>, opts: &SuiteOptions) -> Result<ValidationReport> {
    if data.is_empty() {
        return Err(GbsError::Config("dataset has no records".into()));
    }
    if truth.modes() != data.modes() {
        return Err(GbsError::Dimension(format!("dataset has {} modes but the truth has {}", data.modes(), truth.modes())));
    }
    if let TruthSource::Counts(d) = truth {
        if d.detector() != data.detector() {
            return Err(GbsError::Config(format!(
                "dataset is {} but the truth is {}",
                data.detector().as_str(),
                d.detector().as_str()
            )));
        }
    }
    let mut metadata = BTreeMap::new();
    let sub;
    let data = match opts.subsample {
        Some((n, seed)) if n < data.len() => {
            sub = data.subsample(n, seed)?;
            metadata.insert("subsample".to_string(), serde_json::json!({ "records": n, "seed": seed, "rule": "seeded uniform" }));
            &sub
        }
        _ => data,
    };
    let n = data.len();
    let m = data.modes();
    let det = data.detector();
    let cap = opts.pnr_cap;
    metadata.insert("samples".to_string(), serde_json::json!(n));
    metadata.insert("min_expected".to_string(), serde_json::json!(opts.min_expected));

    let mut tests = Vec::new();
    let mut notices = Vec::new();
    let mut push = |name: String, chi: Result<(f64, usize)>, notices: &mut Vec<String>| -> Result<()> {
        match chi {
            Ok((c, k)) => {
                tests.push(NamedTest { name, result: z_from_chi2(c, k)? });
                Ok(())
            }
            Err(GbsError::Validation(msg)) => {
                notices.push(format!("{name} skipped: {msg}"));
                Ok(())
            }
            Err(e) => Err(e),
        }
    };
    if opts.total_gcd {
        let part = Partition::total(m)?;
        let t = truth.gcd(&part, det, cap)?;
        let s = sample_gcd(data, &part, cap)?;
        push("total_gcd".into(), chi2_pooled(&t, &s, n, opts.min_expected), &mut notices)?;
    }
    if opts.gcd2d && m >= 2 {
        let part = Partition::halves(m)?;
        let t = truth.gcd(&part, det, cap)?;
        let s = sample_gcd(data, &part, cap)?;
        push("gcd2d".into(), chi2_pooled(&t, &s, n, opts.min_expected), &mut notices)?;
    }
    for &k in &opts.marginal_orders {
        let subsets = marginal_subsets(m, k, opts.max_subsets, opts.subset_seed)?;
        let mut terms = Vec::with_capacity(subsets.len());
        for s in &subsets {
            let part = Partition::singletons(s, m)?;
            let t = truth.gcd(&part, det, cap)?;
            let d = sample_gcd(data, &part, cap)?;
            match subset_terms(s, &t, &d, n, opts.min_expected) {
                Ok(st) => terms.push(st),
                Err(GbsError::Validation(_)) => {}
                Err(e) => return Err(e),
            }
        }
        metadata.insert(format!("marginal_k{k}_subsets"), serde_json::json!(subsets.len()));
        let name = format!("marginal_k{k}");
        let chi2: f64 = terms.iter().map(|t| t.chi2).sum();
        let dof: usize = terms.iter().map(|t| t.k).sum();
        if dof == 0 {
            notices.push(format!("{name} skipped: no subset has two usable bins"));
            continue;
        }
        let result = match correlated_sum(data, &terms) {
            Some((scale, nu)) => z_from_scaled_chi2(chi2, dof, scale, nu)?,
            None => z_from_chi2(chi2, dof)?,
        };
        tests.push(NamedTest { name, result });
    }
    let mut report = max_z_report(tests)?;
    report.notices = notices;
    report.metadata = metadata;
    Ok(report)
}
