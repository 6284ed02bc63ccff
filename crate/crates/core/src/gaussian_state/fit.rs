//! Transmission and decoherence correction of a ground truth, fitted to a
//! measured total-count distribution.

use serde::{Deserialize, Serialize};

use super::{SqueezerBank, TransmissionMatrix};
use crate::dataset::Detector;
use crate::error::{GbsError, Result};
use crate::gcd::{gcd_pnr_from_ensemble, gcd_threshold_from_ensemble, GcdResult, Partition};
use crate::oracle::{brute_force_gcd, GaussianOutputState};
use crate::sampler::{draw_input_samples, photon_number, propagate, vacuum_probability};

/// Lower bound on the fitted `t`.
pub const T_MIN: f64 = 1e-3;
/// Floor on the combined bin variance in the fit objective.
pub const VARIANCE_FLOOR: f64 = 1e-12;
const STARTS: [(f64, f64); 3] = [(1.0, 0.0), (0.95, 0.05), (0.9, 0.1)];

/// How the model total-count distribution is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FitModel {
    /// Exhaustive enumeration; small mode counts only.
    Exact,
    /// Phase-space estimate with a fixed seed, so the objective is smooth.
    Ensemble { samples: usize, seed: u64, batch_size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub model: FitModel,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { model: FitModel::Exact, max_iterations: 200, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub t: f64,
    pub eps: f64,
    pub chi2_before: f64,
    pub chi2_after: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn clamp(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(T_MIN, 1.0), p[1].clamp(0.0, 1.0)]
}

fn model_gcd(reference: &GcdResult, bank: &SqueezerBank, t: &TransmissionMatrix, opts: &FitOptions) -> Result<GcdResult> {
    let m = t.outputs();
    let part = Partition::total(m)?;
    let cap = reference.shape[0].saturating_sub(2);
    match opts.model {
        FitModel::Exact => {
            let state = GaussianOutputState::from_bank(bank, t)?;
            brute_force_gcd(&state, &part, reference.kind, cap)
        }
        FitModel::Ensemble { samples, seed, batch_size } => {
            let ens = propagate(&draw_input_samples(bank, samples, seed)?, t)?;
            match reference.kind {
                Detector::Threshold => gcd_threshold_from_ensemble(&vacuum_probability(&ens), &part, batch_size),
                Detector::Pnr => gcd_pnr_from_ensemble(&photon_number(&ens), &part, cap, batch_size),
            }
        }
    }
}

fn objective(reference: &GcdResult, model: &GcdResult) -> Result<f64> {
    if model.shape != reference.shape {
        return Err(GbsError::Dimension(format!(
            "reference has shape {:?} but the model gives {:?}",
            reference.shape, model.shape
        )));
    }
    Ok((0..reference.len())
        .map(|i| {
            let var = (reference.stderr[i].powi(2) + model.stderr[i].powi(2)).max(VARIANCE_FLOOR);
            (reference.probabilities[i] - model.probabilities[i]).powi(2) / var
        })
        .sum())
}

/// Nelder-Mead over `(t, eps)` in `[T_MIN, 1] x [0, 1]`, from three starts,
/// minimising the chi-square between the reference and the model
/// total-count distribution. The correction replaces the scalar `t` of the
/// transmission matrix and sets a uniform decoherence on every squeezer.
pub fn fit_ground_truth_correction(
    reference: &GcdResult,
    bank: &SqueezerBank,
    t: &TransmissionMatrix,
    opts: &FitOptions,
) -> Result<FitResult> {
    if reference.partition.dimension() != 1 || reference.partition.covered_modes().len() != t.outputs() {
        return Err(GbsError::Config("the fit needs a total-count distribution over every output mode".into()));
    }
    if reference.kind == Detector::Pnr && !reference.overflow {
        return Err(GbsError::Config("PNR reference must end in an overflow bin".into()));
    }
    let total = reference.sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(GbsError::Validation(format!("reference sums to {total}, not 1")));
    }
    let eval = |p: [f64; 2]| -> Result<f64> {
        let p = clamp(p);
        let b = bank.with_uniform_epsilon(p[1])?;
        let tm = t.with_t(p[0])?;
        objective(reference, &model_gcd(reference, &b, &tm, opts)?)
    };
    let chi2_before = objective(reference, &model_gcd(reference, bank, t, opts)?)?;
    let mut best: Option<([f64; 2], f64, bool)> = None;
    for start in STARTS {
        let (p, f, ok) = nelder_mead(&eval, start, opts.max_iterations, opts.tolerance)?;
        if best.as_ref().is_none_or(|b| f < b.1) {
            best = Some((p, f, ok));
        }
    }
    let (p, f, converged) = best.expect("at least one start");
    let p = clamp(p);
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!("optimizer did not converge within {} iterations", opts.max_iterations));
    }
    if p[0] <= T_MIN * (1.0 + 1e-6) {
        warnings.push("t reached its lower bound".into());
    }
    Ok(FitResult { t: p[0], eps: p[1], chi2_before, chi2_after: f, converged, warnings })
}

fn nelder_mead<F>(f: &F, start: (f64, f64), max_iter: usize, tol: f64) -> Result<([f64; 2], f64, bool)>
where
    F: Fn([f64; 2]) -> Result<f64>,
{
    let x0 = clamp([start.0, start.1]);
    let step = 0.05;
    let mut simplex = vec![x0, clamp([x0[0] - step, x0[1]]), clamp([x0[0], x0[1] + step])];
    if simplex[1] == x0 {
        simplex[1] = clamp([x0[0] + step, x0[1]]);
    }
    if simplex[2] == x0 {
        simplex[2] = clamp([x0[0], x0[1] - step]);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|&p| f(p)).collect::<Result<_>>()?;
    let lerp = |a: [f64; 2], b: [f64; 2], s: f64| clamp([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
    for _ in 0..max_iter {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.iter().map(|&i| simplex[i]).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = (vals[2] - vals[0]).abs();
        let size = simplex.iter().skip(1).map(|p| (p[0] - simplex[0][0]).abs().max((p[1] - simplex[0][1]).abs())).fold(0.0, f64::max);
        if spread <= tol * (1.0 + vals[0].abs()) && size <= 1e-6 {
            return Ok((simplex[0], vals[0], true));
        }
        let centroid = [(simplex[0][0] + simplex[1][0]) / 2.0, (simplex[0][1] + simplex[1][1]) / 2.0];
        let worst = simplex[2];
        let refl = lerp(centroid, worst, -1.0);
        let fr = f(refl)?;
        if fr < vals[0] {
            let exp = lerp(centroid, worst, -2.0);
            let fe = f(exp)?;
            if fe < fr {
                simplex[2] = exp;
                vals[2] = fe;
            } else {
                simplex[2] = refl;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            simplex[2] = refl;
            vals[2] = fr;
        } else {
            let (cont, fc) = if fr < vals[2] {
                let c = lerp(centroid, worst, -0.5);
                (c, f(c)?)
            } else {
                let c = lerp(centroid, worst, 0.5);
                (c, f(c)?)
            };
            if fc < vals[2].min(fr) {
                simplex[2] = cont;
                vals[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = lerp(simplex[0], simplex[i], 0.5);
                    vals[i] = f(simplex[i])?;
                }
            }
        }
    }
    let i = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).expect("three vertices");
    Ok((simplex[i], vals[i], false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |p: [f64; 2]| Ok((p[0] - 0.7).powi(2) + 3.0 * (p[1] - 0.2).powi(2));
        let (p, v, ok) = nelder_mead(&f, (1.0, 0.0), 200, 1e-12).unwrap();
        assert!(ok);
        assert!((p[0] - 0.7).abs() < 1e-3 && (p[1] - 0.2).abs() < 1e-3 && v < 1e-6);
    }

    #[test]
    fn nelder_mead_respects_box() {
        let f = |p: [f64; 2]| Ok(p[0] + p[1]);
        let (p, _, _) = nelder_mead(&f, (0.9, 0.1), 200, 1e-12).unwrap();
        assert!(p[0] >= T_MIN && p[1] >= 0.0);
        assert!(p[0] < 2.0 * T_MIN && p[1] < 1e-3);
    }
}
