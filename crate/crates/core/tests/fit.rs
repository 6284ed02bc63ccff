mod common;

use common::random_instance;
use gbs_core::dataset::Detector;
use gbs_core::gaussian_state::{fit_ground_truth_correction, FitModel, FitOptions, SqueezerBank, TransmissionMatrix};
use gbs_core::gcd::{gcd_from_counts, GcdResult, Partition};
use gbs_core::oracle::{brute_force_gcd, sample_threshold_patterns, GaussianOutputState};

fn instance() -> (SqueezerBank, TransmissionMatrix) {
    let (bank, t) = random_instance(4, 77, 0.7, 1.1, 0.0);
    (bank.with_uniform_epsilon(0.0).unwrap(), t)
}

fn corrected(bank: &SqueezerBank, t: &TransmissionMatrix, tt: f64, eps: f64) -> GaussianOutputState {
    GaussianOutputState::from_bank(&bank.with_uniform_epsilon(eps).unwrap(), &t.with_t(tt).unwrap()).unwrap()
}

fn exact_reference(state: &GaussianOutputState, detector: Detector, cap: usize) -> GcdResult {
    brute_force_gcd(state, &Partition::total(4).unwrap(), detector, cap).unwrap()
}

#[test]
fn uncorrected_model_fits_itself() {
    let (bank, t) = instance();
    let reference = exact_reference(&corrected(&bank, &t, 1.0, 0.0), Detector::Threshold, 0);
    let fit = fit_ground_truth_correction(&reference, &bank, &t, &FitOptions::default()).unwrap();
    assert!((fit.t - 1.0).abs() < 0.02 && fit.eps.abs() < 0.02, "{fit:?}");
    assert!(fit.chi2_before < 1e-6);
}

#[test]
fn recovers_a_synthetic_correction() {
    let (bank, t) = instance();
    for detector in [Detector::Threshold, Detector::Pnr] {
        let reference = exact_reference(&corrected(&bank, &t, 0.9, 0.1), detector, 3);
        let fit = fit_ground_truth_correction(&reference, &bank, &t, &FitOptions::default()).unwrap();
        assert!((fit.t - 0.9).abs() < 0.03 && (fit.eps - 0.1).abs() < 0.03, "{detector:?}: {fit:?}");
        assert!(fit.chi2_after < fit.chi2_before);
    }
}

#[test]
fn recovers_from_sampled_counts() {
    let (bank, t) = instance();
    let data = sample_threshold_patterns(&corrected(&bank, &t, 0.9, 0.1), 400_000, 8).unwrap();
    let reference = gcd_from_counts(&data, &Partition::total(4).unwrap()).unwrap();
    let fit = fit_ground_truth_correction(&reference, &bank, &t, &FitOptions::default()).unwrap();
    assert!((fit.t - 0.9).abs() < 0.03 && (fit.eps - 0.1).abs() < 0.03, "{fit:?}");
}

#[test]
fn vacuum_reference_drives_t_to_its_bound() {
    let (bank, t) = instance();
    let mut reference = exact_reference(&corrected(&bank, &t, 1.0, 0.0), Detector::Threshold, 0);
    reference.probabilities.iter_mut().for_each(|p| *p = 0.0);
    reference.probabilities[0] = 1.0;
    let fit = fit_ground_truth_correction(&reference, &bank, &t, &FitOptions::default()).unwrap();
    assert!(fit.t < 0.01, "{fit:?}");
    assert!(fit.warnings.iter().any(|w| w.contains("lower bound")), "{:?}", fit.warnings);
}

#[test]
fn ensemble_model_agrees_with_exact_model() {
    let (bank, t) = instance();
    let reference = exact_reference(&corrected(&bank, &t, 0.9, 0.1), Detector::Threshold, 0);
    let opts = FitOptions { model: FitModel::Ensemble { samples: 100_000, seed: 3, batch_size: 10_000 }, ..FitOptions::default() };
    let fit = fit_ground_truth_correction(&reference, &bank, &t, &opts).unwrap();
    assert!((fit.t - 0.9).abs() < 0.05 && (fit.eps - 0.1).abs() < 0.05, "{fit:?}");
}

#[test]
fn rejects_grouped_reference() {
    let (bank, t) = instance();
    let state = corrected(&bank, &t, 1.0, 0.0);
    let reference = brute_force_gcd(&state, &Partition::halves(4).unwrap(), Detector::Threshold, 0).unwrap();
    assert!(fit_ground_truth_correction(&reference, &bank, &t, &FitOptions::default()).is_err());
}
