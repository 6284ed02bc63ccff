mod common;

use common::{c, hermitian_with_signature, random_invertible};
use gbs_core::gaussian_state::{
    apply_transmission, build_input_covariance, covariance_signature, is_classical_input, output_moments,
    quadrature_covariance, y_quadrature_variance, ComplexCovariance, Signature, SqueezerBank, TransmissionMatrix,
    ZeroTol,
};
use gbs_core::linalg::{haar_unitary, hermitian_defect, max_abs};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn negative_eigenvalues(bank: &SqueezerBank, t: &TransmissionMatrix) -> usize {
    let (n, a) = output_moments(bank, t).unwrap();
    let q = quadrature_covariance(&n, &a).unwrap();
    covariance_signature(&q, ZeroTol::Absolute(1e-12)).unwrap().n_neg
}

#[test]
fn signature_survives_invertible_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut trials = 0;
    for m in 2..=8 {
        for _ in 0..15 {
            let pos = trials % (m + 1);
            let sigma = ComplexCovariance::new(hermitian_with_signature(m, pos, &mut rng)).unwrap();
            let before = covariance_signature(&sigma, ZeroTol::default()).unwrap();
            assert_eq!(before, Signature { n_pos: pos, n_neg: m - pos, n_zero: 0 });
            let t = TransmissionMatrix::new(random_invertible(m, &mut rng), 1.0).unwrap();
            let after = covariance_signature(&apply_transmission(&sigma, &t).unwrap(), ZeroTol::default()).unwrap();
            assert_eq!(after, before, "m = {m}, trial {trials}");
            trials += 1;
        }
    }
    assert!(trials >= 100);
}

#[test]
fn classicality_boundary() {
    for r in [0.1, 0.5, 1.0, 2.0] {
        let eps = 1.0 - f64::tanh(r);
        assert!(!is_classical_input(r, eps));
        assert!(is_classical_input(r, eps + 1e-6));
        assert!(y_quadrature_variance(r, eps).abs() < 1e-9);
        assert!(y_quadrature_variance(r, eps - 1e-6) < 0.0);
        assert!(y_quadrature_variance(r, eps + 1e-6) > 0.0);
    }
    assert!(!is_classical_input(1.0, 0.0));
    assert!(!is_classical_input(0.0, 0.0));
}

#[test]
fn input_quadrature_signature_matches_classicality() {
    let bank = SqueezerBank::new(vec![0.8, 0.8, 0.3], vec![0.0, 0.9, 0.5]).unwrap();
    let expected = bank.r().iter().zip(bank.epsilon()).filter(|(&r, &e)| !is_classical_input(r, e)).count();
    assert_eq!(negative_eigenvalues(&bank, &TransmissionMatrix::identity(3)), expected);
}

#[test]
fn normally_ordered_input_covariance_is_diagonal() {
    let bank = SqueezerBank::new(vec![0.5, 1.0], vec![0.0, 0.2]).unwrap();
    let s = build_input_covariance(&bank);
    assert!((s.matrix()[(0, 0)].re - 0.5f64.sinh().powi(2)).abs() < 1e-15);
    assert_eq!(s.matrix()[(0, 1)], c(0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_never_restores_classicality(seed in any::<u64>(), m in 1usize..7, eta in 0.01f64..0.99, r in 0.1f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = 0.5 * (1.0 - r.tanh());
        let bank = SqueezerBank::uniform(m, r, eps).unwrap();
        let u = haar_unitary(m, &mut rng) * c(eta.sqrt());
        let t = TransmissionMatrix::new(u, 1.0).unwrap();
        prop_assert_eq!(negative_eigenvalues(&bank, &TransmissionMatrix::identity(m)), m);
        prop_assert!(negative_eigenvalues(&bank, &t) >= 1);
    }

    #[test]
    fn transmitted_covariance_is_hermitian(seed in any::<u64>(), m in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = ComplexCovariance::new(hermitian_with_signature(m, m / 2, &mut rng)).unwrap();
        let t = TransmissionMatrix::new(random_invertible(m, &mut rng), 0.9).unwrap();
        let out = apply_transmission(&sigma, &t).unwrap();
        prop_assert!(hermitian_defect(out.matrix()) <= 1e-10 * max_abs(out.matrix()));
    }

    #[test]
    fn lossless_unitary_keeps_signature(seed in any::<u64>(), m in 2usize..9, pos in 0usize..9) {
        let pos = pos.min(m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = ComplexCovariance::new(hermitian_with_signature(m, pos, &mut rng)).unwrap();
        let t = TransmissionMatrix::new(haar_unitary(m, &mut rng), 1.0).unwrap();
        let a = covariance_signature(&sigma, ZeroTol::default()).unwrap();
        let b = covariance_signature(&apply_transmission(&sigma, &t).unwrap(), ZeroTol::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn non_hermitian_rejected() {
    let mut m = nalgebra::DMatrix::from_element(2, 2, c(1.0));
    m[(0, 1)] = c(2.0);
    assert!(ComplexCovariance::new(m).is_err());
}
