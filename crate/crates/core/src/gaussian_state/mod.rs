//! Gaussian input states, passive transmission, normally ordered covariances
//! and the classicality machinery.
//!
//! Conventions: amplitudes are row vectors and a transmission matrix acts on
//! the right, `alpha' = alpha T`, `beta' = beta T*`. A transmission matrix
//! therefore has `M_in` rows and `M_out` columns, and the normally ordered
//! covariance `sigma_{mu nu} = <a+_mu a_nu>` transforms as `T^dagger sigma T`.

mod fit;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GbsError, Result};
use crate::linalg::{self, C_ZERO};

pub use fit::{fit_ground_truth_correction, FitModel, FitOptions, FitResult};

/// Slack allowed on singular values of a physical transmission matrix.
pub const SINGULAR_VALUE_SLACK: f64 = 1e-9;

/// Per-mode squeezing `r_i >= 0` and decoherence `0 <= eps_i <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqueezerBank {
    r: Vec<f64>,
    epsilon: Vec<f64>,
}

impl SqueezerBank {
    pub fn new(r: Vec<f64>, epsilon: Vec<f64>) -> Result<Self> {
        if r.len() != epsilon.len() {
            return Err(GbsError::Dimension(format!(
                "{} squeezing parameters but {} decoherence fractions",
                r.len(),
                epsilon.len()
            )));
        }
        if r.is_empty() {
            return Err(GbsError::Config("squeezer bank has no modes".into()));
        }
        if let Some(i) = r.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(GbsError::Config(format!("r[{i}] = {} is not a finite value >= 0", r[i])));
        }
        if let Some(i) = epsilon.iter().position(|&e| !(0.0..=1.0).contains(&e)) {
            return Err(GbsError::Config(format!("epsilon[{i}] = {} is outside [0, 1]", epsilon[i])));
        }
        Ok(SqueezerBank { r, epsilon })
    }

    pub fn uniform(modes: usize, r: f64, epsilon: f64) -> Result<Self> {
        Self::new(vec![r; modes], vec![epsilon; modes])
    }

    pub fn modes(&self) -> usize {
        self.r.len()
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn epsilon(&self) -> &[f64] {
        &self.epsilon
    }

    /// Same squeezing with a uniform decoherence fraction.
    pub fn with_uniform_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.r.clone(), vec![epsilon; self.r.len()])
    }
}

/// Per-mode photon numbers `n = sinh^2 r` and coherences
/// `m = (1 - eps) sinh r cosh r`. Decoherence leaves the photon number alone.
pub fn input_moments(bank: &SqueezerBank) -> (Vec<f64>, Vec<f64>) {
    bank.r
        .iter()
        .zip(&bank.epsilon)
        .map(|(&r, &e)| {
            let (s, c) = (r.sinh(), r.cosh());
            (s * s, (1.0 - e) * s * c)
        })
        .unzip()
}

/// Normally ordered Y-quadrature variance `<:Y^2:>` of one thermalised
/// squeezed mode. Negative exactly when the mode is still squeezed.
pub fn y_quadrature_variance(r: f64, eps: f64) -> f64 {
    2.0 * r.sinh() * (r.sinh() - (1.0 - eps) * r.cosh())
}

/// Whether the mode has a positive Glauber-Sudarshan P distribution:
/// `eps > 1 - tanh r`, strictly.
pub fn is_classical_input(r: f64, eps: f64) -> bool {
    eps > 1.0 - r.tanh()
}

/// Linear-optical transfer matrix with its scalar amplitude correction `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMatrix {
    entries: DMatrix<Complex64>,
    t: f64,
}

impl TransmissionMatrix {
    /// `entries` is `M_in x M_out`. Rejects matrices with a singular value
    /// above one.
    pub fn new(entries: DMatrix<Complex64>, t: f64) -> Result<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(GbsError::Config(format!("transmission correction t = {t} is outside (0, 1]")));
        }
        if entries.is_empty() {
            return Err(GbsError::Config("transmission matrix is empty".into()));
        }
        let smax = linalg::max_singular_value(&entries);
        if smax > 1.0 + SINGULAR_VALUE_SLACK {
            return Err(GbsError::Validation(format!(
                "transmission matrix has singular value {smax} > 1"
            )));
        }
        Ok(TransmissionMatrix { entries, t })
    }

    /// Skips the singular-value check. For matrices that are physical by
    /// construction, such as `sqrt(eta) U` with `U` unitary.
    pub fn new_unchecked(entries: DMatrix<Complex64>, t: f64) -> Self {
        TransmissionMatrix { entries, t }
    }

    pub fn identity(modes: usize) -> Self {
        Self::new_unchecked(DMatrix::identity(modes, modes), 1.0)
    }

    /// `sqrt(1 - loss) U` for a Haar-random unitary drawn from `seed`.
    pub fn haar_lossy(modes: usize, loss: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&loss) {
            return Err(GbsError::Config(format!("loss {loss} is outside [0, 1)")));
        }
        let mut rng = crate::rng::stream(seed, crate::rng::StreamPurpose::Auxiliary);
        let u = linalg::haar_unitary(modes, &mut rng);
        let scale = Complex64::new((1.0 - loss).sqrt(), 0.0);
        Ok(Self::new_unchecked(u * scale, 1.0))
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn with_t(&self, t: f64) -> Result<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(GbsError::Config(format!("transmission correction t = {t} is outside (0, 1]")));
        }
        Ok(TransmissionMatrix { entries: self.entries.clone(), t })
    }

    /// `t * entries`.
    pub fn effective(&self) -> DMatrix<Complex64> {
        &self.entries * Complex64::new(self.t, 0.0)
    }

    pub fn inputs(&self) -> usize {
        self.entries.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.entries.ncols()
    }
}

/// Hermitian normally ordered correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexCovariance {
    sigma: DMatrix<Complex64>,
}

/// Relative tolerance on Hermiticity accepted by [`ComplexCovariance::new`].
pub const HERMITIAN_TOL: f64 = 1e-12;

impl ComplexCovariance {
    pub fn new(sigma: DMatrix<Complex64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(GbsError::Dimension(format!(
                "covariance is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let scale = linalg::max_abs(&sigma).max(f64::MIN_POSITIVE);
        let defect = linalg::hermitian_defect(&sigma);
        if defect > HERMITIAN_TOL * scale {
            return Err(GbsError::Validation(format!(
                "covariance is not Hermitian (defect {defect:e}, scale {scale:e})"
            )));
        }
        Ok(ComplexCovariance { sigma })
    }

    pub fn from_real(sigma: &DMatrix<f64>) -> Result<Self> {
        Self::new(sigma.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.sigma
    }

    pub fn modes(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        linalg::hermitian_eigenvalues(&self.sigma)
    }
}

/// Sylvester inertia: counts of positive, negative and zero eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_zero: usize,
}

impl Signature {
    pub fn modes(&self) -> usize {
        self.n_pos + self.n_neg + self.n_zero
    }
}

/// Threshold below which an eigenvalue counts as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZeroTol {
    /// Multiple of the largest eigenvalue magnitude.
    Relative(f64),
    Absolute(f64),
}

impl Default for ZeroTol {
    fn default() -> Self {
        ZeroTol::Relative(1e-10)
    }
}

/// Diagonal `sigma_ii = n_i`. The anomalous moments are not part of the
/// normally ordered block; the sampler carries them.
pub fn build_input_covariance(bank: &SqueezerBank) -> ComplexCovariance {
    let (n, _) = input_moments(bank);
    let d = DVector::from_iterator(n.len(), n.iter().map(|&x| Complex64::new(x, 0.0)));
    ComplexCovariance { sigma: DMatrix::from_diagonal(&d) }
}

/// `T^dagger sigma T`, symmetrised to remove rounding asymmetry.
pub fn apply_transmission(sigma: &ComplexCovariance, t: &TransmissionMatrix) -> Result<ComplexCovariance> {
    if sigma.modes() != t.inputs() {
        return Err(GbsError::Dimension(format!(
            "covariance has {} modes but the transmission matrix has {} inputs",
            sigma.modes(),
            t.inputs()
        )));
    }
    let te = t.effective();
    let out = te.adjoint() * &sigma.sigma * &te;
    let sym = (&out + out.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(ComplexCovariance { sigma: sym })
}

/// Count eigenvalues above `+tol`, below `-tol` and in between.
pub fn covariance_signature(sigma: &ComplexCovariance, tol: ZeroTol) -> Result<Signature> {
    let scale = linalg::max_abs(sigma.matrix()).max(f64::MIN_POSITIVE);
    let defect = linalg::hermitian_defect(sigma.matrix());
    if defect > 1e-10 * scale {
        return Err(GbsError::Validation(format!("covariance is not Hermitian (defect {defect:e})")));
    }
    let ev = sigma.eigenvalues();
    let tol = match tol {
        ZeroTol::Absolute(a) => a,
        ZeroTol::Relative(r) => r * ev.iter().fold(0.0f64, |a, &b| a.max(b.abs())),
    };
    let mut sig = Signature { n_pos: 0, n_neg: 0, n_zero: 0 };
    for &l in ev.iter() {
        if l > tol {
            sig.n_pos += 1;
        } else if l < -tol {
            sig.n_neg += 1;
        } else {
            sig.n_zero += 1;
        }
    }
    Ok(sig)
}

/// Normally ordered moments after a passive network: `N = T^dagger diag(n) T`
/// (`<a+_mu a_nu>`) and `A = T^T diag(m) T` (`<a_mu a_nu>`).
pub fn output_moments(bank: &SqueezerBank, t: &TransmissionMatrix) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    if bank.modes() != t.inputs() {
        return Err(GbsError::Dimension(format!(
            "{} squeezers but the transmission matrix has {} inputs",
            bank.modes(),
            t.inputs()
        )));
    }
    let (n, m) = input_moments(bank);
    let te = t.effective();
    let dn = DMatrix::from_diagonal(&DVector::from_iterator(n.len(), n.iter().map(|&x| Complex64::new(x, 0.0))));
    let dm = DMatrix::from_diagonal(&DVector::from_iterator(m.len(), m.iter().map(|&x| Complex64::new(x, 0.0))));
    let normal = te.adjoint() * dn * &te;
    let anomalous = te.transpose() * dm * &te;
    Ok((normal, anomalous))
}

/// Real `2M x 2M` normally ordered quadrature covariance `<:dX_i dX_j:>` with
/// `X = a + a+`, `Y = -i (a - a+)`, built from `N_{ij} = <a+_i a_j>` and
/// `A_{ij} = <a_i a_j>`. A negative eigenvalue marks a nonclassical state.
pub fn quadrature_covariance(normal: &DMatrix<Complex64>, anomalous: &DMatrix<Complex64>) -> Result<ComplexCovariance> {
    let m = normal.nrows();
    if !normal.is_square() || anomalous.shape() != normal.shape() {
        return Err(GbsError::Dimension("normal and anomalous blocks differ in shape".into()));
    }
    let mut q = DMatrix::from_element(2 * m, 2 * m, C_ZERO);
    for i in 0..m {
        for j in 0..m {
            let n = normal[(i, j)];
            let a = anomalous[(i, j)];
            let xx = 2.0 * (a.re + n.re);
            let yy = 2.0 * (n.re - a.re);
            let xy = 2.0 * (a.im + n.im);
            q[(i, j)] = Complex64::new(xx, 0.0);
            q[(i + m, j + m)] = Complex64::new(yy, 0.0);
            q[(i, j + m)] = Complex64::new(xy, 0.0);
            q[(j + m, i)] = Complex64::new(xy, 0.0);
        }
    }
    ComplexCovariance::new(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn input_moment_values() {
        let (n, m) = input_moments(&SqueezerBank::new(vec![0.0], vec![0.0]).unwrap());
        assert_eq!((n[0], m[0]), (0.0, 0.0));
        let (n, m) = input_moments(&SqueezerBank::new(vec![1.0], vec![0.0]).unwrap());
        // sinh^2(1), sinh(1) cosh(1)
        assert_relative_eq!(n[0], 1.381_097_845_541_816_5, epsilon = 1e-14);
        assert_relative_eq!(m[0], 1.813_430_203_923_509_4, epsilon = 1e-14);
        let (n, m) = input_moments(&SqueezerBank::new(vec![1.0], vec![1.0]).unwrap());
        assert_relative_eq!(n[0], 1.381_097_845_541_816_5, epsilon = 1e-14);
        assert_eq!(m[0], 0.0);
    }

    #[test]
    fn bank_validation() {
        assert!(SqueezerBank::new(vec![1.0], vec![1.5]).is_err());
        assert!(SqueezerBank::new(vec![-0.1], vec![0.0]).is_err());
        assert!(SqueezerBank::new(vec![1.0, 2.0], vec![0.0]).is_err());
    }

    #[test]
    fn y_variance_values() {
        assert_eq!(y_quadrature_variance(0.0, 0.0), 0.0);
        assert!(y_quadrature_variance(1.0, 1.0 - 1f64.tanh()).abs() < 1e-15);
        // -2 sinh(1) e^{-1}
        assert_relative_eq!(y_quadrature_variance(1.0, 0.0), -0.864_664_716_763_387_3, epsilon = 1e-14);
    }

    #[test]
    fn classicality_examples() {
        assert!(is_classical_input(1.0, 0.5));
        assert!(!is_classical_input(1.0, 0.0));
        assert!(!is_classical_input(0.0, 0.0));
        for r in [0.1, 0.5, 1.0, 2.0] {
            let b = 1.0 - f64::tanh(r);
            assert!(!is_classical_input(r, b));
            assert!(is_classical_input(r, b + 1e-6));
            assert!(y_quadrature_variance(r, b + 1e-6) > 0.0);
        }
    }

    #[test]
    fn input_covariance_is_diagonal_photon_number() {
        let cov = build_input_covariance(&SqueezerBank::new(vec![0.0, 0.0], vec![0.0, 0.3]).unwrap());
        assert!(cov.matrix().iter().all(|z| *z == C_ZERO));
        let cov = build_input_covariance(&SqueezerBank::new(vec![1.0, 2.0], vec![0.7, 0.1]).unwrap());
        assert_relative_eq!(cov.matrix()[(0, 0)].re, 1f64.sinh().powi(2), epsilon = 1e-14);
        assert_relative_eq!(cov.matrix()[(1, 1)].re, 2f64.sinh().powi(2), epsilon = 1e-13);
        assert_eq!(cov.matrix()[(0, 1)], C_ZERO);
    }

    #[test]
    fn transmission_examples() {
        let sigma = ComplexCovariance::new(DMatrix::from_row_slice(2, 2, &[c(1.0), Complex64::new(0.2, 0.1), Complex64::new(0.2, -0.1), c(0.5)])).unwrap();
        let out = apply_transmission(&sigma, &TransmissionMatrix::identity(2)).unwrap();
        assert!((out.matrix() - sigma.matrix()).iter().all(|z| z.norm() < 1e-15));

        let one = ComplexCovariance::new(DMatrix::from_element(1, 1, c(1.0))).unwrap();
        let t = TransmissionMatrix::new(DMatrix::from_element(1, 1, c(0.5)), 1.0).unwrap();
        assert_relative_eq!(apply_transmission(&one, &t).unwrap().matrix()[(0, 0)].re, 0.25, epsilon = 1e-15);

        let u = TransmissionMatrix::haar_lossy(3, 0.0, 5).unwrap();
        let diag = ComplexCovariance::new(DMatrix::from_diagonal(&DVector::from_vec(vec![c(0.3), c(1.1), c(2.5)]))).unwrap();
        let ev = apply_transmission(&diag, &u).unwrap().eigenvalues();
        for (a, b) in ev.iter().zip([0.3, 1.1, 2.5]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        assert!(apply_transmission(&one, &u).is_err());
    }

    #[test]
    fn rejects_amplifying_matrix() {
        assert!(TransmissionMatrix::new(DMatrix::from_element(1, 1, c(1.01)), 1.0).is_err());
        assert!(TransmissionMatrix::new(DMatrix::from_element(1, 1, c(1.0)), 0.0).is_err());
    }

    #[test]
    fn signature_examples() {
        let zero = ComplexCovariance::new(DMatrix::from_element(3, 3, C_ZERO)).unwrap();
        let s = covariance_signature(&zero, ZeroTol::Absolute(1e-10)).unwrap();
        assert_eq!((s.n_pos, s.n_neg, s.n_zero), (0, 0, 3));
        let d = ComplexCovariance::new(DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.0), c(-1.0)]))).unwrap();
        let s = covariance_signature(&d, ZeroTol::Absolute(1e-10)).unwrap();
        assert_eq!((s.n_pos, s.n_neg, s.n_zero), (1, 1, 0));
    }

    #[test]
    fn squeezed_quadrature_covariance_has_one_negative_direction() {
        let bank = SqueezerBank::new(vec![1.0], vec![0.0]).unwrap();
        let (n, a) = output_moments(&bank, &TransmissionMatrix::identity(1)).unwrap();
        let q = quadrature_covariance(&n, &a).unwrap();
        let ev = q.eigenvalues();
        assert_relative_eq!(ev[0], (-2.0f64).exp() - 1.0, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 2f64.exp() - 1.0, epsilon = 1e-12);
        let s = covariance_signature(&q, ZeroTol::default()).unwrap();
        assert_eq!((s.n_pos, s.n_neg, s.n_zero), (1, 1, 0));
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0), c(2.0), c(0.0), c(1.0)]);
        assert!(ComplexCovariance::new(m).is_err());
    }
}
