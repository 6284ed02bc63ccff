#![allow(dead_code)]

use gbs_core::gaussian_state::{SqueezerBank, TransmissionMatrix};
use gbs_core::linalg::{det_lu, haar_unitary};
use gbs_core::oracle::GaussianOutputState;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Random instance: squeezing in `[r_lo, r_hi]`, decoherence in `[0, eps_hi]`
/// and a Haar unitary scaled by a transmission in `[0.5, 1]`.
pub fn random_instance(m: usize, seed: u64, r_lo: f64, r_hi: f64, eps_hi: f64) -> (SqueezerBank, TransmissionMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..m).map(|_| rng.random_range(r_lo..=r_hi)).collect();
    let e: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..=eps_hi)).collect();
    let eta: f64 = rng.random_range(0.5..=1.0);
    let u = haar_unitary(m, &mut rng) * c(eta.sqrt());
    (SqueezerBank::new(r, e).unwrap(), TransmissionMatrix::new(u, 1.0).unwrap())
}

pub fn random_state(m: usize, seed: u64) -> GaussianOutputState {
    let (b, t) = random_instance(m, seed, 0.1, 0.6, 0.3);
    GaussianOutputState::from_bank(&b, &t).unwrap()
}

/// Hafnian as an explicit sum over perfect matchings.
pub fn hafnian_by_matchings(a: &DMatrix<Complex64>) -> Complex64 {
    fn rec(a: &DMatrix<Complex64>, free: &mut Vec<usize>) -> Complex64 {
        if free.is_empty() {
            return c(1.0);
        }
        let i = free.remove(0);
        let mut total = c(0.0);
        for k in 0..free.len() {
            let j = free.remove(k);
            total += a[(i, j)] * rec(a, free);
            free.insert(k, j);
        }
        free.insert(0, i);
        total
    }
    rec(a, &mut (0..a.nrows()).collect())
}

/// Photon-number generating function `E[prod_k z_k^{n_k}]` of a zero-mean
/// Gaussian state, from the positive-P Gaussian integral
/// `det(I + Gamma X diag(1 - z, 1 - z))^{-1/2}` with
/// `Gamma = [[A, N^T], [N, A^*]]`. The square-root branch is followed along
/// the straight path from `z = 1`.
pub struct GeneratingFunction {
    gamma_x: DMatrix<Complex64>,
    m: usize,
}

impl GeneratingFunction {
    pub fn new(state: &GaussianOutputState) -> Self {
        let m = state.modes();
        let n = state.normal();
        let a = state.anomalous();
        let mut gamma = DMatrix::from_element(2 * m, 2 * m, c(0.0));
        gamma.view_mut((0, 0), (m, m)).copy_from(a);
        gamma.view_mut((0, m), (m, m)).copy_from(&n.transpose());
        gamma.view_mut((m, 0), (m, m)).copy_from(n);
        gamma.view_mut((m, m), (m, m)).copy_from(&a.map(|z| z.conj()));
        let gamma_x = DMatrix::from_fn(2 * m, 2 * m, |i, j| gamma[(i, (j + m) % (2 * m))]);
        GeneratingFunction { gamma_x, m }
    }

    fn det_at(&self, z: &[Complex64]) -> Complex64 {
        let m = self.m;
        let k = DMatrix::from_fn(2 * m, 2 * m, |i, j| {
            let d = if i == j { c(1.0) } else { c(0.0) };
            d + self.gamma_x[(i, j)] * (c(1.0) - z[j % m])
        });
        det_lu(&k)
    }

    pub fn eval(&self, z: &[Complex64]) -> Complex64 {
        let steps = 48;
        let mut root = c(1.0);
        for s in 1..=steps {
            let f = s as f64 / steps as f64;
            let zs: Vec<Complex64> = z.iter().map(|&zk| c(1.0 - f) + zk * f).collect();
            let r = self.det_at(&zs).sqrt();
            root = if (r - root).norm() <= (r + root).norm() { r } else { -r };
        }
        1.0 / root
    }

    /// Probability of `counts` by multivariate DFT on a polycircle of radius
    /// `rho` with `l` points per mode.
    pub fn probability(&self, counts: &[usize], l: usize, rho: f64) -> f64 {
        let m = self.m;
        let total = l.pow(m as u32);
        let mut acc = c(0.0);
        for flat in 0..total {
            let mut q = flat;
            let mut z = Vec::with_capacity(m);
            let mut phase = 0.0;
            for &nk in counts.iter().take(m) {
                let qk = q % l;
                q /= l;
                let ang = 2.0 * std::f64::consts::PI * qk as f64 / l as f64;
                z.push(Complex64::from_polar(rho, ang));
                phase -= ang * nk as f64;
            }
            acc += self.eval(&z) * Complex64::from_polar(1.0, phase);
        }
        let norm: usize = counts.iter().sum();
        (acc / total as f64).re / rho.powi(norm as i32)
    }

    /// Probability that the modes in `empty` are all empty.
    pub fn vacuum(&self, empty: &[usize]) -> f64 {
        let z: Vec<Complex64> = (0..self.m).map(|k| if empty.contains(&k) { c(0.0) } else { c(1.0) }).collect();
        self.eval(&z).re
    }

    /// Click-pattern probability by inclusion-exclusion over vacuum values.
    pub fn click_probability(&self, pattern: &[bool]) -> f64 {
        let clicked: Vec<usize> = (0..self.m).filter(|&k| pattern[k]).collect();
        let quiet: Vec<usize> = (0..self.m).filter(|&k| !pattern[k]).collect();
        let mut total = 0.0;
        for w in 0u32..1 << clicked.len() {
            let mut empty = quiet.clone();
            empty.extend(clicked.iter().enumerate().filter(|(i, _)| w >> i & 1 == 1).map(|(_, &k)| k));
            let sign = if w.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            total += sign * self.vacuum(&empty);
        }
        total
    }
}

/// Hermitian matrix `U diag(lambda) U^dagger` with `pos` eigenvalues in
/// `[0.5, 2]` and the rest in `[-2, -0.5]`.
pub fn hermitian_with_signature<R: Rng>(m: usize, pos: usize, rng: &mut R) -> DMatrix<Complex64> {
    let u = haar_unitary(m, rng);
    let lam: Vec<f64> = (0..m)
        .map(|i| {
            let x = rng.random_range(0.5..=2.0);
            if i < pos { x } else { -x }
        })
        .collect();
    let d = DMatrix::from_fn(m, m, |i, j| if i == j { c(lam[i]) } else { c(0.0) });
    let h = &u * d * u.adjoint();
    (&h + h.adjoint()) * c(0.5)
}

/// Invertible matrix `U diag(s) V` with singular values in `[0.2, 1]`.
pub fn random_invertible<R: Rng>(m: usize, rng: &mut R) -> DMatrix<Complex64> {
    let u = haar_unitary(m, rng);
    let v = haar_unitary(m, rng);
    let d = DMatrix::from_fn(m, m, |i, j| if i == j { c(rng.random_range(0.2..=1.0)) } else { c(0.0) });
    u * d * v
}
