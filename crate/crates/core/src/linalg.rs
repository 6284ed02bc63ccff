//! Dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;


pub(crate) const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> DVector<f64> {
    let mut ev = m.clone().symmetric_eigenvalues();
    ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Largest `|a_ij - conj(a_ji)|`.
pub fn hermitian_defect(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

/// Symmetric square root of a real symmetric matrix. Negative eigenvalues are
/// clipped at zero.
pub fn sym_sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    scale_columns(&eig.eigenvectors, &d) * eig.eigenvectors.transpose()
}

/// Symmetric inverse square root after adding `ridge` to the diagonal.
/// Returns `None` when an eigenvalue is not strictly positive.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, ridge: f64) -> Option<DMatrix<f64>> {
    let mut shifted = m.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += ridge;
    }
    let eig = shifted.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let d = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    Some(scale_columns(&eig.eigenvectors, &d) * eig.eigenvectors.transpose())
}

fn scale_columns(v: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = v.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= d[j];
    }
    out
}

/// Complex Ginibre matrix with unit-variance entries.
pub fn ginibre<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * s, im * s)
    })
}

/// Haar-random unitary from the QR decomposition of a Ginibre matrix, with the
/// phases of `R`'s diagonal moved into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<Complex64> {
    let qr = ginibre(n, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C_ONE };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Determinant through LU with partial pivoting; the pivot product is
/// accumulated as a log-magnitude and a phase.
pub fn det_lu(m: &DMatrix<Complex64>) -> Complex64 {
    let n = m.nrows();
    if n == 0 {
        return C_ONE;
    }
    let lu = m.clone().lu();
    let u = lu.u();
    let mut log_mag = 0.0;
    let mut phase = C_ONE;
    for i in 0..n {
        let d = u[(i, i)];
        let a = d.norm();
        if a == 0.0 {
            return C_ZERO;
        }
        log_mag += a.ln();
        phase *= d / a;
    }
    // each row swap flips the sign
    if lu.p().determinant::<f64>() < 0.0 {
        phase = -phase;
    }
    phase * log_mag.exp()
}

/// Largest singular value. Exact SVD for small matrices, power iteration on
/// `A^dagger A` for large ones.
pub fn max_singular_value(m: &DMatrix<Complex64>) -> f64 {
    if m.nrows().min(m.ncols()) <= 256 {
        return m
            .clone()
            .singular_values()
            .iter()
            .fold(0.0f64, |a, &b| a.max(b));
    }
    let n = m.ncols();
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 + (i % 7) as f64 * 0.1, (i % 3) as f64 * 0.1));
    let mut est = 0.0;
    for _ in 0..300 {
        let w = m * &v;
        let z = m.adjoint() * &w;
        let norm = z.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        v = z / Complex64::new(norm, 0.0);
        if (next - est).abs() <= 1e-13 * next {
            est = next;
            break;
        }
        est = next;
    }
    est
}

/// Split a complex matrix into real and imaginary parts.
pub fn split_complex(m: &DMatrix<Complex64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.map(|z| z.re), m.map(|z| z.im))
}

pub fn join_complex(re: &DMatrix<f64>, im: &DMatrix<f64>) -> DMatrix<Complex64> {
    re.zip_map(im, Complex64::new)
}

/// Principal submatrix over `idx`.
pub fn submatrix(m: &DMatrix<Complex64>, idx: &[usize]) -> DMatrix<Complex64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}
