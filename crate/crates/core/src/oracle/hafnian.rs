use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{GbsError, Result};
use crate::linalg::{max_abs, C_ONE, C_ZERO};

/// Largest matrix accepted by [`hafnian`].
pub const MAX_HAFNIAN_DIM: usize = 40;

/// Hafnian by the power-trace formula: a signed sum over subsets of index
/// pairs `(i, i + k)` of the `x^k` coefficient of `exp(sum_j tr(B^j) x^j / 2j)`
/// with `B = A[Z, Z] X`.
pub fn hafnian(a: &DMatrix<Complex64>) -> Result<Complex64> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(GbsError::Dimension(format!("hafnian of a {}x{} matrix", a.nrows(), a.ncols())));
    }
    if n % 2 == 1 {
        return Err(GbsError::Dimension(format!("hafnian of odd dimension {n}")));
    }
    if n > MAX_HAFNIAN_DIM {
        return Err(GbsError::SizeGuard(format!("hafnian dimension {n} exceeds {MAX_HAFNIAN_DIM}")));
    }
    let asym = max_abs(&(a - a.transpose()));
    if asym > 1e-10 * max_abs(a).max(1.0) {
        return Err(GbsError::Validation(format!("hafnian of a non-symmetric matrix (defect {asym:e})")));
    }
    if n == 0 {
        return Ok(C_ONE);
    }
    let k = n / 2;
    let total: Complex64 = (0u64..1 << k)
        .into_par_iter()
        .map(|mask| {
            let pairs: Vec<usize> = (0..k).filter(|&i| mask >> i & 1 == 1).collect();
            let p = pairs.len();
            if p == 0 {
                return C_ZERO;
            }
            let idx: Vec<usize> = pairs.iter().copied().chain(pairs.iter().map(|&i| i + k)).collect();
            // B = A[Z, Z] X, where X swaps the two halves
            let b = DMatrix::from_fn(2 * p, 2 * p, |r, c| {
                let c2 = if c < p { c + p } else { c - p };
                a[(idx[r], idx[c2])]
            });
            let coeff = trace_exp_coefficient(&b, k);
            if (k - p) % 2 == 0 {
                coeff
            } else {
                -coeff
            }
        })
        .sum();
    Ok(total)
}

/// Coefficient of `x^k` in `exp(sum_{j=1..k} tr(B^j) x^j / (2j))`.
fn trace_exp_coefficient(b: &DMatrix<Complex64>, k: usize) -> Complex64 {
    let mut g = vec![C_ZERO; k + 1];
    let mut power = b.clone();
    for (j, gj) in g.iter_mut().enumerate().skip(1) {
        if j > 1 {
            power = &power * b;
        }
        *gj = power.trace() / (2 * j) as f64;
    }
    let mut e = vec![C_ZERO; k + 1];
    e[0] = C_ONE;
    for m in 1..=k {
        let mut s = C_ZERO;
        for j in 1..=m {
            s += g[j] * e[m - j] * j as f64;
        }
        e[m] = s / m as f64;
    }
    e[k]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn small_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        assert_relative_eq!(hafnian(&a).unwrap().re, 1.0, epsilon = 1e-14);
        let ones = DMatrix::from_element(4, 4, c(1.0));
        assert_relative_eq!(hafnian(&ones).unwrap().re, 3.0, epsilon = 1e-13);
        let six = DMatrix::from_element(6, 6, c(1.0));
        assert_relative_eq!(hafnian(&six).unwrap().re, 15.0, epsilon = 1e-12);
        assert_eq!(hafnian(&DMatrix::zeros(0, 0)).unwrap(), C_ONE);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(hafnian(&DMatrix::from_element(3, 3, c(1.0))).is_err());
        let mut a = DMatrix::from_element(2, 2, c(1.0));
        a[(0, 1)] = c(2.0);
        assert!(hafnian(&a).is_err());
    }
}
