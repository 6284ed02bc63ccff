use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{GbsError, Result};
use crate::linalg::{det_lu, C_ZERO};

/// Largest mode count accepted by [`torontonian`].
pub const MAX_TORONTONIAN_MODES: usize = 14;

/// Determinants below this magnitude are treated as singular.
pub const DET_FLOOR: f64 = 1e-300;

/// `Tor(O) = sum_{Z subset [M]} (-1)^{M-|Z|} / sqrt(det(I - O_ZZ))`, where
/// `O_ZZ` keeps rows and columns `i` and `i + M` for `i` in `Z`.
pub fn torontonian(o: &DMatrix<Complex64>) -> Result<Complex64> {
    let n = o.nrows();
    if !o.is_square() || n % 2 == 1 {
        return Err(GbsError::Dimension(format!("torontonian of a {}x{} matrix", o.nrows(), o.ncols())));
    }
    let m = n / 2;
    if m > MAX_TORONTONIAN_MODES {
        return Err(GbsError::SizeGuard(format!("torontonian over {m} modes exceeds {MAX_TORONTONIAN_MODES}")));
    }
    let terms: Vec<Result<Complex64>> = (0u64..1 << m)
        .into_par_iter()
        .map(|mask| {
            let modes: Vec<usize> = (0..m).filter(|&i| mask >> i & 1 == 1).collect();
            let z = modes.len();
            let idx: Vec<usize> = modes.iter().copied().chain(modes.iter().map(|&i| i + m)).collect();
            let sub = DMatrix::from_fn(2 * z, 2 * z, |r, c| {
                let d = if r == c { 1.0 } else { 0.0 };
                Complex64::new(d, 0.0) - o[(idx[r], idx[c])]
            });
            let det = det_lu(&sub);
            if det.norm() < DET_FLOOR {
                return Err(GbsError::NumericalRange(format!("det(I - O_ZZ) vanishes for modes {modes:?}")));
            }
            let term = 1.0 / det.sqrt();
            Ok(if (m - z) % 2 == 0 { term } else { -term })
        })
        .collect();
    let mut total = C_ZERO;
    for t in terms {
        total += t?;
    }
    Ok(total)
}
