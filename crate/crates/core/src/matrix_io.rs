//! Complex matrix JSON files: `{"rows", "cols", "re", "im"}` with row-major
//! real and imaginary parts.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GbsError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl MatrixFile {
    pub fn from_matrix(m: &DMatrix<Complex64>) -> Self {
        let mut re = Vec::with_capacity(m.len());
        let mut im = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        MatrixFile { rows: m.nrows(), cols: m.ncols(), re, im }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<Complex64>> {
        let n = self.rows * self.cols;
        if self.re.len() != n || self.im.len() != n {
            return Err(GbsError::Parse(format!(
                "matrix file declares {}x{} but has {} real and {} imaginary entries",
                self.rows,
                self.cols,
                self.re.len(),
                self.im.len()
            )));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| {
            let k = i * self.cols + j;
            Complex64::new(self.re[k], self.im[k])
        }))
    }
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<Complex64>> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix(&text)
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<Complex64>> {
    let file: MatrixFile =
        serde_json::from_str(text).map_err(|e| GbsError::Parse(e.to_string()))?;
    file.to_matrix()
}

pub fn write_matrix(path: &Path, m: &DMatrix<Complex64>) -> Result<()> {
    let text = serde_json::to_string(&MatrixFile::from_matrix(m))
        .map_err(|e| GbsError::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
