//! Row-blocked sample storage.
//!
//! Ensembles are stored as a list of `block_size x M` matrices. Each block is
//! produced from its own random stream and processed independently, and every
//! reduction folds per-block partial results in block order, which makes the
//! output independent of the number of worker threads.

use nalgebra::{DMatrix, DVector, Scalar};
use num_complex::Complex64;
use num_traits::Zero;
use rayon::prelude::*;

use crate::error::{GbsError, Result};

/// Sampler block size used when a caller does not choose one.
pub const DEFAULT_BLOCK_SIZE: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlocks<T: Scalar> {
    blocks: Vec<DMatrix<T>>,
    block_size: usize,
    rows: usize,
    cols: usize,
}

/// Row ranges `[start, end)` of the blocks covering `rows` samples.
pub fn block_ranges(rows: usize, block_size: usize) -> Vec<(usize, usize)> {
    (0..rows.div_ceil(block_size))
        .map(|b| (b * block_size, ((b + 1) * block_size).min(rows)))
        .collect()
}

impl<T: Scalar + Copy + Send + Sync> SampleBlocks<T> {
    pub fn from_blocks(blocks: Vec<DMatrix<T>>, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(GbsError::Config("block size must be positive".into()));
        }
        let cols = blocks.first().map_or(0, |b| b.ncols());
        let last = blocks.len().saturating_sub(1);
        for (i, b) in blocks.iter().enumerate() {
            let ok_rows = if i == last { b.nrows() <= block_size && b.nrows() > 0 } else { b.nrows() == block_size };
            if !ok_rows || b.ncols() != cols {
                return Err(GbsError::Dimension(format!(
                    "block {i} has shape {}x{}, expected {block_size}x{cols}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        let rows = blocks.iter().map(|b| b.nrows()).sum();
        Ok(SampleBlocks { blocks, block_size, rows, cols })
    }

    pub fn from_matrix(m: &DMatrix<T>, block_size: usize) -> Result<Self> {
        let blocks = block_ranges(m.nrows(), block_size.max(1))
            .into_iter()
            .map(|(s, e)| m.rows(s, e - s).into_owned())
            .collect();
        Self::from_blocks(blocks, block_size)
    }

    pub fn to_matrix(&self) -> DMatrix<T>
    where
        T: Zero,
    {
        let mut out = DMatrix::from_element(self.rows, self.cols, T::zero());
        for (b, (s, e)) in self.blocks.iter().zip(block_ranges(self.rows, self.block_size)) {
            out.rows_mut(s, e - s).copy_from(b);
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn blocks(&self) -> &[DMatrix<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DMatrix<T>] {
        &mut self.blocks
    }

    pub fn into_blocks(self) -> Vec<DMatrix<T>> {
        self.blocks
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.blocks[row / self.block_size][(row % self.block_size, col)]
    }

    /// Copy sample `row` into `buf`.
    pub fn read_row(&self, row: usize, buf: &mut [T]) {
        let b = &self.blocks[row / self.block_size];
        let r = row % self.block_size;
        for (j, slot) in buf.iter_mut().enumerate() {
            *slot = b[(r, j)];
        }
    }

    pub fn map<U, F>(&self, f: F) -> SampleBlocks<U>
    where
        U: Scalar + Copy + Send + Sync,
        F: Fn(T) -> U + Sync,
    {
        let blocks = self.blocks.par_iter().map(|b| b.map(&f)).collect();
        SampleBlocks { blocks, block_size: self.block_size, rows: self.rows, cols: self.cols }
    }

    pub fn zip_map<U, V, F>(&self, other: &SampleBlocks<U>, f: F) -> Result<SampleBlocks<V>>
    where
        U: Scalar + Copy + Send + Sync,
        V: Scalar + Copy + Send + Sync,
        F: Fn(T, U) -> V + Sync,
    {
        if self.rows != other.rows || self.cols != other.cols || self.block_size != other.block_size {
            return Err(GbsError::Dimension("sample block layouts differ".into()));
        }
        let blocks = self
            .blocks
            .par_iter()
            .zip(other.blocks.par_iter())
            .map(|(a, b)| a.zip_map(b, &f))
            .collect();
        Ok(SampleBlocks { blocks, block_size: self.block_size, rows: self.rows, cols: self.cols })
    }

    /// Keep only the given columns.
    pub fn select_columns(&self, cols: &[usize]) -> SampleBlocks<T> {
        let blocks = self.blocks.iter().map(|b| b.select_columns(cols.iter())).collect();
        SampleBlocks { blocks, block_size: self.block_size, rows: self.rows, cols: cols.len() }
    }
}

/// First and second central moments of a (possibly complex) sample set.
///
/// Only the real part of the non-conjugated second moment
/// `sum (x - mu)(x - mu)^T` is kept: positive-P averages of real observables
/// are real in expectation, and the imaginary part is pure sampling noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean_re: DVector<f64>,
    pub mean_im: DVector<f64>,
    pub m2: DMatrix<f64>,
}

impl Moments {
    pub fn empty(cols: usize) -> Self {
        Moments {
            count: 0,
            mean_re: DVector::zeros(cols),
            mean_im: DVector::zeros(cols),
            m2: DMatrix::zeros(cols, cols),
        }
    }

    pub fn of_real_block(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let mean = column_means(x);
        let c = centered(x, &mean);
        let m2 = c.transpose() * &c;
        Moments { count: n, mean_im: DVector::zeros(x.ncols()), mean_re: mean, m2 }
    }

    pub fn of_complex_block(x: &DMatrix<Complex64>) -> Self {
        let re = x.map(|z| z.re);
        let im = x.map(|z| z.im);
        let mean_re = column_means(&re);
        let mean_im = column_means(&im);
        let cr = centered(&re, &mean_re);
        let ci = centered(&im, &mean_im);
        let m2 = cr.transpose() * &cr - ci.transpose() * &ci;
        Moments { count: x.nrows(), mean_re, mean_im, m2 }
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return other.clone();
        }
        if other.count == 0 {
            return self.clone();
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let dr = &other.mean_re - &self.mean_re;
        let di = &other.mean_im - &self.mean_im;
        let w = na * nb / n;
        let m2 = &self.m2 + &other.m2 + (&dr * dr.transpose() - &di * di.transpose()) * w;
        Moments {
            count: self.count + other.count,
            mean_re: &self.mean_re + &dr * (nb / n),
            mean_im: &self.mean_im + &di * (nb / n),
            m2,
        }
    }

    /// Fold per-block moments in block order.
    pub fn combine(parts: &[Moments], cols: usize) -> Moments {
        parts.iter().fold(Moments::empty(cols), |acc, p| acc.merge(p))
    }

    /// Real part of the mean.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean_re
    }

    /// Real part of the covariance `<x_i x_j> - <x_i><x_j>` (normalised by N).
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.m2 / (self.count.max(1) as f64)
    }
}

pub fn real_moments(x: &SampleBlocks<f64>) -> Moments {
    let parts: Vec<Moments> = x.blocks().par_iter().map(Moments::of_real_block).collect();
    Moments::combine(&parts, x.cols())
}

pub fn complex_moments(x: &SampleBlocks<Complex64>) -> Moments {
    let parts: Vec<Moments> = x.blocks().par_iter().map(Moments::of_complex_block).collect();
    Moments::combine(&parts, x.cols())
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn centered(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    c
}
