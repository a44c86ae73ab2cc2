//! Discrete vector quantile levels.
//!
//! A grid with `T` levels per axis in `d` dimensions has `T^d` rows. Coordinates
//! take the values `1/T, 2/T, ..., 1` and rows are ordered lexicographically with
//! the last axis varying fastest, so stepping along axis `a` moves `T^(d-1-a)` rows.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on `T^d`; a grid larger than this is refused.
pub const MAX_GRID_ROWS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    t: usize,
    d: usize,
    levels: Array2<f64>,
}

/// The `(T, d)` pair a grid is built from; enough to rebuild it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub t: usize,
    pub d: usize,
}

pub fn make_grid(t: usize, d: usize) -> Result<QuantileGrid> {
    QuantileGrid::new(t, d)
}

impl QuantileGrid {
    pub fn new(t: usize, d: usize) -> Result<Self> {
        if t == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid needs T >= 1 and d >= 1, got T={t}, d={d}"
            )));
        }
        let rows = grid_size(t, d)?;
        let mut levels = Array2::zeros((rows, d));
        let tf = t as f64;
        for r in 0..rows {
            let mut rem = r;
            for a in (0..d).rev() {
                levels[[r, a]] = ((rem % t) + 1) as f64 / tf;
                rem /= t;
            }
        }
        Ok(Self { t, d, levels })
    }

    pub fn from_shape(shape: GridShape) -> Result<Self> {
        Self::new(shape.t, shape.d)
    }

    pub fn shape(&self) -> GridShape {
        GridShape { t: self.t, d: self.d }
    }

    /// Levels per dimension.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of grid rows, `T^d`.
    pub fn len(&self) -> usize {
        self.levels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.nrows() == 0
    }

    pub fn levels(&self) -> &Array2<f64> {
        &self.levels
    }

    pub fn level(&self, row: usize) -> ArrayView1<'_, f64> {
        self.levels.row(row)
    }

    /// Row distance between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.t.pow((self.d - 1 - axis) as u32)
    }

    /// Zero-based integer coordinate of `row` along `axis` (level is `(m + 1) / T`).
    pub fn coord(&self, row: usize, axis: usize) -> usize {
        (row / self.stride(axis)) % self.t
    }

    pub fn multi_index(&self, row: usize) -> Vec<usize> {
        (0..self.d).map(|a| self.coord(row, a)).collect()
    }

    pub fn row_of(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &m| acc * self.t + m)
    }
}

fn grid_size(t: usize, d: usize) -> Result<usize> {
    let mut rows: usize = 1;
    for _ in 0..d {
        rows = rows
            .checked_mul(t)
            .filter(|&r| r <= MAX_GRID_ROWS)
            .ok_or_else(|| Error::Size(format!("T^d = {t}^{d} exceeds {MAX_GRID_ROWS} rows")))?;
    }
    Ok(rows)
}
