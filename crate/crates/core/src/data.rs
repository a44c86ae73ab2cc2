//! Paired covariate/target samples and their CSV form.
//!
//! CSV layout: header `x_0,...,x_{k-1},y_0,...,y_{d-1}`, one sample per line in
//! generation order, `.` as decimal separator.

use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView2};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array2<f64>,
    pub seed: u64,
    pub name: String,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>, seed: u64, name: impl Into<String>) -> Result<Self> {
        if y.nrows() == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
        }
        if x.nrows() != y.nrows() {
            return Err(shape_err(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if y.ncols() == 0 {
            return Err(shape_err("targets need at least one column"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset entries must be finite".into()));
        }
        Ok(Self {
            x,
            y,
            seed,
            name: name.into(),
        })
    }

    /// Dataset without covariates, for unconditional quantile estimation.
    pub fn unconditional(y: Array2<f64>, seed: u64, name: impl Into<String>) -> Result<Self> {
        let n = y.nrows();
        Self::new(Array2::zeros((n, 0)), y, seed, name)
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn d(&self) -> usize {
        self.y.ncols()
    }

    /// Column means of the covariates.
    pub fn x_mean(&self) -> Vec<f64> {
        column_means(self.x.view())
    }

    /// First `n` rows and the remainder, in order.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "split point {n} must lie strictly inside 0..{}",
                self.len()
            )));
        }
        let a = Dataset::new(
            self.x.slice(s![..n, ..]).to_owned(),
            self.y.slice(s![..n, ..]).to_owned(),
            self.seed,
            self.name.clone(),
        )?;
        let b = Dataset::new(
            self.x.slice(s![n.., ..]).to_owned(),
            self.y.slice(s![n.., ..]).to_owned(),
            self.seed,
            self.name.clone(),
        )?;
        Ok((a, b))
    }

    /// Same targets, covariates dropped.
    pub fn targets_only(&self) -> Dataset {
        Dataset {
            x: Array2::zeros((self.len(), 0)),
            y: self.y.clone(),
            seed: self.seed,
            name: self.name.clone(),
        }
    }

    /// One target column as a 1d dataset with the same covariates.
    pub fn target_column(&self, col: usize) -> Result<Dataset> {
        if col >= self.d() {
            return Err(shape_err(format!("target column {col} out of range")));
        }
        let y = self.y.slice(s![.., col..col + 1]).to_owned();
        Dataset::new(self.x.clone(), y, self.seed, self.name.clone())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (0..self.k())
            .map(|i| format!("x_{i}"))
            .chain((0..self.d()).map(|i| format!("y_{i}")))
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for (xr, yr) in self.x.rows().into_iter().zip(self.y.rows()) {
            let rec: Vec<String> = xr.iter().chain(yr.iter()).map(|v| format!("{v}")).collect();
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, name: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_err)?.clone();
        let mut k = 0;
        let mut d = 0;
        for (pos, col) in header.iter().enumerate() {
            let col = col.trim();
            if let Some(i) = col.strip_prefix("x_") {
                if d > 0 || i.parse::<usize>().ok() != Some(k) {
                    return Err(Error::Csv(format!("unexpected column `{col}` at position {pos}")));
                }
                k += 1;
            } else if let Some(i) = col.strip_prefix("y_") {
                if i.parse::<usize>().ok() != Some(d) {
                    return Err(Error::Csv(format!("unexpected column `{col}` at position {pos}")));
                }
                d += 1;
            } else {
                return Err(Error::Csv(format!("unexpected column `{col}` at position {pos}")));
            }
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut n = 0;
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != k + d {
                return Err(Error::Csv(format!(
                    "line {}: expected {} fields, found {}",
                    line + 2,
                    k + d,
                    rec.len()
                )));
            }
            for (pos, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Csv(format!("line {}: field {} is not a number: `{field}`", line + 2, pos + 1))
                })?;
                if pos < k {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
            n += 1;
        }
        let x = Array2::from_shape_vec((n, k), xs).map_err(|e| shape_err(e.to_string()))?;
        let y = Array2::from_shape_vec((n, d), ys).map_err(|e| shape_err(e.to_string()))?;
        Dataset::new(x, y, 0, name)
    }
}

pub(crate) fn column_means(m: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = m.nrows().max(1) as f64;
    m.columns().into_iter().map(|c| c.sum() / n).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}
