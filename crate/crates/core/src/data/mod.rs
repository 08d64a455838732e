//! Datasets: containers, splitting and standardisation, generators, ingestion.

mod io;
mod synth;

pub use io::{assemble_classification_dataset, load_csv, log_losses, percentile_threshold, CsvSchema};
pub use synth::{gen_synthetic, Generator, GeneratorSpec, MIXTURE_CORR, MIXTURE_SCALE, MIXTURE_X_MEAN};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!("{rows}x{cols} matrix"), format!("{} values", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::RaggedRow {
                    row: i + 1,
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.cols) {
            return Err(Error::ColumnOutOfRange {
                index: bad,
                columns: self.cols,
            });
        }
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            data.extend(cols.iter().map(|&c| self.get(i, c)));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        })
    }
}

/// Unstandardised covariates and responses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawData {
    pub x: Matrix,
    pub y: Matrix,
    /// Mixture component that generated each row, when known.
    pub groups: Option<Vec<u8>>,
    pub provenance: String,
}

impl RawData {
    pub fn new(x: Matrix, y: Matrix, provenance: impl Into<String>) -> Result<Self> {
        if x.rows != y.rows {
            return Err(Error::shape(format!("{} response rows", x.rows), format!("{}", y.rows)));
        }
        Ok(Self {
            x,
            y,
            groups: None,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.rows
    }

    pub fn is_empty(&self) -> bool {
        self.y.rows == 0
    }
}

/// Per-column location and scale taken from the training rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// `Σ log sd` over the given columns: subtract from a standardised
    /// log-density to express it on the original scale.
    pub fn log_jacobian(&self, cols: &[usize]) -> f64 {
        cols.iter().map(|&c| self.sd[c].ln()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Standardised data with split indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub x_stats: Standardization,
    pub y_stats: Standardization,
    pub groups: Option<Vec<u8>>,
    pub provenance: String,
    pub dropped_x: Vec<usize>,
    pub dropped_y: Vec<usize>,
}

impl Dataset {
    pub fn d(&self) -> usize {
        self.x.cols
    }

    pub fn k(&self) -> usize {
        self.y.cols
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn split_xy(&self, split: Split) -> (Matrix, Matrix) {
        let idx = self.indices(split);
        (self.x.gather_rows(idx), self.y.gather_rows(idx))
    }
}

fn column_stats(m: &Matrix, rows: &[usize]) -> Standardization {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; m.cols];
    let mut sd = vec![0.0; m.cols];
    for j in 0..m.cols {
        mean[j] = rows.iter().map(|&i| m.get(i, j)).sum::<f64>() / n;
        let var = rows.iter().map(|&i| (m.get(i, j) - mean[j]).powi(2)).sum::<f64>() / n;
        sd[j] = var.sqrt();
    }
    Standardization { mean, sd }
}

fn standardize(m: &Matrix, rows: &[usize], label: &str) -> (Matrix, Standardization, Vec<usize>) {
    let stats = column_stats(m, rows);
    let keep: Vec<usize> = (0..m.cols)
        .filter(|&j| {
            let ok = stats.sd[j] > 0.0 && stats.sd[j].is_finite();
            if !ok {
                log::warn!("dropping {label} column {j}: zero variance on the training rows");
            }
            ok
        })
        .collect();
    let dropped = (0..m.cols).filter(|j| !keep.contains(j)).collect();
    let stats = Standardization {
        mean: keep.iter().map(|&j| stats.mean[j]).collect(),
        sd: keep.iter().map(|&j| stats.sd[j]).collect(),
    };
    let mut out = Matrix::zeros(m.rows, keep.len());
    for i in 0..m.rows {
        for (c, &j) in keep.iter().enumerate() {
            out.data[i * keep.len() + c] = (m.get(i, j) - stats.mean[c]) / stats.sd[c];
        }
    }
    (out, stats, dropped)
}

/// Shuffles rows with `seed`, carves train/validation/test by `fractions`
/// and z-scores every column with training statistics. Columns that are
/// constant on the training rows are dropped.
pub fn split_standardize(raw: &RawData, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    if fractions.iter().any(|&f| !(f > 0.0)) || fractions.iter().sum::<f64>() > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to at most 1, got {fractions:?}"
        )));
    }
    let n = raw.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let n_test = ((fractions[2] * n as f64).round() as usize).min(n - n_train - n_val);
    if n_train == 0 {
        return Err(Error::EmptyInput);
    }
    let train = order[..n_train].to_vec();
    let validation = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..n_train + n_val + n_test].to_vec();
    let (x, x_stats, dropped_x) = standardize(&raw.x, &train, "covariate");
    let (y, y_stats, dropped_y) = standardize(&raw.y, &train, "response");
    if y.cols == 0 {
        return Err(Error::DegenerateColumn {
            column: dropped_y.first().copied().unwrap_or(0),
        });
    }
    Ok(Dataset {
        x,
        y,
        train,
        validation,
        test,
        x_stats,
        y_stats,
        groups: raw.groups.clone(),
        provenance: raw.provenance.clone(),
        dropped_x,
        dropped_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(n: usize) -> RawData {
        let x = Matrix::new(n, 2, (0..n).flat_map(|i| [i as f64, 3.0]).collect()).unwrap();
        let y = Matrix::new(n, 1, (0..n).map(|i| (i * i) as f64).collect()).unwrap();
        RawData::new(x, y, "test").unwrap()
    }

    #[test]
    fn split_sizes_follow_fractions() {
        let ds = split_standardize(&raw(10), [0.6, 0.2, 0.2], 1).unwrap();
        assert_eq!((ds.train.len(), ds.validation.len(), ds.test.len()), (6, 2, 2));
        let mut all: Vec<usize> = ds.train.iter().chain(&ds.validation).chain(&ds.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn train_columns_are_standardized_and_constant_columns_dropped() {
        let ds = split_standardize(&raw(50), [0.6, 0.2, 0.2], 3).unwrap();
        assert_eq!(ds.dropped_x, vec![1]);
        assert_eq!(ds.d(), 1);
        for m in [&ds.x, &ds.y] {
            let col: Vec<f64> = ds.train.iter().map(|&i| m.get(i, 0)).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bad_fractions_are_rejected() {
        assert!(split_standardize(&raw(10), [0.7, 0.3, 0.2], 1).is_err());
        assert!(split_standardize(&raw(10), [0.7, 0.0, 0.2], 1).is_err());
    }
}
