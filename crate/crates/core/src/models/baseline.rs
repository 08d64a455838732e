use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Independent Gaussian per response column, fitted by sample mean and variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    pub k: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn standard(k: usize) -> Self {
        Self {
            k,
            mean: vec![0.0; k],
            var: vec![1.0; k],
        }
    }

    pub fn fit(&mut self, y: &[f64], rows: usize) -> Result<()> {
        if rows == 0 {
            return Err(Error::EmptyInput);
        }
        let k = self.k;
        for j in 0..k {
            let mean = (0..rows).map(|r| y[r * k + j]).sum::<f64>() / rows as f64;
            let var = (0..rows).map(|r| (y[r * k + j] - mean).powi(2)).sum::<f64>() / rows as f64;
            if !(var > 0.0) {
                return Err(Error::DegenerateColumn { column: j });
            }
            self.mean[j] = mean;
            self.var[j] = var;
        }
        Ok(())
    }

    pub fn column_logpdf(&self, j: usize, v: f64) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * self.var[j]).ln() - (v - self.mean[j]).powi(2) / (2.0 * self.var[j])
    }

    pub fn logpdf(&self, y: &[f64], rows: usize) -> Vec<f64> {
        (0..rows)
            .map(|r| (0..self.k).map(|j| self.column_logpdf(j, y[r * self.k + j])).sum())
            .collect()
    }

    pub fn cdf(&self, j: usize, v: f64) -> f64 {
        crate::stats::norm_cdf((v - self.mean[j]) / self.var[j].sqrt())
    }
}
