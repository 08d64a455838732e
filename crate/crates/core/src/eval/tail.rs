use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{flush, quantile_invert_many, write_row};
use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::models::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailSource {
    Empirical,
    Model,
}

/// Lower-tail index for `u < 0.5`, upper-tail index otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailDepGrid {
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Grid points whose conditioning event was empty; their λ is 0.
    pub empty: Vec<bool>,
    pub source: TailSource,
}

impl TailDepGrid {
    /// λ at the grid point nearest to `u`.
    pub fn at(&self, u: f64) -> f64 {
        let i = (0..self.u.len())
            .min_by(|&a, &b| (self.u[a] - u).abs().total_cmp(&(self.u[b] - u).abs()))
            .expect("non-empty grid");
        self.lambda[i]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        write_row(&mut w, &["x", "y"])?;
        for (u, l) in self.u.iter().zip(&self.lambda) {
            write_row(&mut w, &[u.to_string(), l.to_string()])?;
        }
        flush(w)
    }
}

/// 99 equispaced points on `[0.005, 0.995]`.
pub fn default_u_grid() -> Vec<f64> {
    (0..99).map(|i| 0.005 + 0.99 * i as f64 / 98.0).collect()
}

fn check_grid(u: &[f64]) -> Result<()> {
    if u.is_empty() || u.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::InvalidArgument("u-grid must be non-empty and inside (0, 1)".into()));
    }
    Ok(())
}

/// Ordinal ranks `1..=n`, ties broken by position.
fn ranks(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0; v.len()];
    for (pos, &i) in order.iter().enumerate() {
        r[i] = pos + 1;
    }
    r
}

/// Plug-in tail-dependence estimates with rank-based marginal CDFs.
pub fn empirical_tail_dep(a: &[f64], b: &[f64], u_grid: &[f64]) -> Result<TailDepGrid> {
    check_grid(u_grid)?;
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} samples", a.len()), format!("{}", b.len())));
    }
    if a.len() < 100 {
        return Err(Error::InvalidArgument(format!("tail dependence needs at least 100 samples, got {}", a.len())));
    }
    let n = a.len() as f64;
    let (ra, rb) = (ranks(a), ranks(b));
    let mut lambda = Vec::with_capacity(u_grid.len());
    let mut empty = Vec::with_capacity(u_grid.len());
    for &u in u_grid {
        let cut = u * n;
        let (mut joint, mut cond) = (0usize, 0usize);
        for (&x, &y) in ra.iter().zip(&rb) {
            let (x, y) = (x as f64, y as f64);
            let (inx, iny) = if u < 0.5 { (x <= cut, y <= cut) } else { (x > cut, y > cut) };
            if inx {
                cond += 1;
                if iny {
                    joint += 1;
                }
            }
        }
        empty.push(cond == 0);
        lambda.push(if cond == 0 { 0.0 } else { joint as f64 / cond as f64 });
    }
    Ok(TailDepGrid {
        u: u_grid.to_vec(),
        lambda,
        empty,
        source: TailSource::Empirical,
    })
}

/// Tail-dependence curve of `(Y_i, Y_j)` implied by a model at the covariate
/// row `x`, through its marginal quantiles and bivariate marginal CDF.
pub fn model_tail_dep(model: &Model, i: usize, j: usize, x: &[f64], u_grid: &[f64]) -> Result<TailDepGrid> {
    check_grid(u_grid)?;
    let k = model.k();
    if i == j || i >= k || j >= k {
        return Err(Error::InvalidArgument(format!("invalid response pair ({i}, {j}) for K = {k}")));
    }
    let n = u_grid.len();
    let xs = Matrix::new(n, x.len(), x.iter().copied().cycle().take(n * x.len()).collect())?;
    let fill = |col: usize, v: &[f64]| -> Result<Matrix> {
        let mut m = Matrix::zeros(v.len(), k);
        for (r, &val) in v.iter().enumerate() {
            m.data[r * k + col] = val;
        }
        Ok(m)
    };
    let mut quantiles = Vec::with_capacity(2);
    for dim in [i, j] {
        let q = quantile_invert_many(|ys| model.marginal_cdf(&xs, &fill(dim, ys)?, &[dim]), u_grid)?;
        quantiles.push(q);
    }
    let mut y = Matrix::zeros(n, k);
    for r in 0..n {
        y.data[r * k + i] = quantiles[0][r];
        y.data[r * k + j] = quantiles[1][r];
    }
    let fij = model.marginal_cdf(&xs, &y, &[i, j])?;
    let lambda = u_grid
        .iter()
        .zip(&fij)
        .map(|(&u, &f)| {
            let l = if u < 0.5 { f / u } else { (1.0 - 2.0 * u + f) / (1.0 - u) };
            l.clamp(0.0, 1.0)
        })
        .collect();
    Ok(TailDepGrid {
        u: u_grid.to_vec(),
        lambda,
        empty: vec![false; n],
        source: TailSource::Model,
    })
}
