use serde::{Deserialize, Serialize};

use super::{quantile_invert_many, BRACKET_DOUBLINGS, BRACKET_START};
use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::models::Model;

/// Rectangle `[lo[0], hi[0]] × [lo[1], hi[1]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl QuadBox {
    pub fn square(half_width: f64) -> Self {
        Self {
            lo: [-half_width; 2],
            hi: [half_width; 2],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiResult {
    pub mi: f64,
    /// Integral of the bivariate density over the box.
    pub mass: f64,
}

const DENSITY_FLOOR: f64 = 1e-300;

fn trapezoid(lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / (n - 1) as f64;
    let nodes = (0..n).map(|i| lo + h * i as f64).collect();
    let weights = (0..n).map(|i| if i == 0 || i == n - 1 { h / 2.0 } else { h }).collect();
    (nodes, weights)
}

/// Mutual information of a bivariate density by tensor-product trapezoid
/// quadrature; the marginals come from integrating the same grid.
/// `logpdf` receives all grid points at once as two coordinate vectors.
pub fn mutual_information_quadrature<F>(mut logpdf: F, quad: QuadBox, n: usize) -> Result<MiResult>
where
    F: FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    if n < 2 || !(quad.hi[0] > quad.lo[0] && quad.hi[1] > quad.lo[1]) {
        return Err(Error::InvalidArgument("quadrature needs n ≥ 2 and a non-degenerate box".into()));
    }
    let (ya, wa) = trapezoid(quad.lo[0], quad.hi[0], n);
    let (yb, wb) = trapezoid(quad.lo[1], quad.hi[1], n);
    let a: Vec<f64> = ya.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
    let b: Vec<f64> = (0..n).flat_map(|_| yb.iter().copied()).collect();
    let f: Vec<f64> = logpdf(&a, &b)?.into_iter().map(f64::exp).collect();
    if f.len() != n * n {
        return Err(Error::shape(format!("{} density values", n * n), format!("{}", f.len())));
    }
    let mut fa = vec![0.0; n];
    let mut fb = vec![0.0; n];
    let mut mass = 0.0;
    for r in 0..n {
        for c in 0..n {
            let v = f[r * n + c];
            fa[r] += wb[c] * v;
            fb[c] += wa[r] * v;
            mass += wa[r] * wb[c] * v;
        }
    }
    if !(0.9..=1.05).contains(&mass) {
        return Err(Error::NegativeMass { mass });
    }
    let mut mi = 0.0;
    for r in 0..n {
        for c in 0..n {
            let v = f[r * n + c];
            if v >= DENSITY_FLOOR {
                mi += wa[r] * wb[c] * v * (v / (fa[r] * fb[c])).ln();
            }
        }
    }
    Ok(MiResult { mi, mass })
}

/// Mutual information of `(Y_i, Y_j)` under a model at covariate row `x`.
/// Without a box, each side spans the 1e-4 and 1 − 1e-4 quantiles of the
/// attainable range of the model's marginal CDF, widened by a quarter of
/// the span on each side.
pub fn model_mutual_information(
    model: &Model,
    i: usize,
    j: usize,
    x: &[f64],
    quad: Option<QuadBox>,
    n: usize,
) -> Result<MiResult> {
    let k = model.k();
    if i == j || i >= k || j >= k {
        return Err(Error::InvalidArgument(format!("invalid response pair ({i}, {j}) for K = {k}")));
    }
    let repeat_x = |rows: usize| Matrix::new(rows, x.len(), x.iter().copied().cycle().take(rows * x.len()).collect());
    let place = |a: &[f64], b: &[f64]| -> Matrix {
        let mut m = Matrix::zeros(a.len(), k);
        for (r, (&va, &vb)) in a.iter().zip(b).enumerate() {
            m.data[r * k + i] = va;
            m.data[r * k + j] = vb;
        }
        m
    };
    let quad = match quad {
        Some(q) => q,
        None => {
            let xs = repeat_x(2)?;
            let limit = BRACKET_START * f64::from(1u32 << BRACKET_DOUBLINGS);
            let mut lo = [0.0; 2];
            let mut hi = [0.0; 2];
            for (slot, dim) in [i, j].into_iter().enumerate() {
                let marginal = |ys: &[f64]| {
                    let mut m = Matrix::zeros(ys.len(), k);
                    for (r, &v) in ys.iter().enumerate() {
                        m.data[r * k + dim] = v;
                    }
                    model.marginal_cdf(&xs, &m, &[dim])
                };
                let ends = marginal(&[-limit, limit])?;
                let span = ends[1] - ends[0];
                let q = quantile_invert_many(marginal, &[ends[0] + 1e-4 * span, ends[1] - 1e-4 * span])?;
                let pad = 0.25 * (q[1] - q[0]);
                lo[slot] = q[0] - pad;
                hi[slot] = q[1] + pad;
            }
            QuadBox { lo, hi }
        }
    };
    let xs = repeat_x(n * n)?;
    mutual_information_quadrature(|a, b| model.pair_logpdf(&xs, &place(a, b), i, j), quad, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bvn_logpdf(rho: f64) -> impl FnMut(&[f64], &[f64]) -> Result<Vec<f64>> {
        move |a, b| {
            let det = 1.0 - rho * rho;
            Ok(a.iter()
                .zip(b)
                .map(|(x, y)| {
                    -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - (x * x - 2.0 * rho * x * y + y * y) / (2.0 * det)
                })
                .collect())
        }
    }

    #[test]
    fn gaussian_mutual_information_matches_closed_form() {
        for (rho, expect, tol) in [
            (0.8, 0.5108256237659907, 0.003),
            (0.1, 0.005025167926750725, 0.0005),
            (-0.5, 0.14384103622589046, 0.003),
        ] {
            let r = mutual_information_quadrature(bvn_logpdf(rho), QuadBox::square(8.0), 256).unwrap();
            assert!((r.mi - expect).abs() < tol, "{rho}: {}", r.mi);
            assert!((r.mass - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn independence_gives_zero() {
        let r = mutual_information_quadrature(bvn_logpdf(0.0), QuadBox::square(8.0), 128).unwrap();
        assert!(r.mi.abs() < 1e-6);
    }

    #[test]
    fn symmetric_under_swap() {
        let mut f = bvn_logpdf(0.6);
        let skew = |a: &[f64], b: &[f64]| -> Result<Vec<f64>> {
            let shifted: Vec<f64> = a.iter().map(|v| v * 1.5).collect();
            Ok(f(&shifted, b)?.into_iter().map(|v| v + 1.5f64.ln()).collect())
        };
        let q = QuadBox {
            lo: [-6.0, -8.0],
            hi: [6.0, 8.0],
        };
        let r1 = mutual_information_quadrature(skew, q, 200).unwrap();
        let mut g = bvn_logpdf(0.6);
        let swapped = |a: &[f64], b: &[f64]| -> Result<Vec<f64>> {
            let shifted: Vec<f64> = b.iter().map(|v| v * 1.5).collect();
            Ok(g(&shifted, a)?.into_iter().map(|v| v + 1.5f64.ln()).collect())
        };
        let q2 = QuadBox {
            lo: [-8.0, -6.0],
            hi: [8.0, 6.0],
        };
        let r2 = mutual_information_quadrature(swapped, q2, 200).unwrap();
        assert!((r1.mi - r2.mi).abs() < 1e-6);
    }

    #[test]
    fn truncated_box_reports_missing_mass() {
        let r = mutual_information_quadrature(bvn_logpdf(0.3), QuadBox::square(1.0), 64);
        assert!(matches!(r, Err(Error::NegativeMass { .. })));
    }
}
