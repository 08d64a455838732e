//! Normal distribution helpers, multivariate normal CDFs and small
//! correlation-matrix routines used by the copula models.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn norm_pdf(x: f64) -> f64 {
    std_normal().pdf(x)
}

pub fn norm_ppf(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Bounds applied to marginal CDF values before the normal quantile.
pub const CDF_CLAMP: f64 = 1e-7;

const GL_W: [&[f64]; 3] = [
    &[0.1713244923791705, 0.3607615730481384, 0.4679139345726904],
    &[
        0.04717533638651177,
        0.1069393259953183,
        0.1600783285433464,
        0.2031674267230659,
        0.2334925365383547,
        0.2491470458134029,
    ],
    &[
        0.01761400713915212,
        0.04060142980038694,
        0.06267204833410906,
        0.08327674157670475,
        0.1019301198172404,
        0.1181945319615184,
        0.1316886384491766,
        0.1420961093183821,
        0.1491729864726037,
        0.1527533871307259,
    ],
];

const GL_X: [&[f64]; 3] = [
    &[-0.9324695142031522, -0.6612093864662647, -0.2386191860831970],
    &[
        -0.9815606342467191,
        -0.9041172563704750,
        -0.7699026741943050,
        -0.5873179542866171,
        -0.3678314989981802,
        -0.1252334085114692,
    ],
    &[
        -0.9931285991850949,
        -0.9639719272779138,
        -0.9122344282513259,
        -0.8391169718222188,
        -0.7463319064601508,
        -0.6360536807265150,
        -0.5108670019508271,
        -0.3737060887154196,
        -0.2277858511416451,
        -0.07652652113349733,
    ],
];

/// Upper bivariate normal probability `P(X > h, Y > k)` (Genz's BVNU).
fn bvnu(h: f64, k: f64, r: f64) -> f64 {
    let set = if r.abs() < 0.3 {
        0
    } else if r.abs() < 0.75 {
        1
    } else {
        2
    };
    let (w, x) = (GL_W[set], GL_X[set]);
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for i in 0..w.len() {
            for s in [-1.0, 1.0] {
                let sn = (asr * (s * x[i] + 1.0) / 2.0).sin();
                bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        return bvn * asr / (4.0 * PI) + norm_cdf(-h) * norm_cdf(-k);
    }
    let mut k = k;
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let bs = (h - k).powi(2);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        let asr = -(bs / a_s + hk) / 2.0;
        if asr > -100.0 {
            bvn = a * asr.exp() * (1.0 - c * (bs - a_s) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        }
        if -hk < 100.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp() * (2.0 * PI).sqrt() * norm_cdf(-b / a) * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for i in 0..w.len() {
            for s in [-1.0, 1.0] {
                let xs = (a * (s * x[i] + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                let asr = -(bs / xs + hk) / 2.0;
                if asr > -100.0 {
                    bvn += a
                        * w[i]
                        * asr.exp()
                        * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn / (2.0 * PI);
    }
    if r > 0.0 {
        bvn + norm_cdf(-h.max(k))
    } else {
        -bvn + (norm_cdf(-h) - norm_cdf(-k)).max(0.0)
    }
}

/// `P(X ≤ a, Y ≤ b)` for standard normals with correlation `r`.
pub fn bvn_cdf(a: f64, b: f64, r: f64) -> f64 {
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        return 0.0;
    }
    if a == f64::INFINITY {
        return norm_cdf(b);
    }
    if b == f64::INFINITY {
        return norm_cdf(a);
    }
    bvnu(-a, -b, r).clamp(0.0, 1.0)
}

/// `P(Z ≤ upper)` for `Z ~ N(0, corr)`. Exact for one and two dimensions;
/// otherwise a separation-of-variables estimate on a fixed rank-1 lattice.
pub fn mvn_cdf(upper: &[f64], corr: &[f64]) -> Result<f64> {
    let k = upper.len();
    if corr.len() != k * k {
        return Err(Error::shape(format!("{k}x{k} correlation"), format!("{} entries", corr.len())));
    }
    match k {
        0 => return Err(Error::EmptySubset),
        1 => return Ok(norm_cdf(upper[0])),
        2 => return Ok(bvn_cdf(upper[0], upper[1], corr[1])),
        _ => {}
    }
    let l = cholesky(corr)?;
    const POINTS: usize = 8192;
    let alpha: Vec<f64> = [2.0f64, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0]
        .iter()
        .cycle()
        .take(k)
        .map(|p| p.sqrt().fract())
        .collect();
    let mut total = 0.0;
    let mut y = vec![0.0; k];
    for n in 1..=POINTS {
        for anti in [false, true] {
            let mut prob = 1.0;
            let mut e = norm_cdf(upper[0] / l[0]);
            for i in 1..k {
                prob *= e;
                let mut w = (n as f64 * alpha[i - 1]).fract();
                w = (2.0 * w - 1.0).abs();
                if anti {
                    w = 1.0 - w;
                }
                y[i - 1] = norm_ppf((w * e).clamp(1e-300, 1.0 - 1e-16));
                let shift: f64 = (0..i).map(|j| l[i * k + j] * y[j]).sum();
                e = norm_cdf((upper[i] - shift) / l[i * k + i]);
            }
            total += prob * e;
        }
    }
    Ok(total / (2 * POINTS) as f64)
}

/// Lower Cholesky factor, retrying once with `1e-9` diagonal jitter.
pub fn cholesky(a: &[f64]) -> Result<Vec<f64>> {
    let k = (a.len() as f64).sqrt() as usize;
    let m = DMatrix::from_row_slice(k, k, a);
    let chol = m.clone().cholesky().or_else(|| {
        let jittered = m + DMatrix::identity(k, k) * 1e-9;
        jittered.cholesky()
    });
    let l = chol.ok_or(Error::SingularCorrelation)?.l();
    Ok(row_major(&l))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// `ρ = D⁻¹ (u uᵀ + diag d) D⁻¹`, `D = sqrt(diag Σ)`.
pub fn corr_from_lowrank(u: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    if u.len() != d.len() {
        return Err(Error::shape(format!("d of length {}", u.len()), format!("{}", d.len())));
    }
    if let Some((index, &value)) = d.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositiveD { index, value });
    }
    let k = u.len();
    let s: Vec<f64> = (0..k).map(|i| 1.0 / (u[i] * u[i] + d[i]).sqrt()).collect();
    let mut rho = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            rho[i * k + j] = if i == j { 1.0 } else { u[i] * u[j] * s[i] * s[j] };
        }
    }
    Ok(rho)
}

/// Chains `∂L/∂ρ` (full matrix, `grad_rho`) through the low-rank
/// parameterisation, returning `(∂L/∂u, ∂L/∂d)`.
pub fn lowrank_backward(u: &[f64], d: &[f64], grad_rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = u.len();
    let s: Vec<f64> = (0..k).map(|i| 1.0 / (u[i] * u[i] + d[i]).sqrt()).collect();
    let sigma = |i: usize, j: usize| u[i] * u[j] + if i == j { d[i] } else { 0.0 };
    let mut h = vec![0.0; k * k];
    for i in 0..k {
        let mut diag = 0.0;
        for j in 0..k {
            h[i * k + j] = grad_rho[i * k + j] * s[i] * s[j];
            let rho_ij = sigma(i, j) * s[i] * s[j];
            diag += (grad_rho[i * k + j] + grad_rho[j * k + i]) * rho_ij;
        }
        h[i * k + i] -= 0.5 * s[i] * s[i] * diag;
    }
    let gu = (0..k)
        .map(|a| (0..k).map(|j| (h[a * k + j] + h[j * k + a]) * u[j]).sum())
        .collect();
    let gd = (0..k).map(|a| h[a * k + a]).collect();
    (gu, gd)
}

/// Gaussian copula log-density at normal scores `z` together with its
/// gradients with respect to `z` and to the (full) correlation matrix.
#[derive(Clone, Debug)]
pub struct CopulaTerm {
    pub log_c: f64,
    pub grad_z: Vec<f64>,
    pub grad_rho: Vec<f64>,
}

pub fn gauss_copula_term(z: &[f64], rho: &[f64]) -> Result<CopulaTerm> {
    let k = z.len();
    if rho.len() != k * k {
        return Err(Error::shape(format!("{k}x{k} correlation"), format!("{} entries", rho.len())));
    }
    let l = DMatrix::from_row_slice(k, k, &cholesky(rho)?);
    let logdet: f64 = 2.0 * (0..k).map(|i| l[(i, i)].ln()).sum::<f64>();
    let chol = nalgebra::Cholesky::pack_dirty(l);
    let zv = DVector::from_column_slice(z);
    let w = chol.solve(&zv);
    let inv = chol.inverse();
    let quad = zv.dot(&w) - zv.dot(&zv);
    let log_c = -0.5 * logdet - 0.5 * quad;
    let grad_z = (0..k).map(|i| z[i] - w[i]).collect();
    let mut grad_rho = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            grad_rho[i * k + j] = -0.5 * inv[(i, j)] + 0.5 * w[i] * w[j];
        }
    }
    Ok(CopulaTerm {
        log_c,
        grad_z,
        grad_rho,
    })
}

pub fn gauss_copula_logdensity(z: &[f64], rho: &[f64]) -> Result<f64> {
    Ok(gauss_copula_term(z, rho)?.log_c)
}

/// Pearson correlation of the columns of a row-major `n × k` matrix.
pub fn pearson(data: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = data.len() / k.max(1);
    if n < 2 {
        return Err(Error::EmptyInput);
    }
    let mean: Vec<f64> = (0..k).map(|j| (0..n).map(|r| data[r * k + j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; k * k];
    for r in 0..n {
        let row = &data[r * k..(r + 1) * k];
        for i in 0..k {
            let di = row[i] - mean[i];
            for j in i..k {
                cov[i * k + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for (column, i) in (0..k).enumerate() {
        if !(cov[i * k + i] > 0.0) {
            return Err(Error::DegenerateColumn { column });
        }
    }
    let mut rho = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let v = if i == j { 1.0 } else { cov[i * k + j] / (cov[i * k + i] * cov[j * k + j]).sqrt() };
            rho[i * k + j] = v;
            rho[j * k + i] = v;
        }
    }
    Ok(rho)
}

pub fn min_eigenvalue(sym: &[f64]) -> f64 {
    let k = (sym.len() as f64).sqrt() as usize;
    SymmetricEigen::new(DMatrix::from_row_slice(k, k, sym))
        .eigenvalues
        .min()
}

/// Floors eigenvalues at `floor` and rescales back to unit diagonal.
pub fn floor_to_correlation(sym: &[f64], floor: f64) -> Vec<f64> {
    let k = (sym.len() as f64).sqrt() as usize;
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(k, k, sym));
    if eig.eigenvalues.min() >= floor {
        return sym.to_vec();
    }
    let lam = eig.eigenvalues.map(|v| v.max(floor));
    let m = &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose();
    let mut out = row_major(&m);
    let s: Vec<f64> = (0..k).map(|i| 1.0 / out[i * k + i].sqrt()).collect();
    for i in 0..k {
        for j in 0..k {
            out[i * k + j] = if i == j { 1.0 } else { out[i * k + j] * s[i] * s[j] };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bvn_matches_quadrature() {
        let cases = [
            (0.0, 0.0, 0.5, 1.0 / 3.0),
            (-1.2, 0.7, 0.8, 0.11497359381538172),
            (1.5, -0.3, -0.6, 0.32528180311981075),
            (-2.5, -2.5, 0.95, 0.0040465610037688378),
            (0.3, 0.2, -0.99, 0.19717399732867634),
        ];
        for (a, b, r, want) in cases {
            let got = bvn_cdf(a, b, r);
            assert!((got - want).abs() < 1e-10, "{a} {b} {r}: {got} vs {want}");
        }
    }

    #[test]
    fn trivariate_cdf_matches_quadrature() {
        let rho = [1.0, 0.8, 0.1, 0.8, 1.0, -0.5, 0.1, -0.5, 1.0];
        let got = mvn_cdf(&[0.5, -0.2, 1.0], &rho).unwrap();
        assert!((got - 0.303580473666796).abs() < 2e-4, "{got}");
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let got = mvn_cdf(&[0.1, 0.2, 0.3], &eye).unwrap();
        let want = norm_cdf(0.1) * norm_cdf(0.2) * norm_cdf(0.3);
        assert!((got - want).abs() < 1e-4);
    }

    #[test]
    fn lowrank_examples() {
        assert_eq!(corr_from_lowrank(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), vec![1.0, 0.0, 0.0, 1.0]);
        let r = corr_from_lowrank(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((r[1] - 0.5).abs() < 1e-15 && (r[2] - 0.5).abs() < 1e-15);
        assert_eq!(corr_from_lowrank(&[2.0, 0.0], &[1.0, 1.0]).unwrap(), vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            corr_from_lowrank(&[1.0, 1.0], &[1.0, 0.0]),
            Err(Error::NonPositiveD { index: 1, .. })
        ));
    }

    #[test]
    fn copula_closed_forms() {
        let eye = [1.0, 0.0, 0.0, 1.0];
        assert!(gauss_copula_logdensity(&[1.3, -0.4], &eye).unwrap().abs() < 1e-14);
        let v = gauss_copula_logdensity(&[0.0, 0.0], &[1.0, 0.5, 0.5, 1.0]).unwrap();
        assert!((v - 0.14384103622589046).abs() < 1e-12);
        assert!(matches!(
            gauss_copula_logdensity(&[0.0, 0.0], &[1.0, 1.5, 1.5, 1.0]),
            Err(Error::SingularCorrelation)
        ));
    }

    #[test]
    fn lowrank_gradient_matches_differences() {
        let z = [0.7, -1.1, 0.4];
        let u = [0.9, -0.3, 1.4];
        let d = [0.8, 1.7, 0.5];
        let f = |u: &[f64], d: &[f64]| gauss_copula_logdensity(&z, &corr_from_lowrank(u, d).unwrap()).unwrap();
        let term = gauss_copula_term(&z, &corr_from_lowrank(&u, &d).unwrap()).unwrap();
        let (gu, gd) = lowrank_backward(&u, &d, &term.grad_rho);
        let h = 1e-6;
        for i in 0..3 {
            let (mut up, mut dn) = (u, u);
            up[i] += h;
            dn[i] -= h;
            assert!((gu[i] - (f(&up, &d) - f(&dn, &d)) / (2.0 * h)).abs() < 1e-7);
            let (mut up, mut dn) = (d, d);
            up[i] += h;
            dn[i] -= h;
            assert!((gd[i] - (f(&u, &up) - f(&u, &dn)) / (2.0 * h)).abs() < 1e-7);
        }
        let rho = corr_from_lowrank(&u, &d).unwrap();
        for i in 0..3 {
            let (mut up, mut dn) = (z, z);
            up[i] += h;
            dn[i] -= h;
            let fd = (gauss_copula_logdensity(&up, &rho).unwrap() - gauss_copula_logdensity(&dn, &rho).unwrap()) / (2.0 * h);
            assert!((term.grad_z[i] - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn duplicated_column_is_fully_correlated() {
        let data: Vec<f64> = (0..20).flat_map(|i| [i as f64, i as f64]).collect();
        let rho = pearson(&data, 2).unwrap();
        assert!((rho[1] - 1.0).abs() < 1e-12);
        let floored = floor_to_correlation(&rho, 1e-6);
        assert!(min_eigenvalue(&floored) > 0.0);
        assert_eq!(floored[0], 1.0);
        assert!(matches!(pearson(&[1.0, 2.0, 1.0, 3.0], 2), Err(Error::DegenerateColumn { column: 0 })));
    }
}
