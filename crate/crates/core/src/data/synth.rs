use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, StudentT, Uniform};
use serde::{Deserialize, Serialize};

use super::{Matrix, RawData};
use crate::error::{Error, Result};

/// Response scales of the mixture process.
pub const MIXTURE_SCALE: [f64; 3] = [0.4, 0.5, 0.8];
/// Response correlation of the mixture process, row-major.
pub const MIXTURE_CORR: [f64; 9] = [1.0, 0.8, 0.1, 0.8, 1.0, -0.5, 0.1, -0.5, 1.0];

/// Covariate means of the two mixture components; component 0 is Gaussian.
pub const MIXTURE_X_MEAN: [[f64; 2]; 2] = [[-2.0, -3.0], [2.0, 5.0]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    SinNormal,
    SinT,
    InvSinNormal,
    InvSinT,
    MvNonlinear,
    MixtureProcess,
    /// Unconditional standard bivariate normal with correlation `rho`.
    BivariateGaussian { rho: f64 },
    /// Unconditional bivariate Student t with `nu` degrees of freedom.
    BivariateT { nu: f64, rho: f64 },
    /// Unconditional `dim`-variate chain with non-linear, skewed and
    /// bimodal dependencies between consecutive coordinates.
    SineChain { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub generator: Generator,
    pub n: usize,
    pub seed: u64,
}

impl Generator {
    pub fn name(&self) -> String {
        match self {
            Generator::SinNormal => "sin-normal".into(),
            Generator::SinT => "sin-t".into(),
            Generator::InvSinNormal => "inv-sin-normal".into(),
            Generator::InvSinT => "inv-sin-t".into(),
            Generator::MvNonlinear => "mv-nonlinear".into(),
            Generator::MixtureProcess => "mixture-process".into(),
            Generator::BivariateGaussian { rho } => format!("bivariate-gaussian(rho={rho})"),
            Generator::BivariateT { nu, rho } => format!("bivariate-t(nu={nu}, rho={rho})"),
            Generator::SineChain { dim } => format!("sine-chain(dim={dim})"),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sin_mean(x: f64) -> f64 {
    (4.0 * x).sin() + 0.5 * x
}

pub fn gen_synthetic(spec: &GeneratorSpec) -> Result<RawData> {
    let n = spec.n;
    if n == 0 {
        return Err(Error::InvalidArgument("generator needs n ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let provenance = format!("{} n={} seed={}", spec.generator.name(), n, spec.seed);
    let mut groups = None;
    let (x, y) = match &spec.generator {
        Generator::SinNormal | Generator::SinT | Generator::InvSinNormal | Generator::InvSinT => {
            let heavy = matches!(spec.generator, Generator::SinT | Generator::InvSinT);
            let unif = Uniform::new(-1.5, 1.5).expect("valid range");
            let t3 = StudentT::new(3.0).expect("valid dof");
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let x: f64 = unif.sample(&mut rng);
                let noise = if heavy { t3.sample(&mut rng) } else { normal(&mut rng) };
                xs.push(x);
                ys.push(sin_mean(x) + 0.2 * noise);
            }
            if matches!(spec.generator, Generator::InvSinNormal | Generator::InvSinT) {
                std::mem::swap(&mut xs, &mut ys);
            }
            (Matrix::new(n, 1, xs)?, Matrix::new(n, 1, ys)?)
        }
        Generator::MvNonlinear => {
            let unif = Uniform::new(-10.0, 10.0).expect("valid range");
            let (s1, s2, r) = (4.0, 3.0, 0.7f64);
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let x: f64 = unif.sample(&mut rng);
                let (e1, e2) = (normal(&mut rng), normal(&mut rng));
                xs.push(x);
                ys.push(0.1 * x.abs().sqrt() + x - 5.0 + s1 * e1);
                ys.push(10.0 * (3.0 * x).sin() + s2 * (r * e1 + (1.0 - r * r).sqrt() * e2));
            }
            (Matrix::new(n, 1, xs)?, Matrix::new(n, 2, ys)?)
        }
        Generator::MixtureProcess => {
            let chol = crate::stats::cholesky(&MIXTURE_CORR)?;
            let chi = ChiSquared::new(2.0).expect("valid dof");
            let mut xs = Vec::with_capacity(2 * n);
            let mut ys = Vec::with_capacity(3 * n);
            let mut gs = Vec::with_capacity(n);
            for _ in 0..n {
                let c = usize::from(rng.random_bool(0.5));
                for mu in MIXTURE_X_MEAN[c] {
                    xs.push(mu + normal(&mut rng));
                }
                let z = [normal(&mut rng), normal(&mut rng), normal(&mut rng)];
                let scale = if c == 1 {
                    let w: f64 = chi.sample(&mut rng);
                    (2.0 / w).sqrt()
                } else {
                    1.0
                };
                for i in 0..3 {
                    let corr: f64 = (0..=i).map(|j| chol[i * 3 + j] * z[j]).sum();
                    ys.push(MIXTURE_SCALE[i] * corr * scale);
                }
                gs.push(c as u8);
            }
            groups = Some(gs);
            (Matrix::new(n, 2, xs)?, Matrix::new(n, 3, ys)?)
        }
        Generator::BivariateGaussian { rho } | Generator::BivariateT { rho, .. } => {
            if !(rho.abs() < 1.0) {
                return Err(Error::InvalidArgument(format!("|rho| must be below 1, got {rho}")));
            }
            let chi = match spec.generator {
                Generator::BivariateT { nu, .. } => Some((
                    nu,
                    ChiSquared::new(nu)
                        .map_err(|_| Error::InvalidArgument(format!("degrees of freedom must be positive, got {nu}")))?,
                )),
                _ => None,
            };
            let mut ys = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let (e1, e2) = (normal(&mut rng), normal(&mut rng));
                let scale = match &chi {
                    Some((nu, c)) => (nu / c.sample(&mut rng)).sqrt(),
                    None => 1.0,
                };
                ys.push(scale * e1);
                ys.push(scale * (rho * e1 + (1.0 - rho * rho).sqrt() * e2));
            }
            (Matrix::zeros(n, 0), Matrix::new(n, 2, ys)?)
        }
        Generator::SineChain { dim } => {
            let dim = *dim;
            if dim == 0 {
                return Err(Error::InvalidArgument("sine-chain needs dim ≥ 1".into()));
            }
            let mut ys = Vec::with_capacity(dim * n);
            for _ in 0..n {
                let mut prev = if rng.random_bool(0.5) { -1.5 } else { 1.5 } + 0.5 * normal(&mut rng);
                ys.push(prev);
                for k in 1..dim {
                    let v = match k % 3 {
                        1 => 2.0 * (1.5 * prev).sin() + 0.3 * normal(&mut rng),
                        2 => 0.5 * prev * prev - 1.0 + 0.4 * normal(&mut rng).exp().ln_1p(),
                        _ => prev.tanh() * 2.0 + 0.25 * normal(&mut rng),
                    };
                    ys.push(v);
                    prev = v;
                }
            }
            (Matrix::zeros(n, 0), Matrix::new(n, dim, ys)?)
        }
    };
    let mut raw = RawData::new(x, y, provenance)?;
    raw.groups = groups;
    Ok(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(generator: Generator, n: usize) -> GeneratorSpec {
        GeneratorSpec { generator, n, seed: 7 }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = gen_synthetic(&spec(Generator::SinT, 100)).unwrap();
        let b = gen_synthetic(&spec(Generator::SinT, 100)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sin_normal_centre_mean() {
        let raw = gen_synthetic(&spec(Generator::SinNormal, 40_000)).unwrap();
        let near: Vec<f64> = (0..raw.len()).filter(|&i| raw.x.get(i, 0).abs() < 0.05).map(|i| raw.y.get(i, 0)).collect();
        let m = near.len() as f64;
        let mean = near.iter().sum::<f64>() / m;
        // local slope of the mean adds a little spread on top of the noise sd
        assert!(mean.abs() < 3.0 * 0.2 / m.sqrt() + 0.01, "{mean}");
    }

    #[test]
    fn inverted_variant_swaps_roles() {
        let a = gen_synthetic(&spec(Generator::SinNormal, 50)).unwrap();
        let b = gen_synthetic(&spec(Generator::InvSinNormal, 50)).unwrap();
        assert_eq!(a.x, b.y);
        assert_eq!(a.y, b.x);
    }

    #[test]
    fn mixture_gaussian_component_correlation() {
        let raw = gen_synthetic(&spec(Generator::MixtureProcess, 100_000)).unwrap();
        let groups = raw.groups.as_ref().unwrap();
        let rows: Vec<usize> = (0..raw.len()).filter(|&i| groups[i] == 0).collect();
        let y = raw.y.gather_rows(&rows);
        let rho = crate::stats::pearson(&y.data, 3).unwrap();
        assert!((0.75..=0.85).contains(&rho[1]), "{}", rho[1]);
        let sd0 = (y.column(0).iter().map(|v| v * v).sum::<f64>() / y.rows as f64).sqrt();
        assert!((sd0 - 0.4).abs() < 4.0 * 0.4 / (2.0 * y.rows as f64).sqrt());
        assert!((MIXTURE_SCALE[0] * MIXTURE_CORR[1] * MIXTURE_SCALE[1] - 0.16).abs() < 1e-15);
    }

    #[test]
    fn mv_nonlinear_residual_moments() {
        let raw = gen_synthetic(&spec(Generator::MvNonlinear, 40_000)).unwrap();
        let n = raw.len() as f64;
        let mut r = vec![0.0; 2 * raw.len()];
        for i in 0..raw.len() {
            let x = raw.x.get(i, 0);
            r[2 * i] = raw.y.get(i, 0) - (0.1 * x.abs().sqrt() + x - 5.0);
            r[2 * i + 1] = raw.y.get(i, 1) - 10.0 * (3.0 * x).sin();
        }
        let sd = |j: usize| (r.iter().skip(j).step_by(2).map(|v| v * v).sum::<f64>() / n).sqrt();
        assert!((sd(0) - 4.0).abs() < 4.0 * 4.0 / (2.0 * n).sqrt());
        assert!((sd(1) - 3.0).abs() < 4.0 * 3.0 / (2.0 * n).sqrt());
        let rho = crate::stats::pearson(&r, 2).unwrap();
        assert!((rho[1] - 0.7).abs() < 4.0 * (1.0 - 0.49) / n.sqrt());
    }
}
