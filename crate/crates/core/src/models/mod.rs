//! Estimator families and a common interface over them.

mod baseline;
mod copula;
mod made;
mod persist;
mod pumonde;
mod univariate;

pub use baseline::DiagonalGaussian;
pub use copula::{CopulaMonde, CorrSource};
pub use made::MondeMade;
pub use persist::{from_bytes, load_model, load_model_as, save_model, to_bytes, FORMAT_VERSION};
pub use pumonde::Pumonde;
pub use univariate::UnivariateMonde;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Matrix, Standardization};
use crate::error::{Error, Result};
use crate::graph::ParamStore;

/// Rows evaluated per tape; bounds peak memory on large splits.
pub const CHUNK_ROWS: usize = 1024;

/// Per-row values plus the number of log evaluations that hit the density floor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Eval {
    pub values: Vec<f64>,
    pub clamped: usize,
}

impl Eval {
    /// Whether any density fell below the floor before the log.
    pub fn degenerate(&self) -> bool {
        self.clamped > 0
    }

    fn extend(&mut self, other: Eval) {
        self.values.extend(other.values);
        self.clamped += other.clamped;
    }
}

pub(crate) fn column(y: &[f64], k: usize, width: usize, rows: usize) -> Vec<f64> {
    (0..rows).map(|r| y[r * width + k]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Umonde,
    MondeMade,
    CopulaConst,
    CopulaParam,
    Pumonde,
    DiagonalGaussian,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Umonde,
        Family::MondeMade,
        Family::CopulaConst,
        Family::CopulaParam,
        Family::Pumonde,
        Family::DiagonalGaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Umonde => "umonde",
            Family::MondeMade => "monde-made",
            Family::CopulaConst => "copula-const",
            Family::CopulaParam => "copula-param",
            Family::Pumonde => "pumonde",
            Family::DiagonalGaussian => "diagonal-gaussian",
        }
    }

    pub fn parse(name: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == name)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn w64x2() -> Vec<usize> {
    vec![64, 64]
}
fn w32x2() -> Vec<usize> {
    vec![32, 32]
}
fn made_m() -> usize {
    8
}
fn two() -> usize {
    2
}
fn thirty_two() -> usize {
    32
}

/// Architecture description for each family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Umonde {
        #[serde(default = "w64x2")]
        x_hidden: Vec<usize>,
        #[serde(default = "w64x2")]
        mono_hidden: Vec<usize>,
    },
    MondeMade {
        /// Hidden vectors per response dimension.
        #[serde(default = "made_m")]
        m: usize,
        #[serde(default = "two")]
        hidden_layers: usize,
    },
    CopulaConst {
        #[serde(default = "thirty_two")]
        width: usize,
        #[serde(default = "two")]
        x_layers: usize,
        #[serde(default = "two")]
        y_layers: usize,
    },
    CopulaParam {
        #[serde(default = "thirty_two")]
        width: usize,
        #[serde(default = "two")]
        x_layers: usize,
        #[serde(default = "two")]
        y_layers: usize,
        #[serde(default = "w32x2")]
        corr_hidden: Vec<usize>,
    },
    Pumonde {
        #[serde(default = "w32x2")]
        hx_hidden: Vec<usize>,
        #[serde(default = "w32x2")]
        hxy_hidden: Vec<usize>,
        #[serde(default = "w32x2")]
        t_hidden: Vec<usize>,
        /// Spread of the first covariate layer's initial weights; Glorot when absent.
        #[serde(default)]
        x_init_scale: Option<f64>,
    },
    DiagonalGaussian,
}

impl ModelSpec {
    /// Default architecture for a family.
    pub fn default_for(family: Family) -> ModelSpec {
        match family {
            Family::Umonde => ModelSpec::Umonde {
                x_hidden: w64x2(),
                mono_hidden: w64x2(),
            },
            Family::MondeMade => ModelSpec::MondeMade {
                m: made_m(),
                hidden_layers: two(),
            },
            Family::CopulaConst => ModelSpec::CopulaConst {
                width: 32,
                x_layers: 2,
                y_layers: 2,
            },
            Family::CopulaParam => ModelSpec::CopulaParam {
                width: 32,
                x_layers: 2,
                y_layers: 2,
                corr_hidden: w32x2(),
            },
            Family::Pumonde => ModelSpec::Pumonde {
                hx_hidden: w32x2(),
                hxy_hidden: w32x2(),
                t_hidden: w32x2(),
                x_init_scale: None,
            },
            Family::DiagonalGaussian => ModelSpec::DiagonalGaussian,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Umonde { .. } => Family::Umonde,
            ModelSpec::MondeMade { .. } => Family::MondeMade,
            ModelSpec::CopulaConst { .. } => Family::CopulaConst,
            ModelSpec::CopulaParam { .. } => Family::CopulaParam,
            ModelSpec::Pumonde { .. } => Family::Pumonde,
            ModelSpec::DiagonalGaussian => Family::DiagonalGaussian,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Net {
    Umonde(UnivariateMonde),
    MondeMade(MondeMade),
    CopulaConst(CopulaMonde),
    CopulaParam(CopulaMonde),
    Pumonde(Pumonde),
    DiagonalGaussian(DiagonalGaussian),
}

/// Standardisation statistics of the data a model was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataStats {
    pub x: Standardization,
    pub y: Standardization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: ParamStore,
    pub net: Net,
    #[serde(default)]
    pub stats: Option<DataStats>,
}

fn check_rows(x: &Matrix, y: &Matrix, d: usize, k: usize) -> Result<()> {
    if x.cols != d || y.cols != k || x.rows != y.rows {
        return Err(Error::shape(
            format!("{d} covariate and {k} response columns with equal rows"),
            format!("{}x{} and {}x{}", x.rows, x.cols, y.rows, y.cols),
        ));
    }
    Ok(())
}

impl Model {
    /// Builds a family for `d` covariates and `k` responses with seeded initial weights.
    pub fn new(spec: &ModelSpec, d: usize, k: usize, seed: u64) -> Result<Model> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = match spec {
            ModelSpec::Umonde { x_hidden, mono_hidden } => {
                if k != 1 {
                    return Err(Error::InvalidDim(format!("umonde models one response, got K={k}")));
                }
                let net = UnivariateMonde::new(&mut params, d, x_hidden, mono_hidden)?;
                net.init(&mut params, &mut rng);
                Net::Umonde(net)
            }
            ModelSpec::MondeMade { m, hidden_layers } => {
                let net = MondeMade::new(&mut params, d, k, *m, *hidden_layers)?;
                net.init(&mut params, &mut rng);
                Net::MondeMade(net)
            }
            ModelSpec::CopulaConst { width, x_layers, y_layers } => {
                let net = CopulaMonde::new(&mut params, d, k, *width, *x_layers, *y_layers, None)?;
                net.init(&mut params, &mut rng);
                Net::CopulaConst(net)
            }
            ModelSpec::CopulaParam {
                width,
                x_layers,
                y_layers,
                corr_hidden,
            } => {
                let net = CopulaMonde::new(&mut params, d, k, *width, *x_layers, *y_layers, Some(corr_hidden))?;
                net.init(&mut params, &mut rng);
                Net::CopulaParam(net)
            }
            ModelSpec::Pumonde {
                hx_hidden,
                hxy_hidden,
                t_hidden,
                x_init_scale,
            } => {
                let net = Pumonde::new(&mut params, d, k, hx_hidden, hxy_hidden, t_hidden)?;
                net.init(&mut params, &mut rng, *x_init_scale);
                Net::Pumonde(net)
            }
            ModelSpec::DiagonalGaussian => Net::DiagonalGaussian(DiagonalGaussian::standard(k)),
        };
        Ok(Model {
            params,
            net,
            stats: None,
        })
    }

    pub fn family(&self) -> Family {
        match &self.net {
            Net::Umonde(_) => Family::Umonde,
            Net::MondeMade(_) => Family::MondeMade,
            Net::CopulaConst(_) => Family::CopulaConst,
            Net::CopulaParam(_) => Family::CopulaParam,
            Net::Pumonde(_) => Family::Pumonde,
            Net::DiagonalGaussian(_) => Family::DiagonalGaussian,
        }
    }

    pub fn d(&self) -> usize {
        match &self.net {
            Net::Umonde(n) => n.d,
            Net::MondeMade(n) => n.d,
            Net::CopulaConst(n) | Net::CopulaParam(n) => n.d,
            Net::Pumonde(n) => n.d,
            Net::DiagonalGaussian(_) => 0,
        }
    }

    pub fn k(&self) -> usize {
        match &self.net {
            Net::Umonde(_) => 1,
            Net::MondeMade(n) => n.k,
            Net::CopulaConst(n) | Net::CopulaParam(n) => n.k,
            Net::Pumonde(n) => n.k,
            Net::DiagonalGaussian(n) => n.k,
        }
    }

    /// Whether the model has parameters fitted by gradient steps.
    pub fn is_trainable(&self) -> bool {
        !matches!(self.net, Net::DiagonalGaussian(_))
    }

    fn chunked<F>(&self, x: &Matrix, y: &Matrix, mut f: F) -> Result<Eval>
    where
        F: FnMut(&[f64], &[f64], usize) -> Result<Eval>,
    {
        let (d, k) = (self.net_d_for(x), self.k());
        check_rows(x, y, d, k)?;
        let mut out = Eval::default();
        let mut start = 0;
        while start < y.rows {
            let rows = CHUNK_ROWS.min(y.rows - start);
            let xs = &x.data[start * d..(start + rows) * d];
            let ys = &y.data[start * k..(start + rows) * k];
            out.extend(f(xs, ys, rows)?);
            start += rows;
        }
        Ok(out)
    }

    /// The baseline ignores covariates, so accept whatever width it is given.
    fn net_d_for(&self, x: &Matrix) -> usize {
        match self.net {
            Net::DiagonalGaussian(_) => x.cols,
            _ => self.d(),
        }
    }

    fn objective_chunk(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize, grad: Option<&mut [f64]>) -> Result<Eval> {
        match &self.net {
            Net::Umonde(n) => n.logpdf(p, x, y, rows, grad),
            Net::MondeMade(n) => n.logpdf(p, x, y, rows, grad),
            Net::CopulaConst(n) | Net::CopulaParam(n) => n.logpdf(p, x, y, rows, grad),
            Net::Pumonde(n) => n.composite_loglik(p, x, y, rows, grad),
            Net::DiagonalGaussian(n) => Ok(Eval {
                values: n.logpdf(y, rows),
                clamped: 0,
            }),
        }
    }

    /// Per-row training objective: the log-likelihood, or for PUMONDE the
    /// composite pairwise log-likelihood.
    pub fn objective(&self, x: &Matrix, y: &Matrix) -> Result<Eval> {
        self.objective_with(&self.params, x, y)
    }

    pub fn objective_with(&self, params: &ParamStore, x: &Matrix, y: &Matrix) -> Result<Eval> {
        self.chunked(x, y, |xs, ys, rows| self.objective_chunk(params, xs, ys, rows, None))
    }

    /// Objective per row and the gradient of its sum over rows.
    pub fn objective_grad(&self, x: &Matrix, y: &Matrix) -> Result<(Eval, Vec<f64>)> {
        self.objective_grad_with(&self.params, x, y)
    }

    pub fn objective_grad_with(&self, params: &ParamStore, x: &Matrix, y: &Matrix) -> Result<(Eval, Vec<f64>)> {
        let mut grad = vec![0.0; params.len()];
        let eval = self.chunked(x, y, |xs, ys, rows| self.objective_chunk(params, xs, ys, rows, Some(&mut grad)))?;
        Ok((eval, grad))
    }

    /// Full joint log-density per row on the standardised scale.
    pub fn logpdf(&self, x: &Matrix, y: &Matrix) -> Result<Eval> {
        let p = &self.params;
        self.chunked(x, y, |xs, ys, rows| match &self.net {
            Net::Pumonde(n) => n.full_logpdf(p, xs, ys, rows, None),
            _ => self.objective_chunk(p, xs, ys, rows, None),
        })
    }

    /// Joint CDF `F(y | x)` per row.
    pub fn cdf(&self, x: &Matrix, y: &Matrix) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..self.k()).collect();
        self.marginal_cdf(x, y, &all)
    }

    /// `P(Y_S ≤ y_S | x)` per row; columns of `y` outside `subset` are ignored.
    pub fn marginal_cdf(&self, x: &Matrix, y: &Matrix, subset: &[usize]) -> Result<Vec<f64>> {
        if subset.is_empty() {
            return Err(Error::EmptySubset);
        }
        if let Some(&bad) = subset.iter().find(|&&i| i >= self.k()) {
            return Err(Error::ColumnOutOfRange {
                index: bad,
                columns: self.k(),
            });
        }
        let p = &self.params;
        let eval = self.chunked(x, y, |xs, ys, rows| {
            let values = match &self.net {
                Net::Umonde(n) => n.cdf(p, xs, ys, rows)?,
                Net::Pumonde(n) => n.marginal_cdf(p, xs, ys, rows, subset)?,
                Net::CopulaConst(n) | Net::CopulaParam(n) => n.subset_cdf(p, xs, ys, rows, subset)?,
                Net::DiagonalGaussian(n) => (0..rows)
                    .map(|r| subset.iter().map(|&j| n.cdf(j, ys[r * n.k + j])).product())
                    .collect(),
                Net::MondeMade(n) => {
                    if subset != [0] {
                        return Err(Error::InvalidArgument(
                            "monde-made exposes only the first marginal and the conditional CDFs".into(),
                        ));
                    }
                    let c = n.cdfs(p, xs, ys, rows)?;
                    (0..rows).map(|r| c[r * n.k]).collect()
                }
            };
            Ok(Eval { values, clamped: 0 })
        })?;
        Ok(eval.values)
    }

    /// Bivariate marginal log-density of `(y_i, y_j)` per row.
    pub fn pair_logpdf(&self, x: &Matrix, y: &Matrix, i: usize, j: usize) -> Result<Vec<f64>> {
        let k = self.k();
        if i >= k || j >= k {
            return Err(Error::ColumnOutOfRange { index: i.max(j), columns: k });
        }
        if i == j {
            return Err(Error::InvalidArgument(format!("pair needs distinct dimensions, got ({i}, {j})")));
        }
        let p = &self.params;
        let eval = self.chunked(x, y, |xs, ys, rows| match &self.net {
            Net::Pumonde(n) => n.pair_logpdf(p, xs, ys, rows, i, j),
            Net::CopulaConst(n) | Net::CopulaParam(n) => Ok(Eval {
                values: n.pair_logpdf(p, xs, ys, rows, i, j)?,
                clamped: 0,
            }),
            Net::DiagonalGaussian(n) => Ok(Eval {
                values: (0..rows)
                    .map(|r| n.column_logpdf(i, ys[r * k + i]) + n.column_logpdf(j, ys[r * k + j]))
                    .collect(),
                clamped: 0,
            }),
            Net::MondeMade(n) if (i.min(j), i.max(j)) == (0, 1) => {
                let jac = n.jacobian(p, xs, ys, rows)?;
                let floor = crate::graph::LOG_FLOOR;
                Ok(Eval {
                    values: (0..rows)
                        .map(|r| jac[r * k * k].max(floor).ln() + jac[(r * k + 1) * k + 1].max(floor).ln())
                        .collect(),
                    clamped: 0,
                })
            }
            _ => Err(Error::InvalidArgument(format!(
                "{} does not expose the bivariate marginal ({i}, {j})",
                self.family()
            ))),
        })?;
        Ok(eval.values)
    }

    /// Hook run before every training epoch (and once after training) on the
    /// training rows: refits the constant copula correlation and the baseline.
    pub fn refit_closed_form(&mut self, x: &Matrix, y: &Matrix) -> Result<()> {
        let params = &self.params;
        match &mut self.net {
            Net::CopulaConst(n) => {
                check_rows(x, y, n.d, n.k)?;
                let rho = n.estimate_constant_rho(params, &x.data, &y.data, y.rows)?;
                n.set_constant_rho(rho)
            }
            Net::DiagonalGaussian(n) => n.fit(&y.data, y.rows),
            _ => Ok(()),
        }
    }
}
