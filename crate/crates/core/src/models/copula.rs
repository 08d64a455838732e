use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{column, Eval};
use crate::error::{Error, Result};
use crate::graph::{Activation, Algebra, NodeId, ParamStore, Tape};
use crate::layers::ConstrainedLinear;
use crate::stats::{
    corr_from_lowrank, floor_to_correlation, gauss_copula_term, lowrank_backward, mvn_cdf, norm_pdf, norm_ppf,
    pearson, CDF_CLAMP,
};

/// Where the copula correlation comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum CorrSource {
    /// One matrix for every covariate value, re-estimated from the marginals.
    Constant { rho: Vec<f64> },
    /// `ρ(x)` from a low-rank-plus-diagonal head on a covariate network.
    Param {
        tower: Vec<ConstrainedLinear>,
        u_head: ConstrainedLinear,
        d_head: ConstrainedLinear,
    },
}

/// One monotone marginal per response dimension coupled by a Gaussian copula.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopulaMonde {
    pub d: usize,
    pub k: usize,
    /// Covariate partition of each marginal block.
    pub x_parts: Vec<Vec<ConstrainedLinear>>,
    /// Monotone partition of each marginal block; every layer also reads the
    /// covariate partition through free weights.
    pub y_parts: Vec<Vec<ConstrainedLinear>>,
    pub corr: CorrSource,
}

struct Marginals {
    /// `rows × K`, two channels: the CDFs and their densities.
    cdf: NodeId,
    u: Option<NodeId>,
    d: Option<NodeId>,
}

fn identity(k: usize) -> Vec<f64> {
    (0..k * k).map(|i| f64::from(u8::from(i % (k + 1) == 0))).collect()
}

fn clamp_cdf(f: f64) -> (f64, bool) {
    if f < CDF_CLAMP {
        (CDF_CLAMP, true)
    } else if f > 1.0 - CDF_CLAMP {
        (1.0 - CDF_CLAMP, true)
    } else {
        (f, false)
    }
}

fn sub_corr(rho: &[f64], k: usize, idx: &[usize]) -> Vec<f64> {
    idx.iter()
        .flat_map(|&i| idx.iter().map(move |&j| rho[i * k + j]))
        .collect()
}

impl CopulaMonde {
    pub fn new(
        store: &mut ParamStore,
        d: usize,
        k: usize,
        width: usize,
        x_layers: usize,
        y_layers: usize,
        corr_hidden: Option<&[usize]>,
    ) -> Result<Self> {
        if k == 0 || width == 0 {
            return Err(Error::InvalidDim(format!("copula model needs K ≥ 1 and width ≥ 1, got K={k}")));
        }
        let mut x_parts = Vec::with_capacity(k);
        let mut y_parts = Vec::with_capacity(k);
        for b in 0..k {
            let mut xp = Vec::new();
            let mut w_in = d;
            if d > 0 {
                for i in 0..x_layers {
                    xp.push(ConstrainedLinear::new(store, &format!("c{b}.x{i}"), w_in, width, None, Activation::Tanh)?);
                    w_in = width;
                }
            }
            let side = if d > 0 { w_in } else { 0 };
            let mut yp = Vec::new();
            let mut prev = 1;
            for i in 0..y_layers {
                yp.push(ConstrainedLinear::monotone(store, &format!("c{b}.y{i}"), side, side + prev, width, Activation::Tanh)?);
                prev = width;
            }
            yp.push(ConstrainedLinear::monotone(store, &format!("c{b}.out"), side, side + prev, 1, Activation::Sigmoid)?);
            x_parts.push(xp);
            y_parts.push(yp);
        }
        let corr = match corr_hidden {
            None => CorrSource::Constant { rho: identity(k) },
            Some(hidden) => {
                if d == 0 {
                    return Err(Error::InvalidDim("covariate-dependent correlation needs D ≥ 1".into()));
                }
                let mut tower = Vec::new();
                let mut w_in = d;
                for (i, &w) in hidden.iter().enumerate() {
                    tower.push(ConstrainedLinear::new(store, &format!("corr{i}"), w_in, w, None, Activation::Tanh)?);
                    w_in = w;
                }
                let u_head = ConstrainedLinear::new(store, "corr.u", w_in, k, None, Activation::Identity)?;
                let d_head = ConstrainedLinear::new(store, "corr.d", w_in, k, None, Activation::SoftplusStable)?;
                CorrSource::Param { tower, u_head, d_head }
            }
        };
        Ok(Self { d, k, x_parts, y_parts, corr })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for l in self.x_parts.iter().chain(&self.y_parts).flatten() {
            l.init(store, rng);
        }
        if let CorrSource::Param { tower, u_head, d_head } = &self.corr {
            for l in tower.iter().chain([u_head, d_head]) {
                l.init(store, rng);
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.corr, CorrSource::Constant { .. })
    }

    /// Replaces the constant correlation matrix.
    pub fn set_constant_rho(&mut self, rho: Vec<f64>) -> Result<()> {
        match &mut self.corr {
            CorrSource::Constant { rho: r } if rho.len() == r.len() => {
                *r = rho;
                Ok(())
            }
            CorrSource::Constant { rho: r } => Err(Error::shape(format!("{} entries", r.len()), format!("{}", rho.len()))),
            CorrSource::Param { .. } => Err(Error::InvalidArgument("model uses a covariate-dependent correlation".into())),
        }
    }

    fn record_block(&self, tape: &mut Tape<'_>, b: usize, x: NodeId, yb: NodeId) -> Result<NodeId> {
        let mut side = x;
        for l in &self.x_parts[b] {
            side = l.record(tape, side)?;
        }
        let mut v = yb;
        for l in &self.y_parts[b] {
            let input = if self.d > 0 { tape.concat(&[side, v])? } else { v };
            v = l.record(tape, input)?;
        }
        Ok(v)
    }

    /// Marginal CDFs; with `tangents` the response is seeded along the
    /// all-ones direction so channel 1 of column `k` is `f_k`.
    fn record(&self, tape: &mut Tape<'_>, x: &[f64], y: &[f64], rows: usize, tangents: bool) -> Result<Marginals> {
        let k = self.k;
        let xn = tape.input(rows, self.d, x)?;
        let mut cols = Vec::with_capacity(k);
        for b in 0..k {
            let yc = column(y, b, k, rows);
            let yb = if tangents {
                tape.input_seeded(rows, 1, &yc, &[(0, &[1.0])])?
            } else {
                tape.input(rows, 1, &yc)?
            };
            cols.push(self.record_block(tape, b, xn, yb)?);
        }
        let cdf = if k == 1 { cols[0] } else { tape.concat(&cols)? };
        let (u, d) = match &self.corr {
            CorrSource::Constant { .. } => (None, None),
            CorrSource::Param { tower, u_head, d_head } => {
                let mut h = xn;
                for l in tower {
                    h = l.record(tape, h)?;
                }
                (Some(u_head.record(tape, h)?), Some(d_head.record(tape, h)?))
            }
        };
        Ok(Marginals { cdf, u, d })
    }

    fn row_rho(&self, tape: &Tape<'_>, m: &Marginals, r: usize) -> Result<Vec<f64>> {
        let k = self.k;
        match &self.corr {
            CorrSource::Constant { rho } => Ok(rho.clone()),
            CorrSource::Param { .. } => {
                let u = &tape.value(m.u.expect("param head"))[r * k..(r + 1) * k];
                let d = &tape.value(m.d.expect("param head"))[r * k..(r + 1) * k];
                corr_from_lowrank(u, d)
            }
        }
    }

    /// Correlation matrix for each row, row-major `rows × K × K`.
    pub fn correlations(&self, p: &ParamStore, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        let y = vec![0.0; rows * self.k];
        let mut tape = Tape::new(p, Algebra::scalar());
        let m = self.record(&mut tape, x, &y, rows, false)?;
        let mut out = Vec::with_capacity(rows * self.k * self.k);
        for r in 0..rows {
            out.extend(self.row_rho(&tape, &m, r)?);
        }
        Ok(out)
    }

    /// Marginal CDFs `F_k(y_k | x)`, row-major `rows × K`.
    pub fn marginal_cdfs(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new(p, Algebra::scalar());
        let m = self.record(&mut tape, x, y, rows, false)?;
        Ok(tape.value(m.cdf).to_vec())
    }

    /// Marginal log-densities `log f_k(y_k | x)`, row-major `rows × K`.
    pub fn marginal_logpdfs(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new(p, Algebra::first_order(1)?);
        let m = self.record(&mut tape, x, y, rows, true)?;
        let dens = tape.extract(m.cdf, 1)?;
        let logs = tape.unary(dens, Activation::LogClamped)?;
        Ok(tape.value(logs).to_vec())
    }

    /// Normal scores `z = Φ⁻¹(clamp F)`, row-major `rows × K`.
    pub fn normal_scores(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize) -> Result<Vec<f64>> {
        Ok(self
            .marginal_cdfs(p, x, y, rows)?
            .into_iter()
            .map(|f| norm_ppf(clamp_cdf(f).0))
            .collect())
    }

    /// Pearson correlation of the normal scores, floored to a proper correlation matrix.
    pub fn estimate_constant_rho(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize) -> Result<Vec<f64>> {
        let z = self.normal_scores(p, x, y, rows)?;
        let rho = pearson(&z, self.k)?;
        Ok(floor_to_correlation(&rho, 1e-6))
    }

    /// Joint log-density per row: `Σ log f_k + log c(z; ρ(x))`.
    pub fn logpdf(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize, grad: Option<&mut [f64]>) -> Result<Eval> {
        let k = self.k;
        let mut tape = Tape::new(p, Algebra::first_order(1)?);
        let m = self.record(&mut tape, x, y, rows, true)?;
        let dens = tape.extract(m.cdf, 1)?;
        let logs = tape.unary(dens, Activation::LogClamped)?;
        let marg = tape.sum_cols(logs)?;
        let mut values = tape.value(marg).to_vec();
        let clamped = tape.clamped_count();

        let want_grad = grad.is_some();
        let plane = rows * k;
        let mut cdf_seed = if want_grad { vec![0.0; 2 * plane] } else { Vec::new() };
        let mut u_seed = Vec::new();
        let mut d_seed = Vec::new();
        if want_grad && m.u.is_some() {
            u_seed = vec![0.0; plane];
            d_seed = vec![0.0; plane];
        }
        let f = tape.value(m.cdf).to_vec();
        let mut z = vec![0.0; k];
        let mut dz_df = vec![0.0; k];
        for r in 0..rows {
            for i in 0..k {
                let (c, hit) = clamp_cdf(f[r * k + i]);
                z[i] = norm_ppf(c);
                dz_df[i] = if hit { 0.0 } else { 1.0 / norm_pdf(z[i]) };
            }
            let rho = self.row_rho(&tape, &m, r)?;
            let term = gauss_copula_term(&z, &rho)?;
            values[r] += term.log_c;
            if want_grad {
                for i in 0..k {
                    cdf_seed[r * k + i] = term.grad_z[i] * dz_df[i];
                }
                if let (Some(un), Some(dn)) = (m.u, m.d) {
                    let u = &tape.value(un)[r * k..(r + 1) * k];
                    let d = &tape.value(dn)[r * k..(r + 1) * k];
                    let (gu, gd) = lowrank_backward(u, d, &term.grad_rho);
                    u_seed[r * k..(r + 1) * k].copy_from_slice(&gu);
                    d_seed[r * k..(r + 1) * k].copy_from_slice(&gd);
                }
            }
        }
        if let Some(g) = grad {
            let ones = vec![1.0; rows];
            let mut seeds: Vec<(NodeId, &[f64])> = vec![(marg, &ones), (m.cdf, &cdf_seed)];
            if let (Some(un), Some(dn)) = (m.u, m.d) {
                seeds.push((un, &u_seed));
                seeds.push((dn, &d_seed));
            }
            let dg = tape.backward(&seeds)?;
            g.iter_mut().zip(&dg).for_each(|(a, b)| *a += b);
        }
        Ok(Eval { values, clamped })
    }

    /// `P(Y_S ≤ y_S | x)` for the columns in `subset`.
    pub fn subset_cdf(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize, subset: &[usize]) -> Result<Vec<f64>> {
        let k = self.k;
        let f = self.marginal_cdfs(p, x, y, rows)?;
        let rho_all = self.correlations(p, x, rows)?;
        (0..rows)
            .map(|r| {
                let z: Vec<f64> = subset.iter().map(|&i| norm_ppf(clamp_cdf(f[r * k + i]).0)).collect();
                let rho = sub_corr(&rho_all[r * k * k..(r + 1) * k * k], k, subset);
                if subset.len() == 1 {
                    return Ok(f[r * k + subset[0]]);
                }
                mvn_cdf(&z, &rho)
            })
            .collect()
    }

    /// Bivariate marginal log-density of `(y_i, y_j)` per row.
    pub fn pair_logpdf(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize, i: usize, j: usize) -> Result<Vec<f64>> {
        let k = self.k;
        let f = self.marginal_cdfs(p, x, y, rows)?;
        let lf = self.marginal_logpdfs(p, x, y, rows)?;
        let rho_all = self.correlations(p, x, rows)?;
        (0..rows)
            .map(|r| {
                let z = [norm_ppf(clamp_cdf(f[r * k + i]).0), norm_ppf(clamp_cdf(f[r * k + j]).0)];
                let rho = sub_corr(&rho_all[r * k * k..(r + 1) * k * k], k, &[i, j]);
                Ok(lf[r * k + i] + lf[r * k + j] + gauss_copula_term(&z, &rho)?.log_c)
            })
            .collect()
    }
}
