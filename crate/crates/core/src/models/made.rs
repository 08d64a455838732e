use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Eval;
use crate::error::Result;
use crate::graph::{Activation, Algebra, NodeId, ParamStore, Tape};
use crate::layers::{build_made_masks, ConstrainedLinear, MadeMaskSet};

/// Autoregressive MONDE: one shared masked network whose `k`-th output is
/// `F_k(y_k | x, y_<k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MondeMade {
    pub d: usize,
    pub k: usize,
    pub masks: MadeMaskSet,
    pub layers: Vec<ConstrainedLinear>,
}

impl MondeMade {
    /// `hidden_layers ≥ 1` masked layers of width `K·M`, then the output layer.
    pub fn new(store: &mut ParamStore, d: usize, k: usize, m: usize, hidden_layers: usize) -> Result<Self> {
        let masks = build_made_masks(d, k, m)?;
        let width = k * m;
        let act = Activation::ScaledTanh01;
        let mut layers = vec![ConstrainedLinear::new(store, "made0", d + k, width, Some(masks.input.clone()), act)?];
        for i in 1..hidden_layers.max(1) {
            layers.push(ConstrainedLinear::new(
                store,
                &format!("made{i}"),
                width,
                width,
                Some(masks.hidden.clone()),
                act,
            )?);
        }
        layers.push(ConstrainedLinear::new(store, "made_out", width, k, Some(masks.output.clone()), act)?);
        Ok(Self { d, k, masks, layers })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.layers.iter().for_each(|l| l.init(store, rng));
    }

    fn record(&self, tape: &mut Tape<'_>, x: NodeId, y: NodeId) -> Result<NodeId> {
        let mut v = if self.d > 0 { tape.concat(&[x, y])? } else { y };
        for l in &self.layers {
            v = l.record(tape, v)?;
        }
        Ok(v)
    }

    /// The `K` conditional CDFs for each row, row-major.
    pub fn cdfs(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new(p, Algebra::scalar());
        let xn = tape.input(rows, self.d, x)?;
        let yn = tape.input(rows, self.k, y)?;
        let out = self.record(&mut tape, xn, yn)?;
        Ok(tape.value(out).to_vec())
    }

    /// Jacobian of the outputs with respect to `y`: entry `[r][k][j]` is
    /// `∂F_k/∂y_j` for row `r`.
    pub fn jacobian(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize) -> Result<Vec<f64>> {
        let k = self.k;
        let mut tape = Tape::new(p, Algebra::first_order(k)?);
        let out = self.record_seeded(&mut tape, x, y, rows)?;
        let mut jac = vec![0.0; rows * k * k];
        for j in 0..k {
            if let Some(ch) = tape.channel(out, 1 + j) {
                for r in 0..rows {
                    for i in 0..k {
                        jac[(r * k + i) * k + j] = ch[r * k + i];
                    }
                }
            }
        }
        Ok(jac)
    }

    fn record_seeded(&self, tape: &mut Tape<'_>, x: &[f64], y: &[f64], rows: usize) -> Result<NodeId> {
        let k = self.k;
        let dirs: Vec<Vec<f64>> = (0..k)
            .map(|j| (0..k).map(|i| f64::from(u8::from(i == j))).collect())
            .collect();
        let seeds: Vec<(usize, &[f64])> = dirs.iter().enumerate().map(|(g, d)| (g, d.as_slice())).collect();
        let xn = tape.input(rows, self.d, x)?;
        let yn = tape.input_seeded(rows, k, y, &seeds)?;
        self.record(tape, xn, yn)
    }

    /// `Σ_k log ∂F_k/∂y_k` per row.
    pub fn logpdf(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize, grad: Option<&mut [f64]>) -> Result<Eval> {
        let k = self.k;
        let mut tape = Tape::new(p, Algebra::first_order(k)?);
        let out = self.record_seeded(&mut tape, x, y, rows)?;
        let mut diag = Vec::with_capacity(k);
        for j in 0..k {
            let ch = tape.extract(out, 1 + j)?;
            diag.push(tape.select(ch, &[j])?);
        }
        let dens = if k == 1 { diag[0] } else { tape.concat(&diag)? };
        let logs = tape.unary(dens, Activation::LogClamped)?;
        let ll = tape.sum_cols(logs)?;
        let values = tape.value(ll).to_vec();
        let clamped = tape.clamped_count();
        if let Some(g) = grad {
            let total = tape.sum_rows(ll)?;
            let dg = tape.backward_params(total, 1.0)?;
            g.iter_mut().zip(&dg).for_each(|(a, b)| *a += b);
        }
        Ok(Eval { values, clamped })
    }
}
