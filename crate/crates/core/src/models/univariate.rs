use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{column, Eval};
use crate::error::Result;
use crate::graph::{Activation, Algebra, NodeId, ParamStore, Tape};
use crate::layers::ConstrainedLinear;

/// `F(y | x)` from a covariate tower feeding a monotone tower in `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnivariateMonde {
    pub d: usize,
    pub x_tower: Vec<ConstrainedLinear>,
    /// The first layer fuses the covariate features (free) with `y` (non-negative).
    pub mono: Vec<ConstrainedLinear>,
    pub out: ConstrainedLinear,
}

impl UnivariateMonde {
    pub fn new(store: &mut ParamStore, d: usize, x_hidden: &[usize], mono_hidden: &[usize]) -> Result<Self> {
        let mut x_tower = Vec::new();
        let mut width = d;
        for (i, &w) in x_hidden.iter().enumerate() {
            x_tower.push(ConstrainedLinear::new(store, &format!("x{i}"), width, w, None, Activation::Tanh)?);
            width = w;
        }
        let mut mono = Vec::new();
        let mut prev = 1;
        for (i, &w) in mono_hidden.iter().enumerate() {
            let free = if i == 0 { width } else { 0 };
            mono.push(ConstrainedLinear::monotone(store, &format!("m{i}"), free, free + prev, w, Activation::Tanh)?);
            prev = w;
        }
        let free = if mono.is_empty() { width } else { 0 };
        let out = ConstrainedLinear::monotone(store, "out", free, free + prev, 1, Activation::Sigmoid)?;
        Ok(Self { d, x_tower, mono, out })
    }

    pub(crate) fn layers(&self) -> impl Iterator<Item = &ConstrainedLinear> {
        self.x_tower.iter().chain(&self.mono).chain(std::iter::once(&self.out))
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.layers().for_each(|l| l.init(store, rng));
    }

    /// Records `F` for the given covariate and response nodes.
    pub fn record_cdf(&self, tape: &mut Tape<'_>, x: NodeId, y: NodeId) -> Result<NodeId> {
        let mut h = x;
        for l in &self.x_tower {
            h = l.record(tape, h)?;
        }
        let mut v = if self.d > 0 { tape.concat(&[h, y])? } else { y };
        for l in self.mono.iter().chain(std::iter::once(&self.out)) {
            v = l.record(tape, v)?;
        }
        Ok(v)
    }

    pub fn cdf(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new(p, Algebra::scalar());
        let xn = tape.input(rows, self.d, x)?;
        let yn = tape.input(rows, 1, y)?;
        let f = self.record_cdf(&mut tape, xn, yn)?;
        Ok(tape.value(f).to_vec())
    }

    pub fn logpdf(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize, grad: Option<&mut [f64]>) -> Result<Eval> {
        let mut tape = Tape::new(p, Algebra::first_order(1)?);
        let xn = tape.input(rows, self.d, x)?;
        let yn = tape.input_seeded(rows, 1, &column(y, 0, 1, rows), &[(0, &[1.0])])?;
        let f = self.record_cdf(&mut tape, xn, yn)?;
        let dens = tape.extract(f, 1)?;
        let ll = tape.unary(dens, Activation::LogClamped)?;
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
