use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{column, Eval};
use crate::error::{Error, Result};
use crate::graph::{Activation, Algebra, NodeId, ParamStore, Tape, MAX_ORDER};
use crate::layers::ConstrainedLinear;

/// Product-unit MONDE: `F(y | x) = t(⊙_k h_k(y_k, h_x(x))) / t(𝟙)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pumonde {
    pub d: usize,
    pub k: usize,
    pub hx: Vec<ConstrainedLinear>,
    /// One monotone sigmoid tower per response dimension.
    pub hxy: Vec<Vec<ConstrainedLinear>>,
    /// Softplus tower with non-negative weights ending in a single unit.
    pub t: Vec<ConstrainedLinear>,
}

impl Pumonde {
    pub fn new(
        store: &mut ParamStore,
        d: usize,
        k: usize,
        hx_hidden: &[usize],
        hxy_hidden: &[usize],
        t_hidden: &[usize],
    ) -> Result<Self> {
        if k == 0 || hxy_hidden.is_empty() {
            return Err(Error::InvalidDim("PUMONDE needs K ≥ 1 and at least one h_xy layer".into()));
        }
        let mut hx = Vec::new();
        let mut side = d;
        for (i, &w) in hx_hidden.iter().enumerate() {
            hx.push(ConstrainedLinear::new(store, &format!("hx{i}"), side, w, None, Activation::Sigmoid)?);
            side = w;
        }
        if d == 0 {
            side = 0;
        }
        let mut hxy = Vec::with_capacity(k);
        for b in 0..k {
            let mut tower = Vec::new();
            let mut prev = 1;
            for (i, &w) in hxy_hidden.iter().enumerate() {
                let free = if i == 0 { side } else { 0 };
                tower.push(ConstrainedLinear::monotone(
                    store,
                    &format!("hxy{b}.{i}"),
                    free,
                    free + prev,
                    w,
                    Activation::Sigmoid,
                )?);
                prev = w;
            }
            hxy.push(tower);
        }
        let mut t = Vec::new();
        let mut prev = *hxy_hidden.last().expect("non-empty");
        for (i, &w) in t_hidden.iter().chain(std::iter::once(&1)).enumerate() {
            t.push(ConstrainedLinear::monotone(store, &format!("t{i}"), 0, prev, w, Activation::SoftplusStable)?);
            prev = w;
        }
        Ok(Self { d, k, hx, hxy, t })
    }

    /// `x_spread` switches the first covariate layer to a wide-spread init,
    /// which helps when the conditional law oscillates quickly in `x`.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R, x_spread: Option<f64>) {
        for (i, l) in self.hx.iter().chain(self.hxy.iter().flatten()).chain(&self.t).enumerate() {
            match x_spread {
                Some(s) if i == 0 && !self.hx.is_empty() => l.init_spread(store, rng, s),
                _ => l.init(store, rng),
            }
        }
    }

    fn m_width(&self) -> usize {
        self.hxy[0].last().expect("non-empty").out_dim
    }

    fn record_hx(&self, tape: &mut Tape<'_>, x: &[f64], rows: usize) -> Result<Option<NodeId>> {
        if self.d == 0 {
            return Ok(None);
        }
        let mut h = tape.input(rows, self.d, x)?;
        for l in &self.hx {
            h = l.record(tape, h)?;
        }
        Ok(Some(h))
    }

    /// `h_k` for response `k`, optionally seeded along generator `g`.
    fn record_h(
        &self,
        tape: &mut Tape<'_>,
        hx: Option<NodeId>,
        y: &[f64],
        rows: usize,
        k: usize,
        g: Option<usize>,
    ) -> Result<NodeId> {
        let yc = column(y, k, self.k, rows);
        let yn = match g {
            Some(g) => tape.input_seeded(rows, 1, &yc, &[(g, &[1.0])])?,
            None => tape.input(rows, 1, &yc)?,
        };
        let mut v = match hx {
            Some(h) => tape.concat(&[h, yn])?,
            None => yn,
        };
        for l in &self.hxy[k] {
            v = l.record(tape, v)?;
        }
        Ok(v)
    }

    fn record_t(&self, tape: &mut Tape<'_>, m: NodeId) -> Result<NodeId> {
        let mut v = m;
        for l in &self.t {
            v = l.record(tape, v)?;
        }
        Ok(v)
    }

    fn record_t_ones(&self, tape: &mut Tape<'_>) -> Result<NodeId> {
        let ones = tape.constant(1, self.m_width(), 1.0)?;
        self.record_t(tape, ones)
    }

    /// `log ∂^|S| F_S / ∏ ∂y_k` given the towers already seeded one generator each.
    fn record_mixed_log(&self, tape: &mut Tape<'_>, towers: &[NodeId], t_one: NodeId) -> Result<NodeId> {
        let mut m = towers[0];
        for &h in &towers[1..] {
            m = tape.mul(m, h)?;
        }
        let tm = self.record_t(tape, m)?;
        let top = tape
            .algebra()
            .top_channel()
            .ok_or_else(|| Error::InvalidDim("mixed partial needs at least one generator".into()))?;
        let mixed = tape.extract(tm, top)?;
        let dens = tape.div(mixed, t_one)?;
        tape.unary(dens, Activation::LogClamped)
    }

    fn check_k(&self, i: usize) -> Result<()> {
        if i >= self.k {
            return Err(Error::ColumnOutOfRange { index: i, columns: self.k });
        }
        Ok(())
    }

    /// `F_S(y_S | x)`: towers outside `subset` are replaced by ones.
    pub fn marginal_cdf(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize, subset: &[usize]) -> Result<Vec<f64>> {
        if subset.is_empty() {
            return Err(Error::EmptySubset);
        }
        for &i in subset {
            self.check_k(i)?;
        }
        let mut tape = Tape::new(p, Algebra::scalar());
        let hx = self.record_hx(&mut tape, x, rows)?;
        let mut m = self.record_h(&mut tape, hx, y, rows, subset[0], None)?;
        for &i in &subset[1..] {
            let h = self.record_h(&mut tape, hx, y, rows, i, None)?;
            m = tape.mul(m, h)?;
        }
        let tm = self.record_t(&mut tape, m)?;
        let t1 = self.record_t_ones(&mut tape)?;
        let f = tape.div(tm, t1)?;
        Ok(tape.value(f).to_vec())
    }

    pub fn cdf(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..self.k).collect();
        self.marginal_cdf(p, x, y, rows, &all)
    }

    /// `t(m)` and `t(𝟙)` without normalisation, for inspection.
    pub fn raw_t(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize) -> Result<(Vec<f64>, f64)> {
        let mut tape = Tape::new(p, Algebra::scalar());
        let hx = self.record_hx(&mut tape, x, rows)?;
        let mut m = self.record_h(&mut tape, hx, y, rows, 0, None)?;
        for i in 1..self.k {
            let h = self.record_h(&mut tape, hx, y, rows, i, None)?;
            m = tape.mul(m, h)?;
        }
        let tm = self.record_t(&mut tape, m)?;
        let t1 = self.record_t_ones(&mut tape)?;
        Ok((tape.value(tm).to_vec(), tape.value(t1)[0]))
    }

    /// Sum over the given generator assignments `(k, g)` grouped into terms,
    /// each term the log of one mixed partial.
    fn mixed_terms(
        &self,
        p: &ParamStore,
        x: &[f64],
        y: &[f64],
        rows: usize,
        algebra: Algebra,
        terms: &[Vec<(usize, usize)>],
        grad: Option<&mut [f64]>,
    ) -> Result<Eval> {
        let mut tape = Tape::new(p, algebra);
        let hx = self.record_hx(&mut tape, x, rows)?;
        let t_one = self.record_t_ones(&mut tape)?;
        let mut cache: HashMap<(usize, usize), NodeId> = HashMap::new();
        let mut total: Option<NodeId> = None;
        for term in terms {
            let mut towers = Vec::with_capacity(term.len());
            for &(k, g) in term {
                let node = match cache.get(&(k, g)) {
                    Some(&n) => n,
                    None => {
                        let n = self.record_h(&mut tape, hx, y, rows, k, Some(g))?;
                        cache.insert((k, g), n);
                        n
                    }
                };
                towers.push(node);
            }
            let ll = self.record_mixed_log(&mut tape, &towers, t_one)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, ll)?,
                None => ll,
            });
        }
        let total = total.ok_or_else(|| Error::InvalidArgument("no likelihood terms".into()))?;
        let values = tape.value(total).to_vec();
        let clamped = tape.clamped_count();
        if let Some(g) = grad {
            let s = tape.sum_rows(total)?;
            let dg = tape.backward_params(s, 1.0)?;
            g.iter_mut().zip(&dg).for_each(|(a, b)| *a += b);
        }
        Ok(Eval { values, clamped })
    }

    /// `log ∂²F_ij/∂y_i∂y_j` with every other tower at ones.
    pub fn pair_logpdf(&self, p: &ParamStore, x: &[f64], y: &[f64], rows: usize, i: usize, j: usize) -> Result<Eval> {
        self.check_k(i)?;
        self.check_k(j)?;
        if i == j {
            return Err(Error::InvalidArgument(format!("pair needs distinct dimensions, got ({i}, {j})")));
        }
        self.mixed_terms(p, x, y, rows, Algebra::new(2, 2)?, &[vec![(i, 0), (j, 1)]], None)
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.k)
            .flat_map(|i| (i + 1..self.k).map(move |j| (i, j)))
            .collect()
    }

    /// Sum of all bivariate marginal log-densities.
    pub fn composite_loglik(
        &self,
        p: &ParamStore,
        x: &[f64],
        y: &[f64],
        rows: usize,
        grad: Option<&mut [f64]>,
    ) -> Result<Eval> {
        if self.k < 2 {
            return self.full_logpdf(p, x, y, rows, grad);
        }
        let terms: Vec<Vec<(usize, usize)>> = self.pairs().into_iter().map(|(i, j)| vec![(i, 0), (j, 1)]).collect();
        self.mixed_terms(p, x, y, rows, Algebra::new(2, 2)?, &terms, grad)
    }

    /// `log ∂^K F / ∂y_1…∂y_K`; supported for `K ≤ 4`.
    pub fn full_logpdf(
        &self,
        p: &ParamStore,
        x: &[f64],
        y: &[f64],
        rows: usize,
        grad: Option<&mut [f64]>,
    ) -> Result<Eval> {
        if self.k > MAX_ORDER {
            return Err(Error::DimTooLarge { k: self.k });
        }
        let term: Vec<(usize, usize)> = (0..self.k).map(|k| (k, k)).collect();
        self.mixed_terms(p, x, y, rows, Algebra::new(self.k, self.k)?, &[term], grad)
    }
}
