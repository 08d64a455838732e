//! Differentiation engine: jet-valued forward passes with a reverse sweep on top.

mod algebra;
mod params;
mod tape;

pub use algebra::{
    scaled_tanh01, sigmoid, softplus_stable, Activation, Algebra, LOG_FLOOR, MAX_CHANNELS, MAX_ORDER,
};
pub use params::{Block, BlockId, Constraint, ParamStore};
pub use tape::{NodeId, Tape};

pub(crate) use tape::gemm;

use crate::error::{Error, Result};

/// A computation that can be recorded onto a tape, mapping a
/// `rows × input_width` input to some output node.
pub trait Program {
    fn input_width(&self) -> usize;
    fn record(&self, tape: &mut Tape<'_>, input: NodeId) -> Result<NodeId>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TangentOrder {
    /// One independent directional derivative per direction.
    First,
    /// Every mixed partial across distinct directions, up to the product of all of them.
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentRequest {
    pub directions: Vec<Vec<f64>>,
    pub order: TangentOrder,
}

impl TangentRequest {
    pub fn first(directions: Vec<Vec<f64>>) -> Self {
        Self {
            directions,
            order: TangentOrder::First,
        }
    }

    /// Mixed second derivative along two directions.
    pub fn mixed(d1: Vec<f64>, d2: Vec<f64>) -> Self {
        Self {
            directions: vec![d1, d2],
            order: TangentOrder::Mixed,
        }
    }

    /// Pure second derivative along one direction.
    pub fn pure_second(d: Vec<f64>) -> Self {
        Self::mixed(d.clone(), d)
    }

    fn algebra(&self) -> Result<Algebra> {
        let n = self.directions.len();
        if n == 0 {
            return Err(Error::InvalidArgument("tangent request without directions".into()));
        }
        match self.order {
            TangentOrder::First => Algebra::first_order(n),
            TangentOrder::Mixed => {
                if n > MAX_ORDER {
                    return Err(Error::UnsupportedOp {
                        op: "mixed",
                        order: n,
                    });
                }
                Algebra::new(n, n)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tangents {
    pub value: Vec<f64>,
    /// One Jacobian-vector product per requested direction.
    pub first: Vec<Vec<f64>>,
    /// Mixed partial along all directions at once (mixed requests only).
    pub mixed: Option<Vec<f64>>,
}

/// Primal outputs for a row-major batch of inputs.
pub fn eval_forward<P: Program + ?Sized>(program: &P, params: &ParamStore, inputs: &[f64]) -> Result<Vec<f64>> {
    let rows = batch_rows(program, inputs)?;
    let mut tape = Tape::new(params, Algebra::scalar());
    let x = tape.input(rows, program.input_width(), inputs)?;
    let out = program.record(&mut tape, x)?;
    Ok(tape.value(out).to_vec())
}

pub fn eval_with_tangents<P: Program + ?Sized>(
    program: &P,
    params: &ParamStore,
    inputs: &[f64],
    req: &TangentRequest,
) -> Result<Tangents> {
    let rows = batch_rows(program, inputs)?;
    let width = program.input_width();
    let algebra = req.algebra()?;
    let seeds: Vec<(usize, &[f64])> = req
        .directions
        .iter()
        .enumerate()
        .map(|(g, d)| (g, d.as_slice()))
        .collect();
    let mut tape = Tape::new(params, algebra.clone());
    let x = tape.input_seeded(rows, width, inputs, &seeds)?;
    let out = program.record(&mut tape, x)?;
    let plane = tape.value(out).len();
    let chan = |ch: usize| tape.channel(out, ch).map_or_else(|| vec![0.0; plane], <[f64]>::to_vec);
    let first = (0..req.directions.len())
        .map(|g| chan(algebra.generator_channel(g)))
        .collect();
    let mixed = match req.order {
        TangentOrder::First => None,
        TangentOrder::Mixed => algebra.top_channel().map(chan),
    };
    Ok(Tangents {
        value: tape.value(out).to_vec(),
        first,
        mixed,
    })
}

fn batch_rows<P: Program + ?Sized>(program: &P, inputs: &[f64]) -> Result<usize> {
    let width = program.input_width();
    if width == 0 || inputs.len() % width != 0 {
        return Err(Error::shape(
            format!("a multiple of {width} input values"),
            format!("{}", inputs.len()),
        ));
    }
    Ok(inputs.len() / width)
}

/// Worst relative error between analytic and central-difference derivatives
/// of the summed program output, over every parameter and every input column.
/// Returns `+∞` if any probe fails numerically.
pub fn finite_diff_check<P: Program + ?Sized>(program: &P, params: &ParamStore, inputs: &[f64], h: f64) -> f64 {
    fd_check_inner(program, params, inputs, h).unwrap_or(f64::INFINITY)
}

fn fd_check_inner<P: Program + ?Sized>(program: &P, params: &ParamStore, inputs: &[f64], h: f64) -> Result<f64> {
    let rows = batch_rows(program, inputs)?;
    let width = program.input_width();
    let total = |p: &ParamStore, x: &[f64]| -> Result<f64> { Ok(eval_forward(program, p, x)?.iter().sum()) };

    let analytic = {
        let mut tape = Tape::new(params, Algebra::scalar());
        let x = tape.input(rows, width, inputs)?;
        let out = program.record(&mut tape, x)?;
        let (r, c) = tape.shape(out);
        let seed = vec![1.0; r * c];
        tape.backward(&[(out, &seed)])?
    };
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for i in 0..params.len() {
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + h;
        let up = total(&probe, inputs)?;
        probe.values_mut()[i] = orig - h;
        let down = total(&probe, inputs)?;
        probe.values_mut()[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
    }

    let mut x = inputs.to_vec();
    for j in 0..width {
        let mut dir = vec![0.0; width];
        dir[j] = 1.0;
        let t = eval_with_tangents(program, params, inputs, &TangentRequest::first(vec![dir]))?;
        let a: f64 = t.first[0].iter().sum();
        for r in 0..rows {
            x[r * width + j] += h;
        }
        let up = total(params, &x)?;
        for r in 0..rows {
            x[r * width + j] -= 2.0 * h;
        }
        let down = total(params, &x)?;
        x.copy_from_slice(inputs);
        worst = worst.max(rel_err(a, (up - down) / (2.0 * h)));
    }
    if worst.is_nan() {
        return Ok(f64::INFINITY);
    }
    Ok(worst)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        w: BlockId,
        b: BlockId,
    }

    impl Program for Linear {
        fn input_width(&self) -> usize {
            2
        }
        fn record(&self, tape: &mut Tape<'_>, input: NodeId) -> Result<NodeId> {
            tape.affine(input, self.w, Some(self.b))
        }
    }

    struct SigTanh {
        a: BlockId,
        w: BlockId,
    }

    impl Program for SigTanh {
        fn input_width(&self) -> usize {
            1
        }
        fn record(&self, tape: &mut Tape<'_>, input: NodeId) -> Result<NodeId> {
            let h = tape.affine(input, self.a, None)?;
            let h = tape.unary(h, Activation::Tanh)?;
            let o = tape.affine(h, self.w, None)?;
            tape.unary(o, Activation::Sigmoid)
        }
    }

    fn sig_tanh(a: f64, w: f64) -> (SigTanh, ParamStore) {
        let mut p = ParamStore::new();
        let ab = p.add_block("a", 1, 1, Some(vec![Constraint::NonNeg])).unwrap();
        let wb = p.add_block("w", 1, 1, Some(vec![Constraint::NonNeg])).unwrap();
        p.slice_mut(ab)[0] = a;
        p.slice_mut(wb)[0] = w;
        (SigTanh { a: ab, w: wb }, p)
    }

    #[test]
    fn linear_graph_is_exact() {
        let mut p = ParamStore::new();
        let w = p.add_block("w", 2, 3, None).unwrap();
        let b = p.add_block("b", 1, 3, None).unwrap();
        p.values_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 0.3 * i as f64 - 1.0);
        let err = finite_diff_check(&Linear { w, b }, &p, &[0.5, -1.5, 2.0, 0.25], 0.1);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn sigmoid_tanh_composite_matches_differences() {
        let (prog, p) = sig_tanh(0.8, 1.3);
        let err = finite_diff_check(&prog, &p, &[0.3, -0.6, 1.1], 1e-5);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn micro_monde_values() {
        let (prog, p) = sig_tanh(1.0, 1.0);
        let v = eval_forward(&prog, &p, &[0.0, 1.0]).unwrap();
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 0.681_699_742_194_526_2).abs() < 1e-12);
    }

    #[test]
    fn zero_direction_gives_zero_tangents() {
        let (prog, p) = sig_tanh(0.7, 0.9);
        let t = eval_with_tangents(&prog, &p, &[0.4], &TangentRequest::mixed(vec![0.0], vec![0.0])).unwrap();
        assert_eq!(t.first, vec![vec![0.0], vec![0.0]]);
        assert_eq!(t.mixed, Some(vec![0.0]));
    }

    #[test]
    fn pure_second_matches_differences() {
        let (prog, p) = sig_tanh(0.7, 0.9);
        let y = 0.4;
        let t = eval_with_tangents(&prog, &p, &[y], &TangentRequest::pure_second(vec![1.0])).unwrap();
        let f = |y: f64| eval_forward(&prog, &p, &[y]).unwrap()[0];
        let h = 1e-4;
        let fd = (f(y + h) - 2.0 * f(y) + f(y - h)) / (h * h);
        assert!(rel_err(t.mixed.unwrap()[0], fd) < 1e-5);
    }

    #[test]
    fn masked_parameter_gradient_is_exactly_zero() {
        let mut p = ParamStore::new();
        let w = p
            .add_block("w", 2, 3, Some(vec![Constraint::Zero, Constraint::Free, Constraint::NonNeg, Constraint::Free, Constraint::Zero, Constraint::Free]))
            .unwrap();
        let b = p.add_block("b", 1, 3, None).unwrap();
        p.values_mut().iter_mut().for_each(|v| *v = 0.7);
        let prog = Linear { w, b };
        let mut tape = Tape::new(&p, Algebra::scalar());
        let x = tape.input(1, 2, &[1.0, 2.0]).unwrap();
        let o = tape.record_sum(&prog, x);
        let g = tape.backward_params(o, 1.0).unwrap();
        for i in p.masked_indices() {
            assert_eq!(g[i], 0.0);
        }
        let base = eval_forward(&prog, &p, &[1.0, 2.0]).unwrap();
        let mut q = p.clone();
        q.values_mut()[0] += 5.0;
        assert_eq!(eval_forward(&prog, &q, &[1.0, 2.0]).unwrap(), base);
    }

    impl Tape<'_> {
        fn record_sum<P: Program>(&mut self, prog: &P, x: NodeId) -> NodeId {
            let o = prog.record(self, x).unwrap();
            let s = self.sum_cols(o).unwrap();
            self.sum_rows(s).unwrap()
        }
    }
}
