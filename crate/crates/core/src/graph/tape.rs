//! Eager evaluation tape over jet-valued tensors.
//!
//! Every node holds a `rows × width` matrix of jets laid out channel-major:
//! entry `(c, r, j)` lives at `(c * rows + r) * width + j`. Nodes that do not
//! depend on any seeded input carry only the value channel, so covariate
//! branches cost the same as a plain forward pass.
//!
//! The reverse sweep treats every jet coefficient as a real-valued function of
//! the parameters, which yields exact gradients of losses built from tangent
//! channels (reverse-over-forward).

use crate::error::{Error, Result};
use crate::graph::algebra::{Activation, Algebra, MAX_CHANNELS, MAX_ORDER};
use crate::graph::params::{BlockId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug)]
enum Op {
    Input,
    Affine {
        input: NodeId,
        weight: BlockId,
        bias: Option<BlockId>,
        w_eff: Vec<f64>,
    },
    Unary {
        input: NodeId,
        grad: Vec<f64>,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    Select {
        input: NodeId,
        cols: Vec<usize>,
    },
    Extract {
        input: NodeId,
        channel: usize,
    },
    SumRows {
        input: NodeId,
    },
    SumCols {
        input: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    rows: usize,
    width: usize,
    chans: usize,
    val: Vec<f64>,
}

impl Node {
    #[inline]
    fn plane(&self) -> usize {
        self.rows * self.width
    }
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    algebra: Algebra,
    nodes: Vec<Node>,
    consumed: bool,
    clamped: usize,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore, algebra: Algebra) -> Self {
        Self {
            params,
            algebra,
            nodes: Vec::new(),
            consumed: false,
            clamped: 0,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn algebra(&self) -> &Algebra {
        &self.algebra
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.width)
    }

    /// Whether the node carries tangent channels.
    pub fn has_tangents(&self, id: NodeId) -> bool {
        self.nodes[id.0].chans > 1
    }

    /// Primal values, row-major `rows × width`.
    pub fn value(&self, id: NodeId) -> &[f64] {
        let n = &self.nodes[id.0];
        &n.val[..n.plane()]
    }

    /// Coefficients of jet channel `ch`; `None` when the node is constant in
    /// every seeded direction (all such coefficients are zero).
    pub fn channel(&self, id: NodeId, ch: usize) -> Option<&[f64]> {
        let n = &self.nodes[id.0];
        if ch >= n.chans {
            return None;
        }
        let p = n.plane();
        Some(&n.val[ch * p..(ch + 1) * p])
    }

    /// Number of log evaluations whose argument fell below the floor.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    fn push(&mut self, op: Op, rows: usize, width: usize, chans: usize, val: Vec<f64>) -> Result<NodeId> {
        debug_assert_eq!(val.len(), rows * width * chans);
        let id = NodeId(self.nodes.len());
        if val.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure { node: id });
        }
        self.nodes.push(Node {
            op,
            rows,
            width,
            chans,
            val,
        });
        Ok(id)
    }

    /// Value-only input.
    pub fn input(&mut self, rows: usize, width: usize, data: &[f64]) -> Result<NodeId> {
        if data.len() != rows * width {
            return Err(Error::shape(format!("{rows}x{width} input"), format!("{} values", data.len())));
        }
        self.push(Op::Input, rows, width, 1, data.to_vec())
    }

    /// Input whose tangent along generator `g` is the direction `d` (one entry
    /// per column, shared by every row).
    pub fn input_seeded(
        &mut self,
        rows: usize,
        width: usize,
        data: &[f64],
        seeds: &[(usize, &[f64])],
    ) -> Result<NodeId> {
        if data.len() != rows * width {
            return Err(Error::shape(format!("{rows}x{width} input"), format!("{} values", data.len())));
        }
        let chans = self.algebra.len();
        let plane = rows * width;
        let mut val = vec![0.0; plane * chans];
        val[..plane].copy_from_slice(data);
        for &(g, dir) in seeds {
            if g >= self.algebra.generators() {
                return Err(Error::InvalidDim(format!("generator {g} not in algebra")));
            }
            if dir.len() != width {
                return Err(Error::shape(format!("direction of length {width}"), format!("{}", dir.len())));
            }
            let ch = self.algebra.generator_channel(g);
            for r in 0..rows {
                let dst = &mut val[ch * plane + r * width..ch * plane + (r + 1) * width];
                dst.iter_mut().zip(dir).for_each(|(v, d)| *v += d);
            }
        }
        self.push(Op::Input, rows, width, chans, val)
    }

    pub fn constant(&mut self, rows: usize, width: usize, value: f64) -> Result<NodeId> {
        self.push(Op::Input, rows, width, 1, vec![value; rows * width])
    }

    /// `input · W + b` with `W` taken from an `in × out` parameter block after
    /// applying its constraint tags.
    pub fn affine(&mut self, input: NodeId, weight: BlockId, bias: Option<BlockId>) -> Result<NodeId> {
        let block = self.params.block(weight);
        let (fan_in, fan_out) = (block.rows, block.cols);
        let node = &self.nodes[input.0];
        if node.width != fan_in {
            return Err(Error::shape(
                format!("input width {fan_in} for block {}", block.name),
                format!("{}", node.width),
            ));
        }
        if let Some(b) = bias {
            if self.params.block(b).len() != fan_out {
                return Err(Error::shape(format!("bias of length {fan_out}"), format!("{}", self.params.block(b).len())));
            }
        }
        let (rows, chans) = (node.rows, node.chans);
        let w_eff = self.params.effective(weight);
        let mut val = vec![0.0; chans * rows * fan_out];
        gemm(chans * rows, fan_in, fan_out, &node.val, false, &w_eff, false, &mut val, 0.0);
        if let Some(b) = bias {
            let bias_vals = self.params.slice(b);
            for r in 0..rows {
                val[r * fan_out..(r + 1) * fan_out]
                    .iter_mut()
                    .zip(bias_vals)
                    .for_each(|(v, b)| *v += b);
            }
        }
        self.push(
            Op::Affine {
                input,
                weight,
                bias,
                w_eff,
            },
            rows,
            fan_out,
            chans,
            val,
        )
    }

    pub fn unary(&mut self, input: NodeId, act: Activation) -> Result<NodeId> {
        let node = &self.nodes[input.0];
        let (rows, width, chans) = (node.rows, node.width, node.chans);
        let plane = node.plane();
        let mut val = vec![0.0; node.val.len()];
        let mut grad = vec![0.0; node.val.len()];
        let mut clamped = 0;
        if chans == 1 {
            let mut d = [0.0; 2];
            for (i, &x) in node.val.iter().enumerate() {
                act.derivatives(x, &mut d);
                val[i] = d[0];
                grad[i] = d[1];
                if act == Activation::LogClamped && x < crate::graph::LOG_FLOOR {
                    clamped += 1;
                }
            }
        } else {
            let alg = &self.algebra;
            let order = alg.order();
            if order > MAX_ORDER {
                return Err(Error::UnsupportedOp {
                    op: act.name(),
                    order,
                });
            }
            let mut a = [0.0; MAX_CHANNELS];
            let mut o = [0.0; MAX_CHANNELS];
            let mut g = [0.0; MAX_CHANNELS];
            let mut d = [0.0; MAX_ORDER + 2];
            let d = &mut d[..order + 2];
            for p in 0..plane {
                for c in 0..chans {
                    a[c] = node.val[c * plane + p];
                }
                act.derivatives(a[0], d);
                if act == Activation::LogClamped && a[0] < crate::graph::LOG_FLOOR {
                    clamped += 1;
                }
                alg.apply_unary(d, &a[..chans], &mut o[..chans], &mut g[..chans]);
                for c in 0..chans {
                    val[c * plane + p] = o[c];
                    grad[c * plane + p] = g[c];
                }
            }
        }
        self.clamped += clamped;
        self.push(Op::Unary { input, grad }, rows, width, chans, val)
    }

    fn broadcast_shape(&self, a: NodeId, b: NodeId) -> Result<(usize, usize, usize)> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.width != nb.width || (na.rows != nb.rows && na.rows != 1 && nb.rows != 1) {
            return Err(Error::shape(
                format!("{}x{}", na.rows, na.width),
                format!("{}x{}", nb.rows, nb.width),
            ));
        }
        Ok((na.rows.max(nb.rows), na.width, na.chans.max(nb.chans)))
    }

    /// Elementwise jet product, broadcasting a single row against many.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, width, chans) = self.broadcast_shape(a, b)?;
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        let plane = rows * width;
        let mut val = vec![0.0; plane * chans];
        let mut ja = [0.0; MAX_CHANNELS];
        let mut jb = [0.0; MAX_CHANNELS];
        let mut jo = [0.0; MAX_CHANNELS];
        for r in 0..rows {
            for j in 0..width {
                let p = r * width + j;
                let pa = if na.rows == 1 { j } else { p };
                let pb = if nb.rows == 1 { j } else { p };
                if chans == 1 {
                    val[p] = na.val[pa] * nb.val[pb];
                    continue;
                }
                gather(na, pa, chans, &mut ja);
                gather(nb, pb, chans, &mut jb);
                self.algebra.mul(&ja[..chans], &jb[..chans], &mut jo[..chans]);
                for c in 0..chans {
                    val[c * plane + p] = jo[c];
                }
            }
        }
        self.push(Op::Mul { a, b }, rows, width, chans, val)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, width, chans) = self.broadcast_shape(a, b)?;
        let plane = rows * width;
        let mut val = vec![0.0; plane * chans];
        for src in [a, b] {
            let n = &self.nodes[src.0];
            let np = n.plane();
            for c in 0..n.chans {
                for r in 0..rows {
                    let sr = if n.rows == 1 { 0 } else { r };
                    for j in 0..width {
                        val[c * plane + r * width + j] += n.val[c * np + sr * width + j];
                    }
                }
            }
        }
        self.push(Op::Add { a, b }, rows, width, chans, val)
    }

    pub fn div(&mut self, num: NodeId, den: NodeId) -> Result<NodeId> {
        let inv = self.unary(den, Activation::Reciprocal)?;
        self.mul(num, inv)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidDim("concat of zero nodes".into()))?;
        let rows = self.nodes[first.0].rows;
        let mut width = 0;
        let mut chans = 1;
        for p in parts {
            let n = &self.nodes[p.0];
            if n.rows != rows {
                return Err(Error::shape(format!("{rows} rows"), format!("{}", n.rows)));
            }
            width += n.width;
            chans = chans.max(n.chans);
        }
        let plane = rows * width;
        let mut val = vec![0.0; plane * chans];
        let mut offset = 0;
        for p in parts {
            let n = &self.nodes[p.0];
            let np = n.plane();
            for c in 0..n.chans {
                for r in 0..rows {
                    let src = &n.val[c * np + r * n.width..c * np + (r + 1) * n.width];
                    let dst = c * plane + r * width + offset;
                    val[dst..dst + n.width].copy_from_slice(src);
                }
            }
            offset += n.width;
        }
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            rows,
            width,
            chans,
            val,
        )
    }

    /// Picks columns of a node.
    pub fn select(&mut self, input: NodeId, cols: &[usize]) -> Result<NodeId> {
        let n = &self.nodes[input.0];
        if let Some(&bad) = cols.iter().find(|&&c| c >= n.width) {
            return Err(Error::ColumnOutOfRange {
                index: bad,
                columns: n.width,
            });
        }
        let (rows, chans, np) = (n.rows, n.chans, n.plane());
        let width = cols.len();
        let plane = rows * width;
        let mut val = vec![0.0; plane * chans];
        for c in 0..chans {
            for r in 0..rows {
                for (k, &col) in cols.iter().enumerate() {
                    val[c * plane + r * width + k] = n.val[c * np + r * n.width + col];
                }
            }
        }
        self.push(
            Op::Select {
                input,
                cols: cols.to_vec(),
            },
            rows,
            width,
            chans,
            val,
        )
    }

    /// Lifts jet channel `channel` into the value slot of a new constant-jet node.
    pub fn extract(&mut self, input: NodeId, channel: usize) -> Result<NodeId> {
        if channel >= self.algebra.len().max(1) {
            return Err(Error::InvalidDim(format!("channel {channel} not in algebra")));
        }
        let n = &self.nodes[input.0];
        let (rows, width, plane) = (n.rows, n.width, n.plane());
        let val = if channel < n.chans {
            n.val[channel * plane..(channel + 1) * plane].to_vec()
        } else {
            vec![0.0; plane]
        };
        self.push(Op::Extract { input, channel }, rows, width, 1, val)
    }

    pub fn sum_rows(&mut self, input: NodeId) -> Result<NodeId> {
        let n = &self.nodes[input.0];
        let (rows, width, chans, np) = (n.rows, n.width, n.chans, n.plane());
        let mut val = vec![0.0; width * chans];
        for c in 0..chans {
            for r in 0..rows {
                for j in 0..width {
                    val[c * width + j] += n.val[c * np + r * width + j];
                }
            }
        }
        self.push(Op::SumRows { input }, 1, width, chans, val)
    }

    pub fn sum_cols(&mut self, input: NodeId) -> Result<NodeId> {
        let n = &self.nodes[input.0];
        let (rows, width, chans, np) = (n.rows, n.width, n.chans, n.plane());
        let mut val = vec![0.0; rows * chans];
        for c in 0..chans {
            for r in 0..rows {
                val[c * rows + r] = n.val[c * np + r * width..c * np + (r + 1) * width].iter().sum();
            }
        }
        self.push(Op::SumCols { input }, rows, 1, chans, val)
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let n = &self.nodes[input.0];
        let (rows, width, chans) = (n.rows, n.width, n.chans);
        let val = n.val.iter().map(|v| v * factor).collect();
        self.push(Op::Scale { input, factor }, rows, width, chans, val)
    }

    /// Gradient of `adjoint · output` with respect to the free parameters.
    /// `output` must be a single value (1×1).
    pub fn backward_params(&mut self, output: NodeId, adjoint: f64) -> Result<Vec<f64>> {
        let n = &self.nodes[output.0];
        if n.rows * n.width != 1 {
            return Err(Error::shape("1x1 output", format!("{}x{}", n.rows, n.width)));
        }
        let mut seed = vec![0.0; n.val.len()];
        seed[0] = adjoint;
        self.backward(&[(output, &seed)])
    }

    /// Reverse sweep from arbitrary adjoint seeds. Each seed has the layout of
    /// its node (all channels). Consumes the tape.
    pub fn backward(&mut self, seeds: &[(NodeId, &[f64])]) -> Result<Vec<f64>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        for &(id, s) in seeds {
            let n = &self.nodes[id.0];
            if s.len() != n.val.len() {
                return Err(Error::shape(format!("seed of length {}", n.val.len()), format!("{}", s.len())));
            }
            let a = adj[id.0].get_or_insert_with(|| vec![0.0; n.val.len()]);
            a.iter_mut().zip(s).for_each(|(a, s)| *a += s);
        }
        let mut grad = vec![0.0; self.params.len()];
        for i in (0..self.nodes.len()).rev() {
            let Some(out_bar) = adj[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Affine {
                    input,
                    weight,
                    bias,
                    w_eff,
                } => {
                    let x = &self.nodes[input.0];
                    let (cr, fan_in, fan_out) = (x.chans * x.rows, x.width, node.width);
                    let mut w_bar = vec![0.0; fan_in * fan_out];
                    gemm(fan_in, cr, fan_out, &x.val, true, &out_bar, false, &mut w_bar, 0.0);
                    self.params.accumulate_grad(*weight, &w_bar, &mut grad);
                    if let Some(b) = bias {
                        let mut b_bar = vec![0.0; fan_out];
                        for r in 0..node.rows {
                            b_bar
                                .iter_mut()
                                .zip(&out_bar[r * fan_out..(r + 1) * fan_out])
                                .for_each(|(a, o)| *a += o);
                        }
                        self.params.accumulate_grad(*b, &b_bar, &mut grad);
                    }
                    let x_bar = adj_slot(&mut adj, &self.nodes, *input);
                    gemm(cr, fan_out, fan_in, &out_bar, false, w_eff, true, x_bar, 1.0);
                }
                Op::Unary { input, grad: g } => {
                    let chans = node.chans;
                    let plane = node.plane();
                    let x_bar = adj_slot(&mut adj, &self.nodes, *input);
                    if chans == 1 {
                        for p in 0..plane {
                            x_bar[p] += out_bar[p] * g[p];
                        }
                    } else {
                        let mut ob = [0.0; MAX_CHANNELS];
                        let mut gj = [0.0; MAX_CHANNELS];
                        let mut xb = [0.0; MAX_CHANNELS];
                        for p in 0..plane {
                            for c in 0..chans {
                                ob[c] = out_bar[c * plane + p];
                                gj[c] = g[c * plane + p];
                                xb[c] = 0.0;
                            }
                            self.algebra.mul_adjoint(&ob[..chans], &gj[..chans], &mut xb[..chans]);
                            for c in 0..chans {
                                x_bar[c * plane + p] += xb[c];
                            }
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let chans = node.chans;
                    let (rows, width, plane) = (node.rows, node.width, node.plane());
                    let mut bars: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
                    for (slot, (this, other)) in [(a, b), (b, a)].into_iter().enumerate() {
                        let nt = &self.nodes[this.0];
                        let no = &self.nodes[other.0];
                        let mut this_bar = vec![0.0; nt.val.len()];
                        let tp = nt.plane();
                        let mut ob = [0.0; MAX_CHANNELS];
                        let mut oj = [0.0; MAX_CHANNELS];
                        let mut tb = [0.0; MAX_CHANNELS];
                        for r in 0..rows {
                            for j in 0..width {
                                let p = r * width + j;
                                let pt = if nt.rows == 1 { j } else { p };
                                let po = if no.rows == 1 { j } else { p };
                                if chans == 1 {
                                    this_bar[pt] += out_bar[p] * no.val[po];
                                    continue;
                                }
                                for c in 0..chans {
                                    ob[c] = out_bar[c * plane + p];
                                    tb[c] = 0.0;
                                }
                                gather(no, po, chans, &mut oj);
                                self.algebra.mul_adjoint(&ob[..chans], &oj[..chans], &mut tb[..chans]);
                                for c in 0..nt.chans {
                                    this_bar[c * tp + pt] += tb[c];
                                }
                            }
                        }
                        bars[slot] = this_bar;
                    }
                    let [a_bar, b_bar] = bars;
                    add_into(adj_slot(&mut adj, &self.nodes, a), &a_bar);
                    add_into(adj_slot(&mut adj, &self.nodes, b), &b_bar);
                }
                Op::Add { a, b } => {
                    let (rows, width, plane) = (node.rows, node.width, node.plane());
                    for src in [*a, *b] {
                        let n = &self.nodes[src.0];
                        let (np, nchans, nrows) = (n.plane(), n.chans, n.rows);
                        let s_bar = adj_slot(&mut adj, &self.nodes, src);
                        for c in 0..nchans {
                            for r in 0..rows {
                                let sr = if nrows == 1 { 0 } else { r };
                                for j in 0..width {
                                    s_bar[c * np + sr * width + j] += out_bar[c * plane + r * width + j];
                                }
                            }
                        }
                    }
                }
                Op::Concat { parts } => {
                    let (rows, width, plane) = (node.rows, node.width, node.plane());
                    let mut offset = 0;
                    for p in parts.clone() {
                        let n = &self.nodes[p.0];
                        let (np, nw, nchans) = (n.plane(), n.width, n.chans);
                        let s_bar = adj_slot(&mut adj, &self.nodes, p);
                        for c in 0..nchans {
                            for r in 0..rows {
                                let src = c * plane + r * width + offset;
                                add_into(&mut s_bar[c * np + r * nw..c * np + (r + 1) * nw], &out_bar[src..src + nw]);
                            }
                        }
                        offset += nw;
                    }
                }
                Op::Select { input, cols } => {
                    let (rows, width, plane) = (node.rows, node.width, node.plane());
                    let n = &self.nodes[input.0];
                    let (np, nw, nchans) = (n.plane(), n.width, n.chans);
                    let cols = cols.clone();
                    let s_bar = adj_slot(&mut adj, &self.nodes, *input);
                    for c in 0..nchans {
                        for r in 0..rows {
                            for (k, &col) in cols.iter().enumerate() {
                                s_bar[c * np + r * nw + col] += out_bar[c * plane + r * width + k];
                            }
                        }
                    }
                }
                Op::Extract { input, channel } => {
                    let n = &self.nodes[input.0];
                    let (np, nchans) = (n.plane(), n.chans);
                    let ch = *channel;
                    if ch < nchans {
                        let s_bar = adj_slot(&mut adj, &self.nodes, *input);
                        add_into(&mut s_bar[ch * np..(ch + 1) * np], &out_bar);
                    }
                }
                Op::SumRows { input } => {
                    let n = &self.nodes[input.0];
                    let (rows, width, np) = (n.rows, n.width, n.plane());
                    let chans = node.chans;
                    let s_bar = adj_slot(&mut adj, &self.nodes, *input);
                    for c in 0..chans {
                        for r in 0..rows {
                            add_into(
                                &mut s_bar[c * np + r * width..c * np + (r + 1) * width],
                                &out_bar[c * width..(c + 1) * width],
                            );
                        }
                    }
                }
                Op::SumCols { input } => {
                    let n = &self.nodes[input.0];
                    let (rows, width, np) = (n.rows, n.width, n.plane());
                    let chans = node.chans;
                    let s_bar = adj_slot(&mut adj, &self.nodes, *input);
                    for c in 0..chans {
                        for r in 0..rows {
                            let o = out_bar[c * rows + r];
                            s_bar[c * np + r * width..c * np + (r + 1) * width]
                                .iter_mut()
                                .for_each(|v| *v += o);
                        }
                    }
                }
                Op::Scale { input, factor } => {
                    let f = *factor;
                    let s_bar = adj_slot(&mut adj, &self.nodes, *input);
                    s_bar.iter_mut().zip(&out_bar).for_each(|(s, o)| *s += f * o);
                }
            }
        }
        Ok(grad)
    }
}

#[inline]
fn gather(n: &Node, p: usize, chans: usize, out: &mut [f64; MAX_CHANNELS]) {
    let plane = n.plane();
    for c in 0..chans {
        out[c] = if c < n.chans { n.val[c * plane + p] } else { 0.0 };
    }
}

fn adj_slot<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId) -> &'a mut [f64] {
    adj[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].val.len()])
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// `C = op(A) · op(B) + beta · C`, all row-major; `op(A)` is `m × k`, `op(B)` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::params::Constraint;

    fn store_with(values: &[(usize, usize, Vec<f64>, Option<Vec<Constraint>>)]) -> (ParamStore, Vec<BlockId>) {
        let mut store = ParamStore::new();
        let ids = values
            .iter()
            .enumerate()
            .map(|(i, (r, c, v, t))| {
                let id = store.add_block(format!("b{i}"), *r, *c, t.clone()).unwrap();
                store.slice_mut(id).copy_from_slice(v);
                id
            })
            .collect();
        (store, ids)
    }

    #[test]
    fn sigmoid_of_zero_affine_is_half() {
        let (store, ids) = store_with(&[(1, 1, vec![0.0], None), (1, 1, vec![0.0], None)]);
        let mut tape = Tape::new(&store, Algebra::scalar());
        let x = tape.input(3, 1, &[-4.0, 0.5, 7.0]).unwrap();
        let z = tape.affine(x, ids[0], Some(ids[1])).unwrap();
        let s = tape.unary(z, Activation::Sigmoid).unwrap();
        assert_eq!(tape.value(s), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn identity_affine_passes_input_through() {
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let (store, ids) = store_with(&[(3, 3, eye, None)]);
        let mut tape = Tape::new(&store, Algebra::scalar());
        let x = tape.input(1, 3, &[1.0, 2.0, 3.0]).unwrap();
        let y = tape.affine(x, ids[0], None).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn tanh_of_one() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store, Algebra::scalar());
        let x = tape.input(1, 1, &[1.0]).unwrap();
        let t = tape.unary(x, Activation::Tanh).unwrap();
        assert!((tape.value(t)[0] - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_tangent_at_zero() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store, Algebra::first_order(1).unwrap());
        let y = tape.input_seeded(1, 1, &[0.0], &[(0, &[1.0])]).unwrap();
        let s = tape.unary(y, Activation::Sigmoid).unwrap();
        assert_eq!(tape.channel(s, 1).unwrap(), &[0.25]);
    }

    #[test]
    fn non_finite_values_report_their_node() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store, Algebra::scalar());
        let x = tape.input(1, 1, &[0.0]).unwrap();
        let err = tape.unary(x, Activation::Reciprocal).unwrap_err();
        assert!(matches!(err, Error::NumericalFailure { node: NodeId(1) }));
    }

    #[test]
    fn squared_weight_gradient() {
        // loss = w_eff · 1 with w_eff = free², free = 3
        let (store, ids) = store_with(&[(1, 1, vec![3.0], Some(vec![Constraint::NonNeg]))]);
        let mut tape = Tape::new(&store, Algebra::scalar());
        let x = tape.input(1, 1, &[1.0]).unwrap();
        let y = tape.affine(x, ids[0], None).unwrap();
        assert_eq!(tape.value(y), &[9.0]);
        let grad = tape.backward_params(y, 1.0).unwrap();
        assert_eq!(grad, vec![6.0]);
        assert!(matches!(tape.backward_params(y, 1.0), Err(Error::TapeConsumed)));
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let (store, ids) = store_with(&[(2, 1, vec![0.3, -0.7], None), (1, 1, vec![0.1], None)]);
        let mut tape = Tape::new(&store, Algebra::scalar());
        let x = tape.input(1, 2, &[1.0, 2.0]).unwrap();
        let z = tape.affine(x, ids[0], Some(ids[1])).unwrap();
        let t = tape.unary(z, Activation::Tanh).unwrap();
        assert_eq!(tape.backward_params(t, 0.0).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn broadcast_division_by_single_row() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store, Algebra::first_order(1).unwrap());
        let y = tape.input_seeded(2, 1, &[1.0, 3.0], &[(0, &[1.0])]).unwrap();
        let d = tape.constant(1, 1, 2.0).unwrap();
        let q = tape.div(y, d).unwrap();
        assert_eq!(tape.value(q), &[0.5, 1.5]);
        assert_eq!(tape.channel(q, 1).unwrap(), &[0.5, 0.5]);
    }
}
