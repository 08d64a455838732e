//! Constrained dense layers and MADE-style mask construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{gemm, Activation, BlockId, Constraint, NodeId, ParamStore, Tape};

#[inline]
pub fn nonneg_reparam(free: f64) -> f64 {
    Constraint::NonNeg.effective(free)
}

/// Dense layer `act(x · W + b)`; `W` is stored `in_dim × out_dim` with a
/// per-entry constraint map, the bias is always free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: BlockId,
    pub bias: BlockId,
    pub activation: Activation,
}

impl ConstrainedLinear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        tags: Option<Vec<Constraint>>,
        activation: Activation,
    ) -> Result<Self> {
        let weight = store.add_block(format!("{name}.w"), in_dim, out_dim, tags)?;
        let bias = store.add_block(format!("{name}.b"), 1, out_dim, None)?;
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
            activation,
        })
    }

    /// Layer whose first `free_rows` inputs have free weights and the rest non-negative.
    pub fn monotone(
        store: &mut ParamStore,
        name: &str,
        free_rows: usize,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let tags = (0..in_dim * out_dim)
            .map(|i| {
                if i / out_dim < free_rows {
                    Constraint::Free
                } else {
                    Constraint::NonNeg
                }
            })
            .collect();
        Self::new(store, name, in_dim, out_dim, Some(tags), activation)
    }

    /// Glorot-uniform weights, halved where non-negative, zero where masked; zero bias.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let limit = (6.0 / (self.in_dim + self.out_dim) as f64).sqrt();
        let block = store.block(self.weight).clone();
        for (i, w) in store.slice_mut(self.weight).iter_mut().enumerate() {
            let u: f64 = rng.random_range(-limit..limit);
            *w = match block.tag(i) {
                Constraint::Free => u,
                Constraint::NonNeg => 0.5 * u,
                Constraint::Zero => 0.0,
            };
        }
        store.slice_mut(self.bias).fill(0.0);
    }

    /// Weights uniform on `±scale` and biases on `±2·scale`, so unit
    /// breakpoints spread over the standardised input range.
    pub fn init_spread<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R, scale: f64) {
        let block = store.block(self.weight).clone();
        for (i, w) in store.slice_mut(self.weight).iter_mut().enumerate() {
            let u: f64 = rng.random_range(-scale..scale);
            *w = match block.tag(i) {
                Constraint::Free => u,
                Constraint::NonNeg => u.abs().sqrt(),
                Constraint::Zero => 0.0,
            };
        }
        for b in store.slice_mut(self.bias) {
            *b = rng.random_range(-2.0 * scale..2.0 * scale);
        }
    }

    pub fn record(&self, tape: &mut Tape<'_>, input: NodeId) -> Result<NodeId> {
        let z = tape.affine(input, self.weight, Some(self.bias))?;
        if self.activation == Activation::Identity {
            return Ok(z);
        }
        tape.unary(z, self.activation)
    }

    /// Applies the layer to a single input vector without a tape.
    pub fn apply(&self, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim {
            return Err(Error::shape(format!("input of length {}", self.in_dim), format!("{}", input.len())));
        }
        let w = store.effective(self.weight);
        let mut out = store.slice(self.bias).to_vec();
        gemm(1, self.in_dim, self.out_dim, input, false, &w, false, &mut out, 1.0);
        Ok(out.into_iter().map(|z| self.activation.value(z)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MadeMaskSet {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    /// `(D+K) × KM`, row-major.
    pub input: Vec<Constraint>,
    /// `KM × KM`.
    pub hidden: Vec<Constraint>,
    /// `KM × K`.
    pub output: Vec<Constraint>,
}

fn order_tag(k1: usize, k2: usize) -> Constraint {
    use std::cmp::Ordering::*;
    match k1.cmp(&k2) {
        Equal => Constraint::NonNeg,
        Less => Constraint::Free,
        Greater => Constraint::Zero,
    }
}

/// Hidden unit `k + mK` belongs to response `k`; response `k` may read units
/// of responses `≤ k`, monotonically only along its own chain.
pub fn build_made_masks(d: usize, k: usize, m: usize) -> Result<MadeMaskSet> {
    if k == 0 || m == 0 {
        return Err(Error::InvalidDim(format!("MADE masks need K ≥ 1 and M ≥ 1, got K={k}, M={m}")));
    }
    let width = k * m;
    let input = (0..(d + k) * width)
        .map(|i| {
            let (row, col) = (i / width, i % width);
            if row < d {
                Constraint::Free
            } else {
                order_tag(row - d, col % k)
            }
        })
        .collect();
    let hidden = (0..width * width)
        .map(|i| order_tag((i / width) % k, (i % width) % k))
        .collect();
    let output = (0..width * k).map(|i| order_tag((i / k) % k, i % k)).collect();
    Ok(MadeMaskSet {
        d,
        k,
        m,
        input,
        hidden,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use Constraint::*;

    #[test]
    fn reparam_squares() {
        assert_eq!(nonneg_reparam(3.0), 9.0);
        assert_eq!(nonneg_reparam(0.0), 0.0);
        assert_eq!(nonneg_reparam(-2.0), 4.0);
    }

    #[test]
    fn input_mask_for_one_covariate_two_responses() {
        let masks = build_made_masks(1, 2, 1).unwrap();
        assert_eq!(masks.input, vec![Free, Free, NonNeg, Free, Zero, NonNeg]);
    }

    #[test]
    fn hidden_mask_zeros_where_order_decreases() {
        let masks = build_made_masks(0, 2, 2).unwrap();
        let zeros: Vec<usize> = (0..16).filter(|&i| masks.hidden[i] == Zero).collect();
        // units 1 and 3 belong to response 1; units 0 and 2 to response 0
        assert_eq!(zeros, vec![4, 6, 12, 14]);
    }

    #[test]
    fn single_response_has_no_zeros() {
        for m in 1..5 {
            let masks = build_made_masks(3, 1, m).unwrap();
            assert!(!masks.input.iter().chain(&masks.hidden).chain(&masks.output).any(|&t| t == Zero));
        }
    }

    #[test]
    fn rejects_empty_dims() {
        assert!(matches!(build_made_masks(1, 0, 2), Err(Error::InvalidDim(_))));
        assert!(matches!(build_made_masks(1, 2, 0), Err(Error::InvalidDim(_))));
    }

    #[test]
    fn apply_matches_closed_forms() {
        let mut store = ParamStore::new();
        let layer = ConstrainedLinear::new(&mut store, "l", 1, 1, Some(vec![NonNeg]), Activation::Tanh).unwrap();
        store.slice_mut(layer.weight)[0] = 2.0;
        let out = layer.apply(&store, &[0.5]).unwrap();
        assert!((out[0] - 0.964_027_580_075_816_9).abs() < 1e-15);

        let sig = ConstrainedLinear::new(&mut store, "s", 3, 2, None, Activation::Sigmoid).unwrap();
        assert_eq!(sig.apply(&store, &[1.0, -4.0, 9.0]).unwrap(), vec![0.5, 0.5]);
        assert!(sig.apply(&store, &[1.0]).is_err());
    }

    #[test]
    fn init_respects_tags() {
        let mut store = ParamStore::new();
        let layer =
            ConstrainedLinear::new(&mut store, "l", 2, 2, Some(vec![Free, NonNeg, Zero, Free]), Activation::Identity)
                .unwrap();
        layer.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
        let w = store.slice(layer.weight);
        assert_eq!(w[2], 0.0);
        assert!(w[1].abs() <= 0.5 * (6.0f64 / 4.0).sqrt());
    }
}
