use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a stored free value maps onto the weight the network uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    Free,
    /// Effective weight is the square of the free value.
    NonNeg,
    /// Effective weight is fixed at zero.
    Zero,
}

impl Constraint {
    #[inline]
    pub fn effective(self, free: f64) -> f64 {
        match self {
            Constraint::Free => free,
            Constraint::NonNeg => free * free,
            Constraint::Zero => 0.0,
        }
    }

    /// d effective / d free.
    #[inline]
    pub fn slope(self, free: f64) -> f64 {
        match self {
            Constraint::Free => 1.0,
            Constraint::NonNeg => 2.0 * free,
            Constraint::Zero => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Per-entry constraint tags, row-major; `None` means every entry is free.
    pub tags: Option<Vec<Constraint>>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn tag(&self, i: usize) -> Constraint {
        self.tags.as_ref().map_or(Constraint::Free, |t| t[i])
    }
}

/// Flat array of free parameters plus the layout that carves it into blocks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    values: Vec<f64>,
    blocks: Vec<Block>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero-initialised block.
    pub fn add_block(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        tags: Option<Vec<Constraint>>,
    ) -> Result<BlockId> {
        if let Some(t) = &tags {
            if t.len() != rows * cols {
                return Err(Error::shape(
                    format!("{} constraint tags", rows * cols),
                    format!("{}", t.len()),
                ));
            }
        }
        let id = BlockId(self.blocks.len());
        let offset = self.values.len();
        self.values.resize(offset + rows * cols, 0.0);
        self.blocks.push(Block {
            name: name.into(),
            offset,
            rows,
            cols,
            tags,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::shape(
                format!("{} parameters", self.values.len()),
                format!("{}", values.len()),
            ));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.0]
    }

    pub fn find(&self, name: &str) -> Option<BlockId> {
        self.blocks.iter().position(|b| b.name == name).map(BlockId)
    }

    pub fn slice(&self, id: BlockId) -> &[f64] {
        let b = &self.blocks[id.0];
        &self.values[b.offset..b.offset + b.len()]
    }

    pub fn slice_mut(&mut self, id: BlockId) -> &mut [f64] {
        let b = &self.blocks[id.0];
        let range = b.offset..b.offset + b.len();
        &mut self.values[range]
    }

    /// Weights as the network sees them, after squaring and masking.
    pub fn effective(&self, id: BlockId) -> Vec<f64> {
        let block = &self.blocks[id.0];
        self.slice(id)
            .iter()
            .enumerate()
            .map(|(i, &w)| block.tag(i).effective(w))
            .collect()
    }

    /// Chains a gradient with respect to effective weights back to the free values.
    pub fn accumulate_grad(&self, id: BlockId, effective_grad: &[f64], grad: &mut [f64]) {
        let block = &self.blocks[id.0];
        let free = self.slice(id);
        let out = &mut grad[block.offset..block.offset + block.len()];
        match &block.tags {
            None => out
                .iter_mut()
                .zip(effective_grad)
                .for_each(|(o, g)| *o += g),
            Some(tags) => {
                for i in 0..out.len() {
                    out[i] += effective_grad[i] * tags[i].slope(free[i]);
                }
            }
        }
    }

    /// Indices (into the flat array) of entries tagged `Zero`.
    pub fn masked_indices(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .flat_map(|b| {
                (0..b.len())
                    .filter(move |&i| b.tag(i) == Constraint::Zero)
                    .map(move |i| b.offset + i)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_weights_follow_tags() {
        let mut store = ParamStore::new();
        let id = store
            .add_block(
                "w",
                1,
                3,
                Some(vec![Constraint::Free, Constraint::NonNeg, Constraint::Zero]),
            )
            .unwrap();
        store.slice_mut(id).copy_from_slice(&[-2.0, -2.0, 5.0]);
        assert_eq!(store.effective(id), vec![-2.0, 4.0, 0.0]);

        let mut grad = vec![0.0; 3];
        store.accumulate_grad(id, &[1.0, 1.0, 1.0], &mut grad);
        assert_eq!(grad, vec![1.0, -4.0, 0.0]);
        assert_eq!(store.masked_indices(), vec![2]);
    }

    #[test]
    fn tag_count_must_match_shape() {
        let mut store = ParamStore::new();
        assert!(store
            .add_block("w", 2, 2, Some(vec![Constraint::Free]))
            .is_err());
    }
}
