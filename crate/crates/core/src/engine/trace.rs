use std::collections::BTreeMap;

use super::Tensor;

/// Winner positions of a max-pool, one CSR row per output cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRecord {
    pub input_shape: Vec<usize>,
    pub starts: Vec<usize>,
    pub indices: Vec<usize>,
}

impl PoolRecord {
    /// Flat input indices attaining the max of output cell `cell`.
    pub fn winners(&self, cell: usize) -> &[usize] {
        &self.indices[self.starts[cell]..self.starts[cell + 1]]
    }

    pub fn tie_count(&self, cell: usize) -> usize {
        self.starts[cell + 1] - self.starts[cell]
    }

    pub fn cells(&self) -> usize {
        self.starts.len() - 1
    }
}

/// Softmax weights of a self-attention layer, indexed `[head][query][key]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub heads: usize,
    pub seq_len: usize,
    pub weights: Vec<f32>,
}

impl AttentionRecord {
    pub fn weight(&self, head: usize, query: usize, key: usize) -> f32 {
        self.weights[(head * self.seq_len + query) * self.seq_len + key]
    }
}

/// Operands of an `add` node: `main` is its first input, `residual` the
/// skip branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRecord {
    pub main: String,
    pub residual: String,
    pub residual_input: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcatRecord {
    pub axis: usize,
    pub order: Vec<String>,
    pub segments: Vec<usize>,
}

/// Everything a forward pass leaves behind for the relevance pass.
#[derive(Debug, Clone, Default)]
pub struct ActivationTrace {
    /// Execution order (graph inputs excluded).
    pub order: Vec<String>,
    /// Outputs of graph inputs and of every executed node.
    pub activations: BTreeMap<String, Tensor>,
    pub residuals: BTreeMap<String, ResidualRecord>,
    pub concats: BTreeMap<String, ConcatRecord>,
    pub attention: BTreeMap<String, AttentionRecord>,
    pub pools: BTreeMap<String, PoolRecord>,
    pub output: String,
}

impl ActivationTrace {
    pub fn activation(&self, id: &str) -> Option<&Tensor> {
        self.activations.get(id)
    }

    pub fn output(&self) -> &Tensor {
        &self.activations[&self.output]
    }
}
