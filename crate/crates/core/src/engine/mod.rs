//! From-scratch forward-pass engine.
//!
//! A model is a [`Graph`] of [`LayerNode`]s (topology and hyperparameters,
//! serialized as JSON) plus a [`ParamSet`] of named weight tensors (stored
//! in the MMW1 container). [`forward`] executes the graph in a deterministic
//! topological order and returns an [`ActivationTrace`] holding every node
//! output and the residual, concatenate, attention and pooling records the
//! relevance pass needs.
//!
//! Layout conventions: images are `(H, W, C)`, sequences `(T, F)`; conv
//! kernels are `(kh, kw, c_in, c_out)` / `(k, c_in, c_out)`; dense kernels
//! `(in, out)`; LSTM kernels hold gate blocks in `(i, f, c, o)` order.

mod graph;
pub mod ops;
mod tensor;
mod trace;
mod weights;

use thiserror::Error;

pub use graph::{describe, forward, infer_shapes, param_shapes, topological_order, Graph, GraphInput, Inputs, LayerKind, LayerNode};
pub use tensor::Tensor;
pub use trace::{ActivationTrace, AttentionRecord, ConcatRecord, PoolRecord, ResidualRecord};
pub use weights::{init_params, load_weights, read_weights, save_weights, write_weights, ParamInit, ParamSet, MMW1_MAGIC};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch at '{node}': {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("shape inference failed at '{node}': {detail}")]
    ShapeInference { node: String, detail: String },
    #[error("non-finite activation at '{0}'")]
    NonFiniteActivation(String),
    #[error("graph contains a cycle")]
    CycleDetected,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("missing parameter '{0}'")]
    MissingParam(String),
    #[error("missing graph input '{0}'")]
    MissingInput(String),
    #[error("bad magic: not an MMW1 file")]
    BadMagic,
    #[error("truncated weight file")]
    TruncatedFile,
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("weight name is not valid UTF-8")]
    BadName,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EngineError>;

pub(crate) fn shape_err(node: &str, detail: impl Into<String>) -> EngineError {
    EngineError::ShapeMismatch {
        node: node.to_string(),
        detail: detail.into(),
    }
}
