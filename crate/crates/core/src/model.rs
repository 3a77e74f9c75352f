//! The three-branch RUL network: a dilated residual CNN over the signal
//! image, a dilated residual 1-D CNN over the feature sequence, and an
//! LSTM/attention fusion head.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Sample;
use crate::engine::{self, EngineError, Graph, GraphInput, Inputs, LayerKind, LayerNode, ParamSet, Tensor};

pub const IMAGE_INPUT: &str = "image";
pub const TF_INPUT: &str = "tf";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// One convolution stage of a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub pool: usize,
}

const fn stage(filters: usize, kernel: usize, dilation: usize, pool: usize) -> ConvStage {
    ConvStage {
        filters,
        kernel,
        dilation,
        pool,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// `(height, width, channels)`.
    pub image_shape: [usize; 3],
    pub tf_seq_len: usize,
    pub tf_features: usize,
    pub l2_strength: f64,
    pub heads: usize,
    pub key_dim: usize,
    pub lstm_units: Vec<usize>,
    pub dense_units: Vec<usize>,
    /// Four stages, grouped into two residual blocks of two.
    pub image_stages: Vec<ConvStage>,
    pub tf_stages: Vec<ConvStage>,
    pub layer_norm_epsilon: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_shape: [64, 500, 1],
            tf_seq_len: 16,
            tf_features: 7,
            l2_strength: 0.01,
            heads: 8,
            key_dim: 64,
            lstm_units: vec![100, 64, 64],
            dense_units: vec![64, 32, 1],
            image_stages: vec![stage(32, 5, 4, 3), stage(32, 3, 3, 3), stage(64, 3, 2, 3), stage(64, 2, 1, 2)],
            tf_stages: vec![stage(32, 2, 2, 1), stage(32, 2, 2, 1), stage(64, 2, 1, 1), stage(64, 2, 1, 1)],
            layer_norm_epsilon: 1e-3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.image_shape.contains(&0) || self.tf_seq_len == 0 || self.tf_features == 0 {
            return bad("input dimensions must be positive");
        }
        for stages in [&self.image_stages, &self.tf_stages] {
            if stages.len() != 4 {
                return bad("each branch needs exactly four conv stages");
            }
            if stages.iter().any(|s| s.filters == 0 || s.kernel == 0 || s.dilation == 0 || s.pool == 0) {
                return bad("conv stage values must be positive");
            }
        }
        if self.image_stages[3].filters != self.tf_stages[3].filters {
            return bad("both branches must end with the same number of filters");
        }
        if self.lstm_units.is_empty() || self.lstm_units.contains(&0) {
            return bad("lstm_units must be non-empty and positive");
        }
        if self.dense_units.last() != Some(&1) || self.dense_units.contains(&0) {
            return bad("dense_units must be positive and end with a single unit");
        }
        if self.heads == 0 || self.key_dim == 0 {
            return bad("heads and key_dim must be positive");
        }
        if !(self.layer_norm_epsilon > 0.0) {
            return bad("layer_norm_epsilon must be positive");
        }
        Ok(())
    }

    /// Image-branch rows after reshaping the final feature map.
    pub fn image_tokens(&self) -> usize {
        let (mut h, mut w) = (self.image_shape[0], self.image_shape[1]);
        for s in &self.image_stages {
            h /= s.pool;
            w /= s.pool;
        }
        h * w
    }
}

struct Builder {
    nodes: Vec<LayerNode>,
}

impl Builder {
    fn push(&mut self, id: &str, kind: LayerKind, inputs: &[&str]) -> String {
        self.nodes.push(LayerNode::new(id, kind, inputs));
        id.to_string()
    }
}

fn pooled_extent(n: usize, stages: &[ConvStage]) -> usize {
    stages.iter().fold(n, |n, s| n / s.pool)
}

fn image_branch(b: &mut Builder, cfg: &ModelConfig) -> Result<String> {
    let [h, w, _] = cfg.image_shape;
    let mut x = IMAGE_INPUT.to_string();
    for block in 0..2 {
        let stages = &cfg.image_stages[2 * block..2 * block + 2];
        let block_in = x.clone();
        for (j, s) in stages.iter().enumerate() {
            let n = 2 * block + j + 1;
            x = b.push(
                &format!("img_conv{n}"),
                LayerKind::Conv2d {
                    filters: s.filters,
                    kernel: [s.kernel; 2],
                    dilation: [s.dilation; 2],
                },
                &[&x],
            );
            x = b.push(&format!("img_relu{n}"), LayerKind::Relu, &[&x]);
            x = b.push(&format!("img_pool{n}"), LayerKind::MaxPool2d { pool: [s.pool; 2] }, &[&x]);
        }
        let done = &cfg.image_stages[..2 * block + 2];
        let target = [pooled_extent(h, done), pooled_extent(w, done)];
        if target.contains(&0) {
            return Err(EngineError::ShapeInference {
                node: format!("img_pool{}", 2 * block + 2),
                detail: format!("image {h}x{w} pools to nothing"),
            }
            .into());
        }
        let k = block + 1;
        let r = b.push(
            &format!("img_res_conv{k}"),
            LayerKind::Conv2d {
                filters: stages[1].filters,
                kernel: [1, 1],
                dilation: [1, 1],
            },
            &[&block_in],
        );
        let r = b.push(&format!("img_res_resize{k}"), LayerKind::ResizeLambda { target }, &[&r]);
        x = b.push(&format!("img_add{k}"), LayerKind::Add, &[&x, &r]);
    }
    let filters = cfg.image_stages[3].filters;
    Ok(b.push(
        "img_reshape",
        LayerKind::Reshape {
            target: vec![cfg.image_tokens(), filters],
        },
        &[&x],
    ))
}

fn tf_branch(b: &mut Builder, cfg: &ModelConfig) -> String {
    let mut x = TF_INPUT.to_string();
    for block in 0..2 {
        let stages = &cfg.tf_stages[2 * block..2 * block + 2];
        let block_in = x.clone();
        for (j, s) in stages.iter().enumerate() {
            let n = 2 * block + j + 1;
            x = b.push(
                &format!("tf_conv{n}"),
                LayerKind::Conv1d {
                    filters: s.filters,
                    kernel: s.kernel,
                    dilation: s.dilation,
                },
                &[&x],
            );
            x = b.push(&format!("tf_relu{n}"), LayerKind::Relu, &[&x]);
            x = b.push(&format!("tf_pool{n}"), LayerKind::MaxPool1d { pool: s.pool }, &[&x]);
        }
        let k = block + 1;
        let r = b.push(
            &format!("tf_res_conv{k}"),
            LayerKind::Conv1d {
                filters: stages[1].filters,
                kernel: 1,
                dilation: 1,
            },
            &[&block_in],
        );
        x = b.push(&format!("tf_add{k}"), LayerKind::Add, &[&x, &r]);
    }
    x
}

/// Builds and shape-checks the network for `cfg`.
pub fn build_model(cfg: &ModelConfig) -> Result<Graph> {
    cfg.validate()?;
    let mut b = Builder { nodes: Vec::new() };
    let img = image_branch(&mut b, cfg)?;
    let tf = tf_branch(&mut b, cfg);
    let concat = b.push("concat", LayerKind::Concatenate { axis: 0 }, &[&img, &tf]);

    let mut x = concat.clone();
    for (i, &units) in cfg.lstm_units.iter().enumerate() {
        x = b.push(
            &format!("lstm{}", i + 1),
            LayerKind::Lstm {
                units,
                return_sequences: true,
            },
            &[&x],
        );
    }
    let last_units = *cfg.lstm_units.last().expect("validated");
    let skip = if last_units == cfg.image_stages[3].filters {
        concat
    } else {
        b.push("fusion_proj", LayerKind::Dense { units: last_units }, &[&concat])
    };
    x = b.push("fusion_add", LayerKind::Add, &[&x, &skip]);
    x = b.push(
        "layer_norm",
        LayerKind::LayerNorm {
            epsilon: cfg.layer_norm_epsilon,
        },
        &[&x],
    );
    x = b.push(
        "mha",
        LayerKind::Mha {
            heads: cfg.heads,
            key_dim: cfg.key_dim,
        },
        &[&x],
    );
    x = b.push("select_last", LayerKind::SelectLast, &[&x]);
    let n_dense = cfg.dense_units.len();
    for (i, &units) in cfg.dense_units.iter().enumerate() {
        if i + 1 == n_dense {
            x = b.push("dense_out", LayerKind::Dense { units }, &[&x]);
        } else {
            x = b.push(&format!("dense{}", i + 1), LayerKind::Dense { units }, &[&x]);
            x = b.push(&format!("dense{}_relu", i + 1), LayerKind::Relu, &[&x]);
        }
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("l2_strength".to_string(), serde_json::json!(cfg.l2_strength));
    metadata.insert("config".to_string(), serde_json::to_value(cfg).expect("config serializes"));
    let graph = Graph {
        inputs: vec![
            GraphInput {
                name: IMAGE_INPUT.to_string(),
                shape: cfg.image_shape.to_vec(),
            },
            GraphInput {
                name: TF_INPUT.to_string(),
                shape: vec![cfg.tf_seq_len, cfg.tf_features],
            },
        ],
        nodes: b.nodes,
        output: x,
        metadata,
    };
    engine::infer_shapes(&graph)?;
    Ok(graph)
}

/// Recovers the config a graph was built from, if recorded.
pub fn config_of(graph: &Graph) -> Option<ModelConfig> {
    graph.metadata.get("config").and_then(|v| serde_json::from_value(v.clone()).ok())
}

pub fn sample_inputs(sample: &Sample) -> Inputs {
    Inputs::from([
        (IMAGE_INPUT.to_string(), sample.image.clone()),
        (TF_INPUT.to_string(), sample.tf_sequence.clone()),
    ])
}

/// Raw network output for one sample (not clipped).
pub fn predict_rul(graph: &Graph, params: &ParamSet, sample: &Sample) -> Result<f64> {
    predict_inputs(graph, params, &sample_inputs(sample))
}

pub fn predict_inputs(graph: &Graph, params: &ParamSet, inputs: &Inputs) -> Result<f64> {
    let trace = engine::forward(graph, params, inputs)?;
    let out: &Tensor = trace.output();
    if out.len() != 1 {
        return Err(EngineError::ShapeMismatch {
            node: graph.output.clone(),
            detail: format!("expected a single output, got {:?}", out.shape()),
        }
        .into());
    }
    Ok(out.data()[0] as f64)
}

pub fn predict_batch(graph: &Graph, params: &ParamSet, samples: &[Sample]) -> Result<Vec<f64>> {
    samples.iter().map(|s| predict_rul(graph, params, s)).collect()
}

/// Reporting clip for raw outputs.
pub fn clip_rul(raw: f64) -> f64 {
    raw.clamp(0.0, 1.0)
}
