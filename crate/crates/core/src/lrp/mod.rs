//! Layer-wise relevance propagation over a recorded forward pass.
//!
//! [`explain`] walks the trace in reverse execution order. Every node hands
//! the relevance of its output to its inputs through the rule for its kind
//! (see [`rules`]); a node read by several consumers collects the sum of
//! what they return (in the literal mode a concatenate node averages
//! instead). What arrives at the graph inputs is the relevance map.

pub mod rules;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ops::{conv1d_geometry, conv2d_geometry};
use crate::engine::{ActivationTrace, EngineError, Graph, LayerKind, ParamSet, Tensor};
use crate::model::{IMAGE_INPUT, TF_INPUT};
use crate::tfr::FEATURE_NAMES;

#[derive(Debug, Error)]
pub enum LrpError {
    #[error("no trace record for '{0}'")]
    MissingTraceRecord(String),
    #[error("shape mismatch at '{node}': {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("invalid relevance config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub type Result<T> = std::result::Result<T, LrpError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrpMode {
    /// Rules exactly as stated, including the non-conserving layer-norm
    /// scaling, activation weighting and concat averaging.
    #[default]
    PaperLiteral,
    /// Identity layer-norm, mask activations, matching conv denominator and
    /// contribution-proportional residual split.
    Conserving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrpConfig {
    pub epsilon: f64,
    pub gamma: f64,
    pub mode: LrpMode,
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            gamma: 0.25,
            mode: LrpMode::PaperLiteral,
        }
    }
}

impl LrpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(LrpError::InvalidConfig("epsilon must be positive"));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(LrpError::InvalidConfig("gamma must be non-negative"));
        }
        Ok(())
    }
}

/// Σ R at one node's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRelevance {
    pub node: String,
    pub kind: String,
    pub sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    /// Relevance per graph input, shaped like that input.
    pub inputs: BTreeMap<String, Tensor>,
    /// One entry per executed node, in backward order.
    pub ledger: Vec<LayerRelevance>,
    pub output_relevance: f64,
}

impl RelevanceMap {
    pub fn image_relevance(&self) -> Option<&Tensor> {
        self.inputs.get(IMAGE_INPUT)
    }

    pub fn tf_relevance(&self) -> Option<&Tensor> {
        self.inputs.get(TF_INPUT)
    }

    /// Σ R over all input maps.
    pub fn input_total(&self) -> f64 {
        self.inputs.values().map(Tensor::sum).sum()
    }

    pub fn per_layer_sums(&self) -> BTreeMap<&str, f64> {
        self.ledger.iter().map(|l| (l.node.as_str(), l.sum)).collect()
    }

    pub fn ledger_json(&self) -> String {
        serde_json::to_string_pretty(&self.ledger).expect("ledger serializes")
    }
}

/// Explains a single-output trace, seeding the output with `output_relevance`.
pub fn explain(
    graph: &Graph,
    params: &ParamSet,
    trace: &ActivationTrace,
    output_relevance: f64,
    config: &LrpConfig,
) -> Result<RelevanceMap> {
    let out = trace
        .activation(&graph.output)
        .ok_or_else(|| LrpError::MissingTraceRecord(graph.output.clone()))?;
    if out.len() != 1 {
        return Err(LrpError::ShapeMismatch {
            node: graph.output.clone(),
            detail: format!("a scalar seed needs a single output, got {:?}", out.shape()),
        });
    }
    explain_with(graph, params, trace, vec![output_relevance], config)
}

/// Explains an arbitrary output relevance tensor.
pub fn explain_with_seed(
    graph: &Graph,
    params: &ParamSet,
    trace: &ActivationTrace,
    seed: &Tensor,
    config: &LrpConfig,
) -> Result<RelevanceMap> {
    let out = trace
        .activation(&graph.output)
        .ok_or_else(|| LrpError::MissingTraceRecord(graph.output.clone()))?;
    if out.shape() != seed.shape() {
        return Err(LrpError::ShapeMismatch {
            node: graph.output.clone(),
            detail: format!("seed {:?} vs output {:?}", seed.shape(), out.shape()),
        });
    }
    explain_with(graph, params, trace, seed.data().iter().map(|&v| v as f64).collect(), config)
}

fn explain_with(
    graph: &Graph,
    params: &ParamSet,
    trace: &ActivationTrace,
    seed: Vec<f64>,
    config: &LrpConfig,
) -> Result<RelevanceMap> {
    config.validate()?;
    let literal = config.mode == LrpMode::PaperLiteral;
    let seed_total: f64 = seed.iter().sum();

    // contributions[node] = relevance returned by each consumer
    let mut contributions: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    contributions.insert(graph.output.clone(), vec![seed]);
    let mut ledger = Vec::with_capacity(trace.order.len());

    for id in trace.order.iter().rev() {
        let node = graph
            .node(id)
            .ok_or_else(|| LrpError::ShapeMismatch {
                node: id.clone(),
                detail: "trace does not belong to this graph".into(),
            })?;
        let act = |name: &str| trace.activation(name).ok_or_else(|| LrpError::MissingTraceRecord(name.to_string()));
        let y = act(id)?;
        let r = merge(contributions.remove(id), y.len(), literal && matches!(node.kind, LayerKind::Concatenate { .. }));
        if r.len() != y.len() {
            return Err(LrpError::ShapeMismatch {
                node: id.clone(),
                detail: format!("{} relevance values for output {:?}", r.len(), y.shape()),
            });
        }
        ledger.push(LayerRelevance {
            node: id.clone(),
            kind: node.kind.name().to_string(),
            sum: r.iter().sum(),
        });

        let x = act(&node.inputs[0])?;
        let p = |name: &str| params.get(id, name);
        let back: Vec<Vec<f64>> = match &node.kind {
            LayerKind::Conv2d { dilation, .. } => {
                let k = p("kernel")?;
                let geo = conv2d_geometry(x, k, *dilation).map_err(|e| at(e, id))?;
                vec![rules::lrp_conv(&geo, x.data(), k.data(), &r, config.gamma, config.mode)]
            }
            LayerKind::Conv1d { dilation, .. } => {
                let k = p("kernel")?;
                let geo = conv1d_geometry(x, k, *dilation).map_err(|e| at(e, id))?;
                vec![rules::lrp_conv(&geo, x.data(), k.data(), &r, config.gamma, config.mode)]
            }
            LayerKind::Relu => vec![rules::lrp_relu(x.data(), &r, config.mode)],
            LayerKind::MaxPool2d { .. } | LayerKind::MaxPool1d { .. } => {
                let rec = trace.pools.get(id).ok_or_else(|| LrpError::MissingTraceRecord(id.clone()))?;
                vec![rules::lrp_pool(rec, &r)]
            }
            LayerKind::Dense { .. } => vec![rules::lrp_dense(x, p("kernel")?, p("bias")?, &r, config.epsilon)],
            LayerKind::Lstm { return_sequences, .. } => {
                vec![rules::lrp_lstm(p("kernel")?, &r, x.shape()[0], *return_sequences)]
            }
            LayerKind::LayerNorm { epsilon } => {
                vec![rules::lrp_layer_norm(x, p("gamma")?, *epsilon as f64, &r, config.mode)]
            }
            LayerKind::Mha { .. } => {
                let rec = trace.attention.get(id).ok_or_else(|| LrpError::MissingTraceRecord(id.clone()))?;
                vec![rules::lrp_mha(rec, &r, x.last_dim())]
            }
            LayerKind::Add => {
                let rec = trace.residuals.get(id).ok_or_else(|| LrpError::MissingTraceRecord(id.clone()))?;
                let (a, b) = rules::lrp_add(x.data(), rec.residual_input.data(), &r, config.mode);
                vec![a, b]
            }
            LayerKind::Concatenate { .. } => {
                let rec = trace.concats.get(id).ok_or_else(|| LrpError::MissingTraceRecord(id.clone()))?;
                rules::lrp_concat(&r, y.shape(), rec.axis, &rec.segments)
            }
            LayerKind::Reshape { .. } => vec![r],
            LayerKind::ResizeLambda { target } => vec![rules::lrp_resize(&r, x.shape(), *target)],
            LayerKind::SelectLast => vec![rules::lrp_select_last(&r, x.shape()[0])],
        };
        for (input, rel) in node.inputs.iter().zip(back) {
            contributions.entry(input.clone()).or_default().push(rel);
        }
    }

    let mut inputs = BTreeMap::new();
    for gi in &graph.inputs {
        let n: usize = gi.shape.iter().product();
        let r = merge(contributions.remove(&gi.name), n, false);
        let data: Vec<f32> = r.iter().map(|&v| v as f32).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFiniteActivation(gi.name.clone()).into());
        }
        inputs.insert(gi.name.clone(), Tensor::new(gi.shape.clone(), data)?);
    }
    Ok(RelevanceMap {
        inputs,
        ledger,
        output_relevance: seed_total,
    })
}

fn merge(parts: Option<Vec<Vec<f64>>>, len: usize, average: bool) -> Vec<f64> {
    let Some(parts) = parts else {
        return vec![0.0; len];
    };
    let n = parts.len();
    let mut it = parts.into_iter();
    let mut acc = it.next().unwrap_or_else(|| vec![0.0; len]);
    for p in it {
        acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
    }
    if average && n > 1 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    acc
}

fn at(e: EngineError, node: &str) -> LrpError {
    match e {
        EngineError::ShapeMismatch { detail, .. } => LrpError::ShapeMismatch {
            node: node.to_string(),
            detail,
        },
        other => other.into(),
    }
}

/// Grayscale heatmap of an `(h, w, 1)` map: `128 + 127 · R / max|R|`.
pub fn heatmap_pixels(relevance: &Tensor) -> (usize, usize, Vec<u8>) {
    let s = relevance.shape();
    let (h, w) = (s[0], s.get(1).copied().unwrap_or(1));
    let c = relevance.len() / (h * w).max(1);
    let m = relevance.max_abs() as f64;
    let px = (0..h * w)
        .map(|i| {
            let v: f64 = relevance.data()[i * c..(i + 1) * c].iter().map(|&v| v as f64).sum();
            let scaled = if m > 0.0 { 128.0 + 127.0 * v / m } else { 128.0 };
            scaled.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    (h, w, px)
}

/// `(T, 7)` feature relevance as CSV with a header row.
pub fn tf_relevance_csv(relevance: &Tensor) -> String {
    let mut s = format!("step,{}\n", FEATURE_NAMES.join(","));
    for (t, row) in relevance.data().chunks(relevance.last_dim()).enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&format!("{t},{}\n", cells.join(",")));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceSummary {
    pub output_relevance: f64,
    pub image_total: f64,
    pub tf_total: f64,
    pub per_feature: BTreeMap<String, f64>,
}

pub fn summarize(map: &RelevanceMap) -> RelevanceSummary {
    let mut per_feature = BTreeMap::new();
    if let Some(tf) = map.tf_relevance() {
        let f = tf.last_dim();
        for (i, name) in FEATURE_NAMES.iter().enumerate().take(f) {
            let total: f64 = tf.data().chunks(f).map(|row| row[i] as f64).sum();
            per_feature.insert(name.to_string(), total);
        }
    }
    RelevanceSummary {
        output_relevance: map.output_relevance,
        image_total: map.image_relevance().map(Tensor::sum).unwrap_or(0.0),
        tf_total: map.tf_relevance().map(Tensor::sum).unwrap_or(0.0),
        per_feature,
    }
}
