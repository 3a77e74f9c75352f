use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ops::{self, MhaWeights};
use super::trace::{ActivationTrace, ConcatRecord, ResidualRecord};
use super::{EngineError, ParamSet, Result, Tensor};

/// Named input tensors for a forward pass.
pub type Inputs = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        filters: usize,
        kernel: [usize; 2],
        dilation: [usize; 2],
    },
    Conv1d {
        filters: usize,
        kernel: usize,
        dilation: usize,
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d { pool: [usize; 2] },
    #[serde(rename = "maxpool1d")]
    MaxPool1d { pool: usize },
    Dense { units: usize },
    Lstm { units: usize, return_sequences: bool },
    LayerNorm { epsilon: f32 },
    Mha { heads: usize, key_dim: usize },
    Add,
    Concatenate { axis: usize },
    Reshape { target: Vec<usize> },
    ResizeLambda { target: [usize; 2] },
    /// Last time step of a `(t, f)` sequence.
    SelectLast,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Conv1d { .. } => "conv1d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::MaxPool1d { .. } => "maxpool1d",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Lstm { .. } => "lstm",
            LayerKind::LayerNorm { .. } => "layer_norm",
            LayerKind::Mha { .. } => "mha",
            LayerKind::Add => "add",
            LayerKind::Concatenate { .. } => "concatenate",
            LayerKind::Reshape { .. } => "reshape",
            LayerKind::ResizeLambda { .. } => "resize_lambda",
            LayerKind::SelectLast => "select_last",
        }
    }

    /// Parameter names owned by this kind, in a fixed order.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            LayerKind::Conv2d { .. } | LayerKind::Conv1d { .. } | LayerKind::Dense { .. } => &["kernel", "bias"],
            LayerKind::Lstm { .. } => &["kernel", "recurrent_kernel", "bias"],
            LayerKind::LayerNorm { .. } => &["gamma", "beta"],
            LayerKind::Mha { .. } => &[
                "query_kernel",
                "query_bias",
                "key_kernel",
                "key_bias",
                "value_kernel",
                "value_bias",
                "output_kernel",
                "output_bias",
            ],
            _ => &[],
        }
    }

    fn arity_ok(&self, n: usize) -> bool {
        match self {
            LayerKind::Add => n == 2,
            LayerKind::Concatenate { .. } => n >= 2,
            _ => n == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

impl LayerNode {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        Self {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInput {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub inputs: Vec<GraphInput>,
    pub nodes: Vec<LayerNode>,
    pub output: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Graph {
    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn input_shape(&self, name: &str) -> Option<&[usize]> {
        self.inputs.iter().find(|i| i.name == name).map(|i| i.shape.as_slice())
    }

    /// Structural checks: unique ids, known predecessors, arity, acyclicity.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for i in &self.inputs {
            if !ids.insert(i.name.as_str()) {
                return Err(EngineError::InvalidGraph(format!("duplicate id '{}'", i.name)));
            }
        }
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(EngineError::InvalidGraph(format!("duplicate id '{}'", n.id)));
            }
        }
        for n in &self.nodes {
            if !n.kind.arity_ok(n.inputs.len()) {
                return Err(EngineError::InvalidGraph(format!(
                    "'{}' ({}) has {} inputs",
                    n.id,
                    n.kind.name(),
                    n.inputs.len()
                )));
            }
            if let Some(p) = n.inputs.iter().find(|p| !ids.contains(p.as_str())) {
                return Err(EngineError::InvalidGraph(format!("'{}' reads unknown '{p}'", n.id)));
            }
        }
        if !ids.contains(self.output.as_str()) {
            return Err(EngineError::InvalidGraph(format!("unknown output '{}'", self.output)));
        }
        topological_order(self).map(|_| ())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Graph = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Kahn's algorithm; among ready nodes the lexicographically smallest id
/// runs first.
pub fn topological_order(graph: &Graph) -> Result<Vec<String>> {
    let sources: BTreeSet<&str> = graph.inputs.iter().map(|i| i.name.as_str()).collect();
    let mut pending: BTreeMap<&str, usize> = BTreeMap::new();
    let mut consumers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for n in &graph.nodes {
        let deps = n.inputs.iter().filter(|p| !sources.contains(p.as_str())).count();
        pending.insert(n.id.as_str(), deps);
        for p in &n.inputs {
            consumers.entry(p.as_str()).or_default().push(n.id.as_str());
        }
    }
    let mut ready: BTreeSet<&str> = pending.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
    let mut order = Vec::with_capacity(graph.nodes.len());
    while let Some(id) = ready.pop_first() {
        order.push(id.to_string());
        for &c in consumers.get(id).map(Vec::as_slice).unwrap_or(&[]) {
            let d = pending.get_mut(c).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != graph.nodes.len() {
        return Err(EngineError::CycleDetected);
    }
    Ok(order)
}

fn infer_err(node: &str, detail: impl Into<String>) -> EngineError {
    EngineError::ShapeInference {
        node: node.to_string(),
        detail: detail.into(),
    }
}

fn pooled(n: usize, p: usize, node: &str) -> Result<usize> {
    if p == 0 || p > n {
        return Err(infer_err(node, format!("pool {p} on extent {n}")));
    }
    Ok(n / p)
}

fn infer_node(node: &LayerNode, ins: &[&[usize]]) -> Result<Vec<usize>> {
    let id = node.id.as_str();
    let x = ins[0];
    let need_rank = |r: usize| -> Result<()> {
        if x.len() != r {
            return Err(infer_err(id, format!("{} expects rank {r}, got {x:?}", node.kind.name())));
        }
        Ok(())
    };
    Ok(match &node.kind {
        LayerKind::Conv2d { filters, kernel, dilation } => {
            need_rank(3)?;
            if kernel.contains(&0) || dilation.contains(&0) {
                return Err(infer_err(id, "kernel and dilation must be positive"));
            }
            vec![x[0], x[1], *filters]
        }
        LayerKind::Conv1d { filters, kernel, dilation } => {
            need_rank(2)?;
            if *kernel == 0 || *dilation == 0 {
                return Err(infer_err(id, "kernel and dilation must be positive"));
            }
            vec![x[0], *filters]
        }
        LayerKind::Relu => x.to_vec(),
        LayerKind::MaxPool2d { pool } => {
            need_rank(3)?;
            vec![pooled(x[0], pool[0], id)?, pooled(x[1], pool[1], id)?, x[2]]
        }
        LayerKind::MaxPool1d { pool } => {
            need_rank(2)?;
            vec![pooled(x[0], *pool, id)?, x[1]]
        }
        LayerKind::Dense { units } => {
            if x.is_empty() {
                return Err(infer_err(id, "dense needs rank >= 1"));
            }
            let mut s = x.to_vec();
            *s.last_mut().expect("non-empty") = *units;
            s
        }
        LayerKind::Lstm { units, return_sequences } => {
            need_rank(2)?;
            if x[0] == 0 {
                return Err(infer_err(id, "lstm needs at least one time step"));
            }
            if *return_sequences {
                vec![x[0], *units]
            } else {
                vec![*units]
            }
        }
        LayerKind::LayerNorm { .. } => {
            if x.last().copied().unwrap_or(0) == 0 {
                return Err(infer_err(id, "layer_norm needs a non-empty last axis"));
            }
            x.to_vec()
        }
        LayerKind::Mha { heads, key_dim } => {
            need_rank(2)?;
            if *heads == 0 || *key_dim == 0 {
                return Err(infer_err(id, "heads and key_dim must be positive"));
            }
            x.to_vec()
        }
        LayerKind::Add => {
            if ins[0] != ins[1] {
                return Err(infer_err(id, format!("add operands {:?} and {:?}", ins[0], ins[1])));
            }
            x.to_vec()
        }
        LayerKind::Concatenate { axis } => {
            if *axis >= x.len() {
                return Err(infer_err(id, format!("axis {axis} out of range for {x:?}")));
            }
            let mut s = x.to_vec();
            s[*axis] = 0;
            for other in ins {
                let ok = other.len() == x.len()
                    && other.iter().zip(x).enumerate().all(|(i, (a, b))| i == *axis || a == b);
                if !ok {
                    return Err(infer_err(id, format!("cannot concatenate {x:?} with {other:?}")));
                }
                s[*axis] += other[*axis];
            }
            s
        }
        LayerKind::Reshape { target } => {
            let n: usize = x.iter().product();
            if target.iter().product::<usize>() != n {
                return Err(infer_err(id, format!("cannot reshape {x:?} to {target:?}")));
            }
            target.clone()
        }
        LayerKind::ResizeLambda { target } => {
            need_rank(3)?;
            if target.contains(&0) {
                return Err(infer_err(id, "resize target must be positive"));
            }
            vec![target[0], target[1], x[2]]
        }
        LayerKind::SelectLast => {
            need_rank(2)?;
            if x[0] == 0 {
                return Err(infer_err(id, "select_last on an empty sequence"));
            }
            vec![x[1]]
        }
    })
}

/// Output shape of every input and node.
pub fn infer_shapes(graph: &Graph) -> Result<BTreeMap<String, Vec<usize>>> {
    graph.validate()?;
    let mut shapes: BTreeMap<String, Vec<usize>> =
        graph.inputs.iter().map(|i| (i.name.clone(), i.shape.clone())).collect();
    for id in topological_order(graph)? {
        let node = graph.node(&id).expect("ordered ids exist");
        let ins: Vec<&[usize]> = node.inputs.iter().map(|p| shapes[p].as_slice()).collect();
        let out = infer_node(node, &ins)?;
        shapes.insert(id, out);
    }
    Ok(shapes)
}

/// Expected shape of every parameter, keyed `"<node id>/<param>"`.
pub fn param_shapes(graph: &Graph) -> Result<BTreeMap<String, Vec<usize>>> {
    let shapes = infer_shapes(graph)?;
    let mut out = BTreeMap::new();
    for node in &graph.nodes {
        let x = &shapes[&node.inputs[0]];
        let f = x.last().copied().unwrap_or(0);
        let mut put = |name: &str, shape: Vec<usize>| {
            out.insert(format!("{}/{name}", node.id), shape);
        };
        match &node.kind {
            LayerKind::Conv2d { filters, kernel, .. } => {
                put("kernel", vec![kernel[0], kernel[1], f, *filters]);
                put("bias", vec![*filters]);
            }
            LayerKind::Conv1d { filters, kernel, .. } => {
                put("kernel", vec![*kernel, f, *filters]);
                put("bias", vec![*filters]);
            }
            LayerKind::Dense { units } => {
                put("kernel", vec![f, *units]);
                put("bias", vec![*units]);
            }
            LayerKind::Lstm { units, .. } => {
                put("kernel", vec![f, 4 * units]);
                put("recurrent_kernel", vec![*units, 4 * units]);
                put("bias", vec![4 * units]);
            }
            LayerKind::LayerNorm { .. } => {
                put("gamma", vec![f]);
                put("beta", vec![f]);
            }
            LayerKind::Mha { heads, key_dim } => {
                let inner = heads * key_dim;
                for p in ["query", "key", "value"] {
                    put(&format!("{p}_kernel"), vec![f, inner]);
                    put(&format!("{p}_bias"), vec![inner]);
                }
                put("output_kernel", vec![inner, f]);
                put("output_bias", vec![f]);
            }
            _ => {}
        }
    }
    Ok(out)
}

fn at(node: &str) -> impl Fn(EngineError) -> EngineError + '_ {
    move |e| match e {
        EngineError::ShapeMismatch { node: n, detail } if n.is_empty() => EngineError::ShapeMismatch {
            node: node.to_string(),
            detail,
        },
        other => other,
    }
}

/// Runs the graph and records everything the relevance pass needs.
pub fn forward(graph: &Graph, params: &ParamSet, inputs: &Inputs) -> Result<ActivationTrace> {
    let order = topological_order(graph)?;
    let mut trace = ActivationTrace {
        output: graph.output.clone(),
        ..Default::default()
    };
    for gi in &graph.inputs {
        let t = inputs.get(&gi.name).ok_or_else(|| EngineError::MissingInput(gi.name.clone()))?;
        if t.shape() != gi.shape.as_slice() {
            return Err(EngineError::ShapeMismatch {
                node: gi.name.clone(),
                detail: format!("expected {:?}, got {:?}", gi.shape, t.shape()),
            });
        }
        if !t.is_finite() {
            return Err(EngineError::NonFiniteActivation(gi.name.clone()));
        }
        trace.activations.insert(gi.name.clone(), t.clone());
    }

    for id in &order {
        let node = graph.node(id).expect("ordered ids exist");
        let x = &trace.activations[&node.inputs[0]];
        let p = |name: &str| params.get(id, name);
        let out = match &node.kind {
            LayerKind::Conv2d { dilation, .. } => ops::conv2d(x, p("kernel")?, p("bias")?, *dilation),
            LayerKind::Conv1d { dilation, .. } => ops::conv1d(x, p("kernel")?, p("bias")?, *dilation),
            LayerKind::Relu => Ok(ops::relu(x)),
            LayerKind::MaxPool2d { pool } => ops::maxpool2d(x, *pool).map(|(y, rec)| {
                trace.pools.insert(id.clone(), rec);
                y
            }),
            LayerKind::MaxPool1d { pool } => ops::maxpool1d(x, *pool).map(|(y, rec)| {
                trace.pools.insert(id.clone(), rec);
                y
            }),
            LayerKind::Dense { .. } => ops::dense(x, p("kernel")?, p("bias")?),
            LayerKind::Lstm { return_sequences, .. } => {
                ops::lstm(x, p("kernel")?, p("recurrent_kernel")?, p("bias")?, *return_sequences)
            }
            LayerKind::LayerNorm { epsilon } => ops::layer_norm(x, p("gamma")?, p("beta")?, *epsilon),
            LayerKind::Mha { heads, key_dim } => {
                let w = MhaWeights {
                    query_kernel: p("query_kernel")?,
                    query_bias: p("query_bias")?,
                    key_kernel: p("key_kernel")?,
                    key_bias: p("key_bias")?,
                    value_kernel: p("value_kernel")?,
                    value_bias: p("value_bias")?,
                    output_kernel: p("output_kernel")?,
                    output_bias: p("output_bias")?,
                };
                ops::mha(x, &w, *heads, *key_dim).map(|(y, rec)| {
                    trace.attention.insert(id.clone(), rec);
                    y
                })
            }
            LayerKind::Add => {
                let r = &trace.activations[&node.inputs[1]];
                ops::add(x, r).inspect(|_| {
                    trace.residuals.insert(
                        id.clone(),
                        ResidualRecord {
                            main: node.inputs[0].clone(),
                            residual: node.inputs[1].clone(),
                            residual_input: r.clone(),
                        },
                    );
                })
            }
            LayerKind::Concatenate { axis } => {
                let parts: Vec<&Tensor> = node.inputs.iter().map(|p| &trace.activations[p]).collect();
                ops::concatenate(&parts, *axis).map(|(y, segments)| {
                    trace.concats.insert(
                        id.clone(),
                        ConcatRecord {
                            axis: *axis,
                            order: node.inputs.clone(),
                            segments,
                        },
                    );
                    y
                })
            }
            LayerKind::Reshape { target } => x.reshape(target),
            LayerKind::ResizeLambda { target } => ops::resize_nearest(x, *target),
            LayerKind::SelectLast => ops::select_last(x),
        }
        .map_err(at(id))?;
        if !out.is_finite() {
            return Err(EngineError::NonFiniteActivation(id.clone()));
        }
        trace.activations.insert(id.clone(), out);
    }
    trace.order = order;
    Ok(trace)
}

/// Human-readable shape program: one line per node.
pub fn describe(graph: &Graph) -> Result<String> {
    let shapes = infer_shapes(graph)?;
    let params = param_shapes(graph)?;
    let mut s = String::new();
    for i in &graph.inputs {
        let _ = writeln!(s, "{:<14} {:<13} {:?}", i.name, "input", i.shape);
    }
    let mut total = 0usize;
    for id in topological_order(graph)? {
        let node = graph.node(&id).expect("ordered ids exist");
        let count: usize = node
            .kind
            .param_names()
            .iter()
            .map(|p| params[&format!("{id}/{p}")].iter().product::<usize>())
            .sum();
        total += count;
        let _ = writeln!(
            s,
            "{:<14} {:<13} {:?} <- [{}] params={count}",
            id,
            node.kind.name(),
            shapes[&id],
            node.inputs.join(", ")
        );
    }
    let _ = writeln!(s, "output: {} {:?}", graph.output, shapes[&graph.output]);
    let _ = writeln!(s, "total params: {total}");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Graph {
        Graph {
            inputs: vec![GraphInput {
                name: "x".into(),
                shape: vec![4, 2],
            }],
            nodes: vec![
                LayerNode::new("b", LayerKind::Relu, &["a"]),
                LayerNode::new("a", LayerKind::Relu, &["x"]),
                LayerNode::new("c", LayerKind::Add, &["a", "b"]),
            ],
            output: "c".into(),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn order_respects_dependencies() {
        assert_eq!(topological_order(&chain()).unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn cycle_is_rejected() {
        let mut g = chain();
        g.nodes[1].inputs = vec!["b".into()];
        assert!(matches!(g.validate(), Err(EngineError::CycleDetected)));
    }

    #[test]
    fn arity_is_checked() {
        let mut g = chain();
        g.nodes[2].inputs.pop();
        assert!(matches!(g.validate(), Err(EngineError::InvalidGraph(_))));
    }

    #[test]
    fn relu_chain_on_zeros_is_zero() {
        let inputs = Inputs::from([("x".to_string(), Tensor::zeros(&[4, 2]))]);
        let trace = forward(&chain(), &ParamSet::default(), &inputs).unwrap();
        assert!(trace.output().data().iter().all(|&v| v == 0.0));
        assert_eq!(trace.residuals.len(), 1);
        assert_eq!(trace.activations.len(), 4);
    }

    #[test]
    fn json_round_trip() {
        let g = chain();
        let back = Graph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        assert!(g.to_json().unwrap().contains("\"kind\": \"relu\""));
    }

    #[test]
    fn wrong_input_shape_names_the_input() {
        let inputs = Inputs::from([("x".to_string(), Tensor::zeros(&[3, 2]))]);
        match forward(&chain(), &ParamSet::default(), &inputs) {
            Err(EngineError::ShapeMismatch { node, .. }) => assert_eq!(node, "x"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut t = Tensor::zeros(&[4, 2]);
        t.data_mut()[0] = f32::NAN;
        let inputs = Inputs::from([("x".to_string(), t)]);
        assert!(matches!(
            forward(&chain(), &ParamSet::default(), &inputs),
            Err(EngineError::NonFiniteActivation(_))
        ));
    }
}
