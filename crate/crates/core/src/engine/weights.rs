use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use super::graph::{param_shapes, Graph, LayerKind};
use super::{EngineError, Result, Tensor};
use crate::rng::seeded;

pub const MMW1_MAGIC: &[u8; 4] = b"MMW1";
const DTYPE_F32: u8 = 0;

/// Named weight tensors, keyed `"<node id>/<param>"`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, node: &str, param: &str) -> Result<&Tensor> {
        let key = format!("{node}/{param}");
        self.tensors.get(&key).ok_or(EngineError::MissingParam(key))
    }

    pub fn get_mut(&mut self, node: &str, param: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(&format!("{node}/{param}"))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Checks that every parameter the graph needs exists with the right shape.
    pub fn check_against(&self, graph: &Graph) -> Result<()> {
        for (name, shape) in param_shapes(graph)? {
            let t = self.tensors.get(&name).ok_or_else(|| EngineError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(EngineError::ShapeMismatch {
                    node: name,
                    detail: format!("expected {shape:?}, got {:?}", t.shape()),
                });
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            tensors: iter.into_iter().collect(),
        }
    }
}

pub fn write_weights<W: Write>(params: &ParamSet, mut w: W) -> Result<()> {
    w.write_all(MMW1_MAGIC)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&[DTYPE_F32])?;
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(EngineError::TruncatedFile)?;
        let s = self.buf.get(self.pos..end).ok_or(EngineError::TruncatedFile)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn read_weights<R: Read>(mut r: R) -> Result<ParamSet> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    let magic = c.take(4).map_err(|_| EngineError::BadMagic)?;
    if magic != MMW1_MAGIC {
        return Err(EngineError::BadMagic);
    }
    let count = c.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| EngineError::BadName)?.to_string();
        let rank = c.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let dtype = c.u8()?;
        if dtype != DTYPE_F32 {
            return Err(EngineError::UnknownDtype(dtype));
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or(EngineError::TruncatedFile)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

pub fn save_weights(path: &Path, params: &ParamSet) -> Result<()> {
    let mut buf = Vec::new();
    write_weights(params, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ParamSet> {
    read_weights(std::fs::File::open(path)?)
}

/// How untrained parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    /// Every value from `U(-limit, limit)`.
    Uniform { limit: f32 },
    /// Kernels from `U(-sqrt(6 / fan_in), +)`, biases from
    /// `U(-bias_limit, bias_limit)`, layer-norm scale 1 and shift 0.
    HeUniform { bias_limit: f32 },
    Zeros,
}

impl Default for ParamInit {
    fn default() -> Self {
        ParamInit::Uniform { limit: 0.05 }
    }
}

/// Draws every parameter of `graph`; names are visited in sorted order so
/// the result depends only on `seed`.
pub fn init_params(graph: &Graph, init: ParamInit, seed: u64) -> Result<ParamSet> {
    let shapes = param_shapes(graph)?;
    let mut rng = seeded(seed);
    let mut params = ParamSet::new();
    for (name, shape) in shapes {
        let (node_id, pname) = name.rsplit_once('/').expect("qualified name");
        let is_norm = matches!(graph.node(node_id).map(|n| &n.kind), Some(LayerKind::LayerNorm { .. }));
        let n: usize = shape.iter().product();
        let mut draw = |limit: f32| -> Vec<f32> {
            if limit <= 0.0 {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.random_range(-limit..limit)).collect()
            }
        };
        let data = match init {
            ParamInit::Zeros => vec![0.0; n],
            ParamInit::Uniform { limit } => draw(limit),
            ParamInit::HeUniform { bias_limit } => {
                if is_norm {
                    vec![if pname == "gamma" { 1.0 } else { 0.0 }; n]
                } else if shape.len() == 1 {
                    draw(bias_limit)
                } else {
                    let fan_in: usize = shape[..shape.len() - 1].iter().product();
                    draw((6.0 / fan_in.max(1) as f32).sqrt())
                }
            }
        };
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}
