//! Layer kernels. Each function validates its own operand shapes and is
//! usable on its own; [`super::forward`] wires them through a graph.

use super::trace::{AttentionRecord, PoolRecord};
use super::{shape_err, Result, Tensor};

/// Leading zero padding for a "same" convolution along one axis.
pub fn same_pad_before(kernel: usize, dilation: usize) -> usize {
    ((kernel - 1) * dilation) / 2
}

/// Index arithmetic of a stride-1, same-padded, dilated 2-D convolution on
/// an `(h, w, c_in)` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub dh: usize,
    pub dw: usize,
}

impl ConvGeometry {
    pub fn pad_top(&self) -> usize {
        same_pad_before(self.kh, self.dh)
    }

    pub fn pad_left(&self) -> usize {
        same_pad_before(self.kw, self.dw)
    }

    /// Input coordinate read by tap `(ky, kx)` of output `(y, x)`, if inside.
    #[inline]
    pub fn source(&self, y: usize, x: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (y + ky * self.dh).checked_sub(self.pad_top())?;
        let ix = (x + kx * self.dw).checked_sub(self.pad_left())?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }

    #[inline]
    pub fn kernel_index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kw + kx) * self.c_in + ci) * self.c_out + co
    }
}

/// Views a 1-D `(t, c)` problem as a 2-D `(1, t, c)` one.
pub fn conv1d_geometry(input: &Tensor, kernel: &Tensor, dilation: usize) -> Result<ConvGeometry> {
    if input.rank() != 2 || kernel.rank() != 3 {
        return Err(shape_err("", format!(
            "conv1d expects (t, c) input and (k, c_in, c_out) kernel, got {:?} and {:?}",
            input.shape(),
            kernel.shape()
        )));
    }
    let (k, ci, co) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if input.shape()[1] != ci || k == 0 || dilation == 0 {
        return Err(shape_err("", format!(
            "conv1d input channels {} vs kernel {:?} (dilation {dilation})",
            input.shape()[1],
            kernel.shape()
        )));
    }
    Ok(ConvGeometry {
        h: 1,
        w: input.shape()[0],
        c_in: ci,
        c_out: co,
        kh: 1,
        kw: k,
        dh: 1,
        dw: dilation,
    })
}

pub fn conv2d_geometry(input: &Tensor, kernel: &Tensor, dilation: [usize; 2]) -> Result<ConvGeometry> {
    if input.rank() != 3 || kernel.rank() != 4 {
        return Err(shape_err("", format!(
            "conv2d expects (h, w, c) input and (kh, kw, c_in, c_out) kernel, got {:?} and {:?}",
            input.shape(),
            kernel.shape()
        )));
    }
    let ks = kernel.shape();
    if input.shape()[2] != ks[2] || ks[0] == 0 || ks[1] == 0 || dilation[0] == 0 || dilation[1] == 0 {
        return Err(shape_err("", format!(
            "conv2d input channels {} vs kernel {:?} (dilation {dilation:?})",
            input.shape()[2],
            ks
        )));
    }
    Ok(ConvGeometry {
        h: input.shape()[0],
        w: input.shape()[1],
        c_in: ks[2],
        c_out: ks[3],
        kh: ks[0],
        kw: ks[1],
        dh: dilation[0],
        dw: dilation[1],
    })
}

fn conv_with(geo: &ConvGeometry, input: &[f32], kernel: &[f32], bias: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; geo.h * geo.w * geo.c_out];
    for y in 0..geo.h {
        for x in 0..geo.w {
            let o = (y * geo.w + x) * geo.c_out;
            let acc = &mut out[o..o + geo.c_out];
            acc.copy_from_slice(bias);
            for ky in 0..geo.kh {
                for kx in 0..geo.kw {
                    let Some((iy, ix)) = geo.source(y, x, ky, kx) else {
                        continue;
                    };
                    let src = &input[(iy * geo.w + ix) * geo.c_in..][..geo.c_in];
                    for (ci, &xv) in src.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let k = &kernel[geo.kernel_index(ky, kx, ci, 0)..][..geo.c_out];
                        for (a, &w) in acc.iter_mut().zip(k) {
                            *a += xv * w;
                        }
                    }
                }
            }
        }
    }
    out
}

fn check_bias(bias: &Tensor, n: usize) -> Result<()> {
    if bias.shape() != [n] {
        return Err(shape_err("", format!("bias shape {:?}, expected [{n}]", bias.shape())));
    }
    Ok(())
}

/// Same-padded dilated cross-correlation on `(h, w, c_in)`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: [usize; 2]) -> Result<Tensor> {
    let geo = conv2d_geometry(input, kernel, dilation)?;
    check_bias(bias, geo.c_out)?;
    let out = conv_with(&geo, input.data(), kernel.data(), bias.data());
    Tensor::new(vec![geo.h, geo.w, geo.c_out], out)
}

/// Same-padded dilated cross-correlation on `(t, c_in)`.
pub fn conv1d(input: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    let geo = conv1d_geometry(input, kernel, dilation)?;
    check_bias(bias, geo.c_out)?;
    let out = conv_with(&geo, input.data(), kernel.data(), bias.data());
    Tensor::new(vec![geo.w, geo.c_out], out)
}

fn maxpool_hw(input: &Tensor, h: usize, w: usize, c: usize, ph: usize, pw: usize) -> (Vec<f32>, PoolRecord) {
    let (oh, ow) = (h / ph, w / pw);
    let data = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut starts = Vec::with_capacity(oh * ow * c + 1);
    let mut indices = Vec::with_capacity(oh * ow * c);
    starts.push(0);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..ph {
                    for dx in 0..pw {
                        let v = data[((oy * ph + dy) * w + ox * pw + dx) * c + ch];
                        best = best.max(v);
                    }
                }
                for dy in 0..ph {
                    for dx in 0..pw {
                        let idx = ((oy * ph + dy) * w + ox * pw + dx) * c + ch;
                        if data[idx] == best {
                            indices.push(idx);
                        }
                    }
                }
                starts.push(indices.len());
                out.push(best);
            }
        }
    }
    (
        out,
        PoolRecord {
            input_shape: input.shape().to_vec(),
            starts,
            indices,
        },
    )
}

/// Valid max pooling on `(h, w, c)` with stride equal to the pool size.
pub fn maxpool2d(input: &Tensor, pool: [usize; 2]) -> Result<(Tensor, PoolRecord)> {
    if input.rank() != 3 || pool[0] == 0 || pool[1] == 0 {
        return Err(shape_err("", format!("maxpool2d on {:?} with pool {pool:?}", input.shape())));
    }
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if pool[0] > h || pool[1] > w {
        return Err(shape_err("", format!("pool {pool:?} larger than input {:?}", input.shape())));
    }
    let (out, rec) = maxpool_hw(input, h, w, c, pool[0], pool[1]);
    Ok((Tensor::new(vec![h / pool[0], w / pool[1], c], out)?, rec))
}

/// Valid max pooling on `(t, c)` with stride equal to the pool size.
pub fn maxpool1d(input: &Tensor, pool: usize) -> Result<(Tensor, PoolRecord)> {
    if input.rank() != 2 || pool == 0 || pool > input.shape()[0] {
        return Err(shape_err("", format!("maxpool1d on {:?} with pool {pool}", input.shape())));
    }
    let (t, c) = (input.shape()[0], input.shape()[1]);
    let (out, rec) = maxpool_hw(input, 1, t, c, 1, pool);
    Ok((Tensor::new(vec![t / pool, c], out)?, rec))
}

/// `x W + b` over the last axis.
pub fn dense(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if kernel.rank() != 2 || input.last_dim() != kernel.shape()[0] {
        return Err(shape_err("", format!("dense input {:?} vs kernel {:?}", input.shape(), kernel.shape())));
    }
    let (n_in, n_out) = (kernel.shape()[0], kernel.shape()[1]);
    check_bias(bias, n_out)?;
    let rows = input.len() / n_in.max(1);
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        let x = &input.data()[r * n_in..(r + 1) * n_in];
        let mut acc = bias.data().to_vec();
        for (i, &xv) in x.iter().enumerate() {
            let w = &kernel.data()[i * n_out..(i + 1) * n_out];
            for (a, &wv) in acc.iter_mut().zip(w) {
                *a += xv * wv;
            }
        }
        out.extend(acc);
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = n_out;
    Tensor::new(shape, out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Single LSTM layer over a `(t, f)` sequence with zero initial state.
/// Gate blocks in kernel, recurrent kernel and bias are ordered
/// `(i, f, c, o)`.
pub fn lstm(
    input: &Tensor,
    kernel: &Tensor,
    recurrent: &Tensor,
    bias: &Tensor,
    return_sequences: bool,
) -> Result<Tensor> {
    if input.rank() != 2 || input.shape()[0] == 0 {
        return Err(shape_err("", format!("lstm expects non-empty (t, f) input, got {:?}", input.shape())));
    }
    let (steps, features) = (input.shape()[0], input.shape()[1]);
    if kernel.rank() != 2 || kernel.shape()[0] != features || !kernel.shape()[1].is_multiple_of(4) {
        return Err(shape_err("", format!("lstm kernel {:?} for {features} features", kernel.shape())));
    }
    let units = kernel.shape()[1] / 4;
    if recurrent.shape() != [units, 4 * units] {
        return Err(shape_err("", format!("lstm recurrent kernel {:?}", recurrent.shape())));
    }
    check_bias(bias, 4 * units)?;

    let mut h = vec![0.0f32; units];
    let mut c = vec![0.0f32; units];
    let mut seq = Vec::with_capacity(if return_sequences { steps * units } else { units });
    let mut z = vec![0.0f32; 4 * units];
    for t in 0..steps {
        z.copy_from_slice(bias.data());
        let x = &input.data()[t * features..(t + 1) * features];
        for (f, &xv) in x.iter().enumerate() {
            let row = &kernel.data()[f * 4 * units..(f + 1) * 4 * units];
            for (a, &w) in z.iter_mut().zip(row) {
                *a += xv * w;
            }
        }
        for (u, &hv) in h.iter().enumerate() {
            let row = &recurrent.data()[u * 4 * units..(u + 1) * 4 * units];
            for (a, &w) in z.iter_mut().zip(row) {
                *a += hv * w;
            }
        }
        for u in 0..units {
            let i = sigmoid(z[u]);
            let f = sigmoid(z[units + u]);
            let g = z[2 * units + u].tanh();
            let o = sigmoid(z[3 * units + u]);
            c[u] = f * c[u] + i * g;
            h[u] = o * c[u].tanh();
        }
        if return_sequences {
            seq.extend_from_slice(&h);
        }
    }
    if return_sequences {
        Tensor::new(vec![steps, units], seq)
    } else {
        Tensor::new(vec![units], h)
    }
}

/// Per-position mean and variance over the last axis.
pub fn row_stats(input: &Tensor) -> Vec<(f64, f64)> {
    let f = input.last_dim().max(1);
    input
        .data()
        .chunks(f)
        .map(|row| {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / f as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / f as f64;
            (mean, var)
        })
        .collect()
}

/// `(x - μ) / sqrt(σ² + ε) * γ + β` over the last axis.
pub fn layer_norm(input: &Tensor, gamma: &Tensor, beta: &Tensor, epsilon: f32) -> Result<Tensor> {
    let f = input.last_dim();
    if f == 0 || gamma.shape() != [f] || beta.shape() != [f] {
        return Err(shape_err("", format!(
            "layer_norm input {:?}, gamma {:?}, beta {:?}",
            input.shape(),
            gamma.shape(),
            beta.shape()
        )));
    }
    let stats = row_stats(input);
    let mut out = Vec::with_capacity(input.len());
    for (row, &(mean, var)) in input.data().chunks(f).zip(&stats) {
        let inv = 1.0 / (var + epsilon as f64).sqrt();
        for ((&x, &g), &b) in row.iter().zip(gamma.data()).zip(beta.data()) {
            out.push((((x as f64 - mean) * inv) as f32) * g + b);
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Projection weights of a self-attention layer. Query/key/value kernels
/// are `(f, heads * key_dim)`, the output kernel `(heads * key_dim, f)`.
#[derive(Debug, Clone, Copy)]
pub struct MhaWeights<'a> {
    pub query_kernel: &'a Tensor,
    pub query_bias: &'a Tensor,
    pub key_kernel: &'a Tensor,
    pub key_bias: &'a Tensor,
    pub value_kernel: &'a Tensor,
    pub value_bias: &'a Tensor,
    pub output_kernel: &'a Tensor,
    pub output_bias: &'a Tensor,
}

/// Multi-head scaled dot-product self-attention on a `(t, f)` sequence.
pub fn mha(input: &Tensor, weights: &MhaWeights<'_>, heads: usize, key_dim: usize) -> Result<(Tensor, AttentionRecord)> {
    if input.rank() != 2 || heads == 0 || key_dim == 0 {
        return Err(shape_err("", format!("mha expects (t, f) input, got {:?}", input.shape())));
    }
    let (t, f) = (input.shape()[0], input.shape()[1]);
    let inner = heads * key_dim;
    let q = dense(input, weights.query_kernel, weights.query_bias)?;
    let k = dense(input, weights.key_kernel, weights.key_bias)?;
    let v = dense(input, weights.value_kernel, weights.value_bias)?;
    if q.last_dim() != inner || k.last_dim() != inner || v.last_dim() != inner {
        return Err(shape_err("", format!("mha projections must have {inner} columns")));
    }
    if weights.output_kernel.shape() != [inner, f] {
        return Err(shape_err("", format!("mha output kernel {:?}", weights.output_kernel.shape())));
    }

    let scale = 1.0 / (key_dim as f32).sqrt();
    let mut attn = vec![0.0f32; heads * t * t];
    let mut context = vec![0.0f32; t * inner];
    for hd in 0..heads {
        let off = hd * key_dim;
        for qi in 0..t {
            let qrow = &q.data()[qi * inner + off..][..key_dim];
            let row = &mut attn[(hd * t + qi) * t..][..t];
            for (ki, a) in row.iter_mut().enumerate() {
                let krow = &k.data()[ki * inner + off..][..key_dim];
                *a = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f32>() * scale;
            }
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut total = 0.0f32;
            for a in row.iter_mut() {
                *a = (*a - max).exp();
                total += *a;
            }
            for a in row.iter_mut() {
                *a /= total;
            }
            let ctx = &mut context[qi * inner + off..][..key_dim];
            for (ki, &a) in row.iter().enumerate() {
                let vrow = &v.data()[ki * inner + off..][..key_dim];
                for (c, &vv) in ctx.iter_mut().zip(vrow) {
                    *c += a * vv;
                }
            }
        }
    }
    let context = Tensor::new(vec![t, inner], context)?;
    let out = dense(&context, weights.output_kernel, weights.output_bias)?;
    Ok((
        out,
        AttentionRecord {
            heads,
            seq_len: t,
            weights: attn,
        },
    ))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.add(b)
}

/// Concatenates along `axis`; returns the per-input extents along it.
pub fn concatenate(inputs: &[&Tensor], axis: usize) -> Result<(Tensor, Vec<usize>)> {
    let first = inputs.first().ok_or_else(|| shape_err("", "concatenate needs inputs"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(shape_err("", format!("axis {axis} out of range for rank {rank}")));
    }
    for t in inputs {
        let same = t.rank() == rank
            && t.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !same {
            return Err(shape_err("", format!("cannot concatenate {:?} with {:?} on axis {axis}", first.shape(), t.shape())));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let segments: Vec<usize> = inputs.iter().map(|t| t.shape()[axis]).collect();
    let total: usize = segments.iter().sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (t, &seg) in inputs.iter().zip(&segments) {
            data.extend_from_slice(&t.data()[o * seg * inner..(o + 1) * seg * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok((Tensor::new(shape, data)?, segments))
}

/// Nearest-neighbour source index (`floor(dst * in / out)`).
#[inline]
pub fn resize_source_index(dst: usize, in_len: usize, out_len: usize) -> usize {
    ((dst * in_len) / out_len).min(in_len - 1)
}

/// Nearest-neighbour spatial resize of an `(h, w, c)` tensor.
pub fn resize_nearest(input: &Tensor, target: [usize; 2]) -> Result<Tensor> {
    if input.rank() != 3 || target[0] == 0 || target[1] == 0 || input.is_empty() {
        return Err(shape_err("", format!("resize {:?} to {target:?}", input.shape())));
    }
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let mut out = Vec::with_capacity(target[0] * target[1] * c);
    for y in 0..target[0] {
        let sy = resize_source_index(y, h, target[0]);
        for x in 0..target[1] {
            let sx = resize_source_index(x, w, target[1]);
            out.extend_from_slice(&input.data()[(sy * w + sx) * c..][..c]);
        }
    }
    Tensor::new(vec![target[0], target[1], c], out)
}

/// Last row of a `(t, f)` sequence.
pub fn select_last(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 2 || input.shape()[0] == 0 {
        return Err(shape_err("", format!("select_last expects (t, f), got {:?}", input.shape())));
    }
    let f = input.shape()[1];
    Tensor::new(vec![f], input.data()[input.len() - f..].to_vec())
}
