//! Per-layer relevance rules. Relevance is carried in `f64`, activations
//! and weights are read as recorded in the forward pass.

use crate::engine::ops::{resize_source_index, row_stats, ConvGeometry};
use crate::engine::{AttentionRecord, PoolRecord, Tensor};

use super::LrpMode;

/// `a / b`, or zero when `b` vanishes.
#[inline]
fn safe_div(a: f64, b: f64) -> f64 {
    if b.abs() < 1e-12 {
        0.0
    } else {
        a / b
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// LRP-ε through `z = x W + b` over the last axis.
pub fn lrp_dense(x: &Tensor, kernel: &Tensor, bias: &Tensor, r: &[f64], epsilon: f64) -> Vec<f64> {
    let (n_in, n_out) = (kernel.shape()[0], kernel.shape()[1]);
    let w = kernel.data();
    let mut out = vec![0.0; x.len()];
    for (row, (xr, rr)) in x.data().chunks(n_in).zip(r.chunks(n_out)).enumerate() {
        let mut s = vec![0.0; n_out];
        for (j, sj) in s.iter_mut().enumerate() {
            let z: f64 = bias.data()[j] as f64 + xr.iter().enumerate().map(|(i, &xi)| xi as f64 * w[i * n_out + j] as f64).sum::<f64>();
            *sj = rr[j] / (z + epsilon * sign(z));
        }
        for (i, &xi) in xr.iter().enumerate() {
            let back: f64 = (0..n_out).map(|j| w[i * n_out + j] as f64 * s[j]).sum();
            out[row * n_in + i] = xi as f64 * back;
        }
    }
    out
}

/// LRP-γ through a same-padded convolution. Weights are adjusted to
/// `(1 + γ) w⁺ + w⁻`; the denominator is `(1 + γ) z⁺ − z⁻` in the literal
/// mode and `(1 + γ) z⁺ + z⁻` (the adjusted pre-activation) otherwise.
pub fn lrp_conv(geo: &ConvGeometry, x: &[f32], kernel: &[f32], r: &[f64], gamma: f64, mode: LrpMode) -> Vec<f64> {
    let (pos, neg): (Vec<f64>, Vec<f64>) = kernel
        .iter()
        .map(|&w| {
            let w = w as f64;
            (w.max(0.0), w.min(0.0))
        })
        .unzip();
    let n_out = geo.h * geo.w * geo.c_out;
    let mut zp = vec![0.0; n_out];
    let mut zn = vec![0.0; n_out];
    let each_tap = |y: usize, xx: usize, f: &mut dyn FnMut(usize, usize)| {
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                if let Some((iy, ix)) = geo.source(y, xx, ky, kx) {
                    for ci in 0..geo.c_in {
                        f((iy * geo.w + ix) * geo.c_in + ci, geo.kernel_index(ky, kx, ci, 0));
                    }
                }
            }
        }
    };
    for y in 0..geo.h {
        for xx in 0..geo.w {
            let o = (y * geo.w + xx) * geo.c_out;
            each_tap(y, xx, &mut |xi, k0| {
                let xv = x[xi] as f64;
                if xv == 0.0 {
                    return;
                }
                for co in 0..geo.c_out {
                    zp[o + co] += xv * pos[k0 + co];
                    zn[o + co] += xv * neg[k0 + co];
                }
            });
        }
    }
    let s: Vec<f64> = (0..n_out)
        .map(|i| {
            let den = match mode {
                LrpMode::PaperLiteral => (1.0 + gamma) * zp[i] - zn[i],
                LrpMode::Conserving => (1.0 + gamma) * zp[i] + zn[i],
            };
            safe_div(r[i], den)
        })
        .collect();
    let mut back = vec![0.0; x.len()];
    for y in 0..geo.h {
        for xx in 0..geo.w {
            let o = (y * geo.w + xx) * geo.c_out;
            let so = &s[o..o + geo.c_out];
            if so.iter().all(|&v| v == 0.0) {
                continue;
            }
            each_tap(y, xx, &mut |xi, k0| {
                let acc: f64 = (0..geo.c_out).map(|co| ((1.0 + gamma) * pos[k0 + co] + neg[k0 + co]) * so[co]).sum();
                back[xi] += acc;
            });
        }
    }
    back.iter_mut().zip(x).for_each(|(b, &xv)| *b *= xv as f64);
    back
}

/// Winner-take-all; tied winners share equally.
pub fn lrp_pool(rec: &PoolRecord, r: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rec.input_shape.iter().product()];
    for (cell, &rv) in r.iter().enumerate().take(rec.cells()) {
        let winners = rec.winners(cell);
        let share = rv / winners.len() as f64;
        for &i in winners {
            out[i] += share;
        }
    }
    out
}

/// `R · max(0, x)` (literal) or `R · [x > 0]` (conserving).
pub fn lrp_relu(x: &[f32], r: &[f64], mode: LrpMode) -> Vec<f64> {
    x.iter()
        .zip(r)
        .map(|(&xv, &rv)| match mode {
            LrpMode::PaperLiteral => rv * xv.max(0.0) as f64,
            LrpMode::Conserving => {
                if xv > 0.0 {
                    rv
                } else {
                    0.0
                }
            }
        })
        .collect()
}

/// `γ_f · R / sqrt(σ² + ε)` per position (literal) or identity.
pub fn lrp_layer_norm(x: &Tensor, gamma: &Tensor, epsilon: f64, r: &[f64], mode: LrpMode) -> Vec<f64> {
    if mode == LrpMode::Conserving {
        return r.to_vec();
    }
    let f = x.last_dim();
    let stats = row_stats(x);
    r.chunks(f)
        .zip(&stats)
        .flat_map(|(row, &(_, var))| {
            let inv = 1.0 / (var + epsilon).sqrt();
            row.iter()
                .zip(gamma.data())
                .map(move |(&rv, &g)| g as f64 * rv * inv)
        })
        .collect()
}

/// Redistributes `(t, f)` relevance from query positions to key tokens by
/// the row-normalized attention weights, averaged over heads.
pub fn lrp_mha(rec: &AttentionRecord, r: &[f64], features: usize) -> Vec<f64> {
    let t = rec.seq_len;
    let mut out = vec![0.0; t * features];
    let head_share = 1.0 / rec.heads as f64;
    for h in 0..rec.heads {
        for q in 0..t {
            let row_sum: f64 = (0..t).map(|k| rec.weight(h, q, k) as f64).sum();
            let rq = &r[q * features..(q + 1) * features];
            for k in 0..t {
                let a = safe_div(rec.weight(h, q, k) as f64, row_sum) * head_share;
                if a == 0.0 {
                    continue;
                }
                for (o, &rv) in out[k * features..(k + 1) * features].iter_mut().zip(rq) {
                    *o += a * rv;
                }
            }
        }
    }
    out
}

/// Splits the relevance of `a + b` between its operands: equally in the
/// literal mode, in proportion to each operand's contribution otherwise
/// (equal split where both are zero).
pub fn lrp_add(a: &[f32], b: &[f32], r: &[f64], mode: LrpMode) -> (Vec<f64>, Vec<f64>) {
    match mode {
        LrpMode::PaperLiteral => (r.iter().map(|v| v / 2.0).collect(), r.iter().map(|v| v / 2.0).collect()),
        LrpMode::Conserving => a
            .iter()
            .zip(b)
            .zip(r)
            .map(|((&av, &bv), &rv)| {
                let (av, bv) = (av as f64, bv as f64);
                let z = av + bv;
                if z.abs() < 1e-12 {
                    (rv / 2.0, rv / 2.0)
                } else {
                    let ra = rv * av / z;
                    (ra, rv - ra)
                }
            })
            .unzip(),
    }
}

/// Feature-distribution weights `ŵ[f, h]` of an LSTM input kernel: the
/// absolute input weights of all four gates, normalized over features.
pub fn lstm_distribution(kernel: &Tensor) -> Vec<f64> {
    let (f, four_u) = (kernel.shape()[0], kernel.shape()[1]);
    let u = four_u / 4;
    let w = kernel.data();
    let mut dist = vec![0.0; f * u];
    for h in 0..u {
        let col: Vec<f64> = (0..f)
            .map(|fi| (0..4).map(|g| (w[fi * four_u + g * u + h] as f64).abs()).sum())
            .collect();
        let total: f64 = col.iter().sum();
        for fi in 0..f {
            dist[fi * u + h] = if total > 0.0 { col[fi] / total } else { 1.0 / f as f64 };
        }
    }
    dist
}

/// Maps hidden-unit relevance back onto input features per time step. A
/// final-state output spreads its relevance evenly over the `steps`.
pub fn lrp_lstm(kernel: &Tensor, r: &[f64], steps: usize, return_sequences: bool) -> Vec<f64> {
    let (f, u) = (kernel.shape()[0], kernel.shape()[1] / 4);
    let dist = lstm_distribution(kernel);
    let per_step: Vec<f64> = if return_sequences {
        r.to_vec()
    } else {
        (0..steps).flat_map(|_| r.iter().map(move |v| v / steps as f64)).collect()
    };
    let mut out = vec![0.0; steps * f];
    for t in 0..steps {
        let rt = &per_step[t * u..(t + 1) * u];
        for fi in 0..f {
            out[t * f + fi] = (0..u).map(|h| dist[fi * u + h] * rt[h]).sum();
        }
    }
    out
}

/// Splits relevance along `axis` into the recorded segments.
pub fn lrp_concat(r: &[f64], shape: &[usize], axis: usize, segments: &[usize]) -> Vec<Vec<f64>> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let total: usize = segments.iter().sum();
    let mut parts: Vec<Vec<f64>> = segments.iter().map(|&s| Vec::with_capacity(outer * s * inner)).collect();
    for o in 0..outer {
        let mut offset = 0;
        for (part, &seg) in parts.iter_mut().zip(segments) {
            let start = (o * total + offset) * inner;
            part.extend_from_slice(&r[start..start + seg * inner]);
            offset += seg;
        }
    }
    parts
}

/// Returns each resized cell's relevance to its nearest-neighbour source.
pub fn lrp_resize(r: &[f64], in_shape: &[usize], target: [usize; 2]) -> Vec<f64> {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let mut out = vec![0.0; h * w * c];
    for y in 0..target[0] {
        let sy = resize_source_index(y, h, target[0]);
        for x in 0..target[1] {
            let sx = resize_source_index(x, w, target[1]);
            for ch in 0..c {
                out[(sy * w + sx) * c + ch] += r[(y * target[1] + x) * c + ch];
            }
        }
    }
    out
}

/// Places `(f)` relevance on the last row of a `(t, f)` sequence.
pub fn lrp_select_last(r: &[f64], steps: usize) -> Vec<f64> {
    let f = r.len();
    let mut out = vec![0.0; steps * f];
    out[(steps - 1) * f..].copy_from_slice(r);
    out
}
