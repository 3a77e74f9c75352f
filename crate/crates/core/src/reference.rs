//! Slow, literal `f64` re-implementations used as test oracles. Nothing
//! here shares code with the production kernels.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::engine::Tensor;

fn f64s(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Untruncated CWT by direct summation over the whole window.
pub fn cwt_direct(values: &[f64], scales: &[f64], f_c: f64, l2: bool) -> Vec<Complex64> {
    let n = values.len();
    let mut out = Vec::with_capacity(scales.len() * n);
    for &s in scales {
        let norm = if l2 { 1.0 / s.sqrt() } else { 1.0 / s };
        for b in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &x) in values.iter().enumerate() {
                let t = (k as f64 - b as f64) / s;
                let env = (-t * t / 2.0).exp();
                let phase = 2.0 * PI * f_c * t;
                // conj(e^{iθ}) = cos θ - i sin θ
                acc += Complex64::new(x * env * phase.cos(), -x * env * phase.sin());
            }
            out.push(acc * norm);
        }
    }
    out
}

/// `(mean, variance, skewness, kurtosis)` with population normalization,
/// computed in two separate passes.
pub fn population_moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let skew = values.iter().map(|v| ((v - mean) / sd).powi(3)).sum::<f64>() / n;
    let kurt = values.iter().map(|v| ((v - mean) / sd).powi(4)).sum::<f64>() / n;
    (mean, var, skew, kurt)
}

/// Pixels of the segment from `(x1, y1)` to `(x2, y2)` obtained by rounding
/// the exact line at every step of the major axis; exact midpoints round
/// away from the start point.
pub fn line_by_rounding(x1: i64, y1: i64, x2: i64, y2: i64) -> Vec<(i64, i64)> {
    let (dx, dy) = (x2 - x1, y2 - y1);
    let steps = dx.abs().max(dy.abs());
    if steps == 0 {
        return vec![(x1, y1)];
    }
    let round_away = |num: i64, den: i64| -> i64 {
        // round(num / den) with ties away from zero, den > 0
        let q = (2 * num.abs() + den) / (2 * den);
        q * num.signum()
    };
    (0..=steps)
        .map(|i| {
            if dx.abs() >= dy.abs() {
                (x1 + i * dx.signum(), y1 + round_away(i * dy, steps))
            } else {
                (x1 + round_away(i * dx, steps), y1 + i * dy.signum())
            }
        })
        .collect()
}

/// Same-padded dilated 2-D cross-correlation on an explicitly padded copy.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: [usize; 2]) -> Vec<f64> {
    let (h, w, ci) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw, co) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[3]);
    let eff = [(kh - 1) * dilation[0] + 1, (kw - 1) * dilation[1] + 1];
    let before = [(eff[0] - 1) / 2, (eff[1] - 1) / 2];
    let (ph, pw) = (h + eff[0] - 1, w + eff[1] - 1);
    let x = f64s(input);
    let mut padded = vec![0.0; ph * pw * ci];
    for y in 0..h {
        for xx in 0..w {
            for c in 0..ci {
                padded[((y + before[0]) * pw + xx + before[1]) * ci + c] = x[(y * w + xx) * ci + c];
            }
        }
    }
    let k = f64s(kernel);
    let b = f64s(bias);
    let mut out = vec![0.0; h * w * co];
    for y in 0..h {
        for xx in 0..w {
            for o in 0..co {
                let mut acc = b[o];
                for a in 0..kh {
                    for bb in 0..kw {
                        for c in 0..ci {
                            let py = y + a * dilation[0];
                            let px = xx + bb * dilation[1];
                            acc += padded[(py * pw + px) * ci + c] * k[((a * kw + bb) * ci + c) * co + o];
                        }
                    }
                }
                out[(y * w + xx) * co + o] = acc;
            }
        }
    }
    out
}

pub fn conv1d(input: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Vec<f64> {
    let (t, ci) = (input.shape()[0], input.shape()[1]);
    let (k, co) = (kernel.shape()[0], kernel.shape()[2]);
    let as2d = input.reshape(&[1, t, ci]).expect("same size");
    let k2d = kernel.reshape(&[1, k, ci, co]).expect("same size");
    conv2d(&as2d, &k2d, bias, [1, dilation])
}

pub fn maxpool2d(input: &Tensor, pool: [usize; 2]) -> Vec<f64> {
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let x = f64s(input);
    let mut out = Vec::new();
    for oy in 0..h / pool[0] {
        for ox in 0..w / pool[1] {
            for ch in 0..c {
                let m = (0..pool[0])
                    .flat_map(|a| (0..pool[1]).map(move |b| (a, b)))
                    .map(|(a, b)| x[((oy * pool[0] + a) * w + ox * pool[1] + b) * c + ch])
                    .fold(f64::NEG_INFINITY, f64::max);
                out.push(m);
            }
        }
    }
    out
}

pub fn dense(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Vec<f64> {
    let (n_in, n_out) = (kernel.shape()[0], kernel.shape()[1]);
    let (x, k, b) = (f64s(input), f64s(kernel), f64s(bias));
    let rows = x.len() / n_in;
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        for o in 0..n_out {
            out.push(b[o] + (0..n_in).map(|i| x[r * n_in + i] * k[i * n_out + o]).sum::<f64>());
        }
    }
    out
}

pub fn layer_norm(input: &Tensor, gamma: &Tensor, beta: &Tensor, epsilon: f64) -> Vec<f64> {
    let f = input.last_dim();
    let (g, b) = (f64s(gamma), f64s(beta));
    f64s(input)
        .chunks(f)
        .flat_map(|row| {
            let mean = row.iter().sum::<f64>() / f as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f as f64;
            let g = g.clone();
            let b = b.clone();
            row.iter()
                .enumerate()
                .map(move |(i, v)| (v - mean) / (var + epsilon).sqrt() * g[i] + b[i])
                .collect::<Vec<_>>()
        })
        .collect()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Gate-by-gate LSTM recurrence; returns every hidden state `(t, units)`.
pub fn lstm(input: &Tensor, kernel: &Tensor, recurrent: &Tensor, bias: &Tensor) -> Vec<f64> {
    let (t_len, f) = (input.shape()[0], input.shape()[1]);
    let u = recurrent.shape()[0];
    let (x, k, r, b) = (f64s(input), f64s(kernel), f64s(recurrent), f64s(bias));
    let gate = |g: usize, j: usize, xt: &[f64], h: &[f64]| -> f64 {
        let col = g * u + j;
        b[col]
            + (0..f).map(|i| xt[i] * k[i * 4 * u + col]).sum::<f64>()
            + (0..u).map(|i| h[i] * r[i * 4 * u + col]).sum::<f64>()
    };
    let mut h = vec![0.0; u];
    let mut c = vec![0.0; u];
    let mut out = Vec::new();
    for t in 0..t_len {
        let xt = &x[t * f..(t + 1) * f];
        let mut nh = vec![0.0; u];
        for j in 0..u {
            let i_g = sigmoid(gate(0, j, xt, &h));
            let f_g = sigmoid(gate(1, j, xt, &h));
            let c_g = gate(2, j, xt, &h).tanh();
            let o_g = sigmoid(gate(3, j, xt, &h));
            c[j] = f_g * c[j] + i_g * c_g;
            nh[j] = o_g * c[j].tanh();
        }
        h = nh;
        out.extend_from_slice(&h);
    }
    out
}

/// Self-attention with separate per-head loops; returns `(output, weights)`
/// where weights are indexed `[head][query][key]`.
#[allow(clippy::too_many_arguments)]
pub fn mha(
    input: &Tensor,
    wq: &Tensor,
    bq: &Tensor,
    wk: &Tensor,
    bk: &Tensor,
    wv: &Tensor,
    bv: &Tensor,
    wo: &Tensor,
    bo: &Tensor,
    heads: usize,
    key_dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (t, f) = (input.shape()[0], input.shape()[1]);
    let inner = heads * key_dim;
    let q = dense(input, wq, bq);
    let k = dense(input, wk, bk);
    let v = dense(input, wv, bv);
    let mut weights = vec![0.0; heads * t * t];
    let mut ctx = vec![0.0; t * inner];
    for h in 0..heads {
        for i in 0..t {
            let logits: Vec<f64> = (0..t)
                .map(|j| {
                    (0..key_dim).map(|d| q[i * inner + h * key_dim + d] * k[j * inner + h * key_dim + d]).sum::<f64>()
                        / (key_dim as f64).sqrt()
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for j in 0..t {
                let a = logits[j].exp() / z;
                weights[(h * t + i) * t + j] = a;
                for d in 0..key_dim {
                    ctx[i * inner + h * key_dim + d] += a * v[j * inner + h * key_dim + d];
                }
            }
        }
    }
    let (wo, bo) = (f64s(wo), f64s(bo));
    let mut out = vec![0.0; t * f];
    for i in 0..t {
        for o in 0..f {
            out[i * f + o] = bo[o] + (0..inner).map(|c| ctx[i * inner + c] * wo[c * f + o]).sum::<f64>();
        }
    }
    (out, weights)
}

/// Largest `|a - b| / max(1, |b|)` over two buffers.
pub fn max_rel_err(actual: &[f32], expected: &[f64]) -> f64 {
    assert_eq!(actual.len(), expected.len());
    actual
        .iter()
        .zip(expected)
        .map(|(&a, &b)| (a as f64 - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}
