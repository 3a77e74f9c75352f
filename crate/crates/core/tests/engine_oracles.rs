use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulforge::engine::ops::{self, MhaWeights};
use rulforge::engine::Tensor;
use rulforge::reference::{self, max_rel_err};

const TOL: f64 = 1e-5;
const CASES: u64 = 100;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

#[test]
fn conv2d_matches_direct_loops_for_model_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, d) in [(5, 4), (3, 3), (3, 2), (2, 1), (1, 1)] {
        for _ in 0..CASES {
            let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let (ci, co) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let x = rand_tensor(&mut rng, &[h, w, ci]);
            let kern = rand_tensor(&mut rng, &[k, k, ci, co]);
            let b = rand_tensor(&mut rng, &[co]);
            let got = ops::conv2d(&x, &kern, &b, [d, d]).unwrap();
            let want = reference::conv2d(&x, &kern, &b, [d, d]);
            assert_eq!(got.shape(), &[h, w, co]);
            assert!(max_rel_err(got.data(), &want) <= TOL);
        }
    }
}

#[test]
fn conv1d_matches_direct_loops_for_model_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (k, d) in [(2, 2), (2, 1), (1, 1), (3, 2)] {
        for _ in 0..CASES {
            let t = rng.random_range(1..=8);
            let (ci, co) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let x = rand_tensor(&mut rng, &[t, ci]);
            let kern = rand_tensor(&mut rng, &[k, ci, co]);
            let b = rand_tensor(&mut rng, &[co]);
            let got = ops::conv1d(&x, &kern, &b, d).unwrap();
            assert!(max_rel_err(got.data(), &reference::conv1d(&x, &kern, &b, d)) <= TOL);
        }
    }
}

#[test]
fn maxpool_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..CASES {
        let (h, w, c) = (rng.random_range(3..=8), rng.random_range(3..=8), rng.random_range(1..=4));
        let p = [rng.random_range(1..=3), rng.random_range(1..=3)];
        let x = rand_tensor(&mut rng, &[h, w, c]);
        let (got, _) = ops::maxpool2d(&x, p).unwrap();
        assert!(max_rel_err(got.data(), &reference::maxpool2d(&x, p)) == 0.0);
    }
}

#[test]
fn dense_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..CASES {
        let (rows, n_in, n_out) = (rng.random_range(1..=5), rng.random_range(1..=8), rng.random_range(1..=8));
        let x = rand_tensor(&mut rng, &[rows, n_in]);
        let k = rand_tensor(&mut rng, &[n_in, n_out]);
        let b = rand_tensor(&mut rng, &[n_out]);
        let got = ops::dense(&x, &k, &b).unwrap();
        assert!(max_rel_err(got.data(), &reference::dense(&x, &k, &b)) <= TOL);
    }
}

#[test]
fn layer_norm_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..CASES {
        let (rows, f) = (rng.random_range(1..=6), rng.random_range(2..=8));
        let x = rand_tensor(&mut rng, &[rows, f]);
        let g = rand_tensor(&mut rng, &[f]);
        let b = rand_tensor(&mut rng, &[f]);
        let got = ops::layer_norm(&x, &g, &b, 1e-3).unwrap();
        assert!(max_rel_err(got.data(), &reference::layer_norm(&x, &g, &b, 1e-3)) <= TOL);
        // mean of the normalized values is beta when gamma = 1
        let ones = Tensor::filled(&[f], 1.0);
        let y = ops::layer_norm(&x, &ones, &b, 1e-3).unwrap();
        for row in y.data().chunks(f) {
            let centered: f64 = row.iter().zip(b.data()).map(|(v, bb)| (v - bb) as f64).sum::<f64>() / f as f64;
            assert!(centered.abs() < 1e-5);
        }
    }
}

#[test]
fn lstm_matches_gate_by_gate_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..CASES {
        let (t, f, u) = (rng.random_range(1..=8), rng.random_range(1..=5), rng.random_range(1..=6));
        let x = rand_tensor(&mut rng, &[t, f]);
        let k = rand_tensor(&mut rng, &[f, 4 * u]);
        let r = rand_tensor(&mut rng, &[u, 4 * u]);
        let b = rand_tensor(&mut rng, &[4 * u]);
        let want = reference::lstm(&x, &k, &r, &b);
        let seq = ops::lstm(&x, &k, &r, &b, true).unwrap();
        assert!(max_rel_err(seq.data(), &want) <= TOL);
        let last = ops::lstm(&x, &k, &r, &b, false).unwrap();
        assert!(max_rel_err(last.data(), &want[(t - 1) * u..]) <= TOL);
    }
}

#[test]
fn mha_matches_per_head_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..CASES {
        let (t, f) = (rng.random_range(1..=8), rng.random_range(1..=6));
        let (heads, dk) = (rng.random_range(1..=3), rng.random_range(1..=4));
        let inner = heads * dk;
        let x = rand_tensor(&mut rng, &[t, f]);
        let p: Vec<Tensor> = [
            vec![f, inner],
            vec![inner],
            vec![f, inner],
            vec![inner],
            vec![f, inner],
            vec![inner],
            vec![inner, f],
            vec![f],
        ]
        .iter()
        .map(|s| rand_tensor(&mut rng, s))
        .collect();
        let w = MhaWeights {
            query_kernel: &p[0],
            query_bias: &p[1],
            key_kernel: &p[2],
            key_bias: &p[3],
            value_kernel: &p[4],
            value_bias: &p[5],
            output_kernel: &p[6],
            output_bias: &p[7],
        };
        let (got, rec) = ops::mha(&x, &w, heads, dk).unwrap();
        let (want, weights) = reference::mha(&x, &p[0], &p[1], &p[2], &p[3], &p[4], &p[5], &p[6], &p[7], heads, dk);
        assert!(max_rel_err(got.data(), &want) <= TOL);
        assert!(max_rel_err(&rec.weights, &weights) <= TOL);
        for row in rec.weights.chunks(t) {
            assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn mha_degenerate_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (f, heads, dk) = (4, 2, 3);
    let inner = heads * dk;
    let p: Vec<Tensor> = [[f, inner], [1, inner], [f, inner], [1, inner], [f, inner], [1, inner], [inner, f], [1, f]]
        .iter()
        .map(|s| {
            let t = rand_tensor(&mut rng, s);
            if s[0] == 1 {
                t.reshape(&[s[1]]).unwrap()
            } else {
                t
            }
        })
        .collect();
    let w = MhaWeights {
        query_kernel: &p[0],
        query_bias: &p[1],
        key_kernel: &p[2],
        key_bias: &p[3],
        value_kernel: &p[4],
        value_bias: &p[5],
        output_kernel: &p[6],
        output_bias: &p[7],
    };
    let single = rand_tensor(&mut rng, &[1, f]);
    let (out, rec) = ops::mha(&single, &w, heads, dk).unwrap();
    assert!(rec.weights.iter().all(|&a| a == 1.0));
    let v = ops::dense(&single, &p[4], &p[5]).unwrap();
    let chain = ops::dense(&v, &p[6], &p[7]).unwrap();
    assert!(max_rel_err(out.data(), &chain.data().iter().map(|&x| x as f64).collect::<Vec<_>>()) <= TOL);

    let row: Vec<f32> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let same = Tensor::new(vec![5, f], row.repeat(5)).unwrap();
    let (_, rec) = ops::mha(&same, &w, heads, dk).unwrap();
    assert!(rec.weights.iter().all(|&a| (a - 0.2).abs() < 1e-6));
}
