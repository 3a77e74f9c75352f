#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulforge::engine::{Inputs, Tensor};
use rulforge::model::{ModelConfig, IMAGE_INPUT, TF_INPUT};

/// A line-drawing-like image (one lit row per column) and smooth feature rows.
pub fn line_inputs(cfg: &ModelConfig, seed: u64) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [h, w, _] = cfg.image_shape;
    let mut image = Tensor::zeros(&[h, w, 1]);
    let mut row = h / 2;
    for col in 0..w {
        row = (row as i64 + rng.random_range(-3..=3)).clamp(0, h as i64 - 1) as usize;
        image.data_mut()[row * w + col] = 1.0;
    }
    let tf = Tensor::from_fn(&[cfg.tf_seq_len, cfg.tf_features], |_| rng.random_range(-1.0f32..1.0));
    Inputs::from([(IMAGE_INPUT.to_string(), image), (TF_INPUT.to_string(), tf)])
}

/// Dense `U(0, 1)` image and `U(-1, 1)` features.
pub fn uniform_inputs(cfg: &ModelConfig, seed: u64) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [h, w, _] = cfg.image_shape;
    let image = Tensor::from_fn(&[h, w, 1], |_| rng.random_range(0.0f32..1.0));
    let tf = Tensor::from_fn(&[cfg.tf_seq_len, cfg.tf_features], |_| rng.random_range(-1.0f32..1.0));
    Inputs::from([(IMAGE_INPUT.to_string(), image), (TF_INPUT.to_string(), tf)])
}
