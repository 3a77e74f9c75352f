//! Sample assembly: model images, feature sequences, labels, augmentation,
//! noise injection and batching.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Tensor;
use crate::rasterizer::RasterImage;
use crate::rng::{derive_seed, seeded};
use crate::tfr::TfFeatureVector;

#[derive(Debug, Error, PartialEq)]
pub enum DatagenError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid noise spec: {0}")]
    InvalidNoise(&'static str),
    #[error("invalid label request: {0}")]
    InvalidLabels(&'static str),
    #[error("batch size must be at least 1")]
    BatchSizeZero,
    #[error("images, features and labels disagree in count ({images}, {features}, {labels})")]
    CountMismatch { images: usize, features: usize, labels: usize },
}

pub type Result<T> = std::result::Result<T, DatagenError>;

/// One model input pair with its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(height, width, 1)` in `[0, 1]`.
    pub image: Tensor,
    /// `(T, 7)` feature rows ending at `window_index`.
    pub tf_sequence: Tensor,
    pub label: f64,
    pub window_index: usize,
}

/// Per-window seed derived from a master seed.
pub fn window_seed(master: u64, window_index: usize) -> u64 {
    derive_seed(master, window_index as u64)
}

/// Halves the width by averaging column pairs and maps 255 to 1.0.
pub fn to_model_image(raw: &RasterImage) -> Result<Tensor> {
    let (h, w) = (raw.height(), raw.width());
    if w == 0 || h == 0 || w % 2 != 0 {
        return Err(DatagenError::DimensionMismatch(format!("cannot halve a {h}x{w} image")));
    }
    let half = w / 2;
    let px = raw.pixels();
    let data = (0..h * half)
        .map(|i| {
            let (r, c) = (i / half, i % half);
            let a = px[r * w + 2 * c] as f32;
            let b = px[r * w + 2 * c + 1] as f32;
            (a + b) / (2.0 * 255.0)
        })
        .collect();
    Ok(Tensor::new(vec![h, half, 1], data).expect("size computed above"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    #[default]
    Off,
    /// Applied with probability 0.5.
    Random,
    Forced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AugmentFlags {
    pub flip: AugmentMode,
    pub noise: AugmentMode,
}

pub const AUGMENT_PROBABILITY: f64 = 0.5;
pub const AUGMENT_NOISE_SIGMA: f64 = 0.01;

fn mirror_width(image: &Tensor) -> Tensor {
    let s = image.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            out.extend_from_slice(&src[(y * w + x) * c..][..c]);
        }
    }
    Tensor::new(s.to_vec(), out).expect("same size")
}

/// Training-time augmentation of an `(h, w, c)` image.
pub fn augment(image: &Tensor, flags: AugmentFlags, seed: u64) -> Result<Tensor> {
    if image.rank() != 3 {
        return Err(DatagenError::DimensionMismatch(format!("augment expects (h, w, c), got {:?}", image.shape())));
    }
    let mut rng = seeded(seed);
    let mut decide = |mode: AugmentMode| match mode {
        AugmentMode::Off => false,
        AugmentMode::Forced => true,
        AugmentMode::Random => rng.random_bool(AUGMENT_PROBABILITY),
    };
    let flip = decide(flags.flip);
    let noise = decide(flags.noise);
    let mut out = if flip { mirror_width(image) } else { image.clone() };
    if noise {
        let normal = Normal::new(0.0, AUGMENT_NOISE_SIGMA).expect("positive sigma");
        for v in out.data_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LabelMode {
    Linear,
    /// Flat at 1 until `knee` of the way through, then linear to 0.
    Piecewise { knee: f64 },
}

pub const DEFAULT_KNEE: f64 = 0.5;

/// Normalized RUL targets for `n` consecutive windows.
pub fn gen_labels(n: usize, mode: LabelMode) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(DatagenError::InvalidLabels("need at least two windows"));
    }
    let last = (n - 1) as f64;
    match mode {
        LabelMode::Linear => Ok((0..n).map(|i| 1.0 - i as f64 / last).collect()),
        LabelMode::Piecewise { knee } => {
            if !(knee > 0.0 && knee < 1.0) {
                return Err(DatagenError::InvalidLabels("knee fraction must lie in (0, 1)"));
            }
            let k = (knee * last).floor() as usize;
            let span = (n - 1 - k) as f64;
            Ok((0..n)
                .map(|i| if i < k { 1.0 } else { (n - 1 - i) as f64 / span })
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Uniform { low: f64, high: f64 },
    Gaussian { mu: f64, sigma: f64 },
    SaltPepper { p_salt: f64, p_pepper: f64 },
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Uniform { .. } => "uniform",
            NoiseKind::Gaussian { .. } => "gaussian",
            NoiseKind::SaltPepper { .. } => "salt_pepper",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub seed: u64,
    /// Re-clip the result to `[0, 1]` (image data).
    #[serde(default)]
    pub clip: bool,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        Self { kind, seed, clip: false }
    }

    pub fn clipped(mut self) -> Self {
        self.clip = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NoiseKind::Uniform { low, high } if !(low < high) => Err(DatagenError::InvalidNoise("low must be below high")),
            NoiseKind::Gaussian { mu, sigma } if !(sigma >= 0.0) || !mu.is_finite() || !sigma.is_finite() => {
                Err(DatagenError::InvalidNoise("sigma must be finite and non-negative"))
            }
            NoiseKind::SaltPepper { p_salt, p_pepper }
                if !(p_salt >= 0.0 && p_pepper >= 0.0 && p_salt + p_pepper <= 1.0) =>
            {
                Err(DatagenError::InvalidNoise("salt and pepper probabilities must be in [0, 1] and sum to at most 1"))
            }
            _ => Ok(()),
        }
    }
}

/// Adds seeded noise to every element. Salt and pepper replace an element
/// with the data's own max and min.
pub fn inject_noise(data: &[f64], spec: &NoiseSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let mut out: Vec<f64> = match spec.kind {
        NoiseKind::Uniform { low, high } => data.iter().map(|&v| v + rng.random_range(low..high)).collect(),
        NoiseKind::Gaussian { mu, sigma } => {
            let normal = Normal::new(mu, sigma).expect("validated");
            data.iter().map(|&v| v + normal.sample(&mut rng)).collect()
        }
        NoiseKind::SaltPepper { p_salt, p_pepper } => {
            let (lo, hi) = data
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            data.iter()
                .map(|&v| {
                    let u: f64 = rng.random();
                    if u < p_salt {
                        hi
                    } else if u < p_salt + p_pepper {
                        lo
                    } else {
                        v
                    }
                })
                .collect()
        }
    };
    if spec.clip {
        out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    Ok(out)
}

pub fn inject_noise_tensor(t: &Tensor, spec: &NoiseSpec) -> Result<Tensor> {
    let values: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
    let noisy = inject_noise(&values, spec)?;
    Ok(Tensor::new(t.shape().to_vec(), noisy.into_iter().map(|v| v as f32).collect()).expect("same size"))
}

/// `(t, 7)` feature rows for the `t` windows ending at `end`; windows
/// before the first are filled by repeating it.
pub fn tf_sequence(features: &[TfFeatureVector], end: usize, t: usize) -> Result<Tensor> {
    if end >= features.len() || t == 0 {
        return Err(DatagenError::DimensionMismatch(format!(
            "sequence of {t} ending at window {end} of {}",
            features.len()
        )));
    }
    let mut data = Vec::with_capacity(t * 7);
    for k in 0..t {
        let idx = (end + k + 1).saturating_sub(t);
        data.extend(features[idx].to_array().iter().map(|&v| v as f32));
    }
    Ok(Tensor::new(vec![t, 7], data).expect("size computed above"))
}

/// Pairs each window's image with the feature sequence ending at it.
pub fn assemble_samples(
    images: Vec<Tensor>,
    features: &[TfFeatureVector],
    labels: &[f64],
    seq_len: usize,
) -> Result<Vec<Sample>> {
    if images.len() != features.len() || images.len() != labels.len() {
        return Err(DatagenError::CountMismatch {
            images: images.len(),
            features: features.len(),
            labels: labels.len(),
        });
    }
    images
        .into_iter()
        .enumerate()
        .map(|(i, image)| {
            Ok(Sample {
                image,
                tf_sequence: tf_sequence(features, i, seq_len)?,
                label: labels[i],
                window_index: i,
            })
        })
        .collect()
}

/// Sequential batches; the last one may be short.
pub fn make_batches<T>(items: &[T], batch_size: usize) -> Result<Vec<&[T]>> {
    if batch_size == 0 {
        return Err(DatagenError::BatchSizeZero);
    }
    Ok(items.chunks(batch_size).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(width: usize, mut f: impl FnMut(usize, usize) -> u8) -> RasterImage {
        let mut img = RasterImage::zeros(64, width, 0);
        for r in 0..64 {
            for c in 0..width {
                img.set(r, c, f(r, c));
            }
        }
        img
    }

    #[test]
    fn model_image_examples() {
        let t = to_model_image(&raw(1000, |_, _| 0)).unwrap();
        assert_eq!(t.shape(), &[64, 500, 1]);
        assert!(t.data().iter().all(|&v| v == 0.0));
        let t = to_model_image(&raw(1000, |_, _| 255)).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));
        let t = to_model_image(&raw(1000, |_, c| if c % 2 == 0 { 255 } else { 0 })).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.5));
        assert!(to_model_image(&raw(999, |_, _| 0)).is_err());
    }

    #[test]
    fn augment_off_is_identity_and_flip_is_involution() {
        let img = Tensor::from_fn(&[4, 6, 1], |i| (i % 5) as f32 / 5.0);
        assert_eq!(augment(&img, AugmentFlags::default(), 9).unwrap(), img);
        let flip = AugmentFlags {
            flip: AugmentMode::Forced,
            noise: AugmentMode::Off,
        };
        let once = augment(&img, flip, 1).unwrap();
        assert_ne!(once, img);
        assert_eq!(augment(&once, flip, 2).unwrap(), img);
    }

    #[test]
    fn augment_is_seeded() {
        let img = Tensor::filled(&[8, 8, 1], 0.5);
        let flags = AugmentFlags {
            flip: AugmentMode::Random,
            noise: AugmentMode::Forced,
        };
        let a = augment(&img, flags, 77).unwrap();
        assert_eq!(a, augment(&img, flags, 77).unwrap());
        assert_ne!(a, augment(&img, flags, 78).unwrap());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn label_examples() {
        assert_eq!(gen_labels(3, LabelMode::Linear).unwrap(), vec![1.0, 0.5, 0.0]);
        assert_eq!(
            gen_labels(5, LabelMode::Piecewise { knee: 0.5 }).unwrap(),
            vec![1.0, 1.0, 1.0, 0.5, 0.0]
        );
        assert!(gen_labels(1, LabelMode::Linear).is_err());
        assert!(gen_labels(4, LabelMode::Piecewise { knee: 1.0 }).is_err());
    }

    #[test]
    fn noise_examples() {
        let data: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let same = inject_noise(&data, &NoiseSpec::new(NoiseKind::Gaussian { mu: 0.0, sigma: 0.0 }, 3)).unwrap();
        assert_eq!(same, data);
        let salted = inject_noise(&data, &NoiseSpec::new(NoiseKind::SaltPepper { p_salt: 1.0, p_pepper: 0.0 }, 3)).unwrap();
        assert!(salted.iter().all(|&v| v == 0.99));
        assert!(NoiseSpec::new(NoiseKind::Uniform { low: 0.1, high: 0.1 }, 0).validate().is_err());
        assert!(NoiseSpec::new(NoiseKind::SaltPepper { p_salt: 0.6, p_pepper: 0.6 }, 0).validate().is_err());
    }

    #[test]
    fn gaussian_noise_statistics() {
        let data = vec![0.0; 1_000_000];
        let out = inject_noise(&data, &NoiseSpec::new(NoiseKind::Gaussian { mu: 0.0, sigma: 0.03 }, 2024)).unwrap();
        let n = out.len() as f64;
        let mean = out.iter().sum::<f64>() / n;
        let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 0.0002, "mean {mean}");
        assert!((0.0297..=0.0303).contains(&sd), "sd {sd}");
    }

    #[test]
    fn salt_pepper_counts_within_binomial_bounds() {
        let data: Vec<f64> = (0..1_000_000).map(|i| 0.25 + (i % 100) as f64 / 400.0).collect();
        let (p_s, p_p) = (0.1, 0.2);
        let out = inject_noise(&data, &NoiseSpec::new(NoiseKind::SaltPepper { p_salt: p_s, p_pepper: p_p }, 5)).unwrap();
        let n = data.len() as f64;
        // originals equal to the extremes are excluded from the count
        let hi = data.iter().copied().fold(f64::MIN, f64::max);
        let lo = data.iter().copied().fold(f64::MAX, f64::min);
        let salt = out.iter().zip(&data).filter(|(o, d)| **o == hi && **d != hi).count() as f64;
        let pepper = out.iter().zip(&data).filter(|(o, d)| **o == lo && **d != lo).count() as f64;
        let keep = 0.99;
        for (count, p) in [(salt, p_s * keep), (pepper, p_p * keep)] {
            let sd = (n * p * (1.0 - p)).sqrt();
            assert!((count - n * p).abs() <= 4.0 * sd, "count {count} vs {}", n * p);
        }
    }

    #[test]
    fn sequences_pad_with_first_window() {
        let feats: Vec<TfFeatureVector> = (0..3)
            .map(|i| TfFeatureVector::from_array([i as f64; 7]))
            .collect();
        let t = tf_sequence(&feats, 1, 4).unwrap();
        let firsts: Vec<f32> = t.data().chunks(7).map(|r| r[0]).collect();
        assert_eq!(firsts, vec![0.0, 0.0, 0.0, 1.0]);
        let t = tf_sequence(&feats, 2, 2).unwrap();
        let firsts: Vec<f32> = t.data().chunks(7).map(|r| r[0]).collect();
        assert_eq!(firsts, vec![1.0, 2.0]);
    }

    #[test]
    fn batch_examples() {
        let items: Vec<usize> = (0..10).collect();
        let sizes: Vec<usize> = make_batches(&items, 4).unwrap().iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(make_batches(&items[..3], 8).unwrap().len(), 1);
        let flat: Vec<usize> = make_batches(&items, 3).unwrap().concat();
        assert_eq!(flat, items);
        assert_eq!(make_batches(&items, 0), Err(DatagenError::BatchSizeZero));
    }

    proptest! {
        #[test]
        fn labels_non_increasing(n in 2usize..200, knee in 0.01f64..0.99, linear in any::<bool>()) {
            let mode = if linear { LabelMode::Linear } else { LabelMode::Piecewise { knee } };
            let l = gen_labels(n, mode).unwrap();
            prop_assert_eq!(l[0], 1.0);
            prop_assert_eq!(l[n - 1], 0.0);
            prop_assert!(l.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(l.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn model_image_preserves_mass(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let img = raw(1000, |_, _| if rand::Rng::random_bool(&mut rng, 0.1) { 255 } else { 0 });
            let total_in: f64 = img.pixels().iter().map(|&p| p as f64).sum();
            let t = to_model_image(&img).unwrap();
            prop_assert!((t.sum() - total_in / (2.0 * 255.0)).abs() < 1e-6 * total_in.max(1.0));
        }

        #[test]
        fn noise_is_reproducible(seed in any::<u64>(), which in 0usize..3) {
            let kind = [
                NoiseKind::Uniform { low: -0.003, high: 0.05 },
                NoiseKind::Gaussian { mu: 0.0, sigma: 0.03 },
                NoiseKind::SaltPepper { p_salt: 0.1, p_pepper: 0.2 },
            ][which];
            let data: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
            let spec = NoiseSpec::new(kind, seed);
            let a = inject_noise(&data, &spec).unwrap();
            let b = inject_noise(&data, &spec).unwrap();
            prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
