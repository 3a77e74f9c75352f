//! Morlet continuous wavelet transform and the seven time-frequency
//! features computed per window.
//!
//! Scales are expressed in samples: a scale `s` probes the pseudo-frequency
//! `f_c * f_s / s`. The bank covers `[f_o / 3, 3 f_o]` with logarithmic
//! spacing, smallest scale (highest frequency) first.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::Window;

pub const DEFAULT_CENTER_FREQUENCY: f64 = 0.81;
pub const DEFAULT_SCALES: usize = 64;
pub const DEFAULT_HISTOGRAM_BINS: usize = 64;

/// Wavelet support is cut at `|t| > TRUNCATION` (envelope below e^-50).
const TRUNCATION: f64 = 10.0;

#[derive(Debug, Error)]
pub enum TfrError {
    #[error("band edge 3*f_o = {f_max} Hz reaches Nyquist ({nyquist} Hz)")]
    NyquistViolation { f_max: f64, nyquist: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("window has zero variance")]
    DegenerateWindow,
    #[error("window length {window} does not match scalogram length {scalogram}")]
    LengthMismatch { window: usize, scalogram: usize },
    #[error("scalogram contains non-finite coefficients")]
    NonFinite,
    #[error("malformed feature csv at line {0}")]
    MalformedCsv(usize),
}

pub type Result<T> = std::result::Result<T, TfrError>;

/// Complex Morlet wavelet `exp(i 2π f_c t) exp(-t²/2)`.
pub fn morlet(t: f64, f_c: f64) -> Complex64 {
    Complex64::from_polar((-0.5 * t * t).exp(), 2.0 * PI * f_c * t)
}

/// Amplitude normalization applied to the dilated wavelet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletNorm {
    /// `1 / s`: per-scale energy of a pure tone peaks at its own frequency.
    #[default]
    L1,
    /// `1 / sqrt(s)`: unit-energy wavelets.
    L2,
}

impl WaveletNorm {
    pub fn factor(self, scale: f64) -> f64 {
        match self {
            WaveletNorm::L1 => 1.0 / scale,
            WaveletNorm::L2 => 1.0 / scale.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleBank {
    /// Strictly increasing, in samples.
    pub scales: Vec<f64>,
    pub center_frequency: f64,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub sampling_rate_hz: f64,
    #[serde(default)]
    pub normalization: WaveletNorm,
}

impl ScaleBank {
    /// Log-spaced bank whose end scales map exactly onto `f_max` and `f_min`.
    pub fn from_band(
        f_min_hz: f64,
        f_max_hz: f64,
        sampling_rate_hz: f64,
        center_frequency: f64,
        n_scales: usize,
    ) -> Result<Self> {
        if n_scales < 2 {
            return Err(TfrError::InvalidArgument("n_scales must be >= 2"));
        }
        if !(center_frequency > 0.0) || !(sampling_rate_hz > 0.0) {
            return Err(TfrError::InvalidArgument("f_c and f_s must be positive"));
        }
        if !(f_min_hz > 0.0) || !(f_max_hz > f_min_hz) {
            return Err(TfrError::InvalidArgument("need 0 < f_min < f_max"));
        }
        let nyquist = sampling_rate_hz / 2.0;
        if f_max_hz >= nyquist {
            return Err(TfrError::NyquistViolation {
                f_max: f_max_hz,
                nyquist,
            });
        }
        let s_min = center_frequency * sampling_rate_hz / f_max_hz;
        let s_max = center_frequency * sampling_rate_hz / f_min_hz;
        let ratio = s_max / s_min;
        let last = (n_scales - 1) as f64;
        let mut scales: Vec<f64> = (0..n_scales)
            .map(|i| s_min * ratio.powf(i as f64 / last))
            .collect();
        scales[0] = s_min;
        scales[n_scales - 1] = s_max;
        Ok(Self {
            scales,
            center_frequency,
            f_min_hz,
            f_max_hz,
            sampling_rate_hz,
            normalization: WaveletNorm::default(),
        })
    }

    pub fn with_normalization(mut self, norm: WaveletNorm) -> Self {
        self.normalization = norm;
        self
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn freq_of_scale(&self, scale: f64) -> f64 {
        self.center_frequency * self.sampling_rate_hz / scale
    }

    pub fn scale_of_freq(&self, freq_hz: f64) -> f64 {
        self.center_frequency * self.sampling_rate_hz / freq_hz
    }

    /// Pseudo-frequencies of the bank, highest first.
    pub fn frequencies(&self) -> Vec<f64> {
        self.scales.iter().map(|&s| self.freq_of_scale(s)).collect()
    }

    /// Ratio between neighbouring scales (constant for a log bank).
    pub fn step_ratio(&self) -> f64 {
        (self.scales[self.len() - 1] / self.scales[0]).powf(1.0 / (self.len() - 1) as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

/// Band `[f_o / 3, 3 f_o]` around the operating frequency.
pub fn build_scale_bank(f_o: f64, f_s: f64, f_c: f64, n_scales: usize) -> Result<ScaleBank> {
    if !(f_o > 0.0) {
        return Err(TfrError::InvalidArgument("operating frequency must be positive"));
    }
    ScaleBank::from_band(f_o / 3.0, 3.0 * f_o, f_s, f_c, n_scales)
}

/// `n_scales x len` wavelet coefficients, row-major by scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    coefficients: Vec<Complex64>,
    len: usize,
    bank: ScaleBank,
}

impl Scalogram {
    pub fn from_coefficients(coefficients: Vec<Complex64>, len: usize, bank: ScaleBank) -> Result<Self> {
        if coefficients.len() != len * bank.len() {
            return Err(TfrError::InvalidArgument("coefficient count != scales * len"));
        }
        if coefficients.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(TfrError::NonFinite);
        }
        Ok(Self {
            coefficients,
            len,
            bank,
        })
    }

    pub fn bank(&self) -> &ScaleBank {
        &self.bank
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn row(&self, scale_index: usize) -> &[Complex64] {
        &self.coefficients[scale_index * self.len..(scale_index + 1) * self.len]
    }

    /// `E(a) = Σ_b |Γ(a, b)|²` for every scale.
    pub fn scale_energies(&self) -> Vec<f64> {
        (0..self.bank.len())
            .map(|a| self.row(a).iter().map(Complex64::norm_sqr).sum())
            .collect()
    }

    pub fn total_energy(&self) -> f64 {
        self.scale_energies().iter().sum()
    }

    pub fn dominant_scale_index(&self) -> usize {
        argmax(&self.scale_energies())
    }

    pub fn dominant_frequency(&self) -> f64 {
        self.bank
            .freq_of_scale(self.bank.scales[self.dominant_scale_index()])
    }
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Samples the conjugated, normalized wavelet at integer offsets
/// `m in [-half, half]`.
fn wavelet_taps(scale: f64, bank: &ScaleBank, half: usize) -> Vec<Complex64> {
    let norm = bank.normalization.factor(scale);
    (0..=2 * half)
        .map(|i| {
            let m = i as f64 - half as f64;
            morlet(m / scale, bank.center_frequency).conj() * norm
        })
        .collect()
}

/// `Γ(a, b) = Σ_n x(n) conj(ψ((n - b) / s_a)) * norm(s_a)` for every scale
/// and every shift `b` in the window, evaluated by FFT convolution.
pub fn cwt(window: &Window, bank: &ScaleBank) -> Result<Scalogram> {
    cwt_values(&window.values, bank)
}

pub fn cwt_values(values: &[f64], bank: &ScaleBank) -> Result<Scalogram> {
    let len = values.len();
    if len < 2 {
        return Err(TfrError::InvalidArgument("window length must be >= 2"));
    }
    let half_of = |s: f64| ((TRUNCATION * s).ceil() as usize).min(len - 1);
    let max_half = bank.scales.iter().map(|&s| half_of(s)).max().unwrap_or(0);
    let fft_len = (len + 2 * max_half).next_power_of_two();

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(fft_len);
    let inverse = planner.plan_fft_inverse(fft_len);

    let mut signal: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    signal.resize(fft_len, Complex64::default());
    forward.process(&mut signal);

    let scale_inv = 1.0 / fft_len as f64;
    let mut coefficients = Vec::with_capacity(bank.len() * len);
    let mut kernel = vec![Complex64::default(); fft_len];

    for &scale in &bank.scales {
        let half = half_of(scale);
        let taps = wavelet_taps(scale, bank, half);
        // Reversed taps turn the correlation into a convolution:
        // kernel[i] = tap at offset m = half - i.
        kernel.iter_mut().for_each(|k| *k = Complex64::default());
        for (i, k) in kernel.iter_mut().take(2 * half + 1).enumerate() {
            *k = taps[2 * half - i];
        }
        forward.process(&mut kernel);
        for (k, s) in kernel.iter_mut().zip(&signal) {
            *k *= s;
        }
        inverse.process(&mut kernel);
        coefficients.extend(kernel[half..half + len].iter().map(|c| c * scale_inv));
    }
    Scalogram::from_coefficients(coefficients, len, bank.clone())
}

/// `[log E, f_d, h, K, sk, avg, σ]` for one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfFeatureVector {
    pub log_energy: f64,
    pub dominant_freq_hz: f64,
    /// Shannon entropy of the amplitude histogram, in nats.
    pub entropy: f64,
    pub kurtosis: f64,
    pub skewness: f64,
    pub mean: f64,
    pub std_dev: f64,
}

pub const FEATURE_NAMES: [&str; 7] = [
    "log_energy",
    "dominant_freq_hz",
    "entropy",
    "kurtosis",
    "skewness",
    "mean",
    "std_dev",
];

impl TfFeatureVector {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.log_energy,
            self.dominant_freq_hz,
            self.entropy,
            self.kurtosis,
            self.skewness,
            self.mean,
            self.std_dev,
        ]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        Self {
            log_energy: v[0],
            dominant_freq_hz: v[1],
            entropy: v[2],
            kurtosis: v[3],
            skewness: v[4],
            mean: v[5],
            std_dev: v[6],
        }
    }
}

/// Population moments of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn moments(values: &[f64]) -> Result<Moments> {
    if values.len() < 2 {
        return Err(TfrError::InvalidArgument("window length must be >= 2"));
    }
    let (lo, hi) = min_max(values);
    if lo == hi {
        return Err(TfrError::DegenerateWindow);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    Ok(Moments {
        mean,
        variance: m2,
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    })
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Entropy (nats) of a `bins`-bin histogram spanning `[min, max]` of the
/// values. Empty bins contribute nothing.
pub fn histogram_entropy(values: &[f64], bins: usize) -> f64 {
    let (lo, hi) = min_max(values);
    if values.is_empty() || bins == 0 || lo == hi {
        return 0.0;
    }
    let mut counts = vec![0usize; bins];
    let width = hi - lo;
    for &v in values {
        let b = (((v - lo) / width) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let n = values.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

pub fn extract_features(scalogram: &Scalogram, window: &Window) -> Result<TfFeatureVector> {
    extract_features_with_bins(scalogram, window, DEFAULT_HISTOGRAM_BINS)
}

pub fn extract_features_with_bins(
    scalogram: &Scalogram,
    window: &Window,
    bins: usize,
) -> Result<TfFeatureVector> {
    if window.len() != scalogram.len() {
        return Err(TfrError::LengthMismatch {
            window: window.len(),
            scalogram: scalogram.len(),
        });
    }
    let m = moments(&window.values)?;
    let energies = scalogram.scale_energies();
    let dominant = scalogram.bank.freq_of_scale(scalogram.bank.scales[argmax(&energies)]);
    Ok(TfFeatureVector {
        log_energy: energies.iter().sum::<f64>().ln(),
        dominant_freq_hz: dominant,
        entropy: histogram_entropy(&window.values, bins),
        kurtosis: m.kurtosis,
        skewness: m.skewness,
        mean: m.mean,
        std_dev: m.variance.sqrt(),
    })
}

/// CWT followed by feature extraction.
pub fn window_features(window: &Window, bank: &ScaleBank) -> Result<TfFeatureVector> {
    let scalogram = cwt(window, bank)?;
    extract_features(&scalogram, window)
}

pub fn features_to_csv(features: &[TfFeatureVector]) -> String {
    let mut out = FEATURE_NAMES.join(",");
    out.push('\n');
    for f in features {
        let row: Vec<String> = f.to_array().iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn features_from_csv(text: &str) -> Result<Vec<TfFeatureVector>> {
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line_no == 0 || line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| TfrError::MalformedCsv(line_no))?;
        let arr: [f64; 7] = values
            .try_into()
            .map_err(|_| TfrError::MalformedCsv(line_no))?;
        out.push(TfFeatureVector::from_array(arr));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn tone(freq: f64, fs: f64, len: usize) -> Window {
        Window::new(
            (0..len)
                .map(|n| (2.0 * PI * freq * n as f64 / fs).sin())
                .collect(),
            0,
        )
    }

    #[test]
    fn morlet_examples() {
        assert_eq!(morlet(0.0, 0.81), Complex64::new(1.0, 0.0));
        for t in [-3.0, -0.7, 0.2, 1.5, 4.0] {
            assert!((morlet(t, 0.81).norm() - (-t * t / 2.0f64).exp()).abs() < 1e-15);
        }
        assert!(morlet(6.1, 0.81).norm() < 1e-8);
        assert!(morlet(-6.1, 0.81).norm() < 1e-8);
    }

    #[test]
    fn scale_bank_examples() {
        let bank = build_scale_bank(35.0, 25600.0, 0.81, 64).unwrap();
        assert!((bank.f_min_hz - 35.0 / 3.0).abs() < 1e-12);
        assert_eq!(bank.f_max_hz, 105.0);
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(bank.freq_of_scale(bank.scales[0]), 105.0) < 1e-9);
        assert!(rel(bank.freq_of_scale(bank.scales[63]), 35.0 / 3.0) < 1e-9);
        assert!(bank.scales.windows(2).all(|w| w[1] > w[0]));

        let two = build_scale_bank(35.0, 25600.0, 0.81, 2).unwrap();
        assert_eq!(two.scales.len(), 2);
        assert!(rel(two.freq_of_scale(two.scales[0]), 105.0) < 1e-9);

        assert!(matches!(
            build_scale_bank(35.0, 100.0, 0.81, 64),
            Err(TfrError::NyquistViolation { .. })
        ));
        assert!(build_scale_bank(35.0, 25600.0, 0.81, 1).is_err());
    }

    #[test]
    fn zero_window_gives_zero_scalogram() {
        let bank = build_scale_bank(35.0, 25600.0, 0.81, 8).unwrap();
        let s = cwt(&Window::new(vec![0.0; 300], 0), &bank).unwrap();
        assert!(s.coefficients().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn cwt_is_linear() {
        let bank = build_scale_bank(35.0, 25600.0, 0.81, 8).unwrap();
        let w = tone(50.0, 25600.0, 256);
        let scaled = Window::new(w.values.iter().map(|v| -2.5 * v).collect(), 0);
        let a = cwt(&w, &bank).unwrap();
        let b = cwt(&scaled, &bank).unwrap();
        for (x, y) in a.coefficients().iter().zip(b.coefficients()) {
            assert!((x * -2.5 - y).norm() <= 1e-9 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn fft_route_matches_direct_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (len, norm) in [(64, WaveletNorm::L1), (200, WaveletNorm::L2), (256, WaveletNorm::L1)] {
            let bank = build_scale_bank(35.0, 25600.0, 0.81, 12).unwrap().with_normalization(norm);
            let values: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            let fast = cwt_values(&values, &bank).unwrap();
            let direct = reference::cwt_direct(&values, &bank.scales, bank.center_frequency, norm == WaveletNorm::L2);
            let num: f64 = fast.coefficients().iter().zip(&direct).map(|(a, b)| (a - b).norm_sqr()).sum();
            let den: f64 = direct.iter().map(|b| b.norm_sqr()).sum();
            assert!((num / den).sqrt() < 1e-6, "len {len}: {}", (num / den).sqrt());
        }
    }

    #[test]
    fn tone_at_50hz_peaks_at_nearest_scale() {
        let bank = build_scale_bank(35.0, 25600.0, 0.81, 64).unwrap();
        let w = tone(50.0, 25600.0, 32768);
        let s = cwt(&w, &bank).unwrap();
        let picked = s.dominant_frequency();
        let step = bank.step_ratio().ln();
        assert!((picked / 50.0).ln().abs() <= step, "picked {picked}");
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let values: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = moments(&values).unwrap();
        let oracle = reference::population_moments(&values);
        assert!((m.kurtosis - oracle.3).abs() < 1e-9);
        assert!((m.skewness - oracle.2).abs() < 1e-9);
        assert!((m.kurtosis - 3.0).abs() < 0.1);
        assert!(m.skewness.abs() < 0.05);
    }

    #[test]
    fn constant_window_is_degenerate() {
        let bank = build_scale_bank(35.0, 25600.0, 0.81, 4).unwrap();
        let w = Window::new(vec![0.1; 100], 0);
        let s = cwt(&w, &bank).unwrap();
        assert!(matches!(extract_features(&s, &w), Err(TfrError::DegenerateWindow)));
    }

    #[test]
    fn uniform_histogram_entropy_is_ln_bins() {
        let values: Vec<f64> = (0..640).map(|i| (i / 10) as f64 + 0.5).collect();
        let h = histogram_entropy(&values, 64);
        assert!((h - 64f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn feature_csv_round_trip() {
        let f = TfFeatureVector::from_array([1.5, 50.0, 3.2, 2.9, -0.1, 0.0, 1.0]);
        let text = features_to_csv(&[f, f]);
        assert!(text.starts_with("log_energy,dominant_freq_hz,entropy,kurtosis,skewness,mean,std_dev\n"));
        assert_eq!(features_from_csv(&text).unwrap(), vec![f, f]);
    }

    #[test]
    fn feature_vector_invariants_on_noise() {
        let bank = build_scale_bank(35.0, 25600.0, 0.81, 16).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let w = Window::new((0..1000).map(|_| StandardNormal.sample(&mut rng)).collect(), 0);
        let f = window_features(&w, &bank).unwrap();
        assert!(f.dominant_freq_hz >= bank.f_min_hz - 1e-9 && f.dominant_freq_hz <= bank.f_max_hz + 1e-9);
        assert!(f.std_dev >= 0.0 && f.entropy >= 0.0 && f.kurtosis >= 1.0);
    }

    proptest! {
        #[test]
        fn energy_scales_quadratically(seed in any::<u64>(), c in prop_oneof![-8.0f64..-0.1, 0.1f64..8.0]) {
            let bank = build_scale_bank(35.0, 25600.0, 0.81, 8).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
            let scaled: Vec<f64> = values.iter().map(|v| c * v).collect();
            let e1 = cwt_values(&values, &bank).unwrap().total_energy();
            let e2 = cwt_values(&scaled, &bank).unwrap().total_energy();
            prop_assert!(((e2 - c * c * e1) / (c * c * e1)).abs() < 1e-6);
        }

        #[test]
        fn symmetric_window_has_zero_skew(half in prop::collection::vec(-100.0f64..100.0, 2..200), center in -10.0f64..10.0) {
            prop_assume!(half.iter().any(|&v| v != half[0]));
            let mut values: Vec<f64> = half.iter().map(|v| center + v).collect();
            values.extend(half.iter().map(|v| center - v));
            let m = moments(&values).unwrap();
            prop_assert!(m.skewness.abs() < 1e-9);
        }
    }
}
