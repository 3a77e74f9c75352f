//! Vibration recording ingestion, windowing and min-max normalization.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed row {0}")]
    MalformedRow(usize),
    #[error("empty file")]
    EmptyFile,
    #[error("column layout must map at least one column")]
    EmptyLayout,
    #[error("signal needs at least 2 samples per channel, got {0}")]
    TooShort(usize),
    #[error("channels have unequal lengths")]
    RaggedChannels,
    #[error("sampling rate must be positive, got {0}")]
    BadSamplingRate(f64),
    #[error("window length {window} exceeds signal length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("window length and hop must be >= 1")]
    ZeroLength,
    #[error("channel {channel} out of range ({count} channels)")]
    ChannelOutOfRange { channel: usize, count: usize },
    #[error("cannot fit normalization on an empty dataset")]
    EmptyDataset,
    #[error("degenerate range: min == max == {0}")]
    DegenerateRange(f64),
    #[error("non-finite value in dataset")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Multichannel recording. Channels share one length and sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    channels: Vec<Vec<f64>>,
    sampling_rate_hz: f64,
}

impl RawSignal {
    pub fn new(channels: Vec<Vec<f64>>, sampling_rate_hz: f64) -> Result<Self> {
        if !(sampling_rate_hz > 0.0) || !sampling_rate_hz.is_finite() {
            return Err(SignalError::BadSamplingRate(sampling_rate_hz));
        }
        let len = channels.first().map(Vec::len).ok_or(SignalError::EmptyLayout)?;
        if channels.iter().any(|c| c.len() != len) {
            return Err(SignalError::RaggedChannels);
        }
        if len < 2 {
            return Err(SignalError::TooShort(len));
        }
        Ok(Self {
            channels,
            sampling_rate_hz,
        })
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, index: usize) -> Option<&[f64]> {
        self.channels.get(index).map(Vec::as_slice)
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel (L_d).
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }
}

/// Which CSV columns become channels, in channel order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnLayout {
    pub columns: Vec<usize>,
}

impl ColumnLayout {
    pub fn new(columns: Vec<usize>) -> Self {
        Self { columns }
    }

    /// Columns `0..n`.
    pub fn first(n: usize) -> Self {
        Self {
            columns: (0..n).collect(),
        }
    }
}

fn parse_fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn row_is_numeric(fields: &[&str]) -> bool {
    fields.iter().all(|f| f.parse::<f64>().is_ok())
}

/// Parses CSV text. A first row that is not entirely numeric is treated as
/// a header and skipped. Row indices in errors are zero-based line numbers.
pub fn parse_csv(text: &str, layout: &ColumnLayout, sampling_rate_hz: f64) -> Result<RawSignal> {
    if layout.columns.is_empty() {
        return Err(SignalError::EmptyLayout);
    }
    let needed = layout.columns.iter().max().copied().unwrap_or(0) + 1;
    let mut channels = vec![Vec::new(); layout.columns.len()];
    let mut seen_row = false;

    for (row, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields = parse_fields(line);
        if !seen_row {
            seen_row = true;
            if !row_is_numeric(&fields) {
                continue;
            }
        }
        if fields.len() < needed {
            return Err(SignalError::MalformedRow(row));
        }
        for (channel, &col) in channels.iter_mut().zip(&layout.columns) {
            let v: f64 = fields[col]
                .parse()
                .map_err(|_| SignalError::MalformedRow(row))?;
            if !v.is_finite() {
                return Err(SignalError::MalformedRow(row));
            }
            channel.push(v);
        }
    }

    if channels[0].is_empty() {
        return Err(SignalError::EmptyFile);
    }
    RawSignal::new(channels, sampling_rate_hz)
}

pub fn load_csv(path: &Path, layout: &ColumnLayout, sampling_rate_hz: f64) -> Result<RawSignal> {
    if !path.exists() {
        return Err(SignalError::FileNotFound(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, layout, sampling_rate_hz)
}

/// One row per sample, one column per channel, optional header. Uses the
/// shortest decimal form that parses back to the identical `f64`.
pub fn to_csv(signal: &RawSignal, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(names) = header {
        out.push_str(&names.join(","));
        out.push('\n');
    }
    for i in 0..signal.len() {
        for (c, channel) in signal.channels.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{:?}", channel[i]);
        }
        out.push('\n');
    }
    out
}

/// A contiguous slice `[start_index, start_index + len)` of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub values: Vec<f64>,
    pub start_index: usize,
}

impl Window {
    pub fn new(values: Vec<f64>, start_index: usize) -> Self {
        Self {
            values,
            start_index,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Number of full windows: `(len - window) / hop + 1`.
pub fn window_count(len: usize, window_length: usize, hop: usize) -> usize {
    if window_length == 0 || hop == 0 || window_length > len {
        0
    } else {
        (len - window_length) / hop + 1
    }
}

/// Splits one channel into windows starting at `k * hop`; a trailing
/// remainder shorter than `window_length` is dropped.
pub fn segment(
    signal: &RawSignal,
    channel: usize,
    window_length: usize,
    hop: usize,
) -> Result<Vec<Window>> {
    let data = signal
        .channel(channel)
        .ok_or(SignalError::ChannelOutOfRange {
            channel,
            count: signal.channel_count(),
        })?;
    if window_length == 0 || hop == 0 {
        return Err(SignalError::ZeroLength);
    }
    if window_length > data.len() {
        return Err(SignalError::WindowTooLong {
            window: window_length,
            len: data.len(),
        });
    }
    let n = window_count(data.len(), window_length, hop);
    Ok((0..n)
        .map(|k| {
            let start = k * hop;
            Window::new(data[start..start + window_length].to_vec(), start)
        })
        .collect())
}

/// Corpus-level min/max, persisted next to the model weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub global_min: f64,
    pub global_max: f64,
}

impl NormalizationParams {
    pub fn new(global_min: f64, global_max: f64) -> Result<Self> {
        if !global_min.is_finite() || !global_max.is_finite() {
            return Err(SignalError::NonFinite);
        }
        if global_max <= global_min {
            return Err(SignalError::DegenerateRange(global_min));
        }
        Ok(Self {
            global_min,
            global_max,
        })
    }

    /// Maps into `[0, 1]`; values outside the fitted range are clipped.
    pub fn apply(&self, x: f64) -> f64 {
        ((x - self.global_min) / (self.global_max - self.global_min)).clamp(0.0, 1.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

pub fn fit_minmax<I>(dataset: I) -> Result<NormalizationParams>
where
    I: IntoIterator<Item = f64>,
{
    let mut iter = dataset.into_iter();
    let first = iter.next().ok_or(SignalError::EmptyDataset)?;
    if !first.is_finite() {
        return Err(SignalError::NonFinite);
    }
    let (mut lo, mut hi) = (first, first);
    for v in iter {
        if !v.is_finite() {
            return Err(SignalError::NonFinite);
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    NormalizationParams::new(lo, hi)
}

pub fn normalize_minmax(values: &[f64], params: &NormalizationParams) -> Vec<f64> {
    values.iter().map(|&x| params.apply(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_columns_in_mapping_order() {
        let s = parse_csv("0.1,0.2\n0.3,0.4\n0.5,0.6", &ColumnLayout::first(2), 25600.0).unwrap();
        assert_eq!(s.channels(), &[vec![0.1, 0.3, 0.5], vec![0.2, 0.4, 0.6]]);
        let swapped = parse_csv("0.1,0.2\n0.3,0.4", &ColumnLayout::new(vec![1, 0]), 1.0).unwrap();
        assert_eq!(swapped.channels()[0], vec![0.2, 0.4]);
    }

    #[test]
    fn header_row_is_skipped() {
        let s = parse_csv("h,v\n1,2\n3,4\n", &ColumnLayout::first(2), 1.0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.channels()[1], vec![2.0, 4.0]);
    }

    #[test]
    fn empty_and_malformed_inputs() {
        assert!(matches!(
            parse_csv("", &ColumnLayout::first(1), 1.0),
            Err(SignalError::EmptyFile)
        ));
        assert!(matches!(
            parse_csv("a,b\n", &ColumnLayout::first(1), 1.0),
            Err(SignalError::EmptyFile)
        ));
        assert!(matches!(
            parse_csv("0.0,1.0\n0.1,abc\n", &ColumnLayout::first(2), 1.0),
            Err(SignalError::MalformedRow(1))
        ));
        assert!(matches!(
            parse_csv("0.0,1.0\n0.1\n", &ColumnLayout::first(2), 1.0),
            Err(SignalError::MalformedRow(1))
        ));
    }

    #[test]
    fn missing_file() {
        let err = load_csv(Path::new("/nonexistent/x.csv"), &ColumnLayout::first(1), 1.0);
        assert!(matches!(err, Err(SignalError::FileNotFound(_))));
    }

    #[test]
    fn segment_examples() {
        let sig = |n: usize| RawSignal::new(vec![(0..n).map(|i| i as f64).collect()], 1.0).unwrap();
        let w = segment(&sig(1000), 0, 1000, 1000).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].len(), 1000);

        let w = segment(&sig(2500), 0, 1000, 1000).unwrap();
        assert_eq!(w.iter().map(|w| w.start_index).collect::<Vec<_>>(), vec![0, 1000]);

        let w = segment(&sig(10), 0, 4, 2).unwrap();
        assert_eq!(
            w.iter().map(|w| w.start_index).collect::<Vec<_>>(),
            vec![0, 2, 4, 6]
        );
        assert_eq!(w[3].values, vec![6.0, 7.0, 8.0, 9.0]);

        assert!(matches!(
            segment(&sig(10), 0, 11, 1),
            Err(SignalError::WindowTooLong { .. })
        ));
        assert!(matches!(
            segment(&sig(10), 1, 4, 1),
            Err(SignalError::ChannelOutOfRange { .. })
        ));
        assert!(matches!(segment(&sig(10), 0, 4, 0), Err(SignalError::ZeroLength)));
    }

    #[test]
    fn fit_examples() {
        let p = fit_minmax([-2.0, 0.0, 3.0]).unwrap();
        assert_eq!((p.global_min, p.global_max), (-2.0, 3.0));
        assert!(matches!(fit_minmax([5.0, 5.0, 5.0]), Err(SignalError::DegenerateRange(_))));
        assert!(matches!(fit_minmax([7.0]), Err(SignalError::DegenerateRange(_))));
        assert!(matches!(fit_minmax(std::iter::empty()), Err(SignalError::EmptyDataset)));
    }

    #[test]
    fn normalize_examples() {
        let p = NormalizationParams::new(-1.0, 1.0).unwrap();
        assert_eq!(normalize_minmax(&[-1.0, 0.0, 1.0], &p), vec![0.0, 0.5, 1.0]);
        let p = NormalizationParams::new(0.0, 2.0).unwrap();
        assert_eq!(p.apply(3.0), 1.0);
        assert_eq!(p.apply(-9.0), 0.0);
    }

    #[test]
    fn params_json_shape() {
        let p = NormalizationParams::new(-0.5, 2.0).unwrap();
        let json = p.to_json();
        assert_eq!(json, r#"{"global_min":-0.5,"global_max":2.0}"#);
        assert_eq!(NormalizationParams::from_json(&json).unwrap(), p);
    }

    proptest! {
        #[test]
        fn segment_count_matches_enumeration(len in 1usize..300, w in 1usize..300, hop in 1usize..50) {
            prop_assume!(w <= len);
            let sig = RawSignal::new(vec![vec![0.0; len.max(2)]], 1.0).unwrap();
            let len = sig.len();
            let windows = segment(&sig, 0, w, hop).unwrap();
            let brute: Vec<usize> = (0..len).step_by(hop).filter(|s| s + w <= len).collect();
            let got: Vec<usize> = windows.iter().map(|w| w.start_index).collect();
            prop_assert_eq!(got, brute);
        }

        #[test]
        fn normalize_is_bounded_and_monotone(
            data in prop::collection::vec(-1e3f64..1e3, 2..50),
            a in -2e3f64..2e3,
            b in -2e3f64..2e3,
        ) {
            prop_assume!(data.iter().any(|&v| v != data[0]));
            let p = fit_minmax(data.iter().copied()).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (ylo, yhi) = (p.apply(lo), p.apply(hi));
            prop_assert!((0.0..=1.0).contains(&ylo) && (0.0..=1.0).contains(&yhi));
            prop_assert!(ylo <= yhi);
        }

        #[test]
        fn csv_round_trip_is_bit_exact(rows in prop::collection::vec((any::<f32>(), any::<f32>()), 2..40)) {
            prop_assume!(rows.iter().all(|(a, b)| a.is_finite() && b.is_finite()));
            let sig = RawSignal::new(
                vec![
                    rows.iter().map(|r| r.0 as f64).collect(),
                    rows.iter().map(|r| r.1 as f64).collect(),
                ],
                25600.0,
            ).unwrap();
            let text = to_csv(&sig, Some(&["h".to_string(), "v".to_string()]));
            let back = parse_csv(&text, &ColumnLayout::first(2), 25600.0).unwrap();
            for (x, y) in sig.channels().iter().flatten().zip(back.channels().iter().flatten()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
