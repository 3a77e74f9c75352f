//! On-disk layout of a sample store.
//!
//! ```text
//! <store>/manifest.json
//! <store>/<bearing>/raw.csv
//! <store>/<bearing>/images/<bearing>_<idx>.png
//! <store>/<bearing>/features.csv
//! <store>/<bearing>/scale_bank.json
//! <store>/<bearing>/labels.csv
//! <store>/<bearing>/noise/<kind>/{images/, features.csv, noise.json}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rulforge::datagen::{LabelMode, NoiseSpec};
use rulforge::rasterizer::{RasterConfig, RasterImage};
use rulforge::signal_io::{load_csv, ColumnLayout, NormalizationParams, RawSignal};
use rulforge::tfr::ScaleBank;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BearingEntry {
    pub name: String,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeRecord {
    pub channel: String,
    pub window: usize,
    pub hop: usize,
    pub f_o: f64,
    pub histogram_bins: usize,
    /// Sequence length samples are assembled with.
    pub seq_len: usize,
    pub raster: RasterConfig,
    pub normalization: NormalizationParams,
    pub scale_bank: ScaleBank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub sampling_rate_hz: f64,
    pub channels: Vec<String>,
    pub bearings: Vec<BearingEntry>,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub featurize: Option<FeaturizeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelMode>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub noise: BTreeMap<String, NoiseSpec>,
}

impl Manifest {
    pub fn featurized(&self) -> Result<&FeaturizeRecord> {
        self.featurize
            .as_ref()
            .ok_or_else(|| CliError::new("MissingArtifact", "store has not been featurized; run `featurize` first").into())
    }

    pub fn bearing(&self, name: Option<&str>) -> Result<&BearingEntry> {
        match name {
            None => self
                .bearings
                .first()
                .ok_or_else(|| CliError::new("MissingArtifact", "store holds no bearings").into()),
            Some(n) => self
                .bearings
                .iter()
                .find(|b| b.name == n)
                .ok_or_else(|| CliError::new("UnknownBearing", format!("no bearing '{n}' in store")).into()),
        }
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::new("UnknownChannel", format!("no channel '{name}' (have {})", self.channels.join(","))).into())
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    pub root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    pub fn load_manifest(&self) -> Result<Manifest> {
        let path = self.manifest_path();
        if !path.exists() {
            return Err(CliError::new("MissingArtifact", format!("{} not found; run `ingest` first", path.display())).into());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save_manifest(&self, m: &Manifest) -> Result<()> {
        write_json(&self.manifest_path(), m)
    }

    pub fn bearing_dir(&self, bearing: &str) -> PathBuf {
        self.root.join(bearing)
    }

    pub fn raw_path(&self, bearing: &str) -> PathBuf {
        self.bearing_dir(bearing).join("raw.csv")
    }

    pub fn labels_path(&self, bearing: &str) -> PathBuf {
        self.bearing_dir(bearing).join("labels.csv")
    }

    /// Directory holding images and features: the bearing itself, or one of
    /// its noisy variants.
    pub fn artifact_dir(&self, bearing: &str, variant: Option<&str>) -> PathBuf {
        match variant {
            None => self.bearing_dir(bearing),
            Some(kind) => self.bearing_dir(bearing).join("noise").join(kind),
        }
    }

    pub fn load_raw(&self, m: &Manifest, bearing: &str) -> Result<RawSignal> {
        let path = self.raw_path(bearing);
        Ok(load_csv(&path, &ColumnLayout::first(m.channels.len()), m.sampling_rate_hz)?)
    }
}

pub fn image_path(dir: &Path, bearing: &str, index: usize) -> PathBuf {
    dir.join("images").join(rulforge::rasterizer::png_file_name(bearing, index))
}

fn temp_sibling(path: &Path) -> PathBuf {
    // keep the extension: the png encoder picks its format from it
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".tmp-{}-{name}", std::process::id()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    Ok(())
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let tmp = temp_sibling(path);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_png(path: &Path, image: &RasterImage) -> Result<()> {
    ensure_parent(path)?;
    let tmp = temp_sibling(path);
    image.save_png(&tmp)?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Replaces a generated directory wholesale so reruns leave no stale files.
pub fn reset_dir(path: &Path) -> Result<()> {
    if path.exists() {
        std::fs::remove_dir_all(path).with_context(|| format!("clearing {}", path.display()))?;
    }
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(CliError::new("MissingArtifact", format!("{} not found", path.display())).into());
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// `window_index,<value>` rows keyed by window index. The value column is the
/// first of `columns` present in the header.
pub fn read_indexed_csv(path: &Path, columns: &[&str]) -> Result<BTreeMap<usize, f64>> {
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::new("MalformedCsv", format!("{} is empty", path.display())))?
        .split(',')
        .map(str::trim)
        .collect();
    let idx_col = header
        .iter()
        .position(|h| *h == "window_index")
        .ok_or_else(|| CliError::new("MalformedCsv", format!("{} has no window_index column", path.display())))?;
    let val_col = columns
        .iter()
        .find_map(|c| header.iter().position(|h| h == c))
        .ok_or_else(|| CliError::new("MalformedCsv", format!("{} has none of the columns {}", path.display(), columns.join("/"))))?;
    let mut out = BTreeMap::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || CliError::new("MalformedCsv", format!("{} row {}", path.display(), row + 1));
        let idx: usize = fields.get(idx_col).and_then(|f| f.parse().ok()).ok_or_else(bad)?;
        let val: f64 = fields.get(val_col).and_then(|f| f.parse().ok()).ok_or_else(bad)?;
        out.insert(idx, val);
    }
    Ok(out)
}
