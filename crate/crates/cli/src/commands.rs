use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use rulforge::datagen::{
    assemble_samples, gen_labels, inject_noise, tf_sequence, to_model_image, window_seed, LabelMode, NoiseKind,
    NoiseSpec, Sample,
};
use rulforge::engine::{
    describe, forward, init_params, load_weights, write_weights, Graph, ParamInit, ParamSet, Tensor,
};
use rulforge::lrp::{explain, heatmap_pixels, summarize, tf_relevance_csv, LrpConfig, LrpMode, RelevanceSummary};
use rulforge::metrics::evaluate;
use rulforge::model::{build_model, clip_rul, predict_rul, sample_inputs, ModelConfig, IMAGE_INPUT, TF_INPUT};
use rulforge::rasterizer::{rasterize_window, RasterConfig, RasterImage};
use rulforge::signal_io::{
    fit_minmax, normalize_minmax, parse_csv, segment, to_csv, ColumnLayout, NormalizationParams, RawSignal, Window,
};
use rulforge::tfr::{
    build_scale_bank, cwt, extract_features_with_bins, features_from_csv, features_to_csv, ScaleBank, TfFeatureVector,
};
use serde::Serialize;

use crate::error::CliError;
use crate::settings::{env_seed, Settings};
use crate::store::{
    image_path, read_indexed_csv, read_text, reset_dir, write_atomic, write_json, write_png, BearingEntry,
    FeaturizeRecord, Manifest, Store, FORMAT_VERSION,
};
use crate::{
    Cli, Command, EvaluateArgs, ExplainArgs, FeaturizeArgs, IngestArgs, InitArg, LabelModeArg, LabelsArgs,
    LrpModeArg, ModelCommand, ModelInitArgs, ModelInputArgs, NoiseArgs, NoiseKindArg, PredictArgs,
};

pub const DEFAULT_RATE_HZ: f64 = 25_600.0;
pub const DEFAULT_WINDOW: usize = 1000;
pub const DEFAULT_FO_HZ: f64 = 35.0;
pub const DEFAULT_SCALES: usize = 64;
pub const DEFAULT_FC: f64 = 0.81;
pub const DEFAULT_SEQ_LEN: usize = 16;

pub fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    let settings = |section: &str| Settings::load(config, section);
    match cli.command {
        Command::Ingest(a) => ingest(a, &settings("ingest")?),
        Command::Featurize(a) => featurize(a, &settings("featurize")?),
        Command::Labels(a) => labels(a, &settings("labels")?),
        Command::Noise(a) => noise(a, &settings("noise")?),
        Command::Predict(a) => predict(a),
        Command::Explain(a) => explain_cmd(a, &settings("explain")?),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Model(ModelCommand::Describe { graph }) => {
            print!("{}", describe(&Graph::load(&graph)?)?);
            Ok(())
        }
        Command::Model(ModelCommand::Init(a)) => model_init(a, &settings("model")?),
    }
}

fn invalid(message: impl Into<String>) -> anyhow::Error {
    CliError::new("InvalidArgument", message).into()
}

// ---------------------------------------------------------------- ingest

/// `(bearing, csv chunks)` pairs found under `input`.
fn discover(input: &Path, bearing: Option<&str>) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if input.is_file() {
        let name = bearing.map(str::to_string).unwrap_or_else(|| stem(input));
        return Ok(vec![(name, vec![input.to_path_buf()])]);
    }
    if !input.is_dir() {
        return Err(CliError::new("FileNotFound", format!("{} does not exist", input.display())).into());
    }
    if bearing.is_some() {
        return Err(invalid("--bearing only applies when --input is a single file"));
    }
    let is_csv = |p: &Path| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let mut found = Vec::new();
    for entry in sorted_entries(input)? {
        if entry.is_dir() {
            let chunks: Vec<PathBuf> = sorted_entries(&entry)?.into_iter().filter(|p| p.is_file() && is_csv(p)).collect();
            if !chunks.is_empty() {
                found.push((stem(&entry), chunks));
            }
        } else if is_csv(&entry) {
            found.push((stem(&entry), vec![entry]));
        }
    }
    if found.is_empty() {
        return Err(CliError::new("MissingArtifact", format!("no CSV files under {}", input.display())).into());
    }
    Ok(found)
}

/// Directory entries with numeric stems first, in numeric order, then the
/// rest by name (`2.csv` before `10.csv`).
fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|p| {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let num = stem.parse::<u64>().ok();
        (num.is_none(), num, p.file_name().map(|n| n.to_os_string()))
    });
    Ok(entries)
}

fn load_chunks(chunks: &[PathBuf], layout: &ColumnLayout, rate: f64) -> Result<RawSignal> {
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); layout.columns.len()];
    for path in chunks {
        let text = read_text(path)?;
        let part = parse_csv(&text, layout, rate).with_context(|| format!("parsing {}", path.display()))?;
        for (acc, ch) in channels.iter_mut().zip(part.channels()) {
            acc.extend_from_slice(ch);
        }
    }
    Ok(RawSignal::new(channels, rate)?)
}

fn ingest(a: IngestArgs, s: &Settings) -> Result<()> {
    let rate: f64 = s.pick(a.rate, "rate", DEFAULT_RATE_HZ)?;
    let channels: Vec<String> = s.pick(a.channels, "channels", vec!["h".to_string(), "v".to_string()])?;
    let columns: Vec<usize> = s.pick(a.columns, "columns", (0..channels.len()).collect())?;
    if channels.is_empty() || columns.len() != channels.len() {
        return Err(invalid(format!("{} channel names for {} columns", channels.len(), columns.len())));
    }
    let layout = ColumnLayout::new(columns);
    let sources = discover(&a.input, a.bearing.as_deref())?;
    let signals: Vec<RawSignal> = sources
        .par_iter()
        .map(|(_, chunks)| load_chunks(chunks, &layout, rate))
        .collect::<Result<_>>()?;

    let store = Store::new(&a.out);
    let mut manifest = if store.manifest_path().exists() {
        let m = store.load_manifest()?;
        if m.sampling_rate_hz != rate || m.channels != channels {
            return Err(CliError::new(
                "ConflictingStore",
                format!("store uses {} Hz and channels {:?}", m.sampling_rate_hz, m.channels),
            )
            .into());
        }
        m
    } else {
        Manifest {
            format: FORMAT_VERSION,
            sampling_rate_hz: rate,
            channels: channels.clone(),
            bearings: Vec::new(),
            master_seed: env_seed()?,
            featurize: None,
            labels: None,
            noise: BTreeMap::new(),
        }
    };
    for ((name, _), signal) in sources.iter().zip(&signals) {
        write_atomic(&store.raw_path(name), to_csv(signal, Some(&channels)).as_bytes())?;
        manifest.bearings.retain(|b| &b.name != name);
        manifest.bearings.push(BearingEntry {
            name: name.clone(),
            samples: signal.len(),
            windows: None,
        });
    }
    manifest.bearings.sort_by(|x, y| x.name.cmp(&y.name));
    store.save_manifest(&manifest)?;
    println!("ingested {} bearing(s) into {}", sources.len(), store.root.display());
    Ok(())
}

// ---------------------------------------------------------------- featurize

struct FeatureJob<'a> {
    raster: &'a RasterConfig,
    bank: &'a ScaleBank,
    norm: &'a NormalizationParams,
    bins: usize,
}

/// Writes `images/` and `features.csv` for one set of raw-unit windows.
fn write_windows(dir: &Path, bearing: &str, windows: &[Window], job: &FeatureJob) -> Result<()> {
    reset_dir(&dir.join("images"))?;
    let features: Vec<TfFeatureVector> = windows
        .par_iter()
        .enumerate()
        .map(|(k, w)| {
            let unit = Window::new(normalize_minmax(&w.values, job.norm), w.start_index);
            let image = rasterize_window(&unit, job.raster)?;
            write_png(&image_path(dir, bearing, k), &image)?;
            let scalogram = cwt(w, job.bank)?;
            extract_features_with_bins(&scalogram, w, job.bins).with_context(|| format!("{bearing} window {k}"))
        })
        .collect::<Result<_>>()?;
    write_atomic(&dir.join("features.csv"), features_to_csv(&features).as_bytes())?;
    write_json(&dir.join("scale_bank.json"), job.bank)
}

fn featurize(a: FeaturizeArgs, s: &Settings) -> Result<()> {
    let store = Store::new(&a.store);
    let mut m = store.load_manifest()?;
    let window: usize = s.pick(a.window, "window", DEFAULT_WINDOW)?;
    let hop: usize = s.pick(a.hop, "hop", window)?;
    let f_o: f64 = s.pick(a.fo, "fo", DEFAULT_FO_HZ)?;
    let scales: usize = s.pick(a.scales, "scales", DEFAULT_SCALES)?;
    let f_c: f64 = s.pick(a.fc, "fc", DEFAULT_FC)?;
    let bins: usize = s.pick(a.bins, "bins", rulforge::tfr::DEFAULT_HISTOGRAM_BINS)?;
    let channel: String = s.pick(a.channel, "channel", m.channels[0].clone())?;
    let seq_len: usize = s.pick(a.seq_len, "seq_len", DEFAULT_SEQ_LEN)?;
    let raster = RasterConfig {
        y_resolution: s.pick(a.y_res, "y_res", RasterConfig::default().y_resolution)?,
        ..RasterConfig::default()
    };
    raster.validate()?;
    if seq_len == 0 {
        return Err(invalid("seq_len must be >= 1"));
    }
    let ch = m.channel_index(&channel)?;
    let bank = build_scale_bank(f_o, m.sampling_rate_hz, f_c, scales)?;

    let raws: Vec<RawSignal> = m
        .bearings
        .par_iter()
        .map(|b| store.load_raw(&m, &b.name))
        .collect::<Result<_>>()?;
    let norm_path: Option<PathBuf> = s.pick_opt(a.norm, "norm")?;
    let norm = match norm_path {
        Some(p) => NormalizationParams::from_json(&read_text(&p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => fit_minmax(raws.iter().flat_map(|r| r.channels()[ch].iter().copied()))?,
    };

    let job = FeatureJob {
        raster: &raster,
        bank: &bank,
        norm: &norm,
        bins,
    };
    let mut total = 0;
    for (entry, raw) in m.bearings.iter_mut().zip(&raws) {
        let windows = segment(raw, ch, window, hop).with_context(|| format!("bearing {}", entry.name))?;
        let dir = store.bearing_dir(&entry.name);
        write_windows(&dir, &entry.name, &windows, &job)?;
        // downstream artifacts no longer match the new windows
        for stale in [dir.join("noise"), store.labels_path(&entry.name)] {
            if stale.is_dir() {
                std::fs::remove_dir_all(&stale)?;
            } else if stale.exists() {
                std::fs::remove_file(&stale)?;
            }
        }
        entry.windows = Some(windows.len());
        total += windows.len();
    }
    m.featurize = Some(FeaturizeRecord {
        channel,
        window,
        hop,
        f_o,
        histogram_bins: bins,
        seq_len,
        raster,
        normalization: norm,
        scale_bank: bank,
    });
    m.labels = None;
    m.noise.clear();
    store.save_manifest(&m)?;
    println!("featurized {total} window(s) across {} bearing(s)", m.bearings.len());
    Ok(())
}

// ---------------------------------------------------------------- labels

fn window_count(entry: &BearingEntry) -> Result<usize> {
    entry.windows.ok_or_else(|| {
        CliError::new("MissingArtifact", format!("bearing {} has not been featurized", entry.name)).into()
    })
}

fn labels(a: LabelsArgs, s: &Settings) -> Result<()> {
    let store = Store::new(&a.store);
    let mut m = store.load_manifest()?;
    m.featurized()?;
    let mode = match s.pick(a.mode, "mode", LabelModeArg::Linear)? {
        LabelModeArg::Linear => LabelMode::Linear,
        LabelModeArg::Piecewise => LabelMode::Piecewise {
            knee: s.pick(a.knee, "knee", rulforge::datagen::DEFAULT_KNEE)?,
        },
    };
    for entry in &m.bearings {
        let values = gen_labels(window_count(entry)?, mode).with_context(|| format!("bearing {}", entry.name))?;
        let mut csv = String::from("window_index,label\n");
        for (i, v) in values.iter().enumerate() {
            csv.push_str(&format!("{i},{v:?}\n"));
        }
        write_atomic(&store.labels_path(&entry.name), csv.as_bytes())?;
    }
    m.labels = Some(mode);
    store.save_manifest(&m)?;
    println!("labelled {} bearing(s)", m.bearings.len());
    Ok(())
}

// ---------------------------------------------------------------- noise

fn noise(a: NoiseArgs, s: &Settings) -> Result<()> {
    let store = Store::new(&a.store);
    let mut m = store.load_manifest()?;
    let rec = m.featurized()?.clone();
    let kind = match a.kind {
        NoiseKindArg::Uniform => NoiseKind::Uniform {
            low: s.pick(a.low, "low", -0.003)?,
            high: s.pick(a.high, "high", 0.05)?,
        },
        NoiseKindArg::Gaussian => NoiseKind::Gaussian {
            mu: s.pick(a.mu, "mu", 0.0)?,
            sigma: s.pick(a.sigma, "sigma", 0.03)?,
        },
        NoiseKindArg::SaltPepper => NoiseKind::SaltPepper {
            p_salt: s.pick(a.p_salt, "p_salt", 0.1)?,
            p_pepper: s.pick(a.p_pepper, "p_pepper", 0.2)?,
        },
    };
    let spec = NoiseSpec::new(kind, s.seed(a.seed)?).clipped();
    spec.validate()?;

    let ch = m.channel_index(&rec.channel)?;
    let norm = rec.normalization;
    let job = FeatureJob {
        raster: &rec.raster,
        bank: &rec.scale_bank,
        norm: &norm,
        bins: rec.histogram_bins,
    };
    for (b, entry) in m.bearings.iter().enumerate() {
        let raw = store.load_raw(&m, &entry.name)?;
        // noise lives on the normalized scale, where its parameters are stated
        let unit = normalize_minmax(&raw.channels()[ch], &norm);
        let bearing_spec = NoiseSpec {
            seed: window_seed(spec.seed, b),
            ..spec
        };
        let noisy = inject_noise(&unit, &bearing_spec)?;
        let span = norm.global_max - norm.global_min;
        let back: Vec<f64> = noisy.iter().map(|y| norm.global_min + y * span).collect();
        let signal = RawSignal::new(vec![back], m.sampling_rate_hz)?;
        let windows = segment(&signal, 0, rec.window, rec.hop)?;
        let dir = store.artifact_dir(&entry.name, Some(kind.name()));
        reset_dir(&dir)?;
        write_windows(&dir, &entry.name, &windows, &job)?;
        write_json(&dir.join("noise.json"), &bearing_spec)?;
    }
    m.noise.insert(kind.name().to_string(), spec);
    store.save_manifest(&m)?;
    println!("wrote {} variant for {} bearing(s)", kind.name(), m.bearings.len());
    Ok(())
}

// ---------------------------------------------------------------- predict / explain

struct ModelContext {
    graph: Graph,
    params: ParamSet,
    store: Store,
    bearing: String,
    dir: PathBuf,
    windows: usize,
    features: Vec<TfFeatureVector>,
    labels: BTreeMap<usize, f64>,
    image_shape: Vec<usize>,
    seq_len: usize,
}

impl ModelContext {
    fn load(a: &ModelInputArgs) -> Result<Self> {
        let graph = Graph::load(&a.graph).with_context(|| format!("loading graph {}", a.graph.display()))?;
        let params = load_weights(&a.weights).with_context(|| format!("loading weights {}", a.weights.display()))?;
        params.check_against(&graph)?;
        let (Some(image_shape), Some(tf_shape)) = (graph.input_shape(IMAGE_INPUT), graph.input_shape(TF_INPUT)) else {
            return Err(invalid(format!("graph needs inputs '{IMAGE_INPUT}' and '{TF_INPUT}'")));
        };
        let (image_shape, seq_len) = (image_shape.to_vec(), tf_shape[0]);

        let store = Store::new(&a.store);
        let m = store.load_manifest()?;
        m.featurized()?;
        let entry = m.bearing(a.bearing.as_deref())?;
        let windows = window_count(entry)?;
        if let Some(v) = &a.variant {
            if !m.noise.contains_key(v) {
                return Err(CliError::new("MissingArtifact", format!("no '{v}' noise variant; run `noise` first")).into());
            }
        }
        let dir = store.artifact_dir(&entry.name, a.variant.as_deref());
        let features = features_from_csv(&read_text(&dir.join("features.csv"))?)?;
        if features.len() != windows {
            return Err(CliError::new(
                "CountMismatch",
                format!("{} feature rows for {windows} windows", features.len()),
            )
            .into());
        }
        let labels_path = store.labels_path(&entry.name);
        let labels = if labels_path.exists() {
            read_indexed_csv(&labels_path, &["label"])?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            graph,
            params,
            bearing: entry.name.clone(),
            store,
            dir,
            windows,
            features,
            labels,
            image_shape,
            seq_len,
        })
    }

    fn image(&self, index: usize) -> Result<Tensor> {
        let path = image_path(&self.dir, &self.bearing, index);
        if !path.exists() {
            return Err(CliError::new("MissingArtifact", format!("{} not found", path.display())).into());
        }
        let image = to_model_image(&RasterImage::load_png(&path)?)?;
        if image.shape() != self.image_shape.as_slice() {
            return Err(CliError::new(
                "ShapeMismatch",
                format!("image {:?} does not fit graph input {:?}", image.shape(), self.image_shape),
            )
            .into());
        }
        Ok(image)
    }

    fn label(&self, index: usize) -> f64 {
        self.labels.get(&index).copied().unwrap_or(f64::NAN)
    }

    fn samples(&self) -> Result<Vec<Sample>> {
        let images: Vec<Tensor> = (0..self.windows).into_par_iter().map(|k| self.image(k)).collect::<Result<_>>()?;
        let labels: Vec<f64> = (0..self.windows).map(|k| self.label(k)).collect();
        Ok(assemble_samples(images, &self.features, &labels, self.seq_len)?)
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        if index >= self.windows {
            return Err(CliError::new(
                "SampleOutOfRange",
                format!("window {index} out of range ({} windows)", self.windows),
            )
            .into());
        }
        Ok(Sample {
            image: self.image(index)?,
            tf_sequence: tf_sequence(&self.features, index, self.seq_len)?,
            label: self.label(index),
            window_index: index,
        })
    }
}

fn predict(a: PredictArgs) -> Result<()> {
    let ctx = ModelContext::load(&a.input)?;
    let samples = ctx.samples()?;
    let raw: Vec<f64> = samples
        .par_iter()
        .map(|s| predict_rul(&ctx.graph, &ctx.params, s))
        .collect::<Result<_, _>>()?;
    let mut csv = String::from("window_index,rul,raw_output\n");
    for (s, r) in samples.iter().zip(&raw) {
        csv.push_str(&format!("{},{:?},{:?}\n", s.window_index, clip_rul(*r), r));
    }
    write_atomic(&a.out, csv.as_bytes())?;
    println!("predicted {} window(s) of {} from {}", raw.len(), ctx.bearing, ctx.store.root.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ExplainSummary {
    bearing: String,
    window_index: usize,
    raw_output: f64,
    mode: LrpMode,
    epsilon: f64,
    gamma: f64,
    #[serde(flatten)]
    relevance: RelevanceSummary,
}

fn explain_cmd(a: ExplainArgs, s: &Settings) -> Result<()> {
    let ctx = ModelContext::load(&a.input)?;
    let defaults = LrpConfig::default();
    let mode = match s.pick(a.mode, "mode", LrpModeArg::PaperLiteral)? {
        LrpModeArg::PaperLiteral => LrpMode::PaperLiteral,
        LrpModeArg::Conserving => LrpMode::Conserving,
    };
    let config = LrpConfig {
        epsilon: s.pick(a.epsilon, "epsilon", defaults.epsilon)?,
        gamma: s.pick(a.gamma, "gamma", defaults.gamma)?,
        mode,
    };
    config.validate()?;

    let sample = ctx.sample(a.sample)?;
    let trace = forward(&ctx.graph, &ctx.params, &sample_inputs(&sample))?;
    let out = trace.output().data()[0] as f64;
    let map = explain(&ctx.graph, &ctx.params, &trace, out, &config)?;

    let image_rel = map.image_relevance().ok_or_else(|| invalid("graph has no image input"))?;
    let tf_rel = map.tf_relevance().ok_or_else(|| invalid("graph has no tf input"))?;
    let (h, w, px) = heatmap_pixels(image_rel);
    let heatmap = RasterImage::from_pixels(h, w, px, a.sample).expect("heatmap size matches");
    write_png(&a.out.join("image_relevance.png"), &heatmap)?;
    write_atomic(&a.out.join("tf_relevance.csv"), tf_relevance_csv(tf_rel).as_bytes())?;
    write_atomic(&a.out.join("ledger.json"), format!("{}\n", map.ledger_json()).as_bytes())?;
    write_json(
        &a.out.join("summary.json"),
        &ExplainSummary {
            bearing: ctx.bearing.clone(),
            window_index: a.sample,
            raw_output: out,
            mode,
            epsilon: config.epsilon,
            gamma: config.gamma,
            relevance: summarize(&map),
        },
    )?;
    println!("explained window {} of {} into {}", a.sample, ctx.bearing, a.out.display());
    Ok(())
}

// ---------------------------------------------------------------- evaluate

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let pred = read_indexed_csv(&a.pred, &["rul", "label"])?;
    let truth = read_indexed_csv(&a.labels, &["label", "rul"])?;
    let mut y_true = Vec::with_capacity(pred.len());
    let mut y_pred = Vec::with_capacity(pred.len());
    for (idx, p) in &pred {
        let t = truth
            .get(idx)
            .ok_or_else(|| CliError::new("MissingLabel", format!("no label for window {idx}")))?;
        y_true.push(*t);
        y_pred.push(*p);
    }
    let report = evaluate(&y_true, &y_pred)?;
    match &a.out {
        Some(path) => write_atomic(path, format!("{}\n", report.to_json()).as_bytes())?,
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

// ---------------------------------------------------------------- model init

fn model_init(a: ModelInitArgs, s: &Settings) -> Result<()> {
    let config_path: Option<PathBuf> = s.pick_opt(a.model_config, "model_config")?;
    let mut cfg: ModelConfig = match config_path {
        Some(p) => serde_json::from_str(&read_text(&p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => ModelConfig::default(),
    };
    if let Some(t) = s.pick_opt(a.seq_len, "seq_len")? {
        cfg.tf_seq_len = t;
    }
    let init = match s.pick(a.init, "init", InitArg::Uniform)? {
        InitArg::Uniform => ParamInit::default(),
        InitArg::HeUniform => ParamInit::HeUniform { bias_limit: 0.0 },
        InitArg::Zeros => ParamInit::Zeros,
    };
    let seed = s.seed(a.seed)?;
    let graph = build_model(&cfg)?;
    let params = init_params(&graph, init, seed)?;
    write_atomic(&a.out_graph, format!("{}\n", graph.to_json()?).as_bytes())?;
    let mut buf = Vec::new();
    write_weights(&params, &mut buf)?;
    write_atomic(&a.out_weights, &buf)?;
    println!("{} nodes, {} parameter values, seed {seed}", graph.nodes.len(), params.total_values());
    Ok(())
}
