//! Multimodal remaining-useful-life prognostics for rolling-element bearings.
//!
//! The pipeline turns multichannel vibration recordings into two model
//! inputs: a Bresenham-rasterized image of a normalized window
//! ([`rasterizer`]) and a sequence of Morlet-CWT time-frequency features
//! ([`tfr`]). [`datagen`] assembles them into samples, [`model`] builds the
//! three-branch network on top of the from-scratch [`engine`], and [`lrp`]
//! replays a traced forward pass backwards to split the prediction into
//! image-modality and feature-modality relevance.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod engine;
pub mod lrp;
pub mod metrics;
pub mod model;
pub mod rasterizer;
pub mod signal_io;
pub mod tfr;

#[cfg(any(test, feature = "reference"))]
pub mod reference;

mod rng;

pub use datagen::{NoiseKind, NoiseSpec, Sample};
pub use engine::{ActivationTrace, Graph, LayerKind, LayerNode, ParamSet, Tensor};
pub use lrp::{LrpConfig, LrpMode, RelevanceMap};
pub use metrics::EvalReport;
pub use model::ModelConfig;
pub use rasterizer::{RasterConfig, RasterImage};
pub use signal_io::{NormalizationParams, RawSignal, Window};
pub use tfr::{ScaleBank, Scalogram, TfFeatureVector};
