//! Multi-feature Siamese tracking engine.
//!
//! Two five-layer fully-convolutional backbones (`S`, tracking-trained, and
//! `A`, classification-trained) extract conv3/conv4/conv5 features from a
//! 127x127 exemplar and a 255x255 search region. Every tap is recalibrated by
//! a squeeze-and-excitation block, correlated exemplar-against-search into a
//! 17x17 response map, and the six maps are fused hierarchically (per model,
//! then across models) into the score map that drives the tracker.
//!
//! # Layout
//! - [`tensor`]: dense `Tensor3` and the numeric kernels (valid convolution,
//!   pooling, bicubic resize, patch cropping).
//! - [`weights`]: the `MFSTW1` weight container.
//! - [`backbone`]: forward inference with conv3/4/5 taps.
//! - [`se`]: squeeze, excitation and channel recalibration.
//! - [`response`]: cross-correlation, HW/SM/SW fusion and peak finding.
//! - [`tracker`]: initialization and the three-scale tracking step.

pub mod backbone;
mod error;
mod gemm;
pub mod response;
pub mod se;
pub mod tensor;
pub mod tracker;
pub mod weights;

pub use backbone::{Backbone, BackboneSpec, FeatureTaps, InputKind, LayerSpec, ModelId, TapLayer};
pub use error::{Error, Result};
pub use response::{
    combine_all, fuse, peak_location, xcorr, xcorr_taps, FusionConfig, FusionStrategy, LayerTag,
    ResponseMap,
};
pub use se::{ChannelWeights, SeBank, SeMode, SeParams};
pub use tensor::{KernelBank, Tensor3};
pub use tracker::{BBox, Engine, StepReport, Tracker, TrackerConfig, TrackerState};
pub use weights::{WeightContainer, WeightManifest};
