//! Squeeze-and-excitation channel recalibration.
//!
//! `squeeze` averages each channel into a descriptor, `excite` runs the
//! bias-free bottleneck `sigmoid(W2 * relu(W1 * d))`, and `recalibrate`
//! scales every channel by its weight. One parameter set exists per
//! (model, tap layer).

use crate::backbone::{BackboneSpec, InputKind, ModelId, TapLayer};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;
use crate::weights::{se_entry, WeightContainer};

/// Channel reduction factor of the excitation bottleneck.
pub const SE_REDUCTION: usize = 4;

/// Largest f32 strictly below 1.
const SIGMOID_MAX: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SeParams {
    model_id: ModelId,
    layer: TapLayer,
    channels: usize,
    /// `(C/r) x C`, row-major
    w1: Vec<f32>,
    /// `C x (C/r)`, row-major
    w2: Vec<f32>,
}

impl SeParams {
    pub fn new(
        model_id: ModelId,
        layer: TapLayer,
        channels: usize,
        w1: Vec<f32>,
        w2: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(SE_REDUCTION) {
            return Err(Error::shape(format!(
                "SE channel count {channels} must be a positive multiple of {SE_REDUCTION}"
            )));
        }
        let hidden = channels / SE_REDUCTION;
        if w1.len() != hidden * channels || w2.len() != channels * hidden {
            return Err(Error::shape(format!(
                "SE {model_id}.{layer}: W1/W2 must hold {} values each, got {} and {}",
                hidden * channels,
                w1.len(),
                w2.len()
            )));
        }
        Ok(Self {
            model_id,
            layer,
            channels,
            w1,
            w2,
        })
    }

    /// All-zero bottleneck: every channel weight is sigmoid(0) = 0.5.
    pub fn neutral(model_id: ModelId, layer: TapLayer, channels: usize) -> Result<Self> {
        let n = channels * (channels / SE_REDUCTION);
        Self::new(model_id, layer, channels, vec![0.0; n], vec![0.0; n])
    }

    pub fn model_id(&self) -> ModelId {
        self.model_id
    }

    pub fn layer(&self) -> TapLayer {
        self.layer
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.channels / SE_REDUCTION
    }

    pub fn reduction(&self) -> usize {
        SE_REDUCTION
    }

    pub fn w1(&self) -> &[f32] {
        &self.w1
    }

    pub fn w2(&self) -> &[f32] {
        &self.w2
    }
}

/// Per-channel recalibration weights, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights(Vec<f32>);

impl ChannelWeights {
    pub fn new(omega: Vec<f32>) -> Result<Self> {
        if let Some(i) = omega.iter().position(|&w| !(w > 0.0 && w < 1.0)) {
            return Err(Error::validation(format!(
                "channel weight {i} = {} is outside (0, 1)",
                omega[i]
            )));
        }
        Ok(Self(omega))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeMode {
    /// Weights come from the exemplar once and are reused for every search
    /// region.
    #[default]
    ExemplarStatic,
    /// Weights are recomputed from each input's own descriptor.
    PerInput,
}

/// Channel means.
pub fn squeeze(feature: &Tensor3) -> Vec<f32> {
    let plane = feature.width() * feature.height();
    (0..feature.channels())
        .map(|c| {
            if plane == 0 {
                return 0.0;
            }
            let sum: f64 = feature.channel(c).iter().map(|&v| v as f64).sum();
            (sum / plane as f64) as f32
        })
        .collect()
}

pub fn excite(descriptor: &[f32], params: &SeParams) -> Result<ChannelWeights> {
    let c = params.channels;
    if descriptor.len() != c {
        return Err(Error::shape(format!(
            "descriptor has {} components, SE {}.{} expects {c}",
            descriptor.len(),
            params.model_id,
            params.layer
        )));
    }
    let h = params.hidden();
    let hidden: Vec<f64> = params
        .w1
        .chunks_exact(c)
        .map(|row| {
            let z: f64 = row
                .iter()
                .zip(descriptor)
                .map(|(&w, &d)| w as f64 * d as f64)
                .sum();
            z.max(0.0)
        })
        .collect();
    let omega = params
        .w2
        .chunks_exact(h)
        .map(|row| {
            let z: f64 = row.iter().zip(&hidden).map(|(&w, &v)| w as f64 * v).sum();
            let s = 1.0 / (1.0 + (-z).exp());
            (s as f32).clamp(f32::MIN_POSITIVE, SIGMOID_MAX)
        })
        .collect();
    Ok(ChannelWeights(omega))
}

/// Multiplies every cell of channel `c` by `weights[c]`.
pub fn recalibrate(feature: &Tensor3, weights: &[f32]) -> Result<Tensor3> {
    if weights.len() != feature.channels() {
        return Err(Error::shape(format!(
            "{} channel weights for a {}-channel feature",
            weights.len(),
            feature.channels()
        )));
    }
    let mut out = feature.clone();
    for (c, &w) in weights.iter().enumerate() {
        for v in out.channel_mut(c) {
            *v *= w;
        }
    }
    Ok(out)
}

/// Squeeze, excite and recalibrate one tap under the given mode.
///
/// In [`SeMode::ExemplarStatic`] a search-region pass must be handed the
/// exemplar's weights in `cached`; they are applied verbatim and returned.
pub fn se_apply(
    feature: &Tensor3,
    params: &SeParams,
    mode: SeMode,
    kind: InputKind,
    cached: Option<&ChannelWeights>,
) -> Result<(Tensor3, ChannelWeights)> {
    let weights = match (mode, kind) {
        (SeMode::ExemplarStatic, InputKind::Search) => cached
            .ok_or_else(|| {
                Error::State(format!(
                    "SE {}.{}: search pass in exemplar-static mode needs the cached exemplar weights",
                    params.model_id, params.layer
                ))
            })?
            .clone(),
        _ => excite(&squeeze(feature), params)?,
    };
    let out = recalibrate(feature, weights.as_slice())?;
    Ok((out, weights))
}

/// One recalibration unit: either a learned bottleneck or a fixed weight
/// vector shipped in the container as `<model>.se.<layer>.omega`.
#[derive(Debug, Clone, PartialEq)]
pub enum SeUnit {
    Learned(SeParams),
    Fixed(ChannelWeights),
}

impl SeUnit {
    /// Weights and recalibrated feature for `feature`. Fixed units ignore the
    /// mode and the cache.
    pub fn apply(
        &self,
        feature: &Tensor3,
        mode: SeMode,
        kind: InputKind,
        cached: Option<&ChannelWeights>,
    ) -> Result<(Tensor3, ChannelWeights)> {
        match self {
            SeUnit::Learned(p) => se_apply(feature, p, mode, kind, cached),
            SeUnit::Fixed(w) => Ok((recalibrate(feature, w.as_slice())?, w.clone())),
        }
    }
}

/// The six SE units, indexed by (model, tap layer).
#[derive(Debug, Clone, PartialEq)]
pub struct SeBank {
    units: [[SeUnit; 3]; 2],
}

impl SeBank {
    pub fn from_container(weights: &WeightContainer) -> Result<Self> {
        let load = |model: ModelId| -> Result<[SeUnit; 3]> {
            let spec = BackboneSpec::canonical(model);
            let unit = |tap: TapLayer| -> Result<SeUnit> {
                let c = spec.tap_channels(tap);
                let omega = se_entry(model, tap, "omega");
                if let Some(t) = weights.tensor(&omega) {
                    if t.shape != [c] {
                        return Err(Error::shape(format!(
                            "{omega} has shape {:?}, expected [{c}]",
                            t.shape
                        )));
                    }
                    return Ok(SeUnit::Fixed(ChannelWeights::new(t.data)?));
                }
                let h = c / SE_REDUCTION;
                let fetch = |part: &str, shape: [usize; 2]| -> Result<Vec<f32>> {
                    let name = se_entry(model, tap, part);
                    let t = weights
                        .tensor(&name)
                        .ok_or_else(|| Error::validation(format!("missing tensor {name}")))?;
                    if t.shape != shape {
                        return Err(Error::shape(format!(
                            "{name} has shape {:?}, expected {shape:?}",
                            t.shape
                        )));
                    }
                    Ok(t.data)
                };
                let w1 = fetch("W1", [h, c])?;
                let w2 = fetch("W2", [c, h])?;
                Ok(SeUnit::Learned(SeParams::new(model, tap, c, w1, w2)?))
            };
            Ok([
                unit(TapLayer::C3)?,
                unit(TapLayer::C4)?,
                unit(TapLayer::C5)?,
            ])
        };
        Ok(Self {
            units: [load(ModelId::S)?, load(ModelId::A)?],
        })
    }

    pub fn unit(&self, model: ModelId, tap: TapLayer) -> &SeUnit {
        &self.units[model.index()][tap.index()]
    }
}
