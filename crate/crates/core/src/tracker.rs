//! The online tracking loop.
//!
//! Initialization crops a context-padded exemplar around the first box,
//! extracts and recalibrates its taps for both backbones, and keeps them as
//! fixed correlation filters. Each step then searches three scales around
//! the previous center, fuses the six response maps per scale, upsamples
//! the result to the 255-pixel search size and moves the box to the best
//! (window-blended) peak.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::backbone::{
    Backbone, BackboneSpec, ModelId, TapLayer, EXEMPLAR_SIZE, SEARCH_SIZE, TOTAL_STRIDE,
};
use crate::error::{Error, Result};
use crate::response::{combine_all, xcorr, FusionConfig, LayerTag, ResponseMap, RESPONSE_SIZE};
use crate::se::{ChannelWeights, SeBank, SeMode};
use crate::tensor::{crop_resize_patch_with_fill, mean_color, resize_bicubic, Tensor3};
use crate::weights::WeightContainer;

pub const SCALE_STEP: f64 = 1.025;
/// `1.025^-1, 1.025^0, 1.025^1`
pub const SCALE_FACTORS: [f64; 3] = [1.0 / SCALE_STEP, 1.0, SCALE_STEP];
/// Order in which scales are visited; earlier scales win ties.
const SCALE_PREFERENCE: [usize; 3] = [1, 0, 2];
/// Box sizes are kept within this factor of the initial size.
const SIZE_LIMIT: f64 = 5.0;

/// Axis-aligned box in continuous pixel coordinates (pixel `i` covers
/// `[i, i+1)`), stored by center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(center_x: f64, center_y: f64, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(Error::argument(format!(
                "box size {width}x{height} must be positive"
            )));
        }
        if !center_x.is_finite() || !center_y.is_finite() {
            return Err(Error::argument("box center must be finite"));
        }
        Ok(Self {
            center_x,
            center_y,
            width,
            height,
        })
    }

    /// From the OTB `(x, y, w, h)` top-left form.
    pub fn from_top_left(x: f64, y: f64, width: f64, height: f64) -> Result<Self> {
        Self::new(x + width / 2.0, y + height / 2.0, width, height)
    }

    /// `(x, y, w, h)` with top-left origin.
    pub fn to_top_left(&self) -> [f64; 4] {
        [
            self.center_x - self.width / 2.0,
            self.center_y - self.height / 2.0,
            self.width,
            self.height,
        ]
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn intersects_frame(&self, frame_w: f64, frame_h: f64) -> bool {
        let [x, y, w, h] = self.to_top_left();
        x < frame_w && y < frame_h && x + w > 0.0 && y + h > 0.0
    }

    /// Side of the context-padded square exemplar crop:
    /// `sqrt((w+p)(h+p))` with `p = (w+h)/4`.
    pub fn exemplar_side(&self) -> f64 {
        let p = (self.width + self.height) / 4.0;
        ((self.width + p) * (self.height + p)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub fusion: FusionConfig,
    /// Blend factor of the cosine window, in `[0, 1]`.
    pub window_influence: f64,
    /// Fraction of the chosen scale change applied per step, in `[0, 1]`.
    pub scale_damping: f64,
    pub se_mode: SeMode,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            window_influence: 0.176,
            scale_damping: 0.59,
            se_mode: SeMode::ExemplarStatic,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        if !(0.0..=1.0).contains(&self.window_influence) {
            return Err(Error::Config(format!(
                "window influence {} outside [0, 1]",
                self.window_influence
            )));
        }
        if !(0.0..=1.0).contains(&self.scale_damping) {
            return Err(Error::Config(format!(
                "scale damping {} outside [0, 1]",
                self.scale_damping
            )));
        }
        Ok(())
    }
}

/// Both backbones plus the six SE units, built once from a container and
/// shared by any number of trackers.
#[derive(Debug, Clone)]
pub struct Engine {
    backbones: [Backbone; 2],
    se: SeBank,
}

impl Engine {
    pub fn from_container(weights: &WeightContainer) -> Result<Self> {
        Ok(Self {
            backbones: [
                Backbone::build(BackboneSpec::canonical(ModelId::S), weights)?,
                Backbone::build(BackboneSpec::canonical(ModelId::A), weights)?,
            ],
            se: SeBank::from_container(weights)?,
        })
    }

    pub fn backbone(&self, model: ModelId) -> &Backbone {
        &self.backbones[model.index()]
    }

    pub fn se(&self) -> &SeBank {
        &self.se
    }

    /// Forward pass plus SE for one model. Returns recalibrated taps and the
    /// weights applied, in c3/c4/c5 order.
    fn recalibrated_taps(
        &self,
        model: ModelId,
        patch: &Tensor3,
        mode: SeMode,
        cached: Option<&[ChannelWeights; 3]>,
    ) -> Result<([Tensor3; 3], [ChannelWeights; 3])> {
        let taps = self.backbone(model).forward_taps(patch)?;
        let kind = taps.input_kind;
        let mut feats = Vec::with_capacity(3);
        let mut weights = Vec::with_capacity(3);
        for tap in TapLayer::ALL {
            let cache = cached.map(|c| &c[tap.index()]);
            let (f, w) = self
                .se
                .unit(model, tap)
                .apply(taps.get(tap), mode, kind, cache)?;
            feats.push(f);
            weights.push(w);
        }
        Ok((vec_to_array(feats), vec_to_array(weights)))
    }
}

fn vec_to_array<T, const N: usize>(v: Vec<T>) -> [T; N] {
    v.try_into()
        .unwrap_or_else(|_| unreachable!("length fixed by construction"))
}

/// Six tap responses for one search scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleResponse {
    /// Tagged maps, S c3..c5 then A c3..c5.
    pub maps: Vec<ResponseMap>,
    /// SE weights applied to the search features, same order as `maps`.
    pub se_weights: Vec<ChannelWeights>,
    /// Side of the image region that was resampled to 255 pixels.
    pub search_side: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleResponses {
    pub scales: [ScaleResponse; 3],
}

/// What one tracking step decided.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub bbox: BBox,
    pub scale_index: usize,
    /// Peak in the 255x255 upsampled score map of the winning scale.
    pub peak_row: usize,
    pub peak_col: usize,
    pub peak_score: f32,
    /// SE weights applied to the search features, per scale.
    pub search_se_weights: [Vec<ChannelWeights>; 3],
}

/// Everything a tracker carries between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub current: BBox,
    initial: BBox,
    /// Recalibrated exemplar taps used as correlation filters, `[model][tap]`.
    exemplar: [[Tensor3; 3]; 2],
    /// SE weights derived from the exemplar, `[model][tap]`.
    cached_se_weights: [[ChannelWeights; 3]; 2],
    pub config: TrackerConfig,
    pub frames_tracked: usize,
}

impl TrackerState {
    /// Builds the exemplar filters from the first frame and its box.
    pub fn init(
        engine: &Engine,
        frame: &Tensor3,
        bbox: BBox,
        config: TrackerConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_frame(frame)?;
        let bbox = BBox::new(bbox.center_x, bbox.center_y, bbox.width, bbox.height)?;
        if !bbox.intersects_frame(frame.width() as f64, frame.height() as f64) {
            return Err(Error::argument(
                "initial box lies entirely outside the frame",
            ));
        }
        let fill = mean_color(frame);
        let patch = crop_resize_patch_with_fill(
            frame,
            bbox.center_x,
            bbox.center_y,
            bbox.exemplar_side(),
            EXEMPLAR_SIZE,
            &fill,
        )?;
        let (s_feats, s_w) = engine.recalibrated_taps(ModelId::S, &patch, config.se_mode, None)?;
        let (a_feats, a_w) = engine.recalibrated_taps(ModelId::A, &patch, config.se_mode, None)?;
        Ok(Self {
            current: bbox,
            initial: bbox,
            exemplar: [s_feats, a_feats],
            cached_se_weights: [s_w, a_w],
            config,
            frames_tracked: 0,
        })
    }

    pub fn exemplar_filter(&self, model: ModelId, tap: TapLayer) -> &Tensor3 {
        &self.exemplar[model.index()][tap.index()]
    }

    pub fn cached_se_weights(&self, model: ModelId, tap: TapLayer) -> &ChannelWeights {
        &self.cached_se_weights[model.index()][tap.index()]
    }

    /// Search-region side (image pixels) at unit scale for the current box.
    pub fn search_side(&self) -> f64 {
        self.current.exemplar_side() * SEARCH_SIZE as f64 / EXEMPLAR_SIZE as f64
    }

    /// Crops the three scaled search regions, runs both backbones and
    /// correlates every tap. Pure with respect to the state.
    pub fn search_responses(&self, engine: &Engine, frame: &Tensor3) -> Result<ScaleResponses> {
        check_frame(frame)?;
        let fill = mean_color(frame);
        let base = self.search_side();
        let (cx, cy) = (self.current.center_x, self.current.center_y);
        let jobs: Vec<(usize, ModelId)> =
            (0..3).flat_map(|k| ModelId::ALL.map(|m| (k, m))).collect();
        let results: Vec<(Vec<ResponseMap>, [ChannelWeights; 3])> = jobs
            .par_iter()
            .map(|&(k, model)| {
                let side = base * SCALE_FACTORS[k];
                let patch = crop_resize_patch_with_fill(frame, cx, cy, side, SEARCH_SIZE, &fill)?;
                let cache = &self.cached_se_weights[model.index()];
                let (feats, weights) =
                    engine.recalibrated_taps(model, &patch, self.config.se_mode, Some(cache))?;
                let maps = TapLayer::ALL
                    .iter()
                    .map(|&tap| {
                        let filter = &self.exemplar[model.index()][tap.index()];
                        Ok(xcorr(filter, &feats[tap.index()])?.tagged(
                            Some(model),
                            LayerTag::Tap(tap),
                            k,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((maps, weights))
            })
            .collect::<Result<_>>()?;

        let mut scales = Vec::with_capacity(3);
        let mut it = results.into_iter();
        for factor in SCALE_FACTORS {
            let (mut maps, s_w) = it.next().expect("two jobs per scale");
            let (a_maps, a_w) = it.next().expect("two jobs per scale");
            maps.extend(a_maps);
            scales.push(ScaleResponse {
                maps,
                se_weights: s_w.into_iter().chain(a_w).collect(),
                search_side: base * factor,
            });
        }
        Ok(ScaleResponses {
            scales: vec_to_array(scales),
        })
    }

    /// Fuses precomputed responses, picks the best scale and peak, and moves
    /// the box. `frame_w`/`frame_h` bound the new center.
    pub fn apply_responses(
        &mut self,
        frame_w: usize,
        frame_h: usize,
        responses: &ScaleResponses,
    ) -> Result<StepReport> {
        let up = responses
            .scales
            .iter()
            .map(|s| {
                let combined = combine_all(&s.maps, &self.config.fusion)?;
                debug_assert_eq!(combined.width(), RESPONSE_SIZE);
                resize_bicubic(&combined.to_tensor(), SEARCH_SIZE, SEARCH_SIZE)
            })
            .collect::<Result<Vec<_>>>()?;
        let scores = blend_with_window(&up, self.config.window_influence);

        let mut best: Option<(usize, usize, f32)> = None;
        for &k in &SCALE_PREFERENCE {
            let (i, v) = first_max(&scores[k]);
            if best.is_none_or(|(_, _, b)| v > b) {
                best = Some((k, i, v));
            }
        }
        let (k, index, score) = best.expect("three scales");
        let (row, col) = (index / SEARCH_SIZE, index % SEARCH_SIZE);

        // upsampled pixels -> response cells -> search pixels -> image pixels
        let center = (SEARCH_SIZE / 2) as f64;
        let to_image = RESPONSE_SIZE as f64 / SEARCH_SIZE as f64
            * TOTAL_STRIDE as f64
            * responses.scales[k].search_side
            / SEARCH_SIZE as f64;
        let dx = (col as f64 - center) * to_image;
        let dy = (row as f64 - center) * to_image;

        let prev = self.current;
        let factor = 1.0 + self.config.scale_damping * (SCALE_FACTORS[k] - 1.0);
        let clamp_size = |v: f64, init: f64| v.clamp(init / SIZE_LIMIT, init * SIZE_LIMIT);
        self.current = BBox::new(
            (prev.center_x + dx).clamp(0.0, frame_w as f64),
            (prev.center_y + dy).clamp(0.0, frame_h as f64),
            clamp_size(prev.width * factor, self.initial.width),
            clamp_size(prev.height * factor, self.initial.height),
        )?;
        self.frames_tracked += 1;
        Ok(StepReport {
            bbox: self.current,
            scale_index: k,
            peak_row: row,
            peak_col: col,
            peak_score: score,
            search_se_weights: [0, 1, 2].map(|k| responses.scales[k].se_weights.clone()),
        })
    }

    /// One full tracking step on `frame`.
    pub fn step(&mut self, engine: &Engine, frame: &Tensor3) -> Result<StepReport> {
        let responses = self.search_responses(engine, frame)?;
        self.apply_responses(frame.width(), frame.height(), &responses)
    }
}

fn check_frame(frame: &Tensor3) -> Result<()> {
    if frame.channels() != 3 || frame.width() == 0 || frame.height() == 0 {
        return Err(Error::shape(format!(
            "frames must be non-empty RGB, got {}x{}x{}",
            frame.width(),
            frame.height(),
            frame.channels()
        )));
    }
    Ok(())
}

fn first_max(values: &[f32]) -> (usize, f32) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}

/// Normalized 255x255 Hann window (sums to 1).
fn hann_window() -> &'static [f32] {
    static WINDOW: OnceLock<Vec<f32>> = OnceLock::new();
    WINDOW.get_or_init(|| {
        let n = SEARCH_SIZE;
        let h: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
            .collect();
        let total: f64 = h.iter().sum::<f64>().powi(2);
        let mut w = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                w.push((h[y] * h[x] / total) as f32);
            }
        }
        w
    })
}

/// `(1-i) * map + i * window` over all scales. Maps are shifted by their
/// common minimum and divided by their mean mass first, one affine transform
/// shared by all scales so cross-scale ordering is kept. With `i = 0` the
/// raw upsampled maps are returned.
fn blend_with_window(maps: &[Tensor3], influence: f64) -> Vec<Vec<f32>> {
    if influence == 0.0 {
        return maps.iter().map(|m| m.data().to_vec()).collect();
    }
    let min = maps
        .iter()
        .flat_map(|m| m.data())
        .fold(f32::INFINITY, |a, &b| a.min(b)) as f64;
    let mass: f64 = maps
        .iter()
        .flat_map(|m| m.data())
        .map(|&v| v as f64 - min)
        .sum::<f64>()
        / maps.len() as f64;
    let window = hann_window();
    maps.iter()
        .map(|m| {
            m.data()
                .iter()
                .zip(window)
                .map(|(&v, &w)| {
                    let norm = if mass > 1e-12 {
                        (v as f64 - min) / mass
                    } else {
                        0.0
                    };
                    ((1.0 - influence) * norm + influence * w as f64) as f32
                })
                .collect()
        })
        .collect()
}

/// Owns an optional state so stepping before `init` is a reportable error.
#[derive(Debug)]
pub struct Tracker<'e> {
    engine: &'e Engine,
    config: TrackerConfig,
    state: Option<TrackerState>,
}

impl<'e> Tracker<'e> {
    pub fn new(engine: &'e Engine, config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            engine,
            config,
            state: None,
        })
    }

    pub fn init(&mut self, frame: &Tensor3, bbox: BBox) -> Result<()> {
        self.state = Some(TrackerState::init(
            self.engine,
            frame,
            bbox,
            self.config.clone(),
        )?);
        Ok(())
    }

    pub fn step(&mut self, frame: &Tensor3) -> Result<StepReport> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::State("tracker stepped before init".into()))?;
        state.step(self.engine, frame)
    }

    pub fn state(&self) -> Option<&TrackerState> {
        self.state.as_ref()
    }
}

pub fn init_tracker(
    engine: &Engine,
    frame: &Tensor3,
    bbox: BBox,
    config: TrackerConfig,
) -> Result<TrackerState> {
    TrackerState::init(engine, frame, bbox, config)
}

pub fn track_step(
    engine: &Engine,
    mut state: TrackerState,
    frame: &Tensor3,
) -> Result<(TrackerState, BBox)> {
    let report = state.step(engine, frame)?;
    Ok((state, report.bbox))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_factors_are_symmetric() {
        assert_eq!(SCALE_FACTORS[1], 1.0);
        assert!((SCALE_FACTORS[0] * SCALE_FACTORS[1] * SCALE_FACTORS[2] - 1.0).abs() < 1e-15);
        assert_eq!(SCALE_FACTORS[2], 1.025);
    }

    #[test]
    fn bbox_conversions() {
        let b = BBox::from_top_left(10.0, 20.0, 30.0, 40.0).unwrap();
        assert_eq!((b.center_x, b.center_y), (25.0, 40.0));
        assert_eq!(b.to_top_left(), [10.0, 20.0, 30.0, 40.0]);
        assert!(BBox::new(0.0, 0.0, 0.0, 3.0).is_err());
        assert!(BBox::new(0.0, 0.0, 2.0, -1.0).is_err());
        // w = h = 40 -> p = 20 -> side = 60
        assert_eq!(
            BBox::new(0.0, 0.0, 40.0, 40.0).unwrap().exemplar_side(),
            60.0
        );
    }

    #[test]
    fn window_peaks_at_center_and_sums_to_one() {
        let w = hann_window();
        let sum: f64 = w.iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-4);
        let (i, _) = first_max(w);
        assert_eq!((i / 255, i % 255), (127, 127));
    }

    #[test]
    fn blend_keeps_raw_maps_without_window() {
        let a = Tensor3::filled(255, 255, 1, 2.0);
        let out = blend_with_window(std::slice::from_ref(&a), 0.0);
        assert_eq!(out[0], a.data());
    }
}
