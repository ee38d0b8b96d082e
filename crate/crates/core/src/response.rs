//! Exemplar/search cross-correlation and hierarchical response fusion.

use std::fmt;
use std::str::FromStr;

use crate::backbone::{FeatureTaps, InputKind, ModelId, TapLayer};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Side of every tap-pair response map (26-10+1 = 24-8+1 = 22-6+1).
pub const RESPONSE_SIZE: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerTag {
    Tap(TapLayer),
    Combined,
}

impl fmt::Display for LayerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerTag::Tap(t) => t.fmt(f),
            LayerTag::Combined => f.write_str("combined"),
        }
    }
}

/// Row-major score grid plus the provenance tags of the map.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    width: usize,
    height: usize,
    scores: Vec<f32>,
    /// `None` once maps from both models have been fused.
    pub model_id: Option<ModelId>,
    pub layer: LayerTag,
    pub scale_index: usize,
}

impl ResponseMap {
    pub fn new(width: usize, height: usize, scores: Vec<f32>) -> Result<Self> {
        if scores.len() != width * height || scores.is_empty() {
            return Err(Error::shape(format!(
                "response {width}x{height} needs {} scores, got {}",
                width * height,
                scores.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("response scores must be finite"));
        }
        Ok(Self {
            width,
            height,
            scores,
            model_id: None,
            layer: LayerTag::Combined,
            scale_index: 0,
        })
    }

    pub fn tagged(mut self, model: Option<ModelId>, layer: LayerTag, scale_index: usize) -> Self {
        self.model_id = model;
        self.layer = layer;
        self.scale_index = scale_index;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.scores[row * self.width + col]
    }

    pub fn max(&self) -> f32 {
        self.scores
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn scaled(&self, alpha: f32) -> Self {
        let mut out = self.clone();
        out.scores.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// The map as a single-channel tensor (for resizing).
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::new(self.width, self.height, 1, self.scores.clone())
            .expect("dimensions are consistent")
    }

    fn same_grid(&self, other: &ResponseMap) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionStrategy {
    /// `sum w_t r_t`
    HardWeight,
    /// `sum r_t / max(r_t)`
    SoftMean,
    /// `sum w_t r_t / max(r_t)`
    SoftWeight,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [
        FusionStrategy::HardWeight,
        FusionStrategy::SoftMean,
        FusionStrategy::SoftWeight,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            FusionStrategy::HardWeight => "HW",
            FusionStrategy::SoftMean => "SM",
            FusionStrategy::SoftWeight => "SW",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hw" => Ok(FusionStrategy::HardWeight),
            "sm" => Ok(FusionStrategy::SoftMean),
            "sw" => Ok(FusionStrategy::SoftWeight),
            other => Err(Error::argument(format!(
                "unknown fusion strategy {other:?} (hw|sm|sw)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub per_layer_s: FusionStrategy,
    pub per_layer_a: FusionStrategy,
    pub cross_model: FusionStrategy,
    /// c3, c4, c5
    pub layer_weights_s: [f32; 3],
    pub layer_weights_a: [f32; 3],
    /// S, A
    pub model_weights: [f32; 2],
    pub epsilon: f32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            per_layer_s: FusionStrategy::HardWeight,
            per_layer_a: FusionStrategy::SoftWeight,
            cross_model: FusionStrategy::SoftWeight,
            layer_weights_s: [0.1, 0.3, 0.7],
            layer_weights_a: [0.1, 0.6, 0.3],
            model_weights: [0.3, 0.7],
            epsilon: 1e-12,
        }
    }
}

impl FusionConfig {
    pub fn with_strategies(
        per_layer_s: FusionStrategy,
        per_layer_a: FusionStrategy,
        cross_model: FusionStrategy,
    ) -> Self {
        Self {
            per_layer_s,
            per_layer_a,
            cross_model,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .layer_weights_s
            .iter()
            .chain(&self.layer_weights_a)
            .chain(&self.model_weights);
        for &w in all {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::Config(format!(
                    "fusion weight {w} must be finite and nonnegative"
                )));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("fusion epsilon must be positive".into()));
        }
        Ok(())
    }

    fn per_layer(&self, model: ModelId) -> (FusionStrategy, &[f32; 3]) {
        match model {
            ModelId::S => (self.per_layer_s, &self.layer_weights_s),
            ModelId::A => (self.per_layer_a, &self.layer_weights_a),
        }
    }
}

/// Valid cross-correlation with the exemplar feature as the single filter.
/// Output is `(Wx-Wz+1) x (Hx-Hz+1)`.
pub fn xcorr(exemplar: &Tensor3, search: &Tensor3) -> Result<ResponseMap> {
    if exemplar.channels() != search.channels() {
        return Err(Error::shape(format!(
            "exemplar has {} channels, search has {}",
            exemplar.channels(),
            search.channels()
        )));
    }
    let (zw, zh) = (exemplar.width(), exemplar.height());
    let (xw, xh) = (search.width(), search.height());
    if zw == 0 || zh == 0 || zw > xw || zh > xh {
        return Err(Error::shape(format!(
            "{zw}x{zh} exemplar does not fit inside a {xw}x{xh} search feature"
        )));
    }
    let (ow, oh) = (xw - zw + 1, xh - zh + 1);
    let mut acc = vec![0f64; ow * oh];
    for c in 0..exemplar.channels() {
        let z = exemplar.channel(c);
        let x = search.channel(c);
        for ky in 0..zh {
            for kx in 0..zw {
                let w = z[ky * zw + kx] as f64;
                if w == 0.0 {
                    continue;
                }
                for oy in 0..oh {
                    let src = &x[(oy + ky) * xw + kx..][..ow];
                    let dst = &mut acc[oy * ow..(oy + 1) * ow];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += w * s as f64;
                    }
                }
            }
        }
    }
    ResponseMap::new(ow, oh, acc.into_iter().map(|v| v as f32).collect())
}

/// Correlates every exemplar tap with the matching search tap, c3 to c5.
pub fn xcorr_taps(exemplar: &FeatureTaps, search: &FeatureTaps) -> Result<Vec<ResponseMap>> {
    if exemplar.model_id != search.model_id {
        return Err(Error::argument(format!(
            "exemplar taps come from {} but search taps from {}",
            exemplar.model_id, search.model_id
        )));
    }
    if exemplar.input_kind != InputKind::Exemplar || search.input_kind != InputKind::Search {
        return Err(Error::argument(
            "xcorr_taps needs exemplar taps first, then search taps",
        ));
    }
    TapLayer::ALL
        .iter()
        .map(|&tap| {
            Ok(xcorr(exemplar.get(tap), search.get(tap))?.tagged(
                Some(exemplar.model_id),
                LayerTag::Tap(tap),
                0,
            ))
        })
        .collect()
}

/// Fuses `maps` with one of the three strategies.
///
/// Max-normalized strategies drop any map whose maximum is `<= epsilon`.
/// `weights` must have one entry per map for HW and SW and is ignored for SM.
pub fn fuse(
    maps: &[ResponseMap],
    strategy: FusionStrategy,
    weights: &[f32],
    epsilon: f32,
) -> Result<ResponseMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::argument("cannot fuse an empty list of maps"))?;
    if let Some(bad) = maps.iter().find(|m| !m.same_grid(first)) {
        return Err(Error::shape(format!(
            "cannot fuse {}x{} with {}x{}",
            first.width, first.height, bad.width, bad.height
        )));
    }
    let weighted = strategy != FusionStrategy::SoftMean;
    if weighted && weights.len() != maps.len() {
        return Err(Error::argument(format!(
            "{strategy} fusion of {} maps needs {} weights, got {}",
            maps.len(),
            maps.len(),
            weights.len()
        )));
    }
    let mut acc = vec![0f64; first.scores.len()];
    for (t, map) in maps.iter().enumerate() {
        let coeff = match strategy {
            FusionStrategy::HardWeight => weights[t] as f64,
            FusionStrategy::SoftMean | FusionStrategy::SoftWeight => {
                let max = map.max();
                if max <= epsilon {
                    continue;
                }
                let w = if weighted { weights[t] as f64 } else { 1.0 };
                w / max as f64
            }
        };
        for (a, &v) in acc.iter_mut().zip(&map.scores) {
            *a += coeff * v as f64;
        }
    }
    let model = if maps.iter().all(|m| m.model_id == first.model_id) {
        first.model_id
    } else {
        None
    };
    let scale = if maps.iter().all(|m| m.scale_index == first.scale_index) {
        first.scale_index
    } else {
        0
    };
    Ok(ResponseMap::new(
        first.width,
        first.height,
        acc.into_iter().map(|v| v as f32).collect(),
    )?
    .tagged(model, LayerTag::Combined, scale))
}

/// Two-stage fusion of the six tap maps of one scale: c3/c4/c5 within each
/// model, then `r^S` with `r^A`.
pub fn combine_all(maps: &[ResponseMap], config: &FusionConfig) -> Result<ResponseMap> {
    if maps.len() != 6 {
        return Err(Error::argument(format!(
            "combine_all needs 6 maps, got {}",
            maps.len()
        )));
    }
    let mut slots: [[Option<&ResponseMap>; 3]; 2] = Default::default();
    for m in maps {
        let (Some(model), LayerTag::Tap(tap)) = (m.model_id, m.layer) else {
            return Err(Error::argument(
                "combine_all needs maps tagged with a model and a tap layer",
            ));
        };
        let slot = &mut slots[model.index()][tap.index()];
        if slot.is_some() {
            return Err(Error::argument(format!(
                "duplicate response map for {model}.{tap}"
            )));
        }
        *slot = Some(m);
    }
    let mut per_model = Vec::with_capacity(2);
    for model in ModelId::ALL {
        let layer_maps: Vec<ResponseMap> = slots[model.index()]
            .iter()
            .map(|s| s.expect("six distinct tagged maps fill every slot").clone())
            .collect();
        let (strategy, weights) = config.per_layer(model);
        per_model.push(fuse(&layer_maps, strategy, weights, config.epsilon)?);
    }
    let scale = maps[0].scale_index;
    Ok(fuse(
        &per_model,
        config.cross_model,
        &config.model_weights,
        config.epsilon,
    )?
    .tagged(None, LayerTag::Combined, scale))
}

/// Global maximum as `(row, col, value)`; the first occurrence in row-major
/// order wins ties.
pub fn peak_location(map: &ResponseMap) -> (usize, usize, f32) {
    let mut best = 0;
    for (i, &v) in map.scores.iter().enumerate() {
        if v > map.scores[best] {
            best = i;
        }
    }
    (best / map.width, best % map.width, map.scores[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(rng: &mut impl Rng) -> ResponseMap {
        let s = (0..RESPONSE_SIZE * RESPONSE_SIZE)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        ResponseMap::new(RESPONSE_SIZE, RESPONSE_SIZE, s).unwrap()
    }

    fn constant(v: f32, model: ModelId, tap: TapLayer) -> ResponseMap {
        ResponseMap::new(17, 17, vec![v; 289])
            .unwrap()
            .tagged(Some(model), LayerTag::Tap(tap), 0)
    }

    fn six(v: f32) -> Vec<ResponseMap> {
        ModelId::ALL
            .iter()
            .flat_map(|&m| TapLayer::ALL.map(|t| constant(v, m, t)))
            .collect()
    }

    #[test]
    fn xcorr_sizes_and_zero_exemplar() {
        let z = Tensor3::zeros(6, 6, 256);
        let x = Tensor3::filled(22, 22, 256, 0.3);
        let r = xcorr(&z, &x).unwrap();
        assert_eq!((r.width(), r.height()), (17, 17));
        assert!(r.scores().iter().all(|&v| v == 0.0));
        assert!(matches!(
            xcorr(&Tensor3::zeros(6, 6, 3), &Tensor3::zeros(22, 22, 4)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn single_map_hw_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = map(&mut rng);
        let f = fuse(
            std::slice::from_ref(&m),
            FusionStrategy::HardWeight,
            &[1.0],
            1e-12,
        )
        .unwrap();
        assert_eq!(f.scores(), m.scores());
        assert_eq!(f.layer, LayerTag::Combined);
    }

    #[test]
    fn soft_mean_normalizes_to_unit_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = map(&mut rng);
        let f = fuse(
            std::slice::from_ref(&m),
            FusionStrategy::SoftMean,
            &[],
            1e-12,
        )
        .unwrap();
        assert!((f.max() - 1.0).abs() <= 1e-6);
        let doubled = fuse(
            &[m.scaled(2.0), m.clone()],
            FusionStrategy::SoftMean,
            &[],
            1e-12,
        )
        .unwrap();
        for (d, s) in doubled.scores().iter().zip(f.scores()) {
            assert!((d - 2.0 * s).abs() <= 1e-6);
        }
    }

    #[test]
    fn fuse_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            fuse(&[], FusionStrategy::SoftMean, &[], 1e-12),
            Err(Error::Argument(_))
        ));
        let small = ResponseMap::new(2, 2, vec![1.0; 4]).unwrap();
        assert!(matches!(
            fuse(
                &[map(&mut rng), small],
                FusionStrategy::SoftMean,
                &[],
                1e-12
            ),
            Err(Error::Shape(_))
        ));
        assert!(fuse(&[map(&mut rng)], FusionStrategy::HardWeight, &[], 1e-12).is_err());
    }

    #[test]
    fn nonpositive_maps_are_dropped_by_normalized_strategies() {
        let neg = ResponseMap::new(17, 17, vec![-1.0; 289]).unwrap();
        let f = fuse(&[neg.clone()], FusionStrategy::SoftWeight, &[1.0], 1e-12).unwrap();
        assert!(f.scores().iter().all(|&v| v == 0.0));
        let f = fuse(&[neg], FusionStrategy::SoftMean, &[], 1e-12).unwrap();
        assert!(f.scores().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn combine_constant_maps() {
        // S (HW): 0.1k + 0.3k + 0.7k = 1.1k; A (SW): 0.1 + 0.6 + 0.3 = 1.0;
        // cross (SW): 0.3 * 1.1k/1.1k + 0.7 * 1.0/1.0 = 1.0
        let k = 2.5;
        let r = combine_all(&six(k), &FusionConfig::default()).unwrap();
        assert!(
            r.scores().iter().all(|&v| (v - 1.0).abs() <= 1e-6),
            "{:?}",
            &r.scores()[..3]
        );
        assert_eq!(r.layer, LayerTag::Combined);
        assert_eq!(r.model_id, None);

        let z = combine_all(&six(0.0), &FusionConfig::default()).unwrap();
        assert!(z.scores().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn combine_rejects_wrong_multiset() {
        let mut maps = six(1.0);
        maps[5] = constant(1.0, ModelId::S, TapLayer::C3);
        assert!(matches!(
            combine_all(&maps, &FusionConfig::default()),
            Err(Error::Argument(_))
        ));
        assert!(combine_all(&maps[..5], &FusionConfig::default()).is_err());
    }

    #[test]
    fn defaults_are_best_ablation_rows() {
        let c = FusionConfig::default();
        assert_eq!(c.per_layer_s, FusionStrategy::HardWeight);
        assert_eq!(c.per_layer_a, FusionStrategy::SoftWeight);
        assert_eq!(c.cross_model, FusionStrategy::SoftWeight);
        assert_eq!(c.layer_weights_s, [0.1, 0.3, 0.7]);
        assert_eq!(c.layer_weights_a, [0.1, 0.6, 0.3]);
        assert_eq!(c.model_weights, [0.3, 0.7]);
        c.validate().unwrap();
    }

    #[test]
    fn peak_examples() {
        let mut s = vec![0.0; 289];
        s[3 * 17 + 9] = 1.0;
        let m = ResponseMap::new(17, 17, s).unwrap();
        assert_eq!(peak_location(&m), (3, 9, 1.0));
        let c = ResponseMap::new(17, 17, vec![0.7; 289]).unwrap();
        assert_eq!(peak_location(&c), (0, 0, 0.7));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let m = map(&mut rng);
            let mut best = (0, 0, f32::NEG_INFINITY);
            for r in 0..17 {
                for col in 0..17 {
                    if m.get(r, col) > best.2 {
                        best = (r, col, m.get(r, col));
                    }
                }
            }
            assert_eq!(peak_location(&m), best);
        }
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!(
            "sw".parse::<FusionStrategy>().unwrap(),
            FusionStrategy::SoftWeight
        );
        assert_eq!(
            "HW".parse::<FusionStrategy>().unwrap(),
            FusionStrategy::HardWeight
        );
        assert!("xx".parse::<FusionStrategy>().is_err());
    }
}
