//! Five-layer fully-convolutional feature extractors with conv3/4/5 taps.
//!
//! Both models share one valid-convolution geometry and differ only in
//! their weights:
//!
//! | layer | kernel | stride | out | after         |
//! |-------|--------|--------|-----|---------------|
//! | conv1 | 11x11  | 2      | 96  | relu, pool 3/2 |
//! | conv2 | 5x5    | 1      | 256 | relu, pool 3/2 |
//! | conv3 | 3x3    | 1      | 384 | relu          |
//! | conv4 | 3x3    | 1      | 384 | relu          |
//! | conv5 | 3x3    | 1      | 256 | -             |
//!
//! A 127x127 exemplar yields taps of 10/8/6 cells, a 255x255 search region
//! taps of 26/24/22 cells.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{conv2d_valid, max_pool, relu_in_place, KernelBank, Tensor3};
use crate::weights::{conv_entry, WeightContainer};

pub const EXEMPLAR_SIZE: usize = 127;
pub const SEARCH_SIZE: usize = 255;
/// Product of all strides: one tap cell spans this many input pixels.
pub const TOTAL_STRIDE: usize = 8;
pub const POOL_WINDOW: usize = 3;
pub const POOL_STRIDE: usize = 2;
const BN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelId {
    /// Tracking-trained (SiamFC-style) backbone.
    S,
    /// Classification-trained (AlexNet-style) backbone.
    A,
}

impl ModelId {
    pub const ALL: [ModelId; 2] = [ModelId::S, ModelId::A];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelId::S => "S",
            ModelId::A => "A",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TapLayer {
    C3,
    C4,
    C5,
}

impl TapLayer {
    pub const ALL: [TapLayer; 3] = [TapLayer::C3, TapLayer::C4, TapLayer::C5];

    pub fn index(self) -> usize {
        self as usize
    }

    /// 1-based conv layer number of the tap.
    pub fn conv_layer(self) -> usize {
        self.index() + 3
    }
}

impl fmt::Display for TapLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.conv_layer())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Exemplar,
    Search,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub relu_after: bool,
    /// 3x3 window, stride 2.
    pub pool_after: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneSpec {
    pub model_id: ModelId,
    pub layers: Vec<LayerSpec>,
}

impl BackboneSpec {
    pub fn canonical(model_id: ModelId) -> Self {
        let layer = |kernel, stride, out_channels, relu_after, pool_after| LayerSpec {
            kernel,
            stride,
            out_channels,
            relu_after,
            pool_after,
        };
        Self {
            model_id,
            layers: vec![
                layer(11, 2, 96, true, true),
                layer(5, 1, 256, true, true),
                layer(3, 1, 384, true, false),
                layer(3, 1, 384, true, false),
                layer(3, 1, 256, false, false),
            ],
        }
    }

    pub fn tap_channels(&self, tap: TapLayer) -> usize {
        self.layers[tap.conv_layer() - 1].out_channels
    }

    /// Spatial tap sizes `[c3, c4, c5]` for a square input of side `input`.
    pub fn tap_sizes(&self, input: usize) -> Option<[usize; 3]> {
        let mut size = input;
        let mut taps = [0; 3];
        for (i, l) in self.layers.iter().enumerate() {
            size = size.checked_sub(l.kernel)? / l.stride + 1;
            if l.pool_after {
                size = size.checked_sub(POOL_WINDOW)? / POOL_STRIDE + 1;
            }
            if i >= 2 {
                taps[i - 2] = size;
            }
        }
        Some(taps)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.len() != 5 {
            return Err(Error::Config(format!(
                "backbone {} must have exactly 5 conv layers, got {}",
                self.model_id,
                self.layers.len()
            )));
        }
        if self
            .layers
            .iter()
            .any(|l| l.kernel == 0 || l.stride == 0 || l.out_channels == 0)
        {
            return Err(Error::Config(
                "conv layers need non-zero kernel, stride and width".into(),
            ));
        }
        Ok(())
    }
}

/// The conv3, conv4 and conv5 outputs for one input patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTaps {
    pub model_id: ModelId,
    pub input_kind: InputKind,
    pub c3: Tensor3,
    pub c4: Tensor3,
    pub c5: Tensor3,
}

impl FeatureTaps {
    pub fn get(&self, tap: TapLayer) -> &Tensor3 {
        match tap {
            TapLayer::C3 => &self.c3,
            TapLayer::C4 => &self.c4,
            TapLayer::C5 => &self.c5,
        }
    }

    pub fn get_mut(&mut self, tap: TapLayer) -> &mut Tensor3 {
        match tap {
            TapLayer::C3 => &mut self.c3,
            TapLayer::C4 => &mut self.c4,
            TapLayer::C5 => &mut self.c5,
        }
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    spec: LayerSpec,
    kernels: KernelBank,
}

/// A ready-to-run backbone. Immutable; forward passes take `&self`.
#[derive(Debug, Clone)]
pub struct Backbone {
    spec: BackboneSpec,
    layers: Vec<ConvLayer>,
}

impl Backbone {
    /// Pulls every layer's kernel and bias out of `weights`, folding
    /// batch-norm entries (`<m>.convN.bn.{scale,shift,mean,var}`) into them
    /// when present.
    pub fn build(spec: BackboneSpec, weights: &WeightContainer) -> Result<Self> {
        spec.validate()?;
        let model = spec.model_id;
        let mut in_channels = 3;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let n = i + 1;
            let kernel_name = conv_entry(model, n, "kernel");
            let kernel = weights
                .tensor(&kernel_name)
                .ok_or_else(|| Error::validation(format!("missing tensor {kernel_name}")))?;
            let want = vec![l.out_channels, in_channels, l.kernel, l.kernel];
            if kernel.shape != want {
                return Err(Error::shape(format!(
                    "{kernel_name} has shape {:?}, expected {want:?}",
                    kernel.shape
                )));
            }
            let bn = BatchNorm::read(weights, model, n, l.out_channels)?;
            let bias_name = conv_entry(model, n, "bias");
            let bias = match weights.tensor(&bias_name) {
                Some(b) if b.shape == [l.out_channels] => b.data,
                Some(b) => {
                    return Err(Error::shape(format!(
                        "{bias_name} has shape {:?}, expected [{}]",
                        b.shape, l.out_channels
                    )))
                }
                None if bn.is_some() => vec![0.0; l.out_channels],
                None => return Err(Error::validation(format!("missing tensor {bias_name}"))),
            };
            let (data, bias) = match bn {
                Some(bn) => bn.fold(kernel.data, bias),
                None => (kernel.data, bias),
            };
            let kernels =
                KernelBank::new(l.out_channels, in_channels, l.kernel, l.kernel, data, bias)?;
            layers.push(ConvLayer { spec: *l, kernels });
            in_channels = l.out_channels;
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn model_id(&self) -> ModelId {
        self.spec.model_id
    }

    /// Runs the patch through all five layers and returns the three taps.
    /// The patch must be 127x127x3 (exemplar) or 255x255x3 (search) with
    /// values in `[0, 1]`.
    pub fn forward_taps(&self, patch: &Tensor3) -> Result<FeatureTaps> {
        let input_kind = match patch.dims() {
            (EXEMPLAR_SIZE, EXEMPLAR_SIZE, 3) => InputKind::Exemplar,
            (SEARCH_SIZE, SEARCH_SIZE, 3) => InputKind::Search,
            (w, h, c) => {
                return Err(Error::shape(format!(
                    "unsupported patch {w}x{h}x{c}; expected 127x127x3 or 255x255x3"
                )))
            }
        };
        let mut taps = Vec::with_capacity(3);
        let mut x = patch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = conv2d_valid(&x, &layer.kernels, layer.spec.stride)?;
            if layer.spec.relu_after {
                relu_in_place(&mut x);
            }
            if layer.spec.pool_after {
                x = max_pool(&x, POOL_WINDOW, POOL_STRIDE)?;
            }
            if i >= 2 {
                taps.push(x.clone());
            }
        }
        let c5 = taps.pop().expect("five layers");
        let c4 = taps.pop().expect("five layers");
        let c3 = taps.pop().expect("five layers");
        Ok(FeatureTaps {
            model_id: self.spec.model_id,
            input_kind,
            c3,
            c4,
            c5,
        })
    }
}

/// Convenience wrapper: build a backbone with the canonical geometry.
pub fn build_backbone(spec: BackboneSpec, weights: &WeightContainer) -> Result<Backbone> {
    Backbone::build(spec, weights)
}

struct BatchNorm {
    scale: Vec<f32>,
    shift: Vec<f32>,
    mean: Vec<f32>,
    var: Vec<f32>,
}

impl BatchNorm {
    fn read(
        weights: &WeightContainer,
        model: ModelId,
        layer: usize,
        channels: usize,
    ) -> Result<Option<Self>> {
        let parts = ["scale", "shift", "mean", "var"];
        let names: Vec<String> = parts
            .iter()
            .map(|p| conv_entry(model, layer, &format!("bn.{p}")))
            .collect();
        let present: Vec<bool> = names.iter().map(|n| weights.contains(n)).collect();
        if present.iter().all(|p| !p) {
            return Ok(None);
        }
        let mut vecs = Vec::with_capacity(4);
        for name in &names {
            let t = weights.tensor(name).ok_or_else(|| {
                Error::validation(format!("incomplete batch-norm set: missing {name}"))
            })?;
            if t.shape != [channels] {
                return Err(Error::shape(format!(
                    "{name} has shape {:?}, expected [{channels}]",
                    t.shape
                )));
            }
            vecs.push(t.data);
        }
        if let Some(i) = vecs[3].iter().position(|&v| v < 0.0) {
            return Err(Error::validation(format!(
                "{} has negative variance at {i}",
                names[3]
            )));
        }
        let var = vecs.pop().unwrap();
        let mean = vecs.pop().unwrap();
        let shift = vecs.pop().unwrap();
        let scale = vecs.pop().unwrap();
        Ok(Some(Self {
            scale,
            shift,
            mean,
            var,
        }))
    }

    /// y = scale * (conv(x) + b - mean) / sqrt(var + eps) + shift
    fn fold(&self, mut kernel: Vec<f32>, mut bias: Vec<f32>) -> (Vec<f32>, Vec<f32>) {
        let per_out = kernel.len() / bias.len();
        for (o, b) in bias.iter_mut().enumerate() {
            let g = self.scale[o] / (self.var[o] + BN_EPS).sqrt();
            for w in &mut kernel[o * per_out..(o + 1) * per_out] {
                *w *= g;
            }
            *b = (*b - self.mean[o]) * g + self.shift[o];
        }
        (kernel, bias)
    }
}
