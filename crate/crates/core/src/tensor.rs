//! Dense feature tensors and the numeric kernels the backbones are built from.
//!
//! Layout is channel-major: element `(x, y, c)` lives at `c*H*W + y*W + x`.
//! Every kernel here is a pure function of its inputs.

use crate::error::{Error, Result};
use crate::gemm::{conv_accumulate, ConvGeom};

/// Dense `width x height x channels` tensor of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "tensor {width}x{height}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds a tensor by evaluating `f(x, y, c)` at every cell.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) {
        let i = self.index(x, y, c);
        self.data[i] = value;
    }

    /// The `H*W` plane of channel `c`.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let plane = self.width * self.height;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// `(width, height, channels)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }
}

/// Convolution weights in `[out, in, kh, kw]` row-major layout plus one bias
/// per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    data: Vec<f32>,
    bias: Vec<f32>,
}

impl KernelBank {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        data: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let expected = out_channels * in_channels * kernel_h * kernel_w;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "kernel bank [{out_channels}, {in_channels}, {kernel_h}, {kernel_w}] needs {expected} weights, got {}",
                data.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::shape(format!(
                "kernel bank with {out_channels} outputs needs {out_channels} biases, got {}",
                bias.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            data,
            bias,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_h(&self) -> usize {
        self.kernel_h
    }

    pub fn kernel_w(&self) -> usize {
        self.kernel_w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.data[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }
}

/// Output extent of a valid sliding window.
#[inline]
pub fn valid_extent(input: usize, window: usize, stride: usize) -> usize {
    (input - window) / stride + 1
}

/// Valid (unpadded) 2-D convolution, lowered to im2col + SGEMM.
pub fn conv2d_valid(input: &Tensor3, kernels: &KernelBank, stride: usize) -> Result<Tensor3> {
    if stride == 0 {
        return Err(Error::argument("stride must be at least 1"));
    }
    if input.channels != kernels.in_channels {
        return Err(Error::Config(format!(
            "input has {} channels but kernels expect {}",
            input.channels, kernels.in_channels
        )));
    }
    let (kh, kw) = (kernels.kernel_h, kernels.kernel_w);
    if kh == 0 || kw == 0 || kw > input.width || kh > input.height {
        return Err(Error::shape(format!(
            "{kw}x{kh} kernel does not fit a {}x{} input",
            input.width, input.height
        )));
    }
    let out_w = valid_extent(input.width, kw, stride);
    let out_h = valid_extent(input.height, kh, stride);
    let n = out_w * out_h;
    let k = kernels.in_channels * kh * kw;
    let m = kernels.out_channels;

    let mut out = Vec::with_capacity(m * n);
    for &b in &kernels.bias {
        out.extend(std::iter::repeat_n(b, n));
    }
    let geom = ConvGeom {
        in_w: input.width,
        in_h: input.height,
        in_c: input.channels,
        kh,
        kw,
        stride,
        out_w,
        out_h,
    };
    debug_assert_eq!(kernels.data.len(), m * k);
    conv_accumulate(&input.data, &kernels.data, geom, &mut out);
    Tensor3::new(out_w, out_h, m, out)
}

pub fn relu(input: &Tensor3) -> Tensor3 {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place(t: &mut Tensor3) {
    for v in &mut t.data {
        *v = v.max(0.0);
    }
}

/// Valid max pooling, square `window`, per channel.
pub fn max_pool(input: &Tensor3, window: usize, stride: usize) -> Result<Tensor3> {
    if stride == 0 || window == 0 {
        return Err(Error::argument(
            "pooling window and stride must be at least 1",
        ));
    }
    if window > input.width.min(input.height) {
        return Err(Error::shape(format!(
            "pool window {window} larger than {}x{} input",
            input.width, input.height
        )));
    }
    let out_w = valid_extent(input.width, window, stride);
    let out_h = valid_extent(input.height, window, stride);
    let mut out = Tensor3::zeros(out_w, out_h, input.channels);
    // rows first (input.height x out_w), then columns
    let mut rows = vec![0f32; input.height * out_w];
    for c in 0..input.channels {
        let plane = input.channel(c);
        for y in 0..input.height {
            let src = &plane[y * input.width..(y + 1) * input.width];
            let dst = &mut rows[y * out_w..(y + 1) * out_w];
            for (ox, d) in dst.iter_mut().enumerate() {
                let win = &src[ox * stride..ox * stride + window];
                *d = win.iter().fold(win[0], |a, &b| if b > a { b } else { a });
            }
        }
        let dst = out.channel_mut(c);
        for oy in 0..out_h {
            let out_row = &mut dst[oy * out_w..(oy + 1) * out_w];
            out_row.copy_from_slice(&rows[oy * stride * out_w..(oy * stride + 1) * out_w]);
            for wy in 1..window {
                let r = &rows[(oy * stride + wy) * out_w..(oy * stride + wy + 1) * out_w];
                for (d, &v) in out_row.iter_mut().zip(r) {
                    if v > *d {
                        *d = v;
                    }
                }
            }
        }
    }
    Ok(out)
}

const CUBIC_A: f64 = -0.5;

fn cubic_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Per-output-sample source taps for one axis: four clamped indices and
/// their weights, pixel-center aligned.
fn cubic_taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = (i as f64 + 0.5) * scale - 0.5;
            let base = s.floor();
            let t = s - base;
            let mut idx = [0usize; 4];
            let mut w = [0f64; 4];
            for k in 0..4 {
                let offset = k as f64 - 1.0;
                let pos = (base as i64 + k as i64 - 1).clamp(0, src as i64 - 1);
                idx[k] = pos as usize;
                w[k] = cubic_weight(t - offset);
            }
            (idx, w)
        })
        .collect()
}

/// Bicubic resize of a single-channel map (Keys kernel, a = -0.5, edge clamp).
pub fn resize_bicubic(input: &Tensor3, target_w: usize, target_h: usize) -> Result<Tensor3> {
    if input.channels != 1 {
        return Err(Error::shape(format!(
            "bicubic resize expects a single-channel map, got {} channels",
            input.channels
        )));
    }
    if target_w < 1 || target_h < 1 {
        return Err(Error::argument(format!(
            "resize target {target_w}x{target_h} must be at least 1x1"
        )));
    }
    if input.width == 0 || input.height == 0 {
        return Err(Error::shape("cannot resize an empty map"));
    }
    let xs = cubic_taps(input.width, target_w);
    let ys = cubic_taps(input.height, target_h);

    // horizontal pass: height rows of target_w samples
    let mut rows = vec![0f64; input.height * target_w];
    for y in 0..input.height {
        let src = &input.data[y * input.width..(y + 1) * input.width];
        for (x, (idx, w)) in xs.iter().enumerate() {
            rows[y * target_w + x] = (0..4).map(|k| w[k] * src[idx[k]] as f64).sum();
        }
    }
    let mut out = Vec::with_capacity(target_w * target_h);
    for (idx, w) in &ys {
        for x in 0..target_w {
            let v: f64 = (0..4).map(|k| w[k] * rows[idx[k] * target_w + x]).sum();
            out.push(v as f32);
        }
    }
    Tensor3::new(target_w, target_h, 1, out)
}

/// Per-channel mean of an image, used as the out-of-bounds fill color.
pub fn mean_color(image: &Tensor3) -> Vec<f32> {
    (0..image.channels)
        .map(|c| {
            let plane = image.channel(c);
            if plane.is_empty() {
                0.0
            } else {
                (plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64) as f32
            }
        })
        .collect()
}

/// Crops a `crop_size`-sided square centered at `(center_x, center_y)` and
/// resamples it bilinearly to `out_size x out_size`.
///
/// Coordinates are continuous with pixel `i` covering `[i, i+1)`. Samples
/// that fall outside the image take the per-channel mean color.
pub fn crop_resize_patch(
    image: &Tensor3,
    center_x: f64,
    center_y: f64,
    crop_size: f64,
    out_size: usize,
) -> Result<Tensor3> {
    let fill = mean_color(image);
    crop_resize_patch_with_fill(image, center_x, center_y, crop_size, out_size, &fill)
}

/// [`crop_resize_patch`] with a precomputed fill color (one per channel).
pub fn crop_resize_patch_with_fill(
    image: &Tensor3,
    center_x: f64,
    center_y: f64,
    crop_size: f64,
    out_size: usize,
    fill: &[f32],
) -> Result<Tensor3> {
    if crop_size <= 0.0 || !crop_size.is_finite() {
        return Err(Error::argument(format!(
            "crop size must be positive, got {crop_size}"
        )));
    }
    if out_size == 0 {
        return Err(Error::argument("output patch size must be positive"));
    }
    if !center_x.is_finite() || !center_y.is_finite() {
        return Err(Error::argument("crop center must be finite"));
    }
    if fill.len() != image.channels {
        return Err(Error::shape(format!(
            "fill color has {} components for a {}-channel image",
            fill.len(),
            image.channels
        )));
    }
    let scale = crop_size / out_size as f64;
    let origin_x = center_x - crop_size / 2.0;
    let origin_y = center_y - crop_size / 2.0;
    let axis = |origin: f64, extent: usize| -> Vec<Option<(usize, usize, f32)>> {
        (0..out_size)
            .map(|i| {
                let u = origin + (i as f64 + 0.5) * scale - 0.5;
                if extent == 0 || u < -0.5 || u > extent as f64 - 0.5 {
                    return None;
                }
                let u = u.clamp(0.0, (extent - 1) as f64);
                let lo = u.floor() as usize;
                let hi = (lo + 1).min(extent - 1);
                Some((lo, hi, (u - lo as f64) as f32))
            })
            .collect()
    };
    let xs = axis(origin_x, image.width);
    let ys = axis(origin_y, image.height);

    let mut out = Tensor3::zeros(out_size, out_size, image.channels);
    for (c, &pad) in fill.iter().enumerate() {
        let plane = image.channel(c);
        let w = image.width;
        let dst = out.channel_mut(c);
        for (oy, ys) in ys.iter().enumerate() {
            for (ox, xs) in xs.iter().enumerate() {
                dst[oy * out_size + ox] = match (xs, ys) {
                    (Some((x0, x1, fx)), Some((y0, y1, fy))) => {
                        let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                        let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                        top * (1.0 - fy) + bottom * fy
                    }
                    _ => pad,
                };
            }
        }
    }
    Ok(out)
}
