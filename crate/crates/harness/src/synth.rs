//! Synthetic OTB-layout sequences: a randomly colored checkerboard square
//! moving at constant speed over a flat background, bouncing off the borders.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use mfst_core::{BBox, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::emit::write;
use crate::error::{HarnessError, Result};
use crate::sequence::{FRAME_DIR, GROUND_TRUTH_FILE};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Squares per side of the checkerboard.
    pub grid: usize,
    /// Pixels per checkerboard square.
    pub cell: usize,
    /// Top-left corner in the first frame.
    pub start: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    pub background: u8,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let v = 2.0 / 2f64.sqrt();
        Self {
            frames: 100,
            width: 255,
            height: 255,
            grid: 5,
            cell: 8,
            start: (20.0, 30.0),
            velocity: (v, v),
            background: 115,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    spec: SyntheticSpec,
    colors: Vec<[u8; 3]>,
}

/// Folds `p` back into `[0, span]` as if bouncing off both ends.
fn reflect(p: f64, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * span;
    let r = p.rem_euclid(period);
    if r <= span {
        r
    } else {
        period - r
    }
}

impl SyntheticSequence {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        let side = spec.grid * spec.cell;
        if spec.frames == 0 || side == 0 || side > spec.width || side > spec.height {
            return Err(HarnessError::Argument(format!(
                "a {side}px square does not fit {} frames of {}x{}",
                spec.frames, spec.width, spec.height
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let colors = (0..spec.grid * spec.grid)
            .map(|_| rng.random::<[u8; 3]>())
            .collect();
        Ok(Self { spec, colors })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn side(&self) -> f64 {
        (self.spec.grid * self.spec.cell) as f64
    }

    pub fn top_left(&self, frame: usize) -> (f64, f64) {
        let t = frame as f64;
        let s = &self.spec;
        (
            reflect(s.start.0 + s.velocity.0 * t, s.width as f64 - self.side()),
            reflect(s.start.1 + s.velocity.1 * t, s.height as f64 - self.side()),
        )
    }

    pub fn ground_truth(&self, frame: usize) -> BBox {
        let (x, y) = self.top_left(frame);
        BBox::from_top_left(x, y, self.side(), self.side()).expect("positive square")
    }

    /// Pixel `(x, y)` takes the color under its center.
    pub fn render(&self, frame: usize) -> RgbImage {
        let (x0, y0) = self.top_left(frame);
        let (side, cell, grid) = (self.side(), self.spec.cell, self.spec.grid);
        let bg = self.spec.background;
        RgbImage::from_fn(self.spec.width as u32, self.spec.height as u32, |x, y| {
            let (fx, fy) = (x as f64 + 0.5 - x0, y as f64 + 0.5 - y0);
            if fx >= 0.0 && fy >= 0.0 && fx < side && fy < side {
                let (gx, gy) = (fx as usize / cell, fy as usize / cell);
                Rgb(self.colors[gy * grid + gx])
            } else {
                Rgb([bg; 3])
            }
        })
    }

    /// The frame as the harness sees it after decoding.
    pub fn frame(&self, frame: usize) -> Tensor3 {
        let img = self.render(frame);
        let w = img.width() as usize;
        let raw = img.as_raw();
        Tensor3::from_fn(w, img.height() as usize, 3, |x, y, c| {
            raw[(y * w + x) * 3 + c] as f32 / 255.0
        })
    }

    /// Writes `dir/img/0001.png..` and `dir/groundtruth_rect.txt`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let img_dir = dir.join(FRAME_DIR);
        fs::create_dir_all(&img_dir).map_err(|e| HarnessError::io(&img_dir, e))?;
        let mut gt = String::new();
        for i in 0..self.spec.frames {
            let path = img_dir.join(format!("{:04}.png", i + 1));
            self.render(i)
                .save(&path)
                .map_err(|source| HarnessError::Image { path, source })?;
            let [x, y, w, h] = self.ground_truth(i).to_top_left();
            let _ = writeln!(gt, "{x},{y},{w},{h}");
        }
        write(&dir.join(GROUND_TRUTH_FILE), &gt)
    }
}

/// `count` sequences named `synth-01..` under `dir`, each with its own
/// texture, start and heading, all moving `speed` pixels per frame.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    count: usize,
    frames: usize,
    speed: f64,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let base = SyntheticSpec::default();
        let side = (base.grid * base.cell) as f64;
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let spec = SyntheticSpec {
            frames,
            start: (
                rng.random_range(0.0..base.width as f64 - side),
                rng.random_range(0.0..base.height as f64 - side),
            ),
            velocity: (speed * heading.cos(), speed * heading.sin()),
            seed: rng.random(),
            ..base
        };
        let path = dir.join(format!("synth-{:02}", i + 1));
        SyntheticSequence::new(spec)?.write(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_stays_in_range() {
        assert_eq!(reflect(5.0, 10.0), 5.0);
        assert_eq!(reflect(12.0, 10.0), 8.0);
        assert_eq!(reflect(-3.0, 10.0), 3.0);
        assert_eq!(reflect(25.0, 10.0), 5.0);
    }

    #[test]
    fn default_sequence_moves_two_pixels_per_frame() {
        let s = SyntheticSequence::new(SyntheticSpec::default()).unwrap();
        let (a, b) = (s.ground_truth(10), s.ground_truth(11));
        let step = (b.center_x - a.center_x).hypot(b.center_y - a.center_y);
        assert!((step - 2.0).abs() < 1e-12);
        for i in 0..100 {
            let [x, y, w, h] = s.ground_truth(i).to_top_left();
            assert!(x >= 0.0 && y >= 0.0 && x + w <= 255.0 && y + h <= 255.0);
        }
    }
}
