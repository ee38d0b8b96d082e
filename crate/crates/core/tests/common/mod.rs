#![allow(dead_code)]

use mfst_core::Tensor3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BACKGROUND: f32 = 0.45;

/// A `grid x grid` checkerboard of random colors, `cell` pixels per square.
pub struct Texture {
    pub grid: usize,
    pub cell: usize,
    colors: Vec<[f32; 3]>,
}

impl Texture {
    pub fn random(seed: u64, grid: usize, cell: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let colors = (0..grid * grid)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        Self { grid, cell, colors }
    }

    pub fn side(&self) -> f64 {
        (self.grid * self.cell) as f64
    }

    /// Frame with the texture's top-left corner at `(x0, y0)`.
    pub fn render(&self, width: usize, height: usize, x0: f64, y0: f64) -> Tensor3 {
        let side = self.side();
        Tensor3::from_fn(width, height, 3, |x, y, c| {
            let (fx, fy) = (x as f64 + 0.5 - x0, y as f64 + 0.5 - y0);
            if fx >= 0.0 && fy >= 0.0 && fx < side && fy < side {
                let (gx, gy) = (fx as usize / self.cell, fy as usize / self.cell);
                self.colors[gy * self.grid + gx][c]
            } else {
                BACKGROUND
            }
        })
    }
}
