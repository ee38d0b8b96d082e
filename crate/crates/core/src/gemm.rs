//! Convolution as a blocked GEMM with the im2col matrix packed on the fly.
//!
//! `C (m x n) += A (m x k) * B (k x n)` where `A` is the kernel bank, `B` the
//! implicit im2col matrix of the input and `C` the output planes. On x86-64
//! with AVX-512F the packed panels feed a 12x32 register-tiled micro-kernel;
//! elsewhere the explicit im2col buffer goes through `matrixmultiply`.

/// Geometry of one valid convolution, in input-plane units.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_w: usize,
    pub in_h: usize,
    pub in_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_w: usize,
    pub out_h: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn n(&self) -> usize {
        self.out_w * self.out_h
    }

    /// Input offset of im2col row `kk` at output column 0.
    fn row_offset(&self, kk: usize) -> usize {
        let ci = kk / (self.kh * self.kw);
        let ky = (kk / self.kw) % self.kh;
        let kx = kk % self.kw;
        (ci * self.in_h + ky) * self.in_w + kx
    }

    /// Input offset of output column `j` relative to a row offset.
    fn col_offset(&self, j: usize) -> usize {
        let (oy, ox) = (j / self.out_w, j % self.out_w);
        (oy * self.in_w + ox) * self.stride
    }
}

/// Accumulates the convolution of `input` with the `m x k` row-major
/// `weights` into `out`, which must already hold `m x n` values.
pub(crate) fn conv_accumulate(input: &[f32], weights: &[f32], geom: ConvGeom, out: &mut [f32]) {
    let (k, n) = (geom.k(), geom.n());
    let m = weights.len() / k;
    assert_eq!(weights.len(), m * k);
    assert_eq!(out.len(), m * n);
    assert_eq!(input.len(), geom.in_c * geom.in_h * geom.in_w);

    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        x86::conv_accumulate(input, weights, geom, m, out);
        return;
    }
    portable(input, weights, geom, m, out);
}

/// Explicit im2col followed by `matrixmultiply::sgemm`.
pub(crate) fn portable(input: &[f32], weights: &[f32], geom: ConvGeom, m: usize, out: &mut [f32]) {
    let (k, n) = (geom.k(), geom.n());
    let mut cols = Vec::with_capacity(k * n);
    for kk in 0..k {
        let base = &input[geom.row_offset(kk)..];
        for oy in 0..geom.out_h {
            let src = &base[oy * geom.stride * geom.in_w..];
            if geom.stride == 1 {
                cols.extend_from_slice(&src[..geom.out_w]);
            } else {
                cols.extend(src.iter().step_by(geom.stride).take(geom.out_w));
            }
        }
    }
    debug_assert_eq!(cols.len(), k * n);
    // SAFETY: weights is m x k, cols is k x n and out is m x n, all dense
    // row-major with the strides passed here.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            weights.as_ptr(),
            k as isize,
            1,
            cols.as_ptr(),
            n as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::ConvGeom;
    use std::arch::x86_64::*;

    const MR: usize = 12;
    const NR: usize = 32;
    const KC: usize = 256;
    const MC: usize = 144;
    const NC: usize = 1024;

    /// Contiguous run of output columns inside one micro-panel.
    #[derive(Clone, Copy)]
    struct Run {
        lane: usize,
        len: usize,
        offset: usize,
    }

    pub(super) fn conv_accumulate(
        input: &[f32],
        weights: &[f32],
        geom: ConvGeom,
        m: usize,
        out: &mut [f32],
    ) {
        let (k, n) = (geom.k(), geom.n());
        let mut bpack = vec![0f32; KC * NC];
        let mut apack = vec![0f32; MC.div_ceil(MR) * MR * KC];
        let row_offsets: Vec<usize> = (0..k).map(|kk| geom.row_offset(kk)).collect();
        let mut runs: Vec<Vec<Run>> = Vec::new();

        for jc in (0..n).step_by(NC) {
            let nc = NC.min(n - jc);
            panel_runs(&geom, jc, nc, &mut runs);
            for pc in (0..k).step_by(KC) {
                let kc = KC.min(k - pc);
                pack_b(
                    input,
                    &row_offsets[pc..pc + kc],
                    &runs,
                    geom.stride,
                    kc,
                    &mut bpack,
                );
                for ic in (0..m).step_by(MC) {
                    let mc = MC.min(m - ic);
                    pack_a(weights, k, ic, mc, pc, kc, &mut apack);
                    for (p, jr) in (0..nc).step_by(NR).enumerate() {
                        let nr = NR.min(nc - jr);
                        let bp = &bpack[p * NR * kc..(p + 1) * NR * kc];
                        for (q, ir) in (0..mc).step_by(MR).enumerate() {
                            let mr = MR.min(mc - ir);
                            let ap = &apack[q * MR * kc..(q + 1) * MR * kc];
                            let row0 = (ic + ir) * n + jc + jr;
                            let last = row0 + (mr - 1) * n + nr;
                            let c = &mut out[row0..last];
                            // SAFETY: avx512f was detected by the caller; the
                            // panels hold kc*MR and kc*NR values and `c`
                            // covers mr rows of stride n with nr columns each.
                            unsafe {
                                kernel(kc, ap.as_ptr(), bp.as_ptr(), c.as_mut_ptr(), n, mr, nr)
                            };
                        }
                    }
                }
            }
        }
    }

    fn panel_runs(geom: &ConvGeom, jc: usize, nc: usize, runs: &mut Vec<Vec<Run>>) {
        runs.clear();
        for jr in (0..nc).step_by(NR) {
            let nr = NR.min(nc - jr);
            let mut panel = Vec::new();
            let mut lane = 0;
            while lane < nr {
                let j = jc + jr + lane;
                let len = (geom.out_w - j % geom.out_w).min(nr - lane);
                panel.push(Run {
                    lane,
                    len,
                    offset: geom.col_offset(j),
                });
                lane += len;
            }
            runs.push(panel);
        }
    }

    fn pack_b(
        input: &[f32],
        row_offsets: &[usize],
        runs: &[Vec<Run>],
        stride: usize,
        kc: usize,
        out: &mut [f32],
    ) {
        for (p, panel) in runs.iter().enumerate() {
            let dst = &mut out[p * NR * kc..(p + 1) * NR * kc];
            let width: usize = panel.iter().map(|r| r.len).sum();
            for (kk, &row) in row_offsets.iter().enumerate() {
                let d = &mut dst[kk * NR..(kk + 1) * NR];
                for run in panel {
                    let src = &input[row + run.offset..];
                    let lanes = &mut d[run.lane..run.lane + run.len];
                    if stride == 1 {
                        lanes.copy_from_slice(&src[..run.len]);
                    } else {
                        for (t, v) in lanes.iter_mut().enumerate() {
                            *v = src[t * stride];
                        }
                    }
                }
                d[width..].fill(0.0);
            }
        }
    }

    fn pack_a(a: &[f32], lda: usize, ic: usize, mc: usize, pc: usize, kc: usize, out: &mut [f32]) {
        for (q, ir) in (0..mc).step_by(MR).enumerate() {
            let mr = MR.min(mc - ir);
            let dst = &mut out[q * MR * kc..(q + 1) * MR * kc];
            for i in 0..MR {
                if i < mr {
                    let src = &a[(ic + ir + i) * lda + pc..][..kc];
                    for (kk, &v) in src.iter().enumerate() {
                        dst[kk * MR + i] = v;
                    }
                } else {
                    for kk in 0..kc {
                        dst[kk * MR + i] = 0.0;
                    }
                }
            }
        }
    }

    #[target_feature(enable = "avx512f")]
    unsafe fn kernel(
        kc: usize,
        a: *const f32,
        b: *const f32,
        c: *mut f32,
        ldc: usize,
        mr: usize,
        nr: usize,
    ) {
        let mut acc = [[_mm512_setzero_ps(); 2]; MR];
        for kk in 0..kc {
            let b0 = _mm512_loadu_ps(b.add(kk * NR));
            let b1 = _mm512_loadu_ps(b.add(kk * NR + 16));
            let ak = a.add(kk * MR);
            for (i, row) in acc.iter_mut().enumerate() {
                let av = _mm512_set1_ps(*ak.add(i));
                row[0] = _mm512_fmadd_ps(av, b0, row[0]);
                row[1] = _mm512_fmadd_ps(av, b1, row[1]);
            }
        }
        if nr == NR {
            for (i, row) in acc.iter().enumerate().take(mr) {
                let dst = c.add(i * ldc);
                _mm512_storeu_ps(dst, _mm512_add_ps(_mm512_loadu_ps(dst), row[0]));
                _mm512_storeu_ps(
                    dst.add(16),
                    _mm512_add_ps(_mm512_loadu_ps(dst.add(16)), row[1]),
                );
            }
        } else {
            let mut tile = [0f32; NR];
            for (i, row) in acc.iter().enumerate().take(mr) {
                _mm512_storeu_ps(tile.as_mut_ptr(), row[0]);
                _mm512_storeu_ps(tile.as_mut_ptr().add(16), row[1]);
                let dst = c.add(i * ldc);
                for (j, &v) in tile.iter().enumerate().take(nr) {
                    *dst.add(j) += v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dispatch_matches_portable_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let kh = rng.random_range(1..=5);
            let kw = rng.random_range(1..=5);
            let stride = rng.random_range(1..=3);
            let in_c = rng.random_range(1..=20);
            let in_w = kw + rng.random_range(0..60);
            let in_h = kh + rng.random_range(0..40);
            let m = rng.random_range(1..=30);
            let geom = ConvGeom {
                in_w,
                in_h,
                in_c,
                kh,
                kw,
                stride,
                out_w: (in_w - kw) / stride + 1,
                out_h: (in_h - kh) / stride + 1,
            };
            let input: Vec<f32> = (0..in_c * in_h * in_w)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let weights: Vec<f32> = (0..m * geom.k())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let seed: Vec<f32> = (0..m * geom.n())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let mut fast = seed.clone();
            let mut slow = seed;
            conv_accumulate(&input, &weights, geom, &mut fast);
            portable(&input, &weights, geom, m, &mut slow);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }
}
