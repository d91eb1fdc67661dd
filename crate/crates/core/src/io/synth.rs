//! Synthetic infrared/visible pairs with the two modalities' typical
//! structure: thermal images carry bright, weakly textured targets over a
//! smooth background, visible images carry texture and edges but show the
//! targets dimly.

use std::f64::consts::PI;
use std::path::Path;

use super::{ensure_dir, save_pgm, GrayImage};
use crate::error::{Error, Result};
use crate::metrics::sobel_energy;
use crate::rng::Rng;

/// Blob mask values above this count as target region.
pub const BLOB_THRESHOLD: f64 = 0.5;

/// One generated pair, already on the 8-bit grid.
#[derive(Clone, Debug)]
pub struct SynthPair {
    pub ir: GrayImage,
    pub vi: GrayImage,
    /// Target membership in `[0, 1]`, row-major.
    pub mask: Vec<f64>,
}

impl SynthPair {
    pub fn blob_pixels(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > BLOB_THRESHOLD)
            .map(|(i, _)| i)
    }

    /// Mean of `img` over the target region.
    pub fn blob_mean(&self, img: &GrayImage) -> f64 {
        let (sum, n) = self
            .blob_pixels()
            .fold((0.0, 0usize), |(s, n), i| (s + img.pixels()[i], n + 1));
        sum / n.max(1) as f64
    }

    fn check(&self, index: usize) -> Result<()> {
        if self.blob_pixels().next().is_none() {
            return Err(Error::Data(format!("synthetic pair {index} has no target region")));
        }
        let (bi, bv) = (self.blob_mean(&self.ir), self.blob_mean(&self.vi));
        if bi <= bv {
            return Err(Error::Data(format!(
                "synthetic pair {index}: target mean {bi:.4} in infrared is not above {bv:.4} in visible"
            )));
        }
        let (ei, ev) = (sobel_energy(&self.ir), sobel_energy(&self.vi));
        if ev <= ei {
            return Err(Error::Data(format!(
                "synthetic pair {index}: gradient energy {ev:.4} in visible is not above {ei:.4} in infrared"
            )));
        }
        Ok(())
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
}

/// Pair `index` of the dataset generated from `seed`, with the modality
/// contrasts checked.
pub fn synth_pair(size: usize, seed: u64, index: usize) -> Result<SynthPair> {
    if size < 8 {
        return Err(Error::Parameter(format!("synthetic images need side ≥ 8, got {size}")));
    }
    let mut r = Rng::derive(seed, &format!("synth/{index}"));
    let s = size as f64;

    let blobs: Vec<Blob> = (0..1 + r.below(3))
        .map(|_| Blob {
            cx: r.uniform_in(0.2, 0.8) * s,
            cy: r.uniform_in(0.2, 0.8) * s,
            sigma: r.uniform_in(s / 14.0, s / 9.0),
        })
        .collect();
    let mask_at = |x: f64, y: f64| {
        blobs
            .iter()
            .map(|b| (-((x - b.cx).powi(2) + (y - b.cy).powi(2)) / (2.0 * b.sigma * b.sigma)).exp())
            .fold(0.0, f64::max)
    };

    let (fx, fy) = (r.uniform_in(0.3, 1.2), r.uniform_in(0.3, 1.2));
    let (p1, p2) = (r.uniform_in(0.0, 2.0 * PI), r.uniform_in(0.0, 2.0 * PI));
    let bg_level = r.uniform_in(0.2, 0.35);
    let heat = r.uniform_in(0.5, 0.65);

    let theta = r.uniform_in(0.0, PI);
    let period = r.uniform_in(3.0, 7.0);
    let (gx, gy) = (theta.cos() / period, theta.sin() / period);
    let grating = r.uniform_in(0.12, 0.2);
    let vi_level = r.uniform_in(0.45, 0.55);
    let edges: Vec<(f64, f64, f64, f64, f64)> = (0..2 + r.below(3))
        .map(|_| {
            let x0 = r.uniform_in(0.0, 0.7) * s;
            let y0 = r.uniform_in(0.0, 0.7) * s;
            let w = r.uniform_in(0.15, 0.4) * s;
            let h = r.uniform_in(0.15, 0.4) * s;
            let step = if r.below(2) == 0 { 0.15 } else { -0.15 };
            (x0, y0, w, h, step)
        })
        .collect();

    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            mask.push(mask_at(x as f64, y as f64));
        }
    }

    let ir = GrayImage::from_fn(size, size, |x, y| {
        let (xf, yf) = (x as f64 / s, y as f64 / s);
        let bg = bg_level + 0.08 * (2.0 * PI * fx * xf + p1).sin() * (2.0 * PI * fy * yf + p2).cos();
        bg + heat * mask[y * size + x]
    })?
    .quantized();
    let vi = GrayImage::from_fn(size, size, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = vi_level + grating * (2.0 * PI * (gx * xf + gy * yf)).sin();
        for &(x0, y0, w, h, step) in &edges {
            if xf >= x0 && xf < x0 + w && yf >= y0 && yf < y0 + h {
                v += step;
            }
        }
        v * (1.0 - 0.6 * mask[y * size + x])
    })?
    .quantized();

    let pair = SynthPair { ir, vi, mask };
    pair.check(index)?;
    Ok(pair)
}

/// Writes `n` pairs as `<out>/ir/NNNN.pgm` and `<out>/vi/NNNN.pgm`.
pub fn make_synthetic(n: usize, size: usize, seed: u64, out: impl AsRef<Path>) -> Result<Vec<SynthPair>> {
    let out = out.as_ref();
    let (ir_dir, vi_dir) = (out.join("ir"), out.join("vi"));
    ensure_dir(&ir_dir)?;
    ensure_dir(&vi_dir)?;
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let p = synth_pair(size, seed, i)?;
        let name = format!("{i:04}.pgm");
        save_pgm(&p.ir, ir_dir.join(&name))?;
        save_pgm(&p.vi, vi_dir.join(&name))?;
        pairs.push(p);
    }
    Ok(pairs)
}
