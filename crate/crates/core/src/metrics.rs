//! Fusion-quality metrics and the Gaussian-noise degradation used for
//! robustness evaluation.
//!
//! EN, AG and SF are computed on the 8-bit quantised fused image. UIQI,
//! FMI and VIF compare the fused image with each source and average the two
//! scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::GrayImage;
use crate::rng::Rng;
use crate::tensor::sobel::sobel_magnitude;

/// The six scores of one fused image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub en: f64,
    pub ag: f64,
    pub sf: f64,
    pub fmi: f64,
    pub vif: f64,
    pub uiqi: f64,
}

impl MetricReport {
    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        MetricReport {
            en: sum(|r| r.en),
            ag: sum(|r| r.ag),
            sf: sum(|r| r.sf),
            fmi: sum(|r| r.fmi),
            vif: sum(|r| r.vif),
            uiqi: sum(|r| r.uiqi),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            variance: 0.03,
            seed: 0,
        }
    }
}

fn levels(img: &GrayImage) -> Vec<f64> {
    img.to_u8().into_iter().map(f64::from).collect()
}

/// Entropy in bits of `counts / total`.
fn entropy(counts: &[usize], total: usize) -> f64 {
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Shannon entropy of the 256-bin histogram.
pub fn metric_en(img: &GrayImage) -> f64 {
    let mut hist = [0usize; 256];
    for b in img.to_u8() {
        hist[b as usize] += 1;
    }
    entropy(&hist, img.pixels().len())
}

/// Mean of `sqrt((dx² + dy²) / 2)` over pixels that have both forward
/// neighbours.
pub fn metric_ag(img: &GrayImage) -> f64 {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return 0.0;
    }
    let q = levels(img);
    let mut sum = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dx = q[y * w + x + 1] - q[y * w + x];
            let dy = q[(y + 1) * w + x] - q[y * w + x];
            sum += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    sum / ((w - 1) * (h - 1)) as f64
}

/// `sqrt(RF² + CF²)` from the RMS horizontal and vertical differences.
pub fn metric_sf(img: &GrayImage) -> f64 {
    let (w, h) = (img.width(), img.height());
    let q = levels(img);
    let mut rf = 0.0;
    for y in 0..h {
        for x in 1..w {
            rf += (q[y * w + x] - q[y * w + x - 1]).powi(2);
        }
    }
    let mut cf = 0.0;
    for y in 1..h {
        for x in 0..w {
            cf += (q[y * w + x] - q[(y - 1) * w + x]).powi(2);
        }
    }
    let rf = if w > 1 { rf / (h * (w - 1)) as f64 } else { 0.0 };
    let cf = if h > 1 { cf / ((h - 1) * w) as f64 } else { 0.0 };
    (rf + cf).sqrt()
}

fn same_size(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::Dimension(format!(
            "images differ in size: {}×{} vs {}×{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Side of the UIQI sliding window.
pub const UIQI_WINDOW: usize = 8;

/// Mean quality index over 8×8 stride-1 windows whose denominator is
/// nonzero; 1 when no window qualifies.
pub fn quality_index(x: &GrayImage, y: &GrayImage) -> Result<f64> {
    same_size(x, y)?;
    let (w, h) = (x.width(), x.height());
    let (ww, wh) = (UIQI_WINDOW.min(w), UIQI_WINDOW.min(h));
    let n = (ww * wh) as f64;
    let (px, py) = (x.pixels(), y.pixels());
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - wh {
        for ox in 0..=w - ww {
            let (mut sx, mut sy) = (0.0, 0.0);
            for r in oy..oy + wh {
                for c in ox..ox + ww {
                    sx += px[r * w + c];
                    sy += py[r * w + c];
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for r in oy..oy + wh {
                for c in ox..ox + ww {
                    let (dx, dy) = (px[r * w + c] - mx, py[r * w + c] - my);
                    vx += dx * dx;
                    vy += dy * dy;
                    cxy += dx * dy;
                }
            }
            let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
            let den = (vx + vy) * (mx * mx + my * my);
            if den > 0.0 {
                total += 4.0 * cxy * mx * my / den;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 1.0 } else { total / count as f64 })
}

pub fn metric_uiqi(fused: &GrayImage, a: &GrayImage, b: &GrayImage) -> Result<f64> {
    Ok((quality_index(fused, a)? + quality_index(fused, b)?) / 2.0)
}

/// Histogram bins of the FMI feature maps.
pub const FMI_BINS: usize = 64;

fn sobel_features(img: &GrayImage) -> Vec<f64> {
    sobel_magnitude(img.pixels(), img.height(), img.width(), 0.0)
}

/// Mean Sobel gradient magnitude on the `[0, 1]` scale.
pub fn sobel_energy(img: &GrayImage) -> f64 {
    let f = sobel_features(img);
    f.iter().sum::<f64>() / f.len() as f64
}

fn bin_indices(v: &[f64]) -> Vec<usize> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0; v.len()];
    }
    let scale = FMI_BINS as f64 / (hi - lo);
    v.iter()
        .map(|&x| (((x - lo) * scale) as usize).min(FMI_BINS - 1))
        .collect()
}

/// `2·I(F;X) / (H(F) + H(X))` over binned feature maps; 1 when both are
/// constant.
fn feature_mi(f: &[usize], x: &[usize]) -> f64 {
    let n = f.len();
    let mut joint = vec![0usize; FMI_BINS * FMI_BINS];
    let mut hf = [0usize; FMI_BINS];
    let mut hx = [0usize; FMI_BINS];
    for (&a, &b) in f.iter().zip(x) {
        joint[a * FMI_BINS + b] += 1;
        hf[a] += 1;
        hx[b] += 1;
    }
    let (ef, ex, ej) = (entropy(&hf, n), entropy(&hx, n), entropy(&joint, n));
    if ef + ex == 0.0 {
        return 1.0;
    }
    (2.0 * (ef + ex - ej) / (ef + ex)).clamp(0.0, 1.0)
}

pub fn metric_fmi(fused: &GrayImage, a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_size(fused, a)?;
    same_size(fused, b)?;
    let f = bin_indices(&sobel_features(fused));
    let fa = bin_indices(&sobel_features(a));
    let fb = bin_indices(&sobel_features(b));
    Ok((feature_mi(&f, &fa) + feature_mi(&f, &fb)) / 2.0)
}

/// Noise variance of the VIF channel model on the 8-bit scale.
pub const VIF_NOISE_VAR: f64 = 2.0;
pub const VIF_SCALES: usize = 4;
const VIF_WINDOW: usize = 3;

/// Blur with the 5-tap binomial kernel (edge-replicated) and keep every
/// second pixel.
fn pyramid_down(p: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let at = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (0..5).map(|k| K[k] * p[y * w + at(x as isize + k as isize - 2, w)]).sum();
        }
    }
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(nw * nh);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            out.push((0..5).map(|k| K[k] * tmp[at(y as isize + k as isize - 2, h) * w + x]).sum());
        }
    }
    (out, nw, nh)
}

/// Information-fidelity ratio of `dist` against `reference`.
pub fn vif_single(reference: &GrayImage, dist: &GrayImage) -> Result<f64> {
    same_size(reference, dist)?;
    let (mut w, mut h) = (reference.width(), reference.height());
    let mut r: Vec<f64> = reference.pixels().iter().map(|v| v * 255.0).collect();
    let mut d: Vec<f64> = dist.pixels().iter().map(|v| v * 255.0).collect();
    let (mut num, mut den) = (0.0, 0.0);
    let n = (VIF_WINDOW * VIF_WINDOW) as f64;
    for scale in 0..VIF_SCALES {
        if scale > 0 {
            let (r2, nw, nh) = pyramid_down(&r, w, h);
            let (d2, _, _) = pyramid_down(&d, w, h);
            (r, d, w, h) = (r2, d2, nw, nh);
        }
        if w < VIF_WINDOW || h < VIF_WINDOW {
            break;
        }
        for oy in 0..=h - VIF_WINDOW {
            for ox in 0..=w - VIF_WINDOW {
                let (mut sr, mut sd) = (0.0, 0.0);
                for yy in oy..oy + VIF_WINDOW {
                    for xx in ox..ox + VIF_WINDOW {
                        sr += r[yy * w + xx];
                        sd += d[yy * w + xx];
                    }
                }
                let (mr, md) = (sr / n, sd / n);
                let (mut vr, mut c) = (0.0, 0.0);
                for yy in oy..oy + VIF_WINDOW {
                    for xx in ox..ox + VIF_WINDOW {
                        let dr = r[yy * w + xx] - mr;
                        vr += dr * dr;
                        c += dr * (d[yy * w + xx] - md);
                    }
                }
                let (vr, c) = (vr / n, c / n);
                if vr <= 1e-10 {
                    continue;
                }
                let g = c / vr;
                num += (1.0 + g * g * vr / VIF_NOISE_VAR).log2();
                den += (1.0 + vr / VIF_NOISE_VAR).log2();
            }
        }
    }
    if den == 0.0 {
        // flat reference: no information to preserve
        return Ok(if reference == dist { 1.0 } else { 0.0 });
    }
    Ok(num / den)
}

pub fn metric_vif(fused: &GrayImage, a: &GrayImage, b: &GrayImage) -> Result<f64> {
    Ok((vif_single(a, fused)? + vif_single(b, fused)?) / 2.0)
}

/// Adds `N(0, variance)` per pixel and clamps into `[0, 1]`.
pub fn add_gaussian_noise(img: &GrayImage, spec: &NoiseSpec) -> Result<GrayImage> {
    if !(spec.variance >= 0.0) {
        return Err(Error::Parameter(format!("noise variance must be ≥ 0, got {}", spec.variance)));
    }
    if spec.variance == 0.0 {
        return Ok(img.clone());
    }
    let sd = spec.variance.sqrt();
    let mut rng = Rng::new(spec.seed);
    let pixels = img
        .pixels()
        .iter()
        .map(|&v| (v + sd * rng.normal()).clamp(0.0, 1.0))
        .collect();
    GrayImage::new(img.width(), img.height(), pixels)
}

pub fn evaluate_pair(fused: &GrayImage, ir: &GrayImage, vi: &GrayImage) -> Result<MetricReport> {
    let q = fused.quantized();
    Ok(MetricReport {
        en: metric_en(&q),
        ag: metric_ag(&q),
        sf: metric_sf(&q),
        fmi: metric_fmi(fused, ir, vi)?,
        vif: metric_vif(fused, ir, vi)?,
        uiqi: metric_uiqi(fused, ir, vi)?,
    })
}

pub const REPORT_HEADER: &str = "image_id,en,ag,sf,fmi,vif,uiqi";

/// One row per image and a final `mean` row.
pub fn report_csv(rows: &[(String, MetricReport)]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    let line = |s: &mut String, id: &str, r: &MetricReport| {
        let _ = writeln!(
            s,
            "{id},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.en, r.ag, r.sf, r.fmi, r.vif, r.uiqi
        );
    };
    for (id, r) in rows {
        line(&mut s, id, r);
    }
    let reports: Vec<MetricReport> = rows.iter().map(|(_, r)| *r).collect();
    line(&mut s, "mean", &MetricReport::mean(&reports));
    s
}
