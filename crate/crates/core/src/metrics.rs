//! Image quality metrics: MSE, PSNR and SSIM.
//!
//! Model outputs live in `[-1, 1]`; [`to_unit`] is the only place they are mapped to the
//! `[0, 1]` range every metric works in.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{arg_err, dim_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Maps a model-range value in `[-1, 1]` to `[0, 1]`.
#[inline]
pub fn to_unit(x: f64) -> f64 {
    (x + 1.0) / 2.0
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err!("mse: {} vs {} values", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(arg_err!("mse of empty images"));
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(peak² / mse)`, or [`PSNR_CAP_DB`] when `mse` is zero.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// Window of `SSIM_WINDOW` normalized Gaussian taps.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = alloc::vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * x[r * w + c + i]).sum();
        }
    }
    let mut out = alloc::vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean local SSIM over all valid 11×11 Gaussian windows of two `h×w` planes in `[0, 1]`.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(dim_err!("ssim: planes must hold {h}x{w} values, got {} and {}", a.len(), b.len()));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(arg_err!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"));
    }
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&aa, h, w, &taps);
    let e_bb = filter_valid(&bb, h, w, &taps);
    let e_ab = filter_valid(&ab, h, w, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

/// Channel mean of a `[C, H, W]` or `[1, C, H, W]` tensor, mapped to `[0, 1]`.
pub fn unit_luminance<T: Real>(img: &Tensor<T>) -> Result<(Vec<f64>, usize, usize)> {
    let (c, h, w) = chw(img)?;
    let plane = h * w;
    let d = img.data();
    let lum = (0..plane)
        .map(|p| to_unit((0..c).map(|k| d[k * plane + p].as_f64()).sum::<f64>() / c as f64))
        .collect();
    Ok((lum, h, w))
}

fn chw<T: Real>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] | [1, c, h, w] => Ok((c, h, w)),
        ref s => Err(dim_err!("expected a single [C, H, W] image, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImageMetrics {
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Metrics of a generated image against its target, both in model range `[-1, 1]`.
pub fn image_metrics<T: Real>(generated: &Tensor<T>, target: &Tensor<T>) -> Result<ImageMetrics> {
    if chw(generated)? != chw(target)? {
        return Err(dim_err!("metric shapes differ: {:?} vs {:?}", generated.shape(), target.shape()));
    }
    let a: Vec<f64> = generated.data().iter().map(|x| to_unit(x.as_f64())).collect();
    let b: Vec<f64> = target.data().iter().map(|x| to_unit(x.as_f64())).collect();
    let m = mse(&a, &b)?;
    let (la, h, w) = unit_luminance(generated)?;
    let (lb, _, _) = unit_luminance(target)?;
    Ok(ImageMetrics { mse: m, psnr_db: psnr_from_mse(m, 1.0), ssim: ssim(&la, &lb, h, w)? })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub per_image: Vec<(String, ImageMetrics)>,
    pub mean: ImageMetrics,
}

impl MetricReport {
    pub fn new(per_image: Vec<(String, ImageMetrics)>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mut mean = ImageMetrics::default();
        for (_, m) in &per_image {
            mean.mse += m.mse;
            mean.psnr_db += m.psnr_db;
            mean.ssim += m.ssim;
        }
        mean.mse /= n;
        mean.psnr_db /= n;
        mean.ssim /= n;
        MetricReport { per_image, mean }
    }

    pub fn len(&self) -> usize {
        self.per_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_image.is_empty()
    }

    /// `split  n  mse  psnr  ssim` as a tab-separated row.
    pub fn tsv_row(&self, split: &str) -> String {
        format!("{split}\t{}\t{:.6}\t{:.4}\t{:.4}", self.len(), self.mean.mse, self.mean.psnr_db, self.mean.ssim)
    }

    pub const TSV_HEADER: &'static str = "split\tn\tmse\tpsnr\tssim";

    /// Aligned text table over several splits.
    pub fn table(rows: &[(&str, &MetricReport)]) -> String {
        let mut s = format!("{:<8} {:>5} {:>10} {:>9} {:>8}\n", "split", "n", "mse", "psnr_db", "ssim");
        for (name, r) in rows {
            s.push_str(&format!(
                "{:<8} {:>5} {:>10.6} {:>9.4} {:>8.4}\n",
                name,
                r.len(),
                r.mean.mse,
                r.mean.psnr_db,
                r.mean.ssim
            ));
        }
        s
    }
}
