//! Paired SAR/optical images, cropping, and a synthetic speckled-scene generator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{arg_err, dim_err, Result};
use crate::tensor::Tensor;

/// A SAR image `[1, H, W]` and its optical counterpart `[3, H, W]`, both in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub sar: Tensor<f64>,
    pub optical: Tensor<f64>,
    pub id: String,
}

impl ImagePair {
    pub fn new(sar: Tensor<f64>, optical: Tensor<f64>, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let (s, o) = (sar.shape(), optical.shape());
        if s.len() != 3 || o.len() != 3 || s[0] != 1 || o[0] != 3 {
            return Err(dim_err!("pair {id}: expected sar [1,H,W] and optical [3,H,W], got {s:?} and {o:?}"));
        }
        if s[1..] != o[1..] {
            return Err(dim_err!("pair {id}: sar {s:?} and optical {o:?} differ in size"));
        }
        if sar.data().iter().chain(optical.data()).any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(arg_err!("pair {id}: values outside [-1, 1]"));
        }
        Ok(ImagePair { sar, optical, id })
    }

    pub fn height(&self) -> usize {
        self.sar.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.sar.shape()[2]
    }
}

/// `2v/255 − 1`.
#[inline]
pub fn normalize_u8(v: u8) -> f64 {
    2.0 * v as f64 / 255.0 - 1.0
}

/// Inverse of [`normalize_u8`] with clamping and rounding.
#[inline]
pub fn denormalize_u8(x: f64) -> u8 {
    ((x.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CropMode {
    Center,
    Random(u64),
}

/// Crops the same `size × size` window out of both images.
pub fn crop_patches(pair: &ImagePair, size: usize, mode: CropMode) -> Result<ImagePair> {
    let (h, w) = (pair.height(), pair.width());
    if size == 0 || size > h.min(w) {
        return Err(arg_err!("crop size {size} does not fit {h}x{w} pair {}", pair.id));
    }
    let (top, left) = match mode {
        CropMode::Center => ((h - size) / 2, (w - size) / 2),
        CropMode::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (rng.random_range(0..=h - size), rng.random_range(0..=w - size))
        }
    };
    let crop = |t: &Tensor<f64>| {
        let c = t.shape()[0];
        Tensor::from_fn([c, size, size], |i| {
            let (k, r, col) = (i / (size * size), (i / size) % size, i % size);
            t.data()[(k * h + top + r) * w + left + col]
        })
    };
    Ok(ImagePair { sar: crop(&pair.sar), optical: crop(&pair.optical), id: pair.id.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleParams {
    /// Gamma shape (number of looks).
    pub looks: f64,
    /// Maximum affine misalignment of the SAR image, as a fraction of the image size.
    pub geometry_warp: f64,
    pub seed: u64,
}

impl Default for SpeckleParams {
    fn default() -> Self {
        SpeckleParams { looks: 1.0, geometry_warp: 0.0, seed: 0 }
    }
}

impl SpeckleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.looks > 0.0 && self.looks.is_finite()) {
            return Err(arg_err!("looks must be positive, got {}", self.looks));
        }
        if !(0.0..0.5).contains(&self.geometry_warp) {
            return Err(arg_err!("geometry_warp must lie in [0, 0.5), got {}", self.geometry_warp));
        }
        Ok(())
    }
}

/// Unit-mean gamma field with shape `looks`.
pub fn speckle_field(n: usize, looks: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(looks, 1.0 / looks).map_err(|e| arg_err!("speckle: {e}"))?;
    Ok((0..n).map(|_| gamma.sample(rng)).collect())
}

/// Offset inside the log keeping dark pixels finite.
pub const LOG_FLOOR: f64 = 0.01;
/// Intensities at or above this value map to `+1`.
pub const LOG_CEIL: f64 = 3.0;

/// `ln(δ + I)` rescaled from `[ln δ, ln(δ + LOG_CEIL)]` to `[-1, 1]` and clamped.
pub fn log_compress(intensity: f64) -> f64 {
    let lo = LOG_FLOOR.ln();
    let hi = (LOG_FLOOR + LOG_CEIL).ln();
    let v = (LOG_FLOOR + intensity.max(0.0)).ln();
    (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
}

/// Optical reflectance in `[0, 1]` of the scene materials.
pub const PALETTE: [[f64; 3]; 5] = [
    [0.10, 0.20, 0.35], // water
    [0.20, 0.45, 0.18], // vegetation
    [0.55, 0.42, 0.28], // soil
    [0.70, 0.70, 0.72], // urban
    [0.85, 0.80, 0.62], // sand
];

struct Region {
    material: usize,
    center: (f64, f64),
    radii: Vec<f64>,
    slope: (f64, f64),
}

impl Region {
    fn random(rng: &mut impl Rng, size: f64) -> Self {
        let verts = rng.random_range(3..=7);
        let base = rng.random_range(0.15..0.4) * size;
        Region {
            material: rng.random_range(0..PALETTE.len()),
            center: (rng.random_range(0.0..size), rng.random_range(0.0..size)),
            radii: (0..verts).map(|_| base * rng.random_range(0.6..1.0)).collect(),
            slope: (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)),
        }
    }

    // Star-shaped polygon: vertex k sits at angle 2πk/n with radius radii[k].
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.center.0, x - self.center.1);
        let n = self.radii.len();
        let tau = core::f64::consts::TAU;
        let ang = dy.atan2(dx);
        let ang = if ang < 0.0 { ang + tau } else { ang };
        let step = tau / n as f64;
        let k = ((ang / step) as usize).min(n - 1);
        let (a0, a1) = (k as f64 * step, (k + 1) as f64 * step);
        let (r0, r1) = (self.radii[k], self.radii[(k + 1) % n]);
        let p0 = (r0 * a0.cos(), r0 * a0.sin());
        let p1 = (r1 * a1.cos(), r1 * a1.sin());
        // same side of the edge p0→p1 as the center
        let cross = (p1.0 - p0.0) * (dy - p0.1) - (p1.1 - p0.1) * (dx - p0.0);
        let cross_c = (p1.0 - p0.0) * (-p0.1) - (p1.1 - p0.1) * (-p0.0);
        cross * cross_c >= 0.0
    }
}

/// Piecewise-smooth `[3, size, size]` scene with values in `[0, 1]`.
pub fn synth_scene(size: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let s = size as f64;
    let background = rng.random_range(0..PALETTE.len());
    let bg_slope = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    let regions: Vec<Region> = (0..rng.random_range(2..=5)).map(|_| Region::random(rng, s)).collect();
    let mut out = Tensor::zeros([3, size, size]);
    let plane = size * size;
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 / s - 0.5, c as f64 / s - 0.5);
            let mut shade = bg_slope.0 * y + bg_slope.1 * x;
            let mut mat = background;
            for reg in &regions {
                if reg.contains(r as f64, c as f64) {
                    mat = reg.material;
                    shade = reg.slope.0 * y + reg.slope.1 * x;
                }
            }
            for k in 0..3 {
                out.data_mut()[k * plane + r * size + c] = (PALETTE[mat][k] + shade).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Bilinear sample of an `h×w` plane with edge clamping.
fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resamples a square plane under a random affine map of magnitude `amount`.
fn warp(plane: &[f64], size: usize, amount: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut jitter = || rng.random_range(-amount..=amount);
    let (a, b, c, d) = (1.0 + jitter(), jitter(), jitter(), 1.0 + jitter());
    let s = size as f64;
    let (ty, tx) = (jitter() * s, jitter() * s);
    let mid = (s - 1.0) / 2.0;
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - mid, (i % size) as f64 - mid);
            bilinear(plane, size, size, a * y + b * x + mid + ty, c * y + d * x + mid + tx)
        })
        .collect()
}

/// Channel-mean intensity of a `[3, H, W]` scene in `[0, 1]`.
pub fn scene_intensity(scene: &Tensor<f64>) -> Vec<f64> {
    let plane = scene.numel() / 3;
    let d = scene.data();
    (0..plane).map(|p| (d[p] + d[plane + p] + d[2 * plane + p]) / 3.0).collect()
}

/// Generator for pair `index`; every pair has its own stream of the seed.
pub fn pair_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One synthetic pair from a scene: speckled, log-compressed SAR and the optical image.
pub fn synth_pair(size: usize, params: &SpeckleParams, index: u64) -> Result<ImagePair> {
    params.validate()?;
    if size < 2 {
        return Err(arg_err!("synthetic image size must be at least 2, got {size}"));
    }
    let mut rng = pair_rng(params.seed, index);
    let scene = synth_scene(size, &mut rng);
    let mut intensity = scene_intensity(&scene);
    if params.geometry_warp > 0.0 {
        intensity = warp(&intensity, size, params.geometry_warp, &mut rng);
    }
    let speckle = speckle_field(size * size, params.looks, &mut rng)?;
    let sar: Vec<f64> = intensity.iter().zip(&speckle).map(|(i, n)| log_compress(i * n)).collect();
    let sar = Tensor::new([1, size, size], sar)?;
    let optical = scene.map(|v| 2.0 * v - 1.0);
    ImagePair::new(sar, optical, format!("synth{index:05}"))
}

/// `n` synthetic pairs with ids `synth00000`, `synth00001`, ...
pub fn synth_pairs(n: usize, size: usize, params: &SpeckleParams) -> Result<Vec<ImagePair>> {
    if n == 0 {
        return Err(arg_err!("synth_pairs needs n >= 1"));
    }
    (0..n as u64).map(|i| synth_pair(size, params, i)).collect()
}

/// The SAR image replicated to three channels: the do-nothing translation baseline.
pub fn identity_translation(sar: &Tensor<f64>) -> Tensor<f64> {
    let plane = sar.numel();
    let (h, w) = (sar.shape()[1], sar.shape()[2]);
    Tensor::from_fn([3, h, w], |i| sar.data()[i % plane])
}

/// Stacks pair images into `[B, 1, H, W]` and `[B, 3, H, W]` batches.
pub fn batch(pairs: &[&ImagePair]) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let first = pairs.first().ok_or_else(|| arg_err!("empty batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut sar = Vec::with_capacity(pairs.len() * h * w);
    let mut opt = Vec::with_capacity(pairs.len() * 3 * h * w);
    for p in pairs {
        if (p.height(), p.width()) != (h, w) {
            return Err(dim_err!("batch mixes {h}x{w} and {}x{} pairs", p.height(), p.width()));
        }
        sar.extend_from_slice(p.sar.data());
        opt.extend_from_slice(p.optical.data());
    }
    Ok((Tensor::new([pairs.len(), 1, h, w], sar)?, Tensor::new([pairs.len(), 3, h, w], opt)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_pair(h: usize, w: usize) -> ImagePair {
        let code = |i: usize| ((i % (h * w)) as f64) / (h * w) as f64;
        let sar = Tensor::from_fn([1, h, w], code);
        let optical = Tensor::from_fn([3, h, w], code);
        ImagePair::new(sar, optical, "ramp").unwrap()
    }

    #[test]
    fn u8_normalization() {
        assert_eq!(normalize_u8(255), 1.0);
        assert_eq!(normalize_u8(0), -1.0);
        for v in 0..=255u8 {
            assert_eq!(denormalize_u8(normalize_u8(v)), v);
        }
    }

    #[test]
    fn pair_validation() {
        let ok = ramp_pair(4, 4);
        assert!(ImagePair::new(ok.sar.clone(), Tensor::zeros([3, 4, 5]), "x").is_err());
        assert!(ImagePair::new(Tensor::full([1, 4, 4], 1.5), ok.optical.clone(), "x").is_err());
    }

    #[test]
    fn center_crop_index_arithmetic() {
        let pair = ramp_pair(6, 6);
        let c = crop_patches(&pair, 4, CropMode::Center).unwrap();
        for r in 0..4 {
            for col in 0..4 {
                let want = pair.sar.data()[(r + 1) * 6 + col + 1];
                assert_eq!(c.sar.data()[r * 4 + col], want);
            }
        }
        assert_eq!(crop_patches(&pair, 6, CropMode::Center).unwrap(), pair);
        assert!(crop_patches(&pair, 7, CropMode::Center).is_err());
    }

    #[test]
    fn crop_window_is_shared() {
        let pair = ramp_pair(20, 13);
        for seed in 0..10 {
            let c = crop_patches(&pair, 8, CropMode::Random(seed)).unwrap();
            assert_eq!(c, crop_patches(&pair, 8, CropMode::Random(seed)).unwrap());
            let plane = 64;
            for k in 0..3 {
                assert_eq!(&c.optical.data()[k * plane..(k + 1) * plane], c.sar.data());
            }
        }
    }

    #[test]
    fn gamma_field_has_unit_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = speckle_field(1_000_000, 1.0, &mut rng).unwrap();
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!(speckle_field(1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn speckle_independent_of_scene() {
        let mut xs = Vec::new();
        let mut ns = Vec::new();
        for i in 0..16 {
            let mut rng = pair_rng(9, i);
            let scene = synth_scene(64, &mut rng);
            xs.extend(scene_intensity(&scene));
            ns.extend(speckle_field(64 * 64, 1.0, &mut rng).unwrap());
        }
        let n = xs.len() as f64;
        let (mx, mn) = (xs.iter().sum::<f64>() / n, ns.iter().sum::<f64>() / n);
        let cov: f64 = xs.iter().zip(&ns).map(|(x, y)| (x - mx) * (y - mn)).sum::<f64>() / n;
        let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n).sqrt();
        let sn = (ns.iter().map(|y| (y - mn).powi(2)).sum::<f64>() / n).sqrt();
        assert!((cov / (sx * sn)).abs() < 0.02);
    }

    #[test]
    fn many_looks_remove_speckle() {
        let params = SpeckleParams { looks: 1e6, ..Default::default() };
        let pair = synth_pair(32, &params, 3).unwrap();
        let mut rng = pair_rng(params.seed, 3);
        let clean: Vec<f64> = scene_intensity(&synth_scene(32, &mut rng)).into_iter().map(log_compress).collect();
        let worst = pair.sar.data().iter().zip(&clean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 0.01, "{worst}");
    }

    #[test]
    fn synthetic_data_is_seeded_and_in_range() {
        let params = SpeckleParams { looks: 1.0, geometry_warp: 0.05, seed: 42 };
        let a = synth_pairs(4, 32, &params).unwrap();
        assert_eq!(a, synth_pairs(4, 32, &params).unwrap());
        assert_ne!(a, synth_pairs(4, 32, &SpeckleParams { seed: 43, ..params }).unwrap());
        for p in &a {
            assert!(p.sar.data().iter().chain(p.optical.data()).all(|v| v.is_finite() && v.abs() <= 1.0));
        }
        assert_eq!(a[2].id, "synth00002");
        assert!(synth_pairs(0, 32, &params).is_err());
    }

    #[test]
    fn log_compression_range() {
        assert_eq!(log_compress(0.0), -1.0);
        assert_eq!(log_compress(LOG_CEIL), 1.0);
        assert_eq!(log_compress(50.0), 1.0);
        assert!(log_compress(0.5) > log_compress(0.4));
    }

    #[test]
    fn identity_baseline_replicates_sar() {
        let pair = ramp_pair(4, 4);
        let id = identity_translation(&pair.sar);
        assert_eq!(id.shape(), &[3, 4, 4]);
        assert_eq!(&id.data()[32..], pair.sar.data());
    }

    #[test]
    fn batching() {
        let a = ramp_pair(4, 4);
        let b = ramp_pair(4, 4);
        let (s, o) = batch(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 1, 4, 4]);
        assert_eq!(o.shape(), &[2, 3, 4, 4]);
        assert!(batch(&[&a, &ramp_pair(4, 6)]).is_err());
    }
}
