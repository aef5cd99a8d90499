//! Slice-level forward and backward kernels behind the differentiable ops.
//!
//! Convolutions are cross-correlations (no kernel flip) with zero padding, lowered to
//! GEMM through an im2col buffer per batch item.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, dim_err, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (b, cin, h, w) = match *input {
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(dim_err!("conv2d input must be 4-d, got {input:?}")),
        };
        let (cout, wcin, kh, kw) = match *weight {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => return Err(dim_err!("conv2d weight must be 4-d, got {weight:?}")),
        };
        if stride == 0 {
            return Err(arg_err!("conv2d stride must be positive"));
        }
        if wcin != cin {
            return Err(dim_err!("conv2d weight expects {wcin} input channels, input has {cin}"));
        }
        if kh == 0 || kw == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(dim_err!(
                "conv2d kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"
            ));
        }
        Ok(ConvGeom {
            batch: b,
            in_channels: cin,
            height: h,
            width: w,
            out_channels: cout,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    /// Rows of the im2col matrix (`Cin·kH·kW`).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn macs(&self) -> u64 {
        (self.batch * self.out_channels * self.patch_len() * self.out_pixels()) as u64
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    // Output columns `ox` for which `ox*stride + kj - pad` lands inside [0, width).
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let p = self.padding;
        // first: smallest o with o*s + k >= p
        let first = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // last (exclusive): smallest o with o*s + k - p >= extent
        let last = if extent + p > k { (extent + p - k).div_ceil(s) } else { 0 };
        (first.min(out), last.min(out))
    }
}

/// Writes the `Cin·kH·kW × Ho·Wo` patch matrix of one image into `col`, replacing its
/// contents. Every element is written exactly once.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut Vec<T>) {
    let (h, w, ho, wo) = (g.height, g.width, g.out_h, g.out_w);
    let p = g.padding;
    col.clear();
    col.reserve(g.patch_len() * ho * wo);
    let zero = T::zero();
    for c in 0..g.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kernel_h {
            let (oy0, oy1) = g.valid_range(ki, h, ho);
            let oy1 = oy1.max(oy0);
            for kj in 0..g.kernel_w {
                let (ox0, ox1) = g.valid_range(kj, w, wo);
                let ox1 = ox1.max(ox0);
                col.resize(col.len() + oy0 * wo, zero);
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ki - p;
                    let src_row = &plane[iy * w..(iy + 1) * w];
                    col.resize(col.len() + ox0, zero);
                    if g.stride == 1 {
                        let ix0 = ox0 + kj - p;
                        col.extend_from_slice(&src_row[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        col.extend((ox0..ox1).map(|ox| src_row[ox * g.stride + kj - p]));
                    }
                    col.resize(col.len() + (wo - ox1), zero);
                }
                col.resize(col.len() + (ho - oy1) * wo, zero);
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (h, w, ho, wo) = (g.height, g.width, g.out_h, g.out_w);
    let p = g.padding;
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kernel_h {
            let (oy0, oy1) = g.valid_range(ki, h, ho);
            for kj in 0..g.kernel_w {
                let (ox0, ox1) = g.valid_range(kj, w, wo);
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ki - p;
                    let dst_row = &mut plane[iy * w..(iy + 1) * w];
                    let src_row = &src[oy * wo..(oy + 1) * wo];
                    if g.stride == 1 {
                        if ox1 > ox0 {
                            let ix0 = ox0 + kj - p;
                            let dst = &mut dst_row[ix0..ix0 + (ox1 - ox0)];
                            dst.iter_mut().zip(&src_row[ox0..ox1]).for_each(|(d, &v)| *d += v);
                        }
                    } else {
                        for ox in ox0..ox1 {
                            dst_row[ox * g.stride + kj - p] += src_row[ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let k = g.patch_len();
    let pix = g.out_pixels();
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * pix;
    let mut out = vec![T::zero(); g.batch * out_len];
    let mut col = Vec::new();
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let ob = &mut out[b * out_len..(b + 1) * out_len];
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        T::gemm(g.out_channels, k, pix, T::one(), weight, false, cols, false, T::zero(), ob);
        if let Some(bias) = bias {
            for (o, &bv) in ob.chunks_mut(pix).zip(bias) {
                o.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Gradients of a convolution. Each output is only computed when requested.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_x, need_w, need_b) = need;
    let k = g.patch_len();
    let pix = g.out_pixels();
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * pix;
    let mut dx = need_x.then(|| vec![T::zero(); g.batch * in_len]);
    let mut dw = need_w.then(|| vec![T::zero(); weight.len()]);
    let pointwise = g.is_pointwise();
    // one scratch buffer: patch matrix for the weight gradient, then its gradient
    let mut col = Vec::new();
    for b in 0..g.batch {
        let gb = &grad_out[b * out_len..(b + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let cols: &[T] = if pointwise {
                xb
            } else {
                im2col(xb, g, &mut col);
                &col
            };
            T::gemm(g.out_channels, pix, k, T::one(), gb, false, cols, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if pointwise {
                T::gemm(k, g.out_channels, pix, T::one(), weight, true, gb, false, T::zero(), dxb);
            } else {
                col.resize(k * pix, T::zero());
                T::gemm(k, g.out_channels, pix, T::one(), weight, true, gb, false, T::zero(), &mut col);
                col2im(&col, g, dxb);
            }
        }
    }
    let db = need_b.then(|| {
        let mut db = vec![T::zero(); g.out_channels];
        for b in 0..g.batch {
            for (o, d) in db.iter_mut().enumerate() {
                let start = b * out_len + o * pix;
                *d += grad_out[start..start + pix].iter().copied().sum::<T>();
            }
        }
        db
    });
    ConvGrads { input: dx, weight: dw, bias: db }
}

/// Saved statistics of an instance-norm forward pass.
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Per-(batch, channel) normalization over the spatial plane followed by an affine map.
pub fn instance_norm_forward<T: Real>(
    x: &[T],
    dims: (usize, usize, usize),
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, NormCache<T>) {
    let (b, c, plane) = dims;
    let n = T::from_f64(plane as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); b * c];
    for s in 0..b * c {
        let ch = s % c;
        let xs = &x[s * plane..(s + 1) * plane];
        let mean = xs.iter().copied().sum::<T>() / n;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        inv_std[s] = inv;
        let hs = &mut xhat[s * plane..(s + 1) * plane];
        let ys = &mut y[s * plane..(s + 1) * plane];
        for ((h, yv), &v) in hs.iter_mut().zip(ys.iter_mut()).zip(xs) {
            *h = (v - mean) * inv;
            *yv = *h * gamma[ch] + beta[ch];
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Returns `(d input, d gamma, d beta)`.
pub fn instance_norm_backward<T: Real>(
    grad_out: &[T],
    dims: (usize, usize, usize),
    gamma: &[T],
    cache: &NormCache<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (b, c, plane) = dims;
    let n = T::from_f64(plane as f64);
    let mut dx = vec![T::zero(); grad_out.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..b * c {
        let ch = s % c;
        let gs = &grad_out[s * plane..(s + 1) * plane];
        let hs = &cache.xhat[s * plane..(s + 1) * plane];
        let mut sum_g = T::zero();
        let mut sum_gh = T::zero();
        for (&gv, &hv) in gs.iter().zip(hs) {
            sum_g += gv;
            sum_gh += gv * hv;
        }
        dbeta[ch] += sum_g;
        dgamma[ch] += sum_gh;
        // dxhat = g * gamma; dx = inv/N * (N dxhat - sum dxhat - xhat * sum(dxhat xhat))
        let scale = gamma[ch] * cache.inv_std[s] / n;
        let dxs = &mut dx[s * plane..(s + 1) * plane];
        for ((d, &gv), &hv) in dxs.iter_mut().zip(gs).zip(hs) {
            *d = scale * (n * gv - sum_g - hv * sum_gh);
        }
    }
    (dx, dgamma, dbeta)
}

pub fn upsample_nearest2_forward<T: Real>(x: &[T], dims: (usize, usize, usize)) -> Vec<T> {
    let (planes, h, w) = dims;
    let mut out = vec![T::zero(); planes * 4 * h * w];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2_backward<T: Real>(g: &[T], dims: (usize, usize, usize)) -> Vec<T> {
    let (planes, h, w) = dims;
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct nested-loop cross-correlation, independent of the im2col path.
    fn naive_conv(x: &[f64], wt: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.out_channels * g.out_pixels()];
        for b in 0..g.batch {
            for o in 0..g.out_channels {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = 0.0;
                        for c in 0..g.in_channels {
                            for ki in 0..g.kernel_h {
                                for kj in 0..g.kernel_w {
                                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                        continue;
                                    }
                                    let xi = ((b * g.in_channels + c) * g.height + iy as usize) * g.width + ix as usize;
                                    let wi = ((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj;
                                    acc += x[xi] * wt[wi];
                                }
                            }
                        }
                        out[((b * g.out_channels + o) * g.out_h + oy) * g.out_w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_naive_loops() {
        let cases = [
            ([2, 3, 7, 6], [4, 3, 3, 3], 1, 1),
            ([1, 2, 8, 8], [3, 2, 3, 3], 2, 1),
            ([1, 2, 9, 7], [2, 2, 4, 4], 2, 1),
            ([1, 1, 5, 5], [2, 1, 7, 7], 1, 3),
            ([2, 3, 4, 4], [5, 3, 1, 1], 1, 0),
        ];
        for (ishape, wshape, stride, pad) in cases {
            let g = ConvGeom::new(&ishape, &wshape, stride, pad).unwrap();
            let xn: usize = ishape.iter().product();
            let wn: usize = wshape.iter().product();
            let x: Vec<f64> = (0..xn).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
            let w: Vec<f64> = (0..wn).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.2).collect();
            let fast = conv2d_forward(&x, &w, None, &g);
            let slow = naive_conv(&x, &w, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{ishape:?} {wshape:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn output_extent_formula() {
        let g = ConvGeom::new(&[1, 3, 256, 256], &[8, 3, 4, 4], 2, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (128, 128));
        let g = ConvGeom::new(&[1, 3, 31, 31], &[8, 3, 4, 4], 1, 1).unwrap();
        assert_eq!(g.out_h, 30);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(ConvGeom::new(&[1, 2, 4, 4], &[1, 3, 3, 3], 1, 1).is_err());
        assert!(ConvGeom::new(&[1, 1, 4, 4], &[1, 1, 3, 3], 0, 1).is_err());
        assert!(ConvGeom::new(&[1, 1, 2, 2], &[1, 1, 5, 5], 1, 0).is_err());
    }
}
