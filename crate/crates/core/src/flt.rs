//! The FLT-guided branch: a frozen first-derivative head, fusion blocks that mix the
//! head's features with backbone block outputs, and the one-channel side output.
//!
//! The head computes, per channel,
//!
//! ```text
//! head(P) = -(P ⋆ W_x + P ⋆ W_y)
//! W_x = [0 1 0; 0 0 0; 0 -1 0]      W_y = [0 0 0; -1 0 1; 0 0 0]
//! ```
//!
//! with `⋆` a cross-correlation. Borders are padded by edge replication so that any
//! constant image maps to exactly zero.

use alloc::format;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::graph::{Activation, Graph, Var};
use crate::layers::{Conv, ConvBlock, ConvSpec, Init, Resample, ResampleMode};
use crate::param::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// The two fixed 3×3 derivative kernels. They are graph constants, never parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FltKernels {
    pub w_x: [[f64; 3]; 3],
    pub w_y: [[f64; 3]; 3],
}

pub const FLT_KERNELS: FltKernels = FltKernels {
    w_x: [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0]],
    w_y: [[0.0, 0.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]],
};

impl FltKernels {
    fn tensor<T: Real>(k: &[[f64; 3]; 3]) -> Tensor<T> {
        Tensor::from_fn([1, 1, 3, 3], |i| T::from_f64(k[i / 3][i % 3]))
    }

    pub fn w_x_tensor<T: Real>(&self) -> Tensor<T> {
        Self::tensor(&self.w_x)
    }

    pub fn w_y_tensor<T: Real>(&self) -> Tensor<T> {
        Self::tensor(&self.w_y)
    }
}

/// Applies `kernel` (a `[1,1,3,3]` graph constant) to every channel independently.
fn depthwise<T: Real>(g: &mut Graph<'_, T>, padded: Var, kernel: Var, dims: (usize, usize, usize, usize)) -> Result<Var> {
    let (b, c, h, w) = dims;
    let y = g.conv2d(padded, kernel, None, 1, 0)?;
    g.reshape(y, &[b, c, h, w])
}

/// `W_x` and `W_y` responses of `image`, per channel.
pub fn flt_gradients<T: Real>(g: &mut Graph<'_, T>, image: Var) -> Result<(Var, Var)> {
    let (b, c, h, w) = g.value(image).dims4()?;
    if h < 3 || w < 3 {
        return Err(dim_err!("FLT head needs spatial size >= 3, got {h}x{w}"));
    }
    let planes = g.reshape(image, &[b * c, 1, h, w])?;
    let padded = g.pad_replicate(planes, 1)?;
    let kx = g.constant(FLT_KERNELS.w_x_tensor());
    let ky = g.constant(FLT_KERNELS.w_y_tensor());
    let dx = depthwise(g, padded, kx, (b, c, h, w))?;
    let dy = depthwise(g, padded, ky, (b, c, h, w))?;
    Ok((dx, dy))
}

/// `-(P ⋆ W_x + P ⋆ W_y)` per channel; shape preserving and non-learnable.
pub fn flt_head<T: Real>(g: &mut Graph<'_, T>, image: Var) -> Result<Var> {
    let (dx, dy) = flt_gradients(g, image)?;
    g.lincomb(&[(dx, -1.0), (dy, -1.0)])
}

/// Channel-concatenate `(primary, other)`, then three 3×3 convolutions with relu between.
/// The output has the primary input's shape.
#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub conv1: ConvBlock,
    pub conv2: ConvBlock,
    pub conv3: ConvBlock,
    pub channels: usize,
}

impl FusionBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        other_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let relu = Some(Activation::Relu);
        Ok(FusionBlock {
            conv1: ConvBlock::new(
                store,
                &format!("{name}.conv1"),
                ConvSpec::same(channels + other_channels, channels, 3),
                false,
                relu,
                rng,
            )?,
            conv2: ConvBlock::new(store, &format!("{name}.conv2"), ConvSpec::same(channels, channels, 3), false, relu, rng)?,
            conv3: ConvBlock::new(store, &format!("{name}.conv3"), ConvSpec::same(channels, channels, 3), false, None, rng)?,
            channels,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, primary: Var, other: Var) -> Result<Var> {
        let (pb, _, ph, pw) = g.value(primary).dims4()?;
        let (ob, _, oh, ow) = g.value(other).dims4()?;
        if (pb, ph, pw) != (ob, oh, ow) {
            return Err(dim_err!(
                "fusion inputs misaligned: {:?} vs {:?}",
                g.value(primary).shape(),
                g.value(other).shape()
            ));
        }
        let x = g.concat_channels(primary, other)?;
        let x = self.conv1.forward(g, x)?;
        let x = self.conv2.forward(g, x)?;
        self.conv3.forward(g, x)
    }
}

/// Where the head's residual is added back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BranchWiring {
    /// The head output alone feeds the branch.
    #[default]
    DefaultA,
    /// The head output is also added to the backbone's input image.
    BackboneInputResidualB,
    /// The head output is added to the branch input before the fusion stages.
    BranchInputResidualC,
}

impl BranchWiring {
    pub const ALL: [BranchWiring; 3] =
        [BranchWiring::DefaultA, BranchWiring::BackboneInputResidualB, BranchWiring::BranchInputResidualC];

    pub fn name(self) -> &'static str {
        match self {
            BranchWiring::DefaultA => "a",
            BranchWiring::BackboneInputResidualB => "b",
            BranchWiring::BranchInputResidualC => "c",
        }
    }
}

impl fmt::Display for BranchWiring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BranchWiring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BranchWiring::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| arg_err!("unknown branch wiring `{s}` (expected a, b or c)"))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FltBranchOutput {
    pub head: Var,
    /// Feature after the two fusion stages, on the backbone's feature grid.
    pub fused_feature: Var,
    /// One-channel side output at input resolution.
    pub flt_image: Var,
}

/// Head → stem conv → two ×½ stages → two fusion stages → two ×2 stages → 1-channel
/// prediction.
#[derive(Debug, Clone)]
pub struct FltBranch {
    pub stem: ConvBlock,
    pub down1: Resample,
    pub down2: Resample,
    pub fuse1: FusionBlock,
    pub fuse2: FusionBlock,
    pub up1: Resample,
    pub up2: Resample,
    pub pred: Conv,
}

impl FltBranch {
    /// `in_channels` is the image channel count; `base` the stem width. The feature grid
    /// carries `4·base` channels, matching the backbone blocks.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        base: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let relu = Some(Activation::Relu);
        let feat = 4 * base;
        Ok(FltBranch {
            stem: ConvBlock::new(store, &format!("{name}.stem"), ConvSpec::same(in_channels, base, 3), true, relu, rng)?,
            down1: Resample::new(store, &format!("{name}.down1"), ResampleMode::DownStride2Conv, base, 2 * base, rng)?,
            down2: Resample::new(store, &format!("{name}.down2"), ResampleMode::DownStride2Conv, 2 * base, feat, rng)?,
            fuse1: FusionBlock::new(store, &format!("{name}.fuse1"), feat, feat, rng)?,
            fuse2: FusionBlock::new(store, &format!("{name}.fuse2"), feat, feat, rng)?,
            up1: Resample::new(store, &format!("{name}.up1"), ResampleMode::UpNearest2ThenConv, feat, 2 * base, rng)?,
            up2: Resample::new(store, &format!("{name}.up2"), ResampleMode::UpNearest2ThenConv, 2 * base, base, rng)?,
            pred: Conv::new(store, &format!("{name}.pred"), ConvSpec::same(base, 1, 3), Init::Normal(0.02), rng)?,
        })
    }

    /// Runs the branch given an already computed head response. Block outputs are fused
    /// in order; with more than two blocks only the last two are used.
    pub fn forward_from_head<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        image: Var,
        head: Var,
        block_outputs: &[Var],
        wiring: BranchWiring,
    ) -> Result<FltBranchOutput> {
        let (first, second) = match block_outputs {
            [] => return Err(dim_err!("FLT branch needs at least one backbone block output")),
            [only] => (*only, *only),
            [.., a, b] => (*a, *b),
        };
        let branch_in = match wiring {
            BranchWiring::BranchInputResidualC => g.add(image, head)?,
            BranchWiring::DefaultA | BranchWiring::BackboneInputResidualB => head,
        };
        let x = self.stem.forward(g, branch_in)?;
        let x = self.down1.forward(g, x)?;
        let x = self.down2.forward(g, x)?;
        for &b in &[first, second] {
            if g.value(b).shape() != g.value(x).shape() {
                return Err(dim_err!(
                    "backbone output {:?} not aligned with branch feature {:?}",
                    g.value(b).shape(),
                    g.value(x).shape()
                ));
            }
        }
        let x = self.fuse1.forward(g, x, first)?;
        let fused_feature = self.fuse2.forward(g, x, second)?;
        let y = self.up1.forward(g, fused_feature)?;
        let y = self.up2.forward(g, y)?;
        let flt_image = self.pred.forward(g, y)?;
        Ok(FltBranchOutput { head, fused_feature, flt_image })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        image: Var,
        block_outputs: &[Var],
        wiring: BranchWiring,
    ) -> Result<FltBranchOutput> {
        let head = flt_head(g, image)?;
        self.forward_from_head(g, image, head, block_outputs, wiring)
    }
}

/// Projects the FLT image onto the backbone feature grid and fuses it in.
#[derive(Debug, Clone)]
pub struct BackboneFusion {
    pub proj1: Resample,
    pub proj2: Resample,
    pub block: FusionBlock,
}

impl BackboneFusion {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, base: usize, rng: &mut impl Rng) -> Result<Self> {
        let feat = 4 * base;
        Ok(BackboneFusion {
            proj1: Resample::new(store, &format!("{name}.proj1"), ResampleMode::DownStride2Conv, 1, base, rng)?,
            proj2: Resample::new(store, &format!("{name}.proj2"), ResampleMode::DownStride2Conv, base, feat, rng)?,
            block: FusionBlock::new(store, &format!("{name}.block"), feat, feat, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, backbone_feature: Var, flt_image: Var) -> Result<Var> {
        let p = self.proj1.forward(g, flt_image)?;
        let p = self.proj2.forward(g, p)?;
        self.block.forward(g, backbone_feature, p)
    }
}

/// Free-function form of [`BackboneFusion::forward`].
pub fn fuse_into_backbone<T: Real>(
    g: &mut Graph<'_, T>,
    fusion: &BackboneFusion,
    backbone_feature: Var,
    flt_image: Var,
) -> Result<Var> {
    fusion.forward(g, backbone_feature, flt_image)
}

/// Sum over interior pixels of the `W_y` response equals this boundary term:
/// `Σ_rows (P[r, W-1] + P[r, W-2] - P[r, 0] - P[r, 1])` for interior columns `1..W-1`
/// of every row.
pub fn w_y_boundary_sum(plane: &[f64], h: usize, w: usize) -> f64 {
    (0..h).map(|r| plane[r * w + w - 1] + plane[r * w + w - 2] - plane[r * w] - plane[r * w + 1]).sum()
}
