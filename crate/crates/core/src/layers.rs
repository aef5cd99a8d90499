//! Parameterized layers registered in a [`ParamStore`] under dotted names.

use alloc::format;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Result};
use crate::graph::{Activation, Graph, Var};
use crate::param::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Weight initialization for convolution kernels. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `N(0, std²)`; the image-translation default uses `std = 0.02`.
    Normal(f64),
    /// `N(0, 2 / fan_in)`.
    KaimingNormal,
    Zeros,
}

impl Init {
    fn sample<T: Real>(self, shape: [usize; 4], rng: &mut impl Rng) -> Tensor<T> {
        let fan_in = shape[1] * shape[2] * shape[3];
        let std = match self {
            Init::Normal(s) => s,
            Init::KaimingNormal => num_traits::Float::sqrt(2.0 / fan_in as f64),
            Init::Zeros => return Tensor::zeros(shape),
        };
        let normal = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| T::from_f64(normal.sample(rng)))
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride-1 convolution with "same" padding for odd kernels.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec { in_channels, out_channels, kernel, stride: 1, padding: kernel / 2, bias: true }
    }

    pub fn strided(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec { in_channels, out_channels, kernel, stride, padding, bias: true }
    }
}

impl Conv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let shape = [spec.out_channels, spec.in_channels, spec.kernel, spec.kernel];
        let weight = store.add(format!("{name}.weight"), init.sample(shape, rng))?;
        let bias = if spec.bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros([spec.out_channels]))?)
        } else {
            None
        };
        Ok(Conv { weight, bias, stride: spec.stride, padding: spec.padding })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = self.bias.map(|b| g.param(b)).transpose()?;
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}

/// Affine instance normalization (`gamma` starts at 1, `beta` at 0).
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl InstanceNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full([channels], T::one()))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros([channels]))?;
        Ok(InstanceNorm { gamma, beta })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma)?;
        let beta = g.param(self.beta)?;
        g.instance_norm(x, gamma, beta, NORM_EPS)
    }
}

/// Convolution, optional instance norm, optional activation.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: Option<InstanceNorm>,
    pub act: Option<Activation>,
}

impl ConvBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        norm: bool,
        act: Option<Activation>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let conv = Conv::new(store, &format!("{name}.conv"), spec, Init::Normal(0.02), rng)?;
        let norm = if norm { Some(InstanceNorm::new(store, &format!("{name}.norm"), spec.out_channels)?) } else { None };
        Ok(ConvBlock { conv, norm, act })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut y = self.conv.forward(g, x)?;
        if let Some(n) = &self.norm {
            y = n.forward(g, y)?;
        }
        if let Some(a) = self.act {
            y = g.activation(y, a);
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    /// 3×3 stride-2 convolution; halves the spatial extent.
    DownStride2Conv,
    /// Nearest-neighbour ×2 followed by a 3×3 convolution; doubles the spatial extent.
    UpNearest2ThenConv,
}

/// One resampling stage: conv + instance norm + relu around a ×2 scale change.
#[derive(Debug, Clone)]
pub struct Resample {
    pub mode: ResampleMode,
    pub block: ConvBlock,
}

impl Resample {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        mode: ResampleMode,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spec = match mode {
            ResampleMode::DownStride2Conv => ConvSpec::strided(in_channels, out_channels, 3, 2, 1),
            ResampleMode::UpNearest2ThenConv => ConvSpec::same(in_channels, out_channels, 3),
        };
        let block = ConvBlock::new(store, name, spec, true, Some(Activation::Relu), rng)?;
        Ok(Resample { mode, block })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self.mode {
            ResampleMode::DownStride2Conv => {
                let (_, _, h, w) = g.value(x).dims4()?;
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(dim_err!("downsampling needs even extents, got {h}x{w}"));
                }
                self.block.forward(g, x)
            }
            ResampleMode::UpNearest2ThenConv => {
                let up = g.upsample_nearest2(x)?;
                self.block.forward(g, up)
            }
        }
    }
}

/// Sets every parameter of `store` whose name starts with `prefix` to zero.
pub fn zero_params<T: Real>(store: &mut ParamStore<T>, prefix: &str) {
    let ids: alloc::vec::Vec<_> = store.ids_with_prefix(prefix).collect();
    for id in ids {
        store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }
}
