//! Residual blocks derived from ODE discretizations.
//!
//! The third-order finite-difference (TFD) block advances a rolling triple of layer
//! states `(w_j, w_{j+1}, w_{j+2})` with
//!
//! ```text
//! w_{j+3} = w_{j+2} + 7/2 (w_{j+2} - w_{j+1}) - 11/2 (w_{j+1} - w_j) + 3/2 f(w_{j+2})
//! ```
//!
//! A block sees a single input, so it bootstraps `w_{j+1}` and `w_{j+2}` with two plain
//! residual sub-steps before applying the recurrence once. The step size is absorbed
//! into the learned residual function `f`.
//!
//! The ablation variants share the same [`Block`] interface:
//! plain `x + f(x)`, midpoint Runge-Kutta `x + (f(x) + f(x + f(x)))/2`, and PolyInception-2
//! `x + f(x) + f(f(x))`. RK2 and Poly2 evaluate one residual function twice with shared
//! weights.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::graph::{Activation, Graph, Var};
use crate::layers::{ConvBlock, ConvSpec};
use crate::param::ParamStore;
use crate::real::Real;

/// Coefficient on `w_{j+2} − w_{j+1}`.
pub const TFD_C2: f64 = 7.0 / 2.0;
/// Coefficient on `w_{j+1} − w_j`.
pub const TFD_C1: f64 = -11.0 / 2.0;
/// Coefficient on the residual `f(w_{j+2})`.
pub const TFD_CF: f64 = 3.0 / 2.0;

/// A shape-preserving map used as the residual of a block.
pub trait ResidualMap<T: Real> {
    fn apply(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var>;
}

impl<T: Real, F> ResidualMap<T> for F
where
    F: Fn(&mut Graph<'_, T>, Var) -> Result<Var>,
{
    fn apply(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        self(g, x)
    }
}

/// `conv3×3 → norm → relu → conv3×3 → norm`, channel preserving.
#[derive(Debug, Clone)]
pub struct ResidualFn {
    pub conv1: ConvBlock,
    pub conv2: ConvBlock,
}

impl ResidualFn {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let spec = ConvSpec::same(channels, channels, 3);
        Ok(ResidualFn {
            conv1: ConvBlock::new(store, &format!("{name}.conv1"), spec, true, Some(Activation::Relu), rng)?,
            conv2: ConvBlock::new(store, &format!("{name}.conv2"), spec, true, None, rng)?,
        })
    }
}

impl<T: Real> ResidualMap<T> for ResidualFn {
    fn apply(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        self.conv2.forward(g, h)
    }
}

fn residual<T: Real>(g: &mut Graph<'_, T>, f: &impl ResidualMap<T>, x: Var) -> Result<Var> {
    let y = f.apply(g, x)?;
    if g.value(y).shape() != g.value(x).shape() {
        return Err(dim_err!(
            "residual function changed shape {:?} -> {:?}",
            g.value(x).shape(),
            g.value(y).shape()
        ));
    }
    Ok(y)
}

/// Three consecutive layer states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TfdState {
    pub w_j: Var,
    pub w_j1: Var,
    pub w_j2: Var,
}

impl TfdState {
    pub fn new<T: Real>(g: &Graph<'_, T>, w_j: Var, w_j1: Var, w_j2: Var) -> Result<Self> {
        let s = g.value(w_j).shape();
        if g.value(w_j1).shape() != s || g.value(w_j2).shape() != s {
            return Err(dim_err!(
                "TFD states differ in shape: {:?}, {:?}, {:?}",
                s,
                g.value(w_j1).shape(),
                g.value(w_j2).shape()
            ));
        }
        Ok(TfdState { w_j, w_j1, w_j2 })
    }

    /// Shifts the window: `(w_j1, w_j2, next)`.
    pub fn advance(self, next: Var) -> TfdState {
        TfdState { w_j: self.w_j1, w_j1: self.w_j2, w_j2: next }
    }
}

/// One application of the TFD recurrence, returning `w_{j+3}`.
pub fn tfd_step<T: Real>(g: &mut Graph<'_, T>, state: TfdState, f: &impl ResidualMap<T>) -> Result<Var> {
    let state = TfdState::new(g, state.w_j, state.w_j1, state.w_j2)?;
    let fv = residual(g, f, state.w_j2)?;
    let d2 = g.sub(state.w_j2, state.w_j1)?;
    let d1 = g.sub(state.w_j1, state.w_j)?;
    g.lincomb(&[(state.w_j2, 1.0), (d2, TFD_C2), (d1, TFD_C1), (fv, TFD_CF)])
}

/// Full TFD block: two plain residual sub-steps build the state triple, then one
/// recurrence step with `f3`.
pub fn tfd_block_forward<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    f1: &impl ResidualMap<T>,
    f2: &impl ResidualMap<T>,
    f3: &impl ResidualMap<T>,
) -> Result<Var> {
    let w_j1 = plain_residual_step(g, x, f1)?;
    let w_j2 = plain_residual_step(g, w_j1, f2)?;
    tfd_step(g, TfdState::new(g, x, w_j1, w_j2)?, f3)
}

pub fn plain_residual_step<T: Real>(g: &mut Graph<'_, T>, x: Var, f: &impl ResidualMap<T>) -> Result<Var> {
    let fx = residual(g, f, x)?;
    g.add(x, fx)
}

pub fn rk2_step<T: Real>(g: &mut Graph<'_, T>, x: Var, f: &impl ResidualMap<T>) -> Result<Var> {
    let k1 = residual(g, f, x)?;
    let mid = g.add(x, k1)?;
    let k2 = residual(g, f, mid)?;
    g.lincomb(&[(x, 1.0), (k1, 0.5), (k2, 0.5)])
}

pub fn poly2_step<T: Real>(g: &mut Graph<'_, T>, x: Var, f: &impl ResidualMap<T>) -> Result<Var> {
    let fx = residual(g, f, x)?;
    let ffx = residual(g, f, fx)?;
    g.lincomb(&[(x, 1.0), (fx, 1.0), (ffx, 1.0)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BlockKind {
    Plain,
    #[default]
    Tfd,
    Rk2,
    Poly2,
}

impl BlockKind {
    pub const ALL: [BlockKind; 4] = [BlockKind::Plain, BlockKind::Tfd, BlockKind::Rk2, BlockKind::Poly2];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Plain => "plain",
            BlockKind::Tfd => "tfd",
            BlockKind::Rk2 => "rk2",
            BlockKind::Poly2 => "poly2",
        }
    }

    /// Number of distinct residual functions the block owns.
    pub fn residual_count(self) -> usize {
        match self {
            BlockKind::Tfd => 3,
            BlockKind::Plain | BlockKind::Rk2 | BlockKind::Poly2 => 1,
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| arg_err!("unknown block kind `{s}` (expected plain, tfd, rk2 or poly2)"))
    }
}

/// A residual block of one [`BlockKind`] with its residual functions `f1`, `f2`, `f3`.
#[derive(Debug, Clone)]
pub struct Block {
    pub kind: BlockKind,
    pub fns: Vec<ResidualFn>,
}

impl Block {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: BlockKind,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fns = (1..=kind.residual_count())
            .map(|i| ResidualFn::new(store, &format!("{name}.f{i}"), channels, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Block { kind, fns })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self.kind {
            BlockKind::Plain => plain_residual_step(g, x, &self.fns[0]),
            BlockKind::Tfd => tfd_block_forward(g, x, &self.fns[0], &self.fns[1], &self.fns[2]),
            BlockKind::Rk2 => rk2_step(g, x, &self.fns[0]),
            BlockKind::Poly2 => poly2_step(g, x, &self.fns[0]),
        }
    }
}
