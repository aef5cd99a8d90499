//! Central-difference gradient checking for 64-bit graphs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::blocks::{Block, BlockKind};
use crate::error::{arg_err, Error, Result};
use crate::flt::{BranchWiring, FltBranch};
use crate::graph::{Activation, Graph, Var};
use crate::layers::{InstanceNorm, Resample, ResampleMode, LEAKY_SLOPE};
use crate::loss::{cycle_loss, gan_loss, perceptual_loss, pixel_loss, td_loss, FeatureExtractor, EXTRACTOR_SEED};
use crate::model::{Generator, GeneratorConfig};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Coordinate with the largest relative error.
    pub worst: usize,
    pub checked: usize,
    pub pass: bool,
}

/// Below this magnitude `|a| + |n|` is replaced by the floor: central differences at
/// `h = 1e-5` carry roundoff near `1e-11`, so smaller gradients have no relative accuracy.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(REL_ERR_FLOOR, |a| + |n|)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_ERR_FLOOR)
}

fn compare(analytic: &[f64], numeric: &[f64], tol: f64) -> GradCheckReport {
    let mut report =
        GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, worst: 0, checked: analytic.len(), pass: true };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let r = rel_err(a, n);
        if r > report.max_rel_err || r.is_nan() {
            report.max_rel_err = r;
            report.worst = i;
        }
        report.max_abs_err = report.max_abs_err.max((a - n).abs());
    }
    report.pass = report.max_rel_err < tol;
    report
}

fn scalar_of(g: &Graph<'_, f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(arg_err!("grad_check function must return a scalar, got shape {:?}", t.shape()));
    }
    Ok(t.data()[0])
}

/// Checks the gradient of `f` with respect to every coordinate of `point`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    let eval = |x: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.leaf(x, false);
        let out = f(&mut g, leaf)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::new();
    let leaf = g.leaf(point.clone(), true);
    let out = f(&mut g, leaf)?;
    scalar_of(&g, out)?;
    let analytic: Vec<f64> = match g.backward(out) {
        Ok(grads) => match grads.wrt(leaf) {
            Some(t) => t.data().to_vec(),
            None => alloc::vec![0.0; point.numel()],
        },
        Err(Error::EmptyTape) => alloc::vec![0.0; point.numel()],
        Err(e) => return Err(e),
    };

    let mut numeric = Vec::with_capacity(point.numel());
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }
    Ok(compare(&analytic, &numeric, tol))
}

/// Checks the gradient of `f` with respect to selected parameter coordinates
/// `(parameter, flat index)`.
pub fn grad_check_params<F>(
    store: &mut ParamStore<f64>,
    coords: &[(ParamId, usize)],
    f: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::with_params(store);
        let out = f(&mut g)?;
        scalar_of(&g, out)?;
        g.backward(out)?
    };
    let analytic: Vec<f64> = coords
        .iter()
        .map(|&(id, i)| grads.param(id).map_or(0.0, |t| t.data()[i]))
        .collect();

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::with_params(store);
        let out = f(&mut g)?;
        scalar_of(&g, out)
    };
    let mut numeric = Vec::with_capacity(coords.len());
    for &(id, i) in coords {
        let orig = store.value(id).data()[i];
        store.get_mut(id).value.data_mut()[i] = orig + h;
        let fp = eval(store)?;
        store.get_mut(id).value.data_mut()[i] = orig - h;
        let fm = eval(store)?;
        store.get_mut(id).value.data_mut()[i] = orig;
        numeric.push((fp - fm) / (2.0 * h));
    }
    Ok(compare(&analytic, &numeric, tol))
}

/// Tolerance on the relative error used by [`standard_suite`].
pub const SUITE_TOL: f64 = 1e-4;
/// Sample points closer than this to a relu or abs kink are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: u64 = 32;
/// Tensors up to this size are checked at every coordinate, larger ones at a sample.
const FULL_CHECK: usize = 48;
const SAMPLED_COORDS: usize = 8;

/// One named entry of [`standard_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCase {
    pub name: String,
    pub report: GradCheckReport,
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let d = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape.to_vec(), |_| d.sample(rng))
}

/// `Σ y ⊙ r` for a fixed random `r`, so every output coordinate carries weight.
fn project(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = normal_tensor(g.value(y).shape(), 1.0, &mut rng);
    let r = g.constant(r);
    let m = g.mul(y, r)?;
    Ok(g.sum(m))
}

/// Conv biases that feed an instance norm have an identically zero gradient.
fn cancelled_by_norm(store: &ParamStore<f64>, name: &str) -> bool {
    name.strip_suffix(".conv.bias").is_some_and(|p| store.id(&format!("{p}.norm.gamma")).is_some())
}

/// Builds a store (inputs are registered as parameters too) and jitters every value so
/// biases and affine terms are generic. Points are redrawn while any kink input lies
/// within `margin` of zero, or when a finite-difference evaluation lands on a different
/// side of some kink than the base point. Every coordinate of small tensors and a sample
/// of large ones is checked.
fn check<M, B, F>(seed: u64, margin: f64, build: B, f: F) -> Result<GradCheckReport>
where
    B: Fn(&mut ParamStore<f64>, &mut ChaCha8Rng) -> Result<M>,
    F: Fn(&mut Graph<'_, f64>, &M) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>, model: &M| -> Result<(f64, f64, u64)> {
        let mut g = Graph::with_params(store);
        let out = f(&mut g, model)?;
        Ok((scalar_of(&g, out)?, g.kink_distance(), g.kink_signature()))
    };
    'draw: for k in 0..MAX_DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k));
        let mut store = ParamStore::new();
        let model = build(&mut store, &mut rng)?;
        let jitter = Normal::new(0.0, 0.1).expect("positive std");
        let ids: Vec<ParamId> = store.ids().collect();
        for &id in &ids {
            for v in store.get_mut(id).value.data_mut() {
                *v += jitter.sample(&mut rng);
            }
        }
        let (_, kink, signature) = eval(&store, &model)?;
        if kink < margin {
            continue;
        }
        let mut coords = Vec::new();
        for &id in &ids {
            if cancelled_by_norm(&store, &store.get(id).name) {
                continue;
            }
            let n = store.value(id).numel();
            if n <= FULL_CHECK {
                coords.extend((0..n).map(|i| (id, i)));
            } else {
                coords.extend((0..SAMPLED_COORDS).map(|_| (id, rng.random_range(0..n))));
            }
        }
        let grads = {
            let mut g = Graph::with_params(&store);
            let out = f(&mut g, &model)?;
            g.backward(out)?
        };
        let analytic: Vec<f64> =
            coords.iter().map(|&(id, i)| grads.param(id).map_or(0.0, |t| t.data()[i])).collect();
        let mut numeric = Vec::with_capacity(coords.len());
        for &(id, i) in &coords {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + DEFAULT_STEP;
            let (fp, _, sp) = eval(&store, &model)?;
            store.get_mut(id).value.data_mut()[i] = orig - DEFAULT_STEP;
            let (fm, _, sm) = eval(&store, &model)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            if sp != signature || sm != signature {
                continue 'draw;
            }
            numeric.push((fp - fm) / (2.0 * DEFAULT_STEP));
        }
        return Ok(compare(&analytic, &numeric, SUITE_TOL));
    }
    Err(arg_err!("no kink-free sample point after {MAX_DRAWS} draws"))
}

fn add_input(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Result<ParamId> {
    store.add(name, normal_tensor(shape, 1.0, rng))
}

/// Gradient checks of every differentiable building block: convolution, activations,
/// instance norm, resampling, each residual block kind, the FLT branch, each loss term
/// and a tiny generator end to end. All points are drawn from `seed`.
pub fn standard_suite(seed: u64) -> Result<Vec<SuiteCase>> {
    let mut cases = Vec::new();
    let mut push = |name: String, report: Result<GradCheckReport>| -> Result<()> {
        cases.push(SuiteCase { name, report: report? });
        Ok(())
    };

    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        push(
            format!("conv2d stride {stride} pad {pad}"),
            check(
                seed,
                0.0,
                |st, rng| {
                    let x = add_input(st, "x", &[2, 2, 6, 6], rng)?;
                    let w = st.add("w", normal_tensor(&[3, 2, 3, 3], 0.5, rng))?;
                    let b = st.add("b", normal_tensor(&[3], 0.5, rng))?;
                    Ok((x, w, b))
                },
                |g, &(x, w, b)| {
                    let (x, w, b) = (g.param(x)?, g.param(w)?, g.param(b)?);
                    let y = g.conv2d(x, w, Some(b), stride, pad)?;
                    project(g, y, 1)
                },
            ),
        )?;
    }

    for a in [Activation::Relu, Activation::LeakyRelu(LEAKY_SLOPE), Activation::Tanh] {
        push(
            format!("activation {a:?}"),
            check(seed, KINK_MARGIN, |st, rng| add_input(st, "x", &[1, 2, 4, 4], rng), |g, &x| {
                let x = g.param(x)?;
                let y = g.activation(x, a);
                project(g, y, 2)
            }),
        )?;
    }
    push(
        String::from("abs"),
        check(seed, KINK_MARGIN, |st, rng| add_input(st, "x", &[2, 5], rng), |g, &x| {
            let x = g.param(x)?;
            let y = g.abs(x);
            project(g, y, 3)
        }),
    )?;
    push(
        String::from("upsample_nearest2"),
        check(seed, KINK_MARGIN, |st, rng| add_input(st, "x", &[1, 2, 3, 3], rng), |g, &x| {
            let x = g.param(x)?;
            let y = g.upsample_nearest2(x)?;
            project(g, y, 4)
        }),
    )?;
    push(
        String::from("pad_replicate"),
        check(seed, KINK_MARGIN, |st, rng| add_input(st, "x", &[1, 2, 4, 5], rng), |g, &x| {
            let x = g.param(x)?;
            let y = g.pad_replicate(x, 1)?;
            project(g, y, 5)
        }),
    )?;
    push(
        String::from("channel_mean"),
        check(seed, KINK_MARGIN, |st, rng| add_input(st, "x", &[2, 3, 3, 3], rng), |g, &x| {
            let x = g.param(x)?;
            let y = g.channel_mean(x)?;
            project(g, y, 6)
        }),
    )?;
    push(
        String::from("instance_norm"),
        check(
            seed,
            0.0,
            |st, rng| {
                let x = add_input(st, "x", &[2, 2, 4, 4], rng)?;
                let n = InstanceNorm::new(st, "n", 2)?;
                Ok((x, n))
            },
            |g, (x, n)| {
                let x = g.param(*x)?;
                let y = n.forward(g, x)?;
                project(g, y, 7)
            },
        ),
    )?;

    for (name, mode, hw) in [
        ("resample down", ResampleMode::DownStride2Conv, 8),
        ("resample up", ResampleMode::UpNearest2ThenConv, 4),
    ] {
        push(
            String::from(name),
            check(
                seed,
                0.0,
                |st, rng| {
                    let x = add_input(st, "x", &[1, 2, hw, hw], rng)?;
                    Ok((x, Resample::new(st, "r", mode, 2, 3, rng)?))
                },
                |g, (x, r)| {
                    let x = g.param(*x)?;
                    let y = r.forward(g, x)?;
                    project(g, y, 8)
                },
            ),
        )?;
    }

    for kind in BlockKind::ALL {
        push(
            format!("block {kind}"),
            check(
                seed,
                0.0,
                |st, rng| {
                    let x = add_input(st, "x", &[1, 2, 5, 5], rng)?;
                    Ok((x, Block::new(st, "blk", kind, 2, rng)?))
                },
                |g, (x, b)| {
                    let x = g.param(*x)?;
                    let y = b.forward(g, x)?;
                    project(g, y, 9)
                },
            ),
        )?;
    }

    for wiring in BranchWiring::ALL {
        push(
            format!("flt branch {wiring}"),
            check(
                seed,
                0.0,
                |st, rng| {
                    let image = add_input(st, "image", &[1, 3, 16, 16], rng)?;
                    let b1 = add_input(st, "b1", &[1, 8, 4, 4], rng)?;
                    let b2 = add_input(st, "b2", &[1, 8, 4, 4], rng)?;
                    Ok(([image, b1, b2], FltBranch::new(st, "flt", 3, 2, rng)?))
                },
                |g, (ids, branch)| {
                    let image = g.param(ids[0])?;
                    let blocks = [g.param(ids[1])?, g.param(ids[2])?];
                    let out = branch.forward(g, image, &blocks, wiring)?;
                    let a = project(g, out.flt_image, 10)?;
                    let b = project(g, out.fused_feature, 11)?;
                    g.add(a, b)
                },
            ),
        )?;
    }

    let pair = |st: &mut ParamStore<f64>, rng: &mut ChaCha8Rng| -> Result<(ParamId, ParamId)> {
        Ok((add_input(st, "a", &[1, 3, 12, 12], rng)?, add_input(st, "b", &[1, 3, 12, 12], rng)?))
    };
    push(
        String::from("loss gan"),
        check(seed, KINK_MARGIN, |st, rng| add_input(st, "scores", &[2, 1, 3, 3], rng), |g, &x| {
            let x = g.param(x)?;
            let real = gan_loss(g, x, true);
            let fake = gan_loss(g, x, false);
            g.lincomb(&[(real, 0.7), (fake, 0.3)])
        }),
    )?;
    push(
        String::from("loss pixel"),
        check(seed, KINK_MARGIN, pair, |g, &(a, b)| {
            let (a, b) = (g.param(a)?, g.param(b)?);
            pixel_loss(g, a, b)
        }),
    )?;
    push(
        String::from("loss cycle"),
        check(seed, KINK_MARGIN, |st, rng| {
            Ok((add_input(st, "s", &[1, 1, 8, 8], rng)?, add_input(st, "r", &[1, 1, 8, 8], rng)?))
        }, |g, &(a, b)| {
            let (a, b) = (g.param(a)?, g.param(b)?);
            cycle_loss(g, a, b)
        }),
    )?;
    let extractor = FeatureExtractor::<f64>::random(3, EXTRACTOR_SEED);
    push(
        String::from("loss perceptual"),
        check(seed, 0.0, pair, |g, &(a, b)| {
            let (a, b) = (g.param(a)?, g.param(b)?);
            perceptual_loss(g, a, b, &extractor)
        }),
    )?;
    push(
        String::from("loss td"),
        check(
            seed,
            0.0,
            |st, rng| {
                let (a, b) = pair(st, rng)?;
                Ok((a, b, add_input(st, "f", &[1, 1, 12, 12], rng)?))
            },
            |g, &(a, b, f)| {
                let (a, b, f) = (g.param(a)?, g.param(b)?, g.param(f)?);
                let t = td_loss(g, a, b, f)?;
                g.lincomb(&[(t.td_tfd, 1.0), (t.td_flt, 0.5)])
            },
        ),
    )?;

    for kind in [BlockKind::Tfd, BlockKind::Plain] {
        let cfg = GeneratorConfig { base_channels: 4, num_blocks: 2, block_kind: kind, ..Default::default() };
        push(
            format!("generator {kind}"),
            check(
                seed,
                0.0,
                |st, rng| {
                    let x = add_input(st, "sar", &[1, 1, 16, 16], rng)?;
                    Ok((x, Generator::new(st, "gen", &cfg, rng)?))
                },
                |g, (x, gen)| {
                    let x = g.param(*x)?;
                    let out = gen.forward(g, x)?;
                    let a = g.sum(out.optical);
                    match out.flt_image {
                        Some(f) => {
                            let b = g.sum(f);
                            g.add(a, b)
                        }
                        None => Ok(a),
                    }
                },
            ),
        )?;
    }
    Ok(cases)
}
