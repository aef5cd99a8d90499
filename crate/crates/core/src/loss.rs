//! Training objectives and their weighted combination.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::flt::flt_head;
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Least-squares adversarial loss `mean((scores − t)²)` with `t = 1` for real, `0` for fake.
pub fn gan_loss<T: Real>(g: &mut Graph<'_, T>, scores: Var, target_is_real: bool) -> Var {
    let shifted = if target_is_real { g.add_scalar(scores, -1.0) } else { scores };
    let sq = g.square(shifted);
    g.mean(sq)
}

/// Mean absolute difference.
pub fn l1_loss<T: Real>(g: &mut Graph<'_, T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

pub fn pixel_loss<T: Real>(g: &mut Graph<'_, T>, generated: Var, target: Var) -> Result<Var> {
    l1_loss(g, generated, target)
}

pub fn cycle_loss<T: Real>(g: &mut Graph<'_, T>, x: Var, reconstructed: Var) -> Result<Var> {
    l1_loss(g, x, reconstructed)
}

/// Frozen feature stack for the perceptual term.
#[derive(Debug, Clone)]
pub enum FeatureExtractor<T> {
    /// The input itself as a single feature level.
    Identity,
    /// Conv 3×3 + relu stages; every stage output is one feature level.
    Conv(Vec<ExtractorStage<T>>),
}

#[derive(Debug, Clone)]
pub struct ExtractorStage<T> {
    pub weight: Tensor<T>,
    pub stride: usize,
}

/// Seed of the default random extractor.
pub const EXTRACTOR_SEED: u64 = 0x5eed_0f_fea7;

impl<T: Real> FeatureExtractor<T> {
    /// Three stages `in → 8 → 16 → 32` channels at strides 1, 2, 2 with Kaiming-normal
    /// weights drawn from `seed`.
    pub fn random(in_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = [(in_channels, 8, 1), (8, 16, 2), (16, 32, 2)];
        let stages = plan
            .iter()
            .map(|&(cin, cout, stride)| {
                let std = num_traits::Float::sqrt(2.0 / (cin * 9) as f64);
                let normal = Normal::new(0.0, std).expect("positive std");
                let weight = Tensor::from_fn([cout, cin, 3, 3], |_| T::from_f64(normal.sample(&mut rng)));
                ExtractorStage { weight, stride }
            })
            .collect();
        FeatureExtractor::Conv(stages)
    }

    pub fn features(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Vec<Var>> {
        match self {
            FeatureExtractor::Identity => Ok(alloc::vec![x]),
            FeatureExtractor::Conv(stages) => {
                let mut out = Vec::with_capacity(stages.len());
                let mut h = x;
                for s in stages {
                    let w = g.constant(s.weight.clone());
                    h = g.conv2d(h, w, None, s.stride, 1)?;
                    h = g.relu(h);
                    out.push(h);
                }
                Ok(out)
            }
        }
    }
}

/// Sum over feature levels of the mean L1 distance between the features of `a` and `b`.
pub fn perceptual_loss<T: Real>(g: &mut Graph<'_, T>, a: Var, b: Var, extractor: &FeatureExtractor<T>) -> Result<Var> {
    let fa = extractor.features(g, a)?;
    let fb = extractor.features(g, b)?;
    let mut terms = Vec::with_capacity(fa.len());
    for (&x, &y) in fa.iter().zip(&fb) {
        terms.push((l1_loss(g, x, y)?, 1.0));
    }
    g.lincomb(&terms)
}

/// The head response of the channel-averaged image.
pub fn phi<T: Real>(g: &mut Graph<'_, T>, image: Var) -> Result<Var> {
    let m = g.channel_mean(image)?;
    flt_head(g, m)
}

#[derive(Debug, Clone, Copy)]
pub struct TdTerms {
    pub td_tfd: Var,
    pub td_flt: Var,
}

fn check_optical_pair<T: Real>(g: &Graph<'_, T>, optical_true: Var, optical_gen: Var) -> Result<()> {
    let (tt, tg) = (g.value(optical_true), g.value(optical_gen));
    if tt.shape() != tg.shape() {
        return Err(dim_err!("td_loss: true {:?} vs generated {:?}", tt.shape(), tg.shape()));
    }
    Ok(())
}

/// `|φ(O) − φ(G(S))|₁` as a mean; the term that remains when there is no FLT image.
pub fn td_tfd_loss<T: Real>(g: &mut Graph<'_, T>, optical_true: Var, optical_gen: Var) -> Result<Var> {
    check_optical_pair(g, optical_true, optical_gen)?;
    let phi_true = phi(g, optical_true)?;
    let phi_gen = phi(g, optical_gen)?;
    l1_loss(g, phi_true, phi_gen)
}

/// `td_tfd = |φ(O) − φ(G(S))|₁` and `td_flt = |φ(O) − flt_image|₁`, both as means.
pub fn td_loss<T: Real>(g: &mut Graph<'_, T>, optical_true: Var, optical_gen: Var, flt_image: Var) -> Result<TdTerms> {
    check_optical_pair(g, optical_true, optical_gen)?;
    let (b, _, h, w) = g.value(optical_true).dims4()?;
    let tf = g.value(flt_image);
    if tf.shape() != [b, 1, h, w] {
        return Err(dim_err!("td_loss: flt image must be [{b}, 1, {h}, {w}], got {:?}", tf.shape()));
    }
    let phi_true = phi(g, optical_true)?;
    let phi_gen = phi(g, optical_gen)?;
    let td_tfd = l1_loss(g, phi_true, phi_gen)?;
    let td_flt = l1_loss(g, phi_true, flt_image)?;
    Ok(TdTerms { td_tfd, td_flt })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_pix: f64,
    pub lambda_per: f64,
    pub lambda_cyc: f64,
    pub lambda_td: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_pix: 10.0, lambda_per: 10.0, lambda_cyc: 10.0, lambda_td: 10.0 }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights { lambda_pix: 0.0, lambda_per: 0.0, lambda_cyc: 0.0, lambda_td: 0.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(arg_err!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("lambda_pix", self.lambda_pix),
            ("lambda_per", self.lambda_per),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_td", self.lambda_td),
        ]
    }
}

/// Scalar values of the generator objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub gan: f64,
    pub pix: f64,
    pub per: f64,
    pub cyc: f64,
    pub td_tfd: f64,
    pub td_flt: f64,
    pub total: f64,
}

impl LossReport {
    pub const TERMS: [&'static str; 7] = ["gan", "pix", "per", "cyc", "td_tfd", "td_flt", "total"];

    pub fn values(&self) -> [f64; 7] {
        [self.gan, self.pix, self.per, self.cyc, self.td_tfd, self.td_flt, self.total]
    }

    /// Recomputes `total` from the parts.
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        self.gan
            + w.lambda_pix * self.pix
            + w.lambda_per * self.per
            + w.lambda_cyc * self.cyc
            + w.lambda_td * (self.td_tfd + self.td_flt)
    }

    /// Builds a report from parts, rejecting non-finite terms.
    pub fn from_parts(gan: f64, pix: f64, per: f64, cyc: f64, td_tfd: f64, td_flt: f64, w: &LossWeights) -> Result<Self> {
        let mut r = LossReport { gan, pix, per, cyc, td_tfd, td_flt, total: 0.0 };
        r.total = total_loss(&r, w)?;
        Ok(r)
    }
}

/// `gan + λpix·pix + λper·per + λcyc·cyc + λtd·(td_tfd + td_flt)`.
pub fn total_loss(parts: &LossReport, w: &LossWeights) -> Result<f64> {
    for (name, v) in LossReport::TERMS.iter().zip(parts.values()).take(6) {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name.to_string() });
        }
    }
    Ok(parts.recombine(w))
}

/// Graph nodes of the individual generator terms.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub gan: Var,
    pub pix: Var,
    pub per: Var,
    pub cyc: Option<Var>,
    pub td_tfd: Option<Var>,
    pub td_flt: Option<Var>,
}

impl LossTerms {
    /// Differentiable weighted sum of the terms.
    pub fn combine<T: Real>(&self, g: &mut Graph<'_, T>, w: &LossWeights) -> Result<Var> {
        let mut terms = alloc::vec![(self.gan, 1.0), (self.pix, w.lambda_pix), (self.per, w.lambda_per)];
        if let Some(c) = self.cyc {
            terms.push((c, w.lambda_cyc));
        }
        for t in [self.td_tfd, self.td_flt].into_iter().flatten() {
            terms.push((t, w.lambda_td));
        }
        g.lincomb(&terms)
    }

    /// Reads term values out of the graph and checks them.
    pub fn report<T: Real>(&self, g: &Graph<'_, T>, w: &LossWeights) -> Result<LossReport> {
        let v = |x: Var| g.value(x).item().map(|t| t.as_f64());
        let opt = |x: Option<Var>| x.map_or(Ok(0.0), v);
        LossReport::from_parts(
            v(self.gan)?,
            v(self.pix)?,
            v(self.per)?,
            opt(self.cyc)?,
            opt(self.td_tfd)?,
            opt(self.td_flt)?,
            w,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(g: &Graph<'_, f64>, v: Var) -> f64 {
        g.value(v).item().unwrap()
    }

    fn ramp(shape: [usize; 4], f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(shape, f)
    }

    #[test]
    fn gan_examples() {
        let mut g = Graph::new();
        let ones = g.input(Tensor::full([1, 1, 3, 3], 1.0));
        let zeros = g.input(Tensor::zeros([1, 1, 3, 3]));
        let halves = g.input(Tensor::full([1, 1, 3, 3], 0.5));
        let cases = [(ones, true, 0.0), (zeros, true, 1.0), (halves, false, 0.25)];
        for (s, real, want) in cases {
            let l = gan_loss(&mut g, s, real);
            assert_eq!(scalar(&g, l), want);
        }
    }

    #[test]
    fn gan_gradient_vanishes_at_target() {
        let mut g = Graph::new();
        let s = g.leaf(Tensor::full([1, 1, 2, 2], 1.0), true);
        let l = gan_loss(&mut g, s, true);
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(s).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l1_examples() {
        let mut g = Graph::new();
        let a = g.input(ramp([1, 3, 4, 4], |i| i as f64 * 0.01));
        let b = g.input(ramp([1, 3, 4, 4], |i| i as f64 * 0.01 - 0.2));
        let same = pixel_loss(&mut g, a, a).unwrap();
        let off = cycle_loss(&mut g, a, b).unwrap();
        assert_eq!(scalar(&g, same), 0.0);
        assert!((scalar(&g, off) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn l1_is_permutation_invariant() {
        let a: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..16).map(|i| (i as f64 * 0.91).cos()).collect();
        let perm: Vec<usize> = (0..16).map(|i| (i * 5 + 3) % 16).collect();
        let pa: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
        let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
        let eval = |x: &[f64], y: &[f64]| {
            let mut g = Graph::new();
            let x = g.input(Tensor::from_f64([1, 1, 4, 4], x).unwrap());
            let y = g.input(Tensor::from_f64([1, 1, 4, 4], y).unwrap());
            let l = pixel_loss(&mut g, x, y).unwrap();
            scalar(&g, l)
        };
        assert!((eval(&a, &b) - eval(&pa, &pb)).abs() < 1e-15);
    }

    #[test]
    fn perceptual_identity_equals_pixel() {
        let mut g = Graph::new();
        let a = g.input(ramp([1, 3, 8, 8], |i| (i as f64 * 0.13).sin()));
        let b = g.input(ramp([1, 3, 8, 8], |i| (i as f64 * 0.29).cos()));
        let per = perceptual_loss(&mut g, a, b, &FeatureExtractor::Identity).unwrap();
        let pix = pixel_loss(&mut g, a, b).unwrap();
        assert_eq!(scalar(&g, per), scalar(&g, pix));
        let ext = FeatureExtractor::random(3, EXTRACTOR_SEED);
        let zero = perceptual_loss(&mut g, a, a, &ext).unwrap();
        assert_eq!(scalar(&g, zero), 0.0);
    }

    #[test]
    fn perceptual_positive_on_random_pairs() {
        use rand::Rng;
        let ext = FeatureExtractor::<f64>::random(3, EXTRACTOR_SEED);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut g = Graph::new();
            let a = g.input(Tensor::from_fn([1, 3, 8, 8], |_| rng.random_range(-1.0..1.0)));
            let b = g.input(Tensor::from_fn([1, 3, 8, 8], |_| rng.random_range(-1.0..1.0)));
            let l = perceptual_loss(&mut g, a, b, &ext).unwrap();
            assert!(scalar(&g, l) > 0.0);
        }
    }

    #[test]
    fn extractor_is_frozen_and_seeded() {
        let a = FeatureExtractor::<f64>::random(3, 1);
        let b = FeatureExtractor::<f64>::random(3, 1);
        match (a, b) {
            (FeatureExtractor::Conv(x), FeatureExtractor::Conv(y)) => {
                assert_eq!(x.len(), 3);
                for (s, t) in x.iter().zip(&y) {
                    assert_eq!(s.weight, t.weight);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn td_examples() {
        let mut g = Graph::new();
        let o = g.input(ramp([1, 3, 6, 6], |i| ((i * 37) % 11) as f64 / 11.0));
        let phi_o = phi(&mut g, o).unwrap();
        let t = td_loss(&mut g, o, o, phi_o).unwrap();
        assert_eq!((scalar(&g, t.td_tfd), scalar(&g, t.td_flt)), (0.0, 0.0));

        let shifted = g.add_scalar(phi_o, 0.5);
        let t = td_loss(&mut g, o, o, shifted).unwrap();
        assert!((scalar(&g, t.td_flt) - 0.5).abs() < 1e-12);

        let c1 = g.input(Tensor::full([1, 3, 6, 6], 0.3));
        let c2 = g.input(Tensor::full([1, 3, 6, 6], -0.7));
        let flt = g.input(Tensor::zeros([1, 1, 6, 6]));
        let t = td_loss(&mut g, c1, c2, flt).unwrap();
        assert_eq!(scalar(&g, t.td_tfd), 0.0);
        let only = td_tfd_loss(&mut g, o, c2).unwrap();
        let both = td_loss(&mut g, o, c2, flt).unwrap();
        assert_eq!(scalar(&g, only), scalar(&g, both.td_tfd));
    }

    #[test]
    fn td_shape_errors() {
        let mut g = Graph::<f64>::new();
        let o = g.input(Tensor::zeros([1, 3, 6, 6]));
        let bad = g.input(Tensor::zeros([1, 3, 6, 8]));
        let flt = g.input(Tensor::zeros([1, 1, 6, 6]));
        let flt3 = g.input(Tensor::zeros([1, 3, 6, 6]));
        assert!(matches!(td_loss(&mut g, o, bad, flt), Err(Error::Dimension(_))));
        assert!(matches!(td_loss(&mut g, o, o, flt3), Err(Error::Dimension(_))));
    }

    #[test]
    fn worked_total() {
        let w = LossWeights::default();
        let r = LossReport::from_parts(0.5, 0.2, 0.1, 0.3, 0.05, 0.0, &w).unwrap();
        assert_eq!(r.total, 7.0);
        let zero = LossReport::from_parts(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, &w).unwrap();
        assert_eq!(zero.total, 0.0);
        let gan_only = LossReport::from_parts(0.5, 0.2, 0.1, 0.3, 0.05, 0.01, &LossWeights::ZERO).unwrap();
        assert_eq!(gan_only.total, 0.5);
    }

    #[test]
    fn non_finite_term_is_named() {
        let w = LossWeights::default();
        match LossReport::from_parts(0.5, 0.2, f64::NAN, 0.3, 0.0, 0.0, &w) {
            Err(Error::NonFinite { term }) => assert_eq!(term, "per"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weights_must_be_non_negative() {
        assert!(LossWeights::default().validate().is_ok());
        let w = LossWeights { lambda_cyc: -1.0, ..Default::default() };
        assert!(w.validate().is_err());
    }

    #[test]
    fn graph_combination_matches_report() {
        let w = LossWeights { lambda_pix: 2.0, lambda_per: 3.0, lambda_cyc: 4.0, lambda_td: 5.0 };
        let mut g = Graph::new();
        let vals = [0.7, 0.11, 0.13, 0.17, 0.19, 0.23];
        let vars: Vec<Var> = vals.iter().map(|&v| g.input(Tensor::scalar(v))).collect();
        let terms = LossTerms {
            gan: vars[0],
            pix: vars[1],
            per: vars[2],
            cyc: Some(vars[3]),
            td_tfd: Some(vars[4]),
            td_flt: Some(vars[5]),
        };
        let total = terms.combine(&mut g, &w).unwrap();
        let report = terms.report(&g, &w).unwrap();
        assert!((scalar(&g, total) - report.total).abs() < 1e-12);
        assert!((report.recombine(&w) - report.total).abs() < 1e-12);
    }
}
