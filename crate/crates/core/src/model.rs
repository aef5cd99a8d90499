//! Generator (encoder, residual blocks, FLT branch, decoder) and PatchGAN discriminator.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::blocks::{Block, BlockKind};
use crate::error::{arg_err, dim_err, Result};
use crate::flt::{flt_head, BackboneFusion, BranchWiring, FltBranch};
use crate::graph::{Activation, Graph, Var};
use crate::layers::{ConvBlock, ConvSpec, Resample, ResampleMode, LEAKY_SLOPE};
use crate::param::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub num_blocks: usize,
    pub block_kind: BlockKind,
    pub wiring: BranchWiring,
    /// Builds the FLT-guided branch and the backbone fusion stage.
    pub flt_branch: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_channels: 32,
            num_blocks: 3,
            block_kind: BlockKind::Tfd,
            wiring: BranchWiring::DefaultA,
            flt_branch: true,
            in_channels: 1,
            out_channels: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks < 1 {
            return Err(arg_err!("num_blocks must be at least 1"));
        }
        if self.base_channels < 4 || self.base_channels % 2 != 0 {
            return Err(arg_err!("base_channels must be even and at least 4, got {}", self.base_channels));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(arg_err!("channel counts must be positive"));
        }
        Ok(())
    }

    /// The optical→SAR generator used only by the cycle term: plain blocks, no branch.
    pub fn reverse(&self) -> GeneratorConfig {
        GeneratorConfig {
            block_kind: BlockKind::Plain,
            flt_branch: false,
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorOutput {
    pub optical: Var,
    /// Present when the FLT branch is enabled.
    pub flt_image: Option<Var>,
    pub fused_feature: Option<Var>,
    /// Feature grid after the residual blocks, before the backbone fusion.
    pub backbone_feature: Var,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub prefix: String,
    pub stem: ConvBlock,
    pub down1: Resample,
    pub down2: Resample,
    pub blocks: Vec<Block>,
    pub branch: Option<FltBranch>,
    pub fusion: Option<BackboneFusion>,
    pub up1: Resample,
    pub up2: Resample,
    pub head: ConvBlock,
}

impl Generator {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, cfg: &GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.base_channels;
        let relu = Some(Activation::Relu);
        let stem = ConvBlock::new(store, &format!("{prefix}.enc.stem"), ConvSpec::same(cfg.in_channels, c, 7), true, relu, rng)?;
        let down1 = Resample::new(store, &format!("{prefix}.enc.down1"), ResampleMode::DownStride2Conv, c, 2 * c, rng)?;
        let down2 = Resample::new(store, &format!("{prefix}.enc.down2"), ResampleMode::DownStride2Conv, 2 * c, 4 * c, rng)?;
        let blocks = (0..cfg.num_blocks)
            .map(|i| Block::new(store, &format!("{prefix}.blocks.{i}"), cfg.block_kind, 4 * c, rng))
            .collect::<Result<Vec<_>>>()?;
        let (branch, fusion) = if cfg.flt_branch {
            (
                Some(FltBranch::new(store, &format!("{prefix}.flt"), cfg.in_channels, c, rng)?),
                Some(BackboneFusion::new(store, &format!("{prefix}.fuse"), c, rng)?),
            )
        } else {
            (None, None)
        };
        let up1 = Resample::new(store, &format!("{prefix}.dec.up1"), ResampleMode::UpNearest2ThenConv, 4 * c, 2 * c, rng)?;
        let up2 = Resample::new(store, &format!("{prefix}.dec.up2"), ResampleMode::UpNearest2ThenConv, 2 * c, c, rng)?;
        let head = ConvBlock::new(
            store,
            &format!("{prefix}.dec.out"),
            ConvSpec::same(c, cfg.out_channels, 7),
            false,
            Some(Activation::Tanh),
            rng,
        )?;
        Ok(Generator {
            cfg: cfg.clone(),
            prefix: prefix.to_string(),
            stem,
            down1,
            down2,
            blocks,
            branch,
            fusion,
            up1,
            up2,
            head,
        })
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [_, c, h, w] = *shape else {
            return Err(dim_err!("generator input must be [B, C, H, W], got {shape:?}"));
        };
        if c != self.cfg.in_channels {
            return Err(dim_err!("generator expects {} input channels, got {c}", self.cfg.in_channels));
        }
        if h % 4 != 0 || w % 4 != 0 || h < 16 || w < 16 {
            return Err(dim_err!("generator input extents must be divisible by 4 and at least 16, got {h}x{w}"));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, input: Var) -> Result<GeneratorOutput> {
        self.check_input(g.value(input).shape())?;
        let head = match &self.branch {
            Some(_) => Some(flt_head(g, input)?),
            None => None,
        };
        let enc_in = match (head, self.cfg.wiring) {
            (Some(h), BranchWiring::BackboneInputResidualB) => g.add(input, h)?,
            _ => input,
        };
        let x = self.stem.forward(g, enc_in)?;
        let x = self.down1.forward(g, x)?;
        let mut x = self.down2.forward(g, x)?;
        let mut outs = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            x = b.forward(g, x)?;
            outs.push(x);
        }
        let backbone_feature = x;
        let (feature, flt_image, fused_feature) = match (&self.branch, &self.fusion, head) {
            (Some(branch), Some(fusion), Some(head)) => {
                let out = branch.forward_from_head(g, input, head, &outs, self.cfg.wiring)?;
                let fused = fusion.forward(g, backbone_feature, out.flt_image)?;
                (fused, Some(out.flt_image), Some(out.fused_feature))
            }
            _ => (backbone_feature, None, None),
        };
        let y = self.up1.forward(g, feature)?;
        let y = self.up2.forward(g, y)?;
        let optical = self.head.forward(g, y)?;
        Ok(GeneratorOutput { optical, flt_image, fused_feature, backbone_feature })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { in_channels: 3, base_channels: 64 }
    }
}

/// Smallest input extent accepted by the discriminator (gives a 2×2 score map).
pub const DISC_MIN_EXTENT: usize = 32;

/// 70×70 PatchGAN: three 4×4 stride-2 stages, one 4×4 stride-1 stage, then a 4×4
/// stride-1 convolution to a one-channel score map.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub layers: Vec<ConvBlock>,
}

impl Discriminator {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, cfg: &DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.base_channels == 0 || cfg.in_channels == 0 {
            return Err(arg_err!("discriminator channel counts must be positive"));
        }
        let n = cfg.base_channels;
        let leaky = Some(Activation::LeakyRelu(LEAKY_SLOPE));
        let plan = [
            (cfg.in_channels, n, 2, false, leaky),
            (n, 2 * n, 2, true, leaky),
            (2 * n, 4 * n, 2, true, leaky),
            (4 * n, 8 * n, 1, true, leaky),
            (8 * n, 1, 1, false, None),
        ];
        let layers = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, stride, norm, act))| {
                ConvBlock::new(store, &format!("{prefix}.l{i}"), ConvSpec::strided(cin, cout, 4, stride, 1), norm, act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Discriminator { cfg: cfg.clone(), layers })
    }

    /// Score-map extent for an input extent.
    pub fn output_extent(input: usize) -> usize {
        let mut e = input;
        for stride in [2, 2, 2, 1, 1] {
            e = (e + 2 - 4) / stride + 1;
        }
        e
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, img: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(img).dims4()?;
        if c != self.cfg.in_channels {
            return Err(dim_err!("discriminator expects {} channels, got {c}", self.cfg.in_channels));
        }
        if h < DISC_MIN_EXTENT || w < DISC_MIN_EXTENT {
            return Err(dim_err!("discriminator input must be at least {DISC_MIN_EXTENT}x{DISC_MIN_EXTENT}, got {h}x{w}"));
        }
        let mut x = img;
        for l in &self.layers {
            x = l.forward(g, x)?;
        }
        Ok(x)
    }
}

/// Number of scalar parameters whose name starts with `prefix` (`""` for all).
pub fn count_params<T: Real>(store: &ParamStore<T>, prefix: &str) -> usize {
    store.num_elements_with_prefix(prefix)
}

/// Forward FLOPs (2 × convolution multiply-accumulates) of `gen` on a zero input.
pub fn count_flops<T: Real>(store: &ParamStore<T>, gen: &Generator, input_shape: [usize; 4]) -> Result<u64> {
    let mut g = Graph::with_params(store);
    g.freeze(|_| true);
    let x = g.input(Tensor::zeros(input_shape));
    gen.forward(&mut g, x)?;
    Ok(2 * g.total_macs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub params: usize,
    /// Multiply-accumulates of the convolution owning this weight, 0 otherwise.
    pub macs: u64,
}

/// Per-parameter layer table with totals.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub rows: Vec<SummaryRow>,
    pub total_params: usize,
    pub total_flops: u64,
}

impl ModelSummary {
    pub fn for_generator<T: Real>(store: &ParamStore<T>, gen: &Generator, input_shape: [usize; 4]) -> Result<Self> {
        let mut g = Graph::with_params(store);
        g.freeze(|_| true);
        let x = g.input(Tensor::zeros(input_shape));
        gen.forward(&mut g, x)?;
        let prefix = format!("{}.", gen.prefix);
        let mut rows: Vec<SummaryRow> = store
            .iter()
            .filter(|(_, p)| p.name.starts_with(&prefix))
            .map(|(_, p)| SummaryRow { name: p.name.clone(), shape: p.value.shape().to_vec(), params: p.value.numel(), macs: 0 })
            .collect();
        for rec in g.conv_records() {
            if let Some(id) = rec.weight {
                let name = &store.get(id).name;
                if let Some(row) = rows.iter_mut().find(|r| &r.name == name) {
                    row.macs += rec.macs;
                }
            }
        }
        Ok(ModelSummary {
            total_params: rows.iter().map(|r| r.params).sum(),
            total_flops: 2 * g.total_macs(),
            rows,
        })
    }

    /// Tab-separated `name  shape  params  macs` lines with a header.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("name\tshape\tparams\tmacs\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", r.name, shape_str(&r.shape), r.params, r.macs));
        }
        s
    }
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        writeln!(f, "{:<width$}  {:>14}  {:>10}  {:>12}", "name", "shape", "params", "macs")?;
        for r in &self.rows {
            writeln!(f, "{:<width$}  {:>14}  {:>10}  {:>12}", r.name, shape_str(&r.shape), r.params, r.macs)?;
        }
        writeln!(f, "total parameters: {}", self.total_params)?;
        write!(f, "total FLOPs: {}", self.total_flops)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{zero_params, Conv, Init};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(kind: BlockKind, wiring: BranchWiring, flt: bool) -> GeneratorConfig {
        GeneratorConfig { base_channels: 4, num_blocks: 3, block_kind: kind, wiring, flt_branch: flt, ..Default::default() }
    }

    fn build(cfg: &GeneratorConfig, seed: u64) -> (ParamStore<f64>, Generator) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = Generator::new(&mut store, "gen", cfg, &mut rng).unwrap();
        (store, gen)
    }

    fn sar(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn([1, 1, h, w], |i| ((i * 7919 % 97) as f64 / 48.5) - 1.0)
    }

    #[test]
    fn output_shapes_follow_input() {
        let (store, gen) = build(&tiny(BlockKind::Tfd, BranchWiring::DefaultA, true), 1);
        let mut g = Graph::with_params(&store);
        let x = g.input(sar(32, 48));
        let out = gen.forward(&mut g, x).unwrap();
        assert_eq!(g.value(out.optical).shape(), &[1, 3, 32, 48]);
        assert_eq!(g.value(out.flt_image.unwrap()).shape(), &[1, 1, 32, 48]);
        assert!(g.value(out.optical).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn rejects_bad_extents() {
        let (store, gen) = build(&tiny(BlockKind::Plain, BranchWiring::DefaultA, false), 1);
        for (h, w) in [(18, 16), (12, 12)] {
            let mut g = Graph::with_params(&store);
            let x = g.input(sar(h, w));
            assert!(matches!(gen.forward(&mut g, x), Err(crate::Error::Dimension(_))));
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let (mut store, gen) = build(&tiny(BlockKind::Tfd, BranchWiring::DefaultA, true), 2);
        zero_params(&mut store, "");
        let mut g = Graph::with_params(&store);
        let x = g.input(sar(16, 16));
        let out = gen.forward(&mut g, x).unwrap();
        assert!(g.value(out.optical).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let (store, gen) = build(&tiny(BlockKind::Rk2, BranchWiring::BranchInputResidualC, true), 9);
        let run = || {
            let mut g = Graph::with_params(&store);
            let x = g.input(sar(16, 16));
            let out = gen.forward(&mut g, x).unwrap();
            (g.value(out.optical).clone(), g.value(out.flt_image.unwrap()).clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ablation_variables_leave_encoder_and_decoder_alone() {
        let count = |cfg: &GeneratorConfig| {
            let (store, _) = build(cfg, 0);
            (count_params(&store, "gen.enc."), count_params(&store, "gen.dec."))
        };
        let base = count(&tiny(BlockKind::Tfd, BranchWiring::DefaultA, true));
        for kind in BlockKind::ALL {
            for wiring in BranchWiring::ALL {
                for flt in [false, true] {
                    assert_eq!(count(&tiny(kind, wiring, flt)), base);
                }
            }
        }
    }

    #[test]
    fn wirings_share_parameter_names() {
        let names = |w| build(&tiny(BlockKind::Tfd, w, true), 0).0.names();
        let a = names(BranchWiring::DefaultA);
        assert_eq!(a, names(BranchWiring::BackboneInputResidualB));
        assert_eq!(a, names(BranchWiring::BranchInputResidualC));
    }

    #[test]
    fn block_membership_per_kind() {
        for kind in BlockKind::ALL {
            let (store, _) = build(&tiny(kind, BranchWiring::DefaultA, false), 0);
            let names = store.names();
            for i in 1..=3 {
                let present = names.iter().any(|n| n.starts_with(&format!("gen.blocks.0.f{i}.")));
                assert_eq!(present, i <= kind.residual_count(), "{kind} f{i}");
            }
        }
    }

    #[test]
    fn wiring_b_matches_a_on_constant_input() {
        let (store, gen_a) = build(&tiny(BlockKind::Tfd, BranchWiring::DefaultA, true), 4);
        let mut gen_b = gen_a.clone();
        gen_b.cfg.wiring = BranchWiring::BackboneInputResidualB;
        let run = |gen: &Generator| {
            let mut g = Graph::with_params(&store);
            let x = g.input(Tensor::full([1, 1, 16, 16], 0.3));
            let out = gen.forward(&mut g, x).unwrap();
            g.value(out.optical).clone()
        };
        assert_eq!(run(&gen_a), run(&gen_b));
    }

    #[test]
    fn discriminator_score_map_extent() {
        assert_eq!(Discriminator::output_extent(256), 30);
        assert_eq!(Discriminator::output_extent(70), 6);
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::new(&mut store, "disc", &DiscriminatorConfig { in_channels: 3, base_channels: 4 }, &mut rng).unwrap();
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::zeros([1, 3, 64, 64]));
        let s = d.forward(&mut g, x).unwrap();
        assert_eq!(g.value(s).shape(), &[1, 1, 6, 6]);
        let small = g.input(Tensor::zeros([1, 3, 16, 16]));
        assert!(d.forward(&mut g, small).is_err());
    }

    #[test]
    fn discriminator_with_zero_weights_scores_zero() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::new(&mut store, "disc", &DiscriminatorConfig { in_channels: 3, base_channels: 2 }, &mut rng).unwrap();
        zero_params(&mut store, "disc");
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::full([1, 3, 70, 70], 0.8));
        let s = d.forward(&mut g, x).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_form_conv_param_count() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Conv::new(&mut store, "c", ConvSpec::same(3, 8, 3), Init::Normal(0.02), &mut rng).unwrap();
        assert_eq!(count_params(&store, ""), 224);
        assert_eq!(count_params(&ParamStore::<f64>::new(), ""), 0);
    }

    #[test]
    fn flops_are_twice_conv_macs() {
        let (store, gen) = build(&tiny(BlockKind::Plain, BranchWiring::DefaultA, false), 0);
        let flops = count_flops(&store, &gen, [1, 1, 16, 16]).unwrap();
        // stem: 16·16 outputs × 4 channels × (1·7·7) taps
        let stem = 16 * 16 * 4 * 49;
        let summary = ModelSummary::for_generator(&store, &gen, [1, 1, 16, 16]).unwrap();
        assert_eq!(summary.total_flops, flops);
        assert_eq!(summary.rows[0].name, "gen.enc.stem.conv.weight");
        assert_eq!(summary.rows[0].macs, stem);
        assert_eq!(summary.total_params, count_params(&store, "gen."));
    }

    #[test]
    fn models_are_send_and_sync() {
        fn check<X: Send + Sync>() {}
        check::<Generator>();
        check::<Discriminator>();
        check::<ParamStore<f32>>();
    }
}
