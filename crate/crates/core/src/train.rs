//! Run configuration and the alternating generator/discriminator training loop.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::BlockKind;
use crate::data::{crop_patches, identity_translation, pair_rng, CropMode, ImagePair};
use crate::error::{arg_err, Error, Result};
use crate::flt::BranchWiring;
use crate::graph::Graph;
use crate::loss::{
    cycle_loss, gan_loss, perceptual_loss, pixel_loss, td_loss, td_tfd_loss, FeatureExtractor, LossReport, LossTerms,
    LossWeights, EXTRACTOR_SEED,
};
use crate::metrics::{image_metrics, MetricReport};
use crate::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, DISC_MIN_EXTENT};
use crate::optim::{lr_schedule, Adam, AdamConfig};
use crate::param::ParamStore;
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const GEN_PREFIX: &str = "gen";
pub const REV_PREFIX: &str = "rev";
pub const DISC_PREFIX: &str = "disc";

const SHUFFLE_SALT: u64 = 0x7368_7566_666c_65;
const CROP_SALT: u64 = 0x6372_6f70;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub decay_start_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub block_kind: BlockKind,
    pub wiring: BranchWiring,
    pub flt: bool,
    pub lambda_pix: f64,
    pub lambda_per: f64,
    pub lambda_cyc: f64,
    pub lambda_td: f64,
    pub patch_size: usize,
    pub dtype: DType,
    pub base_channels: usize,
    pub num_blocks: usize,
    pub disc_channels: usize,
    /// Builds the reverse generator and the cycle term.
    pub cycle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 200,
            decay_start_epoch: 100,
            batch_size: 1,
            seed: 0,
            block_kind: BlockKind::Tfd,
            wiring: BranchWiring::DefaultA,
            flt: true,
            lambda_pix: 10.0,
            lambda_per: 10.0,
            lambda_cyc: 10.0,
            lambda_td: 10.0,
            patch_size: 64,
            dtype: DType::F32,
            base_channels: 32,
            num_blocks: 3,
            disc_channels: 64,
            cycle: true,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| arg_err!("invalid value `{value}` for `{key}`"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(arg_err!("invalid value `{value}` for `{key}` (expected true or false)")),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 20] = [
        "lr",
        "beta1",
        "beta2",
        "epochs",
        "decay_start_epoch",
        "batch_size",
        "seed",
        "block_kind",
        "wiring",
        "flt",
        "lambda_pix",
        "lambda_per",
        "lambda_cyc",
        "lambda_td",
        "patch_size",
        "dtype",
        "base_channels",
        "num_blocks",
        "disc_channels",
        "cycle",
    ];

    /// CPU-friendly preset: 64×64 patches, 30 epochs with decay from epoch 15, 64-bit.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 30,
            decay_start_epoch: 15,
            patch_size: 64,
            dtype: DType::F64,
            base_channels: 4,
            disc_channels: 8,
            ..Default::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "lr" => self.lr = parse_value(key, v)?,
            "beta1" => self.beta1 = parse_value(key, v)?,
            "beta2" => self.beta2 = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "decay_start_epoch" => self.decay_start_epoch = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "block_kind" => self.block_kind = v.parse()?,
            "wiring" => self.wiring = v.parse()?,
            "flt" => self.flt = parse_bool(key, v)?,
            "lambda_pix" => self.lambda_pix = parse_value(key, v)?,
            "lambda_per" => self.lambda_per = parse_value(key, v)?,
            "lambda_cyc" => self.lambda_cyc = parse_value(key, v)?,
            "lambda_td" => self.lambda_td = parse_value(key, v)?,
            "patch_size" => self.patch_size = parse_value(key, v)?,
            "dtype" => self.dtype = DType::parse(v).ok_or_else(|| arg_err!("invalid dtype `{v}` (expected f32 or f64)"))?,
            "base_channels" => self.base_channels = parse_value(key, v)?,
            "num_blocks" => self.num_blocks = parse_value(key, v)?,
            "disc_channels" => self.disc_channels = parse_value(key, v)?,
            "cycle" => self.cycle = parse_bool(key, v)?,
            other => return Err(arg_err!("unknown config key `{other}`")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "epochs" => self.epochs.to_string(),
            "decay_start_epoch" => self.decay_start_epoch.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "block_kind" => self.block_kind.to_string(),
            "wiring" => self.wiring.to_string(),
            "flt" => self.flt.to_string(),
            "lambda_pix" => self.lambda_pix.to_string(),
            "lambda_per" => self.lambda_per.to_string(),
            "lambda_cyc" => self.lambda_cyc.to_string(),
            "lambda_td" => self.lambda_td.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "dtype" => self.dtype.to_string(),
            "base_channels" => self.base_channels.to_string(),
            "num_blocks" => self.num_blocks.to_string(),
            "disc_channels" => self.disc_channels.to_string(),
            "cycle" => self.cycle.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| arg_err!("line {}: expected `key = value`", n + 1))?;
            self.set(k, v).map_err(|e| arg_err!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field as a `key = value` line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            s.push_str(&format!("{k} = {}\n", self.get(k).expect("known key")));
        }
        s
    }

    /// The fields that determine parameter names and shapes, as canonical text.
    pub fn architecture_text(&self) -> String {
        let mut s = String::new();
        for k in ["dtype", "block_kind", "wiring", "flt", "base_channels", "num_blocks", "disc_channels", "cycle"] {
            s.push_str(&format!("{k}={}\n", self.get(k).expect("known key")));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(arg_err!("lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(arg_err!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.decay_start_epoch > self.epochs {
            return Err(arg_err!("decay_start_epoch {} exceeds epochs {}", self.decay_start_epoch, self.epochs));
        }
        if self.batch_size == 0 {
            return Err(arg_err!("batch_size must be at least 1"));
        }
        if self.patch_size % 4 != 0 || self.patch_size < DISC_MIN_EXTENT {
            return Err(arg_err!(
                "patch_size must be a multiple of 4 and at least {DISC_MIN_EXTENT}, got {}",
                self.patch_size
            ));
        }
        if self.disc_channels == 0 {
            return Err(arg_err!("disc_channels must be positive"));
        }
        self.weights().validate()?;
        self.generator_config().validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_pix: self.lambda_pix,
            lambda_per: self.lambda_per,
            lambda_cyc: if self.cycle { self.lambda_cyc } else { 0.0 },
            lambda_td: self.lambda_td,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: self.base_channels,
            num_blocks: self.num_blocks,
            block_kind: self.block_kind,
            wiring: self.wiring,
            flt_branch: self.flt,
            in_channels: 1,
            out_channels: 3,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig { in_channels: 3, base_channels: self.disc_channels }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, ..Default::default() }
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        lr_schedule(epoch, self.lr, self.epochs, self.decay_start_epoch)
    }
}

/// Position of a run inside its schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Progress {
    pub epoch: usize,
    /// Next batch to run within `epoch`.
    pub batch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub report: LossReport,
    pub d_loss: f64,
}

impl StepLog {
    pub const TSV_HEADER: &'static str = "step\tepoch\tlr\tgan\tpix\tper\tcyc\ttd_tfd\ttd_flt\ttotal\td_loss";

    /// Tab-separated values with round-trip float formatting.
    pub fn tsv(&self) -> String {
        let mut s = format!("{}\t{}\t{}", self.step, self.epoch, self.lr);
        for v in self.report.values() {
            s.push_str(&format!("\t{v}"));
        }
        s.push_str(&format!("\t{}", self.d_loss));
        s
    }
}

/// Generator, optional reverse generator, discriminator and their optimizers.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub cfg: TrainConfig,
    pub store: ParamStore<T>,
    pub gen: Generator,
    pub rev: Option<Generator>,
    pub disc: Discriminator,
    pub extractor: FeatureExtractor<T>,
    pub opt_g: Adam<T>,
    pub opt_d: Adam<T>,
    pub progress: Progress,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.dtype != T::DTYPE {
            return Err(arg_err!("config dtype {} does not match trainer element type {}", cfg.dtype, T::DTYPE));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let gcfg = cfg.generator_config();
        let gen = Generator::new(&mut store, GEN_PREFIX, &gcfg, &mut rng)?;
        let rev = if cfg.cycle { Some(Generator::new(&mut store, REV_PREFIX, &gcfg.reverse(), &mut rng)?) } else { None };
        let disc = Discriminator::new(&mut store, DISC_PREFIX, &cfg.discriminator_config(), &mut rng)?;
        let g_ids: Vec<_> = store
            .ids_with_prefix(&format!("{GEN_PREFIX}."))
            .chain(store.ids_with_prefix(&format!("{REV_PREFIX}.")))
            .collect();
        let d_ids: Vec<_> = store.ids_with_prefix(&format!("{DISC_PREFIX}.")).collect();
        let opt_g = Adam::new(cfg.adam(), &store, g_ids);
        let opt_d = Adam::new(cfg.adam(), &store, d_ids);
        Ok(Trainer {
            cfg: cfg.clone(),
            store,
            gen,
            rev,
            disc,
            extractor: FeatureExtractor::random(3, EXTRACTOR_SEED),
            opt_g,
            opt_d,
            progress: Progress::default(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.progress.epoch >= self.cfg.epochs
    }

    /// Generator update on one batch. Returns the loss report and the generated batch.
    pub fn generator_step(&mut self, sar: &Tensor<T>, optical: &Tensor<T>, lr: f64) -> Result<(LossReport, Tensor<T>)> {
        let weights = self.cfg.weights();
        let (report, grads, fake) = {
            let mut g = Graph::with_params(&self.store);
            g.freeze(|n| n.starts_with("disc."));
            let s = g.input(sar.clone());
            let o = g.input(optical.clone());
            let out = self.gen.forward(&mut g, s)?;
            let scores = self.disc.forward(&mut g, out.optical)?;
            let gan = gan_loss(&mut g, scores, true);
            let pix = pixel_loss(&mut g, out.optical, o)?;
            let per = perceptual_loss(&mut g, out.optical, o, &self.extractor)?;
            let cyc = match &self.rev {
                Some(rev) => {
                    let back = rev.forward(&mut g, out.optical)?;
                    Some(cycle_loss(&mut g, s, back.optical)?)
                }
                None => None,
            };
            let (td_tfd, td_flt) = match out.flt_image {
                Some(f) => {
                    let t = td_loss(&mut g, o, out.optical, f)?;
                    (t.td_tfd, Some(t.td_flt))
                }
                None => (td_tfd_loss(&mut g, o, out.optical)?, None),
            };
            let terms = LossTerms { gan, pix, per, cyc, td_tfd: Some(td_tfd), td_flt };
            let report = terms.report(&g, &weights)?;
            let total = terms.combine(&mut g, &weights)?;
            if !g.value(total).is_finite() {
                return Err(Error::NonFinite { term: "total".to_string() });
            }
            let grads = g.backward(total)?;
            (report, grads, g.value(out.optical).clone())
        };
        self.store.clear_grad();
        self.store.accumulate(&grads)?;
        self.opt_g.step(&mut self.store, lr)?;
        Ok((report, fake))
    }

    /// Least-squares discriminator update on a real batch and a generated batch.
    pub fn discriminator_step(&mut self, optical: &Tensor<T>, fake: &Tensor<T>, lr: f64) -> Result<f64> {
        let (d_loss, grads) = {
            let mut g = Graph::with_params(&self.store);
            g.freeze(|n| !n.starts_with("disc."));
            let real = g.input(optical.clone());
            let fake = g.input(fake.clone());
            let sr = self.disc.forward(&mut g, real)?;
            let sf = self.disc.forward(&mut g, fake)?;
            let lr_real = gan_loss(&mut g, sr, true);
            let lr_fake = gan_loss(&mut g, sf, false);
            let d = g.lincomb(&[(lr_real, 0.5), (lr_fake, 0.5)])?;
            let d_loss = g.value(d).item()?.as_f64();
            if !d_loss.is_finite() {
                return Err(Error::NonFinite { term: "d_loss".to_string() });
            }
            (d_loss, g.backward(d)?)
        };
        self.store.clear_grad();
        self.store.accumulate(&grads)?;
        self.opt_d.step(&mut self.store, lr)?;
        Ok(d_loss)
    }

    /// Generator step then discriminator step. On error the trainer is left exactly as it
    /// was before the call.
    pub fn train_step(&mut self, sar: &Tensor<T>, optical: &Tensor<T>, lr: f64) -> Result<(LossReport, f64)> {
        let backup = (self.store.clone(), self.opt_g.clone(), self.opt_d.clone());
        let result = self.generator_step(sar, optical, lr).and_then(|(report, fake)| {
            let d = self.discriminator_step(optical, &fake, lr)?;
            if self.store.iter().any(|(_, p)| !p.value.is_finite()) {
                return Err(Error::NonFinite { term: "parameters".to_string() });
            }
            Ok((report, d))
        });
        self.store.clear_grad();
        if result.is_err() {
            (self.store, self.opt_g, self.opt_d) = backup;
        }
        result
    }

    /// Batches of pair indices for `epoch`, in a seeded order.
    pub fn epoch_batches(&self, n_pairs: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n_pairs).collect();
        order.shuffle(&mut pair_rng(self.cfg.seed ^ SHUFFLE_SALT, epoch as u64));
        order.chunks(self.cfg.batch_size).map(|c| c.to_vec()).collect()
    }

    /// Patch-sized view of `pair` used at `epoch`.
    pub fn training_patch(&self, pair: &ImagePair, epoch: usize, index: usize) -> Result<ImagePair> {
        let size = self.cfg.patch_size;
        if pair.height() == size && pair.width() == size {
            return Ok(pair.clone());
        }
        let seed = (self.cfg.seed ^ CROP_SALT).wrapping_add(((epoch as u64) << 32) | index as u64);
        crop_patches(pair, size, CropMode::Random(seed))
    }

    fn load_batch(&self, data: &[ImagePair], idx: &[usize], epoch: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let patches = idx.iter().map(|&i| self.training_patch(&data[i], epoch, i)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ImagePair> = patches.iter().collect();
        let (s, o) = crate::data::batch(&refs)?;
        Ok((s.cast(), o.cast()))
    }

    /// Runs up to `max_steps` steps from the current position, crossing epoch boundaries.
    pub fn run_steps(&mut self, data: &[ImagePair], max_steps: usize, mut on_step: impl FnMut(&StepLog)) -> Result<usize> {
        if data.is_empty() {
            return Err(arg_err!("training set is empty"));
        }
        let mut done = 0;
        while done < max_steps && !self.is_finished() {
            let epoch = self.progress.epoch;
            let batches = self.epoch_batches(data.len(), epoch);
            let lr = self.cfg.lr_at(epoch)?;
            while done < max_steps && self.progress.batch < batches.len() {
                let (s, o) = self.load_batch(data, &batches[self.progress.batch], epoch)?;
                let (report, d_loss) = self.train_step(&s, &o, lr)?;
                self.progress.batch += 1;
                self.progress.step += 1;
                done += 1;
                on_step(&StepLog { step: self.progress.step, epoch, lr, report, d_loss });
            }
            if self.progress.batch >= batches.len() {
                self.progress.epoch += 1;
                self.progress.batch = 0;
            }
        }
        Ok(done)
    }

    /// Finishes the current epoch.
    pub fn run_epoch(&mut self, data: &[ImagePair], on_step: impl FnMut(&StepLog)) -> Result<usize> {
        if self.is_finished() {
            return Ok(0);
        }
        let remaining = self.epoch_batches(data.len(), self.progress.epoch).len() - self.progress.batch;
        self.run_steps(data, remaining, on_step)
    }

    /// Optical image `[3, H, W]` and, with the branch enabled, FLT image `[1, H, W]`.
    pub fn translate(&self, sar: &Tensor<f64>) -> Result<(Tensor<f64>, Option<Tensor<f64>>)> {
        let (h, w) = match *sar.shape() {
            [1, h, w] | [1, 1, h, w] => (h, w),
            ref s => return Err(crate::error::dim_err!("translate expects one SAR image, got {s:?}")),
        };
        let mut g = Graph::with_params(&self.store);
        g.freeze(|_| true);
        let x = g.input(sar.clone().reshape([1, 1, h, w])?.cast());
        let out = self.gen.forward(&mut g, x)?;
        let optical = g.value(out.optical).cast::<f64>().reshape([3, h, w])?;
        let flt = match out.flt_image {
            Some(f) => Some(g.value(f).cast::<f64>().reshape([1, h, w])?),
            None => None,
        };
        Ok((optical, flt))
    }

    pub fn evaluate(&self, pairs: &[ImagePair]) -> Result<MetricReport> {
        let rows = pairs
            .iter()
            .map(|p| Ok((p.id.clone(), image_metrics(&self.translate(&p.sar)?.0, &p.optical)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricReport::new(rows))
    }
}

/// Metrics of the SAR image replicated to three channels against the optical target.
pub fn identity_report(pairs: &[ImagePair]) -> Result<MetricReport> {
    let rows = pairs
        .iter()
        .map(|p| Ok((p.id.clone(), image_metrics(&identity_translation(&p.sar), &p.optical)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_pairs, SpeckleParams};
    use crate::layers::zero_params;

    fn tiny() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            decay_start_epoch: 1,
            patch_size: 32,
            dtype: DType::F64,
            base_channels: 4,
            num_blocks: 1,
            disc_channels: 2,
            ..Default::default()
        }
    }

    fn data(n: usize) -> Vec<ImagePair> {
        synth_pairs(n, 32, &SpeckleParams { seed: 5, ..Default::default() }).unwrap()
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = TrainConfig::desk();
        cfg.set("wiring", "c").unwrap();
        cfg.set("flt", "off").unwrap();
        cfg.set("lr", "0.001").unwrap();
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        for k in TrainConfig::KEYS {
            let mut c = TrainConfig::default();
            c.set(k, &cfg.get(k).unwrap()).unwrap();
            assert_eq!(c.get(k), cfg.get(k));
        }
    }

    #[test]
    fn config_errors() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("epochs", "-3").is_err());
        assert!(cfg.set("block_kind", "rk4").is_err());
        assert!(TrainConfig::parse("epochs = 10\ndecay_start_epoch = 20").is_err());
        assert!(TrainConfig::parse("lr = 0").is_err());
        assert!(TrainConfig::parse("batch_size = 0").is_err());
        assert!(TrainConfig::parse("patch_size = 30").is_err());
        assert!(TrainConfig::parse("just text").is_err());
        let c = TrainConfig::parse("# comment\nseed = 7 # trailing\n\n").unwrap();
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn dtype_must_match() {
        assert!(Trainer::<f32>::new(&tiny()).is_err());
        assert!(Trainer::<f64>::new(&tiny()).is_ok());
    }

    #[test]
    fn smoke_epoch() {
        let pairs = data(4);
        let mut t = Trainer::<f64>::new(&tiny()).unwrap();
        let mut logs = Vec::new();
        let n = t.run_epoch(&pairs, |l| logs.push(*l)).unwrap();
        assert_eq!(n, 4);
        assert_eq!(logs.len(), 4);
        assert_eq!(t.progress, Progress { epoch: 1, batch: 0, step: 4 });
        let w = t.cfg.weights();
        for l in &logs {
            assert!((l.report.recombine(&w) - l.report.total).abs() < 1e-6);
            assert!(l.report.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn zero_weights_and_silent_discriminator_freeze_generator() {
        let cfg = TrainConfig { lambda_pix: 0.0, lambda_per: 0.0, lambda_cyc: 0.0, lambda_td: 0.0, ..tiny() };
        let mut t = Trainer::<f64>::new(&cfg).unwrap();
        zero_params(&mut t.store, "disc.");
        let before = t.store.clone();
        let pairs = data(1);
        let (s, o) = t.load_batch(&pairs, &[0], 0).unwrap();
        t.generator_step(&s, &o, 1e-2).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(t.store.iter()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let pairs = data(3);
        let run = || {
            let mut t = Trainer::<f64>::new(&tiny()).unwrap();
            let mut logs = Vec::new();
            t.run_steps(&pairs, 5, |l| logs.push(l.tsv())).unwrap();
            (logs, t.store.iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resumed_copy_continues_identically() {
        let pairs = data(3);
        let mut a = Trainer::<f64>::new(&tiny()).unwrap();
        a.run_steps(&pairs, 2, |_| {}).unwrap();
        let mut b = a.clone();
        let mut la = Vec::new();
        let mut lb = Vec::new();
        a.run_steps(&pairs, 3, |l| la.push(l.tsv())).unwrap();
        b.run_steps(&pairs, 3, |l| lb.push(l.tsv())).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.progress, Progress { epoch: 1, batch: 2, step: 5 });
    }

    #[test]
    fn non_finite_input_restores_state() {
        let mut t = Trainer::<f64>::new(&tiny()).unwrap();
        let before = t.store.clone();
        let s = Tensor::full([1, 1, 32, 32], f64::NAN);
        let o = Tensor::zeros([1, 3, 32, 32]);
        assert!(matches!(t.train_step(&s, &o, 1e-3), Err(Error::NonFinite { .. })));
        assert_eq!(t.opt_g.step, 0);
        for ((_, a), (_, b)) in before.iter().zip(t.store.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn schedule_ends_training() {
        let pairs = data(2);
        let mut t = Trainer::<f64>::new(&tiny()).unwrap();
        let mut lrs = Vec::new();
        let n = t.run_steps(&pairs, 100, |l| lrs.push(l.lr)).unwrap();
        assert_eq!(n, 4);
        assert!(t.is_finished());
        assert_eq!(lrs, [2e-4, 2e-4, 2e-4, 2e-4]);
    }

    #[test]
    fn translate_and_evaluate_shapes() {
        let pairs = data(2);
        let t = Trainer::<f64>::new(&tiny()).unwrap();
        let (opt, flt) = t.translate(&pairs[0].sar).unwrap();
        assert_eq!(opt.shape(), &[3, 32, 32]);
        assert_eq!(flt.unwrap().shape(), &[1, 32, 32]);
        let r1 = t.evaluate(&pairs).unwrap();
        assert_eq!(r1, t.evaluate(&pairs).unwrap());
        assert_eq!(r1.len(), 2);
    }

    #[test]
    fn f32_training_runs() {
        let cfg = TrainConfig { dtype: DType::F32, ..tiny() };
        let mut t = Trainer::<f32>::new(&cfg).unwrap();
        assert_eq!(t.run_steps(&data(2), 2, |_| {}).unwrap(), 2);
    }
}
