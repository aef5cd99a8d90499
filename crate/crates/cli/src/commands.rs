//! The `s2o` subcommands.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use s2o_core::ablation::{component_grid, grid, run_ablation, wiring_grid, AblationCell};
use s2o_core::blocks::BlockKind;
use s2o_core::data::{ImagePair, SpeckleParams};
use s2o_core::flt::BranchWiring;
use s2o_core::gradcheck::standard_suite;
use s2o_core::metrics::MetricReport;
use s2o_core::train::{identity_report, StepLog, TrainConfig, Trainer};
use s2o_core::{DType, Error, Real};

use crate::checkpoint::{self, load, load_compatible, save};
use crate::config::ConfigArgs;
use crate::dataset::{default_splits, synth_splits, write_synthetic, Manifest, SplitSpec, DEFAULT_SPLIT};
use crate::error::{CliError, CliResult};
use crate::images::{read_gray, write_png};

pub const LOG_FILE: &str = "train_log.tsv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LAST_GOOD: &str = "last-good";

#[derive(Debug, Parser)]
#[command(name = "s2o", version, about = "SAR-to-optical image translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic paired dataset (PNG images and a manifest).
    Synth(SynthArgs),
    /// Train a model; logs every step and checkpoints every epoch.
    Train(TrainArgs),
    /// Score a checkpoint on the splits of a dataset.
    Eval(EvalArgs),
    /// Translate SAR images to optical and FLT images.
    Translate(TranslateArgs),
    /// Check analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Train and score a grid of model variants.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of looks of the speckle; larger means less noise.
    #[arg(long, default_value_t = 1.0)]
    pub looks: f64,
    /// Magnitude of the random warp misaligning SAR and optical images.
    #[arg(long, default_value_t = 0.0)]
    pub warp: f64,
    /// `name=count[:seed]`, repeatable. Defaults to train=200 test1=20 test2=20 test3=20.
    #[arg(long = "split")]
    pub splits: Vec<SplitSpec>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = DEFAULT_SPLIT)]
    pub split: String,
    /// Run directory for the log and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to continue from; its config is the base for the config flags.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many steps and checkpoint the position.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checking the checkpoint against these settings fails on an architecture mismatch.
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Splits to score; all splits of the manifest by default.
    #[arg(long = "split")]
    pub splits: Vec<String>,
    /// Also score the SAR image replicated to three channels.
    #[arg(long)]
    pub identity: bool,
    /// Write the machine-readable rows here as well.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Grayscale PNG files; ids are the file stems.
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    /// Translate the SAR images of a manifest instead.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridKind {
    /// base, +flt, +tfd, +poly2 +flt, +rk2 +flt, +tfd +flt.
    Component,
    /// The full model with branch wirings a, b and c.
    Wiring,
    /// Every block kind with and without the branch, every wiring.
    Full,
}

impl GridKind {
    pub fn cells(self) -> Vec<AblationCell> {
        match self {
            GridKind::Component => component_grid(),
            GridKind::Wiring => wiring_grid(),
            GridKind::Full => grid(&BlockKind::ALL, &[false, true], &BranchWiring::ALL),
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Manifest; the `train` split trains, every other split is scored.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "component")]
    pub grid: GridKind,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Directory for `ablation.txt` and `ablation.tsv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! with_dtype {
    ($dtype:expr, $f:ident($($arg:expr),*)) => {
        match $dtype {
            DType::F32 => $f::<f32>($($arg),*),
            DType::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Translate(a) => translate(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Ablate(a) => ablate(&a),
    }
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let params = SpeckleParams { looks: a.looks, geometry_warp: a.warp, seed: a.seed };
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let specs = if a.splits.is_empty() { default_splits() } else { a.splits.clone() };
    let splits = synth_splits(&specs, a.size, &params)?;
    let path = write_synthetic(&a.out, &splits)?;
    for (name, pairs) in &splits {
        println!("{name}\t{}", pairs.len());
    }
    println!("manifest\t{}", path.display());
    Ok(())
}

/// Outcome of [`train_loop`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub last: Option<StepLog>,
    /// The most recent checkpoint written.
    pub checkpoint: Option<PathBuf>,
}

pub fn epoch_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("epoch-{epoch:04}"))
}

fn open_log(out: &Path) -> CliResult<BufWriter<File>> {
    let path = out.join(LOG_FILE);
    let fresh = !path.exists();
    let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{}", StepLog::TSV_HEADER).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(w)
}

/// Trains until the schedule ends or `max_steps` steps have run. Appends to the run log,
/// checkpoints at every epoch end and where a step limit stops the run. A non-finite
/// step leaves the trainer as it was, saves it as `last-good` and fails with a
/// divergence error.
pub fn train_loop<T: Real>(
    t: &mut Trainer<T>,
    data: &[ImagePair],
    out: &Path,
    max_steps: Option<usize>,
) -> CliResult<TrainSummary> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let log_path = out.join(LOG_FILE);
    let mut log = open_log(out)?;
    let mut summary = TrainSummary { steps: 0, last: None, checkpoint: None };
    let budget = max_steps.unwrap_or(usize::MAX);
    while !t.is_finished() && summary.steps < budget {
        let epoch = t.progress.epoch;
        let remaining = t.epoch_batches(data.len(), epoch).len() - t.progress.batch;
        let n = remaining.min(budget - summary.steps);
        let mut write_err = None;
        let result = t.run_steps(data, n, |s| {
            if let Err(e) = writeln!(log, "{}", s.tsv()) {
                write_err.get_or_insert(e);
            }
            summary.last = Some(*s);
        });
        log.flush().map_err(|e| CliError::io(&log_path, e))?;
        if let Some(e) = write_err {
            return Err(CliError::io(&log_path, e));
        }
        match result {
            Ok(done) => summary.steps += done,
            Err(Error::NonFinite { term }) => {
                let dir = out.join(CHECKPOINT_DIR).join(LAST_GOOD);
                save(t, &dir)?;
                return Err(CliError::Divergence(format!(
                    "step {} (epoch {epoch}): non-finite value in `{term}`; last good state saved to {}",
                    t.progress.step + 1,
                    dir.display()
                )));
            }
            Err(e) => return Err(e.into()),
        }
        let dir = if t.progress.epoch > epoch {
            epoch_dir(out, t.progress.epoch)
        } else {
            out.join(CHECKPOINT_DIR).join(format!("step-{:08}", t.progress.step))
        };
        save(t, &dir)?;
        summary.checkpoint = Some(dir);
    }
    Ok(summary)
}

fn train_typed<T: Real>(a: &TrainArgs, cfg: &TrainConfig, data: &[ImagePair]) -> CliResult<()> {
    let mut t = match &a.resume {
        Some(dir) => load_compatible::<T>(dir, cfg)?,
        None => Trainer::<T>::new(cfg)?,
    };
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let cfg_path = a.out.join("config.txt");
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| CliError::io(&cfg_path, e))?;
    let summary = train_loop(&mut t, data, &a.out, a.max_steps)?;
    println!("steps\t{}", summary.steps);
    println!("epoch\t{}", t.progress.epoch);
    if let Some(s) = summary.last {
        println!("last_total\t{}", s.report.total);
    }
    if let Some(dir) = summary.checkpoint {
        println!("checkpoint\t{}", dir.display());
    }
    Ok(())
}

fn train(a: &TrainArgs) -> CliResult<()> {
    let base = match &a.resume {
        Some(dir) => checkpoint::read_config(dir)?,
        None => TrainConfig::default(),
    };
    let cfg = a.cfg.resolve(base)?;
    let data = Manifest::read(&a.data)?.load_pairs(Some(&a.split))?;
    if data.is_empty() {
        return Err(CliError::Config(format!("split `{}` of {} is empty", a.split, a.data.display())));
    }
    with_dtype!(cfg.dtype, train_typed(a, &cfg, &data))
}

/// Restores a checkpoint, checking it against `cfg` when any config source is given.
fn open_checkpoint<T: Real>(dir: &Path, cfg: &ConfigArgs) -> CliResult<Trainer<T>> {
    if cfg.is_empty() {
        load::<T>(dir)
    } else {
        let want = cfg.resolve(checkpoint::read_config(dir)?)?;
        load_compatible::<T>(dir, &want)
    }
}

fn eval_typed<T: Real>(a: &EvalArgs, splits: &[(String, Vec<ImagePair>)]) -> CliResult<()> {
    let t = open_checkpoint::<T>(&a.checkpoint, &a.cfg)?;
    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    for (name, pairs) in splits {
        rows.push((name.clone(), t.evaluate(pairs)?));
        if a.identity {
            rows.push((format!("{name}/identity"), identity_report(pairs)?));
        }
    }
    let refs: Vec<(&str, &MetricReport)> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
    print!("{}", MetricReport::table(&refs));
    let mut tsv = format!("{}\n", MetricReport::TSV_HEADER);
    for (n, r) in &rows {
        tsv.push_str(&r.tsv_row(n));
        tsv.push('\n');
    }
    print!("{tsv}");
    if let Some(p) = &a.tsv {
        fs::write(p, tsv).map_err(|e| CliError::io(p, e))?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> CliResult<()> {
    let m = Manifest::read(&a.data)?;
    let names = if a.splits.is_empty() { m.splits() } else { a.splits.clone() };
    let splits = names
        .into_iter()
        .map(|n| {
            let pairs = m.load_pairs(Some(&n))?;
            if pairs.is_empty() {
                return Err(CliError::Config(format!("split `{n}` is empty")));
            }
            Ok((n, pairs))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let dtype = checkpoint::read_header(&a.checkpoint)?.dtype;
    with_dtype!(dtype, eval_typed(a, &splits))
}

fn translate_typed<T: Real>(a: &TranslateArgs, inputs: &[(String, s2o_core::Tensor<f64>)]) -> CliResult<()> {
    let t = load::<T>(&a.checkpoint)?;
    for (id, sar) in inputs {
        let (optical, flt) = t.translate(sar)?;
        let p = a.out.join(format!("{id}_optical.png"));
        write_png(&p, &optical)?;
        println!("{id}\t{}", p.display());
        if let Some(f) = flt {
            let p = a.out.join(format!("{id}_flt.png"));
            write_png(&p, &f.map(|v| v.clamp(-1.0, 1.0)))?;
            println!("{id}\t{}", p.display());
        }
    }
    Ok(())
}

fn translate(a: &TranslateArgs) -> CliResult<()> {
    let mut inputs = Vec::new();
    if let Some(data) = &a.data {
        for p in Manifest::read(data)?.load_pairs(a.split.as_deref())? {
            inputs.push((p.id, p.sar));
        }
    }
    for path in &a.inputs {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::io(path, "file name is not valid UTF-8"))?
            .to_string();
        inputs.push((id, read_gray(path)?));
    }
    if inputs.is_empty() {
        return Err(CliError::Config("nothing to translate: give --input files or --data".into()));
    }
    let dtype = checkpoint::read_header(&a.checkpoint)?.dtype;
    with_dtype!(dtype, translate_typed(a, &inputs))
}

fn gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let cases = standard_suite(a.seed)?;
    println!("case\tmax_rel_err\tmax_abs_err\tchecked\tresult");
    let mut failed = 0;
    for c in &cases {
        let r = &c.report;
        println!(
            "{}\t{:.3e}\t{:.3e}\t{}\t{}",
            c.name,
            r.max_rel_err,
            r.max_abs_err,
            r.checked,
            if r.pass { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!r.pass);
    }
    if failed > 0 {
        return Err(CliError::Divergence(format!("{failed} of {} gradient checks failed", cases.len())));
    }
    Ok(())
}

fn ablate_typed<T: Real>(
    a: &AblateArgs,
    cfg: &TrainConfig,
    train: &[ImagePair],
    splits: &[(String, Vec<ImagePair>)],
) -> CliResult<()> {
    let cells = a.grid.cells();
    let report = run_ablation::<T>(cfg, &cells, &a.seeds, train, splits, |cell, seed, _| {
        eprintln!("trained {} seed {seed}", cell.label());
    })?;
    let table = report.to_table();
    print!("{table}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        for (name, text) in [("ablation.txt", &table), ("ablation.tsv", &report.to_tsv())] {
            let p = out.join(name);
            fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        }
    }
    Ok(())
}

fn ablate(a: &AblateArgs) -> CliResult<()> {
    let cfg = a.cfg.resolve(TrainConfig::desk())?;
    if a.seeds.is_empty() {
        return Err(CliError::Config("--seeds is empty".into()));
    }
    let m = Manifest::read(&a.data)?;
    let train = m.load_pairs(Some(DEFAULT_SPLIT))?;
    if train.is_empty() {
        return Err(CliError::Config(format!("{} has no `{DEFAULT_SPLIT}` split", a.data.display())));
    }
    let mut splits = Vec::new();
    for name in m.splits().into_iter().filter(|s| s != DEFAULT_SPLIT) {
        let pairs = m.load_pairs(Some(&name))?;
        splits.push((name, pairs));
    }
    if splits.is_empty() {
        splits.push((DEFAULT_SPLIT.to_string(), train.clone()));
    }
    with_dtype!(cfg.dtype, ablate_typed(a, &cfg, &train, &splits))
}
