//! Variant grids over block kind, FLT branch and branch wiring, and their comparison tables.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::blocks::BlockKind;
use crate::data::ImagePair;
use crate::error::{arg_err, Result};
use crate::flt::BranchWiring;
use crate::real::Real;
use crate::train::{TrainConfig, Trainer};

/// One model variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AblationCell {
    pub block_kind: BlockKind,
    pub flt: bool,
    /// Ignored, and normalized to the default, when `flt` is off.
    pub wiring: BranchWiring,
}

impl AblationCell {
    pub fn new(block_kind: BlockKind, flt: bool, wiring: BranchWiring) -> Self {
        let wiring = if flt { wiring } else { BranchWiring::DefaultA };
        AblationCell { block_kind, flt, wiring }
    }

    /// Short row label: `base`, `+tfd`, `+flt`, `+rk2 +flt`, `+tfd +flt (b)`, ...
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.block_kind != BlockKind::Plain {
            parts.push(format!("+{}", self.block_kind));
        }
        if self.flt {
            parts.push(String::from("+flt"));
        }
        let mut s = if parts.is_empty() { String::from("base") } else { parts.join(" ") };
        if self.flt && self.wiring != BranchWiring::DefaultA {
            s.push_str(&format!(" ({})", self.wiring));
        }
        s
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig { block_kind: self.block_kind, flt: self.flt, wiring: self.wiring, ..base.clone() }
    }
}

/// Cartesian product in kind-major order with duplicates removed.
pub fn grid(kinds: &[BlockKind], flts: &[bool], wirings: &[BranchWiring]) -> Vec<AblationCell> {
    let mut cells: Vec<AblationCell> = Vec::new();
    for &k in kinds {
        for &f in flts {
            for &w in wirings {
                let c = AblationCell::new(k, f, w);
                if !cells.contains(&c) {
                    cells.push(c);
                }
            }
        }
    }
    cells
}

/// Component study: base, +flt, +tfd, +poly2 +flt, +rk2 +flt, +tfd +flt.
pub fn component_grid() -> Vec<AblationCell> {
    let a = BranchWiring::DefaultA;
    [
        (BlockKind::Plain, false),
        (BlockKind::Plain, true),
        (BlockKind::Tfd, false),
        (BlockKind::Poly2, true),
        (BlockKind::Rk2, true),
        (BlockKind::Tfd, true),
    ]
    .iter()
    .map(|&(k, f)| AblationCell::new(k, f, a))
    .collect()
}

/// Branch-wiring study: the full model with wirings a, b and c.
pub fn wiring_grid() -> Vec<AblationCell> {
    BranchWiring::ALL.iter().map(|&w| AblationCell::new(BlockKind::Tfd, true, w)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitScore {
    pub psnr: f64,
    pub ssim: f64,
    /// Per-seed mean PSNR, in seed order.
    pub psnr_by_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: AblationCell,
    /// One entry per split, in report split order.
    pub scores: Vec<SplitScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub splits: Vec<String>,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, cell: &AblationCell) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.cell == *cell)
    }

    /// Mean PSNR of `cell` on split `split`.
    pub fn psnr(&self, cell: &AblationCell, split: usize) -> Option<f64> {
        self.row(cell).map(|r| r.scores[split].psnr)
    }

    /// Method column, then PSNR for every split, then SSIM for every split.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.cell.label().len()).max().unwrap_or(6).max(6);
        let n = self.splits.len();
        let mut s = format!("{:<width$}  {:^w$}  {:^w$}\n", "", "PSNR", "SSIM", w = n * 9 - 1);
        s.push_str(&format!("{:<width$}", "method"));
        for _ in 0..2 {
            s.push(' ');
            for sp in &self.splits {
                s.push_str(&format!(" {sp:>8}"));
            }
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{:<width$} ", r.cell.label()));
            for sc in &r.scores {
                s.push_str(&format!(" {:>8.2}", sc.psnr));
            }
            s.push(' ');
            for sc in &r.scores {
                s.push_str(&format!(" {:>8.4}", sc.ssim));
            }
            s.push('\n');
        }
        s
    }

    /// `method  psnr_<split>...  ssim_<split>...` rows.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("method");
        for sp in &self.splits {
            s.push_str(&format!("\tpsnr_{sp}"));
        }
        for sp in &self.splits {
            s.push_str(&format!("\tssim_{sp}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.cell.label());
            for sc in &r.scores {
                s.push_str(&format!("\t{}", sc.psnr));
            }
            for sc in &r.scores {
                s.push_str(&format!("\t{}", sc.ssim));
            }
            s.push('\n');
        }
        s
    }
}

/// Trains every cell once per seed on `train` and evaluates on each named split.
/// `on_run` is called after each run with the cell, the seed and the trained model.
pub fn run_ablation<T: Real>(
    base: &TrainConfig,
    cells: &[AblationCell],
    seeds: &[u64],
    train: &[ImagePair],
    splits: &[(String, Vec<ImagePair>)],
    mut on_run: impl FnMut(&AblationCell, u64, &Trainer<T>),
) -> Result<AblationReport> {
    if cells.is_empty() || seeds.is_empty() || splits.is_empty() {
        return Err(arg_err!("ablation needs at least one cell, seed and split"));
    }
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut psnr = alloc::vec![Vec::new(); splits.len()];
        let mut ssim = alloc::vec![0.0; splits.len()];
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..cell.apply(base) };
            let mut trainer = Trainer::<T>::new(&cfg)?;
            while !trainer.is_finished() {
                trainer.run_epoch(train, |_| {})?;
            }
            for (i, (_, pairs)) in splits.iter().enumerate() {
                let r = trainer.evaluate(pairs)?;
                psnr[i].push(r.mean.psnr_db);
                ssim[i] += r.mean.ssim;
            }
            on_run(cell, seed, &trainer);
        }
        let k = seeds.len() as f64;
        let scores = psnr
            .into_iter()
            .zip(ssim)
            .map(|(p, s)| SplitScore { psnr: p.iter().sum::<f64>() / k, ssim: s / k, psnr_by_seed: p })
            .collect();
        rows.push(AblationRow { cell: *cell, scores });
    }
    Ok(AblationReport {
        splits: splits.iter().map(|(n, _)| n.clone()).collect(),
        seeds: seeds.to_vec(),
        rows,
    })
}
