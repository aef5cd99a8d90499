//! Training configuration from presets, `key = value` files and per-key flags.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use s2o_core::train::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 256×256 patches, 200 epochs, full-width networks.
    Paper,
    /// 64×64 patches, 30 epochs, narrow 64-bit networks for CPU runs.
    Desk,
}

impl Preset {
    pub fn config(self) -> TrainConfig {
        match self {
            Preset::Paper => TrainConfig { patch_size: 256, ..TrainConfig::default() },
            Preset::Desk => TrainConfig::desk(),
        }
    }
}

macro_rules! config_flags {
    ($($field:ident),* $(,)?) => {
        /// Config sources, applied in order: preset (or a base config), file, flags.
        #[derive(Debug, Clone, Default, Args)]
        pub struct ConfigArgs {
            /// Flat `key = value` config file.
            #[arg(long)]
            pub config: Option<PathBuf>,
            /// Starting values before the file and flags are applied.
            #[arg(long, value_enum)]
            pub preset: Option<Preset>,
            $(
                #[arg(long = stringify!($field), value_name = "VALUE", help_heading = "Config overrides")]
                pub $field: Option<String>,
            )*
        }

        impl ConfigArgs {
            /// `(key, value)` for every flag given on the command line.
            pub fn overrides(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

config_flags!(
    lr,
    beta1,
    beta2,
    epochs,
    decay_start_epoch,
    batch_size,
    seed,
    block_kind,
    wiring,
    flt,
    lambda_pix,
    lambda_per,
    lambda_cyc,
    lambda_td,
    patch_size,
    dtype,
    base_channels,
    num_blocks,
    disc_channels,
    cycle,
);

impl ConfigArgs {
    pub fn is_empty(&self) -> bool {
        self.config.is_none() && self.preset.is_none() && self.overrides().is_empty()
    }

    /// Applies the preset, file and flags on top of `base` and validates the result.
    pub fn resolve(&self, base: TrainConfig) -> CliResult<TrainConfig> {
        let mut cfg = self.preset.map_or(base, Preset::config);
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cfg.apply_text(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, v).map_err(|e| CliError::Config(format!("--{k}: {e}")))?;
        }
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_config_key_has_a_flag() {
        let all = ConfigArgs {
            lr: Some("1".into()),
            beta1: Some("1".into()),
            beta2: Some("1".into()),
            epochs: Some("1".into()),
            decay_start_epoch: Some("1".into()),
            batch_size: Some("1".into()),
            seed: Some("1".into()),
            block_kind: Some("1".into()),
            wiring: Some("1".into()),
            flt: Some("1".into()),
            lambda_pix: Some("1".into()),
            lambda_per: Some("1".into()),
            lambda_cyc: Some("1".into()),
            lambda_td: Some("1".into()),
            patch_size: Some("1".into()),
            dtype: Some("1".into()),
            base_channels: Some("1".into()),
            num_blocks: Some("1".into()),
            disc_channels: Some("1".into()),
            cycle: Some("1".into()),
            ..Default::default()
        };
        let keys: Vec<&str> = all.overrides().iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, TrainConfig::KEYS);
    }

    #[test]
    fn file_then_flags_override_preset() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        std::fs::write(&file, "epochs = 20\nseed = 3 # comment\n").unwrap();
        let args = ConfigArgs {
            config: Some(file),
            preset: Some(Preset::Desk),
            seed: Some("11".into()),
            ..Default::default()
        };
        let cfg = args.resolve(TrainConfig::default()).unwrap();
        assert_eq!((cfg.epochs, cfg.seed, cfg.patch_size), (20, 11, 64));
        assert_eq!(cfg.decay_start_epoch, 15);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let args = ConfigArgs { lr: Some("fast".into()), ..Default::default() };
        assert!(matches!(args.resolve(TrainConfig::default()), Err(CliError::Config(_))));
        let args = ConfigArgs { decay_start_epoch: Some("500".into()), ..Default::default() };
        assert!(matches!(args.resolve(TrainConfig::default()), Err(CliError::Config(_))));
    }
}
