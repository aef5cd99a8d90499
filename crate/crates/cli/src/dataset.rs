//! Dataset manifests and synthetic dataset export.
//!
//! A manifest is a text file with one pair per line:
//! `id<TAB>sar_path<TAB>optical_path[<TAB>split]`. Paths are relative to the manifest's
//! directory unless absolute. Blank lines and lines starting with `#` are skipped. Pairs
//! without a split column belong to `train`.

use std::fs;
use std::path::{Path, PathBuf};

use s2o_core::data::{synth_pairs, ImagePair, SpeckleParams};

use crate::error::{CliError, CliResult};
use crate::images::{quantize, read_gray, read_rgb, write_png};

pub const DEFAULT_SPLIT: &str = "train";
pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub id: String,
    pub sar: PathBuf,
    pub optical: PathBuf,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn parse(text: &str, root: &Path) -> CliResult<Manifest> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let split = match f.len() {
                3 => DEFAULT_SPLIT,
                4 => f[3],
                _ => return Err(CliError::Config(format!("manifest line {}: expected 3 or 4 tab-separated fields", n + 1))),
            };
            if entries.iter().any(|e: &Entry| e.id == f[0]) {
                return Err(CliError::Config(format!("manifest line {}: duplicate id `{}`", n + 1, f[0])));
            }
            entries.push(Entry { id: f[0].into(), sar: f[1].into(), optical: f[2].into(), split: split.into() });
        }
        Ok(Manifest { root: root.to_path_buf(), entries })
    }

    pub fn read(path: &Path) -> CliResult<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Manifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", e.id, e.sar.display(), e.optical.display(), e.split));
        }
        s
    }

    /// Split names in order of first appearance.
    pub fn splits(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.split) {
                out.push(e.split.clone());
            }
        }
        out
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Decodes the pairs of `split` (all pairs for `None`) in manifest order.
    pub fn load_pairs(&self, split: Option<&str>) -> CliResult<Vec<ImagePair>> {
        self.entries
            .iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .map(|e| {
                let ingest = |msg: String| CliError::Ingest { id: e.id.clone(), msg };
                let sar = read_gray(&self.resolve(&e.sar)).map_err(|err| ingest(err.to_string()))?;
                let optical = read_rgb(&self.resolve(&e.optical)).map_err(|err| ingest(err.to_string()))?;
                ImagePair::new(sar, optical, e.id.clone()).map_err(|err| ingest(err.to_string()))
            })
            .collect()
    }
}

/// A synthetic split: `count` pairs drawn with their own seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub name: String,
    pub count: usize,
    pub seed: Option<u64>,
}

impl std::str::FromStr for SplitSpec {
    type Err = String;

    /// `name=count` or `name=count:seed`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, rest) = s.split_once('=').ok_or_else(|| format!("expected name=count[:seed], got `{s}`"))?;
        let (count, seed) = match rest.split_once(':') {
            Some((c, sd)) => (c, Some(sd.parse().map_err(|_| format!("bad seed in `{s}`"))?)),
            None => (rest, None),
        };
        let count = count.parse().map_err(|_| format!("bad count in `{s}`"))?;
        if name.is_empty() || name.contains(['\t', '/']) {
            return Err(format!("bad split name in `{s}`"));
        }
        Ok(SplitSpec { name: name.into(), count, seed })
    }
}

/// Splits used when none are given: 200 training pairs and three 20-pair test splits.
pub fn default_splits() -> Vec<SplitSpec> {
    [("train", 200), ("test1", 20), ("test2", 20), ("test3", 20)]
        .iter()
        .map(|&(n, c)| SplitSpec { name: n.into(), count: c, seed: None })
        .collect()
}

/// Seed of the `index`-th split when none is given explicitly.
pub fn split_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// In-memory pairs of every split, ids prefixed with the split name and values on the
/// 8-bit grid, i.e. exactly what [`write_synthetic`] puts on disk.
pub fn synth_splits(
    splits: &[SplitSpec],
    size: usize,
    params: &SpeckleParams,
) -> CliResult<Vec<(String, Vec<ImagePair>)>> {
    splits
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = SpeckleParams { seed: s.seed.unwrap_or_else(|| split_seed(params.seed, i)), ..*params };
            let pairs = synth_pairs(s.count, size, &p)?
                .into_iter()
                .enumerate()
                .map(|(k, pair)| {
                    ImagePair::new(quantize(&pair.sar), quantize(&pair.optical), format!("{}_{k:05}", s.name))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((s.name.clone(), pairs))
        })
        .collect()
}

/// Writes `sar/<id>.png`, `optical/<id>.png` and `manifest.tsv` under `out`.
pub fn write_synthetic(out: &Path, splits: &[(String, Vec<ImagePair>)]) -> CliResult<PathBuf> {
    let mut manifest = Manifest { root: out.to_path_buf(), entries: Vec::new() };
    for (split, pairs) in splits {
        for p in pairs {
            let sar = PathBuf::from("sar").join(format!("{}.png", p.id));
            let optical = PathBuf::from("optical").join(format!("{}.png", p.id));
            write_png(&out.join(&sar), &p.sar)?;
            write_png(&out.join(&optical), &p.optical)?;
            manifest.entries.push(Entry { id: p.id.clone(), sar, optical, split: split.clone() });
        }
    }
    let path = out.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_text()).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_defaults_and_errors() {
        let m = Manifest::parse("# c\na\tx.png\ty.png\n\nb\tp.png\tq.png\ttest1\n", Path::new("/d")).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].split, "train");
        assert_eq!(m.splits(), ["train", "test1"]);
        assert!(Manifest::parse("a\tx.png\n", Path::new(".")).is_err());
        assert!(Manifest::parse("a\tx\ty\na\tx\ty\n", Path::new(".")).is_err());
        assert!(Manifest::parse("", Path::new(".")).unwrap().load_pairs(None).unwrap().is_empty());
    }

    #[test]
    fn split_spec_parsing() {
        assert_eq!("test1=20".parse::<SplitSpec>().unwrap(), SplitSpec { name: "test1".into(), count: 20, seed: None });
        assert_eq!("a=3:9".parse::<SplitSpec>().unwrap().seed, Some(9));
        assert!("a".parse::<SplitSpec>().is_err());
        assert!("a=x".parse::<SplitSpec>().is_err());
    }

    #[test]
    fn synthetic_export_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let specs = vec!["train=3".parse().unwrap(), "test1=2".parse().unwrap()];
        let splits = synth_splits(&specs, 16, &SpeckleParams::default()).unwrap();
        let path = write_synthetic(dir.path(), &splits).unwrap();
        let m = Manifest::read(&path).unwrap();
        assert_eq!(m.load_pairs(Some("train")).unwrap(), splits[0].1);
        assert_eq!(m.load_pairs(Some("test1")).unwrap(), splits[1].1);
        assert_eq!(m.load_pairs(None).unwrap().len(), 5);
        assert_ne!(splits[0].1[0].sar, splits[1].1[0].sar);
    }

    #[test]
    fn missing_file_names_the_pair() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::parse("p7\tnope.png\tnope2.png\n", dir.path()).unwrap();
        match m.load_pairs(None) {
            Err(CliError::Ingest { id, .. }) => assert_eq!(id, "p7"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
