//! Checkpoint directories.
//!
//! ```text
//! <dir>/config.txt    every TrainConfig field as `key = value`
//! <dir>/manifest.txt  header lines, then one tensor record per line
//! <dir>/tensors.bin   the tensor buffers back to back, little endian
//! ```
//!
//! The header carries the architecture fingerprint, the run position and both optimizer
//! step counters. Tensors are the parameters (`param/<name>`) and the Adam moments
//! (`adam_g.m/<name>`, `adam_g.v/<name>`, `adam_d.m/<name>`, `adam_d.v/<name>`), all in
//! parameter registration order. All randomness after a checkpoint is derived from the seed
//! and the run position, so no generator state is stored.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use s2o_core::optim::Adam;
use s2o_core::train::{Progress, TrainConfig, Trainer};
use s2o_core::{DType, ParamStore, Real, Tensor};

use crate::error::{CliError, CliResult};
use crate::tensor_io::{decode, encode, Record};

pub const FORMAT_LINE: &str = "s2o-checkpoint 1";
pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TENSORS_FILE: &str = "tensors.bin";

/// SHA-256 of the architecture-defining config fields, as lowercase hex.
pub fn fingerprint(cfg: &TrainConfig) -> String {
    Sha256::digest(cfg.architecture_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn adam_tensors<'a, T: Real>(
    tag: &str,
    opt: &'a Adam<T>,
    store: &ParamStore<T>,
    out: &mut Vec<(String, &'a Tensor<T>)>,
) {
    for s in &opt.slots {
        let name = &store.get(s.id).name;
        out.push((format!("{tag}.m/{name}"), &s.m));
        out.push((format!("{tag}.v/{name}"), &s.v));
    }
}

/// Manifest text and tensor buffer of `t`.
pub fn serialize<T: Real>(t: &Trainer<T>) -> (String, Vec<u8>) {
    let mut named: Vec<(String, &Tensor<T>)> =
        t.store.iter().map(|(_, p)| (format!("param/{}", p.name), &p.value)).collect();
    adam_tensors("adam_g", &t.opt_g, &t.store, &mut named);
    adam_tensors("adam_d", &t.opt_d, &t.store, &mut named);
    let mut buf = Vec::new();
    let records = encode(&named, &mut buf);
    let mut m = format!("{FORMAT_LINE}\n");
    m.push_str(&format!("fingerprint\t{}\n", fingerprint(&t.cfg)));
    m.push_str(&format!("dtype\t{}\n", T::DTYPE));
    m.push_str(&format!("epoch\t{}\n", t.progress.epoch));
    m.push_str(&format!("batch\t{}\n", t.progress.batch));
    m.push_str(&format!("step\t{}\n", t.progress.step));
    m.push_str(&format!("adam_g_step\t{}\n", t.opt_g.step));
    m.push_str(&format!("adam_d_step\t{}\n", t.opt_d.step));
    for r in &records {
        m.push_str(&r.to_line());
        m.push('\n');
    }
    (m, buf)
}

pub fn save<T: Real>(t: &Trainer<T>, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let (manifest, buf) = serialize(t);
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))
    };
    write(CONFIG_FILE, t.cfg.to_text().as_bytes())?;
    write(TENSORS_FILE, &buf)?;
    // the manifest goes last so that a complete manifest implies complete buffers
    write(MANIFEST_FILE, manifest.as_bytes())
}

/// Parsed `manifest.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub fingerprint: String,
    pub dtype: DType,
    pub progress: Progress,
    pub adam_g_step: u64,
    pub adam_d_step: u64,
    pub records: Vec<Record>,
}

fn ckpt_err(dir: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Checkpoint(format!("{}: {msg}", dir.display()))
}

pub fn read_header(dir: &Path) -> CliResult<Header> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(FORMAT_LINE) {
        return Err(ckpt_err(dir, "not a checkpoint manifest"));
    }
    let mut fields = std::collections::BTreeMap::new();
    let mut records = Vec::new();
    for line in lines {
        if line.starts_with("tensor\t") {
            records.push(Record::parse(line).map_err(|e| ckpt_err(dir, e))?);
        } else if let Some((k, v)) = line.split_once('\t') {
            fields.insert(k.to_string(), v.to_string());
        } else {
            return Err(ckpt_err(dir, format!("malformed manifest line `{line}`")));
        }
    }
    let get = |k: &str| fields.get(k).cloned().ok_or_else(|| ckpt_err(dir, format!("manifest lacks `{k}`")));
    let num = |k: &str| -> CliResult<u64> { get(k)?.parse().map_err(|_| ckpt_err(dir, format!("bad `{k}`"))) };
    let dtype = get("dtype")?;
    Ok(Header {
        fingerprint: get("fingerprint")?,
        dtype: DType::parse(&dtype).ok_or_else(|| ckpt_err(dir, format!("unknown dtype `{dtype}`")))?,
        progress: Progress { epoch: num("epoch")? as usize, batch: num("batch")? as usize, step: num("step")? },
        adam_g_step: num("adam_g_step")?,
        adam_d_step: num("adam_d_step")?,
        records,
    })
}

pub fn read_config(dir: &Path) -> CliResult<TrainConfig> {
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    TrainConfig::parse(&text).map_err(|e| ckpt_err(dir, e))
}

fn fill_adam<T: Real>(
    dir: &Path,
    tag: &str,
    opt: &mut Adam<T>,
    store: &ParamStore<T>,
    table: &std::collections::BTreeMap<&str, Tensor<T>>,
) -> CliResult<()> {
    for s in &mut opt.slots {
        let name = &store.get(s.id).name;
        for (which, dst) in [("m", &mut s.m), ("v", &mut s.v)] {
            let key = format!("{tag}.{which}/{name}");
            let t = table.get(key.as_str()).ok_or_else(|| ckpt_err(dir, format!("missing tensor `{key}`")))?;
            if t.shape() != dst.shape() {
                return Err(ckpt_err(dir, format!("`{key}` has shape {:?}, expected {:?}", t.shape(), dst.shape())));
            }
            *dst = t.clone();
        }
    }
    Ok(())
}

/// Restores a trainer. The fingerprint in the manifest must match the stored config.
pub fn load<T: Real>(dir: &Path) -> CliResult<Trainer<T>> {
    let header = read_header(dir)?;
    let cfg = read_config(dir)?;
    if header.fingerprint != fingerprint(&cfg) {
        return Err(ckpt_err(dir, "config fingerprint does not match the manifest"));
    }
    if header.dtype != T::DTYPE {
        return Err(ckpt_err(dir, format!("checkpoint holds {} tensors, expected {}", header.dtype, T::DTYPE)));
    }
    let path = dir.join(TENSORS_FILE);
    let buf = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    let expected_len: usize = header.records.iter().map(|r| r.byte_len()).sum();
    if buf.len() != expected_len {
        return Err(ckpt_err(dir, format!("tensor buffer holds {} bytes, manifest describes {expected_len}", buf.len())));
    }
    let mut table = std::collections::BTreeMap::new();
    for r in &header.records {
        table.insert(r.name.as_str(), decode::<T>(r, &buf).map_err(|e| ckpt_err(dir, e))?);
    }

    let mut t = Trainer::<T>::new(&cfg)?;
    let ids: Vec<_> = t.store.ids().collect();
    for id in ids {
        let p = t.store.get_mut(id);
        let key = format!("param/{}", p.name);
        let v = table.get(key.as_str()).ok_or_else(|| ckpt_err(dir, format!("missing tensor `{key}`")))?;
        if v.shape() != p.value.shape() {
            return Err(ckpt_err(dir, format!("`{key}` has shape {:?}, expected {:?}", v.shape(), p.value.shape())));
        }
        p.value = v.clone();
    }
    let expected = t.store.len() + 2 * (t.opt_g.slots.len() + t.opt_d.slots.len());
    if table.len() != expected {
        return Err(ckpt_err(dir, format!("{} tensors stored, {expected} expected", table.len())));
    }
    let store = t.store.clone();
    fill_adam(dir, "adam_g", &mut t.opt_g, &store, &table)?;
    fill_adam(dir, "adam_d", &mut t.opt_d, &store, &table)?;
    t.opt_g.step = header.adam_g_step;
    t.opt_d.step = header.adam_d_step;
    t.progress = header.progress;
    Ok(t)
}

/// Loads a checkpoint that must share the architecture of `cfg`. Non-architectural
/// fields of `cfg` (schedule, loss weights, seed) replace the stored ones.
pub fn load_compatible<T: Real>(dir: &Path, cfg: &TrainConfig) -> CliResult<Trainer<T>> {
    let header = read_header(dir)?;
    if header.fingerprint != fingerprint(cfg) {
        return Err(ckpt_err(
            dir,
            format!("config fingerprint mismatch: checkpoint {}, requested {}", header.fingerprint, fingerprint(cfg)),
        ));
    }
    let mut t = load::<T>(dir)?;
    t.cfg = cfg.clone();
    Ok(t)
}
