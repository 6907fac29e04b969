//! Binary checkpoint: little-endian, `magic | version | config digest |
//! precision | meta JSON | named arrays`, plus a JSON manifest alongside.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelMeta, Precision};
use crate::autodiff::Tensor;
use crate::error::{GasError, Result};

const MAGIC: &[u8; 8] = b"GASCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Human-readable summary written next to the binary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config_digest: String,
    pub meta: ModelMeta,
    pub parameters: Vec<(String, Vec<usize>)>,
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let meta = serde_json::to_vec(&model.meta).map_err(|e| GasError::Config(e.to_string()))?;
    let digest: [u8; 32] = Sha256::digest(&meta).into();
    let f32s = model.meta.config.precision == Precision::F32;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&digest);
    out.push(if f32s { 4 } else { 8 });
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for (name, t) in model.store.names().iter().zip(model.store.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            if f32s {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, out)?;
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        config_digest: hex(&digest),
        meta: model.meta.clone(),
        parameters: model
            .store
            .names()
            .iter()
            .zip(model.store.tensors())
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| GasError::Config(e.to_string()))?;
    std::fs::write(manifest_path(path), json + "\n")?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            GasError::Corrupt(format!("checkpoint truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| GasError::Corrupt("length overflows".into()))
    }
}

/// Loads a checkpoint. If `expect` is given, the stored model settings must
/// match it; a mismatch names both values.
pub fn load_checkpoint(path: impl AsRef<Path>, expect: Option<&super::ModelConfig>) -> Result<Model> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(GasError::Corrupt("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(GasError::Incompatible(format!(
            "checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let digest = r.take(32)?;
    let width = r.take(1)?[0];
    if width != 4 && width != 8 {
        return Err(GasError::Corrupt(format!("unknown float width {width}")));
    }
    let meta_len = r.len()?;
    let meta_bytes = r.take(meta_len)?;
    if Sha256::digest(meta_bytes).as_slice() != digest {
        return Err(GasError::Corrupt("config digest does not match".into()));
    }
    let meta: ModelMeta =
        serde_json::from_slice(meta_bytes).map_err(|e| GasError::Corrupt(format!("bad model settings: {e}")))?;
    if let Some(want) = expect {
        check_compatible(&meta.config, want)?;
    }
    let mut model = Model::layout(meta)?;
    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(GasError::Incompatible(format!(
            "checkpoint has {count} parameters, the model layout has {}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| GasError::Corrupt("parameter name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.len()?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| GasError::Corrupt("shape overflows".into()))?;
        let raw = r.take(n.checked_mul(width as usize).ok_or_else(|| GasError::Corrupt("size overflows".into()))?)?;
        let data: Vec<f64> = if width == 4 {
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        };
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| GasError::Incompatible(format!("unexpected parameter `{name}`")))?;
        let want = model.store.get(id).shape().to_vec();
        if want != shape {
            return Err(GasError::Incompatible(format!(
                "parameter `{name}` has shape {shape:?} in the checkpoint but {want:?} in the model"
            )));
        }
        model.store.set(id, Tensor::new(shape, data)?)?;
    }
    if r.pos != buf.len() {
        return Err(GasError::Corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(model)
}

fn check_compatible(have: &super::ModelConfig, want: &super::ModelConfig) -> Result<()> {
    let pairs = [
        ("hidden", have.hidden, want.hidden),
        ("layers", have.layers, want.layers),
        ("classifier_hidden", have.classifier_hidden, want.classifier_hidden),
        ("filters", have.filters, want.filters),
        ("node_dim", have.node_dim, want.node_dim),
    ];
    for (name, a, b) in pairs {
        if a != b {
            return Err(GasError::Incompatible(format!("{name}: checkpoint has {a}, configuration has {b}")));
        }
    }
    if have.variant != want.variant {
        return Err(GasError::Incompatible(format!(
            "variant: checkpoint has {}, configuration has {}",
            have.variant, want.variant
        )));
    }
    if have.filter_widths != want.filter_widths {
        return Err(GasError::Incompatible(format!(
            "filter_widths: checkpoint has {:?}, configuration has {:?}",
            have.filter_widths, want.filter_widths
        )));
    }
    Ok(())
}
