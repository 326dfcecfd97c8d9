//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        6 bytes  "AGCNN1"
//! version      u32
//! config       u32 byte length, then UTF-8 `key = value` lines
//! vocab hash   32 bytes (SHA-256 of the token list)
//! vocab        u32 count, then per token: u32 byte length + UTF-8 bytes
//! labels       u32 count, then per label: u32 byte length + UTF-8 bytes
//! tensors      u64 count, then per tensor: u32 rank, rank x u64 dims, f64 data
//! ```
//!
//! Tensors follow the model's canonical parameter order, ending with the two
//! activation parameters.

use std::fs;
use std::path::Path;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{parse_pairs, AgcnnConfig, AgcnnModel};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"AGCNN1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with the vocabulary and class names it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AgcnnModel,
    pub vocab: Vocabulary,
    pub label_names: Vec<String>,
}

impl Checkpoint {
    /// Rejects a vocabulary that differs from the one the model was trained with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.content_hash() != self.vocab.content_hash() {
            return Err(Error::Checkpoint("vocabulary hash does not match the checkpoint".into()));
        }
        Ok(())
    }
}

fn config_text(config: &AgcnnConfig) -> String {
    config.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_strings(out: &mut Vec<u8>, items: &[String]) -> Result<()> {
    put_u32(out, items.len())?;
    for s in items {
        put_u32(out, s.len())?;
        out.extend_from_slice(s.as_bytes());
    }
    Ok(())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    if ckpt.model.vocab_rows() != ckpt.vocab.rows() {
        return Err(Error::Checkpoint(format!(
            "model has {} embedding rows but vocabulary has {}",
            ckpt.model.vocab_rows(),
            ckpt.vocab.rows()
        )));
    }
    let mut out = Vec::with_capacity(checkpoint_size(ckpt));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = config_text(ckpt.model.config());
    put_u32(&mut out, config.len())?;
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&ckpt.vocab.content_hash());
    put_strings(&mut out, ckpt.vocab.tokens())?;
    put_strings(&mut out, &ckpt.label_names)?;

    let infos = ckpt.model.param_infos();
    let params = ckpt.model.flat_params();
    out.extend_from_slice(&(infos.len() as u64).to_le_bytes());
    for (info, data) in infos.iter().zip(&params) {
        put_u32(&mut out, info.shape.len())?;
        for &dim in &info.shape {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Exact encoded size in bytes.
pub fn checkpoint_size(ckpt: &Checkpoint) -> usize {
    let strings = |items: &[String]| 4 + items.iter().map(|s| 4 + s.len()).sum::<usize>();
    let header = 6 + 4 + 4 + config_text(ckpt.model.config()).len() + 32;
    let tensors: usize = ckpt
        .model
        .param_infos()
        .iter()
        .map(|i| 4 + 8 * i.shape.len() + 8 * i.shape.iter().product::<usize>())
        .sum();
    header + strings(ckpt.vocab.tokens()) + strings(&ckpt.label_names) + 8 + tensors
}

/// Writes the checkpoint through a temporary sibling file and renames it into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming into {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_checkpoint(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: {what} at byte {} needs {n} bytes", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)?;
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }

    fn strings(&mut self, what: &str) -> Result<Vec<String>> {
        let count = self.u32(what)?;
        // every entry needs at least its length prefix
        if count > (self.bytes.len() - self.pos) / 4 {
            return Err(Error::Checkpoint(format!("truncated file: {count} {what} entries")));
        }
        (0..count).map(|_| self.string(what)).collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(6, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = cur.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config_text = cur.string("config")?;
    let pairs = parse_pairs(&config_text)?;
    let config = AgcnnConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let hash: [u8; 32] = cur.take(32, "vocabulary hash")?.try_into().unwrap();
    let vocab = Vocabulary::from_tokens(cur.strings("vocabulary")?)?;
    if vocab.content_hash() != hash {
        return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
    }
    let label_names = cur.strings("labels")?;
    if label_names.len() != config.num_classes {
        return Err(Error::Checkpoint(format!(
            "{} label names for {} classes",
            label_names.len(),
            config.num_classes
        )));
    }

    let mut model = AgcnnModel::zeros(&config, vocab.rows())?;
    let infos = model.param_infos();
    let count = cur.u64("tensor count")?;
    if count != infos.len() as u64 {
        return Err(Error::Checkpoint(format!("{count} tensors, expected {}", infos.len())));
    }
    let mut tensors = Vec::with_capacity(infos.len());
    for info in &infos {
        let rank = cur.u32("tensor rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(cur.u64("tensor shape")? as usize);
        }
        if shape != info.shape {
            return Err(Error::Checkpoint(format!(
                "{} has shape {:?}, expected {:?}",
                info.name, shape, info.shape
            )));
        }
        let len: usize = shape.iter().product();
        let raw = cur.take(len * 8, &info.name)?;
        tensors.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<f64>>(),
        );
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    model.for_each_param_mut(|i, slice| slice.copy_from_slice(&tensors[i]));
    Ok(Checkpoint {
        model,
        vocab,
        label_names,
    })
}
