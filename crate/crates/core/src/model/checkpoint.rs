//! Checkpoint directories.
//!
//! A checkpoint is a directory holding:
//!
//! * `config.txt`: model hyperparameters as `key=value` lines plus `dtype`;
//! * `params.bin`: every parameter matrix in registration order;
//! * `lexicon.txt` and `charvocab.txt`: the text formats of the corpus module.
//!
//! `params.bin` layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SEGLMPRM"
//! version    u32      1
//! dtype      u32      32 or 64 (element width in bits)
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   ndim     u32 (always 2)
//!   dims     ndim × u64
//!   data     row-major elements, little-endian IEEE 754
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{ModelConfig, SegmentalModel};
use crate::config::KeyValues;
use crate::corpus::{CharVocab, SubwordLexicon};
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

pub const PARAMS_MAGIC: &[u8; 8] = b"SEGLMPRM";
const FORMAT_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.txt";
pub const PARAMS_FILE: &str = "params.bin";
pub const LEXICON_FILE: &str = "lexicon.txt";
pub const VOCAB_FILE: &str = "charvocab.txt";

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "parameter file",
        detail: detail.into(),
    }
}

/// Writes `model` into `dir` (created if missing). `extra` entries are
/// appended to `config.txt`.
pub fn save_checkpoint<T: Scalar>(model: &SegmentalModel<T>, dir: &Path, extra: &KeyValues) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut kv = KeyValues::new();
    model.config.to_kv(&mut kv);
    kv.set("dtype", T::DTYPE.name());
    kv.merge(extra);
    kv.save(&dir.join(CONFIG_FILE))?;
    model.lexicon.save(&dir.join(LEXICON_FILE))?;
    model.vocab.save(&dir.join(VOCAB_FILE))?;

    let mut buf = Vec::with_capacity(64 + model.params.num_scalars() * T::DTYPE.width());
    buf.extend_from_slice(PARAMS_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&((T::DTYPE.width() * 8) as u32).to_le_bytes());
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, value) in model.params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
        for &x in value.iter() {
            x.write_le(&mut buf);
        }
    }
    let path = dir.join(PARAMS_FILE);
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))
}

/// Element type recorded in a checkpoint's `config.txt`.
pub fn read_checkpoint_dtype(dir: &Path) -> Result<DType> {
    let kv = KeyValues::load(&dir.join(CONFIG_FILE))?;
    let raw = kv.get("dtype").unwrap_or("f32");
    DType::parse(raw).ok_or_else(|| Error::Config(format!("unknown dtype {raw:?}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err("truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn read_element<T: Scalar>(bytes: &[u8], stored: DType) -> T {
    match stored {
        DType::F32 if T::DTYPE == DType::F32 => T::read_le(bytes),
        DType::F64 if T::DTYPE == DType::F64 => T::read_le(bytes),
        DType::F32 => T::lit(f32::read_le(bytes) as f64),
        DType::F64 => T::lit(f64::read_le(bytes)),
    }
}

/// Loads a checkpoint as element type `T`, converting if it was saved with
/// the other width. Returns the model and the full `config.txt` contents.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(SegmentalModel<T>, KeyValues)> {
    let kv = KeyValues::load(&dir.join(CONFIG_FILE))?;
    let config = ModelConfig::from_kv(&kv)?;
    let vocab = CharVocab::load(&dir.join(VOCAB_FILE))?;
    let lexicon = SubwordLexicon::load(&dir.join(LEXICON_FILE), config.max_segment_len)?;
    let mut model = SegmentalModel::<T>::new(config, vocab, lexicon)?;

    let path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != PARAMS_MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let stored = match r.u32()? {
        32 => DType::F32,
        64 => DType::F64,
        other => return Err(format_err(format!("unsupported element width {other}"))),
    };
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(format_err(format!(
            "{count} tensors stored, model expects {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| format_err("tensor name is not UTF-8"))?
            .to_owned();
        if r.u32()? != 2 {
            return Err(format_err(format!("{name}: expected a matrix")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let id = model
            .params
            .id_of(&name)
            .ok_or_else(|| format_err(format!("unexpected tensor {name}")))?;
        if model.params.get(id).dim() != (rows, cols) {
            return Err(format_err(format!(
                "{name}: stored shape {rows}x{cols}, expected {:?}",
                model.params.get(id).dim()
            )));
        }
        let width = stored.width();
        let data = r.take(rows * cols * width)?;
        let values: Vec<T> = data.chunks_exact(width).map(|c| read_element(c, stored)).collect();
        *model.params.get_mut(id) = Array2::from_shape_vec((rows, cols), values).expect("shape checked");
    }
    if r.pos != bytes.len() {
        return Err(format_err("trailing bytes"));
    }
    Ok((model, kv))
}
