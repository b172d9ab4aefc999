//! `IVN1` checkpoints.
//!
//! Layout: magic `IVN1`, format version `u32`, header length `u32`, a `key = value` text
//! header (architecture, task, normalization, counts), every parameter as little-endian
//! `f32` in parameter order, then each batch-norm layer's running means and variances as
//! `f64`. All integers are little-endian.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{IvNet, IvNetConfig, Normalization};
use crate::datagen::Task;
use crate::kv::KeyValues;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"IVN1";
pub const MODEL_VERSION: u32 = 1;

fn header(model: &IvNet) -> String {
    let mut kv = KeyValues::new();
    model.config().to_kv(&mut kv);
    kv.set("task", model.task);
    model.normalization.to_kv(&mut kv);
    kv.set("num_tensors", model.params.len());
    kv.set("num_params", model.num_params());
    kv.set("num_bn", model.bn.len());
    kv.to_text()
}

pub fn encode_model(model: &IvNet) -> Result<Vec<u8>> {
    let text = header(model);
    let mut buf = Vec::with_capacity(12 + text.len() + 4 * model.num_params());
    buf.write_all(MODEL_MAGIC)?;
    buf.write_u32::<LittleEndian>(MODEL_VERSION)?;
    buf.write_u32::<LittleEndian>(text.len() as u32)?;
    buf.write_all(text.as_bytes())?;
    for p in &model.params {
        for &v in p.value.data() {
            buf.write_f32::<LittleEndian>(v)?;
        }
    }
    for s in &model.bn {
        for &v in s.running_mean.iter().chain(&s.running_var) {
            buf.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(buf)
}

pub fn save_model(model: &IvNet, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

fn truncated(what: &str) -> Error {
    Error::Format(format!("checkpoint truncated while reading {what}"))
}

pub fn decode_model(bytes: &[u8]) -> Result<IvNet> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| truncated("version"))?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.read_u32::<LittleEndian>().map_err(|_| truncated("header length"))? as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text).map_err(|_| truncated("header"))?;
    let text = String::from_utf8(text).map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    let kv = KeyValues::parse(&text)?;
    let cfg = IvNetConfig::from_kv(&kv)?;
    let task: Task = kv.require("task")?;
    let norm = Normalization::from_kv(&kv)?;
    let mut model = IvNet::new(cfg, task, norm, 0)?;
    let (tensors, scalars, bns): (usize, usize, usize) =
        (kv.require("num_tensors")?, kv.require("num_params")?, kv.require("num_bn")?);
    if tensors != model.params.len() || scalars != model.num_params() || bns != model.bn.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {tensors} tensors / {scalars} parameters / {bns} batch norms, architecture implies {} / {} / {}",
            model.params.len(),
            model.num_params(),
            model.bn.len()
        )));
    }
    for p in &mut model.params {
        for v in p.value.data_mut() {
            *v = r.read_f32::<LittleEndian>().map_err(|_| truncated(&p.name))?;
        }
    }
    for s in &mut model.bn {
        for v in s.running_mean.iter_mut().chain(s.running_var.iter_mut()) {
            *v = r.read_f64::<LittleEndian>().map_err(|_| truncated("batch-norm statistics"))?;
        }
    }
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.position() as usize)));
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<IvNet> {
    decode_model(&fs::read(path)?)
}

/// Loads a checkpoint and insists that its architecture equals `expected`.
pub fn load_model_expect(path: &Path, expected: &IvNetConfig) -> Result<IvNet> {
    let model = load_model(path)?;
    if model.config() != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint architecture {:?} differs from requested {:?}",
            model.config(),
            expected
        )));
    }
    Ok(model)
}
