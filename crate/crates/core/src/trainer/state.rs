//! Training state and its `ETS1` file, plus whole-session save/load.
//!
//! `ETS1` layout: magic, version `u32`, header length `u32`, `key = value` header, then the
//! first and second moments of every parameter tensor as `f64`, then one
//! `(epoch u64, train_loss, val_loss, lr, wall_time f64)` record per completed epoch.
//! All little-endian.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Moments, PlateauState, Session};
use crate::ivnet::{load_model, save_model, IvNet};
use crate::kv::KeyValues;
use crate::{Error, Result};

const STATE_MAGIC: &[u8; 4] = b"ETS1";
const STATE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub moments: Moments,
    pub scheduler: PlateauState,
    pub best_val: f64,
    pub best_epoch: usize,
    pub skipped_batches: usize,
    pub initial_train_loss: Option<f64>,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(model: &IvNet, lr: f64) -> Self {
        TrainState {
            epoch: 0,
            moments: Moments::new(&model.params),
            scheduler: PlateauState::new(lr),
            best_val: f64::INFINITY,
            best_epoch: 0,
            skipped_batches: 0,
            initial_train_loss: None,
            history: Vec::new(),
        }
    }
}

fn encode_state(s: &TrainState) -> Result<Vec<u8>> {
    let mut kv = KeyValues::new();
    kv.set("epoch", s.epoch);
    kv.set("step", s.moments.step);
    kv.set("lr", s.scheduler.lr);
    kv.set("plateau_best", s.scheduler.best);
    kv.set("plateau_bad_epochs", s.scheduler.bad_epochs);
    kv.set("best_val", s.best_val);
    kv.set("best_epoch", s.best_epoch);
    kv.set("skipped_batches", s.skipped_batches);
    kv.set("initial_train_loss", s.initial_train_loss.map_or("none".to_string(), |v| v.to_string()));
    kv.set("num_tensors", s.moments.first.len());
    let sizes: Vec<String> = s.moments.first.iter().map(|m| m.len().to_string()).collect();
    kv.set("tensor_sizes", sizes.join(","));
    kv.set("num_records", s.history.len());
    let text = kv.to_text();
    let mut buf = Vec::new();
    buf.write_all(STATE_MAGIC)?;
    buf.write_u32::<LittleEndian>(STATE_VERSION)?;
    buf.write_u32::<LittleEndian>(text.len() as u32)?;
    buf.write_all(text.as_bytes())?;
    for m in s.moments.first.iter().chain(&s.moments.second) {
        for &v in m {
            buf.write_f64::<LittleEndian>(v)?;
        }
    }
    for r in &s.history {
        buf.write_u64::<LittleEndian>(r.epoch as u64)?;
        for v in [r.train_loss, r.val_loss, r.lr, r.wall_time] {
            buf.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(buf)
}

fn decode_state(bytes: &[u8]) -> Result<TrainState> {
    let short = |what: &str| Error::Format(format!("training state truncated while reading {what}"));
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| short("magic"))?;
    if &magic != STATE_MAGIC {
        return Err(Error::Format("bad training state magic".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| short("version"))?;
    if version != STATE_VERSION {
        return Err(Error::Format(format!("unsupported training state version {version}")));
    }
    let len = r.read_u32::<LittleEndian>().map_err(|_| short("header length"))? as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text).map_err(|_| short("header"))?;
    let kv = KeyValues::parse(&String::from_utf8(text).map_err(|_| Error::Format("state header is not UTF-8".into()))?)?;
    let sizes: Vec<usize> = match kv.get_str("tensor_sizes") {
        Some("") | None => Vec::new(),
        Some(s) => s.split(',').map(|t| t.parse().map_err(|_| Error::Format(format!("bad tensor size '{t}'")))).collect::<Result<_>>()?,
    };
    let n: usize = kv.require("num_tensors")?;
    if sizes.len() != n {
        return Err(Error::Format(format!("{} tensor sizes for {n} tensors", sizes.len())));
    }
    let read_block = |r: &mut Cursor<&[u8]>| -> Result<Vec<Vec<f64>>> {
        sizes
            .iter()
            .map(|&len| (0..len).map(|_| r.read_f64::<LittleEndian>().map_err(|_| short("moments"))).collect())
            .collect()
    };
    let first = read_block(&mut r)?;
    let second = read_block(&mut r)?;
    let records: usize = kv.require("num_records")?;
    let mut history = Vec::with_capacity(records);
    for _ in 0..records {
        let epoch = r.read_u64::<LittleEndian>().map_err(|_| short("history"))? as usize;
        let mut v = [0.0; 4];
        for x in &mut v {
            *x = r.read_f64::<LittleEndian>().map_err(|_| short("history"))?;
        }
        history.push(EpochRecord { epoch, train_loss: v[0], val_loss: v[1], lr: v[2], wall_time: v[3] });
    }
    if r.position() as usize != bytes.len() {
        return Err(Error::Format("trailing bytes after training state".into()));
    }
    let initial_train_loss = match kv.get_str("initial_train_loss") {
        None | Some("none") => None,
        Some(v) => Some(v.parse().map_err(|_| Error::Format(format!("bad initial_train_loss '{v}'")))?),
    };
    Ok(TrainState {
        epoch: kv.require("epoch")?,
        moments: Moments { step: kv.require("step")?, first, second },
        scheduler: PlateauState { lr: kv.require("lr")?, best: kv.require("plateau_best")?, bad_epochs: kv.require("plateau_bad_epochs")? },
        best_val: kv.require("best_val")?,
        best_epoch: kv.require("best_epoch")?,
        skipped_batches: kv.require("skipped_batches")?,
        initial_train_loss,
        history,
    })
}

/// Writes `last.ivn`, `best.ivn` and `state.ets` into `dir` (created if missing).
pub fn save_session(session: &Session, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_model(&session.model, &dir.join("last.ivn"))?;
    save_model(&session.best, &dir.join("best.ivn"))?;
    fs::write(dir.join("state.ets"), encode_state(&session.state)?)?;
    Ok(())
}

pub fn load_session(dir: &Path) -> Result<Session> {
    let model = load_model(&dir.join("last.ivn"))?;
    let best = load_model(&dir.join("best.ivn"))?;
    let state = decode_state(&fs::read(dir.join("state.ets"))?)?;
    let sizes_match = state.moments.first.len() == model.params.len()
        && state.moments.first.iter().zip(&model.params).all(|(m, p)| m.len() == p.value.len());
    if !sizes_match || best.config() != model.config() {
        return Err(Error::ConfigMismatch("training state does not match the saved network".into()));
    }
    Ok(Session { model, best, state })
}
