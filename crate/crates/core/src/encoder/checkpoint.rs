//! Binary checkpoint: `FTCLCKPT` magic, a `u32` version, then little-endian
//! sections. Floats are stored as raw IEEE-754 bits so a save/load cycle is
//! lossless.

use std::fs;
use std::path::Path;

use super::{Architecture, EncoderParams, Layer, LrSchedule, OptimizerState};
use crate::contrastive::MemoryQueue;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &[u8; 8] = b"FTCLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub query: EncoderParams,
    /// Absent in the in-batch (shared encoder) mode.
    pub key: Option<EncoderParams>,
    pub optimizer: OptimizerState,
    pub queue: Option<MemoryQueue>,
    /// Run seed; together with `epoch`/`step` this pins every future stream.
    pub seed: u64,
    /// Number of completed epochs.
    pub epoch: u64,
    /// Number of completed optimizer steps.
    pub step: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }
    fn usizes(&mut self, vs: &[usize]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.u64(v as u64);
        }
    }
    fn matrix(&mut self, m: &Matrix) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        for &v in m.as_slice() {
            self.f64(v);
        }
    }
    fn layers(&mut self, layers: &[Layer]) {
        self.u64(layers.len() as u64);
        for l in layers {
            self.matrix(&l.weight);
            self.f64s(&l.bias);
        }
    }
    fn encoder(&mut self, p: &EncoderParams) {
        self.u64(p.arch().input as u64);
        self.usizes(&p.arch().hidden);
        self.u64(p.arch().output as u64);
        self.layers(p.layers());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::BadCheckpoint(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        // every element needs at least one byte, so larger counts are corrupt
        if n as usize > self.buf.len() {
            return Err(Error::BadCheckpoint(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len()?;
        (0..n).map(|_| self.u64().map(|v| v as usize)).collect()
    }
    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.len()?;
        let cols = self.len()?;
        let count = rows
            .checked_mul(cols)
            .filter(|&c| c <= self.buf.len())
            .ok_or_else(|| Error::BadCheckpoint("implausible matrix size".into()))?;
        let data = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Matrix::from_vec(rows, cols, data)
    }
    fn layers(&mut self) -> Result<Vec<Layer>> {
        let n = self.len()?;
        (0..n)
            .map(|_| {
                Ok(Layer {
                    weight: self.matrix()?,
                    bias: self.f64s()?,
                })
            })
            .collect()
    }
    fn encoder(&mut self) -> Result<EncoderParams> {
        let input = self.len()?;
        let hidden = self.usizes()?;
        let output = self.len()?;
        let layers = self.layers()?;
        EncoderParams::from_layers(Architecture::new(input, hidden, output), layers)
            .map_err(|e| Error::BadCheckpoint(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(self.seed);
        w.u64(self.epoch);
        w.u64(self.step);
        w.encoder(&self.query);
        match &self.key {
            Some(k) => {
                w.u8(1);
                w.encoder(k);
            }
            None => w.u8(0),
        }
        let opt = &self.optimizer;
        w.f64(opt.schedule.base_lr);
        w.usizes(&opt.schedule.decay_epochs);
        w.f64(opt.schedule.decay_factor);
        w.f64(opt.momentum);
        w.f64(opt.weight_decay);
        w.layers(&opt.velocity);
        match &self.queue {
            Some(q) => {
                w.u8(1);
                w.matrix(q.entries());
                w.u64(q.cursor() as u64);
                w.u8(q.is_filled() as u8);
            }
            None => w.u8(0),
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::BadCheckpoint("missing FTCLCKPT magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let seed = r.u64()?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let query = r.encoder()?;
        let key = match r.u8()? {
            0 => None,
            1 => Some(r.encoder()?),
            t => return Err(Error::BadCheckpoint(format!("bad key-encoder tag {t}"))),
        };
        let schedule = LrSchedule {
            base_lr: r.f64()?,
            decay_epochs: r.usizes()?,
            decay_factor: r.f64()?,
        };
        let momentum = r.f64()?;
        let weight_decay = r.f64()?;
        let velocity = r.layers()?;
        query
            .check_compatible(&velocity, "stored velocity")
            .map_err(|e| Error::BadCheckpoint(e.to_string()))?;
        let optimizer = OptimizerState {
            schedule,
            momentum,
            weight_decay,
            velocity,
        };
        let queue = match r.u8()? {
            0 => None,
            1 => {
                let entries = r.matrix()?;
                let cursor = r.len()?;
                let filled = r.u8()? != 0;
                Some(
                    MemoryQueue::from_parts(entries, cursor, filled)
                        .map_err(|e| Error::BadCheckpoint(e.to_string()))?,
                )
            }
            t => return Err(Error::BadCheckpoint(format!("bad queue tag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::BadCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            query,
            key,
            optimizer,
            queue,
            seed,
            epoch,
            step,
        })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
