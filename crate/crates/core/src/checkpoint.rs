//! Versioned binary snapshots of training state.
//!
//! Layout (little-endian throughout): magic `GCYC`, u16 version, u32 epoch,
//! u64 rng state, u32 tensor count, then per tensor a u16 name length, the
//! UTF-8 name, u8 ndim, ndim u32 dims, and the raw f32 values; a u32 CRC32
//! of all preceding bytes closes the file. Optimizer moments ride along as
//! tensors named `<param>.m` / `<param>.v`, and the two Adam step counters
//! as the scalar tensors `optim.gen.t` / `optim.disc.t`.

use crate::stack::LayerStack;
use crate::tensor::{Shape, Tensor};
use crate::train::{CycleState, TrainConfig};
use crate::SplitMix64;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"GCYC";
pub const VERSION: u16 = 1;
/// Magic of the classifier cache, which shares the container layout.
pub const CLASSIFIER_MAGIC: [u8; 4] = *b"GCLS";

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    BadVersion(u16),
    #[error("truncated file: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("trailing garbage: {remaining} bytes after offset {offset}")]
    TrailingBytes { offset: usize, remaining: usize },
    #[error("crc mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("tensor name at offset {offset} is not valid UTF-8")]
    BadName { offset: usize },
    #[error("tensor {name} has {got} dims, expected 4")]
    BadNdim { name: String, got: u8 },
    #[error("checkpoint is missing tensor {0}")]
    Missing(String),
    #[error("tensor {name}: file shape {file:?} does not match configured shape {expected}")]
    ShapeMismatch {
        name: String,
        file: Vec<u32>,
        expected: Shape,
    },
    #[error("checkpoint holds unknown tensor {0}")]
    Unknown(String),
}

/// One named tensor entry of the container.
pub struct Entry {
    pub name: String,
    pub shape: Shape,
    pub values: Vec<f32>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: [u8; 4], epoch: u32, rng_state: u64, count: u32) -> Writer {
        let mut buf = Vec::new();
        buf.extend_from_slice(&magic);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&epoch.to_le_bytes());
        buf.extend_from_slice(&rng_state.to_le_bytes());
        buf.extend_from_slice(&count.to_le_bytes());
        Writer { buf }
    }

    fn tensor(&mut self, name: &str, shape: Shape, values: &[f32]) {
        let name_bytes = name.as_bytes();
        self.buf
            .extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name_bytes);
        self.buf.push(4);
        for dim in [shape.n, shape.c, shape.h, shape.w] {
            self.buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serializes a generic named-tensor container.
pub fn encode_container<'a>(
    magic: [u8; 4],
    epoch: u32,
    rng_state: u64,
    entries: impl Iterator<Item = (&'a str, Shape, &'a [f32])>,
) -> Vec<u8> {
    let entries: Vec<_> = entries.collect();
    let mut w = Writer::new(magic, epoch, rng_state, entries.len() as u32);
    for (name, shape, values) in entries {
        w.tensor(name, shape, values);
    }
    w.finish()
}

/// Parses a container, verifying magic, version, CRC, and exact layout.
pub fn decode_container(
    magic: [u8; 4],
    bytes: &[u8],
) -> Result<(u32, u64, Vec<Entry>), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let found: [u8; 4] = r.take(4)?.try_into().unwrap();
    if found != magic {
        return Err(CheckpointError::BadMagic {
            expected: magic,
            found,
        });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let epoch = r.u32()?;
    let rng_state = r.u64()?;
    let count = r.u32()?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name_off = r.pos;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::BadName { offset: name_off })?
            .to_string();
        let ndim = r.take(1)?[0];
        if ndim != 4 {
            return Err(CheckpointError::BadNdim { name, got: ndim });
        }
        let mut dims = [0u32; 4];
        for d in dims.iter_mut() {
            *d = r.u32()?;
        }
        let len = dims.iter().map(|&d| d as usize).product::<usize>();
        let raw = r.take(len * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push(Entry {
            name,
            shape: Shape::new(
                dims[0] as usize,
                dims[1] as usize,
                dims[2] as usize,
                dims[3] as usize,
            ),
            values,
        });
    }
    let body_end = r.pos;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes {
            offset: r.pos,
            remaining: bytes.len() - r.pos,
        });
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    Ok((epoch, rng_state, entries))
}

fn moment_shapes<'a>(stacks: [&'a LayerStack; 2]) -> impl Iterator<Item = (String, Shape)> + 'a {
    stacks
        .into_iter()
        .flat_map(|s| s.params())
        .map(|p| (p.name.clone(), p.tensor.shape()))
}

/// Serializes the full training state.
pub fn save_checkpoint(state: &CycleState) -> Vec<u8> {
    let mut entries: Vec<(String, Shape, Vec<f32>)> = Vec::new();
    for stack in [
        &state.gen_g.stack,
        &state.gen_f.stack,
        &state.disc_g.stack,
        &state.disc_f.stack,
    ] {
        for p in stack.params() {
            entries.push((p.name.clone(), p.tensor.shape(), p.tensor.values().to_vec()));
        }
    }
    for (group, opt) in [
        ([&state.gen_g.stack, &state.gen_f.stack], &state.opt_gen),
        ([&state.disc_g.stack, &state.disc_f.stack], &state.opt_disc),
    ] {
        for (slot, (name, shape)) in moment_shapes(group).enumerate() {
            let zeros;
            let (m, v) = if slot < opt.m.len() {
                (&opt.m[slot], &opt.v[slot])
            } else {
                // Optimizer has not stepped yet; moments are zero.
                zeros = vec![0.0f32; shape.len()];
                (&zeros, &zeros)
            };
            entries.push((format!("{name}.m"), shape, m.clone()));
            entries.push((format!("{name}.v"), shape, v.clone()));
        }
    }
    for (name, opt) in [("optim.gen.t", &state.opt_gen), ("optim.disc.t", &state.opt_disc)] {
        entries.push((name.to_string(), Shape::scalar(), vec![opt.t as f32]));
    }
    encode_container(
        MAGIC,
        state.epoch,
        state.rng.state(),
        entries.iter().map(|(n, s, v)| (n.as_str(), *s, v.as_slice())),
    )
}

/// Rebuilds a [`CycleState`] from checkpoint bytes and the run
/// configuration that produced it. Every tensor must match the configured
/// architecture exactly; extra or missing tensors are errors.
pub fn load_checkpoint(bytes: &[u8], cfg: TrainConfig) -> Result<CycleState, CheckpointError> {
    let (epoch, rng_state, entries) = decode_container(MAGIC, bytes)?;
    let mut state = CycleState::new(cfg).map_err(|e| CheckpointError::Unknown(e.to_string()))?;
    let mut by_name: std::collections::HashMap<String, Entry> = entries
        .into_iter()
        .map(|e| (e.name.clone(), e))
        .collect();

    let mut take = |name: &str, expected: Shape| -> Result<Vec<f32>, CheckpointError> {
        let entry = by_name
            .remove(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
        if entry.shape != expected {
            let s = entry.shape;
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                file: vec![s.n as u32, s.c as u32, s.h as u32, s.w as u32],
                expected,
            });
        }
        Ok(entry.values)
    };

    for stack in [
        &mut state.gen_g.stack,
        &mut state.gen_f.stack,
        &mut state.disc_g.stack,
        &mut state.disc_f.stack,
    ] {
        let names: Vec<(String, Shape)> = stack
            .params()
            .map(|p| (p.name.clone(), p.tensor.shape()))
            .collect();
        for (name, shape) in names {
            let values = take(&name, shape)?;
            stack
                .by_name_mut(&name)
                .expect("name comes from this stack")
                .values_mut()
                .copy_from_slice(&values);
        }
    }

    for (stacks, opt) in [
        (
            [&state.gen_g.stack, &state.gen_f.stack],
            &mut state.opt_gen,
        ),
        (
            [&state.disc_g.stack, &state.disc_f.stack],
            &mut state.opt_disc,
        ),
    ] {
        let shapes: Vec<(String, Shape)> = moment_shapes(stacks).collect();
        opt.m.clear();
        opt.v.clear();
        for (name, shape) in shapes {
            opt.m.push(take(&format!("{name}.m"), shape)?);
            opt.v.push(take(&format!("{name}.v"), shape)?);
        }
    }
    state.opt_gen.t = take("optim.gen.t", Shape::scalar())?[0] as u64;
    state.opt_disc.t = take("optim.disc.t", Shape::scalar())?[0] as u64;

    if let Some(name) = by_name.keys().next() {
        return Err(CheckpointError::Unknown(name.clone()));
    }

    state.epoch = epoch;
    state.rng = SplitMix64::from_state(rng_state);
    Ok(state)
}
