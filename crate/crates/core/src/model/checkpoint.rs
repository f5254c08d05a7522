//! Binary checkpoint, all integers and floats little-endian:
//!
//! ```text
//! "XCAE"  u32 version
//! u32 layer count, then per layer: u32 in, u32 out, u8 activation tag
//! u64 epoch, u64 step, u64 rng state, f64 rho, f64 eps
//! u32 tensor count, then per tensor:
//!     u16 name length, name bytes, u32 rows, u32 cols, rows·cols f64
//! u32 CRC32 of every preceding byte
//! ```
//!
//! Tensors are the parameters in [`Autoencoder::params`] order followed by
//! the optimizer accumulators `<name>.eg2`, `<name>.edx2` per parameter.

use std::fs;
use std::path::Path;

use super::{Autoencoder, Trainer};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer};
use crate::optim::{Adadelta, AdadeltaState};
use crate::tensor::{Rng, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"XCAE";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Encoded checkpoint bytes.
pub struct Checkpoint;

impl Checkpoint {
    pub fn to_bytes(t: &Trainer) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let layers = t.model.layers();
        put_u32(&mut out, layers.len());
        for l in &layers {
            put_u32(&mut out, l.inputs());
            put_u32(&mut out, l.outputs());
            out.push(l.activation.tag());
        }
        out.extend_from_slice(&t.epoch.to_le_bytes());
        out.extend_from_slice(&t.step.to_le_bytes());
        out.extend_from_slice(&t.rng.state().to_le_bytes());
        out.extend_from_slice(&t.optimizer.rho.to_le_bytes());
        out.extend_from_slice(&t.optimizer.eps.to_le_bytes());

        let names = t.model.param_names();
        let params = t.model.params();
        put_u32(&mut out, 3 * params.len());
        for (name, p) in names.iter().zip(&params) {
            put_tensor(&mut out, name, p);
        }
        for (name, st) in names.iter().zip(&t.states) {
            put_tensor(&mut out, &format!("{name}.eg2"), &st.eg2);
            put_tensor(&mut out, &format!("{name}.edx2"), &st.edx2);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Trainer> {
        if bytes.len() < 12 {
            return Err(Error::Corrupt(format!("checkpoint is only {} bytes", bytes.len())));
        }
        if bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: u32::from_be_bytes(CHECKPOINT_MAGIC),
                found: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Corrupt(format!(
                "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
            )));
        }

        let mut r = Reader { buf: body, pos: 8 };
        let n_layers = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let inputs = r.u32()? as usize;
            let outputs = r.u32()? as usize;
            let tag = r.take(1)?[0];
            let act =
                Activation::from_tag(tag).ok_or_else(|| Error::Corrupt(format!("unknown activation tag {tag}")))?;
            shapes.push((inputs, outputs, act));
        }
        let epoch = r.u64()?;
        let step = r.u64()?;
        let rng = Rng::from_state(r.u64()?);
        let rho = f64::from_bits(r.u64()?);
        let eps = f64::from_bits(r.u64()?);
        let optimizer = Adadelta::new(rho, eps).map_err(|e| Error::Corrupt(e.to_string()))?;

        let n_tensors = r.u32()? as usize;
        if n_tensors != 6 * n_layers {
            return Err(Error::Corrupt(format!(
                "{n_layers} layers need {} tensors, found {n_tensors}",
                6 * n_layers
            )));
        }
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            tensors.push(r.tensor()?);
        }
        if r.pos != body.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }

        let mut layers = Vec::with_capacity(n_layers);
        for (i, &(inputs, outputs, act)) in shapes.iter().enumerate() {
            let (_, w) = &tensors[2 * i];
            let (_, b) = &tensors[2 * i + 1];
            if w.shape() != (outputs, inputs) || b.shape() != (outputs, 1) {
                return Err(Error::Corrupt(format!(
                    "layer {i} tensors do not match its declared shape"
                )));
            }
            layers.push(DenseLayer::new(w.clone(), b.clone(), act).map_err(|e| Error::Corrupt(e.to_string()))?);
        }
        let model = assemble(layers)?;
        let names = model.param_names();
        let (params, accs) = tensors.split_at(2 * n_layers);
        for (name, (found, _)) in names.iter().zip(params) {
            if name != found {
                return Err(Error::Corrupt(format!("expected tensor {name}, found {found}")));
            }
        }
        let mut states = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let (n1, eg2) = &accs[2 * i];
            let (n2, edx2) = &accs[2 * i + 1];
            if *n1 != format!("{name}.eg2") || *n2 != format!("{name}.edx2") {
                return Err(Error::Corrupt(format!(
                    "optimizer state for {name} is missing or out of order"
                )));
            }
            let shape = params[i].1.shape();
            if eg2.shape() != shape || edx2.shape() != shape {
                return Err(Error::Corrupt(format!(
                    "optimizer state for {name} has the wrong shape"
                )));
            }
            states.push(AdadeltaState {
                eg2: eg2.clone(),
                edx2: edx2.clone(),
            });
        }
        Ok(Trainer {
            model,
            optimizer,
            states,
            rng,
            epoch,
            step,
        })
    }
}

/// Splits a flat layer list at the softmax head.
fn assemble(mut layers: Vec<DenseLayer>) -> Result<Autoencoder> {
    let Some(s) = layers.iter().position(|l| l.activation == Activation::Softmax) else {
        return Err(Error::Corrupt("no softmax head layer".into()));
    };
    if s + 2 >= layers.len() {
        return Err(Error::Corrupt("missing z head or decoder".into()));
    }
    let decoder = layers.split_off(s + 2);
    let z_head = layers.pop().unwrap();
    let y_head = layers.pop().unwrap();
    Autoencoder::from_parts(layers, y_head, z_head, decoder).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn save_checkpoint(trainer: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, Checkpoint::to_bytes(trainer))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    let len = u16::try_from(name.len()).expect("tensor name exceeds u16");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rows());
    put_u32(out, t.cols());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Corrupt("checkpoint ends early".into()));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
            .to_owned();
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Corrupt(format!("tensor {name} is too large")))?;
        let raw = self.take(n)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(rows, cols, data).map_err(|e| Error::Corrupt(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }
}
