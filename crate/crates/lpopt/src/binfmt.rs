//! Flat binary files for dataset fixtures and optimizer-state snapshots.
//!
//! Both formats share the layout: an 8-byte magic, little-endian u64 header
//! fields, then little-endian f64 payloads. Datasets use magic `LPOPTDS1`,
//! optimizer states `LPOPTST1`.

use std::io::{Read, Write};

use crate::error::Error;
use crate::mat::Mat;
use crate::optim::{AdamState, AdamVariant, MuonState};
use crate::problems::Dataset;
use crate::Result;

pub const DATASET_MAGIC: &[u8; 8] = b"LPOPTDS1";
pub const STATE_MAGIC: &[u8; 8] = b"LPOPTST1";

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("count {v} too large")))
    }
}

fn put_mat(out: &mut Vec<u8>, m: &Mat) {
    put_u64(out, m.rows() as u64);
    put_u64(out, m.cols() as u64);
    for &v in m.as_slice() {
        put_f64(out, v);
    }
}

fn read_mat(c: &mut Cursor) -> Result<Mat> {
    let rows = c.usize()?;
    let cols = c.usize()?;
    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > (1 << 28) {
        return Err(Error::Format(format!("bad matrix shape {rows}x{cols}")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(c.f64()?);
    }
    Mat::new(rows, cols, data)
}

pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    put_u64(&mut out, ds.labels.len() as u64);
    put_u64(&mut out, ds.features.cols() as u64);
    put_u64(&mut out, ds.num_classes as u64);
    put_u64(&mut out, ds.seed);
    for &v in ds.features.as_slice() {
        put_f64(&mut out, v);
    }
    for &l in &ds.labels {
        put_f64(&mut out, l as f64);
    }
    out
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file".into()));
    }
    let size = c.usize()?;
    let dim = c.usize()?;
    let num_classes = c.usize()?;
    let seed = c.u64()?;
    if size == 0 || dim == 0 || size.saturating_mul(dim) > (1 << 28) {
        return Err(Error::Format(format!("bad dataset shape {size}x{dim}")));
    }
    let mut data = Vec::with_capacity(size * dim);
    for _ in 0..size * dim {
        data.push(c.f64()?);
    }
    let mut labels = Vec::with_capacity(size);
    for _ in 0..size {
        let l = c.f64()?;
        if l < 0.0 || l.fract() != 0.0 || l as usize >= num_classes {
            return Err(Error::Format(format!("bad label {l}")));
        }
        labels.push(l as usize);
    }
    Ok(Dataset {
        features: Mat::new(size, dim, data)?,
        labels,
        num_classes,
        seed,
    })
}

pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    w.write_all(&dataset_to_bytes(ds))?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    dataset_from_bytes(&buf)
}

/// Per-block optimizer state snapshot.
#[derive(Debug, Clone)]
pub enum StateSnapshot {
    Adam(Vec<AdamState>),
    Muon(Vec<MuonState>),
}

pub fn state_to_bytes(s: &StateSnapshot) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(STATE_MAGIC);
    match s {
        StateSnapshot::Adam(blocks) => {
            put_u64(&mut out, 0);
            put_u64(&mut out, blocks.len() as u64);
            for b in blocks {
                put_u64(&mut out, b.t as u64);
                put_u64(
                    &mut out,
                    match b.variant {
                        AdamVariant::WeightedSum => 0,
                        AdamVariant::WeightedAverage => 1,
                    },
                );
                put_mat(&mut out, &b.m);
                put_mat(&mut out, &b.v);
            }
        }
        StateSnapshot::Muon(blocks) => {
            put_u64(&mut out, 1);
            put_u64(&mut out, blocks.len() as u64);
            for b in blocks {
                put_u64(&mut out, b.t as u64);
                put_mat(&mut out, &b.m);
            }
        }
    }
    out
}

pub fn state_from_bytes(bytes: &[u8]) -> Result<StateSnapshot> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != STATE_MAGIC {
        return Err(Error::Format("not an optimizer-state file".into()));
    }
    let kind = c.u64()?;
    let count = c.usize()?;
    if count > (1 << 20) {
        return Err(Error::Format(format!("too many blocks: {count}")));
    }
    match kind {
        0 => {
            let mut blocks = Vec::with_capacity(count);
            for _ in 0..count {
                let t = c.usize()?;
                let variant = match c.u64()? {
                    0 => AdamVariant::WeightedSum,
                    1 => AdamVariant::WeightedAverage,
                    other => return Err(Error::Format(format!("bad variant {other}"))),
                };
                let m = read_mat(&mut c)?;
                let v = read_mat(&mut c)?;
                if !m.same_shape(&v) {
                    return Err(Error::Format("moment shapes disagree".into()));
                }
                blocks.push(AdamState { t, m, v, variant });
            }
            Ok(StateSnapshot::Adam(blocks))
        }
        1 => {
            let mut blocks = Vec::with_capacity(count);
            for _ in 0..count {
                let t = c.usize()?;
                let m = read_mat(&mut c)?;
                blocks.push(MuonState { t, m });
            }
            Ok(StateSnapshot::Muon(blocks))
        }
        other => Err(Error::Format(format!("unknown state kind {other}"))),
    }
}

pub fn write_state<W: Write>(mut w: W, s: &StateSnapshot) -> Result<()> {
    w.write_all(&state_to_bytes(s))?;
    Ok(())
}

pub fn read_state<R: Read>(mut r: R) -> Result<StateSnapshot> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    state_from_bytes(&buf)
}
