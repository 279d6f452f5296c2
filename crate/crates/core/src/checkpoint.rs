//! Binary tensor-store files.
//!
//! Layout (little-endian): `b"ADPT"`, u32 version (1), u64 init fingerprint,
//! u32 tensor count, then per tensor: u32 name length, UTF-8 name, u8 dtype
//! (0 = f32, 1 = f64), u8 rank, rank x u64 dims, raw values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AdapterWeights, Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::{NamedTensorStore, Tensor};

pub const MAGIC: &[u8; 4] = b"ADPT";
pub const VERSION: u32 = 1;

fn dtype_code<T: Scalar>() -> u8 {
    match T::NAME {
        "f32" => 0,
        _ => 1,
    }
}

pub fn encode<T: Scalar>(store: &NamedTensorStore<T>, fingerprint: u64) -> Vec<u8> {
    let dtype = dtype_code::<T>();
    let mut out = Vec::with_capacity(24 + store.numel() * if dtype == 0 { 4 } else { 8 });
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&fingerprint.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dtype);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        // Same-width conversions are identities, so NaN payloads survive.
        for &v in t.values() {
            if dtype == 0 {
                out.extend_from_slice(&v.to_f32().expect("float").to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
    }
    out
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

/// Parses a file written by [`encode`] with the same element type.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(NamedTensorStore<T>, u64)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic; not an ADPT file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let fingerprint = r.u64()?;
    let count = r.u32()?;
    let mut store = NamedTensorStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != dtype_code::<T>() {
            return Err(Error::Checkpoint(format!(
                "{name}: stored dtype {dtype} but loading as {}",
                T::NAME
            )));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("dimension overflows".into()))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
        let width = if dtype == 0 { 4 } else { 8 };
        let raw = r.take(
            numel
                .checked_mul(width)
                .ok_or_else(|| Error::Checkpoint("size overflows".into()))?,
        )?;
        let values: Vec<T> = raw
            .chunks_exact(width)
            .map(|c| {
                if dtype == 0 {
                    T::from_f32(f32::from_le_bytes(c.try_into().expect("4 bytes"))).expect("float")
                } else {
                    T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes")))
                }
            })
            .collect();
        let t = Tensor::new(shape, values).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        if store.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((store, fingerprint))
}

pub fn save_store<T: Scalar>(path: &Path, store: &NamedTensorStore<T>, fingerprint: u64) -> Result<()> {
    std::fs::write(path, encode(store, fingerprint)).map_err(|e| Error::io(path, e))
}

pub fn load_store<T: Scalar>(path: &Path) -> Result<(NamedTensorStore<T>, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn save_adapter<T: Scalar>(path: &Path, adapter: &AdapterWeights<T>) -> Result<()> {
    save_store(path, adapter.store(), adapter.fingerprint())
}

pub fn load_adapter<T: Scalar>(path: &Path) -> Result<AdapterWeights<T>> {
    let (store, fp) = load_store(path)?;
    AdapterWeights::from_store(store, fp)
}

/// Saves the base parameters only; attached adapters are not included.
pub fn save_model<T: Scalar>(path: &Path, model: &Model<T>) -> Result<()> {
    save_store(path, model.base_params(), model.fingerprint())
}

pub fn load_model<T: Scalar>(path: &Path, config: ModelConfig) -> Result<Model<T>> {
    let (store, fp) = load_store(path)?;
    Model::from_parts(config, store, fp)
}
