//! Checkpoint container: magic `XLF5CKPT`, a little-endian `u32` length and
//! a JSON header (model kind, config, step, anything else the caller puts
//! there), a `u32` tensor count, then per tensor: `u32` name length, UTF-8
//! name, `u32` rank, `u32` dims, and row-major little-endian `f32` data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XLF5CKPT";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Parse {
        line: 0,
        message: "truncated checkpoint".into(),
    })?;
    Ok(u32::from_le_bytes(b) as usize)
}

impl Checkpoint {
    /// Deserializes one header entry.
    pub fn field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let value = self
            .header
            .get(key)
            .ok_or_else(|| Error::Config(format!("checkpoint header lacks `{key}`")))?;
        Ok(serde_json::from_value(value.clone())?)
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header = serde_json::to_vec(&ckpt.header)?;
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    write_u32(&mut w, header.len()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    write_u32(&mut w, ckpt.tensors.len()).map_err(io)?;
    for (name, t) in &ckpt.tensors {
        write_u32(&mut w, name.len()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        write_u32(&mut w, t.rank()).map_err(io)?;
        for &d in t.dims() {
            write_u32(&mut w, d).map_err(io)?;
        }
        let values: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        for v in values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: impl AsRef<Path>, device: &Device) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let bad = |m: &str| Error::Parse {
        line: 0,
        message: format!("{}: {m}", path.display()),
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not an XLF5CKPT checkpoint"));
    }
    let header_len = read_u32(&mut r)?;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)
        .map_err(|_| bad("truncated header"))?;
    let header: serde_json::Value = serde_json::from_slice(&header)?;
    let n = read_u32(&mut r)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..n {
        let name_len = read_u32(&mut r)?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r)?;
        let dims = (0..rank)
            .map(|_| read_u32(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| bad("truncated tensor data"))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(name, Tensor::from_vec(data, dims, device)?);
    }
    Ok(Checkpoint { header, tensors })
}
