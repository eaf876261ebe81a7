//! Dense order-3 tensors: `TEN3`, three `u32` dims, row-major little-endian
//! `f64` entries, trailing CRC32.

use std::path::Path;

use cpsplat_core::tensor::Tensor3;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TEN3";

pub fn encode(t: &Tensor3) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.data().len() + 4);
    out.extend_from_slice(MAGIC);
    for d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor3> {
    let bad = |msg: String| Error::format("tensor file", msg);
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(bad("missing TEN3 header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(bad("CRC mismatch".into()));
    }
    let dim = |k: usize| {
        u32::from_le_bytes(body[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes")) as usize
    };
    let dims = [dim(0), dim(1), dim(2)];
    let data: Vec<f64> = body[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if (body.len() - 16) % 8 != 0 || data.len() != dims.iter().product::<usize>() {
        return Err(bad(format!(
            "dims {dims:?} do not match {} entries",
            data.len()
        )));
    }
    Ok(Tensor3::from_vec(dims, data)?)
}

pub fn save(t: &Tensor3, path: &Path) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Tensor3> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
