//! `GFCK` parameter checkpoints: named arrays of little-endian `f32`.
//!
//! ```text
//! magic "GFCK" | version u16 | count u32
//! per array: name_len u16 | name (UTF-8) | rank u8 | extents u32 * rank | f32 * prod(extents)
//! ```

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::binfmt::{extent_u32, put_string, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"GFCK";
pub const VERSION: u16 = 1;

pub fn encode<S: Scalar>(arrays: &[(String, Tensor<S>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&extent_u32(arrays.len(), "array count")?.to_le_bytes());
    for (name, t) in arrays {
        put_string(&mut out, name)?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::ExtentOverflow(format!("rank {}", t.rank())))?;
        out.push(rank);
        for &e in t.shape() {
            out.extend_from_slice(&extent_u32(e, "extent")?.to_le_bytes());
        }
        for &v in t.data() {
            let v = v.to_f32().expect("Scalar converts to f32");
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion { format: "GFCK", version });
    }
    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut elems: usize = 1;
        for _ in 0..rank {
            let e = r.u32()? as usize;
            elems = elems
                .checked_mul(e)
                .ok_or_else(|| Error::ExtentOverflow(format!("array {} is too large", name)))?;
            shape.push(e);
        }
        let nbytes = elems
            .checked_mul(4)
            .ok_or_else(|| Error::ExtentOverflow(format!("array {} is too large", name)))?;
        let raw = r.take(nbytes)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        arrays.push((name, Tensor::new(shape, data)?));
    }
    r.finish()?;
    Ok(arrays)
}

pub fn save<S: Scalar>(path: &Path, arrays: &[(String, Tensor<S>)]) -> Result<()> {
    write_file(path, &encode(arrays)?)
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    decode(&fs::read(path)?)
}
