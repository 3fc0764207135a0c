//! Parameter container: a flat binary format holding named f32 tensors.
//!
//! Layout: magic `IVRSKNN1`, u32 tensor count, then per tensor a
//! length-prefixed UTF-8 name, u8 rank, u32 dims, and little-endian f32
//! data. Byte-exact across runs, which is what run resumption and the
//! determinism checks rely on.

use super::Sequential;
use crate::error::{Error, Result};
use crate::nn::Layer;
use ndarray::ArrayD;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"IVRSKNN1";

/// Serialize all persistent tensors of `net` into the container format.
pub fn to_bytes(net: &mut Sequential) -> Vec<u8> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    net.visit_tensors("", &mut |name, t| {
        tensors.push((
            name.to_string(),
            t.shape().to_vec(),
            t.iter().copied().collect(),
        ));
    });
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(shape.len() as u8);
        for d in &shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Fill `net`'s tensors from container bytes; names and shapes must match
/// the network's architecture exactly.
pub fn from_bytes(net: &mut Sequential, bytes: &[u8]) -> Result<()> {
    let mut cursor = std::io::Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cursor
        .read_exact(&mut magic)
        .map_err(|_| Error::stage("parameter container truncated"))?;
    if &magic != MAGIC {
        return Err(Error::stage("not a parameter container (bad magic)"));
    }
    let mut u32buf = [0u8; 4];
    cursor.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let mut loaded: Vec<(String, ArrayD<f32>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        cursor.read_exact(&mut u16buf)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; name_len];
        cursor.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::stage("invalid tensor name encoding"))?;
        let mut rank = [0u8; 1];
        cursor.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            cursor.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            cursor.read_exact(&mut u32buf)?;
            data.push(f32::from_le_bytes(u32buf));
        }
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&shape), data)
            .map_err(|e| Error::stage(format!("bad tensor shape in container: {e}")))?;
        loaded.push((name, arr));
    }

    let mut idx = 0;
    let mut mismatch: Option<String> = None;
    net.visit_tensors("", &mut |name, t| {
        if mismatch.is_some() {
            return;
        }
        match loaded.get(idx) {
            Some((lname, larr)) if lname == name && larr.shape() == t.shape() => {
                t.assign(larr);
            }
            Some((lname, larr)) => {
                mismatch = Some(format!(
                    "tensor {idx}: expected {name} {:?}, container has {lname} {:?}",
                    t.shape(),
                    larr.shape()
                ));
            }
            None => mismatch = Some(format!("container ends early at tensor {idx} ({name})")),
        }
        idx += 1;
    });
    if let Some(msg) = mismatch {
        return Err(Error::stage(format!("parameter container mismatch: {msg}")));
    }
    if idx != loaded.len() {
        return Err(Error::stage(format!(
            "container has {} tensors, network expects {idx}",
            loaded.len()
        )));
    }
    Ok(())
}

pub fn save(net: &mut Sequential, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&to_bytes(net))?;
    Ok(())
}

pub fn load(net: &mut Sequential, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    from_bytes(net, &bytes)
}
