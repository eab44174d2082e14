//! Versioned binary checkpoints: magic `MDA1`, little-endian, then for
//! each named tensor (trainable parameters followed by running-statistic
//! buffers): u32 name length, UTF-8 name, u32 rank, u64 extents, raw
//! 64-bit floats. Exact round-trip, no text parsing loss.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::network::Network;
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MDA1";

pub fn save(net: &mut Network, path: &Path) -> Result<()> {
    let mut entries: Vec<(String, Tensor)> = Vec::new();
    net.visit_params(&mut |name, param, _, _| {
        entries.push((name.to_string(), param.clone()));
        Ok(())
    })?;
    net.visit_buffers(&mut |name, buf| {
        entries.push((name.to_string(), buf.clone()));
        Ok(())
    })?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for (name, t) in &entries {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.rank() as u32)?;
        for &e in t.shape() {
            w.write_u64::<LittleEndian>(e as u64)?;
        }
        for &v in t.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_entries(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse(format!("bad checkpoint magic {:?}", magic)));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Parse(e.to_string()))?;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.read_f64::<LittleEndian>()?);
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(entries)
}

/// Load a checkpoint into an already-constructed network of the same
/// architecture. Every named tensor must match in shape; unknown or
/// missing names are errors.
pub fn load(net: &mut Network, path: &Path) -> Result<()> {
    let entries = read_entries(path)?;
    let mut map: std::collections::BTreeMap<String, Tensor> = entries.into_iter().collect();
    let mut apply = |name: &str, t: &mut Tensor| -> Result<()> {
        let loaded = map
            .remove(name)
            .ok_or_else(|| Error::Parse(format!("checkpoint missing tensor {}", name)))?;
        if loaded.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "checkpoint tensor {} has shape {:?}, network expects {:?}",
                name,
                loaded.shape(),
                t.shape()
            )));
        }
        *t = loaded;
        Ok(())
    };
    net.visit_params(&mut |name, param, _, _| apply(name, param))?;
    net.visit_buffers(&mut |name, buf| apply(name, buf))?;
    if let Some((name, _)) = map.into_iter().next() {
        return Err(Error::Parse(format!("checkpoint has extra tensor {}", name)));
    }
    Ok(())
}
