//! Little-endian parameter file.
//!
//! ```text
//! magic        8 bytes  "MCA3DCNN"
//! version      u16
//! rng_seed     u64
//! n_tensors    u32
//! table        n_tensors × { name_len u16, name utf-8, rank u8, dims rank × u32 }
//! payload      every tensor's values as f64, in table order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::network::{ModelParams, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MCA3DCNN";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&params.rng_seed.to_le_bytes())?;
    w.write_all(&(params.tensors.len() as u32).to_le_bytes())?;
    for p in &params.tensors {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[p.value.rank() as u8])?;
        for &d in p.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for p in &params.tensors {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("checkpoint truncated in {what}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    if &take::<8, _>(&mut r, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    let version = u16::from_le_bytes(take(&mut r, "version")?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let rng_seed = u64::from_le_bytes(take(&mut r, "seed")?);
    let n = u32::from_le_bytes(take(&mut r, "tensor count")?) as usize;
    let mut table = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = u16::from_le_bytes(take(&mut r, "name length")?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Format("checkpoint truncated in name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = take::<1, _>(&mut r, "rank")?[0] as usize;
        let dims = (0..rank)
            .map(|_| Ok(u32::from_le_bytes(take(&mut r, "dims")?) as usize))
            .collect::<Result<Vec<_>>>()?;
        table.push((name, dims));
    }
    let mut tensors = Vec::with_capacity(table.len());
    for (name, dims) in table {
        let count: usize = dims.iter().product();
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Format(format!("checkpoint payload truncated in {name}")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Tensor::new(&dims, data)?;
        tensors.push(Param {
            name,
            grad: Tensor::zeros_like(&value),
            value,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    Ok(ModelParams { tensors, rng_seed })
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
