//! Raw tensor files.
//!
//! Layout: the magic `TNSR`, a little-endian `u32` rank (always 4), four
//! little-endian `u32` dims `N, C, H, W`, then `N·C·H·W` little-endian
//! IEEE-754 `f32` values in NCHW order. Nothing else: no padding, no trailer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"TNSR";

pub fn write_raw<T: Element, W: Write>(mut out: W, t: &Tensor<T>) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&4u32.to_le_bytes())?;
    for d in t.shape().dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    for v in t.data() {
        out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_raw<R: Read>(mut input: R) -> Result<Tensor<f32>> {
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    if &word != MAGIC {
        return Err(Error::Format(format!("bad magic {word:?}")));
    }
    input.read_exact(&mut word)?;
    let rank = u32::from_le_bytes(word);
    if rank != 4 {
        return Err(Error::Format(format!("rank {rank}, expected 4")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        input.read_exact(&mut word)?;
        *d = u32::from_le_bytes(word) as usize;
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let mut bytes = vec![0u8; shape.numel() * 4];
    input.read_exact(&mut bytes)?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn save<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_raw(&mut out, t)?;
    out.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    read_raw(BufReader::new(File::open(path)?))
}
