//! Binary network container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "MOMBO-NET"  version  L  (out_1 in_1) … (out_L in_L)
//! W_1 (row-major f64 LE)  b_1  W_2  b_2  …  W_L  b_L
//! ```
//!
//! A file may hold several containers back to back (one per ensemble member).

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{Layer, MlpParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 9] = b"MOMBO-NET";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_net<W: Write>(w: &mut W, net: &MlpParams) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(net.depth() as u32).to_le_bytes())?;
    for layer in net.layers() {
        w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
    }
    for layer in net.layers() {
        for v in layer.weights.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in layer.bias.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Reads one container. Returns `Ok(None)` at a clean end of input.
pub fn read_net<R: Read>(r: &mut R) -> Result<Option<MlpParams>> {
    let mut magic = [0u8; 9];
    let mut filled = 0;
    while filled < magic.len() {
        let n = r.read(&mut magic[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(Error::Format("truncated header".into()));
        }
        filled += n;
    }
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, not a network checkpoint".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let depth = read_u32(r)? as usize;
    if depth == 0 {
        return Err(Error::Format("zero layers".into()));
    }
    let shapes = (0..depth)
        .map(|_| Ok((read_u32(r)? as usize, read_u32(r)? as usize)))
        .collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(depth);
    for (out, inp) in shapes {
        let w = read_f64s(r, out * inp)?;
        let b = read_f64s(r, out)?;
        let weights = Array2::from_shape_vec((out, inp), w).map_err(|e| Error::Format(e.to_string()))?;
        layers.push(Layer::new(weights, Array1::from(b))?);
    }
    Ok(Some(MlpParams::new(layers)?))
}

pub fn save_nets(path: &std::path::Path, nets: &[&MlpParams]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for net in nets {
        write_net(&mut w, net)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_nets(path: &std::path::Path) -> Result<Vec<MlpParams>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut nets = Vec::new();
    while let Some(net) = read_net(&mut r)? {
        nets.push(net);
    }
    Ok(nets)
}
