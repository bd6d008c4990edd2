//! Binary grid container.
//!
//! Little-endian layout: magic `SICG1\0`, `u32` T, H, W, `T` `i64` day
//! numbers, the land bitmap, one missing-value bitmap per frame, then
//! `T·H·W` `f32` values. Bitmaps are row-major, least significant bit
//! first, each padded to a whole byte. Missing values are stored as 0 and
//! restored to NaN from their bitmap.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Grid3;
use crate::nd::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"SICG1\0";
const MAX_VALUES: usize = 1 << 31;

fn pack(bits: impl Iterator<Item = bool>, n: usize) -> Vec<u8> {
    let mut out = vec![0u8; n.div_ceil(8)];
    for (i, b) in bits.enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

pub fn write_grid_to(g: &Grid3, mut out: impl Write) -> Result<()> {
    let (t, h, w) = g.dims();
    out.write_all(MAGIC)?;
    for d in [t, h, w] {
        let d = u32::try_from(d).map_err(|_| Error::Format("grid dimension exceeds u32".into()))?;
        out.write_all(&d.to_le_bytes())?;
    }
    for d in g.dates() {
        out.write_all(&d.to_le_bytes())?;
    }
    out.write_all(&pack(g.land().iter().copied(), h * w))?;
    for f in 0..t {
        out.write_all(&pack(g.frame(f).iter().map(|v| v.is_nan()), h * w))?;
    }
    for &v in g.frames().data() {
        let v = if v.is_nan() { 0.0f32 } else { v };
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_exact(input: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    input.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("grid file truncated".into())
        } else {
            Error::Io(e)
        }
    })?;
    Ok(buf)
}

pub fn read_grid_from(mut input: impl Read) -> Result<Grid3> {
    if read_exact(&mut input, 6)? != MAGIC {
        return Err(Error::Format("not a grid container (bad magic)".into()));
    }
    let head = read_exact(&mut input, 12)?;
    let dim = |i: usize| u32::from_le_bytes(head[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (t, h, w) = (dim(0), dim(1), dim(2));
    let plane = h.checked_mul(w);
    let total = plane.and_then(|p| p.checked_mul(t));
    let (Some(plane), Some(total)) = (plane, total) else {
        return Err(Error::Format("grid dimensions overflow".into()));
    };
    if total == 0 || total > MAX_VALUES {
        return Err(Error::Format(format!("unsupported grid size {t}x{h}x{w}")));
    }
    let dates = read_exact(&mut input, 8 * t)?
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mask_bytes = plane.div_ceil(8);
    let land = unpack(&read_exact(&mut input, mask_bytes)?, plane);
    let mut missing = Vec::with_capacity(total);
    for _ in 0..t {
        missing.extend(unpack(&read_exact(&mut input, mask_bytes)?, plane));
    }
    let data = read_exact(&mut input, 4 * total)?
        .chunks_exact(4)
        .zip(&missing)
        .map(|(c, &m)| if m { f32::NAN } else { f32::from_le_bytes(c.try_into().unwrap()) })
        .collect();
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after grid payload".into()));
    }
    Grid3::new(Tensor::new(vec![t, h, w], data)?, dates, land).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_grid(g: &Grid3, path: impl AsRef<Path>) -> Result<()> {
    write_grid_to(g, BufWriter::new(File::create(path)?))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid3> {
    read_grid_from(BufReader::new(File::open(path)?))
}
