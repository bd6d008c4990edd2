//! Binary container for a [`ParamStore`].
//!
//! Layout, all integers little-endian: the magic `ICSSMCK1`, a `u64` tensor
//! count, then per tensor a `u64` name length, the UTF-8 name, a `u64` rank
//! and `u64` dims. The raw `f32` payloads follow in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"ICSSMCK1";
const MAX_NAME: u64 = 4096;
const MAX_RANK: u64 = 8;

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("checkpoint truncated".into())
    } else {
        Error::Io(e)
    }
}

impl ParamStore {
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for (name, t) in self.iter() {
            out.write_all(&(name.len() as u64).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(t.ndim() as u64).to_le_bytes())?;
            for &d in t.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
        }
        for t in self.tensors() {
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<ParamStore> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a parameter checkpoint (bad magic)".into()));
        }
        let count = read_u64(&mut input)?;
        let mut header = Vec::new();
        for _ in 0..count {
            let len = read_u64(&mut input)?;
            if len > MAX_NAME {
                return Err(Error::Format(format!("name length {len} too large")));
            }
            let mut name = vec![0u8; len as usize];
            input.read_exact(&mut name).map_err(truncated)?;
            let name =
                String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let rank = read_u64(&mut input)?;
            if rank > MAX_RANK {
                return Err(Error::Format(format!("rank {rank} too large")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let d = usize::try_from(read_u64(&mut input)?)
                    .map_err(|_| Error::Format("dimension overflows".into()))?;
                numel = numel
                    .checked_mul(d)
                    .filter(|&n| n < 1 << 32)
                    .ok_or_else(|| Error::Format(format!("{name}: dims overflow")))?;
                shape.push(d);
            }
            header.push((name, shape, numel));
        }
        let mut store = ParamStore::new();
        for (name, shape, numel) in header {
            let mut bytes = vec![0u8; numel * 4];
            input.read_exact(&mut bytes).map_err(truncated)?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
            store.insert(name, t).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a/w", Tensor::from_fn(vec![2, 3], |i| i as f32 - 2.5)).unwrap();
        s.insert("b", Tensor::scalar(f32::MIN_POSITIVE)).unwrap();
        s
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let s = sample();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(ParamStore::read_from(&buf[..]).unwrap(), s);
    }

    #[test]
    fn corruption_is_a_format_error() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(ParamStore::read_from(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(ParamStore::read_from(&buf[..buf.len() - 1]), Err(Error::Format(_))));
    }
}
