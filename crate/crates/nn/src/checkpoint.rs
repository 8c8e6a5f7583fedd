//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "LSNNCKPT"
//! version  u32 LE   (1)
//! count    u32 LE
//! repeated count times:
//!   name_len u32 LE, name UTF-8 bytes
//!   ndim     u32 LE, dims u32 LE * ndim
//!   payload  f32 LE * product(dims)
//! ```

use std::io::{Read, Write};

use crate::{NnError, Real, Result, Tensor};

pub const MAGIC: &[u8; 8] = b"LSNNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: [usize; 4],
    pub values: Vec<f32>,
}

impl Entry {
    pub fn from_tensor<T: Real>(name: impl Into<String>, tensor: &Tensor<T>) -> Self {
        Self {
            name: name.into(),
            shape: tensor.shape(),
            values: tensor.cast::<f32>().into_vec(),
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        Tensor::<f32>::from_vec(self.shape, self.values.clone()).map(|t| t.cast())
    }
}

pub fn write<W: Write>(mut w: W, entries: &[Entry]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&4u32.to_le_bytes())?;
        for d in e.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &e.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn to_bytes(entries: &[Entry]) -> Vec<u8> {
    let mut buf = Vec::new();
    write(&mut buf, entries).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> NnError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        NnError::Checkpoint("truncated file".into())
    } else {
        NnError::Io(e)
    }
}

pub fn read<R: Read>(mut r: R) -> Result<Vec<Entry>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut entries = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 4 {
            return Err(NnError::Checkpoint(format!("{name}: {ndim} dimensions")));
        }
        let mut shape = [1usize; 4];
        // Lower-rank tensors are right-aligned into (n, c, h, w).
        for i in 0..ndim {
            shape[4 - ndim + i] = read_u32(&mut r)? as usize;
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(truncated)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(Entry { name, shape, values });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let bytes = to_bytes(&[Entry {
            name: "w".into(),
            shape: [1, 1, 1, 2],
            values: vec![1.0, -2.5],
        }]);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(bytes[20], b'w');
        assert_eq!(bytes.len(), 8 + 4 + 4 + 4 + 1 + 4 + 16 + 8);
        assert_eq!(&bytes[bytes.len() - 4..], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = to_bytes(&[Entry {
            name: "b".into(),
            shape: [1, 3, 1, 1],
            values: vec![0.0; 3],
        }]);
        assert!(read(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(read(&bytes[..]), Err(NnError::Checkpoint(_))));
    }
}
