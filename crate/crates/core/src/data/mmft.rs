//! MMFT tensor encoding: `b"MMFT"`, u32 version (1), u32 rank, `rank` u32
//! dims, then the f32 payload. Everything little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const MAGIC: &[u8; 4] = b"MMFT";
pub const VERSION: u32 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor<f32>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 4 * t.rank() + 4 * t.len());
    write_tensor(&mut buf, t).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Corrupt(format!("truncated header reading {what}")))?;
    Ok(u32::from_le_bytes(b))
}

/// Reads only the header and returns the declared shape.
pub fn read_header<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Corrupt("truncated magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Corrupt(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r, "version")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let rank = read_u32(r, "rank")? as usize;
    if rank > 8 {
        return Err(Error::Corrupt(format!("implausible rank {rank}")));
    }
    (0..rank)
        .map(|i| read_u32(r, &format!("dim {i}")).map(|d| d as usize))
        .collect()
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor<f32>> {
    let shape = read_header(r)?;
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Corrupt(format!("payload shorter than shape {shape:?}")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn save(path: &Path, t: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            path: path.to_path_buf(),
            sample: None,
        },
        _ => Error::Io(e),
    })?;
    let mut cursor = bytes.as_slice();
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes in {}",
            cursor.len(),
            path.display()
        )));
    }
    Ok(t)
}
