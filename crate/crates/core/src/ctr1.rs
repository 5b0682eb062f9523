//! `CTR1` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"CTR1" | dtype: u8 (1 = f32, 2 = f64) | rank: u8 | dims: rank × u32 | payload
//! ```
//!
//! The payload is row-major. Records may be concatenated back to back in one
//! file; [`read_all`] returns every record up to end of input.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CTR1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    fn from_byte(b: u8) -> io::Result<Self> {
        match b {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(invalid(format!("unknown dtype byte {other}"))),
        }
    }
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Writes one record. With [`DType::F32`] every value is rounded to `f32`.
pub fn write_tensor<W: Write>(w: &mut W, tensor: &Tensor, dtype: DType) -> io::Result<()> {
    let rank = u8::try_from(tensor.rank()).map_err(|_| invalid("rank above 255".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&[dtype as u8, rank])?;
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| invalid(format!("dim {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    match dtype {
        DType::F32 => {
            for &v in tensor.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads one record. Returns `Ok(None)` on clean end of input before the magic.
pub fn read_tensor<R: Read>(r: &mut R) -> io::Result<Option<(Tensor, DType)>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut magic[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(invalid("truncated magic".into()));
        }
        got += n;
    }
    if &magic != MAGIC {
        return Err(invalid(format!("bad magic {magic:?}")));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let dtype = DType::from_byte(head[0])?;
    let rank = head[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut buf4 = [0u8; 4];
    for _ in 0..rank {
        r.read_exact(&mut buf4)?;
        shape.push(u32::from_le_bytes(buf4) as usize);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| invalid(format!("shape {shape:?} overflows")))?;
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut bytes = vec![0u8; len * width];
    r.read_exact(&mut bytes)?;
    let data: Vec<f64> = match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    };
    let tensor = Tensor::new(shape, data).map_err(|e| invalid(e.to_string()))?;
    Ok(Some((tensor, dtype)))
}

fn io_or_format(path: &Path, e: io::Error) -> Error {
    match e.kind() {
        io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => {
            Error::format(path, e.to_string())
        }
        _ => Error::io(path, e),
    }
}

pub fn save(path: impl AsRef<Path>, tensor: &Tensor, dtype: DType) -> Result<()> {
    save_all(path, std::slice::from_ref(tensor), dtype)
}

pub fn save_all(path: impl AsRef<Path>, tensors: &[Tensor], dtype: DType) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in tensors {
        write_tensor(&mut w, t, dtype).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a file holding exactly one record.
pub fn load(path: impl AsRef<Path>) -> Result<(Tensor, DType)> {
    let path = path.as_ref();
    let mut all = read_all(path)?;
    match all.len() {
        1 => Ok(all.remove(0)),
        n => Err(Error::format(path, format!("expected 1 tensor, found {n}"))),
    }
}

pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<(Tensor, DType)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut out = Vec::new();
    while let Some(rec) = read_tensor(&mut r).map_err(|e| io_or_format(path, e))? {
        out.push(rec);
    }
    Ok(out)
}
