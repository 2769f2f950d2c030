//! Named-tensor container: magic `DPNC`, `u32` version, `u32` tensor count,
//! then per tensor a `u16` name length, UTF-8 name, `u8` rank, `u32` extents,
//! `u8` dtype code (0 = f32, 1 = f64) and little-endian raw data.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"DPNC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(buf)
}

impl<T: Real> Checkpoint<T> {
    pub fn new(tensors: Vec<(String, Tensor<T>)>) -> Self {
        Checkpoint { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(self.tensors.len()).map_err(|_| bad("too many tensors"))?.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::try_from(t.ndim()).map_err(|_| bad("rank too large"))?);
            for &d in t.shape() {
                out.extend_from_slice(&u32::try_from(d).map_err(|_| bad("extent too large"))?.to_le_bytes());
            }
            out.push(T::DTYPE as u8);
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        w.write_all(&out)?;
        Ok(())
    }

    /// Reads either dtype and converts to `T`.
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        if &read_exact::<4>(r)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(read_exact(r)?);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(read_exact(r)?) as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u16::from_le_bytes(read_exact(r)?) as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|e| bad(format!("truncated name: {e}")))?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
            let ndim = read_exact::<1>(r)?[0] as usize;
            let shape = (0..ndim).map(|_| Ok(u32::from_le_bytes(read_exact(r)?) as usize)).collect::<Result<Vec<_>>>()?;
            let code = read_exact::<1>(r)?[0];
            let dtype = DType::from_code(code).ok_or_else(|| bad(format!("`{name}`: unknown dtype code {code}")))?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * dtype.size()];
            r.read_exact(&mut raw).map_err(|e| bad(format!("`{name}`: truncated data: {e}")))?;
            let data: Vec<T> = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
            };
            let t = Tensor::new(shape, data).map_err(|e| bad(format!("`{name}`: {e}")))?;
            tensors.push((name, t));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
