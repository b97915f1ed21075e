//! `NMTB` tensor files.
//!
//! ```text
//! magic    4 bytes  "NMTB"
//! version  u16 LE   1
//! dtype    u8       1 = f32, 2 = f64
//! rank     u8
//! shape    rank × u64 LE
//! payload  product(shape) values, little-endian
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::Mat;

pub const TENSOR_MAGIC: &[u8; 4] = b"NMTB";
pub const TENSOR_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            _ => Err(Error::Format(format!("unknown dtype tag {tag}"))),
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// A shaped array of reals. Values are held as `f64`; with [`DType::F32`]
/// they are narrowed on write, which is lossless for values that came from
/// an `f32` file.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorBlob {
    pub fn new(dtype: DType, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!("rank {} too large", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { dtype, shape, data })
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(DType::F32, shape, data)
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(DType::F64, shape, data)
    }

    pub fn from_mat(dtype: DType, m: &Mat) -> Result<Self> {
        Self::new(dtype, vec![m.rows, m.cols], m.data.clone())
    }

    pub fn to_mat(&self) -> Result<Mat> {
        match self.shape[..] {
            [r, c] => Mat::from_vec(r, c, self.data.clone()),
            _ => Err(Error::Shape(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_u16::<LittleEndian>(TENSOR_VERSION)?;
        w.write_u8(self.dtype.tag())?;
        w.write_u8(self.shape.len() as u8)?;
        for &d in &self.shape {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        write_values(&mut w, self.dtype, &self.data)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Format("bad magic, not a tensor file".into()));
        }
        let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
        if version != TENSOR_VERSION {
            return Err(Error::Format(format!("unsupported tensor version {version}")));
        }
        let dtype = DType::from_tag(r.read_u8().map_err(truncated)?)?;
        let rank = r.read_u8().map_err(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.read_u64::<LittleEndian>().map_err(truncated)?;
            shape.push(usize::try_from(d).map_err(|_| Error::Format("dimension overflows usize".into()))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("shape product overflows".into()))?;
        let data = read_values(&mut r, dtype, n)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Self::new(dtype, shape, data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated file".into())
    } else {
        Error::Io(e)
    }
}

pub(crate) fn write_values<W: Write>(w: &mut W, dtype: DType, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * dtype.width());
    for &v in values {
        match dtype {
            DType::F32 => buf.write_f32::<LittleEndian>(v as f32)?,
            DType::F64 => buf.write_f64::<LittleEndian>(v)?,
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_values<R: Read>(r: &mut R, dtype: DType, n: usize) -> Result<Vec<f64>> {
    let bytes = n
        .checked_mul(dtype.width())
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let mut buf = Vec::new();
    r.by_ref().take(bytes as u64).read_to_end(&mut buf)?;
    if buf.len() != bytes {
        return Err(Error::Format(format!(
            "truncated payload: {} of {bytes} bytes",
            buf.len()
        )));
    }
    let mut cur = &buf[..];
    (0..n)
        .map(|_| {
            Ok(match dtype {
                DType::F32 => f64::from(cur.read_f32::<LittleEndian>()?),
                DType::F64 => cur.read_f64::<LittleEndian>()?,
            })
        })
        .collect()
}
