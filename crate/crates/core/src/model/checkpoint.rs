//! Model checkpoints.
//!
//! ```text
//! magic    4 bytes  "NMCK"
//! version  u16 LE   1
//! dtype    u8       2 (f64)
//! config   u32 LE length + JSON-encoded ModelConfig
//! count    u32 LE number of tensors
//! table    per tensor: u16 LE name length, name, u8 rank, rank × u64 LE
//! payload  every tensor in table order, little-endian
//! ```
//!
//! Parameters are trained in `f64` and stored as `f64`, so reloading a
//! checkpoint reproduces the trained model bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Model, ModelConfig};
use crate::data::tensor::{read_values, write_values, DType};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<f64>,
}

fn eof(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        let model = Model::new(config.clone())?;
        if params.len() != model.num_params() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                params.len(),
                model.num_params()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.config.clone())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let model = self.model()?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u16::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u8(DType::F64.tag())?;
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_u32::<LittleEndian>(cfg.len() as u32)?;
        w.write_all(&cfg)?;
        let entries = model.layout().entries();
        w.write_u32::<LittleEndian>(entries.len() as u32)?;
        for e in entries {
            w.write_u16::<LittleEndian>(e.name.len() as u16)?;
            w.write_all(e.name.as_bytes())?;
            w.write_u8(e.shape.len() as u8)?;
            for &d in &e.shape {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
        }
        write_values(&mut w, DType::F64, &self.params)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint and checks its tensor table against the layout
    /// implied by the stored configuration.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad magic, not a checkpoint".into()));
        }
        let version = r.read_u16::<LittleEndian>().map_err(eof)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let dtype = DType::from_tag(r.read_u8().map_err(eof)?)?;
        let len = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let mut cfg = vec![0u8; len];
        r.read_exact(&mut cfg).map_err(eof)?;
        let config: ModelConfig =
            serde_json::from_slice(&cfg).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let model = Model::new(config.clone()).map_err(|e| Error::Format(e.to_string()))?;
        let count = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let entries = model.layout().entries();
        if count != entries.len() {
            return Err(Error::Format(format!(
                "{count} tensors stored, configuration implies {}",
                entries.len()
            )));
        }
        for e in entries {
            let n = r.read_u16::<LittleEndian>().map_err(eof)? as usize;
            let mut name = vec![0u8; n];
            r.read_exact(&mut name).map_err(eof)?;
            let rank = r.read_u8().map_err(eof)? as usize;
            let shape = (0..rank)
                .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize).map_err(eof))
                .collect::<Result<Vec<_>>>()?;
            if name != e.name.as_bytes() || shape != e.shape {
                return Err(Error::Format(format!(
                    "tensor {:?} {shape:?} does not match {} {:?}",
                    String::from_utf8_lossy(&name),
                    e.name,
                    e.shape
                )));
            }
        }
        let params = read_values(&mut r, dtype, model.num_params())?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Ok(Self { config, params })
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
