//! Binary checkpoint container.
//!
//! ```text
//! magic        8 bytes  "KANSAMCK"
//! version      u32 LE
//! config       u32 LE length + JSON-encoded ModelConfig
//! tensor count u32 LE
//! per tensor:  u16 LE name length, UTF-8 name,
//!              u8 partition (0 frozen, 1 tunable), u8 dtype (1 = f64 LE),
//!              u8 rank, rank x u32 LE dims, data
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::Partition;
use crate::tensor::Tensor;

use super::{ModelConfig, SaliencyModel};

const MAGIC: &[u8; 8] = b"KANSAMCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn write_checkpoint(model: &SaliencyModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config())
        .map_err(|e| Error::format("checkpoint", format!("config encoding failed: {e}")))?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let store = model.store();
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(match p.partition {
            Partition::Frozen => 0,
            Partition::Tunable => 1,
        });
        out.push(DTYPE_F64);
        out.push(p.value.ndim() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format("checkpoint", format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<SaliencyModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| Error::format("checkpoint", "file too short for header"))? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic bytes"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("version {version} is not supported (expected {CHECKPOINT_VERSION})"),
        ));
    }
    let clen = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(clen)?).map_err(|e| Error::format("checkpoint", format!("config: {e}")))?;
    let mut model = SaliencyModel::new(config, 0)?;
    let count = r.u32()? as usize;
    if count != model.store().len() {
        return Err(Error::format(
            "checkpoint",
            format!("{count} tensors stored but the config defines {}", model.store().len()),
        ));
    }
    for i in 0..count {
        let nlen = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::format("checkpoint", format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let partition = match r.u8()? {
            0 => Partition::Frozen,
            1 => Partition::Tunable,
            other => return Err(Error::format("checkpoint", format!("{name}: partition tag {other}"))),
        };
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::format("checkpoint", format!("{name}: unsupported dtype {dtype}")));
        }
        let rank = r.u8()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

        let id =
            model.store().find(&name).ok_or_else(|| Error::format("checkpoint", format!("unknown tensor {name}")))?;
        let slot = model.store().get(id);
        if slot.value.shape() != shape.as_slice() {
            return Err(Error::format(
                "checkpoint",
                format!("{name}: stored shape {shape:?} disagrees with config shape {:?}", slot.value.shape()),
            ));
        }
        if slot.partition != partition {
            return Err(Error::format("checkpoint", format!("{name}: partition label disagrees with config")));
        }
        *model.store_mut().value_mut(id) = Tensor::new(&shape, data)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &SaliencyModel, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SaliencyModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
