//! Model checkpoint format.
//!
//! ```text
//! "GCPM" | u32 version | u32 len + config JSON
//! | u32 tensor count | per tensor: u32 len + name, u32 rank, rank × u64 dims, u64 offset
//! | u64 value count | values as f64 little-endian
//! ```
//! Offsets count `f64` values from the start of the data block.

use std::path::Path;

use super::{GcpConfig, GcpModel, ModelError, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GCPM";
const VERSION: u32 = 1;

pub fn write_checkpoint(model: &GcpModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).expect("config serializes");
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);

    let manifest = model.params.manifest();
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, shape) in &manifest {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += shape.iter().product::<usize>() as u64;
    }
    let flat = model.params.to_flat();
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<GcpModel, ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("magic {magic:?} is not GCPM")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let config: GcpConfig = serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("config: {e}")))?;
    config.validate()?;
    let mut params = ModelParams::zeros(&config);
    let expected = params.manifest();

    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(bad(format!("{count} tensors, config implies {}", expected.len())));
    }
    let mut offset = 0u64;
    for (name, shape) in &expected {
        let n = r.u32()? as usize;
        let found = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| bad(e.to_string()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let at = r.u64()?;
        if &found != name || &dims != shape || at != offset {
            return Err(bad(format!(
                "tensor `{found}` {dims:?} at {at} does not match `{name}` {shape:?} at {offset}"
            )));
        }
        offset += shape.iter().product::<usize>() as u64;
    }
    let total = r.u64()?;
    if total != offset {
        return Err(bad(format!("{total} values, manifest implies {offset}")));
    }
    let data = r.take(total as usize * 8)?;
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let flat: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    params.assign_flat(&flat);
    if !params.all_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok(GcpModel { config, params })
}

pub fn save_checkpoint(model: &GcpModel, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, write_checkpoint(model)).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<GcpModel, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&bytes)
}
