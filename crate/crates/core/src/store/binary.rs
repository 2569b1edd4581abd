//! Little-endian binary layout:
//!
//! ```text
//! "GCPE" | u32 version | u32 count | u32 dim
//! per record: u32 id_len | id bytes (UTF-8) | u32 class | u32 camera | dim x f64
//! ```
//!
//! Class and camera fields hold the label itself when every label of the set
//! is numeric, and the dense id otherwise.

use super::{EmbeddingSet, LabeledRow, StoreError};

pub const BINARY_MAGIC: [u8; 4] = *b"GCPE";
pub const BINARY_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(StoreError::Truncated(format!(
                "need {n} bytes for {what} at offset {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, StoreError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, StoreError> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn read_binary(bytes: &[u8]) -> Result<Vec<LabeledRow>, StoreError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != BINARY_MAGIC {
        return Err(StoreError::BadMagic {
            found: magic,
            expected: BINARY_MAGIC,
        });
    }
    let version = cur.u32("version")?;
    if version != BINARY_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let count = cur.u32("record count")? as usize;
    let dim = cur.u32("dimension")? as usize;
    if count == 0 {
        return Err(StoreError::Empty("binary file has zero records".into()));
    }
    let mut rows = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let line = i + 1;
        let id_len = cur.u32("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|e| StoreError::Parse {
                line,
                message: format!("record id is not UTF-8: {e}"),
            })?
            .to_string();
        let class = cur.u32("class")?;
        let camera = cur.u32("camera")?;
        let vector = (0..dim).map(|_| cur.f64("vector")).collect::<Result<Vec<_>, _>>()?;
        if let Some(coord) = vector.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite { id, line, coord });
        }
        rows.push(LabeledRow {
            id,
            class: class.to_string(),
            camera: camera.to_string(),
            vector,
            line,
        });
    }
    if cur.pos != bytes.len() {
        return Err(StoreError::Parse {
            line: count,
            message: format!("{} trailing bytes after last record", bytes.len() - cur.pos),
        });
    }
    Ok(rows)
}

pub fn write_binary(set: &EmbeddingSet) -> Vec<u8> {
    let numeric_classes = set.class_labels().all_numeric();
    let numeric_cameras = set.camera_labels().all_numeric();
    let mut out = Vec::with_capacity(16 + set.len() * (16 + 8 * set.dim()));
    out.extend_from_slice(&BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    for r in set.records() {
        out.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
        out.extend_from_slice(r.id.as_bytes());
        let class = if numeric_classes {
            set.class_labels()
                .label(r.class_id.0)
                .and_then(|l| l.parse().ok())
                .unwrap_or(r.class_id.0)
        } else {
            r.class_id.0
        };
        let camera = if numeric_cameras {
            set.camera_labels()
                .label(r.camera_id.0)
                .and_then(|l| l.parse().ok())
                .unwrap_or(r.camera_id.0)
        } else {
            r.camera_id.0
        };
        out.extend_from_slice(&class.to_le_bytes());
        out.extend_from_slice(&camera.to_le_bytes());
        for v in &r.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{CameraId, ClassId, EmbeddingRecord};

    fn small() -> EmbeddingSet {
        EmbeddingSet::from_records(vec![
            EmbeddingRecord {
                id: "q".into(),
                vector: vec![0.1, -2.5e-300],
                class_id: ClassId(1),
                camera_id: CameraId(0),
            },
            EmbeddingRecord {
                id: "é".into(),
                vector: vec![1.0 / 3.0, 7.0],
                class_id: ClassId(0),
                camera_id: CameraId(2),
            },
        ])
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = write_binary(&small());
        assert_eq!(&bytes[..4], b"GCPE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let set = small();
        let rows = read_binary(&write_binary(&set)).unwrap();
        let back = EmbeddingSet::from_labeled_rows(rows, None).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = write_binary(&small());
        bytes[0] = b'X';
        assert!(matches!(read_binary(&bytes), Err(StoreError::BadMagic { .. })));
        let bytes = write_binary(&small());
        assert!(matches!(
            read_binary(&bytes[..bytes.len() - 3]),
            Err(StoreError::Truncated(_))
        ));
        let mut bytes = write_binary(&small());
        bytes[4] = 9;
        assert!(matches!(read_binary(&bytes), Err(StoreError::UnsupportedVersion(9))));
    }
}
