//! `id,class,camera,f0,f1,...,f{D-1}` text format.

use std::io::{Read, Write};

use super::{EmbeddingSet, LabeledRow, StoreError};

const ID_COLUMN: &str = "id";
const CLASS_COLUMN: &str = "class";
const CAMERA_COLUMN: &str = "camera";

fn csv_error(line: usize, err: csv::Error) -> StoreError {
    StoreError::Parse {
        line,
        message: err.to_string(),
    }
}

/// Parse CSV rows. The dimension is taken from the first data line and
/// enforced on the rest; line numbers count data rows starting at 1.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<LabeledRow>, StoreError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers().map_err(|e| csv_error(0, e))?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(StoreError::Empty("csv has no header".into()));
    }
    for (pos, column) in [ID_COLUMN, CLASS_COLUMN, CAMERA_COLUMN].into_iter().enumerate() {
        if header.get(pos) != Some(column) {
            return Err(StoreError::MissingColumn { column, line: 0 });
        }
    }

    let mut rows = Vec::new();
    let mut dim = None;
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| csv_error(line, e))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let id = record.get(0).unwrap_or_default().to_string();
        let class = match record.get(1) {
            Some(c) if !c.is_empty() => c.to_string(),
            _ => {
                return Err(StoreError::MissingColumn {
                    column: CLASS_COLUMN,
                    line,
                })
            }
        };
        let camera = match record.get(2) {
            Some(c) if !c.is_empty() => c.to_string(),
            _ => {
                return Err(StoreError::MissingColumn {
                    column: CAMERA_COLUMN,
                    line,
                })
            }
        };
        let vector = record
            .iter()
            .skip(3)
            .enumerate()
            .map(|(coord, field)| {
                field.parse::<f64>().map_err(|e| StoreError::Parse {
                    line,
                    message: format!("record `{id}` coordinate {coord}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let expected = *dim.get_or_insert(vector.len());
        if vector.len() != expected || expected == 0 {
            return Err(StoreError::DimensionMismatch {
                id,
                line,
                expected: expected.max(1),
                found: vector.len(),
            });
        }
        if let Some(coord) = vector.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite { id, line, coord });
        }
        rows.push(LabeledRow {
            id,
            class,
            camera,
            vector,
            line,
        });
    }
    if rows.is_empty() {
        return Err(StoreError::Empty("csv has no data rows".into()));
    }
    Ok(rows)
}

/// Write `set` with 17 significant digits per coordinate, which round-trips
/// every finite `f64` exactly.
pub fn write_csv<W: Write>(set: &EmbeddingSet, output: W) -> Result<(), StoreError> {
    let io_err = |e: csv::Error| StoreError::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e),
    };
    let mut writer = csv::WriterBuilder::new().from_writer(output);
    let mut header = vec![
        ID_COLUMN.to_string(),
        CLASS_COLUMN.to_string(),
        CAMERA_COLUMN.to_string(),
    ];
    header.extend((0..set.dim()).map(|i| format!("f{i}")));
    writer.write_record(&header).map_err(io_err)?;
    for r in set.records() {
        let mut fields = Vec::with_capacity(3 + set.dim());
        fields.push(r.id.clone());
        fields.push(set.class_labels().label(r.class_id.0).unwrap_or_default().to_string());
        fields.push(set.camera_labels().label(r.camera_id.0).unwrap_or_default().to_string());
        fields.extend(r.vector.iter().map(|v| format!("{v:.16e}")));
        writer.write_record(&fields).map_err(io_err)?;
    }
    writer.flush().map_err(|source| StoreError::Io {
        path: "<csv>".into(),
        source,
    })
}
