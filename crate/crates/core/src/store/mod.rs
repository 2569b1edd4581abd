//! Labeled embedding vectors: the gallery/query data model shared by every
//! other module, plus CSV and binary (de)serialization.
//!
//! Class and camera labels are arbitrary strings on disk. At load time they
//! are remapped to dense integer ids ([`ClassId`], [`CameraId`]) so that the
//! rest of the crate can index arrays directly. The original labels stay
//! available through [`LabelMap`].

mod binary;
mod csv_format;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use binary::{read_binary, write_binary, BINARY_MAGIC, BINARY_VERSION};
pub use csv_format::{read_csv, write_csv};

/// Dense class identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

/// Dense camera identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Errors raised while building, loading or saving an [`EmbeddingSet`].
#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("dimension mismatch at record `{id}` (line {line}): expected {expected}, found {found}")]
    DimensionMismatch {
        id: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at record `{id}` (line {line}), coordinate {coord}")]
    NonFinite { id: String, line: usize, coord: usize },
    #[error("missing `{column}` column (line {line})")]
    MissingColumn { column: &'static str, line: usize },
    #[error("duplicate record id `{id}` (line {line})")]
    DuplicateId { id: String, line: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated binary file: {0}")]
    Truncated(String),
    #[error("unknown class {0}")]
    UnknownClass(ClassId),
    #[error("unknown embedding file format `{0}` (expected csv or binary)")]
    UnknownFormat(String),
}

/// On-disk layout of an embedding file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// Guess the format from a file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

impl FromStr for Format {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "binary" | "bin" | "gcpe" => Ok(Format::Binary),
            other => Err(StoreError::UnknownFormat(other.to_string())),
        }
    }
}

/// Bidirectional mapping between string labels and dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelMap {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for LabelMap {
    fn from(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i as u32)).collect();
        LabelMap { labels, index }
    }
}

impl From<LabelMap> for Vec<String> {
    fn from(map: LabelMap) -> Self {
        map.labels
    }
}

impl LabelMap {
    /// Labels `"0"`, `"1"`, … `"n-1"`.
    pub fn numeric(n: usize) -> Self {
        (0..n).map(|i| i.to_string()).collect::<Vec<_>>().into()
    }

    /// Build a map from a collection of labels. Labels are ordered numerically
    /// when every label parses as an unsigned integer, lexicographically
    /// otherwise.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut map = LabelMap::default();
        map.extend(labels);
        map
    }

    /// Append labels not yet present, in the same canonical order as
    /// [`LabelMap::from_labels`]. Existing ids are never changed.
    ///
    /// While every label is a plain decimal integer, label `k` gets id `k`
    /// (unused values in between are padded), so numeric labels survive a
    /// save/load cycle with the same ids.
    pub fn extend<'a>(&mut self, labels: impl IntoIterator<Item = &'a str>) {
        let mut fresh: Vec<&str> = labels
            .into_iter()
            .filter(|l| !self.index.contains_key(*l))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        if self.is_identity() {
            let values: Option<Vec<usize>> = fresh.iter().map(|l| canonical_index(l)).collect();
            if let Some(max) = values.and_then(|v| v.into_iter().max()) {
                for k in self.labels.len()..=max {
                    self.push(&k.to_string());
                }
                return;
            }
        }
        sort_labels(&mut fresh);
        for label in fresh {
            self.push(label);
        }
    }

    fn push(&mut self, label: &str) -> u32 {
        let id = self.labels.len() as u32;
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// True when every label is the decimal spelling of a `u32`.
    pub fn all_numeric(&self) -> bool {
        self.labels.iter().all(|l| l.parse::<u32>().is_ok())
    }
}

/// Largest numeric label that is identity-mapped; beyond this labels are
/// packed densely instead.
const MAX_IDENTITY_LABEL: usize = 1 << 20;

/// `Some(k)` when `label` is exactly the decimal rendering of a small `k`.
fn canonical_index(label: &str) -> Option<usize> {
    let k: usize = label.parse().ok()?;
    (k <= MAX_IDENTITY_LABEL && k.to_string() == label).then_some(k)
}

impl LabelMap {
    fn is_identity(&self) -> bool {
        self.labels
            .iter()
            .enumerate()
            .all(|(i, l)| canonical_index(l) == Some(i))
    }
}

fn sort_labels(labels: &mut [&str]) {
    if labels.iter().all(|l| l.parse::<u64>().is_ok()) {
        labels.sort_by_key(|l| l.parse::<u64>().unwrap_or(u64::MAX));
    } else {
        labels.sort_unstable();
    }
}

/// One gallery or query item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
    pub class_id: ClassId,
    pub camera_id: CameraId,
}

/// A record whose class and camera are still string labels, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub id: String,
    pub class: String,
    pub camera: String,
    pub vector: Vec<f64>,
    /// 1-based data line (the CSV header is line 0) or record ordinal.
    pub line: usize,
}

/// Immutable, indexed collection of [`EmbeddingRecord`]s of uniform dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    records: Vec<EmbeddingRecord>,
    dim: usize,
    class_labels: LabelMap,
    camera_labels: LabelMap,
    class_index: BTreeMap<ClassId, Vec<usize>>,
    camera_index: BTreeMap<(ClassId, CameraId), Vec<usize>>,
}

impl EmbeddingSet {
    /// Build a set from records that already carry dense ids.
    ///
    /// Every record must have the same dimension, finite coordinates, a unique
    /// id, and class/camera ids inside the given label maps.
    pub fn new(
        records: Vec<EmbeddingRecord>,
        class_labels: LabelMap,
        camera_labels: LabelMap,
    ) -> Result<Self, StoreError> {
        let first = records.first().ok_or_else(|| StoreError::Empty("no records".into()))?;
        let dim = first.vector.len();
        if dim == 0 {
            return Err(StoreError::DimensionMismatch {
                id: first.id.clone(),
                line: 1,
                expected: 1,
                found: 0,
            });
        }
        let mut seen = HashSet::with_capacity(records.len());
        let mut class_index: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        let mut camera_index: BTreeMap<(ClassId, CameraId), Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            if r.vector.len() != dim {
                return Err(StoreError::DimensionMismatch {
                    id: r.id.clone(),
                    line,
                    expected: dim,
                    found: r.vector.len(),
                });
            }
            if let Some(coord) = r.vector.iter().position(|v| !v.is_finite()) {
                return Err(StoreError::NonFinite {
                    id: r.id.clone(),
                    line,
                    coord,
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(StoreError::DuplicateId { id: r.id.clone(), line });
            }
            if r.class_id.0 as usize >= class_labels.len() {
                return Err(StoreError::UnknownClass(r.class_id));
            }
            if r.camera_id.0 as usize >= camera_labels.len() {
                return Err(StoreError::Parse {
                    line,
                    message: format!("camera id {} has no label", r.camera_id),
                });
            }
            class_index.entry(r.class_id).or_default().push(i);
            camera_index.entry((r.class_id, r.camera_id)).or_default().push(i);
        }
        Ok(EmbeddingSet {
            records,
            dim,
            class_labels,
            camera_labels,
            class_index,
            camera_index,
        })
    }

    /// Build a set whose labels are the decimal spellings of the ids.
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self, StoreError> {
        let n_classes = records.iter().map(|r| r.class_id.0 + 1).max().unwrap_or(0);
        let n_cameras = records.iter().map(|r| r.camera_id.0 + 1).max().unwrap_or(0);
        Self::new(
            records,
            LabelMap::numeric(n_classes as usize),
            LabelMap::numeric(n_cameras as usize),
        )
    }

    /// Build a set from string-labeled rows, remapping labels to dense ids.
    ///
    /// With `base`, labels are resolved against an existing pair of maps (for
    /// example a query file aligned to its gallery); unseen labels are appended.
    pub fn from_labeled_rows(rows: Vec<LabeledRow>, base: Option<(&LabelMap, &LabelMap)>) -> Result<Self, StoreError> {
        let first = rows.first().ok_or_else(|| StoreError::Empty("no records".into()))?;
        let dim = first.vector.len();
        let mut seen = HashSet::with_capacity(rows.len());
        for row in &rows {
            if row.vector.len() != dim {
                return Err(StoreError::DimensionMismatch {
                    id: row.id.clone(),
                    line: row.line,
                    expected: dim,
                    found: row.vector.len(),
                });
            }
            if let Some(coord) = row.vector.iter().position(|v| !v.is_finite()) {
                return Err(StoreError::NonFinite {
                    id: row.id.clone(),
                    line: row.line,
                    coord,
                });
            }
            if !seen.insert(row.id.as_str()) {
                return Err(StoreError::DuplicateId {
                    id: row.id.clone(),
                    line: row.line,
                });
            }
        }
        let (mut classes, mut cameras) = match base {
            Some((c, k)) => (c.clone(), k.clone()),
            None => (LabelMap::default(), LabelMap::default()),
        };
        classes.extend(rows.iter().map(|r| r.class.as_str()));
        cameras.extend(rows.iter().map(|r| r.camera.as_str()));
        let records = rows
            .into_iter()
            .map(|row| EmbeddingRecord {
                class_id: ClassId(classes.id(&row.class).expect("label inserted above")),
                camera_id: CameraId(cameras.id(&row.camera).expect("label inserted above")),
                id: row.id,
                vector: row.vector,
            })
            .collect();
        Self::new(records, classes, cameras)
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn record(&self, index: usize) -> &EmbeddingRecord {
        &self.records[index]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_labels(&self) -> &LabelMap {
        &self.class_labels
    }

    pub fn camera_labels(&self) -> &LabelMap {
        &self.camera_labels
    }

    /// Number of distinct camera ids in the label space.
    pub fn n_cameras(&self) -> usize {
        self.camera_labels.len()
    }

    /// Classes that have at least one record, ascending.
    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.class_index.keys().copied()
    }

    pub fn n_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn contains_class(&self, class: ClassId) -> bool {
        self.class_index.contains_key(&class)
    }

    /// Record indices of `class`, in record order.
    pub fn class_indices(&self, class: ClassId) -> Result<&[usize], StoreError> {
        self.class_index
            .get(&class)
            .map(Vec::as_slice)
            .ok_or(StoreError::UnknownClass(class))
    }

    /// Record indices of `class` captured by `camera` (empty if none).
    pub fn camera_indices(&self, class: ClassId, camera: CameraId) -> &[usize] {
        self.camera_index
            .get(&(class, camera))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// `|G_c|`, or 0 for an absent class.
    pub fn class_size(&self, class: ClassId) -> usize {
        self.class_index.get(&class).map_or(0, Vec::len)
    }

    /// All records of `class`.
    pub fn class_view(&self, class: ClassId) -> Result<Vec<&EmbeddingRecord>, StoreError> {
        Ok(self.class_indices(class)?.iter().map(|&i| &self.records[i]).collect())
    }

    /// Records of `class` whose camera differs from `excluded`.
    pub fn camera_filtered_view(
        &self,
        class: ClassId,
        excluded: CameraId,
    ) -> Result<Vec<&EmbeddingRecord>, StoreError> {
        Ok(self
            .class_indices(class)?
            .iter()
            .map(|&i| &self.records[i])
            .filter(|r| r.camera_id != excluded)
            .collect())
    }

    /// Vectors of `class` in record order.
    pub fn class_vectors(&self, class: ClassId) -> Result<Vec<&[f64]>, StoreError> {
        Ok(self
            .class_indices(class)?
            .iter()
            .map(|&i| self.records[i].vector.as_slice())
            .collect())
    }

    /// Per-class record counts.
    pub fn class_sizes(&self) -> BTreeMap<ClassId, usize> {
        self.class_index.iter().map(|(c, v)| (*c, v.len())).collect()
    }
}

/// Load an embedding set from `path`.
pub fn load_embedding_set(path: &Path, format: Format) -> Result<EmbeddingSet, StoreError> {
    load_rows(path, format).and_then(|rows| EmbeddingSet::from_labeled_rows(rows, None))
}

/// Load an embedding set whose labels are resolved against `reference`'s label
/// maps, so that the same class label yields the same [`ClassId`] in both sets.
pub fn load_embedding_set_aligned(
    path: &Path,
    format: Format,
    reference: &EmbeddingSet,
) -> Result<EmbeddingSet, StoreError> {
    load_rows(path, format).and_then(|rows| {
        EmbeddingSet::from_labeled_rows(rows, Some((reference.class_labels(), reference.camera_labels())))
    })
}

fn load_rows(path: &Path, format: Format) -> Result<Vec<LabeledRow>, StoreError> {
    let bytes = std::fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.is_empty() {
        return Err(StoreError::Empty(format!("{} is empty", path.display())));
    }
    match format {
        Format::Csv => read_csv(bytes.as_slice()),
        Format::Binary => read_binary(&bytes),
    }
}

/// Write `set` to `path`.
pub fn save_embedding_set(set: &EmbeddingSet, path: &Path, format: Format) -> Result<(), StoreError> {
    let bytes = match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(set, &mut buf)?;
            buf
        }
        Format::Binary => write_binary(set),
    };
    std::fs::write(path, bytes).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, class: u32, camera: u32, v: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            vector: v.to_vec(),
            class_id: ClassId(class),
            camera_id: CameraId(camera),
        }
    }

    fn sample() -> EmbeddingSet {
        EmbeddingSet::from_records(vec![
            rec("a", 0, 1, &[0.0, 0.0]),
            rec("b", 0, 1, &[1.0, 0.0]),
            rec("c", 0, 2, &[0.0, 1.0]),
            rec("d", 1, 0, &[5.0, 5.0]),
        ])
        .unwrap()
    }

    #[test]
    fn camera_filter_drops_excluded_camera() {
        let set = sample();
        let kept = set.camera_filtered_view(ClassId(0), CameraId(1)).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].camera_id, CameraId(2));
    }

    #[test]
    fn camera_filter_absent_camera_is_noop() {
        let set = sample();
        let kept = set.camera_filtered_view(ClassId(0), CameraId(0)).unwrap();
        assert_eq!(kept.len(), 3);
    }

    #[test]
    fn camera_filter_can_empty_a_class() {
        let set = sample();
        let kept = set.camera_filtered_view(ClassId(1), CameraId(0)).unwrap();
        assert!(kept.is_empty());
    }

    #[test]
    fn unknown_class_is_an_error() {
        let set = sample();
        assert!(matches!(
            set.class_view(ClassId(7)),
            Err(StoreError::UnknownClass(ClassId(7)))
        ));
    }

    #[test]
    fn rejects_duplicates_and_non_finite() {
        let dup = EmbeddingSet::from_records(vec![rec("a", 0, 0, &[0.0]), rec("a", 0, 0, &[1.0])]);
        assert!(matches!(dup, Err(StoreError::DuplicateId { line: 2, .. })));
        let nan = EmbeddingSet::from_records(vec![rec("a", 0, 0, &[0.0, f64::NAN])]);
        assert!(matches!(nan, Err(StoreError::NonFinite { coord: 1, .. })));
    }

    #[test]
    fn labels_are_ordered_numerically_when_possible() {
        let map = LabelMap::from_labels(["10", "2", "7"]);
        assert_eq!(map.id("2"), Some(2));
        assert_eq!(map.id("10"), Some(10));
        let map = LabelMap::from_labels(["10", "02", "7"]);
        assert_eq!(map.labels(), ["02", "7", "10"]);
        let map = LabelMap::from_labels(["bob", "alice"]);
        assert_eq!(map.labels(), ["alice", "bob"]);
    }

    #[test]
    fn aligned_labels_keep_existing_ids() {
        let mut map = LabelMap::from_labels(["b", "c"]);
        map.extend(["a", "c"]);
        assert_eq!(map.id("b"), Some(0));
        assert_eq!(map.id("c"), Some(1));
        assert_eq!(map.id("a"), Some(2));
    }

    #[test]
    fn indices_partition_records() {
        let set = sample();
        let mut all: Vec<usize> = set
            .class_ids()
            .flat_map(|c| set.class_indices(c).unwrap().to_vec())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..set.len()).collect::<Vec<_>>());
        assert_eq!(set.camera_indices(ClassId(0), CameraId(1)), &[0, 1]);
    }
}
