//! Dataset metadata ingestion, validation, and normalization.
//!
//! Records from multiple repositories are pulled into a single in-memory
//! [`Catalog`]. The on-disk format is JSON Lines: one record object per
//! line, UTF-8, dates as ISO-8601 `YYYY-MM-DD`, bounding boxes as
//! `[west, south, east, north]` arrays. The catalog is immutable after
//! ingestion and safe for unlimited concurrent readers.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

/// Repository a record was harvested from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Cmr,
    Onestop,
    Cmip6,
    Era5,
    #[default]
    Other,
}

/// Geographic bounding box in degrees, serialized as
/// `[west, south, east, north]`.
///
/// `west <= east` is not required: boxes crossing the antimeridian wrap
/// around. Latitudes must satisfy `-90 <= south <= north <= 90`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub west: f64,
    pub south: f64,
    pub east: f64,
    pub north: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox {
            west: a[0],
            south: a[1],
            east: a[2],
            north: a[3],
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.west, b.south, b.east, b.north]
    }
}

impl BBox {
    /// Longitude span as up to two linear intervals, unwrapping
    /// antimeridian-crossing boxes.
    fn lon_intervals(&self) -> Vec<(f64, f64)> {
        if self.west <= self.east {
            vec![(self.west, self.east)]
        } else {
            vec![(self.west, 180.0), (-180.0, self.east)]
        }
    }

    /// Whether two boxes overlap (boundary contact counts).
    pub fn intersects(&self, other: &BBox) -> bool {
        let lat_overlap = self.south <= other.north && other.south <= self.north;
        if !lat_overlap {
            return false;
        }
        self.lon_intervals().iter().any(|(a0, a1)| {
            other
                .lon_intervals()
                .iter()
                .any(|(b0, b1)| a0 <= b1 && b0 <= a1)
        })
    }
}

/// One dataset metadata entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    /// Unique short-name identifier within a catalog.
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub variables: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal_start: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal_end: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(default)]
    pub urls: Vec<String>,
}

impl CatalogRecord {
    /// The text the retrieval paths index: title, summary, variables, and
    /// keywords concatenated into a single unweighted field.
    pub fn indexed_text(&self) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(2 + self.variables.len() + self.keywords.len());
        parts.push(&self.title);
        parts.push(&self.summary);
        parts.extend(self.variables.iter().map(String::as_str));
        parts.extend(self.keywords.iter().map(String::as_str));
        parts.retain(|s| !s.is_empty());
        parts.join(" ")
    }
}

/// A failed record invariant. Validation never throws; it reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// `id` is empty.
    EmptyId,
    /// `temporal_start > temporal_end`.
    TemporalOrder,
    /// `south > north`.
    LatitudeOrder,
    /// A latitude lies outside `[-90, 90]`.
    LatitudeRange,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "empty id"),
            Violation::TemporalOrder => write!(f, "temporal order: temporal_start > temporal_end"),
            Violation::LatitudeOrder => write!(f, "latitude order: south > north"),
            Violation::LatitudeRange => write!(f, "latitude range: outside [-90, 90]"),
        }
    }
}

/// Check every record invariant, returning one entry per failure.
pub fn validate_record(record: &CatalogRecord) -> Vec<Violation> {
    let mut violations = Vec::new();
    if record.id.is_empty() {
        violations.push(Violation::EmptyId);
    }
    if let (Some(start), Some(end)) = (record.temporal_start, record.temporal_end) {
        if start > end {
            violations.push(Violation::TemporalOrder);
        }
    }
    if let Some(bbox) = &record.bbox {
        if bbox.south > bbox.north {
            violations.push(Violation::LatitudeOrder);
        }
        if !(-90.0..=90.0).contains(&bbox.south) || !(-90.0..=90.0).contains(&bbox.north) {
            violations.push(Violation::LatitudeRange);
        }
    }
    violations
}

/// Errors raised during catalog ingestion.
#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("invalid record {id:?} on line {line}: {details}")]
    InvalidRecord {
        id: String,
        line: usize,
        details: String,
    },
    #[error("duplicate id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("cannot write catalog {path}: {source}")]
    WriteIo {
        path: String,
        source: std::io::Error,
    },
}

/// On-disk catalog encoding. JSON Lines is the only wire format today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CatalogFormat {
    #[default]
    JsonLines,
}

/// Immutable, ordered collection of [`CatalogRecord`]s with id lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    records: Vec<CatalogRecord>,
    by_id: HashMap<String, usize>,
}

/// Accumulates records during ingestion, tracking the source line of each
/// id so duplicate errors can name both occurrences.
#[derive(Debug, Default)]
struct CatalogBuilder {
    catalog: Catalog,
    line_of_id: HashMap<String, usize>,
}

impl CatalogBuilder {
    fn push(&mut self, record: CatalogRecord, line: usize) -> Result<(), CatalogError> {
        let violations = validate_record(&record);
        if !violations.is_empty() {
            let details = violations
                .iter()
                .map(Violation::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            return Err(CatalogError::InvalidRecord {
                id: record.id,
                line,
                details,
            });
        }
        if let Some(&first_line) = self.line_of_id.get(&record.id) {
            return Err(CatalogError::DuplicateId {
                id: record.id,
                first_line,
                second_line: line,
            });
        }
        self.line_of_id.insert(record.id.clone(), line);
        self.catalog
            .by_id
            .insert(record.id.clone(), self.catalog.records.len());
        self.catalog.records.push(record);
        Ok(())
    }
}

impl Catalog {
    /// Build a catalog from records, enforcing id uniqueness and record
    /// invariants. Line numbers in errors are 1-based positions in the
    /// input sequence.
    pub fn from_records(
        records: impl IntoIterator<Item = CatalogRecord>,
    ) -> Result<Self, CatalogError> {
        let mut builder = CatalogBuilder::default();
        for (i, record) in records.into_iter().enumerate() {
            builder.push(record, i + 1)?;
        }
        Ok(builder.catalog)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in ingestion order.
    pub fn records(&self) -> &[CatalogRecord] {
        &self.records
    }

    pub fn get(&self, position: usize) -> Option<&CatalogRecord> {
        self.records.get(position)
    }

    pub fn by_id(&self, id: &str) -> Option<&CatalogRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn position_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    /// Serialize to JSON Lines (inverse of [`ingest_records`]).
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CatalogError> {
        let io_err = |source| CatalogError::WriteIo {
            path: path.display().to_string(),
            source,
        };
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        for record in &self.records {
            let line = serde_json::to_string(record).expect("record serializes");
            writeln!(file, "{line}").map_err(io_err)?;
        }
        file.flush().map_err(io_err)
    }
}

/// Ingest a newline-delimited record file into a catalog.
///
/// Every line must hold one syntactically valid record; ingestion enforces
/// record invariants and id uniqueness, so all records in the returned
/// catalog validate cleanly. Whitespace-only lines are skipped.
pub fn ingest_records(path: &Path, format: CatalogFormat) -> Result<Catalog, CatalogError> {
    let CatalogFormat::JsonLines = format;
    let file = std::fs::File::open(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut builder = CatalogBuilder::default();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let text = line.map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let record: CatalogRecord =
            serde_json::from_str(&text).map_err(|e| CatalogError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        builder.push(record, line_no)?;
    }
    Ok(builder.catalog)
}

/// Errors raised while loading a variable map.
#[derive(Debug, Error)]
pub enum VariableMapError {
    #[error("cannot read variable map {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("variable map is not a JSON object of string to string: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("canonical name {0:?} is not a fixed point of the map")]
    NotFixedPoint(String),
}

/// Alias -> canonical variable-name table. Lookup is case-insensitive and
/// canonical names are fixed points of the map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VariableMap {
    // keys lowercased at construction
    entries: BTreeMap<String, String>,
}

const DEFAULT_VARIABLE_MAP: &str = include_str!("../assets/variable_map.json");

impl VariableMap {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Built-in alias table covering common precipitation, soil moisture,
    /// land surface temperature, and elevation synonyms.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_VARIABLE_MAP).expect("built-in variable map is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, VariableMapError> {
        let raw: BTreeMap<String, String> = serde_json::from_str(json)?;
        Self::from_entries(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self, VariableMapError> {
        let text = std::fs::read_to_string(path).map_err(|source| VariableMapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_entries(raw: BTreeMap<String, String>) -> Result<Self, VariableMapError> {
        let entries: BTreeMap<String, String> = raw
            .into_iter()
            .map(|(alias, canonical)| (alias.to_lowercase(), canonical))
            .collect();
        let map = Self { entries };
        for canonical in map.entries.values() {
            if map.canonicalize(canonical) != *canonical {
                return Err(VariableMapError::NotFixedPoint(canonical.clone()));
            }
        }
        Ok(map)
    }

    /// Canonical form of a variable name; unknown names pass through
    /// unchanged.
    pub fn canonicalize(&self, name: &str) -> String {
        match self.entries.get(&name.to_lowercase()) {
            Some(canonical) => canonical.clone(),
            None => name.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Replace each variable name by its canonical form when an alias matches
/// (case-insensitive), deduplicating while preserving first occurrence.
/// All other fields are unchanged.
pub fn normalize_variables(record: &CatalogRecord, map: &VariableMap) -> CatalogRecord {
    let mut seen = std::collections::HashSet::new();
    let variables = record
        .variables
        .iter()
        .map(|v| map.canonicalize(v))
        .filter(|v| seen.insert(v.clone()))
        .collect();
    CatalogRecord {
        variables,
        ..record.clone()
    }
}
