//! File formats: weight grids, feature grids, and deterministic JSON output.
//!
//! * weights CSV: rows `u,v,w`, optional header line
//! * weights JSON: `{"height": H, "width": W, "weights": [row-major]}`
//! * features CSV: rows `u,v,f1,…,fD`, optional header line
//! * features JSON descriptor: `{"height": H, "width": W, "dim": D,
//!   "payload": "<path>", "format": "csv" | "f64le"}`; the payload holds one
//!   row of `D` values per cell in row-major order, and relative paths resolve
//!   against the descriptor's directory.

use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::basis::FeatureGrid;
use crate::em::{GridObservation, WeightedDataset};
use crate::error::{Error, Result};
use crate::gauss2d::Vec2;

/// Reads numeric CSV rows, skipping blank lines and a non-numeric first row.
fn numeric_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Parse(format!(
                    "line {}: non-numeric field in {:?}",
                    i + 1,
                    record.iter().collect::<Vec<_>>()
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    Ok(rows)
}

pub fn parse_weights_csv(text: &str) -> Result<WeightedDataset> {
    let rows = numeric_rows(text)?;
    let mut observations = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != 3 {
            return Err(Error::Parse(format!(
                "row {}: expected u,v,w, got {} fields",
                i + 1,
                row.len()
            )));
        }
        observations.push(GridObservation {
            location: Vec2::new(row[0], row[1]),
            weight: row[2],
        });
    }
    WeightedDataset::new(observations)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightGridFile {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

pub fn parse_weights_json(text: &str) -> Result<WeightedDataset> {
    let file: WeightGridFile = serde_json::from_str(text)?;
    WeightedDataset::from_grid(file.height, file.width, &file.weights)
}

/// Dispatches on content: a leading `{` means JSON, anything else CSV.
pub fn parse_weights(text: &str) -> Result<WeightedDataset> {
    if text.trim_start().starts_with('{') {
        parse_weights_json(text)
    } else {
        parse_weights_csv(text)
    }
}

pub fn parse_features_csv(text: &str) -> Result<FeatureGrid> {
    let rows = numeric_rows(text)?;
    let width = rows[0].len();
    if width < 3 {
        return Err(Error::Parse("feature rows need u,v and at least one feature".into()));
    }
    let dim = width - 2;
    let mut locations = Vec::with_capacity(rows.len());
    let mut features = DMatrix::zeros(dim, rows.len());
    for (l, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Parse(format!(
                "row {}: expected {width} fields, got {}",
                l + 1,
                row.len()
            )));
        }
        locations.push(Vec2::new(row[0], row[1]));
        for d in 0..dim {
            features[(d, l)] = row[d + 2];
        }
    }
    FeatureGrid::new(locations, features)
}

/// Writes `u,v,f1,…,fD` rows with 17 significant digits.
pub fn features_to_csv(grid: &FeatureGrid) -> String {
    let mut out = String::new();
    for (l, x) in grid.locations().iter().enumerate() {
        out.push_str(&format!("{:.16e},{:.16e}", x.u, x.v));
        for d in 0..grid.dim() {
            out.push_str(&format!(",{:.16e}", grid.features()[(d, l)]));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadFormat {
    Csv,
    F64le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub payload: String,
    pub format: PayloadFormat,
}

/// Builds a cell-centered feature grid from a descriptor and its payload bytes.
pub fn features_from_payload(desc: &FeatureDescriptor, payload: &[u8]) -> Result<FeatureGrid> {
    let cells = desc
        .height
        .checked_mul(desc.width)
        .filter(|&c| c > 0)
        .ok_or_else(|| Error::Parse("descriptor grid must be non-empty".into()))?;
    if desc.dim == 0 {
        return Err(Error::Parse("descriptor dim must be at least 1".into()));
    }
    let expected = cells
        .checked_mul(desc.dim)
        .ok_or_else(|| Error::Parse("descriptor dimensions overflow".into()))?;
    let values: Vec<f64> = match desc.format {
        PayloadFormat::F64le => {
            if payload.len() != expected * 8 {
                return Err(Error::Parse(format!(
                    "binary payload has {} bytes, expected {}",
                    payload.len(),
                    expected * 8
                )));
            }
            payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8 bytes")))
                .collect()
        }
        PayloadFormat::Csv => {
            let text = std::str::from_utf8(payload).map_err(|e| Error::Parse(e.to_string()))?;
            let rows = numeric_rows(text)?;
            if rows.len() != cells || rows.iter().any(|r| r.len() != desc.dim) {
                return Err(Error::Parse(format!(
                    "CSV payload must have {cells} rows of {} values",
                    desc.dim
                )));
            }
            rows.concat()
        }
    };
    // Row-major (cell, feature) values into a D × L matrix.
    let features = DMatrix::from_fn(desc.dim, cells, |d, l| values[l * desc.dim + d]);
    FeatureGrid::from_cells(desc.height, desc.width, features)
}

/// Loads a feature grid from CSV or from a JSON descriptor.
pub fn load_feature_grid(path: &Path) -> Result<FeatureGrid> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        let desc: FeatureDescriptor = serde_json::from_str(&text)?;
        let payload_path = path.parent().unwrap_or(Path::new(".")).join(&desc.payload);
        let payload = std::fs::read(payload_path)?;
        features_from_payload(&desc, &payload)
    } else {
        parse_features_csv(&text)
    }
}

/// Pretty-printed JSON whose floats carry 17 significant digits.
struct FixedPrecision<'a>(PrettyFormatter<'a>);

impl Formatter for FixedPrecision<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes with 17-significant-digit floats; non-finite floats become `null`.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedPrecision(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}
