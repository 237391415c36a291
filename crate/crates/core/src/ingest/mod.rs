//! CSV ingestion for all tabular inputs, plus topology simplification and
//! zone-level network metrics.
//!
//! File formats (all UTF-8, `.` decimal separator):
//! - edges: `src,dst,weight`
//! - zone map: `node,zone`
//! - features: `zone,<name1>,...`; empty cell = missing
//! - shares: `zone,<mode1>,...,<modeM>`
//! - areas: `zone,area`

mod metrics;
mod simplify;

pub use metrics::{compute_network_metrics, NetworkMetrics};
pub use simplify::{prune_dead_ends, simplify_topology, PruneSummary, SimplifySummary};

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::EdgeInput;

/// Per-zone numeric features. `values` holds NaN where `missing` is true;
/// every non-missing value is finite.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub zone_ids: Vec<String>,
    pub column_names: Vec<String>,
    pub values: Array2<f64>,
    pub missing: Array2<bool>,
}

impl FeatureTable {
    pub fn new(
        zone_ids: Vec<String>,
        column_names: Vec<String>,
        values: Array2<f64>,
    ) -> Result<FeatureTable> {
        if values.nrows() != zone_ids.len() || values.ncols() != column_names.len() {
            return Err(Error::usage(format!(
                "feature matrix is {}x{} but there are {} zones and {} columns",
                values.nrows(),
                values.ncols(),
                zone_ids.len(),
                column_names.len()
            )));
        }
        check_unique("zone id", &zone_ids)?;
        check_unique("feature column", &column_names)?;
        for v in values.iter() {
            if v.is_infinite() {
                return Err(Error::data("feature values must be finite or missing"));
            }
        }
        let missing = values.map(|v| v.is_nan());
        Ok(FeatureTable {
            zone_ids,
            column_names,
            values,
            missing,
        })
    }

    pub fn n_zones(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.column_names.len()
    }
}

/// Per-zone fractional mode shares; every row sums to 1 after parser
/// renormalization.
#[derive(Debug, Clone)]
pub struct ModeShareTable {
    pub zone_ids: Vec<String>,
    pub mode_names: Vec<String>,
    pub shares: Array2<f64>,
}

impl ModeShareTable {
    /// Validate and renormalize rows whose sum falls within the survey
    /// rounding tolerance [0.98, 1.02].
    pub fn new(
        zone_ids: Vec<String>,
        mode_names: Vec<String>,
        mut shares: Array2<f64>,
    ) -> Result<ModeShareTable> {
        if shares.nrows() != zone_ids.len() || shares.ncols() != mode_names.len() {
            return Err(Error::usage(format!(
                "share matrix is {}x{} but there are {} zones and {} modes",
                shares.nrows(),
                shares.ncols(),
                zone_ids.len(),
                mode_names.len()
            )));
        }
        if mode_names.len() < 2 {
            return Err(Error::data("share table needs at least 2 modes"));
        }
        check_unique("zone id", &zone_ids)?;
        check_unique("mode name", &mode_names)?;
        for (i, mut row) in shares.rows_mut().into_iter().enumerate() {
            let mut sum = 0.0;
            for v in row.iter() {
                if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                    return Err(Error::data(format!(
                        "zone {}: share {v} outside [0, 1]",
                        zone_ids[i]
                    )));
                }
                sum += *v;
            }
            if !(0.98..=1.02).contains(&sum) {
                return Err(Error::data(format!(
                    "zone {}: shares sum to {sum}, outside the [0.98, 1.02] tolerance",
                    zone_ids[i]
                )));
            }
            row.mapv_inplace(|v| v / sum);
        }
        Ok(ModeShareTable {
            zone_ids,
            mode_names,
            shares,
        })
    }

    pub fn n_zones(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn n_modes(&self) -> usize {
        self.mode_names.len()
    }
}

fn check_unique(what: &str, items: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(items.len());
    for item in items {
        if !seen.insert(item.as_str()) {
            return Err(Error::data(format!("duplicate {what} {item:?}")));
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(r)
}

fn header_error(path: &Path, expected: &str, got: &csv::StringRecord) -> Error {
    Error::data(format!(
        "{}: expected header `{expected}`, found `{}`",
        path.display(),
        got.iter().collect::<Vec<_>>().join(",")
    ))
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_number(path: &Path, line: u64, field: &str, value: &str) -> Result<f64> {
    value.parse::<f64>().map_err(|_| {
        Error::data(format!(
            "{}: line {line}: {field} value {value:?} is not a number",
            path.display()
        ))
    })
}

/// Parse an edge CSV with header `src,dst,weight`. Row (line) numbers are
/// retained on the records for later diagnostics.
pub fn parse_edge_csv(path: &Path) -> Result<Vec<EdgeInput>> {
    let mut rdr = csv_reader(open(path)?);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() != 3 || &headers[0] != "src" || &headers[1] != "dst" || &headers[2] != "weight"
    {
        return Err(header_error(path, "src,dst,weight", &headers));
    }
    let mut edges = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        let weight = parse_number(path, line, "weight", &record[2])?;
        edges.push(EdgeInput {
            a: record[0].to_string(),
            b: record[1].to_string(),
            weight,
            row: line as usize,
        });
    }
    Ok(edges)
}

/// Parse a node-to-zone map CSV with header `node,zone`.
pub fn parse_zone_map_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = csv_reader(open(path)?);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() != 2 || &headers[0] != "node" || &headers[1] != "zone" {
        return Err(header_error(path, "node,zone", &headers));
    }
    let mut pairs = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        pairs.push((record[0].to_string(), record[1].to_string()));
    }
    Ok(pairs)
}

/// Parse a feature CSV with header `zone,<name1>,...`. Empty cells become
/// missing values.
pub fn parse_feature_csv(path: &Path) -> Result<FeatureTable> {
    let mut rdr = csv_reader(open(path)?);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 || &headers[0] != "zone" {
        return Err(header_error(path, "zone,<name1>,...", &headers));
    }
    let column_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut zone_ids = Vec::new();
    let mut flat = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        zone_ids.push(record[0].to_string());
        for (j, name) in column_names.iter().enumerate() {
            let raw = &record[j + 1];
            if raw.is_empty() {
                flat.push(f64::NAN);
            } else {
                let v = parse_number(path, line, name, raw)?;
                if v.is_infinite() {
                    return Err(Error::data(format!(
                        "{}: line {line}: {name} value is not finite",
                        path.display()
                    )));
                }
                flat.push(v);
            }
        }
    }
    let values = Array2::from_shape_vec((zone_ids.len(), column_names.len()), flat)
        .expect("shape matches construction");
    FeatureTable::new(zone_ids, column_names, values)
}

/// Parse a share CSV with header `zone,<mode1>,...`. When `expected_modes`
/// is given the header's mode list must match it exactly.
pub fn parse_share_csv(path: &Path, expected_modes: Option<&[String]>) -> Result<ModeShareTable> {
    let mut rdr = csv_reader(open(path)?);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 3 || &headers[0] != "zone" {
        return Err(header_error(path, "zone,<mode1>,...,<modeM>", &headers));
    }
    let mode_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if let Some(expected) = expected_modes {
        if mode_names != expected {
            return Err(Error::data(format!(
                "{}: mode columns [{}] do not match the expected [{}]",
                path.display(),
                mode_names.join(", "),
                expected.join(", ")
            )));
        }
    }
    let mut zone_ids = Vec::new();
    let mut flat = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        zone_ids.push(record[0].to_string());
        for (j, name) in mode_names.iter().enumerate() {
            flat.push(parse_number(path, line, name, &record[j + 1])?);
        }
    }
    let shares = Array2::from_shape_vec((zone_ids.len(), mode_names.len()), flat)
        .expect("shape matches construction");
    ModeShareTable::new(zone_ids, mode_names, shares)
}

/// Parse an area CSV with header `zone,area`; areas must be positive.
pub fn parse_area_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv_reader(open(path)?);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() != 2 || &headers[0] != "zone" || &headers[1] != "area" {
        return Err(header_error(path, "zone,area", &headers));
    }
    let mut areas = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        let zone = record[0].to_string();
        if !seen.insert(zone.clone()) {
            return Err(Error::data(format!(
                "{}: line {line}: duplicate zone {zone}",
                path.display()
            )));
        }
        let area = parse_number(path, line, "area", &record[1])?;
        if !area.is_finite() || area <= 0.0 {
            return Err(Error::data(format!(
                "{}: line {line}: area {area} must be positive",
                path.display()
            )));
        }
        areas.push((zone, area));
    }
    Ok(areas)
}

/// Render an edge list back to CSV in graph edge order.
pub fn edge_csv_string(graph: &crate::graph::Graph) -> String {
    let mut out = String::from("src,dst,weight\n");
    for (a, b, w) in graph.edges() {
        out.push_str(&format!("{},{},{w}\n", graph.label(a), graph.label(b)));
    }
    out
}

/// Render a node-to-zone map to CSV.
pub fn zone_map_csv_string(pairs: &[(String, String)]) -> String {
    let mut out = String::from("node,zone\n");
    for (node, zone) in pairs {
        out.push_str(&format!("{node},{zone}\n"));
    }
    out
}

/// Render a feature table to CSV; missing values become empty cells.
pub fn feature_csv_string(t: &FeatureTable) -> String {
    let mut out = String::from("zone");
    for name in &t.column_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, zone) in t.zone_ids.iter().enumerate() {
        out.push_str(zone);
        for j in 0..t.column_names.len() {
            out.push(',');
            let v = t.values[[i, j]];
            if !v.is_nan() {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Render a mode-share table to CSV.
pub fn share_csv_string(t: &ModeShareTable) -> String {
    let mut out = String::from("zone");
    for name in &t.mode_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, zone) in t.zone_ids.iter().enumerate() {
        out.push_str(zone);
        for j in 0..t.mode_names.len() {
            out.push_str(&format!(",{}", t.shares[[i, j]]));
        }
        out.push('\n');
    }
    out
}

/// Render a zone-area list to CSV.
pub fn area_csv_string(areas: &[(String, f64)]) -> String {
    let mut out = String::from("zone,area\n");
    for (zone, area) in areas {
        out.push_str(&format!("{zone},{area}\n"));
    }
    out
}
