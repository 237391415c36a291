//! Embedding file format.
//!
//! Line 1: `<count> <dim>`. Lines 2..count+1: `<label> <v1> ... <vdim>`.
//! Optional trailing comment lines `# seed <u64>` and `# config <hex>`
//! record provenance; loaders that don't care can stop after the rows.
//! Values print in Rust's shortest round-trip decimal form, so a save/load
//! cycle is bitwise exact.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::walker::WalkConfig;

use super::TrainConfig;

/// Provenance carried in the file's trailing comments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmbeddingMeta {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

/// Stable fingerprint of the walk + train configuration, for the embedding
/// file header and run manifests.
pub fn config_fingerprint(walk: &WalkConfig, train: &TrainConfig) -> String {
    let rendering = format!(
        "p={} q={} walk_length={} walks_per_node={} weight_transform={} \
         dim={} epochs={} learning_rate={} negatives={} window={} resample={}",
        walk.p,
        walk.q,
        walk.walk_length,
        walk.walks_per_node,
        walk.weight_transform,
        train.dim,
        train.epochs,
        train.learning_rate,
        train.negatives_per_positive,
        train.window,
        train.resample_walks_each_epoch,
    );
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in rendering.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Write labeled vectors. Labels must be whitespace-free since the format is
/// space-separated.
pub fn save_embeddings(
    path: &Path,
    labels: &[String],
    matrix: &Array2<f64>,
    meta: &EmbeddingMeta,
) -> Result<()> {
    if labels.len() != matrix.nrows() {
        return Err(Error::usage(format!(
            "{} labels for {} embedding rows",
            labels.len(),
            matrix.nrows()
        )));
    }
    for label in labels {
        if label.is_empty() || label.chars().any(char::is_whitespace) {
            return Err(Error::data(format!(
                "label {label:?} cannot be stored in a space-separated format"
            )));
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    writeln!(out, "{} {}", matrix.nrows(), matrix.ncols()).map_err(io_err)?;
    for (label, row) in labels.iter().zip(matrix.rows()) {
        write!(out, "{label}").map_err(io_err)?;
        for v in row {
            write!(out, " {v}").map_err(io_err)?;
        }
        writeln!(out).map_err(io_err)?;
    }
    if let Some(seed) = meta.seed {
        writeln!(out, "# seed {seed}").map_err(io_err)?;
    }
    if let Some(hash) = &meta.config_hash {
        writeln!(out, "# config {hash}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Read an embedding file back; inverse of [`save_embeddings`].
pub fn load_embeddings(path: &Path) -> Result<(Vec<String>, Array2<f64>, EmbeddingMeta)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let bad = |msg: String| Error::data(format!("{}: {msg}", path.display()));

    let header = lines
        .next()
        .ok_or_else(|| bad("empty embedding file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("corrupt header {header:?}")))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("corrupt header {header:?}")))?;
    if parts.next().is_some() || dim == 0 {
        return Err(bad(format!("corrupt header {header:?}")));
    }

    let mut labels = Vec::with_capacity(count);
    let mut flat = Vec::with_capacity(count * dim);
    for i in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("expected {count} rows, found {i}")))?
            .map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let label = fields
            .next()
            .ok_or_else(|| bad(format!("row {}: empty line", i + 2)))?;
        labels.push(label.to_string());
        let mut got = 0usize;
        for field in fields {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(format!("row {}: bad value {field:?}", i + 2)))?;
            if !v.is_finite() {
                return Err(bad(format!("row {}: non-finite value", i + 2)));
            }
            flat.push(v);
            got += 1;
        }
        if got != dim {
            return Err(bad(format!(
                "row {}: {got} values, expected dim {dim}",
                i + 2
            )));
        }
    }

    let mut meta = EmbeddingMeta::default();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let Some(comment) = trimmed.strip_prefix('#') else {
            return Err(bad(format!("unexpected content after rows: {trimmed:?}")));
        };
        let mut words = comment.split_whitespace();
        match (words.next(), words.next()) {
            (Some("seed"), Some(v)) => meta.seed = v.parse().ok(),
            (Some("config"), Some(v)) => meta.config_hash = Some(v.to_string()),
            _ => {}
        }
    }

    let matrix = Array2::from_shape_vec((count, dim), flat).expect("shape checked per row");
    Ok((labels, matrix, meta))
}
