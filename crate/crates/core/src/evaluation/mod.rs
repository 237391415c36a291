//! Train/test splitting, fit metrics, correlation analysis, clustering,
//! and quantile inspection of zone readouts.

pub mod kmeans;
pub mod report;

pub use kmeans::{clusters_csv, kmeans, kmeans_rows, KMeansResult};
pub use report::{
    evaluate, EvaluationCell, EvaluationGrid, EvaluationReport,
};

use std::borrow::Cow;
use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::embedding::ZoneEmbedding;
use crate::error::{Error, Result};
use crate::ingest::{FeatureTable, ModeShareTable};

/// Train/test split parameters.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            seed: 1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction.is_finite()
            && self.train_fraction > 0.0
            && self.train_fraction < 1.0)
        {
            return Err(Error::usage(format!(
                "train fraction {} must lie strictly between 0 and 1",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Seeded shuffle of 0..n, then a prefix of round(n * fraction) rows for
/// training. Both sides come back sorted.
pub fn split(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    if n < 2 {
        return Err(Error::usage(format!(
            "cannot split {n} rows into train and test"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);
    let n_train = (n as f64 * spec.train_fraction).round() as usize;
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Coefficient of determination, 1 - SS_res / SS_tot.
pub fn r_squared(y: &[f64], f: &[f64]) -> Result<f64> {
    if y.len() != f.len() {
        return Err(Error::usage(format!(
            "target has {} entries but prediction has {}",
            y.len(),
            f.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::usage("coefficient of determination needs at least 2 points"));
    }
    if y.iter().chain(f.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "coefficient of determination over non-finite values",
        ));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::numerical(
            "coefficient of determination undefined for a constant target",
        ));
    }
    let ss_res: f64 = y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Product-moment correlation with pairwise deletion of missing entries.
#[derive(Debug, Clone, Copy)]
pub struct PearsonResult {
    pub r: f64,
    /// True when either side was constant (or too few complete pairs), in
    /// which case `r` is reported as 0.
    pub degenerate: bool,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<PearsonResult> {
    if a.len() != b.len() {
        return Err(Error::usage(format!(
            "correlation over vectors of different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::usage("correlation needs at least 2 entries"));
    }
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| !x.is_nan() && !y.is_nan())
        .map(|(x, y)| (*x, *y))
        .collect();
    if pairs.len() < 2 {
        return Ok(PearsonResult {
            r: 0.0,
            degenerate: true,
        });
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in &pairs {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(PearsonResult {
            r: 0.0,
            degenerate: true,
        });
    }
    Ok(PearsonResult {
        r: (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Symmetric Pearson matrix over baseline features, mode shares, and the
/// scalar zone readout.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub variable_names: Vec<String>,
    pub matrix: Array2<f64>,
    /// Variables involved in at least one degenerate (constant) pairing.
    pub degenerate_variables: Vec<String>,
}

pub const READOUT_VARIABLE: &str = "embd_readout";

/// Checks the named tables cover exactly the same zones and returns the
/// sorted canonical zone order used for all row alignment.
pub(crate) fn canonical_zones(tables: &[(&str, &[String])]) -> Result<Vec<String>> {
    let (first_name, first) = tables[0];
    let reference: BTreeSet<&String> = first.iter().collect();
    for (name, zones) in &tables[1..] {
        let set: BTreeSet<&String> = zones.iter().collect();
        if set != reference {
            let missing: Vec<&str> = reference
                .difference(&set)
                .take(5)
                .map(|z| z.as_str())
                .collect();
            let extra: Vec<&str> = set
                .difference(&reference)
                .take(5)
                .map(|z| z.as_str())
                .collect();
            let mut parts = Vec::new();
            if !missing.is_empty() {
                parts.push(format!("missing from {name}: {}", missing.join(", ")));
            }
            if !extra.is_empty() {
                parts.push(format!("absent from {first_name}: {}", extra.join(", ")));
            }
            return Err(Error::data(format!(
                "zone sets disagree between {first_name} and {name} ({})",
                parts.join("; ")
            )));
        }
    }
    Ok(reference.into_iter().cloned().collect())
}

pub fn correlation_matrix(
    features: &FeatureTable,
    shares: &ModeShareTable,
    embedding: &ZoneEmbedding,
) -> Result<CorrelationMatrix> {
    let zones = canonical_zones(&[
        ("features", &features.zone_ids),
        ("shares", &shares.zone_ids),
        ("embedding", &embedding.zone_ids),
    ])?;
    if zones.len() < 2 {
        return Err(Error::usage("correlation needs at least 2 zones"));
    }

    let mut variable_names: Vec<String> = features.column_names.clone();
    variable_names.extend(shares.mode_names.iter().cloned());
    variable_names.push(READOUT_VARIABLE.to_string());
    {
        let mut seen = BTreeSet::new();
        for v in &variable_names {
            if !seen.insert(v.as_str()) {
                return Err(Error::data(format!(
                    "variable name {v:?} appears in more than one table"
                )));
            }
        }
    }

    // One column vector per variable, rows in canonical zone order.
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(variable_names.len());
    let feat_row = index_of(&features.zone_ids);
    let share_row = index_of(&shares.zone_ids);
    let emb_row = index_of(&embedding.zone_ids);
    for j in 0..features.column_names.len() {
        columns.push(
            zones
                .iter()
                .map(|z| features.values[[feat_row[z.as_str()], j]])
                .collect(),
        );
    }
    for j in 0..shares.mode_names.len() {
        columns.push(
            zones
                .iter()
                .map(|z| shares.shares[[share_row[z.as_str()], j]])
                .collect(),
        );
    }
    columns.push(
        zones
            .iter()
            .map(|z| embedding.embd_readout[emb_row[z.as_str()]])
            .collect(),
    );

    let v = columns.len();
    let mut matrix = Array2::zeros((v, v));
    for i in 0..v {
        matrix[[i, i]] = 1.0;
        for j in (i + 1)..v {
            let p = pearson(&columns[i], &columns[j])?;
            matrix[[i, j]] = p.r;
            matrix[[j, i]] = p.r;
        }
    }
    // A variable is degenerate when it is constant over its non-missing
    // entries (every r involving it was forced to 0).
    let degenerate_variables = variable_names
        .iter()
        .zip(&columns)
        .filter(|(_, col)| {
            let present: Vec<f64> = col.iter().copied().filter(|x| !x.is_nan()).collect();
            present.len() < 2 || present.iter().all(|&x| x == present[0])
        })
        .map(|(name, _)| name.clone())
        .collect();
    Ok(CorrelationMatrix {
        variable_names,
        matrix,
        degenerate_variables,
    })
}

fn index_of(labels: &[String]) -> std::collections::HashMap<&str, usize> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect()
}

impl CorrelationMatrix {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.variable_names.iter().position(|v| v == name)
    }

    pub fn r(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.matrix[[self.index(a)?, self.index(b)?]])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable");
        for name in &self.variable_names {
            out.push(',');
            out.push_str(&csv_field(name));
        }
        out.push('\n');
        for (i, name) in self.variable_names.iter().enumerate() {
            out.push_str(&csv_field(name));
            for j in 0..self.variable_names.len() {
                out.push(',');
                out.push_str(&self.matrix[[i, j]].to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Keeps a variable iff |r| against EVERY listed mode reaches `threshold`.
/// Mode columns themselves (and nothing else) are excluded from candidacy.
pub fn select_features(
    corr: &CorrelationMatrix,
    mode_names: &[String],
    threshold: f64,
) -> Result<Vec<String>> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::usage(format!(
            "selection threshold {threshold} must be non-negative"
        )));
    }
    let mode_idx: Vec<usize> = mode_names
        .iter()
        .map(|m| {
            corr.index(m).ok_or_else(|| {
                Error::usage(format!("mode {m:?} is not a variable of the correlation matrix"))
            })
        })
        .collect::<Result<_>>()?;
    let mode_set: BTreeSet<usize> = mode_idx.iter().copied().collect();
    let mut kept = Vec::new();
    for (i, name) in corr.variable_names.iter().enumerate() {
        if mode_set.contains(&i) {
            continue;
        }
        if mode_idx.iter().all(|&m| corr.matrix[[i, m]].abs() >= threshold) {
            kept.push(name.clone());
        }
    }
    Ok(kept)
}

pub const READOUT_QUANTILES: [f64; 5] = [0.05, 0.25, 0.50, 0.75, 0.95];

#[derive(Debug, Clone)]
pub struct QuantileEntry {
    pub quantile: f64,
    pub zone: String,
    pub value: f64,
}

/// Nearest-rank (lower) quantiles of the per-zone scalar readout: the zone
/// at sorted rank floor(q * (N - 1)), value ties broken by zone id.
pub fn quantile_zones(zone_ids: &[String], values: &[f64]) -> Result<Vec<QuantileEntry>> {
    if zone_ids.len() != values.len() {
        return Err(Error::usage(format!(
            "{} zones but {} readout values",
            zone_ids.len(),
            values.len()
        )));
    }
    if zone_ids.is_empty() {
        return Err(Error::usage("quantiles need at least 1 zone"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("readout values must be finite"));
    }
    let mut order: Vec<usize> = (0..zone_ids.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("finite values")
            .then_with(|| zone_ids[a].cmp(&zone_ids[b]))
    });
    let n = zone_ids.len();
    Ok(READOUT_QUANTILES
        .iter()
        .map(|&q| {
            let rank = (q * (n - 1) as f64).floor() as usize;
            let i = order[rank];
            QuantileEntry {
                quantile: q,
                zone: zone_ids[i].clone(),
                value: values[i],
            }
        })
        .collect())
}

pub fn quantiles_csv(entries: &[QuantileEntry]) -> String {
    let mut out = String::from("quantile,zone,embd_readout\n");
    for e in entries {
        out.push_str(&format!(
            "{},{},{}\n",
            e.quantile,
            csv_field(&e.zone),
            e.value
        ));
    }
    out
}

/// Minimal CSV quoting: wrap fields containing delimiters or quotes.
pub(crate) fn csv_field(s: &str) -> Cow<'_, str> {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        Cow::Owned(format!("\"{}\"", s.replace('"', "\"\"")))
    } else {
        Cow::Borrowed(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    #[test]
    fn split_counts_and_determinism() {
        let spec = SplitSpec {
            train_fraction: 0.7,
            seed: 9,
        };
        let (train, test) = split(10, &spec).unwrap();
        assert_eq!(train.len(), 7);
        assert_eq!(test.len(), 3);
        let mut union: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        union.sort_unstable();
        assert_eq!(union, (0..10).collect::<Vec<_>>());
        let (t2, s2) = split(10, &spec).unwrap();
        assert_eq!(train, t2);
        assert_eq!(test, s2);
        let (t3, _) = split(
            10,
            &SplitSpec {
                train_fraction: 0.7,
                seed: 10,
            },
        )
        .unwrap();
        assert_ne!(train, t3, "different seed should reshuffle");
        assert!(split(1, &spec).is_err());
        assert!(split(
            10,
            &SplitSpec {
                train_fraction: 1.0,
                seed: 1
            }
        )
        .is_err());
    }

    #[test]
    fn r_squared_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_abs_diff_eq!(r_squared(&y, &y).unwrap(), 1.0);
        let mean = [2.0, 2.0, 2.0];
        assert_abs_diff_eq!(r_squared(&y, &mean).unwrap(), 0.0);
        let f = [1.0, 2.0, 4.0];
        assert_abs_diff_eq!(r_squared(&y, &f).unwrap(), 0.5);
        // Constant target is undefined.
        assert!(r_squared(&[5.0, 5.0], &[1.0, 2.0]).is_err());
        // Affine invariance with positive scale.
        let g = [1.3, 1.9, 3.4];
        let base = r_squared(&y, &g).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| 3.0 * v - 7.0).collect();
        let gs: Vec<f64> = g.iter().map(|v| 3.0 * v - 7.0).collect();
        assert_abs_diff_eq!(r_squared(&ys, &gs).unwrap(), base, epsilon = 1e-12);
    }

    #[test]
    fn pearson_examples_and_missing_pairs() {
        let a = [1.0, 2.0, 3.0];
        assert_abs_diff_eq!(pearson(&a, &a).unwrap().r, 1.0);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&a, &neg).unwrap().r, -1.0);
        let b = [2.0, 4.0, 7.0];
        assert_abs_diff_eq!(pearson(&a, &b).unwrap().r, 0.9934, epsilon = 1e-3);
        // A NaN drops its pair: remaining pairs are (1,2) and (3,4).
        let with_gap = [1.0, f64::NAN, 3.0];
        let other = [2.0, 100.0, 4.0];
        let p = pearson(&with_gap, &other).unwrap();
        assert!(!p.degenerate);
        assert_abs_diff_eq!(p.r, 1.0);
        // Constant side degenerates to 0 with the flag set.
        let flat = [5.0, 5.0, 5.0];
        let p = pearson(&flat, &a).unwrap();
        assert_eq!(p.r, 0.0);
        assert!(p.degenerate);
        // Positive affine invariance.
        let scaled: Vec<f64> = b.iter().map(|v| 10.0 * v + 3.0).collect();
        assert_abs_diff_eq!(
            pearson(&a, &scaled).unwrap().r,
            pearson(&a, &b).unwrap().r,
            epsilon = 1e-12
        );
    }

    fn small_tables() -> (FeatureTable, ModeShareTable, ZoneEmbedding) {
        let features = FeatureTable::new(
            vec!["z1".into(), "z2".into(), "z3".into(), "z4".into()],
            vec!["density".into(), "flat".into()],
            arr2(&[[1.0, 3.0], [2.0, 3.0], [3.0, 3.0], [4.0, 3.0]]),
        )
        .unwrap();
        let shares = ModeShareTable::new(
            vec!["z4".into(), "z3".into(), "z2".into(), "z1".into()],
            vec!["drive".into(), "walk".into()],
            arr2(&[[0.2, 0.8], [0.4, 0.6], [0.6, 0.4], [0.8, 0.2]]),
        )
        .unwrap();
        let embedding = ZoneEmbedding::from_parts(
            vec!["z1".into(), "z2".into(), "z3".into(), "z4".into()],
            arr2(&[[0.1, 0.3], [0.2, 0.4], [0.3, 0.5], [0.4, 0.6]]),
        );
        (features, shares, embedding)
    }

    #[test]
    fn correlation_matrix_is_symmetric_with_unit_diagonal() {
        let (features, shares, embedding) = small_tables();
        let corr = correlation_matrix(&features, &shares, &embedding).unwrap();
        assert_eq!(
            corr.variable_names,
            vec!["density", "flat", "drive", "walk", "embd_readout"]
        );
        let v = corr.variable_names.len();
        for i in 0..v {
            assert_abs_diff_eq!(corr.matrix[[i, i]], 1.0, epsilon = 1e-12);
            for j in 0..v {
                assert_abs_diff_eq!(
                    corr.matrix[[i, j]],
                    corr.matrix[[j, i]],
                    epsilon = 1e-12
                );
                assert!(corr.matrix[[i, j]].abs() <= 1.0 + 1e-12);
            }
        }
        // density rises zone by zone while drive falls: r = -1 after the
        // row alignment (shares arrive in reversed zone order).
        assert_abs_diff_eq!(corr.r("density", "drive").unwrap(), -1.0, epsilon = 1e-9);
        // The readout rises with density.
        assert_abs_diff_eq!(
            corr.r("density", "embd_readout").unwrap(),
            1.0,
            epsilon = 1e-9
        );
        assert_eq!(corr.degenerate_variables, vec!["flat".to_string()]);
    }

    #[test]
    fn correlation_matrix_rejects_zone_mismatch() {
        let (features, shares, _) = small_tables();
        let embedding = ZoneEmbedding::from_parts(
            vec!["z1".into(), "z2".into(), "z3".into()],
            arr2(&[[0.1], [0.2], [0.3]]),
        );
        let err = correlation_matrix(&features, &shares, &embedding).unwrap_err();
        assert!(err.to_string().contains("z4"), "{err}");
    }

    #[test]
    fn select_features_threshold_and_monotonicity() {
        let (features, shares, embedding) = small_tables();
        let corr = correlation_matrix(&features, &shares, &embedding).unwrap();
        let modes = vec!["drive".to_string(), "walk".to_string()];
        let strong = select_features(&corr, &modes, 0.5).unwrap();
        assert!(strong.contains(&"density".to_string()));
        assert!(strong.contains(&"embd_readout".to_string()));
        assert!(!strong.contains(&"flat".to_string()), "degenerate r=0 fails 0.5");
        // Threshold 0 keeps everything that is not a mode column.
        let all = select_features(&corr, &modes, 0.0).unwrap();
        assert_eq!(all, vec!["density", "flat", "embd_readout"]);
        // Monotonicity: higher threshold yields a subset.
        let mut prev = all;
        for t in [0.01, 0.3, 0.6, 0.9, 1.0] {
            let now = select_features(&corr, &modes, t).unwrap();
            assert!(
                now.iter().all(|f| prev.contains(f)),
                "threshold {t} added features"
            );
            prev = now;
        }
        assert!(select_features(&corr, &["bus".to_string()], 0.1).is_err());
    }

    #[test]
    fn quantile_ranks_follow_the_lower_nearest_rank_rule() {
        let zone_ids: Vec<String> = (0..100).map(|i| format!("z{i:03}")).collect();
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let q = quantile_zones(&zone_ids, &values).unwrap();
        assert_eq!(q[2].quantile, 0.5);
        assert_abs_diff_eq!(q[2].value, 49.0);
        // 20 zones at q=0.95: rank floor(0.95 * 19) = 18.
        let ids20: Vec<String> = (0..20).map(|i| format!("z{i:02}")).collect();
        let vals20: Vec<f64> = (0..20).map(|i| i as f64 * 10.0).collect();
        let q20 = quantile_zones(&ids20, &vals20).unwrap();
        assert_abs_diff_eq!(q20[4].value, 180.0);
        // Single zone is returned for every quantile.
        let single = quantile_zones(&["only".to_string()], &[3.0]).unwrap();
        assert_eq!(single.len(), 5);
        assert!(single.iter().all(|e| e.zone == "only"));
        // Ties broken by zone id order.
        let tied = quantile_zones(
            &["b".to_string(), "a".to_string()],
            &[1.0, 1.0],
        )
        .unwrap();
        assert_eq!(tied[0].zone, "a");
    }

    #[test]
    fn csv_outputs_are_stable_and_escaped() {
        let entries = vec![QuantileEntry {
            quantile: 0.05,
            zone: "tract,1".to_string(),
            value: 0.25,
        }];
        let csv = quantiles_csv(&entries);
        assert_eq!(csv, "quantile,zone,embd_readout\n0.05,\"tract,1\",0.25\n");
        let (features, shares, embedding) = small_tables();
        let corr = correlation_matrix(&features, &shares, &embedding).unwrap();
        let csv = corr.to_csv();
        assert!(csv.starts_with("variable,density,flat,drive,walk,embd_readout\n"));
        assert_eq!(csv.lines().count(), 6);
    }
}
