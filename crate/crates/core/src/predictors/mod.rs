//! Mode-share predictors and the design matrices they consume.
//!
//! A predictor sees one of three inputs: the baseline zone features, the
//! zone-level embedding, or their column-wise concatenation. Columns are
//! standardized with statistics taken from the training rows only; the
//! same transform is then applied everywhere, so test rows never leak into
//! the fit.

pub mod ensemble;
pub mod mnl;
pub mod tree;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::embedding::ZoneEmbedding;
use crate::error::{Error, Result};
use crate::ingest::{FeatureTable, ModeShareTable};

pub use ensemble::{
    forest_fit, gboost_fit, EnsembleKind, ForestParams, GBoostParams, ModeEnsemble,
    TreeEnsembleModel,
};
pub use mnl::{mnl_fit, mnl_predict, MnlModel, MnlOptions};
pub use tree::{fit_tree, Tree, TreeParams};

/// Which design matrix a predictor trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Baseline,
    Ger,
    Concat,
}

impl InputMode {
    pub const ALL: [InputMode; 3] = [InputMode::Baseline, InputMode::Ger, InputMode::Concat];

    pub fn as_str(&self) -> &'static str {
        match self {
            InputMode::Baseline => "baseline",
            InputMode::Ger => "ger",
            InputMode::Concat => "concat",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(InputMode::Baseline),
            "ger" => Ok(InputMode::Ger),
            "concat" => Ok(InputMode::Concat),
            other => Err(Error::usage(format!(
                "unknown input mode {other:?} (expected baseline, ger, or concat)"
            ))),
        }
    }
}

/// Which model family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Mnl,
    RandomForest,
    GradientBoost,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 3] = [
        PredictorKind::Mnl,
        PredictorKind::RandomForest,
        PredictorKind::GradientBoost,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PredictorKind::Mnl => "mnl",
            PredictorKind::RandomForest => "random_forest",
            PredictorKind::GradientBoost => "gradient_boost",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnl" => Ok(PredictorKind::Mnl),
            "random_forest" => Ok(PredictorKind::RandomForest),
            "gradient_boost" => Ok(PredictorKind::GradientBoost),
            other => Err(Error::usage(format!(
                "unknown predictor {other:?} (expected mnl, random_forest, or gradient_boost)"
            ))),
        }
    }
}

/// A design matrix with its row (zone) and column identities. Baseline
/// columns may contain NaN for missing cells; standardization imputes them.
#[derive(Debug, Clone)]
pub struct MixedInput {
    pub mode: InputMode,
    pub zone_ids: Vec<String>,
    pub design: Array2<f64>,
    pub column_names: Vec<String>,
}

fn embedding_column_names(dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("ger_{k}")).collect()
}

fn set_difference_note(missing: &[&String], label: &str) -> String {
    const SHOW: usize = 5;
    let shown: Vec<&str> = missing.iter().take(SHOW).map(|s| s.as_str()).collect();
    let suffix = if missing.len() > SHOW {
        format!(" and {} more", missing.len() - SHOW)
    } else {
        String::new()
    };
    format!("{} missing from {}: {}{}", missing.len(), label, shown.join(", "), suffix)
}

/// Assembles the requested design matrix.
///
/// `ger` uses the embedding alone (the feature table is ignored);
/// `baseline` uses the features alone; `concat` requires the two zone sets
/// to be identical and appends embedding columns to the feature columns,
/// rows ordered as in the feature table.
pub fn mix(
    features: &FeatureTable,
    embedding: &ZoneEmbedding,
    mode: InputMode,
) -> Result<MixedInput> {
    match mode {
        InputMode::Baseline => Ok(MixedInput {
            mode,
            zone_ids: features.zone_ids.clone(),
            design: features.values.clone(),
            column_names: features.column_names.clone(),
        }),
        InputMode::Ger => Ok(MixedInput {
            mode,
            zone_ids: embedding.zone_ids.clone(),
            design: embedding.matrix.clone(),
            column_names: embedding_column_names(embedding.dim()),
        }),
        InputMode::Concat => {
            let feature_set: BTreeSet<&String> = features.zone_ids.iter().collect();
            let emb_set: BTreeSet<&String> = embedding.zone_ids.iter().collect();
            if feature_set != emb_set {
                let only_features: Vec<&String> =
                    feature_set.difference(&emb_set).copied().collect();
                let only_emb: Vec<&String> = emb_set.difference(&feature_set).copied().collect();
                let mut parts = Vec::new();
                if !only_emb.is_empty() {
                    parts.push(set_difference_note(&only_emb, "features"));
                }
                if !only_features.is_empty() {
                    parts.push(set_difference_note(&only_features, "embedding"));
                }
                return Err(Error::data(format!(
                    "cannot concatenate: zone sets differ ({})",
                    parts.join("; ")
                )));
            }
            let emb_row: HashMap<&str, usize> = embedding
                .zone_ids
                .iter()
                .enumerate()
                .map(|(i, z)| (z.as_str(), i))
                .collect();
            let n = features.zone_ids.len();
            let fd = features.values.ncols();
            let ed = embedding.dim();
            let mut design = Array2::from_elem((n, fd + ed), f64::NAN);
            for (i, zone) in features.zone_ids.iter().enumerate() {
                for j in 0..fd {
                    design[[i, j]] = features.values[[i, j]];
                }
                let e = emb_row[zone.as_str()];
                for j in 0..ed {
                    design[[i, fd + j]] = embedding.matrix[[e, j]];
                }
            }
            let mut column_names = features.column_names.clone();
            column_names.extend(embedding_column_names(ed));
            Ok(MixedInput {
                mode,
                zone_ids: features.zone_ids.clone(),
                design,
                column_names,
            })
        }
    }
}

/// Column-wise z-scoring fitted on the training rows only. Missing cells
/// impute to the training mean (a standardized value of 0); columns that
/// are constant on the training rows carry no signal and are dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    /// Indices into the original design columns, in original order.
    pub kept: Vec<usize>,
    pub kept_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub dropped: Vec<String>,
    /// Missing cells among the training rows at fit time.
    pub train_missing_cells: usize,
}

impl Standardizer {
    pub fn fit(design: &Array2<f64>, column_names: &[String], train_rows: &[usize]) -> Result<Self> {
        if train_rows.is_empty() {
            return Err(Error::usage("cannot standardize with zero training rows"));
        }
        let d = design.ncols();
        debug_assert_eq!(column_names.len(), d);
        let mut kept = Vec::new();
        let mut kept_names = Vec::new();
        let mut mean = Vec::new();
        let mut std = Vec::new();
        let mut dropped = Vec::new();
        let mut train_missing_cells = 0;

        for j in 0..d {
            let mut vals = Vec::with_capacity(train_rows.len());
            for &r in train_rows {
                let v = design[[r, j]];
                if v.is_nan() {
                    train_missing_cells += 1;
                } else {
                    vals.push(v);
                }
            }
            if vals.is_empty() {
                dropped.push(column_names[j].clone());
                continue;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            let s = var.sqrt();
            if !(s.is_finite() && s > 0.0) {
                dropped.push(column_names[j].clone());
                continue;
            }
            kept.push(j);
            kept_names.push(column_names[j].clone());
            mean.push(m);
            std.push(s);
        }

        Ok(Standardizer {
            kept,
            kept_names,
            mean,
            std,
            dropped,
            train_missing_cells,
        })
    }

    pub fn n_output_columns(&self) -> usize {
        self.kept.len()
    }

    /// Standardizes every row of `design` (any row set, same columns).
    pub fn transform(&self, design: &Array2<f64>) -> Array2<f64> {
        let n = design.nrows();
        let mut out = Array2::zeros((n, self.kept.len()));
        for i in 0..n {
            for (jj, (&j, (&m, &s))) in self
                .kept
                .iter()
                .zip(self.mean.iter().zip(self.std.iter()))
                .enumerate()
            {
                let v = design[[i, j]];
                out[[i, jj]] = if v.is_nan() { 0.0 } else { (v - m) / s };
            }
        }
        out
    }
}

/// One fitted predictor plus everything needed to apply it to raw inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedPredictor {
    pub kind: PredictorKind,
    pub input_mode: InputMode,
    pub mode_names: Vec<String>,
    pub standardizer: Standardizer,
    pub model: PredictorModel,
    /// Short parameter summary for reports.
    pub params: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PredictorModel {
    Mnl(MnlModel),
    Trees(TreeEnsembleModel),
}

impl FittedPredictor {
    /// Predicted shares for raw (unstandardized) design rows.
    pub fn predict(&self, design_raw: &Array2<f64>) -> Array2<f64> {
        let z = self.standardizer.transform(design_raw);
        match &self.model {
            PredictorModel::Mnl(m) => m.predict(&z),
            PredictorModel::Trees(t) => t.predict(&z),
        }
    }
}

/// Reorders share rows to match `zone_ids`; every zone must be present.
pub fn align_shares(shares: &ModeShareTable, zone_ids: &[String]) -> Result<Array2<f64>> {
    let row_of: HashMap<&str, usize> = shares
        .zone_ids
        .iter()
        .enumerate()
        .map(|(i, z)| (z.as_str(), i))
        .collect();
    let m = shares.mode_names.len();
    let mut out = Array2::zeros((zone_ids.len(), m));
    for (i, zone) in zone_ids.iter().enumerate() {
        let Some(&r) = row_of.get(zone.as_str()) else {
            return Err(Error::data(format!("zone {zone:?} has no mode-share row")));
        };
        for j in 0..m {
            out[[i, j]] = shares.shares[[r, j]];
        }
    }
    Ok(out)
}

/// Hyper-parameters for whichever predictor family ends up being fitted.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub mnl: MnlOptions,
    pub forest: ForestParams,
    pub gboost: GBoostParams,
}

/// Fit one predictor on every row of the given tables (no held-out split;
/// use the evaluation module to measure out-of-sample fit).
pub fn fit_predictor(
    kind: PredictorKind,
    input_mode: InputMode,
    features: &FeatureTable,
    embedding: &ZoneEmbedding,
    shares: &ModeShareTable,
    opts: &FitOptions,
) -> Result<FittedPredictor> {
    let mixed = mix(features, embedding, input_mode)?;
    let y = align_shares(shares, &mixed.zone_ids)?;
    let all_rows: Vec<usize> = (0..mixed.zone_ids.len()).collect();
    let standardizer = Standardizer::fit(&mixed.design, &mixed.column_names, &all_rows)?;
    let z = standardizer.transform(&mixed.design);
    let (model, params) = match kind {
        PredictorKind::Mnl => {
            let m = mnl_fit(&z, &y, &opts.mnl)?;
            let params = m.params_string();
            (PredictorModel::Mnl(m), params)
        }
        PredictorKind::RandomForest => {
            let m = forest_fit(&z, &y, &shares.mode_names, &opts.forest)?;
            (PredictorModel::Trees(m), opts.forest.params_string())
        }
        PredictorKind::GradientBoost => {
            let m = gboost_fit(&z, &y, &shares.mode_names, &opts.gboost)?;
            (PredictorModel::Trees(m), opts.gboost.params_string())
        }
    };
    Ok(FittedPredictor {
        kind,
        input_mode,
        mode_names: shares.mode_names.clone(),
        standardizer,
        model,
        params,
    })
}

pub fn save_model(path: &Path, model: &FittedPredictor) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let writer = BufWriter::new(file);
    serde_json::to_writer_pretty(writer, model)
        .map_err(|e| Error::data(format!("cannot serialize model: {e}")))
}

pub fn load_model(path: &Path) -> Result<FittedPredictor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    serde_json::from_reader(reader)
        .map_err(|e| Error::data(format!("cannot parse model file {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn feature_table() -> FeatureTable {
        FeatureTable::new(
            vec!["z1".into(), "z2".into(), "z3".into()],
            vec!["density".into(), "transit".into()],
            arr2(&[[1.0, 10.0], [2.0, f64::NAN], [3.0, 30.0]]),
        )
        .unwrap()
    }

    fn zone_embedding() -> ZoneEmbedding {
        ZoneEmbedding::from_parts(
            vec!["z1".into(), "z2".into(), "z3".into()],
            arr2(&[[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]),
        )
    }

    #[test]
    fn mix_baseline_passes_features_through() {
        let m = mix(&feature_table(), &zone_embedding(), InputMode::Baseline).unwrap();
        assert_eq!(m.column_names, vec!["density", "transit"]);
        assert_eq!(m.design.shape(), &[3, 2]);
        assert!(m.design[[1, 1]].is_nan());
    }

    #[test]
    fn mix_ger_ignores_features_entirely() {
        let emb = zone_embedding();
        let other_features = FeatureTable::new(
            vec!["totally".into(), "different".into()],
            vec!["x".into()],
            arr2(&[[1.0], [2.0]]),
        )
        .unwrap();
        let m = mix(&other_features, &emb, InputMode::Ger).unwrap();
        assert_eq!(m.zone_ids, vec!["z1", "z2", "z3"]);
        assert_eq!(m.column_names, vec!["ger_0", "ger_1"]);
        assert_abs_diff_eq!(m.design[[2, 1]], 0.6);
    }

    #[test]
    fn mix_concat_appends_columns_in_feature_row_order() {
        // Same zones, different order in the embedding.
        let emb = ZoneEmbedding::from_parts(
            vec!["z3".into(), "z1".into(), "z2".into()],
            arr2(&[[0.5, 0.6], [0.1, 0.2], [0.3, 0.4]]),
        );
        let m = mix(&feature_table(), &emb, InputMode::Concat).unwrap();
        assert_eq!(m.zone_ids, vec!["z1", "z2", "z3"]);
        assert_eq!(
            m.column_names,
            vec!["density", "transit", "ger_0", "ger_1"]
        );
        // Row z1 gets embedding row for z1 even though it is stored second.
        assert_abs_diff_eq!(m.design[[0, 2]], 0.1);
        assert_abs_diff_eq!(m.design[[2, 3]], 0.6);
    }

    #[test]
    fn mix_concat_rejects_differing_zone_sets_naming_the_difference() {
        let emb = ZoneEmbedding::from_parts(
            vec!["z1".into(), "z2".into()],
            arr2(&[[0.1, 0.2], [0.3, 0.4]]),
        );
        let err = mix(&feature_table(), &emb, InputMode::Concat).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("z3"), "message should name z3: {msg}");
    }

    #[test]
    fn standardizer_uses_train_rows_only_and_imputes_missing() {
        let design = arr2(&[[0.0, 5.0], [2.0, f64::NAN], [100.0, 7.0], [4.0, 9.0]]);
        let names = vec!["a".to_string(), "b".to_string()];
        // Fit on rows 0, 1, 3: column a has mean 2, std sqrt(8/3); the test
        // row 2 (value 100) must not shift those statistics.
        let s = Standardizer::fit(&design, &names, &[0, 1, 3]).unwrap();
        assert_eq!(s.kept, vec![0, 1]);
        assert_eq!(s.train_missing_cells, 1);
        let std_a = (8.0f64 / 3.0).sqrt();
        let z = s.transform(&design);
        assert_abs_diff_eq!(z[[0, 0]], -2.0 / std_a, epsilon = 1e-12);
        assert_abs_diff_eq!(z[[2, 0]], 98.0 / std_a, epsilon = 1e-12);
        // Column b: train values 5 and 9 -> mean 7, std 2; the missing cell
        // imputes to the train mean, i.e. standardized 0.
        assert_abs_diff_eq!(z[[0, 1]], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[[1, 1]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[[3, 1]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn standardizer_drops_constant_and_all_missing_columns() {
        let design = arr2(&[
            [1.0, 7.0, f64::NAN],
            [2.0, 7.0, f64::NAN],
            [3.0, 7.0, f64::NAN],
        ]);
        let names = vec!["varies".to_string(), "flat".to_string(), "gone".to_string()];
        let s = Standardizer::fit(&design, &names, &[0, 1, 2]).unwrap();
        assert_eq!(s.kept_names, vec!["varies"]);
        assert_eq!(s.dropped, vec!["flat", "gone"]);
        let z = s.transform(&design);
        assert_eq!(z.shape(), &[3, 1]);
    }

    #[test]
    fn fitted_predictor_round_trips_through_json_with_identical_predictions() {
        let design = arr2(&[[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 1.0]]);
        let names = vec!["a".to_string(), "b".to_string()];
        let shares = arr2(&[[0.7, 0.3], [0.6, 0.4], [0.2, 0.8], [0.1, 0.9]]);
        let standardizer = Standardizer::fit(&design, &names, &[0, 1, 2, 3]).unwrap();
        let z = standardizer.transform(&design);
        let model = mnl_fit(&z, &shares, &MnlOptions::default()).unwrap();
        let fitted = FittedPredictor {
            kind: PredictorKind::Mnl,
            input_mode: InputMode::Baseline,
            mode_names: vec!["drive".into(), "walk".into()],
            params: model.params_string(),
            standardizer,
            model: PredictorModel::Mnl(model),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &fitted).unwrap();
        let loaded = load_model(&path).unwrap();
        let p1 = fitted.predict(&design);
        let p2 = loaded.predict(&design);
        assert_eq!(p1, p2, "bitwise identical predictions after round trip");
        assert_eq!(loaded.mode_names, fitted.mode_names);
    }

    #[test]
    fn parse_enums_from_strings() {
        assert_eq!("ger".parse::<InputMode>().unwrap(), InputMode::Ger);
        assert!("GER".parse::<InputMode>().is_err());
        assert_eq!(
            "gradient_boost".parse::<PredictorKind>().unwrap(),
            PredictorKind::GradientBoost
        );
        assert!("boost".parse::<PredictorKind>().is_err());
    }

    #[test]
    fn align_shares_reorders_rows_by_zone() {
        let shares = ModeShareTable::new(
            vec!["z2".into(), "z1".into()],
            vec!["drive".into(), "walk".into()],
            arr2(&[[0.9, 0.1], [0.3, 0.7]]),
        )
        .unwrap();
        let aligned = align_shares(&shares, &["z1".to_string(), "z2".to_string()]).unwrap();
        assert_abs_diff_eq!(aligned[[0, 0]], 0.3);
        assert_abs_diff_eq!(aligned[[1, 0]], 0.9);
        assert!(align_shares(&shares, &["zX".to_string()]).is_err());
    }
}
