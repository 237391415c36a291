//! Per-cell train/test evaluation with grid search for tree predictors.
//!
//! A cell is one (predictor, input mode, travel mode) triple. For a given
//! predictor and input mode, the design is standardized on the training
//! rows, the model is fitted there, and R-squared is reported in-sample
//! (ISR2) and out-of-sample (OSR2) per travel mode. Tree predictors try
//! every grid point and keep the one with the best mean OSR2 across modes.

use ndarray::Array2;

use super::{canonical_zones, csv_field, r_squared, split, SplitSpec};
use crate::embedding::ZoneEmbedding;
use crate::error::{Error, Result};
use crate::ingest::{FeatureTable, ModeShareTable};
use crate::predictors::{
    align_shares, forest_fit, gboost_fit, mix, mnl_fit, ForestParams, GBoostParams, InputMode,
    MnlOptions, PredictorKind, Standardizer,
};
use crate::seed::mix3;

/// Hyperparameter grid for the tree predictors. The boosting tree depth is
/// fixed; its grid walks rounds and shrinkage.
#[derive(Debug, Clone)]
pub struct EvaluationGrid {
    pub forest_trees: Vec<usize>,
    pub forest_depths: Vec<Option<usize>>,
    pub boost_rounds: Vec<usize>,
    pub boost_shrinkage: Vec<f64>,
    pub boost_depth: usize,
}

impl Default for EvaluationGrid {
    fn default() -> Self {
        EvaluationGrid {
            forest_trees: vec![100, 300],
            forest_depths: vec![Some(4), Some(8), None],
            boost_rounds: vec![100, 300],
            boost_shrinkage: vec![0.05, 0.1],
            boost_depth: 4,
        }
    }
}

impl EvaluationGrid {
    pub fn validate(&self) -> Result<()> {
        if self.forest_trees.is_empty()
            || self.forest_depths.is_empty()
            || self.boost_rounds.is_empty()
            || self.boost_shrinkage.is_empty()
        {
            return Err(Error::usage("hyperparameter grid has an empty axis"));
        }
        if self.forest_trees.iter().chain(self.boost_rounds.iter()).any(|&v| v == 0) {
            return Err(Error::usage("tree and round counts must be at least 1"));
        }
        if self
            .boost_shrinkage
            .iter()
            .any(|&s| !(s > 0.0 && s <= 1.0))
        {
            return Err(Error::usage("shrinkage grid values must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EvaluationCell {
    pub predictor: PredictorKind,
    pub input_mode: InputMode,
    pub travel_mode: String,
    pub isr2: f64,
    pub osr2: f64,
    /// Hyperparameters chosen for this predictor/input pair.
    pub params: String,
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub cells: Vec<EvaluationCell>,
    pub split: SplitSpec,
    pub n_train: usize,
    pub n_test: usize,
    /// Non-fatal notes (e.g. an MNL fit that hit its iteration cap).
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("predictor,input_mode,travel_mode,isr2,osr2,params\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.predictor,
                c.input_mode,
                csv_field(&c.travel_mode),
                c.isr2,
                c.osr2,
                csv_field(&c.params)
            ));
        }
        out
    }

    /// Mean OSR2 across travel modes for one predictor/input pair.
    pub fn mean_osr2(&self, predictor: PredictorKind, input_mode: InputMode) -> Option<f64> {
        let scores: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.predictor == predictor && c.input_mode == input_mode)
            .map(|c| c.osr2)
            .collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }
}

fn select_rows(data: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), data.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        for j in 0..data.ncols() {
            out[[i, j]] = data[[r, j]];
        }
    }
    out
}

fn annotate(e: Error, cell: &str) -> Error {
    match e {
        Error::Usage(m) => Error::Usage(format!("{cell}: {m}")),
        Error::Data(m) => Error::Data(format!("{cell}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{cell}: {m}")),
        io => io,
    }
}

/// Per-mode scores of one fitted candidate plus its selection criterion.
struct Scored {
    isr2: Vec<f64>,
    osr2: Vec<f64>,
    mean_osr2: f64,
    params: String,
}

fn score_predictions(
    y_train: &Array2<f64>,
    y_test: &Array2<f64>,
    p_train: &Array2<f64>,
    p_test: &Array2<f64>,
    params: String,
    cell: &str,
) -> Result<Scored> {
    let m = y_train.ncols();
    let mut isr2 = Vec::with_capacity(m);
    let mut osr2 = Vec::with_capacity(m);
    for j in 0..m {
        let yt: Vec<f64> = y_train.column(j).to_vec();
        let pt: Vec<f64> = p_train.column(j).to_vec();
        isr2.push(r_squared(&yt, &pt).map_err(|e| annotate(e, cell))?);
        let ys: Vec<f64> = y_test.column(j).to_vec();
        let ps: Vec<f64> = p_test.column(j).to_vec();
        osr2.push(r_squared(&ys, &ps).map_err(|e| annotate(e, cell))?);
    }
    let mean_osr2 = osr2.iter().sum::<f64>() / m as f64;
    Ok(Scored {
        isr2,
        osr2,
        mean_osr2,
        params,
    })
}

fn predictor_code(kind: PredictorKind) -> u64 {
    match kind {
        PredictorKind::Mnl => 0,
        PredictorKind::RandomForest => 1,
        PredictorKind::GradientBoost => 2,
    }
}

fn input_code(mode: InputMode) -> u64 {
    match mode {
        InputMode::Baseline => 0,
        InputMode::Ger => 1,
        InputMode::Concat => 2,
    }
}

/// Runs every requested (predictor, input mode) pair on one shared split
/// and returns a report with one cell per travel mode each.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    predictors: &[PredictorKind],
    input_modes: &[InputMode],
    features: &FeatureTable,
    embedding: &ZoneEmbedding,
    shares: &ModeShareTable,
    split_spec: &SplitSpec,
    grid: &EvaluationGrid,
    mnl_opts: &MnlOptions,
    ensemble_seed: u64,
) -> Result<EvaluationReport> {
    grid.validate()?;
    mnl_opts.validate()?;
    if predictors.is_empty() || input_modes.is_empty() {
        return Err(Error::usage("nothing to evaluate: no predictors or input modes"));
    }
    let zones = canonical_zones(&[
        ("features", &features.zone_ids),
        ("embedding", &embedding.zone_ids),
        ("shares", &shares.zone_ids),
    ])?;
    let n = zones.len();
    let (train, test) = split(n, split_spec)?;

    let y = align_shares(shares, &zones)?;
    let y_train = select_rows(&y, &train);
    let y_test = select_rows(&y, &test);
    let mode_names = shares.mode_names.clone();

    // Standardized train/test designs per input mode, shared by all
    // predictors so every cell sees the same data.
    struct Prepared {
        z_train: Array2<f64>,
        z_test: Array2<f64>,
    }
    let mut prepared: Vec<(InputMode, Prepared)> = Vec::with_capacity(input_modes.len());
    for &imode in input_modes {
        let mixed = mix(features, embedding, imode)?;
        let row_of: std::collections::HashMap<&str, usize> = mixed
            .zone_ids
            .iter()
            .enumerate()
            .map(|(i, z)| (z.as_str(), i))
            .collect();
        let order: Vec<usize> = zones.iter().map(|z| row_of[z.as_str()]).collect();
        let design = select_rows(&mixed.design, &order);
        let standardizer = Standardizer::fit(&design, &mixed.column_names, &train)
            .map_err(|e| annotate(e, imode.as_str()))?;
        let z = standardizer.transform(&design);
        prepared.push((
            imode,
            Prepared {
                z_train: select_rows(&z, &train),
                z_test: select_rows(&z, &test),
            },
        ));
    }

    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    for &kind in predictors {
        for (imode, prep) in &prepared {
            let cell_name = format!("{kind}/{imode}");
            let seed = mix3(ensemble_seed, predictor_code(kind), input_code(*imode));
            let best: Scored = match kind {
                PredictorKind::Mnl => {
                    let model = mnl_fit(&prep.z_train, &y_train, mnl_opts)
                        .map_err(|e| annotate(e, &cell_name))?;
                    if !model.converged {
                        warnings.push(format!(
                            "{cell_name}: fit stopped after {} iterations with gradient max-norm {:.3e}",
                            model.iterations, model.final_grad_norm
                        ));
                    }
                    score_predictions(
                        &y_train,
                        &y_test,
                        &model.predict(&prep.z_train),
                        &model.predict(&prep.z_test),
                        model.params_string(),
                        &cell_name,
                    )?
                }
                PredictorKind::RandomForest => {
                    let mut best: Option<Scored> = None;
                    for &n_trees in &grid.forest_trees {
                        for &max_depth in &grid.forest_depths {
                            let params = ForestParams {
                                n_trees,
                                max_depth,
                                seed,
                                ..ForestParams::default()
                            };
                            let model =
                                forest_fit(&prep.z_train, &y_train, &mode_names, &params)
                                    .map_err(|e| annotate(e, &cell_name))?;
                            let scored = score_predictions(
                                &y_train,
                                &y_test,
                                &model.predict(&prep.z_train),
                                &model.predict(&prep.z_test),
                                params.params_string(),
                                &cell_name,
                            )?;
                            if best.as_ref().map_or(true, |b| scored.mean_osr2 > b.mean_osr2) {
                                best = Some(scored);
                            }
                        }
                    }
                    best.expect("grid validated non-empty")
                }
                PredictorKind::GradientBoost => {
                    let mut best: Option<Scored> = None;
                    for &n_rounds in &grid.boost_rounds {
                        for &shrinkage in &grid.boost_shrinkage {
                            let params = GBoostParams {
                                n_rounds,
                                shrinkage,
                                max_depth: Some(grid.boost_depth),
                                seed,
                                ..GBoostParams::default()
                            };
                            let model =
                                gboost_fit(&prep.z_train, &y_train, &mode_names, &params)
                                    .map_err(|e| annotate(e, &cell_name))?;
                            let scored = score_predictions(
                                &y_train,
                                &y_test,
                                &model.predict(&prep.z_train),
                                &model.predict(&prep.z_test),
                                params.params_string(),
                                &cell_name,
                            )?;
                            if best.as_ref().map_or(true, |b| scored.mean_osr2 > b.mean_osr2) {
                                best = Some(scored);
                            }
                        }
                    }
                    best.expect("grid validated non-empty")
                }
            };
            for (j, mode) in mode_names.iter().enumerate() {
                cells.push(EvaluationCell {
                    predictor: kind,
                    input_mode: *imode,
                    travel_mode: mode.clone(),
                    isr2: best.isr2[j],
                    osr2: best.osr2[j],
                    params: best.params.clone(),
                });
            }
        }
    }

    Ok(EvaluationReport {
        cells,
        split: *split_spec,
        n_train: train.len(),
        n_test: test.len(),
        warnings,
    })
}
