//! Tree ensembles: bagged random forests and gradient-boosted stumps/trees.
//!
//! Both produce one ensemble per travel mode and reduce to the same
//! prediction form, `baseline + tree_weight * sum(tree outputs)`, so a
//! single model struct serves the two trainers. Randomness is confined to
//! seeds derived from (ensemble seed, mode index, tree index), which makes
//! fits independent of thread count and iteration order.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, Tree, TreeParams};
use crate::error::{Error, Result};
use crate::seed::mix3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    RandomForest,
    GradientBoost,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeEnsemble {
    /// Starting prediction before any tree contributes (0 for forests,
    /// the training-target mean for boosting).
    pub baseline: f64,
    /// Scales the summed tree outputs (1/n_trees for forests, the
    /// shrinkage for boosting).
    pub tree_weight: f64,
    pub trees: Vec<Tree>,
    /// Boosting only: training MSE after each round.
    pub train_loss: Vec<f64>,
}

impl ModeEnsemble {
    pub fn predict_row(&self, row: ndarray::ArrayView1<f64>) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        self.baseline + self.tree_weight * sum
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub kind: EnsembleKind,
    pub mode_names: Vec<String>,
    pub per_mode: Vec<ModeEnsemble>,
    pub n_features: usize,
}

impl TreeEnsembleModel {
    pub fn predict(&self, design: &Array2<f64>) -> Array2<f64> {
        let n = design.nrows();
        let m = self.per_mode.len();
        let mut out = Array2::zeros((n, m));
        for (i, row) in design.rows().into_iter().enumerate() {
            for (j, ens) in self.per_mode.iter().enumerate() {
                out[[i, j]] = ens.predict_row(row);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` uses ceil(sqrt(d)).
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            features_per_split: None,
            seed: 1,
        }
    }
}

impl ForestParams {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::usage("a forest needs at least 1 tree"));
        }
        if self.min_leaf == 0 {
            return Err(Error::usage("min_leaf must be at least 1"));
        }
        Ok(())
    }

    pub fn params_string(&self) -> String {
        let depth = match self.max_depth {
            Some(d) => d.to_string(),
            None => "none".to_string(),
        };
        format!("trees={};max_depth={}", self.n_trees, depth)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GBoostParams {
    pub n_rounds: usize,
    pub shrinkage: f64,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for GBoostParams {
    fn default() -> Self {
        GBoostParams {
            n_rounds: 100,
            shrinkage: 0.1,
            max_depth: Some(4),
            min_leaf: 1,
            seed: 1,
        }
    }
}

impl GBoostParams {
    fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 {
            return Err(Error::usage("boosting needs at least 1 round"));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::usage(format!(
                "shrinkage {} must lie in (0, 1]",
                self.shrinkage
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::usage("min_leaf must be at least 1"));
        }
        Ok(())
    }

    pub fn params_string(&self) -> String {
        format!("rounds={};shrinkage={}", self.n_rounds, self.shrinkage)
    }
}

fn check_training_inputs(design: &Array2<f64>, targets: &Array2<f64>) -> Result<()> {
    if design.nrows() == 0 {
        return Err(Error::usage("cannot fit an ensemble on zero rows"));
    }
    if design.nrows() != targets.nrows() {
        return Err(Error::usage(format!(
            "design has {} rows but targets has {}",
            design.nrows(),
            targets.nrows()
        )));
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("design matrix contains non-finite values"));
    }
    Ok(())
}

/// Bagged forest: each tree sees a bootstrap resample of the rows and a
/// fresh ceil(sqrt(d)) feature subset at every split; predictions average
/// the trees, so they can never leave [min(y), max(y)] of the bootstrap
/// targets.
pub fn forest_fit(
    design: &Array2<f64>,
    targets: &Array2<f64>,
    mode_names: &[String],
    params: &ForestParams,
) -> Result<TreeEnsembleModel> {
    params.validate()?;
    check_training_inputs(design, targets)?;
    let n = design.nrows();
    let d = design.ncols();
    let m = targets.ncols();
    let per_split = params
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d.max(1));
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        features_per_split: if d == 0 { None } else { Some(per_split) },
    };

    let jobs: Vec<(usize, usize)> = (0..m)
        .flat_map(|mode| (0..params.n_trees).map(move |t| (mode, t)))
        .collect();
    let trees: Vec<Tree> = jobs
        .into_par_iter()
        .map(|(mode, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix3(params.seed, mode as u64, t as u64));
            let y: Vec<f64> = targets.column(mode).to_vec();
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            fit_tree(design, &y, &rows, &tree_params, &mut rng)
        })
        .collect();

    let mut per_mode = Vec::with_capacity(m);
    let mut iter = trees.into_iter();
    for _ in 0..m {
        let trees: Vec<Tree> = iter.by_ref().take(params.n_trees).collect();
        per_mode.push(ModeEnsemble {
            baseline: 0.0,
            tree_weight: 1.0 / params.n_trees as f64,
            trees,
            train_loss: Vec::new(),
        });
    }
    Ok(TreeEnsembleModel {
        kind: EnsembleKind::RandomForest,
        mode_names: mode_names.to_vec(),
        per_mode,
        n_features: d,
    })
}

/// Gradient boosting on squared loss: start from the target mean, then fit
/// each round's tree to the current residuals and step by `shrinkage`.
/// Because every leaf stores the mean residual of its region, each round's
/// training MSE is non-increasing for shrinkage in (0, 2).
pub fn gboost_fit(
    design: &Array2<f64>,
    targets: &Array2<f64>,
    mode_names: &[String],
    params: &GBoostParams,
) -> Result<TreeEnsembleModel> {
    params.validate()?;
    check_training_inputs(design, targets)?;
    let n = design.nrows();
    let d = design.ncols();
    let m = targets.ncols();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        features_per_split: None,
    };
    let rows: Vec<usize> = (0..n).collect();

    let per_mode: Vec<ModeEnsemble> = (0..m)
        .into_par_iter()
        .map(|mode| {
            let y: Vec<f64> = targets.column(mode).to_vec();
            let baseline = y.iter().sum::<f64>() / n as f64;
            let mut current: Vec<f64> = vec![baseline; n];
            let mut trees = Vec::with_capacity(params.n_rounds);
            let mut train_loss = Vec::with_capacity(params.n_rounds);
            // The residual fit uses every feature, so the RNG is inert;
            // it exists only to satisfy the tree interface.
            let mut rng = ChaCha8Rng::seed_from_u64(mix3(params.seed, mode as u64, 0));
            for _ in 0..params.n_rounds {
                let residuals: Vec<f64> =
                    y.iter().zip(&current).map(|(t, f)| t - f).collect();
                let tree = fit_tree(design, &residuals, &rows, &tree_params, &mut rng);
                for (i, f) in current.iter_mut().enumerate() {
                    *f += params.shrinkage * tree.predict_row(design.row(i));
                }
                let mse = y
                    .iter()
                    .zip(&current)
                    .map(|(t, f)| (t - f) * (t - f))
                    .sum::<f64>()
                    / n as f64;
                train_loss.push(mse);
                trees.push(tree);
            }
            ModeEnsemble {
                baseline,
                tree_weight: params.shrinkage,
                trees,
                train_loss,
            }
        })
        .collect();

    Ok(TreeEnsembleModel {
        kind: EnsembleKind::GradientBoost,
        mode_names: mode_names.to_vec(),
        per_mode,
        n_features: d,
    })
}
