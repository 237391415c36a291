//! End-to-end run: simplify the network, walk it, train node embeddings,
//! aggregate to zones, then cluster, inspect, correlate, and evaluate.
//!
//! Every stage that consumes randomness gets its seed derived from one
//! master seed and a fixed stage name, so a run is reproducible from a
//! single number while stages stay statistically independent.

use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::Array2;

use crate::embedding::{readout, train, TrainConfig, ZoneEmbedding};
use crate::error::{Error, Result};
use crate::evaluation::{
    correlation_matrix, evaluate, kmeans_rows, quantile_zones, select_features,
    CorrelationMatrix, EvaluationGrid, EvaluationReport, KMeansResult, QuantileEntry, SplitSpec,
};
use crate::graph::{Graph, TractAssignment};
use crate::ingest::{
    prune_dead_ends, simplify_topology, FeatureTable, ModeShareTable, PruneSummary,
    SimplifySummary,
};
use crate::predictors::{InputMode, MnlOptions, PredictorKind};
use crate::seed::derive_seed;
use crate::walker::{generate_walks, WalkConfig};

/// Everything a full run needs from the caller. Seeds inside `walk`,
/// `train`, and `split` are ignored; the pipeline replaces them with
/// seeds derived from `master_seed`.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub walk: WalkConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub grid: EvaluationGrid,
    pub mnl: MnlOptions,
    /// Dead-end pruning rounds before embedding (0 = keep dead ends).
    pub prune_rounds: usize,
    pub kmeans_k: usize,
    pub kmeans_max_iters: usize,
    /// Correlation threshold for the feature-selection listing.
    pub feature_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            master_seed: 1,
            walk: WalkConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            grid: EvaluationGrid::default(),
            mnl: MnlOptions::default(),
            prune_rounds: 0,
            kmeans_k: 30,
            kmeans_max_iters: 300,
            feature_threshold: 0.05,
        }
    }
}

/// Stage names used for seed derivation (and in run manifests).
pub const STAGE_WALKS: &str = "walks";
pub const STAGE_TRAIN: &str = "train";
pub const STAGE_SPLIT: &str = "split";
pub const STAGE_ENSEMBLES: &str = "ensembles";
pub const STAGE_KMEANS: &str = "kmeans";

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.walk.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        self.grid.validate()?;
        self.mnl.validate()?;
        if self.kmeans_k == 0 {
            return Err(Error::usage("cluster count must be at least 1"));
        }
        if !(self.feature_threshold.is_finite() && self.feature_threshold >= 0.0) {
            return Err(Error::usage(format!(
                "feature threshold {} must be non-negative",
                self.feature_threshold
            )));
        }
        Ok(())
    }

    /// The derived seed for each named stage.
    pub fn stage_seeds(&self) -> Vec<(String, u64)> {
        [STAGE_WALKS, STAGE_TRAIN, STAGE_SPLIT, STAGE_ENSEMBLES, STAGE_KMEANS]
            .iter()
            .map(|s| (s.to_string(), derive_seed(self.master_seed, s)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub graph: Graph,
    /// (node label, zone label) pairs; entries for nodes that
    /// simplification removes are ignored.
    pub zone_pairs: Vec<(String, String)>,
    pub features: FeatureTable,
    pub shares: ModeShareTable,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub simplify: SimplifySummary,
    pub prune: Option<PruneSummary>,
    /// Zones present in some input but not all of graph/features/shares
    /// after simplification; excluded from analysis.
    pub dropped_zones: Vec<String>,
    pub zones_kept: usize,
    pub epoch_mean_loss: Vec<f64>,
    pub zone_embedding: ZoneEmbedding,
    pub clusters: KMeansResult,
    pub quantiles: Vec<QuantileEntry>,
    pub correlation: CorrelationMatrix,
    pub selected_features: Vec<String>,
    pub report: EvaluationReport,
    pub stage_seconds: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

fn subset_features(t: &FeatureTable, keep: &BTreeSet<&str>) -> Result<FeatureTable> {
    let rows: Vec<usize> = t
        .zone_ids
        .iter()
        .enumerate()
        .filter(|(_, z)| keep.contains(z.as_str()))
        .map(|(i, _)| i)
        .collect();
    let zone_ids = rows.iter().map(|&i| t.zone_ids[i].clone()).collect();
    let values = Array2::from_shape_fn((rows.len(), t.column_names.len()), |(r, c)| {
        t.values[[rows[r], c]]
    });
    FeatureTable::new(zone_ids, t.column_names.clone(), values)
}

fn subset_shares(t: &ModeShareTable, keep: &BTreeSet<&str>) -> Result<ModeShareTable> {
    let rows: Vec<usize> = t
        .zone_ids
        .iter()
        .enumerate()
        .filter(|(_, z)| keep.contains(z.as_str()))
        .map(|(i, _)| i)
        .collect();
    let zone_ids = rows.iter().map(|&i| t.zone_ids[i].clone()).collect();
    let shares = Array2::from_shape_fn((rows.len(), t.mode_names.len()), |(r, c)| {
        t.shares[[rows[r], c]]
    });
    ModeShareTable::new(zone_ids, t.mode_names.clone(), shares)
}

fn subset_embedding(emb: &ZoneEmbedding, keep: &BTreeSet<&str>) -> ZoneEmbedding {
    let rows: Vec<usize> = emb
        .zone_ids
        .iter()
        .enumerate()
        .filter(|(_, z)| keep.contains(z.as_str()))
        .map(|(i, _)| i)
        .collect();
    let zone_ids: Vec<String> = rows.iter().map(|&i| emb.zone_ids[i].clone()).collect();
    let matrix = Array2::from_shape_fn((rows.len(), emb.dim()), |(r, c)| {
        emb.matrix[[rows[r], c]]
    });
    ZoneEmbedding::from_parts(zone_ids, matrix)
}

pub fn run(inputs: &PipelineInputs, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut stage_seconds = Vec::new();
    let mut warnings = Vec::new();
    let timed = |name: &str, t0: Instant, out: &mut Vec<(String, f64)>| {
        out.push((name.to_string(), t0.elapsed().as_secs_f64()));
    };

    // Topology cleanup.
    let t0 = Instant::now();
    let (simplified, simplify_summary) = simplify_topology(&inputs.graph);
    timed("simplify", t0, &mut stage_seconds);
    let (graph, prune_summary) = if cfg.prune_rounds > 0 {
        let t0 = Instant::now();
        let (g, s) = prune_dead_ends(&simplified, cfg.prune_rounds);
        timed("prune", t0, &mut stage_seconds);
        (g, Some(s))
    } else {
        (simplified, None)
    };

    let assignment = TractAssignment::new(&graph, &inputs.zone_pairs)?;

    // Zones must survive simplification AND be covered by both tables.
    let graph_zones: BTreeSet<&str> =
        assignment.zone_labels().iter().map(|z| z.as_str()).collect();
    let feature_zones: BTreeSet<&str> =
        inputs.features.zone_ids.iter().map(|z| z.as_str()).collect();
    let share_zones: BTreeSet<&str> =
        inputs.shares.zone_ids.iter().map(|z| z.as_str()).collect();
    let keep: BTreeSet<&str> = graph_zones
        .intersection(&feature_zones)
        .copied()
        .collect::<BTreeSet<_>>()
        .intersection(&share_zones)
        .copied()
        .collect();
    let dropped_zones: Vec<String> = graph_zones
        .union(&feature_zones)
        .copied()
        .collect::<BTreeSet<_>>()
        .union(&share_zones)
        .filter(|z| !keep.contains(*z))
        .map(|z| z.to_string())
        .collect();
    if keep.len() < 2 {
        return Err(Error::data(format!(
            "only {} zone(s) are shared by the network, features, and shares",
            keep.len()
        )));
    }
    if !dropped_zones.is_empty() {
        warnings.push(format!(
            "dropped {} zone(s) not present everywhere: {}",
            dropped_zones.len(),
            dropped_zones.join(", ")
        ));
    }
    let features = subset_features(&inputs.features, &keep)?;
    let shares = subset_shares(&inputs.shares, &keep)?;

    // Walks.
    let mut walk_cfg = cfg.walk.clone();
    walk_cfg.seed = derive_seed(cfg.master_seed, STAGE_WALKS);
    let t0 = Instant::now();
    let corpus = generate_walks(&graph, &walk_cfg)?;
    timed("walks", t0, &mut stage_seconds);

    // Embedding training.
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(cfg.master_seed, STAGE_TRAIN);
    let t0 = Instant::now();
    let outcome = train(&corpus, &train_cfg, &graph, &walk_cfg)?;
    timed("train", t0, &mut stage_seconds);

    // Zone readout, restricted to the zones under analysis.
    let t0 = Instant::now();
    let zone_embedding = subset_embedding(&readout(&outcome.embedding, &assignment), &keep);
    timed("readout", t0, &mut stage_seconds);

    // Clustering (k clamped to the zone count so small cities still run).
    let k = cfg.kmeans_k.min(zone_embedding.n_zones());
    if k < cfg.kmeans_k {
        warnings.push(format!(
            "cluster count reduced from {} to {} (zone count)",
            cfg.kmeans_k, k
        ));
    }
    let t0 = Instant::now();
    let clusters = kmeans_rows(
        &zone_embedding.matrix,
        k,
        derive_seed(cfg.master_seed, STAGE_KMEANS),
        cfg.kmeans_max_iters,
    )?;
    timed("cluster", t0, &mut stage_seconds);

    let t0 = Instant::now();
    let quantiles = quantile_zones(&zone_embedding.zone_ids, &zone_embedding.embd_readout)?;
    timed("quantiles", t0, &mut stage_seconds);

    let t0 = Instant::now();
    let correlation = correlation_matrix(&features, &shares, &zone_embedding)?;
    let selected_features =
        select_features(&correlation, &shares.mode_names, cfg.feature_threshold)?;
    timed("correlate", t0, &mut stage_seconds);

    let mut split_spec = cfg.split;
    split_spec.seed = derive_seed(cfg.master_seed, STAGE_SPLIT);
    let t0 = Instant::now();
    let report = evaluate(
        &PredictorKind::ALL,
        &InputMode::ALL,
        &features,
        &zone_embedding,
        &shares,
        &split_spec,
        &cfg.grid,
        &cfg.mnl,
        derive_seed(cfg.master_seed, STAGE_ENSEMBLES),
    )?;
    timed("evaluate", t0, &mut stage_seconds);
    warnings.extend(report.warnings.iter().cloned());

    Ok(PipelineOutput {
        simplify: simplify_summary,
        prune: prune_summary,
        dropped_zones,
        zones_kept: keep.len(),
        epoch_mean_loss: outcome.epoch_mean_loss,
        zone_embedding,
        clusters,
        quantiles,
        correlation,
        selected_features,
        report,
        stage_seconds,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeInput;
    use ndarray::Array2;

    /// Ten zones of four nodes each: a ring of zones, each zone a complete
    /// graph on its four nodes (so simplification has nothing to contract)
    /// with one node linking to the next zone.
    fn ring_city() -> PipelineInputs {
        let n_zones = 10;
        let per_zone = 4;
        let mut edges = Vec::new();
        let node = |z: usize, i: usize| format!("n{z}_{i}");
        let mut zone_pairs = Vec::new();
        for z in 0..n_zones {
            for i in 0..per_zone {
                zone_pairs.push((node(z, i), format!("z{z:02}")));
                for j in (i + 1)..per_zone {
                    edges.push(EdgeInput::new(
                        node(z, i),
                        node(z, j),
                        1.0 + 0.1 * ((i + j + z) % 5) as f64,
                    ));
                }
            }
            edges.push(EdgeInput::new(node(z, 0), node((z + 1) % n_zones, 1), 2.0));
        }
        let (graph, _) = Graph::from_edges(&edges).unwrap();

        let zone_ids: Vec<String> = (0..n_zones).map(|z| format!("z{z:02}")).collect();
        let values = Array2::from_shape_fn((n_zones, 2), |(r, c)| {
            (r as f64) * 0.3 + (c as f64) - (r % 3) as f64
        });
        let features = FeatureTable::new(
            zone_ids.clone(),
            vec!["f1".into(), "f2".into()],
            values,
        )
        .unwrap();
        let mut share_rows = Array2::zeros((n_zones, 2));
        for z in 0..n_zones {
            let s = 0.2 + 0.06 * z as f64;
            share_rows[[z, 0]] = s;
            share_rows[[z, 1]] = 1.0 - s;
        }
        let shares = ModeShareTable::new(
            zone_ids,
            vec!["drive".into(), "walk".into()],
            share_rows,
        )
        .unwrap();
        PipelineInputs {
            graph,
            zone_pairs,
            features,
            shares,
        }
    }

    fn quick_config() -> PipelineConfig {
        PipelineConfig {
            master_seed: 5,
            walk: WalkConfig {
                walk_length: 10,
                walks_per_node: 4,
                ..WalkConfig::default()
            },
            train: TrainConfig {
                dim: 4,
                epochs: 3,
                ..TrainConfig::default()
            },
            grid: EvaluationGrid {
                forest_trees: vec![10],
                forest_depths: vec![Some(3)],
                boost_rounds: vec![10],
                boost_shrinkage: vec![0.1],
                boost_depth: 3,
            },
            kmeans_k: 3,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn full_run_produces_all_outputs() {
        let inputs = ring_city();
        let out = run(&inputs, &quick_config()).unwrap();
        assert_eq!(out.zones_kept, 10);
        assert!(out.dropped_zones.is_empty());
        assert_eq!(out.report.cells.len(), 3 * 3 * 2);
        assert_eq!(out.quantiles.len(), 5);
        assert_eq!(out.clusters.labels.len(), 10);
        assert_eq!(out.epoch_mean_loss.len(), 3);
        assert_eq!(out.zone_embedding.n_zones(), 10);
        // embd_readout appears among correlation variables.
        assert!(out
            .correlation
            .variable_names
            .contains(&"embd_readout".to_string()));
        let stages: Vec<&str> = out.stage_seconds.iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(
            stages,
            vec!["simplify", "walks", "train", "readout", "cluster", "quantiles", "correlate", "evaluate"]
        );
    }

    #[test]
    fn identical_config_gives_identical_reports() {
        let inputs = ring_city();
        let a = run(&inputs, &quick_config()).unwrap();
        let b = run(&inputs, &quick_config()).unwrap();
        assert_eq!(a.report.to_csv(), b.report.to_csv());
        assert_eq!(a.correlation.to_csv(), b.correlation.to_csv());
        assert_eq!(a.clusters.labels, b.clusters.labels);
        // A different master seed changes the walks.
        let mut cfg = quick_config();
        cfg.master_seed = 6;
        let c = run(&inputs, &cfg).unwrap();
        assert_ne!(
            a.zone_embedding.matrix, c.zone_embedding.matrix,
            "different master seed should give different embeddings"
        );
    }

    #[test]
    fn zones_missing_from_tables_are_dropped_with_warning() {
        let mut inputs = ring_city();
        // Remove the last zone from the feature table only.
        let keep: BTreeSet<&str> = inputs.features.zone_ids[..9]
            .iter()
            .map(|z| z.as_str())
            .collect();
        inputs.features = subset_features(&inputs.features, &keep).unwrap();
        let out = run(&inputs, &quick_config()).unwrap();
        assert_eq!(out.zones_kept, 9);
        assert_eq!(out.dropped_zones, vec!["z09".to_string()]);
        assert!(out.warnings.iter().any(|w| w.contains("z09")));
        assert_eq!(out.report.cells.len(), 18);
    }

    #[test]
    fn stage_seeds_differ_and_are_stable() {
        let cfg = PipelineConfig::default();
        let seeds = cfg.stage_seeds();
        assert_eq!(seeds.len(), 5);
        let values: BTreeSet<u64> = seeds.iter().map(|(_, s)| *s).collect();
        assert_eq!(values.len(), 5, "stage seeds must be pairwise distinct");
        assert_eq!(seeds, cfg.stage_seeds());
    }
}
