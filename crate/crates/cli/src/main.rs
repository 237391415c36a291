//! modeshare: embed a road network, aggregate to zones, and predict
//! mode shares.
//!
//! Configuration is a flat `key = value` file plus mirroring command-line
//! flags (`walk_length` ↔ `--walk-length`); flags win. Unknown config keys
//! are rejected so typos fail loudly. One master `seed` drives every
//! stage through named derivation, which keeps reruns byte-identical at
//! `--threads 1`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modeshare_core::embedding::{
    config_fingerprint, load_embeddings, readout_labeled, save_embeddings, train, EmbeddingMeta,
    ZoneEmbedding,
};
use modeshare_core::error::{Error, Result};
use modeshare_core::evaluation::{
    clusters_csv, correlation_matrix, evaluate, kmeans, quantile_zones, quantiles_csv, r_squared,
    select_features,
};
use modeshare_core::graph::{Graph, TractAssignment};
use modeshare_core::ingest::{
    compute_network_metrics, edge_csv_string, parse_area_csv, parse_edge_csv, parse_feature_csv,
    parse_share_csv, parse_zone_map_csv, prune_dead_ends, simplify_topology, FeatureTable,
    ModeShareTable,
};
use modeshare_core::pipeline::{
    self, PipelineConfig, PipelineInputs, STAGE_ENSEMBLES, STAGE_KMEANS, STAGE_SPLIT, STAGE_TRAIN,
    STAGE_WALKS,
};
use modeshare_core::predictors::{
    align_shares, fit_predictor, save_model, FitOptions, InputMode, PredictorKind,
};
use modeshare_core::seed::derive_seed;
use modeshare_core::synth::{generate_city, SynthConfig};
use modeshare_core::walker::{generate_walks, WeightTransform};

/// Every key the config file accepts, sorted. The `--version` schema hash
/// is computed over this list, so renaming or adding a key changes it.
const CONFIG_KEYS: [&str; 50] = [
    "areas",
    "boost_depth",
    "boost_rounds",
    "boost_shrinkage",
    "dense_zone_fraction",
    "dim",
    "edges",
    "embedding",
    "epochs",
    "feature_signal",
    "feature_threshold",
    "features",
    "forest_depths",
    "forest_trees",
    "input",
    "inter_edge_prob",
    "intra_edge_prob_dense",
    "intra_edge_prob_sparse",
    "kmeans_k",
    "kmeans_max_iters",
    "l2_lambda",
    "learning_rate",
    "max_depth",
    "max_transition_entries",
    "mnl_max_iters",
    "mnl_tol",
    "model",
    "n_baseline_features",
    "n_zones",
    "negatives",
    "nodes_per_zone",
    "out_dir",
    "p",
    "predictor",
    "prune_rounds",
    "q",
    "resample_walks_each_epoch",
    "rounds",
    "seed",
    "share_noise_scale",
    "shares",
    "shrinkage",
    "threads",
    "train_fraction",
    "trees",
    "walk_length",
    "walks_per_node",
    "weight_transform",
    "window",
    "zones",
];

fn schema_hash() -> String {
    let joined = CONFIG_KEYS.join(",");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in joined.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn version_string() -> &'static str {
    static VERSION: std::sync::OnceLock<String> = std::sync::OnceLock::new();
    VERSION.get_or_init(|| {
        format!("{} (config schema {})", env!("CARGO_PKG_VERSION"), schema_hash())
    })
}

/// Effective run settings: defaults, overlaid by the config file, overlaid
/// by flags.
#[derive(Debug, Clone)]
struct Settings {
    pipeline: PipelineConfig,
    synth: SynthConfig,
    fit: FitOptions,
    threads: usize,
    predictor: Option<PredictorKind>,
    input: Option<InputMode>,
    edges: Option<PathBuf>,
    zones: Option<PathBuf>,
    features: Option<PathBuf>,
    shares: Option<PathBuf>,
    areas: Option<PathBuf>,
    embedding: Option<PathBuf>,
    model: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            pipeline: PipelineConfig::default(),
            synth: SynthConfig::default(),
            fit: FitOptions::default(),
            threads: 1,
            predictor: None,
            input: None,
            edges: None,
            zones: None,
            features: None,
            shares: None,
            areas: None,
            embedding: None,
            model: None,
            out_dir: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::usage(format!("config key {key}: cannot parse value {value:?}")))
}

fn parse_depth(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "none" {
        Ok(None)
    } else {
        Ok(Some(parse_value::<usize>(key, value)?))
    }
}

fn parse_list<T>(key: &str, value: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Result<Vec<T>> = value.split(',').map(|s| item(s.trim())).collect();
    let items = items?;
    if items.is_empty() {
        return Err(Error::usage(format!("config key {key}: empty list")));
    }
    Ok(items)
}

fn parse_weight_transform(value: &str) -> Result<WeightTransform> {
    match value {
        "inverse" => Ok(WeightTransform::Inverse),
        "identity" => Ok(WeightTransform::Identity),
        other => Err(Error::usage(format!(
            "weight_transform {other:?} must be `inverse` or `identity`"
        ))),
    }
}

impl Settings {
    /// Apply one `key = value` entry. This is the single source of truth
    /// for what each config key means.
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            // Paths.
            "edges" => self.edges = Some(PathBuf::from(value)),
            "zones" => self.zones = Some(PathBuf::from(value)),
            "features" => self.features = Some(PathBuf::from(value)),
            "shares" => self.shares = Some(PathBuf::from(value)),
            "areas" => self.areas = Some(PathBuf::from(value)),
            "embedding" => self.embedding = Some(PathBuf::from(value)),
            "model" => self.model = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            // Walks.
            "p" => p.walk.p = parse_value(key, value)?,
            "q" => p.walk.q = parse_value(key, value)?,
            "walk_length" => p.walk.walk_length = parse_value(key, value)?,
            "walks_per_node" => p.walk.walks_per_node = parse_value(key, value)?,
            "weight_transform" => p.walk.weight_transform = parse_weight_transform(value)?,
            "max_transition_entries" => p.walk.max_transition_entries = parse_value(key, value)?,
            // Training.
            "dim" => p.train.dim = parse_value(key, value)?,
            "epochs" => p.train.epochs = parse_value(key, value)?,
            "learning_rate" => p.train.learning_rate = parse_value(key, value)?,
            "negatives" => p.train.negatives_per_positive = parse_value(key, value)?,
            "window" => p.train.window = parse_value(key, value)?,
            "resample_walks_each_epoch" => {
                p.train.resample_walks_each_epoch = parse_value(key, value)?
            }
            // Split / master seed / threads.
            "train_fraction" => p.split.train_fraction = parse_value(key, value)?,
            "seed" => {
                let seed: u64 = parse_value(key, value)?;
                p.master_seed = seed;
                self.synth.seed = seed;
            }
            "threads" => self.threads = parse_value(key, value)?,
            // MNL.
            "l2_lambda" => p.mnl.l2_lambda = parse_value(key, value)?,
            "mnl_max_iters" => p.mnl.max_iters = parse_value(key, value)?,
            "mnl_tol" => p.mnl.tol = parse_value(key, value)?,
            // Evaluation grid.
            "forest_trees" => {
                p.grid.forest_trees = parse_list(key, value, |s| parse_value(key, s))?
            }
            "forest_depths" => {
                p.grid.forest_depths = parse_list(key, value, |s| parse_depth(key, s))?
            }
            "boost_rounds" => {
                p.grid.boost_rounds = parse_list(key, value, |s| parse_value(key, s))?
            }
            "boost_shrinkage" => {
                p.grid.boost_shrinkage = parse_list(key, value, |s| parse_value(key, s))?
            }
            "boost_depth" => p.grid.boost_depth = parse_value(key, value)?,
            // Single-model fit.
            "predictor" => {
                self.predictor = Some(value.parse().map_err(|e: Error| e)?);
            }
            "input" => {
                self.input = Some(value.parse().map_err(|e: Error| e)?);
            }
            "trees" => self.fit.forest.n_trees = parse_value(key, value)?,
            "max_depth" => {
                let d = parse_depth(key, value)?;
                self.fit.forest.max_depth = d;
                self.fit.gboost.max_depth = d;
            }
            "rounds" => self.fit.gboost.n_rounds = parse_value(key, value)?,
            "shrinkage" => self.fit.gboost.shrinkage = parse_value(key, value)?,
            // Pipeline extras.
            "prune_rounds" => p.prune_rounds = parse_value(key, value)?,
            "kmeans_k" => p.kmeans_k = parse_value(key, value)?,
            "kmeans_max_iters" => p.kmeans_max_iters = parse_value(key, value)?,
            "feature_threshold" => p.feature_threshold = parse_value(key, value)?,
            // Synthetic city.
            "n_zones" => self.synth.n_zones = parse_value(key, value)?,
            "nodes_per_zone" => self.synth.nodes_per_zone = parse_value(key, value)?,
            "dense_zone_fraction" => self.synth.dense_zone_fraction = parse_value(key, value)?,
            "intra_edge_prob_dense" => {
                self.synth.intra_edge_prob_dense = parse_value(key, value)?
            }
            "intra_edge_prob_sparse" => {
                self.synth.intra_edge_prob_sparse = parse_value(key, value)?
            }
            "inter_edge_prob" => self.synth.inter_edge_prob = parse_value(key, value)?,
            "n_baseline_features" => self.synth.n_baseline_features = parse_value(key, value)?,
            "feature_signal" => self.synth.feature_signal = parse_value(key, value)?,
            "share_noise_scale" => self.synth.share_noise_scale = parse_value(key, value)?,
            unknown => {
                return Err(Error::usage(format!(
                    "unknown config key {unknown:?}; see --help for the schema"
                )));
            }
        }
        Ok(())
    }

    fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::usage(format!(
                    "{}: line {}: expected `key = value`, found {raw:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            self.apply(key.trim(), value.trim()).map_err(|e| match e {
                Error::Usage(msg) => {
                    Error::usage(format!("{}: line {}: {msg}", path.display(), lineno + 1))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    /// The full effective configuration as `key = value` lines, for run
    /// manifests.
    fn snapshot(&self) -> String {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or_else(String::new, |p| p.display().to_string())
        };
        let depth = |d: Option<usize>| d.map_or_else(|| "none".to_string(), |v| v.to_string());
        let list = |items: Vec<String>| items.join(",");
        let p = &self.pipeline;
        let pairs: Vec<(&str, String)> = vec![
            ("areas", path(&self.areas)),
            ("boost_depth", p.grid.boost_depth.to_string()),
            (
                "boost_rounds",
                list(p.grid.boost_rounds.iter().map(|v| v.to_string()).collect()),
            ),
            (
                "boost_shrinkage",
                list(p.grid.boost_shrinkage.iter().map(|v| v.to_string()).collect()),
            ),
            ("dense_zone_fraction", self.synth.dense_zone_fraction.to_string()),
            ("dim", p.train.dim.to_string()),
            ("edges", path(&self.edges)),
            ("embedding", path(&self.embedding)),
            ("epochs", p.train.epochs.to_string()),
            ("feature_signal", self.synth.feature_signal.to_string()),
            ("feature_threshold", p.feature_threshold.to_string()),
            ("features", path(&self.features)),
            (
                "forest_depths",
                list(p.grid.forest_depths.iter().map(|d| depth(*d)).collect()),
            ),
            (
                "forest_trees",
                list(p.grid.forest_trees.iter().map(|v| v.to_string()).collect()),
            ),
            (
                "input",
                self.input.map_or_else(String::new, |m| m.to_string()),
            ),
            ("inter_edge_prob", self.synth.inter_edge_prob.to_string()),
            (
                "intra_edge_prob_dense",
                self.synth.intra_edge_prob_dense.to_string(),
            ),
            (
                "intra_edge_prob_sparse",
                self.synth.intra_edge_prob_sparse.to_string(),
            ),
            ("kmeans_k", p.kmeans_k.to_string()),
            ("kmeans_max_iters", p.kmeans_max_iters.to_string()),
            ("l2_lambda", p.mnl.l2_lambda.to_string()),
            ("learning_rate", p.train.learning_rate.to_string()),
            ("max_depth", depth(self.fit.forest.max_depth)),
            (
                "max_transition_entries",
                p.walk.max_transition_entries.to_string(),
            ),
            ("mnl_max_iters", p.mnl.max_iters.to_string()),
            ("mnl_tol", p.mnl.tol.to_string()),
            ("model", path(&self.model)),
            (
                "n_baseline_features",
                self.synth.n_baseline_features.to_string(),
            ),
            ("n_zones", self.synth.n_zones.to_string()),
            ("negatives", p.train.negatives_per_positive.to_string()),
            ("nodes_per_zone", self.synth.nodes_per_zone.to_string()),
            ("out_dir", path(&self.out_dir)),
            ("p", p.walk.p.to_string()),
            (
                "predictor",
                self.predictor.map_or_else(String::new, |k| k.to_string()),
            ),
            ("prune_rounds", p.prune_rounds.to_string()),
            ("q", p.walk.q.to_string()),
            (
                "resample_walks_each_epoch",
                p.train.resample_walks_each_epoch.to_string(),
            ),
            ("rounds", self.fit.gboost.n_rounds.to_string()),
            ("seed", p.master_seed.to_string()),
            ("share_noise_scale", self.synth.share_noise_scale.to_string()),
            ("shares", path(&self.shares)),
            ("shrinkage", self.fit.gboost.shrinkage.to_string()),
            ("threads", self.threads.to_string()),
            ("train_fraction", p.split.train_fraction.to_string()),
            ("trees", self.fit.forest.n_trees.to_string()),
            ("walk_length", p.walk.walk_length.to_string()),
            ("walks_per_node", p.walk.walks_per_node.to_string()),
            ("weight_transform", p.walk.weight_transform.to_string()),
            ("window", p.train.window.to_string()),
            ("zones", path(&self.zones)),
        ];
        debug_assert_eq!(pairs.len(), CONFIG_KEYS.len());
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[derive(Parser)]
#[command(
    name = "modeshare",
    version = version_string(),
    about = "Road-network embeddings and zone-level mode-share prediction"
)]
struct Cli {
    /// Flat `key = value` config file; flags override its entries.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (1 = fully deterministic runs).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Default)]
struct PathFlags {
    /// Edge list CSV (src,dst,weight).
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Node-to-zone map CSV (node,zone).
    #[arg(long)]
    zones: Option<PathBuf>,
    /// Zone feature CSV (zone,<name>,...).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Zone mode-share CSV (zone,<mode>,...).
    #[arg(long)]
    shares: Option<PathBuf>,
    /// Zone area CSV (zone,area).
    #[arg(long)]
    areas: Option<PathBuf>,
    /// Embedding file (count/dim header, label + values per row).
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Model JSON path.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl PathFlags {
    fn apply(&self, s: &mut Settings) {
        let over = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
            if src.is_some() {
                dst.clone_from(src);
            }
        };
        over(&mut s.edges, &self.edges);
        over(&mut s.zones, &self.zones);
        over(&mut s.features, &self.features);
        over(&mut s.shares, &self.shares);
        over(&mut s.areas, &self.areas);
        over(&mut s.embedding, &self.embedding);
        over(&mut s.model, &self.model);
        over(&mut s.out_dir, &self.out_dir);
    }
}

#[derive(Args, Default)]
struct WalkFlags {
    /// Return bias: higher p discourages revisiting the previous node.
    #[arg(long)]
    p: Option<f64>,
    /// In-out bias: q > 1 keeps walks local, q < 1 pushes them outward.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    walk_length: Option<usize>,
    #[arg(long)]
    walks_per_node: Option<usize>,
    /// Edge weight handling: `inverse` (weights are lengths) or `identity`.
    #[arg(long)]
    weight_transform: Option<String>,
    /// Cap on cached transition-table entries.
    #[arg(long)]
    max_transition_entries: Option<usize>,
}

impl WalkFlags {
    fn apply(&self, s: &mut Settings) -> Result<()> {
        let w = &mut s.pipeline.walk;
        if let Some(v) = self.p {
            w.p = v;
        }
        if let Some(v) = self.q {
            w.q = v;
        }
        if let Some(v) = self.walk_length {
            w.walk_length = v;
        }
        if let Some(v) = self.walks_per_node {
            w.walks_per_node = v;
        }
        if let Some(v) = &self.weight_transform {
            w.weight_transform = parse_weight_transform(v)?;
        }
        if let Some(v) = self.max_transition_entries {
            w.max_transition_entries = v;
        }
        Ok(())
    }
}

#[derive(Args, Default)]
struct TrainFlags {
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Negative samples per positive pair.
    #[arg(long)]
    negatives: Option<usize>,
    /// Context window radius.
    #[arg(long)]
    window: Option<usize>,
    /// Redraw the walk corpus every epoch (true/false).
    #[arg(long)]
    resample_walks_each_epoch: Option<bool>,
}

impl TrainFlags {
    fn apply(&self, s: &mut Settings) {
        let t = &mut s.pipeline.train;
        if let Some(v) = self.dim {
            t.dim = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.negatives {
            t.negatives_per_positive = v;
        }
        if let Some(v) = self.window {
            t.window = v;
        }
        if let Some(v) = self.resample_walks_each_epoch {
            t.resample_walks_each_epoch = v;
        }
    }
}

#[derive(Args, Default)]
struct SeedFlag {
    /// Master seed; every stage derives its own seed from it by name.
    #[arg(long)]
    seed: Option<u64>,
}

impl SeedFlag {
    fn apply(&self, s: &mut Settings) {
        if let Some(v) = self.seed {
            s.pipeline.master_seed = v;
            s.synth.seed = v;
        }
    }
}

#[derive(Args, Default)]
struct MnlFlags {
    /// Ridge penalty on non-constant coefficients.
    #[arg(long)]
    l2_lambda: Option<f64>,
    #[arg(long)]
    mnl_max_iters: Option<usize>,
    /// Gradient max-norm convergence tolerance.
    #[arg(long)]
    mnl_tol: Option<f64>,
}

impl MnlFlags {
    fn apply(&self, s: &mut Settings) {
        let m = &mut s.pipeline.mnl;
        if let Some(v) = self.l2_lambda {
            m.l2_lambda = v;
        }
        if let Some(v) = self.mnl_max_iters {
            m.max_iters = v;
        }
        if let Some(v) = self.mnl_tol {
            m.tol = v;
        }
    }
}

#[derive(Args, Default)]
struct GridFlags {
    /// Forest sizes to grid-search (comma list).
    #[arg(long)]
    forest_trees: Option<String>,
    /// Forest depths to grid-search (comma list; `none` = unlimited).
    #[arg(long)]
    forest_depths: Option<String>,
    /// Boosting round counts to grid-search (comma list).
    #[arg(long)]
    boost_rounds: Option<String>,
    /// Boosting shrinkages to grid-search (comma list).
    #[arg(long)]
    boost_shrinkage: Option<String>,
    /// Tree depth for boosting.
    #[arg(long)]
    boost_depth: Option<usize>,
}

impl GridFlags {
    fn apply(&self, s: &mut Settings) -> Result<()> {
        if let Some(v) = &self.forest_trees {
            s.apply("forest_trees", v)?;
        }
        if let Some(v) = &self.forest_depths {
            s.apply("forest_depths", v)?;
        }
        if let Some(v) = &self.boost_rounds {
            s.apply("boost_rounds", v)?;
        }
        if let Some(v) = &self.boost_shrinkage {
            s.apply("boost_shrinkage", v)?;
        }
        if let Some(v) = self.boost_depth {
            s.pipeline.grid.boost_depth = v;
        }
        Ok(())
    }
}

#[derive(Args, Default)]
struct SplitFlags {
    /// Fraction of zones used for training.
    #[arg(long)]
    train_fraction: Option<f64>,
}

impl SplitFlags {
    fn apply(&self, s: &mut Settings) {
        if let Some(v) = self.train_fraction {
            s.pipeline.split.train_fraction = v;
        }
    }
}

#[derive(Args, Default)]
struct PipelineExtraFlags {
    /// Dead-end pruning rounds after simplification (0 = none).
    #[arg(long)]
    prune_rounds: Option<usize>,
    /// Cluster count for the zone-embedding k-means.
    #[arg(long)]
    kmeans_k: Option<usize>,
    #[arg(long)]
    kmeans_max_iters: Option<usize>,
    /// Absolute-correlation threshold for feature selection.
    #[arg(long)]
    feature_threshold: Option<f64>,
}

impl PipelineExtraFlags {
    fn apply(&self, s: &mut Settings) {
        let p = &mut s.pipeline;
        if let Some(v) = self.prune_rounds {
            p.prune_rounds = v;
        }
        if let Some(v) = self.kmeans_k {
            p.kmeans_k = v;
        }
        if let Some(v) = self.kmeans_max_iters {
            p.kmeans_max_iters = v;
        }
        if let Some(v) = self.feature_threshold {
            p.feature_threshold = v;
        }
    }
}

#[derive(Args, Default)]
struct SynthFlags {
    #[arg(long)]
    n_zones: Option<usize>,
    #[arg(long)]
    nodes_per_zone: Option<usize>,
    /// Probability a zone is dense (grid-like) rather than sparse.
    #[arg(long)]
    dense_zone_fraction: Option<f64>,
    #[arg(long)]
    intra_edge_prob_dense: Option<f64>,
    #[arg(long)]
    intra_edge_prob_sparse: Option<f64>,
    #[arg(long)]
    inter_edge_prob: Option<f64>,
    #[arg(long)]
    n_baseline_features: Option<usize>,
    /// Planted-signal strength of the baseline features (0..1).
    #[arg(long)]
    feature_signal: Option<f64>,
    #[arg(long)]
    share_noise_scale: Option<f64>,
}

impl SynthFlags {
    fn apply(&self, s: &mut Settings) {
        let y = &mut s.synth;
        if let Some(v) = self.n_zones {
            y.n_zones = v;
        }
        if let Some(v) = self.nodes_per_zone {
            y.nodes_per_zone = v;
        }
        if let Some(v) = self.dense_zone_fraction {
            y.dense_zone_fraction = v;
        }
        if let Some(v) = self.intra_edge_prob_dense {
            y.intra_edge_prob_dense = v;
        }
        if let Some(v) = self.intra_edge_prob_sparse {
            y.intra_edge_prob_sparse = v;
        }
        if let Some(v) = self.inter_edge_prob {
            y.inter_edge_prob = v;
        }
        if let Some(v) = self.n_baseline_features {
            y.n_baseline_features = v;
        }
        if let Some(v) = self.feature_signal {
            y.feature_signal = v;
        }
        if let Some(v) = self.share_noise_scale {
            y.share_noise_scale = v;
        }
    }
}

#[derive(Args)]
struct SimplifyArgs {
    #[command(flatten)]
    paths: PathFlags,
    #[command(flatten)]
    extra: PipelineExtraFlags,
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    paths: PathFlags,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    paths: PathFlags,
    #[command(flatten)]
    walk: WalkFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    seed: SeedFlag,
}

#[derive(Args)]
struct ReadoutArgs {
    #[command(flatten)]
    paths: PathFlags,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    paths: PathFlags,
    /// Predictor family: mnl | random_forest | gradient_boost.
    #[arg(long)]
    predictor: Option<String>,
    /// Design matrix: baseline | ger | concat.
    #[arg(long)]
    input: Option<String>,
    /// Trees in a random forest.
    #[arg(long)]
    trees: Option<usize>,
    /// Tree depth limit (`none` = unlimited).
    #[arg(long)]
    max_depth: Option<String>,
    /// Boosting rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Boosting shrinkage.
    #[arg(long)]
    shrinkage: Option<f64>,
    #[command(flatten)]
    mnl: MnlFlags,
    #[command(flatten)]
    seed: SeedFlag,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    paths: PathFlags,
    #[command(flatten)]
    split: SplitFlags,
    #[command(flatten)]
    grid: GridFlags,
    #[command(flatten)]
    mnl: MnlFlags,
    #[command(flatten)]
    seed: SeedFlag,
}

#[derive(Args)]
struct CorrelateArgs {
    #[command(flatten)]
    paths: PathFlags,
    /// Absolute-correlation threshold for feature selection.
    #[arg(long)]
    feature_threshold: Option<f64>,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    paths: PathFlags,
    #[arg(long)]
    kmeans_k: Option<usize>,
    #[arg(long)]
    kmeans_max_iters: Option<usize>,
    #[command(flatten)]
    seed: SeedFlag,
}

#[derive(Args)]
struct QuantilesArgs {
    #[command(flatten)]
    paths: PathFlags,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    paths: PathFlags,
    #[command(flatten)]
    synth: SynthFlags,
    #[command(flatten)]
    seed: SeedFlag,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    paths: PathFlags,
    #[command(flatten)]
    walk: WalkFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    split: SplitFlags,
    #[command(flatten)]
    grid: GridFlags,
    #[command(flatten)]
    mnl: MnlFlags,
    #[command(flatten)]
    extra: PipelineExtraFlags,
    #[command(flatten)]
    seed: SeedFlag,
}

#[derive(Subcommand)]
enum Cmd {
    /// Contract degree-2 chains and drop self-loops/parallel edges.
    Simplify(SimplifyArgs),
    /// Zone-level network metrics (density, degree, centrality sums).
    Metrics(MetricsArgs),
    /// Sample biased walks and train node embeddings.
    Embed(EmbedArgs),
    /// Average node embeddings into zone embeddings.
    Readout(ReadoutArgs),
    /// Fit one predictor on all zones and save it as JSON.
    Fit(FitArgs),
    /// Train/test evaluation of every predictor on every input.
    Evaluate(EvaluateArgs),
    /// Correlation matrix and threshold feature selection.
    Correlate(CorrelateArgs),
    /// K-means clustering of zone embeddings.
    Cluster(ClusterArgs),
    /// Zones sitting at the readout quantiles.
    Quantiles(QuantilesArgs),
    /// Generate a synthetic benchmark city.
    Synth(SynthArgs),
    /// Full run: simplify, embed, readout, cluster, correlate, evaluate.
    Pipeline(PipelineArgs),
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Simplify(_) => "simplify",
            Cmd::Metrics(_) => "metrics",
            Cmd::Embed(_) => "embed",
            Cmd::Readout(_) => "readout",
            Cmd::Fit(_) => "fit",
            Cmd::Evaluate(_) => "evaluate",
            Cmd::Correlate(_) => "correlate",
            Cmd::Cluster(_) => "cluster",
            Cmd::Quantiles(_) => "quantiles",
            Cmd::Synth(_) => "synth",
            Cmd::Pipeline(_) => "pipeline",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let stage = cli.command.name();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {stage}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        s.load_file(path)?;
    }
    if let Some(threads) = cli.threads {
        s.threads = threads;
    }
    if s.threads == 0 {
        return Err(Error::usage("--threads must be at least 1"));
    }
    // Tree ensembles parallelize over (mode, tree) jobs through this pool;
    // seeds are per-job, so the thread count never changes results.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(s.threads)
        .build_global();

    match cli.command {
        Cmd::Simplify(a) => {
            a.paths.apply(&mut s);
            a.extra.apply(&mut s);
            cmd_simplify(&s)
        }
        Cmd::Metrics(a) => {
            a.paths.apply(&mut s);
            cmd_metrics(&s)
        }
        Cmd::Embed(a) => {
            a.paths.apply(&mut s);
            a.walk.apply(&mut s)?;
            a.train.apply(&mut s);
            a.seed.apply(&mut s);
            cmd_embed(&s)
        }
        Cmd::Readout(a) => {
            a.paths.apply(&mut s);
            cmd_readout(&s)
        }
        Cmd::Fit(a) => {
            a.paths.apply(&mut s);
            if let Some(v) = &a.predictor {
                s.predictor = Some(v.parse()?);
            }
            if let Some(v) = &a.input {
                s.input = Some(v.parse()?);
            }
            if let Some(v) = a.trees {
                s.fit.forest.n_trees = v;
            }
            if let Some(v) = &a.max_depth {
                let d = parse_depth("max_depth", v)?;
                s.fit.forest.max_depth = d;
                s.fit.gboost.max_depth = d;
            }
            if let Some(v) = a.rounds {
                s.fit.gboost.n_rounds = v;
            }
            if let Some(v) = a.shrinkage {
                s.fit.gboost.shrinkage = v;
            }
            a.mnl.apply(&mut s);
            a.seed.apply(&mut s);
            cmd_fit(&s)
        }
        Cmd::Evaluate(a) => {
            a.paths.apply(&mut s);
            a.split.apply(&mut s);
            a.grid.apply(&mut s)?;
            a.mnl.apply(&mut s);
            a.seed.apply(&mut s);
            cmd_evaluate(&s)
        }
        Cmd::Correlate(a) => {
            a.paths.apply(&mut s);
            if let Some(v) = a.feature_threshold {
                s.pipeline.feature_threshold = v;
            }
            cmd_correlate(&s)
        }
        Cmd::Cluster(a) => {
            a.paths.apply(&mut s);
            if let Some(v) = a.kmeans_k {
                s.pipeline.kmeans_k = v;
            }
            if let Some(v) = a.kmeans_max_iters {
                s.pipeline.kmeans_max_iters = v;
            }
            a.seed.apply(&mut s);
            cmd_cluster(&s)
        }
        Cmd::Quantiles(a) => {
            a.paths.apply(&mut s);
            cmd_quantiles(&s)
        }
        Cmd::Synth(a) => {
            a.paths.apply(&mut s);
            a.synth.apply(&mut s);
            a.seed.apply(&mut s);
            cmd_synth(&s)
        }
        Cmd::Pipeline(a) => {
            a.paths.apply(&mut s);
            a.walk.apply(&mut s)?;
            a.train.apply(&mut s);
            a.split.apply(&mut s);
            a.grid.apply(&mut s)?;
            a.mnl.apply(&mut s);
            a.extra.apply(&mut s);
            a.seed.apply(&mut s);
            cmd_pipeline(&s)
        }
    }
}

fn require<'a>(opt: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    opt.as_deref().ok_or_else(|| {
        Error::usage(format!(
            "{key} path required: set `{key} = ...` in the config or pass --{}",
            key.replace('_', "-")
        ))
    })
}

fn write_output(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn load_graph(path: &Path) -> Result<Graph> {
    let edges = parse_edge_csv(path)?;
    let (graph, report) = Graph::from_edges(&edges)?;
    if report.self_loops_dropped > 0 || report.parallel_edges_merged > 0 {
        eprintln!(
            "[ingest] dropped {} self-loop(s), merged {} parallel edge(s)",
            report.self_loops_dropped, report.parallel_edges_merged
        );
    }
    Ok(graph)
}

fn load_zone_embedding(path: &Path) -> Result<ZoneEmbedding> {
    let (labels, matrix, _) = load_embeddings(path)?;
    Ok(ZoneEmbedding::from_parts(labels, matrix))
}

fn load_tables(s: &Settings) -> Result<(FeatureTable, ModeShareTable, ZoneEmbedding)> {
    let features = parse_feature_csv(require(&s.features, "features")?)?;
    let shares = parse_share_csv(require(&s.shares, "shares")?, None)?;
    let embedding = load_zone_embedding(require(&s.embedding, "embedding")?)?;
    Ok((features, shares, embedding))
}

fn cmd_simplify(s: &Settings) -> Result<()> {
    let graph = load_graph(require(&s.edges, "edges")?)?;
    let (simplified, summary) = simplify_topology(&graph);
    eprintln!(
        "[simplify] nodes {} -> {}, edges {} -> {}, contracted {}, length {} -> {}",
        summary.nodes_before,
        summary.nodes_after,
        summary.edges_before,
        summary.edges_after,
        summary.contracted_nodes,
        summary.length_before,
        summary.length_after
    );
    let final_graph = if s.pipeline.prune_rounds > 0 {
        let (pruned, prune) = prune_dead_ends(&simplified, s.pipeline.prune_rounds);
        eprintln!(
            "[prune] {} round(s): removed {} node(s), {} edge(s)",
            prune.rounds_effective, prune.nodes_removed, prune.edges_removed
        );
        pruned
    } else {
        simplified
    };
    let out = require(&s.out_dir, "out_dir")?;
    let path = write_output(out, "simplified_edges.csv", &edge_csv_string(&final_graph))?;
    eprintln!("[simplify] wrote {}", path.display());
    Ok(())
}

fn cmd_metrics(s: &Settings) -> Result<()> {
    let graph = load_graph(require(&s.edges, "edges")?)?;
    let pairs = parse_zone_map_csv(require(&s.zones, "zones")?)?;
    let areas = parse_area_csv(require(&s.areas, "areas")?)?;
    let assignment = TractAssignment::new(&graph, &pairs)?;
    let metrics = compute_network_metrics(&graph, &assignment, &areas)?;
    let out = require(&s.out_dir, "out_dir")?;
    let path = write_output(out, "metrics.csv", &metrics.to_csv())?;
    eprintln!(
        "[metrics] {} zone(s) -> {}",
        metrics.zone_labels.len(),
        path.display()
    );
    Ok(())
}

fn cmd_embed(s: &Settings) -> Result<()> {
    let graph = load_graph(require(&s.edges, "edges")?)?;
    let mut walk_cfg = s.pipeline.walk.clone();
    walk_cfg.seed = derive_seed(s.pipeline.master_seed, STAGE_WALKS);
    let mut train_cfg = s.pipeline.train.clone();
    train_cfg.seed = derive_seed(s.pipeline.master_seed, STAGE_TRAIN);
    train_cfg.workers = s.threads;
    walk_cfg.validate()?;
    train_cfg.validate()?;

    eprintln!(
        "[walks] {} node(s), {} walk(s) of length {}",
        graph.node_count(),
        graph.node_count() * walk_cfg.walks_per_node,
        walk_cfg.walk_length
    );
    let corpus = generate_walks(&graph, &walk_cfg)?;
    let outcome = train(&corpus, &train_cfg, &graph, &walk_cfg)?;
    let final_loss = outcome.epoch_mean_loss.last().copied().unwrap_or(f64::NAN);
    eprintln!(
        "[train] {} epoch(s), {} pair(s), final mean loss {final_loss:.6}",
        outcome.epoch_mean_loss.len(),
        outcome.pairs_processed
    );

    let out = require(&s.out_dir, "out_dir")?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("node_embedding.txt");
    let meta = EmbeddingMeta {
        seed: Some(s.pipeline.master_seed),
        config_hash: Some(config_fingerprint(&walk_cfg, &train_cfg)),
    };
    save_embeddings(&path, graph.labels(), &outcome.embedding.rows, &meta)?;
    eprintln!("[embed] wrote {}", path.display());
    Ok(())
}

fn cmd_readout(s: &Settings) -> Result<()> {
    let (labels, matrix, meta) = load_embeddings(require(&s.embedding, "embedding")?)?;
    let pairs = parse_zone_map_csv(require(&s.zones, "zones")?)?;
    let zone_emb = readout_labeled(&labels, &matrix, &pairs)?;
    let out = require(&s.out_dir, "out_dir")?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("zone_embedding.txt");
    save_embeddings(&path, &zone_emb.zone_ids, &zone_emb.matrix, &meta)?;
    eprintln!(
        "[readout] {} node row(s) -> {} zone row(s), wrote {}",
        labels.len(),
        zone_emb.n_zones(),
        path.display()
    );
    Ok(())
}

fn cmd_fit(s: &Settings) -> Result<()> {
    let kind = s
        .predictor
        .ok_or_else(|| Error::usage("predictor required: mnl | random_forest | gradient_boost"))?;
    let input = s
        .input
        .ok_or_else(|| Error::usage("input required: baseline | ger | concat"))?;
    let (features, shares, embedding) = load_tables(s)?;
    let mut opts = s.fit.clone();
    opts.mnl = s.pipeline.mnl.clone();
    let ensemble_seed = derive_seed(s.pipeline.master_seed, STAGE_ENSEMBLES);
    opts.forest.seed = ensemble_seed;
    opts.gboost.seed = ensemble_seed;
    let model = fit_predictor(kind, input, &features, &embedding, &shares, &opts)?;

    // Training fit per mode, as a quick sanity readout.
    let mixed = modeshare_core::predictors::mix(&features, &embedding, input)?;
    let y = align_shares(&shares, &mixed.zone_ids)?;
    let pred = model.predict(&mixed.design);
    for (m, mode) in shares.mode_names.iter().enumerate() {
        let truth: Vec<f64> = (0..y.nrows()).map(|i| y[[i, m]]).collect();
        let fitted: Vec<f64> = (0..pred.nrows()).map(|i| pred[[i, m]]).collect();
        let r2 = r_squared(&truth, &fitted)?;
        eprintln!("[fit] {mode}: training R^2 {r2:.4}");
    }

    let path = require(&s.model, "model")?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    save_model(path, &model)?;
    eprintln!("[fit] {kind} on {input} ({}), wrote {}", model.params, path.display());
    Ok(())
}

fn cmd_evaluate(s: &Settings) -> Result<()> {
    let (features, shares, embedding) = load_tables(s)?;
    let mut split = s.pipeline.split;
    split.seed = derive_seed(s.pipeline.master_seed, STAGE_SPLIT);
    let report = evaluate(
        &PredictorKind::ALL,
        &InputMode::ALL,
        &features,
        &embedding,
        &shares,
        &split,
        &s.pipeline.grid,
        &s.pipeline.mnl,
        derive_seed(s.pipeline.master_seed, STAGE_ENSEMBLES),
    )?;
    for w in &report.warnings {
        eprintln!("[evaluate] warning: {w}");
    }
    let out = require(&s.out_dir, "out_dir")?;
    let path = write_output(out, "report.csv", &report.to_csv())?;
    eprintln!(
        "[evaluate] {} cell(s) ({} train / {} test zones) -> {}",
        report.cells.len(),
        report.n_train,
        report.n_test,
        path.display()
    );
    Ok(())
}

fn cmd_correlate(s: &Settings) -> Result<()> {
    let (features, shares, embedding) = load_tables(s)?;
    let corr = correlation_matrix(&features, &shares, &embedding)?;
    let selected = select_features(&corr, &shares.mode_names, s.pipeline.feature_threshold)?;
    if !corr.degenerate_variables.is_empty() {
        eprintln!(
            "[correlate] constant variable(s) flagged: {}",
            corr.degenerate_variables.join(", ")
        );
    }
    let out = require(&s.out_dir, "out_dir")?;
    let corr_path = write_output(out, "correlation.csv", &corr.to_csv())?;
    let mut listing = selected.join("\n");
    if !listing.is_empty() {
        listing.push('\n');
    }
    let sel_path = write_output(out, "selected_features.txt", &listing)?;
    eprintln!(
        "[correlate] {} variable(s), {} selected at threshold {} -> {}, {}",
        corr.variable_names.len(),
        selected.len(),
        s.pipeline.feature_threshold,
        corr_path.display(),
        sel_path.display()
    );
    Ok(())
}

fn cmd_cluster(s: &Settings) -> Result<()> {
    let embedding = load_zone_embedding(require(&s.embedding, "embedding")?)?;
    let result = kmeans(
        &embedding,
        s.pipeline.kmeans_k,
        derive_seed(s.pipeline.master_seed, STAGE_KMEANS),
        s.pipeline.kmeans_max_iters,
    )?;
    let out = require(&s.out_dir, "out_dir")?;
    let path = write_output(
        out,
        "clusters.csv",
        &clusters_csv(&embedding.zone_ids, &result.labels),
    )?;
    eprintln!(
        "[cluster] k={} on {} zone(s), wcss {:.6}, {} iteration(s) -> {}",
        s.pipeline.kmeans_k,
        embedding.n_zones(),
        result.final_wcss(),
        result.iterations,
        path.display()
    );
    Ok(())
}

fn cmd_quantiles(s: &Settings) -> Result<()> {
    let embedding = load_zone_embedding(require(&s.embedding, "embedding")?)?;
    let entries = quantile_zones(&embedding.zone_ids, &embedding.embd_readout)?;
    let out = require(&s.out_dir, "out_dir")?;
    let path = write_output(out, "quantiles.csv", &quantiles_csv(&entries))?;
    eprintln!("[quantiles] wrote {}", path.display());
    Ok(())
}

fn cmd_synth(s: &Settings) -> Result<()> {
    let dataset = generate_city(&s.synth)?;
    let out = require(&s.out_dir, "out_dir")?;
    dataset.write_dataset(out)?;
    eprintln!(
        "[synth] {} zone(s), {} node(s), {} edge(s), {} dense zone(s), attempt {} -> {}",
        dataset.zone_ids.len(),
        dataset.graph.node_count(),
        dataset.graph.edge_count(),
        dataset.dense_zones,
        dataset.attempts,
        out.display()
    );
    Ok(())
}

fn cmd_pipeline(s: &Settings) -> Result<()> {
    let graph = load_graph(require(&s.edges, "edges")?)?;
    let zone_pairs = parse_zone_map_csv(require(&s.zones, "zones")?)?;
    let features = parse_feature_csv(require(&s.features, "features")?)?;
    let shares = parse_share_csv(require(&s.shares, "shares")?, None)?;
    let out = require(&s.out_dir, "out_dir")?.to_path_buf();

    let mut cfg = s.pipeline.clone();
    cfg.train.workers = s.threads;
    let inputs = PipelineInputs {
        graph,
        zone_pairs,
        features,
        shares,
    };
    let output = pipeline::run(&inputs, &cfg)?;
    for w in &output.warnings {
        eprintln!("[pipeline] warning: {w}");
    }

    write_output(&out, "report.csv", &output.report.to_csv())?;
    write_output(&out, "correlation.csv", &output.correlation.to_csv())?;
    write_output(
        &out,
        "clusters.csv",
        &clusters_csv(&output.zone_embedding.zone_ids, &output.clusters.labels),
    )?;
    write_output(&out, "quantiles.csv", &quantiles_csv(&output.quantiles))?;
    let mut listing = output.selected_features.join("\n");
    if !listing.is_empty() {
        listing.push('\n');
    }
    write_output(&out, "selected_features.txt", &listing)?;
    let emb_path = out.join("zone_embedding.txt");
    let meta = EmbeddingMeta {
        seed: Some(cfg.master_seed),
        config_hash: Some(config_fingerprint(&cfg.walk, &cfg.train)),
    };
    save_embeddings(
        &emb_path,
        &output.zone_embedding.zone_ids,
        &output.zone_embedding.matrix,
        &meta,
    )?;

    let mut manifest = String::new();
    manifest.push_str("modeshare run manifest\n");
    manifest.push_str(&format!("version: {}\n", env!("CARGO_PKG_VERSION")));
    manifest.push_str(&format!("config_schema: {}\n", schema_hash()));
    manifest.push_str("command: pipeline\n");
    manifest.push_str(&format!(
        "embedding_config: {}\n",
        config_fingerprint(&cfg.walk, &cfg.train)
    ));
    manifest.push_str("\n[configuration]\n");
    manifest.push_str(&s.snapshot());
    manifest.push_str("\n[stage seeds]\n");
    for (stage, seed) in cfg.stage_seeds() {
        manifest.push_str(&format!("{stage} = {seed}\n"));
    }
    manifest.push_str("\n[stage seconds]\n");
    for (stage, secs) in &output.stage_seconds {
        manifest.push_str(&format!("{stage} = {secs:.3}\n"));
    }
    manifest.push_str("\n[zones]\n");
    manifest.push_str(&format!("kept = {}\n", output.zones_kept));
    manifest.push_str(&format!("dropped = {}\n", output.dropped_zones.join(",")));
    if !output.warnings.is_empty() {
        manifest.push_str("\n[warnings]\n");
        for w in &output.warnings {
            manifest.push_str(&format!("{w}\n"));
        }
    }
    write_output(&out, "run_manifest.txt", &manifest)?;

    eprintln!(
        "[pipeline] {} report cell(s), {} zone(s) kept -> {}",
        output.report.cells.len(),
        output.zones_kept,
        out.display()
    );
    Ok(())
}
