//! Synthetic city with planted ground truth.
//!
//! Zones sit on a grid; each zone's street fabric is either dense
//! (grid-like: most lattice neighbors wired) or sparse (tree-like: a
//! spanning tree plus a few extras). Dense zones cluster on the west side
//! of the grid, so density falls off monotonically across the city the way
//! it does in a monocentric one. The normalized intra-zone edge count is
//! the planted latent signal: mode shares are a softmax of it, and
//! baseline features copy it only at strength `feature_signal`, so the
//! baseline is a deliberately degraded predictor while the network itself
//! carries the full signal.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{EdgeInput, Graph, TractAssignment};
use crate::ingest::{
    area_csv_string, edge_csv_string, feature_csv_string, share_csv_string, zone_map_csv_string,
    FeatureTable, ModeShareTable,
};
use crate::pipeline::{self, PipelineConfig, PipelineInputs, PipelineOutput};
use crate::predictors::{InputMode, PredictorKind};
use crate::seed::mix2;

pub const SYNTH_MODES: [&str; 3] = ["driving", "transit", "walking"];
/// Per-mode utility intercepts a_i.
pub const MODE_INTERCEPTS: [f64; 3] = [0.2, 0.0, -0.2];
/// Per-mode coefficients b_i on the planted density (denser zones shift
/// trips away from driving).
pub const MODE_DENSITY_SLOPES: [f64; 3] = [-2.0, 1.0, 1.0];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_zones: usize,
    pub nodes_per_zone: usize,
    /// Fraction of zones that are dense (grid-like) rather than sparse;
    /// the dense ones occupy the west side of the zone grid.
    pub dense_zone_fraction: f64,
    /// Lattice-edge inclusion probability in dense zones.
    pub intra_edge_prob_dense: f64,
    /// Lattice-edge inclusion probability in sparse zones.
    pub intra_edge_prob_sparse: f64,
    /// Probability that two grid-adjacent zones get a connecting edge.
    pub inter_edge_prob: f64,
    pub n_baseline_features: usize,
    /// How much of each baseline feature is planted signal (the rest is
    /// noise); 1 = features reveal the signal exactly.
    pub feature_signal: f64,
    pub share_noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_zones: 20,
            nodes_per_zone: 15,
            dense_zone_fraction: 0.5,
            intra_edge_prob_dense: 0.9,
            intra_edge_prob_sparse: 0.05,
            inter_edge_prob: 1.0,
            n_baseline_features: 4,
            feature_signal: 0.3,
            share_noise_scale: 0.05,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_zones < 4 {
            return Err(Error::usage(format!(
                "n_zones {} must be at least 4",
                self.n_zones
            )));
        }
        if self.nodes_per_zone < 3 {
            return Err(Error::usage(format!(
                "nodes_per_zone {} must be at least 3",
                self.nodes_per_zone
            )));
        }
        for (name, p) in [
            ("dense_zone_fraction", self.dense_zone_fraction),
            ("intra_edge_prob_dense", self.intra_edge_prob_dense),
            ("intra_edge_prob_sparse", self.intra_edge_prob_sparse),
            ("inter_edge_prob", self.inter_edge_prob),
        ] {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return Err(Error::usage(format!("{name} {p} must be in [0, 1]")));
            }
        }
        if self.n_baseline_features == 0 {
            return Err(Error::usage("n_baseline_features must be at least 1"));
        }
        if !(self.feature_signal.is_finite() && (0.0..=1.0).contains(&self.feature_signal)) {
            return Err(Error::usage(format!(
                "feature_signal {} must be in [0, 1]",
                self.feature_signal
            )));
        }
        if !(self.share_noise_scale.is_finite() && self.share_noise_scale >= 0.0) {
            return Err(Error::usage(format!(
                "share_noise_scale {} must be non-negative",
                self.share_noise_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub graph: Graph,
    pub assignment: TractAssignment,
    pub zone_pairs: Vec<(String, String)>,
    pub zone_ids: Vec<String>,
    pub features: FeatureTable,
    pub shares: ModeShareTable,
    pub areas: Vec<(String, f64)>,
    /// Min-max normalized intra-zone edge count, one per zone.
    pub planted: Vec<f64>,
    pub dense_zones: usize,
    /// 1-based attempt index that produced a connected graph.
    pub attempts: u32,
    pub manifest: String,
}

impl SynthDataset {
    /// Write the dataset out in the same CSV formats the ingest path reads,
    /// plus a plain-text manifest.
    pub fn write_dataset(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files: [(&str, String); 6] = [
            ("edges.csv", edge_csv_string(&self.graph)),
            ("zones.csv", zone_map_csv_string(&self.zone_pairs)),
            ("features.csv", feature_csv_string(&self.features)),
            ("shares.csv", share_csv_string(&self.shares)),
            ("areas.csv", area_csv_string(&self.areas)),
            ("manifest.txt", self.manifest.clone()),
        ];
        for (name, content) in files {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn zone_label(z: usize) -> String {
    format!("z{z:03}")
}

fn node_label(z: usize, i: usize) -> String {
    format!("n{z:03}_{i:03}")
}

struct CityDraw {
    edges: Vec<EdgeInput>,
    intra_counts: Vec<usize>,
    dense: Vec<bool>,
}

/// One seeded construction attempt; connectivity is checked by the caller.
fn draw_city(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> CityDraw {
    let npz = cfg.nodes_per_zone;
    let mut edges = Vec::new();
    let mut intra_counts = vec![0usize; cfg.n_zones];
    let weight = |rng: &mut ChaCha8Rng| 1.0 + 0.05 * rng.random::<f64>();

    // Dense zones sit on the low-x side of the zone grid: street density
    // falls off west to east, as in a monocentric city. The jitter lets the
    // dense/sparse boundary wander a little between seeds.
    let zw = (cfg.n_zones as f64).sqrt().ceil() as usize;
    let k_dense = (cfg.dense_zone_fraction * cfg.n_zones as f64).round() as usize;
    let mut by_west: Vec<(f64, usize)> = (0..cfg.n_zones)
        .map(|z| ((z % zw) as f64 + 0.75 * rng.random::<f64>(), z))
        .collect();
    by_west.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut dense = vec![false; cfg.n_zones];
    for &(_, z) in by_west.iter().take(k_dense) {
        dense[z] = true;
    }

    // Node i of a zone sits at (i / w, i % w) on a mini-lattice.
    let w = (npz as f64).sqrt().ceil() as usize;
    for z in 0..cfg.n_zones {
        let p_edge = if dense[z] {
            cfg.intra_edge_prob_dense
        } else {
            cfg.intra_edge_prob_sparse
        };
        let mut have: BTreeSet<(usize, usize)> = BTreeSet::new();
        // Random spanning tree keeps every zone internally connected.
        let mut order: Vec<usize> = (0..npz).collect();
        order.shuffle(rng);
        for k in 1..npz {
            let a = order[k];
            let b = order[rng.random_range(0..k)];
            have.insert((a.min(b), a.max(b)));
        }
        // Lattice neighbors (right and down) drawn at the zone's density.
        for i in 0..npz {
            let (r, c) = (i / w, i % w);
            let mut candidates = Vec::new();
            if c + 1 < w && i + 1 < npz {
                candidates.push(i + 1);
            }
            if (r + 1) * w + c < npz {
                candidates.push(i + w);
            }
            for j in candidates {
                let key = (i.min(j), i.max(j));
                if !have.contains(&key) && rng.random::<f64>() < p_edge {
                    have.insert(key);
                }
            }
        }
        intra_counts[z] = have.len();
        for (a, b) in have {
            edges.push(EdgeInput::new(node_label(z, a), node_label(z, b), weight(rng)));
        }
    }

    // Zones sit on their own grid; adjacent zones may get one link.
    for z in 0..cfg.n_zones {
        let (r, c) = (z / zw, z % zw);
        let mut neighbors = Vec::new();
        if c + 1 < zw && z + 1 < cfg.n_zones {
            neighbors.push(z + 1);
        }
        if (r + 1) * zw + c < cfg.n_zones {
            neighbors.push(z + zw);
        }
        for other in neighbors {
            if rng.random::<f64>() < cfg.inter_edge_prob {
                let a = rng.random_range(0..npz);
                let b = rng.random_range(0..npz);
                edges.push(EdgeInput::new(
                    node_label(z, a),
                    node_label(other, b),
                    weight(rng),
                ));
            }
        }
    }
    CityDraw {
        edges,
        intra_counts,
        dense,
    }
}

fn min_max_normalize(counts: &[usize]) -> Vec<f64> {
    let min = counts.iter().copied().min().unwrap_or(0) as f64;
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    if max == min {
        return vec![0.5; counts.len()];
    }
    counts.iter().map(|&c| (c as f64 - min) / (max - min)).collect()
}

pub fn generate_city(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    for attempt in 0..10u32 {
        let attempt_seed = mix2(cfg.seed, attempt as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed);
        let draw = draw_city(cfg, &mut rng);
        let (graph, _) = Graph::from_edges(&draw.edges)?;
        if !graph.is_connected() {
            continue;
        }

        let zone_ids: Vec<String> = (0..cfg.n_zones).map(zone_label).collect();
        let zone_pairs: Vec<(String, String)> = (0..cfg.n_zones)
            .flat_map(|z| (0..cfg.nodes_per_zone).map(move |i| (node_label(z, i), zone_label(z))))
            .collect();
        let assignment = TractAssignment::new(&graph, &zone_pairs)?;
        let planted = min_max_normalize(&draw.intra_counts);

        // Baseline features: signal-weighted copy of the planted value
        // plus independent noise, column by column.
        let n_feat = cfg.n_baseline_features;
        let mut features = Array2::zeros((cfg.n_zones, n_feat));
        for z in 0..cfg.n_zones {
            for j in 0..n_feat {
                let noise: f64 = rng.sample(StandardNormal);
                features[[z, j]] =
                    cfg.feature_signal * planted[z] + (1.0 - cfg.feature_signal) * noise;
            }
        }
        let feature_names: Vec<String> = (0..n_feat).map(|j| format!("f{j}")).collect();
        let features = FeatureTable::new(zone_ids.clone(), feature_names, features)?;

        // Shares: softmax of per-mode linear utilities in the planted value.
        let mut shares = Array2::zeros((cfg.n_zones, SYNTH_MODES.len()));
        for z in 0..cfg.n_zones {
            let mut u = [0.0f64; 3];
            for m in 0..SYNTH_MODES.len() {
                let noise: f64 = rng.sample(StandardNormal);
                u[m] = MODE_INTERCEPTS[m]
                    + MODE_DENSITY_SLOPES[m] * planted[z]
                    + cfg.share_noise_scale * noise;
            }
            let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = u.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for m in 0..SYNTH_MODES.len() {
                shares[[z, m]] = exps[m] / total;
            }
        }
        let shares = ModeShareTable::new(
            zone_ids.clone(),
            SYNTH_MODES.iter().map(|s| s.to_string()).collect(),
            shares,
        )?;

        let areas: Vec<(String, f64)> = zone_ids
            .iter()
            .map(|z| (z.clone(), 1.0 + 0.2 * rng.random::<f64>()))
            .collect();

        let dense_zones = draw.dense.iter().filter(|&&d| d).count();
        let mut manifest = String::from("synthetic city\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(manifest, "{k}: {v}");
        };
        kv("seed", cfg.seed.to_string());
        kv("attempts", (attempt + 1).to_string());
        kv("attempt_seed", attempt_seed.to_string());
        kv("n_zones", cfg.n_zones.to_string());
        kv("nodes_per_zone", cfg.nodes_per_zone.to_string());
        kv("dense_zone_fraction", cfg.dense_zone_fraction.to_string());
        kv("intra_edge_prob_dense", cfg.intra_edge_prob_dense.to_string());
        kv(
            "intra_edge_prob_sparse",
            cfg.intra_edge_prob_sparse.to_string(),
        );
        kv("inter_edge_prob", cfg.inter_edge_prob.to_string());
        kv("n_baseline_features", cfg.n_baseline_features.to_string());
        kv("feature_signal", cfg.feature_signal.to_string());
        kv("share_noise_scale", cfg.share_noise_scale.to_string());
        kv("modes", SYNTH_MODES.join(","));
        kv(
            "mode_intercepts",
            MODE_INTERCEPTS.map(|v| v.to_string()).join(","),
        );
        kv(
            "mode_density_slopes",
            MODE_DENSITY_SLOPES.map(|v| v.to_string()).join(","),
        );
        kv("nodes", graph.node_count().to_string());
        kv("edges", graph.edge_count().to_string());
        kv("dense_zones", dense_zones.to_string());

        return Ok(SynthDataset {
            graph,
            assignment,
            zone_pairs,
            zone_ids,
            features,
            shares,
            areas,
            planted,
            dense_zones,
            attempts: attempt + 1,
            manifest,
        });
    }
    Err(Error::data(
        "could not generate a connected network in 10 attempts; raise inter_edge_prob",
    ))
}

/// Out-of-sample R² per (predictor, travel mode) for all three input modes,
/// with the embedding-vs-baseline deltas the benchmark exists to measure.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub predictor: PredictorKind,
    pub travel_mode: String,
    pub baseline_osr2: f64,
    pub ger_osr2: f64,
    pub concat_osr2: f64,
}

impl ComparisonRow {
    pub fn ger_delta(&self) -> f64 {
        self.ger_osr2 - self.baseline_osr2
    }
    pub fn concat_delta(&self) -> f64 {
        self.concat_osr2 - self.baseline_osr2
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dataset: SynthDataset,
    pub output: PipelineOutput,
    pub comparison: Vec<ComparisonRow>,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "predictor,travel_mode,baseline_osr2,ger_osr2,concat_osr2,ger_minus_baseline,concat_minus_baseline\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.predictor,
            r.travel_mode,
            r.baseline_osr2,
            r.ger_osr2,
            r.concat_osr2,
            r.ger_delta(),
            r.concat_delta()
        ));
    }
    out
}

/// Generate a city and run the full pipeline on it.
pub fn run_experiment(
    cfg: &SynthConfig,
    pipeline_cfg: &PipelineConfig,
) -> Result<ExperimentOutcome> {
    let dataset = generate_city(cfg)?;
    let inputs = PipelineInputs {
        graph: dataset.graph.clone(),
        zone_pairs: dataset.zone_pairs.clone(),
        features: dataset.features.clone(),
        shares: dataset.shares.clone(),
    };
    let output = pipeline::run(&inputs, pipeline_cfg)?;

    let osr2_of = |kind: PredictorKind, imode: InputMode, tmode: &str| -> f64 {
        output
            .report
            .cells
            .iter()
            .find(|c| c.predictor == kind && c.input_mode == imode && c.travel_mode == tmode)
            .map(|c| c.osr2)
            .expect("report covers every (predictor, input, mode) cell")
    };
    let mut comparison = Vec::new();
    for kind in PredictorKind::ALL {
        for tmode in &dataset.shares.mode_names {
            comparison.push(ComparisonRow {
                predictor: kind,
                travel_mode: tmode.clone(),
                baseline_osr2: osr2_of(kind, InputMode::Baseline, tmode),
                ger_osr2: osr2_of(kind, InputMode::Ger, tmode),
                concat_osr2: osr2_of(kind, InputMode::Concat, tmode),
            });
        }
    }
    Ok(ExperimentOutcome {
        dataset,
        output,
        comparison,
    })
}
