//! Skip-gram with negative sampling over the walk corpus, plus zone-level
//! readout.
//!
//! Two tables are trained: center rows (the exported embedding) and context
//! rows. Each positive (center, context) pair plus its sampled negatives is
//! one stochastic ascent step on the pair objective
//! `log sigma(c_v . r_u) + sum_n log sigma(-c_n . r_u)`.

mod io;
mod negative;

pub use io::{config_fingerprint, load_embeddings, save_embeddings, EmbeddingMeta};
pub use negative::NegativeSampler;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, TractAssignment};
use crate::seed::{derive_seed, mix2, mix3};
use crate::walker::{generate_walks, WalkConfig, WalkCorpus};

/// Training parameters.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainConfig {
    /// Embedding dimension K*.
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives_per_positive: usize,
    /// Context radius within a walk.
    pub window: usize,
    pub seed: u64,
    /// Regenerate the walk corpus at every epoch instead of revisiting the
    /// input corpus.
    pub resample_walks_each_epoch: bool,
    /// 0 or 1: deterministic single-threaded training. Above 1: lock-free
    /// parallel workers sharing the tables without synchronization;
    /// reproducible only for a fixed worker count.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 128,
            epochs: 100,
            learning_rate: 0.01,
            negatives_per_positive: 1,
            window: 5,
            seed: 1,
            resample_walks_each_epoch: false,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::usage("embedding dim must be at least 1"));
        }
        if self.window == 0 {
            return Err(Error::usage("context window must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::usage(format!(
                "learning rate {} must be positive and finite",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Center (`rows`, the exported embedding) and context tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: Array2<f64>,
    pub context_rows: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn n_nodes(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// Center rows uniform in [-0.5/dim, +0.5/dim), context rows zero: the
/// conventional word2vec asymmetric start.
pub fn init_embeddings(n: usize, cfg: &TrainConfig) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "embedding-init"));
    let dim = cfg.dim;
    let mut rows = Array2::zeros((n, dim));
    for i in 0..n {
        for k in 0..dim {
            rows[[i, k]] = (rng.random::<f64>() - 0.5) / dim as f64;
        }
    }
    EmbeddingMatrix {
        rows,
        context_rows: Array2::zeros((n, dim)),
    }
}

/// Overflow-safe logistic function.
#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe softplus, log(1 + exp(x)) = -log sigma(-x).
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Raw table pointers shared across lock-free workers. Races in parallel
/// mode are accepted (classic asynchronous SGD); the single-threaded path
/// passes uniquely owned pointers.
#[derive(Clone, Copy)]
struct TablePtr {
    rows: *mut f64,
    ctx: *mut f64,
    dim: usize,
}

unsafe impl Send for TablePtr {}
unsafe impl Sync for TablePtr {}

/// One ascent step on the pair objective; returns the pair loss (negated
/// objective). `scratch` must hold `dim` values and is overwritten.
///
/// Safety: `center`, `context`, and all negatives must be in-bounds rows of
/// tables valid for the lifetime of the call.
unsafe fn pair_step_raw(
    t: TablePtr,
    center: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
    scratch: &mut [f64],
) -> f64 {
    let dim = t.dim;
    let r = std::slice::from_raw_parts_mut(t.rows.add(center * dim), dim);
    scratch[..dim].fill(0.0);
    let mut loss = 0.0;

    {
        let c = std::slice::from_raw_parts_mut(t.ctx.add(context * dim), dim);
        let s: f64 = r.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
        loss += softplus(-s);
        let g = sigmoid(-s);
        for k in 0..dim {
            let ck = c[k];
            scratch[k] += g * ck;
            c[k] = ck + lr * g * r[k];
        }
    }

    for &neg in negatives {
        let c = std::slice::from_raw_parts_mut(t.ctx.add(neg * dim), dim);
        let s: f64 = r.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
        loss += softplus(s);
        let g = -sigmoid(s);
        for k in 0..dim {
            let ck = c[k];
            scratch[k] += g * ck;
            c[k] = ck + lr * g * r[k];
        }
    }

    for k in 0..dim {
        r[k] += lr * scratch[k];
    }
    loss
}

/// One stochastic gradient ascent step for the pair (center, context) with
/// the given negatives. Center gradients accumulate against pre-update
/// context values, so the step is exact simultaneous SGD on the pair
/// objective. Returns the pair loss.
pub fn sgns_pair_step(
    center: usize,
    context: usize,
    negatives: &[usize],
    emb: &mut EmbeddingMatrix,
    lr: f64,
) -> f64 {
    let n = emb.n_nodes();
    assert!(center < n && context < n, "pair indices out of range");
    assert!(negatives.iter().all(|&x| x < n), "negative index out of range");
    let dim = emb.dim();
    let t = TablePtr {
        rows: emb.rows.as_slice_mut().expect("standard layout").as_mut_ptr(),
        ctx: emb
            .context_rows
            .as_slice_mut()
            .expect("standard layout")
            .as_mut_ptr(),
        dim,
    };
    let mut scratch = vec![0.0; dim];
    // Uniquely owned tables in this path; no concurrent access.
    unsafe { pair_step_raw(t, center, context, negatives, lr, &mut scratch) }
}

/// Training result: the tables plus the per-epoch mean pair loss trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub embedding: EmbeddingMatrix,
    pub epoch_mean_loss: Vec<f64>,
    pub pairs_processed: u64,
}

fn epoch_corpus(
    graph: &Graph,
    walk_cfg: &WalkConfig,
    epoch: usize,
) -> Result<WalkCorpus> {
    let mut cfg = walk_cfg.clone();
    cfg.seed = mix2(walk_cfg.seed, epoch as u64);
    generate_walks(graph, &cfg)
}

/// Train SGNS over the corpus. The exported embedding is the center table.
pub fn train(
    corpus: &WalkCorpus,
    cfg: &TrainConfig,
    graph: &Graph,
    walk_cfg: &WalkConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.n_nodes() != graph.node_count() {
        return Err(Error::usage(format!(
            "corpus was walked on {} nodes but the graph has {}",
            corpus.n_nodes(),
            graph.node_count()
        )));
    }
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::usage("cannot train embeddings on an empty graph"));
    }

    let mut emb = init_embeddings(n, cfg);
    let neg_seed = derive_seed(cfg.seed, "negative-sampling");
    let mut epoch_mean_loss = Vec::with_capacity(cfg.epochs);
    let mut pairs_processed = 0u64;

    for epoch in 0..cfg.epochs {
        let fresh;
        let walks = if cfg.resample_walks_each_epoch {
            fresh = epoch_corpus(graph, walk_cfg, epoch)?;
            &fresh
        } else {
            corpus
        };

        let (loss_sum, pair_count) = if cfg.workers > 1 {
            train_epoch_parallel(&mut emb, walks, cfg, neg_seed, epoch)?
        } else {
            train_epoch_single(&mut emb, walks, cfg, neg_seed, epoch)?
        };
        pairs_processed += pair_count;
        epoch_mean_loss.push(if pair_count > 0 {
            loss_sum / pair_count as f64
        } else {
            0.0
        });
    }

    Ok(TrainOutcome {
        embedding: emb,
        epoch_mean_loss,
        pairs_processed,
    })
}

/// Walk the window pairs of one walk slice, performing a step per pair.
/// Returns (loss sum, pair count) or the first non-finite loss as an error.
fn sweep_walks(
    t: TablePtr,
    walks: &[Vec<crate::graph::NodeId>],
    cfg: &TrainConfig,
    sampler: &mut NegativeSampler,
    epoch: usize,
) -> Result<(f64, u64)> {
    let mut scratch = vec![0.0; cfg.dim];
    let mut negatives = Vec::with_capacity(cfg.negatives_per_positive);
    let mut loss_sum = 0.0;
    let mut pair_count = 0u64;
    for walk in walks {
        for i in 0..walk.len() {
            let lo = i.saturating_sub(cfg.window);
            let hi = (i + cfg.window).min(walk.len() - 1);
            for j in lo..=hi {
                if j == i {
                    continue;
                }
                let center = walk[i].index();
                let context = walk[j].index();
                negatives.clear();
                for _ in 0..cfg.negatives_per_positive {
                    if let Some(neg) = sampler.draw_excluding(context) {
                        negatives.push(neg);
                    }
                }
                // Single-threaded: exclusive table access. Parallel: races
                // accepted by design.
                let loss =
                    unsafe { pair_step_raw(t, center, context, &negatives, cfg.learning_rate, &mut scratch) };
                if !loss.is_finite() {
                    return Err(Error::numerical(format!(
                        "non-finite pair loss at epoch {epoch}, pair {pair_count}"
                    )));
                }
                loss_sum += loss;
                pair_count += 1;
            }
        }
    }
    Ok((loss_sum, pair_count))
}

fn table_ptr(emb: &mut EmbeddingMatrix) -> TablePtr {
    TablePtr {
        rows: emb.rows.as_slice_mut().expect("standard layout").as_mut_ptr(),
        ctx: emb
            .context_rows
            .as_slice_mut()
            .expect("standard layout")
            .as_mut_ptr(),
        dim: emb.dim(),
    }
}

fn train_epoch_single(
    emb: &mut EmbeddingMatrix,
    corpus: &WalkCorpus,
    cfg: &TrainConfig,
    neg_seed: u64,
    epoch: usize,
) -> Result<(f64, u64)> {
    let mut sampler = NegativeSampler::from_corpus(corpus, mix2(neg_seed, epoch as u64))?;
    let t = table_ptr(emb);
    sweep_walks(t, corpus.walks(), cfg, &mut sampler, epoch)
}

/// Lock-free parallel epoch: workers sweep disjoint walk chunks over shared
/// tables without synchronization.
fn train_epoch_parallel(
    emb: &mut EmbeddingMatrix,
    corpus: &WalkCorpus,
    cfg: &TrainConfig,
    neg_seed: u64,
    epoch: usize,
) -> Result<(f64, u64)> {
    let workers = cfg.workers;
    let t = table_ptr(emb);
    let walks = corpus.walks();
    let chunk = walks.len().div_ceil(workers).max(1);
    let results: Vec<Result<(f64, u64)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = walks
            .chunks(chunk)
            .enumerate()
            .map(|(w, slice)| {
                let cfg = cfg.clone();
                let mut sampler = NegativeSampler::from_corpus(
                    corpus,
                    mix3(neg_seed, epoch as u64, w as u64),
                )
                .expect("corpus already validated");
                scope.spawn(move || sweep_walks(t, slice, &cfg, &mut sampler, epoch))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut loss_sum = 0.0;
    let mut pair_count = 0u64;
    for r in results {
        let (l, c) = r?;
        loss_sum += l;
        pair_count += c;
    }
    Ok((loss_sum, pair_count))
}

/// Zone-level embedding: per-zone arithmetic mean of node rows, plus the
/// scalar per-zone mean over all dimensions.
#[derive(Debug, Clone)]
pub struct ZoneEmbedding {
    pub zone_ids: Vec<String>,
    pub matrix: Array2<f64>,
    pub embd_readout: Vec<f64>,
}

impl ZoneEmbedding {
    /// Builds from zone rows, deriving the scalar readout column.
    pub fn from_parts(zone_ids: Vec<String>, matrix: Array2<f64>) -> ZoneEmbedding {
        assert_eq!(zone_ids.len(), matrix.nrows());
        let dim = matrix.ncols().max(1);
        let embd_readout = matrix
            .rows()
            .into_iter()
            .map(|r| r.sum() / dim as f64)
            .collect();
        ZoneEmbedding {
            zone_ids,
            matrix,
            embd_readout,
        }
    }

    pub fn n_zones(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

fn rows_mean_by_group(
    rows: &Array2<f64>,
    groups: &[Vec<usize>],
    zone_ids: Vec<String>,
) -> ZoneEmbedding {
    let dim = rows.ncols();
    let mut matrix = Array2::zeros((groups.len(), dim));
    for (z, members) in groups.iter().enumerate() {
        for &i in members {
            for k in 0..dim {
                matrix[[z, k]] += rows[[i, k]];
            }
        }
        let m = members.len() as f64;
        for k in 0..dim {
            matrix[[z, k]] /= m;
        }
    }
    let embd_readout = matrix
        .rows()
        .into_iter()
        .map(|r| r.sum() / dim as f64)
        .collect();
    ZoneEmbedding {
        zone_ids,
        matrix,
        embd_readout,
    }
}

/// Aggregate node rows to zone rows by arithmetic mean.
pub fn readout(emb: &EmbeddingMatrix, assignment: &TractAssignment) -> ZoneEmbedding {
    assert_eq!(
        emb.n_nodes(),
        assignment.node_count(),
        "embedding and assignment disagree on node count"
    );
    let groups: Vec<Vec<usize>> = (0..assignment.zone_count())
        .map(|z| assignment.zone_nodes(z).iter().map(|v| v.index()).collect())
        .collect();
    rows_mean_by_group(&emb.rows, &groups, assignment.zone_labels().to_vec())
}

/// Readout straight from a labeled embedding file: group rows by the zone
/// each label maps to. Labels missing from the map are an error; map entries
/// without a row are ignored.
pub fn readout_labeled(
    labels: &[String],
    rows: &Array2<f64>,
    zone_pairs: &[(String, String)],
) -> Result<ZoneEmbedding> {
    use std::collections::{BTreeMap, HashMap};
    let zone_of: HashMap<&str, &str> = zone_pairs
        .iter()
        .map(|(n, z)| (n.as_str(), z.as_str()))
        .collect();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        let Some(zone) = zone_of.get(label.as_str()) else {
            return Err(Error::data(format!(
                "embedding row {label} has no zone assignment"
            )));
        };
        groups.entry(zone).or_default().push(i);
    }
    let zone_ids: Vec<String> = groups.keys().map(|z| z.to_string()).collect();
    let members: Vec<Vec<usize>> = groups.into_values().collect();
    Ok(rows_mean_by_group(rows, &members, zone_ids))
}
