//! Second-order biased random walks over the road graph.
//!
//! Each (source node, repetition) pair owns an independent ChaCha stream
//! seeded from the walk seed, so the corpus is identical no matter how many
//! worker threads generate it.

mod alias;
mod transition;

pub use alias::AliasTable;
pub use transition::{search_bias, transition_probs, TransitionTable, WeightTransform};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::seed::mix3;

/// Walk generation parameters.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WalkConfig {
    /// Return parameter: larger values discourage stepping back.
    pub p: f64,
    /// In-out parameter: smaller values push the walk outward.
    pub q: f64,
    /// Nodes per walk, including the source.
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub seed: u64,
    pub weight_transform: WeightTransform,
    /// Budget for precomputed per-edge alias tables; beyond it, transition
    /// distributions are recomputed per step instead.
    pub max_transition_entries: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            p: 1.0,
            q: 1.0,
            walk_length: 20,
            walks_per_node: 10,
            seed: 1,
            weight_transform: WeightTransform::Inverse,
            max_transition_entries: 100_000_000,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 0.0) || !(self.q.is_finite() && self.q > 0.0) {
            return Err(Error::usage(format!(
                "walk parameters p={} q={} must be positive and finite",
                self.p, self.q
            )));
        }
        if self.walk_length == 0 {
            return Err(Error::usage("walk_length must be at least 1"));
        }
        if self.walks_per_node == 0 {
            return Err(Error::usage("walks_per_node must be at least 1"));
        }
        Ok(())
    }
}

/// A generated walk corpus.
#[derive(Debug, Clone)]
pub struct WalkCorpus {
    walks: Vec<Vec<NodeId>>,
    node_frequency: Vec<u64>,
    n_nodes: usize,
}

impl WalkCorpus {
    /// Assemble a corpus from explicit walks; frequencies are recounted.
    pub fn from_walks(walks: Vec<Vec<NodeId>>, n_nodes: usize) -> WalkCorpus {
        let mut node_frequency = vec![0u64; n_nodes];
        for walk in &walks {
            for v in walk {
                node_frequency[v.index()] += 1;
            }
        }
        WalkCorpus {
            walks,
            node_frequency,
            n_nodes,
        }
    }

    pub fn walks(&self) -> &[Vec<NodeId>] {
        &self.walks
    }

    /// Occurrence count per node over all walk positions.
    pub fn node_frequency(&self) -> &[u64] {
        &self.node_frequency
    }

    /// Number of nodes in the graph the corpus was walked on.
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn len(&self) -> usize {
        self.walks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walks.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.walks.iter().map(Vec::len).sum()
    }

    /// Write one walk per line as space-separated node labels.
    pub fn dump<W: std::io::Write>(&self, graph: &Graph, out: &mut W) -> std::io::Result<()> {
        for walk in &self.walks {
            let mut first = true;
            for v in walk {
                if !first {
                    write!(out, " ")?;
                }
                write!(out, "{}", graph.label(*v))?;
                first = false;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Seed for the stream that drives walk `rep` out of `node`.
fn walk_stream_seed(seed: u64, node: NodeId, rep: usize) -> u64 {
    mix3(seed, u64::from(node.0), rep as u64)
}

fn single_walk(
    graph: &Graph,
    table: &TransitionTable,
    source: NodeId,
    length: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<NodeId> {
    let mut walk = Vec::with_capacity(length);
    walk.push(source);
    if length == 1 {
        return walk;
    }
    // An isolated source yields the one-element walk.
    let Some(second) = table.first_step(graph, source, rng) else {
        return walk;
    };
    walk.push(second);
    let mut prev = source;
    let mut cur = second;
    while walk.len() < length {
        // cur was reached over an edge, so it has at least one neighbor.
        let next = table.next_step(graph, prev, cur, rng);
        walk.push(next);
        prev = cur;
        cur = next;
    }
    walk
}

/// Generate `walks_per_node` walks per node. Walks are ordered by
/// (node id, repetition) and each walk starts at its source node.
pub fn generate_walks(graph: &Graph, cfg: &WalkConfig) -> Result<WalkCorpus> {
    cfg.validate()?;
    let table = TransitionTable::new(
        graph,
        cfg.p,
        cfg.q,
        cfg.weight_transform,
        cfg.max_transition_entries,
    )?;
    let n = graph.node_count();
    let total = n * cfg.walks_per_node;
    let walks: Vec<Vec<NodeId>> = (0..total)
        .into_par_iter()
        .map(|i| {
            let node = NodeId((i / cfg.walks_per_node) as u32);
            let rep = i % cfg.walks_per_node;
            let mut rng = ChaCha8Rng::seed_from_u64(walk_stream_seed(cfg.seed, node, rep));
            single_walk(graph, &table, node, cfg.walk_length, &mut rng)
        })
        .collect();

    let mut node_frequency = vec![0u64; n];
    for walk in &walks {
        for v in walk {
            node_frequency[v.index()] += 1;
        }
    }

    Ok(WalkCorpus {
        walks,
        node_frequency,
        n_nodes: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeInput;

    fn graph(edges: &[(&str, &str, f64)]) -> Graph {
        let edges: Vec<EdgeInput> = edges
            .iter()
            .map(|&(a, b, w)| EdgeInput::new(a, b, w))
            .collect();
        Graph::from_edges(&edges).unwrap().0
    }

    #[test]
    fn two_node_path_walk_alternates() {
        let g = graph(&[("a", "b", 1.0)]);
        let cfg = WalkConfig {
            walk_length: 3,
            walks_per_node: 1,
            ..WalkConfig::default()
        };
        let corpus = generate_walks(&g, &cfg).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.walks()[0], vec![NodeId(0), NodeId(1), NodeId(0)]);
        assert_eq!(corpus.walks()[1], vec![NodeId(1), NodeId(0), NodeId(1)]);
        assert_eq!(corpus.node_frequency(), &[3, 3]);
        assert_eq!(corpus.token_count(), 6);
    }

    #[test]
    fn walk_shape_and_sources_hold_on_a_mixed_graph() {
        let g = graph(&[("a", "b", 1.0), ("b", "c", 2.0), ("c", "a", 1.5)]);
        let cfg = WalkConfig {
            walk_length: 7,
            walks_per_node: 4,
            seed: 9,
            ..WalkConfig::default()
        };
        let corpus = generate_walks(&g, &cfg).unwrap();
        assert_eq!(corpus.len(), 12);
        for (i, walk) in corpus.walks().iter().enumerate() {
            assert_eq!(walk.len(), 7);
            assert_eq!(walk[0], NodeId((i / 4) as u32));
            for pair in walk.windows(2) {
                assert!(g.has_edge(pair[0], pair[1]));
            }
        }
    }

    #[test]
    fn isolated_node_walks_are_single_element() {
        // d is only reachable via a dropped self-loop, leaving it isolated.
        let (g, _) = Graph::from_edges(&[
            EdgeInput::new("a", "b", 1.0),
            EdgeInput::new("d", "d", 1.0),
        ])
        .unwrap();
        let cfg = WalkConfig {
            walk_length: 5,
            walks_per_node: 2,
            ..WalkConfig::default()
        };
        let corpus = generate_walks(&g, &cfg).unwrap();
        let d = g.node_id("d").unwrap();
        for rep in 0..2 {
            assert_eq!(corpus.walks()[d.index() * 2 + rep], vec![d]);
        }
    }

    #[test]
    fn corpus_is_identical_across_thread_counts() {
        let g = graph(&[
            ("a", "b", 1.0),
            ("b", "c", 2.0),
            ("c", "d", 1.0),
            ("d", "a", 3.0),
            ("a", "c", 0.5),
        ]);
        let cfg = WalkConfig {
            walk_length: 10,
            walks_per_node: 5,
            seed: 77,
            ..WalkConfig::default()
        };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let w1 = pool1.install(|| generate_walks(&g, &cfg)).unwrap();
        let w4 = pool4.install(|| generate_walks(&g, &cfg)).unwrap();
        assert_eq!(w1.walks(), w4.walks());
        let again = pool4.install(|| generate_walks(&g, &cfg)).unwrap();
        assert_eq!(w4.walks(), again.walks());
    }

    #[test]
    fn dump_writes_labels_one_walk_per_line() {
        let g = graph(&[("x", "y", 1.0)]);
        let cfg = WalkConfig {
            walk_length: 2,
            walks_per_node: 1,
            ..WalkConfig::default()
        };
        let corpus = generate_walks(&g, &cfg).unwrap();
        let mut buf = Vec::new();
        corpus.dump(&g, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x y\ny x\n");
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        let g = graph(&[("a", "b", 1.0)]);
        for cfg in [
            WalkConfig { p: 0.0, ..WalkConfig::default() },
            WalkConfig { q: -1.0, ..WalkConfig::default() },
            WalkConfig { walk_length: 0, ..WalkConfig::default() },
            WalkConfig { walks_per_node: 0, ..WalkConfig::default() },
        ] {
            assert!(generate_walks(&g, &cfg).is_err());
        }
    }
}
