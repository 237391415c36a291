//! Undirected weighted graph with string labels and dense integer ids.

use std::collections::BTreeMap;
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Dense node index, assigned in first-appearance order of labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One raw input edge. `row` is the 1-based position in the source listing,
/// kept so errors can name the offending record.
#[derive(Debug, Clone)]
pub struct EdgeInput {
    pub a: String,
    pub b: String,
    pub weight: f64,
    pub row: usize,
}

impl EdgeInput {
    pub fn new(a: impl Into<String>, b: impl Into<String>, weight: f64) -> Self {
        EdgeInput {
            a: a.into(),
            b: b.into(),
            weight,
            row: 0,
        }
    }
}

/// What construction discarded. Lengths are summed edge weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub self_loops_dropped: usize,
    pub self_loop_length: f64,
    pub parallel_edges_merged: usize,
    pub parallel_length_dropped: f64,
}

/// Undirected weighted simple graph. Invariants:
/// - adjacency lists are sorted by neighbor id and never contain the node
///   itself or duplicate neighbors;
/// - every edge weight is finite and strictly positive;
/// - `labels[i]` is the label of node `i` and `label_index` is its inverse.
#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: Vec<Vec<(NodeId, f64)>>,
    labels: Vec<String>,
    label_index: HashMap<String, NodeId>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.adjacency == other.adjacency
    }
}

impl Graph {
    /// Build from an edge list. Self-loops are dropped, parallel edges are
    /// merged keeping the minimum weight; both are recorded in the report.
    /// Isolated nodes can only come in through `extra_nodes` on
    /// [`Graph::from_parts`]; an edge list alone never produces one.
    pub fn from_edges(edges: &[EdgeInput]) -> Result<(Graph, BuildReport)> {
        let mut labels: Vec<String> = Vec::new();
        let mut label_index: HashMap<String, NodeId> = HashMap::new();
        let mut intern = |label: &str, labels: &mut Vec<String>| -> NodeId {
            if let Some(id) = label_index.get(label) {
                return *id;
            }
            let id = NodeId(labels.len() as u32);
            labels.push(label.to_string());
            label_index.insert(label.to_string(), id);
            id
        };

        let mut report = BuildReport::default();
        // Keyed by (min, max) id so parallels collide; BTreeMap keeps edge
        // iteration deterministic.
        let mut merged: BTreeMap<(u32, u32), f64> = BTreeMap::new();

        for (i, e) in edges.iter().enumerate() {
            let row = if e.row > 0 { e.row } else { i + 1 };
            if !e.weight.is_finite() || e.weight <= 0.0 {
                return Err(Error::data(format!(
                    "edge record {row} ({} -- {}): weight {} must be finite and positive",
                    e.a, e.b, e.weight
                )));
            }
            let ia = intern(&e.a, &mut labels);
            let ib = intern(&e.b, &mut labels);
            if ia == ib {
                report.self_loops_dropped += 1;
                report.self_loop_length += e.weight;
                continue;
            }
            let key = (ia.0.min(ib.0), ia.0.max(ib.0));
            match merged.get_mut(&key) {
                None => {
                    merged.insert(key, e.weight);
                }
                Some(w) => {
                    report.parallel_edges_merged += 1;
                    report.parallel_length_dropped += e.weight.max(*w);
                    *w = w.min(e.weight);
                }
            }
        }

        let mut adjacency = vec![Vec::new(); labels.len()];
        for (&(a, b), &w) in &merged {
            adjacency[a as usize].push((NodeId(b), w));
            adjacency[b as usize].push((NodeId(a), w));
        }
        for list in &mut adjacency {
            list.sort_by_key(|(n, _)| n.0);
        }

        Ok((
            Graph {
                adjacency,
                labels,
                label_index,
            },
            report,
        ))
    }

    /// Build from pre-validated parts: labels plus unique undirected edges on
    /// ids, with optional isolated nodes already included in `labels`.
    /// Intended for internal rebuilds (simplification, pruning, synthesis);
    /// panics on violated invariants rather than returning errors.
    pub(crate) fn from_parts(labels: Vec<String>, edges: &[(u32, u32, f64)]) -> Graph {
        let mut label_index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            let prev = label_index.insert(l.clone(), NodeId(i as u32));
            assert!(prev.is_none(), "duplicate label {l}");
        }
        let mut adjacency = vec![Vec::new(); labels.len()];
        for &(a, b, w) in edges {
            assert!(a != b && w.is_finite() && w > 0.0);
            adjacency[a as usize].push((NodeId(b), w));
            adjacency[b as usize].push((NodeId(a), w));
        }
        for list in &mut adjacency {
            list.sort_by_key(|(n, _)| n.0);
            debug_assert!(list.windows(2).all(|p| p[0].0 != p[1].0));
        }
        Graph {
            adjacency,
            labels,
            label_index,
        }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v.index()].len()
    }

    /// Neighbors of `v` with edge weights, sorted by neighbor id.
    pub fn neighbors(&self, v: NodeId) -> &[(NodeId, f64)] {
        &self.adjacency[v.index()]
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adjacency[u.index()]
            .binary_search_by_key(&v.0, |(n, _)| n.0)
            .is_ok()
    }

    pub fn weight(&self, u: NodeId, v: NodeId) -> Option<f64> {
        self.adjacency[u.index()]
            .binary_search_by_key(&v.0, |(n, _)| n.0)
            .ok()
            .map(|i| self.adjacency[u.index()][i].1)
    }

    /// Sum of all edge weights (each undirected edge counted once).
    pub fn total_length(&self) -> f64 {
        self.edges().map(|(_, _, w)| w).sum()
    }

    /// Iterate undirected edges as (a, b, weight) with a < b, ordered by id.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(a, list)| {
            let a = NodeId(a as u32);
            list.iter()
                .filter(move |(b, _)| a.0 < b.0)
                .map(move |&(b, w)| (a, b, w))
        })
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.labels.len() as u32).map(NodeId)
    }

    pub fn label(&self, v: NodeId) -> &str {
        &self.labels[v.index()]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn node_id(&self, label: &str) -> Option<NodeId> {
        self.label_index.get(label).copied()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.index() < self.labels.len()
    }

    /// Connected check via breadth-first search; the empty graph counts as
    /// connected.
    pub fn is_connected(&self) -> bool {
        if self.node_count() == 0 {
            return true;
        }
        let mut seen = vec![false; self.node_count()];
        let mut queue = std::collections::VecDeque::new();
        seen[0] = true;
        queue.push_back(NodeId(0));
        let mut reached = 1usize;
        while let Some(v) = queue.pop_front() {
            for &(n, _) in self.neighbors(v) {
                if !seen[n.index()] {
                    seen[n.index()] = true;
                    reached += 1;
                    queue.push_back(n);
                }
            }
        }
        reached == self.node_count()
    }
}

/// Node-to-zone assignment covering every node of a graph exactly once.
/// Zones are kept in sorted label order.
#[derive(Debug, Clone)]
pub struct TractAssignment {
    zone_labels: Vec<String>,
    zone_of: Vec<u32>,
    nodes_by_zone: Vec<Vec<NodeId>>,
}

impl TractAssignment {
    /// Build from (node label, zone label) pairs. Pairs whose node label is
    /// not in the graph are ignored (a simplified graph has fewer nodes than
    /// the original map). Every graph node must be covered exactly once.
    pub fn new(graph: &Graph, pairs: &[(String, String)]) -> Result<TractAssignment> {
        let n = graph.node_count();
        let mut zone_label_of: Vec<Option<&str>> = vec![None; n];
        for (node_label, zone_label) in pairs {
            let Some(id) = graph.node_id(node_label) else {
                continue;
            };
            match zone_label_of[id.index()] {
                None => zone_label_of[id.index()] = Some(zone_label),
                Some(prev) if prev == zone_label => {}
                Some(prev) => {
                    return Err(Error::data(format!(
                        "node {node_label} assigned to both zone {prev} and zone {zone_label}"
                    )));
                }
            }
        }

        let missing: Vec<&str> = graph
            .nodes()
            .filter(|v| zone_label_of[v.index()].is_none())
            .map(|v| graph.label(v))
            .take(5)
            .collect();
        if !missing.is_empty() {
            return Err(Error::data(format!(
                "{} graph node(s) missing a zone assignment, e.g. {}",
                graph
                    .nodes()
                    .filter(|v| zone_label_of[v.index()].is_none())
                    .count(),
                missing.join(", ")
            )));
        }

        let mut zone_labels: Vec<String> = zone_label_of
            .iter()
            .map(|z| z.expect("covered").to_string())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        zone_labels.sort();
        let zone_rank: HashMap<&str, u32> = zone_labels
            .iter()
            .enumerate()
            .map(|(i, z)| (z.as_str(), i as u32))
            .collect();

        let mut zone_of = vec![0u32; n];
        let mut nodes_by_zone = vec![Vec::new(); zone_labels.len()];
        for v in graph.nodes() {
            let z = zone_rank[zone_label_of[v.index()].expect("covered")];
            zone_of[v.index()] = z;
            nodes_by_zone[z as usize].push(v);
        }

        Ok(TractAssignment {
            zone_labels,
            zone_of,
            nodes_by_zone,
        })
    }

    pub fn zone_count(&self) -> usize {
        self.zone_labels.len()
    }

    pub fn node_count(&self) -> usize {
        self.zone_of.len()
    }

    /// Zone labels in sorted order; indices elsewhere refer to this order.
    pub fn zone_labels(&self) -> &[String] {
        &self.zone_labels
    }

    pub fn zone_of(&self, v: NodeId) -> usize {
        self.zone_of[v.index()] as usize
    }

    pub fn zone_index(&self, zone_label: &str) -> Option<usize> {
        self.zone_labels
            .binary_search_by(|z| z.as_str().cmp(zone_label))
            .ok()
    }

    /// Nodes of one zone, ascending by id.
    pub fn zone_nodes(&self, zone: usize) -> &[NodeId] {
        &self.nodes_by_zone[zone]
    }
}
