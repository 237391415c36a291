//! Second-order transition machinery for biased walks.
//!
//! At node `v`, having arrived from `t`, the walk steps to neighbor `x` with
//! probability proportional to `bias(t, x) * weight(v, x)` where the bias
//! depends on the graph distance between `t` and `x`: `1/p` for returning to
//! `t`, `1` for a common neighbor of `t` and `v`, `1/q` otherwise. Distance
//! follows from one adjacency check because `x` is already a neighbor of `v`.

use rand::Rng;

use super::alias::AliasTable;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

/// How stored edge weights enter transition probabilities. Road lengths are
/// usually turned into affinities (short street, strong tie) via `Inverse`;
/// `Identity` uses the stored weight as the affinity directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightTransform {
    #[default]
    Inverse,
    Identity,
}

impl WeightTransform {
    #[inline]
    pub fn apply(self, w: f64) -> f64 {
        match self {
            WeightTransform::Inverse => 1.0 / w,
            WeightTransform::Identity => w,
        }
    }
}

impl std::str::FromStr for WeightTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse" => Ok(WeightTransform::Inverse),
            "identity" => Ok(WeightTransform::Identity),
            other => Err(Error::usage(format!(
                "unknown weight transform {other:?}; expected inverse or identity"
            ))),
        }
    }
}

impl std::fmt::Display for WeightTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightTransform::Inverse => "inverse",
            WeightTransform::Identity => "identity",
        })
    }
}

/// Search bias toward `x` for a walk at a neighbor of `x` that arrived from
/// `t`. `p` and `q` must be positive and finite.
#[inline]
pub fn search_bias(graph: &Graph, t: NodeId, x: NodeId, p: f64, q: f64) -> f64 {
    if x == t {
        1.0 / p
    } else if graph.has_edge(t, x) {
        1.0
    } else {
        1.0 / q
    }
}

fn check_pq(p: f64, q: f64) -> Result<()> {
    if !(p.is_finite() && p > 0.0 && q.is_finite() && q > 0.0) {
        return Err(Error::usage(format!(
            "return parameter p={p} and in-out parameter q={q} must be positive and finite"
        )));
    }
    Ok(())
}

/// Unnormalized transition affinities from `v` (arrived from `t`) toward each
/// neighbor of `v` in neighbor order, with `transform` applied to weights.
fn transition_weights(
    graph: &Graph,
    t: NodeId,
    v: NodeId,
    p: f64,
    q: f64,
    transform: WeightTransform,
) -> Vec<f64> {
    graph
        .neighbors(v)
        .iter()
        .map(|&(x, w)| search_bias(graph, t, x, p, q) * transform.apply(w))
        .collect()
}

/// Normalized second-order transition distribution over the neighbors of `v`
/// (in neighbor order) for a walk that arrived at `v` from `t`. Uses stored
/// weights as affinities.
pub fn transition_probs(
    graph: &Graph,
    t: NodeId,
    v: NodeId,
    p: f64,
    q: f64,
) -> Result<Vec<f64>> {
    check_pq(p, q)?;
    if !graph.contains(t) || !graph.contains(v) {
        return Err(Error::usage(format!(
            "transition nodes ({t}, {v}) out of range for a {}-node graph",
            graph.node_count()
        )));
    }
    if !graph.has_edge(t, v) {
        return Err(Error::usage(format!(
            "transition requires an edge between previous node {t} and current node {v}"
        )));
    }
    let mut w = transition_weights(graph, t, v, p, q, WeightTransform::Identity);
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    Ok(w)
}

/// Sampling tables for a whole graph. When the total table size
/// (sum over directed edges (t, v) of degree(v)) stays within the configured
/// budget, one alias table per directed edge is precomputed and every step is
/// O(1). Otherwise steps fall back to recomputing the distribution on the
/// fly; the distributions are identical either way.
pub struct TransitionTable {
    first: Vec<Option<AliasTable>>,
    second: SecondOrder,
    p: f64,
    q: f64,
    transform: WeightTransform,
}

enum SecondOrder {
    /// `offsets[t] + k` indexes the table for the directed edge from `t` to
    /// its k-th neighbor.
    Precomputed {
        offsets: Vec<usize>,
        tables: Vec<AliasTable>,
    },
    OnTheFly,
}

impl TransitionTable {
    pub fn new(
        graph: &Graph,
        p: f64,
        q: f64,
        transform: WeightTransform,
        max_entries: usize,
    ) -> Result<TransitionTable> {
        check_pq(p, q)?;

        let first = graph
            .nodes()
            .map(|u| {
                if graph.degree(u) == 0 {
                    return Ok(None);
                }
                let w: Vec<f64> = graph
                    .neighbors(u)
                    .iter()
                    .map(|&(_, w)| transform.apply(w))
                    .collect();
                AliasTable::new(&w).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;

        let entries: usize = graph
            .nodes()
            .flat_map(|t| graph.neighbors(t).iter().map(|&(v, _)| graph.degree(v)))
            .sum();
        let second = if entries <= max_entries {
            let mut offsets = Vec::with_capacity(graph.node_count());
            let mut next = 0usize;
            for t in graph.nodes() {
                offsets.push(next);
                next += graph.degree(t);
            }
            let mut tables = Vec::with_capacity(next);
            for t in graph.nodes() {
                for &(v, _) in graph.neighbors(t) {
                    // v is reachable over an edge, so degree(v) >= 1 and the
                    // bias keeps every affinity positive.
                    let w = transition_weights(graph, t, v, p, q, transform);
                    tables.push(AliasTable::new(&w)?);
                }
            }
            SecondOrder::Precomputed { offsets, tables }
        } else {
            SecondOrder::OnTheFly
        };

        Ok(TransitionTable {
            first,
            second,
            p,
            q,
            transform,
        })
    }

    pub fn is_precomputed(&self) -> bool {
        matches!(self.second, SecondOrder::Precomputed { .. })
    }

    /// First step out of `u`, biased only by transformed edge weights.
    /// `None` when `u` is isolated.
    pub fn first_step<R: Rng + ?Sized>(
        &self,
        graph: &Graph,
        u: NodeId,
        rng: &mut R,
    ) -> Option<NodeId> {
        let table = self.first[u.index()].as_ref()?;
        Some(graph.neighbors(u)[table.draw(rng)].0)
    }

    /// Second-order step: from `v`, having arrived from `t`. Requires the
    /// edge (t, v) to exist, which the walk loop guarantees.
    pub fn next_step<R: Rng + ?Sized>(
        &self,
        graph: &Graph,
        t: NodeId,
        v: NodeId,
        rng: &mut R,
    ) -> NodeId {
        match &self.second {
            SecondOrder::Precomputed { offsets, tables } => {
                let k = graph
                    .neighbors(t)
                    .binary_search_by_key(&v.0, |(n, _)| n.0)
                    .expect("walk arrived over a missing edge");
                let table = &tables[offsets[t.index()] + k];
                graph.neighbors(v)[table.draw(rng)].0
            }
            SecondOrder::OnTheFly => {
                let w = transition_weights(graph, t, v, self.p, self.q, self.transform);
                let total: f64 = w.iter().sum();
                let mut r = rng.random::<f64>() * total;
                let mut pick = w.len() - 1;
                for (i, &wi) in w.iter().enumerate() {
                    r -= wi;
                    if r < 0.0 {
                        pick = i;
                        break;
                    }
                }
                graph.neighbors(v)[pick].0
            }
        }
    }
}
