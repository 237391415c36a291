//! Topological simplification: contract degree-2 interstitial nodes so each
//! surviving edge spans a full segment between junctions, and prune dead-end
//! spurs.
//!
//! Contraction runs on a scratch multigraph: replacing the two edges of a
//! degree-2 node by their concatenation can produce parallel edges (two
//! nodes joined by two distinct contracted paths) or self-loops (a pure
//! cycle folding onto itself). Parallels stay in play so degrees keep
//! counting both strands; self-loops are dropped on creation and recorded.
//! After contraction reaches a fixed point, parallels are merged keeping the
//! minimum weight; merging lowers degrees, which can expose new degree-2
//! nodes, so the whole cycle repeats until nothing changes. The result is a
//! simple graph with no degree-2 nodes, which makes the operation
//! idempotent.

use std::collections::VecDeque;

use crate::graph::Graph;

/// Ledger for one simplification. Dropped lengths account for every unit of
/// weight that left the network:
/// `length_before = length_after + self_loop_length + parallel_length_dropped`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimplifySummary {
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub edges_before: usize,
    pub edges_after: usize,
    pub length_before: f64,
    pub length_after: f64,
    pub contracted_nodes: usize,
    pub self_loops_dropped: usize,
    pub self_loop_length: f64,
    pub parallel_edges_merged: usize,
    pub parallel_length_dropped: f64,
}

impl SimplifySummary {
    /// Plain-text ledger.
    pub fn render(&self) -> String {
        format!(
            "nodes_before = {}\nnodes_after = {}\nedges_before = {}\nedges_after = {}\n\
             length_before = {}\nlength_after = {}\ncontracted_nodes = {}\n\
             self_loops_dropped = {}\nself_loop_length = {}\n\
             parallel_edges_merged = {}\nparallel_length_dropped = {}\n",
            self.nodes_before,
            self.nodes_after,
            self.edges_before,
            self.edges_after,
            self.length_before,
            self.length_after,
            self.contracted_nodes,
            self.self_loops_dropped,
            self.self_loop_length,
            self.parallel_edges_merged,
            self.parallel_length_dropped,
        )
    }
}

/// Scratch multigraph: edges are rows in a struct-of-arrays store, nodes
/// keep lists of incident edge ids (possibly stale; filtered by `alive`).
struct Multi {
    ea: Vec<u32>,
    eb: Vec<u32>,
    ew: Vec<f64>,
    alive: Vec<bool>,
    incident: Vec<Vec<u32>>,
    degree: Vec<u32>,
}

impl Multi {
    fn from_graph(g: &Graph) -> Multi {
        let n = g.node_count();
        let mut m = Multi {
            ea: Vec::new(),
            eb: Vec::new(),
            ew: Vec::new(),
            alive: Vec::new(),
            incident: vec![Vec::new(); n],
            degree: vec![0; n],
        };
        for (a, b, w) in g.edges() {
            m.add_edge(a.0, b.0, w);
        }
        m
    }

    fn add_edge(&mut self, a: u32, b: u32, w: f64) -> u32 {
        let id = self.ea.len() as u32;
        self.ea.push(a);
        self.eb.push(b);
        self.ew.push(w);
        self.alive.push(true);
        self.incident[a as usize].push(id);
        self.incident[b as usize].push(id);
        self.degree[a as usize] += 1;
        self.degree[b as usize] += 1;
        id
    }

    fn kill_edge(&mut self, id: u32) {
        debug_assert!(self.alive[id as usize]);
        self.alive[id as usize] = false;
        self.degree[self.ea[id as usize] as usize] -= 1;
        self.degree[self.eb[id as usize] as usize] -= 1;
    }

    fn other(&self, id: u32, v: u32) -> u32 {
        let (a, b) = (self.ea[id as usize], self.eb[id as usize]);
        if a == v {
            b
        } else {
            debug_assert_eq!(b, v);
            a
        }
    }

    /// The two alive incident edges of a degree-2 node, compacting the
    /// incident list along the way.
    fn two_alive(&mut self, v: u32) -> (u32, u32) {
        self.incident[v as usize].retain(|&id| self.alive[id as usize]);
        debug_assert_eq!(self.incident[v as usize].len(), 2);
        (self.incident[v as usize][0], self.incident[v as usize][1])
    }
}

/// Contract degree-2 nodes and merge the resulting parallel edges until the
/// graph stops changing. Surviving node labels are preserved; ids are
/// re-packed densely in ascending old-id order.
pub fn simplify_topology(g: &Graph) -> (Graph, SimplifySummary) {
    let n = g.node_count();
    let mut summary = SimplifySummary {
        nodes_before: n,
        edges_before: g.edge_count(),
        length_before: g.total_length(),
        ..SimplifySummary::default()
    };

    let mut m = Multi::from_graph(g);
    let mut contracted = vec![false; n];

    loop {
        // Phase 1: contract to a fixed point under multigraph degrees.
        let mut queue: VecDeque<u32> = (0..n as u32)
            .filter(|&v| !contracted[v as usize] && m.degree[v as usize] == 2)
            .collect();
        while let Some(v) = queue.pop_front() {
            if contracted[v as usize] || m.degree[v as usize] != 2 {
                continue;
            }
            let (e1, e2) = m.two_alive(v);
            let a = m.other(e1, v);
            let b = m.other(e2, v);
            // Self-loops never live in the store, so both far ends differ
            // from v.
            debug_assert!(a != v && b != v);
            let w = m.ew[e1 as usize] + m.ew[e2 as usize];
            m.kill_edge(e1);
            m.kill_edge(e2);
            contracted[v as usize] = true;
            summary.contracted_nodes += 1;
            if a == b {
                // The two strands closed into a loop at `a`.
                summary.self_loops_dropped += 1;
                summary.self_loop_length += w;
                if m.degree[a as usize] == 2 {
                    queue.push_back(a);
                }
            } else {
                m.add_edge(a, b, w);
            }
        }

        // Phase 2: merge parallel strands keeping the minimum weight.
        let mut by_key: Vec<(u64, u32)> = (0..m.ea.len() as u32)
            .filter(|&id| m.alive[id as usize])
            .map(|id| {
                let (a, b) = (m.ea[id as usize], m.eb[id as usize]);
                let key = (u64::from(a.min(b)) << 32) | u64::from(a.max(b));
                (key, id)
            })
            .collect();
        by_key.sort_unstable();
        let mut merges = 0usize;
        let mut i = 0;
        while i < by_key.len() {
            let mut j = i + 1;
            while j < by_key.len() && by_key[j].0 == by_key[i].0 {
                j += 1;
            }
            if j - i > 1 {
                // Keep the lightest strand; first id wins ties.
                let keep = by_key[i..j]
                    .iter()
                    .map(|&(_, id)| id)
                    .min_by(|&x, &y| {
                        m.ew[x as usize]
                            .partial_cmp(&m.ew[y as usize])
                            .expect("finite weights")
                            .then(x.cmp(&y))
                    })
                    .expect("non-empty group");
                for &(_, id) in &by_key[i..j] {
                    if id != keep {
                        summary.parallel_length_dropped += m.ew[id as usize];
                        m.kill_edge(id);
                        merges += 1;
                    }
                }
            }
            i = j;
        }
        summary.parallel_edges_merged += merges;
        if merges == 0 {
            break;
        }
    }

    // Re-pack surviving nodes densely, preserving label order by old id.
    let mut new_id = vec![u32::MAX; n];
    let mut labels = Vec::new();
    for v in 0..n as u32 {
        if !contracted[v as usize] {
            new_id[v as usize] = labels.len() as u32;
            labels.push(g.label(crate::graph::NodeId(v)).to_string());
        }
    }
    let edges: Vec<(u32, u32, f64)> = (0..m.ea.len())
        .filter(|&id| m.alive[id])
        .map(|id| (new_id[m.ea[id] as usize], new_id[m.eb[id] as usize], m.ew[id]))
        .collect();
    let out = Graph::from_parts(labels, &edges);

    summary.nodes_after = out.node_count();
    summary.edges_after = out.edge_count();
    summary.length_after = out.total_length();
    (out, summary)
}

/// Ledger for dead-end pruning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruneSummary {
    pub rounds_requested: usize,
    pub rounds_effective: usize,
    pub nodes_removed: usize,
    pub edges_removed: usize,
    pub length_removed: f64,
}

/// Remove all current degree-1 nodes, `rounds` times. Removals within a
/// round are simultaneous: both endpoints of an isolated segment go in the
/// same round, leaving nothing. Zero rounds is the identity.
pub fn prune_dead_ends(g: &Graph, rounds: usize) -> (Graph, PruneSummary) {
    let mut summary = PruneSummary {
        rounds_requested: rounds,
        ..PruneSummary::default()
    };
    let mut cur = g.clone();
    for _ in 0..rounds {
        let doomed: Vec<bool> = cur.nodes().map(|v| cur.degree(v) == 1).collect();
        if !doomed.iter().any(|&d| d) {
            break;
        }
        summary.rounds_effective += 1;
        let mut new_id = vec![u32::MAX; cur.node_count()];
        let mut labels = Vec::new();
        for v in cur.nodes() {
            if !doomed[v.index()] {
                new_id[v.index()] = labels.len() as u32;
                labels.push(cur.label(v).to_string());
            }
        }
        let mut edges = Vec::new();
        for (a, b, w) in cur.edges() {
            if doomed[a.index()] || doomed[b.index()] {
                summary.edges_removed += 1;
                summary.length_removed += w;
            } else {
                edges.push((new_id[a.index()], new_id[b.index()], w));
            }
        }
        summary.nodes_removed += doomed.iter().filter(|&&d| d).count();
        cur = Graph::from_parts(labels, &edges);
    }
    (cur, summary)
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

    fn ledger_balances(s: &SimplifySummary) -> bool {
        s.length_before == s.length_after + s.self_loop_length + s.parallel_length_dropped
    }

    #[test]
    fn chain_contracts_to_single_edge() {
        let g = graph(&[("a", "b", 1.0), ("b", "c", 1.0), ("c", "d", 1.0)]);
        let (s, summary) = simplify_topology(&g);
        assert_eq!(s.node_count(), 2);
        assert_eq!(s.edge_count(), 1);
        assert_eq!(s.total_length(), 3.0);
        assert_eq!(summary.contracted_nodes, 2);
        let a = s.node_id("a").unwrap();
        let d = s.node_id("d").unwrap();
        assert_eq!(s.weight(a, d), Some(3.0));
        assert!(ledger_balances(&summary));
    }

    #[test]
    fn pure_cycle_collapses_to_one_isolated_node() {
        let g = graph(&[("a", "b", 1.0), ("b", "c", 2.0), ("c", "a", 4.0)]);
        let (s, summary) = simplify_topology(&g);
        assert_eq!(s.node_count(), 1);
        assert_eq!(s.edge_count(), 0);
        assert_eq!(summary.self_loops_dropped, 1);
        assert_eq!(summary.self_loop_length, 7.0);
        assert!(ledger_balances(&summary));
    }

    #[test]
    fn star_is_untouched() {
        let g = graph(&[("c", "l1", 1.0), ("c", "l2", 2.0), ("c", "l3", 3.0)]);
        let (s, summary) = simplify_topology(&g);
        assert_eq!(&s, &g);
        assert_eq!(summary.contracted_nodes, 0);
        assert_eq!(summary.nodes_after, 4);
        assert!(ledger_balances(&summary));
    }

    #[test]
    fn parallel_strands_merge_to_minimum() {
        // Two junctions joined by a direct edge and a 2-hop detour through x.
        let g = graph(&[
            ("a", "b", 5.0),
            ("a", "x", 1.0),
            ("x", "b", 1.0),
            // Anchor degrees so a and b stay junctions.
            ("a", "p", 1.0),
            ("a", "q", 1.0),
            ("b", "r", 1.0),
            ("b", "s", 1.0),
        ]);
        let (s, summary) = simplify_topology(&g);
        // x contracted into an a-b strand of weight 2, beating the direct 5.
        let a = s.node_id("a").unwrap();
        let b = s.node_id("b").unwrap();
        assert_eq!(s.weight(a, b), Some(2.0));
        assert_eq!(summary.parallel_edges_merged, 1);
        assert_eq!(summary.parallel_length_dropped, 5.0);
        assert!(ledger_balances(&summary));
    }

    #[test]
    fn merge_exposed_degree_two_nodes_are_contracted_too() {
        // u-v joined by two 2-hop strands (through x and y), and each of
        // u, v has one extra spur. After contraction u and v hold parallel
        // strands; merging leaves them degree 2, so they contract as well.
        let g = graph(&[
            ("u", "x", 1.0),
            ("x", "v", 1.0),
            ("u", "y", 2.0),
            ("y", "v", 2.0),
            ("su", "u", 1.0),
            ("v", "sv", 1.0),
        ]);
        let (s, summary) = simplify_topology(&g);
        // Everything folds into one su-sv segment: 1 + (1+1) + 1, with the
        // heavier 4-length strand dropped by the merge.
        assert_eq!(s.node_count(), 2);
        assert_eq!(s.edge_count(), 1);
        let su = s.node_id("su").unwrap();
        let sv = s.node_id("sv").unwrap();
        assert_eq!(s.weight(su, sv), Some(4.0));
        assert_eq!(summary.parallel_length_dropped, 4.0);
        assert!(ledger_balances(&summary));
    }

    #[test]
    fn isolated_and_empty_graphs_pass_through() {
        let (empty, summary) = simplify_topology(&Graph::from_parts(Vec::new(), &[]));
        assert_eq!(empty.node_count(), 0);
        assert_eq!(summary.nodes_after, 0);
        let lone = Graph::from_parts(vec!["z".into()], &[]);
        let (s, _) = simplify_topology(&lone);
        assert_eq!(s.node_count(), 1);
        assert_eq!(s.degree(crate::graph::NodeId(0)), 0);
    }

    #[test]
    fn simplify_is_idempotent_on_a_grid_with_spurs() {
        let g = graph(&[
            ("a", "b", 1.0),
            ("b", "c", 1.0),
            ("c", "d", 1.0),
            ("d", "a", 1.0),
            ("a", "c", 1.0),
            ("c", "t1", 1.0),
            ("t1", "t2", 1.0),
        ]);
        let (once, _) = simplify_topology(&g);
        let (twice, second) = simplify_topology(&once);
        assert_eq!(once, twice);
        assert_eq!(second.contracted_nodes, 0);
        assert_eq!(second.parallel_edges_merged, 0);
    }

    #[test]
    fn prune_removes_whole_spur_layer_per_round() {
        let g = graph(&[("a", "b", 1.0), ("b", "c", 1.0)]);
        let (one, summary) = prune_dead_ends(&g, 1);
        // Both endpoints are degree 1; the middle survives isolated.
        assert_eq!(one.node_count(), 1);
        assert_eq!(one.label(crate::graph::NodeId(0)), "b");
        assert_eq!(summary.nodes_removed, 2);
        assert_eq!(summary.edges_removed, 2);
        assert_eq!(summary.length_removed, 2.0);

        let tri = graph(&[("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0)]);
        let (same, s2) = prune_dead_ends(&tri, 5);
        assert_eq!(&same, &tri);
        assert_eq!(s2.rounds_effective, 0);

        let (zero, s0) = prune_dead_ends(&g, 0);
        assert_eq!(&zero, &g);
        assert_eq!(s0.rounds_requested, 0);
    }

    #[test]
    fn summary_render_mentions_every_ledger_field() {
        let g = graph(&[("a", "b", 1.0), ("b", "c", 1.0)]);
        let (_, summary) = simplify_topology(&g);
        let text = summary.render();
        for key in [
            "nodes_before",
            "nodes_after",
            "edges_before",
            "edges_after",
            "length_before",
            "length_after",
            "self_loops_dropped",
            "parallel_edges_merged",
        ] {
            assert!(text.contains(key), "missing {key}");
        }
    }
}
