//! Randomized invariant checks over generated inputs.

use std::collections::HashMap;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modeshare_core::evaluation::{pearson, r_squared};
use modeshare_core::graph::{EdgeInput, Graph};
use modeshare_core::ingest::{simplify_topology, ModeShareTable};
use modeshare_core::walker::{generate_walks, WalkConfig};

/// Random connected graph: a spanning tree plus a few extra edges.
fn random_connected(graph_seed: u64, n: usize, extras: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(graph_seed);
    let mut edges = Vec::new();
    for i in 1..n {
        let parent = rng.random_range(0..i);
        edges.push(EdgeInput::new(
            format!("n{i}"),
            format!("n{parent}"),
            0.5 + rng.random::<f64>() * 2.5,
        ));
    }
    for _ in 0..extras {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push(EdgeInput::new(
                format!("n{a}"),
                format!("n{b}"),
                0.5 + rng.random::<f64>() * 2.5,
            ));
        }
    }
    Graph::from_edges(&edges).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every sampled walk is a real path: starts at its source, has the
    /// configured length, and only crosses existing edges.
    #[test]
    fn walks_are_paths_of_configured_shape(
        graph_seed in any::<u64>(),
        n in 3usize..12,
        extras in 0usize..4,
        p in 0.25f64..4.0,
        q in 0.25f64..4.0,
        walk_length in 2usize..8,
        walks_per_node in 1usize..4,
        seed in any::<u64>(),
    ) {
        let g = random_connected(graph_seed, n, extras);
        let cfg = WalkConfig { p, q, walk_length, walks_per_node, seed, ..WalkConfig::default() };
        let corpus = generate_walks(&g, &cfg).unwrap();
        prop_assert_eq!(corpus.len(), n * walks_per_node);

        let mut starts: HashMap<usize, usize> = HashMap::new();
        let mut occurrences = vec![0u64; n];
        for walk in corpus.walks() {
            prop_assert_eq!(walk.len(), walk_length);
            *starts.entry(walk[0].index()).or_default() += 1;
            for v in walk {
                occurrences[v.index()] += 1;
            }
            for pair in walk.windows(2) {
                prop_assert!(g.has_edge(pair[0], pair[1]), "walk steps over a non-edge");
            }
        }
        for v in 0..n {
            prop_assert_eq!(starts.get(&v).copied().unwrap_or(0), walks_per_node);
            prop_assert_eq!(corpus.node_frequency()[v], occurrences[v]);
        }
    }

    /// Graph building never loses length: kept + dropped equals the input
    /// total, whatever mix of self-loops and parallels arrives.
    #[test]
    fn graph_build_conserves_length(
        raw in prop::collection::vec((0u8..6, 0u8..6, 0.1f64..10.0), 1..30),
    ) {
        let edges: Vec<EdgeInput> = raw
            .iter()
            .map(|&(a, b, w)| EdgeInput::new(format!("n{a}"), format!("n{b}"), w))
            .collect();
        let input_total: f64 = raw.iter().map(|&(_, _, w)| w).sum();
        let (g, report) = Graph::from_edges(&edges).unwrap();
        let kept_plus_dropped =
            g.total_length() + report.self_loop_length + report.parallel_length_dropped;
        prop_assert!(
            (kept_plus_dropped - input_total).abs() <= 1e-9 * input_total.max(1.0),
            "{kept_plus_dropped} != {input_total}"
        );
    }

    /// Simplification reaches a fixed point with no degree-2 node left and
    /// a balanced length ledger.
    #[test]
    fn simplify_reaches_degree_two_free_fixed_point(
        graph_seed in any::<u64>(),
        n in 2usize..20,
        extras in 0usize..5,
    ) {
        let g = random_connected(graph_seed, n, extras);
        let (g2, s) = simplify_topology(&g);
        for v in g2.nodes() {
            prop_assert!(g2.degree(v) != 2, "degree-2 node survived simplification");
        }
        let balance = s.length_after + s.self_loop_length + s.parallel_length_dropped;
        prop_assert!((balance - s.length_before).abs() <= 1e-9 * s.length_before.max(1.0));
    }

    /// Pearson r stays in [-1, 1] and is symmetric; r_squared never exceeds 1.
    #[test]
    fn correlation_bounds(
        a in prop::collection::vec(-100.0f64..100.0, 2..40),
        b_seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(b_seed);
        let b: Vec<f64> = (0..a.len()).map(|_| rng.random::<f64>() * 200.0 - 100.0).collect();
        let ab = pearson(&a, &b).unwrap();
        let ba = pearson(&b, &a).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab.r));
        prop_assert_eq!(ab.r, ba.r);
        if !ab.degenerate {
            let r2 = r_squared(&a, &b).unwrap();
            prop_assert!(r2 <= 1.0);
        }
    }

    /// Rows within the survey rounding tolerance come out summing to
    /// exactly one.
    #[test]
    fn share_rows_renormalize(
        rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..12),
        skew in 0.98f64..1.02,
    ) {
        let n = rows.len();
        let mut shares = Array2::zeros((n, 3));
        for (i, row) in rows.iter().enumerate() {
            let total: f64 = row.iter().sum();
            for (j, &v) in row.iter().enumerate() {
                // Normalize, then skew the row sum into the tolerated band.
                shares[[i, j]] = v / total * skew;
            }
        }
        let zone_ids: Vec<String> = (0..n).map(|i| format!("z{i}")).collect();
        let modes = vec!["driving".to_string(), "transit".to_string(), "walking".to_string()];
        let table = ModeShareTable::new(zone_ids, modes, shares).unwrap();
        for row in table.shares.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }
}
