//! Hand-engineered per-zone network statistics.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Graph, TractAssignment};

/// Per-zone road-network statistics, index-aligned with `zone_labels`.
/// An intra-zone edge is one with both endpoints in the zone; edges that
/// cross zones contribute to neither.
#[derive(Debug, Clone)]
pub struct NetworkMetrics {
    pub zone_labels: Vec<String>,
    /// Intra-zone edge length per unit area.
    pub road_density: Vec<f64>,
    pub num_node_per_area: Vec<f64>,
    pub num_road_per_area: Vec<f64>,
    /// Sum of full-graph degrees over the zone's nodes.
    pub sum_deg: Vec<f64>,
    /// Node count.
    pub sub_sum_nodes: Vec<f64>,
    /// Sum of degree centralities deg(v)/(N-1); zero when the graph has a
    /// single node.
    pub sub_sum_cent: Vec<f64>,
}

impl NetworkMetrics {
    pub const COLUMNS: [&'static str; 6] = [
        "road_density",
        "num_node_per_area",
        "num_road_per_area",
        "sum_deg",
        "sub_sum_nodes",
        "sub_sum_cent",
    ];

    /// Rows in zone order, for feature-table assembly or CSV emission.
    pub fn row(&self, zone: usize) -> [f64; 6] {
        [
            self.road_density[zone],
            self.num_node_per_area[zone],
            self.num_road_per_area[zone],
            self.sum_deg[zone],
            self.sub_sum_nodes[zone],
            self.sub_sum_cent[zone],
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("zone,");
        out.push_str(&Self::COLUMNS.join(","));
        out.push('\n');
        for (i, zone) in self.zone_labels.iter().enumerate() {
            out.push_str(zone);
            for v in self.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Compute the Table-2-style metrics for every zone. `areas` must provide a
/// positive area for each zone label in the assignment.
pub fn compute_network_metrics(
    graph: &Graph,
    assignment: &TractAssignment,
    areas: &[(String, f64)],
) -> Result<NetworkMetrics> {
    let area_of: HashMap<&str, f64> = areas.iter().map(|(z, a)| (z.as_str(), *a)).collect();
    let mut zone_area = Vec::with_capacity(assignment.zone_count());
    for zone in assignment.zone_labels() {
        match area_of.get(zone.as_str()) {
            Some(&a) if a.is_finite() && a > 0.0 => zone_area.push(a),
            Some(&a) => {
                return Err(Error::data(format!("zone {zone}: area {a} must be positive")));
            }
            None => return Err(Error::data(format!("zone {zone}: no area provided"))),
        }
    }

    let n = graph.node_count();
    let centrality_denom = if n >= 2 { (n - 1) as f64 } else { f64::NAN };

    struct ZoneAccum {
        intra_length: f64,
        intra_edges: usize,
        sum_deg: f64,
        nodes: usize,
        cent: f64,
    }

    let accums: Vec<ZoneAccum> = (0..assignment.zone_count())
        .into_par_iter()
        .map(|z| {
            let mut acc = ZoneAccum {
                intra_length: 0.0,
                intra_edges: 0,
                sum_deg: 0.0,
                nodes: 0,
                cent: 0.0,
            };
            for &v in assignment.zone_nodes(z) {
                let deg = graph.degree(v) as f64;
                acc.nodes += 1;
                acc.sum_deg += deg;
                if centrality_denom.is_finite() {
                    acc.cent += deg / centrality_denom;
                }
                for &(u, w) in graph.neighbors(v) {
                    // Count each intra-zone edge once, from its lower endpoint.
                    if v.0 < u.0 && assignment.zone_of(u) == z {
                        acc.intra_length += w;
                        acc.intra_edges += 1;
                    }
                }
            }
            acc
        })
        .collect();

    let mut m = NetworkMetrics {
        zone_labels: assignment.zone_labels().to_vec(),
        road_density: Vec::with_capacity(accums.len()),
        num_node_per_area: Vec::with_capacity(accums.len()),
        num_road_per_area: Vec::with_capacity(accums.len()),
        sum_deg: Vec::with_capacity(accums.len()),
        sub_sum_nodes: Vec::with_capacity(accums.len()),
        sub_sum_cent: Vec::with_capacity(accums.len()),
    };
    for (acc, &area) in accums.iter().zip(&zone_area) {
        m.road_density.push(acc.intra_length / area);
        m.num_node_per_area.push(acc.nodes as f64 / area);
        m.num_road_per_area.push(acc.intra_edges as f64 / area);
        m.sum_deg.push(acc.sum_deg);
        m.sub_sum_nodes.push(acc.nodes as f64);
        m.sub_sum_cent.push(acc.cent);
    }
    Ok(m)
}
