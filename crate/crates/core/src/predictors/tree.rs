//! CART regression trees.
//!
//! Splits minimize the summed squared error of the two children. Candidate
//! thresholds are midpoints between consecutive distinct feature values;
//! ties in gain resolve to the lowest feature index, then the lowest
//! threshold, so a fit is a pure function of its inputs (plus the RNG when
//! a per-split feature subset is requested).

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Indices into the owning tree's node arena.
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root. An empty target set still yields one leaf.
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    /// Minimum rows on each side of a split.
    pub min_leaf: usize,
    /// `None` considers every feature at every split.
    pub features_per_split: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_leaf: 1,
            features_per_split: None,
        }
    }
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn sse(sum: f64, sum_sq: f64, n: f64) -> f64 {
    (sum_sq - sum * sum / n).max(0.0)
}

impl<'a> Builder<'a> {
    /// Builds the subtree over `rows` and returns its arena index.
    fn build<R: Rng + ?Sized>(&mut self, rows: &mut [usize], depth: usize, rng: &mut R) -> usize {
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let mean = if rows.is_empty() { 0.0 } else { sum / n };

        let depth_ok = self.params.max_depth.map_or(true, |d| depth < d);
        if !depth_ok || rows.len() < 2 * self.params.min_leaf.max(1) {
            self.nodes.push(TreeNode::Leaf { value: mean });
            return self.nodes.len() - 1;
        }

        let sum_sq: f64 = rows.iter().map(|&r| self.y[r] * self.y[r]).sum();
        let parent_sse = sse(sum, sum_sq, n);
        if parent_sse <= 0.0 {
            self.nodes.push(TreeNode::Leaf { value: mean });
            return self.nodes.len() - 1;
        }

        let best = self.best_split(rows, parent_sse, rng);
        let Some(best) = best else {
            self.nodes.push(TreeNode::Leaf { value: mean });
            return self.nodes.len() - 1;
        };

        // Partition rows in place: left = values <= threshold.
        let mut lo = 0;
        let mut hi = rows.len();
        while lo < hi {
            if self.x[[rows[lo], best.feature]] <= best.threshold {
                lo += 1;
            } else {
                hi -= 1;
                rows.swap(lo, hi);
            }
        }
        debug_assert!(lo > 0 && lo < rows.len());

        let slot = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: mean }); // placeholder
        let (left_rows, right_rows) = rows.split_at_mut(lo);
        let left = self.build(left_rows, depth + 1, rng);
        let right = self.build(right_rows, depth + 1, rng);
        self.nodes[slot] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        slot
    }

    fn candidate_features<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let d = self.x.ncols();
        match self.params.features_per_split {
            Some(k) if k < d => {
                // Partial Fisher-Yates, then sorted so the tie-break stays
                // "lowest feature index" regardless of draw order.
                let mut pool: Vec<usize> = (0..d).collect();
                for i in 0..k {
                    let j = rng.random_range(i..d);
                    pool.swap(i, j);
                }
                pool.truncate(k);
                pool.sort_unstable();
                pool
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split<R: Rng + ?Sized>(
        &self,
        rows: &[usize],
        parent_sse: f64,
        rng: &mut R,
    ) -> Option<BestSplit> {
        let min_leaf = self.params.min_leaf.max(1);
        let n = rows.len();
        let features = self.candidate_features(rng);
        let mut best: Option<BestSplit> = None;
        let mut order: Vec<usize> = Vec::with_capacity(n);
        // Gains below this fraction of the parent SSE are rounding noise.
        let min_gain = parent_sse * 1e-12;

        for &f in &features {
            order.clear();
            order.extend_from_slice(rows);
            order.sort_by(|&a, &b| {
                self.x[[a, f]]
                    .partial_cmp(&self.x[[b, f]])
                    .expect("finite feature values")
            });

            let total_sum: f64 = order.iter().map(|&r| self.y[r]).sum();
            let total_sq: f64 = order.iter().map(|&r| self.y[r] * self.y[r]).sum();
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for k in 1..n {
                let prev = order[k - 1];
                left_sum += self.y[prev];
                left_sq += self.y[prev] * self.y[prev];
                let v_prev = self.x[[prev, f]];
                let v_next = self.x[[order[k], f]];
                if v_prev >= v_next || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let gain = parent_sse
                    - sse(left_sum, left_sq, k as f64)
                    - sse(total_sum - left_sum, total_sq - left_sq, (n - k) as f64);
                if gain <= min_gain {
                    continue;
                }
                let threshold = 0.5 * (v_prev + v_next);
                let better = match &best {
                    None => true,
                    // Strict improvement only: earlier features and lower
                    // thresholds win ties because they are visited first.
                    Some(b) => gain > b.gain,
                };
                if better {
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Fits a tree to `y[rows]`. Duplicate entries in `rows` (as from a
/// bootstrap sample) weight their targets accordingly.
pub fn fit_tree<R: Rng + ?Sized>(
    x: &Array2<f64>,
    y: &[f64],
    rows: &[usize],
    params: &TreeParams,
    rng: &mut R,
) -> Tree {
    debug_assert_eq!(x.nrows(), y.len());
    let mut builder = Builder {
        x,
        y,
        params,
        nodes: Vec::new(),
    };
    let mut rows = rows.to_vec();
    builder.build(&mut rows, 0, rng);
    Tree {
        nodes: builder.nodes,
    }
}

impl Tree {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], idx: usize) -> usize {
            match &nodes[idx] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(&self.nodes, 0)
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}
