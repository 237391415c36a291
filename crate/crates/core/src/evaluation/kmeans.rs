//! K-means over embedding rows: ++-style seeding, Lloyd iterations, and
//! farthest-point rescue of empty clusters.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::csv_field;
use crate::embedding::ZoneEmbedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Cluster index per input row.
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn final_wcss(&self) -> f64 {
        self.wcss.last().copied().unwrap_or(0.0)
    }
}

fn sqdist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters arbitrary rows (nodes or zones).
pub fn kmeans_rows(
    data: &Array2<f64>,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult> {
    let n = data.nrows();
    let d = data.ncols();
    if n == 0 {
        return Err(Error::usage("cannot cluster zero rows"));
    }
    if k == 0 {
        return Err(Error::usage("cluster count must be at least 1"));
    }
    if k > n {
        return Err(Error::usage(format!(
            "cluster count {k} exceeds the {n} rows available"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("cluster input contains non-finite values"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // ++ seeding: each next centroid drawn with probability proportional
    // to its squared distance from the nearest one chosen so far.
    let mut centroids = Array2::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut nearest_sq: Vec<f64> = (0..n)
        .map(|i| sqdist(data.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = nearest_sq.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in nearest_sq.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // Every point already coincides with a centroid.
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for i in 0..n {
            nearest_sq[i] = nearest_sq[i].min(sqdist(data.row(i), centroids.row(c)));
        }
    }

    let mut labels = vec![0usize; n];
    let mut wcss_history = Vec::new();
    let mut previous_wcss = f64::INFINITY;
    let mut iterations = 0;

    for iter in 0..max_iters {
        iterations = iter + 1;
        // Assignment; ties go to the lowest cluster index.
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist = sqdist(data.row(i), centroids.row(c));
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }

        // Rescue empty clusters: hand each one the point farthest from its
        // current centroid (the point then sits exactly on the new
        // centroid, so WCSS cannot rise). Only points from clusters with
        // two or more members are candidates — with k <= n one always
        // exists while any cluster is empty, and taking it cannot empty a
        // further cluster, so this loop terminates.
        let mut reseeded = false;
        loop {
            let mut counts = vec![0usize; k];
            for &l in &labels {
                counts[l] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let mut far_i = usize::MAX;
            let mut far_d = -1.0;
            for i in 0..n {
                if counts[labels[i]] < 2 {
                    continue;
                }
                let dist = sqdist(data.row(i), centroids.row(labels[i]));
                if dist > far_d {
                    far_d = dist;
                    far_i = i;
                }
            }
            debug_assert_ne!(far_i, usize::MAX, "no donor cluster for an empty one");
            centroids.row_mut(empty).assign(&data.row(far_i));
            labels[far_i] = empty;
            reseeded = true;
        }

        // Update step: centroid = cluster mean.
        let mut sums: Array2<f64> = Array2::zeros((k, d));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..d {
                sums[[labels[i], j]] += data[[i, j]];
            }
        }
        for c in 0..k {
            debug_assert!(counts[c] > 0, "empty cluster survived the rescue loop");
            for j in 0..d {
                centroids[[c, j]] = sums[[c, j]] / counts[c] as f64;
            }
        }

        let wcss: f64 = (0..n)
            .map(|i| sqdist(data.row(i), centroids.row(labels[i])))
            .sum();
        assert!(
            wcss <= previous_wcss * (1.0 + 1e-9) + 1e-12,
            "within-cluster sum of squares rose from {previous_wcss} to {wcss}"
        );
        wcss_history.push(wcss);
        previous_wcss = wcss;

        if !changed && !reseeded {
            break;
        }
    }

    Ok(KMeansResult {
        labels,
        centroids,
        wcss: wcss_history,
        iterations,
    })
}

/// Clusters zones by their embedding rows; labels align with
/// `embedding.zone_ids`.
pub fn kmeans(
    embedding: &ZoneEmbedding,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult> {
    kmeans_rows(&embedding.matrix, k, seed, max_iters)
}

pub fn clusters_csv(zone_ids: &[String], labels: &[usize]) -> String {
    debug_assert_eq!(zone_ids.len(), labels.len());
    let mut out = String::from("zone,cluster\n");
    for (zone, label) in zone_ids.iter().zip(labels) {
        out.push_str(&format!("{},{label}\n", csv_field(zone)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn blobs() -> Array2<f64> {
        // Two tight blobs separated by a gap far wider than their spread.
        arr2(&[
            [0.0, 0.0],
            [0.1, 0.0],
            [0.0, 0.1],
            [0.1, 0.1],
            [10.0, 10.0],
            [10.1, 10.0],
            [10.0, 10.1],
            [10.1, 10.1],
        ])
    }

    #[test]
    fn two_blobs_recovered_exactly() {
        let data = blobs();
        let result = kmeans_rows(&data, 2, 3, 300).unwrap();
        let first = result.labels[0];
        assert!(result.labels[..4].iter().all(|&l| l == first));
        let second = result.labels[4];
        assert_ne!(first, second);
        assert!(result.labels[4..].iter().all(|&l| l == second));
    }

    #[test]
    fn k_equals_n_gives_singletons_with_zero_wcss() {
        let data = arr2(&[[0.0], [1.0], [2.0], [5.0]]);
        let result = kmeans_rows(&data, 4, 7, 300).unwrap();
        let mut sorted = result.labels.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert_abs_diff_eq!(result.final_wcss(), 0.0);
    }

    #[test]
    fn k_one_centroid_is_the_global_mean() {
        let data = arr2(&[[1.0, 2.0], [3.0, 6.0], [5.0, 10.0]]);
        let result = kmeans_rows(&data, 1, 11, 300).unwrap();
        assert!(result.labels.iter().all(|&l| l == 0));
        assert_abs_diff_eq!(result.centroids[[0, 0]], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(result.centroids[[0, 1]], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn wcss_history_is_non_increasing() {
        let data = Array2::from_shape_fn((40, 3), |(i, j)| {
            ((i * 31 + j * 17) % 23) as f64 + (i / 10) as f64 * 50.0
        });
        let result = kmeans_rows(&data, 4, 5, 300).unwrap();
        for w in result.wcss.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
        }
        assert!(result.iterations >= 1);
    }

    #[test]
    fn oversized_k_is_a_usage_error() {
        let data = arr2(&[[0.0], [1.0]]);
        let err = kmeans_rows(&data, 3, 1, 10).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn duplicate_points_with_k_equal_n_still_terminate() {
        // More clusters than distinct points forces the rescue path.
        let data = arr2(&[[1.0], [1.0], [1.0]]);
        let result = kmeans_rows(&data, 3, 2, 50).unwrap();
        assert_eq!(result.labels.len(), 3);
        assert_abs_diff_eq!(result.final_wcss(), 0.0);
    }

    #[test]
    fn same_seed_same_clustering() {
        let data = blobs();
        let a = kmeans_rows(&data, 3, 42, 300).unwrap();
        let b = kmeans_rows(&data, 3, 42, 300).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.wcss, b.wcss);
    }

    #[test]
    fn zone_wrapper_and_csv() {
        let emb = ZoneEmbedding::from_parts(
            vec!["za".into(), "zb".into()],
            arr2(&[[0.0, 0.0], [5.0, 5.0]]),
        );
        let result = kmeans(&emb, 2, 1, 100).unwrap();
        let csv = clusters_csv(&emb.zone_ids, &result.labels);
        assert!(csv.starts_with("zone,cluster\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
