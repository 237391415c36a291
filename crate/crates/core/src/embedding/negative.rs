//! Noise distribution for negative sampling: unigram frequencies raised to
//! the 3/4 power, the standard flattening that keeps rare nodes visible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::walker::{AliasTable, WalkCorpus};

pub struct NegativeSampler {
    table: AliasTable,
    frequency: Vec<u64>,
    rng: ChaCha8Rng,
}

impl NegativeSampler {
    /// Build from corpus occurrence counts; nodes that never occur get zero
    /// mass. The corpus is non-empty by construction (every node is a walk
    /// source), so the distribution is well defined.
    pub fn from_corpus(corpus: &WalkCorpus, seed: u64) -> Result<NegativeSampler> {
        let weights: Vec<f64> = corpus
            .node_frequency()
            .iter()
            .map(|&f| (f as f64).powf(0.75))
            .collect();
        Ok(NegativeSampler {
            table: AliasTable::new(&weights)?,
            frequency: corpus.node_frequency().to_vec(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// The exact distribution the sampler draws from.
    pub fn probabilities(&self) -> Vec<f64> {
        self.table.outcome_probabilities()
    }

    /// Draw one negative, rejection-resampling draws equal to the positive
    /// context. Falls back to a deterministic scan if rejection keeps
    /// failing, and yields `None` when no valid negative exists at all.
    pub fn draw_excluding(&mut self, exclude: usize) -> Option<usize> {
        for _ in 0..64 {
            let n = self.table.draw(&mut self.rng);
            if n != exclude {
                return Some(n);
            }
        }
        // Essentially unreachable unless one node carries ~all the mass.
        self.frequency
            .iter()
            .enumerate()
            .find(|&(i, &f)| i != exclude && f > 0)
            .map(|(i, _)| i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeInput, Graph};
    use crate::walker::{generate_walks, WalkConfig};

    #[test]
    fn power_flattening_gives_eight_to_one_odds() {
        // Walks on a path a-b with length 1 visit only sources; rig the
        // frequencies via walks_per_node and graph size instead: use the
        // direct constructor through generate_walks on a crafted graph.
        // a appears 16x, b 1x => odds 16^0.75 : 1 = 8 : 1.
        let g = Graph::from_edges(&[EdgeInput::new("a", "b", 1.0)]).unwrap().0;
        let cfg = WalkConfig {
            walk_length: 1,
            walks_per_node: 1,
            ..WalkConfig::default()
        };
        let mut corpus = generate_walks(&g, &cfg).unwrap();
        // Inflate a's count to 16 by appending synthetic single-node walks.
        corpus = inflate(corpus, 0, 15);
        let sampler = NegativeSampler::from_corpus(&corpus, 3).unwrap();
        let p = sampler.probabilities();
        let ratio = p[0] / p[1];
        assert!((ratio - 8.0).abs() < 1e-9, "ratio {ratio}");
    }

    // Test-only corpus surgery: repeat node `node` in `extra` one-step walks.
    fn inflate(corpus: WalkCorpus, node: u32, extra: usize) -> WalkCorpus {
        use crate::graph::NodeId;
        let mut walks: Vec<Vec<NodeId>> = corpus.walks().to_vec();
        for _ in 0..extra {
            walks.push(vec![NodeId(node)]);
        }
        WalkCorpus::from_walks(walks, corpus.n_nodes())
    }

    #[test]
    fn uniform_frequencies_sample_uniformly() {
        let g = Graph::from_edges(&[EdgeInput::new("a", "b", 1.0)]).unwrap().0;
        let cfg = WalkConfig {
            walk_length: 2,
            walks_per_node: 3,
            ..WalkConfig::default()
        };
        let corpus = generate_walks(&g, &cfg).unwrap();
        let sampler = NegativeSampler::from_corpus(&corpus, 3).unwrap();
        for p in sampler.probabilities() {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn million_draws_match_target_within_binomial_bounds() {
        let g = Graph::from_edges(&[
            EdgeInput::new("a", "b", 1.0),
            EdgeInput::new("b", "c", 1.0),
            EdgeInput::new("c", "a", 1.0),
        ])
        .unwrap()
        .0;
        let corpus = generate_walks(
            &g,
            &WalkConfig {
                walk_length: 5,
                walks_per_node: 4,
                seed: 5,
                ..WalkConfig::default()
            },
        )
        .unwrap();
        let mut sampler = NegativeSampler::from_corpus(&corpus, 11).unwrap();
        let target = sampler.probabilities();
        let n_draws = 1_000_000usize;
        let mut counts = vec![0u64; 3];
        for _ in 0..n_draws {
            // No exclusion interference: exclude an out-of-range index.
            counts[sampler.draw_excluding(usize::MAX).unwrap()] += 1;
        }
        for i in 0..3 {
            let p = target[i];
            let sigma = (p * (1.0 - p) / n_draws as f64).sqrt();
            let empirical = counts[i] as f64 / n_draws as f64;
            assert!(
                (empirical - p).abs() <= 3.0 * sigma,
                "outcome {i}: {empirical} vs {p} (3 sigma {})",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn exclusion_is_respected() {
        let g = Graph::from_edges(&[EdgeInput::new("a", "b", 1.0)]).unwrap().0;
        let corpus = generate_walks(
            &g,
            &WalkConfig {
                walk_length: 3,
                walks_per_node: 2,
                ..WalkConfig::default()
            },
        )
        .unwrap();
        let mut sampler = NegativeSampler::from_corpus(&corpus, 1).unwrap();
        for _ in 0..1000 {
            assert_eq!(sampler.draw_excluding(0), Some(1));
        }
    }
}
