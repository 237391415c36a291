//! Alias method (Vose construction) for O(1) discrete sampling.

use rand::Rng;

use crate::error::{Error, Result};

/// Alias table over outcomes `0..len`. Sampling draws one uniform index and
/// one uniform real, so every draw costs constant time regardless of size.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    /// Build from non-negative weights; they need not be normalized.
    pub fn new(weights: &[f64]) -> Result<AliasTable> {
        if weights.is_empty() {
            return Err(Error::usage("alias table needs at least one weight"));
        }
        let mut total = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::data(format!(
                    "alias weight {i} is {w}; weights must be finite and non-negative"
                )));
            }
            total += w;
        }
        if total <= 0.0 {
            return Err(Error::numerical("alias weights sum to zero"));
        }

        let n = weights.len();
        let mut prob = vec![0.0; n];
        let mut alias = vec![0usize; n];
        // Scale so the average bucket holds exactly 1.
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut small: Vec<usize> = Vec::with_capacity(n);
        let mut large: Vec<usize> = Vec::with_capacity(n);
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers on either stack hold (up to rounding) exactly 1.
        for &i in small.iter().chain(large.iter()) {
            prob[i] = 1.0;
            alias[i] = i;
        }

        Ok(AliasTable { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    /// Draw one outcome index.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }

    /// Reconstruct the exact outcome distribution the table encodes:
    /// `p[i] = (prob[i] + sum over j with alias[j] == i of (1 - prob[j])) / n`.
    /// Used to verify construction without sampling.
    pub fn outcome_probabilities(&self) -> Vec<f64> {
        let n = self.prob.len();
        let mut p = vec![0.0; n];
        for i in 0..n {
            p[i] += self.prob[i];
            if self.prob[i] < 1.0 {
                p[self.alias[i]] += 1.0 - self.prob[i];
            }
        }
        for v in &mut p {
            *v /= n as f64;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_weights_reconstruct_exactly() {
        let t = AliasTable::new(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        for p in t.outcome_probabilities() {
            assert_eq!(p, 0.25);
        }
    }

    #[test]
    fn skewed_weights_reconstruct_within_tolerance() {
        let w = [0.5, 2.0, 0.25, 7.0, 0.0, 1.0];
        let total: f64 = w.iter().sum();
        let t = AliasTable::new(&w).unwrap();
        let p = t.outcome_probabilities();
        for (i, &wi) in w.iter().enumerate() {
            assert!((p[i] - wi / total).abs() <= 1e-12, "i={i} p={}", p[i]);
        }
    }

    #[test]
    fn zero_weight_outcome_is_never_drawn() {
        let t = AliasTable::new(&[1.0, 0.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            assert_ne!(t.draw(&mut rng), 1);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(AliasTable::new(&[]).is_err());
        assert!(AliasTable::new(&[0.0, 0.0]).is_err());
        assert!(AliasTable::new(&[1.0, -0.5]).is_err());
        assert!(AliasTable::new(&[f64::NAN]).is_err());
    }

    #[test]
    fn single_outcome_always_drawn() {
        let t = AliasTable::new(&[3.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(t.draw(&mut rng), 0);
        assert_eq!(t.outcome_probabilities(), vec![1.0]);
    }
}
