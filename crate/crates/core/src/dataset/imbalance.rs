use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative frequency weight per label class (index 0 is class id 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ImbalanceProfile {
    weights: Vec<f64>,
}

impl ImbalanceProfile {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("profile weights must be finite and non-negative"));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::invalid("profile needs at least one positive weight"));
        }
        Ok(ImbalanceProfile { weights })
    }

    pub fn uniform(n: usize) -> Self {
        ImbalanceProfile { weights: vec![1.0; n.max(1)] }
    }

    /// Monotone decreasing shape for `a`..`i`: early letters are common, late
    /// letters rare. A configurable default, not measured counts.
    pub fn decreasing_default() -> Self {
        ImbalanceProfile {
            weights: vec![1.0, 0.98, 0.74, 0.6, 0.42, 0.33, 0.17, 0.12, 0.08],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ImbalanceProfile {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ImbalanceProfile::new(v)
    }
}

impl From<ImbalanceProfile> for Vec<f64> {
    fn from(p: ImbalanceProfile) -> Self {
        p.weights
    }
}

/// `n` class ids (1-based) drawn with probability proportional to weight.
pub fn sample_imbalanced(profile: &ImbalanceProfile, n: usize, seed: u64) -> Result<Vec<u32>> {
    let dist = WeightedIndex::new(profile.weights()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng) as u32 + 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(draws: &[u32], k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for &d in draws {
            c[d as usize - 1] += 1;
        }
        c
    }

    #[test]
    fn single_class_profile() {
        let p = ImbalanceProfile::new(vec![0.0, 3.0]).unwrap();
        assert!(sample_imbalanced(&p, 50, 1).unwrap().iter().all(|&c| c == 2));
    }

    #[test]
    fn rejects_zero_weights() {
        assert!(ImbalanceProfile::new(vec![0.0, 0.0]).is_err());
        assert!(ImbalanceProfile::new(vec![1.0, -1.0]).is_err());
        assert!(serde_json::from_str::<ImbalanceProfile>("[0.0]").is_err());
    }

    #[test]
    fn balanced_pair_within_binomial_bound() {
        // sd = sqrt(10000 * 0.25) = 50, so ±150 is three sigma
        let draws = sample_imbalanced(&ImbalanceProfile::uniform(2), 10_000, 42).unwrap();
        for c in counts(&draws, 2) {
            assert!((4850..=5150).contains(&c), "{c}");
        }
    }

    #[test]
    fn decreasing_profile_orders_counts() {
        let p = ImbalanceProfile::new(vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        let c = counts(&sample_imbalanced(&p, 20_000, 7).unwrap(), 9);
        assert!(c.windows(2).all(|w| w[0] > w[1]), "{c:?}");
    }

    #[test]
    fn deterministic() {
        let p = ImbalanceProfile::decreasing_default();
        assert_eq!(sample_imbalanced(&p, 100, 5).unwrap(), sample_imbalanced(&p, 100, 5).unwrap());
    }
}
