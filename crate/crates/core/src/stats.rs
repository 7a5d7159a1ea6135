//! Small Monte-Carlo statistics helpers.

use serde::{Deserialize, Serialize};

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            mean: value,
            se: 0.0,
        }
    }

    /// Sample mean and standard error of `samples`.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate { mean, se: 0.0 };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Estimate {
            mean,
            se: (var / n as f64).sqrt(),
        }
    }

    /// `self − other` for estimates computed on independent samples.
    pub fn minus_independent(self, other: Estimate) -> Estimate {
        Estimate {
            mean: self.mean - other.mean,
            se: self.se.hypot(other.se),
        }
    }

    /// True if `|self − target| <= max(abs_tol, k·se)`.
    pub fn within(&self, target: f64, abs_tol: f64, k: f64) -> bool {
        (self.mean - target).abs() <= abs_tol.max(k * self.se)
    }
}

/// Mean and standard error of the pairwise difference `a − b` (common random numbers).
pub fn paired_difference(a: &[f64], b: &[f64]) -> Estimate {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Estimate::from_samples(&diff)
}

/// Nearest-rank empirical percentile: the smallest sample `P` with
/// `#{x <= P} / n >= level`.
pub fn nearest_rank(sorted: &[f64], level: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let n = sorted.len();
    let rank = (level * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Sorts a copy of `samples` ascending (NaNs last).
pub fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_of_constant_has_zero_error() {
        let e = Estimate::from_samples(&[3.0; 10]);
        assert_eq!(e.mean, 3.0);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn nearest_rank_matches_hand_computation() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.975), 98.0);
        assert_eq!(nearest_rank(&v, 0.025), 3.0);
        assert_eq!(nearest_rank(&v, 0.5), 50.0);
        assert_eq!(nearest_rank(&v, 1.0), 100.0);
    }

    #[test]
    fn paired_difference_cancels_common_noise() {
        let a = [1.0, 5.0, 9.0];
        let b = [0.0, 4.0, 8.0];
        let d = paired_difference(&a, &b);
        assert_eq!(d.mean, 1.0);
        assert_eq!(d.se, 0.0);
    }
}
