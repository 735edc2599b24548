//! Chi-square tests and Monte Carlo summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn upper_tail(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64).unwrap().sf(statistic)
}

/// Goodness of fit of `counts` against the uniform distribution on its cells.
pub fn uniform_chi_square(counts: &[u64]) -> ChiSquareResult {
    let total: u64 = counts.iter().sum();
    let k = counts.len();
    if k < 2 || total == 0 {
        return ChiSquareResult {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
        };
    }
    let e = total as f64 / k as f64;
    let statistic = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    ChiSquareResult {
        statistic,
        dof: k - 1,
        p_value: upper_tail(statistic, k - 1),
    }
}

/// Chi-square test of homogeneity between two samples over the union of
/// their observed categories.
pub fn two_sample_chi_square<K: Ord>(left: &BTreeMap<K, u64>, right: &BTreeMap<K, u64>) -> ChiSquareResult {
    let n1: u64 = left.values().sum();
    let n2: u64 = right.values().sum();
    let mut keys: Vec<&K> = left.keys().chain(right.keys()).collect();
    keys.sort();
    keys.dedup();
    if n1 == 0 || n2 == 0 || keys.len() < 2 {
        return ChiSquareResult {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
        };
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let n = n1f + n2f;
    let mut statistic = 0.0;
    for k in &keys {
        let a = left.get(*k).copied().unwrap_or(0) as f64;
        let b = right.get(*k).copied().unwrap_or(0) as f64;
        let e1 = n1f * (a + b) / n;
        let e2 = n2f * (a + b) / n;
        statistic += (a - e1).powi(2) / e1 + (b - e2).powi(2) / e2;
    }
    let dof = keys.len() - 1;
    ChiSquareResult {
        statistic,
        dof,
        p_value: upper_tail(statistic, dof),
    }
}

/// Mean and standard error of a sample, accumulated in order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub trials: usize,
    pub mean: f64,
    pub stderr: f64,
    /// 95% normal-approximation half-width.
    pub half_width: f64,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                trials: 0,
                mean: f64::NAN,
                stderr: f64::NAN,
                half_width: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let stderr = (var / n as f64).sqrt();
        Self {
            trials: n,
            mean,
            stderr,
            half_width: 1.96 * stderr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_do_not_reject() {
        let a: BTreeMap<u8, u64> = [(0, 100), (1, 200), (2, 300)].into();
        let r = two_sample_chi_square(&a, &a);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 2);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_samples_reject() {
        let a: BTreeMap<u8, u64> = [(0, 500)].into();
        let b: BTreeMap<u8, u64> = [(1, 500)].into();
        assert!(two_sample_chi_square(&a, &b).p_value < 1e-100);
    }

    #[test]
    fn textbook_uniform_case() {
        // counts 10, 20, 30: E = 20, X2 = (100 + 0 + 100) / 20 = 10, dof 2, p = e^-5
        let r = uniform_chi_square(&[10, 20, 30]);
        assert!((r.statistic - 10.0).abs() < 1e-12);
        assert!((r.p_value - (-5.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn mean_estimate() {
        let e = MeanEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        // sample variance 5/3
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
    }
}
