use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("empty support")]
    Empty,
    #[error("negative or non-finite probability at index {index}")]
    Negative { index: usize },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("supports differ: {left} vs {right} atoms")]
    SupportMismatch { left: usize, right: usize },
}

/// Unit for entropies and divergences. Computation is in nats throughout;
/// other bases are a final rescaling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Nats,
    Bits,
}

impl LogBase {
    pub fn from_nats<T: Real>(self, x: T) -> T {
        match self {
            LogBase::Nats => x,
            LogBase::Bits => x / T::lit(2.0).ln(),
        }
    }
}

/// A probability vector over the support `0..len`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution<T> {
    probs: Vec<T>,
}

/// `-p ln p` with the `0 ln 0 = 0` convention.
pub(crate) fn surprisal_term<T: Real>(p: T) -> T {
    if p > T::zero() {
        -p * p.ln()
    } else {
        T::zero()
    }
}

pub(crate) fn check_probabilities<T: Real>(probs: &[T]) -> Result<(), DistributionError> {
    if probs.is_empty() {
        return Err(DistributionError::Empty);
    }
    if let Some(index) = probs.iter().position(|p| !p.is_finite() || *p < T::zero()) {
        return Err(DistributionError::Negative { index });
    }
    let sum = probs.iter().fold(T::zero(), |a, &b| a + b);
    if (sum - T::one()).abs() > T::norm_tolerance(probs.len()) {
        return Err(DistributionError::NotNormalized {
            sum: sum.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

impl<T: Real> DiscreteDistribution<T> {
    pub fn new(probs: Vec<T>) -> Result<Self, DistributionError> {
        check_probabilities(&probs)?;
        Ok(Self { probs })
    }

    /// Normalises non-negative weights.
    pub fn from_weights(weights: &[T]) -> Result<Self, DistributionError> {
        let total = weights.iter().fold(T::zero(), |a, &b| a + b);
        if let Some(index) = weights.iter().position(|w| !w.is_finite() || *w < T::zero()) {
            return Err(DistributionError::Negative { index });
        }
        if weights.is_empty() || total <= T::zero() {
            return Err(DistributionError::Empty);
        }
        Self::new(weights.iter().map(|&w| w / total).collect())
    }

    pub fn from_counts(counts: &[u64]) -> Result<Self, DistributionError> {
        let w: Vec<T> = counts.iter().map(|&c| T::from_u64(c).unwrap()).collect();
        Self::from_weights(&w)
    }

    pub fn uniform(k: usize) -> Result<Self, DistributionError> {
        if k == 0 {
            return Err(DistributionError::Empty);
        }
        let p = T::one() / T::from_usize(k).unwrap();
        Ok(Self { probs: vec![p; k] })
    }

    pub fn point_mass(k: usize, at: usize) -> Result<Self, DistributionError> {
        if at >= k {
            return Err(DistributionError::Empty);
        }
        let mut probs = vec![T::zero(); k];
        probs[at] = T::one();
        Ok(Self { probs })
    }

    pub fn bernoulli(p: T) -> Result<Self, DistributionError> {
        Self::new(vec![T::one() - p, p])
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Number of atoms with positive mass.
    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&p| p > T::zero()).count()
    }

    /// `E[x]` for a function given by its values on the support.
    pub fn expectation(&self, values: &[T]) -> T {
        self.probs.iter().zip(values).fold(T::zero(), |a, (&p, &x)| a + p * x)
    }
}

fn same_support<T>(p: &DiscreteDistribution<T>, q: &DiscreteDistribution<T>) -> Result<(), DistributionError> {
    if p.probs.len() != q.probs.len() {
        return Err(DistributionError::SupportMismatch {
            left: p.probs.len(),
            right: q.probs.len(),
        });
    }
    Ok(())
}

pub fn entropy<T: Real>(p: &DiscreteDistribution<T>, base: LogBase) -> T {
    base.from_nats(p.probs.iter().fold(T::zero(), |a, &x| a + surprisal_term(x)))
}

/// Half the ℓ1 distance.
pub fn statistical_distance<T: Real>(
    p: &DiscreteDistribution<T>,
    q: &DiscreteDistribution<T>,
) -> Result<T, DistributionError> {
    same_support(p, q)?;
    let l1 = p
        .probs
        .iter()
        .zip(&q.probs)
        .fold(T::zero(), |a, (&x, &y)| a + (x - y).abs());
    Ok((l1 / T::lit(2.0)).min(T::one()))
}

/// `Σ p ln(p/q)`; `+∞` when `p` puts mass where `q` has none.
pub fn kl_divergence<T: Real>(
    p: &DiscreteDistribution<T>,
    q: &DiscreteDistribution<T>,
    base: LogBase,
) -> Result<T, DistributionError> {
    same_support(p, q)?;
    let mut acc = T::zero();
    for (&x, &y) in p.probs.iter().zip(&q.probs) {
        if x > T::zero() {
            if y <= T::zero() {
                return Ok(T::infinity());
            }
            acc = acc + x * (x / y).ln();
        }
    }
    // rounding can leave a tiny negative residue when p ≈ q
    Ok(base.from_nats(acc.max(T::zero())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(v: &[f64]) -> DiscreteDistribution<f64> {
        DiscreteDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn validation() {
        assert_eq!(DiscreteDistribution::<f64>::new(vec![]), Err(DistributionError::Empty));
        assert!(matches!(
            DiscreteDistribution::new(vec![0.5, -0.1, 0.6]),
            Err(DistributionError::Negative { index: 1 })
        ));
        assert!(matches!(
            DiscreteDistribution::new(vec![0.5, 0.4]),
            Err(DistributionError::NotNormalized { .. })
        ));
        assert!(DiscreteDistribution::new(vec![0.1f32; 10]).is_ok());
        let c = DiscreteDistribution::<f64>::from_counts(&[1, 3]).unwrap();
        assert_eq!(c.probs(), &[0.25, 0.75]);
    }

    #[test]
    fn distance_examples() {
        let half = DiscreteDistribution::<f64>::bernoulli(0.5).unwrap();
        let quarter = DiscreteDistribution::<f64>::bernoulli(0.25).unwrap();
        assert_eq!(statistical_distance(&half, &half).unwrap(), 0.0);
        assert!((statistical_distance(&half, &quarter).unwrap() - 0.25).abs() < 1e-15);
        let point = DiscreteDistribution::<f64>::point_mass(4, 2).unwrap();
        let unif = DiscreteDistribution::uniform(4).unwrap();
        assert!((statistical_distance(&point, &unif).unwrap() - 0.75).abs() < 1e-15);
        assert!(statistical_distance(&point, &half).is_err());
    }

    #[test]
    fn divergence_examples() {
        let half = DiscreteDistribution::<f64>::bernoulli(0.5).unwrap();
        let quarter = DiscreteDistribution::<f64>::bernoulli(0.25).unwrap();
        assert_eq!(kl_divergence(&half, &half, LogBase::Nats).unwrap(), 0.0);
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let got = kl_divergence(&half, &quarter, LogBase::Nats).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.14384).abs() < 1e-5);
        let bits = kl_divergence(&half, &quarter, LogBase::Bits).unwrap();
        assert!((bits - want / 2f64.ln()).abs() < 1e-15);
        let p = d(&[0.0, 1.0]);
        let q = d(&[1.0, 0.0]);
        assert!(kl_divergence(&p, &q, LogBase::Nats).unwrap().is_infinite());
        // p ≪ q is all that is needed
        assert_eq!(kl_divergence(&q, &d(&[1.0, 0.0]), LogBase::Nats).unwrap(), 0.0);
    }

    #[test]
    fn entropy_examples() {
        let u = DiscreteDistribution::<f64>::uniform(8).unwrap();
        assert!((entropy(&u, LogBase::Bits) - 3.0).abs() < 1e-12);
        assert!((entropy(&u, LogBase::Nats) - 8f64.ln()).abs() < 1e-12);
        assert_eq!(
            entropy(&DiscreteDistribution::<f64>::point_mass(3, 0).unwrap(), LogBase::Nats),
            0.0
        );
        let uf = DiscreteDistribution::<f32>::uniform(4).unwrap();
        assert!((entropy(&uf, LogBase::Bits) - 2.0).abs() < 1e-6);
    }

    fn weights(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, k).prop_filter("some mass", |w| w.iter().sum::<f64>() > 1e-3)
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in weights(5), b in weights(5), c in weights(5)) {
            let (p, q, r) = (
                DiscreteDistribution::from_weights(&a).unwrap(),
                DiscreteDistribution::from_weights(&b).unwrap(),
                DiscreteDistribution::from_weights(&c).unwrap(),
            );
            let pq = statistical_distance(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert_eq!(pq, statistical_distance(&q, &p).unwrap());
            let pr = statistical_distance(&p, &r).unwrap();
            let rq = statistical_distance(&r, &q).unwrap();
            prop_assert!(pq <= pr + rq + 1e-12);
        }

        #[test]
        fn divergence_non_negative(a in weights(4), b in weights(4)) {
            let p = DiscreteDistribution::from_weights(&a).unwrap();
            let q = DiscreteDistribution::from_weights(&b).unwrap();
            prop_assert!(kl_divergence(&p, &q, LogBase::Nats).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&p, &p, LogBase::Nats).unwrap() < 1e-12);
        }
    }
}
