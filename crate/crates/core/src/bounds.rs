//! Exact evaluation of the round-by-round matching-size bound on the
//! canonical hard distribution.
//!
//! With `n_k = l^(5^(k+1))` and `Δ_k = 1/n_k`, the bound after `r` rounds is
//! `t(r) = 5 n_r Σ_{k<r} Δ_k^(1/2) + 1`. Since `5^(k+1)` is odd, every
//! `Δ_k^(1/2)` is a rational multiple of `√l`, so `t(r) = 1 + b √l` with `b`
//! an integer; it is carried exactly as a [`QuadSurd`].

use std::fmt;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::params::{ParamsError, ParamsTable, MAX_CANONICAL_ROUNDS};
use crate::scalar::Field;

/// `rational + coefficient · √radicand`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuadSurd<T> {
    pub rational: T,
    pub coefficient: T,
    pub radicand: u64,
}

impl<T: Field> QuadSurd<T> {
    pub fn to_f64(&self) -> f64 {
        self.rational.to_f64_lossy() + self.coefficient.to_f64_lossy() * (self.radicand as f64).sqrt()
    }
}

impl<T: fmt::Display> fmt::Display for QuadSurd<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}·√{}", self.rational, self.coefficient, self.radicand)
    }
}

/// `5^(k+1)`.
fn level_exponent(k: usize) -> u32 {
    5u32.pow(k as u32 + 1)
}

/// `n_k = l^(5^(k+1))`.
pub fn canonical_n(l: u64, k: usize) -> BigUint {
    BigUint::from(l).pow(level_exponent(k))
}

/// `t(r)` by the one-step recurrence
/// `t(k+1) − 1 = n_k^5 ((t(k) − 1)/n_k + 5 Δ_k^(1/2))`, evaluated in `T`.
///
/// Only the `√l` coefficient is non-trivial; `T = f64` overflows quickly and
/// is meant for tiny parameters.
pub fn t_bound<T: Field>(l: u64, r: usize) -> QuadSurd<T> {
    let lift = |x: &BigUint| T::from_biguint(x);
    let five = lift(&BigUint::from(5u32));
    let mut b = T::zero();
    for k in 0..r {
        let n_k = canonical_n(l, k);
        // Δ_k^(1/2) = √l / l^((5^(k+1) + 1) / 2)
        let half = BigUint::from(l).pow(level_exponent(k).div_ceil(2));
        let root_delta = T::one() / lift(&half);
        b = lift(&n_k.pow(5)) * (b / lift(&n_k) + five.clone() * root_delta);
    }
    QuadSurd {
        rational: T::one(),
        coefficient: b,
        radicand: l,
    }
}

/// `log10` of a positive integer of any size.
pub fn log10_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().unwrap().log10();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().unwrap();
    top.log10() + shift as f64 * std::f64::consts::LOG10_2
}

/// Exact decimal when short enough to print, else `None`.
fn decimal(x: &BigUint) -> Option<String> {
    (x.bits() <= MAX_DECIMAL_BITS).then(|| x.to_string())
}

/// Integers wider than this are reported by `log10` only.
pub const MAX_DECIMAL_BITS: u64 = 8192;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Magnitude {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exact: Option<String>,
    /// `None` for zero.
    pub log10: Option<f64>,
}

impl Magnitude {
    fn of(x: &BigUint) -> Self {
        Self {
            exact: decimal(x),
            log10: (!x.is_zero()).then(|| log10_biguint(x)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub k: usize,
    pub n: Magnitude,
    /// `log10 Δ_k`
    pub log10_delta: f64,
    /// `log10 Δ_k^(1/2)`
    pub log10_sqrt_delta: f64,
}

/// `t(r) = 1 + coefficient · √radicand`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurdValue {
    pub rational: String,
    pub coefficient: Magnitude,
    pub radicand: u64,
    pub log10: f64,
    /// `f64` value, when it fits.
    pub approx: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub l: u64,
    pub r: usize,
    pub n: Magnitude,
    pub m: Magnitude,
    pub d: Magnitude,
    pub deltas: Vec<DeltaEntry>,
    pub t: SurdValue,
    /// `5 n_r^(1 − 1/5^(r+1)) = 5 l^(5^(r+1) − 1)`, exact.
    pub envelope: Magnitude,
    /// `t(r) ≤ envelope`, decided exactly.
    pub t_within_envelope: bool,
    /// `n_r^(1/5^(r+1)) = l`: the order of the approximation lower bound.
    pub n_root: u64,
    /// `n_r / envelope = l / 5`.
    pub ratio_floor: f64,
    /// `log10(n_r / t(r))`.
    pub log10_n_over_t: f64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BoundsError {
    #[error("l must be at least 2")]
    BadBase,
    #[error("r = {0} exceeds the supported maximum of {MAX_CANONICAL_ROUNDS}")]
    TooDeep(usize),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// `t(r)` with `b` as an exact integer.
pub fn t_exact(l: u64, r: usize) -> QuadSurd<BigRational> {
    t_bound::<BigRational>(l, r)
}

/// `5 n_r^(1 − 1/5^(r+1)) = 5 l^(5^(r+1) − 1)`, exact.
pub fn envelope(l: u64, r: usize) -> BigUint {
    BigUint::from(5u32) * BigUint::from(l).pow(level_exponent(r) - 1)
}

pub fn compute_bounds(l: u64, r: usize) -> Result<BoundReport, BoundsError> {
    if l < 2 {
        return Err(BoundsError::BadBase);
    }
    if r > MAX_CANONICAL_ROUNDS {
        return Err(BoundsError::TooDeep(r));
    }
    let params = ParamsTable::canonical(l, r)?;
    let top = params.top();
    let n_r = canonical_n(l, r);
    debug_assert_eq!(n_r, top.n);

    let deltas = (0..=r)
        .map(|k| {
            let n = canonical_n(l, k);
            let lg = log10_biguint(&n);
            DeltaEntry {
                k,
                n: Magnitude::of(&n),
                log10_delta: -lg,
                log10_sqrt_delta: -lg / 2.0,
            }
        })
        .collect();

    let t = t_exact(l, r);
    assert!(t.coefficient.is_integer(), "t(r) coefficient is integral");
    let b = t.coefficient.to_integer().to_biguint().expect("non-negative");
    let log10_l = (l as f64).log10();
    let log10_t = if b.is_zero() {
        0.0
    } else if b.bits() < 900 {
        t.to_f64().log10()
    } else {
        log10_biguint(&b) + log10_l / 2.0
    };

    let envelope = envelope(l, r);
    // 1 + b√l ≤ E  ⇔  b²·l ≤ (E − 1)²
    let e1 = &envelope - BigUint::one();
    let t_within_envelope = &b * &b * BigUint::from(l) <= &e1 * &e1;

    let n_root = n_r.nth_root(level_exponent(r)).to_u64().expect("root is l");
    debug_assert_eq!(n_root, l);

    Ok(BoundReport {
        l,
        r,
        n: Magnitude::of(&top.n),
        m: Magnitude::of(&top.m),
        d: Magnitude::of(&top.d),
        deltas,
        t: SurdValue {
            rational: "1".into(),
            coefficient: Magnitude::of(&b),
            radicand: l,
            log10: log10_t,
            approx: Some(t.to_f64()).filter(|x| x.is_finite()),
        },
        envelope: Magnitude::of(&envelope),
        t_within_envelope,
        n_root,
        ratio_floor: l as f64 / 5.0,
        log10_n_over_t: log10_biguint(&n_r) - log10_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    fn rat(n: BigUint, d: BigUint) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    /// Independent oracle: sum Δ_k^(1/2) term by term, taking an exact
    /// rational square root of Δ_k / l.
    fn t_by_direct_sum(l: u64, r: usize) -> (BigRational, BigRational) {
        let lb = BigUint::from(l);
        let mut sum = BigRational::zero();
        for k in 0..r {
            let n_k = lb.pow(5u32.pow(k as u32 + 1));
            // Δ_k / l = 1 / (n_k · l): must be a perfect square
            let den = &n_k * &lb;
            let s = den.sqrt();
            assert_eq!(&s * &s, den, "Δ_{k}/l is a rational square");
            sum += rat(BigUint::one(), s);
        }
        let n_r = BigRational::from_integer(BigInt::from(lb.pow(5u32.pow(r as u32 + 1))));
        let five = BigRational::from_integer(5.into());
        (BigRational::one(), five * n_r * sum)
    }

    #[test]
    fn recurrence_matches_direct_sum() {
        for l in 2..=16u64 {
            for r in 0..=4 {
                let t = t_exact(l, r);
                let (a, b) = t_by_direct_sum(l, r);
                assert_eq!(t.rational, a, "l={l} r={r}");
                assert_eq!(t.coefficient, b, "l={l} r={r}");
                assert!(t.coefficient.is_integer());
            }
        }
    }

    #[test]
    fn t_zero_is_one() {
        for l in 2..=16 {
            let t = t_exact(l, 0);
            assert!(t.coefficient.is_zero());
            assert_eq!(compute_bounds(l, 0).unwrap().t.approx, Some(1.0));
        }
    }

    #[test]
    fn small_value_in_floating_point() {
        // t(1) = 5 · 2^25 · 2^(-5/2) + 1 for l = 2
        let want = 5.0 * 2f64.powi(25) * 2f64.powf(-2.5) + 1.0;
        let t = t_exact(2, 1);
        assert_eq!(t.coefficient, BigRational::from_integer((5u64 << 22).into()));
        assert!((t.to_f64() - want).abs() / want < 1e-14);
        let f = t_bound::<f64>(2, 1);
        assert!((f.to_f64() - want).abs() / want < 1e-12);
    }

    #[test]
    fn envelope_at_depth_zero() {
        // 5 · 10^(5 − 1)
        let rep = compute_bounds(10, 0).unwrap();
        assert_eq!(rep.envelope.exact.as_deref(), Some("50000"));
        assert_eq!(rep.n.exact.as_deref(), Some("100000"));
        assert_eq!(rep.t.approx, Some(1.0));
        assert_eq!(rep.ratio_floor, 2.0);
    }

    #[test]
    fn report_fields() {
        let rep = compute_bounds(3, 2).unwrap();
        assert_eq!(rep.n.exact.as_deref(), Some(canonical_n(3, 2).to_string().as_str()));
        assert_eq!(rep.n_root, 3);
        assert_eq!(rep.ratio_floor, 0.6);
        assert!(rep.t_within_envelope);
        assert_eq!(rep.deltas.len(), 3);
        assert!((rep.deltas[1].log10_delta + 25.0 * 3f64.log10()).abs() < 1e-9);
        let env = BigUint::from(5u32) * BigUint::from(3u32).pow(124);
        assert_eq!(rep.envelope.exact, Some(env.to_string()));
        // n / t ≥ l / 5
        assert!(rep.log10_n_over_t >= (0.6f64).log10());
    }

    #[test]
    fn large_values_by_logarithm() {
        let rep = compute_bounds(16, 4).unwrap();
        assert!(rep.n.exact.is_none());
        assert!((rep.n.log10.unwrap() - 3125.0 * 16f64.log10()).abs() < 1e-6);
        assert!(rep.t.approx.is_none());
        assert!(rep.t_within_envelope);
        let b = t_exact(16, 4).coefficient.to_integer().to_biguint().unwrap();
        assert!((rep.t.log10 - (log10_biguint(&b) + 0.5 * 16f64.log10())).abs() < 1e-9);
    }

    #[test]
    fn log10_of_big_integers() {
        let x = BigUint::from(10u32).pow(5000);
        assert!((log10_biguint(&x) - 5000.0).abs() < 1e-9);
        assert!((log10_biguint(&BigUint::from(1000u32)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(compute_bounds(1, 1), Err(BoundsError::BadBase));
        assert_eq!(compute_bounds(2, 99), Err(BoundsError::TooDeep(99)));
    }
}
