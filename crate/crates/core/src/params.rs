//! Level sizing for the recursive hard distribution.
//!
//! Level 0 is a random perfect matching on `m0` bidders and `m0` items.
//! Level `k + 1` is built from `B` bidder blocks, each carrying an
//! independent level-`k` copy on a hidden item block, plus `F` fooling item
//! blocks shared by every bidder block:
//!
//! ```text
//! n_{k+1} = B * n_k
//! m_{k+1} = (B + F) * m_k
//! d_{k+1} = (F + 1) * d_k,   d_0 = 1
//! ```
//!
//! The canonical table fixes `m0 = l^5`, `B = n_k^4` and `F = l * n_k^2`,
//! which gives `n_k = l^(5^(k+1))`. All arithmetic is exact.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical depth above which the numbers get unreasonably long.
pub const MAX_CANONICAL_ROUNDS: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("canonical parameters need l >= 2 (got {0})")]
    BandwidthTooSmall(u64),
    #[error("canonical depth {0} exceeds the supported maximum {MAX_CANONICAL_ROUNDS}")]
    TooDeep(usize),
    #[error("base size must be at least 1")]
    EmptyBase,
    #[error("level {0}: need at least one bidder block")]
    NoBidderBlocks(usize),
    #[error("level {level}: {detail}")]
    Inconsistent { level: usize, detail: String },
    #[error("instance too large to materialise: {0}")]
    TooLarge(String),
    #[error("closed form disagrees with recurrence at level {0}")]
    ClosedForm(usize),
}

pub(crate) mod dec {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&x.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Block counts for one level transition of the generalized family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCounts {
    pub bidder_blocks: u64,
    pub fooling_blocks: u64,
}

impl BlockCounts {
    pub fn new(bidder_blocks: u64, fooling_blocks: u64) -> Self {
        Self {
            bidder_blocks,
            fooling_blocks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Canonical { l: u64, r: usize },
    Generalized { base: u64, levels: Vec<BlockCounts> },
}

impl Mode {
    pub fn rounds(&self) -> usize {
        match self {
            Mode::Canonical { r, .. } => *r,
            Mode::Generalized { levels, .. } => levels.len(),
        }
    }
}

/// Sizes of one level transition: a level-`k+1` instance is made of blocks of
/// `bidder_block_size x item_block_size` (the level-`k` sizes).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelParams {
    #[serde(with = "dec")]
    pub bidder_block_size: BigUint,
    #[serde(with = "dec")]
    pub item_block_size: BigUint,
    #[serde(with = "dec")]
    pub num_bidder_blocks: BigUint,
    #[serde(with = "dec")]
    pub num_fooling_blocks: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSizes {
    #[serde(with = "dec")]
    pub n: BigUint,
    #[serde(with = "dec")]
    pub m: BigUint,
    #[serde(with = "dec")]
    pub d: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamsTable {
    pub mode: Mode,
    /// `levels[k]` builds level `k + 1` out of level `k`.
    pub levels: Vec<LevelParams>,
    /// `sizes[k]` for `k = 0..=r`.
    pub sizes: Vec<LevelSizes>,
}

pub fn derive_params(mode: Mode) -> Result<ParamsTable, ParamsError> {
    let (base, transitions): (BigUint, Vec<(BigUint, BigUint)>) = match &mode {
        Mode::Canonical { l, r } => {
            if *l < 2 {
                return Err(ParamsError::BandwidthTooSmall(*l));
            }
            if *r > MAX_CANONICAL_ROUNDS {
                return Err(ParamsError::TooDeep(*r));
            }
            let l = BigUint::from(*l);
            let base = l.pow(5);
            let mut n = base.clone();
            let mut t = Vec::with_capacity(*r);
            for _ in 0..*r {
                t.push((n.pow(4), &l * n.pow(2)));
                n = n.pow(5);
            }
            (base, t)
        }
        Mode::Generalized { base, levels } => {
            if *base == 0 {
                return Err(ParamsError::EmptyBase);
            }
            let t = levels
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    if c.bidder_blocks == 0 {
                        Err(ParamsError::NoBidderBlocks(k + 1))
                    } else {
                        Ok((BigUint::from(c.bidder_blocks), BigUint::from(c.fooling_blocks)))
                    }
                })
                .collect::<Result<_, _>>()?;
            (BigUint::from(*base), t)
        }
    };

    let mut sizes = vec![LevelSizes {
        n: base.clone(),
        m: base,
        d: BigUint::one(),
    }];
    let mut levels = Vec::with_capacity(transitions.len());
    for (b, f) in transitions {
        let child = sizes.last().unwrap();
        let next = LevelSizes {
            n: &b * &child.n,
            m: (&b + &f) * &child.m,
            d: (&f + 1u32) * &child.d,
        };
        levels.push(LevelParams {
            bidder_block_size: child.n.clone(),
            item_block_size: child.m.clone(),
            num_bidder_blocks: b,
            num_fooling_blocks: f,
        });
        sizes.push(next);
    }

    let table = ParamsTable { mode, levels, sizes };
    table.check_closed_form()?;
    Ok(table)
}

impl ParamsTable {
    pub fn canonical(l: u64, r: usize) -> Result<Self, ParamsError> {
        derive_params(Mode::Canonical { l, r })
    }

    pub fn generalized(base: u64, levels: &[BlockCounts]) -> Result<Self, ParamsError> {
        derive_params(Mode::Generalized {
            base,
            levels: levels.to_vec(),
        })
    }

    pub fn rounds(&self) -> usize {
        self.levels.len()
    }

    pub fn top(&self) -> &LevelSizes {
        self.sizes.last().unwrap()
    }

    /// `n_k = l^(5^(k+1))` and `m_k <= n_k^2` for canonical tables.
    fn check_closed_form(&self) -> Result<(), ParamsError> {
        let Mode::Canonical { l, .. } = self.mode else {
            return Ok(());
        };
        let l = BigUint::from(l);
        for (k, s) in self.sizes.iter().enumerate() {
            let exp = 5u32.pow(k as u32 + 1);
            if s.n != l.pow(exp) || s.m > s.n.pow(2) {
                return Err(ParamsError::ClosedForm(k));
            }
        }
        Ok(())
    }

    /// Check externally supplied level parameters against the derived sizes.
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.sizes.len() != self.levels.len() + 1 {
            return Err(ParamsError::Inconsistent {
                level: 0,
                detail: "size table length".into(),
            });
        }
        let s0 = &self.sizes[0];
        if s0.n.is_zero() || s0.n != s0.m || !s0.d.is_one() {
            return Err(ParamsError::Inconsistent {
                level: 0,
                detail: "base level must be a square permutation layer".into(),
            });
        }
        for (k, lp) in self.levels.iter().enumerate() {
            let (child, next) = (&self.sizes[k], &self.sizes[k + 1]);
            let bad = |detail: &str| ParamsError::Inconsistent {
                level: k + 1,
                detail: detail.into(),
            };
            if lp.num_bidder_blocks.is_zero() {
                return Err(ParamsError::NoBidderBlocks(k + 1));
            }
            if lp.bidder_block_size != child.n || lp.item_block_size != child.m {
                return Err(bad("block sizes differ from child level"));
            }
            if lp.item_block_size < lp.bidder_block_size {
                return Err(bad("item blocks smaller than bidder blocks"));
            }
            if next.n != &lp.num_bidder_blocks * &child.n
                || next.m != (&lp.num_bidder_blocks + &lp.num_fooling_blocks) * &child.m
                || next.d != (&lp.num_fooling_blocks + 1u32) * &child.d
            {
                return Err(bad("size recurrence violated"));
            }
        }
        self.check_closed_form()
    }

    /// Rough memory footprint of a fully materialised top-level graph.
    pub fn estimated_bytes(&self) -> BigUint {
        let top = self.top();
        &top.n * &top.d * 8u32 + &top.n * 24u32 + &top.m * 8u32
    }

    pub fn total_edges(&self) -> BigUint {
        &self.top().n * &self.top().d
    }

    /// Machine-sized copy of the table for sampling.
    pub fn desk(&self) -> Result<DeskParams, ParamsError> {
        let fit = |x: &BigUint, what: &str| {
            x.to_usize()
                .ok_or_else(|| ParamsError::TooLarge(format!("{what} = {x} does not fit in memory")))
        };
        // adjacency entries must be addressable too
        fit(&self.total_edges(), "total edges")?;
        let mut desk = DeskParams {
            base: fit(&self.sizes[0].n, "m0")?,
            blocks: Vec::with_capacity(self.levels.len()),
            n: Vec::with_capacity(self.sizes.len()),
            m: Vec::with_capacity(self.sizes.len()),
            d: Vec::with_capacity(self.sizes.len()),
        };
        for lp in &self.levels {
            desk.blocks.push((
                fit(&lp.num_bidder_blocks, "bidder blocks")?,
                fit(&lp.num_fooling_blocks, "fooling blocks")?,
            ));
        }
        for s in &self.sizes {
            desk.n.push(fit(&s.n, "n")?);
            desk.m.push(fit(&s.m, "m")?);
            desk.d.push(fit(&s.d, "d")?);
        }
        Ok(desk)
    }
}

/// `usize` mirror of a [`ParamsTable`] small enough to sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeskParams {
    pub base: usize,
    /// `(B, F)` for the transition into level `k + 1`.
    pub blocks: Vec<(usize, usize)>,
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub d: Vec<usize>,
}

impl DeskParams {
    pub fn rounds(&self) -> usize {
        self.blocks.len()
    }

    /// Bidder and fooling block counts of the transition into `level` (>= 1).
    pub fn level_blocks(&self, level: usize) -> (usize, usize) {
        self.blocks[level - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_small_values() {
        let t = ParamsTable::canonical(2, 0).unwrap();
        assert_eq!(t.sizes[0].n, BigUint::from(32u32));
        assert_eq!(t.sizes[0].m, BigUint::from(32u32));
        assert_eq!(t.sizes[0].d, BigUint::one());

        let t = ParamsTable::canonical(2, 1).unwrap();
        assert_eq!(t.sizes[1].n, BigUint::from(33_554_432u64));
        assert_eq!(t.sizes[1].m, BigUint::from(33_619_968u64));
        assert_eq!(t.sizes[1].d, BigUint::from(2049u32));

        let t = ParamsTable::canonical(3, 0).unwrap();
        assert_eq!(t.sizes[0].n, BigUint::from(243u32));
    }

    #[test]
    fn canonical_rejects_small_l() {
        assert_eq!(ParamsTable::canonical(1, 0), Err(ParamsError::BandwidthTooSmall(1)));
        assert!(matches!(ParamsTable::canonical(2, 99), Err(ParamsError::TooDeep(99))));
    }

    #[test]
    fn generalized_sizes() {
        let t = ParamsTable::generalized(4, &[BlockCounts::new(2, 3)]).unwrap();
        assert_eq!(t.sizes[1].n, BigUint::from(8u32));
        assert_eq!(t.sizes[1].m, BigUint::from(20u32));
        assert_eq!(t.sizes[1].d, BigUint::from(4u32));
        t.validate().unwrap();
        assert!(ParamsTable::generalized(0, &[]).is_err());
        assert_eq!(
            ParamsTable::generalized(3, &[BlockCounts::new(0, 1)]),
            Err(ParamsError::NoBidderBlocks(1))
        );
    }

    #[test]
    fn tampered_table_fails_validation() {
        let mut t = ParamsTable::generalized(3, &[BlockCounts::new(2, 2)]).unwrap();
        t.sizes[1].d = BigUint::from(5u32);
        assert!(t.validate().is_err());
        let mut t = ParamsTable::canonical(2, 1).unwrap();
        t.sizes[1].n += 1u32;
        assert!(t.validate().is_err());
    }

    #[test]
    fn desk_refuses_canonical_r1() {
        let t = ParamsTable::canonical(2, 1).unwrap();
        // 2^25 bidders with degree 2049 fits in usize but is reported as huge
        assert_eq!(t.total_edges(), BigUint::from(33_554_432u64 * 2049));
        assert!(ParamsTable::canonical(2, 2).unwrap().desk().is_err());
    }

    #[test]
    fn params_json_uses_decimal_strings() {
        let t = ParamsTable::canonical(2, 1).unwrap();
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["sizes"][1]["m"], "33619968");
        let back: ParamsTable = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }
}
