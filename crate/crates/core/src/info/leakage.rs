//! Monte Carlo estimates of what first-round messages reveal about the
//! hidden structure of a block.
//!
//! Both estimators look at bidder block 0 of the top level of `μ`: its
//! incident block set `I`, the rank `J` of its hidden block inside `I`, and
//! (for the ψ estimate) the hidden child permutation.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mu::{LevelMeta, MuSampler, TabulationError};
use crate::params::ParamsTable;
use crate::protocol::{first_round_message, BitString, Protocol, PublicInfo};
use crate::rng::SeedPath;

/// What a player's first-round message function gets to see.
pub struct FirstRoundInput<'a> {
    pub player: usize,
    pub demand: &'a [usize],
    pub public: &'a PublicInfo,
    pub seed: u64,
    /// The hidden rank `J` of the player's block. Honest protocols must
    /// ignore it; it exists for negative controls.
    pub hidden_rank: usize,
}

pub trait FirstRound: Sync {
    fn message(&self, input: &FirstRoundInput<'_>) -> BitString;
}

impl<F: Fn(&FirstRoundInput<'_>) -> BitString + Sync> FirstRound for F {
    fn message(&self, input: &FirstRoundInput<'_>) -> BitString {
        self(input)
    }
}

/// Round 1 of a protocol, as a [`FirstRound`].
pub struct ProtocolFirstRound<'a>(pub &'a dyn Protocol);

impl FirstRound for ProtocolFirstRound<'_> {
    fn message(&self, x: &FirstRoundInput<'_>) -> BitString {
        first_round_message(self.0, x.player, x.demand, x.public, x.seed)
    }
}

/// Largest sampled instance (edges) the estimators accept.
pub const MAX_SAMPLE_EDGES: usize = 1 << 20;
/// Largest joint support the plug-in estimate will tabulate.
pub const MAX_JOINT_CELLS: usize = 1 << 22;
/// Largest child permutation space for the ψ estimate.
pub const MAX_PSI_BASE: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageEstimate {
    pub bidder: usize,
    pub samples: usize,
    /// Plug-in `I(M; J | I)` in nats.
    pub estimate: f64,
    /// `(K − 1) / (2N)` nats for the observed joint support size `K`.
    pub bias_threshold: f64,
    /// `Σ_I (|M_I| − 1)(|J_I| − 1) / (2N)`: the leading bias term under
    /// independence, from observed supports.
    pub expected_bias: f64,
    pub joint_support: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiEstimate {
    pub samples: usize,
    pub buckets: usize,
    /// Frequency-weighted mean statistical distance between the empirical
    /// hidden-permutation distribution in a bucket and the uniform one.
    pub distance: f64,
    /// `sqrt(n_child · bits / F)`, shown for comparison only.
    pub envelope: f64,
    pub bits_per_player: usize,
    pub block_size: usize,
    pub fooling_blocks: usize,
}

struct Setup {
    sampler: MuSampler,
    block_size: usize,
    fooling_blocks: usize,
}

fn setup(params: &ParamsTable) -> Result<Setup, TabulationError> {
    let sampler = MuSampler::new(params.clone())?;
    let desk = sampler.desk();
    let r = desk.rounds();
    if r == 0 {
        return Err(TabulationError::Unsupported(
            "needs at least one composite level".into(),
        ));
    }
    let edges = desk.n[r].saturating_mul(desk.d[r]);
    if edges > MAX_SAMPLE_EDGES {
        return Err(TabulationError::Intractable(format!(
            "{edges} edges per sample exceeds {MAX_SAMPLE_EDGES}"
        )));
    }
    let block_size = desk.n[r - 1];
    let fooling_blocks = desk.level_blocks(r).1;
    Ok(Setup {
        sampler,
        block_size,
        fooling_blocks,
    })
}

struct Draw {
    incident: Vec<usize>,
    rank: usize,
    messages: Vec<BitString>,
    hidden: LevelMeta,
}

/// Draws sample `s` and the messages of `players` (block-0 bidders).
fn draw(setup: &Setup, f: &dyn FirstRound, players: std::ops::Range<usize>, seed: u64, s: u64) -> Draw {
    let root = SeedPath::root(seed);
    let b = setup.sampler.sample(root.child("instance", s).to_u64());
    let proto_seed = root.child("protocol", s).to_u64();
    let LevelMeta::Composite {
        fooling_set,
        sigma,
        j_rank,
        mut children,
    } = b.meta
    else {
        unreachable!("top level is composite");
    };
    let mut incident = fooling_set;
    incident.push(sigma[0]);
    incident.sort_unstable();
    let public = PublicInfo::of(&b.graph);
    let messages = players
        .map(|u| {
            f.message(&FirstRoundInput {
                player: u,
                demand: b.graph.demand(u),
                public: &public,
                seed: proto_seed,
                hidden_rank: j_rank[0],
            })
        })
        .collect();
    Draw {
        incident,
        rank: j_rank[0],
        messages,
        hidden: children.swap_remove(0),
    }
}

fn parallel_counts<K, V, F>(num_samples: usize, f: F) -> HashMap<K, V>
where
    K: std::hash::Hash + Eq + Send,
    V: Default + Send + Merge,
    F: Fn(u64, &mut HashMap<K, V>) + Sync,
{
    (0..num_samples as u64)
        .into_par_iter()
        .fold(HashMap::new, |mut acc, s| {
            f(s, &mut acc);
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                a.entry(k).or_default().absorb(v);
            }
            a
        })
}

trait Merge {
    fn absorb(&mut self, other: Self);
}

impl Merge for u64 {
    fn absorb(&mut self, other: Self) {
        *self += other;
    }
}

impl Merge for BTreeMap<Vec<usize>, u64> {
    fn absorb(&mut self, other: Self) {
        for (k, v) in other {
            *self.entry(k).or_default() += v;
        }
    }
}

/// Plug-in `I(M; J | I)` in nats from joint counts keyed `(I, M, J)`.
pub fn plug_in_cmi<I: Ord + Clone, M: Ord + Clone, J: Ord + Clone>(counts: &BTreeMap<(I, M, J), u64>) -> f64 {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    let mut n_i: BTreeMap<&I, u64> = BTreeMap::new();
    let mut n_im: BTreeMap<(&I, &M), u64> = BTreeMap::new();
    let mut n_ij: BTreeMap<(&I, &J), u64> = BTreeMap::new();
    for ((i, m, j), &n) in counts {
        *n_i.entry(i).or_default() += n;
        *n_im.entry((i, m)).or_default() += n;
        *n_ij.entry((i, j)).or_default() += n;
    }
    let mut acc = 0.0;
    for ((i, m, j), &n) in counts {
        if n == 0 {
            continue;
        }
        let num = n as f64 * n_i[i] as f64;
        let den = n_im[&(i, m)] as f64 * n_ij[&(i, j)] as f64;
        acc += n as f64 * (num / den).ln();
    }
    (acc / total as f64).max(0.0)
}

pub fn estimate_index_leakage(
    params: &ParamsTable,
    f: &dyn FirstRound,
    num_samples: usize,
    seed: u64,
) -> Result<LeakageEstimate, TabulationError> {
    estimate_index_leakage_at(params, f, 0, num_samples, seed)
}

/// Plug-in estimate of `I(M_u; J | I)` for bidder `u` of block 0.
pub fn estimate_index_leakage_at(
    params: &ParamsTable,
    f: &dyn FirstRound,
    bidder: usize,
    num_samples: usize,
    seed: u64,
) -> Result<LeakageEstimate, TabulationError> {
    let setup = setup(params)?;
    if bidder >= setup.block_size {
        return Err(TabulationError::Unsupported(format!(
            "bidder {bidder} is not in block 0 (size {})",
            setup.block_size
        )));
    }
    if num_samples == 0 {
        return Err(TabulationError::Unsupported("no samples".into()));
    }
    let counts = parallel_counts(
        num_samples,
        |s, acc: &mut HashMap<(Vec<usize>, BitString, usize), u64>| {
            let d = draw(&setup, f, bidder..bidder + 1, seed, s);
            let m = d.messages.into_iter().next().unwrap();
            *acc.entry((d.incident, m, d.rank)).or_default() += 1;
        },
    );
    if counts.len() > MAX_JOINT_CELLS {
        return Err(TabulationError::Intractable(format!(
            "{} joint cells exceeds {MAX_JOINT_CELLS}",
            counts.len()
        )));
    }
    let counts: BTreeMap<_, _> = counts.into_iter().collect();
    let n = num_samples as f64;
    let k = counts.len();

    let mut per_i: BTreeMap<
        &Vec<usize>,
        (
            std::collections::BTreeSet<&BitString>,
            std::collections::BTreeSet<usize>,
        ),
    > = BTreeMap::new();
    for (i, m, j) in counts.keys() {
        let e = per_i.entry(i).or_default();
        e.0.insert(m);
        e.1.insert(*j);
    }
    let expected_bias = per_i
        .values()
        .map(|(ms, js)| ((ms.len() - 1) * (js.len() - 1)) as f64)
        .sum::<f64>()
        / (2.0 * n);

    let estimate = plug_in_cmi(&counts);
    let bias_threshold = (k - 1) as f64 / (2.0 * n);
    Ok(LeakageEstimate {
        bidder,
        samples: num_samples,
        estimate,
        bias_threshold,
        expected_bias,
        joint_support: k,
        pass: estimate <= bias_threshold + 1e-12,
    })
}

fn factorial(k: usize) -> usize {
    (1..=k).product()
}

/// Mean distance between the hidden child graph's conditional distribution
/// given `(block messages, I, J)` and its prior (uniform permutations).
pub fn estimate_psi_distance(
    params: &ParamsTable,
    f: &dyn FirstRound,
    num_samples: usize,
    seed: u64,
) -> Result<PsiEstimate, TabulationError> {
    let setup = setup(params)?;
    let desk = setup.sampler.desk();
    if desk.rounds() != 1 {
        return Err(TabulationError::Unsupported(
            "the child distribution is tabulated only for one composite level".into(),
        ));
    }
    if desk.base > MAX_PSI_BASE {
        return Err(TabulationError::Intractable(format!(
            "{}! child permutations exceeds {MAX_PSI_BASE}!",
            desk.base
        )));
    }
    if num_samples == 0 {
        return Err(TabulationError::Unsupported("no samples".into()));
    }
    type Key = (Vec<BitString>, Vec<usize>, usize);
    type Tally = (HashMap<Key, BTreeMap<Vec<usize>, u64>>, usize);
    let (buckets, bits): Tally = (0..num_samples as u64)
        .into_par_iter()
        .fold(
            || (HashMap::new(), 0),
            |(mut acc, bits): Tally, s| {
                let d = draw(&setup, f, 0..setup.block_size, seed, s);
                let LevelMeta::Base { permutation } = d.hidden else {
                    unreachable!("child level is the base");
                };
                let widest = d.messages.iter().map(BitString::len).max().unwrap_or(0);
                *acc.entry((d.messages, d.incident, d.rank))
                    .or_default()
                    .entry(permutation)
                    .or_default() += 1;
                (acc, bits.max(widest))
            },
        )
        .reduce(
            || (HashMap::new(), 0),
            |(mut a, x), (b, y)| {
                for (k, v) in b {
                    a.entry(k).or_default().absorb(v);
                }
                (a, x.max(y))
            },
        );
    if buckets.len() > MAX_JOINT_CELLS {
        return Err(TabulationError::Intractable(format!(
            "{} buckets exceeds {MAX_JOINT_CELLS}",
            buckets.len()
        )));
    }

    let support = factorial(desk.base);
    let prior = 1.0 / support as f64;
    let buckets: BTreeMap<_, _> = buckets.into_iter().collect();
    let mut weighted = 0.0;
    for perms in buckets.values() {
        let total: u64 = perms.values().sum();
        let seen: f64 = perms.values().map(|&c| (c as f64 / total as f64 - prior).abs()).sum();
        let unseen = (support - perms.len()) as f64 * prior;
        weighted += total as f64 * 0.5 * (seen + unseen);
    }
    let (block_size, fooling_blocks) = (setup.block_size, setup.fooling_blocks);
    Ok(PsiEstimate {
        samples: num_samples,
        buckets: buckets.len(),
        distance: weighted / num_samples as f64,
        envelope: ((block_size * bits) as f64 / fooling_blocks.max(1) as f64).sqrt(),
        bits_per_player: bits,
        block_size,
        fooling_blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{ascending_auction, iterated_proposal, one_shot_announce};
    use crate::info::{conditional_mutual_information, JointTable, LogBase};
    use crate::params::BlockCounts;

    fn mu1(b: u64, f: u64, m0: u64) -> ParamsTable {
        ParamsTable::generalized(m0, &[BlockCounts::new(b, f)]).unwrap()
    }

    fn cheater(x: &FirstRoundInput<'_>) -> BitString {
        let mut b = BitString::new();
        b.push_uint(x.hidden_rank as u64, 4);
        b
    }

    #[test]
    fn constant_message_leaks_exactly_nothing() {
        let e = estimate_index_leakage(&mu1(2, 2, 3), &|_: &FirstRoundInput<'_>| BitString::new(), 2000, 1).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert!(e.pass);
    }

    #[test]
    fn honest_first_rounds_stay_under_threshold() {
        let params = mu1(2, 2, 3);
        for p in [
            Box::new(one_shot_announce(4)) as Box<dyn Protocol>,
            Box::new(iterated_proposal(3)),
            Box::new(ascending_auction(4)),
        ] {
            let e = estimate_index_leakage(&params, &ProtocolFirstRound(p.as_ref()), 50_000, 2).unwrap();
            assert!(e.pass, "{}: {e:?}", p.id());
            assert!(e.expected_bias <= e.bias_threshold);
        }
    }

    #[test]
    fn cheater_is_detected() {
        let e = estimate_index_leakage(&mu1(2, 2, 3), &cheater, 20_000, 3).unwrap();
        assert!(e.estimate > 10.0 * e.bias_threshold, "{e:?}");
        // J is uniform on 3 values given I
        assert!((e.estimate - 3f64.ln()).abs() < 0.01);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let params = mu1(2, 2, 3);
        let p = one_shot_announce(2);
        let a = estimate_index_leakage(&params, &ProtocolFirstRound(&p), 3000, 4).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| estimate_index_leakage(&params, &ProtocolFirstRound(&p), 3000, 4).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn plug_in_matches_table_cmi() {
        let mut counts = BTreeMap::new();
        let mut dense = vec![0u64; 2 * 3 * 2];
        let cells = [
            (0usize, 0usize, 0usize, 5u64),
            (0, 1, 1, 3),
            (0, 2, 0, 7),
            (1, 0, 1, 2),
            (1, 2, 1, 9),
            (1, 1, 0, 4),
            (0, 0, 1, 1),
        ];
        for &(i, m, j, n) in &cells {
            counts.insert((i, m, j), n);
            dense[(i * 3 + m) * 2 + j] = n;
        }
        let t = JointTable::<f64>::from_counts(&[("i", 2), ("m", 3), ("j", 2)], &dense).unwrap();
        let want = conditional_mutual_information(&t, &["m"], &["j"], &["i"], LogBase::Nats).unwrap();
        assert!((plug_in_cmi(&counts) - want).abs() < 1e-12);
    }

    #[test]
    fn psi_distance_controls() {
        let params = mu1(2, 8, 4);
        let silent = |_: &FirstRoundInput<'_>| BitString::new();
        let small = estimate_psi_distance(&params, &silent, 2_000, 5).unwrap();
        let large = estimate_psi_distance(&params, &silent, 20_000, 5).unwrap();
        assert_eq!(large.bits_per_player, 0);
        assert!(large.distance < small.distance);

        let reveal = |x: &FirstRoundInput<'_>| {
            let mut b = BitString::new();
            for &v in x.demand {
                b.push_uint(v as u64, 6);
            }
            b
        };
        let full = estimate_psi_distance(&params, &reveal, 2_000, 6).unwrap();
        // the hidden permutation is determined by the bucket
        assert!((full.distance - (1.0 - 1.0 / 24.0)).abs() < 1e-12, "{full:?}");
    }

    #[test]
    fn refusals() {
        let silent = |_: &FirstRoundInput<'_>| BitString::new();
        assert!(matches!(
            estimate_psi_distance(&mu1(2, 2, 6), &silent, 10, 0),
            Err(TabulationError::Intractable(_))
        ));
        let two = ParamsTable::generalized(2, &[BlockCounts::new(2, 1), BlockCounts::new(2, 1)]).unwrap();
        assert!(matches!(
            estimate_psi_distance(&two, &silent, 10, 0),
            Err(TabulationError::Unsupported(_))
        ));
        let zero = ParamsTable::generalized(3, &[]).unwrap();
        assert!(estimate_index_leakage(&zero, &silent, 10, 0).is_err());
    }
}
