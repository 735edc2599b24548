//! Reference protocols for the blackboard framework.
//!
//! All encodings are fixed width: an item index takes
//! [`index_width`]`(num_items)` bits. Ties are broken towards the lowest
//! index everywhere. State that a referee would "post" between rounds
//! (awards, prices) is recomputed by every party from the board, since it is
//! a deterministic function of it.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use crate::graph::{BipartiteGraph, Matching};
use crate::matching::greedy_in_index_order;
use crate::protocol::{index_width, BitString, Board, PlayerView, Protocol, PublicInfo, RefereeView};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZeroRoundStrategy {
    /// Bidder `i` gets item `i`.
    Identity,
    /// Bidder `i` gets item `pi(i)` for a publicly random permutation `pi`.
    RandomPermutation,
}

/// No communication: the referee guesses from the public sizes alone.
#[derive(Clone, Debug)]
pub struct ZeroRound {
    pub strategy: ZeroRoundStrategy,
}

pub fn zero_round_referee(strategy: ZeroRoundStrategy) -> ZeroRound {
    ZeroRound { strategy }
}

impl Protocol for ZeroRound {
    fn id(&self) -> String {
        match self.strategy {
            ZeroRoundStrategy::Identity => "zero_round".into(),
            ZeroRoundStrategy::RandomPermutation => "zero_round:strategy=random".into(),
        }
    }

    fn num_rounds(&self) -> usize {
        0
    }

    fn message(&self, _: &PlayerView<'_>) -> BitString {
        BitString::new()
    }

    fn referee(&self, view: &RefereeView<'_>) -> Matching {
        let k = view.public.num_bidders.min(view.public.num_items);
        let pairs = match self.strategy {
            ZeroRoundStrategy::Identity => (0..k).map(|i| (i, i)).collect(),
            ZeroRoundStrategy::RandomPermutation => {
                let mut items: Vec<usize> = (0..view.public.num_items).collect();
                items.shuffle(&mut view.public_rng("referee-permutation", 0));
                (0..k).map(|i| (i, items[i])).collect()
            }
        };
        Matching::from_pairs_unchecked(pairs)
    }
}

/// One round: every player lists up to `k` of its lowest demanded items.
#[derive(Clone, Debug)]
pub struct OneShotAnnounce {
    pub k: usize,
}

pub fn one_shot_announce(k: usize) -> OneShotAnnounce {
    assert!(k >= 1, "one_shot needs k >= 1");
    OneShotAnnounce { k }
}

impl Protocol for OneShotAnnounce {
    fn id(&self) -> String {
        format!("one_shot:k={}", self.k)
    }

    fn num_rounds(&self) -> usize {
        1
    }

    /// `k` slots of `w` bits; short lists repeat their last item. Players
    /// with no demand stay silent.
    fn message(&self, view: &PlayerView<'_>) -> BitString {
        let w = index_width(view.public.num_items);
        let mut b = BitString::new();
        let Some(&last) = view.demand.iter().take(self.k).next_back() else {
            return b;
        };
        for i in 0..self.k {
            let item = view.demand.get(i).copied().filter(|_| i < self.k).unwrap_or(last);
            b.push_uint(item as u64, w);
        }
        b
    }

    fn referee(&self, view: &RefereeView<'_>) -> Matching {
        let pub_ = view.public;
        let w = index_width(pub_.num_items);
        let mut edges = Vec::new();
        if let Some(round) = view.transcript.rounds.first() {
            for (u, msg) in round.iter().enumerate() {
                let mut r = msg.reader();
                while let Some(v) = r.read_uint(w) {
                    if (v as usize) < pub_.num_items {
                        edges.push((u, v as usize));
                    }
                }
            }
        }
        let announced =
            BipartiteGraph::from_edges(pub_.num_bidders, pub_.num_items, &edges).expect("announced edges are in range");
        greedy_in_index_order(&announced)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalChoice {
    Lowest,
    /// Uniform over unclaimed demanded items, from the player's private coins.
    Uniform,
}

/// Repeated proposals: each still-unmatched player names one unclaimed item
/// it demands; each named item goes to its lowest-index proposer.
#[derive(Clone, Debug)]
pub struct IteratedProposal {
    pub rounds: usize,
    pub choice: ProposalChoice,
}

pub fn iterated_proposal(rounds: usize) -> IteratedProposal {
    assert!(rounds >= 1, "iterated proposal needs at least one round");
    IteratedProposal {
        rounds,
        choice: ProposalChoice::Lowest,
    }
}

/// Awards implied by a board of proposals.
struct Awards {
    item_owner: Vec<Option<usize>>,
    bidder_item: Vec<Option<usize>>,
    last_round_active: bool,
}

/// Reads a `flag [+ item]` message; `None` when silent or malformed.
fn read_flagged_item(msg: &BitString, w: usize, num_items: usize) -> Option<usize> {
    let mut r = msg.reader();
    if r.read_bit()? {
        r.read_uint(w).map(|v| v as usize).filter(|&v| v < num_items)
    } else {
        None
    }
}

fn flagged_item(item: Option<usize>, w: usize) -> BitString {
    let mut b = BitString::new();
    b.push_bit(item.is_some());
    if let Some(v) = item {
        b.push_uint(v as u64, w);
    }
    b
}

impl Awards {
    fn replay(board: &Board, public: &PublicInfo) -> Self {
        let w = index_width(public.num_items);
        let mut a = Awards {
            item_owner: vec![None; public.num_items],
            bidder_item: vec![None; public.num_bidders],
            last_round_active: false,
        };
        for round in board {
            a.last_round_active = false;
            let mut claims: BTreeMap<usize, usize> = BTreeMap::new();
            for (u, msg) in round.iter().enumerate() {
                if let Some(v) = read_flagged_item(msg, w, public.num_items) {
                    a.last_round_active = true;
                    if a.bidder_item[u].is_none() && a.item_owner[v].is_none() {
                        claims.entry(v).or_insert(u);
                    }
                }
            }
            for (v, u) in claims {
                a.item_owner[v] = Some(u);
                a.bidder_item[u] = Some(v);
            }
        }
        a
    }

    fn matching(&self) -> Matching {
        Matching::from_pairs_unchecked(
            self.bidder_item
                .iter()
                .enumerate()
                .filter_map(|(u, v)| v.map(|v| (u, v)))
                .collect(),
        )
    }
}

impl Protocol for IteratedProposal {
    fn id(&self) -> String {
        match self.choice {
            ProposalChoice::Lowest => format!("iterated:r={}", self.rounds),
            ProposalChoice::Uniform => format!("iterated:r={},choice=uniform", self.rounds),
        }
    }

    fn num_rounds(&self) -> usize {
        self.rounds
    }

    fn message(&self, view: &PlayerView<'_>) -> BitString {
        let w = index_width(view.public.num_items);
        let awards = Awards::replay(view.board, view.public);
        if awards.bidder_item[view.player].is_some() {
            return flagged_item(None, w);
        }
        let free: Vec<usize> = view
            .demand
            .iter()
            .copied()
            .filter(|&v| awards.item_owner[v].is_none())
            .collect();
        let pick = match self.choice {
            ProposalChoice::Lowest => free.first().copied(),
            ProposalChoice::Uniform if free.is_empty() => None,
            ProposalChoice::Uniform => Some(free[view.private_rng().random_range(0..free.len())]),
        };
        flagged_item(pick, w)
    }

    fn referee(&self, view: &RefereeView<'_>) -> Matching {
        Awards::replay(&view.transcript.rounds, view.public).matching()
    }

    fn halted(&self, board: &Board, public: &PublicInfo) -> bool {
        !board.is_empty() && !Awards::replay(board, public).last_round_active
    }
}

/// Ascending-price auction with unit demand and 0/1 values.
///
/// Prices count in units of `2^-increment_bits`. Every unmatched player bids
/// on its cheapest demanded item still priced below 1 (lowest index on
/// ties). Each item that receives bids goes to its lowest-index bidder,
/// displacing the holder, and its price rises by one unit. The run stops at
/// a bid-free round or after `round_cap` rounds.
#[derive(Clone, Debug)]
pub struct AscendingAuction {
    pub round_cap: usize,
    pub increment_bits: u32,
}

pub const DEFAULT_INCREMENT_BITS: u32 = 4;

pub fn ascending_auction(increment_bits: u32) -> AscendingAuction {
    AscendingAuction {
        round_cap: 64,
        increment_bits,
    }
}

struct Market {
    price: Vec<u64>,
    holder: Vec<Option<usize>>,
    holding: Vec<Option<usize>>,
    last_round_active: bool,
}

impl Market {
    fn replay(board: &Board, public: &PublicInfo) -> Self {
        let w = index_width(public.num_items);
        let mut mk = Market {
            price: vec![0; public.num_items],
            holder: vec![None; public.num_items],
            holding: vec![None; public.num_bidders],
            last_round_active: false,
        };
        for round in board {
            let mut bids: BTreeMap<usize, usize> = BTreeMap::new();
            for (u, msg) in round.iter().enumerate() {
                if mk.holding[u].is_some() {
                    continue;
                }
                if let Some(v) = read_flagged_item(msg, w, public.num_items) {
                    bids.entry(v).or_insert(u);
                }
            }
            mk.last_round_active = !bids.is_empty();
            for (v, u) in bids {
                if let Some(prev) = mk.holder[v] {
                    mk.holding[prev] = None;
                }
                mk.holder[v] = Some(u);
                mk.holding[u] = Some(v);
                mk.price[v] += 1;
            }
        }
        mk
    }
}

impl Protocol for AscendingAuction {
    fn id(&self) -> String {
        format!("auction:cap={},inc={}", self.round_cap, self.increment_bits)
    }

    fn num_rounds(&self) -> usize {
        self.round_cap
    }

    fn message(&self, view: &PlayerView<'_>) -> BitString {
        let w = index_width(view.public.num_items);
        let mk = Market::replay(view.board, view.public);
        if mk.holding[view.player].is_some() {
            return flagged_item(None, w);
        }
        let unit = 1u64 << self.increment_bits;
        let pick = view
            .demand
            .iter()
            .copied()
            .filter(|&v| mk.price[v] < unit)
            .min_by_key(|&v| (mk.price[v], v));
        flagged_item(pick, w)
    }

    fn referee(&self, view: &RefereeView<'_>) -> Matching {
        let mk = Market::replay(&view.transcript.rounds, view.public);
        Matching::from_pairs_unchecked(
            mk.holding
                .iter()
                .enumerate()
                .filter_map(|(u, v)| v.map(|v| (u, v)))
                .collect(),
        )
    }

    fn halted(&self, board: &Board, public: &PublicInfo) -> bool {
        !board.is_empty() && !Market::replay(board, public).last_round_active
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolIdError {
    #[error("unknown protocol `{0}`")]
    Unknown(String),
    #[error("protocol `{name}`: bad parameter `{param}`")]
    BadParam { name: String, param: String },
}

/// A protocol name with `key=value` parameters, e.g. `iterated:r=3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolId {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            write!(f, "{}{k}={v}", if i == 0 { ':' } else { ',' })?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ProtocolId {
    type Err = ProtocolIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params = BTreeMap::new();
        for kv in rest.split(',').filter(|x| !x.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| ProtocolIdError::BadParam {
                name: name.into(),
                param: kv.into(),
            })?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self {
            name: name.trim().to_string(),
            params,
        })
    }
}

impl ProtocolId {
    /// The round-count parameter of this protocol, if it has one.
    pub fn rounds_key(&self) -> Option<&'static str> {
        match self.name.as_str() {
            "iterated" => Some("r"),
            "auction" => Some("cap"),
            _ => None,
        }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn build(&self) -> Result<Box<dyn Protocol>, ProtocolIdError> {
        let bad = |param: &str| ProtocolIdError::BadParam {
            name: self.name.clone(),
            param: param.to_string(),
        };
        let known = |keys: &[&str]| match self.params.keys().find(|k| !keys.contains(&k.as_str())) {
            Some(k) => Err(bad(k)),
            None => Ok(()),
        };
        let num = |key: &str, default: Option<usize>, min: usize| -> Result<usize, ProtocolIdError> {
            match self.params.get(key) {
                Some(v) => v
                    .parse()
                    .ok()
                    .filter(|&x| x >= min)
                    .ok_or_else(|| bad(&format!("{key}={v}"))),
                None => default.ok_or_else(|| bad(key)),
            }
        };
        Ok(match self.name.as_str() {
            "zero_round" => {
                known(&["strategy"])?;
                let strategy = match self.params.get("strategy").map(String::as_str) {
                    None | Some("identity") => ZeroRoundStrategy::Identity,
                    Some("random") => ZeroRoundStrategy::RandomPermutation,
                    Some(other) => return Err(bad(&format!("strategy={other}"))),
                };
                Box::new(zero_round_referee(strategy))
            }
            "one_shot" => {
                known(&["k"])?;
                Box::new(one_shot_announce(num("k", Some(1), 1)?))
            }
            "iterated" => {
                known(&["r", "choice"])?;
                let mut p = iterated_proposal(num("r", None, 1)?);
                p.choice = match self.params.get("choice").map(String::as_str) {
                    None | Some("lowest") => ProposalChoice::Lowest,
                    Some("uniform") => ProposalChoice::Uniform,
                    Some(other) => return Err(bad(&format!("choice={other}"))),
                };
                Box::new(p)
            }
            "auction" => {
                known(&["cap", "inc"])?;
                let inc = num("inc", Some(DEFAULT_INCREMENT_BITS as usize), 0)?;
                if inc > 32 {
                    return Err(bad(&format!("inc={inc}")));
                }
                let mut p = ascending_auction(inc as u32);
                p.round_cap = num("cap", Some(64), 1)?;
                Box::new(p)
            }
            other => return Err(ProtocolIdError::Unknown(other.into())),
        })
    }
}

pub fn parse_protocol(id: &str) -> Result<Box<dyn Protocol>, ProtocolIdError> {
    id.parse::<ProtocolId>()?.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::max_matching;
    use crate::mu::sample_mu0;
    use crate::protocol::run_protocol;

    fn perm(n: usize) -> BipartiteGraph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        BipartiteGraph::from_edges(n, n, &edges).unwrap()
    }

    #[test]
    fn zero_round_on_identity_graph() {
        let edges: Vec<_> = (0..32).map(|i| (i, i)).collect();
        let g = BipartiteGraph::from_edges(32, 32, &edges).unwrap();
        let out = run_protocol(&zero_round_referee(ZeroRoundStrategy::Identity), &g, None, 0).unwrap();
        assert_eq!(out.stats.score.matched_in_graph, 32);
        assert!(out.transcript.rounds.is_empty());
    }

    #[test]
    fn random_permutation_referee_is_a_matching() {
        let g = sample_mu0(16, 1).unwrap().graph;
        let p = zero_round_referee(ZeroRoundStrategy::RandomPermutation);
        let a = run_protocol(&p, &g, None, 1).unwrap();
        let b = run_protocol(&p, &g, None, 2).unwrap();
        assert_eq!(a.matching.len(), 16);
        assert_ne!(a.matching, b.matching);
    }

    #[test]
    fn one_shot_on_permutations() {
        let g = perm(7);
        for k in [1, 3] {
            let out = run_protocol(&one_shot_announce(k), &g, Some(k * 3), 0).unwrap();
            assert_eq!(out.stats.score.matched_in_graph, 7);
            assert_eq!(out.stats.max_bits_any_player_any_round, k * 3);
        }
        assert!(run_protocol(&one_shot_announce(2), &g, Some(5), 0).is_err());
    }

    #[test]
    fn one_shot_announce_everything_is_greedy_on_graph() {
        let g = BipartiteGraph::from_edges(3, 4, &[(0, 1), (0, 2), (1, 1), (2, 0), (2, 3)]).unwrap();
        let out = run_protocol(&one_shot_announce(4), &g, None, 0).unwrap();
        assert_eq!(out.matching, greedy_in_index_order(&g));
        // a player with no demand stays silent
        let g = BipartiteGraph::from_edges(2, 2, &[(0, 1)]).unwrap();
        let out = run_protocol(&one_shot_announce(2), &g, None, 0).unwrap();
        assert_eq!(out.transcript.bits_per_player_per_round(), vec![vec![2, 0]]);
    }

    #[test]
    fn iterated_one_round_on_permutation() {
        let g = perm(9);
        let out = run_protocol(&iterated_proposal(1), &g, None, 0).unwrap();
        assert_eq!(out.stats.score.matched_in_graph, 9);
    }

    #[test]
    fn iterated_resolves_collisions_over_rounds() {
        // everyone wants item 0, bidder 1 also wants item 1, bidder 2 also item 2
        let g = BipartiteGraph::from_edges(3, 3, &[(0, 0), (1, 0), (1, 1), (2, 0), (2, 2)]).unwrap();
        let one = run_protocol(&iterated_proposal(1), &g, None, 0).unwrap();
        assert_eq!(one.matching.pairs(), &[(0, 0)]);
        let two = run_protocol(&iterated_proposal(2), &g, None, 0).unwrap();
        assert_eq!(two.stats.score.matched_in_graph, 3);
        let many = run_protocol(&iterated_proposal(10), &g, None, 0).unwrap();
        // halts one round after the last proposal
        assert_eq!(many.stats.rounds_used, 3);
        assert_eq!(many.matching, two.matching);
    }

    #[test]
    fn iterated_uniform_variant_is_seeded() {
        let g = BipartiteGraph::from_edges(2, 4, &[(0, 0), (0, 1), (0, 2), (0, 3), (1, 2)]).unwrap();
        let mut p = iterated_proposal(4);
        p.choice = ProposalChoice::Uniform;
        let a = run_protocol(&p, &g, None, 5).unwrap();
        assert_eq!(a, run_protocol(&p, &g, None, 5).unwrap());
        assert!(a.stats.score.matched_in_graph >= 1);
    }

    #[test]
    fn auction_cases() {
        let g = perm(6);
        let out = run_protocol(&ascending_auction(4), &g, None, 0).unwrap();
        assert_eq!(out.stats.score.matched_in_graph, 6);
        assert_eq!(out.stats.rounds_used, 2);

        let g = BipartiteGraph::from_edges(2, 1, &[(0, 0), (1, 0)]).unwrap();
        let out = run_protocol(&ascending_auction(2), &g, None, 0).unwrap();
        assert_eq!(out.matching.len(), 1);
        // price climbs one unit per round until it reaches 1 = 4 units
        assert_eq!(out.stats.rounds_used, 5);
    }

    #[test]
    fn auction_finds_augmenting_reassignment() {
        // u0 prefers v0 (lower index), u1 only wants v0: prices push u0 to v1
        let g = BipartiteGraph::from_edges(2, 2, &[(0, 0), (0, 1), (1, 0)]).unwrap();
        let out = run_protocol(&ascending_auction(3), &g, None, 0).unwrap();
        assert_eq!(out.stats.score.matched_in_graph, max_matching(&g).len());
    }

    #[test]
    fn ids_round_trip() {
        for id in [
            "zero_round",
            "zero_round:strategy=random",
            "one_shot:k=4",
            "iterated:r=3",
            "auction:cap=64,inc=4",
        ] {
            assert_eq!(parse_protocol(id).unwrap().id(), id);
        }
        assert_eq!(parse_protocol("auction:cap=64").unwrap().id(), "auction:cap=64,inc=4");
        assert!(matches!(parse_protocol("nope"), Err(ProtocolIdError::Unknown(_))));
        assert!(parse_protocol("iterated").is_err());
        assert!(parse_protocol("iterated:r=0").is_err());
        assert!(parse_protocol("one_shot:k=2,x=1").is_err());
        let id: ProtocolId = "iterated:r=3".parse().unwrap();
        assert_eq!(id.rounds_key(), Some("r"));
        assert_eq!(id.with_param("r", 5).to_string(), "iterated:r=5");
    }
}
