//! Simultaneous-message blackboard protocols.
//!
//! In every round each player writes one bit string to the shared board,
//! computed from its own demand set, the public block partitions, the board
//! contents of strictly earlier rounds and the random coins. After the last
//! round a referee maps the transcript (and public data only) to a proposed
//! matching, which is scored against the hidden graph.
//!
//! The framework never interprets messages. A per-player, per-round bit cap
//! is enforced by aborting the run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{score_proposal, BipartiteGraph, MatchScore, Matching, MatchingError};
use crate::matching::max_matching;
use crate::mu::MuSampler;
use crate::rng::{trial_seed, Rng, SeedPath};
use crate::stats::MeanEstimate;

/// A packed, MSB-first bit string.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Append the low `width` bits of `value`, most significant first.
    pub fn push_uint(&mut self, value: u64, width: usize) {
        debug_assert!(width == 64 || value >> width == 0, "{value} does not fit {width} bits");
        for i in (0..width).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader { bits: self, pos: 0 }
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    /// Inverse of [`BitString::to_hex`]; padding bits beyond `len` must be zero.
    pub fn from_hex(s: &str, len: usize) -> Result<Self, String> {
        let bytes = hex::decode(s).map_err(|e| e.to_string())?;
        if bytes.len() != len.div_ceil(8) {
            return Err(format!("{} bytes cannot hold exactly {len} bits", bytes.len()));
        }
        if !len.is_multiple_of(8) && bytes.last().is_some_and(|b| b & (0xFF >> (len % 8)) != 0) {
            return Err("non-zero padding bits".into());
        }
        Ok(Self { bytes, len })
    }
}

pub struct BitReader<'a> {
    bits: &'a BitString,
    pos: usize,
}

impl BitReader<'_> {
    pub fn remaining(&self) -> usize {
        self.bits.len - self.pos
    }

    pub fn read_bit(&mut self) -> Option<bool> {
        (self.pos < self.bits.len).then(|| {
            self.pos += 1;
            self.bits.bit(self.pos - 1)
        })
    }

    pub fn read_uint(&mut self, width: usize) -> Option<u64> {
        if self.remaining() < width {
            return None;
        }
        let mut v = 0u64;
        for _ in 0..width {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Some(v)
    }
}

/// Number of bits in a fixed-width encoding of `0..m` (at least one).
pub fn index_width(m: usize) -> usize {
    if m <= 2 {
        1
    } else {
        (usize::BITS - (m - 1).leading_zeros()) as usize
    }
}

/// Data every party knows: sizes and the block partitions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicInfo {
    pub num_bidders: usize,
    pub num_items: usize,
    pub bidder_blocks: Vec<usize>,
    pub item_blocks: Vec<usize>,
}

impl PublicInfo {
    pub fn of(g: &BipartiteGraph) -> Self {
        Self {
            num_bidders: g.num_bidders(),
            num_items: g.num_items(),
            bidder_blocks: g.bidder_blocks().to_vec(),
            item_blocks: g.item_blocks().to_vec(),
        }
    }
}

/// Public and private random coins of one run.
#[derive(Clone, Debug)]
pub struct Coins {
    root: SeedPath,
}

impl Coins {
    pub fn new(seed: u64) -> Self {
        Self {
            root: SeedPath::root(seed),
        }
    }

    pub fn public(&self, label: &str, index: u64) -> Rng {
        self.root.child("public", 0).child(label, index).rng()
    }

    fn private(&self, player: usize, round: usize) -> Rng {
        self.root
            .child("private", player as u64)
            .child("round", round as u64)
            .rng()
    }
}

/// Messages of the rounds completed so far, indexed `[round][player]`.
pub type Board = [Vec<BitString>];

/// What a player sees when composing its message for `round` (1-based).
pub struct PlayerView<'a> {
    pub round: usize,
    pub player: usize,
    pub demand: &'a [usize],
    pub public: &'a PublicInfo,
    pub board: &'a Board,
    coins: &'a Coins,
}

impl<'a> PlayerView<'a> {
    pub fn new(
        round: usize,
        player: usize,
        demand: &'a [usize],
        public: &'a PublicInfo,
        board: &'a Board,
        coins: &'a Coins,
    ) -> Self {
        Self {
            round,
            player,
            demand,
            public,
            board,
            coins,
        }
    }

    pub fn public_rng(&self, label: &str, index: u64) -> Rng {
        self.coins.public(label, index)
    }

    /// This player's private coins for this round.
    pub fn private_rng(&self) -> Rng {
        self.coins.private(self.player, self.round)
    }
}

pub struct RefereeView<'a> {
    pub transcript: &'a Transcript,
    pub public: &'a PublicInfo,
    coins: &'a Coins,
}

impl RefereeView<'_> {
    pub fn public_rng(&self, label: &str, index: u64) -> Rng {
        self.coins.public(label, index)
    }
}

pub trait Protocol: Send + Sync {
    /// Identifier in `name:key=value,...` form.
    fn id(&self) -> String;

    /// Maximum number of rounds.
    fn num_rounds(&self) -> usize;

    fn message(&self, view: &PlayerView<'_>) -> BitString;

    fn referee(&self, view: &RefereeView<'_>) -> Matching;

    /// Whether the protocol has nothing left to say after the rounds on `board`.
    fn halted(&self, _board: &Board, _public: &PublicInfo) -> bool {
        false
    }

    /// A seed that overrides the run seed (see [`derandomize`]).
    fn fixed_seed(&self) -> Option<u64> {
        None
    }
}

/// A protocol assembled from closures.
pub struct ProtocolSpec<M, R> {
    name: String,
    rounds: usize,
    message_fn: M,
    referee_fn: R,
}

impl<M, R> ProtocolSpec<M, R>
where
    M: Fn(&PlayerView<'_>) -> BitString + Send + Sync,
    R: Fn(&RefereeView<'_>) -> Matching + Send + Sync,
{
    pub fn new(name: impl Into<String>, rounds: usize, message_fn: M, referee_fn: R) -> Self {
        Self {
            name: name.into(),
            rounds,
            message_fn,
            referee_fn,
        }
    }
}

impl<M, R> Protocol for ProtocolSpec<M, R>
where
    M: Fn(&PlayerView<'_>) -> BitString + Send + Sync,
    R: Fn(&RefereeView<'_>) -> Matching + Send + Sync,
{
    fn id(&self) -> String {
        self.name.clone()
    }
    fn num_rounds(&self) -> usize {
        self.rounds
    }
    fn message(&self, view: &PlayerView<'_>) -> BitString {
        (self.message_fn)(view)
    }
    fn referee(&self, view: &RefereeView<'_>) -> Matching {
        (self.referee_fn)(view)
    }
}

impl<P: Protocol + ?Sized> Protocol for Box<P> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn num_rounds(&self) -> usize {
        (**self).num_rounds()
    }
    fn message(&self, view: &PlayerView<'_>) -> BitString {
        (**self).message(view)
    }
    fn referee(&self, view: &RefereeView<'_>) -> Matching {
        (**self).referee(view)
    }
    fn halted(&self, board: &Board, public: &PublicInfo) -> bool {
        (**self).halted(board, public)
    }
    fn fixed_seed(&self) -> Option<u64> {
        (**self).fixed_seed()
    }
}

/// The protocol with its randomness fixed to `seed`.
pub struct Derandomized<P> {
    inner: P,
    seed: u64,
}

pub fn derandomize<P: Protocol>(inner: P, seed: u64) -> Derandomized<P> {
    Derandomized { inner, seed }
}

impl<P: Protocol> Protocol for Derandomized<P> {
    fn id(&self) -> String {
        format!("{}@{}", self.inner.id(), self.seed)
    }
    fn num_rounds(&self) -> usize {
        self.inner.num_rounds()
    }
    fn message(&self, view: &PlayerView<'_>) -> BitString {
        self.inner.message(view)
    }
    fn referee(&self, view: &RefereeView<'_>) -> Matching {
        self.inner.referee(view)
    }
    fn halted(&self, board: &Board, public: &PublicInfo) -> bool {
        self.inner.halted(board, public)
    }
    fn fixed_seed(&self) -> Option<u64> {
        Some(self.seed)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub rounds: Vec<Vec<BitString>>,
}

impl Transcript {
    pub fn bits_per_player_per_round(&self) -> Vec<Vec<usize>> {
        self.rounds
            .iter()
            .map(|r| r.iter().map(BitString::len).collect())
            .collect()
    }

    pub fn total_bits(&self) -> usize {
        self.rounds.iter().flatten().map(BitString::len).sum()
    }

    pub fn max_bits(&self) -> usize {
        self.rounds.iter().flatten().map(BitString::len).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub score: MatchScore,
    pub max_bits_any_player_any_round: usize,
    pub total_bits: usize,
    pub rounds_used: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOutput {
    pub transcript: Transcript,
    pub matching: Matching,
    pub stats: RunStats,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RunError {
    #[error("bandwidth violation: player {player} wrote {bits} bits in round {round} (cap {cap})")]
    Bandwidth {
        player: usize,
        round: usize,
        bits: usize,
        cap: usize,
    },
    #[error("referee output is not a matching: {0}")]
    Referee(#[from] MatchingError),
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub bandwidth_cap: Option<usize>,
    /// Order in which players are asked for their messages within a round.
    pub player_order: Option<Vec<usize>>,
}

pub fn run_protocol(
    p: &dyn Protocol,
    g: &BipartiteGraph,
    bandwidth_cap: Option<usize>,
    seed: u64,
) -> Result<RunOutput, RunError> {
    run_protocol_with(
        p,
        g,
        &RunOptions {
            bandwidth_cap,
            player_order: None,
        },
        seed,
    )
}

pub fn run_protocol_with(
    p: &dyn Protocol,
    g: &BipartiteGraph,
    opts: &RunOptions,
    seed: u64,
) -> Result<RunOutput, RunError> {
    let seed = p.fixed_seed().unwrap_or(seed);
    let coins = Coins::new(seed);
    let public = PublicInfo::of(g);
    let n = g.num_bidders();
    let default_order: Vec<usize>;
    let order = match &opts.player_order {
        Some(o) => o.as_slice(),
        None => {
            default_order = (0..n).collect();
            &default_order
        }
    };

    let mut transcript = Transcript::default();
    for round in 1..=p.num_rounds() {
        if p.halted(&transcript.rounds, &public) {
            break;
        }
        let mut messages = vec![BitString::new(); n];
        for &player in order {
            let view = PlayerView::new(round, player, g.demand(player), &public, &transcript.rounds, &coins);
            let msg = p.message(&view);
            if let Some(cap) = opts.bandwidth_cap {
                if msg.len() > cap {
                    return Err(RunError::Bandwidth {
                        player,
                        round,
                        bits: msg.len(),
                        cap,
                    });
                }
            }
            messages[player] = msg;
        }
        transcript.rounds.push(messages);
    }

    let matching = referee_output(p, &transcript, &public, seed)?;
    let score = score_proposal(g, &matching)?;
    let stats = RunStats {
        score,
        max_bits_any_player_any_round: transcript.max_bits(),
        total_bits: transcript.total_bits(),
        rounds_used: transcript.rounds.len(),
        seed,
    };
    Ok(RunOutput {
        transcript,
        matching,
        stats,
    })
}

/// Run only the referee on a stored transcript.
pub fn referee_output(
    p: &dyn Protocol,
    transcript: &Transcript,
    public: &PublicInfo,
    seed: u64,
) -> Result<Matching, RunError> {
    let coins = Coins::new(p.fixed_seed().unwrap_or(seed));
    let m = p.referee(&RefereeView {
        transcript,
        public,
        coins: &coins,
    });
    m.check()?;
    Ok(m)
}

/// The message `player` would send in round 1 of `p` on demand set `demand`.
pub fn first_round_message(
    p: &dyn Protocol,
    player: usize,
    demand: &[usize],
    public: &PublicInfo,
    seed: u64,
) -> BitString {
    if p.num_rounds() == 0 {
        return BitString::new();
    }
    let coins = Coins::new(p.fixed_seed().unwrap_or(seed));
    p.message(&PlayerView::new(1, player, demand, public, &[], &coins))
}

#[derive(Serialize, Deserialize)]
struct WireBits {
    hex: String,
    bits: usize,
}

#[derive(Serialize, Deserialize)]
struct TranscriptFile {
    version: u64,
    protocol: String,
    seed: u64,
    public: PublicInfo,
    rounds: Vec<Vec<WireBits>>,
    stats: RunStats,
    matching: Matching,
}

pub fn transcript_to_json(p: &dyn Protocol, public: &PublicInfo, out: &RunOutput) -> Vec<u8> {
    let f = TranscriptFile {
        version: crate::format::FORMAT_VERSION,
        protocol: p.id(),
        seed: out.stats.seed,
        public: public.clone(),
        rounds: out
            .transcript
            .rounds
            .iter()
            .map(|r| {
                r.iter()
                    .map(|b| WireBits {
                        hex: b.to_hex(),
                        bits: b.len(),
                    })
                    .collect()
            })
            .collect(),
        stats: out.stats.clone(),
        matching: out.matching.clone(),
    };
    let mut v = serde_json::to_vec(&f).expect("transcript serialization cannot fail");
    v.push(b'\n');
    v
}

/// A transcript file as loaded from disk.
#[derive(Clone, Debug)]
pub struct StoredRun {
    pub protocol: String,
    pub seed: u64,
    pub public: PublicInfo,
    pub transcript: Transcript,
    pub stats: RunStats,
    pub matching: Matching,
}

pub fn transcript_from_json(input: &[u8]) -> Result<StoredRun, crate::format::FormatError> {
    use crate::format::{json_error_offset, FormatError};
    let f: TranscriptFile = serde_json::from_slice(input).map_err(|e| FormatError::Parse {
        offset: json_error_offset(input, &e),
        message: e.to_string(),
    })?;
    if f.version != crate::format::FORMAT_VERSION {
        return Err(FormatError::Version(f.version));
    }
    let rounds = f
        .rounds
        .into_iter()
        .map(|r| {
            r.into_iter()
                .map(|w| BitString::from_hex(&w.hex, w.bits))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|message| FormatError::Parse { offset: 0, message })?;
    Ok(StoredRun {
        protocol: f.protocol,
        seed: f.seed,
        public: f.public,
        transcript: Transcript { rounds },
        stats: f.stats,
        matching: f.matching,
    })
}

/// One instance drawn from a distribution, with its maximum matching size
/// when known a priori.
pub struct SampledInstance {
    pub graph: BipartiteGraph,
    pub max_matching: Option<usize>,
}

pub trait InstanceSampler: Sync {
    fn sample(&self, seed: u64) -> SampledInstance;
}

impl InstanceSampler for MuSampler {
    fn sample(&self, seed: u64) -> SampledInstance {
        let graph = MuSampler::sample(self, seed).graph;
        // every instance carries a planted perfect matching
        let max = graph.num_bidders();
        SampledInstance {
            graph,
            max_matching: Some(max),
        }
    }
}

/// Independent edges with probability `edge_prob`; trivial partitions.
#[derive(Clone, Debug)]
pub struct RandomGraphSampler {
    pub bidders: usize,
    pub items: usize,
    pub edge_prob: f64,
}

impl InstanceSampler for RandomGraphSampler {
    fn sample(&self, seed: u64) -> SampledInstance {
        use rand::Rng as _;
        let mut rng = SeedPath::root(seed).child("random-graph", 0).rng();
        let edges: Vec<_> = (0..self.bidders)
            .flat_map(|u| (0..self.items).map(move |v| (u, v)))
            .filter(|_| rng.random_bool(self.edge_prob))
            .collect();
        SampledInstance {
            graph: BipartiteGraph::from_edges(self.bidders, self.items, &edges).expect("indices in range"),
            max_matching: None,
        }
    }
}

/// Aggregate of independent protocol runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub matched: MeanEstimate,
    pub mean_max_matching: f64,
    /// `E[max matching] / E[matched]`; infinite when nothing was matched.
    pub ratio: f64,
    pub mean_total_bits: f64,
    pub mean_bits_per_player: f64,
    pub max_bits_any_player_any_round: usize,
    pub mean_rounds_used: f64,
}

struct TrialResult {
    matched: usize,
    max: usize,
    total_bits: usize,
    players: usize,
    max_bits: usize,
    rounds: usize,
}

/// Seeds used for trial `t`: `(instance seed, protocol seed)`.
pub fn trial_seeds(master: u64, t: u64) -> (u64, u64) {
    let base = SeedPath::root(trial_seed(master, t));
    (base.child("instance", 0).to_u64(), base.child("protocol", 0).to_u64())
}

pub fn evaluate(
    p: &dyn Protocol,
    sampler: &dyn InstanceSampler,
    trials: usize,
    seed: u64,
    bandwidth_cap: Option<usize>,
) -> Result<Evaluation, RunError> {
    let results: Vec<Result<TrialResult, RunError>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let (inst_seed, proto_seed) = trial_seeds(seed, t);
            let inst = sampler.sample(inst_seed);
            let out = run_protocol(p, &inst.graph, bandwidth_cap, proto_seed)?;
            let max = inst.max_matching.unwrap_or_else(|| max_matching(&inst.graph).len());
            Ok(TrialResult {
                matched: out.stats.score.matched_in_graph,
                max,
                total_bits: out.stats.total_bits,
                players: inst.graph.num_bidders(),
                max_bits: out.stats.max_bits_any_player_any_round,
                rounds: out.stats.rounds_used,
            })
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let matched: Vec<f64> = results.iter().map(|r| r.matched as f64).collect();
    let matched = MeanEstimate::from_samples(&matched);
    let n = results.len().max(1) as f64;
    let mean_max = results.iter().map(|r| r.max as f64).sum::<f64>() / n;
    let ratio = if matched.mean > 0.0 {
        mean_max / matched.mean
    } else {
        f64::INFINITY
    };
    Ok(Evaluation {
        matched,
        mean_max_matching: mean_max,
        ratio,
        mean_total_bits: results.iter().map(|r| r.total_bits as f64).sum::<f64>() / n,
        mean_bits_per_player: results
            .iter()
            .map(|r| r.total_bits as f64 / r.players.max(1) as f64)
            .sum::<f64>()
            / n,
        max_bits_any_player_any_round: results.iter().map(|r| r.max_bits).max().unwrap_or(0),
        mean_rounds_used: results.iter().map(|r| r.rounds as f64).sum::<f64>() / n,
    })
}

pub fn expected_matching_size(
    p: &dyn Protocol,
    sampler: &dyn InstanceSampler,
    trials: usize,
    seed: u64,
) -> Result<MeanEstimate, RunError> {
    Ok(evaluate(p, sampler, trials, seed, None)?.matched)
}

pub fn approximation_ratio(
    p: &dyn Protocol,
    sampler: &dyn InstanceSampler,
    trials: usize,
    seed: u64,
) -> Result<f64, RunError> {
    Ok(evaluate(p, sampler, trials, seed, None)?.ratio)
}
