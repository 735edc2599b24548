//! Sampler for the recursive hard distribution.
//!
//! A level-0 instance is a uniformly random perfect matching. A level-`k`
//! instance (`k >= 1`) with `B` bidder blocks and `F` fooling blocks is drawn
//! as follows:
//!
//! 1. a fooling set `A`, a uniform `F`-subset of the `B + F` item blocks,
//!    shared by all bidder blocks;
//! 2. `sigma`, a uniform injection of the bidder blocks into the complement
//!    of `A` (a shuffled complement, truncated to `B`);
//! 3. for each bidder block `i`, an independent level-`k-1` instance wired
//!    between the block and its hidden item block `sigma(i)`;
//! 4. for each bidder and each fooling block, an independent draw from the
//!    single-bidder marginal of level `k-1` ([`sample_bidder_marginal`]).
//!
//! Block partitions are public and stored in the graph. `A`, `sigma`, the
//! hidden ranks `J` and the recursion tree are kept in [`LevelMeta`].

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{block_offsets, validate_graph, BipartiteGraph, Matching, Report, ViolationKind};
use crate::params::{DeskParams, ParamsError, ParamsTable};
use crate::rng::{trial_seed, SeedPath};
use crate::stats::{two_sample_chi_square, ChiSquareResult};

/// How fooling-block edges are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoolingRule {
    /// Recursive single-bidder marginal of the child level.
    #[default]
    Marginal,
    /// A flat uniform `d`-subset of the block, ignoring its internal
    /// structure. Only useful as a negative control.
    FlatSubset,
}

/// Hidden generation data of one level of the recursion tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelMeta {
    Composite {
        /// Sorted fooling item-block indices.
        fooling_set: Vec<usize>,
        /// Hidden item block of each bidder block.
        sigma: Vec<usize>,
        /// 1-based rank of `sigma(i)` within the sorted incident set.
        #[serde(rename = "J")]
        j_rank: Vec<usize>,
        children: Vec<LevelMeta>,
    },
    Base {
        permutation: Vec<usize>,
    },
}

impl LevelMeta {
    /// Sorted item blocks incident to bidder block `i`: `{sigma(i)} u A`.
    pub fn incident_set(&self, i: usize) -> Option<Vec<usize>> {
        match self {
            LevelMeta::Composite { fooling_set, sigma, .. } => {
                let mut s = fooling_set.clone();
                let pos = s.binary_search(&sigma[i]).unwrap_or_else(|p| p);
                s.insert(pos, sigma[i]);
                Some(s)
            }
            LevelMeta::Base { .. } => None,
        }
    }

    pub fn level(&self) -> usize {
        match self {
            LevelMeta::Base { .. } => 0,
            LevelMeta::Composite { children, .. } => 1 + children.first().map_or(0, LevelMeta::level),
        }
    }

    /// Item (local to this level) assigned to each local bidder by the
    /// planted perfect matching.
    pub fn planted_assignment(&self, desk: &DeskParams, level: usize) -> Vec<usize> {
        match self {
            LevelMeta::Base { permutation } => permutation.clone(),
            LevelMeta::Composite { sigma, children, .. } => {
                let mc = desk.m[level - 1];
                sigma
                    .iter()
                    .zip(children)
                    .flat_map(|(&s, child)| {
                        child
                            .planted_assignment(desk, level - 1)
                            .into_iter()
                            .map(move |v| s * mc + v)
                    })
                    .collect()
            }
        }
    }
}

/// A sampled instance with its hidden generation data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceBundle {
    pub graph: BipartiteGraph,
    pub params: ParamsTable,
    pub meta: LevelMeta,
    /// A perfect matching on bidders; every pair is an edge.
    pub certificate: Matching,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct MuSampler {
    params: ParamsTable,
    desk: DeskParams,
    rule: FoolingRule,
}

impl MuSampler {
    pub fn new(params: ParamsTable) -> Result<Self, ParamsError> {
        params.validate()?;
        let desk = params.desk()?;
        Ok(Self {
            params,
            desk,
            rule: FoolingRule::Marginal,
        })
    }

    pub fn with_rule(mut self, rule: FoolingRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn params(&self) -> &ParamsTable {
        &self.params
    }

    pub fn desk(&self) -> &DeskParams {
        &self.desk
    }

    pub fn rule(&self) -> FoolingRule {
        self.rule
    }

    pub fn sample(&self, seed: u64) -> InstanceBundle {
        let r = self.desk.rounds();
        let (n, m) = (self.desk.n[r], self.desk.m[r]);
        let mut adjacency = vec![Vec::with_capacity(self.desk.d[r]); n];
        let mut planted = vec![0usize; n];
        let root = SeedPath::root(seed);
        let meta = self.sample_level(r, &root, 0, 0, &mut adjacency, &mut planted);
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let (bidder_blocks, item_blocks) = top_blocks(&self.desk);
        let graph = BipartiteGraph::from_raw(n, m, adjacency, bidder_blocks, item_blocks);
        let certificate = Matching::from_pairs_unchecked(planted.into_iter().enumerate().collect());
        InstanceBundle {
            graph,
            params: self.params.clone(),
            meta,
            certificate,
            seed,
        }
    }

    fn sample_level(
        &self,
        level: usize,
        path: &SeedPath,
        bidder_offset: usize,
        item_offset: usize,
        adjacency: &mut [Vec<usize>],
        planted: &mut [usize],
    ) -> LevelMeta {
        if level == 0 {
            let mut permutation: Vec<usize> = (0..self.desk.base).collect();
            permutation.shuffle(&mut path.child("perm", 0).rng());
            for (b, &v) in permutation.iter().enumerate() {
                adjacency[bidder_offset + b].push(item_offset + v);
                planted[bidder_offset + b] = item_offset + v;
            }
            return LevelMeta::Base { permutation };
        }

        let (nb, nf) = self.desk.level_blocks(level);
        let (nc, mc) = (self.desk.n[level - 1], self.desk.m[level - 1]);
        let mut rng = path.child("blocks", 0).rng();
        let mut fooling_set = index::sample(&mut rng, nb + nf, nf).into_vec();
        fooling_set.sort_unstable();
        let mut complement: Vec<usize> = (0..nb + nf).filter(|x| fooling_set.binary_search(x).is_err()).collect();
        complement.shuffle(&mut rng);
        complement.truncate(nb);
        let sigma = complement;

        let children = (0..nb)
            .map(|i| {
                self.sample_level(
                    level - 1,
                    &path.child("hidden", i as u64),
                    bidder_offset + i * nc,
                    item_offset + sigma[i] * mc,
                    adjacency,
                    planted,
                )
            })
            .collect();

        for u in 0..nb * nc {
            let bidder_path = path.child("fool", u as u64);
            for &a in &fooling_set {
                let p = bidder_path.child("block", a as u64);
                let pattern = match self.rule {
                    FoolingRule::Marginal => marginal_at(&self.desk, level - 1, &p),
                    FoolingRule::FlatSubset => flat_at(&self.desk, level - 1, &p),
                };
                let base = item_offset + a * mc;
                adjacency[bidder_offset + u].extend(pattern.into_iter().map(|v| base + v));
            }
        }

        let j_rank = sigma
            .iter()
            .map(|&s| 1 + fooling_set.partition_point(|&a| a < s))
            .collect();
        LevelMeta::Composite {
            fooling_set,
            sigma,
            j_rank,
            children,
        }
    }
}

fn top_blocks(desk: &DeskParams) -> (Vec<usize>, Vec<usize>) {
    let r = desk.rounds();
    if r == 0 {
        let b = if desk.base == 0 { vec![] } else { vec![desk.base] };
        return (b.clone(), b);
    }
    let (nb, nf) = desk.level_blocks(r);
    (vec![desk.n[r - 1]; nb], vec![desk.m[r - 1]; nb + nf])
}

/// One bidder's edge pattern inside a level-`level` block, as sorted local
/// item positions. Level 0 is a uniform item; above that, a uniform
/// `(F+1)`-subset of child blocks, each filled by an independent recursive
/// draw. The result has exactly `d_level` items.
fn marginal_at(desk: &DeskParams, level: usize, path: &SeedPath) -> Vec<usize> {
    if level == 0 {
        return vec![path.rng().random_range(0..desk.base)];
    }
    let (nb, nf) = desk.level_blocks(level);
    let mc = desk.m[level - 1];
    let mut blocks = index::sample(&mut path.rng(), nb + nf, nf + 1).into_vec();
    blocks.sort_unstable();
    blocks
        .into_iter()
        .flat_map(|s| {
            marginal_at(desk, level - 1, &path.child("pos", s as u64))
                .into_iter()
                .map(move |v| s * mc + v)
        })
        .collect()
}

fn flat_at(desk: &DeskParams, level: usize, path: &SeedPath) -> Vec<usize> {
    let mut v = index::sample(&mut path.rng(), desk.m[level], desk.d[level]).into_vec();
    v.sort_unstable();
    v
}

/// Draw one single-bidder pattern of the level-`level` marginal.
pub fn sample_bidder_marginal(params: &ParamsTable, level: usize, seed: u64) -> Result<Vec<usize>, ParamsError> {
    let desk = params.desk()?;
    if level > desk.rounds() {
        return Err(ParamsError::Inconsistent {
            level,
            detail: format!("table only has levels 0..={}", desk.rounds()),
        });
    }
    Ok(marginal_at(&desk, level, &SeedPath::root(seed)))
}

/// A level-0 instance: a uniformly random perfect matching on `m0` pairs.
pub fn sample_mu0(m0: u64, seed: u64) -> Result<InstanceBundle, ParamsError> {
    Ok(MuSampler::new(ParamsTable::generalized(m0, &[])?)?.sample(seed))
}

pub fn sample_mu(params: &ParamsTable, seed: u64) -> Result<InstanceBundle, ParamsError> {
    Ok(MuSampler::new(params.clone())?.sample(seed))
}

pub fn verify_bundle(b: &InstanceBundle) -> Report {
    let mut report = validate_graph(&b.graph);
    let g = &b.graph;
    let desk = match b.params.validate().and_then(|_| b.params.desk()) {
        Ok(d) => d,
        Err(e) => {
            report.push(ViolationKind::BlockMismatch, format!("params: {e}"));
            return report;
        }
    };
    let r = desk.rounds();

    let (bb, ib) = top_blocks(&desk);
    if g.num_bidders() != desk.n[r] || g.num_items() != desk.m[r] {
        report.push(
            ViolationKind::BlockMismatch,
            format!(
                "graph is {}x{}, params say {}x{}",
                g.num_bidders(),
                g.num_items(),
                desk.n[r],
                desk.m[r]
            ),
        );
    }
    if g.bidder_blocks() != bb.as_slice() || g.item_blocks() != ib.as_slice() {
        report.push(ViolationKind::BlockMismatch, "block partitions differ from params");
    }

    if g.adjacency().len() == g.num_bidders() {
        if let Some(u) = (0..g.num_bidders()).find(|&u| g.degree(u) != desk.d[r]) {
            report.push(
                ViolationKind::DegreeIrregular,
                format!("bidder {u} has degree {}, expected {}", g.degree(u), desk.d[r]),
            );
        }
    }

    let cert = &b.certificate;
    if let Err(e) = cert.check() {
        report.push(ViolationKind::NotCovering, format!("certificate: {e}"));
    }
    if cert.len() != g.num_bidders() {
        report.push(
            ViolationKind::NotCovering,
            format!("certificate has {} pairs for {} bidders", cert.len(), g.num_bidders()),
        );
    }
    if let Some(&(u, v)) = cert.pairs().iter().find(|&&(u, v)| !g.has_edge(u, v)) {
        report.push(
            ViolationKind::NotCovering,
            format!("certificate pair ({u},{v}) is not an edge"),
        );
    }

    let before = report.violations.len();
    check_meta(&b.meta, &desk, r, "root", &mut report);
    if report.violations.len() == before {
        let planted = b.meta.planted_assignment(&desk, r);
        let from_cert: BTreeMap<usize, usize> = cert.pairs().iter().copied().collect();
        let agrees =
            planted.len() == from_cert.len() && planted.iter().enumerate().all(|(u, v)| from_cert.get(&u) == Some(v));
        if !agrees {
            report.push(
                ViolationKind::MetaInconsistent,
                "certificate differs from planted matching",
            );
        }
    }
    report
}

fn check_meta(meta: &LevelMeta, desk: &DeskParams, level: usize, at: &str, report: &mut Report) {
    let mut bad = |detail: String| report.push(ViolationKind::MetaInconsistent, format!("{at}: {detail}"));
    match (meta, level) {
        (LevelMeta::Base { permutation }, 0) => {
            let mut p = permutation.clone();
            p.sort_unstable();
            if p != (0..desk.base).collect::<Vec<_>>() {
                bad("base layer is not a permutation".into());
            }
        }
        (
            LevelMeta::Composite {
                fooling_set,
                sigma,
                j_rank,
                children,
            },
            k,
        ) if k >= 1 => {
            let (nb, nf) = desk.level_blocks(k);
            if fooling_set.len() != nf
                || fooling_set.windows(2).any(|w| w[0] >= w[1])
                || fooling_set.iter().any(|&a| a >= nb + nf)
            {
                bad(format!(
                    "fooling set {fooling_set:?} is not a sorted {nf}-subset of 0..{}",
                    nb + nf
                ));
                return;
            }
            let mut s = sigma.clone();
            s.sort_unstable();
            if sigma.len() != nb
                || s.windows(2).any(|w| w[0] == w[1])
                || sigma
                    .iter()
                    .any(|x| *x >= nb + nf || fooling_set.binary_search(x).is_ok())
            {
                bad("sigma is not an injection into the complement of A".into());
                return;
            }
            if j_rank.len() != nb || children.len() != nb {
                bad("per-block arrays have the wrong length".into());
                return;
            }
            for i in 0..nb {
                let incident = meta.incident_set(i).unwrap();
                if incident.len() != nf + 1 {
                    bad(format!("block {i}: |I| = {}", incident.len()));
                }
                let pos = incident.iter().position(|&x| x == sigma[i]).map(|p| p + 1);
                if pos != Some(j_rank[i]) {
                    bad(format!("block {i}: J = {} but sigma ranks {:?}", j_rank[i], pos));
                }
            }
            for (i, c) in children.iter().enumerate() {
                check_meta(c, desk, k - 1, &format!("{at}/{i}"), report);
            }
        }
        _ => bad(format!("node shape does not match level {level}")),
    }
}

/// Sidecar document accompanying an instance file.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    version: u64,
    seed: u64,
    params: ParamsTable,
    certificate: Matching,
    #[serde(flatten)]
    meta: LevelMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

pub fn sidecar_to_json(b: &InstanceBundle) -> Vec<u8> {
    sidecar_with_provenance(b, None)
}

/// The sidecar, carrying `provenance` (typically the generating config).
pub fn sidecar_with_provenance(b: &InstanceBundle, provenance: Option<serde_json::Value>) -> Vec<u8> {
    let s = Sidecar {
        version: crate::format::FORMAT_VERSION,
        seed: b.seed,
        params: b.params.clone(),
        certificate: b.certificate.clone(),
        meta: b.meta.clone(),
        provenance,
    };
    let mut out = serde_json::to_vec(&s).expect("sidecar serialization cannot fail");
    out.push(b'\n');
    out
}

pub fn bundle_from_parts(graph: BipartiteGraph, sidecar: &[u8]) -> Result<InstanceBundle, crate::format::FormatError> {
    let s: Sidecar = serde_json::from_slice(sidecar).map_err(|e| crate::format::FormatError::Parse {
        offset: crate::format::json_error_offset(sidecar, &e),
        message: e.to_string(),
    })?;
    if s.version != crate::format::FORMAT_VERSION {
        return Err(crate::format::FormatError::Version(s.version));
    }
    Ok(InstanceBundle {
        graph,
        params: s.params,
        meta: s.meta,
        certificate: s.certificate,
        seed: s.seed,
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TabulationError {
    #[error("intractable: {0}")]
    Intractable(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("{0}")]
    Unsupported(String),
}

/// Number of distinct single-bidder patterns in a level-`level` block.
pub fn pattern_space(desk: &DeskParams, level: usize) -> Option<u128> {
    if level == 0 {
        return Some(desk.base as u128);
    }
    let (nb, nf) = desk.level_blocks(level);
    let choose = binomial(nb + nf, nf + 1)?;
    let sub = pattern_space(desk, level - 1)?;
    choose.checked_mul(sub.checked_pow(u32::try_from(nf + 1).ok()?)?)
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Largest pattern space the indistinguishability test will tabulate.
pub const MAX_PATTERN_SPACE: u128 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// The bidder's pattern in its hidden block against its pattern in the
    /// lowest fooling block.
    HiddenVsFooling,
    /// Hidden-block patterns from alternating samples against each other.
    HiddenVsHidden,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndistinguishabilityReport {
    pub bidder: usize,
    pub conditioned_on: Vec<usize>,
    pub samples_drawn: usize,
    pub samples_used: usize,
    pub chi_square: ChiSquareResult,
    pub significance: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug)]
pub struct IndistinguishabilityTest {
    pub bidder: usize,
    pub num_samples: usize,
    pub significance: f64,
    pub seed: u64,
    pub comparison: Comparison,
    pub rule: FoolingRule,
    /// Incident set to condition on; defaults to the lowest `F + 1` blocks.
    pub condition_on: Option<Vec<usize>>,
}

impl IndistinguishabilityTest {
    pub fn new(bidder: usize, num_samples: usize, significance: f64, seed: u64) -> Self {
        Self {
            bidder,
            num_samples,
            significance,
            seed,
            comparison: Comparison::HiddenVsFooling,
            rule: FoolingRule::Marginal,
            condition_on: None,
        }
    }
}

/// Two-sample chi-square test that a bidder's pattern in its hidden block is
/// distributed like its pattern in a fooling block, conditioned on a fixed
/// incident set.
pub fn marginal_indistinguishability_test(
    params: &ParamsTable,
    test: &IndistinguishabilityTest,
) -> Result<IndistinguishabilityReport, TabulationError> {
    let sampler = MuSampler::new(params.clone())?.with_rule(test.rule);
    let desk = sampler.desk().clone();
    let r = desk.rounds();
    if r == 0 {
        return Err(TabulationError::Unsupported(
            "level-0 instances have no fooling blocks".into(),
        ));
    }
    let (nb, nf) = desk.level_blocks(r);
    if nf == 0 && test.comparison == Comparison::HiddenVsFooling {
        return Err(TabulationError::Unsupported(
            "no fooling blocks to compare against".into(),
        ));
    }
    match pattern_space(&desk, r - 1) {
        Some(s) if s <= MAX_PATTERN_SPACE => {}
        other => {
            return Err(TabulationError::Intractable(format!(
                "pattern space {} exceeds {MAX_PATTERN_SPACE}",
                other.map_or("overflow".to_string(), |s| s.to_string())
            )))
        }
    }
    let (nc, mc) = (desk.n[r - 1], desk.m[r - 1]);
    if test.bidder >= nb * nc {
        return Err(TabulationError::Unsupported(format!(
            "bidder {} out of range",
            test.bidder
        )));
    }
    let block = test.bidder / nc;
    let target = test.condition_on.clone().unwrap_or_else(|| (0..=nf).collect());

    let mut left: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    let mut right: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    let mut used = 0usize;
    let local = |g: &BipartiteGraph, item_block: usize| -> Vec<usize> {
        let lo = item_block * mc;
        g.demand(test.bidder)
            .iter()
            .filter(|&&v| v >= lo && v < lo + mc)
            .map(|&v| v - lo)
            .collect()
    };
    for s in 0..test.num_samples {
        let b = sampler.sample(trial_seed(test.seed, s as u64));
        let incident = b.meta.incident_set(block).unwrap();
        if incident != target {
            continue;
        }
        let LevelMeta::Composite { fooling_set, sigma, .. } = &b.meta else {
            unreachable!()
        };
        let hidden = local(&b.graph, sigma[block]);
        match test.comparison {
            Comparison::HiddenVsFooling => {
                *left.entry(hidden).or_default() += 1;
                *right.entry(local(&b.graph, fooling_set[0])).or_default() += 1;
            }
            Comparison::HiddenVsHidden => {
                let side = if used.is_multiple_of(2) { &mut left } else { &mut right };
                *side.entry(hidden).or_default() += 1;
            }
        }
        used += 1;
    }
    let chi_square = two_sample_chi_square(&left, &right);
    Ok(IndistinguishabilityReport {
        bidder: test.bidder,
        conditioned_on: target,
        samples_drawn: test.num_samples,
        samples_used: used,
        rejected: chi_square.p_value < test.significance,
        chi_square,
        significance: test.significance,
    })
}

/// Item block offsets of a graph, for callers that need block-local indices.
pub fn item_block_offsets(g: &BipartiteGraph) -> Vec<usize> {
    block_offsets(g.item_blocks())
}
