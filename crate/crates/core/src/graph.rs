//! Bipartite graphs, matchings and proposal scoring.
//!
//! Bidders and items are dense `0..n` / `0..m` indices. Both sides carry a
//! public partition into contiguous blocks, stored as a list of block sizes.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    num_bidders: usize,
    num_items: usize,
    adjacency: Vec<Vec<usize>>,
    bidder_blocks: Vec<usize>,
    item_blocks: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    IndexOutOfRange,
    NotStrictlyIncreasing,
    AdjacencyLength,
    BlockPartition,
    NotCovering,
    DegreeIrregular,
    BlockMismatch,
    MetaInconsistent,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::IndexOutOfRange => "index out of range",
            ViolationKind::NotStrictlyIncreasing => "not strictly increasing",
            ViolationKind::AdjacencyLength => "adjacency length mismatch",
            ViolationKind::BlockPartition => "blocks do not partition",
            ViolationKind::NotCovering => "not covering",
            ViolationKind::DegreeIrregular => "degree irregular",
            ViolationKind::BlockMismatch => "block structure mismatch",
            ViolationKind::MetaInconsistent => "metadata inconsistent",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

/// Outcome of a structural check. Empty means pass.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub violations: Vec<Violation>,
}

impl Report {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub(crate) fn push(&mut self, kind: ViolationKind, detail: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pass() {
            return f.write_str("pass");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.kind, v.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
#[error("invalid graph: {0}")]
pub struct InvalidGraph(pub Report);

impl BipartiteGraph {
    /// Assemble a graph without checking any invariant. Use [`validate_graph`]
    /// or [`BipartiteGraph::try_new`] when the parts come from outside.
    pub fn from_raw(
        num_bidders: usize,
        num_items: usize,
        adjacency: Vec<Vec<usize>>,
        bidder_blocks: Vec<usize>,
        item_blocks: Vec<usize>,
    ) -> Self {
        Self {
            num_bidders,
            num_items,
            adjacency,
            bidder_blocks,
            item_blocks,
        }
    }

    pub fn try_new(
        num_bidders: usize,
        num_items: usize,
        adjacency: Vec<Vec<usize>>,
        bidder_blocks: Vec<usize>,
        item_blocks: Vec<usize>,
    ) -> Result<Self, InvalidGraph> {
        let g = Self::from_raw(num_bidders, num_items, adjacency, bidder_blocks, item_blocks);
        let report = validate_graph(&g);
        if report.is_pass() {
            Ok(g)
        } else {
            Err(InvalidGraph(report))
        }
    }

    /// A graph with trivial partitions (one block per side, or none when empty).
    /// Adjacency lists are sorted and deduplicated.
    pub fn from_edges(num_bidders: usize, num_items: usize, edges: &[(usize, usize)]) -> Result<Self, InvalidGraph> {
        let mut adjacency = vec![Vec::new(); num_bidders];
        for &(u, v) in edges {
            if u >= num_bidders {
                let mut r = Report::default();
                r.push(ViolationKind::IndexOutOfRange, format!("bidder {u} >= {num_bidders}"));
                return Err(InvalidGraph(r));
            }
            adjacency[u].push(v);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        let blocks = |n: usize| if n == 0 { vec![] } else { vec![n] };
        Self::try_new(
            num_bidders,
            num_items,
            adjacency,
            blocks(num_bidders),
            blocks(num_items),
        )
    }

    pub fn num_bidders(&self) -> usize {
        self.num_bidders
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn demand(&self, bidder: usize) -> &[usize] {
        &self.adjacency[bidder]
    }

    pub fn bidder_blocks(&self) -> &[usize] {
        &self.bidder_blocks
    }

    pub fn item_blocks(&self) -> &[usize] {
        &self.item_blocks
    }

    pub fn degree(&self, bidder: usize) -> usize {
        self.adjacency[bidder].len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, bidder: usize, item: usize) -> bool {
        self.adjacency
            .get(bidder)
            .is_some_and(|l| l.binary_search(&item).is_ok())
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, l)| l.iter().map(move |&v| (u, v)))
    }

    /// Item-side adjacency, derived on demand.
    pub fn item_adjacency(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_items];
        for (u, v) in self.edges() {
            if v < self.num_items {
                out[v].push(u);
            }
        }
        out
    }

    /// Block index of every item.
    pub fn item_block_of(&self) -> Vec<usize> {
        expand_blocks(&self.item_blocks)
    }

    /// Block index of every bidder.
    pub fn bidder_block_of(&self) -> Vec<usize> {
        expand_blocks(&self.bidder_blocks)
    }

    #[cfg(test)]
    pub(crate) fn adjacency_mut(&mut self) -> &mut Vec<Vec<usize>> {
        &mut self.adjacency
    }
}

fn expand_blocks(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect()
}

/// Start offset of each block given the block sizes.
pub fn block_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|&s| {
            let o = acc;
            acc += s;
            o
        })
        .collect()
}

pub fn validate_graph(g: &BipartiteGraph) -> Report {
    let mut report = Report::default();
    if g.adjacency.len() != g.num_bidders {
        report.push(
            ViolationKind::AdjacencyLength,
            format!("{} adjacency lists for {} bidders", g.adjacency.len(), g.num_bidders),
        );
    }
    for (u, list) in g.adjacency.iter().enumerate() {
        if let Some(&v) = list.iter().find(|&&v| v >= g.num_items) {
            report.push(
                ViolationKind::IndexOutOfRange,
                format!("bidder {u}: item {v} >= {}", g.num_items),
            );
        }
        if let Some(w) = list.windows(2).position(|w| w[0] >= w[1]) {
            report.push(
                ViolationKind::NotStrictlyIncreasing,
                format!("bidder {u}: entries {} and {}", w, w + 1),
            );
        }
    }
    for (name, sizes, total) in [
        ("bidder", &g.bidder_blocks, g.num_bidders),
        ("item", &g.item_blocks, g.num_items),
    ] {
        let sum: usize = sizes.iter().sum();
        if sum != total {
            report.push(
                ViolationKind::BlockPartition,
                format!("{name} blocks cover {sum} of {total}"),
            );
        }
        if let Some(b) = sizes.iter().position(|&s| s == 0) {
            report.push(ViolationKind::BlockPartition, format!("{name} block {b} is empty"));
        }
    }
    report
}

/// A set of (bidder, item) pairs with distinct bidders and distinct items.
///
/// Pairs need not be edges of any graph: a matching doubles as a referee's
/// proposal, where illegal pairs simply score nothing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Matching {
    pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchingError {
    #[error("bidder {0} appears in more than one pair")]
    DuplicateBidder(usize),
    #[error("item {0} appears in more than one pair")]
    DuplicateItem(usize),
}

impl Matching {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self, MatchingError> {
        let m = Self { pairs };
        m.check()?;
        Ok(m)
    }

    /// Skips the distinctness check; [`score_proposal`] re-checks.
    pub fn from_pairs_unchecked(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn check(&self) -> Result<(), MatchingError> {
        let mut bidders: Vec<usize> = self.pairs.iter().map(|p| p.0).collect();
        let mut items: Vec<usize> = self.pairs.iter().map(|p| p.1).collect();
        bidders.sort_unstable();
        items.sort_unstable();
        if let Some(w) = bidders.windows(2).find(|w| w[0] == w[1]) {
            return Err(MatchingError::DuplicateBidder(w[0]));
        }
        if let Some(w) = items.windows(2).find(|w| w[0] == w[1]) {
            return Err(MatchingError::DuplicateItem(w[0]));
        }
        Ok(())
    }

    /// Pairs sorted by bidder.
    pub fn sorted(mut self) -> Self {
        self.pairs.sort_unstable();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchScore {
    pub matched_in_graph: usize,
    pub proposal_size: usize,
    pub max_matching_size: Option<usize>,
    /// `max_matching_size / matched_in_graph`, when both are known and non-zero.
    pub ratio: Option<Ratio<usize>>,
}

impl MatchScore {
    pub fn with_max(mut self, max_matching_size: usize) -> Self {
        self.max_matching_size = Some(max_matching_size);
        self.ratio = (self.matched_in_graph > 0).then(|| Ratio::new(max_matching_size, self.matched_in_graph));
        self
    }
}

pub fn score_proposal(g: &BipartiteGraph, p: &Matching) -> Result<MatchScore, MatchingError> {
    p.check()?;
    let matched = p.pairs.iter().filter(|&&(u, v)| g.has_edge(u, v)).count();
    Ok(MatchScore {
        matched_in_graph: matched,
        proposal_size: p.len(),
        max_matching_size: None,
        ratio: None,
    })
}
