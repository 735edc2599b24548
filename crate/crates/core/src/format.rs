//! Instance file formats.
//!
//! JSON: an object with `version`, `num_bidders`, `num_items`,
//! `bidder_blocks` and `item_blocks` (block sizes) and `adjacency` (one sorted
//! list of item indices per bidder). An optional `provenance` object records
//! how the instance was produced and is ignored when loading.
//!
//! Binary: the same fields in the same order, every integer a little-endian
//! `u64`, every list prefixed by its length:
//!
//! ```text
//! version num_bidders num_items
//! len(bidder_blocks) bidder_blocks...
//! len(item_blocks)   item_blocks...
//! len(adjacency)     { len(list) list... } per bidder
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BipartiteGraph, InvalidGraph};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported format version {0}")]
    Version(u64),
    #[error(transparent)]
    Invalid(#[from] InvalidGraph),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    version: u64,
    num_bidders: usize,
    num_items: usize,
    bidder_blocks: Vec<usize>,
    item_blocks: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

pub fn graph_to_json(g: &BipartiteGraph, provenance: Option<serde_json::Value>) -> Vec<u8> {
    let file = InstanceFile {
        version: FORMAT_VERSION,
        num_bidders: g.num_bidders(),
        num_items: g.num_items(),
        bidder_blocks: g.bidder_blocks().to_vec(),
        item_blocks: g.item_blocks().to_vec(),
        adjacency: g.adjacency().to_vec(),
        provenance,
    };
    let mut out = serde_json::to_vec(&file).expect("instance serialization cannot fail");
    out.push(b'\n');
    out
}

/// Byte offset of a serde_json error, recovered from its line and column.
pub(crate) fn json_error_offset(input: &[u8], err: &serde_json::Error) -> usize {
    let line = err.line();
    if line == 0 {
        return 0;
    }
    let line_start = if line == 1 {
        0
    } else {
        input
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == b'\n')
            .nth(line - 2)
            .map_or(input.len(), |(i, _)| i + 1)
    };
    (line_start + err.column().saturating_sub(1)).min(input.len())
}

pub fn graph_from_json(input: &[u8]) -> Result<BipartiteGraph, FormatError> {
    let file: InstanceFile = serde_json::from_slice(input).map_err(|e| FormatError::Parse {
        offset: json_error_offset(input, &e),
        message: e.to_string(),
    })?;
    if file.version != FORMAT_VERSION {
        return Err(FormatError::Version(file.version));
    }
    Ok(BipartiteGraph::try_new(
        file.num_bidders,
        file.num_items,
        file.adjacency,
        file.bidder_blocks,
        file.item_blocks,
    )?)
}

/// The `provenance` object of a JSON instance file, if any.
pub fn json_provenance(input: &[u8]) -> Result<Option<serde_json::Value>, FormatError> {
    let file: InstanceFile = serde_json::from_slice(input).map_err(|e| FormatError::Parse {
        offset: json_error_offset(input, &e),
        message: e.to_string(),
    })?;
    Ok(file.provenance)
}

pub fn graph_to_binary(g: &BipartiteGraph) -> Vec<u8> {
    let words = 6 + g.bidder_blocks().len() + g.item_blocks().len() + g.num_bidders() + g.num_edges();
    let mut out = Vec::with_capacity(words * 8);
    let mut put = |x: usize| out.extend_from_slice(&(x as u64).to_le_bytes());
    put(FORMAT_VERSION as usize);
    put(g.num_bidders());
    put(g.num_items());
    for list in [g.bidder_blocks(), g.item_blocks()] {
        put(list.len());
        list.iter().for_each(|&x| put(x));
    }
    put(g.adjacency().len());
    for list in g.adjacency() {
        put(list.len());
        list.iter().for_each(|&x| put(x));
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn word(&mut self) -> Result<u64, FormatError> {
        let Some(chunk) = self.buf.get(self.pos..self.pos + 8) else {
            return Err(FormatError::Parse {
                offset: self.pos,
                message: "unexpected end of input".into(),
            });
        };
        self.pos += 8;
        Ok(u64::from_le_bytes(chunk.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, FormatError> {
        let at = self.pos;
        let w = self.word()?;
        usize::try_from(w).map_err(|_| FormatError::Parse {
            offset: at,
            message: format!("value {w} does not fit in usize"),
        })
    }

    fn len(&mut self) -> Result<usize, FormatError> {
        let at = self.pos;
        let n = self.usize()?;
        let remaining = (self.buf.len() - self.pos) / 8;
        if n > remaining {
            return Err(FormatError::Parse {
                offset: at,
                message: format!("length {n} exceeds remaining {remaining} words"),
            });
        }
        Ok(n)
    }

    fn list(&mut self) -> Result<Vec<usize>, FormatError> {
        let n = self.len()?;
        (0..n).map(|_| self.usize()).collect()
    }
}

pub fn graph_from_binary(input: &[u8]) -> Result<BipartiteGraph, FormatError> {
    let mut r = Reader { buf: input, pos: 0 };
    let version = r.word()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let num_bidders = r.usize()?;
    let num_items = r.usize()?;
    let bidder_blocks = r.list()?;
    let item_blocks = r.list()?;
    let n = r.len()?;
    let adjacency = (0..n).map(|_| r.list()).collect::<Result<Vec<_>, _>>()?;
    if r.pos != input.len() {
        return Err(FormatError::Parse {
            offset: r.pos,
            message: "trailing bytes after instance".into(),
        });
    }
    Ok(BipartiteGraph::try_new(
        num_bidders,
        num_items,
        adjacency,
        bidder_blocks,
        item_blocks,
    )?)
}

/// Sniff the container: JSON documents start with `{` after optional whitespace.
pub fn graph_from_bytes(input: &[u8]) -> Result<BipartiteGraph, FormatError> {
    match input.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => graph_from_json(input),
        _ => graph_from_binary(input),
    }
}
