//! Maximum and maximal matchings.

use thiserror::Error;

use crate::graph::{BipartiteGraph, Matching};

const NONE: usize = usize::MAX;

/// Bidder cap for [`brute_force_max_matching`].
pub const BRUTE_FORCE_LIMIT: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("brute force refused: {bidders} bidders exceeds the limit of {BRUTE_FORCE_LIMIT}")]
pub struct TooLarge {
    pub bidders: usize,
}

/// Maximum-cardinality matching by layered augmenting paths (Hopcroft-Karp).
///
/// Free bidders are processed in index order and each adjacency list in
/// ascending item order, so the result is a deterministic function of `g`.
pub fn max_matching(g: &BipartiteGraph) -> Matching {
    let n = g.num_bidders();
    let adj = g.adjacency();
    let mut match_u = vec![NONE; n];
    let mut match_v = vec![NONE; g.num_items()];
    let mut dist = vec![NONE; n];
    let mut queue = Vec::with_capacity(n);
    let mut cursor = vec![0usize; n];
    let mut stack: Vec<usize> = Vec::new();

    loop {
        queue.clear();
        for u in 0..n {
            if match_u[u] == NONE {
                dist[u] = 0;
                queue.push(u);
            } else {
                dist[u] = NONE;
            }
        }
        let mut found = false;
        let mut head = 0;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            for &v in &adj[u] {
                let w = match_v[v];
                if w == NONE {
                    found = true;
                } else if dist[w] == NONE {
                    dist[w] = dist[u] + 1;
                    queue.push(w);
                }
            }
        }
        if !found {
            break;
        }

        cursor.iter_mut().for_each(|c| *c = 0);
        for root in 0..n {
            if match_u[root] != NONE {
                continue;
            }
            stack.clear();
            stack.push(root);
            while let Some(&u) = stack.last() {
                if cursor[u] == adj[u].len() {
                    dist[u] = NONE;
                    stack.pop();
                    if let Some(&p) = stack.last() {
                        cursor[p] += 1;
                    }
                    continue;
                }
                let v = adj[u][cursor[u]];
                let w = match_v[v];
                if w == NONE {
                    for &x in &stack {
                        let y = adj[x][cursor[x]];
                        match_u[x] = y;
                        match_v[y] = x;
                    }
                    break;
                }
                if dist[w] != NONE && dist[w] == dist[u] + 1 {
                    stack.push(w);
                } else {
                    cursor[u] += 1;
                }
            }
        }
    }

    Matching::from_pairs_unchecked(match_u.into_iter().enumerate().filter(|&(_, v)| v != NONE).collect())
}

/// Exact maximum matching size by exhaustive search over assignments.
pub fn brute_force_max_matching(g: &BipartiteGraph) -> Result<usize, TooLarge> {
    let n = g.num_bidders();
    if n > BRUTE_FORCE_LIMIT {
        return Err(TooLarge { bidders: n });
    }
    fn go(g: &BipartiteGraph, u: usize, used: &mut [bool], cur: usize, best: &mut usize) {
        if cur > *best {
            *best = cur;
        }
        if u == g.num_bidders() || cur + (g.num_bidders() - u) <= *best {
            return;
        }
        for &v in g.demand(u) {
            if !used[v] {
                used[v] = true;
                go(g, u + 1, used, cur + 1, best);
                used[v] = false;
            }
        }
        go(g, u + 1, used, cur, best);
    }
    let mut best = 0;
    go(g, 0, &mut vec![false; g.num_items()], 0, &mut best);
    Ok(best)
}

/// Scan bidders in `order`, giving each the lowest-index free item it demands.
pub fn greedy_maximal_matching(g: &BipartiteGraph, order: &[usize]) -> Matching {
    let mut taken = vec![false; g.num_items()];
    let mut matched = vec![false; g.num_bidders()];
    let mut pairs = Vec::new();
    for &u in order {
        if matched[u] {
            continue;
        }
        if let Some(&v) = g.demand(u).iter().find(|&&v| !taken[v]) {
            taken[v] = true;
            matched[u] = true;
            pairs.push((u, v));
        }
    }
    Matching::from_pairs_unchecked(pairs)
}

pub fn greedy_in_index_order(g: &BipartiteGraph) -> Matching {
    let order: Vec<usize> = (0..g.num_bidders()).collect();
    greedy_maximal_matching(g, &order)
}
