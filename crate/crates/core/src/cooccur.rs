//! Pairwise co-occurrence graph over embeddings.

use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::trace::{ItemId, Trace};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("item {id} out of range (num_items = {num_items})")]
    OutOfRange { id: ItemId, num_items: usize },
    #[error("self edge on item {0}")]
    SelfEdge(ItemId),
    #[error("edge ({0}, {1}) has zero weight")]
    ZeroWeight(ItemId, ItemId),
    #[error("edge ({0}, {1}) listed twice")]
    DuplicateEdge(ItemId, ItemId),
}

/// Undirected weighted graph: edge weight is the number of queries that
/// access both endpoints, node weight is the number of queries that access
/// the node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoOccurrenceGraph {
    num_items: usize,
    node_freq: Vec<u64>,
    // per node: sorted by weight desc, then neighbor id asc
    adj: Vec<Vec<(ItemId, u64)>>,
}

impl CoOccurrenceGraph {
    /// Assembles a graph from explicit node frequencies and undirected edges.
    pub fn from_edges(
        node_freq: Vec<u64>,
        edges: impl IntoIterator<Item = (ItemId, ItemId, u64)>,
    ) -> Result<Self, GraphError> {
        let num_items = node_freq.len();
        let mut adj: Vec<Vec<(ItemId, u64)>> = vec![Vec::new(); num_items];
        let mut seen = FxHashMap::default();
        for (a, b, w) in edges {
            for id in [a, b] {
                if id as usize >= num_items {
                    return Err(GraphError::OutOfRange { id, num_items });
                }
            }
            if a == b {
                return Err(GraphError::SelfEdge(a));
            }
            if w == 0 {
                return Err(GraphError::ZeroWeight(a, b));
            }
            if seen.insert(pair_key(a, b), ()).is_some() {
                return Err(GraphError::DuplicateEdge(a.min(b), a.max(b)));
            }
            adj[a as usize].push((b, w));
            adj[b as usize].push((a, w));
        }
        for list in &mut adj {
            sort_adjacency(list);
        }
        Ok(CoOccurrenceGraph {
            num_items,
            node_freq,
            adj,
        })
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn node_freq(&self) -> &[u64] {
        &self.node_freq
    }

    pub fn freq(&self, id: ItemId) -> u64 {
        self.node_freq[id as usize]
    }

    /// Adjacency of `id`, heaviest first (ties by ascending ID).
    pub fn neighbors(&self, id: ItemId) -> Result<&[(ItemId, u64)], GraphError> {
        self.adj
            .get(id as usize)
            .map(Vec::as_slice)
            .ok_or(GraphError::OutOfRange {
                id,
                num_items: self.num_items,
            })
    }

    /// Edge weight, 0 when absent.
    pub fn weight(&self, a: ItemId, b: ItemId) -> u64 {
        self.adj
            .get(a as usize)
            .and_then(|l| l.iter().find(|&&(n, _)| n == b))
            .map_or(0, |&(_, w)| w)
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Every edge once as `(a, b, weight)` with `a < b`, sorted by `(a, b)`.
    pub fn edges(&self) -> Vec<(ItemId, ItemId, u64)> {
        let mut out: Vec<_> = self
            .adj
            .iter()
            .enumerate()
            .flat_map(|(a, list)| {
                list.iter()
                    .filter(move |&&(b, _)| (a as ItemId) < b)
                    .map(move |&(b, w)| (a as ItemId, b, w))
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Text dump, one `a b weight` line per edge.
    pub fn to_dump_text(&self) -> String {
        let mut s = String::new();
        for (a, b, w) in self.edges() {
            let _ = writeln!(s, "{a} {b} {w}");
        }
        s
    }
}

fn pair_key(a: ItemId, b: ItemId) -> u64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    (u64::from(lo) << 32) | u64::from(hi)
}

fn sort_adjacency(list: &mut [(ItemId, u64)]) {
    list.sort_unstable_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
}

/// Default per-node edge cap.
pub const DEFAULT_MAX_DEGREE: usize = 128;

/// Counts each unordered pair once per query that contains both items.
///
/// With `max_degree = Some(d)` every node nominates its `d` heaviest edges
/// and an edge survives if either endpoint nominated it.
pub fn build_cooccurrence(train: &Trace, max_degree: Option<usize>) -> CoOccurrenceGraph {
    let n = train.num_items();
    let mut node_freq = vec![0u64; n];
    let mut pairs: FxHashMap<u64, u64> = FxHashMap::default();
    for q in train.queries() {
        let items = q.items();
        for (i, &a) in items.iter().enumerate() {
            node_freq[a as usize] += 1;
            for &b in &items[i + 1..] {
                // items are sorted, so a < b
                *pairs
                    .entry((u64::from(a) << 32) | u64::from(b))
                    .or_insert(0) += 1;
            }
        }
    }

    let mut edges: Vec<(ItemId, ItemId, u64)> = pairs
        .into_iter()
        .map(|(k, w)| ((k >> 32) as ItemId, k as ItemId, w))
        .collect();
    edges.sort_unstable();

    if let Some(cap) = max_degree {
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (e, &(a, b, _)) in edges.iter().enumerate() {
            incident[a as usize].push(e);
            incident[b as usize].push(e);
        }
        let mut keep = vec![false; edges.len()];
        for (node, list) in incident.iter_mut().enumerate() {
            let other = |e: usize| {
                let (a, b, _) = edges[e];
                if a as usize == node {
                    b
                } else {
                    a
                }
            };
            list.sort_unstable_by(|&x, &y| {
                edges[y].2.cmp(&edges[x].2).then(other(x).cmp(&other(y)))
            });
            for &e in list.iter().take(cap) {
                keep[e] = true;
            }
        }
        let mut kept = keep.iter();
        edges.retain(|_| *kept.next().unwrap_or(&false));
    }

    let mut adj: Vec<Vec<(ItemId, u64)>> = vec![Vec::new(); n];
    for &(a, b, w) in &edges {
        adj[a as usize].push((b, w));
        adj[b as usize].push((a, w));
    }
    for list in &mut adj {
        sort_adjacency(list);
    }
    CoOccurrenceGraph {
        num_items: n,
        node_freq,
        adj,
    }
}
