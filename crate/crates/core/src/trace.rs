//! Query traces: the data model, the text file format, access statistics and a
//! cluster-Zipf synthetic generator.
//!
//! A trace file is UTF-8 text. The optional first line `#items <N>` declares the
//! size of the embedding universe; every other `#` line is a comment, and each
//! remaining line is one query given as whitespace-separated decimal IDs.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Embedding identifier (a row of the single logical embedding table).
pub type ItemId = u32;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: invalid token `{token}`")]
    Parse { line: usize, token: String },
    #[error("line {line}: malformed header")]
    Header { line: usize },
    #[error("line {line}: empty query")]
    EmptyQuery { line: usize },
    #[error("line {line}: item {id} out of range (num_items = {num_items})")]
    IdOutOfRange {
        line: usize,
        id: ItemId,
        num_items: usize,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid parameter: {0}")]
    Param(String),
}

impl TraceError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, TraceError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound)
    }
}

/// One embedding-reduction request: a nonempty set of item IDs, kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    items: Vec<ItemId>,
}

impl Query {
    /// Builds a query from any ID sequence, collapsing duplicates.
    pub fn new(ids: impl IntoIterator<Item = ItemId>) -> Result<Self, TraceError> {
        let mut items: Vec<ItemId> = ids.into_iter().collect();
        if items.is_empty() {
            return Err(TraceError::EmptyQuery { line: 0 });
        }
        items.sort_unstable();
        items.dedup();
        Ok(Query { items })
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn max_id(&self) -> ItemId {
        // nonempty and sorted
        self.items[self.items.len() - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    num_items: usize,
    queries: Vec<Query>,
}

impl Trace {
    pub fn new(num_items: usize, queries: Vec<Query>) -> Result<Self, TraceError> {
        for (i, q) in queries.iter().enumerate() {
            if q.max_id() as usize >= num_items {
                return Err(TraceError::IdOutOfRange {
                    line: i + 1,
                    id: q.max_id(),
                    num_items,
                });
            }
        }
        Ok(Trace { num_items, queries })
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Total item slots over all queries.
    pub fn total_accesses(&self) -> u64 {
        self.queries.iter().map(|q| q.len() as u64).sum()
    }

    pub fn parse_str(text: &str) -> Result<Self, TraceError> {
        let mut declared: Option<usize> = None;
        let mut queries = Vec::new();
        let mut lines = Vec::new();
        let mut seen_content = false;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if let Some(rest) = trimmed.strip_prefix('#') {
                if !seen_content {
                    if let Some(n) = rest.strip_prefix("items") {
                        let n = n.trim();
                        declared = Some(n.parse().map_err(|_| TraceError::Header { line })?);
                    }
                }
                seen_content = true;
                continue;
            }
            seen_content = true;
            if trimmed.is_empty() {
                return Err(TraceError::EmptyQuery { line });
            }
            let mut ids = Vec::new();
            for tok in trimmed.split_whitespace() {
                let id: ItemId = tok.parse().map_err(|_| TraceError::Parse {
                    line,
                    token: tok.to_string(),
                })?;
                ids.push(id);
            }
            queries.push(Query::new(ids).map_err(|_| TraceError::EmptyQuery { line })?);
            lines.push(line);
        }

        let num_items = match declared {
            Some(n) => {
                for (q, &line) in queries.iter().zip(&lines) {
                    if q.max_id() as usize >= n {
                        return Err(TraceError::IdOutOfRange {
                            line,
                            id: q.max_id(),
                            num_items: n,
                        });
                    }
                }
                n
            }
            None => queries
                .iter()
                .map(|q| q.max_id() as usize + 1)
                .max()
                .unwrap_or(0),
        };
        Ok(Trace { num_items, queries })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.queries.len() * 16 + 16);
        let _ = writeln!(out, "#items {}", self.num_items);
        for q in &self.queries {
            let mut first = true;
            for id in q.items() {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{id}");
            }
            out.push('\n');
        }
        out
    }

    /// Splits into a training prefix of `ceil(train_fraction * N)` queries and
    /// the remaining test suffix.
    pub fn split(&self, train_fraction: f64) -> Result<(Trace, Trace), TraceError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(TraceError::Param(format!(
                "train fraction {train_fraction} not in (0, 1)"
            )));
        }
        let n = self.queries.len();
        let cut = (train_fraction * n as f64).ceil() as usize;
        if cut == 0 || cut >= n {
            return Err(TraceError::Param(format!(
                "train fraction {train_fraction} leaves an empty split of {n} queries"
            )));
        }
        let train = Trace {
            num_items: self.num_items,
            queries: self.queries[..cut].to_vec(),
        };
        let test = Trace {
            num_items: self.num_items,
            queries: self.queries[cut..].to_vec(),
        };
        Ok((train, test))
    }
}

pub fn parse_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Trace::parse_str(&text)
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    fs::write(path, trace.to_text()).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn split_trace(trace: &Trace, train_fraction: f64) -> Result<(Trace, Trace), TraceError> {
    trace.split(train_fraction)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    /// Number of queries containing each item.
    pub freq: Vec<u64>,
    pub query_len_mean: f64,
    /// Least-squares slope (negated) of log frequency against log rank over
    /// the top half of ranked items. `None` below 100 distinct items.
    pub freq_tail_exponent: Option<f64>,
}

impl TraceStats {
    pub fn freq_total(&self) -> u64 {
        self.freq.iter().sum()
    }

    pub fn distinct_items(&self) -> usize {
        self.freq.iter().filter(|&&f| f > 0).count()
    }
}

pub const MIN_ITEMS_FOR_TAIL_FIT: usize = 100;

pub fn trace_stats(trace: &Trace) -> TraceStats {
    let mut freq = vec![0u64; trace.num_items()];
    for q in trace.queries() {
        for &id in q.items() {
            freq[id as usize] += 1;
        }
    }
    let query_len_mean = if trace.is_empty() {
        0.0
    } else {
        trace.total_accesses() as f64 / trace.len() as f64
    };
    let freq_tail_exponent = fit_tail_exponent(&freq);
    TraceStats {
        freq,
        query_len_mean,
        freq_tail_exponent,
    }
}

fn fit_tail_exponent(freq: &[u64]) -> Option<f64> {
    let mut ranked: Vec<u64> = freq.iter().copied().filter(|&f| f > 0).collect();
    if ranked.len() < MIN_ITEMS_FOR_TAIL_FIT {
        return None;
    }
    ranked.sort_unstable_by(|a, b| b.cmp(a));
    let m = ranked.len().div_ceil(2);
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (r, &f) in ranked[..m].iter().enumerate() {
        let x = ((r + 1) as f64).ln();
        let y = (f as f64).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let n = m as f64;
    let denom = n * sxx - sx * sx;
    if denom <= 0.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / denom;
    // `0.0 - slope` never yields -0.0 for a zero slope
    Some(0.0 - slope).filter(|e| e.is_finite())
}

/// Parameters of the cluster-Zipf workload generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub num_items: usize,
    pub num_queries: usize,
    pub zipf_s: f64,
    pub mean_len: f64,
    pub num_clusters: usize,
    pub intra_prob: f64,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams::with_defaults(10_000, 60_000)
    }
}

impl GeneratorParams {
    /// Defaults: s = 1.05, one cluster per 64 items, 70% intra-cluster draws,
    /// 40 lookups per query on average.
    pub fn with_defaults(num_items: usize, num_queries: usize) -> Self {
        GeneratorParams {
            num_items,
            num_queries,
            zipf_s: 1.05,
            mean_len: 40.0,
            num_clusters: (num_items / 64).max(1),
            intra_prob: 0.7,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let err = |m: String| Err(TraceError::Param(m));
        if self.num_clusters < 1 || self.num_items < self.num_clusters {
            return err(format!(
                "need num_items ({}) >= num_clusters ({}) >= 1",
                self.num_items, self.num_clusters
            ));
        }
        if !(self.zipf_s > 0.0 && self.zipf_s.is_finite()) {
            return err(format!("zipf_s must be > 0, got {}", self.zipf_s));
        }
        if !(self.mean_len >= 1.0 && self.mean_len.is_finite()) {
            return err(format!("mean_len must be >= 1, got {}", self.mean_len));
        }
        if self.mean_len > self.num_items as f64 {
            return err(format!(
                "mean_len {} exceeds num_items {}",
                self.mean_len, self.num_items
            ));
        }
        if !(0.0..=1.0).contains(&self.intra_prob) {
            return err(format!(
                "intra_prob must be in [0, 1], got {}",
                self.intra_prob
            ));
        }
        Ok(())
    }
}

/// Zipf weights `1 / k^s` for ranks `k = 1..=n`.
pub fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|k| (k as f64).powf(-s)).collect()
}

/// Synthesizes a trace whose item popularity is Zipf-distributed and whose
/// queries co-access items from latent clusters.
///
/// Item popularity ranks and cluster membership are two independent random
/// permutations of the ID space, so neither ID order nor frequency order
/// reveals the clusters.
pub fn generate_synthetic(params: &GeneratorParams) -> Result<Trace, TraceError> {
    params.validate()?;
    let n = params.num_items;
    let k = params.num_clusters;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut by_rank: Vec<ItemId> = (0..n as ItemId).collect();
    by_rank.shuffle(&mut rng);
    let mut cluster_order: Vec<ItemId> = (0..n as ItemId).collect();
    cluster_order.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut clusters: Vec<&[ItemId]> = Vec::with_capacity(k);
    let mut cluster_of = vec![0u32; n];
    let mut start = 0;
    for c in 0..k {
        let len = base + usize::from(c < extra);
        let members = &cluster_order[start..start + len];
        for &id in members {
            cluster_of[id as usize] = c as u32;
        }
        clusters.push(members);
        start += len;
    }

    let weights_err = |e| TraceError::Param(format!("zipf weights: {e}"));
    let global = WeightedIndex::new(zipf_weights(n, params.zipf_s)).map_err(weights_err)?;
    let cluster_pop = WeightedIndex::new(zipf_weights(k, params.zipf_s)).map_err(weights_err)?;
    let within_small =
        WeightedIndex::new(zipf_weights(base, params.zipf_s)).map_err(weights_err)?;
    let within_large = if extra > 0 {
        Some(WeightedIndex::new(zipf_weights(base + 1, params.zipf_s)).map_err(weights_err)?)
    } else {
        None
    };
    let poisson =
        Poisson::new(params.mean_len).map_err(|e| TraceError::Param(format!("poisson: {e}")))?;

    let mut stamp = vec![0u32; n];
    let mut queries = Vec::with_capacity(params.num_queries);
    for qi in 0..params.num_queries {
        let mark = qi as u32 + 1;
        let len = loop {
            let l = poisson.sample(&mut rng) as usize;
            if (1..=n).contains(&l) {
                break l;
            }
        };
        let c = cluster_pop.sample(&mut rng);
        let members = clusters[c];
        let within = if members.len() > base {
            within_large.as_ref().unwrap_or(&within_small)
        } else {
            &within_small
        };

        let mut items = Vec::with_capacity(len);
        let mut from_cluster = 0usize;
        while items.len() < len {
            let exhausted = from_cluster == members.len();
            let id = if !exhausted && rng.random::<f64>() < params.intra_prob {
                members[within.sample(&mut rng)]
            } else {
                by_rank[global.sample(&mut rng)]
            };
            let slot = &mut stamp[id as usize];
            if *slot != mark {
                *slot = mark;
                items.push(id);
                if cluster_of[id as usize] == c as u32 {
                    from_cluster += 1;
                }
            }
        }
        queries.push(Query::new(items)?);
    }
    Trace::new(n, queries)
}
