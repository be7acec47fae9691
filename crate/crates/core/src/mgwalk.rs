//! Multi-graph fused random walks.
//!
//! From a node, a biased coin picks either one step on the adjacency graph
//! (probability `alpha`) or a two-step excursion through the bridge graph:
//! node -> attribute, weighted by the node's attribute shares, then
//! attribute -> node, weighted by similarity `1 - |Abar[k][j] - Abar[k][i]|`
//! over the nodes that carry the attribute. Both the attribute and the node
//! are recorded, each consuming one position of the sequence.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::Path;

use lru::LruCache;
use rand::Rng;

use crate::alias::AliasTable;
use crate::config::KvConfig;
use crate::error::{invalid, Error, Result};
use crate::graph::{NormalizedViews, RoadNetwork};
use crate::rng::{self, stage};

/// Upper bound on the total number of entries held by a walker's cache of
/// attribute-to-node tables.
const CACHE_ENTRY_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    /// Probability of an adjacency step; `1 - alpha` takes the bridge.
    pub alpha: f64,
    /// Sequences per node.
    pub num: usize,
    /// Sequence length, counting both node and attribute visits.
    pub len: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0001,
            num: 150,
            len: 4,
            seed: 0,
        }
    }
}

impl WalkConfig {
    /// Overrides `alpha`, `num`, `len` and `seed` from `key = value` pairs;
    /// other keys are ignored.
    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = kv.parse_value(stringify!($field))? {
                    self.$field = v;
                }
            )*};
        }
        take!(alpha, num, len, seed);
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("alpha".to_owned(), self.alpha.to_string()),
            ("num".to_owned(), self.num.to_string()),
            ("len".to_owned(), self.len.to_string()),
            ("seed".to_owned(), self.seed.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.num == 0 {
            return Err(invalid!("num must be at least 1"));
        }
        if self.len < 2 {
            return Err(invalid!("sequence length must be at least 2, got {}", self.len));
        }
        Ok(())
    }
}

/// Probability of stepping from node `i` to each node (one adjacency step).
pub fn node_step_distribution(i: usize, views: &NormalizedViews) -> Result<Vec<f64>> {
    check_node(i, views)?;
    let col = views.adjacency.column(i);
    let total: f64 = col.iter().map(|(_, v)| v).sum();
    if total <= 0.0 {
        return Err(invalid!("node {i} has no outgoing edge"));
    }
    let mut p = vec![0.0; views.n()];
    for &(j, v) in col {
        p[j] = v / total;
    }
    Ok(p)
}

/// Probability of stepping from node `i` to each attribute.
pub fn node_to_attr_distribution(i: usize, views: &NormalizedViews) -> Result<Vec<f64>> {
    check_node(i, views)?;
    let col = views.attributes.column(i);
    let total: f64 = col.iter().sum();
    if total <= 0.0 {
        return Err(invalid!("node {i} has no attribute mass"));
    }
    Ok(col.into_iter().map(|v| v / total).collect())
}

/// Probability of stepping from attribute `k` to each node, given the walk
/// entered the attribute from node `i`.
pub fn attr_to_node_distribution(i: usize, k: usize, views: &NormalizedViews) -> Result<Vec<f64>> {
    let (support, p) = attr_to_node_sparse(i, k, views)?;
    let mut dense = vec![0.0; views.n()];
    for (j, v) in support.into_iter().zip(p) {
        dense[j] = v;
    }
    Ok(dense)
}

fn attr_to_node_sparse(
    i: usize,
    k: usize,
    views: &NormalizedViews,
) -> Result<(Vec<usize>, Vec<f64>)> {
    check_node(i, views)?;
    if k >= views.m() {
        return Err(invalid!("attribute {k} out of range 0..{}", views.m()));
    }
    let row = views.attributes.row(k);
    let origin = row[i];
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (j, &v) in row.iter().enumerate() {
        if v != 0.0 {
            let w = 1.0 - (v - origin).abs();
            if w > 0.0 {
                support.push(j);
                weights.push(w);
            }
        }
    }
    let total: f64 = weights.iter().sum();
    if support.is_empty() || total <= 0.0 {
        return Err(invalid!(
            "attribute {k} offers no reachable node from node {i}"
        ));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((support, weights))
}

fn check_node(i: usize, views: &NormalizedViews) -> Result<()> {
    if i >= views.n() {
        return Err(invalid!("node {i} out of range 0..{}", views.n()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct SparseAlias {
    support: Vec<usize>,
    table: AliasTable,
}

impl SparseAlias {
    fn new(support: Vec<usize>, p: &[f64]) -> Result<Self> {
        Ok(Self {
            support,
            table: AliasTable::new(p)?,
        })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.support[self.table.draw(rng)]
    }
}

/// Alias tables for the adjacency and node-to-attribute steps of every
/// node. Immutable and shareable across workers.
#[derive(Debug, Clone)]
pub struct WalkTables<'a> {
    views: &'a NormalizedViews,
    adjacency: Vec<SparseAlias>,
    to_attr: Vec<SparseAlias>,
}

impl<'a> WalkTables<'a> {
    pub fn new(views: &'a NormalizedViews) -> Result<Self> {
        let n = views.n();
        let mut adjacency = Vec::with_capacity(n);
        let mut to_attr = Vec::with_capacity(n);
        for i in 0..n {
            let p = node_step_distribution(i, views)?;
            let support: Vec<usize> = views.adjacency.column(i).iter().map(|(j, _)| *j).collect();
            let probs: Vec<f64> = support.iter().map(|&j| p[j]).collect();
            adjacency.push(SparseAlias::new(support, &probs)?);

            let p = node_to_attr_distribution(i, views)?;
            let support: Vec<usize> = (0..p.len()).filter(|&k| p[k] > 0.0).collect();
            let probs: Vec<f64> = support.iter().map(|&k| p[k]).collect();
            to_attr.push(SparseAlias::new(support, &probs)?);
        }
        Ok(Self {
            views,
            adjacency,
            to_attr,
        })
    }

    pub fn walker(&self, alpha: f64) -> Walker<'_, 'a> {
        let cap = (CACHE_ENTRY_BUDGET / self.views.n().max(1)).max(16);
        Walker {
            tables: self,
            alpha,
            to_node: LruCache::new(NonZeroUsize::new(cap).expect("positive capacity")),
        }
    }
}

/// Generates walks. Holds a private LRU cache of attribute-to-node tables
/// keyed by `(origin node, attribute)`, so each worker owns one.
pub struct Walker<'t, 'a> {
    tables: &'t WalkTables<'a>,
    alpha: f64,
    to_node: LruCache<(usize, usize), SparseAlias>,
}

impl Walker<'_, '_> {
    /// Appends a walk of `len` vertices starting at `start` to `out`.
    pub fn walk<R: Rng + ?Sized>(
        &mut self,
        start: usize,
        len: usize,
        rng: &mut R,
        out: &mut Vec<usize>,
    ) -> Result<()> {
        let n = self.tables.views.n();
        check_node(start, self.tables.views)?;
        let begin = out.len();
        out.push(start);
        let mut cur = start;
        while out.len() - begin < len {
            if rng.gen::<f64>() < self.alpha {
                cur = self.tables.adjacency[cur].draw(rng);
                out.push(cur);
            } else {
                let k = self.tables.to_attr[cur].draw(rng);
                out.push(n + k);
                if out.len() - begin == len {
                    break;
                }
                cur = self.attr_step(cur, k, rng)?;
                out.push(cur);
            }
        }
        Ok(())
    }

    fn attr_step<R: Rng + ?Sized>(&mut self, i: usize, k: usize, rng: &mut R) -> Result<usize> {
        if let Some(t) = self.to_node.get(&(i, k)) {
            return Ok(t.draw(rng));
        }
        let (support, p) = attr_to_node_sparse(i, k, self.tables.views)?;
        let table = SparseAlias::new(support, &p)?;
        let j = table.draw(rng);
        self.to_node.put((i, k), table);
        Ok(j)
    }
}

/// `num` sequences of length `len` for each node, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    n: usize,
    m: usize,
    config: WalkConfig,
    seqs: Vec<usize>,
}

impl SampleSet {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn config(&self) -> &WalkConfig {
        &self.config
    }

    pub fn sequence(&self, node: usize, s: usize) -> &[usize] {
        let len = self.config.len;
        let start = (node * self.config.num + s) * len;
        &self.seqs[start..start + len]
    }

    pub fn sequences(&self, node: usize) -> impl Iterator<Item = &[usize]> {
        let chunk = self.config.num * self.config.len;
        self.seqs[node * chunk..(node + 1) * chunk].chunks(self.config.len)
    }

    /// True when no attribute id occurs anywhere.
    pub fn is_node_only(&self) -> bool {
        self.seqs.iter().all(|&v| v < self.n)
    }

    /// Builds a set from raw node-major sequences and checks every
    /// structural invariant.
    pub fn from_raw(n: usize, m: usize, config: WalkConfig, seqs: Vec<usize>) -> Result<Self> {
        config.validate()?;
        if seqs.len() != n * config.num * config.len {
            return Err(Error::Dimension(format!(
                "expected {} ids, got {}",
                n * config.num * config.len,
                seqs.len()
            )));
        }
        let set = Self { n, m, config, seqs };
        for node in 0..n {
            for s in set.sequences(node) {
                check_sequence(node, s, n, m)?;
            }
        }
        Ok(set)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut line = String::new();
        let res = (|| {
            writeln!(w, "{SAMPLES_MAGIC}")?;
            writeln!(
                w,
                "n={} m={} num={} len={} alpha={} seed={}",
                self.n, self.m, self.config.num, self.config.len, self.config.alpha, self.config.seed
            )?;
            for s in self.seqs.chunks(self.config.len) {
                line.clear();
                for (p, v) in s.iter().enumerate() {
                    if p > 0 {
                        line.push(' ');
                    }
                    let _ = write!(line, "{v}");
                }
                writeln!(w, "{line}")?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(Error::parse(path, i + 1, e.to_string())),
                None => Err(Error::parse(path, 0, format!("unexpected end of file, expected {what}"))),
            }
        };
        let (_, magic) = next("header")?;
        if magic.trim() != SAMPLES_MAGIC {
            return Err(Error::parse(path, 1, format!("expected '{SAMPLES_MAGIC}'")));
        }
        let (lno, meta) = next("metadata")?;
        let kv = parse_kv_line(&meta).map_err(|m| Error::parse(path, lno, m))?;
        let get = |key: &str| -> Result<&str> {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::parse(path, lno, format!("missing '{key}'")))
        };
        let num_err = |key: &str| Error::parse(path, lno, format!("bad value for '{key}'"));
        let n: usize = get("n")?.parse().map_err(|_| num_err("n"))?;
        let m: usize = get("m")?.parse().map_err(|_| num_err("m"))?;
        let config = WalkConfig {
            num: get("num")?.parse().map_err(|_| num_err("num"))?,
            len: get("len")?.parse().map_err(|_| num_err("len"))?,
            alpha: get("alpha")?.parse().map_err(|_| num_err("alpha"))?,
            seed: get("seed")?.parse().map_err(|_| num_err("seed"))?,
        };
        config.validate()?;

        let total = n * config.num;
        let mut seqs = Vec::with_capacity(total * config.len);
        for idx in 0..total {
            let (lno, line) = next("sequence")?;
            let before = seqs.len();
            for tok in line.split_whitespace() {
                let v: usize = tok
                    .parse()
                    .map_err(|_| Error::parse(path, lno, format!("not a vertex id: {tok:?}")))?;
                seqs.push(v);
            }
            if seqs.len() - before != config.len {
                return Err(Error::parse(
                    path,
                    lno,
                    format!("expected {} ids, found {}", config.len, seqs.len() - before),
                ));
            }
            check_sequence(idx / config.num, &seqs[before..], n, m)
                .map_err(|e| Error::parse(path, lno, e.to_string()))?;
        }
        Ok(Self { n, m, config, seqs })
    }
}

const SAMPLES_MAGIC: &str = "roadrank-samples v1";

pub(crate) fn parse_kv_line(line: &str) -> std::result::Result<Vec<(String, String)>, String> {
    line.split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.to_owned(), v.to_owned()))
                .ok_or_else(|| format!("expected key=value, found {tok:?}"))
        })
        .collect()
}

fn check_sequence(node: usize, s: &[usize], n: usize, m: usize) -> Result<()> {
    if s.first() != Some(&node) {
        return Err(invalid!("sequence for node {node} starts with {:?}", s.first()));
    }
    if let Some(v) = s.iter().find(|&&v| v >= n + m) {
        return Err(invalid!("vertex id {v} out of range 0..{}", n + m));
    }
    if s.windows(2).any(|w| w[0] >= n && w[1] >= n) {
        return Err(invalid!("two consecutive attribute ids in sequence for node {node}"));
    }
    Ok(())
}

/// Samples `cfg.num` walks of length `cfg.len` from every node. Each walk
/// draws from its own stream `(seed, node, index)`, so the result does not
/// depend on the number of worker threads.
pub fn mgwalk_sample(
    net: &RoadNetwork,
    views: &NormalizedViews,
    cfg: &WalkConfig,
) -> Result<SampleSet> {
    cfg.validate()?;
    if net.n() != views.n() || net.m() != views.m() {
        return Err(Error::Dimension("network and views disagree".into()));
    }
    let tables = WalkTables::new(views)?;
    let n = net.n();
    let per_node = |walker: &mut Walker<'_, '_>, i: usize| -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(cfg.num * cfg.len);
        for s in 0..cfg.num {
            let mut r = rng::stream(cfg.seed, &[stage::WALK, i as u64, s as u64]);
            walker.walk(i, cfg.len, &mut r, &mut out)?;
        }
        Ok(out)
    };

    #[cfg(feature = "parallel")]
    let chunks: Vec<Result<Vec<usize>>> = {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map_init(|| tables.walker(cfg.alpha), per_node)
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<Result<Vec<usize>>> = {
        let mut walker = tables.walker(cfg.alpha);
        (0..n).map(|i| per_node(&mut walker, i)).collect()
    };

    let mut seqs = Vec::with_capacity(n * cfg.num * cfg.len);
    for c in chunks {
        seqs.extend(c?);
    }
    Ok(SampleSet {
        n,
        m: net.m(),
        config: *cfg,
        seqs,
    })
}
