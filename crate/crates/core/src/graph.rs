//! Road-network data model, CSV ingestion, and the two l1-normalized views
//! that drive every walk probability.
//!
//! Segments are nodes `0..n`; in the combined vertex space used by walks and
//! encoders, attribute `k` has id `n + k`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};

pub const EDGE_FILE: &str = "edges.csv";
pub const ATTR_FILE: &str = "attrs.csv";

/// Directed, unweighted, attributed road network.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    n: usize,
    edges: Vec<(usize, usize)>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    /// Row-major `n x m`.
    attrs: Vec<f64>,
    attr_names: Vec<String>,
    self_loops_added: usize,
}

impl RoadNetwork {
    /// Builds a network from raw parts. Sinks (out-degree 0) receive a
    /// self-loop; the number added is available via [`Self::self_loops_added`].
    pub fn from_parts(
        n: usize,
        edges: Vec<(usize, usize)>,
        attrs: Vec<f64>,
        attr_names: Vec<String>,
    ) -> Result<Self> {
        let m = attr_names.len();
        if n == 0 {
            return Err(invalid!("network has no nodes"));
        }
        if m == 0 {
            return Err(invalid!("network has no attributes"));
        }
        if attrs.len() != n * m {
            return Err(Error::Dimension(format!(
                "attribute matrix has {} entries, expected {n} x {m}",
                attrs.len()
            )));
        }
        for (i, row) in attrs.chunks(m).enumerate() {
            if let Some(k) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(invalid!(
                    "node {i}: attribute '{}' is negative or non-finite ({})",
                    attr_names[k],
                    row[k]
                ));
            }
            if !row.iter().any(|v| *v > 0.0) {
                return Err(invalid!("node {i} has no positive attribute"));
            }
        }

        let mut out_adj = vec![Vec::new(); n];
        let mut edges = edges;
        for &(s, d) in &edges {
            if s >= n || d >= n {
                return Err(invalid!("edge {s}->{d} references a node outside 0..{n}"));
            }
            if out_adj[s].contains(&d) {
                return Err(invalid!("duplicate edge {s}->{d}"));
            }
            out_adj[s].push(d);
        }
        let mut self_loops_added = 0;
        for (i, outs) in out_adj.iter_mut().enumerate() {
            if outs.is_empty() {
                outs.push(i);
                edges.push((i, i));
                self_loops_added += 1;
            }
        }
        if self_loops_added > 0 {
            log::info!("added {self_loops_added} self-loop(s) to sink segments");
        }
        let mut in_adj = vec![Vec::new(); n];
        for &(s, d) in &edges {
            in_adj[d].push(s);
        }

        Ok(Self {
            n,
            edges,
            out_adj,
            in_adj,
            attrs,
            attr_names,
            self_loops_added,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.attr_names.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_adj[i]
    }

    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_adj[i]
    }

    pub fn attr_names(&self) -> &[String] {
        &self.attr_names
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attr_names.iter().position(|a| a == name)
    }

    /// Row `i` of the raw attribute matrix.
    pub fn attrs(&self, i: usize) -> &[f64] {
        let m = self.m();
        &self.attrs[i * m..(i + 1) * m]
    }

    pub fn attr(&self, i: usize, k: usize) -> f64 {
        self.attrs[i * self.m() + k]
    }

    pub fn attr_matrix(&self) -> &[f64] {
        &self.attrs
    }

    pub fn self_loops_added(&self) -> usize {
        self.self_loops_added
    }

    /// Edges as supplied, without the self-loops added to sinks.
    pub fn original_edges(&self) -> &[(usize, usize)] {
        &self.edges[..self.edges.len() - self.self_loops_added]
    }

    /// Per-column min-max scaling of the attribute matrix to `[0, 1]`.
    /// Constant columns map to zero.
    pub fn minmax_scaled(&self) -> Vec<f64> {
        let (n, m) = (self.n, self.m());
        let mut out = vec![0.0; n * m];
        for k in 0..m {
            let col = (0..n).map(|i| self.attr(i, k));
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
            let span = hi - lo;
            if span > 0.0 {
                for i in 0..n {
                    out[i * m + k] = (self.attr(i, k) - lo) / span;
                }
            }
        }
        out
    }

    /// Writes `edges.csv` and `attrs.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_edges(&dir.join(EDGE_FILE))?;
        self.write_attrs(&dir.join(ATTR_FILE))
    }

    pub fn write_edges(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let res = (|| {
            writeln!(w, "src,dst")?;
            for (s, d) in self.original_edges() {
                writeln!(w, "{s},{d}")?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }

    pub fn write_attrs(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let res = (|| {
            writeln!(w, "node_id,{}", self.attr_names.join(","))?;
            for i in 0..self.n {
                write!(w, "{i}")?;
                for v in self.attrs(i) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Loads `edges.csv` and `attrs.csv` from a network directory.
pub fn load_network_dir(dir: &Path) -> Result<RoadNetwork> {
    load_network(&dir.join(EDGE_FILE), &dir.join(ATTR_FILE))
}

/// Loads a network from an edge CSV (`src,dst`) and an attribute CSV
/// (`node_id,<attr_1>,...,<attr_m>`). Errors carry the offending line number.
pub fn load_network(edge_file: &Path, attr_file: &Path) -> Result<RoadNetwork> {
    let (names, rows) = read_attrs(attr_file)?;
    let n = rows.len();
    let m = names.len();
    let mut attrs = Vec::with_capacity(n * m);
    for row in rows {
        attrs.extend(row);
    }

    let mut rdr = csv_reader(edge_file)?;
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(edge_file, 1, e.to_string()))?
        .clone();
    if header.len() != 2 {
        return Err(Error::parse(edge_file, 1, "expected header 'src,dst'"));
    }
    let mut edges = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(edge_file, e))?;
        let line = record_line(&rec);
        if rec.len() != 2 {
            return Err(Error::parse(edge_file, line, "expected two fields"));
        }
        let src = parse_id(edge_file, line, &rec[0])?;
        let dst = parse_id(edge_file, line, &rec[1])?;
        if src >= n || dst >= n {
            return Err(Error::parse(
                edge_file,
                line,
                format!("dangling edge {src}->{dst}: nodes are 0..{n}"),
            ));
        }
        if !seen.insert((src, dst)) {
            return Err(Error::parse(edge_file, line, format!("duplicate edge {src}->{dst}")));
        }
        edges.push((src, dst));
    }

    RoadNetwork::from_parts(n, edges, attrs, names)
}

type AttrRows = (Vec<String>, Vec<Vec<f64>>);

fn read_attrs(path: &Path) -> Result<AttrRows> {
    let mut rdr = csv_reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if header.len() < 2 || &header[0] != "node_id" {
        return Err(Error::parse(
            path,
            1,
            "expected header 'node_id,<attr_1>,...,<attr_m>'",
        ));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let m = names.len();

    let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
    let mut last_line = 1;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = record_line(&rec);
        last_line = line;
        if rec.len() != m + 1 {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields, found {}", m + 1, rec.len()),
            ));
        }
        let id = parse_id(path, line, &rec[0])?;
        let mut row = Vec::with_capacity(m);
        for (k, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::parse(path, line, format!("attribute '{}' is not a number: {field:?}", names[k]))
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::parse(
                    path,
                    line,
                    format!("attribute '{}' of node {id} is negative or non-finite ({v})", names[k]),
                ));
            }
            row.push(v);
        }
        if id >= rows.len() {
            rows.resize(id + 1, None);
        }
        if rows[id].is_some() {
            return Err(Error::parse(path, line, format!("duplicate node id {id}")));
        }
        rows[id] = Some(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, last_line, "no node rows"));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (id, row) in rows.into_iter().enumerate() {
        match row {
            Some(r) => out.push(r),
            None => {
                return Err(Error::parse(path, last_line, format!("missing row for node {id}")))
            }
        }
    }
    Ok((names, out))
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::parse(path, line, e.to_string())
}

pub(crate) fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

pub(crate) fn parse_id(path: &Path, line: usize, field: &str) -> Result<usize> {
    field
        .parse()
        .map_err(|_| Error::parse(path, line, format!("not a node id: {field:?}")))
}

/// Column-stochastic transition matrix `Mbar` with `Mbar[j][i] = m_ij / outdeg(i)`,
/// stored sparsely by column.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    cols: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    /// Non-zero entries `(j, Mbar[j][i])` of column `i`.
    pub fn column(&self, i: usize) -> &[(usize, f64)] {
        &self.cols[i]
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.cols[i]
            .iter()
            .find(|(r, _)| *r == j)
            .map_or(0.0, |(_, v)| *v)
    }

    pub fn n(&self) -> usize {
        self.cols.len()
    }
}

/// `Abar`: row `k` holds attribute `k` across nodes, l1-normalized.
#[derive(Debug, Clone)]
pub struct NormalizedAttributes {
    n: usize,
    m: usize,
    /// Row-major `m x n`.
    data: Vec<f64>,
    zero_rows: Vec<usize>,
}

impl NormalizedAttributes {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.n + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    /// Column `i` (attribute shares of node `i`) collected into a vector.
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.m).map(|k| self.get(k, i)).collect()
    }

    /// Attributes that are zero on every node; their rows stay all-zero.
    pub fn zero_rows(&self) -> &[usize] {
        &self.zero_rows
    }

    /// Builds directly from an `m x n` matrix whose rows are already
    /// l1-normalized or all-zero.
    pub fn from_rows(m: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * n {
            return Err(Error::Dimension(format!(
                "expected {m} x {n} entries, got {}",
                data.len()
            )));
        }
        let mut zero_rows = Vec::new();
        for (k, row) in data.chunks(n).enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(invalid!("row {k} has entries outside [0, 1]"));
            }
            let s: f64 = row.iter().sum();
            if s == 0.0 {
                zero_rows.push(k);
            } else if (s - 1.0).abs() > 1e-9 {
                return Err(invalid!("row {k} sums to {s}, expected 1"));
            }
        }
        Ok(Self {
            n,
            m,
            data,
            zero_rows,
        })
    }
}

/// Both normalized views of a network.
#[derive(Debug, Clone)]
pub struct NormalizedViews {
    pub adjacency: NormalizedAdjacency,
    pub attributes: NormalizedAttributes,
}

impl NormalizedViews {
    pub fn new(net: &RoadNetwork) -> Result<Self> {
        Ok(Self {
            adjacency: normalize_adjacency(net)?,
            attributes: normalize_attributes(net),
        })
    }

    pub fn n(&self) -> usize {
        self.attributes.n
    }

    pub fn m(&self) -> usize {
        self.attributes.m
    }
}

pub fn normalize_adjacency(net: &RoadNetwork) -> Result<NormalizedAdjacency> {
    let mut cols = Vec::with_capacity(net.n());
    for i in 0..net.n() {
        let outs = net.out_neighbors(i);
        if outs.is_empty() {
            return Err(invalid!("node {i} has out-degree 0"));
        }
        let w = 1.0 / outs.len() as f64;
        let mut col: Vec<(usize, f64)> = outs.iter().map(|&j| (j, w)).collect();
        col.sort_unstable_by_key(|(j, _)| *j);
        cols.push(col);
    }
    Ok(NormalizedAdjacency { cols })
}

pub fn normalize_attributes(net: &RoadNetwork) -> NormalizedAttributes {
    let (n, m) = (net.n(), net.m());
    let mut data = vec![0.0; m * n];
    let mut zero_rows = Vec::new();
    for k in 0..m {
        let total: f64 = (0..n).map(|i| net.attr(i, k)).sum();
        if total > 0.0 {
            for i in 0..n {
                data[k * n + i] = net.attr(i, k) / total;
            }
        } else {
            log::warn!(
                "attribute '{}' is zero on every node; it receives no sampling mass",
                net.attr_names()[k]
            );
            zero_rows.push(k);
        }
    }
    NormalizedAttributes {
        n,
        m,
        data,
        zero_rows,
    }
}
