//! Seeded synthetic road grids for tests, benchmarks and the demo.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::graph::RoadNetwork;
use crate::rng::{self, stage};

pub const GRID_ATTRS: [&str; 5] = ["limiv", "nlan", "len", "vol", "avgv"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    /// Range of `vol / capacity` drawn per segment.
    pub load: (f64, f64),
}

impl GridConfig {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        Self {
            rows,
            cols,
            seed,
            load: (0.3, 1.3),
        }
    }
}

/// A `rows x cols` grid of segments, each linked both ways to its four
/// neighbours, with attributes `limiv, nlan, len, vol, avgv`.
pub fn synth_grid(cfg: &GridConfig) -> Result<RoadNetwork> {
    let (rows, cols) = (cfg.rows, cfg.cols);
    if rows == 0 || cols == 0 {
        return Err(invalid!("grid needs at least one row and one column"));
    }
    let (lo, hi) = cfg.load;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(invalid!("load range must satisfy 0 <= lo < hi, got ({lo}, {hi})"));
    }
    let n = rows * cols;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
                edges.push((i + 1, i));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
                edges.push((i + cols, i));
            }
        }
    }
    let mut g = rng::stream(cfg.seed, &[stage::SYNTH]);
    let mut attrs = Vec::with_capacity(n * GRID_ATTRS.len());
    for _ in 0..n {
        let limiv = [30.0, 40.0, 50.0, 60.0][g.gen_range(0..4)];
        let nlan = g.gen_range(1..=3) as f64;
        let len = g.gen_range(10..=100) as f64 * 10.0;
        let cap = limiv * nlan;
        let vol = (cap * g.gen_range(lo..hi)).round();
        let free = if vol <= cap { 1.0 } else { cap / vol };
        let avgv = (limiv * free * g.gen_range(0.8..1.0) * 10.0).round() / 10.0;
        // every node needs a positive attribute; limiv always is
        attrs.extend([limiv, nlan, len, vol, avgv]);
    }
    let names = GRID_ATTRS.iter().map(|s| s.to_string()).collect();
    RoadNetwork::from_parts(n, edges, attrs, names)
}

/// `Σ w_k · scaled(attr_k)` over named attributes, with each attribute
/// min-max scaled to `[0, 1]`. Strictly increasing in every attribute with
/// positive weight.
pub fn attribute_scores(net: &RoadNetwork, weights: &[(&str, f64)]) -> Result<Vec<f64>> {
    let scaled = net.minmax_scaled();
    let m = net.m();
    let mut idx = Vec::with_capacity(weights.len());
    for &(name, w) in weights {
        let k = net
            .attr_index(name)
            .ok_or_else(|| invalid!("unknown attribute '{name}'"))?;
        idx.push((k, w));
    }
    Ok((0..net.n())
        .map(|i| idx.iter().map(|&(k, w)| w * scaled[i * m + k]).sum())
        .collect())
}
