//! Structural importance baselines: degree, betweenness, PageRank.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::graph::{normalize_adjacency, RoadNetwork};
use crate::ranker::write_lines;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Degree,
    Betweenness,
    PageRank,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Degree => "dc",
            Method::Betweenness => "bc",
            Method::PageRank => "pagerank",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dc" | "degree" => Ok(Method::Degree),
            "bc" | "betweenness" => Ok(Method::Betweenness),
            "pagerank" | "pr" => Ok(Method::PageRank),
            _ => Err(invalid!("unknown baseline {s:?} (expected dc, bc or pagerank)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub method: Method,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    /// `node_id,score`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        write_lines(path, |w| {
            writeln!(w, "node_id,score")?;
            for (i, s) in self.scores.iter().enumerate() {
                writeln!(w, "{i},{s}")?;
            }
            Ok(())
        })
    }
}

pub fn run(method: Method, net: &RoadNetwork) -> Result<ScoreVector> {
    match method {
        Method::Degree => Ok(degree_centrality(net)),
        Method::Betweenness => Ok(betweenness_centrality(net)),
        Method::PageRank => pagerank(net, 0.85, 1e-10),
    }
}

/// In-degree plus out-degree over the supplied edges; a self-loop counts
/// once. Self-loops added to sinks at load time are not counted.
pub fn degree_centrality(net: &RoadNetwork) -> ScoreVector {
    let mut scores = vec![0.0; net.n()];
    for &(s, d) in net.original_edges() {
        scores[s] += 1.0;
        if s != d {
            scores[d] += 1.0;
        }
    }
    ScoreVector {
        method: Method::Degree,
        scores,
    }
}

/// Pair dependencies of every node on unweighted directed shortest paths,
/// summed over ordered source/target pairs (Brandes accumulation).
pub fn betweenness_centrality(net: &RoadNetwork) -> ScoreVector {
    let n = net.n();
    let sources: Vec<usize> = (0..n).collect();
    let parts = crate::par::map_ordered(&sources, |&s| single_source_dependency(net, s));
    let mut scores = vec![0.0; n];
    for delta in parts {
        for (acc, d) in scores.iter_mut().zip(delta) {
            *acc += d;
        }
    }
    ScoreVector {
        method: Method::Betweenness,
        scores,
    }
}

fn single_source_dependency(net: &RoadNetwork, s: usize) -> Vec<f64> {
    let n = net.n();
    let mut dist = vec![usize::MAX; n];
    let mut sigma = vec![0.0f64; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    dist[s] = 0;
    sigma[s] = 1.0;
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in net.out_neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
                preds[w].push(v);
            }
        }
    }
    let mut delta = vec![0.0; n];
    for &w in order.iter().rev() {
        for &v in &preds[w] {
            delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
        }
    }
    delta[s] = 0.0;
    delta
}

pub const PAGERANK_MAX_ITER: usize = 10_000;

/// Power iteration `p ← d·Mbar·p + (1 - d)/n` from the uniform vector until
/// the l1 change drops below `tol`.
pub fn pagerank(net: &RoadNetwork, damping: f64, tol: f64) -> Result<ScoreVector> {
    if !(0.0..1.0).contains(&damping) {
        return Err(invalid!("damping must lie in [0, 1), got {damping}"));
    }
    let mbar = normalize_adjacency(net)?;
    let n = net.n();
    let teleport = (1.0 - damping) / n as f64;
    let mut p = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..PAGERANK_MAX_ITER {
        let mut next = vec![teleport; n];
        for (i, &pi) in p.iter().enumerate() {
            for &(j, w) in mbar.column(i) {
                next[j] += damping * w * pi;
            }
        }
        residual = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if residual < tol {
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= total);
            return Ok(ScoreVector {
                method: Method::PageRank,
                scores: p,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: PAGERANK_MAX_ITER,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::{any, prop_assert, proptest};
    use rand::Rng;

    fn net(n: usize, edges: &[(usize, usize)]) -> RoadNetwork {
        RoadNetwork::from_parts(n, edges.to_vec(), vec![1.0; n], vec!["a".into()]).unwrap()
    }

    fn random_net(n: usize, p: f64, seed: u64) -> RoadNetwork {
        let mut g = rng::stream(seed, &[]);
        let mut edges = Vec::new();
        for s in 0..n {
            for d in 0..n {
                if s != d && g.gen_bool(p) {
                    edges.push((s, d));
                }
            }
        }
        net(n, &edges)
    }

    /// Counts shortest paths through every node by enumerating all simple
    /// paths between every ordered pair.
    fn brute_betweenness(g: &RoadNetwork) -> Vec<f64> {
        fn dfs(g: &RoadNetwork, v: usize, t: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if v == t {
                out.push(path.clone());
                return;
            }
            for &w in g.out_neighbors(v) {
                if !path.contains(&w) {
                    path.push(w);
                    dfs(g, w, t, path, out);
                    path.pop();
                }
            }
        }
        let n = g.n();
        let mut bc = vec![0.0; n];
        for s in 0..n {
            for t in 0..n {
                if s == t {
                    continue;
                }
                let mut paths = Vec::new();
                dfs(g, s, t, &mut vec![s], &mut paths);
                let Some(shortest) = paths.iter().map(Vec::len).min() else { continue };
                let best: Vec<&Vec<usize>> = paths.iter().filter(|p| p.len() == shortest).collect();
                for p in &best {
                    for &v in &p[1..p.len() - 1] {
                        bc[v] += 1.0 / best.len() as f64;
                    }
                }
            }
        }
        bc
    }

    #[test]
    fn degree_examples() {
        let star = net(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        assert_eq!(degree_centrality(&star).scores, vec![4.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(degree_centrality(&net(2, &[(0, 1), (1, 0)])).scores, vec![2.0, 2.0]);
        assert_eq!(degree_centrality(&net(2, &[(0, 0), (0, 1), (1, 0)])).scores, vec![3.0, 2.0]);
    }

    #[test]
    fn degree_matches_recount() {
        let g = random_net(10, 0.3, 5);
        let d = degree_centrality(&g).scores;
        for v in 0..10 {
            let count = g
                .original_edges()
                .iter()
                .filter(|(s, t)| *s == v || *t == v)
                .count();
            assert_eq!(d[v], count as f64);
        }
    }

    #[test]
    fn betweenness_examples() {
        assert_eq!(betweenness_centrality(&net(3, &[(0, 1), (1, 2)])).scores, vec![0.0, 1.0, 0.0]);
        let tri = net(3, &[(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)]);
        assert_eq!(betweenness_centrality(&tri).scores, vec![0.0; 3]);
        // two equal routes split the dependency
        let diamond = net(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(betweenness_centrality(&diamond).scores, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn betweenness_matches_enumeration() {
        for seed in 0..20 {
            let g = random_net(3 + seed as usize % 6, 0.35, seed);
            let fast = betweenness_centrality(&g).scores;
            let slow = brute_betweenness(&g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "seed {seed}: {fast:?} vs {slow:?}");
            }
        }
    }

    #[test]
    fn pagerank_cycles_are_uniform() {
        let two = pagerank(&net(2, &[(0, 1), (1, 0)]), 0.85, 1e-10).unwrap();
        assert!(two.scores.iter().all(|v| (v - 0.5).abs() < 1e-12));
        let three = pagerank(&net(3, &[(0, 1), (1, 2), (2, 0)]), 0.85, 1e-10).unwrap();
        assert!(three.scores.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert!(pagerank(&net(2, &[(0, 1)]), 1.0, 1e-10).is_err());
    }

    fn residual(g: &RoadNetwork, p: &[f64], d: f64) -> f64 {
        let n = g.n();
        let mut worst = 0.0f64;
        for j in 0..n {
            let inflow: f64 = g
                .in_neighbors(j)
                .iter()
                .map(|&i| p[i] / g.out_neighbors(i).len() as f64)
                .sum();
            worst = worst.max((p[j] - (d * inflow + (1.0 - d) / n as f64)).abs());
        }
        worst
    }

    #[test]
    fn pagerank_fixed_point() {
        let g = random_net(8, 0.3, 2);
        let p = pagerank(&g, 0.85, 1e-10).unwrap().scores;
        assert!(residual(&g, &p, 0.85) < 1e-9);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn method_names() {
        for m in [Method::Degree, Method::Betweenness, Method::PageRank] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("katz".parse::<Method>().is_err());
    }

    proptest! {
        #[test]
        fn pagerank_is_a_positive_distribution(seed in any::<u64>(), n in 1usize..15) {
            let g = random_net(n, 0.25, seed);
            let p = pagerank(&g, 0.85, 1e-10).unwrap().scores;
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|v| *v > 0.0));
            prop_assert!(residual(&g, &p, 0.85) < 1e-9);
        }

        #[test]
        fn betweenness_is_non_negative(seed in any::<u64>(), n in 1usize..10) {
            let g = random_net(n, 0.3, seed);
            prop_assert!(betweenness_centrality(&g).scores.iter().all(|v| *v >= 0.0));
        }
    }
}
