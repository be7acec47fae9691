//! Siamese pairwise ranking head, pair labels, binary cross-entropy, and
//! Copeland aggregation of pairwise ratings into a total order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::graph::{csv_err, csv_reader, parse_id, record_line};
use crate::tensor::{add_into, sigmoid, Matrix};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in x out`
    pub w: Matrix,
    /// `1 x out`
    pub b: Matrix,
}

impl Dense {
    fn zeros(input: usize, out: usize) -> Self {
        Self {
            w: Matrix::zeros(input, out),
            b: Matrix::zeros(1, out),
        }
    }

    fn init<R: Rng + ?Sized>(input: usize, out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            w: Matrix::uniform(input, out, bound, rng),
            b: Matrix::uniform(1, out, bound, rng),
        }
    }

    fn relu_forward(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.b.row(0).to_vec();
        self.w.vecmul_acc(x, &mut z);
        z.iter_mut().for_each(|v| *v = v.max(0.0));
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankerDims {
    pub input: usize,
    pub f1: usize,
    pub f2: usize,
    pub rdim: usize,
}

impl RankerDims {
    pub fn new(input: usize) -> Self {
        Self {
            input,
            f1: 32,
            f2: 16,
            rdim: 8,
        }
    }
}

/// Three rectified dense layers shared by both branches, then a projection
/// of the concatenated branch outputs to a single logit.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    pub layers: [Dense; 3],
    /// `2·rdim x 1`
    pub proj_w: Matrix,
    /// `1 x 1`
    pub proj_b: Matrix,
    /// Use only the first half `u` of the projection as `(u, -u)` and drop
    /// the bias, which forces `rating(i, j) + rating(j, i) = 1`.
    pub antisymmetric: bool,
}

/// Activations of one branch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BranchTape {
    input: Vec<f64>,
    acts: [Vec<f64>; 3],
}

impl BranchTape {
    pub fn output(&self) -> &[f64] {
        &self.acts[2]
    }
}

impl RankerParams {
    pub fn zeros(dims: RankerDims) -> Self {
        Self {
            layers: [
                Dense::zeros(dims.input, dims.f1),
                Dense::zeros(dims.f1, dims.f2),
                Dense::zeros(dims.f2, dims.rdim),
            ],
            proj_w: Matrix::zeros(2 * dims.rdim, 1),
            proj_b: Matrix::zeros(1, 1),
            antisymmetric: false,
        }
    }

    pub fn init<R: Rng + ?Sized>(dims: RankerDims, rng: &mut R) -> Self {
        let layers = [
            Dense::init(dims.input, dims.f1, rng),
            Dense::init(dims.f1, dims.f2, rng),
            Dense::init(dims.f2, dims.rdim, rng),
        ];
        let bound = 1.0 / ((2 * dims.rdim) as f64).sqrt();
        Self {
            layers,
            proj_w: Matrix::uniform(2 * dims.rdim, 1, bound, rng),
            proj_b: Matrix::uniform(1, 1, bound, rng),
            antisymmetric: false,
        }
    }

    pub fn dims(&self) -> RankerDims {
        RankerDims {
            input: self.layers[0].w.rows(),
            f1: self.layers[0].w.cols(),
            f2: self.layers[1].w.cols(),
            rdim: self.layers[2].w.cols(),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("rank.fc{}.W", k + 1), &l.w));
            out.push((format!("rank.fc{}.b", k + 1), &l.b));
        }
        out.push(("rank.proj.W".to_owned(), &self.proj_w));
        out.push(("rank.proj.b".to_owned(), &self.proj_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in self.layers.iter_mut() {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.proj_w);
        out.push(&mut self.proj_b);
        out
    }

    /// Branch output `s` for one embedding.
    pub fn branch(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_input(h)?;
        Ok(self.branch_tape(h).acts[2].clone())
    }

    pub fn branch_tape(&self, h: &[f64]) -> BranchTape {
        let a1 = self.layers[0].relu_forward(h);
        let a2 = self.layers[1].relu_forward(&a1);
        let a3 = self.layers[2].relu_forward(&a2);
        BranchTape {
            input: h.to_vec(),
            acts: [a1, a2, a3],
        }
    }

    fn check_input(&self, h: &[f64]) -> Result<()> {
        let want = self.layers[0].w.rows();
        if h.len() != want {
            return Err(Error::Dimension(format!(
                "embedding has length {}, ranker expects {want}",
                h.len()
            )));
        }
        Ok(())
    }

    /// `d_f = s(i) ⊕ s(j)`.
    pub fn pair_features(&self, hi: &[f64], hj: &[f64]) -> Result<Vec<f64>> {
        let mut d = self.branch(hi)?;
        d.extend(self.branch(hj)?);
        Ok(d)
    }

    /// Projection logit from two branch outputs.
    pub fn logit(&self, si: &[f64], sj: &[f64]) -> f64 {
        let w = self.proj_w.data();
        let r = si.len();
        if self.antisymmetric {
            (0..r).map(|k| w[k] * (si[k] - sj[k])).sum()
        } else {
            let a: f64 = (0..r).map(|k| w[k] * si[k] + w[r + k] * sj[k]).sum();
            a + self.proj_b.data()[0]
        }
    }

    /// Propagates `dlogit` through the projection and both branches.
    /// Returns the gradients w.r.t. the two branch inputs.
    pub fn backward_pair(
        &self,
        ti: &BranchTape,
        tj: &BranchTape,
        dlogit: f64,
        grad: &mut RankerParams,
    ) -> (Vec<f64>, Vec<f64>) {
        let (si, sj) = (ti.output(), tj.output());
        let r = si.len();
        let w = self.proj_w.data();
        let gw = grad.proj_w.data_mut();
        let (dsi, dsj): (Vec<f64>, Vec<f64>) = if self.antisymmetric {
            for k in 0..r {
                gw[k] += dlogit * (si[k] - sj[k]);
            }
            (
                (0..r).map(|k| dlogit * w[k]).collect(),
                (0..r).map(|k| -dlogit * w[k]).collect(),
            )
        } else {
            for k in 0..r {
                gw[k] += dlogit * si[k];
                gw[r + k] += dlogit * sj[k];
            }
            grad.proj_b.data_mut()[0] += dlogit;
            (
                (0..r).map(|k| dlogit * w[k]).collect(),
                (0..r).map(|k| dlogit * w[r + k]).collect(),
            )
        };
        (self.backward_branch(ti, dsi, grad), self.backward_branch(tj, dsj, grad))
    }

    fn backward_branch(&self, tape: &BranchTape, mut d: Vec<f64>, grad: &mut RankerParams) -> Vec<f64> {
        for k in (0..3).rev() {
            for (g, a) in d.iter_mut().zip(&tape.acts[k]) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let x = if k == 0 { &tape.input } else { &tape.acts[k - 1] };
            grad.layers[k].w.add_outer(x, &d);
            add_into(grad.layers[k].b.row_mut(0), &d);
            let mut dx = vec![0.0; x.len()];
            self.layers[k].w.mul_vec_acc(&d, &mut dx);
            d = dx;
        }
        d
    }
}

/// Rating in `(0, 1)` that the first node is more important than the second.
pub fn siamese_forward(hi: &[f64], hj: &[f64], p: &RankerParams) -> Result<f64> {
    if hi.len() != hj.len() {
        return Err(Error::Dimension(format!(
            "embeddings differ in length ({} vs {})",
            hi.len(),
            hj.len()
        )));
    }
    let si = p.branch(hi)?;
    let sj = p.branch(hj)?;
    Ok(sigmoid(p.logit(&si, &sj)))
}

/// 1 when the first score is strictly larger, else 0.
pub fn pair_label(scr_i: f64, scr_j: f64) -> u8 {
    u8::from(scr_i > scr_j)
}

/// Per-pair cross-entropy term with clamped rating.
pub fn bce_term(rating: f64, label: f64) -> f64 {
    let p = rating.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Mean binary cross-entropy.
pub fn bce_loss(ratings: &[f64], labels: &[u8]) -> Result<f64> {
    if ratings.is_empty() {
        return Err(invalid!("no ratings"));
    }
    if ratings.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} ratings but {} labels",
            ratings.len(),
            labels.len()
        )));
    }
    let total: f64 = ratings
        .iter()
        .zip(labels)
        .map(|(&r, &y)| bce_term(r, f64::from(y)))
        .sum();
    Ok(total / ratings.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedNode {
    pub node: usize,
    /// Number of opponents `j` with `rating(node, j) > 0.5`.
    pub copeland: usize,
    pub rating_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub ratings: BTreeMap<(usize, usize), f64>,
    /// Descending importance.
    pub order: Vec<RankedNode>,
    /// Groups tied on both Copeland count and rating sum, ordered by id.
    pub ties: Vec<Vec<usize>>,
}

impl RankingResult {
    pub fn node_order(&self) -> Vec<usize> {
        self.order.iter().map(|r| r.node).collect()
    }

    /// `rank,node_id,copeland,rating_sum`, ranks starting at 1.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_lines(path, |w| {
            writeln!(w, "rank,node_id,copeland,rating_sum")?;
            for (r, n) in self.order.iter().enumerate() {
                writeln!(w, "{},{},{},{}", r + 1, n.node, n.copeland, n.rating_sum)?;
            }
            Ok(())
        })
    }

    /// `i,j,rating` for every evaluated pair.
    pub fn write_ratings_csv(&self, path: &Path) -> Result<()> {
        write_lines(path, |w| {
            writeln!(w, "i,j,rating")?;
            for ((i, j), r) in &self.ratings {
                writeln!(w, "{i},{j},{r}")?;
            }
            Ok(())
        })
    }
}

/// Node ids of a `rank,node_id,...` CSV in rank order. Ranks must run
/// `1..=len` without gaps.
pub fn read_ranking_csv(path: &Path) -> Result<Vec<usize>> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 || &header[0] != "rank" || &header[1] != "node_id" {
        return Err(Error::parse(path, 1, "expected header starting 'rank,node_id'"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = record_line(&rec);
        if rec.len() < 2 {
            return Err(Error::parse(path, line, "expected at least two fields"));
        }
        rows.push((parse_id(path, line, &rec[0])?, parse_id(path, line, &rec[1])?, line));
    }
    rows.sort_by_key(|r| r.0);
    let mut seen = std::collections::BTreeSet::new();
    for (k, &(rank, node, line)) in rows.iter().enumerate() {
        if rank != k + 1 {
            return Err(Error::parse(path, line, format!("ranks are not 1..={}", rows.len())));
        }
        if !seen.insert(node) {
            return Err(Error::parse(path, line, format!("node {node} ranked twice")));
        }
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

/// Inverse of [`RankingResult::write_ratings_csv`].
pub fn read_ratings_csv(path: &Path) -> Result<BTreeMap<(usize, usize), f64>> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["i", "j", "rating"] {
        return Err(Error::parse(path, 1, "expected header 'i,j,rating'"));
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = record_line(&rec);
        if rec.len() != 3 {
            return Err(Error::parse(path, line, "expected three fields"));
        }
        let key = (parse_id(path, line, &rec[0])?, parse_id(path, line, &rec[1])?);
        let r: f64 = rec[2]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("not a number: {:?}", &rec[2])))?;
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::parse(path, line, format!("rating {r} outside [0, 1]")));
        }
        if out.insert(key, r).is_some() {
            return Err(Error::parse(path, line, format!("duplicate pair {key:?}")));
        }
    }
    Ok(out)
}

pub(crate) fn write_lines(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Totalizes pairwise ratings over `nodes`: Copeland count first, then
/// rating sum, then ascending node id. Every ordered pair must be rated.
pub fn rank_nodes(nodes: &[usize], ratings: BTreeMap<(usize, usize), f64>) -> Result<RankingResult> {
    let mut order = Vec::with_capacity(nodes.len());
    for &i in nodes {
        let mut copeland = 0;
        let mut rating_sum = 0.0;
        for &j in nodes {
            if i == j {
                continue;
            }
            let r = *ratings
                .get(&(i, j))
                .ok_or_else(|| invalid!("missing rating for pair ({i}, {j})"))?;
            if r > 0.5 {
                copeland += 1;
            }
            rating_sum += r;
        }
        order.push(RankedNode {
            node: i,
            copeland,
            rating_sum,
        });
    }
    order.sort_by(|a, b| {
        b.copeland
            .cmp(&a.copeland)
            .then(b.rating_sum.total_cmp(&a.rating_sum))
            .then(a.node.cmp(&b.node))
    });
    let mut ties = Vec::new();
    let mut start = 0;
    for k in 1..=order.len() {
        let same = k < order.len()
            && order[k].copeland == order[start].copeland
            && order[k].rating_sum == order[start].rating_sum;
        if !same {
            if k - start > 1 {
                ties.push(order[start..k].iter().map(|r| r.node).collect());
            }
            start = k;
        }
    }
    Ok(RankingResult {
        ratings,
        order,
        ties,
    })
}
