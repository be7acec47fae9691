//! Sequence encoder: per-vertex affine+tanh input layer, a bidirectional
//! LSTM over each sampled sequence, and two-stage mean pooling into one
//! embedding per node.
//!
//! Forward passes can record a tape so that [`EmbedParams::backward`] can
//! propagate an embedding gradient back to every parameter.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::mgwalk::SampleSet;
use crate::tensor::{add_into, sigmoid, Matrix};

/// Gate order used for every per-gate array: input, forget, candidate, output.
pub const GATES: [&str; 4] = ["i", "f", "c", "o"];

/// Per-vertex encoder inputs: one feature row per node. Attribute vertices
/// (`n + k`) are encoded from a one-hot row and need no storage.
#[derive(Debug, Clone)]
pub struct EncoderInputs {
    n: usize,
    m: usize,
    features: Vec<f64>,
}

impl EncoderInputs {
    /// `features` is row-major `n x m`.
    pub fn new(n: usize, m: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != n * m {
            return Err(Error::Dimension(format!(
                "feature matrix has {} entries, expected {n} x {m}",
                features.len()
            )));
        }
        Ok(Self { n, m, features })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn node_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.m..(i + 1) * self.m]
    }

    fn check(&self, v: usize) -> Result<()> {
        if v >= self.n + self.m {
            return Err(invalid!("vertex id {v} out of range 0..{}", self.n + self.m));
        }
        Ok(())
    }
}

/// `x = tanh(a · W + b)` for a node row or attribute one-hot `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputLayer {
    /// `m x x`
    pub w: Matrix,
    /// `1 x x`
    pub b: Matrix,
}

impl InputLayer {
    pub fn width(&self) -> usize {
        self.w.cols()
    }

    fn pre_activation(&self, inputs: &EncoderInputs, v: usize) -> Vec<f64> {
        let mut z = self.b.row(0).to_vec();
        if v < inputs.n {
            self.w.vecmul_acc(inputs.node_row(v), &mut z);
        } else {
            add_into(&mut z, self.w.row(v - inputs.n));
        }
        z
    }

    pub fn encode_vertex(&self, inputs: &EncoderInputs, v: usize) -> Vec<f64> {
        let mut x = self.pre_activation(inputs, v);
        x.iter_mut().for_each(|e| *e = e.tanh());
        x
    }

    /// Accumulates gradients for the encoding `x` of vertex `v` given `dx`.
    fn backward(&self, inputs: &EncoderInputs, v: usize, x: &[f64], dx: &[f64], grad: &mut InputLayer) {
        let dz: Vec<f64> = x.iter().zip(dx).map(|(x, d)| d * (1.0 - x * x)).collect();
        add_into(grad.b.row_mut(0), &dz);
        if v < inputs.n {
            grad.w.add_outer(inputs.node_row(v), &dz);
        } else {
            add_into(grad.w.row_mut(v - inputs.n), &dz);
        }
    }
}

/// Encodes every vertex id of `seq`.
pub fn initial_encode(seq: &[usize], inputs: &EncoderInputs, p: &InputLayer) -> Result<Vec<Vec<f64>>> {
    seq.iter()
        .map(|&v| {
            inputs.check(v)?;
            Ok(p.encode_vertex(inputs, v))
        })
        .collect()
}

/// One LSTM direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `x x dim`, one per gate
    pub w_x: [Matrix; 4],
    /// `dim x dim`, one per gate
    pub w_h: [Matrix; 4],
    /// `1 x dim`, one per gate
    pub b: [Matrix; 4],
}

impl LstmCell {
    fn zeros(x: usize, dim: usize) -> Self {
        Self {
            w_x: std::array::from_fn(|_| Matrix::zeros(x, dim)),
            w_h: std::array::from_fn(|_| Matrix::zeros(dim, dim)),
            b: std::array::from_fn(|_| Matrix::zeros(1, dim)),
        }
    }

    fn init<R: Rng + ?Sized>(x: usize, dim: usize, rng: &mut R) -> Self {
        let bx = 1.0 / (x as f64).sqrt();
        let bh = 1.0 / (dim as f64).sqrt();
        Self {
            w_x: std::array::from_fn(|_| Matrix::uniform(x, dim, bx, rng)),
            w_h: std::array::from_fn(|_| Matrix::uniform(dim, dim, bh, rng)),
            b: std::array::from_fn(|_| Matrix::uniform(1, dim, bh, rng)),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_h[0].cols()
    }
}

/// Width of one recorded step in units of `dim`:
/// `h_prev, c_prev, i, f, c~, o, tanh(c), h, c`.
const REC: usize = 9;
const H_AT: usize = 7;

/// An [`LstmCell`] with its gates packed side by side: row `k` of `w` holds
/// the weights of input `k` (then hidden unit `k - x`) for all `4·dim`
/// gate units, so one step is a single pass over `x + dim` rows.
#[derive(Debug, Clone)]
struct Packed {
    x: usize,
    d: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Packed {
    fn zeros(x: usize, d: usize) -> Self {
        Self { x, d, w: vec![0.0; (x + d) * 4 * d], b: vec![0.0; 4 * d] }
    }

    fn of(cell: &LstmCell) -> Self {
        let (x, d) = (cell.w_x[0].rows(), cell.dim());
        let mut p = Self::zeros(x, d);
        for g in 0..4 {
            for k in 0..x + d {
                let src = if k < x { cell.w_x[g].row(k) } else { cell.w_h[g].row(k - x) };
                p.w[k * 4 * d + g * d..][..d].copy_from_slice(src);
            }
            p.b[g * d..][..d].copy_from_slice(cell.b[g].row(0));
        }
        p
    }

    /// Adds packed values into the per-gate tensors of `cell`.
    fn add_to(&self, cell: &mut LstmCell) {
        let (x, d) = (self.x, self.d);
        for g in 0..4 {
            for k in 0..x + d {
                let dst = if k < x { cell.w_x[g].row_mut(k) } else { cell.w_h[g].row_mut(k - x) };
                add_into(dst, &self.w[k * 4 * d + g * d..][..d]);
            }
            add_into(cell.b[g].row_mut(0), &self.b[g * d..][..d]);
        }
    }

    fn row(&self, k: usize) -> &[f64] {
        let w = 4 * self.d;
        &self.w[k * w..(k + 1) * w]
    }

    fn stride(&self) -> usize {
        REC * self.d
    }

    /// One step; `rec[..2·dim]` must already hold `h_prev, c_prev`.
    fn step_into(&self, x: &[f64], rec: &mut [f64]) {
        let d = self.d;
        let (prev, rest) = rec.split_at_mut(2 * d);
        let (h_prev, c_prev) = prev.split_at(d);
        let (gates, rest) = rest.split_at_mut(4 * d);
        gates.copy_from_slice(&self.b);
        for (k, &a) in x.iter().chain(h_prev.iter()).enumerate() {
            if a != 0.0 {
                for (z, w) in gates.iter_mut().zip(self.row(k)) {
                    *z += a * w;
                }
            }
        }
        for (u, z) in gates.iter_mut().enumerate() {
            *z = if u / d == 2 { z.tanh() } else { sigmoid(*z) };
        }
        let (tanh_c, rest) = rest.split_at_mut(d);
        let (h, c) = rest.split_at_mut(d);
        for j in 0..d {
            c[j] = gates[d + j] * c_prev[j] + gates[j] * gates[2 * d + j];
            tanh_c[j] = c[j].tanh();
            h[j] = gates[3 * d + j] * tanh_c[j];
        }
    }

    /// Runs from zero state, step `t` reading `x_at(t)`, and writes one
    /// record per step into `rec`.
    fn run_into<'a>(&self, steps: usize, x_at: impl Fn(usize) -> &'a [f64], rec: &mut [f64]) {
        let d = self.d;
        let s = self.stride();
        for t in 0..steps {
            let (done, cur) = rec.split_at_mut(t * s);
            let cur = &mut cur[..s];
            if t == 0 {
                cur[..2 * d].fill(0.0);
            } else {
                let prev = &done[(t - 1) * s..];
                cur[..2 * d].copy_from_slice(&prev[H_AT * d..(H_AT + 2) * d]);
            }
            self.step_into(x_at(t), cur);
        }
    }

    /// Hidden state of step `t` in a record buffer.
    fn h_of<'r>(&self, rec: &'r [f64], t: usize) -> &'r [f64] {
        let at = t * self.stride() + H_AT * self.d;
        &rec[at..at + self.d]
    }

    /// Backpropagation through time into the packed gradient `grad`.
    /// `dh_at(t)` is the loss gradient w.r.t. the hidden output of step `t`;
    /// `dx_out(t, dx)` receives the gradient w.r.t. the step's input.
    fn backward_into<'a>(
        &self,
        steps: usize,
        x_at: impl Fn(usize) -> &'a [f64],
        rec: &[f64],
        dh_at: impl Fn(usize) -> &'a [f64],
        grad: &mut Packed,
        mut dx_out: impl FnMut(usize, &[f64]),
    ) {
        let (xw, d) = (self.x, self.d);
        let s = self.stride();
        let mut dz = vec![0.0; 4 * d];
        let mut dh_next = vec![0.0; d];
        let mut dc_next = vec![0.0; d];
        let mut dx = vec![0.0; xw];
        for t in (0..steps).rev() {
            let r = &rec[t * s..(t + 1) * s];
            let (h_prev, c_prev) = (&r[..d], &r[d..2 * d]);
            let (i, f, g, o) = (&r[2 * d..3 * d], &r[3 * d..4 * d], &r[4 * d..5 * d], &r[5 * d..6 * d]);
            let tanh_c = &r[6 * d..7 * d];
            let dh_t = dh_at(t);
            for j in 0..d {
                let dh = dh_t[j] + dh_next[j];
                let dc = dc_next[j] + dh * o[j] * (1.0 - tanh_c[j] * tanh_c[j]);
                dz[j] = dc * g[j] * i[j] * (1.0 - i[j]);
                dz[d + j] = dc * c_prev[j] * f[j] * (1.0 - f[j]);
                dz[2 * d + j] = dc * i[j] * (1.0 - g[j] * g[j]);
                dz[3 * d + j] = dh * tanh_c[j] * o[j] * (1.0 - o[j]);
                dc_next[j] = dc * f[j];
            }
            add_into(&mut grad.b, &dz);
            let x = x_at(t);
            for (k, &a) in x.iter().chain(h_prev.iter()).enumerate() {
                let dot: f64 = self.row(k).iter().zip(&dz).map(|(w, z)| w * z).sum();
                if k < xw {
                    dx[k] = dot;
                } else {
                    dh_next[k - xw] = dot;
                }
                if a != 0.0 {
                    let w = 4 * d;
                    for (gw, z) in grad.w[k * w..(k + 1) * w].iter_mut().zip(&dz) {
                        *gw += a * z;
                    }
                }
            }
            dx_out(t, &dx);
        }
    }
}

/// Forward and backward LSTM directions with independent parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn dim(&self) -> usize {
        self.fwd.dim()
    }
}

/// Per-position concatenation of the forward hidden state and the backward
/// hidden state (the latter computed on the reversed sequence).
pub fn bilstm_forward(xs: &[Vec<f64>], p: &BiLstm) -> Vec<Vec<f64>> {
    let l = xs.len();
    let (fwd, bwd) = (Packed::of(&p.fwd), Packed::of(&p.bwd));
    let mut rf = vec![0.0; l * fwd.stride()];
    let mut rb = vec![0.0; l * bwd.stride()];
    fwd.run_into(l, |t| &xs[t], &mut rf);
    bwd.run_into(l, |t| &xs[l - 1 - t], &mut rb);
    (0..l)
        .map(|t| {
            let mut h = fwd.h_of(&rf, t).to_vec();
            h.extend_from_slice(bwd.h_of(&rb, l - 1 - t));
            h
        })
        .collect()
}

/// Mean over sequences per position, then `H = mean[1] ⊕ mean(mean[2..])`.
pub fn pool_embedding(hs: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let num = hs.len();
    if num == 0 {
        return Err(invalid!("no sequences to pool"));
    }
    let l = hs[0].len();
    if l < 2 {
        return Err(invalid!("sequence length must be at least 2 to pool, got {l}"));
    }
    let w = hs[0][0].len();
    let mut first = vec![0.0; w];
    let mut rest = vec![0.0; w];
    for seq in hs {
        if seq.len() != l {
            return Err(Error::Dimension("sequences of unequal length".into()));
        }
        add_into(&mut first, &seq[0]);
        for h in &seq[1..] {
            add_into(&mut rest, h);
        }
    }
    first.iter_mut().for_each(|v| *v /= num as f64);
    rest.iter_mut().for_each(|v| *v /= (num * (l - 1)) as f64);
    first.extend(rest);
    Ok(first)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedDims {
    /// Attribute count (input width).
    pub m: usize,
    /// Initial encoding width.
    pub x: usize,
    /// LSTM hidden size per direction; `None` when the recurrent layer is
    /// bypassed.
    pub dim: Option<usize>,
}

impl EmbedDims {
    /// Width of the pooled embedding: `4·dim`, or `2·x` without the LSTM.
    pub fn out_dim(&self) -> usize {
        match self.dim {
            Some(d) => 4 * d,
            None => 2 * self.x,
        }
    }
}

/// All learnable tensors of the embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    pub input: InputLayer,
    pub lstm: Option<BiLstm>,
}

/// Recorded forward pass for one node.
pub struct NodeTape {
    num: usize,
    l: usize,
    /// Distinct vertex ids of the sequences, ascending.
    distinct: Vec<usize>,
    /// Per position, `num x l`, the index into `distinct`.
    local: Vec<u32>,
    /// LSTM step records: per sequence, `l` forward then `l` backward steps.
    rec: Vec<f64>,
}

impl EmbedParams {
    pub fn zeros(dims: EmbedDims) -> Self {
        Self {
            input: InputLayer {
                w: Matrix::zeros(dims.m, dims.x),
                b: Matrix::zeros(1, dims.x),
            },
            lstm: dims.dim.map(|d| BiLstm {
                fwd: LstmCell::zeros(dims.x, d),
                bwd: LstmCell::zeros(dims.x, d),
            }),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per tensor.
    pub fn init<R: Rng + ?Sized>(dims: EmbedDims, rng: &mut R) -> Self {
        let bound = 1.0 / (dims.m as f64).sqrt();
        Self {
            input: InputLayer {
                w: Matrix::uniform(dims.m, dims.x, bound, rng),
                b: Matrix::uniform(1, dims.x, bound, rng),
            },
            lstm: dims.dim.map(|d| BiLstm {
                fwd: LstmCell::init(dims.x, d, rng),
                bwd: LstmCell::init(dims.x, d, rng),
            }),
        }
    }

    pub fn dims(&self) -> EmbedDims {
        EmbedDims {
            m: self.input.w.rows(),
            x: self.input.w.cols(),
            dim: self.lstm.as_ref().map(BiLstm::dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.dims().out_dim()
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("embed.W".to_owned(), &self.input.w), ("embed.b".to_owned(), &self.input.b)];
        if let Some(l) = &self.lstm {
            for (dir, cell) in [("fwd", &l.fwd), ("bwd", &l.bwd)] {
                for (g, name) in GATES.iter().enumerate() {
                    out.push((format!("lstm.{dir}.W_x{name}"), &cell.w_x[g]));
                    out.push((format!("lstm.{dir}.W_h{name}"), &cell.w_h[g]));
                    out.push((format!("lstm.{dir}.b_{name}"), &cell.b[g]));
                }
            }
        }
        out
    }

    /// Mutable tensors in the same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.input.w, &mut self.input.b];
        if let Some(l) = &mut self.lstm {
            for cell in [&mut l.fwd, &mut l.bwd] {
                for ((wx, wh), b) in cell.w_x.iter_mut().zip(cell.w_h.iter_mut()).zip(cell.b.iter_mut()) {
                    out.push(wx);
                    out.push(wh);
                    out.push(b);
                }
            }
        }
        out
    }

    /// Encodes every vertex (`n` nodes then `m` attributes) once.
    pub fn encode_vertices(&self, inputs: &EncoderInputs) -> Vec<Vec<f64>> {
        (0..inputs.n + inputs.m)
            .map(|v| self.input.encode_vertex(inputs, v))
            .collect()
    }

    /// Embedding of `node` from its sampled sequences, optionally recording
    /// a tape for [`Self::backward`]. `encoded` comes from
    /// [`Self::encode_vertices`].
    pub fn embed_node(
        &self,
        samples: &SampleSet,
        encoded: &[Vec<f64>],
        node: usize,
        record: bool,
    ) -> (Vec<f64>, Option<NodeTape>) {
        let (num, l) = (samples.config().num, samples.config().len);
        let w = self.out_dim() / 2;
        let mut first = vec![0.0; w];
        let mut rest = vec![0.0; w];
        let mut rec = Vec::new();
        match &self.lstm {
            Some(p) => {
                let (fwd, bwd) = (Packed::of(&p.fwd), Packed::of(&p.bwd));
                let d = p.dim();
                let s = fwd.stride();
                let span = 2 * l * s;
                rec = vec![0.0; if record { num * span } else { span }];
                for (k, seq) in samples.sequences(node).enumerate() {
                    let off = if record { k * span } else { 0 };
                    let (rf, rb) = rec[off..off + span].split_at_mut(l * s);
                    fwd.run_into(l, |t| &encoded[seq[t]], rf);
                    bwd.run_into(l, |t| &encoded[seq[l - 1 - t]], rb);
                    for t in 0..l {
                        let acc = if t == 0 { &mut first } else { &mut rest };
                        add_into(&mut acc[..d], fwd.h_of(rf, t));
                        add_into(&mut acc[d..], bwd.h_of(rb, l - 1 - t));
                    }
                }
            }
            None => {
                for seq in samples.sequences(node) {
                    add_into(&mut first, &encoded[seq[0]]);
                    for &v in &seq[1..] {
                        add_into(&mut rest, &encoded[v]);
                    }
                }
            }
        }
        first.iter_mut().for_each(|v| *v /= num as f64);
        rest.iter_mut().for_each(|v| *v /= (num * (l - 1)) as f64);
        first.extend(rest);
        let tape = record.then(|| {
            let all: Vec<usize> = samples.sequences(node).flatten().copied().collect();
            let mut distinct = all.clone();
            distinct.sort_unstable();
            distinct.dedup();
            let local = all
                .iter()
                .map(|v| distinct.binary_search(v).expect("present") as u32)
                .collect();
            NodeTape { num, l, distinct, local, rec }
        });
        (first, tape)
    }

    /// Accumulates into `grad` the parameter gradient of a loss whose
    /// gradient w.r.t. this node's embedding is `dh`.
    pub fn backward(
        &self,
        inputs: &EncoderInputs,
        encoded: &[Vec<f64>],
        tape: &NodeTape,
        dh: &[f64],
        grad: &mut EmbedParams,
    ) {
        let (num, l) = (tape.num, tape.l);
        let w = dh.len() / 2;
        let d_first: Vec<f64> = dh[..w].iter().map(|v| v / num as f64).collect();
        let d_rest: Vec<f64> = dh[w..].iter().map(|v| v / (num * (l - 1)) as f64).collect();

        // dx summed per distinct vertex; the tanh derivative depends only on
        // the vertex, so the input layer runs once per vertex
        let xw = self.input.width();
        let mut dvert = vec![0.0; tape.distinct.len() * xw];
        let mut add_dx = |u: u32, dx: &[f64]| {
            let u = u as usize;
            add_into(&mut dvert[u * xw..(u + 1) * xw], dx);
        };
        let x_of = |u: u32| encoded[tape.distinct[u as usize]].as_slice();
        match (&self.lstm, &mut grad.lstm) {
            (Some(p), Some(g)) => {
                let (fwd, bwd) = (Packed::of(&p.fwd), Packed::of(&p.bwd));
                let (mut gf, mut gb) = (Packed::zeros(fwd.x, fwd.d), Packed::zeros(bwd.x, bwd.d));
                let d = p.dim();
                let s = fwd.stride();
                let span = 2 * l * s;
                let dh_pos = |t: usize| if t == 0 { &d_first } else { &d_rest };
                for (k, seq) in tape.local.chunks_exact(l).enumerate() {
                    let (rf, rb) = tape.rec[k * span..(k + 1) * span].split_at(l * s);
                    fwd.backward_into(l, |t| x_of(seq[t]), rf, |t| &dh_pos(t)[..d], &mut gf, |t, dx| {
                        add_dx(seq[t], dx)
                    });
                    bwd.backward_into(
                        l,
                        |t| x_of(seq[l - 1 - t]),
                        rb,
                        |t| &dh_pos(l - 1 - t)[d..],
                        &mut gb,
                        |t, dx| add_dx(seq[l - 1 - t], dx),
                    );
                }
                gf.add_to(&mut g.fwd);
                gb.add_to(&mut g.bwd);
            }
            _ => {
                for seq in tape.local.chunks_exact(l) {
                    add_dx(seq[0], &d_first);
                    for &u in &seq[1..] {
                        add_dx(u, &d_rest);
                    }
                }
            }
        }
        for (u, &v) in tape.distinct.iter().enumerate() {
            self.input.backward(inputs, v, &encoded[v], &dvert[u * xw..(u + 1) * xw], &mut grad.input);
        }
    }
}

/// Embeddings of all nodes, row `i` for node `i`.
pub fn embed_all(samples: &SampleSet, inputs: &EncoderInputs, p: &EmbedParams) -> Result<Vec<Vec<f64>>> {
    if samples.n() != inputs.n || samples.m() != inputs.m {
        return Err(Error::Dimension("sample set and encoder inputs disagree".into()));
    }
    if p.input.w.rows() != inputs.m {
        return Err(Error::Dimension(format!(
            "encoder expects {} attributes, inputs have {}",
            p.input.w.rows(),
            inputs.m
        )));
    }
    let encoded = p.encode_vertices(inputs);
    Ok(crate::par::map_ordered(&(0..inputs.n).collect::<Vec<_>>(), |&i| {
        p.embed_node(samples, &encoded, i, false).0
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mgwalk::WalkConfig;
    use crate::rng;

    fn const_cell(x: usize, dim: usize, w: f64, b: f64) -> LstmCell {
        let mut c = LstmCell::zeros(x, dim);
        for g in 0..4 {
            c.w_x[g].fill(w);
            c.w_h[g].fill(w);
            c.b[g].fill(b);
        }
        c
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let inputs = EncoderInputs::new(2, 2, vec![3.0, 1.0, 0.5, 2.0]).unwrap();
        let p = EmbedParams::zeros(EmbedDims { m: 2, x: 3, dim: Some(2) });
        let xs = initial_encode(&[0, 2, 1, 3], &inputs, &p.input).unwrap();
        assert!(xs.iter().flatten().all(|v| *v == 0.0));
        assert!(initial_encode(&[4], &inputs, &p.input).is_err());
    }

    #[test]
    fn attribute_one_hot_encoding() {
        let inputs = EncoderInputs::new(1, 2, vec![0.0, 0.0]).unwrap();
        let mut w = Matrix::zeros(2, 3);
        w.row_mut(0)[0] = 1.0;
        w.row_mut(1)[1] = 1.0;
        let layer = InputLayer { w, b: Matrix::zeros(1, 3) };
        let xs = initial_encode(&[1], &inputs, &layer).unwrap();
        assert!((xs[0][0] - 0.761_594_155_955_764_9).abs() < 1e-12);
        assert_eq!(&xs[0][1..], &[0.0, 0.0]);
    }

    #[test]
    fn encodings_stay_inside_tanh_range() {
        let inputs = EncoderInputs::new(2, 2, vec![1.0, 0.0, 0.3, 1.0]).unwrap();
        let p = EmbedParams::init(EmbedDims { m: 2, x: 4, dim: Some(1) }, &mut rng::stream(1, &[]));
        for x in initial_encode(&[0, 2, 1, 3], &inputs, &p.input).unwrap() {
            assert!(x.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn zero_lstm_outputs_zero() {
        let p = BiLstm { fwd: LstmCell::zeros(2, 3), bwd: LstmCell::zeros(2, 3) };
        let out = bilstm_forward(&[vec![1.0, -2.0], vec![0.5, 0.5]], &p);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|h| h.len() == 6 && h.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn single_step_by_hand() {
        // x = 1, dim = 1, every weight 0.5, biases 0
        let cell = const_cell(1, 1, 0.5, 0.0);
        let mut rec = vec![0.0; REC];
        Packed::of(&cell).step_into(&[1.0], &mut rec);
        let (h, c) = (&rec[H_AT..H_AT + 1], &rec[H_AT + 1..]);
        let gate = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((gate - 0.6225).abs() < 1e-4);
        assert!((c[0] - gate * 0.5f64.tanh()).abs() < 1e-15);
        assert!((c[0] - 0.2876).abs() < 1e-4);
        assert!((h[0] - 0.174_269_7).abs() < 1e-6);
    }

    #[test]
    fn backward_half_is_reversed_run() {
        let mut r = rng::stream(5, &[]);
        let p = BiLstm { fwd: LstmCell::init(3, 2, &mut r), bwd: LstmCell::init(3, 2, &mut r) };
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let out = bilstm_forward(&xs, &p);
        let (fwd, bwd) = (Packed::of(&p.fwd), Packed::of(&p.bwd));
        let mut rec = vec![0.0; 4 * bwd.stride()];
        bwd.run_into(4, |t| &xs[3 - t], &mut rec);
        for (t, o) in out.iter().enumerate() {
            assert_eq!(&o[2..], bwd.h_of(&rec, 3 - t));
        }
        fwd.run_into(4, |t| &xs[t], &mut rec);
        for (t, o) in out.iter().enumerate() {
            assert_eq!(&o[..2], fwd.h_of(&rec, t));
        }
    }

    #[test]
    fn packing_round_trips() {
        let cell = LstmCell::init(3, 2, &mut rng::stream(4, &[]));
        let mut back = LstmCell::zeros(3, 2);
        Packed::of(&cell).add_to(&mut back);
        assert_eq!(back, cell);
    }

    #[test]
    fn pooling() {
        let v = vec![1.0, -2.0];
        let h = pool_embedding(&[vec![v.clone(), v.clone(), v.clone()]]).unwrap();
        assert_eq!(h, vec![1.0, -2.0, 1.0, -2.0]);

        // num = 2, l = 3, worked by hand:
        // position means: (2, 1), (1, 1), (4, 0); rest mean = (2.5, 0.5)
        let a = vec![vec![1.0, 0.0], vec![2.0, 2.0], vec![3.0, -1.0]];
        let b = vec![vec![3.0, 2.0], vec![0.0, 0.0], vec![5.0, 1.0]];
        assert_eq!(pool_embedding(&[a, b]).unwrap(), vec![2.0, 1.0, 2.5, 0.5]);

        assert!(pool_embedding(&[vec![v.clone()]]).is_err());
        assert!(pool_embedding(&[]).is_err());
    }

    fn toy_samples() -> (SampleSet, EncoderInputs) {
        let cfg = WalkConfig { alpha: 0.5, num: 3, len: 4, seed: 0 };
        let seqs = vec![
            0, 3, 1, 4, 0, 1, 2, 0, 0, 4, 2, 3, //
            1, 2, 0, 3, 1, 3, 1, 1, 1, 4, 0, 4, //
            2, 0, 1, 2, 2, 3, 2, 4, 2, 2, 2, 2,
        ];
        let s = SampleSet::from_raw(3, 2, cfg, seqs).unwrap();
        let inputs = EncoderInputs::new(3, 2, vec![0.0, 1.0, 0.5, 0.25, 1.0, 0.0]).unwrap();
        (s, inputs)
    }

    #[test]
    fn embed_all_shapes_and_zero_fixed_point() {
        let (s, inputs) = toy_samples();
        let p = EmbedParams::zeros(EmbedDims { m: 2, x: 8, dim: Some(2) });
        let h = embed_all(&s, &inputs, &p).unwrap();
        assert_eq!(h.len(), 3);
        assert!(h.iter().all(|r| r.len() == 8 && r.iter().all(|v| *v == 0.0)));
        assert_eq!(p.out_dim(), 8);
    }

    #[test]
    fn sequence_order_does_not_matter() {
        let (s, inputs) = toy_samples();
        let p = EmbedParams::init(EmbedDims { m: 2, x: 4, dim: Some(2) }, &mut rng::stream(2, &[]));
        let h = embed_all(&s, &inputs, &p).unwrap();
        let mut raw: Vec<usize> = (0..3).flat_map(|i| s.sequences(i).flatten().copied().collect::<Vec<_>>()).collect();
        // reverse the order of node 0's three sequences
        let node0: Vec<usize> = raw[..12].chunks(4).rev().flatten().copied().collect();
        raw[..12].copy_from_slice(&node0);
        let permuted = SampleSet::from_raw(3, 2, *s.config(), raw).unwrap();
        let h2 = embed_all(&permuted, &inputs, &p).unwrap();
        for (a, b) in h[0].iter().zip(&h2[0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    /// Central differences of `sum(c ⊙ H_node)` against the analytic backward.
    #[test]
    fn backward_matches_finite_differences() {
        let (s, inputs) = toy_samples();
        for dim in [Some(2), None] {
            let dims = EmbedDims { m: 2, x: 3, dim };
            let p = EmbedParams::init(dims, &mut rng::stream(8, &[]));
            let coef: Vec<f64> = (0..dims.out_dim()).map(|k| 0.3 + 0.17 * k as f64).collect();
            let objective = |p: &EmbedParams| -> f64 {
                let enc = p.encode_vertices(&inputs);
                let (h, _) = p.embed_node(&s, &enc, 1, false);
                h.iter().zip(&coef).map(|(a, b)| a * b).sum()
            };
            let enc = p.encode_vertices(&inputs);
            let (_, tape) = p.embed_node(&s, &enc, 1, true);
            let mut grad = EmbedParams::zeros(dims);
            p.backward(&inputs, &enc, &tape.unwrap(), &coef, &mut grad);

            let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
            let analytic: Vec<Vec<f64>> = grad.tensors().into_iter().map(|(_, t)| t.data().to_vec()).collect();
            let eps = 1e-5;
            for (ti, name) in names.iter().enumerate() {
                for e in 0..analytic[ti].len() {
                    let mut plus = p.clone();
                    plus.tensors_mut()[ti].data_mut()[e] += eps;
                    let mut minus = p.clone();
                    minus.tensors_mut()[ti].data_mut()[e] -= eps;
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                    let a = analytic[ti][e];
                    assert!((fd - a).abs() <= 1e-7 + 1e-5 * a.abs(), "{name}[{e}]: fd {fd} vs {a}");
                }
            }
        }
    }
}
