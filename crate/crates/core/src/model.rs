//! Encoder plus Siamese head as one trainable unit: pair scoring, loss and
//! gradient over a batch of labelled pairs, and checkpoint files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::embed::{EmbedDims, EmbedParams, EncoderInputs, NodeTape};
use crate::error::{invalid, Error, Result};
use crate::mgwalk::{parse_kv_line, SampleSet, WalkConfig};
use crate::ranker::{bce_term, rank_nodes, write_lines, RankerDims, RankerParams, RankingResult, BCE_EPS};
use crate::rng::{self, stage};
use crate::tensor::{sigmoid, Matrix};

const CHECKPOINT_MAGIC: &str = "roadrank-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// Plain random walks (`alpha = 1`).
    NoMg,
    /// Pooling over the initial encodings, no recurrent layer.
    NoBiLstm,
    /// Scaled attribute rows go straight into the ranker.
    NoEmb,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoMg, Ablation::NoBiLstm, Ablation::NoEmb];

    pub fn uses_samples(self) -> bool {
        self != Ablation::NoEmb
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoMg => "NoMG",
            Ablation::NoBiLstm => "NoBiLSTM",
            Ablation::NoEmb => "NoEmb",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Ablation::Full),
            "nomg" => Ok(Ablation::NoMg),
            "nobilstm" => Ok(Ablation::NoBiLstm),
            "noemb" => Ok(Ablation::NoEmb),
            _ => Err(invalid!("unknown ablation mode {s:?} (expected full, NoMG, NoBiLSTM or NoEmb)")),
        }
    }
}

/// What a given ablation changes in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineVariant {
    pub ablation: Ablation,
    pub walk: WalkConfig,
    pub embedding: bool,
    pub lstm: bool,
}

pub fn apply_ablation(ablation: Ablation, walk: &WalkConfig) -> PipelineVariant {
    let mut walk = *walk;
    if ablation == Ablation::NoMg {
        walk.alpha = 1.0;
    }
    PipelineVariant {
        ablation,
        walk,
        embedding: ablation != Ablation::NoEmb,
        lstm: matches!(ablation, Ablation::Full | Ablation::NoMg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub m: usize,
    /// Initial encoding width.
    pub x: usize,
    /// Embedding width; must be a multiple of 4.
    pub hdim: usize,
}

impl ModelShape {
    pub fn new(m: usize) -> Self {
        Self { m, x: 8, hdim: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.x == 0 {
            return Err(invalid!("m and x must be positive"));
        }
        if self.hdim == 0 || self.hdim % 4 != 0 {
            return Err(invalid!("hdim must be a positive multiple of 4, got {}", self.hdim));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub label: u8,
}

/// Everything a forward pass reads besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct ModelInputs<'a> {
    pub features: &'a EncoderInputs,
    /// Required unless the model runs without an encoder.
    pub samples: Option<&'a SampleSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub ablation: Ablation,
    pub shape: ModelShape,
    pub embed: Option<EmbedParams>,
    pub ranker: RankerParams,
}

impl Model {
    fn build(ablation: Ablation, shape: ModelShape, rng: Option<&mut rng::StreamRng>) -> Result<Self> {
        shape.validate()?;
        let dims = EmbedDims {
            m: shape.m,
            x: shape.x,
            dim: matches!(ablation, Ablation::Full | Ablation::NoMg).then_some(shape.hdim / 4),
        };
        let with_embed = ablation != Ablation::NoEmb;
        let input = if with_embed { dims.out_dim() } else { shape.m };
        let rdims = RankerDims::new(input);
        let (embed, ranker) = match rng {
            Some(r) => (
                with_embed.then(|| EmbedParams::init(dims, r)),
                RankerParams::init(rdims, r),
            ),
            None => (
                with_embed.then(|| EmbedParams::zeros(dims)),
                RankerParams::zeros(rdims),
            ),
        };
        Ok(Self {
            ablation,
            shape,
            embed,
            ranker,
        })
    }

    /// Seeded initialization.
    pub fn init(ablation: Ablation, shape: ModelShape, seed: u64) -> Result<Self> {
        Self::build(ablation, shape, Some(&mut rng::stream(seed, &[stage::INIT])))
    }

    pub fn zeros(ablation: Ablation, shape: ModelShape) -> Result<Self> {
        Self::build(ablation, shape, None)
    }

    /// All-zero model of identical structure, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Width of the ranker's branch input.
    pub fn branch_width(&self) -> usize {
        self.ranker.dims().input
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.embed.as_ref().map(EmbedParams::tensors).unwrap_or_default();
        out.extend(self.ranker.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.embed.as_mut().map(EmbedParams::tensors_mut).unwrap_or_default();
        out.extend(self.ranker.tensors_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    fn check_inputs(&self, inputs: &ModelInputs<'_>) -> Result<()> {
        if inputs.features.m() != self.shape.m {
            return Err(Error::Dimension(format!(
                "model expects {} attributes, inputs have {}",
                self.shape.m,
                inputs.features.m()
            )));
        }
        if self.embed.is_some() {
            let s = inputs
                .samples
                .ok_or_else(|| invalid!("the {} model needs a sample set", self.ablation))?;
            if s.n() != inputs.features.n() || s.m() != inputs.features.m() {
                return Err(Error::Dimension("sample set and network disagree".into()));
            }
            if self.ablation == Ablation::NoMg && !s.is_node_only() {
                return Err(invalid!("NoMG needs node-only walks (alpha = 1)"));
            }
        }
        Ok(())
    }

    fn check_node(&self, inputs: &ModelInputs<'_>, v: usize) -> Result<()> {
        if v >= inputs.features.n() {
            return Err(invalid!("node id {v} out of range 0..{}", inputs.features.n()));
        }
        Ok(())
    }

    /// Branch inputs (embeddings, or scaled attributes without an encoder)
    /// for `nodes`, in order.
    pub fn embeddings(&self, inputs: &ModelInputs<'_>, nodes: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(inputs)?;
        for &v in nodes {
            self.check_node(inputs, v)?;
        }
        Ok(match (&self.embed, inputs.samples) {
            (Some(p), Some(s)) => {
                let encoded = p.encode_vertices(inputs.features);
                crate::par::map_ordered(nodes, |&i| p.embed_node(s, &encoded, i, false).0)
            }
            _ => nodes.iter().map(|&i| inputs.features.node_row(i).to_vec()).collect(),
        })
    }

    /// Ratings for `pairs` in inference mode.
    pub fn rate_pairs(&self, inputs: &ModelInputs<'_>, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let mut nodes: Vec<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let h = self.embeddings(inputs, &nodes)?;
        let s: BTreeMap<usize, Vec<f64>> = nodes
            .iter()
            .zip(crate::par::map_ordered(&h, |h| self.ranker.branch_tape(h).output().to_vec()))
            .map(|(&v, s)| (v, s))
            .collect();
        Ok(pairs
            .iter()
            .map(|(i, j)| sigmoid(self.ranker.logit(&s[i], &s[j])))
            .collect())
    }

    /// Rates every ordered pair over `nodes` and aggregates the ranking.
    pub fn rank(&self, inputs: &ModelInputs<'_>, nodes: &[usize]) -> Result<RankingResult> {
        if nodes.is_empty() {
            return Err(invalid!("no nodes to rank"));
        }
        let pairs: Vec<(usize, usize)> = nodes
            .iter()
            .flat_map(|&i| nodes.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
            .collect();
        let ratings = self.rate_pairs(inputs, &pairs)?;
        rank_nodes(nodes, pairs.into_iter().zip(ratings).collect())
    }

    /// Mean cross-entropy over `pairs` in inference mode.
    pub fn loss(&self, inputs: &ModelInputs<'_>, pairs: &[Pair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(invalid!("no pairs"));
        }
        let ij: Vec<(usize, usize)> = pairs.iter().map(|p| (p.i, p.j)).collect();
        let r = self.rate_pairs(inputs, &ij)?;
        let total: f64 = r
            .iter()
            .zip(pairs)
            .map(|(&r, p)| bce_term(r, f64::from(p.label)))
            .sum();
        Ok(total / pairs.len() as f64)
    }

    /// Mean cross-entropy over `pairs` and its gradient w.r.t. every
    /// parameter. With `dropout = Some((rate, rng))`, each branch input of
    /// each pair gets its own inverted-dropout mask.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        inputs: &ModelInputs<'_>,
        pairs: &[Pair],
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<(f64, Model)> {
        if pairs.is_empty() {
            return Err(invalid!("no pairs"));
        }
        self.check_inputs(inputs)?;
        let mut nodes: Vec<usize> = pairs.iter().flat_map(|p| [p.i, p.j]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        for &v in &nodes {
            self.check_node(inputs, v)?;
        }
        let slot: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(k, &v)| (v, k)).collect();

        let encoded = match &self.embed {
            Some(p) => p.encode_vertices(inputs.features),
            None => Vec::new(),
        };
        let (hs, tapes): (Vec<Vec<f64>>, Vec<Option<NodeTape>>) = match (&self.embed, inputs.samples) {
            (Some(p), Some(s)) => {
                crate::par::map_ordered(&nodes, |&i| p.embed_node(s, &encoded, i, true))
                    .into_iter()
                    .unzip()
            }
            _ => nodes
                .iter()
                .map(|&i| (inputs.features.node_row(i).to_vec(), None))
                .collect(),
        };

        let mut grad = self.zeros_like();
        let mut dh: Vec<Vec<f64>> = hs.iter().map(|h| vec![0.0; h.len()]).collect();
        let scale = 1.0 / pairs.len() as f64;
        let mut total = 0.0;
        for pair in pairs {
            let (a, b) = (slot[&pair.i], slot[&pair.j]);
            let (mi, mj) = match dropout.as_mut() {
                Some((rate, r)) => (
                    Some(dropout_mask(hs[a].len(), *rate, &mut **r)),
                    Some(dropout_mask(hs[b].len(), *rate, &mut **r)),
                ),
                None => (None, None),
            };
            let ti = self.ranker.branch_tape(&masked(&hs[a], mi.as_deref()));
            let tj = self.ranker.branch_tape(&masked(&hs[b], mj.as_deref()));
            let z = self.ranker.logit(ti.output(), tj.output());
            let p = sigmoid(z);
            let y = f64::from(pair.label);
            total += bce_term(p, y);
            // d/dz of the clamped loss; zero where the clamp is active
            let dz = if p < BCE_EPS || p > 1.0 - BCE_EPS { 0.0 } else { (p - y) * scale };
            let (dhi, dhj) = self.ranker.backward_pair(&ti, &tj, dz, &mut grad.ranker);
            accumulate(&mut dh[a], &dhi, mi.as_deref());
            accumulate(&mut dh[b], &dhj, mj.as_deref());
        }

        if let Some(p) = &self.embed {
            let work: Vec<usize> = (0..nodes.len()).collect();
            let parts = crate::par::map_ordered(&work, |&k| {
                let mut g = grad.embed.as_ref().expect("same structure").clone();
                let tape = tapes[k].as_ref().expect("recorded");
                p.backward(inputs.features, &encoded, tape, &dh[k], &mut g);
                g
            });
            let ge = grad.embed.as_mut().expect("same structure");
            for part in parts {
                for (acc, t) in ge.tensors_mut().into_iter().zip(part.tensors()) {
                    acc.add_assign(t.1);
                }
            }
        }
        Ok((total * scale, grad))
    }

    pub fn write_checkpoint(&self, path: &Path, seed: u64) -> Result<()> {
        use std::io::Write;
        write_lines(path, |w| {
            writeln!(w, "{CHECKPOINT_MAGIC}")?;
            let dim = self
                .embed
                .as_ref()
                .and_then(|e| e.dims().dim)
                .map_or("none".to_owned(), |d| d.to_string());
            writeln!(
                w,
                "ablation={} m={} x={} dim={dim} hdim={} seed={seed} antisymmetric={}",
                self.ablation, self.shape.m, self.shape.x, self.shape.hdim, self.ranker.antisymmetric
            )?;
            for (name, t) in self.tensors() {
                writeln!(w, "tensor {name} {} {}", t.rows(), t.cols())?;
                for r in 0..t.rows() {
                    let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:?}")).collect();
                    writeln!(w, "{}", row.join(" "))?;
                }
            }
            Ok(())
        })
    }

    /// Returns the model and the seed recorded in the file.
    pub fn read_checkpoint(path: &Path) -> Result<(Model, u64)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
        let perr = |line: usize, msg: String| Error::parse(path, line, msg);
        match lines.next() {
            Some((_, l)) if l.trim() == CHECKPOINT_MAGIC => {}
            _ => return Err(perr(1, format!("expected header {CHECKPOINT_MAGIC:?}"))),
        }
        let (ln, meta) = lines.next().ok_or_else(|| perr(2, "missing metadata line".into()))?;
        let kv: BTreeMap<String, String> = parse_kv_line(meta).map_err(|e| perr(ln, e))?.into_iter().collect();
        let get = |k: &str| kv.get(k).ok_or_else(|| perr(ln, format!("missing key {k}")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| perr(ln, format!("bad value for {k}"))) };
        let ablation: Ablation = get("ablation")?.parse()?;
        let shape = ModelShape {
            m: num("m")?,
            x: num("x")?,
            hdim: num("hdim")?,
        };
        let seed: u64 = get("seed")?.parse().map_err(|_| perr(ln, "bad seed".into()))?;
        let mut model = Model::zeros(ablation, shape)?;
        model.ranker.antisymmetric = get("antisymmetric")? == "true";

        let names: Vec<(String, (usize, usize))> =
            model.tensors().into_iter().map(|(n, t)| (n, t.shape())).collect();
        for ((name, shape), t) in names.into_iter().zip(model.tensors_mut()) {
            let (ln, head) = lines.next().ok_or_else(|| perr(0, format!("missing tensor {name}")))?;
            let want = format!("tensor {name} {} {}", shape.0, shape.1);
            if head.trim() != want {
                return Err(perr(ln, format!("expected {want:?}, found {head:?}")));
            }
            for r in 0..shape.0 {
                let (ln, row) = lines.next().ok_or_else(|| perr(0, format!("tensor {name} truncated")))?;
                let vals: Vec<f64> = row
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| perr(ln, format!("bad number: {e}")))?;
                if vals.len() != shape.1 {
                    return Err(perr(ln, format!("expected {} values, found {}", shape.1, vals.len())));
                }
                t.row_mut(r).copy_from_slice(&vals);
            }
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(perr(ln, format!("unexpected content {extra:?}")));
        }
        if !model.is_finite() {
            return Err(invalid!("checkpoint contains non-finite values"));
        }
        Ok((model, seed))
    }
}

fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn masked(h: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => h.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => h.to_vec(),
    }
}

fn accumulate(acc: &mut [f64], d: &[f64], mask: Option<&[f64]>) {
    for (k, (a, g)) in acc.iter_mut().zip(d).enumerate() {
        *a += g * mask.map_or(1.0, |m| m[k]);
    }
}
