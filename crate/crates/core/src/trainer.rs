//! Stratified splitting, pair construction, the seeded training loop, and
//! finite-difference gradient checking.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::config::KvConfig;
use crate::embed::EncoderInputs;
use crate::error::{invalid, Error, Result};
use crate::graph::{csv_err, csv_reader, parse_id, record_line, NormalizedViews, RoadNetwork};
use crate::metrics::{diff_metric, micro_macro_f1};
use crate::mgwalk::{mgwalk_sample, SampleSet, WalkConfig};
use crate::model::{apply_ablation, Ablation, Model, ModelInputs, ModelShape, Pair};
use crate::optim::{Adam, AdamConfig};
use crate::ranker::{pair_label, write_lines};
use crate::rng::{self, stage, StreamRng};

/// Strata are merged until each holds at least this many nodes.
pub const MIN_PER_STRATUM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub dropout: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub strata: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub x: usize,
    pub hdim: usize,
    pub antisymmetric: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            dropout: 0.45,
            batch: 64,
            epochs: 100,
            fractions: [0.70, 0.15, 0.15],
            strata: 5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            ablation: Ablation::Full,
            x: 8,
            hdim: 8,
            antisymmetric: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid!("lr must be non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.batch == 0 {
            return Err(invalid!("batch must be at least 1"));
        }
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || (self.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(invalid!("split fractions must be in [0, 1] and sum to 1, got {:?}", self.fractions));
        }
        if self.strata == 0 {
            return Err(invalid!("strata must be at least 1"));
        }
        ModelShape { m: 1, x: self.x, hdim: self.hdim }.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Overrides fields from `key = value` pairs; unknown keys are ignored
    /// so one file can configure several stages.
    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.parse_value($key)? {
                    $field = v;
                }
            };
        }
        take!("lr", self.lr);
        take!("dropout", self.dropout);
        take!("batch", self.batch);
        take!("epochs", self.epochs);
        take!("train_frac", self.fractions[0]);
        take!("val_frac", self.fractions[1]);
        take!("test_frac", self.fractions[2]);
        take!("strata", self.strata);
        take!("beta1", self.beta1);
        take!("beta2", self.beta2);
        take!("eps", self.eps);
        take!("seed", self.seed);
        take!("x", self.x);
        take!("hdim", self.hdim);
        take!("antisymmetric", self.antisymmetric);
        if let Some(a) = kv.get("ablation") {
            self.ablation = a.parse()?;
        }
        Ok(())
    }

    /// `key=value` lines for every field, readable by [`Self::apply`].
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let [tr, va, te] = self.fractions;
        [
            ("lr", self.lr.to_string()),
            ("dropout", self.dropout.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("train_frac", tr.to_string()),
            ("val_frac", va.to_string()),
            ("test_frac", te.to_string()),
            ("strata", self.strata.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("seed", self.seed.to_string()),
            ("ablation", self.ablation.to_string()),
            ("x", self.x.to_string()),
            ("hdim", self.hdim.to_string()),
            ("antisymmetric", self.antisymmetric.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(invalid!("unknown split {s:?} (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Stratum of each node.
    pub stratum: Vec<usize>,
    /// Strata actually used after any reduction.
    pub strata: usize,
}

impl SplitAssignment {
    pub fn nodes(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_of(&self, node: usize) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|&s| self.nodes(s).binary_search(&node).is_ok())
    }

    /// `node_id,split,stratum`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        write_lines(path, |w| {
            writeln!(w, "node_id,split,stratum")?;
            for (i, s) in self.stratum.iter().enumerate() {
                let split = self.split_of(i).expect("every node is assigned");
                writeln!(w, "{i},{split},{s}")?;
            }
            Ok(())
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv_reader(path)?;
        let header = rdr
            .headers()
            .map_err(|e| Error::parse(path, 1, e.to_string()))?
            .clone();
        if header.iter().collect::<Vec<_>>() != ["node_id", "split", "stratum"] {
            return Err(Error::parse(path, 1, "expected header 'node_id,split,stratum'"));
        }
        let mut rows: BTreeMap<usize, (Split, usize)> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let line = record_line(&rec);
            if rec.len() != 3 {
                return Err(Error::parse(path, line, "expected three fields"));
            }
            let id = parse_id(path, line, &rec[0])?;
            let split: Split = rec[1].parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
            let stratum = parse_id(path, line, &rec[2])?;
            if rows.insert(id, (split, stratum)).is_some() {
                return Err(Error::parse(path, line, format!("duplicate node {id}")));
            }
        }
        let n = rows.len();
        if rows.keys().next_back().is_some_and(|&last| last + 1 != n) {
            return Err(invalid!("{}: node ids must cover 0..{n}", path.display()));
        }
        let mut out = SplitAssignment {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            stratum: Vec::with_capacity(n),
            strata: 0,
        };
        for (id, (split, s)) in rows {
            match split {
                Split::Train => out.train.push(id),
                Split::Val => out.val.push(id),
                Split::Test => out.test.push(id),
            }
            out.stratum.push(s);
            out.strata = out.strata.max(s + 1);
        }
        Ok(out)
    }
}

/// Buckets nodes into contiguous score-quantile bins (ties ordered by id)
/// and splits each bin by a seeded shuffle.
pub fn stratified_split(scores: &[f64], cfg: &TrainConfig) -> Result<SplitAssignment> {
    cfg.validate()?;
    let n = scores.len();
    if n < 3 {
        return Err(invalid!("need at least 3 nodes to split, got {n}"));
    }
    let mut strata = cfg.strata;
    if n / strata < MIN_PER_STRATUM {
        let reduced = (n / MIN_PER_STRATUM).max(1);
        if reduced < strata {
            log::warn!("{n} nodes are too few for {strata} strata; using {reduced}");
            strata = reduced;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    let mut out = SplitAssignment {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        stratum: vec![0; n],
        strata,
    };
    for b in 0..strata {
        let mut bin = order[b * n / strata..(b + 1) * n / strata].to_vec();
        bin.shuffle(&mut rng::stream(cfg.seed, &[stage::SPLIT, b as u64]));
        let size = bin.len();
        let n_train = ((cfg.fractions[0] * size as f64).round() as usize).min(size);
        let n_val = ((cfg.fractions[1] * size as f64).round() as usize).min(size - n_train);
        for (k, &v) in bin.iter().enumerate() {
            out.stratum[v] = b;
            if k < n_train {
                out.train.push(v);
            } else if k < n_train + n_val {
                out.val.push(v);
            } else {
                out.test.push(v);
            }
        }
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// All ordered pairs over `nodes` with ground-truth labels.
pub fn make_pairs(nodes: &[usize], scores: &[f64]) -> Result<Vec<Pair>> {
    if nodes.len() < 2 {
        return Err(invalid!("need at least two nodes to form pairs, got {}", nodes.len()));
    }
    if let Some(&v) = nodes.iter().find(|&&v| v >= scores.len()) {
        return Err(invalid!("node {v} has no score"));
    }
    let mut out = Vec::with_capacity(nodes.len() * (nodes.len() - 1));
    for &i in nodes {
        for &j in nodes {
            if i != j {
                out.push(Pair {
                    i,
                    j,
                    label: pair_label(scores[i], scores[j]),
                });
            }
        }
    }
    Ok(out)
}

/// Per-node encoder features: attributes min-max scaled per column.
pub fn encoder_inputs(net: &RoadNetwork) -> EncoderInputs {
    EncoderInputs::new(net.n(), net.m(), net.minmax_scaled()).expect("shape matches the network")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Inference-mode loss over all training pairs.
    pub train_loss: f64,
    pub val_micro_f1: f64,
    pub val_macro_f1: f64,
    pub val_diff: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation micro-F1.
    pub model: Model,
    pub best_epoch: usize,
    /// Epoch 0 is the untrained model.
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn write_history(&self, path: &Path, cfg: &TrainConfig, strata: usize) -> Result<()> {
        write_history(path, &self.history, cfg, strata, self.best_epoch)
    }
}

pub fn write_history(
    path: &Path,
    history: &[EpochRecord],
    cfg: &TrainConfig,
    strata: usize,
    best_epoch: usize,
) -> Result<()> {
    use std::io::Write;
    write_lines(path, |w| {
        writeln!(
            w,
            "# ablation={} strata={strata} epochs={} selection=best-val-micro-f1 best_epoch={best_epoch}",
            cfg.ablation, cfg.epochs
        )?;
        writeln!(w, "epoch,train_loss,val_micro_f1,val_macro_f1,val_diff")?;
        for r in history {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_micro_f1, r.val_macro_f1, r.val_diff
            )?;
        }
        Ok(())
    })
}

/// Pairwise and ranking quality of `model` over one node set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitEval {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub diff: f64,
}

pub fn evaluate_split(model: &Model, inputs: &ModelInputs<'_>, nodes: &[usize], scores: &[f64]) -> Result<SplitEval> {
    let pairs = make_pairs(nodes, scores)?;
    let ranking = model.rank(inputs, nodes)?;
    let predicted: Vec<u8> = pairs
        .iter()
        .map(|p| u8::from(ranking.ratings[&(p.i, p.j)] > 0.5))
        .collect();
    let truth: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let (micro_f1, macro_f1) = micro_macro_f1(&predicted, &truth)?;
    Ok(SplitEval {
        micro_f1,
        macro_f1,
        diff: diff_metric(&ranking.node_order(), scores)?,
    })
}

/// Mini-batch training with Adam on shuffled training pairs. Every random
/// choice comes from `cfg.seed`, and gradients are reduced in a fixed
/// order, so the result does not depend on the thread count.
pub fn train_model(
    net: &RoadNetwork,
    samples: Option<&SampleSet>,
    scores: &[f64],
    split: &SplitAssignment,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scores.len() != net.n() {
        return Err(Error::Dimension(format!("{} scores for {} nodes", scores.len(), net.n())));
    }
    let features = encoder_inputs(net);
    let inputs = ModelInputs {
        features: &features,
        samples: if cfg.ablation.uses_samples() { samples } else { None },
    };
    let mut model = Model::init(cfg.ablation, ModelShape { m: net.m(), x: cfg.x, hdim: cfg.hdim }, cfg.seed)?;
    model.ranker.antisymmetric = cfg.antisymmetric;
    let train_pairs = make_pairs(&split.train, scores)?;
    let mut opt = Adam::new(&model, cfg.adam());

    let record = |model: &Model, epoch: usize| -> Result<EpochRecord> {
        let v = evaluate_split(model, &inputs, &split.val, scores)?;
        Ok(EpochRecord {
            epoch,
            train_loss: model.loss(&inputs, &train_pairs)?,
            val_micro_f1: v.micro_f1,
            val_macro_f1: v.macro_f1,
            val_diff: v.diff,
        })
    };
    let mut history = vec![record(&model, 0)?];
    let mut best = (model.clone(), 0, history[0].val_micro_f1);

    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[stage::SHUFFLE, epoch as u64]));
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<Pair> = chunk.iter().map(|&k| train_pairs[k]).collect();
            let mut drng = rng::stream(cfg.seed, &[stage::DROPOUT, epoch as u64, b as u64]);
            let dropout: Option<(f64, &mut StreamRng)> = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut drng));
            let (loss, grad) = model.loss_and_grad(&inputs, &batch, dropout)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            opt.step(&mut model, &grad);
        }
        let r = record(&model, epoch)?;
        if !r.train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(cfg.batch),
                loss: r.train_loss,
            });
        }
        log::info!(
            "epoch {epoch}: train_loss={:.6} val_micro_f1={:.4} val_diff={:.4}",
            r.train_loss,
            r.val_micro_f1,
            r.val_diff
        );
        if r.val_micro_f1 >= best.2 {
            best = (model.clone(), epoch, r.val_micro_f1);
        }
        history.push(r);
    }
    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        history,
    })
}

/// One end-to-end run: sampling (as the ablation dictates), splitting,
/// training and test evaluation.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub split: SplitAssignment,
    pub samples: Option<SampleSet>,
    pub outcome: TrainOutcome,
    pub test: SplitEval,
}

pub fn run_experiment(net: &RoadNetwork, scores: &[f64], walk: &WalkConfig, cfg: &TrainConfig) -> Result<Experiment> {
    let variant = apply_ablation(cfg.ablation, walk);
    let samples = if cfg.ablation.uses_samples() {
        let views = NormalizedViews::new(net)?;
        Some(mgwalk_sample(net, &views, &variant.walk)?)
    } else {
        None
    };
    let split = stratified_split(scores, cfg)?;
    let outcome = train_model(net, samples.as_ref(), scores, &split, cfg)?;
    let features = encoder_inputs(net);
    let inputs = ModelInputs { features: &features, samples: samples.as_ref() };
    let test = evaluate_split(&outcome.model, &inputs, &split.test, scores)?;
    Ok(Experiment { split, samples, outcome, test })
}

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Lower bound on the relative-error denominator. Central differences at
/// `FD_STEP` on an O(1) loss carry about 1e-11 of rounding noise, so entries
/// whose gradient is smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error per tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

/// Compares the analytic gradient of the mean cross-entropy over `pairs`
/// with central differences on every parameter entry. The relative error
/// of one entry is `|a - f| / max(|a|, |f|, FD_FLOOR)`.
pub fn gradient_check(model: &Model, inputs: &ModelInputs<'_>, pairs: &[Pair]) -> Result<GradCheckReport> {
    let (_, grad) = model.loss_and_grad::<StreamRng>(inputs, pairs, None)?;
    let mut probe = model.clone();
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
    let mut per_tensor = Vec::with_capacity(names.len());
    for (t, name) in names.into_iter().enumerate() {
        let analytic = grad.tensors()[t].1.data().to_vec();
        let mut worst = 0.0f64;
        for (e, &a) in analytic.iter().enumerate() {
            let orig = probe.tensors()[t].1.data()[e];
            probe.tensors_mut()[t].data_mut()[e] = orig + FD_STEP;
            let up = probe.loss(inputs, pairs)?;
            probe.tensors_mut()[t].data_mut()[e] = orig - FD_STEP;
            let down = probe.loss(inputs, pairs)?;
            probe.tensors_mut()[t].data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(FD_FLOOR));
        }
        per_tensor.push((name, worst));
    }
    let max_rel_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_tensor,
        max_rel_error,
    })
}
