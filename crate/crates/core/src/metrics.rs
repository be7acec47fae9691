//! Pairwise classification F1 and the position-displacement ranking error.

use std::collections::HashMap;

use crate::error::{invalid, Error, Result};

/// Confusion counts with class 1 as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[u8], truth: &[u8]) -> Result<Self> {
        if predicted.is_empty() {
            return Err(invalid!("no labels"));
        }
        if predicted.len() != truth.len() {
            return Err(Error::Dimension(format!(
                "{} predictions but {} truth labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// `(micro, macro)` F1 over both classes.
pub fn micro_macro_f1(predicted: &[u8], truth: &[u8]) -> Result<(f64, f64)> {
    let c = Confusion::from_labels(predicted, truth)?;
    // Pooled over both classes: TP = correct, FP = FN = wrong.
    let correct = c.tp + c.tn;
    let wrong = c.fp + c.fn_;
    let micro = f1(correct, wrong, wrong);
    let macro_ = (f1(c.tp, c.fp, c.fn_) + f1(c.tn, c.fn_, c.fp)) / 2.0;
    Ok((micro, macro_))
}

/// Nodes of `z` in descending score order, ties by ascending id.
pub fn descending_order(z: &[usize], scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(&v) = z.iter().find(|&&v| v >= scores.len()) {
        return Err(invalid!("node {v} has no score"));
    }
    let mut d = z.to_vec();
    d.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(d)
}

/// Sum of position displacements between `z` and its descending-score
/// order, normalized by `⌊n²/2⌋`.
pub fn diff_metric(z: &[usize], scores: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(invalid!("empty ranking"));
    }
    let n = z.len();
    if n == 1 {
        return Ok(0.0);
    }
    let truth = descending_order(z, scores)?;
    let pos: HashMap<usize, usize> = truth.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    if pos.len() != n {
        return Err(invalid!("ranking contains duplicate nodes"));
    }
    let total: usize = z.iter().enumerate().map(|(k, v)| k.abs_diff(pos[v])).sum();
    Ok(total as f64 / (n * n / 2) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub diff: f64,
    pub pairs: usize,
    pub confusion: Confusion,
}

impl MetricReport {
    /// Scores a ranking over `z` against ground truth. `predicted` holds the
    /// pairwise decisions for `pairs`, whose truth comes from the scores.
    pub fn new(
        z: &[usize],
        pairs: &[(usize, usize)],
        predicted: &[u8],
        truth_scores: &[f64],
    ) -> Result<Self> {
        let truth: Vec<u8> = pairs
            .iter()
            .map(|&(i, j)| {
                if i.max(j) >= truth_scores.len() {
                    Err(invalid!("pair ({i}, {j}) has no score"))
                } else {
                    Ok(crate::ranker::pair_label(truth_scores[i], truth_scores[j]))
                }
            })
            .collect::<Result<_>>()?;
        let (micro_f1, macro_f1) = micro_macro_f1(predicted, &truth)?;
        Ok(Self {
            micro_f1,
            macro_f1,
            diff: diff_metric(z, truth_scores)?,
            pairs: pairs.len(),
            confusion: Confusion::from_labels(predicted, &truth)?,
        })
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let c = &self.confusion;
        format!(
            "micro_f1={}\nmacro_f1={}\ndiff={}\npairs={}\ntp={}\nfp={}\nfn={}\ntn={}\n",
            self.micro_f1, self.macro_f1, self.diff, self.pairs, c.tp, c.fp, c.fn_, c.tn
        )
    }
}

/// Pairwise labels a score vector implies for `pairs`.
pub fn labels_from_scores(pairs: &[(usize, usize)], scores: &[f64]) -> Vec<u8> {
    pairs
        .iter()
        .map(|&(i, j)| crate::ranker::pair_label(scores[i], scores[j]))
        .collect()
}

/// All ordered pairs `i != j` over `nodes`.
pub fn ordered_pairs(nodes: &[usize]) -> Vec<(usize, usize)> {
    nodes
        .iter()
        .flat_map(|&i| nodes.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f1_examples() {
        assert_eq!(micro_macro_f1(&[1, 0, 1], &[1, 0, 1]).unwrap(), (1.0, 1.0));
        let (micro, _) = micro_macro_f1(&[1, 0, 1, 1], &[1, 0, 0, 1]).unwrap();
        assert!((micro - 0.75).abs() < 1e-15);
        assert_eq!(micro_macro_f1(&[1, 0], &[0, 1]).unwrap(), (0.0, 0.0));
        assert!(micro_macro_f1(&[], &[]).is_err());
        assert!(micro_macro_f1(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn macro_hand_count() {
        // tp=2 fp=1 fn=0 tn=1: F1(1)=4/5, F1(0)=2/3
        let (_, m) = micro_macro_f1(&[1, 0, 1, 1], &[1, 0, 0, 1]).unwrap();
        assert!((m - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        // class 0 absent from both sides contributes 0
        assert_eq!(micro_macro_f1(&[1, 1], &[1, 1]).unwrap(), (1.0, 0.5));
    }

    #[test]
    fn diff_examples() {
        let scores = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(diff_metric(&[0, 1, 2, 3], &scores).unwrap(), 0.0);
        assert_eq!(diff_metric(&[3, 2, 1, 0], &scores).unwrap(), 1.0);
        assert_eq!(diff_metric(&[1, 0, 2, 3], &scores).unwrap(), 0.25);
        assert_eq!(diff_metric(&[2], &scores).unwrap(), 0.0);
        assert!(diff_metric(&[0, 7], &scores).is_err());
        assert!(diff_metric(&[], &scores).is_err());
    }

    #[test]
    fn diff_ties_follow_node_id() {
        let scores = [1.0, 1.0, 0.0];
        assert_eq!(diff_metric(&[0, 1, 2], &scores).unwrap(), 0.0);
        assert!(diff_metric(&[1, 0, 2], &scores).unwrap() > 0.0);
    }

    #[test]
    fn report_for_perfect_ranking() {
        let scores = [0.3, 2.0, 1.0];
        let z = [1, 2, 0];
        let pairs = ordered_pairs(&z);
        let predicted = labels_from_scores(&pairs, &scores);
        let r = MetricReport::new(&z, &pairs, &predicted, &scores).unwrap();
        assert_eq!((r.micro_f1, r.macro_f1, r.diff, r.pairs), (1.0, 1.0, 0.0, 6));
        assert!(r.to_text().contains("diff=0\n"));
    }

    proptest! {
        #[test]
        fn micro_equals_accuracy(v in proptest::collection::vec((0u8..=1, 0u8..=1), 1..200)) {
            let (p, t): (Vec<u8>, Vec<u8>) = v.into_iter().unzip();
            let acc = p.iter().zip(&t).filter(|(a, b)| a == b).count() as f64 / p.len() as f64;
            let (micro, macro_) = micro_macro_f1(&p, &t).unwrap();
            prop_assert!((micro - acc).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&macro_));
        }

        #[test]
        fn diff_in_unit_interval(perm in Just((0usize..9).collect::<Vec<_>>()).prop_shuffle(),
                                 scores in proptest::collection::vec(0.0f64..10.0, 9)) {
            let d = diff_metric(&perm, &scores).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            let sorted = descending_order(&perm, &scores).unwrap();
            prop_assert_eq!(diff_metric(&sorted, &scores).unwrap(), 0.0);
        }

        #[test]
        fn even_reversal_is_one(half in 1usize..20) {
            let n = 2 * half;
            let scores: Vec<f64> = (0..n).map(|k| (n - k) as f64).collect();
            let rev: Vec<usize> = (0..n).rev().collect();
            prop_assert_eq!(diff_metric(&rev, &scores).unwrap(), 1.0);
        }
    }
}
