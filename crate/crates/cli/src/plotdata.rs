//! Top-k comparison of a predicted ranking against ground truth.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use roadrank::metrics::descending_order;
use roadrank::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub predicted: Vec<usize>,
    pub actual: Vec<usize>,
    pub overlap: usize,
}

/// Top `k` of `order` against the top `k` of `scores` restricted to the
/// same nodes (ties in the truth broken by id).
pub fn top_k(order: &[usize], scores: &[f64], k: usize) -> Result<TopK> {
    if k == 0 || k > order.len() {
        return Err(Error::Invalid(format!("k must lie in 1..={}, got {k}", order.len())));
    }
    let actual = descending_order(order, scores)?;
    let predicted = order[..k].to_vec();
    let actual = actual[..k].to_vec();
    let set: BTreeSet<usize> = actual.iter().copied().collect();
    let overlap = predicted.iter().filter(|v| set.contains(v)).count();
    Ok(TopK { predicted, actual, overlap })
}

/// `rank,predicted,predicted_hit,actual,actual_hit` after a
/// `# k=.. overlap=..` line; a hit means the node is in the other top-k.
pub fn export_plotdata(order: &[usize], scores: &[f64], k: usize, path: &Path) -> Result<TopK> {
    let t = top_k(order, scores, k)?;
    let pred: BTreeSet<usize> = t.predicted.iter().copied().collect();
    let act: BTreeSet<usize> = t.actual.iter().copied().collect();
    let mut out = format!("# k={k} overlap={}\nrank,predicted,predicted_hit,actual,actual_hit\n", t.overlap);
    for r in 0..k {
        let (p, a) = (t.predicted[r], t.actual[r]);
        writeln!(
            out,
            "{},{p},{},{a},{}",
            r + 1,
            u8::from(act.contains(&p)),
            u8::from(pred.contains(&a))
        )
        .expect("writing to a string");
    }
    std::fs::write(path, out).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_overlaps_fully() {
        let scores: Vec<f64> = (0..30).map(|v| f64::from(v) * 0.5).collect();
        let order: Vec<usize> = (0..30).rev().collect();
        let t = top_k(&order, &scores, 20).unwrap();
        assert_eq!(t.overlap, 20);
        assert_eq!(t.predicted, t.actual);
    }

    #[test]
    fn reversed_ranking_and_bounds() {
        let scores = [4.0, 3.0, 2.0, 1.0];
        let t = top_k(&[3, 2, 1, 0], &scores, 2).unwrap();
        assert_eq!((t.predicted, t.actual, t.overlap), (vec![3, 2], vec![0, 1], 0));
        assert!(top_k(&[0, 1], &scores, 0).is_err());
        assert!(top_k(&[0, 1], &scores, 3).is_err());
    }

    #[test]
    fn file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("top.csv");
        // predicted top-2 = {2, 0}, actual top-2 = {0, 1}
        export_plotdata(&[2, 0, 1], &[3.0, 2.0, 1.0], 2, &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "# k=2 overlap=1\nrank,predicted,predicted_hit,actual,actual_hit\n1,2,0,0,1\n2,0,1,1,0\n"
        );
    }
}
