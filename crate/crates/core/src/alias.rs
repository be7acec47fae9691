//! Walker/Vose alias tables for O(1) draws from a fixed discrete distribution.

use rand::Rng;

use crate::error::{invalid, Result};

/// Tolerance on the input distribution's total mass.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AliasTable {
    /// Acceptance probability of each column (`qList`).
    prob: Vec<f64>,
    /// Fallback index of each column (`JList`).
    alias: Vec<usize>,
}

impl AliasTable {
    /// Builds a table for `p`, which must be non-negative and sum to
    /// `1 ± 1e-9`. The input is renormalized before construction.
    pub fn new(p: &[f64]) -> Result<Self> {
        if p.is_empty() {
            return Err(invalid!("empty distribution"));
        }
        if let Some(i) = p.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid!("probability {i} is negative or non-finite ({})", p[i]));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid!("probabilities sum to {total}, expected 1"));
        }

        let size = p.len();
        let scale = size as f64 / total;
        let mut scaled: Vec<f64> = p.iter().map(|v| v * scale).collect();
        let mut prob = vec![1.0; size];
        let mut alias: Vec<usize> = (0..size).collect();

        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..size).partition(|&i| scaled[i] < 1.0);
        while let (Some(&l), Some(&g)) = (small.last(), large.last()) {
            small.pop();
            large.pop();
            prob[l] = scaled[l];
            alias[l] = g;
            scaled[g] = (scaled[g] + scaled[l]) - 1.0;
            if scaled[g] < 1.0 {
                small.push(g);
            } else {
                large.push(g);
            }
        }
        // Whatever remains is 1 up to rounding.
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
            alias[i] = i;
        }
        Ok(Self { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn prob(&self) -> &[f64] {
        &self.prob
    }

    pub fn alias(&self) -> &[usize] {
        &self.alias
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let col = rng.gen_range(0..self.prob.len());
        if rng.gen::<f64>() < self.prob[col] {
            col
        } else {
            self.alias[col]
        }
    }

    /// The distribution this table samples from.
    pub fn reconstruct(&self) -> Vec<f64> {
        let size = self.len() as f64;
        let mut p: Vec<f64> = self.prob.iter().map(|q| q / size).collect();
        for (i, &j) in self.alias.iter().enumerate() {
            if j != i {
                p[j] += (1.0 - self.prob[i]) / size;
            }
        }
        p
    }
}
