//! Ground-truth importance from a macroscopic congestion model: each segment
//! in turn loses most of its capacity, congestion spills back upstream, and
//! the decayed count of failed segments scores the target.

use std::path::Path;

use crate::config::KvConfig;
use crate::error::{invalid, Error, Result};
use crate::graph::{csv_err, csv_reader, parse_id, record_line, RoadNetwork};
use crate::ranker::write_lines;

/// Attribute columns the model reads.
pub const REQUIRED_ATTRS: [&str; 3] = ["limiv", "nlan", "vol"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeConfig {
    /// Fraction of capacity the target keeps.
    pub capacity_reduction: f64,
    /// A segment fails when its speed drops strictly below this fraction of
    /// its limit.
    pub failure_speed_fraction: f64,
    pub gamma: f64,
    /// Number of periods `Q`.
    pub periods: usize,
    /// Observation window that turns volume into a flow rate.
    pub period_length: f64,
    /// Fraction of a congested segment's excess demand pushed upstream per
    /// period, split over upstream segments by capacity.
    pub spillback_rate: f64,
    /// Flow per lane per unit of speed limit.
    pub kappa: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            capacity_reduction: 0.1,
            failure_speed_fraction: 0.1,
            gamma: 0.9,
            periods: 10,
            period_length: 1.0,
            spillback_rate: 0.5,
            kappa: 1.0,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(invalid!("{name} must lie in (0, 1), got {v}"))
            }
        };
        unit("capacity_reduction", self.capacity_reduction)?;
        unit("failure_speed_fraction", self.failure_speed_fraction)?;
        unit("spillback_rate", self.spillback_rate)?;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.periods == 0 {
            return Err(invalid!("at least one period is required"));
        }
        if !(self.period_length > 0.0 && self.period_length.is_finite()) {
            return Err(invalid!("period_length must be positive"));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(invalid!("kappa must be positive"));
        }
        Ok(())
    }

    /// Overrides fields from `key = value` pairs named like the fields;
    /// other keys are ignored.
    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = kv.parse_value(stringify!($field))? {
                    self.$field = v;
                }
            )*};
        }
        take!(capacity_reduction, failure_speed_fraction, gamma, periods, period_length, spillback_rate, kappa);
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("capacity_reduction", self.capacity_reduction.to_string()),
            ("failure_speed_fraction", self.failure_speed_fraction.to_string()),
            ("gamma", self.gamma.to_string()),
            ("periods", self.periods.to_string()),
            ("period_length", self.period_length.to_string()),
            ("spillback_rate", self.spillback_rate.to_string()),
            ("kappa", self.kappa.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }
}

/// Free-flow state of every segment.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub capacity: Vec<f64>,
    pub demand: Vec<f64>,
    pub limit: Vec<f64>,
}

impl BaselineState {
    pub fn speeds(&self) -> Vec<f64> {
        (0..self.limit.len())
            .map(|i| speed(self.limit[i], self.capacity[i], self.demand[i]))
            .collect()
    }
}

/// `limit · min(1, capacity / demand)`.
pub fn speed(limit: f64, capacity: f64, demand: f64) -> f64 {
    if demand <= capacity {
        limit
    } else {
        limit * capacity / demand
    }
}

pub fn assign_baseline_state(net: &RoadNetwork, cfg: &CascadeConfig) -> Result<BaselineState> {
    let mut idx = [0; 3];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_ATTRS) {
        *slot = net
            .attr_index(name)
            .ok_or_else(|| invalid!("the cascade model needs attribute '{name}'"))?;
    }
    let [limiv, nlan, vol] = idx;
    let n = net.n();
    Ok(BaselineState {
        capacity: (0..n)
            .map(|i| cfg.kappa * net.attr(i, nlan) * net.attr(i, limiv))
            .collect(),
        demand: (0..n).map(|i| net.attr(i, vol) / cfg.period_length).collect(),
        limit: (0..n).map(|i| net.attr(i, limiv)).collect(),
    })
}

/// Newly failed segments in each period `1..=Q` after reducing the
/// target's capacity.
pub fn cascade_failure(
    net: &RoadNetwork,
    state: &BaselineState,
    target: usize,
    cfg: &CascadeConfig,
) -> Result<Vec<usize>> {
    let n = net.n();
    if target >= n {
        return Err(invalid!("target {target} out of range 0..{n}"));
    }
    if state.capacity.len() != n {
        return Err(Error::Dimension("baseline state does not match the network".into()));
    }
    let mut capacity = state.capacity.clone();
    let mut demand = state.demand.clone();
    capacity[target] *= cfg.capacity_reduction;
    let mut failed = vec![false; n];
    let mut counts = Vec::with_capacity(cfg.periods);
    for _ in 0..cfg.periods {
        let mut new = 0;
        for i in 0..n {
            let v = speed(state.limit[i], capacity[i], demand[i]);
            if !failed[i] && v < cfg.failure_speed_fraction * state.limit[i] {
                failed[i] = true;
                new += 1;
            }
        }
        counts.push(new);

        let mut inflow = vec![0.0; n];
        for j in 0..n {
            let excess = demand[j] - capacity[j];
            if excess <= 0.0 {
                continue;
            }
            let ups: Vec<usize> = net.in_neighbors(j).iter().copied().filter(|&i| i != j).collect();
            if ups.is_empty() {
                continue;
            }
            let pushed = cfg.spillback_rate * excess;
            let total: f64 = ups.iter().map(|&i| capacity[i]).sum();
            for &i in &ups {
                let share = if total > 0.0 {
                    capacity[i] / total
                } else {
                    1.0 / ups.len() as f64
                };
                inflow[i] += pushed * share;
            }
        }
        for (d, f) in demand.iter_mut().zip(inflow) {
            *d += f;
        }
    }
    Ok(counts)
}

/// `Σ_t γ^t · n_t` with periods numbered from 1.
pub fn importance_score(counts: &[usize], gamma: f64) -> f64 {
    let mut w = 1.0;
    let mut total = 0.0;
    for &c in counts {
        w *= gamma;
        total += w * c as f64;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Simulated,
    Imported,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    pub aff: Vec<f64>,
    /// `(gamma, Q)` for simulated scores.
    pub params: Option<(f64, usize)>,
    pub provenance: Provenance,
}

impl ImportanceScores {
    pub fn len(&self) -> usize {
        self.aff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aff.is_empty()
    }

    /// `node_id,aff`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        write_lines(path, |w| {
            writeln!(w, "node_id,aff")?;
            for (i, a) in self.aff.iter().enumerate() {
                writeln!(w, "{i},{a}")?;
            }
            Ok(())
        })
    }
}

/// Runs one cascade per segment.
pub fn generate_ground_truth(net: &RoadNetwork, cfg: &CascadeConfig) -> Result<ImportanceScores> {
    cfg.validate()?;
    let state = assign_baseline_state(net, cfg)?;
    let targets: Vec<usize> = (0..net.n()).collect();
    let aff = crate::par::map_ordered(&targets, |&t| {
        cascade_failure(net, &state, t, cfg).map(|c| importance_score(&c, cfg.gamma))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ImportanceScores {
        aff,
        params: Some((cfg.gamma, cfg.periods)),
        provenance: Provenance::Simulated,
    })
}

/// Reads a `node_id,<score>` CSV; every node `0..n` must appear exactly once.
/// The second column may have any name, so baseline outputs load too.
pub fn import_scores(path: &Path, n: usize) -> Result<ImportanceScores> {
    let mut rdr = csv_reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if header.len() != 2 || &header[0] != "node_id" {
        return Err(Error::parse(path, 1, "expected header 'node_id,aff'"));
    }
    let mut aff: Vec<Option<f64>> = vec![None; n];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = record_line(&rec);
        if rec.len() != 2 {
            return Err(Error::parse(path, line, "expected two fields"));
        }
        let id = parse_id(path, line, &rec[0])?;
        if id >= n {
            return Err(Error::parse(path, line, format!("node {id} is outside 0..{n}")));
        }
        let v: f64 = rec[1]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("not a number: {:?}", &rec[1])))?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::parse(path, line, format!("score of node {id} is negative or non-finite ({v})")));
        }
        if aff[id].replace(v).is_some() {
            return Err(Error::parse(path, line, format!("duplicate node {id}")));
        }
    }
    let aff = aff
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| invalid!("{}: missing score for node {i}", path.display())))
        .collect::<Result<_>>()?;
    Ok(ImportanceScores {
        aff,
        params: None,
        provenance: Provenance::Imported,
    })
}
