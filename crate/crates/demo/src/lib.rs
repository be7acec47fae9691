//! wasm-bindgen front for the browser page in `www/`. Every method returns
//! a JSON string so the page needs no glue beyond `JSON.parse`.

use roadrank::baselines::{betweenness_centrality, degree_centrality, pagerank};
use roadrank::graph::{NormalizedViews, RoadNetwork};
use roadrank::metrics::{descending_order, diff_metric};
use roadrank::mgwalk::{mgwalk_sample, WalkConfig};
use roadrank::oracle::{generate_ground_truth, CascadeConfig};
use roadrank::synth::{synth_grid, GridConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_SIDE: usize = 12;

fn js_err(e: impl ToString) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    rows: usize,
    cols: usize,
    net: RoadNetwork,
    views: NormalizedViews,
    truth: Vec<f64>,
}

#[wasm_bindgen]
impl Demo {
    /// Builds a grid network and runs the cascade oracle on it.
    #[wasm_bindgen(constructor)]
    pub fn new(rows: usize, cols: usize, seed: u64) -> Result<Demo, JsError> {
        if rows > MAX_SIDE || cols > MAX_SIDE {
            return Err(JsError::new(&format!("grid sides are capped at {MAX_SIDE}")));
        }
        let net = synth_grid(&GridConfig::new(rows, cols, seed)).map_err(js_err)?;
        let views = NormalizedViews::new(&net).map_err(js_err)?;
        let truth = generate_ground_truth(&net, &CascadeConfig::default())
            .map_err(js_err)?
            .aff;
        Ok(Demo { rows, cols, net, views, truth })
    }

    /// Grid shape, attribute names and values, and oracle scores.
    pub fn network(&self) -> String {
        let attrs: Vec<&[f64]> = (0..self.net.n()).map(|i| self.net.attrs(i)).collect();
        json!({
            "rows": self.rows,
            "cols": self.cols,
            "attr_names": self.net.attr_names(),
            "attrs": attrs,
            "truth": self.truth,
        })
        .to_string()
    }

    /// Degree, betweenness and PageRank scores with their diff against the
    /// oracle order (0 is a perfect ranking).
    pub fn baselines(&self, damping: f64) -> Result<String, JsError> {
        let all: Vec<usize> = (0..self.net.n()).collect();
        let pr = pagerank(&self.net, damping, 1e-10).map_err(js_err)?;
        let mut out = serde_json::Map::new();
        for (name, scores) in [
            ("degree", degree_centrality(&self.net).scores),
            ("betweenness", betweenness_centrality(&self.net).scores),
            ("pagerank", pr.scores),
        ] {
            let order = descending_order(&all, &scores).map_err(js_err)?;
            let diff = diff_metric(&order, &self.truth).map_err(js_err)?;
            out.insert(name.into(), json!({ "scores": scores, "diff": diff }));
        }
        Ok(Value::Object(out).to_string())
    }

    /// Mixed walks from `node`, with attribute visits named.
    pub fn walks(&self, node: usize, alpha: f64, num: usize, len: usize, seed: u64) -> Result<String, JsError> {
        let n = self.net.n();
        if node >= n {
            return Err(JsError::new(&format!("node {node} is outside 0..{n}")));
        }
        let cfg = WalkConfig { alpha, num, len, seed };
        let set = mgwalk_sample(&self.net, &self.views, &cfg).map_err(js_err)?;
        let names = self.net.attr_names();
        let seqs: Vec<Vec<Value>> = set
            .sequences(node)
            .map(|s| {
                s.iter()
                    .map(|&v| if v < n { json!(v) } else { json!(names[v - n]) })
                    .collect()
            })
            .collect();
        Ok(json!({ "node": node, "sequences": seqs }).to_string())
    }
}

