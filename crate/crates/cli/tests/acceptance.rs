//! Acceptance suite: one PASS/FAIL line per criterion. Every check runs even
//! if an earlier one fails; the process exits non-zero on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use roadrank::alias::AliasTable;
use roadrank::baselines::{betweenness_centrality, degree_centrality, pagerank};
use roadrank::graph::{NormalizedViews, RoadNetwork};
use roadrank::metrics::{diff_metric, labels_from_scores, micro_macro_f1, ordered_pairs};
use roadrank::mgwalk::{mgwalk_sample, WalkConfig, WalkTables};
use roadrank::model::{Ablation, Model, ModelInputs, ModelShape};
use roadrank::oracle::{generate_ground_truth, importance_score, CascadeConfig};
use roadrank::rng;
use roadrank::synth::{attribute_scores, synth_grid, GridConfig};
use roadrank::trainer::{encoder_inputs, make_pairs, run_experiment, TrainConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

/// Relative error with the denominator floored, so entries whose gradient is
/// numerically zero are compared in absolute terms.
fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-6)
}

fn c1_gradients() -> Outcome {
    let t0 = Instant::now();
    let shapes = [(2, 3, 1), (3, 3, 2), (2, 5, 3), (3, 2, 3), (2, 4, 2)];
    let mut worst = 0.0f64;
    for (case, &(rows, cols, num)) in shapes.iter().enumerate() {
        let seed = 100 + case as u64;
        let net = synth_grid(&GridConfig::new(rows, cols, seed)).map_err(|e| e.to_string())?;
        let mut r = rng::stream(seed, &[1]);
        let scores: Vec<f64> = (0..net.n()).map(|_| r.gen_range(0.0..10.0)).collect();
        let views = NormalizedViews::new(&net).unwrap();
        let walk = WalkConfig { alpha: r.gen_range(0.0..1.0), num, len: 4, seed };
        let samples = mgwalk_sample(&net, &views, &walk).unwrap();
        let features = encoder_inputs(&net);
        let inputs = ModelInputs { features: &features, samples: Some(&samples) };
        let model = Model::init(Ablation::Full, ModelShape { m: net.m(), x: 8, hdim: 8 }, seed).unwrap();
        let nodes: Vec<usize> = (0..net.n()).collect();
        let pairs = make_pairs(&nodes, &scores).unwrap();

        let (_, grad) = model.loss_and_grad::<rng::StreamRng>(&inputs, &pairs, None).unwrap();
        let analytic: Vec<Vec<f64>> = grad.tensors().into_iter().map(|(_, t)| t.data().to_vec()).collect();
        let mut probe = model.clone();
        let h = 1e-5;
        for (t, a) in analytic.iter().enumerate() {
            for (e, &g) in a.iter().enumerate() {
                let orig = probe.tensors()[t].1.data()[e];
                probe.tensors_mut()[t].data_mut()[e] = orig + h;
                let up = probe.loss(&inputs, &pairs).unwrap();
                probe.tensors_mut()[t].data_mut()[e] = orig - h;
                let down = probe.loss(&inputs, &pairs).unwrap();
                probe.tensors_mut()[t].data_mut()[e] = orig;
                worst = worst.max(rel_err(g, (up - down) / (2.0 * h)));
            }
        }
    }
    let dt = t0.elapsed();
    check(
        worst < 1e-4 && within(dt, Duration::from_secs(60)),
        format!("5 instances, max relative error {worst:.2e} (< 1e-4), {dt:.1?} (< 60s)"),
    )
}

/// First-step law from node `i`, computed from the raw network: an
/// adjacency step with probability `alpha`, otherwise an attribute visit
/// weighted by the node's share of each attribute column.
fn first_step_law(net: &RoadNetwork, i: usize, alpha: f64) -> Vec<f64> {
    let (n, m) = (net.n(), net.m());
    let mut p = vec![0.0; n + m];
    let outs = net.out_neighbors(i);
    for &j in outs {
        p[j] += alpha / outs.len() as f64;
    }
    let share: Vec<f64> = (0..m)
        .map(|k| {
            let col: f64 = (0..n).map(|v| net.attr(v, k)).sum();
            if col > 0.0 {
                net.attr(i, k) / col
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = share.iter().sum();
    for k in 0..m {
        p[n + k] += (1.0 - alpha) * share[k] / total;
    }
    p
}

fn c2_sampler() -> Outcome {
    let t0 = Instant::now();
    let net = synth_grid(&GridConfig::new(4, 5, 7)).unwrap();
    let views = NormalizedViews::new(&net).unwrap();
    let tables = WalkTables::new(&views).unwrap();
    let walks = 100_000;
    let mut worst = 0.0f64;
    for alpha in [0.0, 0.5, 1.0] {
        let mut walker = tables.walker(alpha);
        for i in 0..net.n() {
            let mut r = rng::stream(7, &[i as u64, alpha.to_bits()]);
            let mut counts = vec![0usize; net.n() + net.m()];
            let mut buf = Vec::with_capacity(2);
            for _ in 0..walks {
                buf.clear();
                walker.walk(i, 2, &mut r, &mut buf).unwrap();
                counts[buf[1]] += 1;
            }
            let law = first_step_law(&net, i, alpha);
            let tv: f64 = counts
                .iter()
                .zip(&law)
                .map(|(&c, &p)| (c as f64 / walks as f64 - p).abs())
                .sum::<f64>()
                / 2.0;
            worst = worst.max(tv);
        }
    }
    let node_only = mgwalk_sample(&net, &views, &WalkConfig { alpha: 1.0, num: 50, len: 6, seed: 3 })
        .unwrap()
        .is_node_only();
    let dt = t0.elapsed();
    check(
        worst <= 0.01 && node_only && within(dt, Duration::from_secs(30)),
        format!(
            "20 nodes x 3 alphas x 1e5 walks, max TV {worst:.4} (<= 0.01), alpha=1 node-only: {node_only}, {dt:.1?} (< 30s)"
        ),
    )
}

fn c3_alias() -> Outcome {
    let mut r = rng::stream(3, &[]);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let size = 1 + case % 64;
        let mut p: Vec<f64> = (0..size)
            .map(|_| if r.gen_bool(0.2) { 0.0 } else { r.gen_range(0.0..1.0) })
            .collect();
        if p.iter().all(|v| *v == 0.0) {
            p[0] = 1.0;
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        let t = AliasTable::new(&p).map_err(|e| e.to_string())?;
        // column j keeps prob[j] for itself and hands the rest to alias[j]
        let mut back = vec![0.0; size];
        for (j, (&keep, &other)) in t.prob().iter().zip(t.alias()).enumerate() {
            back[j] += keep / size as f64;
            back[other] += (1.0 - keep) / size as f64;
        }
        for (a, b) in back.iter().zip(&p) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-12, format!("1000 distributions, max entry error {worst:.1e} (<= 1e-12)"))
}

fn c4_metrics() -> Outcome {
    let scores = [4.0, 3.0, 2.0, 1.0];
    let sorted = diff_metric(&[0, 1, 2, 3], &scores).unwrap();
    let reversed = diff_metric(&[3, 2, 1, 0], &scores).unwrap();
    let swapped = diff_metric(&[1, 0, 2, 3], &scores).unwrap();
    let mut r = rng::stream(4, &[]);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = r.gen_range(1..60);
        let pred: Vec<u8> = (0..len).map(|_| r.gen_range(0..2)).collect();
        let truth: Vec<u8> = (0..len).map(|_| r.gen_range(0..2)).collect();
        let accuracy = pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / len as f64;
        let (micro, _) = micro_macro_f1(&pred, &truth).unwrap();
        worst = worst.max((micro - accuracy).abs());
    }
    check(
        sorted == 0.0 && reversed == 1.0 && swapped == 0.25 && worst < 1e-12,
        format!("diff sorted/reversed/swap = {sorted}/{reversed}/{swapped}; |micro-F1 - accuracy| <= {worst:.1e} over 100 vectors"),
    )
}

fn random_graph(n: usize, p: f64, seed: u64) -> RoadNetwork {
    let mut r = rng::stream(seed, &[5]);
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && r.gen_bool(p) {
                edges.push((s, d));
            }
        }
    }
    RoadNetwork::from_parts(n, edges, vec![1.0; n], vec!["a".into()]).unwrap()
}

/// Betweenness by listing every shortest path: Floyd-Warshall distances,
/// then depth-first enumeration of the paths that stay on them.
fn enumerated_betweenness(g: &RoadNetwork) -> Vec<f64> {
    let n = g.n();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (v, row) in d.iter_mut().enumerate() {
        row[v] = 0;
        for &w in g.out_neighbors(v) {
            if w != v {
                row[w] = 1;
            }
        }
    }
    for k in 0..n {
        for a in 0..n {
            for b in 0..n {
                d[a][b] = d[a][b].min(d[a][k] + d[k][b]);
            }
        }
    }
    fn paths(g: &RoadNetwork, d: &[Vec<usize>], v: usize, t: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if v == t {
            out.push(path.clone());
            return;
        }
        for &w in g.out_neighbors(v) {
            if d[v][t] == 1 + d[w][t] {
                path.push(w);
                paths(g, d, w, t, path, out);
                path.pop();
            }
        }
    }
    let mut bc = vec![0.0; n];
    for s in 0..n {
        for t in 0..n {
            if s == t || d[s][t] >= inf {
                continue;
            }
            let mut found = Vec::new();
            paths(g, &d, s, t, &mut vec![s], &mut found);
            for p in &found {
                for &v in &p[1..p.len() - 1] {
                    bc[v] += 1.0 / found.len() as f64;
                }
            }
        }
    }
    bc
}

fn c5_baselines() -> Outcome {
    let mut bc_err = 0.0f64;
    let mut residual = 0.0f64;
    let mut sum_err = 0.0f64;
    for case in 0..50u64 {
        let n = 2 + (case as usize % 11);
        let g = random_graph(n, 0.15 + 0.05 * (case % 5) as f64, case);
        let fast = betweenness_centrality(&g).scores;
        for (a, b) in fast.iter().zip(enumerated_betweenness(&g)) {
            bc_err = bc_err.max((a - b).abs());
        }
        let d = 0.85;
        let p = pagerank(&g, d, 1e-10).map_err(|e| e.to_string())?.scores;
        for j in 0..n {
            let inflow: f64 = (0..n)
                .filter(|&i| g.out_neighbors(i).contains(&j))
                .map(|i| p[i] / g.out_neighbors(i).len() as f64)
                .sum();
            residual = residual.max((p[j] - d * inflow - (1.0 - d) / n as f64).abs());
        }
        sum_err = sum_err.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    check(
        bc_err < 1e-9 && residual < 1e-9 && sum_err <= 1e-9,
        format!(
            "50 graphs (n <= 12): betweenness max deviation {bc_err:.1e}, PageRank residual {residual:.1e}, |sum - 1| {sum_err:.1e}"
        ),
    )
}

fn c6_importance() -> Outcome {
    let v = importance_score(&[2, 1], 0.9);
    let zeros = [importance_score(&[], 0.9), importance_score(&[0; 10], 0.9), importance_score(&[0, 0], 0.5)];
    check(
        (v - 2.61).abs() <= 1e-12 && zeros.iter().all(|z| *z == 0.0),
        format!("importance_score((2,1), 0.9) = {v}; all-zero counts -> {zeros:?}"),
    )
}

fn c7_learnable() -> Outcome {
    let t0 = Instant::now();
    let seed = 1;
    let net = synth_grid(&GridConfig::new(8, 8, seed)).unwrap();
    let truth = attribute_scores(&net, &[("vol", 1.0)]).unwrap();
    let walk = WalkConfig { seed, ..WalkConfig::default() };
    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let e = run_experiment(&net, &truth, &walk, &cfg).map_err(|e| e.to_string())?;
    let pairs = ordered_pairs(&e.split.test);
    let dc = degree_centrality(&net).scores;
    let (dc_f1, _) = micro_macro_f1(&labels_from_scores(&pairs, &dc), &labels_from_scores(&pairs, &truth)).unwrap();
    let dt = t0.elapsed();
    let f1 = e.test.micro_f1;
    check(
        f1 >= 0.90 && f1 >= dc_f1 && within(dt, Duration::from_secs(600)),
        format!(
            "{} nodes, truth = scaled vol, held-out micro-F1 {f1:.4} (>= 0.90), degree baseline {dc_f1:.4}, {dt:.1?} (< 10 min)",
            net.n()
        ),
    )
}

fn c8_ablations() -> Outcome {
    let t0 = Instant::now();
    let seeds = [0u64, 1, 2];
    let mut mean = [0.0f64; 4];
    for &seed in &seeds {
        let net = synth_grid(&GridConfig::new(5, 5, seed)).unwrap();
        let truth = generate_ground_truth(&net, &CascadeConfig::default()).unwrap().aff;
        let walk = WalkConfig { seed, ..WalkConfig::default() };
        for (a, ablation) in Ablation::ALL.into_iter().enumerate() {
            let cfg = TrainConfig { seed, ablation, ..TrainConfig::default() };
            let e = run_experiment(&net, &truth, &walk, &cfg).map_err(|e| e.to_string())?;
            mean[a] += e.outcome.history[e.outcome.best_epoch].val_micro_f1 / seeds.len() as f64;
        }
    }
    let margins: Vec<String> = Ablation::ALL[1..]
        .iter()
        .zip(&mean[1..])
        .map(|(a, m)| format!("{a} {m:.4} ({:+.4})", mean[0] - m))
        .collect();
    let dt = t0.elapsed();
    check(
        mean[1..].iter().all(|m| mean[0] >= *m),
        format!("val micro-F1 over 3 seeds: full {:.4}; {} ({dt:.1?})", mean[0], margins.join(", ")),
    )
}

fn cli(dir: &Path, threads: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_roadrank"))
        .current_dir(dir)
        .args(["--threads", threads])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Runs every stage into `dir`.
fn pipeline(dir: &Path, threads: &str) -> Result<(), String> {
    let steps: &[&[&str]] = &[
        &["synth", "--rows", "4", "--cols", "5", "--seed", "11", "--out", "net"],
        &["generate", "--network", "net", "--out", "scores.csv"],
        &["sample", "--network", "net", "--num", "20", "--seed", "11", "--out", "walks.txt"],
        &["baseline", "--method", "dc", "--network", "net", "--out", "dc.csv"],
        &["baseline", "--method", "bc", "--network", "net", "--out", "bc.csv"],
        &["baseline", "--method", "pagerank", "--network", "net", "--out", "pr.csv"],
        &["train", "--network", "net", "--scores", "scores.csv", "--samples", "walks.txt", "--epochs", "4", "--seed", "11", "--out", "m.ckpt"],
        &["rank", "--network", "net", "--checkpoint", "m.ckpt", "--samples", "walks.txt", "--ratings", "ratings.csv", "--plotdata", "top.csv", "--truth", "scores.csv", "--k", "5", "--out", "ranking.csv"],
        &["eval", "--ranking", "ranking.csv", "--ratings", "ratings.csv", "--truth", "scores.csv", "--pairs", "m.ckpt.split.csv", "--out", "report.txt"],
        &["gradcheck", "--network", "net", "--scores", "scores.csv", "--samples", "walks.txt", "--pairs", "3", "--out", "grad.txt"],
    ];
    for s in steps {
        cli(dir, threads, s)?;
    }
    Ok(())
}

/// Every output file (manifests with their timestamps removed) by name.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in ["", "net"] {
        for entry in std::fs::read_dir(dir.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            if !path.is_file() {
                continue;
            }
            let name = path.strip_prefix(dir).unwrap().display().to_string();
            let mut bytes = std::fs::read(&path).unwrap();
            if name.ends_with("manifest.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                let obj = v.as_object_mut().unwrap();
                obj.remove("started_unix");
                obj.remove("finished_unix");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            files.push((name, bytes));
        }
    }
    files.sort();
    files
}

fn c9_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [("a", "1"), ("b", "1"), ("c", "2")];
    for (name, threads) in runs {
        let dir = root.path().join(name);
        std::fs::create_dir(&dir).unwrap();
        pipeline(&dir, threads)?;
    }
    let a = snapshot(&root.path().join("a"));
    let b = snapshot(&root.path().join("b"));
    let c = snapshot(&root.path().join("c"));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let same_as_two_threads = a == c;
    check(
        a.len() == b.len() && differing.is_empty(),
        format!(
            "{} files from 10 stages byte-identical across two --threads 1 runs{}; --threads 2 identical too: {same_as_two_threads}",
            a.len(),
            if differing.is_empty() { String::new() } else { format!(" except {differing:?}") }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient check", c1_gradients),
        ("sampler law", c2_sampler),
        ("alias exactness", c3_alias),
        ("metric oracles", c4_metrics),
        ("baseline oracles", c5_baselines),
        ("importance score", c6_importance),
        ("learnable task", c7_learnable),
        ("ablation ordering", c8_ablations),
        ("determinism", c9_determinism),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {}. {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
