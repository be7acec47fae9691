use std::path::Path;
use std::process::{Command, Output};

use roadrank_cli::exit;

fn roadrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadrank"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = roadrank(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    roadrank(dir, args).status.code().expect("exited normally")
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

/// synth + generate + sample into `dir`.
fn prepare(dir: &Path) {
    ok(dir, &["synth", "--rows", "4", "--cols", "4", "--seed", "3", "--out", "net"]);
    ok(dir, &["generate", "--network", "net", "--out", "scores.csv"]);
    ok(dir, &["sample", "--network", "net", "--num", "5", "--seed", "3", "--out", "walks.txt"]);
}

#[test]
fn synth_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    for out in ["a", "b"] {
        ok(p, &["--threads", "1", "synth", "--rows", "5", "--cols", "5", "--seed", "1", "--out", out]);
    }
    for f in ["edges.csv", "attrs.csv"] {
        assert_eq!(read(p.join("a").join(f)), read(p.join("b").join(f)));
    }
    ok(p, &["synth", "--rows", "5", "--cols", "5", "--seed", "2", "--out", "c"]);
    assert_ne!(read(p.join("a/attrs.csv")), read(p.join("c/attrs.csv")));
    assert!(p.join("a/manifest.json").exists());
}

#[test]
fn sample_defaults_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["synth", "--rows", "3", "--cols", "3", "--out", "net"]);
    ok(p, &["sample", "--network", "net", "--out", "walks.txt"]);
    let text = String::from_utf8(read(p.join("walks.txt"))).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("num=150 len=4 alpha=0.0001"));

    let manifest: serde_json::Value = serde_json::from_slice(&read(p.join("walks.txt.manifest.json"))).unwrap();
    assert_eq!(manifest["subcommand"], "sample");
    assert_eq!(manifest["config"]["alpha"], "0.0001");
    let digest = manifest["outputs"]["walks.txt"].as_str().unwrap();
    assert_eq!(digest, roadrank_cli::manifest::file_digest(&p.join("walks.txt")).unwrap());
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 2);
}

#[test]
fn exit_codes_are_categorized() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(p, &["synth", "--bogus"]), exit::USAGE);
    assert_eq!(code(p, &["frobnicate"]), exit::USAGE);
    assert_eq!(code(p, &["--threads", "0", "synth", "--out", "x"]), exit::USAGE);
    assert_eq!(code(p, &["sample", "--network", "missing", "--out", "w.txt"]), exit::IO);

    prepare(p);
    std::fs::write(p.join("neg.csv"), "node_id,aff\n0,-1\n").unwrap();
    assert_eq!(code(p, &["eval", "--ranking", "neg.csv", "--truth", "scores.csv", "--out", "r.txt"]), exit::INVALID);
    assert_eq!(code(p, &["sample", "--network", "net", "--alpha", "2", "--out", "w.txt"]), exit::INVALID);
    // NoMG needs node-only walks
    assert_eq!(
        code(p, &["train", "--network", "net", "--scores", "scores.csv", "--samples", "walks.txt", "--ablation", "NoMG", "--epochs", "1", "--out", "m.ckpt"]),
        exit::INVALID
    );
    assert_eq!(
        code(p, &["train", "--network", "net", "--scores", "scores.csv", "--epochs", "1", "--out", "m.ckpt"]),
        exit::USAGE
    );
    ok(p, &["baseline", "--method", "dc", "--network", "net", "--out", "dc.csv"]);
    assert_eq!(
        code(p, &["eval", "--ranking", "dc.csv", "--truth", "scores.csv", "--plotdata", "t.csv", "--k", "0", "--out", "r.txt"]),
        exit::INVALID
    );
    // pagerank that cannot converge in the iteration budget
    assert_eq!(
        code(p, &["baseline", "--method", "pagerank", "--network", "net", "--tol", "0", "--out", "pr.csv"]),
        exit::NUMERIC
    );
}

#[test]
fn config_file_with_flag_override() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    prepare(p);
    std::fs::write(p.join("run.cfg"), "# short run\nepochs = 3\nseed = 4\nlr = 0.01\n").unwrap();
    let base = ["train", "--network", "net", "--scores", "scores.csv", "--samples", "walks.txt"];
    let mut args: Vec<&str> = base.to_vec();
    args.extend(["--config", "run.cfg", "--out", "a.ckpt"]);
    ok(p, &args);
    let history = String::from_utf8(read(p.join("a.ckpt.history.csv"))).unwrap();
    assert_eq!(history.lines().count(), 2 + 4);

    let mut args: Vec<&str> = base.to_vec();
    args.extend(["--config", "run.cfg", "--epochs", "1", "--out", "b.ckpt"]);
    ok(p, &args);
    let history = String::from_utf8(read(p.join("b.ckpt.history.csv"))).unwrap();
    assert_eq!(history.lines().count(), 2 + 2);
    let manifest: serde_json::Value = serde_json::from_slice(&read(p.join("b.ckpt.manifest.json"))).unwrap();
    assert_eq!(manifest["config"]["epochs"], "1");
    assert_eq!(manifest["config"]["lr"], "0.01");

    std::fs::write(p.join("bad.cfg"), "epochs = 3\nepochs = 4\n").unwrap();
    let mut args: Vec<&str> = base.to_vec();
    args.extend(["--config", "bad.cfg", "--out", "c.ckpt"]);
    assert_eq!(code(p, &args), exit::INVALID);
}

#[test]
fn manifest_replays_a_training_run() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    prepare(p);
    let base = ["train", "--network", "net", "--scores", "scores.csv", "--samples", "walks.txt"];
    let mut args: Vec<&str> = base.to_vec();
    args.extend(["--epochs", "2", "--seed", "9", "--dropout", "0.2", "--out", "a.ckpt"]);
    ok(p, &args);
    let mut args: Vec<&str> = base.to_vec();
    args.extend(["--config", "a.ckpt.manifest.json", "--out", "b.ckpt"]);
    ok(p, &args);
    assert_eq!(read(p.join("a.ckpt")), read(p.join("b.ckpt")));
    assert_eq!(read(p.join("a.ckpt.history.csv")), read(p.join("b.ckpt.history.csv")));
}

#[test]
fn eval_of_the_true_order_has_zero_diff() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    prepare(p);
    // the truth itself as a score file ranks perfectly
    let report = ok(p, &["eval", "--ranking", "scores.csv", "--truth", "scores.csv", "--out", "r.txt"]);
    assert!(report.contains("\ndiff=0\n"), "{report}");
    assert!(report.contains("micro_f1=1\n"), "{report}");
    assert!(report.contains("fp=0\nfn=0\n"), "{report}");

    // and as a ranking file
    let scores: Vec<(usize, f64)> = String::from_utf8(read(p.join("scores.csv")))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    let mut order = scores.clone();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut text = String::from("rank,node_id,copeland,rating_sum\n");
    for (r, (v, _)) in order.iter().enumerate() {
        text.push_str(&format!("{},{v},0,0\n", r + 1));
    }
    std::fs::write(p.join("ranking.csv"), text).unwrap();
    let report = ok(p, &["eval", "--ranking", "ranking.csv", "--truth", "scores.csv", "--out", "r2.txt"]);
    assert!(report.contains("\ndiff=0\n"), "{report}");
}

#[test]
fn train_rank_eval_over_a_split() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    prepare(p);
    ok(p, &["train", "--network", "net", "--scores", "scores.csv", "--samples", "walks.txt", "--epochs", "2", "--out", "m.ckpt"]);
    ok(p, &["rank", "--network", "net", "--checkpoint", "m.ckpt", "--samples", "walks.txt", "--split", "m.ckpt.split.csv", "--set", "test", "--ratings", "ratings.csv", "--out", "ranking.csv"]);
    let ranked = String::from_utf8(read(p.join("ranking.csv"))).unwrap();
    let split = String::from_utf8(read(p.join("m.ckpt.split.csv"))).unwrap();
    let test_nodes = split.lines().filter(|l| l.contains(",test,")).count();
    assert_eq!(ranked.lines().count(), 1 + test_nodes);
    let report = ok(p, &["eval", "--ranking", "ranking.csv", "--ratings", "ratings.csv", "--truth", "scores.csv", "--pairs", "m.ckpt.split.csv", "--out", "r.txt"]);
    assert!(report.starts_with(&format!("set=test\nnodes={test_nodes}\n")), "{report}");
    assert!(report.contains(&format!("pairs={}\n", test_nodes * (test_nodes - 1))));

    // NoEmb needs no walks
    ok(p, &["train", "--network", "net", "--scores", "scores.csv", "--ablation", "NoEmb", "--epochs", "1", "--out", "e.ckpt"]);
    ok(p, &["rank", "--network", "net", "--checkpoint", "e.ckpt", "--plotdata", "top.csv", "--truth", "scores.csv", "--k", "5", "--out", "e.csv"]);
    assert!(String::from_utf8(read(p.join("top.csv"))).unwrap().starts_with("# k=5 overlap="));
}

#[test]
fn gradcheck_passes_on_a_small_network() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["synth", "--rows", "2", "--cols", "3", "--out", "net"]);
    ok(p, &["generate", "--network", "net", "--out", "scores.csv"]);
    ok(p, &["sample", "--network", "net", "--num", "2", "--out", "walks.txt"]);
    let out = ok(p, &["gradcheck", "--network", "net", "--scores", "scores.csv", "--samples", "walks.txt", "--pairs", "4", "--out", "g.txt"]);
    assert!(out.contains("lstm.fwd.W_xi="));
    let max: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("max_rel_error="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(max < 1e-4);
    // an impossible tolerance fails the check, not the run
    assert_eq!(
        code(p, &["gradcheck", "--network", "net", "--scores", "scores.csv", "--samples", "walks.txt", "--pairs", "4", "--tolerance", "0", "--out", "g2.txt"]),
        exit::CHECK_FAILED
    );
}

#[test]
fn help_exits_cleanly() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(d.path(), &["--help"]), exit::OK);
    let out = roadrank(d.path(), &["train", "--help"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("--ablation"));
}
