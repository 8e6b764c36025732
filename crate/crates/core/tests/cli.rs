use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fairsift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairsift"))
        .args(args)
        .env("FAIRSIFT_THREADS", "2")
        .output()
        .expect("spawn fairsift")
}

fn ok(args: &[&str]) -> String {
    let out = fairsift(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    fairsift(args).status.code().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn synth(extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap().to_string();
        let mut args = vec!["synth", "--n", "600", "--d", "16", "--n-queries", "4", "--relevant", "30", "--seed", "3"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out-dir", &out]);
        ok(&args);
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn synth_writes_corpus_and_manifest() {
    let fx = Fixture::synth(&["--model-bias", "0.2"]);
    for f in ["images.jsonl", "queries.jsonl", "scheme.json", "classes.jsonl"] {
        assert!(fx.path(f).exists(), "{f}");
        assert!(fx.path(&format!("{f}.manifest.json")).exists(), "{f} manifest");
    }
    assert_eq!(read(&fx.path("images.jsonl")).lines().count(), 600);
    let again = Fixture::synth(&["--model-bias", "0.2"]);
    assert_eq!(read(&fx.path("images.jsonl")), read(&again.path("images.jsonl")));
}

#[test]
fn retrieve_is_deterministic_across_thread_counts() {
    let fx = Fixture::synth(&["--model-bias", "0.2"]);
    let run = |threads: &str, out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_fairsift"))
            .args([
                "retrieve", "--images", &fx.s("images.jsonl"), "--queries", &fx.s("queries.jsonl"), "--method",
                "pbm-tradeoff", "--fair-prob", "0.5", "--seed", "11", "--k", "20", "--out", &fx.s(out),
            ])
            .env("FAIRSIFT_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
        read(&fx.path(out))
    };
    let a = run("1", "a.jsonl");
    assert_eq!(a, run("4", "b.jsonl"));
    assert_eq!(a.lines().count(), 4 * 20);
}

#[test]
fn full_pipeline_reduces_bias() {
    let fx = Fixture::synth(&["--model-bias", "0.2", "--alpha", "0.7"]);
    ok(&[
        "predict", "--images", &fx.s("images.jsonl"), "--variant", "zero-shot-embed", "--classes",
        &fx.s("classes.jsonl"), "--out", &fx.s("preds.jsonl"),
    ]);
    let mut bias = Vec::new();
    for method in ["topk", "pbm"] {
        ok(&[
            "retrieve", "--images", &fx.s("images.jsonl"), "--queries", &fx.s("queries.jsonl"), "--method", method,
            "--predictions", &fx.s("preds.jsonl"), "--k", "20", "--out", &fx.s(&format!("{method}.jsonl")),
        ]);
        ok(&[
            "evaluate", "--bags", &fx.s(&format!("{method}.jsonl")), "--images", &fx.s("images.jsonl"), "--queries",
            &fx.s("queries.jsonl"), "--method", method, "--out", &fx.s(&format!("{method}.json")), "--csv",
            &fx.s(&format!("{method}.csv")),
        ]);
        let report: serde_json::Value = serde_json::from_str(&read(&fx.path(&format!("{method}.json")))).unwrap();
        assert_eq!(report["manifest"]["command"], "evaluate");
        assert_eq!(report["k"], 20);
        bias.push(report["aggregate"]["abs_bias_at_k"].as_f64().unwrap());
        let csv = read(&fx.path(&format!("{method}.csv")));
        assert!(csv.starts_with("query_id,bag_bias,signed_bias,recall_hits,relevant,avg_prec"));
        assert_eq!(csv.lines().count(), 5);
    }
    assert!(bias[1] < bias[0], "{bias:?}");
    assert_eq!(bias[1], 0.0);
}

#[test]
fn classifier_and_prompt_variants() {
    let fx = Fixture::synth(&[]);
    let images = read(&fx.path("images.jsonl"));
    let train: String = images
        .lines()
        .take(200)
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            format!("{{\"id\":{},\"label\":{}}}\n", v["id"], v["label"])
        })
        .collect();
    fs::write(fx.path("train.jsonl"), train).unwrap();
    let out = fairsift(&[
        "predict", "--images", &fx.s("images.jsonl"), "--variant", "classifier", "--train-labels",
        &fx.s("train.jsonl"), "--epochs", "50", "--lr", "0.5", "--out", &fx.s("clf.jsonl"),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("final loss"));
    assert_eq!(read(&fx.path("clf.jsonl")).lines().count(), 600);

    let prompted = "{\"query\":\"q000\",\"label\":\"male\",\"vec\":[1,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0]}\n\
                    {\"query\":\"q000\",\"label\":\"female\",\"vec\":[-1,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0]}\n";
    fs::write(fx.path("prompted.jsonl"), prompted).unwrap();
    ok(&[
        "predict", "--images", &fx.s("images.jsonl"), "--variant", "zero-shot-prompt", "--prompted",
        &fx.s("prompted.jsonl"), "--out", &fx.s("prompt.jsonl"),
    ]);
    let first = read(&fx.path("prompt.jsonl"));
    assert!(first.lines().all(|l| l.contains("\"query\":\"q000\"")));
}

#[test]
fn analyze_subcommands() {
    let csv = ok(&["analyze", "binomial", "--k", "2,100", "--alpha", "0.5", "--mc-trials", "1000"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,alpha,expected_bias,mc_mean,mc_std_error");
    assert!(lines[1].starts_with("2,0.5,0.5,"));

    let fx = Fixture::synth(&["--model-bias", "0.2"]);
    let corpus = ["--images", &fx.s("images.jsonl"), "--queries", &fx.s("queries.jsonl")];
    let sp = ok(&[&["analyze", "spearman"][..], &corpus[..]].concat());
    assert_eq!(sp.lines().count(), 5);
    let fit = ok(&[&["analyze", "quantile", "--bins", "10", "--out", &fx.s("curve.csv")][..], &corpus[..]].concat());
    assert!(fit.starts_with("query_id,slope,intercept,r_squared"));
    assert_eq!(read(&fx.path("curve.csv")).lines().count(), 1 + 4 * 10);
    let tr = ok(&[&["analyze", "tradeoff", "--reps", "2", "--k", "20", "--p-grid", "0,1"][..], &corpus[..]].concat());
    assert_eq!(tr.lines().count(), 3);
    let synth = ok(&["analyze", "tradeoff", "--reps", "1", "--n", "300", "--d", "8", "--relevant", "20", "--k", "10"]);
    assert_eq!(synth.lines().count(), 6);
}

#[test]
fn validate_reports_groups() {
    let fx = Fixture::synth(&["--neutral-fraction", "0.1"]);
    let out = ok(&["validate", "--images", &fx.s("images.jsonl"), "--queries", &fx.s("queries.jsonl"), "--k", "50"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["images"], 600);
    assert!(report["neutral"].as_u64().unwrap() > 0);
}

#[test]
fn exit_codes() {
    let fx = Fixture::synth(&[]);
    let (images, queries) = (fx.s("images.jsonl"), fx.s("queries.jsonl"));

    // missing file: I/O
    assert_eq!(code(&["validate", "--images", "/nonexistent.jsonl", "--queries", &queries]), 2);

    // malformed record: parse
    fs::write(fx.path("bad.jsonl"), "{\"id\": \"x\", \"vec\": [1, 2]}\nnot json\n").unwrap();
    assert_eq!(code(&["validate", "--images", &fx.s("bad.jsonl"), "--queries", &queries]), 2);

    // missing auxiliary input: config
    assert_eq!(
        code(&["predict", "--images", &images, "--variant", "zero-shot-embed", "--out", &fx.s("p.jsonl")]),
        3
    );

    // unlabeled corpus with no predictions: config
    let unlabeled: String = read(&fx.path("images.jsonl"))
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("label");
            format!("{v}\n")
        })
        .collect();
    fs::write(fx.path("unlabeled.jsonl"), unlabeled).unwrap();
    let out = fairsift(&[
        "retrieve", "--images", &fx.s("unlabeled.jsonl"), "--queries", &queries, "--method", "pbm", "--out",
        &fx.s("b.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PBM requires predictions or labels"));

    // bad flag value: config
    assert_eq!(code(&["analyze", "binomial", "--k", "10", "--alpha", "1.5"]), 3);
    assert_eq!(code(&["retrieve", "--images", &images, "--queries", &queries, "--method", "topk", "--k", "0", "--out", &fx.s("z")]), 3);

    let bad_threads = Command::new(env!("CARGO_BIN_EXE_fairsift"))
        .args(["analyze", "binomial", "--k", "10", "--alpha", "0.5"])
        .env("FAIRSIFT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(3));
}
