use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn vb(args: &[&str]) -> Output {
    vb_env(args, &[])
}

fn vb_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_varybalance"));
    cmd.env_clear().args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_dir(o: &Output) -> PathBuf {
    let out = stdout(o);
    let line = out
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .unwrap_or_else(|| panic!("no run directory in {out:?} / {}", String::from_utf8_lossy(&o.stderr)));
    PathBuf::from(line)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    tmp: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            tmp: tempfile::tempdir().unwrap(),
        }
    }

    fn out(&self) -> PathBuf {
        self.tmp.path().join("runs")
    }

    fn cache(&self) -> PathBuf {
        self.tmp.path().join("cache")
    }

    fn detect(&self, extra: &[&str]) -> Output {
        let corpus = fixtures().join("corpus10.jsonl");
        let config = fixtures().join("mock.toml");
        let (out, cache) = (self.out(), self.cache());
        let mut args = vec![
            "detect",
            path(&corpus),
            "--config",
            path(&config),
            "--cache-dir",
            path(&cache),
            "--out",
            path(&out),
        ];
        args.extend_from_slice(extra);
        vb(&args).clone()
    }
}

#[test]
fn detect_matches_golden() {
    let ws = Workspace::new();
    let o = ws.detect(&[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got = fs::read_to_string(run_dir(&o).join("scores.jsonl")).unwrap();
    let want = fs::read_to_string(fixtures().join("golden/corpus10_scores.jsonl")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn variant_controls_schema() {
    let ws = Workspace::new();
    let o = ws.detect(&["--variant", "expansion"]);
    let first: Value = serde_json::from_str(
        fs::read_to_string(run_dir(&o).join("scores.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert!(first.get("rho").is_some() && first.get("score_e").is_some());

    let o = ws.detect(&["--variant", "base"]);
    let first: Value = serde_json::from_str(
        fs::read_to_string(run_dir(&o).join("scores.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert!(first.get("rho").is_none() && first.get("score_e").is_none());
    assert_eq!(first["variant"], "base");
}

#[test]
fn rerun_is_identical_and_free() {
    let ws = Workspace::new();
    let corpus = fixtures().join("corpus10.jsonl");
    let before = fs::read(&corpus).unwrap();
    let a = run_dir(&ws.detect(&[]));
    let b = run_dir(&ws.detect(&[]));
    assert_ne!(a, b);
    assert_eq!(
        fs::read(a.join("scores.jsonl")).unwrap(),
        fs::read(b.join("scores.jsonl")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("rewrites.jsonl")).unwrap(),
        fs::read(b.join("rewrites.jsonl")).unwrap()
    );
    let m = manifest(&b);
    assert_eq!(m["counters"]["rewrite"]["provider_calls"], 0);
    assert_eq!(m["counters"]["score"]["provider_calls"], 0);
    assert_eq!(m["counters"]["rewrite"]["cache_hits"], 30);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["rewriter_id"], "mock:perturb-v1");
    assert_eq!(fs::read(&corpus).unwrap(), before);
}

#[test]
fn threshold_writes_predictions() {
    let ws = Workspace::new();
    let o = ws.detect(&["--threshold", "4.7"]);
    let preds = fs::read_to_string(run_dir(&o).join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 10);
    for line in preds.lines() {
        let p: Value = serde_json::from_str(line).unwrap();
        let expected = if p["score"].as_f64().unwrap() >= 4.7 {
            "human"
        } else {
            "machine"
        };
        assert_eq!(p["label"], expected);
    }
}

#[test]
fn unreachable_provider_fails_cleanly() {
    let ws = Workspace::new();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = ws.tmp.path().join("remote.toml");
    fs::write(
        &config,
        format!(
            "[rewriter]\nkind = \"openai-chat\"\nbase_url = \"http://127.0.0.1:{port}/v1\"\nmodel = \"m\"\nmax_retries = 0\n\n[scorer]\nkind = \"ngram\"\nmodel = \"{}\"\n",
            fixtures().join("ngram3.json").display()
        ),
    )
    .unwrap();
    let corpus = fixtures().join("corpus10.jsonl");
    let (out, cache) = (ws.out(), ws.cache());
    let o = vb(&[
        "detect",
        path(&corpus),
        "--config",
        path(&config),
        "--cache-dir",
        path(&cache),
        "--out",
        path(&out),
    ]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[rewrite]"), "{err}");
    let runs: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1);
    assert!(!runs[0].join("scores.jsonl").exists());
    assert_eq!(manifest(&runs[0])["status"], "failed");
}

#[test]
fn missing_scorer_is_an_error() {
    let ws = Workspace::new();
    let corpus = fixtures().join("corpus10.jsonl");
    let out = ws.out();
    let o = vb(&["detect", path(&corpus), "--no-cache", "--out", path(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no scorer configured"));
}

#[test]
fn precedence_flag_env_file() {
    let ws = Workspace::new();
    let k_of = |o: &Output| manifest(&run_dir(o))["config"]["n_rewrites"].as_u64().unwrap();
    let corpus = fixtures().join("corpus10.jsonl");
    let config = fixtures().join("mock.toml");
    let out = ws.out();
    let base = [
        "detect",
        path(&corpus),
        "--config",
        path(&config),
        "--no-cache",
        "--out",
        path(&out),
    ];

    assert_eq!(k_of(&vb(&base)), 3);
    assert_eq!(k_of(&vb_env(&base, &[("VARYBALANCE_K", "2")])), 2);
    let mut with_flag = base.to_vec();
    with_flag.extend(["--k", "4"]);
    assert_eq!(k_of(&vb_env(&with_flag, &[("VARYBALANCE_K", "2")])), 4);
}

/// Pairwise oracle over a scores file.
fn oracle_auroc(scores: &Path, human: impl Fn(&str) -> bool) -> f64 {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for line in fs::read_to_string(scores).unwrap().lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        let v = r["score_e"].as_f64().unwrap_or_else(|| r["score"].as_f64().unwrap());
        if human(r["sample_id"].as_str().unwrap()) {
            pos.push(v);
        } else {
            neg.push(v);
        }
    }
    let mut num = 0.0;
    for p in &pos {
        for n in &neg {
            num += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    num / (pos.len() * neg.len()) as f64
}

fn printed_auroc(o: &Output) -> f64 {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix("auroc: "))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn eval_matches_oracle_and_complements() {
    let ws = Workspace::new();
    let scores = fixtures().join("golden/corpus10_scores.jsonl");
    let labels = fixtures().join("corpus10.jsonl");
    let out = ws.out();
    let o = vb(&["eval", path(&scores), "--labels", path(&labels), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let auroc = printed_auroc(&o);
    assert!((auroc - oracle_auroc(&scores, |id| id.starts_with('h'))).abs() <= 1e-9);

    let dir = run_dir(&o);
    let csv = fs::read_to_string(dir.join("roc.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "threshold,fpr,tpr");
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["positive_class"], "human");
    assert_eq!(
        report["class_stats"]["human"]["histogram"]["counts"]
            .as_array()
            .unwrap()
            .len(),
        30
    );

    let o = vb(&[
        "eval",
        path(&scores),
        "--labels",
        path(&labels),
        "--positive",
        "machine",
        "--out",
        path(&out),
    ]);
    assert!((printed_auroc(&o) - (1.0 - auroc)).abs() <= 1e-12);
}

#[test]
fn eval_names_unlabeled_sample() {
    let ws = Workspace::new();
    let labels = ws.tmp.path().join("labels.jsonl");
    let corpus = fs::read_to_string(fixtures().join("corpus10.jsonl")).unwrap();
    fs::write(
        &labels,
        corpus
            .lines()
            .filter(|l| !l.contains("\"m03\""))
            .collect::<Vec<_>>()
            .join("\n"),
    )
    .unwrap();
    let scores = fixtures().join("golden/corpus10_scores.jsonl");
    let out = ws.out();
    let o = vb(&["eval", path(&scores), "--labels", path(&labels), "--out", path(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("m03"));
}

#[test]
fn study_matches_golden() {
    let ws = Workspace::new();
    let pairs = fixtures().join("synth12/pairs.jsonl");
    let config = fixtures().join("synth12/config.toml");
    let out = ws.out();
    let o = vb(&[
        "study",
        path(&pairs),
        "--config",
        path(&config),
        "--no-cache",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got = fs::read_to_string(run_dir(&o).join("study.json")).unwrap();
    let want = fs::read_to_string(fixtures().join("golden/synth12_study.json")).unwrap();
    assert_eq!(got, want);
    let report: Value = serde_json::from_str(&got).unwrap();
    assert_eq!(report["pair_fraction"], 1.0);
    assert!(stdout(&o).contains("reference"));
}

#[test]
fn study_identity_is_degenerate() {
    let ws = Workspace::new();
    let pairs = fixtures().join("synth12/pairs.jsonl");
    let config = fixtures().join("synth12/config.toml");
    let out = ws.out();
    let o = vb(&[
        "study",
        path(&pairs),
        "--config",
        path(&config),
        "--rewriter",
        "identity",
        "--no-cache",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(run_dir(&o).join("study.json")).unwrap()).unwrap();
    assert_eq!(report["mean_msd_human"], 0.0);
    assert_eq!(report["mean_msd_machine"], 0.0);
    assert_eq!(report["pair_fraction"], 0.0);
}

#[test]
fn study_regenerates_machine_answers() {
    let ws = Workspace::new();
    let pairs = fixtures().join("synth12/pairs.jsonl");
    let out = ws.out();
    let model = fixtures().join("ngram3.json");
    let scorer = format!("ngram:{}", model.display());
    let cache = ws.cache();
    let args = [
        "study",
        path(&pairs),
        "--scorer",
        &scorer,
        "--regenerate",
        "--cache-dir",
        path(&cache),
        "--out",
        path(&out),
    ];
    let o = vb(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = run_dir(&o);
    let m = manifest(&dir);
    assert_eq!(m["counters"]["generate"]["provider_calls"], 12);
    assert_eq!(m["generator_id"], "mock:answer-v1");
    assert!(fs::read_to_string(dir.join("pairs.jsonl"))
        .unwrap()
        .contains("p0001-gen"));

    let again = manifest(&run_dir(&vb(&args)));
    assert_eq!(again["counters"]["generate"]["provider_calls"], 0);
    assert_eq!(again["counters"]["generate"]["cache_hits"], 12);
}

#[test]
fn rewrite_score_and_cache_stats() {
    let ws = Workspace::new();
    let corpus = fixtures().join("corpus10.jsonl");
    let model = fixtures().join("ngram3.json");
    let scorer = format!("ngram:{}", model.display());
    let (out, cache) = (ws.out(), ws.cache());

    let o = vb(&[
        "rewrite",
        path(&corpus),
        "--k",
        "2",
        "--cache-dir",
        path(&cache),
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(run_dir(&o).join("rewrites.jsonl"))
            .unwrap()
            .lines()
            .count(),
        10
    );

    let o = vb(&[
        "score",
        path(&corpus),
        "--scorer",
        &scorer,
        "--cache-dir",
        path(&cache),
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first: Value = serde_json::from_str(
        fs::read_to_string(run_dir(&o).join("log_ppl.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert!(first["log_ppl"].as_f64().unwrap() > 0.0);

    let o = vb(&["cache", "stats", "--cache-dir", path(&cache), "--json"]);
    let stats: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(stats["entries"]["rewrite"], 20);
    assert_eq!(stats["entries"]["score"], 10);
    assert_eq!(stats["runs"], 2);
}

#[test]
fn fit_ngram_and_synth_write_files() {
    let ws = Workspace::new();
    let model = ws.tmp.path().join("m.json");
    let train = fixtures().join("ngram_train.txt");
    let o = vb(&["fit-ngram", path(&train), "--order", "2", "--output", path(&model)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("2gram-ws-"));
    assert!(model.exists());

    let dir = ws.tmp.path().join("synth");
    let o = vb(&["synth", "--pairs", "5", "--output", path(&dir)]);
    assert!(o.status.success());
    for f in ["pairs.jsonl", "corpus.jsonl", "table.jsonl", "config.toml"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}
