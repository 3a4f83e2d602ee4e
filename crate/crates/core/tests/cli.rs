use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use pointseq::data::{gen_shape, save_xyz, ShapeFamily};
use pointseq::oracle;

fn pointseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointseq")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn records(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn of_kind<'a>(recs: &'a [Value], kind: &str) -> Vec<&'a Value> {
    recs.iter().filter(|r| r["kind"] == kind).collect()
}

/// Small model and dataset so a full `train` takes well under a second.
const SMALL: &str = r#"
[model]
d_e = 8
layers = 1
n_points = 48
n_c = 8
n_p = 8
d_state = 4
patch_hidden = 8
pe_hidden = 8
head_hidden = 8

[train]
epochs = 3
batch_size = 4

[data]
per_class = 5
"#;

struct Dir {
    tmp: TempDir,
}

impl Dir {
    fn new() -> Self {
        Dir { tmp: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_owned()
    }

    fn config(&self, extra: &str) -> String {
        let p = self.path("cfg.toml");
        fs::write(&p, format!("{extra}{SMALL}")).unwrap();
        p.to_str().unwrap().to_owned()
    }
}

fn sphere_file(dir: &Dir) -> String {
    let cloud = gen_shape(&ShapeFamily::Sphere.canonical(), 400, 9).unwrap();
    save_xyz(dir.path("sphere.xyz"), &cloud).unwrap();
    dir.s("sphere.xyz")
}

#[test]
fn reorder_sphere_is_a_permutation_with_local_steps() {
    let dir = Dir::new();
    let input = sphere_file(&dir);
    let out = pointseq(&[
        "reorder",
        "--input",
        &input,
        "--ordering",
        "nimba",
        "-r",
        "0.8",
        "--n-c",
        "64",
        "-o",
        &dir.s("o.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path("o.json")).unwrap()).unwrap();
    let order: Vec<usize> = serde_json::from_value(v["order"].clone()).unwrap();
    assert!(oracle::is_permutation(&order, 64));
    let d = v["adjacent_distances"].as_array().unwrap();
    assert_eq!(d.len(), 63);
    let frac = v["fraction_below_r"].as_f64().unwrap();
    let below = d.iter().filter(|x| x.as_f64().unwrap() < 0.8).count() as f64 / 63.0;
    assert_eq!(frac, below);
    assert!(frac > 0.8, "{frac}");
}

#[test]
fn wide_threshold_reorder_equals_ysort() {
    let dir = Dir::new();
    let input = sphere_file(&dir);
    let run = |args: &[&str]| -> Value {
        let mut all = vec!["reorder", "--input", &input, "--n-c", "48"];
        all.extend_from_slice(args);
        let out = pointseq(&all);
        assert_eq!(code(&out), 0);
        serde_json::from_slice(&out.stdout).unwrap()
    };
    let wide = run(&["--ordering", "nimba", "-r", "10"]);
    let ys = run(&["--ordering", "ysort"]);
    assert_eq!(wide["order"], ys["order"]);
    assert_eq!(wide["point_indices"], ys["point_indices"]);
}

#[test]
fn axis_triple_reorder_has_three_copies() {
    let dir = Dir::new();
    let input = sphere_file(&dir);
    let out = pointseq(&["reorder", "--input", &input, "--n-c", "16", "--ordering", "axis-triple"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let order: Vec<usize> = serde_json::from_value(v["order"].clone()).unwrap();
    assert_eq!(order.len(), 48);
    for chunk in order.chunks(16) {
        assert!(oracle::is_permutation(chunk, 16));
    }
}

#[test]
fn zero_learning_rate_leaves_metrics_unchanged() {
    let dir = Dir::new();
    let cfg = dir.config("");
    let m = dir.s("m.jsonl");
    let out = pointseq(&["train", "--config", &cfg, "--lr", "0", "--metrics-out", &m]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let recs = records(Path::new(&m));
    let t = of_kind(&recs, "train")[0];
    assert_eq!(t["test_acc"], t["initial_test_acc"]);
    assert_eq!(t["test_loss"], t["initial_test_loss"]);
}

#[test]
fn metrics_lines_follow_the_schema() {
    let dir = Dir::new();
    let cfg = dir.config("");
    let m = dir.s("m.jsonl");
    assert_eq!(code(&pointseq(&["train", "--config", &cfg, "--seed", "4", "--metrics-out", &m])), 0);
    let text = fs::read_to_string(&m).unwrap();
    let recs = records(Path::new(&m));
    assert_eq!(recs[0]["kind"], "config");
    assert_eq!(recs[0]["seed"], 4);
    for (line, r) in text.lines().zip(&recs) {
        assert_eq!(r["schema"], "pointseq.metrics/1");
        let keys: Vec<&String> = r.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted, "{line}");
        assert!(!line.contains("time"), "{line}");
    }
    assert_eq!(of_kind(&recs, "epoch").len(), 3);
}

#[test]
fn flags_override_the_config_file() {
    let dir = Dir::new();
    let cfg = dir.config("seed = 9\n");
    let m = dir.s("m.jsonl");
    assert_eq!(code(&pointseq(&["train", "--config", &cfg, "--epochs", "1", "--metrics-out", &m])), 0);
    let recs = records(Path::new(&m));
    assert_eq!(of_kind(&recs, "epoch").len(), 1);
    assert_eq!(recs[0]["seed"], 9);
    assert_eq!(recs[0]["config"]["train"]["batch_size"], 4);

    let bad = dir.path("bad.toml");
    fs::write(&bad, "[train]\nepochz = 3\n").unwrap();
    assert_eq!(code(&pointseq(&["train", "--config", bad.to_str().unwrap()])), 1);
}

#[test]
fn eval_reproduces_the_final_test_accuracy() {
    let dir = Dir::new();
    let cfg = dir.config("");
    let (m, ckpt, e) = (dir.s("m.jsonl"), dir.s("model.ckpt"), dir.s("e.jsonl"));
    let out = pointseq(&["train", "--config", &cfg, "--seed", "2", "--metrics-out", &m, "--checkpoint-out", &ckpt]);
    assert_eq!(code(&out), 0);
    let out = pointseq(&["eval", "--config", &cfg, "--seed", "2", "--checkpoint", &ckpt, "--metrics-out", &e]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trained = records(Path::new(&m));
    let evaluated = records(Path::new(&e));
    assert_eq!(of_kind(&trained, "train")[0]["test_acc"], of_kind(&evaluated, "eval")[0]["accuracy"]);
}

#[test]
fn test_noise_is_applied_only_at_evaluation() {
    let dir = Dir::new();
    let cfg = dir.config("");
    let m = dir.s("m.jsonl");
    let out = pointseq(&[
        "train",
        "--config",
        &cfg,
        "--perturb",
        "rotation",
        "--apply-to",
        "test",
        "--lr",
        "0",
        "--metrics-out",
        &m,
    ]);
    assert_eq!(code(&out), 0);
    let recs = records(Path::new(&m));
    let t = of_kind(&recs, "train")[0];
    assert_eq!(t["perturb"]["kind"], "rotation");
    assert_eq!(t["perturb"]["apply_to"], "test");
}

#[test]
fn exit_codes() {
    let dir = Dir::new();
    assert_eq!(code(&pointseq(&["frobnicate"])), 1);
    assert_eq!(code(&pointseq(&["train", "--pe", "maybe"])), 1);
    assert_eq!(code(&pointseq(&["reorder", "--input", "/nonexistent.xyz"])), 2);
    fs::write(dir.path("broken.xyz"), "1 2\n").unwrap();
    assert_eq!(code(&pointseq(&["reorder", "--input", &dir.s("broken.xyz")])), 2);
    let input = sphere_file(&dir);
    assert_eq!(code(&pointseq(&["reorder", "--input", &input, "--r=-1"])), 1);
    assert_eq!(code(&pointseq(&["--help"])), 0);
}

#[test]
fn runaway_learning_rate_exits_with_divergence() {
    let dir = Dir::new();
    let cfg = dir.config("");
    let out = pointseq(&["train", "--config", &cfg, "--lr", "1e200", "--epochs", "3"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn check_passes_and_catches_corrupted_decay() {
    let ok = pointseq(&["check", "--seed", "3"]);
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(code(&ok), 0, "{stdout}");
    assert!(stdout.lines().all(|l| !l.starts_with("FAIL")));

    let bad = pointseq(&["check", "--corrupt-a-log"]);
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert_eq!(code(&bad), 3);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL") && l.contains("s6.")), "{stdout}");
}

#[test]
fn bench_emits_one_record_per_timing() {
    let dir = Dir::new();
    let m = dir.s("b.jsonl");
    let out = pointseq(&[
        "bench",
        "--widths",
        "4,8",
        "--lengths",
        "8,16",
        "--n-c",
        "4",
        "--repeats",
        "2",
        "--warmup",
        "0",
        "--metrics-out",
        &m,
    ]);
    assert_eq!(code(&out), 0);
    let recs = records(Path::new(&m));
    assert_eq!(of_kind(&recs, "machine").len(), 1);
    assert_eq!(of_kind(&recs, "bench").len(), 2 * 2 + 2 * 2);
}
