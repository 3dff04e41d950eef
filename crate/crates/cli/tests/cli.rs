use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pmquant::model::checkpoint::Checkpoint;
use pmquant::raster::geotiff::write_stack;
use pmquant::synthgen::SynthSpec;

fn pmquant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmquant"))
        .args(args)
        .env("PMQUANT_WORKERS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn pmquant")
}

fn ok(args: &[&str]) -> Output {
    let out = pmquant(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"
[synthetic]
samples = 12
height = 16
width = 16
bands = 3
seed = 5

[model]
depth = 1
base_features = 4

[train]
epochs = 2
steps_per_epoch = 2
minibatch_size = 2
tile_size = 16
learning_rate = 1e-3
"#;

/// Parameters and optimizer state; metadata carries wall-clock times.
fn tensors(path: &Path) -> Vec<(String, Vec<f32>)> {
    let ck = Checkpoint::<f32>::load(path).unwrap();
    ck.params.into_iter().chain(ck.state).map(|t| (t.name, t.data)).collect()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn empty_scene_directory_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("scenes")).unwrap();
    fs::create_dir(tmp.path().join("truth")).unwrap();
    let cfg = write_config(tmp.path(), "[preprocess]\nscene_dir = \"scenes\"\ntruth_dir = \"truth\"\n");
    let out = pmquant(&["preprocess", "--config", p(&cfg), "--out", p(&tmp.path().join("ds"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenes"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(pmquant(&["train", "--bogus"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = pmquant(&["train", "--config", p(&cfg), "--quantiles", "0.9,0.1", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let bad = write_config(tmp.path(), "[train]\nepochz = 3\n");
    let out = pmquant(&["preprocess", "--config", p(&bad), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synthetic_manifest_is_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    ok(&["preprocess", "--config", p(&cfg), "--out", p(&a)]);
    ok(&["preprocess", "--config", p(&cfg), "--out", p(&b)]);
    ok(&["preprocess", "--config", p(&cfg), "--seed", "6", "--out", p(&c)]);
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    for f in ["dataset.json", "band_stats.json", "train.txt", "test.txt"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert_ne!(read(&a, "dataset.json"), read(&c, "dataset.json"));
    assert!(a.join("run.json").exists());
}

#[test]
fn corpus_of_133_splits_106_27() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[synthetic]\nsamples = 133\nheight = 8\nwidth = 8\nbands = 2\n");
    let out = tmp.path().join("ds");
    ok(&["preprocess", "--config", p(&cfg), "--out", p(&out)]);
    let count = |f: &str| fs::read_to_string(out.join(f)).unwrap().lines().filter(|l| !l.is_empty()).count();
    assert_eq!((count("train.txt"), count("test.txt")), (106, 27));
}

#[test]
fn oracle_coverage_matches_nominal() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[synthetic]\nsamples = 40\nheight = 32\nwidth = 32\nbands = 2\nseed = 3\n");
    let ds = tmp.path().join("ds");
    ok(&["preprocess", "--config", p(&cfg), "--out", p(&ds)]);
    let ev = tmp.path().join("eval");
    ok(&["evaluate", "--oracle", "--dataset", p(&ds), "--split", "all", "--out", p(&ev)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    let cov = json["pooled"]["interval_coverage"].as_f64().unwrap();
    assert!((cov - 0.8).abs() < 0.02, "coverage {cov}");
    let above = json["pooled"]["frac_above_lower"].as_f64().unwrap();
    assert!((above - 0.9).abs() < 0.02, "above lower {above}");
    let rows = csv_rows(&ev.join("metrics.csv"));
    assert_eq!(rows.last().unwrap().get(0), Some("pooled"));
}

#[test]
fn pipeline_is_rerunnable_and_report_pairs_lie_on_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let ds = tmp.path().join("ds");
    ok(&["preprocess", "--config", p(&cfg), "--out", p(&ds)]);
    let (r1, r2) = (tmp.path().join("run1"), tmp.path().join("run2"));
    for r in [&r1, &r2] {
        ok(&["train", "--config", p(&cfg), "--dataset", p(&ds), "--out", p(r)]);
    }
    for f in ["config.toml", "train.log", "history.csv", "last.ckpt", "best.ckpt", "run.json"] {
        assert!(r1.join(f).exists(), "{f}");
    }
    let strip_clock = |d: &Path| -> Vec<Vec<String>> {
        csv_rows(&d.join("history.csv")).iter().map(|r| r.iter().take(r.len() - 1).map(str::to_string).collect()).collect()
    };
    assert_eq!(strip_clock(&r1), strip_clock(&r2));
    assert_eq!(strip_clock(&r1).len(), 2);
    assert_eq!(tensors(&r1.join("last.ckpt")), tensors(&r2.join("last.ckpt")));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(ds.join("dataset.json")).unwrap()).unwrap();
    let id = manifest["test"][0].as_str().unwrap();
    let input = ds.join("samples").join(id).join("input.tif");
    let (p1, p2) = (tmp.path().join("pred1"), tmp.path().join("pred2"));
    for (pd, run) in [(&p1, &r1), (&p2, &r2)] {
        ok(&["predict", "--checkpoint", p(&run.join("best.ckpt")), "--input", p(&input), "--normalized", "--out", p(pd)]);
    }
    for f in ["lower.tif", "median.tif", "upper.tif", "mask.tif"] {
        assert_eq!(fs::read(p1.join(f)).unwrap(), fs::read(p2.join(f)).unwrap(), "{f}");
    }

    let ev = tmp.path().join("eval");
    ok(&["evaluate", "--checkpoint", p(&r1.join("best.ckpt")), "--dataset", p(&ds), "--out", p(&ev)]);
    let rep = tmp.path().join("report");
    ok(&["report", "--pair", p(&p1), p(&p1), "--eval", p(&ev), "--run", p(&r1), "--bins", "10", "--out", p(&rep)]);
    let scatter = csv_rows(&rep.join("scatter.csv"));
    assert!(!scatter.is_empty());
    assert!(scatter.iter().all(|r| r.get(3) == r.get(4)));
    for r in csv_rows(&rep.join("quantile_shift.csv")) {
        assert_eq!(r.get(4), Some("0"));
    }
    let density = csv_rows(&rep.join("density.csv"));
    assert_eq!(density.len(), 6 * 10);
    assert_eq!(csv_rows(&rep.join("metrics_table.csv")).len(), 1);
    assert_eq!(csv_rows(&rep.join("curves.csv")).len(), 2);
}

#[test]
fn predict_with_wrong_band_count_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let ds = tmp.path().join("ds");
    ok(&["preprocess", "--config", p(&cfg), "--out", p(&ds)]);
    let run = tmp.path().join("run");
    ok(&["train", "--config", p(&cfg), "--dataset", p(&ds), "--epochs", "1", "--out", p(&run)]);
    let spec = SynthSpec { height: 16, width: 16, bands: 5, ..SynthSpec::default() };
    let input = tmp.path().join("five.tif");
    write_stack(&input, &spec.sample::<f32>(0).unwrap().input).unwrap();
    let out = pmquant(&["predict", "--checkpoint", p(&run.join("last.ckpt")), "--input", p(&input), "--out", p(&tmp.path().join("pred"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn resume_continues_from_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let ds = tmp.path().join("ds");
    ok(&["preprocess", "--config", p(&cfg), "--out", p(&ds)]);
    let (full, half) = (tmp.path().join("full"), tmp.path().join("half"));
    ok(&["train", "--config", p(&cfg), "--dataset", p(&ds), "--out", p(&full)]);
    ok(&["train", "--config", p(&cfg), "--dataset", p(&ds), "--epochs", "1", "--out", p(&half)]);
    let resumed = tmp.path().join("resumed");
    ok(&["train", "--config", p(&cfg), "--dataset", p(&ds), "--checkpoint", p(&half.join("last.ckpt")), "--out", p(&resumed)]);
    assert_eq!(tensors(&full.join("last.ckpt")), tensors(&resumed.join("last.ckpt")));
}
