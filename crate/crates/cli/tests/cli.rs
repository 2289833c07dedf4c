use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cellvec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellvec"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = cellvec(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_world(dir: &Path) {
    ok(&["synth", "--agents", "12", "--days", "8", "--world-seed", "3", "--out-dir", "synth"], dir);
}

fn trained(dir: &Path) {
    small_world(dir);
    ok(&["stops", "--input", "synth/waypoints.csv", "--out-dir", "stops"], dir);
    ok(&["corpus", "--sequences", "stops/sequences.txt", "--min-count", "2", "--out-dir", "corpus"], dir);
    ok(&["train", "--corpus-dir", "corpus", "--dim", "8", "--epochs", "2", "--out-dir", "train"], dir);
}

#[test]
fn staged_run_produces_every_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    trained(dir);
    let model = ["--model", "train/embeddings.txt", "--pois", "synth/pois.csv"];
    ok(&[&["query"][..], &model, &["--k", "5", "--out-dir", "query"]].concat(), dir);
    ok(&[&["analyze", "category-sim"][..], &model, &["--sample-size", "20", "--out-dir", "cat"]].concat(), dir);
    ok(&[&["analyze", "decay"][..], &model, &["--dump-pairs", "--svg", "--out-dir", "decay"]].concat(), dir);
    ok(&[&["analyze", "variogram"][..], &model, &["--svg", "--out-dir", "vario"]].concat(), dir);

    let neighbors = json(dir.join("query/neighbors.json"));
    assert_eq!(neighbors["neighbors"].as_array().unwrap().len(), 5);
    let geo = json(dir.join("query/neighbors.geojson"));
    assert_eq!(geo["type"], "FeatureCollection");
    assert_eq!(geo["features"].as_array().unwrap().len(), 6);

    let cats = json(dir.join("cat/category_sim.json"));
    let results = cats["results"].as_array().unwrap();
    assert_eq!(results.len(), 4);
    for r in results {
        let p = r["p_two_sided"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    let decay = json(dir.join("decay/decay.json"));
    let names: Vec<&str> = decay["fits"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["overall", "local", "long"]);
    let pairs = fs::read_to_string(dir.join("decay/decay_pairs.csv")).unwrap();
    assert_eq!(pairs.lines().next(), Some("D,CS"));
    assert_eq!(
        pairs.lines().count() as u64 - 1,
        decay["fits"][0]["fit"]["n_pairs"].as_u64().unwrap()
    );
    assert!(fs::read_to_string(dir.join("decay/decay.svg")).unwrap().starts_with("<svg"));

    let vario = fs::read_to_string(dir.join("vario/variogram.csv")).unwrap();
    assert_eq!(vario.lines().next(), Some("h_mid,n_pairs,gamma"));
    assert_eq!(vario.lines().count(), 101);

    for stage in ["synth", "stops", "corpus", "train", "query", "cat", "decay", "vario"] {
        let m = json(dir.join(stage).join("manifest.json"));
        for f in m["outputs"].as_array().unwrap() {
            let path = dir.join(stage).join(f["path"].as_str().unwrap());
            assert_eq!(fs::metadata(&path).unwrap().len(), f["bytes"].as_u64().unwrap());
        }
    }
}

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["pipeline", "--help"], &["analyze", "variogram", "--help"]] {
        let out = cellvec(args, tmp.path());
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn missing_input_exits_one_and_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cellvec(&["stops", "--input", "no_such_waypoints.csv", "--out-dir", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_waypoints.csv"));
}

#[test]
fn unknown_flag_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cellvec(&["train", "--no-such-flag"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = cellvec(&["stops", "--out-dir", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replay_reproduces_recorded_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    trained(dir);
    ok(&["replay", "train/manifest.json", "--out-dir", "train_again"], dir);
    for f in ["embeddings.txt", "embeddings.txt.ctx", "train_report.json"] {
        assert_eq!(fs::read(dir.join("train").join(f)).unwrap(), fs::read(dir.join("train_again").join(f)).unwrap());
    }
    assert_eq!(
        json(dir.join("train/manifest.json"))["outputs"],
        json(dir.join("train_again/manifest.json"))["outputs"]
    );
}

#[test]
fn command_line_overrides_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.conf"), "# small\nagents = 3\ndays = 2\nworld_seed = 9\nunrelated_key = 1\n").unwrap();
    ok(&["synth", "--config", "run.conf", "--out-dir", "a"], dir);
    ok(&["synth", "--config", "run.conf", "--days", "1", "--out-dir", "b"], dir);
    let a = json(dir.join("a/manifest.json"));
    let b = json(dir.join("b/manifest.json"));
    assert_eq!((a["args"]["agents"].as_u64(), a["args"]["days"].as_u64()), (Some(3), Some(2)));
    assert_eq!((b["args"]["agents"].as_u64(), b["args"]["days"].as_u64()), (Some(3), Some(1)));
    assert_eq!(a["seed"].as_u64(), Some(9));
}
