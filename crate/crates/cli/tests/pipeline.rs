use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn grouplens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grouplens")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Vec<PathBuf> {
    let out = grouplens(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().lines().map(PathBuf::from).collect()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn small_model(dir: &Path) -> PathBuf {
    let path = dir.join("model.json");
    fs::write(&path, r#"{"embed_dim": 16, "heads": 2, "blocks": 2, "mlp_ratio": 2}"#).unwrap();
    path
}

#[test]
fn singleton_run_through_saliency_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let dataset = ok(&["gen", "p3", "--count", "3", "--seed", "1", "-o", &s(&d.join("p3"))]);
    let config = small_model(d);
    let run = ok(&["run-toy", "--dataset", &s(&dataset[0]), "--config", &s(&config), "-o", &s(&d.join("maps"))]);
    assert!(run[0].ends_with("toyvit-d16-h2-b2-p16-s0/run_manifest.json"));

    let reports = d.join("reports");
    let written = ok(&[
        "eval", "saliency", "--maps", &s(&d.join("maps")), "--chance-trials", "1000", "-o", &s(&reports),
    ]);
    for suffix in ["rates.csv", "msr.csv", "chance.csv"] {
        assert!(written.iter().any(|p| s(p).ends_with(suffix)), "{suffix} missing from {written:?}");
    }
    let rates = fs::read_to_string(reports.join("saliency_toyvit-d16-h2-b2-p16-s0_rates.csv")).unwrap();
    assert!(rates.starts_with("# config: {"));
    assert!(rates.lines().any(|l| l.starts_with("model_id,block,")));
    // 2 blocks x 2 kinds x (3 dims + all) x 4 thresholds
    assert_eq!(rates.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 2 * 4 * 4);

    let charts = ok(&["report", "--reports", &s(&reports), "-o", &s(&d.join("figures"))]);
    assert!(charts.iter().any(|p| p.extension().is_some_and(|e| e == "svg")));
    assert!(d.join("figures/summary.md").is_file());
}

#[test]
fn saved_weights_give_identical_maps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let dataset = ok(&["gen", "grouping", "--per-dim", "1", "--seed", "2", "-o", &s(&d.join("stim"))]);
    let config = small_model(d);
    let weights = d.join("weights");
    ok(&[
        "run-toy", "--dataset", &s(&dataset[0]), "--config", &s(&config), "--save-weights", &s(&weights), "-o",
        &s(&d.join("a")),
    ]);
    ok(&["run-toy", "--dataset", &s(&dataset[0]), "--weights", &s(&weights), "-o", &s(&d.join("b"))]);
    let rel = "toyvit-d16-h2-b2-p16-s0/v16-hue-0000/block1_feat_resid.npy";
    assert_eq!(fs::read(d.join("a").join(rel)).unwrap(), fs::read(d.join("b").join(rel)).unwrap());
}

#[test]
fn exit_codes() {
    let usage = grouplens(&["eval", "grouping", "--maps", "x"]);
    assert_eq!(usage.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let runtime = grouplens(&["eval", "grouping", "--maps", &s(&dir.path().join("absent")), "-o", &s(dir.path())]);
    assert_eq!(runtime.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&runtime.stderr).starts_with("error:"));
}
