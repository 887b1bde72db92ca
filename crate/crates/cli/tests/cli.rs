use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sepkit::datagen::{load_split, DatasetManifest, Split};
use sepkit::harness::{read_rows_csv, EvalReport, ExperimentConfig};
use sepkit::nets::BasisKind;
use sepkit::signal::{write_wav, WavEncoding};

fn sepkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sepkit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sepkit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn mixgen(dir: &Path, extra: &[&str]) -> DatasetManifest {
    let mut args = vec!["mixgen", "--synthetic", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(&args);
    DatasetManifest::read(&dir.join("manifest.jsonl")).unwrap()
}

fn summary_value(path: &Path, key: &str) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("{key} missing from {text}"))
        .parse()
        .unwrap()
}

#[test]
fn mixgen_gain_flag_attenuates_sources() {
    let dir = tempfile::tempdir().unwrap();
    let m = mixgen(dir.path(), &["--n-train", "6", "--max-gain-db", "9", "--seed", "3"]);
    assert_eq!(m.header.clip.max_gain_db, 9.0);
    let gains: Vec<f64> = m.recipes.iter().flat_map(|r| r.sources.iter().map(|s| s.gain_db)).collect();
    assert!(gains.iter().all(|g| (-9.0..=0.0).contains(g)));
    assert!(gains.iter().any(|&g| g < 0.0));
    for ex in load_split(dir.path(), Split::Train).unwrap() {
        for t in 0..ex.mixture.len() {
            let sum: f64 = ex.references.iter().map(|r| r.samples()[t]).sum();
            assert_eq!(ex.mixture.samples()[t], sum);
        }
    }
    let out = sepkit(&["mixgen", "--synthetic", "--max-gain-db=-1", "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn mixgen_counts_and_checksum_are_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--k", "2", "--n-train", "50", "--seed", "7"];
    let first = mixgen(a.path(), &args);
    let second = mixgen(b.path(), &args);
    let count = |s| first.recipes_in(s).count();
    assert_eq!((count(Split::Train), count(Split::Validation), count(Split::Test)), (50, 14, 7));
    assert_eq!(first.checksum(), second.checksum());
    assert_eq!(
        fs::read(a.path().join("manifest.jsonl")).unwrap(),
        fs::read(b.path().join("manifest.jsonl")).unwrap()
    );
    for split in [Split::Train, Split::Validation, Split::Test] {
        let rendered = load_split(a.path(), split).unwrap();
        assert_eq!(rendered.len(), count(split));
    }
}

#[test]
fn mixgen_three_sources_use_distinct_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = mixgen(dir.path(), &["--k", "3", "--n-train", "20", "--profile", "mixed"]);
    for r in &m.recipes {
        let files: HashSet<&str> = r.sources.iter().map(|s| s.file.as_str()).collect();
        assert_eq!(files.len(), 3);
        assert!(r.sources.iter().all(|s| m.header.partition[&s.file] == r.split));
    }
    let test = load_split(dir.path(), Split::Test).unwrap();
    assert!(test.iter().all(|e| e.references.len() == 3));
}

#[test]
fn evaluate_flags_perfect_estimates_and_zeroes_mixture_copies() {
    let dir = tempfile::tempdir().unwrap();
    mixgen(dir.path(), &["--n-train", "14", "--policy", "one-per-class"]);
    let data = dir.path().to_str().unwrap();
    let test = load_split(dir.path(), Split::Test).unwrap();
    let perfect = dir.path().join("perfect");
    let copies = dir.path().join("copies");
    for ex in &test {
        for (k, r) in ex.references.iter().enumerate() {
            fs::create_dir_all(perfect.join(&ex.id)).unwrap();
            fs::create_dir_all(copies.join(&ex.id)).unwrap();
            write_wav(r, perfect.join(&ex.id).join(format!("estimate{k}.wav")), WavEncoding::Float32).unwrap();
            write_wav(&ex.mixture, copies.join(&ex.id).join(format!("estimate{k}.wav")), WavEncoding::Float32)
                .unwrap();
        }
    }
    let out = dir.path().join("eval_perfect");
    ok(&["evaluate", "--dataset", data, "--estimates", perfect.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(summary_value(&out.join("report_summary.csv"), "n_excluded"), test.len() as f64);
    let rows = read_rows_csv(fs::File::open(out.join("report.csv")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.si_sdri.iter().all(|v| *v == f64::INFINITY)));

    let out = dir.path().join("eval_copies");
    ok(&["evaluate", "--dataset", data, "--estimates", copies.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let mean = summary_value(&out.join("report_summary.csv"), "mean_si_sdri");
    assert!(mean.abs() < 0.2, "{mean}");
    // the summary is recomputable from the per-example rows
    let rows = read_rows_csv(fs::File::open(out.join("report.csv")).unwrap()).unwrap();
    assert_eq!(EvalReport::from_rows(rows, Default::default()).mean_si_sdri, mean);
}

#[test]
fn oracle_eval_and_sweep_on_disjoint_bands() {
    let dir = tempfile::tempdir().unwrap();
    mixgen(dir.path(), &["--n-train", "14", "--n-test", "10", "--policy", "one-per-class", "--seed", "3"]);
    let data = dir.path().to_str().unwrap();
    let out = dir.path().join("oracle");
    ok(&["oracle-eval", "--dataset", data, "--window-ms", "10", "--out", out.to_str().unwrap()]);
    let mean = summary_value(&out.join("oracle_report_summary.csv"), "mean_si_sdri");
    assert!(mean >= 20.0, "{mean}");

    let csv = dir.path().join("sweep.csv");
    ok(&["sweep", "--dataset", data, "--out", csv.to_str().unwrap()]);
    let text = fs::read_to_string(&csv).unwrap();
    let windows: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(windows, vec![2.5, 5.0, 10.0, 25.0, 50.0]);
    let ten_ms: f64 = text.lines().nth(3).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(ten_ms, mean);
}

#[test]
fn train_separate_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    mixgen(dir.path(), &["--n-train", "8", "--n-val", "2", "--n-test", "2", "--policy", "one-per-class"]);
    let mut cfg = ExperimentConfig::desk("smoke", BasisKind::Stft, 10.0).unwrap();
    cfg.experiment.manifest = dir.path().join("manifest.jsonl");
    cfg.experiment.output_dir = dir.path().join("run");
    cfg.training.steps = 3;
    cfg.training.crop_s = 0.25;
    let cfg_path = dir.path().join("experiment.toml");
    cfg.save(&cfg_path).unwrap();
    ok(&["train", "--config", cfg_path.to_str().unwrap()]);
    let model = dir.path().join("run/model.skpt");
    let log = fs::read_to_string(dir.path().join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("step,loss,permutation,wall_time_s"));
    assert!(dir.path().join("run/validation_report.csv").exists());

    let data = dir.path().to_str().unwrap();
    let est = dir.path().join("est");
    ok(&["separate", "--model", model.to_str().unwrap(), "--dataset", data, "--out", est.to_str().unwrap()]);
    let direct = dir.path().join("eval_model");
    let from_files = dir.path().join("eval_files");
    ok(&[
        "evaluate", "--dataset", data, "--model", model.to_str().unwrap(), "--config", cfg_path.to_str().unwrap(),
        "--out", direct.to_str().unwrap(),
    ]);
    ok(&["evaluate", "--dataset", data, "--estimates", est.to_str().unwrap(), "--out", from_files.to_str().unwrap()]);
    // Float32 storage of the estimates moves the scores only slightly.
    let a = summary_value(&direct.join("report_summary.csv"), "mean_si_sdri");
    let b = summary_value(&from_files.join("report_summary.csv"), "mean_si_sdri");
    assert!((a - b).abs() < 1e-3, "{a} vs {b}");

    let mut other = cfg.clone();
    other.network.bottleneck = 16;
    let other_path = dir.path().join("other.toml");
    other.save(&other_path).unwrap();
    let out = sepkit(&[
        "evaluate", "--dataset", data, "--model", model.to_str().unwrap(), "--config", other_path.to_str().unwrap(),
        "--out", direct.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));

    let out = sepkit(&["evaluate", "--dataset", data, "--model", "/nonexistent.skpt", "--out", direct.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn grad_check_passes_by_default_and_fails_at_a_tiny_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grad.csv");
    let stdout = ok(&["grad-check", "--out", csv.to_str().unwrap()]);
    assert!(stdout.contains("all 28 components"));
    let text = fs::read_to_string(&csv).unwrap();
    let names: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for op in sepkit::autograd::OPERATORS {
        assert_eq!(names.iter().filter(|n| **n == op).count(), 1, "{op}");
    }
    let out = sepkit(&["grad-check", "--threshold", "1e-12"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gradient check failed"));
}
