use std::fs;

use vcbench_core::jointtrain::{evaluate, ReportMeta};
use vcbench_core::nets::OutputMode;

use vcbench::config::{preset, ExperimentConfig};
use vcbench::error::BenchError;
use vcbench::report::{compare_runs, emit_report, max_abs_delta};
use vcbench::runner::{load_seed, run_experiment, seed_dir, sweep_attributes, sweep_tradeoffs, Aggregate};

/// Two seeds, a few epochs, a small synthetic task.
fn quick() -> ExperimentConfig {
    let mut cfg = preset("desk-synthetic").unwrap();
    cfg.name = "quick".into();
    cfg.dataset.name = "synthetic-categorical:4:600".into();
    cfg.dataset.size = [12, 12];
    cfg.train.epochs = 3;
    cfg.defense.schemes = vec!["identity".into(), "argmax".into(), "round(2)".into()];
    cfg.detector.steps = 4;
    cfg.detector.probe_size = 64;
    cfg
}

#[test]
fn two_seed_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let summary = run_experiment(&quick(), &out, false).unwrap();
    let agg = &summary.aggregate;
    assert_eq!(agg.seeds, vec![0, 1]);
    assert!(agg.failed_seeds.is_empty());
    for m in [&agg.acc, &agg.psnr, &agg.ssim, &agg.risk] {
        assert_eq!(m.n, 2);
        assert!(m.mean.is_finite() && m.std.is_finite() && m.std >= 0.0);
    }
    assert_eq!(agg.defenses.len(), 3);
    assert!(agg.vicious_likelihood.is_some());
    for f in ["config.toml", "manifest.json", "aggregate.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    for f in ["history.csv", "risk.json", "models.vckp", "stats.vctn", "recon.png", "defenses.csv", "frontier.svg", "detection.json", "cosine.svg"] {
        assert!(seed_dir(&out, 1).join(f).exists(), "{f}");
    }
    let written: Aggregate = serde_json::from_str(&fs::read_to_string(out.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(written.config_hash, quick().hash());
    assert!(written.code_version.starts_with("vcbench "));

    let md = emit_report(&out).unwrap();
    for key in ["ACC", "PSNR", "SSIM", "| R |", "argmax", "vicious likelihood"] {
        assert!(md.contains(key), "{key} missing from report");
    }
    let summary_json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    for key in ["acc", "psnr", "ssim", "risk"] {
        assert!(summary_json["aggregate"][key]["mean"].is_number(), "{key}");
    }

    // saved models reload to the same evaluation
    let loaded = load_seed(&out, 0).unwrap();
    let ds = &loaded.data;
    let meta = ReportMeta { dataset: &ds.name, output_mode: "logits".into(), seed: 0 };
    let again = evaluate(&loaded.classifier, &loaded.decoder, &ds.test, ds.shape, &ds.label_space, OutputMode::Logits, Some(&loaded.stats), meta).unwrap();
    let first = &summary.outcomes[0].report;
    assert_eq!(again.acc, first.acc);
    assert_eq!(again.risk, first.risk);
}

#[test]
fn existing_run_is_refused_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = quick();
    cfg.seeds = vec![0];
    cfg.detector.enabled = false;
    cfg.defense.schemes.clear();
    run_experiment(&cfg, &out, false).unwrap();
    let err = run_experiment(&cfg, &out, false).err().expect("second run must be refused");
    assert!(matches!(err, BenchError::RunExists(_)));
    assert_eq!(err.exit_code(), 6);
    run_experiment(&cfg, &out, true).unwrap();
}

#[test]
fn reruns_agree_and_compare_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.seeds = vec![5];
    let a = run_experiment(&cfg, &dir.path().join("a"), false).unwrap();
    let b = run_experiment(&cfg, &dir.path().join("b"), false).unwrap();
    assert_eq!(a.aggregate, b.aggregate);
    let deltas = compare_runs(&dir.path().join("a"), &dir.path().join("b")).unwrap();
    assert!(!deltas.is_empty());
    assert_eq!(max_abs_delta(&deltas), 0.0);
}

#[test]
fn failing_seed_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.detector.enabled = false;
    cfg.defense.schemes.clear();
    // an absurd learning rate makes training diverge for every seed
    cfg.train.learning_rate = 1e12;
    let err = run_experiment(&cfg, &dir.path().join("bad"), false).err().expect("all seeds fail");
    assert!(matches!(err, BenchError::AllSeedsFailed(_)));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bad/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"][0]["ok"], false);
    assert!(manifest["seeds"][0]["error"].is_string());
}

#[test]
fn tradeoff_sweep_has_one_row_per_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.seeds = vec![0];
    cfg.detector.enabled = false;
    cfg.defense.schemes.clear();
    let out = dir.path().join("sweep");
    let report = sweep_tradeoffs(&cfg, &[0.0, 1.0, f64::INFINITY], &out, false).unwrap();
    assert_eq!(report.rows.len(), 3);
    let betas: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.aggregate.beta_c, r.aggregate.beta_r)).collect();
    assert_eq!(betas, vec![(1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
    assert!(out.join("ratio-inf/aggregate.json").exists());
    let csv = fs::read_to_string(out.join("frontier.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("frontier.svg").exists());
    // without the classification loss the classifier stays near chance
    assert!(report.rows[2].aggregate.acc.mean < report.rows[0].aggregate.acc.mean);
    assert!(report.rows[2].aggregate.psnr.mean > report.rows[0].aggregate.psnr.mean);
    assert!(emit_report(&out).unwrap().contains("ratio=inf"));
}

#[test]
fn attribute_sweep_renames_the_task() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("desk-synthetic-binary").unwrap();
    cfg.seeds = vec![0];
    cfg.dataset.name = "synthetic-binary:4:400".into();
    cfg.dataset.size = [12, 12];
    cfg.train.epochs = 2;
    cfg.defense.schemes.clear();
    let report = sweep_attributes(&cfg, &[1, 2], &dir.path().join("attrs"), false).unwrap();
    assert_eq!(report.rows.len(), 2);
    let cfg1 = ExperimentConfig::load(&dir.path().join("attrs/attributes-1/config.toml")).unwrap();
    assert_eq!(cfg1.dataset.name, "synthetic-binary:1:400");
    assert!(sweep_attributes(&quick(), &[1], &dir.path().join("x"), false).is_err());
}
