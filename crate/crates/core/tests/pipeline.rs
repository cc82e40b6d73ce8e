//! End-to-end runs of the core pipeline on small synthetic tasks.

use vcbench_core::datahub::{load_dataset, LabelKind, SplitDataset};
use vcbench_core::jointtrain::{evaluate, select_best_checkpoint, train_joint, ReportMeta, TrainConfig};
use vcbench_core::nets::{
    build_classifier, build_decoder, set_decoder_prior, ClassifierSpec, Family, Network, OptimizerKind, OutputMode,
};
use vcbench_core::objectives::TradeoffWeights;
use vcbench_core::outputguard::{sweep_defenses, DefenseScheme, SweepInputs};
use vcbench_core::riskmeter::{fit_gaussian_stats, GaussianStats};
use vcbench_core::sentinel::{cosine_similarity_outputs, detect, FinetuneConfig, Verdict};

fn data(name: &str) -> SplitDataset {
    load_dataset(name, (12, 12), 0).unwrap()
}

fn config(ratio: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 64,
        learning_rate: 1e-3,
        optimizer: OptimizerKind::Adam,
        weights: TradeoffWeights::from_ratio(ratio).unwrap(),
        output_mode: OutputMode::Logits,
        seed: 3,
    }
}

fn pair(ds: &SplitDataset) -> (Network<f32>, Network<f32>) {
    let spec = ClassifierSpec::new(Family::Mlp, 1, ds.label_space.n_outputs, ds.shape);
    let f = build_classifier::<f32>(&spec, 1).unwrap();
    let mut g = build_decoder::<f32>(&spec.mirror(), 2).unwrap();
    set_decoder_prior(&mut g, &ds.train_mean()).unwrap();
    (f, g)
}

fn trained(ds: &SplitDataset, ratio: f64, epochs: usize) -> (Network<f32>, Network<f32>, GaussianStats) {
    let stats = fit_gaussian_stats(ds.train.images.view(), None).unwrap();
    let (f, g) = pair(ds);
    let out = train_joint(f, g, ds, &config(ratio, epochs), Some(&stats)).unwrap();
    (out.classifier, out.decoder, stats)
}

fn meta(ds: &SplitDataset) -> ReportMeta<'_> {
    ReportMeta { dataset: &ds.name, output_mode: "logits".into(), seed: 0 }
}

#[test]
fn training_is_deterministic() {
    let ds = data("synthetic-categorical:4:600");
    let stats = fit_gaussian_stats(ds.train.images.view(), None).unwrap();
    let run = || {
        let (f, g) = pair(&ds);
        train_joint(f, g, &ds, &config(1.0, 3), Some(&stats)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history.records, b.history.records);
    assert_eq!(a.classifier.fingerprint(), b.classifier.fingerprint());
    assert_eq!(a.best.epoch, select_best_checkpoint(&a.history.records).unwrap());
}

#[test]
fn untrained_decoder_reconstructs_the_mean() {
    let ds = data("synthetic-categorical:4:600");
    let stats = fit_gaussian_stats(ds.train.images.view(), None).unwrap();
    let (f, g) = pair(&ds);
    let r = evaluate(&f, &g, &ds.test, ds.shape, &ds.label_space, OutputMode::Logits, Some(&stats), meta(&ds)).unwrap();
    // the test mean differs slightly from the training mean
    assert!((r.risk - 1.0).abs() < 0.05, "R {}", r.risk);
}

#[test]
fn reconstruction_improves_with_its_weight() {
    let ds = data("synthetic-categorical:4:800");
    let eval = |ratio| {
        let (f, g, stats) = trained(&ds, ratio, 6);
        evaluate(&f, &g, &ds.test, ds.shape, &ds.label_space, OutputMode::Logits, Some(&stats), meta(&ds)).unwrap()
    };
    let (honest, vicious) = (eval(0.0), eval(3.0));
    assert!(honest.acc > 80.0, "acc {}", honest.acc);
    assert!(vicious.psnr > honest.psnr + 3.0, "psnr {} vs {}", vicious.psnr, honest.psnr);
    assert!(vicious.ssim > honest.ssim);
}

#[test]
fn identity_defense_reproduces_evaluation_bit_for_bit() {
    let ds = data("synthetic-categorical:4:600");
    let (f, g, stats) = trained(&ds, 1.0, 3);
    let report = evaluate(&f, &g, &ds.test, ds.shape, &ds.label_space, OutputMode::Logits, Some(&stats), meta(&ds)).unwrap();
    let inputs = SweepInputs {
        test: &ds.test,
        reference: &ds.train,
        shape: ds.shape,
        label_space: &ds.label_space,
        channel: OutputMode::Logits,
        stats: &stats,
        dataset: &ds.name,
        seed: 0,
    };
    let rows = sweep_defenses(&f, &g, &inputs, &[DefenseScheme::Identity, DefenseScheme::Argmax]).unwrap();
    assert_eq!(rows[0].acc.to_bits(), report.acc.to_bits());
    assert_eq!(rows[0].psnr.to_bits(), report.psnr.to_bits());
    assert_eq!(rows[0].ssim.to_bits(), report.ssim.to_bits());
    assert_eq!(rows[0].risk.to_bits(), report.risk.to_bits());
    assert_eq!(rows[1].acc, report.acc);
}

#[test]
fn categorical_only_defenses_are_skipped_on_binary_tasks() {
    let ds = data("synthetic-binary:3:400");
    assert_eq!(ds.label_space.kind, LabelKind::Binary);
    let (f, g, stats) = trained(&ds, 1.0, 2);
    let inputs = SweepInputs {
        test: &ds.test,
        reference: &ds.train,
        shape: ds.shape,
        label_space: &ds.label_space,
        channel: OutputMode::Logits,
        stats: &stats,
        dataset: &ds.name,
        seed: 0,
    };
    let schemes = [DefenseScheme::Identity, DefenseScheme::Softmax, DefenseScheme::Round { decimals: 2 }];
    let rows = sweep_defenses(&f, &g, &inputs, &schemes).unwrap();
    assert!(!rows[0].is_skipped());
    assert!(rows[1].is_skipped() && rows[2].is_skipped());
    assert!(rows[1].risk.is_nan());
}

#[test]
fn detector_leaves_the_audited_model_untouched() {
    let ds = data("synthetic-categorical:4:600");
    let (f, _, _) = trained(&ds, 0.0, 2);
    let before = f.fingerprint();
    let cfg = FinetuneConfig { steps: 5, probe_size: 64, seed: 1, ..FinetuneConfig::default() };
    let report = detect(&f, &ds.valid, &ds.label_space, &ds.test, &cfg).unwrap();
    assert_eq!(f.fingerprint(), before);
    assert_eq!(report.cosine_trace.len(), 6);
    assert!((report.cosine_trace[0] - 1.0).abs() < 1e-9);
    assert_eq!(report.verdict == Verdict::Honest, report.v <= cfg.threshold);
    let again = detect(&f, &ds.valid, &ds.label_space, &ds.test, &cfg).unwrap();
    assert_eq!(again.cosine_trace, report.cosine_trace);
    let (c, zero) = cosine_similarity_outputs(&f, &f, &ds.test, OutputMode::Logits).unwrap();
    assert!((c - 1.0).abs() < 1e-9 && zero == 0);
}
