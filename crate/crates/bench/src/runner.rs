//! Runs experiments: one isolated pipeline per seed (train, evaluate,
//! defend, audit), then a mean/std reduction over the seeds that finished.
//!
//! Run directory layout:
//!
//! ```text
//! <out>/config.toml        resolved configuration
//! <out>/manifest.json      per-seed status, config hash, code version
//! <out>/aggregate.json     mean and std over successful seeds
//! <out>/seed-<s>/          history.csv, risk.json, models.vckp, stats.vctn,
//!                          recon.png, defenses.csv, frontier.svg,
//!                          detection.json, cosine.svg
//! ```

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use vcbench_core::datahub::{load_dataset_from, data_root, select_balanced_attributes, LabelKind, SplitDataset};
use vcbench_core::jointtrain::{evaluate, train_joint, ReportMeta, RiskReport};
use vcbench_core::nets::{
    build_classifier, build_decoder, load_models, save_models, set_decoder_prior, ClassifierSpec, DecoderSpec,
    ModelSpec, Network,
};
use vcbench_core::outputguard::{sweep_defenses, write_defense_csv, DefenseRow, SweepInputs};
use vcbench_core::riskmeter::{fit_gaussian_stats, GaussianStats};
use vcbench_core::sentinel::{detect, estimate_output_entropy, DetectionReport};

use crate::config::ExperimentConfig;
use crate::error::{BenchError, BenchResult};
use crate::plots::{cosine_trace_svg, frontier_svg, reconstruction_grid, FrontierPoint};

pub const CODE_VERSION: &str = concat!("vcbench ", env!("CARGO_PKG_VERSION"));

/// Images shown in each reconstruction grid.
const GRID_IMAGES: usize = 8;
/// Keeps the decoder's initialisation stream apart from the classifier's.
const DECODER_SEED_OFFSET: u64 = 1 << 32;

/// Serialises NaN as `null` and reads `null` back as NaN.
pub mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    #[serde(with = "nan_as_null")]
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    #[serde(with = "nan_as_null")]
    pub std: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let vals: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let n = vals.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

impl std::fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = f.precision().unwrap_or(3);
        write!(f, "{:.p$} ± {:.p$}", self.mean, self.std)
    }
}

/// Everything one seed produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub best_epoch: usize,
    pub report: RiskReport,
    pub defenses: Vec<DefenseRow>,
    pub detection: Option<DetectionReport>,
    #[serde(with = "nan_as_null")]
    pub output_entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStatus {
    pub seed: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<SeedStatus>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseSummary {
    pub scheme: String,
    pub acc: MetricSummary,
    pub psnr: MetricSummary,
    pub ssim: MetricSummary,
    pub risk: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: String,
    pub dataset: String,
    pub config_hash: String,
    pub code_version: String,
    pub beta_c: f64,
    pub beta_r: f64,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
    pub acc: MetricSummary,
    pub psnr: MetricSummary,
    pub ssim: MetricSummary,
    pub risk: MetricSummary,
    pub defenses: Vec<DefenseSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vicious_likelihood: Option<MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_entropy: Option<MetricSummary>,
}

pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub aggregate: Aggregate,
    pub outcomes: Vec<SeedOutcome>,
}

pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed-{seed}"))
}

/// Refuses to touch a non-empty directory unless `force`, in which case its
/// contents are removed.
pub fn prepare_out_dir(out: &Path, force: bool) -> BenchResult<()> {
    if out.exists() {
        let non_empty = fs::read_dir(out)?.next().is_some();
        if non_empty && !force {
            return Err(BenchError::RunExists(out.to_path_buf()));
        }
        if non_empty {
            fs::remove_dir_all(out)?;
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

/// Loads the configured dataset for one seed, with any attribute selection
/// and threshold applied.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> BenchResult<SplitDataset> {
    let d = &cfg.dataset;
    let root = d.root.clone().unwrap_or_else(data_root);
    let mut ds = load_dataset_from(&d.name, (d.size[0], d.size[1]), seed, &root)?;
    if ds.label_space.kind == LabelKind::Binary {
        let attrs = match (&d.attributes, d.top_k_balanced) {
            (Some(a), _) => Some(a.clone()),
            (None, Some(k)) => Some(select_balanced_attributes(&ds.train, k)?),
            (None, None) => None,
        };
        if let Some(a) = attrs {
            ds = ds.with_attributes(&a)?;
        }
        if let Some(t) = d.threshold {
            ds.label_space = ds.label_space.with_threshold(t);
        }
    } else if d.attributes.is_some() || d.top_k_balanced.is_some() || d.threshold.is_some() {
        return Err(BenchError::Config("attribute selection and thresholds apply to binary datasets only".into()));
    }
    Ok(ds)
}

pub fn model_specs(cfg: &ExperimentConfig, ds: &SplitDataset) -> (ClassifierSpec, DecoderSpec) {
    let c = &cfg.classifier;
    let fspec = ClassifierSpec {
        family: c.family,
        width: c.width,
        depth: c.depth,
        n_outputs: ds.label_space.n_outputs,
        input_shape: ds.shape,
    };
    let mut gspec = fspec.mirror();
    if let Some(d) = &cfg.decoder {
        gspec.family = d.family;
        gspec.width = d.width;
        gspec.depth = d.depth;
    }
    (fspec, gspec)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> BenchResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> BenchResult<T> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::NotARun(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn meta<'a>(ds: &'a SplitDataset, cfg: &ExperimentConfig, seed: u64) -> ReportMeta<'a> {
    ReportMeta { dataset: &ds.name, output_mode: cfg.train.output_mode.to_string(), seed }
}

/// Trains and evaluates one seed, writing its artifacts to `dir`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> BenchResult<SeedOutcome> {
    fs::create_dir_all(dir)?;
    let ds = prepare_data(cfg, seed)?;
    let stats = fit_gaussian_stats(ds.train.images.view(), cfg.risk.ridge)?;
    stats.save(&dir.join("stats.vctn"))?;
    let (fspec, gspec) = model_specs(cfg, &ds);
    let fseed = seed;
    let gseed = seed.wrapping_add(DECODER_SEED_OFFSET);
    let f = build_classifier::<f32>(&fspec, fseed)?;
    let mut g = build_decoder::<f32>(&gspec, gseed)?;
    set_decoder_prior(&mut g, &ds.train_mean())?;
    log::info!("seed {seed}: F {} params, G {} params", f.param_count(), g.param_count());

    let out = train_joint(f, g, &ds, &cfg.train.to_train_config(seed), Some(&stats))?;
    out.history.write_csv(&dir.join("history.csv"))?;
    save_models(
        &dir.join("models.vckp"),
        &[
            ("classifier", &ModelSpec::Classifier { spec: fspec, seed: fseed }, &out.classifier),
            ("decoder", &ModelSpec::Decoder { spec: gspec, seed: gseed }, &out.decoder),
        ],
        json!({ "best_epoch": out.best.epoch, "config_hash": cfg.hash() }),
    )?;
    let (f, g) = (&out.classifier, &out.decoder);
    let report = evaluate(f, g, &ds.test, ds.shape, &ds.label_space, cfg.train.output_mode, Some(&stats), meta(&ds, cfg, seed))?;
    write_json(&dir.join("risk.json"), &report)?;
    write_grid(&dir.join("recon.png"), f, g, &ds, cfg)?;

    let defenses = run_defenses(cfg, seed, dir, f, g, &ds, &stats)?;
    let (detection, output_entropy) = run_detector(cfg, seed, dir, f, &ds)?;
    let outcome = SeedOutcome { seed, best_epoch: out.best.epoch, report, defenses, detection, output_entropy };
    write_json(&dir.join("outcome.json"), &outcome)?;
    Ok(outcome)
}

fn write_grid(path: &Path, f: &Network<f32>, g: &Network<f32>, ds: &SplitDataset, cfg: &ExperimentConfig) -> BenchResult<()> {
    let head = ds.test.head(GRID_IMAGES);
    let logits = f.infer(&head.images);
    let recon = g.infer(&vcbench_core::nets::output_mode::release_batch(&logits, cfg.train.output_mode));
    let rows = |a: &ndarray::Array2<f32>| a.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    reconstruction_grid(path, &rows(&head.images), &rows(&recon), ds.shape)
}

/// Runs the configured defense sweep, if any.
pub fn run_defenses(
    cfg: &ExperimentConfig,
    seed: u64,
    dir: &Path,
    f: &Network<f32>,
    g: &Network<f32>,
    ds: &SplitDataset,
    stats: &GaussianStats,
) -> BenchResult<Vec<DefenseRow>> {
    let schemes = cfg.defense_schemes()?;
    if schemes.is_empty() {
        return Ok(Vec::new());
    }
    let inputs = SweepInputs {
        test: &ds.test,
        reference: &ds.train,
        shape: ds.shape,
        label_space: &ds.label_space,
        channel: cfg.train.output_mode,
        stats,
        dataset: &ds.name,
        seed,
    };
    let rows = sweep_defenses(f, g, &inputs, &schemes)?;
    write_defense_csv(&rows, &dir.join("defenses.csv"))?;
    let points: Vec<FrontierPoint> = rows
        .iter()
        .filter(|r| !r.is_skipped())
        .map(|r| FrontierPoint { label: r.scheme.clone(), risk: r.risk, acc: r.acc })
        .collect();
    frontier_svg(&dir.join("frontier.svg"), &format!("{} seed {seed}: defenses", cfg.name), &points)?;
    Ok(rows)
}

/// Audits the classifier when the detector is enabled. The probe batch is
/// drawn from the validation split; similarities are measured on the test
/// split.
pub fn run_detector(
    cfg: &ExperimentConfig,
    seed: u64,
    dir: &Path,
    f: &Network<f32>,
    ds: &SplitDataset,
) -> BenchResult<(Option<DetectionReport>, f64)> {
    if !cfg.detector.enabled {
        return Ok((None, f64::NAN));
    }
    let fc = cfg.detector.to_finetune(seed);
    let report = detect(f, &ds.valid, &ds.label_space, &ds.test, &fc)?;
    write_json(&dir.join("detection.json"), &report)?;
    cosine_trace_svg(&dir.join("cosine.svg"), &[(format!("seed {seed}"), report.cosine_trace.clone())], fc.threshold)?;
    let entropy = estimate_output_entropy(f, &ds.test, cfg.detector.entropy_bins, fc.channel)?;
    Ok((Some(report), entropy))
}

fn isolated(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedOutcome, String> {
    match catch_unwind(AssertUnwindSafe(|| run_seed(cfg, seed, dir))) {
        Ok(Ok(o)) => Ok(o),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "seed panicked".into())),
    }
}

/// Runs every seed of `cfg` into `out`. A failing seed is recorded in the
/// manifest and left out of the aggregate; the run fails only if no seed
/// succeeds.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, force: bool) -> BenchResult<RunSummary> {
    cfg.validate()?;
    prepare_out_dir(out, force)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;

    let results: Vec<(u64, Result<SeedOutcome, String>)> = if cfg.parallel_seeds && cfg.seeds.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg
                .seeds
                .iter()
                .map(|&seed| s.spawn(move || (seed, isolated(cfg, seed, &seed_dir(out, seed)))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("seed thread joins")).collect()
        })
    } else {
        cfg.seeds.iter().map(|&seed| (seed, isolated(cfg, seed, &seed_dir(out, seed)))).collect()
    };

    let mut statuses = Vec::new();
    let mut outcomes = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(o) => {
                statuses.push(SeedStatus { seed, ok: true, error: None });
                outcomes.push(o);
            }
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                statuses.push(SeedStatus { seed, ok: false, error: Some(e) });
            }
        }
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        code_version: CODE_VERSION.into(),
        seeds: statuses,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    if outcomes.is_empty() {
        let errs: Vec<String> =
            manifest.seeds.iter().map(|s| format!("seed {}: {}", s.seed, s.error.as_deref().unwrap_or("?"))).collect();
        return Err(BenchError::AllSeedsFailed(errs.join("; ")));
    }
    let aggregate = aggregate(cfg, &manifest, &outcomes);
    write_json(&out.join("aggregate.json"), &aggregate)?;
    Ok(RunSummary { dir: out.to_path_buf(), manifest, aggregate, outcomes })
}

/// Mean/std reduction over successful seeds.
pub fn aggregate(cfg: &ExperimentConfig, manifest: &Manifest, outcomes: &[SeedOutcome]) -> Aggregate {
    let col = |f: &dyn Fn(&SeedOutcome) -> f64| MetricSummary::of(&outcomes.iter().map(f).collect::<Vec<_>>());
    let mut defenses = Vec::new();
    if let Some(first) = outcomes.first() {
        for (i, row) in first.defenses.iter().enumerate() {
            let pick = |f: &dyn Fn(&DefenseRow) -> f64| {
                MetricSummary::of(&outcomes.iter().filter_map(|o| o.defenses.get(i)).map(f).collect::<Vec<_>>())
            };
            defenses.push(DefenseSummary {
                scheme: row.scheme.clone(),
                acc: pick(&|r| r.acc),
                psnr: pick(&|r| r.psnr),
                ssim: pick(&|r| r.ssim),
                risk: pick(&|r| r.risk),
            });
        }
    }
    let detected = outcomes.iter().any(|o| o.detection.is_some());
    Aggregate {
        name: cfg.name.clone(),
        dataset: cfg.dataset.name.clone(),
        config_hash: manifest.config_hash.clone(),
        code_version: manifest.code_version.clone(),
        beta_c: cfg.train.beta_c,
        beta_r: cfg.train.beta_r,
        seeds: outcomes.iter().map(|o| o.seed).collect(),
        failed_seeds: manifest.seeds.iter().filter(|s| !s.ok).map(|s| s.seed).collect(),
        acc: col(&|o| o.report.acc),
        psnr: col(&|o| o.report.psnr),
        ssim: col(&|o| o.report.ssim),
        risk: col(&|o| o.report.risk),
        defenses,
        vicious_likelihood: detected.then(|| col(&|o| o.detection.as_ref().map_or(f64::NAN, |d| d.v))),
        output_entropy: detected.then(|| col(&|o| o.output_entropy)),
    }
}

/// A trained seed reloaded from disk.
pub struct LoadedSeed {
    pub config: ExperimentConfig,
    pub data: SplitDataset,
    pub stats: GaussianStats,
    pub classifier: Network<f32>,
    pub decoder: Network<f32>,
}

pub fn load_config(run: &Path) -> BenchResult<ExperimentConfig> {
    let path = run.join("config.toml");
    if !path.exists() {
        return Err(BenchError::NotARun(format!("{} has no config.toml", run.display())));
    }
    ExperimentConfig::load(&path)
}

/// Seeds with saved models in a run directory.
pub fn finished_seeds(run: &Path) -> BenchResult<Vec<u64>> {
    let manifest: Manifest = read_json(&run.join("manifest.json"))?;
    Ok(manifest.seeds.iter().filter(|s| s.ok).map(|s| s.seed).collect())
}

pub fn load_seed(run: &Path, seed: u64) -> BenchResult<LoadedSeed> {
    let config = load_config(run)?;
    let dir = seed_dir(run, seed);
    let data = prepare_data(&config, seed)?;
    let stats = GaussianStats::load(&dir.join("stats.vctn"))?;
    let (models, _) = load_models::<f32>(&dir.join("models.vckp"))?;
    let mut classifier = None;
    let mut decoder = None;
    for m in models {
        match m.name.as_str() {
            "classifier" => classifier = Some(m.network),
            "decoder" => decoder = Some(m.network),
            _ => {}
        }
    }
    let missing = || BenchError::NotARun(format!("{} lacks a classifier/decoder pair", dir.display()));
    Ok(LoadedSeed {
        config,
        data,
        stats,
        classifier: classifier.ok_or_else(missing)?,
        decoder: decoder.ok_or_else(missing)?,
    })
}

/// One aggregate row of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `ratio=<r>` or `attributes=<n>`.
    pub label: String,
    pub dir: PathBuf,
    pub aggregate: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub base_config_hash: String,
    pub code_version: String,
    pub rows: Vec<SweepRow>,
}

/// Directory name for a reconstruction/classification ratio.
pub fn ratio_dir_name(ratio: f64) -> String {
    if ratio.is_infinite() {
        "ratio-inf".into()
    } else {
        format!("ratio-{ratio}")
    }
}

/// One experiment per `beta_r / beta_c` ratio (`0` is classification only,
/// infinity is reconstruction only), then a frontier table and plot.
pub fn sweep_tradeoffs(base: &ExperimentConfig, ratios: &[f64], out: &Path, force: bool) -> BenchResult<SweepReport> {
    if ratios.is_empty() {
        return Err(BenchError::Config("a sweep needs at least one ratio".into()));
    }
    let configs = ratios
        .iter()
        .map(|&r| {
            let mut cfg = base.clone();
            cfg.train.set_ratio(r)?;
            cfg.name = format!("{}/{}", base.name, ratio_dir_name(r));
            Ok((format!("ratio={r}"), ratio_dir_name(r), cfg))
        })
        .collect::<BenchResult<Vec<_>>>()?;
    run_sweep(base, configs, out, force)
}

/// One experiment per attribute count on a `synthetic-binary` task.
pub fn sweep_attributes(base: &ExperimentConfig, counts: &[usize], out: &Path, force: bool) -> BenchResult<SweepReport> {
    let stem = base.dataset.name.split(':').next().unwrap_or_default();
    if stem != "synthetic-binary" {
        return Err(BenchError::Config(format!("attribute sweeps need a synthetic-binary dataset, not {}", base.dataset.name)));
    }
    let tail: Vec<&str> = base.dataset.name.split(':').skip(2).collect();
    let configs = counts
        .iter()
        .map(|&n| {
            let mut cfg = base.clone();
            let mut name = format!("synthetic-binary:{n}");
            for t in &tail {
                name.push(':');
                name.push_str(t);
            }
            cfg.dataset.name = name;
            cfg.dataset.attributes = None;
            cfg.dataset.top_k_balanced = None;
            cfg.name = format!("{}/attributes-{n}", base.name);
            (format!("attributes={n}"), format!("attributes-{n}"), cfg)
        })
        .collect();
    run_sweep(base, configs, out, force)
}

fn run_sweep(
    base: &ExperimentConfig,
    configs: Vec<(String, String, ExperimentConfig)>,
    out: &Path,
    force: bool,
) -> BenchResult<SweepReport> {
    base.validate()?;
    prepare_out_dir(out, force)?;
    fs::write(out.join("config.toml"), base.to_toml())?;
    let mut rows = Vec::new();
    for (label, sub, cfg) in configs {
        log::info!("sweep point {label}");
        let dir = out.join(&sub);
        let summary = run_experiment(&cfg, &dir, force)?;
        rows.push(SweepRow { label, dir: PathBuf::from(sub), aggregate: summary.aggregate });
    }
    let report = SweepReport {
        name: base.name.clone(),
        base_config_hash: base.hash(),
        code_version: CODE_VERSION.into(),
        rows,
    };
    write_json(&out.join("sweep.json"), &report)?;
    write_frontier_csv(&out.join("frontier.csv"), &report.rows)?;
    let points: Vec<FrontierPoint> = report
        .rows
        .iter()
        .map(|r| FrontierPoint { label: r.label.clone(), risk: r.aggregate.risk.mean, acc: r.aggregate.acc.mean })
        .collect();
    frontier_svg(&out.join("frontier.svg"), &format!("{}: accuracy vs risk", base.name), &points)?;
    Ok(report)
}

fn write_frontier_csv(path: &Path, rows: &[SweepRow]) -> BenchResult<()> {
    let mut text = String::from("label,beta_c,beta_r,seeds,acc_mean,acc_std,psnr_mean,psnr_std,ssim_mean,ssim_std,risk_mean,risk_std\n");
    for r in rows {
        let a = &r.aggregate;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.label,
            a.beta_c,
            a.beta_r,
            a.seeds.len(),
            a.acc.mean,
            a.acc.std,
            a.psnr.mean,
            a.psnr.std,
            a.ssim.mean,
            a.ssim.std,
            a.risk.mean,
            a.risk.std
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = MetricSummary::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        let one = MetricSummary::of(&[4.0]);
        assert_eq!((one.mean, one.std, one.n), (4.0, 0.0, 1));
        let none = MetricSummary::of(&[f64::NAN]);
        assert!(none.mean.is_nan());
        let json = serde_json::to_string(&none).unwrap();
        let back: MetricSummary = serde_json::from_str(&json).unwrap();
        assert!(back.mean.is_nan() && back.n == 0);
    }

    #[test]
    fn refuses_non_empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "1").unwrap();
        assert!(matches!(prepare_out_dir(dir.path(), false), Err(BenchError::RunExists(_))));
        prepare_out_dir(dir.path(), true).unwrap();
        assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
    }
}
