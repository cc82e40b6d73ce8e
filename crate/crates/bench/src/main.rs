use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vcbench::config::ExperimentConfig;
use vcbench::error::{BenchError, BenchResult};
use vcbench::report::{compare_runs, comparison_md, emit_report};
use vcbench::runner::{
    finished_seeds, load_seed, run_defenses, run_detector, run_experiment, seed_dir, sweep_attributes, sweep_tradeoffs,
    LoadedSeed,
};
use vcbench_core::jointtrain::{evaluate, ReportMeta};
use vcbench_core::outputguard::entropy_bound;
use vcbench_core::riskmeter::fit_gaussian_stats;
use vcbench_core::sentinel::estimate_output_entropy;

/// Reconstruction-attack benchmark for classifiers that leak their inputs
/// through their outputs.
#[derive(Parser)]
#[command(name = "vcbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every seed of a config.
    Train(TrainArgs),
    /// Re-evaluate a trained run on its test split.
    Evaluate(RunArgs),
    /// Reconstruction risk of a trained run, optionally with another ridge.
    Risk {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        ridge: Option<f64>,
    },
    /// Sweep output-channel defenses against a trained run.
    Defend {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated schemes; defaults to the run's config.
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<String>,
    },
    /// Fine-tuning audit of a trained classifier.
    Detect(RunArgs),
    /// Output entropy of a trained classifier, or the rounded-softmax bound.
    Entropy {
        #[command(flatten)]
        run: OptRunArgs,
        #[arg(long, default_value_t = 16)]
        bins: usize,
        /// With --outputs, print the bound for `round(q)` instead.
        #[arg(long, requires = "outputs")]
        decimals: Option<u32>,
        #[arg(long)]
        outputs: Option<usize>,
    },
    /// Trade-off or attribute-count sweep.
    Sweep {
        #[command(flatten)]
        train: TrainArgs,
        /// beta_r / beta_c ratios; `inf` for reconstruction only.
        #[arg(long, value_delimiter = ',', conflicts_with = "attributes")]
        ratios: Vec<f64>,
        /// Attribute counts for synthetic-binary tasks.
        #[arg(long, value_delimiter = ',')]
        attributes: Vec<usize>,
    },
    /// Write report.md and summary.json for a run, or compare two runs.
    Report {
        run: PathBuf,
        #[arg(long)]
        compare: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Preset name or TOML file.
    #[arg(long)]
    config: String,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Defaults to the first finished seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct OptRunArgs {
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(args: &TrainArgs) -> BenchResult<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::resolve(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| Path::new("runs").join(&cfg.name));
    Ok((cfg, out))
}

fn pick_seed(run: &Path, seed: Option<u64>) -> BenchResult<(u64, LoadedSeed)> {
    let seed = match seed {
        Some(s) => s,
        None => *finished_seeds(run)?
            .first()
            .ok_or_else(|| BenchError::NotARun(format!("{} has no finished seed", run.display())))?,
    };
    Ok((seed, load_seed(run, seed)?))
}

fn print_json<T: serde::Serialize>(v: &T) -> BenchResult<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> BenchResult<()> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, out) = load_config(&args)?;
            let summary = run_experiment(&cfg, &out, args.force)?;
            print!("{}", emit_report(&summary.dir)?);
        }
        Command::Evaluate(r) | Command::Risk { run: r, ridge: None } => {
            let (seed, s) = pick_seed(&r.run, r.seed)?;
            let meta = ReportMeta { dataset: &s.data.name, output_mode: s.config.train.output_mode.to_string(), seed };
            let d = &s.data;
            let report =
                evaluate(&s.classifier, &s.decoder, &d.test, d.shape, &d.label_space, s.config.train.output_mode, Some(&s.stats), meta)?;
            print_json(&report)?;
        }
        Command::Risk { run: r, ridge: Some(ridge) } => {
            let (seed, s) = pick_seed(&r.run, r.seed)?;
            let d = &s.data;
            let stats = fit_gaussian_stats(d.train.images.view(), Some(ridge))?;
            let meta = ReportMeta { dataset: &d.name, output_mode: s.config.train.output_mode.to_string(), seed };
            let report =
                evaluate(&s.classifier, &s.decoder, &d.test, d.shape, &d.label_space, s.config.train.output_mode, Some(&stats), meta)?;
            print_json(&report)?;
        }
        Command::Defend { run: r, schemes } => {
            let (seed, mut s) = pick_seed(&r.run, r.seed)?;
            if !schemes.is_empty() {
                s.config.defense.schemes = schemes;
            }
            let rows = run_defenses(&s.config, seed, &seed_dir(&r.run, seed), &s.classifier, &s.decoder, &s.data, &s.stats)?;
            print_json(&rows)?;
        }
        Command::Detect(r) => {
            let (seed, mut s) = pick_seed(&r.run, r.seed)?;
            s.config.detector.enabled = true;
            let (report, entropy) = run_detector(&s.config, seed, &seed_dir(&r.run, seed), &s.classifier, &s.data)?;
            print_json(&serde_json::json!({ "detection": report, "output_entropy_bits": entropy }))?;
        }
        Command::Entropy { run, bins, decimals, outputs } => match (outputs, run.run) {
            (Some(n), _) => {
                let q = decimals.unwrap_or(1);
                println!("{:.6}", entropy_bound(q, n)?);
            }
            (None, Some(dir)) => {
                let (_, s) = pick_seed(&dir, run.seed)?;
                let h = estimate_output_entropy(&s.classifier, &s.data.test, bins, s.config.train.output_mode)?;
                println!("{h:.6}");
            }
            (None, None) => return Err(BenchError::Config("entropy needs --run or --outputs".into())),
        },
        Command::Sweep { train, ratios, attributes } => {
            let (cfg, out) = load_config(&train)?;
            if !attributes.is_empty() {
                sweep_attributes(&cfg, &attributes, &out, train.force)?;
            } else {
                let ratios = if ratios.is_empty() { vec![0.0, 1.0, f64::INFINITY] } else { ratios };
                sweep_tradeoffs(&cfg, &ratios, &out, train.force)?;
            }
            print!("{}", emit_report(&out)?);
        }
        Command::Report { run, compare } => match compare {
            None => print!("{}", emit_report(&run)?),
            Some(other) => {
                let deltas = compare_runs(&run, &other)?;
                print!("{}", comparison_md(&run, &other, &deltas));
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
