use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relamix::baselines::{run_baselines, Metric};
use relamix::data::{read_dataset, write_dataset, FeatureDataset};
use relamix::experiment::{
    self, apply_ablations, execute_run, import_frames, parse_list, RunInputs, OUT_ROOT_ENV,
};
use relamix::model::read_checkpoint;
use relamix::relation::all_tuples;
use relamix::sdfm::compute_source_statistics;
use relamix::synthetic::{generate_pair, DomainShiftSpec};
use relamix::train::{eval_plan_seed, evaluate, ExperimentConfig, NegativePool};
use relamix::{Error, Result};

const SOURCE_DIR: &str = "source";
const POOL_DIR: &str = "target_pool";
const TEST_DIR: &str = "target_test";

#[derive(Parser)]
#[command(
    name = "relamix",
    version,
    about = "Few-shot domain adaptation experiments on snippet features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target pair.
    GenSynth(GenSynth),
    /// Window frame-level features into a snippet dataset.
    Import(Import),
    /// Run the source-only statistical baselines.
    Baseline(Baseline),
    /// Train one configuration and evaluate it on the target test set.
    Train(Train),
    /// Evaluate a finished run's checkpoint.
    Eval(Eval),
    /// Train every (shot, seed) cell of a grid.
    Sweep(Sweep),
    /// Aggregate all runs under the output root.
    Report(Report),
    /// Dump per-class snippet statistics of a source dataset.
    Stats(Stats),
    /// Print the relation tuples of one scale, one per line.
    RelationSets(RelationSets),
}

#[derive(Args)]
struct OutRoot {
    /// Output root (defaults to $RELAMIX_OUT, then ./runs).
    #[arg(long, env = OUT_ROOT_ENV)]
    out: Option<PathBuf>,
}

impl OutRoot {
    fn path(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(experiment::default_out_root)
    }
}

#[derive(Args)]
struct GenSynth {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class_source: usize,
    /// Target sequences per class before the pool/test split.
    #[arg(long, default_value_t = 40)]
    per_class_target: usize,
    #[arg(long, default_value_t = 5)]
    snippets: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = DomainShiftSpec::default().rotation_strength)]
    rotation: f64,
    #[arg(long, default_value_t = DomainShiftSpec::default().bias_strength)]
    bias: f64,
    #[arg(long, default_value_t = DomainShiftSpec::default().noise_std)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Import {
    /// Directory with a manifest and one (frames x dim) payload per sample.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    window: usize,
    #[arg(long, default_value_t = 8)]
    stride: usize,
    #[arg(long, default_value_t = 8)]
    pad: usize,
}

#[derive(Args)]
struct Baseline {
    /// Pair directory holding source/ and target_test/.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    cosine: bool,
    #[command(flatten)]
    out: OutRoot,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Pair directory holding source/, target_pool/ and target_test/.
    #[arg(long)]
    data: PathBuf,
    /// TOML experiment configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the shortened desk-scale schedule instead of the defaults.
    #[arg(long)]
    desk: bool,
    /// Comma-separated: rd_mhsa, scale_mhsa, rd, tran_rd, sdfm, cdia, source_only, all.
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long)]
    negatives: Option<NegativePoolArg>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum NegativePoolArg {
    Mixed,
    SourceOnly,
}

impl RunFlags {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                ExperimentConfig::from_toml(&text)?
            }
            None if self.desk => ExperimentConfig::desk_scale(),
            None => ExperimentConfig::default(),
        };
        if let Some(list) = &self.ablate {
            apply_ablations(&mut cfg, list)?;
        }
        if let Some(n) = self.negatives {
            cfg.negatives_pool = match n {
                NegativePoolArg::Mixed => NegativePool::Mixed,
                NegativePoolArg::SourceOnly => NegativePool::SourceOnly,
            };
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shots: Option<usize>,
    #[command(flatten)]
    out: OutRoot,
}

#[derive(Args)]
struct Eval {
    /// A run directory written by `train` or `sweep`.
    #[arg(long)]
    run: PathBuf,
    /// Dataset to evaluate on (defaults to <data>/target_test).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct Sweep {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long, default_value = "1,5,10,20")]
    shots: String,
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    /// Run cells concurrently.
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    out: OutRoot,
}

#[derive(Args)]
struct Report {
    #[command(flatten)]
    out: OutRoot,
}

#[derive(Args)]
struct Stats {
    /// A source dataset directory (or a pair directory with source/).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RelationSets {
    #[arg(long)]
    length: usize,
    #[arg(long)]
    scale: usize,
}

fn read_pair_part(dir: &Path, part: &str) -> Result<FeatureDataset> {
    read_dataset(&dir.join(part))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth(a) => {
            let shift = DomainShiftSpec {
                rotation_strength: a.rotation,
                bias_strength: a.bias,
                noise_std: a.noise,
                seed: a.seed,
            };
            let (source, pool, test) = generate_pair(
                a.classes,
                a.per_class_source,
                a.per_class_target,
                a.snippets,
                a.dim,
                &shift,
            )?;
            write_dataset(&source, &a.out.join(SOURCE_DIR))?;
            write_dataset(&pool, &a.out.join(POOL_DIR))?;
            write_dataset(&test, &a.out.join(TEST_DIR))?;
            write_json(&a.out.join("shift.json"), &shift)?;
            println!(
                "wrote {} source, {} pool, {} test sequences to {}",
                source.len(),
                pool.len(),
                test.len(),
                a.out.display()
            );
        }
        Command::Import(a) => {
            let ds = import_frames(&a.frames, a.window, a.stride, a.pad)?;
            write_dataset(&ds, &a.out)?;
            println!(
                "imported {} sequences of {} snippets x {} dims",
                ds.len(),
                ds.snippet_count(),
                ds.dim()
            );
        }
        Command::Baseline(a) => {
            let source = read_pair_part(&a.data, SOURCE_DIR)?;
            let test = read_pair_part(&a.data, TEST_DIR)?;
            let metric = if a.cosine {
                Metric::Cosine
            } else {
                Metric::Euclidean
            };
            let reports = run_baselines(&source, &test, a.seed, metric)?;
            let root = a.out.path();
            fs::create_dir_all(&root)
                .map_err(|e| Error::Config(format!("cannot create {}: {e}", root.display())))?;
            write_json(&root.join("baseline.json"), &reports)?;
            let mut csv = String::from("method,k,accuracy\n");
            for r in &reports {
                for (k, acc) in &r.per_k_accuracy {
                    csv.push_str(&format!("{},{k},{acc:.4}\n", r.method.name()));
                }
                csv.push_str(&format!("{},,{:.4}\n", r.method.name(), r.accuracy));
            }
            fs::write(root.join("baseline.csv"), &csv)
                .map_err(|e| Error::Config(format!("cannot write baseline.csv: {e}")))?;
            for r in &reports {
                println!("{:<17} {:6.2}", r.method.name(), r.accuracy);
            }
        }
        Command::Train(a) => {
            let mut cfg = a.run.config()?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(n) = a.shots {
                cfg.shot_count = n;
            }
            let source = read_pair_part(&a.run.data, SOURCE_DIR)?;
            let pool = read_pair_part(&a.run.data, POOL_DIR)?;
            let test = read_pair_part(&a.run.data, TEST_DIR)?;
            let inputs = RunInputs {
                source: &source,
                target_pool: &pool,
                test: &test,
            };
            let (m, dir) = execute_run(inputs, &cfg, &a.out.path())?;
            println!(
                "{} shot {} seed {}: {:.2}% -> {}",
                m.label,
                m.shot_count,
                m.seed,
                m.accuracy,
                dir.display()
            );
        }
        Command::Eval(a) => {
            let text = fs::read_to_string(a.run.join("config.toml")).map_err(|e| {
                Error::Config(format!("{}: {e}", a.run.join("config.toml").display()))
            })?;
            let cfg = ExperimentConfig::from_toml(&text)?;
            let params = read_checkpoint(&a.run.join("checkpoint"))?;
            let test = if a.data.join(TEST_DIR).is_dir() {
                read_pair_part(&a.data, TEST_DIR)?
            } else {
                read_dataset(&a.data)?
            };
            let report = evaluate(
                &params,
                cfg.ablation.switches(),
                &test,
                eval_plan_seed(&cfg),
            )?;
            write_json(&a.run.join("eval.json"), &report)?;
            println!(
                "accuracy {:.2}% on {} sequences",
                report.accuracy,
                test.len()
            );
        }
        Command::Sweep(a) => {
            let cfg = a.run.config()?;
            let shots: Vec<usize> = parse_list(&a.shots)?;
            let seeds: Vec<u64> = parse_list(&a.seeds)?;
            let source = read_pair_part(&a.run.data, SOURCE_DIR)?;
            let pool = read_pair_part(&a.run.data, POOL_DIR)?;
            let test = read_pair_part(&a.run.data, TEST_DIR)?;
            let inputs = RunInputs {
                source: &source,
                target_pool: &pool,
                test: &test,
            };
            let rows = experiment::sweep(inputs, &cfg, &shots, &seeds, &a.out.path(), a.parallel)?;
            print!("{}", experiment::report_csv(&rows));
        }
        Command::Report(a) => {
            let rows = experiment::report(&a.out.path())?;
            print!("{}", experiment::report_csv(&rows));
        }
        Command::Stats(a) => {
            let dir = if a.data.join(SOURCE_DIR).is_dir() {
                a.data.join(SOURCE_DIR)
            } else {
                a.data.clone()
            };
            let stats = compute_source_statistics(&read_dataset(&dir)?)?;
            write_dataset(&stats.to_dataset()?, &a.out)?;
            let flagged = stats.flagged_classes();
            println!(
                "{} classes x {} snippets x {} dims written to {}{}",
                stats.class_count,
                stats.snippet_count,
                stats.dim,
                a.out.display(),
                if flagged.is_empty() {
                    String::new()
                } else {
                    format!("; zero-variance classes {flagged:?}")
                }
            );
        }
        Command::RelationSets(a) => {
            if a.scale < 2 || a.scale > a.length {
                return Err(Error::InvalidArgument(format!(
                    "scale must be in [2, {}], got {}",
                    a.length, a.scale
                )));
            }
            for t in all_tuples(a.length, a.scale) {
                let parts: Vec<String> = t.iter().map(ToString::to_string).collect();
                println!("{}", parts.join(" "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
