//! `iacn`: data generation, ingestion, training, evaluation, the δ sweep,
//! the length ablation and the gradient check.
//!
//! Exit status is 0 on success, 1 for configuration problems (bad flags,
//! unreadable or invalid config and data files) and 2 for runtime or
//! numerical failures. Progress goes to stderr; results go to files under
//! `--out`, each written atomically.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use iacn::data::{generate_synthetic, ingest_dataset, Dataset, IngestConfig, Split, SyntheticSpec};
use iacn::eval::{
    auc, delta_sweep, format_ablation, format_sweep, length_ablation, metric_row, metrics_csv, seeds_from,
    MetricRow, DEFAULT_SEED_COUNT,
};
use iacn::io::{read_to_string, write_atomic};
use iacn::training::gradcheck::{run_suite, GRADCHECK_TOLERANCE};
use iacn::training::{train, Checkpoint, TrainConfig};
use iacn::{Error, Result};

const DATASET_FILE: &str = "dataset.cache";

#[derive(Debug, Parser)]
#[command(name = "iacn", version, about = "Interest-aware capsule network experiments")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic planted-interest dataset.
    GenData {
        /// Synthetic spec (`key = value`); defaults apply without it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a dataset from Amazon-format review and metadata files.
    Ingest {
        #[arg(long)]
        reviews: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write its report and checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a split with a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset cache file, or a directory holding `dataset.cache`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with the interest task at δ = 0.1, 0.2, …, 1.0 over several seeds.
    SweepDelta {
        #[command(flatten)]
        run: RunArgs,
        /// Number of consecutive seeds starting at the run seed.
        #[arg(long, default_value_t = DEFAULT_SEED_COUNT)]
        seeds: usize,
    },
    /// Train with and without the interest task at sequence lengths 10, 20, 50.
    AblateLength {
        #[arg(long)]
        config: PathBuf,
        /// Synthetic spec; its sequence length is replaced per cell.
        #[arg(long)]
        synth: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_SEED_COUNT)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every parameter group.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Training config (`key = value`).
    #[arg(long)]
    config: PathBuf,
    /// Dataset cache file, or a directory holding `dataset.cache`.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    data: Option<PathBuf>,
    /// Synthetic spec to generate the dataset from instead.
    #[arg(long)]
    synth: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_configuration() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData { config, seed, out } => gen_data(config.as_deref(), seed, &out)?,
        Command::Ingest {
            reviews,
            meta,
            config,
            seed,
            out,
        } => ingest(&reviews, &meta, config.as_deref(), seed, &out)?,
        Command::Train { run } => train_cmd(&run)?,
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => eval_cmd(&checkpoint, &data, split, &out)?,
        Command::SweepDelta { run, seeds } => sweep_cmd(&run, seeds)?,
        Command::AblateLength {
            config,
            synth,
            seed,
            seeds,
            out,
        } => ablate_cmd(&config, synth.as_deref(), seed, seeds, &out)?,
        Command::Gradcheck { out } => return gradcheck_cmd(out.as_deref()),
    }
    Ok(ExitCode::SUCCESS)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn load_train_config(path: &Path, seed: Option<u64>) -> Result<TrainConfig> {
    let mut config = TrainConfig::from_kv_str(&read_to_string(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn load_synth_spec(path: Option<&Path>) -> Result<SyntheticSpec> {
    match path {
        Some(p) => SyntheticSpec::from_kv_str(&read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(SyntheticSpec::default()),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = if path.is_dir() {
        path.join(DATASET_FILE)
    } else {
        path.to_path_buf()
    };
    Dataset::load(&file).map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::Config(format!("{}: {other}", file.display())),
    })
}

fn dataset_for(run: &RunArgs) -> Result<Dataset> {
    match (&run.data, &run.synth) {
        (Some(path), _) => load_dataset(path),
        (None, synth) => Ok(generate_synthetic(&load_synth_spec(synth.as_deref())?)?.dataset),
    }
}

#[derive(Serialize)]
struct VocabularySummary<'a> {
    tag: &'a str,
    users: &'a [String],
    items: &'a [String],
    categories: &'a [String],
    item_category: &'a [usize],
    train_samples: usize,
    valid_samples: usize,
    test_samples: usize,
}

fn save_dataset(data: &Dataset, out: &Path) -> Result<()> {
    data.save(&out.join(DATASET_FILE))?;
    write_json(
        &out.join("vocab.json"),
        &VocabularySummary {
            tag: &data.tag,
            users: &data.vocab.users,
            items: &data.vocab.items,
            categories: &data.vocab.categories,
            item_category: &data.vocab.item_category,
            train_samples: data.train.len(),
            valid_samples: data.valid.len(),
            test_samples: data.test.len(),
        },
    )
}

fn gen_data(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut spec = load_synth_spec(config)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec)?.dataset;
    save_dataset(&data, out)?;
    write_text(&out.join("synth.cfg"), &spec.to_kv_string())?;
    log::info!(
        "wrote {} ({} train, {} valid, {} test samples) to {}",
        data.tag,
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

fn ingest(reviews: &Path, meta: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(p) => IngestConfig::from_kv_str(&read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => IngestConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let (data, stats) = ingest_dataset(reviews, meta, &cfg)?;
    save_dataset(&data, out)?;
    write_json(&out.join("ingest_stats.json"), &stats)?;
    write_text(&out.join("ingest.cfg"), &cfg.to_kv_string())?;
    log::info!(
        "{} records from {} review lines ({} malformed, {} users dropped); {} users, {} items",
        stats.records,
        stats.review_lines,
        stats.malformed_reviews,
        stats.dropped_users,
        data.vocab.num_users(),
        data.vocab.num_items()
    );
    Ok(())
}

fn train_cmd(run: &RunArgs) -> Result<()> {
    let config = load_train_config(&run.config, run.seed)?;
    let data = dataset_for(run)?;
    log::info!(
        "training {} on {} (seed {})",
        config.base_model,
        data.tag,
        config.seed
    );
    let (mut report, trainer) = train(&config, &data)?;
    let ckpt = run.out.join("model.ckpt");
    Checkpoint::from_trainer(&trainer).save(&ckpt)?;
    report.checkpoint = Some(ckpt.display().to_string());
    write_json(&run.out.join("report.json"), &report)?;
    if let Some(test_auc) = report.test_auc {
        let row = metric_row("train", &config, &data.tag, test_auc);
        write_text(&run.out.join("metrics.csv"), &metrics_csv(&[row]))?;
    }
    log::info!(
        "done in {:.1}s: valid auc {:.4}, test auc {}",
        report.wall_seconds,
        report.final_valid_auc(),
        report.test_auc.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    dataset: String,
    split: String,
    samples: usize,
    seed: u64,
    base_model: String,
    iacn: bool,
    auc: f64,
    checkpoint: String,
}

fn eval_cmd(checkpoint: &Path, data: &Path, split: Split, out: &Path) -> Result<()> {
    let trainer = Checkpoint::load(checkpoint)?.into_trainer()?;
    let data = load_dataset(data)?;
    trainer.model.check_vocab(&data.vocab)?;
    let samples = data.split(split);
    if samples.is_empty() {
        return Err(Error::Config(format!("split `{split}` of {} is empty", data.tag)));
    }
    let scores = trainer.model.predict(samples);
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let value = auc(&scores, &labels)?;
    let config = &trainer.config;
    write_json(
        &out.join("eval.json"),
        &EvalReport {
            dataset: data.tag.clone(),
            split: split.to_string(),
            samples: samples.len(),
            seed: config.seed,
            base_model: config.base_model.to_string(),
            iacn: config.iacn,
            auc: value,
            checkpoint: checkpoint.display().to_string(),
        },
    )?;
    let row = metric_row("eval", config, &data.tag, value);
    write_text(&out.join("metrics.csv"), &metrics_csv(&[row]))?;
    log::info!("{split} auc {value:.4} over {} samples", samples.len());
    Ok(())
}

fn sweep_cmd(run: &RunArgs, count: usize) -> Result<()> {
    let config = load_train_config(&run.config, run.seed)?;
    let data = dataset_for(run)?;
    let seeds = seeds_from(config.seed, count);
    let csv = run.out.join("metrics.csv");
    let mut progress = |rows: &[MetricRow]| write_text(&csv, &metrics_csv(rows));
    let (sweep, _) = delta_sweep(&config, &data, &seeds, &mut progress)?;
    write_json(&run.out.join("sweep.json"), &sweep)?;
    let table = format_sweep(&sweep);
    write_text(&run.out.join("sweep.txt"), &table)?;
    eprint!("{table}");
    Ok(())
}

fn ablate_cmd(
    config: &Path,
    synth: Option<&Path>,
    seed: Option<u64>,
    count: usize,
    out: &Path,
) -> Result<()> {
    let config = load_train_config(config, seed)?;
    let spec = load_synth_spec(synth)?;
    let seeds = seeds_from(config.seed, count);
    let csv = out.join("metrics.csv");
    let mut progress = |rows: &[MetricRow]| write_text(&csv, &metrics_csv(rows));
    let (ablation, _) = length_ablation(&config, &spec, &seeds, &mut progress)?;
    write_json(&out.join("ablation.json"), &ablation)?;
    let table = format_ablation(&ablation);
    write_text(&out.join("ablation.txt"), &table)?;
    eprint!("{table}");
    Ok(())
}

fn gradcheck_cmd(out: Option<&Path>) -> Result<ExitCode> {
    let results = run_suite()?;
    println!(
        "{:<10} {:<34} {:>6} {:>12}",
        "model", "group", "params", "max_rel_err"
    );
    for r in &results {
        println!(
            "{:<10} {:<34} {:>6} {:>12.3e}",
            r.model, r.group, r.parameters, r.max_rel_error
        );
    }
    if let Some(dir) = out {
        write_json(&dir.join("gradcheck.json"), &results)?;
    }
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    if worst < GRADCHECK_TOLERANCE {
        println!("ok: max relative error {worst:.3e} < {GRADCHECK_TOLERANCE:e}");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAILED: max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
        Ok(ExitCode::from(2))
    }
}
