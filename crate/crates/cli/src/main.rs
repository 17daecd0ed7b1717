use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use pcs_core::config::RunConfig;
use pcs_core::eval::{run_images, LabeledImage};
use pcs_core::harness::{
    make_partitions, run_bench, run_sweep, synthetic_dataset, train_pcs, write_image_results,
    write_timings, Dataset, TrainSettings,
};
use pcs_core::{generate_dataset, Image, PcsError, PcsModel};

/// Patch-based sparse classification for sonar imagery.
#[derive(Debug, Parser)]
#[command(name = "pcs", version, about)]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic dataset to disk.
    Synth,
    /// Learn a dictionary, tune penalties and save the model.
    Train,
    /// Label images with a trained model.
    Classify {
        /// Model file; defaults to the config's model path.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Classify and test each image against the class reference likelihoods.
    Screen {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Sweep training size, regime, noise and partition.
    Evaluate,
    /// Time training and classification.
    Bench,
}

/// Errors the user fixes by editing the command line or the config.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PCS_LOG", "warn")).init();
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<UsageError>()
            || matches!(
                c.downcast_ref::<PcsError>(),
                Some(PcsError::ConfigParse { .. } | PcsError::ConfigDomain { .. })
            )
    })
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(
                    UsageError(format!("config file {} does not exist", path.display())).into(),
                );
            }
            RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    Ok(config)
}

fn out_dir(cli: &Cli, config: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.paths.output.clone())
        .unwrap_or_else(|| PathBuf::from("pcs-out"))
}

fn model_path(explicit: Option<&PathBuf>, cli: &Cli, config: &RunConfig) -> PathBuf {
    explicit
        .cloned()
        .or_else(|| config.paths.model.clone())
        .unwrap_or_else(|| out_dir(cli, config).join("model.pcsd"))
}

/// The configured dataset on disk, or the synthetic one rendered in memory.
fn dataset(config: &RunConfig) -> anyhow::Result<Dataset> {
    match &config.paths.dataset {
        Some(root) => {
            let data = Dataset::load(root, &config.experiment.classes, &config.experiment.regimes)
                .with_context(|| format!("loading dataset from {}", root.display()))?;
            Ok(data)
        }
        None => {
            log::info!("no dataset path configured; rendering the synthetic dataset");
            Ok(synthetic_dataset(config)?)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()?;
    }
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Synth => {
            let root = cli
                .out
                .clone()
                .or_else(|| config.paths.dataset.clone())
                .unwrap_or_else(|| PathBuf::from("pcs-data"));
            let rows = generate_dataset(&config.synth, &root)?;
            println!("wrote {} images to {}", rows.len(), root.display());
        }
        Command::Train => train(&cli, &config)?,
        Command::Classify { model, images } => {
            classify(&cli, &config, model.as_ref(), images, false)?
        }
        Command::Screen { model, images } => classify(&cli, &config, model.as_ref(), images, true)?,
        Command::Evaluate => {
            let data = dataset(&config)?;
            let sweep = run_sweep(&config, &data)?;
            let dir = out_dir(&cli, &config);
            sweep.write_all(&dir)?;
            config.save(dir.join("config.cfg"))?;
            println!("{} cells written to {}", sweep.cells.len(), dir.display());
        }
        Command::Bench => {
            let data = dataset(&config)?;
            let rows = run_bench(&config, &data)?;
            let dir = out_dir(&cli, &config);
            fs::create_dir_all(&dir)?;
            write_timings(&rows, fs::File::create(dir.join("bench.csv"))?)?;
            write_timings(&rows, io::stdout().lock())?;
        }
    }
    Ok(())
}

fn train(cli: &Cli, config: &RunConfig) -> anyhow::Result<()> {
    let data = dataset(config)?;
    let x = &config.experiment;
    let regime = x.regimes[0];
    let part = make_partitions(
        &data.labels,
        &data.class_counts(regime),
        x.train_sizes[0],
        x.test_per_class,
        1,
        x.seed,
    )?
    .remove(0);
    let train: Vec<Vec<Image>> = part
        .train
        .iter()
        .enumerate()
        .map(|(k, idx)| {
            idx.iter()
                .map(|&i| data.class_images(regime, k)[i].image.clone())
                .collect()
        })
        .collect();
    let trained = train_pcs(&train, &data.labels, &TrainSettings::from_config(config))?;
    let path = model_path(None, cli, config);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    trained.model.save(&path)?;
    let mut split = Vec::new();
    part.write_csv(&data.labels, &mut split)?;
    fs::write(sibling(&path, "partition.csv"), split)?;
    let best = &trained.cv.trials[trained.cv.best_trial];
    println!(
        "saved {} (cv accuracy {:.3}, xi {:?})",
        path.display(),
        best.accuracy,
        best.xi
    );
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn classify(
    cli: &Cli,
    config: &RunConfig,
    model: Option<&PathBuf>,
    images: &[PathBuf],
    screen: bool,
) -> anyhow::Result<()> {
    let path = model_path(model, cli, config);
    if !path.exists() {
        bail!(UsageError(format!(
            "model {} does not exist; run `pcs train` first",
            path.display()
        )));
    }
    let model =
        PcsModel::load(&path).with_context(|| format!("loading model {}", path.display()))?;
    let regime = config.experiment.regimes[0];
    let tests = images
        .iter()
        .map(|p| {
            Ok(LabeledImage {
                image: Image::load_pgm(p, regime)
                    .with_context(|| format!("reading {}", p.display()))?,
                class: 0,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let outcomes = run_images(&model, &tests, None, screen.then_some(config.anomaly.alpha))?;
    let rows: Vec<(String, _)> = images
        .iter()
        .map(|p| p.display().to_string())
        .zip(outcomes)
        .collect();
    let mut buf = Vec::new();
    write_image_results(model.class_labels(), &rows, &mut buf)?;
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        let name = if screen { "screen.csv" } else { "classify.csv" };
        fs::write(dir.join(name), &buf)?;
    }
    io::stdout().lock().write_all(&buf)?;
    Ok(())
}
