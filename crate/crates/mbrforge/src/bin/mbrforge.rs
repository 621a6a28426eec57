use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mbrforge::client::ModelClient;
use mbrforge::config::PipelineConfig;
use mbrforge::dataset;
use mbrforge::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "mbrforge", about = "MBR-scored self-supervision pipeline for long-context reasoning")]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Use the deterministic offline mock backend instead of HTTP.
    #[arg(long, global = true)]
    mock: bool,

    /// Override the synthesis seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Accept stage inputs produced under a different config hash.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample N outputs per corpus question into an archive (resumable).
    Synthesize {
        #[arg(long, default_value = "out/samples.jsonl")]
        out: PathBuf,
    },
    /// Score a sample archive with the configured utility metric.
    Score {
        archive: PathBuf,
        #[arg(long, default_value = "out/scored.jsonl")]
        out: PathBuf,
    },
    /// Build the SFT or preference dataset from a scored archive.
    BuildDataset {
        scored: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the SubEM evaluation harness over the configured tasks.
    Evaluate {
        #[arg(long, default_value = "out/eval.json")]
        out: PathBuf,
    },
    /// Oracle/MBR scaling analysis over a sample archive.
    ScalingReport {
        archive: PathBuf,
        /// Sample-count points, ascending (e.g. --ns 2 --ns 4 --ns 8).
        #[arg(long = "ns", required = true)]
        ns: Vec<usize>,
        #[arg(long, default_value = "out/scaling.json")]
        out: PathBuf,
    },
    /// Verify the training objectives from a token log-prob file.
    Losses {
        logprobs: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
    },
    /// Re-check all invariants of a serialized dataset.
    Validate { dataset: PathBuf },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.synthesis.seed = seed;
    }
    Ok(config)
}

fn make_client(cli: &Cli, config: &PipelineConfig) -> ModelClient {
    if cli.mock {
        ModelClient::mock(config.synthesis.seed, config.backend.concurrency)
    } else {
        ModelClient::from_config(&config.backend)
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Synthesize { out } => {
            ensure_parent(out)?;
            let client = make_client(cli, &config);
            let written = pipeline::cmd_synthesize(&config, &client, out, cli.force)?;
            println!("synthesized {written} sample sets -> {}", out.display());
        }
        Command::Score { archive, out } => {
            ensure_parent(out)?;
            let client = make_client(cli, &config);
            let written = pipeline::cmd_score(&config, &client, archive, out, cli.force)?;
            println!("scored {written} sample sets -> {}", out.display());
        }
        Command::BuildDataset { scored, out } => {
            let (manifest, report) =
                pipeline::cmd_build_dataset(&config, scored, out.as_deref(), cli.force)?;
            println!("{}", serde_json::to_string_pretty(&manifest).unwrap());
            if !report.is_clean() {
                eprintln!("validation found problems: {report:?}");
            }
        }
        Command::Evaluate { out } => {
            ensure_parent(out)?;
            let client = make_client(cli, &config);
            let results = pipeline::cmd_evaluate(&config, &client, out)?;
            for result in &results {
                println!("{}: SubEM {:.1}", result.name, result.aggregate);
            }
        }
        Command::ScalingReport { archive, ns, out } => {
            ensure_parent(out)?;
            let client = make_client(cli, &config);
            let curve = pipeline::cmd_scaling(&config, &client, archive, ns, out, cli.force)?;
            println!("{}", serde_json::to_string_pretty(&curve).unwrap());
        }
        Command::Losses { logprobs, beta } => {
            let report = pipeline::cmd_losses(logprobs, *beta)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
        }
        Command::Validate { dataset } => {
            let report = dataset::validate_dataset(dataset).map_err(PipelineError::from)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            if !report.is_clean() {
                return Err(PipelineError::Io {
                    path: dataset.clone(),
                    source: std::io::Error::other("dataset failed validation"),
                });
            }
        }
    }
    Ok(())
}

fn ensure_parent(path: &PathBuf) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
