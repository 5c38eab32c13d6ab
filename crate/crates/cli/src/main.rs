use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stylespace::commands::{self, CommandResult, StyleFlags, TrainArgs};
use stylespace_core::evaluation::EvalSettings;
use stylespace_core::training::Variant;

#[derive(Parser)]
#[command(name = "stylespace", version, about = "Style-space embedding and style-conditioned image generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural portrait dataset and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Extract Gram descriptors and fit the style space.
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Most images entering the PCA fit; the rest are projected.
        #[arg(long, default_value_t = 512)]
        fit_limit: usize,
        /// Fixed embedding dimension instead of the variance rule.
        #[arg(long)]
        dims: Option<usize>,
    },
    /// Train one generator/discriminator pair.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory of `embed`.
        #[arg(long)]
        embedding: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Render a grid from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        image_id: Option<String>,
        /// JSON array holding one style vector.
        #[arg(long)]
        vector: Option<PathBuf>,
        /// JSON object `{"ids": [...], "weights": [...]}` or `{"ids": [a, b], "lambda": λ}`.
        #[arg(long)]
        interpolate: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Score checkpoints against their training data.
    Evaluate {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// JSON evaluation settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Two-dimensional scatter of the style vectors.
    Visualize {
        #[arg(long)]
        embedding: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API for a checkpoint.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

fn run(cli: Cli) -> CommandResult<()> {
    match cli.command {
        Command::Synth { out, count, size, seed } => commands::synth(&out, count, size, seed),
        Command::Embed {
            manifest,
            out,
            fit_limit,
            dims,
        } => {
            let e = commands::embed(&manifest, &out, fit_limit, dims)?;
            println!("{} style vectors, k = {}", e.styles.len(), e.model.k());
            Ok(())
        }
        Command::Train {
            config,
            manifest,
            embedding,
            out,
            seed,
            variant,
        } => {
            let ck = commands::train(TrainArgs {
                config: config.as_deref(),
                manifest: &manifest,
                embedding: embedding.as_deref(),
                out: &out,
                seed,
                variant,
            })?;
            println!("{} trained for {} steps: {}", ck.config.variant, ck.step, out.display());
            Ok(())
        }
        Command::Generate {
            checkpoint,
            out,
            image_id,
            vector,
            interpolate,
            seed,
            count,
        } => {
            let style = StyleFlags {
                image_id,
                vector,
                interpolate,
            };
            commands::generate(&checkpoint, &style, seed, count, &out)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Evaluate {
            checkpoints,
            manifest,
            config,
            out,
            seed,
        } => {
            let mut settings = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| stylespace_core::Error::io(&p, e))?;
                    serde_json::from_str::<EvalSettings>(&text)
                        .map_err(|e| stylespace_core::Error::input(format!("{}: {e}", p.display())))?
                }
                None => EvalSettings::default(),
            };
            if let Some(seed) = seed {
                settings.seed = seed;
            }
            let report = commands::evaluate(&checkpoints, &manifest, settings, out.as_deref())?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Visualize {
            embedding,
            checkpoint,
            out,
        } => {
            let s = commands::visualize(embedding.as_deref(), checkpoint.as_deref(), &out)?;
            println!("{} points: {}", s.points.len(), out.display());
            Ok(())
        }
        Command::Serve { checkpoint, bind } => commands::serve(&checkpoint, bind),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
