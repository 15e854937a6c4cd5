use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lsda::config::ExperimentConfig;
use lsda::pipeline;

/// Source-only training and latent-search adaptation of shifted images.
///
/// The TOML config has one section per module: `data`, `classifier`, `vae`,
/// `ssim`, `search`, `metrics` and `ablate`, plus top-level `seed`,
/// `output_dir` and `jobs`. Print every key with its default through
/// `lsda show-config`.
#[derive(Parser, Debug)]
#[command(name = "lsda", version)]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Dotted override such as `vae.lr=1e-4`, applied after the file.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Cap on latent-search worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the source corpus and every shifted target preset.
    GenData,
    /// Train the source classifier.
    TrainClassifier,
    /// Train the edge-conditioned VAE on source images.
    TrainVae,
    /// Search closest clones for a target and classify them.
    Adapt {
        /// Shift preset name, or `source` for the untouched test split.
        #[arg(long)]
        target: Option<String>,
        /// Also write target/clone PNG pairs.
        #[arg(long)]
        dump_clones: bool,
    },
    /// Accuracy, A-distance and Fréchet distance for an adapted target.
    Eval {
        #[arg(long)]
        target: Option<String>,
    },
    /// Component grid plus search-loss and SSIM-window sweeps.
    Ablate,
    /// Nearest-neighbour distance table for growing sample sizes.
    Lemma1,
    /// Collect every result CSV into one long table.
    Report,
    /// Print the resolved configuration.
    ShowConfig,
}

fn run(cli: Cli) -> lsda::Result<()> {
    let mut overrides = cli.overrides;
    if let Some(j) = cli.jobs {
        overrides.push(format!("jobs={j}"));
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    let name = match &cli.command {
        Command::GenData => "gen-data",
        Command::TrainClassifier => "train-classifier",
        Command::TrainVae => "train-vae",
        Command::Adapt { .. } => "adapt",
        Command::Eval { .. } => "eval",
        Command::Ablate => "ablate",
        Command::Lemma1 => "lemma1",
        Command::Report => "report",
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
    };
    cfg.write_resolved(&format!("config.{name}.toml"))?;
    let target = |t: Option<String>| t.unwrap_or_else(|| cfg.data.target_preset.clone());
    match cli.command {
        Command::GenData => pipeline::gen_data(&cfg)?,
        Command::TrainClassifier => {
            let (_, log) = pipeline::train_classifier_stage(&cfg)?;
            let best = log.iter().map(|e| e.val_accuracy).fold(0.0, f64::max);
            println!("classifier: {} epochs, best validation accuracy {best:.4}", log.len());
        }
        Command::TrainVae => {
            pipeline::train_vae_stage(&cfg)?;
            println!("wrote {}", pipeline::Layout::new(&cfg.output_dir).vae_ckpt().display());
        }
        Command::Adapt { target: t, dump_clones } => {
            let t = target(t);
            let r = pipeline::adapt_stage(&cfg, &t, dump_clones)?;
            println!(
                "{t}: source-only {:.4}, adapted {:.4} ({} images, {} failures)",
                r.source_only_accuracy,
                r.adapted_accuracy,
                r.results.len(),
                r.failures.len()
            );
        }
        Command::Eval { target: t } => {
            let s = pipeline::eval_stage(&cfg, &target(t))?;
            println!("{s:#?}");
        }
        Command::Ablate => {
            for r in pipeline::ablate_stage(&cfg)? {
                println!(
                    "{:9} edges={:5} perceptual={:5} ls={:5} loss={:4} window={:2} adapted={:.4}",
                    r.group, r.edges, r.perceptual, r.latent_search, r.loss, r.window, r.adapted_accuracy
                );
            }
        }
        Command::Lemma1 => {
            for r in pipeline::lemma1_stage(&cfg)? {
                println!("n={:6} mean={:.5} std={:.5}", r.n, r.mean_nn_distance, r.std);
            }
        }
        Command::Report => println!("wrote {}", pipeline::report_stage(&cfg)?.display()),
        Command::ShowConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
