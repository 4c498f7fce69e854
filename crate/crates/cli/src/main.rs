use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use figsep::config::PipelineConfig;
use figsep::pipeline::{self, Ablation, Stage};
use figsep::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

/// Label-guided compound figure separation.
#[derive(Debug, Parser)]
#[command(name = "figsep", version)]
struct Cli {
    /// TOML configuration; defaults to the `toy` preset rooted at runs/toy.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: u32,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic train and test corpora.
    Generate,
    /// Train one model on the train corpus.
    Train {
        #[arg(value_enum)]
        stage: StageArg,
    },
    /// Separate a figure, a directory of PNGs, or a corpus.
    Separate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a `separate` output directory against annotations.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        /// Annotated corpus; defaults to the configured test corpus.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Compare a component against its ablated variant.
    Ablate {
        #[arg(value_enum)]
        which: AblationArg,
    },
    /// Print a configuration preset as TOML.
    Config {
        #[arg(default_value = "toy")]
        preset: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    LabelDetector,
    LabelClassifier,
    SubfigureDetector,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::LabelDetector => Stage::LabelDetector,
            StageArg::LabelClassifier => Stage::LabelClassifier,
            StageArg::SubfigureDetector => Stage::SubfigureDetector,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblationArg {
    Decoupling,
    Latent,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Config(_) | Error::OutputExists(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn load_config(cli: &Cli) -> figsep::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::toy(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> figsep::Result<()> {
    if let Command::Config { preset } = &cli.command {
        print!("{}", PipelineConfig::preset(preset)?.to_toml()?);
        return Ok(());
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate => {
            let (train, test) = pipeline::generate(&cfg, cli.force)?;
            println!(
                "wrote {} train and {} test figures to {}",
                train.len(),
                test.len(),
                cfg.paths.corpus.display()
            );
        }
        Command::Train { stage } => {
            let stage = Stage::from(*stage);
            let log = pipeline::train_stage(&cfg, stage, cli.force)?;
            let last = log.records.last().map_or(f64::NAN, |r| r.total);
            println!(
                "trained {} for {} steps (final loss {last:.4}) -> {}",
                stage.name(),
                log.records.len(),
                pipeline::checkpoint_path(&cfg, stage.name()).display()
            );
        }
        Command::Separate { input, out } => {
            let seps = pipeline::separate(&cfg, input, out, cli.force)?;
            let n: usize = seps.iter().map(|s| s.result.subfigures.len()).sum();
            println!("separated {} figures into {n} subfigures -> {}", seps.len(), out.display());
        }
        Command::Evaluate { results, gt } => {
            let gt = gt.clone().unwrap_or_else(|| cfg.paths.test_corpus());
            let report = pipeline::evaluate(&cfg, results, &gt)?;
            println!("{report}");
        }
        Command::Ablate { which } => {
            let which = match which {
                AblationArg::Decoupling => Ablation::Decoupling,
                AblationArg::Latent => Ablation::Latent,
            };
            let outcome = pipeline::ablate(&cfg, which, cli.force)?;
            print!("{}", outcome.to_text());
        }
        Command::Config { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs as usize)
        .build_global()
    {
        log::warn!("could not size the thread pool: {e}");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
