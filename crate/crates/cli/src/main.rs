use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fragmenta::pipeline::{self, PairSource, RunConfig, Split};
use fragmenta::Error;

#[derive(Parser, Debug)]
#[command(name = "fragmenta", version, about = "Torn-fragment dataset generation, training, searching, matching and evaluation")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed of every random sub-stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset directory (overrides paths.dataset).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Run directory for checkpoints and reports (overrides paths.run).
    #[arg(long, global = true)]
    run: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PairsArg {
    Gt,
    Candidates,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tear source images into a fragment dataset.
    Generate {
        /// Directory of source images (overrides paths.images).
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Two-step training on the train split.
    Train,
    /// Embed fragments and rank candidate pairs.
    Search {
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Register pairs with the trained matcher.
    Match {
        #[arg(long, value_enum, default_value = "gt")]
        pairs: PairsArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Use ground-truth correspondences instead of the trained model.
        #[arg(long)]
        oracle: bool,
        /// Keep every correspondence in the report instead of the best 2000.
        #[arg(long)]
        all_correspondences: bool,
    },
    /// Score the match report and rank table; render overlays.
    Evaluate {
        #[arg(long)]
        tau_rr: Option<f64>,
        #[arg(long)]
        render_samples: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Diverged { .. } => 4,
        Error::Data(_)
        | Error::Format { .. }
        | Error::Io { .. }
        | Error::Image(_)
        | Error::Json(_)
        | Error::InvalidInput(_)
        | Error::InvalidMask(_)
        | Error::ShapeMismatch(_) => 3,
        _ => 1,
    }
}

fn print<T: serde::Serialize>(v: &T) -> fragmenta::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> fragmenta::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.dataset {
        cfg.paths.dataset = d;
    }
    if let Some(r) = cli.run {
        cfg.paths.run = r;
    }
    match cli.command {
        Command::Generate { images } => {
            if images.is_some() {
                cfg.paths.images = images;
                cfg.synthetic = None;
            }
            print(&pipeline::generate(&cfg)?)
        }
        Command::Train => print(&pipeline::train(&cfg)?),
        Command::Search { top_k, split } => {
            if let Some(k) = top_k {
                cfg.top_k = k;
            }
            print(&pipeline::search(&cfg, split.split())?)
        }
        Command::Match {
            pairs,
            split,
            oracle,
            all_correspondences,
        } => {
            cfg.report_all_correspondences |= all_correspondences;
            let source = match pairs {
                PairsArg::Gt => PairSource::Gt,
                PairsArg::Candidates => PairSource::Candidates,
                PairsArg::All => PairSource::All,
            };
            print(&pipeline::run_match(&cfg, source, split.split(), oracle)?)
        }
        Command::Evaluate {
            tau_rr,
            render_samples,
            split,
        } => {
            if let Some(t) = tau_rr {
                cfg.tau_rr = t;
            }
            if let Some(n) = render_samples {
                cfg.render_samples = n;
            }
            let summary = pipeline::evaluate(&cfg, split.split())?;
            print(&summary.report.rows)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
