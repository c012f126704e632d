//! `sparsetemp` command-line driver.
//!
//! Exit codes: 0 on success, 1 for bad input or config, 2 when a search
//! aborts on a non-finite value.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "sparsetemp",
    version,
    about = "Temperature-scheduled DARTS search on desk-scale tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a bilevel search and write its trace, genotype and snapshot.
    Search {
        /// TOML config; every key has a default.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print the temperatures a schedule would produce, without training.
    PreviewSchedule {
        #[arg(long, conflicts_with = "paper_example")]
        config: Option<PathBuf>,
        /// The four-point worked example: E(a)=4e-4, t0=1, tN=1e-3.
        #[arg(long)]
        paper_example: bool,
        #[arg(long, value_enum, default_value_t = ListKind::Ets)]
        kind: ListKind,
        /// Number of decay points for the worked example.
        #[arg(long, default_value_t = 4)]
        points: usize,
        /// E(a) override; otherwise estimated from the initial supernet.
        #[arg(long)]
        e_a: Option<f64>,
        /// Entropy fed to EDD at every previewed epoch (defaults to ln M).
        #[arg(long)]
        entropy: Option<f64>,
    },
    /// Gradient norms of plain and sn-softmax over a temperature grid.
    ProbeSoftmax {
        /// Comma separated logits.
        #[arg(long, default_value = "10,0,0,0,0", allow_hyphen_values = true)]
        logits: String,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        #[arg(long, default_value_t = 1e-3)]
        t_min: f64,
        #[arg(long, default_value_t = 50)]
        points: usize,
        /// Fixed backward scale; may be repeated.
        #[arg(long = "s")]
        s: Vec<f64>,
        /// Constant s*t; may be repeated. Used when no --s is given (default 1).
        #[arg(long = "st")]
        st: Vec<f64>,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Discretized accuracy of a genotype as JSON.
    EvalGenotype {
        #[arg(long)]
        genotype: PathBuf,
        /// Trained snapshot from `search`; otherwise the config's initial net.
        #[arg(long)]
        supernet: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-edge entropy of a supernet snapshot as JSON.
    ProbeEntropy {
        #[arg(long)]
        supernet: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Temperature to evaluate at; defaults to the snapshot's.
        #[arg(long)]
        t: Option<f64>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ListKind {
    Ets,
    Lts,
    Pcd,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPARSETEMP_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Search {
            config,
            seed,
            out_dir,
        } => commands::search(config.as_deref(), seed, &out_dir),
        Command::PreviewSchedule {
            config,
            paper_example,
            kind,
            points,
            e_a,
            entropy,
        } => {
            if paper_example {
                commands::preview_example(kind, points)
            } else {
                commands::preview_config(config.as_deref(), e_a, entropy)
            }
        }
        Command::ProbeSoftmax {
            logits,
            t_max,
            t_min,
            points,
            s,
            st,
            out,
        } => commands::probe_softmax(&logits, t_max, t_min, points, &s, &st, out.as_deref()),
        Command::EvalGenotype {
            genotype,
            supernet,
            config,
            seed,
        } => commands::eval_genotype(&genotype, supernet.as_deref(), config.as_deref(), seed),
        Command::ProbeEntropy {
            supernet,
            config,
            seed,
            t,
        } => commands::probe_entropy(supernet.as_deref(), config.as_deref(), seed, t),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let non_finite = e
                .downcast_ref::<sparsetemp::Error>()
                .is_some_and(sparsetemp::Error::is_non_finite);
            ExitCode::from(if non_finite { 2 } else { 1 })
        }
    }
}
