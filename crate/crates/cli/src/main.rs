#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::CliError;

/// Schmidt's game on self-similar fractals.
#[derive(Debug, Parser)]
#[command(name = "schmidt", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Session file (JSON).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Preset IFS: cantor3, sierpinski, koch.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub target_radius: Option<f64>,
    /// Directory for report files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate doubling and decay constants of the natural measure.
    CertifyMeasure,
    /// Play the winning strategy against an adversary and check the outcome.
    Play {
        /// greedy or concentric; overrides the session file.
        #[arg(long)]
        adversary: Option<String>,
    },
    /// Badness witness and continued fraction of a point.
    VerifyBa {
        /// Coordinates, comma separated.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        x: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        q_max: u64,
        /// Also report the minimum over `q_from..=q_max`.
        #[arg(long)]
        q_from: Option<u64>,
    },
    /// Check the simplex lemma on random instances.
    SimplexCheck {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Dimension lower bounds from packing counts, as TSV.
    Dim {
        /// Exponents m of β = ρ_max^m.
        #[arg(long, value_delimiter = ',', default_value = "4,8,12,16")]
        m: Vec<u32>,
        /// Chaos-game points for the box-count cross-check.
        #[arg(long, default_value_t = 200_000)]
        points: usize,
    },
    /// Certify, play and report on a preset (cantor3 by default).
    Demo,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let g = &cli.global;
    match cli.command {
        Command::CertifyMeasure => commands::certify_measure(g),
        Command::Play { adversary } => commands::play(g, adversary.as_deref()),
        Command::VerifyBa { x, q_max, q_from } => commands::verify_ba(g, &x, q_max, q_from),
        Command::SimplexCheck { dim, trials } => commands::simplex_check(g, dim, trials),
        Command::Dim { m, points } => commands::dim(g, &m, points),
        Command::Demo => commands::demo(g),
    }
}
