use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fidcov_cli::{build_config, parse_config_text, run, CliError, Mode};

/// Generalized fiducial inference for covariance matrices.
#[derive(Parser)]
#[command(name = "fidcov", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Independent inverse-Wishart draws of the full-model covariance.
    FitFull(Flags),
    /// Gibbs sampling over clique partitions.
    FitClique(Flags),
    /// Reversible-jump sampling over sparse covariate patterns (needs --maxc).
    FitGeneral(Flags),
    /// Writes a synthetic data set with its truth.
    Simulate(Flags),
    /// Repeated clique simulations and log-determinant p-values.
    Coverage(Flags),
}

#[derive(Args)]
struct Flags {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observations, one row per sample.
    #[arg(long)]
    input: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// l2 or linf.
    #[arg(long)]
    norm: Option<String>,
    #[arg(long)]
    chains: Option<String>,
    #[arg(long)]
    burn_in: Option<String>,
    /// Iterations kept after burn-in (draws per chain for fit-full).
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    thin: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Largest number of nonzeros per column of A, diagonal included.
    #[arg(long)]
    maxc: Option<String>,
    /// snpa, chol, dcho, diag or oracle.
    #[arg(long)]
    init: Option<String>,
    /// clique, mdl or none.
    #[arg(long)]
    penalty: Option<String>,
    /// True covariance (CSV), for diagnostics and the oracle start.
    #[arg(long)]
    sigma0: Option<String>,
    /// True covariate matrix (CSV).
    #[arg(long)]
    a0: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    n: Option<String>,
    /// clique or sparse.
    #[arg(long)]
    generator: Option<String>,
    /// Number of equal cliques for the clique generator.
    #[arg(long)]
    cliques: Option<String>,
    #[arg(long)]
    intra_corr: Option<String>,
    /// Replications for coverage.
    #[arg(long)]
    reps: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(String, String)> {
        let fields = [
            ("input", &self.input),
            ("out", &self.out),
            ("norm", &self.norm),
            ("chains", &self.chains),
            ("burn-in", &self.burn_in),
            ("window", &self.window),
            ("thin", &self.thin),
            ("seed", &self.seed),
            ("maxc", &self.maxc),
            ("init", &self.init),
            ("penalty", &self.penalty),
            ("sigma0", &self.sigma0),
            ("a0", &self.a0),
            ("p", &self.p),
            ("n", &self.n),
            ("generator", &self.generator),
            ("cliques", &self.cliques),
            ("intra-corr", &self.intra_corr),
            ("reps", &self.reps),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

fn execute(cli: Cli) -> Result<serde_json::Value, CliError> {
    let (mode, flags) = match cli.command {
        Command::FitFull(f) => (Mode::FitFull, f),
        Command::FitClique(f) => (Mode::FitClique, f),
        Command::FitGeneral(f) => (Mode::FitGeneral, f),
        Command::Simulate(f) => (Mode::Simulate, f),
        Command::Coverage(f) => (Mode::Coverage, f),
    };
    let file_pairs = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_config_text(&text)?
        }
        None => Vec::new(),
    };
    let config = build_config(mode, &file_pairs, &flags.pairs())?;
    run(&config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(summary) => {
            let _ = writeln!(std::io::stdout().lock(), "{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
