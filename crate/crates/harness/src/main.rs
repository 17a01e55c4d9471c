use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use catecho_harness::correlate::correlate;
use catecho_harness::{run, Experiment, ExperimentConfig, HarnessError, Runner};

#[derive(Parser)]
#[command(name = "catecho", version, about = "Loschmidt echo and LDOS sweeps for perturbed cat maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// LDOS width σ(χ) for every configured N
    SigmaSweep(Common),
    /// Echo decay rate Γ(χ)
    GammaSweep(Common),
    /// σ and Γ for shears restricted to position windows
    LocalSweep(Common),
    /// Binned LDOS density over (χ, Δφ)
    LdosGrid(Common),
    /// Detrended Γ–σ correlation and σ oscillation period
    Correlate {
        /// CSV with `chi` and `sigma` columns
        sigma: PathBuf,
        /// CSV with `chi` and `gamma` columns
        gamma: PathBuf,
    },
    /// Tangent-map Lyapunov exponent of the (perturbed) map
    Lyapunov(Common),
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Eigendecomposition cache directory
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for grid points
    #[arg(long)]
    threads: Option<usize>,
    /// Use the large dimensions and ensemble sizes (slow)
    #[arg(long)]
    paper_scale: bool,
}

impl Common {
    fn resolve(&self, experiment: Experiment) -> Result<ExperimentConfig, HarnessError> {
        let mut config = ExperimentConfig::defaults(experiment);
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        if self.paper_scale {
            config.apply_paper_scale();
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(cache) = &self.cache {
            config.cache_dir = Some(cache.clone());
        }
        if let Some(seed) = self.seed {
            config.seed = Some(seed);
        }
        if let Some(threads) = self.threads {
            config.threads = threads;
        }
        Ok(config)
    }
}

fn execute(cli: Cli) -> Result<u8, HarnessError> {
    let (experiment, common) = match &cli.command {
        Command::SigmaSweep(c) => (Experiment::SigmaSweep, c),
        Command::GammaSweep(c) => (Experiment::GammaSweep, c),
        Command::LocalSweep(c) => (Experiment::LocalSweep, c),
        Command::LdosGrid(c) => (Experiment::LdosGrid, c),
        Command::Lyapunov(c) => (Experiment::Lyapunov, c),
        Command::Correlate { sigma, gamma } => {
            print!("{}", correlate(sigma, gamma)?.render());
            return Ok(0);
        }
    };
    let runner = Runner::new(common.resolve(experiment)?)?;
    log::info!("{} config_hash={}", experiment.name(), runner.hash());
    let summary = run(&runner)?;
    for file in &summary.files {
        println!("{}", file.display());
    }
    if summary.failed_points > 0 {
        eprintln!("{} grid point(s) failed; see the error column", summary.failed_points);
        return Ok(2);
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| execute(cli)) {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(3),
    }
}
