use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod seed;

use config::{RunConfig, StrategyKind};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "twinmix",
    version,
    about = "Sample, fit and explore twin-pair Gaussian mixture likelihoods"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON config file (a manifest.json from an earlier run also works)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; every stage derives its own stream from it
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel restarts and seed loops
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a twin dataset from the mixture model
    Simulate(SimulateArgs),
    /// Fit the mixture by box-constrained quasi-Newton minimization
    Fit(FitArgs),
    /// Draw a NUTS chain under one of the sampling strategies
    Sample(SampleArgs),
    /// Sample, then restart the optimizer from every draw and cluster the optima
    Explore(ExploreArgs),
    /// Tabulate the outputs found in a run directory
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of twin pairs
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    #[arg(long)]
    frac_mz: Option<f64>,
    #[arg(long)]
    frac_male: Option<f64>,
    /// Natural-scale parameter JSON (defaults to the reference truth)
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Dataset CSV (x1,x2,zygosity,sex)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Mixture components (1 to 3)
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=3))]
    components: Option<u64>,
    /// auto | truth | moments | fit | <parameter JSON path>
    #[arg(long)]
    start: Option<String>,
}

#[derive(Args)]
struct OptimArgs {
    /// Optimizer iteration cap
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    max_iter: Option<u64>,
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long, value_enum)]
    strategy: Option<StrategyKind>,
    /// Total iterations including warmup
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    target_accept: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Chains in the seed loop
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: Option<u64>,
    /// Comma-separated parameter blocks to hold fixed (alpha, log_sigma, rho_mz, rho_dz, beta, pre_p)
    #[arg(long, value_delimiter = ',')]
    fix: Option<Vec<String>>,
    /// Box bounds JSON for the bounded strategy
    #[arg(long)]
    bounds: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args)]
struct ExploreArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Restart from an existing chain.json instead of sampling
    #[arg(long)]
    chain: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory to read (defaults to --out)
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Add the reference truth to the global-quantities table
    #[arg(long)]
    truth: bool,
}

impl ModelArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(d) = &self.data {
            c.model.data = Some(d.clone());
        }
        if let Some(m) = self.components {
            c.model.components = m as usize;
        }
        if let Some(s) = &self.start {
            c.model.start = Some(s.clone());
        }
    }
}

impl OptimArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(m) = self.max_iter {
            c.optim.max_iterations = m as usize;
        }
    }
}

impl SamplerArgs {
    fn apply(&self, c: &mut RunConfig) {
        let s = &mut c.sampler;
        if let Some(v) = self.strategy {
            s.strategy = v;
        }
        if let Some(v) = self.iters {
            s.iters = v;
        }
        if let Some(v) = self.warmup {
            s.warmup = v;
        }
        if let Some(v) = self.target_accept {
            s.target_accept = v;
        }
        if let Some(v) = self.max_depth {
            s.max_depth = v;
        }
        if let Some(v) = self.seeds {
            s.seeds = v as usize;
        }
        if let Some(v) = &self.fix {
            s.fix = v.clone();
        }
        if let Some(v) = &self.bounds {
            s.bounds = Some(v.clone());
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut c = match &cli.global.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.global.out {
        c.out = o.clone();
    }
    if let Some(t) = cli.global.threads {
        c.threads = Some(t as usize);
    }
    match &cli.command {
        Command::Simulate(a) => {
            if let Some(n) = a.n {
                c.simulate.n = n as usize;
            }
            if let Some(v) = a.frac_mz {
                c.simulate.frac_mz = v;
            }
            if let Some(v) = a.frac_male {
                c.simulate.frac_male = v;
            }
            if let Some(p) = &a.params {
                c.simulate.params = Some(p.clone());
            }
        }
        Command::Fit(a) => {
            a.model.apply(&mut c);
            a.optim.apply(&mut c);
        }
        Command::Sample(a) => {
            a.model.apply(&mut c);
            a.sampler.apply(&mut c);
        }
        Command::Explore(a) => {
            a.model.apply(&mut c);
            a.sampler.apply(&mut c);
            a.optim.apply(&mut c);
            if let Some(p) = &a.chain {
                c.sampler.chain = Some(p.clone());
            }
        }
        Command::Report(a) => {
            if let Some(d) = &a.dir {
                c.report.dir = Some(d.clone());
            }
            c.report.truth |= a.truth;
        }
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Fit(_) => commands::fit(&cfg),
        Command::Sample(_) => commands::sample(&cfg),
        Command::Explore(_) => commands::explore(&cfg),
        Command::Report(_) => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
