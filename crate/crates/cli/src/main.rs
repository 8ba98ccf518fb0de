//! `thermoscheme`: command-line front end for the thermodynamic pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Ctx, Failure};
use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "thermoscheme", version, about = "Equilibrium measures for interval maps via inducing schemes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Flat key = value config file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker cap; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Continue past failed (H)/(P) conditions and t-range checks.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true)]
    map: Option<String>,
    #[arg(long, global = true)]
    a: Option<f64>,
    #[arg(long, global = true)]
    slope: Option<f64>,
    #[arg(long, global = true)]
    scheme: Option<String>,
    #[arg(long, global = true)]
    n_max: Option<u32>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    t: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    c: Option<f64>,
    #[arg(long, global = true)]
    alphabet: Option<u64>,
    #[arg(long, global = true)]
    depth: Option<usize>,
    #[arg(long, global = true)]
    audit_depth: Option<usize>,
    #[arg(long, global = true)]
    audit_cap: Option<usize>,
    #[arg(long, global = true)]
    sample_depth: Option<usize>,
    #[arg(long, global = true)]
    verify_depth: Option<u32>,
    #[arg(long, global = true)]
    h1_tol: Option<f64>,
    #[arg(long, global = true)]
    bracket_tol: Option<f64>,
    /// Comma-separated t values for the pressure curve.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    t_grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    lag_max: Option<usize>,
    #[arg(long, global = true)]
    block_len: Option<usize>,
    #[arg(long, global = true)]
    blocks: Option<usize>,
    /// One of x, x-1/2, cos2pix, coboundary, const<value>.
    #[arg(long, global = true)]
    observable: Option<String>,
    #[arg(long, global = true)]
    observable2: Option<String>,
    /// Measure CSV written by `thermo equilibrium`.
    #[arg(long, global = true)]
    measure: Option<String>,
}

impl Global {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            map: self.map.clone(),
            a: self.a,
            slope: self.slope,
            scheme: self.scheme.clone(),
            n_max: self.n_max,
            t: self.t,
            c: self.c,
            alphabet: self.alphabet,
            depth: self.depth,
            audit_depth: self.audit_depth,
            audit_cap: self.audit_cap,
            sample_depth: self.sample_depth,
            verify_depth: self.verify_depth,
            h1_tol: self.h1_tol,
            bracket_tol: self.bracket_tol,
            t_grid: self.t_grid.clone(),
            seed: self.seed,
            n: self.n,
            lag_max: self.lag_max,
            block_len: self.block_len,
            blocks: self.blocks,
            observable: self.observable.clone(),
            observable2: self.observable2.clone(),
            measure: self.measure.clone(),
            force: self.force.then_some(true),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build and audit inducing schemes.
    #[command(subcommand)]
    Scheme(SchemeCmd),
    /// Pressure and Gibbs weights on the induced shift.
    #[command(subcommand)]
    Shift(ShiftCmd),
    /// Equilibrium states, lifting and pressure curves.
    #[command(subcommand)]
    Thermo(ThermoCmd),
    /// Sampling, Lyapunov exponents, correlations and CLT.
    #[command(subcommand)]
    Stats(StatsCmd),
    /// Runs the acceptance suite and writes a pass/fail table.
    VerifyAll,
}

#[derive(Subcommand)]
enum SchemeCmd {
    /// Writes scheme.json.
    Build,
    /// Checks (H1)-(H5) and writes report.json.
    Verify,
}

#[derive(Subcommand)]
enum ShiftCmd {
    /// Gurevich pressure by operator and periodic orbits.
    Pressure,
    /// Gibbs cylinder weights.
    Gibbs,
}

#[derive(Subcommand)]
enum ThermoCmd {
    /// t -> P(t) with monotonicity, convexity and bounds.
    PressureCurve,
    /// Solves for the equilibrium state at t.
    Equilibrium,
    /// Liftability verdict for a density on the scheme.
    Liftability,
    /// Abramov and Kac identities for the lifted measure.
    AbramovKac,
}

#[derive(Subcommand)]
enum StatsCmd {
    /// Draws points from the lifted measure.
    Sample,
    /// Lyapunov exponent of the lifted measure.
    Lyapunov,
    /// Correlation decay and exponential fit.
    Correlations,
    /// Blocked central limit test.
    Clt,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let cfg = RunConfig::resolve(g.config.as_deref(), &g.overrides()).map_err(|e| Failure::Config(e.to_string()))?;
    let ctx = Ctx::new(cfg, commands::out_dir_or_default(g.out_dir.as_deref()))?;
    match cli.command {
        Command::Scheme(SchemeCmd::Build) => commands::scheme_build(&ctx),
        Command::Scheme(SchemeCmd::Verify) => commands::scheme_verify(&ctx),
        Command::Shift(ShiftCmd::Pressure) => commands::shift_pressure(&ctx),
        Command::Shift(ShiftCmd::Gibbs) => commands::shift_gibbs(&ctx),
        Command::Thermo(ThermoCmd::PressureCurve) => commands::thermo_pressure_curve(&ctx),
        Command::Thermo(ThermoCmd::Equilibrium) => commands::thermo_equilibrium(&ctx),
        Command::Thermo(ThermoCmd::Liftability) => commands::thermo_liftability(&ctx),
        Command::Thermo(ThermoCmd::AbramovKac) => commands::thermo_abramov_kac(&ctx),
        Command::Stats(StatsCmd::Sample) => commands::stats_sample(&ctx),
        Command::Stats(StatsCmd::Lyapunov) => commands::stats_lyapunov(&ctx),
        Command::Stats(StatsCmd::Correlations) => commands::stats_correlations(&ctx),
        Command::Stats(StatsCmd::Clt) => commands::stats_clt(&ctx),
        Command::VerifyAll => commands::verify_all(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
