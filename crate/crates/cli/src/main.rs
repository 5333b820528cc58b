use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dxyz_cli::config::{self, parse_jy_list, Overrides};
use dxyz_cli::{commands, CliError, Method};
use dxyz_core::trajectories::Scheme;
use dxyz_core::Direction;

#[derive(Parser)]
#[command(name = "dxyz", version, about = "Dissipative XYZ lattice simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Magnetization versus time from a product state
    Evolve(RunArgs),
    /// Relaxation rate of M^x over a jy sweep
    Gap(RunArgs),
    /// Individual quantum trajectories and their ensemble mean
    Trajectories(RunArgs),
    /// Homodyne histograms of M^x and their bimodality coefficient
    Bimodality(RunArgs),
    /// Full Liouvillian spectrum
    Spectrum(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rk4,
    Jump,
    Homodyne,
    Spectrum,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rk4 => Method::Rk4,
            MethodArg::Jump => Method::Jump,
            MethodArg::Homodyne => Method::Homodyne,
            MethodArg::Spectrum => Method::Spectrum,
        }
    }
}

#[derive(Clone)]
struct JyList(Vec<f64>);

fn parse_jy(s: &str) -> Result<JyList, String> {
    parse_jy_list(s).map(JyList)
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Rk4,
    Euler,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("'{s}' is not one of +x, -x, +y, -y, +z, -z"))
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Built-in parameter set the file (if any) is layered on
    #[arg(long, value_parser = ["paper-1d", "paper-2d"])]
    preset: Option<String>,
    /// Print the resolved configuration as TOML and exit
    #[arg(long)]
    print_config: bool,

    #[arg(long)]
    lx: Option<usize>,
    #[arg(long)]
    ly: Option<usize>,
    #[arg(long)]
    periodic: Option<bool>,
    #[arg(long, allow_hyphen_values = true)]
    jx: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    jy: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    jz: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, allow_hyphen_values = true)]
    dt: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    t_max: Option<f64>,
    /// Duration of individual trajectories
    #[arg(long, allow_hyphen_values = true)]
    t_total: Option<f64>,
    /// Start of the histogram sampling window
    #[arg(long, allow_hyphen_values = true)]
    t_s: Option<f64>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Initial polarization: +x, -x, +y, -y, +z or -z
    #[arg(long, allow_hyphen_values = true, value_parser = parse_direction)]
    initial: Option<Direction>,
    /// jy values as a,b,c or start:stop:step
    #[arg(long, allow_hyphen_values = true, value_parser = parse_jy)]
    jy_list: Option<JyList>,
    /// Start of the decay-fit window
    #[arg(long, allow_hyphen_values = true)]
    fit_start: Option<f64>,
    /// Histogram bins over [-1, 1]
    #[arg(long)]
    n_bins: Option<usize>,
    /// Relaxation-rate estimate setting the default t_s = 3 / lambda
    #[arg(long, allow_hyphen_values = true)]
    lambda_est: Option<f64>,
    /// Drift integrator of the trajectories
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Also diagonalize the Liouvillian at every gap point
    #[arg(long)]
    exact: bool,
    /// Output directory
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            lx: self.lx,
            ly: self.ly,
            periodic: self.periodic,
            jx: self.jx,
            jy: self.jy,
            jz: self.jz,
            gamma: self.gamma,
            method: self.method.map(Method::from),
            dt: self.dt,
            t_max: self.t_max,
            t_total: self.t_total,
            t_s: self.t_s,
            n_traj: self.n_traj,
            base_seed: self.seed,
            record_every: self.record_every,
            initial: self.initial,
            jy_list: self.jy_list.clone().map(|l| l.0),
            fit_start: self.fit_start,
            n_bins: self.n_bins,
            lambda_est: self.lambda_est,
            scheme: self.scheme.map(|s| match s {
                SchemeArg::Rk4 => Scheme::Rk4,
                SchemeArg::Euler => Scheme::Euler,
            }),
            exact: self.exact.then_some(true),
            out: self.out.clone(),
        }
    }
}

fn main() -> ExitCode {
    // Usage errors are configuration errors; 2 is reserved for numerics.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (args, run): (&RunArgs, fn(&_) -> _) = match &cli.command {
        Command::Evolve(a) => (a, commands::evolve),
        Command::Gap(a) => (a, commands::gap),
        Command::Trajectories(a) => (a, commands::trajectories),
        Command::Bimodality(a) => (a, commands::bimodality),
        Command::Spectrum(a) => (a, commands::spectrum),
    };
    let result = config::resolve(args.preset.as_deref(), args.config.as_deref(), &args.overrides())
        .map_err(CliError::from)
        .and_then(|(config, _)| {
            if args.print_config {
                print!("{}", config.to_toml());
                return Ok(None);
            }
            run(&config).map(Some)
        });
    match result {
        Ok(summary) => {
            for line in summary.map(|s| s.0).unwrap_or_default() {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
