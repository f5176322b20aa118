mod data;
mod experiments;
mod tools;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nvsim_core::protocol::{InitialState, SweepParam};
use nvsim_core::pump::{LevelScheme, RepumpConfig, StateKind};
use serde_json::json;
use sha2::{Digest, Sha256};

use data::{load_protocol, read_file, CliError, CliResult, DataSource};
use experiments::{parse_subspace, with_grid, Context, Outputs};
use tools::PlotKind;

#[derive(Parser, Debug)]
#[command(
    name = "nvsim",
    version,
    about = "Seeded experiments on a simulated NV-centre network node",
    long_about = "Seeded experiments on a simulated NV-centre network node.\n\n\
        Every run writes its CSV outputs and a manifest.json (arguments, resolved \
        configuration, seed and SHA-256 of each output) into --out. Physics defaults \
        are bundled; NVSIM_DATA names a directory holding replacement protocol.toml, \
        register.toml and level_scheme_{a,e}.toml files."
)]
struct Cli {
    /// Protocol configuration (TOML, every field required)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; results do not depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the configured Monte Carlo trajectory count
    #[arg(long, global = true)]
    trajectories: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Initial {
    /// Logical +X
    Superposition,
    /// Logical +Z
    Up,
}

impl From<Initial> for InitialState {
    fn from(i: Initial) -> Self {
        match i {
            Initial::Superposition => InitialState::Superposition,
            Initial::Up => InitialState::Up,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Scheme {
    A,
    E,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Start {
    M1,
    P1,
    Singlet,
}

#[derive(Args, Debug)]
struct Grid {
    /// Repetitions per run (default: from the config)
    #[arg(long)]
    n_reps: Option<u64>,
    /// Checkpoint spacing in repetitions
    #[arg(long)]
    step: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optical reset of the electron: level populations under the repump
    /// laser and a double-exponential fit of the return to |0>
    #[command(alias = "pump-curve")]
    Pump {
        #[arg(long, value_enum, default_value = "a")]
        scheme: Scheme,
        /// Level-scheme TOML used instead of --scheme
        #[arg(long)]
        scheme_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "m1")]
        start: Start,
        #[arg(long, default_value_t = 3000.0)]
        duration_ns: f64,
        #[arg(long, default_value_t = 0.1)]
        dt_ns: f64,
        /// Keep every n-th time step in the CSV
        #[arg(long, default_value_t = 10)]
        stride: usize,
    },
    /// Memory coherence against the number of entangling attempts for one
    /// subspace, with an exponential fit
    Dephase {
        /// `ID` or `ID-ID:anti|par`
        #[arg(long, default_value = "5")]
        subspace: String,
        #[command(flatten)]
        grid: Grid,
        #[arg(long, value_enum, default_value = "superposition")]
        initial: Initial,
        /// Divide out the intrinsic T2* decay before fitting
        #[arg(long)]
        correct_t2star: bool,
    },
    /// Coherence after n_reps attempts against the interval asymmetry tau
    SweepTau {
        #[arg(long, default_value = "5")]
        subspace: String,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = 1.6)]
        to: f64,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        #[arg(long)]
        n_reps: Option<u64>,
        #[arg(long, value_enum, default_value = "superposition")]
        initial: Initial,
    },
    /// Memory state after n_reps attempts against the wait time t; run at
    /// tau = 0 from logical +Z, where the z column shows the flips
    SweepT {
        #[arg(long, default_value = "1")]
        subspace: String,
        #[arg(long, default_value_t = 0.1)]
        from: f64,
        #[arg(long, default_value_t = 3.6)]
        to: f64,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        #[arg(long)]
        n_reps: Option<u64>,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(long, value_enum, default_value = "up")]
        initial: Initial,
    },
    /// A spin pair stored in one spin, the antiparallel and the parallel
    /// subspace: coherence decay of each and fitted N_1/e
    DpsScan {
        /// `ID-ID`
        #[arg(long, default_value = "2-3")]
        pair: String,
        #[command(flatten)]
        grid: Grid,
    },
    /// N_1/e of all single-spin and two-spin subspaces against the
    /// effective coupling, with a fit of the dephasing model
    Scaling {
        /// Closed-form model only, no Monte Carlo
        #[arg(long)]
        analytic: bool,
    },
    /// Survival of the negative charge state against the number of resets
    Ionization {
        #[arg(long, default_value_t = 5000)]
        n_max: u64,
        #[arg(long, default_value_t = 250)]
        step: u64,
    },
    /// Initialization-and-readout fidelity of every nuclear spin from
    /// simulated tomography
    InitFidelity {
        #[arg(long, default_value_t = 20000)]
        shots: u64,
        /// Perfect readout and gates
        #[arg(long)]
        ideal: bool,
        /// Fixed depolarizing error per conditional gate instead of the
        /// per-spin calibration
        #[arg(long)]
        gate_error: Option<f64>,
    },
    /// Fits the model that belongs to a CSV written by another subcommand
    Fit {
        #[arg(long)]
        input: PathBuf,
    },
    /// Converts a CSV into whitespace-separated plot columns
    Plotdata {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "line")]
        kind: PlotKind,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pump { .. } => "pump-curve",
            Command::Dephase { .. } => "dephase",
            Command::SweepTau { .. } => "sweep-tau",
            Command::SweepT { .. } => "sweep-t",
            Command::DpsScan { .. } => "dps-scan",
            Command::Scaling { .. } => "scaling",
            Command::Ionization { .. } => "ionization",
            Command::InitFidelity { .. } => "init-fidelity",
            Command::Fit { .. } => "fit",
            Command::Plotdata { .. } => "plotdata",
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("input").to_string()
}

fn parse_pair(text: &str) -> CliResult<(u32, u32)> {
    let bad = || CliError::Config(format!("pair: expected `ID-ID`, got `{text}`"));
    let (a, b) = text.split_once('-').ok_or_else(bad)?;
    let a = a.trim().parse().map_err(|_| bad())?;
    let b = b.trim().parse().map_err(|_| bad())?;
    if a == b {
        return Err(CliError::Config("pair: ids must differ".into()));
    }
    Ok((a, b))
}

fn run_command(cli: &Cli, ctx: &mut Context) -> CliResult<Outputs> {
    match &cli.command {
        Command::Pump {
            scheme,
            scheme_file,
            start,
            duration_ns,
            dt_ns,
            stride,
        } => {
            let scheme = match scheme_file {
                Some(p) => LevelScheme::from_toml(&read_file(p)?)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
                None => ctx.data.scheme(match scheme {
                    Scheme::A => RepumpConfig::A,
                    Scheme::E => RepumpConfig::E,
                })?,
            };
            let start = match start {
                Start::M1 => StateKind::GroundM1,
                Start::P1 => StateKind::GroundP1,
                Start::Singlet => StateKind::Singlet,
            };
            if !(*duration_ns > 0.0) || !(*dt_ns > 0.0) {
                return Err(CliError::Config("duration_ns, dt_ns: must be > 0".into()));
            }
            experiments::pump(&scheme, start, *duration_ns, *dt_ns, *stride)
        }
        Command::Dephase {
            subspace,
            grid,
            initial,
            correct_t2star,
        } => {
            let sub = parse_subspace(subspace)?;
            ctx.cfg = with_grid(&ctx.cfg, grid.n_reps, grid.step)?;
            experiments::dephase(ctx, &sub, (*initial).into(), *correct_t2star)
        }
        Command::SweepTau {
            subspace,
            from,
            to,
            step,
            n_reps,
            initial,
        } => {
            let sub = parse_subspace(subspace)?;
            if let Some(n) = n_reps {
                ctx.cfg.n_reps = *n;
            }
            let values = experiments::grid(*from, *to, *step)?;
            experiments::sweep_experiment(ctx, SweepParam::Tau, &sub, &values, (*initial).into())
        }
        Command::SweepT {
            subspace,
            from,
            to,
            step,
            n_reps,
            tau,
            initial,
        } => {
            let sub = parse_subspace(subspace)?;
            if let Some(n) = n_reps {
                ctx.cfg.n_reps = *n;
            }
            ctx.cfg.tau_us = *tau;
            let values = experiments::grid(*from, *to, *step)?;
            experiments::sweep_experiment(ctx, SweepParam::T, &sub, &values, (*initial).into())
        }
        Command::DpsScan { pair, grid } => {
            let (a, b) = parse_pair(pair)?;
            ctx.cfg = with_grid(&ctx.cfg, grid.n_reps, grid.step)?;
            experiments::dps_scan(ctx, a, b)
        }
        Command::Scaling { analytic } => experiments::scaling(ctx, *analytic),
        Command::Ionization { n_max, step } => experiments::ionization(ctx, *n_max, *step),
        Command::InitFidelity {
            shots,
            ideal,
            gate_error,
        } => experiments::init_fidelity(ctx, *shots, *ideal, *gate_error),
        Command::Fit { input } => {
            let json = tools::fit(&read_file(input)?)?;
            print!("{json}");
            Ok(vec![(format!("{}_fit.json", stem(input)), json)])
        }
        Command::Plotdata { input, kind } => {
            let dat = tools::plotdata(&read_file(input)?, *kind)?;
            Ok(vec![(format!("{}.dat", stem(input)), dat)])
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary name so a crash never leaves a partial file.
fn write_atomic(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let dst = dir.join(name);
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", dst.display()));
    std::fs::write(&tmp, contents).map_err(io)?;
    std::fs::rename(&tmp, &dst).map_err(io)
}

fn run(cli: Cli) -> CliResult<()> {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);

    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("threads: must be > 0".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }

    let data = DataSource::from_env();
    let mut cfg = load_protocol(cli.config.as_deref(), &data)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.trajectories {
        if n == 0 {
            return Err(CliError::Config("trajectories: must be > 0".into()));
        }
        cfg.trajectories = n;
    }
    let register = data.register()?;
    let mut ctx = Context { cfg, register, data };

    let outputs = run_command(&cli, &mut ctx)?;

    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Config(format!("out: {}: {e}", cli.out.display())))?;
    let mut checksums = serde_json::Map::new();
    for (name, contents) in &outputs {
        write_atomic(&cli.out, name, contents)?;
        checksums.insert(name.clone(), json!(sha256_hex(contents.as_bytes())));
    }
    let manifest = json!({
        "experiment": cli.command.name(),
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
        "config": ctx.cfg,
        "data": match &ctx.data {
            DataSource::Bundled => "bundled".to_string(),
            DataSource::Dir(d) => d.display().to_string(),
        },
        "version": env!("CARGO_PKG_VERSION"),
        "seed": ctx.cfg.seed,
        "started_unix_s": started_unix,
        "wall_clock_s": started.elapsed().as_secs_f64(),
        "outputs": checksums,
    });
    write_atomic(&cli.out, "manifest.json", &experiments::pretty(&manifest))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nvsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
