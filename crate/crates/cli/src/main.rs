//! `simpleray`: command-line front end for ray transforms, wave simulation and the recovery
//! pipeline. Every subcommand reads a TOML run config and writes artifacts plus a manifest into
//! `<output>/<subcommand>/`.

mod artifacts;
mod commands;

use anyhow::Result;
use artifacts::Run;
use clap::{Args, Parser, Subcommand};
use simpleray::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "simpleray", version, about = "Geodesic ray transforms and hyperbolic DN-map inversion on the unit disk")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output root, overriding the config and SIMPLERAY_DATA_DIR.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Trace one geodesic from an inflow point.
    Shoot(Common),
    /// Boundary distance function from one boundary point.
    Distance(Common),
    /// Geodesic X-ray transform of a registry field.
    Xray(Common),
    /// Invert a sinogram artifact.
    Invert(Common),
    /// Full-wave DN trace of one probe.
    Wavesolve(Common),
    /// Geometric-optics DN trace of one probe.
    SynthDn(Common),
    /// DN gaps between a triple and random gauge transforms of it.
    GaugeCheck(Common),
    /// Recovery stages.
    Recover {
        #[command(subcommand)]
        stage: Stage,
    },
    /// Hölder experiment on the configured family.
    Holder(Common),
    /// Print the default configuration.
    DefaultConfig,
}

#[derive(Subcommand)]
enum Stage {
    /// Boundary jets of (g, b, q) under injected trace noise.
    BoundaryJet(Common),
    /// Boundary distances and the linearized interior metric problem.
    DistanceTable(Common),
    /// Sinogram of b − b̃ from exit traces.
    BSinogram(Common),
    /// Sinogram of q − q̃ from exit traces.
    QSinogram(Common),
    /// All stages at the first configured noise level.
    Pipeline(Common),
    /// Same as the top-level `holder`.
    Holder(Common),
}

type Body = fn(&RunConfig, &mut Run) -> Result<()>;

fn execute(name: &str, common: &Common, body: Body) -> Result<()> {
    let cfg = RunConfig::load(&common.config)?;
    let mut run = Run::start(&cfg, name, common.output.as_deref())?;
    body(&cfg, &mut run)?;
    let dir = run.finish()?;
    println!("{}", dir.display());
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    use commands::*;
    let (name, common, body): (&str, Common, Body) = match cmd {
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml()?);
            return Ok(());
        }
        Command::Shoot(c) => ("shoot", c, shoot_cmd),
        Command::Distance(c) => ("distance", c, distance_cmd),
        Command::Xray(c) => ("xray", c, xray_cmd),
        Command::Invert(c) => ("invert", c, invert_cmd),
        Command::Wavesolve(c) => ("wavesolve", c, wavesolve_cmd),
        Command::SynthDn(c) => ("synth-dn", c, synth_dn_cmd),
        Command::GaugeCheck(c) => ("gauge-check", c, gauge_check_cmd),
        Command::Holder(c) | Command::Recover { stage: Stage::Holder(c) } => ("holder", c, holder_cmd),
        Command::Recover { stage } => match stage {
            Stage::BoundaryJet(c) => ("recover boundary-jet", c, boundary_jet_cmd),
            Stage::DistanceTable(c) => ("recover distance-table", c, distance_table_cmd),
            Stage::BSinogram(c) => ("recover b-sinogram", c, |cfg, run| sinogram_cmd(cfg, run, 1)),
            Stage::QSinogram(c) => ("recover q-sinogram", c, |cfg, run| sinogram_cmd(cfg, run, 0)),
            Stage::Pipeline(c) => ("recover pipeline", c, pipeline_cmd),
            Stage::Holder(_) => unreachable!(),
        },
    };
    execute(name, &common, body)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
