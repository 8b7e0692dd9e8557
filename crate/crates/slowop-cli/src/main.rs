//! `slowop`: construct the slowest operator of the mixed-field Ising chain
//! and run its analyses as batch experiments with CSV/JSON outputs.

mod config;
mod experiments;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "slowop", version, about = "Slowest-operator experiments for the mixed-field Ising chain")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve for the slowest operator at one or more (g, h, N) points.
    Find(CommonArgs),
    /// Probe overlaps over a parameter grid.
    #[command(name = "sweep-overlap")]
    SweepOverlap(CommonArgs),
    /// Lambda(N) scaling plus instant slopes (and the optimized diffusion
    /// mode reference for the local definition).
    #[command(name = "sweep-scaling")]
    SweepScaling(CommonArgs),
    /// Two-point correlator ntr(O(t) O(0)), exact or stochastic.
    Evolve(CommonArgs),
    /// Out-of-time-ordered commutators, one CSV per (axis, site).
    Otoc(CommonArgs),
    /// Operator entanglement-entropy profile of the DMRG solution.
    Entropy(CommonArgs),
    /// Scan h for the TI magnetization-overlap transition h*.
    Transition(CommonArgs),
    /// Cross-backend oracle checks; exit 1 on any failure.
    Verify(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// key=value config file; explicit flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// local | ti
    #[arg(long)]
    definition: Option<String>,
    /// exact | dmrg
    #[arg(long)]
    backend: Option<String>,
    /// Transverse field grid: value, list, or start:stop:step.
    #[arg(long)]
    g: Option<String>,
    /// Longitudinal field grid.
    #[arg(long)]
    h: Option<String>,
    /// Window size grid.
    #[arg(long = "N", value_name = "N")]
    n: Option<String>,
    /// Chain length for dynamics.
    #[arg(long = "L", value_name = "L")]
    l: Option<String>,
    /// Time grid, e.g. 0:20:0.5.
    #[arg(long)]
    times: Option<String>,
    /// Random vectors for the stochastic correlator.
    #[arg(long = "K", value_name = "K")]
    k: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Chebyshev rescale: a number or `auto`.
    #[arg(long)]
    e_bar: Option<String>,
    #[arg(long)]
    trunc_tol: Option<String>,
    /// DMRG bond-dimension schedule, e.g. 8,16,32,64.
    #[arg(long)]
    bond_dims: Option<String>,
    #[arg(long)]
    inner_tol: Option<String>,
    #[arg(long)]
    outer_tol: Option<String>,
    #[arg(long)]
    max_sweeps: Option<String>,
    /// Overlap threshold for transition detection.
    #[arg(long)]
    threshold: Option<String>,
    /// evolve backend: exact | stochastic.
    #[arg(long)]
    method: Option<String>,
    /// OTOC axes, e.g. x,y,z.
    #[arg(long)]
    axes: Option<String>,
    /// OTOC center offsets, e.g. 0,1,2.
    #[arg(long)]
    offsets: Option<String>,
    /// OTOC absolute sites (overrides offsets).
    #[arg(long)]
    sites: Option<String>,
    /// Output file (or directory for otoc).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Hamiltonian-MPO fixture for the verify mpo_vs_dense check.
    #[arg(long)]
    fixture_mpo: Option<PathBuf>,
    /// Bypass the result cache.
    #[arg(long)]
    no_cache: bool,
}

fn build_config(experiment: Experiment, args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::new(experiment);
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        c.merge_file(&text)?;
    }
    let mut set = |key: &str, v: &Option<String>| -> Result<()> {
        if let Some(v) = v {
            c.set(key, v.clone())?;
        }
        Ok(())
    };
    set("definition", &args.definition)?;
    set("backend", &args.backend)?;
    set("g", &args.g)?;
    set("h", &args.h)?;
    set("N", &args.n)?;
    set("L", &args.l)?;
    set("times", &args.times)?;
    set("K", &args.k)?;
    set("seed", &args.seed)?;
    set("e_bar", &args.e_bar)?;
    set("trunc_tol", &args.trunc_tol)?;
    set("bond_dims", &args.bond_dims)?;
    set("inner_tol", &args.inner_tol)?;
    set("outer_tol", &args.outer_tol)?;
    set("max_sweeps", &args.max_sweeps)?;
    set("threshold", &args.threshold)?;
    set("method", &args.method)?;
    set("axes", &args.axes)?;
    set("offsets", &args.offsets)?;
    set("sites", &args.sites)?;
    if let Some(out) = &args.output {
        c.set("output", out.to_string_lossy().to_string())?;
    }
    if let Some(f) = &args.fixture_mpo {
        c.set("fixture_mpo", f.to_string_lossy().to_string())?;
    }
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match &cli.cmd {
        Cmd::Find(a) => (Experiment::Find, a),
        Cmd::SweepOverlap(a) => (Experiment::SweepOverlap, a),
        Cmd::SweepScaling(a) => (Experiment::SweepScaling, a),
        Cmd::Evolve(a) => (Experiment::Evolve, a),
        Cmd::Otoc(a) => (Experiment::Otoc, a),
        Cmd::Entropy(a) => (Experiment::Entropy, a),
        Cmd::Transition(a) => (Experiment::Transition, a),
        Cmd::Verify(a) => (Experiment::Verify, a),
    };
    let config = match build_config(experiment, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config: {e:#}");
            return ExitCode::from(2);
        }
    };

    if experiment == Experiment::Verify {
        let fixture = match config.get("fixture_mpo") {
            None => None,
            Some(path) => match std::fs::read_to_string(path)
                .map_err(anyhow::Error::from)
                .and_then(|t| serde_json::from_str(&t).map_err(Into::into))
            {
                Ok(m) => Some(m),
                Err(e) => {
                    eprintln!("invalid MPO fixture: {e:#}");
                    return ExitCode::from(2);
                }
            },
        };
        return match verify::run_verify(fixture.as_ref()) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("verify failed to run: {e:#}");
                return ExitCode::from(2);
            }
        };
    }

    match experiments::run(&config, args.no_cache) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.point_errors > 0 {
                eprintln!("{} grid point(s) failed", outcome.point_errors);
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("invalid config: {e:#}");
            ExitCode::from(2)
        }
    }
}
