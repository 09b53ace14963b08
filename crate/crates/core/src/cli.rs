//! `timebin` command-line front end.
//!
//! Every subcommand writes its artifacts into `--out` and prints a JSON
//! summary on stdout. Failures print `{"error": {...}}` on stderr, leave an
//! `error.json` in the output directory when possible, and exit with
//! 2 (config), 3 (data) or 4 (numeric failure).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::calibration::{fit_decay, fit_rabi, predict_counts_with, DecayFit, FitReport, PowerUnit};
use crate::config::{RunConfig, SweepConfig};
use crate::density::DensityMatrix;
use crate::error::{Error, Result, Stage};
use crate::integrator::Stats;
use crate::io;
use crate::model::omega0_to_power;
use crate::pipeline::{analyze_counts, run_pipeline, simulate_counts};
use crate::sweep::{energy_contour_check, iso_count_contour, run_sweep, EnergyAlignment};
use crate::tomography::{fidelity_bell, fidelity_mixed};

#[derive(Debug, Parser)]
#[command(name = "timebin", version, about = "Time-bin entangled photon pairs from a driven quantum dot")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; defaults are used for anything left out
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dot dynamics, coincidence counts, reconstructed matrix and fidelities
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit model parameters to a Rabi-oscillation dataset
    Fit {
        #[command(flatten)]
        common: Common,
        /// CSV with columns power, counts_b, counts_x
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit an exponential decay to a lifetime trace
    DecayFit {
        #[command(flatten)]
        common: Common,
        /// CSV with columns t (ps), counts
        #[arg(long)]
        data: PathBuf,
    },
    /// Reconstruct a two-photon matrix from sixteen coincidence counts
    Tomo {
        #[command(flatten)]
        common: Common,
        /// CSV with columns nu, counts (analyzer columns optional)
        #[arg(long)]
        data: PathBuf,
        /// Reference matrix JSON for the mixed-state fidelity; the model prediction if omitted
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Fidelity and counts maps over (Ω₀, τ) with an iso-count contour
    Sweep {
        #[command(flatten)]
        common: Common,
        /// "o0_min:o0_max:n,tau_min:tau_max:n"
        #[arg(long)]
        grid: Option<String>,
        /// Normalized-counts level of the contour
        #[arg(long)]
        level: Option<f64>,
        /// Full-resolution grid over the configured ranges
        #[arg(long)]
        full: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common }
            | Command::Fit { common, .. }
            | Command::DecayFit { common, .. }
            | Command::Tomo { common, .. }
            | Command::Sweep { common, .. } => common,
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Serialize)]
pub struct SimulateSummary {
    pub omega0: f64,
    pub tau: f64,
    pub power: Option<f64>,
    pub p_x: f64,
    pub p_b: f64,
    /// probability of a biexciton photon in both time bins
    pub p_b_squared: f64,
    pub total_counts: f64,
    pub fidelity_bell: f64,
    pub min_eigenvalue_reconstructed: f64,
    pub purity: f64,
    pub solver: Stats,
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<SimulateSummary> {
    let opts = cfg.pipeline_options();
    let p = cfg.params;
    let (traj, emission, counts) = simulate_counts(&p, &opts)?;
    io::write_trajectory_csv(&out.join("trajectory.csv"), &io::trajectory_rows(&traj), cfg)?;
    io::write_counts_csv(&out.join("counts.csv"), &counts, cfg)?;
    let (raw, physical, fidelity) = analyze_counts(&counts, cfg.bell_phase)?;
    io::write_json_artifact(&out.join("density_matrix.json"), "density-matrix", cfg, &physical)?;
    io::write_json_artifact(&out.join("density_matrix_raw.json"), "density-matrix-unprojected", cfg, &raw)?;
    let summary = SimulateSummary {
        omega0: p.omega0,
        tau: p.tau,
        power: omega0_to_power(p.omega0, &p).ok(),
        p_x: emission.p_x,
        p_b: emission.p_b,
        p_b_squared: emission.p_b * emission.p_b,
        total_counts: counts.total(),
        fidelity_bell: fidelity,
        min_eigenvalue_reconstructed: raw.min_eigenvalue(),
        purity: physical.purity(),
        solver: traj.solver_stats(),
    };
    io::write_json_artifact(&out.join("report.json"), "simulate-report", cfg, &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct FitSummary {
    pub report: FitReport,
    pub improved: bool,
}

fn cmd_fit(cfg: &RunConfig, data: &Path, out: &Path) -> Result<FitSummary> {
    let tau = cfg.fit.tau.unwrap_or(cfg.params.tau);
    let dataset = io::read_rabi_csv(data, tau, cfg.fit.power_unit.unwrap_or(PowerUnit::AveragePower))?;
    let report = fit_rabi(&dataset, &cfg.params, &cfg.free_params(), &cfg.fit_options())?;
    let fitted: Vec<_> = dataset
        .rows
        .iter()
        .map(|r| {
            let c = predict_counts_with(&report.params, r.power, &cfg.solver);
            c.map(|c| (*r, c.counts_b, c.counts_x)).unwrap_or((*r, f64::NAN, f64::NAN))
        })
        .collect();
    io::write_rabi_fit_csv(&out.join("rabi_fit.csv"), &fitted, cfg)?;
    let summary = FitSummary { improved: report.improved(), report };
    io::write_json_artifact(&out.join("fit_report.json"), "fit-report", cfg, &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct DecaySummary {
    #[serde(flatten)]
    pub fit: DecayFit,
    /// 1/γ, ps
    pub lifetime: f64,
    pub points: usize,
}

fn cmd_decay_fit(cfg: &RunConfig, data: &Path, out: &Path) -> Result<DecaySummary> {
    let series = io::read_decay_csv(data)?;
    let fit = fit_decay(&series)?;
    let summary = DecaySummary { lifetime: fit.lifetime(), fit, points: series.len() };
    io::write_json_artifact(&out.join("decay_fit.json"), "decay-fit", cfg, &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct TomoSummary {
    pub fidelity_bell: f64,
    pub fidelity_mixed: f64,
    /// `model` or the reference file path
    pub reference: String,
    pub min_eigenvalue_reconstructed: f64,
    pub total_counts: f64,
}

fn cmd_tomo(cfg: &RunConfig, data: &Path, reference: Option<&Path>, out: &Path) -> Result<TomoSummary> {
    let counts = io::read_counts_csv(data)?;
    let (raw, physical, _) = analyze_counts(&counts, cfg.bell_phase)?;
    let (ref_matrix, ref_label): (DensityMatrix, String) = match reference {
        Some(path) => (io::read_density_matrix(path)?, path.display().to_string()),
        None => (run_pipeline(&cfg.params, &cfg.pipeline_options())?.physical, "model".to_owned()),
    };
    io::write_json_artifact(&out.join("density_matrix.json"), "density-matrix", cfg, &physical)?;
    io::write_json_artifact(&out.join("density_matrix_raw.json"), "density-matrix-unprojected", cfg, &raw)?;
    let summary = TomoSummary {
        fidelity_bell: fidelity_bell(&physical, cfg.bell_phase)?,
        fidelity_mixed: fidelity_mixed(&physical, &ref_matrix)?,
        reference: ref_label,
        min_eigenvalue_reconstructed: raw.min_eigenvalue(),
        total_counts: counts.total(),
    };
    io::write_json_artifact(&out.join("tomo_report.json"), "tomo-report", cfg, &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct SweepSummary {
    pub shape: (usize, usize),
    pub failed_cells: usize,
    pub max_counts_cell: Option<(f64, f64)>,
    /// fidelity at the smallest Ω₀²τ on the grid
    pub lowest_energy_fidelity: f64,
    pub contour_level: f64,
    pub contour_points: usize,
    /// why no contour was written, if none was
    pub contour_error: Option<String>,
    pub energy_alignment: EnergyAlignment,
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<SweepSummary> {
    let grid = run_sweep(&cfg.params, &cfg.sweep.omega0.values(), &cfg.sweep.tau.values(), &cfg.pipeline_options())?;
    io::write_sweep_csv(&out.join("sweep.csv"), &grid, cfg)?;
    let level = cfg.contour.level;
    let (contour_points, contour_error) = match iso_count_contour(&grid, level) {
        Ok(points) => {
            io::write_contour_csv(&out.join("contour.csv"), level, &points, cfg)?;
            (points.len(), None)
        }
        Err(e @ Error::LevelOutOfRange { .. }) => (0, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let summary = SweepSummary {
        shape: grid.shape(),
        failed_cells: grid.failed_cells(),
        max_counts_cell: grid.max_cell().map(|(i, j)| (grid.omega0_axis()[i], grid.tau_axis()[j])),
        // both axes increase, so the smallest Ω₀²τ sits at (0, 0)
        lowest_energy_fidelity: grid.fidelity(0, 0),
        contour_level: level,
        contour_points,
        contour_error,
        energy_alignment: energy_contour_check(&grid),
    };
    io::write_json_artifact(&out.join("sweep_report.json"), "sweep-report", cfg, &summary)?;
    Ok(summary)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Executes one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    let mut cfg = load_config(common)?;
    let out = common.out.clone();
    if let Command::Sweep { grid, level, full, .. } = &cli.command {
        if let Some(spec) = grid {
            cfg.sweep = SweepConfig::parse_grid(spec)?;
        }
        if *full {
            cfg.sweep = cfg.sweep.full_resolution();
        }
        if let Some(level) = level {
            cfg.contour.level = *level;
        }
        cfg.validate()?;
    }
    prepare_out(&out)?;
    match &cli.command {
        Command::Simulate { .. } => print_json(&cmd_simulate(&cfg, &out)?),
        Command::Fit { data, .. } => print_json(&cmd_fit(&cfg, data, &out)?),
        Command::DecayFit { data, .. } => print_json(&cmd_decay_fit(&cfg, data, &out)?),
        Command::Tomo { data, reference, .. } => print_json(&cmd_tomo(&cfg, data, reference.as_deref(), &out)?),
        Command::Sweep { .. } => print_json(&cmd_sweep(&cfg, &out)?),
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    stage: Stage,
    exit_code: i32,
    kind: String,
    message: String,
}

fn error_body(e: &Error) -> serde_json::Value {
    let kind = format!("{e:?}").split([' ', '(', '{']).next().unwrap_or_default().to_owned();
    serde_json::json!({ "error": ErrorBody { stage: e.stage(), exit_code: e.exit_code(), kind, message: e.to_string() } })
}

/// Process entry point; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let out = cli.command.common().out.clone();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let body = error_body(&e);
            eprintln!("{body}");
            if out.is_dir() {
                let _ = io::write_atomic(&out.join("error.json"), format!("{body:#}\n").as_bytes());
            }
            e.exit_code()
        }
    }
}
