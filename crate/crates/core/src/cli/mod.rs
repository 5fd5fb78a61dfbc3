//! `voltvar` command-line front end.
//!
//! Exit codes: 0 on success or when the checked condition holds, 1 on a
//! runtime error, 2 when a condition fails or a run does not converge.

pub mod ingest;
pub mod output;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::control::{controlled_buses, ControlCurve};
use crate::dynamics::{
    check_d1_condition, critical_homogeneous_alpha, d3_stepsize_bound, simulate, solve_equilibrium,
    Controller, ControllerConfig, SimOptions, Trajectory, Verdict,
};
use crate::error::{Error, Result};
use crate::network::{sensitivity_matrices, Feeder, SensitivityMatrices};
use crate::powerflow::{DistFlowPlant, LinearPlant, PlantKind, SweepOptions};

pub use ingest::{
    build_feeder, export_feeder, feeder_hash, load_feeder, parse_feeder_file, read_feeder_file,
    FeederFile, IngestOptions,
};
use output::{write_trajectory_csv, RunMetadata, DISTFLOW_NOTE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "voltvar",
    version,
    about = "Local Volt/VAR control on radial distribution feeders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report the D1 contraction condition and the D3 step-size bound.
    Check(CheckArgs),
    /// Run one controller and write its trajectory.
    Simulate(SimulateArgs),
    /// Solve for the common equilibrium on the linear model.
    Equilibrium(EquilibriumArgs),
    /// Equilibrium deviation and controller verdict over a parameter grid.
    Sweep(SweepArgs),
    /// Write the feeder as a p.u. JSON file.
    ExportFeeder(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FeederArgs {
    /// Feeder JSON path or `builtin:sce42`.
    #[arg(long, default_value = "builtin:sce42")]
    pub feeder: String,
    #[arg(long, default_value_t = 1.0)]
    pub load_scale: f64,
    /// Load power factor used to split apparent loads.
    #[arg(long, default_value_t = 0.9)]
    pub power_factor: f64,
    /// Inverter real output as a fraction of nameplate.
    #[arg(long, default_value_t = 1.0)]
    pub pv_output: f64,
    /// Inverter apparent-power rating as a multiple of nameplate.
    #[arg(long, default_value_t = 1.1)]
    pub oversize: f64,
}

impl FeederArgs {
    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            power_factor: self.power_factor,
            load_scale: self.load_scale,
            pv_output: self.pv_output,
            oversize: self.oversize,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    /// Droop slope applied to every inverter; overrides curves in the file.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Full deadband width in p.u. (0.04 is the band 0.98 to 1.02).
    #[arg(long, default_value_t = 0.04)]
    pub deadband: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerKind {
    D1,
    D2,
    D3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlantArg {
    Linear,
    Distflow,
}

impl From<PlantArg> for PlantKind {
    fn from(p: PlantArg) -> Self {
        match p {
            PlantArg::Linear => PlantKind::Linear,
            PlantArg::Distflow => PlantKind::Distflow,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value_t = ControllerKind::D1)]
    pub controller: ControllerKind,
    #[arg(long, value_enum, default_value_t = PlantArg::Linear)]
    pub plant: PlantArg,
    #[arg(long)]
    pub gamma2: Option<f64>,
    /// Defaults to 0.9 times the convergence bound.
    #[arg(long)]
    pub gamma3: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Oscillation detector window.
    #[arg(long, default_value_t = 50)]
    pub window: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub feeder: FeederArgs,
    #[command(flatten)]
    pub curve: CurveArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub feeder: FeederArgs,
    #[command(flatten)]
    pub curve: CurveArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Trajectory CSV; metadata goes next to it with a `.json` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep every k-th state in the CSV.
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EquilibriumArgs {
    #[command(flatten)]
    pub feeder: FeederArgs,
    #[command(flatten)]
    pub curve: CurveArgs,
    /// Fixed-point residual tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iter: usize,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Gamma2,
    Gamma3,
    LoadScale,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub feeder: FeederArgs,
    #[command(flatten)]
    pub curve: CurveArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values or `start:stop:step`.
    #[arg(long)]
    pub grid: String,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub feeder: FeederArgs,
    #[command(flatten)]
    pub curve: CurveArgs,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `1,2,5` or `start:stop:step` (inclusive of `stop` up to round-off).
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidParameter(format!("bad grid value '{t}'")))
    };
    let grid = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidParameter(format!(
                "grid '{s}' is not start:stop:step"
            )));
        }
        let (a, b, h) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(h > 0.0) || b < a {
            return Err(Error::InvalidParameter(format!(
                "grid '{s}' is empty or has a non-positive step"
            )));
        }
        let count = ((b - a) / h + 1e-9).floor() as usize + 1;
        // 12 significant digits drops the round-off of `a + k h`
        (0..count)
            .map(|k| {
                format!("{:.11e}", a + k as f64 * h)
                    .parse::<f64>()
                    .expect("formatted float parses")
            })
            .collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<f64>>>()?
    };
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    Ok(grid)
}

/// Feeder with the `--alpha` droop applied, if given.
fn prepare_feeder(feeder: &FeederArgs, curve: &CurveArgs) -> Result<Feeder> {
    let f = load_feeder(&feeder.feeder, &feeder.ingest_options())?;
    Ok(match curve.alpha {
        Some(alpha) => f.with_curves(&ControlCurve::droop(alpha, curve.deadband)?),
        None => f,
    })
}

fn controller_for(
    run: &RunArgs,
    cfg: &ControllerConfig,
    x: &nalgebra::DMatrix<f64>,
) -> Result<Controller> {
    Ok(match run.controller {
        ControllerKind::D1 => Controller::D1,
        ControllerKind::D2 => Controller::D2 {
            gamma2: run
                .gamma2
                .ok_or_else(|| Error::InvalidParameter("--gamma2 is required for d2".into()))?,
        },
        ControllerKind::D3 => Controller::D3 {
            gamma3: run
                .gamma3
                .unwrap_or_else(|| 0.9 * d3_stepsize_bound(&cfg.curves, &cfg.limits, x)),
        },
    })
}

fn sim_options(run: &RunArgs, record_every: usize) -> SimOptions {
    SimOptions {
        tol: run.tol,
        max_iter: run.max_iter,
        window: run.window,
        record_every,
        ..Default::default()
    }
}

fn run_plant(
    kind: PlantKind,
    feeder: &Feeder,
    mats: &SensitivityMatrices,
    cfg: &ControllerConfig,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let q0 = vec![0.0; feeder.n()];
    match kind {
        PlantKind::Linear => simulate(&LinearPlant::new(mats), mats, cfg, &q0, opts),
        PlantKind::Distflow => simulate(
            &DistFlowPlant::new(feeder, SweepOptions::default()),
            mats,
            cfg,
            &q0,
            opts,
        ),
    }
}

/// `max |v_i - v_nom,i|` over buses with a controllable inverter (all buses if none).
pub fn max_deviation(cfg: &ControllerConfig, v: &[f64]) -> f64 {
    let idx = controlled_buses(&cfg.curves, &cfg.limits);
    let dev = |i: usize| (v[i] - cfg.v_nom[i]).abs();
    if idx.is_empty() {
        (0..v.len()).map(dev).fold(0.0, f64::max)
    } else {
        idx.into_iter().map(dev).fold(0.0, f64::max)
    }
}

fn write_to(path: Option<&Path>, out: &mut dyn Write, body: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, body)?,
        None => out.write_all(body.as_bytes())?,
    }
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Check(a) => cmd_check(&a, out),
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Equilibrium(a) => cmd_equilibrium(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::ExportFeeder(a) => cmd_export(&a, out),
    }
}

fn cmd_check(a: &CheckArgs, out: &mut dyn Write) -> Result<i32> {
    let feeder = prepare_feeder(&a.feeder, &a.curve)?;
    let mats = sensitivity_matrices(&feeder);
    let cfg = ControllerConfig::from_feeder(&feeder, Controller::D1)?;
    let d1 = check_d1_condition(&cfg.curves, &cfg.limits, &mats.x);
    let alpha_star = critical_homogeneous_alpha(&cfg.curves, &cfg.limits, &mats.x);
    let g3 = d3_stepsize_bound(&cfg.curves, &cfg.limits, &mats.x);
    writeln!(
        out,
        "controlled buses      {}",
        controlled_buses(&cfg.curves, &cfg.limits).len()
    )?;
    writeln!(out, "sigma_max(A X)        {}", d1.sigma)?;
    writeln!(out, "row-sum bound         {}", d1.row_sum_bound)?;
    writeln!(out, "row-sum bound < 1     {}", d1.row_sum_holds)?;
    writeln!(out, "critical alpha        {}", alpha_star)?;
    writeln!(out, "gamma3_max            {}", g3)?;
    writeln!(
        out,
        "d1 condition          {}",
        if d1.sufficient { "holds" } else { "fails" }
    )?;
    Ok(if d1.sufficient { EXIT_OK } else { EXIT_FAIL })
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<i32> {
    let feeder = prepare_feeder(&a.feeder, &a.curve)?;
    let mats = sensitivity_matrices(&feeder);
    let base = ControllerConfig::from_feeder(&feeder, Controller::D1)?;
    let cfg = base.with_controller(controller_for(&a.run, &base, &mats.x)?)?;
    let kind: PlantKind = a.run.plant.into();
    let opts = sim_options(&a.run, a.record_every);
    let traj = run_plant(kind, &feeder, &mats, &cfg, &opts)?;
    let dev = max_deviation(&cfg, &traj.last().v);

    if let Some(path) = &a.out {
        let mut csv = Vec::new();
        write_trajectory_csv(&mut csv, &traj)?;
        std::fs::write(path, csv)?;
        let mut notes = Vec::new();
        if kind == PlantKind::Distflow {
            notes.push(DISTFLOW_NOTE.to_string());
        }
        let meta = RunMetadata {
            feeder: a.feeder.feeder.clone(),
            feeder_sha256: feeder_hash(&feeder),
            bus_ids: feeder.bus_ids(),
            bases: feeder.bases(),
            units: "p.u.",
            controller: cfg.controller,
            plant: kind,
            alpha: a.curve.alpha,
            deadband: a.curve.deadband,
            load_scale: a.feeder.load_scale,
            power_factor: a.feeder.power_factor,
            pv_output: a.feeder.pv_output,
            oversize: a.feeder.oversize,
            tol: opts.tol,
            max_iter: opts.max_iter,
            window: opts.window,
            verdict: traj.verdict,
            steps: traj.steps(),
            final_max_deviation: dev,
            notes,
        };
        std::fs::write(
            path.with_extension("json"),
            serde_json::to_string_pretty(&meta)? + "\n",
        )?;
    }
    match traj.verdict {
        Verdict::Converged(t) => writeln!(out, "verdict               converged at step {t}")?,
        Verdict::Oscillating(t) => writeln!(
            out,
            "verdict               oscillating (detected at step {t})"
        )?,
        Verdict::MaxIterations => writeln!(
            out,
            "verdict               no convergence in {} steps",
            traj.steps()
        )?,
    }
    writeln!(out, "final max |v - v_nom| {dev}")?;
    Ok(if traj.verdict.is_converged() {
        EXIT_OK
    } else {
        EXIT_FAIL
    })
}

#[derive(Serialize)]
struct EquilibriumOutput<'a> {
    bus_ids: Vec<u32>,
    #[serde(flatten)]
    report: &'a crate::dynamics::EquilibriumReport,
    max_deviation: f64,
}

fn cmd_equilibrium(a: &EquilibriumArgs, out: &mut dyn Write) -> Result<i32> {
    let feeder = prepare_feeder(&a.feeder, &a.curve)?;
    let mats = sensitivity_matrices(&feeder);
    let cfg = ControllerConfig::from_feeder(&feeder, Controller::D1)?;
    let report = solve_equilibrium(&mats, &cfg, a.tol, a.max_iter)?;
    let dev = max_deviation(&cfg, &report.v);
    writeln!(out, "bus        q*                      v*")?;
    for (k, id) in feeder.bus_ids().iter().enumerate() {
        if feeder.inverter_at(k).is_some() {
            writeln!(out, "{id:<10} {:<23} {}", report.q[k], report.v[k])?;
        }
    }
    writeln!(out, "F(q*)                 {}", report.objective.total)?;
    writeln!(
        out,
        "fixed-point residual  {:e}",
        report.fixed_point_residual
    )?;
    writeln!(out, "variational gap       {:e}", report.variational_gap)?;
    writeln!(out, "max |v* - v_nom|      {dev}")?;
    if let Some(path) = &a.out {
        let body = EquilibriumOutput {
            bus_ids: feeder.bus_ids(),
            report: &report,
            max_deviation: dev,
        };
        std::fs::write(path, serde_json::to_string_pretty(&body)? + "\n")?;
    }
    Ok(EXIT_OK)
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub max_deviation: f64,
    pub verdict: Verdict,
    pub steps: usize,
    pub sigma: f64,
    pub gamma3_max: f64,
}

fn sweep_point(a: &SweepArgs, value: f64) -> Result<SweepRow> {
    let mut feeder_args = a.feeder.clone();
    let mut curve = a.curve.clone();
    let mut run = a.run.clone();
    match a.param {
        SweepParam::Alpha => curve.alpha = Some(value),
        SweepParam::LoadScale => feeder_args.load_scale = value,
        SweepParam::Gamma2 => {
            run.controller = ControllerKind::D2;
            run.gamma2 = Some(value);
        }
        SweepParam::Gamma3 => {
            run.controller = ControllerKind::D3;
            run.gamma3 = Some(value);
        }
    }
    let feeder = prepare_feeder(&feeder_args, &curve)?;
    let mats = sensitivity_matrices(&feeder);
    let base = ControllerConfig::from_feeder(&feeder, Controller::D1)?;
    let eq = solve_equilibrium(&mats, &base, 1e-10, 1_000_000)?;
    let cfg = base.with_controller(controller_for(&run, &base, &mats.x)?)?;
    let traj = run_plant(
        run.plant.into(),
        &feeder,
        &mats,
        &cfg,
        &sim_options(&run, usize::MAX),
    )?;
    Ok(SweepRow {
        value,
        max_deviation: max_deviation(&base, &eq.v),
        verdict: traj.verdict,
        steps: traj.steps(),
        sigma: check_d1_condition(&base.curves, &base.limits, &mats.x).sigma,
        gamma3_max: d3_stepsize_bound(&base.curves, &base.limits, &mats.x),
    })
}

/// Evaluate every grid point in parallel; rows come back in grid order.
pub fn sweep(a: &SweepArgs) -> Result<Vec<SweepRow>> {
    let grid = parse_grid(&a.grid)?;
    grid.par_iter().map(|&v| sweep_point(a, v)).collect()
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let name = match param {
        SweepParam::Alpha => "alpha",
        SweepParam::Gamma2 => "gamma2",
        SweepParam::Gamma3 => "gamma3",
        SweepParam::LoadScale => "load_scale",
    };
    let mut s = format!("{name},max_deviation,verdict,steps,sigma,gamma3_max\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.value,
            r.max_deviation,
            r.verdict.label(),
            r.steps,
            r.sigma,
            r.gamma3_max
        ));
    }
    s
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let rows = sweep(a)?;
    write_to(a.out.as_deref(), out, &sweep_csv(a.param, &rows))?;
    Ok(EXIT_OK)
}

fn cmd_export(a: &ExportArgs, out: &mut dyn Write) -> Result<i32> {
    let feeder = prepare_feeder(&a.feeder, &a.curve)?;
    let name = a
        .feeder
        .feeder
        .strip_prefix(ingest::BUILTIN_PREFIX)
        .map(str::to_string);
    let body = serde_json::to_string_pretty(&export_feeder(&feeder, name))? + "\n";
    write_to(a.out.as_deref(), out, &body)?;
    Ok(EXIT_OK)
}
