//! Batch front end for the lyapcov pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
mod output;

use std::path::{Path, PathBuf};

use lyapcov::bounds::{decay_rate_h, decay_rate_spectral, verify_decay};
use lyapcov::ceres::{assemble_budget, galerkin_order_study, CeresBudget};
use lyapcov::discretize::DiscretizedSystem;
use lyapcov::linalg::{
    dense_lyapunov, spectral_interval, spectral_norm, SpectralInterval, SymMatrix,
};
use lyapcov::lradi::{
    lr_adi_run, rational_radius, shift_radii, theoretical_error_bound, theta_bound,
    wachspress_shifts, ShiftSet, StopCriteria,
};
use lyapcov::mc::{linearization_gap, ode_covariance, ode_min_steps, simulate_coupled, SimConfig};
use serde_json::json;
use thiserror::Error;

pub use config::{Command, OdeInitial, RunConfig, ShiftChoice};
pub use output::{Cell, Format, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stability condition violated: {0}")]
    Stability(lyapcov::Error),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stability(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<lyapcov::Error> for CliError {
    fn from(e: lyapcov::Error) -> Self {
        if e.is_stability() {
            CliError::Stability(e)
        } else if matches!(e, lyapcov::Error::StepSize { .. }) {
            CliError::Config(e.to_string())
        } else {
            CliError::Solver(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorFormat {
    #[default]
    Csv,
    /// Little-endian `u64` rows, `u64` columns, then column-major `f64` entries.
    Binary,
}

/// Where and how a command writes its artifacts.
#[derive(Debug, Clone)]
pub struct OutputOptions {
    pub dir: PathBuf,
    pub format: Format,
    pub factor_format: FactorFormat,
}

/// Files written and a human-readable summary.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub message: String,
}

struct Writer<'a> {
    opts: &'a OutputOptions,
    files: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(opts: &'a OutputOptions) -> Result<Self, CliError> {
        std::fs::create_dir_all(&opts.dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", opts.dir.display())))?;
        Ok(Self {
            opts,
            files: Vec::new(),
        })
    }

    fn bytes(&mut self, name: &str, data: &[u8]) -> Result<(), CliError> {
        let path = self.opts.dir.join(name);
        std::fs::write(&path, data)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }

    fn table(&mut self, stem: &str, table: &Table) -> Result<(), CliError> {
        let name = format!("{stem}.{}", self.opts.format.extension());
        self.bytes(&name, table.render(self.opts.format).as_bytes())
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::Solver(e.to_string()))?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    fn finish(self, message: String) -> Report {
        Report {
            files: self.files,
            message,
        }
    }
}

fn build_system(cfg: &RunConfig) -> Result<DiscretizedSystem, CliError> {
    Ok(DiscretizedSystem::finite_difference(
        &cfg.problem,
        cfg.discretization.n,
        &cfg.discretization.guess,
    )?)
}

fn shift_set(cfg: &RunConfig, interval: SpectralInterval) -> Result<ShiftSet, CliError> {
    Ok(match &cfg.adi.shifts {
        ShiftChoice::Wachspress => wachspress_shifts(interval, cfg.adi.steps)?,
        ShiftChoice::User(s) => ShiftSet::user(s.clone())?,
    })
}

fn sim_config(cfg: &RunConfig, sys: &DiscretizedSystem) -> Result<SimConfig, CliError> {
    let sim = cfg
        .sim
        .as_ref()
        .ok_or_else(|| CliError::Config("missing `sim` section".into()))?;
    let sc = SimConfig {
        t_final: sim.t_final,
        dt: sim.dt.unwrap_or_else(|| SimConfig::default_dt(sys)),
        samples: sim.samples,
        seed: sim.seed,
        output_points: sim.output_points,
    };
    sc.validate()
        .map_err(|e| CliError::Config(format!("sim: {e}")))?;
    Ok(sc)
}

/// `shifts`: Wachspress (or user) shifts, per-shift radii, cumulative `Θ_j` and
/// the elliptic error bound.
pub fn cmd_shifts(cfg: &RunConfig, opts: &OutputOptions) -> Result<Report, CliError> {
    cfg.validate(Command::Shifts)?;
    let interval = match cfg.interval {
        Some(iv) => {
            SpectralInterval::new(iv.a, iv.b).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => spectral_interval(&build_system(cfg)?.linearization)?,
    };
    let shifts = shift_set(cfg, interval)?;
    let rho = shift_radii(&shifts, interval);
    let theta = theta_bound(&shifts, interval);
    let mut table = Table::new(&["i", "alpha_i", "rho_i", "theta_j"]);
    for (i, ((a, r), t)) in shifts.shifts().iter().zip(&rho).zip(&theta).enumerate() {
        table.push(vec![
            Cell::Int(i as u64 + 1),
            Cell::Num(*a),
            Cell::Num(*r),
            Cell::Num(*t),
        ]);
    }
    let j = shifts.len();
    let ell = interval.elliptic();
    let joint = rational_radius(shifts.shifts(), interval);
    let contraction = ell.contraction(j as u32);
    let mut w = Writer::new(opts)?;
    w.table("shifts", &table)?;
    w.json(
        "shifts_summary.json",
        &json!({
            "interval": interval,
            "kappa": interval.kappa(),
            "k_prime": ell.k_prime,
            "j": j,
            "theta_j": theta.last(),
            "joint_radius": joint,
            "radius_bound": contraction,
            "relative_error_bound": theoretical_error_bound(interval, j as u32),
        }),
    )?;
    Ok(w.finish(format!(
        "{j} shifts on [{}, {}]: Theta_j = {:e}, joint radius = {joint:e}, elliptic bound = {contraction:e}",
        interval.a,
        interval.b,
        theta.last().copied().unwrap_or(1.0)
    )))
}

fn write_factor(w: &mut Writer, z: &nalgebra::DMatrix<f64>) -> Result<(), CliError> {
    match w.opts.factor_format {
        FactorFormat::Csv => {
            let mut s = String::new();
            for row in z.row_iter() {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                s.push_str(&line.join(","));
                s.push('\n');
            }
            w.bytes("factor.csv", s.as_bytes())
        }
        FactorFormat::Binary => {
            let mut buf = Vec::with_capacity(16 + 8 * z.len());
            buf.extend_from_slice(&(z.nrows() as u64).to_le_bytes());
            buf.extend_from_slice(&(z.ncols() as u64).to_le_bytes());
            for v in z.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.bytes("factor.bin", &buf)
        }
    }
}

/// `solve`: discretize, then LR-ADI; writes the factor, residual history and a summary.
pub fn cmd_solve(cfg: &RunConfig, opts: &OutputOptions) -> Result<Report, CliError> {
    cfg.validate(Command::Solve)?;
    let sys = build_system(cfg)?;
    let interval = spectral_interval(&sys.linearization)?;
    let shifts = shift_set(cfg, interval)?;
    let stop = StopCriteria {
        max_steps: cfg.adi.steps,
        residual_tol: cfg.adi.residual_tol,
    };
    let lr = lr_adi_run(&sys.linearization, &sys.noise, &shifts, stop)?;
    let mut table = Table::new(&["step", "residual", "theta_j"]);
    for (i, r) in lr.residual_history.iter().enumerate() {
        let theta = lr
            .theta_history
            .get(i)
            .map_or(Cell::Empty, |t| Cell::Num(*t));
        table.push(vec![
            Cell::Int(i as u64 + 1),
            Cell::Num(r / lr.rhs_norm_sq),
            theta,
        ]);
    }
    let converged = lr.relative_residual() <= cfg.adi.residual_tol || cfg.adi.residual_tol == 0.0;
    let mut w = Writer::new(opts)?;
    write_factor(&mut w, lr.z.as_matrix())?;
    w.table("residual", &table)?;
    w.json(
        "summary.json",
        &json!({
            "n": sys.n,
            "noise_rank": sys.noise.ncols(),
            "j": lr.steps,
            "factor_columns": lr.z.ncols(),
            "final_residual": lr.relative_residual(),
            "residual_tol": cfg.adi.residual_tol,
            "converged": converged,
            "theta_j": lr.theta_history.last(),
            "relative_error_bound": theoretical_error_bound(interval, lr.steps as u32),
            "interval": interval,
        }),
    )?;
    if !converged {
        return Err(CliError::Solver(format!(
            "relative residual {:e} above tolerance {:e} after {} steps",
            lr.relative_residual(),
            cfg.adi.residual_tol,
            lr.steps
        )));
    }
    Ok(w.finish(format!(
        "n = {}, j = {}, rank {} factor, relative residual {:e}",
        sys.n,
        lr.steps,
        lr.z.ncols(),
        lr.relative_residual()
    )))
}

/// `bounds`: singular values of `V_*` against the Penzl and Sabino bounds.
pub fn cmd_bounds(cfg: &RunConfig, opts: &OutputOptions) -> Result<Report, CliError> {
    cfg.validate(Command::Bounds)?;
    let sys = build_system(cfg)?;
    let report = verify_decay(&sys.linearization, &sys.noise)?;
    let r = report.noise_rank;
    let s0 = report.singular_values[0];
    let mut table = Table::new(&["index", "sigma_i", "sigma_ratio", "penzl", "sabino"]);
    for (i, s) in report.singular_values.iter().enumerate() {
        let idx = i + 1;
        let (penzl, sabino) = if idx > r && (idx - 1) % r == 0 {
            let k = (idx - 1) / r - 1;
            (Cell::Num(report.penzl[k]), Cell::Num(report.sabino[k]))
        } else {
            (Cell::Empty, Cell::Empty)
        };
        table.push(vec![
            Cell::Int(idx as u64),
            Cell::Num(*s),
            Cell::Num(s / s0),
            penzl,
            sabino,
        ]);
    }
    let mut w = Writer::new(opts)?;
    w.table("decay", &table)?;
    w.json(
        "bounds_summary.json",
        &json!({
            "n": sys.n,
            "noise_rank": r,
            "kappa": report.interval.kappa(),
            "holds": report.holds(),
            "violations": report.violations.len(),
        }),
    )?;
    let verdict = if report.holds() {
        "all inequalities hold"
    } else {
        "VIOLATED"
    };
    Ok(w.finish(format!(
        "n = {}, R = {r}, kappa = {:.4e}: {verdict}",
        sys.n,
        report.interval.kappa()
    )))
}

fn ode_initial(cfg: &RunConfig, sys: &DiscretizedSystem) -> Result<SymMatrix, CliError> {
    Ok(match cfg.ode.initial {
        OdeInitial::Zero => SymMatrix::zeros(sys.n),
        OdeInitial::Stationary => dense_lyapunov(&sys.linearization, &sys.noise)?,
    })
}

fn ode_steps(cfg: &RunConfig, sys: &DiscretizedSystem, t: f64) -> usize {
    cfg.ode.steps.unwrap_or_else(|| 2 * ode_min_steps(sys, t))
}

/// Least-squares slope of `-ln d(t)` over the points where `d` exceeds `floor`.
fn fitted_decay_rate(times: &[f64], dist: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(dist)
        .filter(|(_, d)| **d > floor)
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Some(-sxy / sxx)
}

/// `validate`: coupled Monte Carlo, covariance ODE, linearization gap and decay fit.
pub fn cmd_validate(cfg: &RunConfig, opts: &OutputOptions) -> Result<Report, CliError> {
    cfg.validate(Command::Validate)?;
    let sys = build_system(cfg)?;
    let sim = sim_config(cfg, &sys)?;
    let (nl, lin) = simulate_coupled(&sys, &sim)?;
    let gap = linearization_gap(&sys, &nl, &lin)?;
    let v0 = ode_initial(cfg, &sys)?;
    let ode = ode_covariance(
        &sys,
        &v0,
        sim.t_final,
        ode_steps(cfg, &sys, sim.t_final),
        sim.output_points,
    )?;
    let v_star = dense_lyapunov(&sys.linearization, &sys.noise)?;
    let v_star_norm = spectral_norm(&v_star);
    let dist: Vec<f64> = ode
        .matrices
        .iter()
        .map(|m| spectral_norm(&SymMatrix::symmetrize(m.as_matrix() - v_star.as_matrix())))
        .collect();
    let rate_spectral = decay_rate_spectral(&sys.linearization)?;
    let rate_h = decay_rate_h(&sys.linearization)?;
    let fitted = fitted_decay_rate(&ode.times, &dist, 1e-12 * v_star_norm);

    let mut gap_table = Table::new(&[
        "time",
        "gap",
        "eta_star",
        "bound_slow",
        "bound_fast",
        "cov_norm_nl",
        "cov_norm_lin",
    ]);
    for k in 0..gap.times.len() {
        gap_table.push(vec![
            Cell::Num(gap.times[k]),
            Cell::Num(gap.gap[k]),
            Cell::Num(gap.eta.eta_star[k]),
            Cell::Num(gap.slow_envelope.bound[k]),
            Cell::Num(gap.fast_envelope.bound[k]),
            Cell::Num(spectral_norm(&nl.matrices[k])),
            Cell::Num(spectral_norm(&lin.matrices[k])),
        ]);
    }
    let mut ode_table = Table::new(&["time", "ode_distance", "envelope_spectral", "envelope_h"]);
    for (t, d) in ode.times.iter().zip(&dist) {
        ode_table.push(vec![
            Cell::Num(*t),
            Cell::Num(*d),
            Cell::Num(dist[0] * (-2.0 * rate_spectral * t).exp()),
            Cell::Num(dist[0] * (-rate_h * t).exp()),
        ]);
    }
    let mut w = Writer::new(opts)?;
    w.table("gap", &gap_table)?;
    w.table("ode", &ode_table)?;
    w.json(
        "validate_summary.json",
        &json!({
            "n": sys.n,
            "samples": sim.samples,
            "seed": sim.seed,
            "dt": sim.dt,
            "sup_gap": gap.sup_gap(),
            "c_l_slow": gap.slow_envelope.c_l,
            "c_l_fast": gap.fast_envelope.c_l,
            "eta_star_final": gap.eta.eta_star.last(),
            "eta_ingredients": gap.eta.ingredients,
            "v_star_norm": v_star_norm,
            "decay_rate_spectral": rate_spectral,
            "decay_rate_h": rate_h,
            "fitted_decay_rate": fitted,
        }),
    )?;
    let fmt_opt = |c: Option<f64>| c.map_or("none".to_string(), |v| format!("{v:e}"));
    Ok(w.finish(format!(
        "sup gap {:e}; C_l slow {}, fast {}; ODE decay rate {} (spectral {rate_spectral:e}, H {rate_h:e})",
        gap.sup_gap(),
        fmt_opt(gap.slow_envelope.c_l),
        fmt_opt(gap.fast_envelope.c_l),
        fmt_opt(fitted)
    )))
}

/// Runs every stage and assembles the four-term budget.
pub fn run_budget(cfg: &RunConfig) -> Result<(CeresBudget, lyapcov::ceres::OrderStudy), CliError> {
    let d = &cfg.discretization;
    let study = galerkin_order_study(
        &cfg.problem,
        &d.levels,
        d.reference.expect("validated"),
        &d.guess,
    )?;
    let sys = build_system(cfg)?;
    let sim = sim_config(cfg, &sys)?;
    let (nl, lin) = simulate_coupled(&sys, &sim)?;
    let gap = linearization_gap(&sys, &nl, &lin)?;
    let v0 = ode_initial(cfg, &sys)?;
    let ode = ode_covariance(
        &sys,
        &v0,
        sim.t_final,
        ode_steps(cfg, &sys, sim.t_final),
        sim.output_points,
    )?;
    let interval = spectral_interval(&sys.linearization)?;
    let shifts = shift_set(cfg, interval)?;
    let stop = StopCriteria {
        max_steps: cfg.adi.steps,
        residual_tol: cfg.adi.residual_tol,
    };
    let lr = lr_adi_run(&sys.linearization, &sys.noise, &shifts, stop)?;
    let budget = assemble_budget(&sys, &study, &gap, &ode, &lr, sim.t_final)?;
    Ok((budget, study))
}

/// `ceres`: full pipeline with the combined budget as JSON and CSV.
pub fn cmd_ceres(cfg: &RunConfig, opts: &OutputOptions) -> Result<Report, CliError> {
    cfg.validate(Command::Ceres)?;
    let (budget, study) = run_budget(cfg)?;
    let mut terms = Table::new(&["term", "bound", "measured", "dominant"]);
    for (name, bound, measured) in budget.terms() {
        terms.push(vec![
            Cell::Text(name.into()),
            Cell::Num(bound),
            Cell::Num(measured),
            Cell::Int(u64::from(name == budget.dominant)),
        ]);
    }
    terms.push(vec![
        Cell::Text("total".into()),
        Cell::Num(budget.total_bound),
        Cell::Num(budget.total_measured),
        Cell::Int(0),
    ]);
    let mut levels = Table::new(&["n", "h", "error_hs", "error_spectral"]);
    for l in &study.levels {
        levels.push(vec![
            Cell::Int(l.n as u64),
            Cell::Num(l.h),
            Cell::Num(l.error_hs),
            Cell::Num(l.error_spectral),
        ]);
    }
    let mut w = Writer::new(opts)?;
    w.table("budget", &terms)?;
    w.table("order_study", &levels)?;
    w.json(
        "budget.json",
        &json!({ "budget": budget, "order_study": study }),
    )?;
    let state = if budget.consistent {
        "consistent"
    } else {
        "INCONSISTENT (measured exceeds bound)"
    };
    Ok(w.finish(format!(
        "dominant term: {} (bound {:e}); total bound {:e}, total measured {:e}; {state}",
        budget.dominant,
        budget
            .terms()
            .iter()
            .find(|t| t.0 == budget.dominant)
            .map_or(0.0, |t| t.1),
        budget.total_bound,
        budget.total_measured
    )))
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Format,
    pub factor_format: FactorFormat,
}

/// Loads the config at `path`, applies `overrides` and dispatches `cmd`.
pub fn run(cmd: Command, path: &Path, overrides: &Overrides) -> Result<Report, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let (Some(seed), Some(sim)) = (overrides.seed, cfg.sim.as_mut()) {
        sim.seed = seed;
    }
    let dir = overrides
        .out
        .clone()
        .or_else(|| cfg.outputs.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let opts = OutputOptions {
        dir,
        format: overrides.format,
        factor_format: overrides.factor_format,
    };
    match cmd {
        Command::Shifts => cmd_shifts(&cfg, &opts),
        Command::Solve => cmd_solve(&cfg, &opts),
        Command::Bounds => cmd_bounds(&cfg, &opts),
        Command::Validate => cmd_validate(&cfg, &opts),
        Command::Ceres => cmd_ceres(&cfg, &opts),
    }
}
