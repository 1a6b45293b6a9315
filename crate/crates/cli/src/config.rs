use std::path::{Path, PathBuf};

use lyapcov::discretize::{ProblemSpec, SteadyGuess};
use lyapcov::linalg::SpectralInterval;
use lyapcov::mc::MAX_OUTPUT_POINTS;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub use lyapcov::bounds::DESK_SCALE_LIMIT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    /// Interior nodes of the system under study.
    pub n: usize,
    /// Refinement levels for the order study, coarsest first.
    #[serde(default)]
    pub levels: Vec<usize>,
    /// Reference mesh for the order study.
    #[serde(default)]
    pub reference: Option<usize>,
    #[serde(default)]
    pub guess: SteadyGuess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t_final: f64,
    /// Defaults to `0.1 / max|λ(𝒜)|`.
    #[serde(default)]
    pub dt: Option<f64>,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_points")]
    pub output_points: usize,
}

fn default_points() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftChoice {
    Wachspress,
    User(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdiConfig {
    /// Number of ADI steps `j` (and of Wachspress shifts).
    pub steps: usize,
    /// Stop once `‖W_j‖₂² / ‖B‖₂²` drops below this; 0 runs exactly `steps`.
    #[serde(default = "default_tol")]
    pub residual_tol: f64,
    #[serde(default = "default_shifts")]
    pub shifts: ShiftChoice,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_shifts() -> ShiftChoice {
    ShiftChoice::Wachspress
}

impl Default for AdiConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            residual_tol: default_tol(),
            shifts: default_shifts(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeInitial {
    /// `V(0) = 0`, matching fluctuations started at the steady state.
    #[default]
    Zero,
    /// `V(0) = V_*`.
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeConfig {
    #[serde(default)]
    pub initial: OdeInitial,
    /// RK4 steps; defaults to twice the stability minimum.
    #[serde(default)]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub sim: Option<SimSection>,
    #[serde(default)]
    pub adi: AdiConfig,
    /// Overrides the spectral interval computed from the operator (`shifts` only).
    #[serde(default)]
    pub interval: Option<SpectralInterval>,
    #[serde(default)]
    pub ode: OdeConfig,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Shifts,
    Solve,
    Bounds,
    Validate,
    Ceres,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text)
            .map_err(|e| invalid(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every section before any computation starts.
    pub fn validate(&self, cmd: Command) -> Result<(), CliError> {
        self.problem
            .validate()
            .map_err(|e| invalid(format!("problem: {e}")))?;
        let d = &self.discretization;
        if d.n == 0 {
            return Err(invalid("discretization.n must be at least 1"));
        }
        if self.problem.noise_rank > d.n {
            return Err(invalid(format!(
                "problem.noise_rank = {} exceeds discretization.n = {}",
                self.problem.noise_rank, d.n
            )));
        }
        if let SteadyGuess::Values(v) = &d.guess {
            if cmd != Command::Ceres && v.len() != d.n {
                return Err(invalid(format!(
                    "discretization.guess has {} values, n = {}",
                    v.len(),
                    d.n
                )));
            }
        }
        if self.adi.steps == 0 {
            return Err(invalid("adi.steps must be at least 1"));
        }
        if !(self.adi.residual_tol >= 0.0) {
            return Err(invalid("adi.residual_tol must be non-negative"));
        }
        if let ShiftChoice::User(s) = &self.adi.shifts {
            if s.is_empty() || s.iter().any(|&a| !(a < 0.0 && a.is_finite())) {
                return Err(invalid(
                    "adi.shifts.user must be a non-empty list of negative numbers",
                ));
            }
        }
        if let Some(iv) = self.interval {
            SpectralInterval::new(iv.a, iv.b).map_err(|e| invalid(format!("interval: {e}")))?;
        }
        if let Some(sim) = &self.sim {
            if !(sim.t_final > 0.0 && sim.t_final.is_finite()) {
                return Err(invalid("sim.t_final must be positive"));
            }
            if let Some(dt) = sim.dt {
                if !(dt > 0.0 && dt <= sim.t_final) {
                    return Err(invalid("sim.dt must lie in (0, t_final]"));
                }
            }
            if sim.samples < 2 {
                return Err(invalid("sim.samples must be at least 2"));
            }
            if sim.output_points == 0 || sim.output_points > MAX_OUTPUT_POINTS {
                return Err(invalid(format!(
                    "sim.output_points must lie in 1..={MAX_OUTPUT_POINTS}"
                )));
            }
        }
        if self.ode.steps == Some(0) {
            return Err(invalid("ode.steps must be at least 1"));
        }
        match cmd {
            Command::Bounds if d.n > DESK_SCALE_LIMIT => Err(invalid(format!(
                "bounds factors V_* densely and is limited to n <= {DESK_SCALE_LIMIT} (got {}); \
                 reduce discretization.n or use `solve` for a low-rank factor",
                d.n
            ))),
            Command::Validate | Command::Ceres if self.sim.is_none() => {
                Err(invalid("a `sim` section is required for this command"))
            }
            Command::Ceres => self.validate_study(),
            _ => Ok(()),
        }
    }

    fn validate_study(&self) -> Result<(), CliError> {
        let d = &self.discretization;
        if d.levels.len() < 3 {
            return Err(invalid(
                "discretization.levels needs at least three entries",
            ));
        }
        if d.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("discretization.levels must be strictly increasing"));
        }
        if matches!(d.guess, SteadyGuess::Values(_)) {
            return Err(invalid(
                "discretization.guess cannot be explicit values for a multi-level study",
            ));
        }
        let finest = *d.levels.last().expect("checked");
        let reference = d
            .reference
            .ok_or_else(|| invalid("discretization.reference is required"))?;
        if reference < 2 * finest {
            return Err(invalid(format!(
                "discretization.reference = {reference} must be at least twice the finest level {finest}"
            )));
        }
        if d.n != reference && !d.levels.contains(&d.n) {
            return Err(invalid(
                "discretization.n must be one of the levels or the reference",
            ));
        }
        if self.problem.noise_rank > d.levels[0] {
            return Err(invalid("problem.noise_rank exceeds the coarsest level"));
        }
        Ok(())
    }
}
