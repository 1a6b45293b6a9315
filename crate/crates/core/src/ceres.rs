//! Four-term combined error budget and the spatial refinement study.
//!
//! Covariances from different meshes are compared in sine-mode coordinates: a
//! level-`n` covariance `V_n` is restricted to its modes, `C_n = Φ_nᵀ V_n Φ_n`,
//! and injected into the reference mesh as `Φ_ref[:, ..n] C_n Φ_ref[:, ..n]ᵀ`.
//! Modes above `n` are treated as lying in the nullspace.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::bounds::{decay_rate_h, decay_rate_spectral};
use crate::discretize::{sine_modes, Basis, DiscretizedSystem, ProblemSpec, SteadyGuess};
use crate::error::{Error, Result};
use crate::linalg::{dense_lyapunov, spectral_interval, spectral_norm, SymMatrix};
use crate::lradi::{theoretical_error_bound, LowRankSolution};
use crate::mc::{CovarianceTrajectory, LinearizationGap, TrajectorySource};

/// Measured values below this fraction of `‖V_*‖₂` are treated as round-off.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelError {
    pub n: usize,
    pub h: f64,
    /// Hilbert-Schmidt (Frobenius) error against the reference.
    pub error_hs: f64,
    pub error_spectral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderStudy {
    pub domain_length: f64,
    pub reference_n: usize,
    pub levels: Vec<LevelError>,
    /// Least-squares slope of `log error` against `log h`.
    pub order: f64,
    /// `exp` of the least-squares intercept.
    pub ls_prefactor: f64,
    /// `order - 1` clamped to `[0, 1)`.
    pub r: f64,
    /// Smallest `C_d` with `error ≤ C_d h^{1+r}` at every level.
    pub c_d: f64,
    /// `error(level i) / error(level i + 1)`.
    pub ratios: Vec<f64>,
    /// `false` when the error does not decrease strictly under refinement.
    pub conclusive: bool,
}

impl OrderStudy {
    /// `C_d h^{1+r}`.
    pub fn bound_at(&self, h: f64) -> f64 {
        self.c_d * h.powf(1.0 + self.r)
    }

    /// Measured error of the level with `n` nodes; zero on the reference mesh.
    pub fn measured_at(&self, n: usize) -> Option<f64> {
        if n == self.reference_n {
            return Some(0.0);
        }
        self.levels.iter().find(|l| l.n == n).map(|l| l.error_hs)
    }
}

fn stationary_covariance(spec: &ProblemSpec, n: usize, guess: &SteadyGuess) -> Result<SymMatrix> {
    let sys = DiscretizedSystem::finite_difference(spec, n, guess)?;
    dense_lyapunov(&sys.linearization, &sys.noise)
}

fn injection_error(
    v: &SymMatrix,
    v_ref: &SymMatrix,
    modes_ref: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let n = v.dim();
    if n > modes_ref.ncols() {
        return Err(Error::domain(format!(
            "level n = {n} is finer than the reference"
        )));
    }
    let phi = sine_modes(n, n);
    let modal = phi.transpose() * v.as_matrix() * &phi;
    let lift = modes_ref.columns(0, n);
    let diff = SymMatrix::symmetrize(lift * modal * lift.transpose() - v_ref.as_matrix());
    Ok((diff.frobenius_norm(), spectral_norm(&diff)))
}

/// Error of the level-`n` stationary covariance against the level-`reference`
/// one, in the Hilbert-Schmidt and spectral norms.
pub fn level_error(
    spec: &ProblemSpec,
    n: usize,
    reference: usize,
    guess: &SteadyGuess,
) -> Result<LevelError> {
    let v_ref = stationary_covariance(spec, reference, guess)?;
    let modes_ref = sine_modes(reference, n.min(reference));
    let v = stationary_covariance(spec, n, guess)?;
    let (error_hs, error_spectral) = injection_error(&v, &v_ref, &modes_ref)?;
    Ok(LevelError {
        n,
        h: spec.mesh_width(n),
        error_hs,
        error_spectral,
    })
}

/// Refinement study of the stationary covariance over `levels` (coarsest first)
/// against a reference mesh at least twice as fine as the finest level.
pub fn galerkin_order_study(
    spec: &ProblemSpec,
    levels: &[usize],
    reference: usize,
    guess: &SteadyGuess,
) -> Result<OrderStudy> {
    spec.validate()?;
    if levels.len() < 3 {
        return Err(Error::domain(
            "refinement study needs at least three levels",
        ));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("levels must be strictly increasing"));
    }
    let finest = *levels.last().expect("non-empty");
    if reference < 2 * finest {
        return Err(Error::domain(format!(
            "reference n = {reference} must be at least twice the finest level n = {finest}"
        )));
    }
    let v_ref = stationary_covariance(spec, reference, guess)?;
    let modes_ref = sine_modes(reference, finest);
    let mut out = Vec::with_capacity(levels.len());
    for &n in levels {
        let v = stationary_covariance(spec, n, guess)?;
        let (error_hs, error_spectral) = injection_error(&v, &v_ref, &modes_ref)?;
        out.push(LevelError {
            n,
            h: spec.mesh_width(n),
            error_hs,
            error_spectral,
        });
    }
    let pts: Vec<(f64, f64)> = out
        .iter()
        .filter(|l| l.error_hs > 0.0)
        .map(|l| (l.h.ln(), l.error_hs.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::domain(
            "refinement study inconclusive: fewer than two nonzero errors",
        ));
    }
    let (order, intercept) = least_squares(&pts);
    let r = (order - 1.0).clamp(0.0, 1.0 - f64::EPSILON);
    let c_d = out
        .iter()
        .map(|l| l.error_hs / l.h.powf(1.0 + r))
        .fold(0.0, f64::max);
    let ratios: Vec<f64> = out
        .windows(2)
        .map(|w| w[0].error_hs / w[1].error_hs)
        .collect();
    let conclusive = out.windows(2).all(|w| w[1].error_hs < w[0].error_hs);
    Ok(OrderStudy {
        domain_length: spec.domain_length,
        reference_n: reference,
        levels: out,
        order,
        ls_prefactor: intercept.exp(),
        r,
        c_d,
        ratios,
        conclusive,
    })
}

fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretizationTerm {
    pub h: f64,
    pub c_d: f64,
    pub r: f64,
    pub bound: f64,
    /// Hilbert-Schmidt error from the refinement study.
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearizationTerm {
    pub envelope: String,
    pub c_l: Option<f64>,
    pub bound: f64,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCandidate {
    pub name: String,
    pub rate: f64,
    pub c_tau: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxationTerm {
    /// `‖V(0) - V_*‖₂`.
    pub initial_distance: f64,
    pub candidates: Vec<RateCandidate>,
    /// Index into `candidates` of the reported (tighter) rate.
    pub chosen: usize,
    pub bound: f64,
    pub measured: f64,
}

impl RelaxationTerm {
    pub fn curve(&self, t: f64) -> f64 {
        let c = &self.candidates[self.chosen];
        c.c_tau * self.initial_distance * (-c.rate * t).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverTerm {
    pub steps: usize,
    pub k_prime: f64,
    /// `((1 - √k'_j)/(1 + √k'_j))²`.
    pub relative_bound: f64,
    pub bound: f64,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CeresBudget {
    pub horizon: f64,
    pub v_star_norm: f64,
    pub err_s1: DiscretizationTerm,
    pub err_s2: LinearizationTerm,
    pub err_s3: RelaxationTerm,
    pub err_s4: SolverTerm,
    /// Sum of the four per-term suprema.
    pub total_bound: f64,
    /// Supremum over the time grid of the summed bound curves.
    pub total_bound_pointwise: f64,
    pub total_measured: f64,
    pub consistent: bool,
    /// Term with the largest bound.
    pub dominant: String,
    /// Term with the largest measured value.
    pub dominant_measured: String,
}

impl CeresBudget {
    pub fn terms(&self) -> [(&'static str, f64, f64); 4] {
        [
            ("err_s1", self.err_s1.bound, self.err_s1.measured),
            ("err_s2", self.err_s2.bound, self.err_s2.measured),
            ("err_s3", self.err_s3.bound, self.err_s3.measured),
            ("err_s4", self.err_s4.bound, self.err_s4.measured),
        ]
    }

    /// `term,bound,measured,dominant` rows plus a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("term,bound,measured,dominant\n");
        for (name, bound, measured) in self.terms() {
            out.push_str(&format!(
                "{name},{bound:e},{measured:e},{}\n",
                u8::from(name == self.dominant)
            ));
        }
        out.push_str(&format!(
            "total,{:e},{:e},0\n",
            self.total_bound, self.total_measured
        ));
        out
    }
}

fn argmax(values: impl Iterator<Item = (&'static str, f64)>) -> String {
    let mut best = ("", f64::NEG_INFINITY);
    for (name, v) in values {
        if v > best.1 {
            best = (name, v);
        }
    }
    best.0.to_string()
}

fn same_horizon(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Evaluates the four error terms for `sys` over `[0, horizon]`.
pub fn assemble_budget(
    sys: &DiscretizedSystem,
    study: &OrderStudy,
    gap: &LinearizationGap,
    ode: &CovarianceTrajectory,
    lr: &LowRankSolution,
    horizon: f64,
) -> Result<CeresBudget> {
    if sys.basis != Basis::Nodal {
        return Err(Error::domain("budget needs a finite-difference system"));
    }
    if (study.domain_length - sys.h * (sys.n as f64 + 1.0)).abs() > 1e-12 * study.domain_length {
        return Err(Error::domain(
            "refinement study was run on a different domain",
        ));
    }
    if ode.source != TrajectorySource::OdeExact {
        return Err(Error::domain("relaxation term needs an ODE trajectory"));
    }
    if ode.matrices.iter().any(|m| m.dim() != sys.n) || lr.z.nrows() != sys.n {
        return Err(Error::Dimension(
            "stage artifacts do not match the system dimension".into(),
        ));
    }
    let (gap_end, ode_end) = (
        *gap.times.last().expect("grid"),
        *ode.times.last().expect("grid"),
    );
    if !same_horizon(gap_end, horizon) || !same_horizon(ode_end, horizon) {
        return Err(Error::domain(format!(
            "time grids end at {gap_end} and {ode_end}, expected horizon {horizon}"
        )));
    }
    let measured_s1 = study.measured_at(sys.n).ok_or_else(|| {
        Error::domain(format!("refinement study has no level with n = {}", sys.n))
    })?;

    let v_star = dense_lyapunov(&sys.linearization, &sys.noise)?;
    let v_star_norm = spectral_norm(&v_star);
    let floor = ROUNDOFF_FLOOR * v_star_norm;

    let err_s1 = DiscretizationTerm {
        h: sys.h,
        c_d: study.c_d,
        r: study.r,
        bound: study.bound_at(sys.h),
        measured: measured_s1,
    };

    let envelope = if gap.slow_envelope.satisfied() {
        &gap.slow_envelope
    } else {
        &gap.fast_envelope
    };
    let err_s2 = LinearizationTerm {
        envelope: envelope.name.to_string(),
        c_l: envelope.c_l,
        bound: envelope.bound.iter().copied().fold(0.0, f64::max),
        measured: gap.sup_gap(),
    };

    let distance: Vec<f64> = ode
        .matrices
        .iter()
        .map(|m| spectral_norm(&SymMatrix::symmetrize(m.as_matrix() - v_star.as_matrix())))
        .collect();
    let initial_distance = distance[0];
    let rates = [
        ("spectral", decay_rate_spectral(&sys.linearization)?),
        ("lyapunov_h", decay_rate_h(&sys.linearization)?),
    ];
    let candidates: Vec<RateCandidate> = rates
        .iter()
        .map(|&(name, rate)| {
            let mut c_tau = if initial_distance > floor {
                1.0f64
            } else {
                0.0
            };
            if initial_distance > floor {
                for (t, d) in ode.times.iter().zip(&distance) {
                    if *d > floor {
                        c_tau = c_tau.max(d * (rate * t).exp() / initial_distance);
                    }
                }
            }
            RateCandidate {
                name: name.to_string(),
                rate,
                c_tau,
                bound: c_tau * initial_distance,
            }
        })
        .collect();
    let chosen = (0..candidates.len())
        .min_by(|&i, &j| {
            let (a, b) = (&candidates[i], &candidates[j]);
            a.bound.total_cmp(&b.bound).then(b.rate.total_cmp(&a.rate))
        })
        .expect("two candidates");
    let err_s3 = RelaxationTerm {
        initial_distance,
        bound: candidates[chosen].bound,
        candidates,
        chosen,
        measured: distance.iter().copied().fold(0.0, f64::max),
    };

    let interval = spectral_interval(&sys.linearization)?;
    let steps = lr.steps;
    let relative_bound = theoretical_error_bound(interval, steps as u32);
    let v_j = lr.dense();
    let err_s4 = SolverTerm {
        steps,
        k_prime: interval.elliptic().k_prime,
        relative_bound,
        bound: relative_bound * v_star_norm,
        measured: spectral_norm(&SymMatrix::symmetrize(v_j.as_matrix() - v_star.as_matrix())),
    };

    let total_bound = err_s1.bound + err_s2.bound + err_s3.bound + err_s4.bound;
    let total_bound_pointwise = gap
        .times
        .iter()
        .zip(&envelope.bound)
        .map(|(&t, b2)| err_s1.bound + b2 + err_s3.curve(t) + err_s4.bound)
        .fold(0.0, f64::max);
    let total_measured = err_s1.measured + err_s2.measured + err_s3.measured + err_s4.measured;
    let consistent = total_measured <= total_bound + 4.0 * floor;
    let mut budget = CeresBudget {
        horizon,
        v_star_norm,
        err_s1,
        err_s2,
        err_s3,
        err_s4,
        total_bound,
        total_bound_pointwise,
        total_measured,
        consistent,
        dominant: String::new(),
        dominant_measured: String::new(),
    };
    let terms = budget.terms();
    budget.dominant = argmax(terms.iter().map(|t| (t.0, t.1)));
    budget.dominant_measured = argmax(terms.iter().map(|t| (t.0, t.2)));
    Ok(budget)
}
