//! Wachspress shifts and the low-rank ADI iteration for `𝒜V + V𝒜 + BBᵀ = 0`
//! with symmetric negative definite `𝒜` and real negative shifts.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ShiftedSolver, SpectralInterval, SymMatrix, TallMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftSource {
    Wachspress,
    User,
}

/// Ordered strictly negative ADI shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSet {
    shifts: Vec<f64>,
    source: ShiftSource,
    /// Interval the shifts were generated for (Wachspress only).
    interval: Option<SpectralInterval>,
}

impl ShiftSet {
    pub fn user(shifts: Vec<f64>) -> Result<Self> {
        if shifts.is_empty() {
            return Err(Error::domain("shift set is empty"));
        }
        if let Some(bad) = shifts.iter().find(|s| !(**s < 0.0 && s.is_finite())) {
            return Err(Error::domain(format!(
                "shift {bad} is not strictly negative"
            )));
        }
        Ok(Self {
            shifts,
            source: ShiftSource::User,
            interval: None,
        })
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    pub fn source(&self) -> ShiftSource {
        self.source
    }

    pub fn interval(&self) -> Option<SpectralInterval> {
        self.interval
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    /// Shift used at (zero-based) step `step`; shifts are reused cyclically.
    pub fn cyclic(&self, step: usize) -> f64 {
        self.shifts[step % self.shifts.len()]
    }
}

/// `α_i = a · dn((2i - 1) K / (2j), k)` for `i = 1..j`, with `k' = b/a`.
pub fn wachspress_shifts(interval: SpectralInterval, j: usize) -> Result<ShiftSet> {
    if j == 0 {
        return Err(Error::domain("need at least one shift"));
    }
    let SpectralInterval { a, b } = SpectralInterval::new(interval.a, interval.b)?;
    let ell = interval.elliptic();
    let shifts = (1..=j)
        .map(|i| {
            let u = (2 * i - 1) as f64 * ell.k_complete / (2 * j) as f64;
            (a * ell.dn(u)).clamp(a, b)
        })
        .collect();
    Ok(ShiftSet {
        shifts,
        source: ShiftSource::Wachspress,
        interval: Some(interval),
    })
}

/// `|(z - α)/(z + α)|` for real `z` and `α`.
fn cayley(z: f64, alpha: f64) -> f64 {
    ((z - alpha) / (z + alpha)).abs()
}

/// Per-shift spectral radii `ρ_i = max_{z ∈ {a, b}} |(z - α_i)/(z + α_i)|`.
pub fn shift_radii(shifts: &ShiftSet, interval: SpectralInterval) -> Vec<f64> {
    shifts
        .shifts
        .iter()
        .map(|&alpha| cayley(interval.a, alpha).max(cayley(interval.b, alpha)))
        .collect()
}

/// Cumulative products `Θ_j = ρ_1 ⋯ ρ_j` of the per-shift radii.
pub fn theta_bound(shifts: &ShiftSet, interval: SpectralInterval) -> Vec<f64> {
    shift_radii(shifts, interval)
        .into_iter()
        .scan(1.0, |acc, rho| {
            *acc *= rho;
            Some(*acc)
        })
        .collect()
}

/// `max_{z ∈ [a, b]} |Π_i (z - α_i)/(z + α_i)|`, the ADI min-max objective.
///
/// Evaluated on a logarithmic grid with golden-section refinement around the
/// best samples; for optimal shifts this equals the Wachspress contraction.
pub fn rational_radius(shifts: &[f64], interval: SpectralInterval) -> f64 {
    let eval = |z: f64| {
        shifts
            .iter()
            .map(|&alpha| cayley(z, alpha))
            .product::<f64>()
    };
    let (lo, hi) = (interval.b.abs(), interval.a.abs());
    let mut best = eval(interval.a).max(eval(interval.b));
    if lo == hi {
        return best;
    }
    let samples = 400 * shifts.len().max(1);
    let ratio = (hi / lo).ln();
    let grid: Vec<f64> = (0..=samples)
        .map(|s| -lo * (ratio * s as f64 / samples as f64).exp())
        .collect();
    let values: Vec<f64> = grid.iter().map(|&z| eval(z)).collect();
    for s in 1..samples {
        if values[s] >= values[s - 1] && values[s] >= values[s + 1] {
            best = best.max(golden_max(&eval, grid[s + 1], grid[s - 1]));
        }
    }
    best
}

/// `max_{λ ∈ spectrum} |Π_i (λ - α_i)/(λ + α_i)|`, the exact `‖𝒥_j‖₂`.
pub fn rational_radius_on_spectrum(shifts: &[f64], spectrum: &[f64]) -> f64 {
    spectrum
        .iter()
        .map(|&z| {
            shifts
                .iter()
                .map(|&alpha| cayley(z, alpha))
                .product::<f64>()
        })
        .fold(0.0, f64::max)
}

fn golden_max(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if (hi - lo).abs() <= 1e-14 * hi.abs().max(lo.abs()) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    f1.max(f2)
}

/// Relative error factor `((1 - √k'_j)/(1 + √k'_j))²` for `j` Wachspress
/// steps, with `k'_j` belonging to the nome `q^j`.
pub fn theoretical_error_bound(interval: SpectralInterval, j: u32) -> f64 {
    interval.elliptic().contraction(j).powi(2)
}

/// Stopping rule for [`lr_adi_run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    pub max_steps: usize,
    /// Tolerance on `‖W_j‖₂² / ‖B‖₂²`.
    pub residual_tol: f64,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            max_steps: 100,
            residual_tol: 1e-10,
        }
    }
}

/// Low-rank factor `Z` with `V_j = Z Zᵀ` and the iteration history.
#[derive(Debug, Clone)]
pub struct LowRankSolution {
    pub z: TallMatrix,
    /// Residual factor: `𝒜V_j + V_j𝒜 + BBᵀ = W_j W_jᵀ`.
    pub w: TallMatrix,
    pub steps: usize,
    pub shifts_used: Vec<f64>,
    /// `Θ_j` per step, when the shifts carry their interval.
    pub theta_history: Vec<f64>,
    /// `‖W_j‖₂²` per step.
    pub residual_history: Vec<f64>,
    /// `‖B‖₂²`.
    pub rhs_norm_sq: f64,
}

impl LowRankSolution {
    pub fn relative_residual(&self) -> f64 {
        self.residual_history
            .last()
            .map_or(1.0, |r| r / self.rhs_norm_sq)
    }

    /// `V_j = Z Zᵀ` formed densely.
    pub fn dense(&self) -> SymMatrix {
        self.z.outer()
    }
}

/// Low-rank ADI: `H_j = (𝒜 + α_j I)⁻¹ W_{j-1}`, `W_j = W_{j-1} - 2α_j H_j`,
/// `Z_j = [Z_{j-1}, √(-2α_j) H_j]`, starting from `W_0 = B`.
pub fn lr_adi_run(
    a: &SymMatrix,
    b: &TallMatrix,
    shifts: &ShiftSet,
    stop: StopCriteria,
) -> Result<LowRankSolution> {
    if shifts.is_empty() {
        return Err(Error::domain("shift set is empty"));
    }
    if b.nrows() != a.dim() {
        return Err(Error::Dimension(format!(
            "B has {} rows, A is {}x{}",
            b.nrows(),
            a.dim(),
            a.dim()
        )));
    }
    let rhs_norm_sq = b.spectral_norm_sq();
    if rhs_norm_sq == 0.0 {
        return Err(Error::domain("right-hand side factor B is zero"));
    }
    if stop.max_steps == 0 {
        return Err(Error::domain("max_steps must be at least 1"));
    }
    let solver = ShiftedSolver::new(a);
    let (n, r) = (b.nrows(), b.ncols());
    let mut w = b.as_matrix().clone();
    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    let mut residual_history = Vec::new();
    let mut shifts_used = Vec::new();
    for step in 0..stop.max_steps {
        let alpha = shifts.cyclic(step);
        let h = solver
            .solve(alpha, &TallMatrix::new(w.clone())?)?
            .into_inner();
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { step: step + 1 });
        }
        w -= &h * (2.0 * alpha);
        blocks.push(h * (-2.0 * alpha).sqrt());
        shifts_used.push(alpha);
        let res = TallMatrix::new(w.clone())?.spectral_norm_sq();
        if !res.is_finite() {
            return Err(Error::Diverged { step: step + 1 });
        }
        residual_history.push(res);
        if res <= stop.residual_tol * rhs_norm_sq {
            break;
        }
    }
    let steps = blocks.len();
    let mut z = DMatrix::zeros(n, r * steps);
    for (k, block) in blocks.iter().enumerate() {
        z.view_mut((0, k * r), (n, r)).copy_from(block);
    }
    let theta_history = match shifts.interval() {
        Some(interval) => {
            let used = ShiftSet {
                shifts: shifts_used.clone(),
                source: shifts.source,
                interval: None,
            };
            theta_bound(&used, interval)
        }
        None => Vec::new(),
    };
    Ok(LowRankSolution {
        z: TallMatrix::new(z)?,
        w: TallMatrix::new(w)?,
        steps,
        shifts_used,
        theta_history,
        residual_history,
        rhs_norm_sq,
    })
}
