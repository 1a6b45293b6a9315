//! Monte Carlo and ODE validators for the linearization and relaxation stages.
//!
//! Paths are simulated with Euler-Maruyama in fluctuation coordinates
//! `z = u - u*`, starting from `z(0) = 0`. The nonlinear drift is
//! `𝒜z + R^F(z)` with `R^F(z)_i = f(u*_i + z_i) - f(u*_i) - f'(u*_i) z_i`, so the
//! linear catalog entry produces bitwise the same paths as the OU process.
//!
//! Randomness: path `p` draws its Gaussian increments, in step order, from a
//! ChaCha8 stream keyed by `(seed, p)`. Paths are processed in fixed chunks
//! whose partial sums are combined pairwise in chunk order, so results do not
//! depend on the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{Basis, DiscretizedSystem, Nonlinearity};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, sym_eig, SymMatrix};

const CHUNK_PATHS: usize = 128;
const CHUNKS_PER_WAVE: usize = 8;
/// Upper limit on stored output times.
pub const MAX_OUTPUT_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_final: f64,
    pub dt: f64,
    pub samples: usize,
    pub seed: u64,
    /// Number of output intervals (at most [`MAX_OUTPUT_POINTS`]).
    #[serde(default = "default_output_points")]
    pub output_points: usize,
}

fn default_output_points() -> usize {
    MAX_OUTPUT_POINTS
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_final >= self.dt) {
            return Err(Error::domain(format!(
                "t_final = {} is shorter than dt = {}",
                self.t_final, self.dt
            )));
        }
        if self.samples < 2 {
            return Err(Error::domain("need at least two samples"));
        }
        if self.output_points == 0 || self.output_points > MAX_OUTPUT_POINTS {
            return Err(Error::domain(format!(
                "output_points must lie in 1..={MAX_OUTPUT_POINTS}"
            )));
        }
        Ok(())
    }

    /// `dt = 0.1 / max|λ(𝒜)|`, small enough that time-stepping bias stays
    /// well below the sampling error.
    pub fn default_dt(sys: &DiscretizedSystem) -> f64 {
        0.1 / spectral_norm(&sys.linearization)
    }

    fn steps(&self) -> usize {
        (self.t_final / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

/// Step indices at which the state is recorded: `0`, the final step, and up to
/// `intervals - 1` roughly equispaced steps in between.
pub fn output_indices(steps: usize, intervals: usize) -> Vec<usize> {
    let intervals = intervals.min(steps).max(1);
    let mut idx: Vec<usize> = (0..=intervals)
        .map(|k| (k * steps + intervals / 2) / intervals)
        .collect();
    idx.dedup();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    McNonlinear,
    McLinear,
    OdeExact,
}

/// Sampled first and second moment information per output time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStatistics {
    pub mean: Vec<DVector<f64>>,
    /// Estimate of `E‖z‖`.
    pub mean_norm: Vec<f64>,
    /// Estimate of `E‖z‖²`.
    pub second_norm: Vec<f64>,
    /// `max |z_i|` over all paths, components and output times.
    pub ball_radius: f64,
}

#[derive(Debug, Clone)]
pub struct CovarianceTrajectory {
    pub times: Vec<f64>,
    pub matrices: Vec<SymMatrix>,
    pub source: TrajectorySource,
    pub samples: usize,
    pub stats: Option<PathStatistics>,
}

impl CovarianceTrajectory {
    /// `(time, ‖C(t)‖₂, trace C(t))` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,cov_norm,cov_trace\n");
        for (t, m) in self.times.iter().zip(&self.matrices) {
            out.push_str(&format!(
                "{t:e},{:e},{:e}\n",
                spectral_norm(m),
                m.as_matrix().trace()
            ));
        }
        out
    }
}

/// Matrix-vector product specialized for banded operators.
struct BandOperator {
    n: usize,
    p: usize,
    /// Dense fallback when the bandwidth is large.
    dense: Option<DMatrix<f64>>,
    /// `band[i * (2p + 1) + (j + p - i)] = A[i][j]`.
    band: Vec<f64>,
}

impl BandOperator {
    fn new(a: &SymMatrix) -> Self {
        let n = a.dim();
        let p = a.bandwidth();
        if p > 5 {
            return Self {
                n,
                p,
                dense: Some(a.as_matrix().clone()),
                band: Vec::new(),
            };
        }
        let width = 2 * p + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for j in i.saturating_sub(p)..(i + p + 1).min(n) {
                band[i * width + (j + p - i)] = a.as_matrix()[(i, j)];
            }
        }
        Self {
            n,
            p,
            dense: None,
            band,
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        if let Some(d) = &self.dense {
            for (i, o) in out.iter_mut().enumerate() {
                *o = d.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
            }
            return;
        }
        let width = 2 * self.p + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.p);
            let hi = (i + self.p + 1).min(self.n);
            let row = &self.band[i * width..(i + 1) * width];
            let mut s = 0.0;
            for j in lo..hi {
                s += row[j + self.p - i] * x[j];
            }
            out[i] = s;
        }
    }
}

/// Running sums for one block of paths.
#[derive(Clone)]
struct Moments {
    sum: Vec<DVector<f64>>,
    outer: Vec<DMatrix<f64>>,
    norm: Vec<f64>,
    norm_sq: Vec<f64>,
    radius: f64,
}

impl Moments {
    fn zeros(points: usize, n: usize) -> Self {
        Self {
            sum: vec![DVector::zeros(n); points],
            outer: vec![DMatrix::zeros(n, n); points],
            norm: vec![0.0; points],
            norm_sq: vec![0.0; points],
            radius: 0.0,
        }
    }

    fn record(&mut self, k: usize, z: &[f64]) {
        let n = z.len();
        let zv = DVector::from_column_slice(z);
        self.sum[k] += &zv;
        // Upper triangle only; mirrored when the covariance is formed.
        let outer = &mut self.outer[k];
        for j in 0..n {
            let zj = z[j];
            for i in 0..=j {
                outer[(i, j)] += z[i] * zj;
            }
        }
        let sq: f64 = z.iter().map(|v| v * v).sum();
        self.norm[k] += sq.sqrt();
        self.norm_sq[k] += sq;
        self.radius = z.iter().fold(self.radius, |m, v| m.max(v.abs()));
    }

    fn merge(mut self, other: &Moments) -> Self {
        for k in 0..self.sum.len() {
            self.sum[k] += &other.sum[k];
            self.outer[k] += &other.outer[k];
            self.norm[k] += other.norm[k];
            self.norm_sq[k] += other.norm_sq[k];
        }
        self.radius = self.radius.max(other.radius);
        self
    }
}

fn pairwise_sum(mut parts: Vec<Moments>) -> Moments {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut iter = parts.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(a.merge(&b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().expect("at least one part")
}

struct Stepper<'a> {
    sys: &'a DiscretizedSystem,
    op: BandOperator,
    /// Drift remainder per tracked process; `None` is the OU process.
    tracks: Vec<Option<Nonlinearity>>,
    /// Row-major `n × R` copy of `B`.
    noise: Vec<f64>,
    rank: usize,
    dt: f64,
    steps: usize,
    record_at: Vec<usize>,
}

impl Stepper<'_> {
    fn advance(
        &self,
        z: &mut [f64],
        drift: &mut [f64],
        xi: &[f64],
        remainder: Option<Nonlinearity>,
    ) {
        self.op.apply(z, drift);
        if let Some(f) = remainder {
            for ((d, zi), ui) in drift.iter_mut().zip(z.iter()).zip(&self.sys.steady_state) {
                *d += f.remainder(*ui, *zi);
            }
        }
        for ((zi, d), row) in z
            .iter_mut()
            .zip(drift.iter())
            .zip(self.noise.chunks_exact(self.rank))
        {
            let noise: f64 = row.iter().zip(xi).map(|(b, x)| b * x).sum();
            *zi += self.dt * d + noise;
        }
    }

    /// Runs one path of every tracked process on a shared increment stream.
    fn run_path(&self, seed: u64, path: usize, acc: &mut [Moments]) -> Result<()> {
        let n = self.sys.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        let sqrt_dt = self.dt.sqrt();
        let mut states = vec![vec![0.0; n]; self.tracks.len()];
        let mut drift = vec![0.0; n];
        let mut xi = vec![0.0; self.rank];
        let mut next_record = 0;
        if self.record_at[0] == 0 {
            for (a, z) in acc.iter_mut().zip(&states) {
                a.record(0, z);
            }
            next_record = 1;
        }
        for step in 1..=self.steps {
            for x in xi.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *x = g * sqrt_dt;
            }
            for (z, f) in states.iter_mut().zip(&self.tracks) {
                self.advance(z, &mut drift, &xi, *f);
            }
            if next_record < self.record_at.len() && self.record_at[next_record] == step {
                for (a, z) in acc.iter_mut().zip(&states) {
                    if z.iter().any(|v| !v.is_finite()) {
                        return Err(Error::PathDiverged { path });
                    }
                    a.record(next_record, z);
                }
                next_record += 1;
            }
        }
        Ok(())
    }
}

fn simulate(
    sys: &DiscretizedSystem,
    cfg: &SimConfig,
    tracks: &[TrajectorySource],
) -> Result<Vec<CovarianceTrajectory>> {
    cfg.validate()?;
    let nonlinear = tracks.contains(&TrajectorySource::McNonlinear);
    if nonlinear && !sys.nonlinearity.is_linear() && sys.basis == Basis::Modal {
        return Err(Error::domain(
            "nonlinear simulation needs nodal coordinates",
        ));
    }
    let steps = cfg.steps();
    let dt = cfg.t_final / steps as f64;
    let max_abs = spectral_norm(&sys.linearization);
    if dt * max_abs >= 1.0 {
        return Err(Error::StepSize {
            dt,
            max_abs_eigenvalue: max_abs,
        });
    }
    let record_at = output_indices(steps, cfg.output_points);
    let b = sys.noise.as_matrix();
    let stepper = Stepper {
        sys,
        op: BandOperator::new(&sys.linearization),
        tracks: tracks
            .iter()
            .map(|t| {
                if *t == TrajectorySource::McNonlinear {
                    Some(sys.nonlinearity)
                } else {
                    None
                }
            })
            .collect(),
        noise: b.transpose().as_slice().to_vec(),
        rank: b.ncols(),
        dt,
        steps,
        record_at: record_at.clone(),
    };
    let points = record_at.len();
    let n = sys.n;
    let k = tracks.len();
    let chunks = cfg.samples.div_ceil(CHUNK_PATHS);
    let mut totals = vec![Moments::zeros(points, n); k];
    for wave in (0..chunks).collect::<Vec<_>>().chunks(CHUNKS_PER_WAVE) {
        let parts: Vec<Vec<Moments>> = wave
            .par_iter()
            .map(|&c| {
                let mut acc = vec![Moments::zeros(points, n); k];
                let end = ((c + 1) * CHUNK_PATHS).min(cfg.samples);
                for path in c * CHUNK_PATHS..end {
                    stepper.run_path(cfg.seed, path, &mut acc)?;
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        for (i, total) in totals.iter_mut().enumerate() {
            let wave_sum = pairwise_sum(parts.iter().map(|p| p[i].clone()).collect());
            *total = std::mem::replace(total, Moments::zeros(0, 0)).merge(&wave_sum);
        }
    }
    let times: Vec<f64> = record_at.iter().map(|&s| s as f64 * dt).collect();
    totals
        .into_iter()
        .zip(tracks)
        .map(|(total, &source)| finish(total, cfg.samples, n, times.clone(), source))
        .collect()
}

fn finish(
    total: Moments,
    samples: usize,
    n: usize,
    times: Vec<f64>,
    source: TrajectorySource,
) -> Result<CovarianceTrajectory> {
    let m = samples as f64;
    let points = times.len();
    let mut matrices = Vec::with_capacity(points);
    let mut mean = Vec::with_capacity(points);
    for k in 0..points {
        let mu = &total.sum[k] / m;
        let mut cov = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let c = (total.outer[k][(i, j)] - m * mu[i] * mu[j]) / (m - 1.0);
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        matrices.push(SymMatrix::new(cov)?);
        mean.push(mu);
    }
    let stats = PathStatistics {
        mean,
        mean_norm: total.norm.iter().map(|s| s / m).collect(),
        second_norm: total.norm_sq.iter().map(|s| s / m).collect(),
        ball_radius: total.radius,
    };
    Ok(CovarianceTrajectory {
        times,
        matrices,
        source,
        samples,
        stats: Some(stats),
    })
}

/// Nonlinear and OU sample covariances from one pass over shared increments.
pub fn simulate_coupled(
    sys: &DiscretizedSystem,
    cfg: &SimConfig,
) -> Result<(CovarianceTrajectory, CovarianceTrajectory)> {
    let mut out = simulate(
        sys,
        cfg,
        &[TrajectorySource::McNonlinear, TrajectorySource::McLinear],
    )?;
    let lin = out.pop().expect("two tracks");
    let nl = out.pop().expect("two tracks");
    Ok((nl, lin))
}

/// Sample covariances of the nonlinear fluctuation SODE `dz = F(z) dt + B dW`.
pub fn simulate_nonlinear(
    sys: &DiscretizedSystem,
    cfg: &SimConfig,
) -> Result<CovarianceTrajectory> {
    Ok(simulate(sys, cfg, &[TrajectorySource::McNonlinear])?.remove(0))
}

/// Sample covariances of the OU process `dZ = 𝒜Z dt + B dW`, using the same
/// increments as [`simulate_nonlinear`] for the same seed.
pub fn simulate_linear(sys: &DiscretizedSystem, cfg: &SimConfig) -> Result<CovarianceTrajectory> {
    Ok(simulate(sys, cfg, &[TrajectorySource::McLinear])?.remove(0))
}

/// Smallest RK4 step count that keeps `dt · 2 max|λ|` inside the stability
/// region of the covariance ODE.
pub fn ode_min_steps(sys: &DiscretizedSystem, t_final: f64) -> usize {
    let rate = 2.0 * spectral_norm(&sys.linearization);
    (t_final * rate / 2.0).ceil().max(1.0) as usize
}

/// Integrates `dV/dt = 𝒜V + V𝒜 + BBᵀ` from `V(0) = v0` with classical RK4.
pub fn ode_covariance(
    sys: &DiscretizedSystem,
    v0: &SymMatrix,
    t_final: f64,
    steps: usize,
    output_points: usize,
) -> Result<CovarianceTrajectory> {
    if v0.dim() != sys.n {
        return Err(Error::Dimension(format!(
            "V0 is {}x{}, system has n = {}",
            v0.dim(),
            v0.dim(),
            sys.n
        )));
    }
    if steps == 0 || !(t_final > 0.0) {
        return Err(Error::domain("need steps >= 1 and t_final > 0"));
    }
    let op = BandOperator::new(&sys.linearization);
    let q = sys.noise.outer().into_inner();
    let n = sys.n;
    let rhs = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let mut av = DMatrix::zeros(n, n);
        for (src, dst) in v.as_slice().chunks(n).zip(av.as_mut_slice().chunks_mut(n)) {
            op.apply(src, dst);
        }
        &av + av.transpose() + &q
    };
    let dt = t_final / steps as f64;
    let record_at = output_indices(steps, output_points.clamp(1, MAX_OUTPUT_POINTS));
    let mut v = v0.as_matrix().clone();
    let mut times = vec![0.0];
    let mut matrices = vec![v0.clone()];
    let mut next = 1;
    for step in 1..=steps {
        let k1 = rhs(&v);
        let k2 = rhs(&(&v + &k1 * (0.5 * dt)));
        let k3 = rhs(&(&v + &k2 * (0.5 * dt)));
        let k4 = rhs(&(&v + &k3 * dt));
        v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        v = SymMatrix::symmetrize(v).into_inner();
        if next < record_at.len() && record_at[next] == step {
            times.push(step as f64 * dt);
            matrices.push(SymMatrix::new(v.clone())?);
            next += 1;
        }
    }
    Ok(CovarianceTrajectory {
        times,
        matrices,
        source: TrajectorySource::OdeExact,
        samples: 0,
        stats: None,
    })
}

/// Constants entering the linearization error estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaIngredients {
    /// `sup |f'|` on the sampled state ball.
    pub c_f: f64,
    pub c_g: f64,
    pub norm_a: f64,
    /// Lipschitz constant of `R^F` on the sampled ball, the coefficient used in `η`.
    pub remainder_lipschitz: f64,
    pub ball_radius: f64,
    pub mean_norm: Vec<f64>,
    pub second_norm: Vec<f64>,
    pub upsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaEstimate {
    pub ingredients: EtaIngredients,
    pub times: Vec<f64>,
    /// `max_{ij} η_ij(t)`.
    pub eta_max: Vec<f64>,
    /// `η*(t) = ∫_0^t max_{ij} η_ij(s) ds` (trapezoid rule).
    pub eta_star: Vec<f64>,
}

/// Assembles `η_ij(t)` in the eigenbasis of `𝒜`:
/// `η_ij = L(|μ_i|/|λ_i| + |μ_j|/|λ_j|) E‖z‖ + L(1/|λ_i| + 1/|λ_j|) E‖z‖² + C_G υ²`
/// off the diagonal and the single-index version on it.
pub fn estimate_eta(sys: &DiscretizedSystem, traj: &CovarianceTrajectory) -> Result<EtaEstimate> {
    let stats = traj
        .stats
        .as_ref()
        .ok_or_else(|| Error::domain("trajectory carries no path statistics"))?;
    let eig = sym_eig(&sys.linearization);
    let lambda_abs: Vec<f64> = eig.values.iter().map(|l| l.abs()).collect();
    let radius = stats.ball_radius;
    let (lo, hi) = sys
        .steady_state
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &u| {
            (lo.min(u - radius), hi.max(u + radius))
        });
    let f = sys.nonlinearity;
    let c_f = f.lipschitz_on(lo, hi);
    let lip = sys
        .steady_state
        .iter()
        .map(|&u| f.remainder_lipschitz(u, radius))
        .fold(0.0, f64::max);
    let noise_term = sys.noise_remainder_const * sys.upsilon * sys.upsilon;
    let mut eta_max = Vec::with_capacity(traj.times.len());
    for k in 0..traj.times.len() {
        let mu = eig.vectors.transpose() * &stats.mean[k];
        let (m1, m2) = (stats.mean_norm[k], stats.second_norm[k]);
        let (mut top1, mut top2) = (0.0f64, 0.0f64);
        for i in 0..sys.n {
            let g = lip * (mu[i].abs() * m1 + m2) / lambda_abs[i];
            if g > top1 {
                top2 = top1;
                top1 = g;
            } else if g > top2 {
                top2 = g;
            }
        }
        let off_diagonal = if sys.n > 1 { top1 + top2 } else { top1 };
        eta_max.push(off_diagonal.max(top1) + noise_term);
    }
    let mut eta_star = vec![0.0; traj.times.len()];
    for k in 1..traj.times.len() {
        let dt = traj.times[k] - traj.times[k - 1];
        eta_star[k] = eta_star[k - 1] + 0.5 * dt * (eta_max[k] + eta_max[k - 1]);
    }
    Ok(EtaEstimate {
        ingredients: EtaIngredients {
            c_f,
            c_g: sys.noise_remainder_const,
            norm_a: spectral_norm(&sys.linearization),
            remainder_lipschitz: lip,
            ball_radius: radius,
            mean_norm: stats.mean_norm.clone(),
            second_norm: stats.second_norm.clone(),
            upsilon: sys.upsilon,
        },
        times: traj.times.clone(),
        eta_max,
        eta_star,
    })
}

/// One candidate exponential envelope for the linearization gap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapEnvelope {
    pub name: &'static str,
    /// Exponent `c` in `e^{-c t}`.
    pub rate: f64,
    /// Smallest `C_l` with `gap ≤ C_l [‖ΔCov(0)‖ + η*(t)] e^{-ct}` on the grid;
    /// `None` when no finite constant works.
    pub c_l: Option<f64>,
    /// `C_l [‖ΔCov(0)‖ + η*(t)] e^{-ct}` (with `C_l` replaced by 0 when absent).
    pub bound: Vec<f64>,
}

impl GapEnvelope {
    pub fn satisfied(&self) -> bool {
        self.c_l.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearizationGap {
    pub times: Vec<f64>,
    /// `‖Cov(z(t)) - Cov(Z(t))‖₂`.
    pub gap: Vec<f64>,
    pub eta: EtaEstimate,
    /// `e^{-t min|λ|}`, as stated for the full covariance.
    pub slow_envelope: GapEnvelope,
    /// `e^{-2t min|λ|}`, the entrywise Gronwall factor `e^{(λ_i + λ_j)t}` at its worst.
    pub fast_envelope: GapEnvelope,
}

impl LinearizationGap {
    pub fn sup_gap(&self) -> f64 {
        self.gap.iter().copied().fold(0.0, f64::max)
    }

    /// `(time, gap, eta_star, bound_slow, bound_fast)` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,gap,eta_star,bound_slow,bound_fast\n");
        for k in 0..self.times.len() {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e}\n",
                self.times[k],
                self.gap[k],
                self.eta.eta_star[k],
                self.slow_envelope.bound[k],
                self.fast_envelope.bound[k]
            ));
        }
        out
    }
}

fn fit_envelope(
    name: &'static str,
    rate: f64,
    times: &[f64],
    gap: &[f64],
    base: &[f64],
) -> GapEnvelope {
    let shape: Vec<f64> = times
        .iter()
        .zip(base)
        .map(|(t, b)| b * (-rate * t).exp())
        .collect();
    let mut c_l = Some(0.0f64);
    for (g, s) in gap.iter().zip(&shape) {
        if *g == 0.0 {
            continue;
        }
        if *s > 0.0 {
            c_l = c_l.map(|c| c.max(g / s));
        } else {
            c_l = None;
            break;
        }
    }
    let c = c_l.unwrap_or(0.0);
    GapEnvelope {
        name,
        rate,
        c_l,
        bound: shape.iter().map(|s| c * s).collect(),
    }
}

/// Spectral-norm gap between coupled nonlinear and linear covariance
/// trajectories, with both candidate envelopes fitted a posteriori.
pub fn linearization_gap(
    sys: &DiscretizedSystem,
    nl: &CovarianceTrajectory,
    lin: &CovarianceTrajectory,
) -> Result<LinearizationGap> {
    if nl.times != lin.times {
        return Err(Error::domain("trajectories are on different time grids"));
    }
    let gap: Vec<f64> = nl
        .matrices
        .iter()
        .zip(&lin.matrices)
        .map(|(a, b)| spectral_norm(&SymMatrix::symmetrize(a.as_matrix() - b.as_matrix())))
        .collect();
    let eta = estimate_eta(sys, nl)?;
    let initial = gap[0];
    let base: Vec<f64> = eta.eta_star.iter().map(|e| initial + e).collect();
    let rate = crate::bounds::decay_rate_spectral(&sys.linearization)?;
    let slow_envelope = fit_envelope("slow", rate, &nl.times, &gap, &base);
    let fast_envelope = fit_envelope("fast", 2.0 * rate, &nl.times, &gap, &base);
    Ok(LinearizationGap {
        times: nl.times.clone(),
        gap,
        eta,
        slow_envelope,
        fast_envelope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{Boundary, ProblemSpec, SteadyGuess};
    use crate::linalg::{dense_lyapunov, TallMatrix};

    fn scalar_system(a: f64, sigma: f64, f: Nonlinearity) -> DiscretizedSystem {
        DiscretizedSystem {
            h: 1.0,
            n: 1,
            laplacian: SymMatrix::from_diagonal(&[a]),
            steady_state: vec![0.0],
            linearization: SymMatrix::from_diagonal(&[a]),
            noise: TallMatrix::from_column(&[sigma]),
            upsilon: sigma,
            nonlinearity: f,
            noise_remainder_const: 0.0,
            basis: Basis::Nodal,
        }
    }

    fn small_fd(f: Nonlinearity, upsilon: f64) -> DiscretizedSystem {
        let spec = ProblemSpec {
            domain_length: 10.0,
            nonlinearity: f,
            noise_amplitude: upsilon,
            q_decay: 2.0,
            noise_rank: 3,
            noise_remainder_const: 0.0,
            boundary: Boundary::Dirichlet,
        };
        DiscretizedSystem::finite_difference(&spec, 12, &SteadyGuess::Zero).unwrap()
    }

    fn cfg(t: f64, dt: f64, m: usize) -> SimConfig {
        SimConfig {
            t_final: t,
            dt,
            samples: m,
            seed: 11,
            output_points: 20,
        }
    }

    #[test]
    fn output_grid_contains_ends() {
        assert_eq!(output_indices(10, 200), (0..=10).collect::<Vec<_>>());
        let idx = output_indices(1000, 4);
        assert_eq!(idx, vec![0, 250, 500, 750, 1000]);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1.0, 0.0, 10).validate().is_err());
        assert!(cfg(0.01, 0.1, 10).validate().is_err());
        assert!(cfg(1.0, 0.1, 1).validate().is_err());
        assert!(cfg(1.0, 0.1, 2).validate().is_ok());
    }

    #[test]
    fn zero_noise_gives_zero_covariance() {
        let mut sys = scalar_system(-1.0, 0.0, Nonlinearity::Cubic { mu: -1.0 });
        sys.noise = TallMatrix::from_column(&[0.0]);
        let traj = simulate_nonlinear(&sys, &cfg(1.0, 0.01, 50)).unwrap();
        assert!(traj.matrices.iter().all(|m| m.as_matrix()[(0, 0)] == 0.0));
        let traj = simulate_linear(&sys, &cfg(1.0, 0.01, 50)).unwrap();
        assert!(traj.matrices.iter().all(|m| m.as_matrix()[(0, 0)] == 0.0));
    }

    #[test]
    fn scalar_ou_variance() {
        let sigma = 0.7;
        let sys = scalar_system(-1.0, sigma, Nonlinearity::Linear { c: 1.0 });
        let m = 4000;
        let traj = simulate_linear(&sys, &cfg(5.0, 0.005, m)).unwrap();
        let exact = sigma * sigma * (1.0 - (-10.0f64).exp()) / 2.0;
        let got = traj.matrices.last().unwrap().as_matrix()[(0, 0)];
        assert!(
            (got - exact).abs() <= 5.0 * sigma * sigma / (m as f64).sqrt(),
            "{got} vs {exact}"
        );
    }

    #[test]
    fn step_size_guard() {
        let sys = scalar_system(-100.0, 1.0, Nonlinearity::Linear { c: 0.0 });
        let err = simulate_linear(&sys, &cfg(1.0, 0.02, 10)).unwrap_err();
        assert!(matches!(err, Error::StepSize { .. }));
    }

    #[test]
    fn linear_catalog_paths_are_bitwise_coupled() {
        let sys = small_fd(Nonlinearity::Linear { c: 0.5 }, 0.2);
        let c = SimConfig {
            dt: SimConfig::default_dt(&sys),
            ..cfg(0.5, 1.0, 300)
        };
        let nl = simulate_nonlinear(&sys, &c).unwrap();
        let lin = simulate_linear(&sys, &c).unwrap();
        for (a, b) in nl.matrices.iter().zip(&lin.matrices) {
            assert_eq!(a, b);
        }
        let gap = linearization_gap(&sys, &nl, &lin).unwrap();
        assert!(gap.gap.iter().all(|&g| g == 0.0));
        assert!(gap.eta.eta_star.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn coupled_pass_matches_separate_runs() {
        let sys = small_fd(Nonlinearity::Cubic { mu: -1.0 }, 0.3);
        let c = SimConfig {
            dt: SimConfig::default_dt(&sys),
            ..cfg(0.3, 1.0, 300)
        };
        let (nl, lin) = simulate_coupled(&sys, &c).unwrap();
        assert_eq!(nl.matrices, simulate_nonlinear(&sys, &c).unwrap().matrices);
        assert_eq!(lin.matrices, simulate_linear(&sys, &c).unwrap().matrices);
        assert_eq!(nl.source, TrajectorySource::McNonlinear);
    }

    #[test]
    fn covariance_is_symmetric_and_reproducible() {
        let sys = small_fd(Nonlinearity::Cubic { mu: -1.0 }, 0.3);
        let c = SimConfig {
            dt: SimConfig::default_dt(&sys),
            ..cfg(0.3, 1.0, 400)
        };
        let a = simulate_nonlinear(&sys, &c).unwrap();
        let b = simulate_nonlinear(&sys, &c).unwrap();
        for (x, y) in a.matrices.iter().zip(&b.matrices) {
            assert_eq!(x, y);
            assert_eq!(x.as_matrix(), &x.as_matrix().transpose());
        }
    }

    #[test]
    fn ode_scalar_and_steady_state() {
        let sigma = 0.5;
        let sys = scalar_system(-1.0, sigma, Nonlinearity::Linear { c: 1.0 });
        let traj = ode_covariance(&sys, &SymMatrix::zeros(1), 1.0, 100, 10).unwrap();
        let exact = sigma * sigma * (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((traj.matrices.last().unwrap().as_matrix()[(0, 0)] - exact).abs() <= 1e-8);
        assert!((traj.times.last().unwrap() - 1.0).abs() < 1e-15);

        let sys = small_fd(Nonlinearity::Linear { c: 0.0 }, 0.3);
        let v_star = dense_lyapunov(&sys.linearization, &sys.noise).unwrap();
        let steps = ode_min_steps(&sys, 1.0);
        let traj = ode_covariance(&sys, &v_star, 1.0, steps, 5).unwrap();
        for m in &traj.matrices {
            assert!(
                (m.as_matrix() - v_star.as_matrix()).amax() <= 1e-12 * v_star.as_matrix().amax()
            );
        }
    }

    #[test]
    fn eta_requires_statistics() {
        let sys = small_fd(Nonlinearity::Linear { c: 0.0 }, 0.3);
        let traj = ode_covariance(&sys, &SymMatrix::zeros(12), 0.1, 10, 5).unwrap();
        assert!(estimate_eta(&sys, &traj).is_err());
    }

    #[test]
    fn eta_noise_term_for_linear_drift() {
        let mut sys = small_fd(Nonlinearity::Linear { c: 0.0 }, 0.3);
        sys.noise_remainder_const = 2.0;
        let c = SimConfig {
            dt: SimConfig::default_dt(&sys),
            ..cfg(0.2, 1.0, 50)
        };
        let traj = simulate_nonlinear(&sys, &c).unwrap();
        let eta = estimate_eta(&sys, &traj).unwrap();
        assert!(eta.eta_max.iter().all(|&e| (e - 2.0 * 0.09).abs() < 1e-15));
        assert!((eta.eta_star.last().unwrap() - 0.18 * traj.times.last().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn eta_grows_with_noise() {
        let sys_small = small_fd(Nonlinearity::Cubic { mu: -1.0 }, 1e-2);
        let sys_large = small_fd(Nonlinearity::Cubic { mu: -1.0 }, 1e-1);
        let c = SimConfig {
            dt: SimConfig::default_dt(&sys_small),
            ..cfg(1.0, 1.0, 256)
        };
        let e_small =
            estimate_eta(&sys_small, &simulate_nonlinear(&sys_small, &c).unwrap()).unwrap();
        let e_large =
            estimate_eta(&sys_large, &simulate_nonlinear(&sys_large, &c).unwrap()).unwrap();
        let (s, l) = (
            e_small.eta_star.last().unwrap(),
            e_large.eta_star.last().unwrap(),
        );
        assert!(l >= &(10.0 * s), "{l} vs {s}");
    }

    #[test]
    fn gap_requires_matching_grids() {
        let sys = small_fd(Nonlinearity::Cubic { mu: -1.0 }, 0.1);
        let dt = SimConfig::default_dt(&sys);
        let a = simulate_nonlinear(
            &sys,
            &SimConfig {
                dt,
                ..cfg(0.2, 1.0, 10)
            },
        )
        .unwrap();
        let b = simulate_linear(
            &sys,
            &SimConfig {
                dt,
                ..cfg(0.3, 1.0, 10)
            },
        )
        .unwrap();
        assert!(linearization_gap(&sys, &a, &b).is_err());
    }
}
