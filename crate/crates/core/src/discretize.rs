//! Finite-dimensional realization of the 1D reaction-diffusion SPDE:
//! finite-difference Laplacian, Newton steady state, linearization and the
//! truncated Q-Wiener noise factor.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, SymMatrix, TallMatrix};

/// Closed catalog of scalar reaction terms `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `f(u) = -c u`.
    Linear { c: f64 },
    /// Bistable `f(u) = μ u - u³`.
    Cubic { mu: f64 },
    /// `f(u) = μ u (1 - u)`.
    Logistic { mu: f64 },
}

impl Nonlinearity {
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            Nonlinearity::Linear { c } => -c * u,
            Nonlinearity::Cubic { mu } => mu * u - u * u * u,
            Nonlinearity::Logistic { mu } => mu * u * (1.0 - u),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            Nonlinearity::Linear { c } => -c,
            Nonlinearity::Cubic { mu } => mu - 3.0 * u * u,
            Nonlinearity::Logistic { mu } => mu * (1.0 - 2.0 * u),
        }
    }

    /// `f(u + z) - f(u) - f'(u) z` in closed form, so that it is exactly zero
    /// for the linear entry.
    pub fn remainder(&self, u: f64, z: f64) -> f64 {
        match *self {
            Nonlinearity::Linear { .. } => 0.0,
            Nonlinearity::Cubic { .. } => -(3.0 * u + z) * z * z,
            Nonlinearity::Logistic { mu } => -mu * z * z,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Nonlinearity::Linear { .. })
    }

    /// `sup |f'(s)|` over `s ∈ [lo, hi]`.
    pub fn lipschitz_on(&self, lo: f64, hi: f64) -> f64 {
        let mut best = self.derivative(lo).abs().max(self.derivative(hi).abs());
        if let Nonlinearity::Cubic { .. } = self {
            if lo <= 0.0 && hi >= 0.0 {
                best = best.max(self.derivative(0.0).abs());
            }
        }
        best
    }

    /// Lipschitz constant of `z ↦ remainder(u, z)` for `|z| ≤ radius`.
    pub fn remainder_lipschitz(&self, u: f64, radius: f64) -> f64 {
        match *self {
            Nonlinearity::Linear { .. } => 0.0,
            Nonlinearity::Cubic { .. } => 3.0 * radius * (2.0 * u.abs() + radius),
            Nonlinearity::Logistic { mu } => 2.0 * mu.abs() * radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Dirichlet,
}

/// Problem data: domain, reaction term and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub domain_length: f64,
    pub nonlinearity: Nonlinearity,
    /// Noise level `υ`; the noise factor is scaled to `‖B‖₂ = υ`.
    pub noise_amplitude: f64,
    /// `γ` in `λ_{Q,i} = i^{-γ}`.
    pub q_decay: f64,
    /// Number `R` of retained Q-modes.
    pub noise_rank: usize,
    /// `C_G` bounding the noise remainder by `C_G υ²`.
    #[serde(default)]
    pub noise_remainder_const: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.domain_length > 0.0 && self.domain_length.is_finite()) {
            return Err(Error::domain(format!(
                "domain_length must be positive, got {}",
                self.domain_length
            )));
        }
        if !(self.noise_amplitude > 0.0 && self.noise_amplitude.is_finite()) {
            return Err(Error::domain(format!(
                "noise_amplitude must be positive, got {}",
                self.noise_amplitude
            )));
        }
        if !(self.q_decay >= 0.0 && self.q_decay.is_finite()) {
            return Err(Error::domain(format!(
                "q_decay must be non-negative, got {}",
                self.q_decay
            )));
        }
        if self.noise_rank == 0 {
            return Err(Error::domain("noise_rank must be at least 1"));
        }
        if !(self.noise_remainder_const >= 0.0) {
            return Err(Error::domain("noise_remainder_const must be non-negative"));
        }
        Ok(())
    }

    pub fn mesh_width(&self, n: usize) -> f64 {
        self.domain_length / (n as f64 + 1.0)
    }
}

/// Starting point for the Newton iteration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyGuess {
    #[default]
    Zero,
    /// `tanh(x/√2) · tanh((L - x)/√2)`, the bistable plateau profile.
    Hump,
    Values(Vec<f64>),
}

impl SteadyGuess {
    pub fn values(&self, n: usize, length: f64) -> Result<Vec<f64>> {
        let h = length / (n as f64 + 1.0);
        match self {
            SteadyGuess::Zero => Ok(vec![0.0; n]),
            SteadyGuess::Hump => Ok((1..=n)
                .map(|j| {
                    let x = j as f64 * h;
                    (x / 2f64.sqrt()).tanh() * ((length - x) / 2f64.sqrt()).tanh()
                })
                .collect()),
            SteadyGuess::Values(v) if v.len() == n => Ok(v.clone()),
            SteadyGuess::Values(v) => Err(Error::Dimension(format!(
                "guess has {} entries, n = {n}",
                v.len()
            ))),
        }
    }
}

/// Coordinates of a [`DiscretizedSystem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Values at the interior mesh nodes.
    Nodal,
    /// Coefficients of the Euclidean-orthonormal discrete sine modes.
    Modal,
}

/// Linearized, discretized system `dZ = 𝒜 Z dt + B dW`.
#[derive(Debug, Clone)]
pub struct DiscretizedSystem {
    pub h: f64,
    pub n: usize,
    pub laplacian: SymMatrix,
    pub steady_state: Vec<f64>,
    /// `𝒜 = A_h + diag(f'(u*))`, negative definite.
    pub linearization: SymMatrix,
    pub noise: TallMatrix,
    /// Realized `‖B‖₂`.
    pub upsilon: f64,
    pub nonlinearity: Nonlinearity,
    pub noise_remainder_const: f64,
    pub basis: Basis,
}

impl DiscretizedSystem {
    /// Finite differences with a Newton steady state.
    pub fn finite_difference(spec: &ProblemSpec, n: usize, guess: &SteadyGuess) -> Result<Self> {
        spec.validate()?;
        let laplacian = build_laplacian_1d(n, spec.domain_length)?;
        let start = guess.values(n, spec.domain_length)?;
        let steady_state = newton_steady_state(&laplacian, &spec.nonlinearity, &start)?;
        let linearization = linearize(&laplacian, &spec.nonlinearity, &steady_state)?;
        let noise = build_noise_factor(spec, n)?;
        Ok(Self {
            h: spec.mesh_width(n),
            n,
            laplacian,
            steady_state,
            linearization,
            upsilon: spec.noise_amplitude,
            noise,
            nonlinearity: spec.nonlinearity,
            noise_remainder_const: spec.noise_remainder_const,
            basis: Basis::Nodal,
        })
    }

    /// Spectral Galerkin in the first `n` sine modes around `u* = 0`, which is
    /// a steady state of every catalog entry. Coordinates are modal.
    pub fn spectral_galerkin(spec: &ProblemSpec, n: usize) -> Result<Self> {
        spec.validate()?;
        if n == 0 {
            return Err(Error::domain("need at least one mode"));
        }
        if spec.noise_rank > n {
            return Err(Error::domain(format!(
                "noise rank {} exceeds {n} modes",
                spec.noise_rank
            )));
        }
        let l = spec.domain_length;
        let diffusion: Vec<f64> = (1..=n).map(|i| -(i as f64 * PI / l).powi(2)).collect();
        let laplacian = SymMatrix::from_diagonal(&diffusion);
        let steady_state = vec![0.0; n];
        let linearization = linearize(&laplacian, &spec.nonlinearity, &steady_state)?;
        let mut b = DMatrix::zeros(n, spec.noise_rank);
        for i in 0..spec.noise_rank {
            b[(i, i)] = q_eigenvalue(i + 1, spec.q_decay).sqrt();
        }
        let noise = rescale_noise(b, spec.noise_amplitude)?;
        Ok(Self {
            h: spec.mesh_width(n),
            n,
            laplacian,
            steady_state,
            linearization,
            upsilon: spec.noise_amplitude,
            noise,
            nonlinearity: spec.nonlinearity,
            noise_remainder_const: spec.noise_remainder_const,
            basis: Basis::Modal,
        })
    }
}

/// `(1/h²) tridiag(1, -2, 1)` with `h = L/(N+1)` and homogeneous Dirichlet data.
pub fn build_laplacian_1d(n: usize, length: f64) -> Result<SymMatrix> {
    if n < 1 {
        return Err(Error::domain("need at least one interior node"));
    }
    if !(length > 0.0) {
        return Err(Error::domain(format!(
            "domain length must be positive, got {length}"
        )));
    }
    let h = length / (n as f64 + 1.0);
    let inv_h2 = 1.0 / (h * h);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = -2.0 * inv_h2;
        if i + 1 < n {
            m[(i, i + 1)] = inv_h2;
            m[(i + 1, i)] = inv_h2;
        }
    }
    SymMatrix::new(m)
}

/// Closed-form eigenvalues `-(4/h²) sin²(kπ/(2(N+1)))`, `k = 1..N`, of the
/// Dirichlet FD Laplacian (returned with `k = 1` first, i.e. least negative).
pub fn laplacian_eigenvalues(n: usize, length: f64) -> Vec<f64> {
    let h = length / (n as f64 + 1.0);
    (1..=n)
        .map(|k| -(4.0 / (h * h)) * (k as f64 * PI / (2.0 * (n as f64 + 1.0))).sin().powi(2))
        .collect()
}

const NEWTON_MAX_ITER: usize = 50;

/// Newton's method for `A_h u + f(u) = 0`.
///
/// Converges when `‖A_h u + f(u)‖₂ ≤ 1e-12 √N`; the root must also be
/// linearly stable.
pub fn newton_steady_state(a_h: &SymMatrix, f: &Nonlinearity, guess: &[f64]) -> Result<Vec<f64>> {
    let n = a_h.dim();
    if guess.len() != n {
        return Err(Error::Dimension(format!(
            "guess has {} entries, n = {n}",
            guess.len()
        )));
    }
    let tol = 1e-12 * (n as f64).sqrt();
    let mut u = DVector::from_column_slice(guess);
    let residual = |u: &DVector<f64>| -> DVector<f64> {
        let mut r = a_h.as_matrix() * u;
        for (ri, ui) in r.iter_mut().zip(u.iter()) {
            *ri += f.value(*ui);
        }
        r
    };
    let mut r = residual(&u);
    let mut iterations = 0;
    while r.norm() > tol {
        if iterations == NEWTON_MAX_ITER || !r.norm().is_finite() {
            return Err(Error::SteadyStateNotFound {
                iterations,
                residual: r.norm(),
            });
        }
        let mut jac = a_h.as_matrix().clone();
        for i in 0..n {
            jac[(i, i)] += f.derivative(u[i]);
        }
        let step = jac.lu().solve(&r).ok_or(Error::SteadyStateNotFound {
            iterations,
            residual: r.norm(),
        })?;
        u -= step;
        r = residual(&u);
        iterations += 1;
    }
    let u: Vec<f64> = u.iter().copied().collect();
    match linearize(a_h, f, &u) {
        Ok(_) => Ok(u),
        Err(Error::SpectralCondition { max_eigenvalue }) => {
            Err(Error::SteadyStateUnstable { max_eigenvalue })
        }
        Err(e) => Err(e),
    }
}

/// `𝒜 = A_h + diag(f'(u*))`, required to be negative definite.
pub fn linearize(a_h: &SymMatrix, f: &Nonlinearity, u_star: &[f64]) -> Result<SymMatrix> {
    let d: Vec<f64> = u_star.iter().map(|&u| f.derivative(u)).collect();
    let lin = a_h.add_diagonal(&d)?;
    let max_eigenvalue = *sym_eig(&lin)
        .values
        .as_slice()
        .last()
        .expect("non-empty operator");
    if max_eigenvalue >= 0.0 {
        return Err(Error::SpectralCondition { max_eigenvalue });
    }
    Ok(lin)
}

/// `λ_{Q,i} = i^{-γ}`.
pub fn q_eigenvalue(i: usize, gamma: f64) -> f64 {
    (i as f64).powf(-gamma)
}

/// First `m` discrete sine modes `√(2h/L) sin(iπ x_j / L)` on the `n`
/// interior nodes, orthonormal in the Euclidean inner product.
pub fn sine_modes(n: usize, m: usize) -> DMatrix<f64> {
    let scale = (2.0 / (n as f64 + 1.0)).sqrt();
    DMatrix::from_fn(n, m, |j, i| {
        scale * ((i + 1) as f64 * (j + 1) as f64 * PI / (n as f64 + 1.0)).sin()
    })
}

/// Truncated noise factor: column `i` is `√λ_{Q,i} ζ_i`, globally rescaled so
/// that `‖B‖₂ = υ`.
pub fn build_noise_factor(spec: &ProblemSpec, n: usize) -> Result<TallMatrix> {
    let r = spec.noise_rank;
    if r == 0 || r > n {
        return Err(Error::domain(format!("noise rank {r} must lie in 1..={n}")));
    }
    let mut b = sine_modes(n, r);
    for (i, mut col) in b.column_iter_mut().enumerate() {
        col *= q_eigenvalue(i + 1, spec.q_decay).sqrt();
    }
    rescale_noise(b, spec.noise_amplitude)
}

fn rescale_noise(b: DMatrix<f64>, upsilon: f64) -> Result<TallMatrix> {
    let b = TallMatrix::new(b)?;
    let norm = b.spectral_norm_sq().sqrt();
    TallMatrix::new(b.into_inner() * (upsilon / norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm;
    use approx::assert_relative_eq;

    fn heat(n_rank: usize, gamma: f64) -> ProblemSpec {
        ProblemSpec {
            domain_length: 1.0,
            nonlinearity: Nonlinearity::Linear { c: 0.0 },
            noise_amplitude: 0.3,
            q_decay: gamma,
            noise_rank: n_rank,
            noise_remainder_const: 0.0,
            boundary: Boundary::Dirichlet,
        }
    }

    #[test]
    fn laplacian_single_node() {
        let a = build_laplacian_1d(1, 1.0).unwrap();
        assert_eq!(a.as_matrix()[(0, 0)], -8.0);
        assert!(build_laplacian_1d(0, 1.0).is_err());
    }

    #[test]
    fn laplacian_spectrum_closed_form() {
        let a = build_laplacian_1d(3, 1.0).unwrap();
        let eig = sym_eig(&a);
        let mut exact = laplacian_eigenvalues(3, 1.0);
        exact.reverse();
        for (x, y) in eig.values.iter().zip(&exact) {
            assert!((x - y).abs() <= 1e-12 * y.abs());
        }
        let a = build_laplacian_1d(10, 2.5).unwrap();
        for i in 1..9 {
            let row_sum: f64 = a.as_matrix().row(i).iter().sum();
            assert!(row_sum.abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_converges_to_continuum_at_second_order() {
        let l = 2.0;
        for k in 1..=3 {
            let errs: Vec<(f64, f64)> = [50usize, 100, 200]
                .iter()
                .map(|&n| {
                    let lam = laplacian_eigenvalues(n, l)[k - 1];
                    (
                        l / (n as f64 + 1.0),
                        (lam + (k as f64 * PI / l).powi(2)).abs(),
                    )
                })
                .collect();
            let order = ((errs[0].1 / errs[2].1).ln()) / ((errs[0].0 / errs[2].0).ln());
            assert!(order >= 1.9, "mode {k}: order {order}");
        }
    }

    #[test]
    fn newton_trivial_roots() {
        let a = build_laplacian_1d(20, 1.0).unwrap();
        let u = newton_steady_state(&a, &Nonlinearity::Linear { c: 1.0 }, &[0.0; 20]).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));
        let u = newton_steady_state(&a, &Nonlinearity::Cubic { mu: 5.0 }, &[0.0; 20]).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn newton_finds_bistable_plateau() {
        let spec = ProblemSpec {
            domain_length: 20.0,
            nonlinearity: Nonlinearity::Cubic { mu: 1.0 },
            ..heat(1, 1.0)
        };
        let sys = DiscretizedSystem::finite_difference(&spec, 199, &SteadyGuess::Hump).unwrap();
        let u = DVector::from_column_slice(&sys.steady_state);
        let mut r = sys.laplacian.as_matrix() * &u;
        for i in 0..199 {
            r[i] += spec.nonlinearity.value(u[i]);
        }
        assert!(r.norm() <= 1e-10);
        assert!(u.amax() > 0.9);
        assert!(
            *sym_eig(&sys.linearization)
                .values
                .as_slice()
                .last()
                .unwrap()
                < 0.0
        );
    }

    #[test]
    fn unstable_zero_state_is_rejected() {
        let spec = ProblemSpec {
            domain_length: 20.0,
            nonlinearity: Nonlinearity::Cubic { mu: 1.0 },
            ..heat(1, 1.0)
        };
        let err = DiscretizedSystem::finite_difference(&spec, 99, &SteadyGuess::Zero).unwrap_err();
        assert!(matches!(err, Error::SteadyStateUnstable { .. }), "{err:?}");
        let a = build_laplacian_1d(99, 20.0).unwrap();
        let err = linearize(&a, &Nonlinearity::Cubic { mu: 1.0 }, &[0.0; 99]).unwrap_err();
        assert!(matches!(err, Error::SpectralCondition { .. }));
    }

    #[test]
    fn linearization_cases() {
        let a = build_laplacian_1d(8, 1.0).unwrap();
        let lin = linearize(&a, &Nonlinearity::Linear { c: 0.0 }, &[0.0; 8]).unwrap();
        assert_eq!(lin, a);
        let lin = linearize(&a, &Nonlinearity::Linear { c: 1.0 }, &[0.0; 8]).unwrap();
        assert_eq!(lin, a.add_scaled_identity(-1.0));
    }

    #[test]
    fn noise_factor_properties() {
        let b = build_noise_factor(&heat(1, 3.0), 30).unwrap();
        assert_eq!(b.ncols(), 1);
        assert_relative_eq!(b.spectral_norm_sq().sqrt(), 0.3, max_relative = 1e-12);

        let b = build_noise_factor(&heat(5, 0.0), 30).unwrap();
        let norms: Vec<f64> = b.as_matrix().column_iter().map(|c| c.norm()).collect();
        for w in norms.windows(2) {
            assert_relative_eq!(w[0], w[1], max_relative = 1e-12);
        }

        let b = build_noise_factor(&heat(10, 2.0), 100).unwrap();
        let svd = crate::linalg::truncated_svd_of_factor(&b, 1).unwrap();
        let s1 = svd.singular_values[0].sqrt();
        for (i, s) in svd.singular_values.iter().enumerate() {
            let ratio = s.sqrt() / s1 * (i + 1) as f64;
            assert!((ratio - 1.0).abs() <= 0.1, "i = {i}, ratio {ratio}");
        }
        assert!(build_noise_factor(&heat(31, 1.0), 30).is_err());
    }

    #[test]
    fn sine_modes_orthonormal() {
        for n in [7usize, 50, 128] {
            let z = sine_modes(n, n);
            let gram = z.transpose() * &z;
            assert!((gram - DMatrix::identity(n, n)).amax() <= 1e-12);
        }
    }

    #[test]
    fn spectral_galerkin_is_diagonal() {
        let sys = DiscretizedSystem::spectral_galerkin(&heat(3, 2.0), 10).unwrap();
        let lin = sys.linearization.as_matrix();
        assert_relative_eq!(lin[(0, 0)], -PI * PI, max_relative = 1e-14);
        assert_relative_eq!(
            sys.noise.spectral_norm_sq().sqrt(),
            0.3,
            max_relative = 1e-12
        );
    }

    proptest::proptest! {
        #[test]
        fn constructed_systems_satisfy_stability_and_noise_bound(
            n in 5usize..60, r in 1usize..5, gamma in 0.0f64..3.0, c in 0.0f64..5.0, ups in 1e-3f64..1.0
        ) {
            let spec = ProblemSpec {
                nonlinearity: Nonlinearity::Linear { c },
                noise_amplitude: ups,
                ..heat(r, gamma)
            };
            let sys = DiscretizedSystem::finite_difference(&spec, n, &SteadyGuess::Zero).unwrap();
            let top = *sym_eig(&sys.linearization).values.as_slice().last().unwrap();
            proptest::prop_assert!(top < 0.0);
            proptest::prop_assert!(spectral_norm(&sys.noise.outer()).sqrt() <= ups + 1e-12);
        }
    }
}
