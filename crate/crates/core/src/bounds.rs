//! Singular value decay bounds for the stationary covariance and decay rates
//! of the covariance ODE.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    dense_lyapunov, dense_lyapunov_rhs, spectral_interval, spectral_norm, sym_eig,
    SpectralInterval, SymMatrix, TallMatrix,
};

/// Relative floor below which computed singular values are indistinguishable
/// from round-off in the dense eigenbasis solve.
pub const SIGMA_ROUNDOFF_FLOOR: f64 = 1e-12;

/// Largest dimension accepted by [`verify_decay`].
pub const DESK_SCALE_LIMIT: usize = 1000;

/// `(Π_{i=0}^{p-1} (κ^{(2i+1)/(2p)} - 1)/(κ^{(2i+1)/(2p)} + 1))²`, a bound on
/// `σ_{Rp+1}(V_*)/σ_1(V_*)`.
pub fn penzl_bound(kappa: f64, p: usize) -> Result<f64> {
    if !(kappa >= 1.0) {
        return Err(Error::domain(format!(
            "condition number must be >= 1, got {kappa}"
        )));
    }
    if p == 0 {
        return Err(Error::domain("index p must be at least 1"));
    }
    let product: f64 = (0..p)
        .map(|i| {
            let t = kappa.powf((2 * i + 1) as f64 / (2 * p) as f64);
            (t - 1.0) / (t + 1.0)
        })
        .product();
    Ok(product * product)
}

/// `((1 - √k'_r)/(1 + √k'_r))²` with `k' = b/a`, a bound on
/// `σ_{Rr+1}(V_*)/σ_1(V_*)`. Extended by `0` to `a = b`.
pub fn sabino_bound(interval: SpectralInterval, r: usize) -> Result<f64> {
    let interval = SpectralInterval::new(interval.a, interval.b)?;
    if r == 0 {
        return Err(Error::domain("index r must be at least 1"));
    }
    Ok(interval.elliptic().contraction(r as u32).powi(2))
}

/// A singular value exceeding its bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayViolation {
    pub bound: &'static str,
    pub stride: usize,
    pub sigma_ratio: f64,
    pub bound_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    /// `σ_i(V_*)`, descending.
    pub singular_values: Vec<f64>,
    /// Penzl bound at `p = r`, `r = 1, 2, …` while `Rr + 1 ≤ N`.
    pub penzl: Vec<f64>,
    pub sabino: Vec<f64>,
    pub noise_rank: usize,
    pub interval: SpectralInterval,
    pub violations: Vec<DecayViolation>,
}

impl DecayReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    /// `(index, sigma_i, sigma_ratio, penzl, sabino)`; bound columns are
    /// filled on the rows `i = Rr + 1` they constrain.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,sigma_i,sigma_ratio,penzl,sabino\n");
        let s1 = self.singular_values.first().copied().unwrap_or(0.0);
        for (k, s) in self.singular_values.iter().enumerate() {
            let index = k + 1;
            let ratio = if s1 > 0.0 { s / s1 } else { 0.0 };
            let (penzl, sabino) = if index > 1 && (index - 1) % self.noise_rank == 0 {
                let r = (index - 1) / self.noise_rank;
                (
                    format!("{:e}", self.penzl[r - 1]),
                    format!("{:e}", self.sabino[r - 1]),
                )
            } else {
                (String::new(), String::new())
            };
            out.push_str(&format!("{index},{s:e},{ratio:e},{penzl},{sabino}\n"));
        }
        out
    }
}

/// Solves for `V_*` densely and checks both decay bounds at every admissible
/// stride `r` (`Rr + 1 ≤ N`).
pub fn verify_decay(a: &SymMatrix, b: &TallMatrix) -> Result<DecayReport> {
    let n = a.dim();
    if n > DESK_SCALE_LIMIT {
        return Err(Error::domain(format!(
            "dense decay verification is limited to N <= {DESK_SCALE_LIMIT}, got {n}"
        )));
    }
    let interval = spectral_interval(a)?;
    let v = dense_lyapunov(a, b)?;
    let mut singular_values: Vec<f64> = sym_eig(&v).values.iter().map(|x| x.abs()).collect();
    singular_values.sort_by(|x, y| y.total_cmp(x));
    let big_r = b.ncols();
    let strides = (n - 1) / big_r;
    let kappa = interval.kappa();
    let mut penzl = Vec::with_capacity(strides);
    let mut sabino = Vec::with_capacity(strides);
    let mut violations = Vec::new();
    let s1 = singular_values[0];
    for r in 1..=strides {
        let p = penzl_bound(kappa, r)?;
        let s = sabino_bound(interval, r)?;
        let ratio = if s1 > 0.0 {
            singular_values[big_r * r] / s1
        } else {
            0.0
        };
        for (name, value) in [("penzl", p), ("sabino", s)] {
            if ratio > value + SIGMA_ROUNDOFF_FLOOR {
                violations.push(DecayViolation {
                    bound: name,
                    stride: r,
                    sigma_ratio: ratio,
                    bound_value: value,
                });
            }
        }
        penzl.push(p);
        sabino.push(s);
    }
    Ok(DecayReport {
        singular_values,
        penzl,
        sabino,
        noise_rank: big_r,
        interval,
        violations,
    })
}

/// `min_i |λ_i(𝒜)|`, the relaxation exponent of the covariance ODE.
pub fn decay_rate_spectral(a: &SymMatrix) -> Result<f64> {
    Ok(spectral_interval(a)?.b.abs())
}

/// `2 / ‖H‖₂` where `𝒜H + H𝒜 + 2I = 0`.
pub fn decay_rate_h(a: &SymMatrix) -> Result<f64> {
    let rhs = SymMatrix::identity(a.dim()).add_scaled_identity(1.0);
    let h = dense_lyapunov_rhs(a, &rhs)?;
    Ok(2.0 / spectral_norm(&h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{build_laplacian_1d, laplacian_eigenvalues};
    use approx::assert_relative_eq;

    #[test]
    fn penzl_values() {
        assert_eq!(penzl_bound(1.0, 3).unwrap(), 0.0);
        assert_relative_eq!(
            penzl_bound(100.0, 1).unwrap(),
            (9.0f64 / 11.0).powi(2),
            max_relative = 1e-14
        );
        assert!(penzl_bound(100.0, 4).unwrap() < penzl_bound(100.0, 2).unwrap());
        assert!(penzl_bound(0.5, 1).is_err());
    }

    #[test]
    fn sabino_values() {
        let degenerate = SpectralInterval::new(-2.0, -2.0).unwrap();
        assert_eq!(sabino_bound(degenerate, 1).unwrap(), 0.0);
        let huge = SpectralInterval::new(-1e8, -1.0).unwrap();
        assert!(sabino_bound(huge, 1).unwrap() >= 0.9);
        let iv = SpectralInterval::new(-100.0, -1.0).unwrap();
        for r in 1..=8 {
            let s = sabino_bound(iv, r).unwrap();
            let p = penzl_bound(100.0, r).unwrap();
            assert!(s <= p * (1.0 + 1e-12), "r = {r}: {s} > {p}");
        }
    }

    #[test]
    fn bounds_non_increasing() {
        let iv = SpectralInterval::new(-500.0, -1.0).unwrap();
        for r in 1..15 {
            assert!(sabino_bound(iv, r + 1).unwrap() <= sabino_bound(iv, r).unwrap());
            assert!(penzl_bound(500.0, r + 1).unwrap() <= penzl_bound(500.0, r).unwrap());
        }
    }

    #[test]
    fn rank_one_identity_case() {
        let a = SymMatrix::identity(6).add_scaled_identity(-2.0);
        let report = verify_decay(
            &a,
            &TallMatrix::from_column(&[1.0, 2.0, 0.0, 1.0, 0.0, 3.0]),
        )
        .unwrap();
        assert!(report.holds());
        assert!(report.singular_values[1] <= 1e-14 * report.singular_values[0]);
    }

    #[test]
    fn laplacian_decay_holds() {
        let a = build_laplacian_1d(100, 1.0).unwrap();
        let report = verify_decay(&a, &TallMatrix::from_column(&vec![1.0; 100])).unwrap();
        assert!(report.holds(), "{:?}", report.violations);
        assert_eq!(report.penzl.len(), 99);
    }

    #[test]
    fn csv_uses_rank_stride() {
        let a = build_laplacian_1d(10, 1.0).unwrap();
        let b = TallMatrix::new(nalgebra::DMatrix::from_fn(10, 3, |i, j| {
            ((i + j) as f64).sin()
        }))
        .unwrap();
        let csv = verify_decay(&a, &b).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "index,sigma_i,sigma_ratio,penzl,sabino");
        assert!(lines[2].ends_with(",,"));
        assert!(!lines[4].ends_with(",,"));
        assert!(!lines[7].ends_with(",,"));
    }

    #[test]
    fn guard_rejects_large_systems() {
        let a = SymMatrix::identity(1001).add_scaled_identity(-2.0);
        assert!(verify_decay(&a, &TallMatrix::from_column(&vec![1.0; 1001])).is_err());
    }

    #[test]
    fn decay_rates() {
        let d = SymMatrix::from_diagonal(&[-4.0, -1.0]);
        assert_relative_eq!(decay_rate_spectral(&d).unwrap(), 1.0);
        assert_relative_eq!(decay_rate_h(&d).unwrap(), 2.0, max_relative = 1e-12);
        let c = SymMatrix::identity(3).add_scaled_identity(-3.5);
        assert_relative_eq!(decay_rate_spectral(&c).unwrap(), 2.5, max_relative = 1e-15);
        assert_relative_eq!(decay_rate_h(&c).unwrap(), 5.0, max_relative = 1e-12);
        let lap = build_laplacian_1d(50, 1.0).unwrap();
        let lam1 = laplacian_eigenvalues(50, 1.0)[0].abs();
        assert_relative_eq!(
            decay_rate_spectral(&lap).unwrap(),
            lam1,
            max_relative = 1e-10
        );
        assert_relative_eq!(decay_rate_h(&lap).unwrap(), 2.0 * lam1, max_relative = 1e-9);
    }
}
