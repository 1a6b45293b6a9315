//! Dense symmetric linear algebra at desk scale.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::elliptic::EllipticData;
use crate::error::{Error, Result};

/// Symmetric `n × n` matrix, stored in full with exactly equal mirror entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, rejecting anything that is not exactly symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "{}x{} is not square",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::domain(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self(m))
    }

    /// Replaces `m` by `(m + mᵀ)/2`.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        let n = m.nrows();
        let mut m = m;
        for j in 0..n {
            for i in (j + 1)..n {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Self(m)
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `self + c·I`.
    pub fn add_scaled_identity(&self, c: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += c;
        }
        Self(m)
    }

    /// `self + diag(d)`.
    pub fn add_diagonal(&self, d: &[f64]) -> Result<Self> {
        if d.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "diagonal of length {} for n = {}",
                d.len(),
                self.dim()
            )));
        }
        let mut m = self.0.clone();
        for (i, di) in d.iter().enumerate() {
            m[(i, i)] += di;
        }
        Ok(Self(m))
    }

    /// Largest `|i - j|` with a non-zero entry.
    pub fn bandwidth(&self) -> usize {
        let n = self.dim();
        let mut bw = 0;
        for j in 0..n {
            for i in (j + bw + 1)..n {
                if self.0[(i, j)] != 0.0 {
                    bw = i - j;
                }
            }
        }
        bw
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Tall `n × c` matrix (noise factors, low-rank factors), `c ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TallMatrix(DMatrix<f64>);

impl TallMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 {
            return Err(Error::domain("tall matrix needs at least one column"));
        }
        Ok(Self(m))
    }

    pub fn from_column(v: &[f64]) -> Self {
        Self(DMatrix::from_column_slice(v.len(), 1, v))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `self · selfᵀ` as a symmetric matrix.
    pub fn outer(&self) -> SymMatrix {
        SymMatrix::symmetrize(&self.0 * self.0.transpose())
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> SymMatrix {
        SymMatrix::symmetrize(self.0.transpose() * &self.0)
    }

    /// `‖self‖₂²`, read off the `c × c` Gram matrix.
    pub fn spectral_norm_sq(&self) -> f64 {
        let eig = sym_eig(&self.gram());
        eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Eigendecomposition with ascending eigenvalues and orthonormal columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// `S · diag(d) · Sᵀ`.
    pub fn reconstruct_with(&self, d: &[f64]) -> SymMatrix {
        let mut scaled = self.vectors.clone();
        for (j, dj) in d.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*dj);
        }
        SymMatrix::symmetrize(scaled * self.vectors.transpose())
    }
}

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn sym_eig(m: &SymMatrix) -> SymEigen {
    let n = m.dim();
    if n == 0 {
        return SymEigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let eig = SymmetricEigen::new(m.0.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SymEigen { values, vectors }
}

const LANCZOS_TOL: f64 = 1e-12;
const LANCZOS_MAX_DIM: usize = 300;

/// `‖M‖₂ = max |λ_i(M)|` for symmetric `M`.
///
/// Lanczos with full reorthogonalization from a fixed start vector, stopped
/// once both extremal Ritz pairs have residual below `1e-12·|θ|`.
pub fn spectral_norm(m: &SymMatrix) -> f64 {
    let n = m.dim();
    if n == 0 {
        return 0.0;
    }
    let scale = m.0.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut q = DVector::from_fn(n, |i, _| 1.0 + 0.5 * (1.7 * i as f64 + 0.3).sin());
    q /= q.norm();
    let max_dim = n.min(LANCZOS_MAX_DIM);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_dim);
    let mut alphas = Vec::with_capacity(max_dim);
    let mut betas: Vec<f64> = Vec::with_capacity(max_dim);
    let mut estimate = 0.0;
    for step in 0..max_dim {
        let mut w = &m.0 * &q;
        let alpha = q.dot(&w);
        basis.push(q.clone());
        alphas.push(alpha);
        for v in &basis {
            let c = v.dot(&w);
            w.axpy(-c, v, 1.0);
        }
        // Second pass keeps the basis orthonormal to working precision.
        for v in &basis {
            let c = v.dot(&w);
            w.axpy(-c, v, 1.0);
        }
        let beta = w.norm();
        let k = step + 1;
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alphas[i];
            if i + 1 < k {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let ritz = SymmetricEigen::new(t);
        let (mut imax, mut imin) = (0, 0);
        for i in 0..k {
            if ritz.eigenvalues[i] > ritz.eigenvalues[imax] {
                imax = i;
            }
            if ritz.eigenvalues[i] < ritz.eigenvalues[imin] {
                imin = i;
            }
        }
        let hi = ritz.eigenvalues[imax];
        let lo = ritz.eigenvalues[imin];
        estimate = hi.abs().max(lo.abs());
        let res_hi = (beta * ritz.eigenvectors[(k - 1, imax)]).abs();
        let res_lo = (beta * ritz.eigenvectors[(k - 1, imin)]).abs();
        let converged = res_hi <= LANCZOS_TOL * estimate && res_lo <= LANCZOS_TOL * estimate;
        if converged || beta <= f64::EPSILON * scale || k == n {
            break;
        }
        betas.push(beta);
        q = w / beta;
    }
    estimate
}

/// Solver for `(A + αI) H = W` with symmetric negative definite `A` and
/// `α < 0`, working on the positive definite `-(A + αI)`.
///
/// Operators with bandwidth at most [`BANDED_LIMIT`] use a banded Cholesky
/// factorization; everything else is factored densely.
#[derive(Debug, Clone)]
pub struct ShiftedSolver<'a> {
    a: &'a SymMatrix,
    bandwidth: usize,
}

/// Largest bandwidth handled by the banded path.
pub const BANDED_LIMIT: usize = 5;

impl<'a> ShiftedSolver<'a> {
    pub fn new(a: &'a SymMatrix) -> Self {
        Self {
            a,
            bandwidth: a.bandwidth(),
        }
    }

    pub fn is_banded(&self) -> bool {
        self.bandwidth <= BANDED_LIMIT
    }

    pub fn solve(&self, alpha: f64, w: &TallMatrix) -> Result<TallMatrix> {
        let n = self.a.dim();
        if w.nrows() != n {
            return Err(Error::Dimension(format!(
                "right-hand side has {} rows, operator n = {n}",
                w.nrows()
            )));
        }
        let mut h = if self.is_banded() {
            let factor = BandCholesky::factor(self.a, alpha, self.bandwidth)
                .ok_or(Error::NotDefinite { shift: alpha })?;
            let mut h = w.0.clone();
            for mut col in h.column_iter_mut() {
                factor.solve_in_place(col.as_mut_slice());
            }
            h
        } else {
            let mut neg = -self.a.0.clone();
            for i in 0..n {
                neg[(i, i)] -= alpha;
            }
            let chol = neg.cholesky().ok_or(Error::NotDefinite { shift: alpha })?;
            chol.solve(&w.0)
        };
        // The factorization was of -(A + αI).
        h.neg_mut();
        Ok(TallMatrix(h))
    }
}

/// `H` with `(A + αI) H = W`.
pub fn shifted_solve(a: &SymMatrix, alpha: f64, w: &TallMatrix) -> Result<TallMatrix> {
    ShiftedSolver::new(a).solve(alpha, w)
}

/// Lower band Cholesky factor `L` of `-(A + αI) = L Lᵀ`, row-major band storage.
struct BandCholesky {
    n: usize,
    p: usize,
    /// `band[i * (p + 1) + d] = L[i][i - p + d]`.
    band: Vec<f64>,
}

impl BandCholesky {
    fn factor(a: &SymMatrix, alpha: f64, p: usize) -> Option<Self> {
        let n = a.dim();
        let width = p + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            let j0 = i.saturating_sub(p);
            for j in j0..=i {
                let mut s = -a.0[(i, j)];
                if i == j {
                    s -= alpha;
                }
                let k0 = j0.max(j.saturating_sub(p));
                for k in k0..j {
                    s -= band[i * width + (k + p - i)] * band[j * width + (k + p - j)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    band[i * width + p] = s.sqrt();
                } else {
                    band[i * width + (j + p - i)] = s / band[j * width + p];
                }
            }
        }
        Some(Self { n, p, band })
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let (n, p, width) = (self.n, self.p, self.p + 1);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(p)..i {
                s -= self.band[i * width + (k + p - i)] * x[k];
            }
            x[i] = s / self.band[i * width + p];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n.min(i + p + 1) {
                s -= self.band[k * width + (i + p - k)] * x[k];
            }
            x[i] = s / self.band[i * width + p];
        }
    }
}

/// Closed interval `[a, b]` with `a ≤ b < 0` containing `spec(A)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralInterval {
    pub a: f64,
    pub b: f64,
}

impl SpectralInterval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(b < 0.0) {
            return Err(Error::NotStable(format!(
                "interval endpoint b = {b} is not negative"
            )));
        }
        if !(a <= b) || !a.is_finite() {
            return Err(Error::domain(format!(
                "interval needs a <= b, got [{a}, {b}]"
            )));
        }
        Ok(Self { a, b })
    }

    /// `κ = |a| / |b|`.
    pub fn kappa(&self) -> f64 {
        self.a / self.b
    }

    /// Elliptic data with complementary modulus `k' = b/a`.
    pub fn elliptic(&self) -> EllipticData {
        EllipticData::from_complementary(self.b / self.a)
            .expect("valid interval gives k' in (0, 1]")
    }
}

pub fn spectral_interval(a: &SymMatrix) -> Result<SpectralInterval> {
    let eig = sym_eig(a);
    let n = eig.values.len();
    if n == 0 {
        return Err(Error::Dimension("empty operator".into()));
    }
    SpectralInterval::new(eig.values[0], eig.values[n - 1])
}

/// Stationary solution of `A V + V A + B Bᵀ = 0` for symmetric negative
/// definite `A`, solved in the eigenbasis of `A`.
pub fn dense_lyapunov(a: &SymMatrix, b: &TallMatrix) -> Result<SymMatrix> {
    if b.nrows() != a.dim() {
        return Err(Error::Dimension(format!(
            "B has {} rows, A is {}x{}",
            b.nrows(),
            a.dim(),
            a.dim()
        )));
    }
    let eig = sym_eig(a);
    let rotated = eig.vectors.transpose() * &b.0;
    dense_lyapunov_in_basis(&eig, &rotated * rotated.transpose())
}

/// Same as [`dense_lyapunov`] for an arbitrary symmetric right-hand side `Q`
/// (`A V + V A + Q = 0`).
pub fn dense_lyapunov_rhs(a: &SymMatrix, q: &SymMatrix) -> Result<SymMatrix> {
    if q.dim() != a.dim() {
        return Err(Error::Dimension(format!(
            "Q is {}x{}, A is {}x{}",
            q.dim(),
            q.dim(),
            a.dim(),
            a.dim()
        )));
    }
    let eig = sym_eig(a);
    let c = eig.vectors.transpose() * &q.0 * &eig.vectors;
    dense_lyapunov_in_basis(&eig, c)
}

fn dense_lyapunov_in_basis(eig: &SymEigen, mut c: DMatrix<f64>) -> Result<SymMatrix> {
    let n = eig.values.len();
    if let Some(&lmax) = eig.values.as_slice().last() {
        if lmax >= 0.0 {
            return Err(Error::NotStable(format!("eigenvalue {lmax:e} >= 0")));
        }
    }
    for j in 0..n {
        for i in 0..n {
            c[(i, j)] /= -(eig.values[i] + eig.values[j]);
        }
    }
    Ok(SymMatrix::symmetrize(
        &eig.vectors * c * eig.vectors.transpose(),
    ))
}

/// Spectrum of `Z Zᵀ` and its best rank-`r` factor.
#[derive(Debug, Clone)]
pub struct TruncatedFactor {
    /// Non-zero-capable singular values of `Z Zᵀ`, descending, length `cols(Z)`.
    pub singular_values: Vec<f64>,
    /// `F` with `F Fᵀ` the best rank-`r` approximation of `Z Zᵀ`.
    pub factor: TallMatrix,
}

/// Truncated SVD of `Z Zᵀ` computed through the `c × c` Gram matrix `Zᵀ Z`.
pub fn truncated_svd_of_factor(z: &TallMatrix, r: usize) -> Result<TruncatedFactor> {
    let c = z.ncols();
    if r == 0 || r > c {
        return Err(Error::domain(format!("rank {r} outside 1..={c}")));
    }
    let eig = sym_eig(&z.gram());
    let singular_values: Vec<f64> = eig.values.iter().rev().map(|v| v.max(0.0)).collect();
    let mut basis = DMatrix::zeros(c, r);
    for j in 0..r {
        basis.set_column(j, &eig.vectors.column(c - 1 - j));
    }
    Ok(TruncatedFactor {
        singular_values,
        factor: TallMatrix(&z.0 * basis),
    })
}
