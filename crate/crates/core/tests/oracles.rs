//! Cross-checks of library routines against independent reference computations.

use std::f64::consts::FRAC_PI_2;

use lyapcov::discretize::build_laplacian_1d;
use lyapcov::elliptic::{complete_k, incomplete_s, jacobi_dn, EllipticData};
use lyapcov::linalg::{
    dense_lyapunov, spectral_interval, spectral_norm, sym_eig, SymMatrix, TallMatrix,
};
use lyapcov::lradi::{lr_adi_run, rational_radius, wachspress_shifts, StopCriteria};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cyclic Jacobi rotations; returns eigenvalues in ascending order.
fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    d.sort_by(f64::total_cmp);
    d
}

fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    (&m + m.transpose()) * 0.5
}

/// Composite Simpson rule with `2m` panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / (2 * m) as f64;
    let mut s = f(a) + f(b);
    for i in 1..2 * m {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Solves `(I ⊗ A + A ⊗ I) vec X = -vec(C)` directly.
fn kronecker_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let big = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -DMatrix::from_column_slice(n * n, 1, c.as_slice());
    let x = big.lu().solve(&rhs).expect("nonsingular");
    DMatrix::from_column_slice(n, n, x.as_slice())
}

#[test]
fn sym_eig_agrees_with_jacobi_rotations() {
    for (n, seed) in [(3, 1), (8, 2), (15, 3)] {
        let m = random_symmetric(n, seed);
        let expect = jacobi_eigenvalues(m.clone());
        let got = sym_eig(&SymMatrix::new(m).unwrap()).values;
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() <= 1e-12, "n = {n}: {g} vs {e}");
        }
    }
}

#[test]
fn spectral_norm_agrees_with_jacobi_rotations() {
    let m = random_symmetric(20, 9);
    let ev = jacobi_eigenvalues(m.clone());
    let expect = ev[0].abs().max(ev[ev.len() - 1].abs());
    let got = spectral_norm(&SymMatrix::new(m).unwrap());
    assert!((got - expect).abs() <= 1e-10 * expect);
}

#[test]
fn complete_integral_matches_trapezoid_on_periodic_form() {
    // The θ-form integrand is smooth and periodic, so the trapezoid rule converges geometrically.
    for k in [0.0, 0.3, 0.7, 0.95] {
        let m = 400;
        let h = FRAC_PI_2 / m as f64;
        let f = |t: f64| 1.0 / (1.0 - (k * t.sin()).powi(2)).sqrt();
        let trap =
            h * ((1..m).map(|i| f(i as f64 * h)).sum::<f64>() + 0.5 * (f(0.0) + f(FRAC_PI_2)));
        let got = complete_k(k).unwrap();
        assert!(
            (got - trap).abs() <= 1e-13 * trap,
            "k = {k}: {got} vs {trap}"
        );
    }
}

#[test]
fn incomplete_integral_matches_simpson() {
    for k in [0.2, 0.8] {
        for x in [0.1, 0.5, 0.9] {
            let phi = f64::asin(x);
            let oracle = simpson(
                |t| 1.0 / (1.0 - (k * t.sin()).powi(2)).sqrt(),
                0.0,
                phi,
                2000,
            );
            let got = incomplete_s(x, k).unwrap();
            assert!((got - oracle).abs() <= 1e-12, "k = {k}, x = {x}");
        }
    }
}

#[test]
fn dn_inverts_the_amplitude_integral() {
    // u = F(φ) ⇒ dn(u) = sqrt(1 - k² sin² φ).
    for k in [0.4, 0.9, 0.999] {
        for phi in [0.2, 0.8, 1.3] {
            let u = simpson(
                |t: f64| 1.0 / (1.0 - (k * t.sin()).powi(2)).sqrt(),
                0.0,
                phi,
                4000,
            );
            let expect = (1.0 - (k * f64::sin(phi)).powi(2)).sqrt();
            let got = jacobi_dn(u, k).unwrap();
            assert!(
                (got - expect).abs() <= 1e-11,
                "k = {k}, phi = {phi}: {got} vs {expect}"
            );
        }
    }
}

#[test]
fn dense_lyapunov_matches_kronecker_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 7;
    let m = random_symmetric(n, 5);
    let a = SymMatrix::new(m - DMatrix::identity(n, n) * 4.0).unwrap();
    let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
    let x = dense_lyapunov(&a, &TallMatrix::new(b.clone()).unwrap()).unwrap();
    let oracle = kronecker_lyapunov(a.as_matrix(), &(&b * b.transpose()));
    assert!((x.as_matrix() - &oracle).amax() <= 1e-12 * oracle.amax());
}

#[test]
fn lr_adi_converges_to_kronecker_solution() {
    let a = build_laplacian_1d(12, 1.0).unwrap();
    let b = DMatrix::from_fn(12, 2, |i, j| ((i + 1) as f64 * (j + 1) as f64).sin());
    let iv = spectral_interval(&a).unwrap();
    let shifts = wachspress_shifts(iv, 12).unwrap();
    let lr = lr_adi_run(
        &a,
        &TallMatrix::new(b.clone()).unwrap(),
        &shifts,
        StopCriteria {
            max_steps: 12,
            residual_tol: 0.0,
        },
    )
    .unwrap();
    let oracle = kronecker_lyapunov(a.as_matrix(), &(&b * b.transpose()));
    let oracle = SymMatrix::symmetrize(oracle);
    let err = spectral_norm(&SymMatrix::symmetrize(
        lr.dense().as_matrix() - oracle.as_matrix(),
    )) / spectral_norm(&oracle);
    let bound = lyapcov::lradi::theoretical_error_bound(iv, 12);
    assert!(
        err <= bound * (1.0 + 1e-9) && err <= 1e-8,
        "{err:e} vs bound {bound:e}"
    );
}

#[test]
fn wachspress_radius_matches_brute_force_scan() {
    let iv = lyapcov::linalg::SpectralInterval::new(-500.0, -2.0).unwrap();
    for j in [1, 3, 6] {
        let shifts = wachspress_shifts(iv, j).unwrap();
        let brute = (0..=200_000)
            .map(|i| {
                let z = -(2.0f64.ln() + (250.0f64.ln()) * i as f64 / 200_000.0).exp();
                shifts
                    .shifts()
                    .iter()
                    .map(|a| ((z - a) / (z + a)).abs())
                    .product::<f64>()
            })
            .fold(0.0, f64::max);
        let got = rational_radius(shifts.shifts(), iv);
        let elliptic = EllipticData::from_complementary(2.0 / 500.0)
            .unwrap()
            .contraction(j as u32);
        assert!((got - brute).abs() <= 1e-8 * got, "j = {j}");
        assert!((got - elliptic).abs() <= 1e-8 * elliptic, "j = {j}");
    }
}
