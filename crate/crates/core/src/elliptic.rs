//! Elliptic integrals of the first kind, the nome/modulus correspondence and
//! the Jacobi `dn` function.
//!
//! The complete integral is evaluated with the arithmetic-geometric mean;
//! `dn` uses the descending Landen transformation. The incomplete integral is
//! computed by adaptive Gauss-Kronrod quadrature and is kept public because it
//! is the independent reference for both.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

const AGM_TOL: f64 = 1e-15;
const AGM_MAX_ITER: usize = 64;
/// Landen recursion depth bound.
const LANDEN_MAX_DEPTH: usize = 40;
/// Below this modulus `dn` is replaced by its `k = 0` value.
const SMALL_MODULUS: f64 = 1e-8;
/// Truncation threshold for the theta-type series in the nome.
const SERIES_TOL: f64 = 1e-16;
const QUAD_TOL: f64 = 1e-12;

/// Arithmetic-geometric mean of two positive numbers.
pub fn agm(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!(
            "agm requires positive inputs, got ({a}, {b})"
        )));
    }
    let (mut a, mut b) = (a, b);
    for _ in 0..AGM_MAX_ITER {
        if (a - b).abs() <= AGM_TOL * a {
            break;
        }
        let next = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next;
    }
    Ok(0.5 * (a + b))
}

fn check_modulus(k: f64) -> Result<()> {
    if (0.0..1.0).contains(&k) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "modulus must lie in [0, 1), got {k}"
        )))
    }
}

/// Complete elliptic integral of the first kind `K(k) = s_k(1)`.
pub fn complete_k(k: f64) -> Result<f64> {
    check_modulus(k)?;
    complete_k_from_complement((1.0 - k * k).sqrt())
}

/// `K` expressed through the complementary modulus, which keeps full
/// precision when `k` is close to one.
fn complete_k_from_complement(k_prime: f64) -> Result<f64> {
    Ok(PI / (2.0 * agm(1.0, k_prime)?))
}

/// Incomplete elliptic integral of the first kind
/// `s_k(x) = ∫_0^x dt / sqrt((1 - t²)(1 - k²t²))`.
///
/// Evaluated after the substitution `t = sin θ`, which removes the endpoint
/// singularity at `x = 1`.
pub fn incomplete_s(x: f64, k: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!(
            "argument must lie in [0, 1], got {x}"
        )));
    }
    check_modulus(k)?;
    let k2 = k * k;
    let upper = x.asin();
    Ok(adaptive_gauss_kronrod(
        &|theta: f64| 1.0 / (1.0 - k2 * theta.sin().powi(2)).sqrt(),
        0.0,
        upper,
        QUAD_TOL,
    ))
}

// 7-point Gauss / 15-point Kronrod nodes and weights on [-1, 1].
const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_KRONROD_W: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const GK_GAUSS_W: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod_15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = GK_KRONROD_W[7] * fc;
    let mut gauss = GK_GAUSS_W[3] * fc;
    for (i, (&node, &wk)) in GK_NODES.iter().zip(&GK_KRONROD_W).take(7).enumerate() {
        let pair = f(center - half * node) + f(center + half * node);
        kronrod += wk * pair;
        if i % 2 == 1 {
            gauss += GK_GAUSS_W[i / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod quadrature with absolute tolerance `tol`.
pub(crate) fn adaptive_gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut stack = vec![(a, b, tol, 0usize)];
    let mut total = 0.0;
    while let Some((lo, hi, tol, depth)) = stack.pop() {
        let (value, err) = gauss_kronrod_15(f, lo, hi);
        if err <= tol || depth >= 50 {
            total += value;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * tol, depth + 1));
            stack.push((mid, hi, 0.5 * tol, depth + 1));
        }
    }
    total
}

/// Nome `q = exp(-π K'/K)`.
pub fn nome_from_k(k_complete: f64, k_prime_complete: f64) -> Result<f64> {
    if !(k_complete > 0.0 && k_prime_complete > 0.0) {
        return Err(Error::domain(format!(
            "complete integrals must be positive, got K = {k_complete}, K' = {k_prime_complete}"
        )));
    }
    Ok((-PI * k_prime_complete / k_complete).exp())
}

/// Partial sums of the two theta-type series in the nome,
/// `(Σ_{m odd} q^{m²}, Σ_{m even, m ≥ 2} q^{m²})`.
fn theta_sums(q: f64) -> (f64, f64) {
    let (mut odd, mut even) = (0.0, 0.0);
    if q == 0.0 {
        return (odd, even);
    }
    let mut m = 1u32;
    loop {
        let term = q.powi((m * m) as i32);
        if 2.0 * term < SERIES_TOL {
            break;
        }
        if m % 2 == 1 {
            odd += term;
        } else {
            even += term;
        }
        m += 1;
    }
    (odd, even)
}

fn check_nome(q: f64) -> Result<()> {
    if (0.0..1.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::domain(format!("nome must lie in [0, 1), got {q}")))
    }
}

/// Complementary modulus belonging to the nome `q`:
/// `√k' = (1 - 2q + 2q⁴ - 2q⁹ + …) / (1 + 2q + 2q⁴ + 2q⁹ + …)`.
pub fn modulus_from_nome(q: f64) -> Result<f64> {
    check_nome(q)?;
    let (odd, even) = theta_sums(q);
    let ratio = (1.0 - 2.0 * odd + 2.0 * even) / (1.0 + 2.0 * odd + 2.0 * even);
    Ok(ratio * ratio)
}

/// `(1 - √k') / (1 + √k')` for the complementary modulus belonging to `q`.
///
/// Numerator and denominator collapse to `4 Σ_odd` and `2 + 4 Σ_even`, so
/// this form has no cancellation when `k'` is close to one.
pub fn contraction_from_nome(q: f64) -> Result<f64> {
    check_nome(q)?;
    let (odd, even) = theta_sums(q);
    Ok(2.0 * odd / (1.0 + 2.0 * even))
}

/// Jacobi `dn(u, k)`.
pub fn jacobi_dn(u: f64, k: f64) -> Result<f64> {
    check_modulus(k)?;
    Ok(dn_with_complement(u, k, (1.0 - k * k).sqrt()))
}

/// Descending Landen transformation for `dn`, taking both moduli so callers
/// that know `k'` accurately do not lose it to `sqrt(1 - k²)`.
pub(crate) fn dn_with_complement(u: f64, k: f64, k_prime: f64) -> f64 {
    if k < SMALL_MODULUS {
        return 1.0;
    }
    let mut a = vec![1.0];
    let mut c = vec![k];
    let mut b = k_prime;
    for _ in 0..LANDEN_MAX_DEPTH {
        let an = *a.last().unwrap();
        let cn = *c.last().unwrap();
        if cn.abs() <= f64::EPSILON * an {
            break;
        }
        a.push(0.5 * (an + b));
        c.push(0.5 * (an - b));
        b = (an * b).sqrt();
    }
    let depth = a.len() - 1;
    let mut phi = (1u64 << depth) as f64 * a[depth] * u;
    for n in (1..=depth).rev() {
        phi = 0.5 * (phi + (c[n] / a[n] * phi.sin()).asin());
    }
    // 1 - k²sn² = k'² + k²cn², which stays accurate as k → 1.
    let cn = phi.cos();
    (k_prime * k_prime + k * k * cn * cn).sqrt()
}

/// Modulus data for a spectral interval: `k`, `k'`, `K`, `K'` and the nome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticData {
    pub k: f64,
    pub k_prime: f64,
    pub k_complete: f64,
    pub k_prime_complete: f64,
    pub nome: f64,
}

impl EllipticData {
    /// Builds the data from the complementary modulus `k' ∈ (0, 1]`.
    ///
    /// `k' = 1` is the degenerate interval: `k = 0`, `K' = ∞` and `q = 0`.
    pub fn from_complementary(k_prime: f64) -> Result<Self> {
        if !(k_prime > 0.0 && k_prime <= 1.0) {
            return Err(Error::domain(format!(
                "complementary modulus must lie in (0, 1], got {k_prime}"
            )));
        }
        let k = ((1.0 - k_prime) * (1.0 + k_prime)).sqrt();
        let k_complete = complete_k_from_complement(k_prime)?;
        if k == 0.0 {
            return Ok(Self {
                k,
                k_prime,
                k_complete: FRAC_PI_2,
                k_prime_complete: f64::INFINITY,
                nome: 0.0,
            });
        }
        let k_prime_complete = complete_k_from_complement(k)?;
        let nome = nome_from_k(k_complete, k_prime_complete)?;
        Ok(Self {
            k,
            k_prime,
            k_complete,
            k_prime_complete,
            nome,
        })
    }

    pub fn from_modulus(k: f64) -> Result<Self> {
        check_modulus(k)?;
        Self::from_complementary(((1.0 - k) * (1.0 + k)).sqrt())
    }

    /// `dn(u)` at this modulus.
    pub fn dn(&self, u: f64) -> f64 {
        dn_with_complement(u, self.k, self.k_prime)
    }

    /// `(1 - √k'_r) / (1 + √k'_r)` where `k'_r` belongs to the nome `q^r`.
    pub fn contraction(&self, r: u32) -> f64 {
        contraction_from_nome(self.nome.powi(r as i32)).expect("nome in [0, 1)")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // K(1/√2), from the integral of the definition.
    const K_SELF_COMPLEMENTARY: f64 = 1.854_074_677_301_372;

    #[test]
    fn agm_fixed_point_and_self_consistency() {
        assert_eq!(agm(1.0, 1.0).unwrap(), 1.0);
        let one_step = agm(0.75, 0.5f64.sqrt()).unwrap();
        assert_relative_eq!(agm(1.0, 0.5).unwrap(), one_step, max_relative = 1e-15);
        let kp = 0.5f64.sqrt();
        assert_relative_eq!(
            agm(1.0, kp).unwrap(),
            PI / (2.0 * K_SELF_COMPLEMENTARY),
            max_relative = 1e-12
        );
    }

    #[test]
    fn agm_rejects_non_positive() {
        assert!(agm(0.0, 1.0).is_err());
        assert!(agm(1.0, -2.0).is_err());
    }

    #[test]
    fn complete_k_values() {
        assert_eq!(complete_k(0.0).unwrap(), FRAC_PI_2);
        assert_relative_eq!(
            complete_k(0.5f64.sqrt()).unwrap(),
            K_SELF_COMPLEMENTARY,
            max_relative = 1e-12
        );
        assert!(complete_k(1.0).is_err());
        assert!(complete_k(-0.1).is_err());
    }

    #[test]
    fn incomplete_integral_edges() {
        assert_eq!(incomplete_s(0.0, 0.4).unwrap(), 0.0);
        for x in [0.1, 0.5, 0.9, 1.0] {
            assert_relative_eq!(
                incomplete_s(x, 0.0).unwrap(),
                x.asin(),
                max_relative = 1e-13
            );
        }
        assert_relative_eq!(
            incomplete_s(1.0, 0.3).unwrap(),
            complete_k(0.3).unwrap(),
            max_relative = 1e-12
        );
        assert!(incomplete_s(1.5, 0.3).is_err());
        assert!(incomplete_s(0.5, 1.0).is_err());
    }

    #[test]
    fn nome_cases() {
        assert_relative_eq!(
            nome_from_k(2.0, 2.0).unwrap(),
            (-PI).exp(),
            max_relative = 1e-15
        );
        assert!(nome_from_k(1.0, 50.0).unwrap() < 1e-68);
        assert!(nome_from_k(0.0, 1.0).is_err());
        assert_eq!(modulus_from_nome(0.0).unwrap(), 1.0);
        // K = K' is the self-complementary point k = k' = 1/√2.
        assert_relative_eq!(
            modulus_from_nome((-PI).exp()).unwrap(),
            0.5f64.sqrt(),
            max_relative = 1e-10
        );
        assert!(modulus_from_nome(1.0).is_err());
    }

    #[test]
    fn nome_round_trip_at_point_six() {
        let data = EllipticData::from_modulus(0.6).unwrap();
        assert_relative_eq!(
            modulus_from_nome(data.nome).unwrap(),
            0.8,
            max_relative = 1e-10
        );
        let kp = 0.9f64.mul_add(-0.9, 1.0).sqrt();
        let q = nome_from_k(complete_k(0.9).unwrap(), complete_k(kp).unwrap()).unwrap();
        assert_relative_eq!(modulus_from_nome(q).unwrap(), kp, max_relative = 1e-10);
    }

    #[test]
    fn contraction_matches_direct_form() {
        for q in [0.0, 1e-3, 0.1, 0.4, 0.7] {
            let kp = modulus_from_nome(q).unwrap();
            let direct = (1.0 - kp.sqrt()) / (1.0 + kp.sqrt());
            assert!((contraction_from_nome(q).unwrap() - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn dn_trivial_values() {
        for k in [0.0, 0.3, 0.9, 0.999] {
            assert_eq!(jacobi_dn(0.0, k).unwrap(), 1.0);
        }
        for u in [0.0, 0.5, 3.0] {
            assert_eq!(jacobi_dn(u, 0.0).unwrap(), 1.0);
        }
        let k_full = complete_k(0.6).unwrap();
        assert_relative_eq!(jacobi_dn(k_full, 0.6).unwrap(), 0.8, max_relative = 1e-10);
        assert!(jacobi_dn(1.0, 1.0).is_err());
    }

    #[test]
    fn degenerate_interval_data() {
        let data = EllipticData::from_complementary(1.0).unwrap();
        assert_eq!(data.k, 0.0);
        assert_eq!(data.nome, 0.0);
        assert_eq!(data.contraction(3), 0.0);
        assert!(EllipticData::from_complementary(0.0).is_err());
    }

    #[test]
    fn elliptic_data_invariants() {
        for k in [0.05, 0.3, 0.6, 0.9, 0.999] {
            let d = EllipticData::from_modulus(k).unwrap();
            assert!((d.k * d.k + d.k_prime * d.k_prime - 1.0).abs() < 1e-12);
            let q = (-PI * d.k_prime_complete / d.k_complete).exp();
            assert_relative_eq!(d.nome, q, max_relative = 1e-12);
            assert!(d.k_complete >= FRAC_PI_2);
        }
    }

    proptest::proptest! {
        #[test]
        fn complete_k_increasing(k1 in 0.0f64..0.99, dk in 1e-4f64..0.009) {
            proptest::prop_assert!(complete_k(k1 + dk).unwrap() > complete_k(k1).unwrap());
        }

        #[test]
        fn dn_non_increasing_on_quarter_period(k in 0.01f64..0.99, s in 0.0f64..1.0, ds in 1e-6f64..0.1) {
            let kk = complete_k(k).unwrap();
            let u0 = s * kk;
            let u1 = (u0 + ds * kk).min(kk);
            proptest::prop_assert!(jacobi_dn(u1, k).unwrap() <= jacobi_dn(u0, k).unwrap() + 1e-15);
        }

        #[test]
        fn nome_round_trip(k in 0.05f64..0.95) {
            let d = EllipticData::from_modulus(k).unwrap();
            let kp = modulus_from_nome(d.nome).unwrap();
            proptest::prop_assert!((kp - d.k_prime).abs() <= 1e-9 * d.k_prime);
        }
    }
}
