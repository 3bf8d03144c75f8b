//! Scalar constants of the noised feature map.
//!
//! With forward noising `x_t = e^{-t} x₀ + √Δ_t ξ`, `Δ_t = 1 − e^{-2t}`, a
//! single pre-activation of the random-feature model is `w·x_t/√d`, which for
//! Gaussian data with average input variance `σ_x² = Tr Σ / d` converges to
//! `e^{-t} σ_x u + √Δ_t v` with independent `u, v ~ N(0,1)`. Its total
//! variance is `Γ_t² = e^{-2t} σ_x² + Δ_t`. Every asymptotic object in this
//! crate is built from Gaussian moments of the activation at that scale:
//!
//! * `‖σ‖² = E[σ(Γ_t z)²]` — total feature power;
//! * `a_t = E[σ(e^{-t}σ_x u + √Δ_t v) u] / (e^{-t}σ_x)` — signal coupling;
//! * `b_t = E[σ(e^{-t}σ_x u + √Δ_t v) v]` — noise coupling;
//! * `v_t² = E_u[σ₀(e^{-t}σ_x u)²] − a_t² e^{-2t}σ_x²` with
//!   `σ₀(η) = E_v[σ(η + √Δ_t v)]` — nonlinear variance along the data;
//! * `s_t² = ‖σ‖² − a_t² e^{-2t}σ_x² − v_t² − b_t²` — purely nonlinear
//!   residual power;
//! * `μ₁ = E[σ(Γ_t z) z]` — first Hermite coefficient at scale `Γ_t`.
//!
//! Two identities follow from Stein's lemma and hold at every input scale:
//! `b_t = √Δ_t · a_t` and `μ₁ = Γ_t · a_t` (equivalently
//! `μ₁² = e^{-2t}σ_x² a_t² + b_t²`). The frequently quoted special forms
//! `b_t² = Δ_t μ₁²` and `a_t² σ_x² = μ₁²` are their restriction to
//! `σ_x² = 1`, where `Γ_t ≡ 1`; they do *not* extend to other input
//! variances, and the unit tests document both facts.
//!
//! All expectations are evaluated with Gauss–Hermite quadrature
//! ([`crate::quad`]): tensor-product rules for the two-dimensional moments
//! and a nested rule through `σ₀` for `v_t²`. Convergence in the order is
//! superalgebraic but pole-limited for strip-analytic activations like
//! `tanh` (error roughly `e^{-c√order}` with `c` set by the pre-activation
//! scale); the default order [`DEFAULT_QUAD_ORDER`] keeps the identity
//! defects below `1e-10` for every scale probed in this crate while costing
//! only milliseconds.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::quad::GaussHermite;
use serde::{Deserialize, Serialize};

/// Default quadrature order for [`compute_constants`].
pub const DEFAULT_QUAD_ORDER: usize = 240;

/// Scalar constants of the noised feature map at a fixed diffusion time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalarConstants {
    /// Diffusion time `t > 0`.
    pub t: f64,
    /// Noise variance `Δ_t = 1 − e^{-2t}`.
    pub delta_t: f64,
    /// Average input variance `σ_x² = Tr Σ / d`.
    pub sigma_x2: f64,
    /// Pre-activation variance `Γ_t² = e^{-2t} σ_x² + Δ_t`.
    pub gamma_t2: f64,
    /// Signal coupling `a_t`.
    pub a_t: f64,
    /// Noise coupling `b_t`.
    pub b_t: f64,
    /// Nonlinear variance along the data, `v_t²`.
    pub v_t2: f64,
    /// Purely nonlinear residual power, `s_t²`.
    pub s_t2: f64,
    /// First Hermite coefficient `μ₁` at scale `Γ_t`.
    pub mu1: f64,
    /// Total feature power `‖σ‖²`.
    pub sigma_norm2: f64,
}

impl ScalarConstants {
    /// `e^{-t}`.
    pub fn e_minus_t(&self) -> f64 {
        (-self.t).exp()
    }

    /// `√Δ_t`.
    pub fn sqrt_delta(&self) -> f64 {
        self.delta_t.sqrt()
    }

    /// `Γ_t`.
    pub fn gamma_t(&self) -> f64 {
        self.gamma_t2.sqrt()
    }

    /// `√v_t²`.
    pub fn v_t(&self) -> f64 {
        self.v_t2.sqrt()
    }

    /// `√s_t²`.
    pub fn s_t(&self) -> f64 {
        self.s_t2.sqrt()
    }

    /// `μ₁²`.
    pub fn mu1_sq(&self) -> f64 {
        self.mu1 * self.mu1
    }

    /// Power orthogonal to the linear component: `‖σ‖² − μ₁² = s_t² + v_t²`
    /// (exact at every input scale).
    pub fn bulk_variance(&self) -> f64 {
        self.s_t2 + self.v_t2
    }
}

/// Noise-smoothed activation `σ₀(η) = E_v[σ(η + √Δ_t v)]`.
///
/// `delta_t` must lie in `(0, 1]`; the rule of the given order is built
/// internally, so prefer batching through [`compute_constants`] when many
/// evaluations are needed.
pub fn sigma0(activation: &Activation, eta: f64, delta_t: f64, order: usize) -> Result<f64> {
    if !(delta_t > 0.0 && delta_t <= 1.0) {
        return Err(Error::invalid(format!(
            "delta_t must lie in (0, 1], got {delta_t}"
        )));
    }
    let rule = GaussHermite::new(order)?;
    Ok(sigma0_with(&rule, activation, eta, delta_t.sqrt()))
}

/// `σ₀(η)` with a caller-supplied rule and precomputed `√Δ_t`.
fn sigma0_with(rule: &GaussHermite, activation: &Activation, eta: f64, sqrt_delta: f64) -> f64 {
    rule.integrate(|v| activation.eval(eta + sqrt_delta * v))
}

/// Compute all scalar constants at diffusion time `t` for the given
/// activation and average input variance, with a quadrature rule of the
/// given order (see [`DEFAULT_QUAD_ORDER`]).
pub fn compute_constants(
    activation: &Activation,
    sigma_x2: f64,
    t: f64,
    order: usize,
) -> Result<ScalarConstants> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!(
            "diffusion time must be positive and finite, got {t}"
        )));
    }
    if !(sigma_x2 > 0.0 && sigma_x2.is_finite()) {
        return Err(Error::invalid(format!(
            "input variance must be positive and finite, got {sigma_x2}"
        )));
    }
    let rule = GaussHermite::new(order)?;

    let e_t = (-t).exp();
    let e_2t = (-2.0 * t).exp();
    let delta_t = 1.0 - e_2t;
    let sqrt_delta = delta_t.sqrt();
    let sigma_x = sigma_x2.sqrt();
    let gamma_t2 = e_2t * sigma_x2 + delta_t;
    let gamma_t = gamma_t2.sqrt();
    let signal_scale = e_t * sigma_x;

    let sigma_norm2 = rule.integrate(|z| activation.eval(gamma_t * z).powi(2));
    let mu1 = rule.integrate(|z| activation.eval(gamma_t * z) * z);

    let raw_a = rule.integrate_2d(|u, v| activation.eval(signal_scale * u + sqrt_delta * v) * u);
    let a_t = raw_a / signal_scale;
    let b_t = rule.integrate_2d(|u, v| activation.eval(signal_scale * u + sqrt_delta * v) * v);

    let smoothed_power =
        rule.integrate(|u| sigma0_with(&rule, activation, signal_scale * u, sqrt_delta).powi(2));
    let v_t2 = clamp_variance(smoothed_power - a_t * a_t * e_2t * sigma_x2, "v_t^2")?;
    let s_t2 = clamp_variance(
        sigma_norm2 - a_t * a_t * e_2t * sigma_x2 - v_t2 - b_t * b_t,
        "s_t^2",
    )?;

    let constants = ScalarConstants {
        t,
        delta_t,
        sigma_x2,
        gamma_t2,
        a_t,
        b_t,
        v_t2,
        s_t2,
        mu1,
        sigma_norm2,
    };
    for (name, value) in [
        ("a_t", a_t),
        ("b_t", b_t),
        ("v_t2", v_t2),
        ("s_t2", s_t2),
        ("mu1", mu1),
        ("sigma_norm2", sigma_norm2),
    ] {
        if !value.is_finite() {
            return Err(Error::numerical(format!(
                "scalar constant {name} is not finite at t={t}, sigma_x2={sigma_x2}"
            )));
        }
    }
    Ok(constants)
}

/// Variance-like quantities must be non-negative; forgive only rounding-level
/// negativity from cancellation.
fn clamp_variance(value: f64, name: &str) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value > -1e-10 {
        Ok(0.0)
    } else {
        Err(Error::numerical(format!(
            "{name} came out negative ({value:.3e}); quadrature order too low?"
        )))
    }
}

/// Convenience re-export: build a Gauss–Hermite rule of the given order.
pub fn gauss_hermite_rule(order: usize) -> Result<GaussHermite> {
    GaussHermite::new(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Monte-Carlo oracle for the constants, independent of the quadrature
    /// path. `v_t²` uses two conditionally independent noise copies sharing
    /// the same signal variable: `E[σ(αu+βv)σ(αu+βv')] = E_u[σ₀(αu)²]`.
    struct McOracle {
        sigma_norm2: f64,
        mu1: f64,
        a_t: f64,
        b_t: f64,
        v_t2: f64,
    }

    fn mc_oracle(activation: &Activation, sigma_x2: f64, t: f64, n: usize, seed: u64) -> McOracle {
        let mut rng = crate::seeding::rng_stream(seed, &[99]);
        let e_t = (-t).exp();
        let delta_t = 1.0 - (-2.0 * t).exp();
        let (alpha, beta) = (e_t * sigma_x2.sqrt(), delta_t.sqrt());
        let gamma = (alpha * alpha + beta * beta).sqrt();
        let (mut p2, mut m1, mut su, mut sv, mut paired) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let u: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample(StandardNormal);
            let v2: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            let s = activation.eval(alpha * u + beta * v);
            let s_twin = activation.eval(alpha * u + beta * v2);
            let g = activation.eval(gamma * z);
            p2 += g * g;
            m1 += g * z;
            su += s * u;
            sv += s * v;
            paired += s * s_twin;
        }
        let n = n as f64;
        let a_t = su / n / alpha;
        McOracle {
            sigma_norm2: p2 / n,
            mu1: m1 / n,
            a_t,
            b_t: sv / n,
            v_t2: paired / n - a_t * a_t * alpha * alpha,
        }
    }

    #[test]
    fn quadrature_matches_monte_carlo_tanh() {
        let act = Activation::tanh();
        let (sigma_x2, t) = (1.0, 0.1);
        let oracle = mc_oracle(&act, sigma_x2, t, 4_000_000, 42);
        let c = compute_constants(&act, sigma_x2, t, 80).unwrap();
        assert_abs_diff_eq!(c.sigma_norm2, oracle.sigma_norm2, epsilon = 2e-3);
        assert_abs_diff_eq!(c.mu1, oracle.mu1, epsilon = 2e-3);
        assert_abs_diff_eq!(c.a_t, oracle.a_t, epsilon = 4e-3);
        assert_abs_diff_eq!(c.b_t, oracle.b_t, epsilon = 2e-3);
        assert_abs_diff_eq!(c.v_t2, oracle.v_t2, epsilon = 2e-3);
    }

    #[test]
    fn quadrature_matches_monte_carlo_rectifier_off_unit_scale() {
        // Exercises the non-odd path, including the recentring shift.
        let act = Activation::scaled_shifted_relu(1.0).unwrap();
        let (sigma_x2, t) = (2.0, 0.3);
        let oracle = mc_oracle(&act, sigma_x2, t, 4_000_000, 7);
        let c = compute_constants(&act, sigma_x2, t, 120).unwrap();
        assert_abs_diff_eq!(c.sigma_norm2, oracle.sigma_norm2, epsilon = 3e-3);
        assert_abs_diff_eq!(c.mu1, oracle.mu1, epsilon = 3e-3);
        assert_abs_diff_eq!(c.a_t, oracle.a_t, epsilon = 5e-3);
        assert_abs_diff_eq!(c.b_t, oracle.b_t, epsilon = 3e-3);
        assert_abs_diff_eq!(c.v_t2, oracle.v_t2, epsilon = 3e-3);
    }

    #[test]
    fn stein_identities_hold_at_every_scale() {
        // b_t = √Δ_t a_t and μ₁ = Γ_t a_t are exact for any activation and
        // any input variance; they are the scale-robust forms of the
        // unit-variance identities b² = Δ μ₁² and a² σ_x² = μ₁².
        let act = Activation::tanh();
        for &sigma_x2 in &[0.25, 1.0, 4.0] {
            for &t in &[0.01, 0.1, 1.0] {
                let c = compute_constants(&act, sigma_x2, t, DEFAULT_QUAD_ORDER).unwrap();
                assert_abs_diff_eq!(c.b_t, c.sqrt_delta() * c.a_t, epsilon = 5e-10);
                assert_abs_diff_eq!(c.mu1, c.gamma_t() * c.a_t, epsilon = 5e-10);
                let mu1_sq = (-2.0 * t).exp() * sigma_x2 * c.a_t.powi(2) + c.b_t.powi(2);
                assert_abs_diff_eq!(c.mu1_sq(), mu1_sq, epsilon = 1e-9);
                // ‖σ‖² − μ₁² = s² + v² is likewise scale-robust.
                assert_abs_diff_eq!(
                    c.sigma_norm2 - c.mu1_sq(),
                    c.bulk_variance(),
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn unit_variance_identities_hold_only_at_unit_variance() {
        let act = Activation::tanh();
        // At σ_x² = 1 the pre-activation scale is Γ_t ≡ 1 and the special
        // forms are exact.
        for &t in &[0.01, 0.1, 1.0] {
            let c = compute_constants(&act, 1.0, t, DEFAULT_QUAD_ORDER).unwrap();
            assert_abs_diff_eq!(c.gamma_t2, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(c.b_t.powi(2), c.delta_t * c.mu1_sq(), epsilon = 1e-12);
            assert_abs_diff_eq!(c.a_t.powi(2) * c.sigma_x2, c.mu1_sq(), epsilon = 1e-12);
        }
        // Off unit variance they fail by Δ_t a_t² e^{-2t} (1 − σ_x²), which
        // is far above rounding; this is a property of the definitions, not
        // of the quadrature.
        let c = compute_constants(&act, 4.0, 0.1, DEFAULT_QUAD_ORDER).unwrap();
        let defect = c.b_t.powi(2) - c.delta_t * c.mu1_sq();
        let predicted = c.delta_t * c.a_t.powi(2) * (-0.2f64).exp() * (1.0 - 4.0);
        assert!(defect.abs() > 1e-3);
        assert_abs_diff_eq!(defect, predicted, epsilon = 1e-8);
    }

    #[test]
    fn long_time_limits() {
        // As t → ∞ the signal coupling e^{-t}σ_x a_t and the smoothed
        // variance v_t² both vanish, while a_t itself tends to E[σ'(z)].
        let act = Activation::tanh();
        let c = compute_constants(&act, 1.0, 20.0, 160).unwrap();
        assert!((c.e_minus_t() * c.sigma_x2.sqrt() * c.a_t).abs() < 1e-6);
        assert!(c.v_t2 < 1e-6);
        // Independent oracle for E[σ'(z)] via a centred difference. a_t is
        // recovered from a covariance scaled by e^{-t} ≈ 2e-9, so allow for
        // the amplified rounding in that division.
        let rule = GaussHermite::new(160).unwrap();
        let h = 1e-5;
        let deriv_mean =
            rule.integrate(|z| (act.eval(z + h) - act.eval(z - h)) / (2.0 * h));
        assert_abs_diff_eq!(c.a_t, deriv_mean, epsilon = 1e-6);
        // Γ_t → 1 and ‖σ‖² → E[σ(z)²].
        assert_abs_diff_eq!(c.gamma_t2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn near_zero_time_limits() {
        // As t → 0, Δ_t → 0: the noise couplings b_t, s_t² vanish and
        // ‖σ‖² → E[σ(σ_x z)²].
        let act = Activation::tanh();
        let c = compute_constants(&act, 1.0, 1e-6, 80).unwrap();
        assert!(c.b_t.abs() < 1e-3);
        assert!(c.s_t2 < 1e-6);
        let rule = GaussHermite::new(80).unwrap();
        let direct = rule.integrate(|z| act.eval(z).powi(2));
        assert_abs_diff_eq!(c.sigma_norm2, direct, epsilon = 1e-5);
    }

    #[test]
    fn smoothed_activation_is_odd_for_odd_sigma() {
        let act = Activation::tanh();
        assert_abs_diff_eq!(sigma0(&act, 0.0, 0.5, 80).unwrap(), 0.0, epsilon = 1e-15);
        let plus = sigma0(&act, 0.7, 0.5, 80).unwrap();
        let minus = sigma0(&act, -0.7, 0.5, 80).unwrap();
        assert_abs_diff_eq!(plus, -minus, epsilon = 1e-14);
        assert!(plus > 0.0);
        // Smoothing contracts: |σ₀(η)| ≤ sup|σ| = 1.
        assert!(plus < 1.0);
    }

    #[test]
    fn order_convergence_has_saturated() {
        // The hardest scale probed anywhere in the crate: Γ ≈ 2 narrows the
        // analyticity strip of tanh and slows the quadrature the most.
        let act = Activation::tanh();
        let lo = compute_constants(&act, 4.0, 0.01, DEFAULT_QUAD_ORDER).unwrap();
        let hi = compute_constants(&act, 4.0, 0.01, 360).unwrap();
        assert_abs_diff_eq!(lo.a_t, hi.a_t, epsilon = 1e-10);
        assert_abs_diff_eq!(lo.b_t, hi.b_t, epsilon = 1e-10);
        assert_abs_diff_eq!(lo.v_t2, hi.v_t2, epsilon = 1e-9);
        assert_abs_diff_eq!(lo.s_t2, hi.s_t2, epsilon = 1e-9);
        assert_abs_diff_eq!(lo.mu1, hi.mu1, epsilon = 1e-10);
    }

    #[test]
    fn rejects_domain_errors() {
        let act = Activation::tanh();
        assert!(compute_constants(&act, 1.0, 0.0, 80).is_err());
        assert!(compute_constants(&act, 1.0, -0.5, 80).is_err());
        assert!(compute_constants(&act, 0.0, 0.1, 80).is_err());
        assert!(compute_constants(&act, -1.0, 0.1, 80).is_err());
        assert!(compute_constants(&act, 1.0, 0.1, 1).is_err());
        assert!(sigma0(&act, 0.0, 0.0, 80).is_err());
        assert!(sigma0(&act, 0.0, 1.5, 80).is_err());
    }

    #[test]
    fn variance_decomposition_is_exact_by_construction() {
        let act = Activation::erf();
        let c = compute_constants(&act, 0.5, 0.25, 80).unwrap();
        let total = c.a_t.powi(2) * (-0.5f64).exp() * 0.5 + c.b_t.powi(2) + c.v_t2 + c.s_t2;
        assert_abs_diff_eq!(total, c.sigma_norm2, epsilon = 1e-12);
        assert!(c.v_t2 >= 0.0 && c.s_t2 >= 0.0);
    }
}
