//! Closed-form and Bai–Silverstein asymptotics of the two-bulk spectrum.
//!
//! In the strongly overparametrized regime the Gram spectrum splits into a
//! kernel point mass of weight `max(0, 1 − (1+ψ_n)/ψ_p)` at `s_t²`, a noise
//! bulk `ρ₁` with closed-form edges `s_t² + v_t²(1 ± √(ψ_p/ψ_n))²`, and the
//! population bulk `ρ₂` of `Ũ`, whose resolvent trace obeys
//!
//! ```text
//! q = −1/(z′ − Σ_a w_a μ_a/(1 + ψ_p q μ_a)),    z′ = z − s_t² − v_t²,
//! ```
//!
//! with the data atoms mapped to `μ_a = b_t² + a_t² e^{−2t} λ_a` (at unit
//! data scale this equals `μ₁²(e^{−2t}λ_a + Δ_t)`). Support edges of `ρ₂`
//! are the critical values of the inverse map
//! `z′(q) = Σ_a w_a μ_a/(1 + ψ_p q μ_a) − 1/q` over real `q`, located by
//! bisection between its poles. Timescales follow from the lower edges:
//! `τ_mem = ψ_p/(Δ_t λ₋^{ρ₁})` and `τ_gen = ψ_p/(Δ_t λ₋^{ρ₂})`.

use super::{DensityCurve, PointFlag, SolverOptions};
use crate::constants::ScalarConstants;
use crate::error::{Error, Result};
use crate::measure::SpectralMeasure;
use num_complex::Complex64;

/// Weight of the kernel point mass at `s_t²`.
pub fn delta_weight(psi_p: f64, psi_n: f64) -> f64 {
    (1.0 - (1.0 + psi_n) / psi_p).max(0.0)
}

/// Closed-form support edges of the noise bulk `ρ₁`.
pub fn bulk1_edges(constants: &ScalarConstants, psi_p: f64, psi_n: f64) -> Result<(f64, f64)> {
    if !(psi_p > 0.0 && psi_n > 0.0) {
        return Err(Error::invalid("psi_p and psi_n must be positive"));
    }
    let ratio = (psi_p / psi_n).sqrt();
    let lo = constants.s_t2 + constants.v_t2 * (1.0 - ratio).powi(2);
    let hi = constants.s_t2 + constants.v_t2 * (1.0 + ratio).powi(2);
    Ok((lo, hi))
}

/// Map the data spectral measure atom-wise to the population atoms
/// `μ_a = b_t² + a_t² e^{−2t} λ_a` of the `ρ₂` fixed point.
pub fn population_atoms(measure: &SpectralMeasure, constants: &ScalarConstants) -> Vec<(f64, f64)> {
    let e_2t = (-2.0 * constants.t).exp();
    let a2e = constants.a_t * constants.a_t * e_2t;
    measure
        .atoms()
        .iter()
        .map(|atom| (constants.b_t * constants.b_t + a2e * atom.lambda, atom.weight))
        .collect()
}

/// `Σ_a w_a μ_a/(1 + ψ_p q μ_a)`.
fn bs_sum(atoms: &[(f64, f64)], psi_p: f64, q: Complex64) -> Complex64 {
    atoms
        .iter()
        .map(|&(mu, w)| w * mu / (1.0 + psi_p * q * mu))
        .sum()
}

/// Solve the population fixed point at one shifted argument `z′`.
fn solve_bs(
    atoms: &[(f64, f64)],
    psi_p: f64,
    z_shifted: Complex64,
    opts: &SolverOptions,
    init: Option<Complex64>,
) -> Result<Complex64> {
    let mut q = init.unwrap_or(-1.0 / z_shifted);
    if !q.is_finite() || q.im < 0.0 {
        q = Complex64::new(0.0, 1.0) / z_shifted.norm();
    }
    let scale = 1.0 + z_shifted.norm();
    let mut residual = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        // Newton on F(q) = q(z′ − S(q)) + 1.
        let s = bs_sum(atoms, psi_p, q);
        let f = q * (z_shifted - s) + 1.0;
        residual = f.norm() / scale;
        if residual < opts.tol {
            if q.im < 0.0 {
                q = Complex64::new(q.re, -q.im);
            }
            return Ok(q);
        }
        let s_prime: Complex64 = atoms
            .iter()
            .map(|&(mu, w)| {
                let denom = 1.0 + psi_p * q * mu;
                -w * psi_p * mu * mu / (denom * denom)
            })
            .sum();
        let df = z_shifted - s - q * s_prime;
        let next = if df.is_finite() && df.norm() > 1e-300 {
            q - f / df
        } else {
            Complex64::new(f64::NAN, f64::NAN)
        };
        q = if next.is_finite() {
            next
        } else {
            // Damped fixed-point fallback.
            let target = -1.0 / (z_shifted - s);
            (1.0 - opts.theta) * q + opts.theta * target
        };
        if q.im < 0.0 && iteration % 16 == 0 {
            q = Complex64::new(0.0, 1.0) / z_shifted.norm();
        }
    }
    Err(Error::Convergence {
        context: format!("population fixed point at z' = {z_shifted}"),
        residual,
        iterations: opts.max_iter,
    })
}

/// Density of the population bulk `ρ₂` on a grid (in the original λ
/// coordinates; the `s_t² + v_t²` shift is applied internally).
///
/// The curve integrates to `1/ψ_p` over its bulk when `ψ_p > 1`; the
/// remaining `1 − 1/ψ_p` sits in a point mass at `s_t² + v_t²`, flagged by
/// the same Lorentzian rule as the full solution. The result does not
/// depend on `ψ_n`.
pub fn rho2_density(
    measure: &SpectralMeasure,
    constants: &ScalarConstants,
    psi_p: f64,
    lambda_grid: &[f64],
    eps: f64,
) -> Result<DensityCurve> {
    if lambda_grid.is_empty() {
        return Err(Error::invalid("empty spectral grid"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let atoms = population_atoms(measure, constants);
    let shift = constants.s_t2 + constants.v_t2;
    let own_delta = (1.0 - 1.0 / psi_p).max(0.0);
    let opts = SolverOptions::default();
    let mut rho = Vec::with_capacity(lambda_grid.len());
    let mut flags = Vec::with_capacity(lambda_grid.len());
    let mut warm = None;
    for &lambda in lambda_grid {
        let z_shifted = Complex64::new(lambda - shift, eps);
        match solve_bs(&atoms, psi_p, z_shifted, &opts, warm) {
            Ok(q) => {
                warm = Some(q);
                let value = q.im / std::f64::consts::PI;
                let spike = super::delta_lorentzian(lambda, shift, own_delta, eps);
                flags.push(if own_delta > 0.0 && spike > 0.5 * value.max(1e-300) {
                    PointFlag::DeltaSpike
                } else {
                    PointFlag::Ok
                });
                rho.push(value);
            }
            Err(_) => {
                warm = None;
                rho.push(f64::NAN);
                flags.push(PointFlag::Failed);
            }
        }
    }
    Ok(DensityCurve {
        lambda_grid: lambda_grid.to_vec(),
        rho,
        epsilon_used: eps,
        flags,
    })
}

/// Exact support intervals of the population bulk, via the critical points
/// of the inverse spectral map on the real line (in original λ
/// coordinates).
pub fn bs_support_edges(
    measure: &SpectralMeasure,
    constants: &ScalarConstants,
    psi_p: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(psi_p > 0.0) {
        return Err(Error::invalid("psi_p must be positive"));
    }
    let atoms = population_atoms(measure, constants);
    let shift = constants.s_t2 + constants.v_t2;

    let z_of = |q: f64| -> f64 {
        atoms
            .iter()
            .map(|&(mu, w)| w * mu / (1.0 + psi_p * q * mu))
            .sum::<f64>()
            - 1.0 / q
    };
    let dz_of = |q: f64| -> f64 {
        1.0 / (q * q)
            - atoms
                .iter()
                .map(|&(mu, w)| {
                    let denom = 1.0 + psi_p * q * mu;
                    w * psi_p * mu * mu / (denom * denom)
                })
                .sum::<f64>()
    };

    // Poles of the map: q = 0 and q = −1/(ψ_p μ_a).
    let mut poles: Vec<f64> = atoms.iter().map(|&(mu, _)| -1.0 / (psi_p * mu)).collect();
    poles.push(0.0);
    poles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    poles.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * a.abs().max(1.0));

    let span = poles[poles.len() - 1] - poles[0] + 1.0;
    let mut critical = Vec::new();
    let mut scan = |samples: &[f64]| {
        let mut prev_q = samples[0];
        let mut prev_sign = dz_of(prev_q).signum();
        for &q in &samples[1..] {
            let sign = dz_of(q).signum();
            if sign != prev_sign && sign.is_finite() && prev_sign.is_finite() {
                let (mut a, mut b) = (prev_q, q);
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if dz_of(mid).signum() == prev_sign {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                critical.push(0.5 * (a + b));
            }
            prev_sign = sign;
            prev_q = q;
        }
    };

    // dz has a double pole at each map pole, so critical points crowd the
    // interval endpoints: sample with a smootherstep warp that clusters
    // there. The unbounded outer intervals get geometric offset ladders.
    let margin = 1e-9 * span;
    for window in poles.windows(2) {
        let (lo, hi) = (window[0] + margin, window[1] - margin);
        let n = 900;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let u = i as f64 / (n - 1) as f64;
                let warp = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
                lo + (hi - lo) * warp
            })
            .collect();
        scan(&samples);
    }
    let n_tail = 500;
    let offsets: Vec<f64> = (0..n_tail)
        .map(|i| {
            let u = i as f64 / (n_tail - 1) as f64;
            margin * (1e4 * span / margin).powf(u)
        })
        .collect();
    let left: Vec<f64> = offsets.iter().rev().map(|&o| poles[0] - o).collect();
    scan(&left);
    let right: Vec<f64> = offsets
        .iter()
        .map(|&o| poles[poles.len() - 1] + o)
        .collect();
    scan(&right);

    let mut edges: Vec<f64> = critical.iter().map(|&q| z_of(q) + shift).collect();
    edges.retain(|e| e.is_finite());
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-10 * a.abs().max(1.0));
    if edges.is_empty() || edges.len() % 2 != 0 {
        return Err(Error::numerical(format!(
            "support-edge search found {} critical values; expected an even count",
            edges.len()
        )));
    }
    Ok(edges.chunks(2).map(|pair| (pair[0], pair[1])).collect())
}

/// Closed-form timescales for a single-atom data spectrum (`Σ = σ_x² I`).
pub fn timescales(constants: &ScalarConstants, psi_p: f64, psi_n: f64) -> Result<(f64, f64)> {
    let (lambda1_lo, _) = bulk1_edges(constants, psi_p, psi_n)?;
    let e_2t = (-2.0 * constants.t).exp();
    let mu = constants.b_t * constants.b_t
        + constants.a_t * constants.a_t * e_2t * constants.sigma_x2;
    let lambda2_lo =
        constants.s_t2 + constants.v_t2 + mu * (psi_p.sqrt() - 1.0).powi(2);
    let tau_gen = psi_p / (constants.delta_t * lambda2_lo);
    let tau_mem = psi_p / (constants.delta_t * lambda1_lo);
    Ok((tau_gen, tau_mem))
}

/// Timescales for a general data spectrum: the `ρ₂` lower edge comes from
/// the exact support search.
pub fn timescales_for_measure(
    constants: &ScalarConstants,
    measure: &SpectralMeasure,
    psi_p: f64,
    psi_n: f64,
) -> Result<(f64, f64)> {
    let (lambda1_lo, _) = bulk1_edges(constants, psi_p, psi_n)?;
    let edges = bs_support_edges(measure, constants, psi_p)?;
    let lambda2_lo = edges[0].0;
    Ok((
        psi_p / (constants.delta_t * lambda2_lo),
        psi_p / (constants.delta_t * lambda1_lo),
    ))
}
