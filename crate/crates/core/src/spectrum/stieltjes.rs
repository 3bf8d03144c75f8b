//! Solver of the three-equation self-consistent system.
//!
//! With `ŝ(q) = b_t²ψ_p + 1/q` and
//! `r̂(r,q) = ψ_p a_t² e^{−2t}/D`, `D = 1 + (a_t²e^{−2t}ψ_p/ψ_n)·r +
//! (ψ_p v_t²/ψ_n)·q`, the traces satisfy
//!
//! ```text
//! s = ∫ dρ_Σ(λ) / (ŝ + λ r̂),
//! r = ∫ dρ_Σ(λ) · λ / (ŝ + λ r̂),
//! ψ_p(s_t² − z) + ψ_p v_t²/D + (1 − ψ_p)/q − s/q² = 0.
//! ```
//!
//! The scalar third equation is solved for `q` by a one-dimensional complex
//! Newton iteration with `(r, s)` frozen (empirically this stabilizes the
//! coupled system); the auxiliary traces are then refreshed through the
//! measure integrals under damping, adaptively halved when the residual
//! oscillates. A damped rational update of `q` (the quadratic obtained by
//! multiplying the third equation through by `q²` with `D` frozen) is the
//! fallback when Newton stalls. Wrong-branch iterates (`Im q < 0`) restart
//! from the Herglotz point `q = i/|z|`.
//!
//! Densities are produced by ε-continuation: each grid point runs a
//! descending ε schedule warm-started from its predecessor's solution, and
//! the grid is swept in contiguous chunks that run in parallel. A rung that
//! fails to converge restarts its point from high above the real axis,
//! where the iteration contracts from a cold start, and walks the height
//! back down.

use super::{DensityCurve, PointFlag, SolverOptions, StieltjesSolution};
use crate::constants::ScalarConstants;
use crate::error::{Error, Result};
use crate::measure::SpectralMeasure;
use num_complex::Complex64;
use rayon::prelude::*;

/// Default descending ε schedule of the continuation.
pub const DEFAULT_EPS_SCHEDULE: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

struct System<'m> {
    measure: &'m SpectralMeasure,
    psi_p: f64,
    b2_psi_p: f64,
    /// Coefficient of `r` in `D`.
    c_r: f64,
    /// Coefficient of `q` in `D`.
    c_q: f64,
    v_t2: f64,
    s_t2: f64,
    sigma_x2: f64,
    a2_e2t_psi_p: f64,
}

impl<'m> System<'m> {
    fn new(
        measure: &'m SpectralMeasure,
        constants: &ScalarConstants,
        psi_p: f64,
        psi_n: f64,
    ) -> Result<Self> {
        if !(psi_p > 0.0 && psi_n > 0.0) {
            return Err(Error::invalid("psi_p and psi_n must be positive"));
        }
        let e_2t = (-2.0 * constants.t).exp();
        let a2e = constants.a_t * constants.a_t * e_2t;
        Ok(System {
            measure,
            psi_p,
            b2_psi_p: constants.b_t * constants.b_t * psi_p,
            c_r: a2e * psi_p / psi_n,
            c_q: psi_p * constants.v_t2 / psi_n,
            v_t2: constants.v_t2,
            s_t2: constants.s_t2,
            sigma_x2: constants.sigma_x2,
            a2_e2t_psi_p: a2e * psi_p,
        })
    }

    fn d_of(&self, q: Complex64, r: Complex64) -> Complex64 {
        1.0 + self.c_r * r + self.c_q * q
    }

    /// Measure integrals `(s, r)` at frozen `(q, r)`.
    fn integrals(&self, q: Complex64, r: Complex64) -> (Complex64, Complex64) {
        let s_hat = self.b2_psi_p + 1.0 / q;
        let r_hat = self.a2_e2t_psi_p / self.d_of(q, r);
        let mut s_int = Complex64::new(0.0, 0.0);
        let mut r_int = Complex64::new(0.0, 0.0);
        for atom in self.measure.atoms() {
            let denom = s_hat + atom.lambda * r_hat;
            s_int += atom.weight / denom;
            r_int += atom.weight * atom.lambda / denom;
        }
        (s_int, r_int)
    }

    /// Left-hand side of the scalar third equation.
    fn eq3(&self, q: Complex64, r: Complex64, s: Complex64, z: Complex64) -> Complex64 {
        self.psi_p * (self.s_t2 - z) + self.psi_p * self.v_t2 / self.d_of(q, r)
            + (1.0 - self.psi_p) / q
            - s / (q * q)
    }

    /// `∂(eq3)/∂q` at frozen `(r, s)`.
    fn eq3_dq(&self, q: Complex64, r: Complex64, s: Complex64) -> Complex64 {
        let d = self.d_of(q, r);
        -self.psi_p * self.v_t2 * self.c_q / (d * d) - (1.0 - self.psi_p) / (q * q)
            + 2.0 * s / (q * q * q)
    }

    /// Newton on the third equation with `(r, s)` frozen.
    fn newton_q(
        &self,
        q0: Complex64,
        r: Complex64,
        s: Complex64,
        z: Complex64,
        target: f64,
    ) -> Option<Complex64> {
        let mut q = q0;
        for _ in 0..40 {
            let f = self.eq3(q, r, s, z);
            if f.norm() < target {
                return Some(q);
            }
            let df = self.eq3_dq(q, r, s);
            if !df.is_finite() || df.norm() < 1e-300 {
                return None;
            }
            let step = f / df;
            q -= step;
            if !q.is_finite() || q.norm() < 1e-300 {
                return None;
            }
            if step.norm() < 1e-16 * q.norm() {
                break;
            }
        }
        let f = self.eq3(q, r, s, z);
        if f.norm() < target {
            Some(q)
        } else {
            None
        }
    }

    /// Fallback: root of `g q² + (1−ψ_p) q − s = 0` with `D` frozen at the
    /// current iterate, taking the Herglotz (or nearest) branch.
    fn rational_q(
        &self,
        q0: Complex64,
        r: Complex64,
        s: Complex64,
        z: Complex64,
    ) -> Option<Complex64> {
        let g = self.psi_p * (z - self.s_t2) - self.psi_p * self.v_t2 / self.d_of(q0, r);
        if g.norm() < 1e-300 {
            return None;
        }
        let lin = Complex64::new(1.0 - self.psi_p, 0.0);
        let disc = (lin * lin + 4.0 * g * s).sqrt();
        let roots = [(-lin + disc) / (2.0 * g), (-lin - disc) / (2.0 * g)];
        roots
            .into_iter()
            .filter(|root| root.is_finite() && root.norm() > 1e-300)
            .max_by(|a, b| {
                let key = |c: &Complex64| (c.im > 0.0, -(c - q0).norm());
                key(a).partial_cmp(&key(b)).unwrap()
            })
    }
}

/// Solve the three-equation system at one spectral argument.
pub fn solve_stieltjes(
    z: Complex64,
    measure: &SpectralMeasure,
    constants: &ScalarConstants,
    psi_p: f64,
    psi_n: f64,
    opts: &SolverOptions,
    init: Option<(Complex64, Complex64, Complex64)>,
) -> Result<StieltjesSolution> {
    if z.im <= 0.0 {
        return Err(Error::invalid("spectral argument must have Im z > 0"));
    }
    let system = System::new(measure, constants, psi_p, psi_n)?;
    let (mut q, mut r, mut s) = init.unwrap_or_else(|| {
        (
            -1.0 / z,
            -system.sigma_x2 / z,
            -1.0 / z,
        )
    });
    if !(q.is_finite() && r.is_finite() && s.is_finite()) || q.norm() < 1e-300 {
        q = Complex64::new(0.0, 1.0) / z.norm();
        r = -system.sigma_x2 / z;
        s = -1.0 / z;
    }

    let eq3_scale = system.psi_p * (1.0 + z.norm() + system.s_t2);
    let newton_target = 0.01 * opts.tol * eq3_scale;
    let on_branch = |c: &Complex64| c.im > -1e-6 * c.norm();
    let mut theta = opts.theta;
    let mut prev_res = f64::INFINITY;
    let mut oscillations = 0u32;
    let mut restarts = 0u32;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    for iteration in 1..=opts.max_iter {
        iterations = iteration;
        // Newton first; a failed or wrong-branch Newton root falls back to
        // the rational update, whose branch selection prefers Im q > 0.
        let q_new = system
            .newton_q(q, r, s, z, newton_target)
            .filter(on_branch)
            .or_else(|| system.rational_q(q, r, s, z).filter(on_branch));
        match q_new {
            Some(candidate) => {
                q = Complex64::new(candidate.re, candidate.im.max(1e-300));
            }
            None if restarts < 3 => {
                restarts += 1;
                // Progressively higher starting heights reach different
                // Newton basins.
                q = Complex64::new(0.0, 10.0f64.powi(restarts as i32 - 1)) / z.norm();
                r = -system.sigma_x2 / z;
                s = -1.0 / z;
                theta = opts.theta / 2.0f64.powi(restarts as i32);
                continue;
            }
            None => break,
        }

        let (s_int, r_int) = system.integrals(q, r);
        r = (1.0 - theta) * r + theta * r_int;
        s = (1.0 - theta) * s + theta * s_int;

        let (s_chk, r_chk) = system.integrals(q, r);
        let res_s = (s - s_chk).norm() / (1.0 + s.norm());
        let res_r = (r - r_chk).norm() / (1.0 + r.norm());
        let res_q = system.eq3(q, r, s, z).norm() / eq3_scale;
        residual = res_s.max(res_r).max(res_q);
        if residual < opts.tol {
            if q.im <= 0.0 {
                break;
            }
            return Ok(StieltjesSolution {
                z,
                q,
                r,
                s,
                residual,
                iterations: iteration,
            });
        }
        if residual > prev_res {
            oscillations += 1;
            if oscillations >= 2 {
                theta = (theta / 2.0).max(1.0 / 64.0);
                oscillations = 0;
            }
        } else {
            oscillations = 0;
        }
        prev_res = residual;
    }
    Err(Error::Convergence {
        context: format!("three-equation system at z = {z}"),
        residual,
        iterations,
    })
}

/// Solve the density at grid points by ε-continuation with warm starts.
///
/// Each point descends `eps_schedule` starting from the final solution of
/// the previous point in its chunk; chunks of the grid are independent and
/// run in parallel. Failed points are flagged and carry NaN density;
/// converged points inside the ε-broadened point mass are flagged as
/// spike-dominated.
pub fn density_plemelj(
    lambda_grid: &[f64],
    measure: &SpectralMeasure,
    constants: &ScalarConstants,
    psi_p: f64,
    psi_n: f64,
    eps_schedule: &[f64],
) -> Result<DensityCurve> {
    if lambda_grid.is_empty() {
        return Err(Error::invalid("empty spectral grid"));
    }
    if eps_schedule.is_empty() || eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("eps schedule must be strictly descending"));
    }
    let eps_final = *eps_schedule.last().unwrap();
    let delta_weight = super::delta_weight(psi_p, psi_n);

    let chunk_len = lambda_grid.len().div_ceil(8).max(16);
    let chunks: Vec<&[f64]> = lambda_grid.chunks(chunk_len).collect();
    let results: Vec<Vec<(f64, PointFlag)>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len());
            let mut warm: Option<(Complex64, Complex64, Complex64)> = None;
            for &lambda in *chunk {
                match continue_point(
                    lambda,
                    measure,
                    constants,
                    psi_p,
                    psi_n,
                    eps_schedule,
                    warm,
                ) {
                    Ok(solution) => {
                        warm = Some((solution.q, solution.r, solution.s));
                        let rho = solution.q.im / std::f64::consts::PI;
                        let spike = super::delta_lorentzian(
                            lambda,
                            constants.s_t2,
                            delta_weight,
                            eps_final,
                        );
                        let flag = if delta_weight > 0.0 && spike > 0.5 * rho.max(1e-300) {
                            PointFlag::DeltaSpike
                        } else {
                            PointFlag::Ok
                        };
                        out.push((rho, flag));
                    }
                    Err(_) => {
                        warm = None;
                        out.push((f64::NAN, PointFlag::Failed));
                    }
                }
            }
            out
        })
        .collect();

    let mut rho = Vec::with_capacity(lambda_grid.len());
    let mut flags = Vec::with_capacity(lambda_grid.len());
    for chunk in results {
        for (value, flag) in chunk {
            rho.push(value);
            flags.push(flag);
        }
    }
    Ok(DensityCurve {
        lambda_grid: lambda_grid.to_vec(),
        rho,
        epsilon_used: eps_final,
        flags,
    })
}

/// Density at a single λ via a cold-started ε-continuation (used by edge
/// refinement).
pub fn solve_density_at(
    lambda: f64,
    measure: &SpectralMeasure,
    constants: &ScalarConstants,
    psi_p: f64,
    psi_n: f64,
    eps_schedule: &[f64],
) -> Result<f64> {
    let solution = continue_point(lambda, measure, constants, psi_p, psi_n, eps_schedule, None)?;
    Ok(solution.q.im / std::f64::consts::PI)
}

fn continue_point(
    lambda: f64,
    measure: &SpectralMeasure,
    constants: &ScalarConstants,
    psi_p: f64,
    psi_n: f64,
    eps_schedule: &[f64],
    warm: Option<(Complex64, Complex64, Complex64)>,
) -> Result<StieltjesSolution> {
    let opts = SolverOptions::default();
    let mut init = warm;
    let mut last = None;
    for &eps in eps_schedule {
        let z = Complex64::new(lambda, eps);
        let solution = match solve_stieltjes(z, measure, constants, psi_p, psi_n, &opts, init) {
            Ok(solution) => solution,
            // A failed rung restarts the point from high above the axis,
            // where the damped iteration contracts from a cold start.
            Err(_) => descend_to(lambda, eps, measure, constants, psi_p, psi_n, &opts)?,
        };
        init = Some((solution.q, solution.r, solution.s));
        last = Some(solution);
    }
    Ok(last.expect("schedule is non-empty"))
}

/// Homotopy rescue: solve far from the real axis and walk the height down
/// in halvings, warm-starting each rung, until `eps_target` is reached.
fn descend_to(
    lambda: f64,
    eps_target: f64,
    measure: &SpectralMeasure,
    constants: &ScalarConstants,
    psi_p: f64,
    psi_n: f64,
    opts: &SolverOptions,
) -> Result<StieltjesSolution> {
    let mut eps = 4.0f64.max(2.0 * lambda.abs());
    let mut init = None;
    loop {
        let eps_now = eps.max(eps_target);
        let z = Complex64::new(lambda, eps_now);
        let solution = solve_stieltjes(z, measure, constants, psi_p, psi_n, opts, init)?;
        init = Some((solution.q, solution.r, solution.s));
        if eps_now <= eps_target {
            return Ok(solution);
        }
        eps *= 0.5;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::constants::{compute_constants, DEFAULT_QUAD_ORDER};
    use crate::gram::build_gram_gep;
    use crate::measure::SpectralMeasure;
    use crate::model::{Dataset, RfModel};
    use crate::spectrum::{bulk_masses, empirical_spectrum};
    use approx::assert_abs_diff_eq;

    fn tanh_constants(t: f64) -> ScalarConstants {
        compute_constants(&Activation::tanh(), 1.0, t, DEFAULT_QUAD_ORDER).unwrap()
    }

    #[test]
    fn large_z_resolvent_asymptotics() {
        let constants = tanh_constants(0.3);
        let measure = SpectralMeasure::isotropic();
        let z = Complex64::new(1e6, 1.0);
        let solution = solve_stieltjes(
            z,
            &measure,
            &constants,
            8.0,
            4.0,
            &SolverOptions::default(),
            None,
        )
        .unwrap();
        let expected = -1.0 / z;
        assert!((solution.q - expected).norm() < 1e-4 * expected.norm());
        assert!(solution.q.im > 0.0);
        assert!(solution.residual < 1e-10);
    }

    #[test]
    fn herglotz_across_heights() {
        let constants = tanh_constants(0.5);
        let measure = SpectralMeasure::parse("0.5:0.5,1.5:0.5").unwrap();
        for &im in &[1.0, 1e-1, 1e-3] {
            for &re in &[-1.0, 0.05, 0.5, 2.0, 10.0] {
                let solution = solve_stieltjes(
                    Complex64::new(re, im),
                    &measure,
                    &constants,
                    6.0,
                    3.0,
                    &SolverOptions::default(),
                    None,
                )
                .unwrap();
                assert!(
                    solution.q.im > 0.0,
                    "Herglotz violated at z = {re}+{im}i: {:?}",
                    solution.q
                );
            }
        }
    }

    #[test]
    fn density_vanishes_outside_support() {
        // Away from the support the density scales linearly with the final
        // ε, so a deep schedule drives it to zero.
        let constants = tanh_constants(0.3);
        let measure = SpectralMeasure::isotropic();
        let schedule = [1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8];
        let rho = solve_density_at(-1.0, &measure, &constants, 8.0, 4.0, &schedule).unwrap();
        assert!(rho.abs() < 1e-6, "rho(-1) = {rho}");
    }

    #[test]
    fn full_density_matches_gep_realization() {
        // Eigensolver oracle: the analytic density against a single
        // finite-size Gaussian-equivalent realization.
        let t = 0.3;
        let constants = tanh_constants(t);
        let measure = SpectralMeasure::isotropic();
        let (psi_p, psi_n, d) = (8.0, 4.0, 120);
        let (p, n) = (960, 480);

        let model = RfModel::sample(p, d, Activation::tanh(), 2024).unwrap();
        let data = Dataset::sample_gaussian(d, n, &measure, 2025).unwrap();
        let gram = build_gram_gep(&model, &data, &constants, psi_n, 2026).unwrap();
        let eigs = empirical_spectrum(&gram.u.view()).unwrap();

        let grid = crate::spectrum::default_grid(&constants, &measure, psi_p, psi_n, 700).unwrap();
        let curve =
            density_plemelj(&grid, &measure, &constants, psi_p, psi_n, &DEFAULT_EPS_SCHEDULE)
                .unwrap();
        assert!(curve.failure_fraction() < 0.02, "too many failed points");

        // Moment oracle: ∫λᵏ(ρ_bulk + f·δ) vs (1/p)Tr(Uᵏ).
        let f = crate::spectrum::delta_weight(psi_p, psi_n);
        let subtracted: Vec<f64> = curve
            .lambda_grid
            .iter()
            .zip(curve.rho.iter())
            .map(|(&x, &rho)| {
                (rho - crate::spectrum::delta_lorentzian(x, constants.s_t2, f, curve.epsilon_used))
                    .max(0.0)
            })
            .collect();
        for k in 1..=3 {
            let mut analytic = f * constants.s_t2.powi(k);
            for i in 0..curve.lambda_grid.len() - 1 {
                let (x0, x1) = (curve.lambda_grid[i], curve.lambda_grid[i + 1]);
                let (y0, y1) = (subtracted[i], subtracted[i + 1]);
                if y0.is_finite() && y1.is_finite() {
                    analytic += 0.5 * (x0.powi(k) * y0 + x1.powi(k) * y1) * (x1 - x0);
                }
            }
            let empirical = eigs.iter().map(|&e| e.powi(k)).sum::<f64>() / p as f64;
            let rel = (analytic - empirical).abs() / empirical.abs();
            assert!(
                rel < 0.05,
                "moment {k}: analytic {analytic:.5}, empirical {empirical:.5}, rel {rel:.4}"
            );
        }

        // The empirical extremes sit inside (or at the ε-blurred boundary
        // of) the detected analytic support.
        let bulks = bulk_masses(&curve, constants.s_t2, f);
        assert!(!bulks.is_empty());
        let lo = bulks[0].lo;
        let hi = bulks.last().unwrap().hi;
        let e_max = eigs[eigs.len() - 1];
        assert!(e_max < 1.10 * hi && e_max > 0.80 * hi, "max {e_max} vs {hi}");
        // Smallest non-kernel eigenvalue: skip the exact s² block.
        let e_bulk_min = eigs
            .iter()
            .copied()
            .find(|&e| e > constants.s_t2 + 1e-6)
            .unwrap();
        assert!(e_bulk_min > 0.5 * lo, "bulk min {e_bulk_min} vs {lo}");

        // Mass conservation: bulks plus the point mass account for one.
        let bulk_mass: f64 = bulks.iter().map(|b| b.mass).sum();
        assert_abs_diff_eq!(bulk_mass + f, 1.0, epsilon = 0.02);
    }

    #[test]
    fn first_moment_matches_constants() {
        // ∫λρ + f·s² = μ₁² + s² + v² exactly in the asymptotic limit.
        let constants = tanh_constants(0.1);
        let measure = SpectralMeasure::isotropic();
        let (psi_p, psi_n) = (6.0, 3.0);
        let grid = crate::spectrum::default_grid(&constants, &measure, psi_p, psi_n, 900).unwrap();
        let curve =
            density_plemelj(&grid, &measure, &constants, psi_p, psi_n, &DEFAULT_EPS_SCHEDULE)
                .unwrap();
        let f = crate::spectrum::delta_weight(psi_p, psi_n);
        let bulks = bulk_masses(&curve, constants.s_t2, f);
        let first: f64 = bulks.iter().map(|b| b.mass * b.centroid).sum();
        let expected = constants.mu1_sq() + constants.bulk_variance();
        assert_abs_diff_eq!(
            (first + f * constants.s_t2) / expected,
            1.0,
            epsilon = 0.02
        );
    }

    #[test]
    fn two_atom_measure_keeps_bulk1_moves_bulk2() {
        // Measure-independence of the noise bulk is asymptotic: the residual
        // coupling decays with the ψ scale (3.5% at ψ_p=24, ψ_n=3 down to
        // 0.2% at ψ_p=256, ψ_n=16); at (64, 8) it is within 1%.
        let constants = tanh_constants(0.2);
        let iso = SpectralMeasure::isotropic();
        let two = SpectralMeasure::parse("0.5:0.5,1.5:0.5").unwrap();
        let (psi_p, psi_n) = (64.0, 8.0);
        let (b1_lo, b1_hi) = crate::spectrum::bulk1_edges(&constants, psi_p, psi_n).unwrap();

        // Sample the noise bulk interior: identical density for both data
        // spectra (the first bulk does not see the data covariance).
        let grid: Vec<f64> = (0..40)
            .map(|i| b1_lo + (b1_hi - b1_lo) * (0.2 + 0.6 * i as f64 / 39.0))
            .collect();
        let c_iso =
            density_plemelj(&grid, &iso, &constants, psi_p, psi_n, &DEFAULT_EPS_SCHEDULE).unwrap();
        let c_two =
            density_plemelj(&grid, &two, &constants, psi_p, psi_n, &DEFAULT_EPS_SCHEDULE).unwrap();
        let peak = c_iso.rho.iter().cloned().fold(0.0f64, f64::max);
        for i in 0..grid.len() {
            if c_iso.rho[i] > 0.2 * peak {
                let rel = (c_iso.rho[i] - c_two.rho[i]).abs() / c_iso.rho[i];
                assert!(rel < 0.01, "bulk-1 changed at λ={}: rel {rel}", grid[i]);
            }
        }

        // The population bulk differs: compare at the isotropic bulk-2
        // centroid.
        let edges = crate::spectrum::bs_support_edges(&iso, &constants, psi_p).unwrap();
        let mid = 0.5 * (edges[0].0 + edges[edges.len() - 1].1);
        let rho_iso =
            solve_density_at(mid, &iso, &constants, psi_p, psi_n, &DEFAULT_EPS_SCHEDULE).unwrap();
        let rho_two =
            solve_density_at(mid, &two, &constants, psi_p, psi_n, &DEFAULT_EPS_SCHEDULE).unwrap();
        assert!(
            (rho_iso - rho_two).abs() > 0.05 * rho_iso.abs().max(rho_two.abs()),
            "bulk-2 unexpectedly identical: {rho_iso} vs {rho_two}"
        );
    }
}
