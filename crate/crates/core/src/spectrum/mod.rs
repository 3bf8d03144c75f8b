//! Spectral theory of the training Gram matrix.
//!
//! The resolvent trace `q(z) = (1/p)·Tr(U − zI)⁻¹` of the Gaussian-equivalent
//! Gram matrix satisfies a closed three-equation self-consistent system
//! together with the auxiliary traces `r(z)` and `s(z)` (weighted over the
//! data spectral measure); [`solve_stieltjes`] solves it and
//! [`density_plemelj`] inverts `q` to the spectral density
//! `ρ(λ) = lim_{ε→0⁺} Im q(λ + iε)/π`.
//!
//! In the strongly overparametrized regime the density decomposes into
//!
//! ```text
//! ρ = f·δ(λ − s_t²) + (ψ_n/ψ_p)·ρ₁ + (1/ψ_p)·ρ₂,   f = 1 − (1+ψ_n)/ψ_p,
//! ```
//!
//! where the point mass is the exact kernel of the Gram matrix outside the
//! span of the data and feature subspaces (dimension `p − n − d` at finite
//! size), `ρ₁` is a noise bulk with closed-form edges
//! `s_t² + v_t²(1 ± √(ψ_p/ψ_n))²`, and `ρ₂` is the spectrum of the
//! population matrix `Ũ`, governed by a Bai–Silverstein fixed point and
//! independent of `ψ_n`. The asymptotic pieces live in [`asymptotics`];
//! the memorization and generalization timescales are
//! `τ_mem = ψ_p/(Δ_t·λ₋^{ρ₁})` and `τ_gen = ψ_p/(Δ_t·λ₋^{ρ₂})`.
//!
//! The delta peak is always located analytically at `s_t²`; ε-broadened
//! grid points that it dominates are flagged, and bulk masses subtract its
//! Lorentzian tail `f·(ε/π)/((λ−s_t²)² + ε²)` before integrating.

pub mod asymptotics;
pub mod stieltjes;

pub use asymptotics::{
    bs_support_edges, bulk1_edges, delta_weight, population_atoms, rho2_density, timescales,
    timescales_for_measure,
};
pub use stieltjes::{density_plemelj, solve_density_at, solve_stieltjes, DEFAULT_EPS_SCHEDULE};

use crate::constants::ScalarConstants;
use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::SpectralMeasure;
use ndarray::{Array1, ArrayView2};
use num_complex::Complex64;
use serde::Serialize;

/// Options of the self-consistent solvers.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative residual target on all equations.
    pub tol: f64,
    /// Maximum outer iterations per point.
    pub max_iter: usize,
    /// Initial damping of the auxiliary-trace updates.
    pub theta: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 10_000,
            theta: 0.5,
        }
    }
}

/// A converged solution of the three-equation system at one `z`.
#[derive(Debug, Clone, Copy)]
pub struct StieltjesSolution {
    /// Spectral argument, `Im z > 0`.
    pub z: Complex64,
    /// Normalized resolvent trace; `Im q > 0` (Herglotz).
    pub q: Complex64,
    /// Data-weighted auxiliary trace.
    pub r: Complex64,
    /// Unweighted auxiliary trace.
    pub s: Complex64,
    /// Largest relative residual of the three equations.
    pub residual: f64,
    /// Outer iterations consumed.
    pub iterations: usize,
}

/// Status of one grid point of a density curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PointFlag {
    /// Converged bulk value.
    Ok,
    /// Converged, but dominated by the ε-broadened delta peak; excluded
    /// from bulk masses.
    DeltaSpike,
    /// Solver did not converge; the density is NaN, never interpolated.
    Failed,
}

/// A spectral density sampled on a grid at finite ε.
#[derive(Debug, Clone)]
pub struct DensityCurve {
    /// Sample abscissae.
    pub lambda_grid: Vec<f64>,
    /// `Im q(λ + iε)/π`; NaN where the solver failed.
    pub rho: Vec<f64>,
    /// Final ε of the continuation.
    pub epsilon_used: f64,
    /// Per-point status.
    pub flags: Vec<PointFlag>,
}

impl DensityCurve {
    /// Fraction of grid points that failed to converge.
    pub fn failure_fraction(&self) -> f64 {
        let failed = self.flags.iter().filter(|f| **f == PointFlag::Failed).count();
        failed as f64 / self.flags.len().max(1) as f64
    }
}

/// One detected bulk of a density curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BulkRegion {
    /// Lower support estimate (grid resolution).
    pub lo: f64,
    /// Upper support estimate (grid resolution).
    pub hi: f64,
    /// Trapezoid mass of the bulk (delta tail subtracted).
    pub mass: f64,
    /// Mass-weighted center of the bulk.
    pub centroid: f64,
}

/// Parameter regime of the two-bulk decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// `ψ_p > ψ_n`: more features than data; the spectrum carries the
    /// kernel point mass once `ψ_p ≥ ψ_n + 1`.
    Overparametrized,
    /// `ψ_n ≥ ψ_p`: the point mass is absent.
    Underparametrized,
}

/// Closed-form summary of the Gram spectrum and its timescales.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    /// Location of the kernel point mass (`s_t²`).
    pub delta_location: f64,
    /// Weight of the point mass, `max(0, 1 − (1+ψ_n)/ψ_p)`.
    pub delta_weight: f64,
    /// Closed-form edges of the noise bulk `ρ₁`.
    pub bulk1_edges: (f64, f64),
    /// Support extremes of the population bulk `ρ₂` (Bai–Silverstein).
    pub bulk2_edges: (f64, f64),
    /// Generalization timescale `ψ_p/(Δ_t·λ₋^{ρ₂})`.
    pub tau_gen: f64,
    /// Memorization timescale `ψ_p/(Δ_t·λ₋^{ρ₁})`.
    pub tau_mem: f64,
    /// Two-bulk regime classification.
    pub regime: Regime,
}

/// Assemble the closed-form spectrum summary.
pub fn spectrum_summary(
    constants: &ScalarConstants,
    measure: &SpectralMeasure,
    psi_p: f64,
    psi_n: f64,
) -> Result<SpectrumSummary> {
    let (b1_lo, b1_hi) = bulk1_edges(constants, psi_p, psi_n)?;
    let edges = bs_support_edges(measure, constants, psi_p)?;
    let bulk2 = (edges[0].0, edges[edges.len() - 1].1);
    let (tau_gen, tau_mem) = timescales_for_measure(constants, measure, psi_p, psi_n)?;
    let regime = if psi_p > psi_n {
        Regime::Overparametrized
    } else {
        Regime::Underparametrized
    };
    Ok(SpectrumSummary {
        delta_location: constants.s_t2,
        delta_weight: delta_weight(psi_p, psi_n),
        bulk1_edges: (b1_lo, b1_hi),
        bulk2_edges: bulk2,
        tau_gen,
        tau_mem,
        regime,
    })
}

/// Full eigenvalue list of a symmetric matrix, ascending.
pub fn empirical_spectrum(u: &ArrayView2<f64>) -> Result<Array1<f64>> {
    if u.nrows() != u.ncols() {
        return Err(Error::invalid("matrix must be square"));
    }
    let scale = u.iter().fold(1.0f64, |acc, &x| acc.max(x.abs()));
    let mut asym = 0.0f64;
    for i in 0..u.nrows() {
        for j in (i + 1)..u.ncols() {
            asym = asym.max((u[[i, j]] - u[[j, i]]).abs());
        }
    }
    if asym > 1e-8 * scale {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    linalg::sym_eigenvalues(u)
}

/// The Lorentzian tail of the ε-broadened point mass.
pub fn delta_lorentzian(lambda: f64, location: f64, weight: f64, eps: f64) -> f64 {
    weight * (eps / std::f64::consts::PI) / ((lambda - location).powi(2) + eps * eps)
}

/// Detect bulk regions of a density curve and integrate their masses.
///
/// The ε-broadened point mass at `delta_location` is subtracted analytically
/// before thresholding at `10⁻³·max ρ`; failed points split regions rather
/// than being interpolated. Because the two bulks of the overparametrized
/// decomposition can differ in height by orders of magnitude, the threshold
/// rule is applied iteratively: each pass removes its detected support from
/// consideration and re-applies the rule to the tallest remaining
/// structure, until the continuum mass `1 − f` is accounted for (±0.5%) or
/// four passes have run. Spike-dominated points never set the threshold.
/// Reported edges carry the grid resolution as their uncertainty.
pub fn bulk_masses(
    curve: &DensityCurve,
    delta_location: f64,
    delta_weight: f64,
) -> Vec<BulkRegion> {
    let eps = curve.epsilon_used;
    let n = curve.lambda_grid.len();
    let subtracted: Vec<f64> = (0..n)
        .map(|i| match curve.flags[i] {
            PointFlag::Failed => f64::NAN,
            _ => (curve.rho[i]
                - delta_lorentzian(curve.lambda_grid[i], delta_location, delta_weight, eps))
            .max(0.0),
        })
        .collect();
    let continuum = (1.0 - delta_weight).max(0.0);

    let mass_of = |s: usize, e: usize| -> (f64, f64) {
        let mut mass = 0.0;
        let mut first = 0.0;
        for i in s..e {
            let (x0, x1) = (curve.lambda_grid[i], curve.lambda_grid[i + 1]);
            let (y0, y1) = (subtracted[i], subtracted[i + 1]);
            mass += 0.5 * (y0 + y1) * (x1 - x0);
            first += 0.5 * (x0 * y0 + x1 * y1) * (x1 - x0);
        }
        (mass, first)
    };

    let mut blocked = vec![false; n];
    let mut regions: Vec<(usize, usize)> = Vec::new();
    for _pass in 0..4 {
        let max_rho = (0..n)
            .filter(|&i| !blocked[i] && curve.flags[i] == PointFlag::Ok)
            .map(|i| subtracted[i])
            .filter(|v| v.is_finite())
            .fold(0.0f64, f64::max);
        if max_rho <= 0.0 {
            break;
        }
        let threshold = 1e-3 * max_rho;
        let above: Vec<bool> = (0..n)
            .map(|i| !blocked[i] && subtracted[i].is_finite() && subtracted[i] > threshold)
            .collect();

        // Contiguous runs of this pass join the region set.
        let mut start = None;
        for i in 0..=n {
            match (i < n && above[i], start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    regions.push((s, i - 1));
                    start = None;
                }
                _ => {}
            }
        }
        for i in 0..n {
            if above[i] {
                blocked[i] = true;
            }
        }

        // Merge regions (across passes too) over gaps of at most two
        // convergent grid points.
        regions.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::new();
        for &(s, e) in &regions {
            let joined = merged.last().is_some_and(|&(_, pe)| {
                s <= pe + 3 && !(pe + 1..s).any(|i| curve.flags[i] == PointFlag::Failed)
            });
            if joined {
                let last = merged.last_mut().unwrap();
                last.1 = last.1.max(e);
            } else {
                merged.push((s, e));
            }
        }
        regions = merged;

        let accounted: f64 = regions.iter().map(|&(s, e)| mass_of(s, e).0).sum();
        if accounted >= 0.995 * continuum {
            break;
        }
    }

    regions
        .into_iter()
        .filter(|&(s, e)| e > s + 1)
        .map(|(s, e)| {
            let (mass, first) = mass_of(s, e);
            BulkRegion {
                lo: curve.lambda_grid[s],
                hi: curve.lambda_grid[e],
                mass,
                centroid: if mass > 0.0 { first / mass } else { f64::NAN },
            }
        })
        .filter(|region| region.mass > 1e-5)
        .collect()
}

/// Refine a support edge by bisection of `ρ(λ)` across a threshold.
///
/// `outside` and `inside` bracket the edge (`ρ(outside) < threshold ≤
/// ρ(inside)`); the bracket is halved until it is narrower than `tol_lambda`.
pub fn refine_edge(
    mut rho_at: impl FnMut(f64) -> Result<f64>,
    mut outside: f64,
    mut inside: f64,
    threshold: f64,
    tol_lambda: f64,
) -> Result<f64> {
    for _ in 0..60 {
        if (inside - outside).abs() <= tol_lambda {
            break;
        }
        let mid = 0.5 * (inside + outside);
        if rho_at(mid)? > threshold {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    Ok(0.5 * (inside + outside))
}

/// Default λ grid for density sweeps.
///
/// The noise bulk is orders of magnitude narrower than the population bulk,
/// so a single linear grid cannot resolve both; the default is piecewise:
/// dense segments across the predicted spans of each bulk (40% of the
/// points each), a sparse bridge between them, and a tail reaching safely
/// above the support (the finite-`ψ` solution widens the asymptotic
/// population bulk, hence the 1.8× headroom). Degenerate or overlapping
/// segments collapse away.
pub fn default_grid(
    constants: &ScalarConstants,
    measure: &SpectralMeasure,
    psi_p: f64,
    psi_n: f64,
    count: usize,
) -> Result<Vec<f64>> {
    let (b1_lo, b1_hi) = bulk1_edges(constants, psi_p, psi_n)?;
    let edges = bs_support_edges(measure, constants, psi_p)?;
    let (b2_lo, b2_hi) = (edges[0].0, edges[edges.len() - 1].1);
    let lo = (0.5 * constants.s_t2).max(0.0);
    let hi = 1.8 * b2_hi.max(b1_hi);

    // Breakpoints, padded and clamped monotone: [lo, a] covers the noise
    // bulk, [b, c] the population bulk.
    let a = (b1_hi + 0.5 * (b1_hi - b1_lo).max(0.1 * b1_hi)).clamp(lo, hi);
    let b = (b2_lo - 0.2 * (b2_lo - a).max(0.0)).clamp(a, hi);
    let c = (1.15 * b2_hi).clamp(b, hi);
    let segments = [(lo, a, 0.4), (a, b, 0.1), (b, c, 0.4), (c, hi, 0.1)];

    let count = count.max(8);
    let mut grid = Vec::with_capacity(count + 4);
    for &(seg_lo, seg_hi, weight) in &segments {
        if seg_hi <= seg_lo {
            continue;
        }
        let n = ((count as f64 * weight).round() as usize).max(2);
        for i in 0..n {
            grid.push(seg_lo + (seg_hi - seg_lo) * i as f64 / n as f64);
        }
    }
    grid.push(hi);
    grid.dedup_by(|x, y| (*x - *y).abs() < 1e-12 * hi.max(1.0));
    Ok(grid)
}
