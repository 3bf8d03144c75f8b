//! `(ψ_n, ψ_p)` phase sweep of the generalization gap.
//!
//! Each grid cell samples its own model and data, builds the
//! Gaussian-equivalent Gram pair, and evaluates `L_gen = L_test − L_train`
//! along the closed-form flow at a few `τ` checkpoints — one
//! eigendecomposition per cell, no iterative training. Cells are
//! independent: cell `(i, j)` draws every random object from the stream
//! derived from `(seed, i, j)`, so the grid is reproducible regardless of
//! how the worker pool schedules it. A failing cell is recorded and marked
//! missing (NaN / JSON `null`); the sweep continues.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::derive_seed;

use super::config::{GramMethod, PhaseParams};
use super::runners::{closed_form_curve, CellSpec};

/// Generalization-gap values on a `(ψ_n, ψ_p, τ)` grid.
///
/// `l_gen[i][j][k]` is the gap at `psi_n_values[i]`, `psi_p_values[j]`,
/// `tau_checkpoints[k]`; missing cells hold NaN. Up to estimator
/// tolerance the gap is nonnegative everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    /// Sample-ratio axis.
    pub psi_n_values: Vec<f64>,
    /// Feature-ratio axis.
    pub psi_p_values: Vec<f64>,
    /// Rescaled-time checkpoints.
    pub tau_checkpoints: Vec<f64>,
    /// Gap values, indexed `[ψ_n][ψ_p][τ]`.
    pub l_gen: Vec<Vec<Vec<f64>>>,
}

impl PhaseGrid {
    /// Assemble a grid, checking that the value array matches the axes.
    pub fn new(
        psi_n_values: Vec<f64>,
        psi_p_values: Vec<f64>,
        tau_checkpoints: Vec<f64>,
        l_gen: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if l_gen.len() != psi_n_values.len()
            || l_gen.iter().any(|plane| {
                plane.len() != psi_p_values.len()
                    || plane.iter().any(|row| row.len() != tau_checkpoints.len())
            })
        {
            return Err(Error::DimensionMismatch(
                "phase grid values do not match the axis lists".to_owned(),
            ));
        }
        Ok(PhaseGrid {
            psi_n_values,
            psi_p_values,
            tau_checkpoints,
            l_gen,
        })
    }

    /// Gap at `(ψ_n index, ψ_p index, τ index)`; NaN when missing.
    pub fn value(&self, i_n: usize, i_p: usize, i_tau: usize) -> f64 {
        self.l_gen[i_n][i_p][i_tau]
    }

    /// Check `l_gen ≥ −tolerance` on every present cell.
    pub fn check_nonnegative(&self, tolerance: f64) -> Result<()> {
        for (i_n, plane) in self.l_gen.iter().enumerate() {
            for (i_p, row) in plane.iter().enumerate() {
                for (i_tau, &value) in row.iter().enumerate() {
                    if value < -tolerance {
                        return Err(Error::numerical(format!(
                            "negative gap {value:.3e} at psi_n = {}, psi_p = {}, tau = {}",
                            self.psi_n_values[i_n], self.psi_p_values[i_p],
                            self.tau_checkpoints[i_tau]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Smallest `ψ_n` whose gap at `(ψ_p index, τ index)` is below
    /// `delta` — the transition line of the phase diagram. `None` when no
    /// row generalizes at that column.
    pub fn smallest_generalizing_psi_n(
        &self,
        i_p: usize,
        i_tau: usize,
        delta: f64,
    ) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i_n, &psi_n) in self.psi_n_values.iter().enumerate() {
            let value = self.value(i_n, i_p, i_tau);
            if value.is_nan() || value >= delta {
                continue;
            }
            best = Some(match best {
                Some(current) => current.min(psi_n),
                None => psi_n,
            });
        }
        best
    }

    /// CSV rows `(psi_n, psi_p, tau, l_gen)`, row-major over the grid.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let mut rows =
            Vec::with_capacity(self.psi_n_values.len() * self.psi_p_values.len() * self.tau_checkpoints.len());
        for (i_n, &psi_n) in self.psi_n_values.iter().enumerate() {
            for (i_p, &psi_p) in self.psi_p_values.iter().enumerate() {
                for (i_tau, &tau) in self.tau_checkpoints.iter().enumerate() {
                    rows.push(vec![psi_n, psi_p, tau, self.value(i_n, i_p, i_tau)]);
                }
            }
        }
        rows
    }

    /// Column names of [`PhaseGrid::rows`].
    pub const COLUMNS: [&'static str; 4] = ["psi_n", "psi_p", "tau", "l_gen"];
}

/// One failed grid cell, kept for the JSON summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    /// Sample ratio of the failed cell.
    pub psi_n: f64,
    /// Feature ratio of the failed cell.
    pub psi_p: f64,
    /// The propagated error message.
    pub error: String,
}

/// Result of a phase sweep: the grid plus any per-cell failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseOutcome {
    /// The evaluated grid; failed cells hold NaN.
    pub grid: PhaseGrid,
    /// Failures in cell order (empty on a clean sweep).
    pub failures: Vec<CellFailure>,
}

/// Evaluate the generalization gap on the full `(ψ_n, ψ_p)` grid.
///
/// Cells run on the shared worker pool; results are assembled in grid
/// order, so the outcome does not depend on scheduling.
pub fn phase_sweep(params: &PhaseParams, seed: u64) -> Result<PhaseOutcome> {
    params.validate()?;
    let cells: Vec<(usize, usize)> = (0..params.psi_n_values.len())
        .flat_map(|i_n| (0..params.psi_p_values.len()).map(move |i_p| (i_n, i_p)))
        .collect();

    let results: Vec<((usize, usize), std::result::Result<Vec<f64>, String>)> = cells
        .into_par_iter()
        .map(|(i_n, i_p)| {
            let spec = CellSpec {
                d: params.d,
                psi_p: params.psi_p_values[i_p],
                psi_n: params.psi_n_values[i_n],
                t: params.t,
                activation: &params.activation,
                measure: &params.measure,
                gram: GramMethod::Gep,
                n_noise: 0,
                with_score: false,
                seed: derive_seed(seed, &[i_n as u64, i_p as u64]),
            };
            let outcome = closed_form_curve(&spec, &params.tau_checkpoints)
                .map(|curve| curve.l_gen)
                .map_err(|err| err.to_string());
            ((i_n, i_p), outcome)
        })
        .collect();

    let n_tau = params.tau_checkpoints.len();
    let mut l_gen =
        vec![vec![vec![f64::NAN; n_tau]; params.psi_p_values.len()]; params.psi_n_values.len()];
    let mut failures = Vec::new();
    for ((i_n, i_p), outcome) in results {
        match outcome {
            Ok(values) => l_gen[i_n][i_p] = values,
            Err(error) => failures.push(CellFailure {
                psi_n: params.psi_n_values[i_n],
                psi_p: params.psi_p_values[i_p],
                error,
            }),
        }
    }

    let grid = PhaseGrid::new(
        params.psi_n_values.clone(),
        params.psi_p_values.clone(),
        params.tau_checkpoints.clone(),
        l_gen,
    )?;
    Ok(PhaseOutcome { grid, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_grid() -> PhaseGrid {
        PhaseGrid::new(
            vec![2.0, 8.0],
            vec![4.0],
            vec![1e3, 1e4],
            vec![
                vec![vec![0.4, 0.6]],
                vec![vec![0.001, 0.02]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn grid_dimensions_are_checked() {
        let err = PhaseGrid::new(
            vec![1.0, 2.0],
            vec![1.0],
            vec![1e3],
            vec![vec![vec![0.0]]],
        )
        .unwrap_err();
        assert!(err.to_string().contains("axis lists"));
    }

    #[test]
    fn nonnegativity_check_flags_violations() {
        let grid = demo_grid();
        grid.check_nonnegative(1e-9).unwrap();
        let mut bad = grid.clone();
        bad.l_gen[0][0][0] = -0.5;
        assert!(bad.check_nonnegative(1e-9).is_err());
    }

    #[test]
    fn transition_line_picks_smallest_generalizing_row() {
        let grid = demo_grid();
        // At τ = 1e3 only ψ_n = 8 is below δ = 0.01.
        assert_eq!(grid.smallest_generalizing_psi_n(0, 0, 0.01), Some(8.0));
        // At τ = 1e4 no row generalizes at δ = 0.01.
        assert_eq!(grid.smallest_generalizing_psi_n(0, 1, 0.01), None);
        // NaN cells never count as generalizing.
        let mut holed = grid;
        holed.l_gen[1][0][0] = f64::NAN;
        assert_eq!(holed.smallest_generalizing_psi_n(0, 0, 0.01), None);
    }

    #[test]
    fn rows_enumerate_grid_in_order() {
        let grid = demo_grid();
        let rows = grid.rows();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0], vec![2.0, 4.0, 1e3, 0.4]);
        assert_eq!(rows[3], vec![8.0, 4.0, 1e4, 0.02]);
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        // ψ_n = 0.01 at d = 4 rounds to zero samples and must fail, while
        // the other row still produces numbers.
        let params = PhaseParams {
            d: 4,
            t: 0.2,
            psi_n_values: vec![0.01, 2.0],
            psi_p_values: vec![2.0],
            tau_checkpoints: vec![10.0],
            activation: "tanh".to_owned(),
            measure: "1:1".to_owned(),
        };
        let outcome = phase_sweep(&params, 3).unwrap();
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].psi_n, 0.01);
        assert!(outcome.grid.value(0, 0, 0).is_nan());
        assert!(outcome.grid.value(1, 0, 0).is_finite());
    }
}
