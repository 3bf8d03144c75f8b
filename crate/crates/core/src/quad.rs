//! Gauss–Hermite quadrature for standard Gaussian expectations.
//!
//! The rules integrate against the *probabilists'* weight
//! `exp(-x²/2)/√(2π)`, so `∫ f dμ = E[f(Z)]` for `Z ~ N(0,1)`. Nodes and
//! weights come from the Golub–Welsch construction: the order-`n` rule is
//! the eigendecomposition of the `n×n` Jacobi matrix of the probabilists'
//! Hermite recurrence (zero diagonal, off-diagonal `√k`), with the weight of
//! node `k` equal to the squared first component of its eigenvector.
//!
//! An order-`n` rule is exact for polynomials up to degree `2n − 1`; the
//! scalar-constant integrands in this crate are bounded analytic functions
//! of one or two Gaussian variables, for which convergence in the order is
//! superalgebraic.

use crate::error::{Error, Result};
use crate::linalg;
use ndarray::Array2;

/// A Gauss–Hermite rule: paired nodes and weights for `E[f(Z)]`, `Z ~ N(0,1)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Build the rule of the given order (number of nodes, at least 2).
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::invalid(format!(
                "Gauss-Hermite order must be at least 2, got {order}"
            )));
        }
        let mut jacobi = Array2::<f64>::zeros((order, order));
        for k in 1..order {
            let b = (k as f64).sqrt();
            jacobi[[k - 1, k]] = b;
            jacobi[[k, k - 1]] = b;
        }
        let eig = linalg::sym_eigen_into(jacobi)?;
        let mut nodes: Vec<f64> = eig.values.to_vec();
        let mut weights: Vec<f64> = (0..order).map(|k| eig.basis_t[[k, 0]].powi(2)).collect();

        // The measure is symmetric, so enforce the ±x pairing exactly; this
        // makes odd integrands vanish identically rather than to rounding.
        let n = order;
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -x;
            nodes[j] = x;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        // Normalize the total mass to exactly one.
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(GaussHermite { nodes, weights })
    }

    /// Number of nodes.
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Quadrature nodes in ascending order.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights aligned with [`Self::nodes`]; positive, summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// One-dimensional expectation `E[f(Z)]`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Two-dimensional expectation `E[f(U, V)]` for independent standard
    /// Gaussians, via the tensor-product rule.
    pub fn integrate_2d(&self, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        let mut total = 0.0;
        for (&u, &wu) in self.nodes.iter().zip(&self.weights) {
            let mut inner = 0.0;
            for (&v, &wv) in self.nodes.iter().zip(&self.weights) {
                inner += wv * f(u, v);
            }
            total += wu * inner;
        }
        total
    }
}
