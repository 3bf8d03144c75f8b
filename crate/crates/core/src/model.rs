//! The random-feature score model and Gaussian datasets.
//!
//! The score model is `s(x) = (A/√p) σ(W x/√d)` with a frozen first layer
//! `W ∈ ℝ^{p×d}` of i.i.d. standard Gaussians and a trainable read-out
//! `A ∈ ℝ^{d×p}`. Datasets are `n` i.i.d. Gaussian columns with diagonal
//! covariance materialized from a [`SpectralMeasure`]; diagonality costs no
//! generality because the law of `W` is rotation invariant.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::measure::SpectralMeasure;
use crate::seeding;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

/// Sample the frozen first layer: `p × d` i.i.d. standard Gaussians.
pub fn sample_weights(p: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeding::rng_stream(seed, &[0x57]);
    Array2::from_shape_simple_fn((p, d), || rng.sample::<f64, _>(StandardNormal))
}

/// Two-layer random-feature score model.
#[derive(Debug, Clone)]
pub struct RfModel {
    w: Array2<f64>,
    /// Trainable read-out, `d × p`.
    pub a: Array2<f64>,
    activation: Activation,
}

impl RfModel {
    /// Wrap an explicit first layer with a zero-initialized read-out.
    pub fn new(w: Array2<f64>, activation: Activation) -> Result<Self> {
        let (p, d) = w.dim();
        if p == 0 || d == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        let a = Array2::zeros((d, p));
        Ok(RfModel { w, a, activation })
    }

    /// Sample a fresh model with `W ~ N(0,1)^{p×d}` and zero read-out.
    pub fn sample(p: usize, d: usize, activation: Activation, seed: u64) -> Result<Self> {
        Self::new(sample_weights(p, d, seed), activation)
    }

    /// Number of features `p`.
    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    /// Ambient dimension `d`.
    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    /// Frozen first layer.
    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    /// The activation in use.
    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    /// Replace the read-out; shape must stay `d × p`.
    pub fn set_readout(&mut self, a: Array2<f64>) -> Result<()> {
        if a.dim() != (self.d(), self.p()) {
            return Err(Error::DimensionMismatch(format!(
                "read-out must be {}x{}, got {}x{}",
                self.d(),
                self.p(),
                a.nrows(),
                a.ncols()
            )));
        }
        self.a = a;
        Ok(())
    }

    /// Feature map `σ(W X / √d)` for a batch of columns `X ∈ ℝ^{d×m}`.
    pub fn features(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.d() {
            return Err(Error::DimensionMismatch(format!(
                "input columns live in dimension {}, model expects {}",
                x.nrows(),
                self.d()
            )));
        }
        let mut pre = self.w.dot(x);
        pre /= (self.d() as f64).sqrt();
        self.activation.apply_inplace(pre.view_mut());
        Ok(pre)
    }

    /// Score `s(X) = (A/√p) σ(W X/√d)`, column-wise.
    pub fn score_batch(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let phi = self.features(x)?;
        Ok(self.a.dot(&phi) / (self.p() as f64).sqrt())
    }
}

/// An i.i.d. Gaussian dataset with known diagonal covariance.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Array2<f64>,
    requested: SpectralMeasure,
    realized: SpectralMeasure,
}

impl Dataset {
    /// Sample `n` columns in dimension `d` with covariance spectrum drawn
    /// from `measure` (multiplicities by largest remainder).
    pub fn sample_gaussian(
        d: usize,
        n: usize,
        measure: &SpectralMeasure,
        seed: u64,
    ) -> Result<Dataset> {
        if d == 0 || n == 0 {
            return Err(Error::invalid("dataset dimensions must be positive"));
        }
        let eigs = measure.eigenvalues(d);
        let scales: Vec<f64> = eigs.iter().map(|&l| l.sqrt()).collect();
        let mut rng = seeding::rng_stream(seed, &[0xDA7A]);
        let mut x = Array2::zeros((d, n));
        for mut col in x.columns_mut() {
            for (value, &scale) in col.iter_mut().zip(&scales) {
                *value = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Dataset {
            x,
            requested: measure.clone(),
            realized: measure.realized(d)?,
        })
    }

    /// Wrap existing columns with a declared covariance spectrum.
    pub fn from_columns(x: Array2<f64>, covariance: SpectralMeasure) -> Result<Dataset> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("dataset dimensions must be positive"));
        }
        let realized = covariance.realized(x.nrows())?;
        Ok(Dataset {
            x,
            requested: covariance,
            realized,
        })
    }

    /// Data matrix, one point per column (`d × n`).
    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    /// Ambient dimension.
    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    /// Number of points.
    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    /// The covariance spectrum that was requested.
    pub fn covariance(&self) -> &SpectralMeasure {
        &self.requested
    }

    /// The spectrum actually materialized after integer rounding.
    pub fn realized_covariance(&self) -> &SpectralMeasure {
        &self.realized
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn weights_are_standardized_and_deterministic() {
        let w = sample_weights(200, 50, 11);
        let mean = w.sum() / w.len() as f64;
        let var = w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64 - mean * mean;
        // 10,000 samples: standard error ~ 0.01 for the mean, ~0.014 for var.
        assert_abs_diff_eq!(mean, 0.0, epsilon = 0.05);
        assert_abs_diff_eq!(var, 1.0, epsilon = 0.08);
        assert_eq!(w, sample_weights(200, 50, 11));
        assert_ne!(w, sample_weights(200, 50, 12));
    }

    #[test]
    fn score_matches_hand_computation() {
        // Tiny case worked by hand: p = 2, d = 2.
        let w = array![[1.0, 0.0], [0.0, -2.0]];
        let mut model = RfModel::new(w, Activation::tanh()).unwrap();
        model
            .set_readout(array![[1.0, 2.0], [0.0, 1.0]])
            .unwrap();
        let x = array![[0.5], [1.0]];
        let s = model.score_batch(&x.view()).unwrap();
        let sqrt2 = 2.0f64.sqrt();
        let phi0 = (0.5 / sqrt2).tanh();
        let phi1 = (-2.0 / sqrt2).tanh();
        assert_abs_diff_eq!(s[[0, 0]], (phi0 + 2.0 * phi1) / sqrt2, epsilon = 1e-14);
        assert_abs_diff_eq!(s[[1, 0]], phi1 / sqrt2, epsilon = 1e-14);
    }

    #[test]
    fn feature_power_matches_constants() {
        // E[σ(w·x/√d)²] → ‖σ‖² for x noised at t... here at t ↓ 0 the
        // feature power equals E[σ(σ_x z)²]; check against quadrature.
        let model = RfModel::sample(600, 80, Activation::tanh(), 5).unwrap();
        let data = Dataset::sample_gaussian(80, 50, &SpectralMeasure::isotropic(), 6).unwrap();
        let phi = model.features(&data.x()).unwrap();
        let power = phi.iter().map(|v| v * v).sum::<f64>() / phi.len() as f64;
        let rule = crate::quad::GaussHermite::new(120).unwrap();
        let expect = rule.integrate(|z| z.tanh().powi(2));
        // Finite d=80 bias is O(1/d) plus MC noise over 30k features.
        assert_abs_diff_eq!(power, expect, epsilon = 0.02);
    }

    #[test]
    fn dataset_covariance_matches_measure() {
        let measure = SpectralMeasure::new(vec![(1.0, 0.5), (3.0, 0.5)]).unwrap();
        let data = Dataset::sample_gaussian(4, 60_000, &measure, 13).unwrap();
        // Per-row sample variances track the assigned eigenvalues (rows 0-1:
        // λ=1, rows 2-3: λ=3); standard error ~ λ√(2/n) ≈ 0.8% of λ.
        for row in 0..4 {
            let r = data.x().row(row).to_owned();
            let var = r.dot(&r) / r.len() as f64;
            let expect = if row < 2 { 1.0 } else { 3.0 };
            assert_abs_diff_eq!(var / expect, 1.0, epsilon = 0.03);
        }
        assert_eq!(data.realized_covariance().atoms().len(), 2);
    }

    #[test]
    fn dimension_checks() {
        let model = RfModel::sample(4, 3, Activation::tanh(), 1).unwrap();
        let bad = Array2::<f64>::zeros((5, 2));
        assert!(model.features(&bad.view()).is_err());
        let mut model = model;
        assert!(model.set_readout(Array2::zeros((4, 4))).is_err());
        assert!(RfModel::new(Array2::zeros((0, 3)), Activation::tanh()).is_err());
        assert!(Dataset::sample_gaussian(0, 5, &SpectralMeasure::isotropic(), 1).is_err());
    }
}
