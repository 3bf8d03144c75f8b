//! Training Gram matrices: empirical Monte-Carlo and Gaussian-equivalent.
//!
//! The quadratic score-matching loss of the random-feature model depends on
//! the data and noise only through a feature Gram matrix `U ∈ ℝ^{p×p}` and a
//! feature–noise coupling `V ∈ ℝ^{p×d}`:
//!
//! * empirically, `U = E[φ φᵀ]` and `V = E[φ ξᵀ]` with `φ = σ(W x_t/√d)`,
//!   `x_t = e^{-t} x + √Δ_t ξ`, averaged over the training points and fresh
//!   noise replicas (Monte Carlo);
//! * in the Gaussian-equivalent form the nonlinearity is replaced by its
//!   scalar couplings: `U = G Gᵀ/n + b_t² W Wᵀ/d + s_t² I` with
//!   `G = e^{-t} a_t W X/√d + v_t Ω`, `Ω` i.i.d. Gaussian, and
//!   `V = (μ₁ √Δ_t / Γ_t) W / √d`.
//!
//! The population (infinite-`n`) versions replace the sample second moment
//! with the covariance itself: `Ũ = (μ₁²/Γ_t²) W Σ_t Wᵀ/d + (‖σ‖² − μ₁²) I`
//! and `Ṽ = V`; they serve as test-loss and generalization references.

use crate::constants::ScalarConstants;
use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::SpectralMeasure;
use crate::model::{Dataset, RfModel};
use crate::seeding;
use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

/// How a Gram pair was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum GramProvenance {
    /// Empirical averages over fresh noise replicas.
    MonteCarlo {
        /// Noise replicas per training point.
        n_noise: usize,
        /// Root seed of the noise stream.
        seed: u64,
    },
    /// Gaussian-equivalent surrogate with an explicit equivalent-noise draw.
    GaussianEquivalent {
        /// Seed of the equivalent-noise matrix `Ω`.
        seed: u64,
    },
}

/// The pair `(U, V)` defining the quadratic training loss.
#[derive(Debug, Clone)]
pub struct GramPair {
    /// Feature Gram matrix, `p × p`, symmetric.
    pub u: Array2<f64>,
    /// Feature–noise coupling, `p × d`.
    pub v: Array2<f64>,
    /// Construction record.
    pub provenance: GramProvenance,
}

impl GramPair {
    /// Number of features `p`.
    pub fn p(&self) -> usize {
        self.u.nrows()
    }

    /// Ambient dimension `d`.
    pub fn d(&self) -> usize {
        self.v.ncols()
    }
}

/// Largest number of noised columns processed per feature-map chunk; bounds
/// peak memory at roughly `p × CHUNK` doubles.
const MC_CHUNK_COLS: usize = 4096;

/// Empirical Gram pair: averages over `n_noise` fresh noise replicas of
/// every training point.
pub fn build_gram_mc(
    model: &RfModel,
    data: &Dataset,
    t: f64,
    n_noise: usize,
    seed: u64,
) -> Result<GramPair> {
    if data.d() != model.d() {
        return Err(Error::DimensionMismatch(format!(
            "dataset dimension {} does not match model dimension {}",
            data.d(),
            model.d()
        )));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!(
            "diffusion time must be positive and finite, got {t}"
        )));
    }
    if n_noise == 0 {
        return Err(Error::invalid("need at least one noise replica"));
    }
    let (p, d, n) = (model.p(), model.d(), data.n());
    let e_t = (-t).exp();
    let sqrt_delta = (1.0 - (-2.0 * t).exp()).sqrt();

    let x = data.x();
    let mut u = Array2::<f64>::zeros((p, p));
    let mut v = Array2::<f64>::zeros((p, d));
    let mut noised = Array2::<f64>::zeros((d, MC_CHUNK_COLS.min(n)));
    let mut noise = Array2::<f64>::zeros((d, MC_CHUNK_COLS.min(n)));

    for replica in 0..n_noise {
        let mut start = 0;
        while start < n {
            let stop = (start + MC_CHUNK_COLS).min(n);
            let m = stop - start;
            let mut noised_blk = noised.slice_mut(s![.., ..m]);
            let mut noise_blk = noise.slice_mut(s![.., ..m]);
            for (offset, point) in (start..stop).enumerate() {
                let mut rng =
                    seeding::rng_stream(seed, &[point as u64, replica as u64]);
                let x_col = x.column(point);
                for row in 0..d {
                    let xi: f64 = rng.sample(StandardNormal);
                    noise_blk[[row, offset]] = xi;
                    noised_blk[[row, offset]] = e_t * x_col[row] + sqrt_delta * xi;
                }
            }
            let phi = model.features(&noised_blk.view())?;
            u += &phi.dot(&phi.t());
            v += &phi.dot(&noise_blk.t());
            start = stop;
        }
    }
    let scale = 1.0 / (n as f64 * n_noise as f64);
    u *= scale;
    v *= scale;
    linalg::symmetrize(&mut u);
    Ok(GramPair {
        u,
        v,
        provenance: GramProvenance::MonteCarlo { n_noise, seed },
    })
}

/// Gaussian-equivalent Gram pair for the same data.
///
/// `psi_n` must agree with the dataset (`n = ψ_n d`); it is accepted
/// explicitly so that mismatched sweep configurations fail loudly rather
/// than silently rescaling.
pub fn build_gram_gep(
    model: &RfModel,
    data: &Dataset,
    constants: &ScalarConstants,
    psi_n: f64,
    seed: u64,
) -> Result<GramPair> {
    if data.d() != model.d() {
        return Err(Error::DimensionMismatch(format!(
            "dataset dimension {} does not match model dimension {}",
            data.d(),
            model.d()
        )));
    }
    let (p, d, n) = (model.p(), model.d(), data.n());
    if (psi_n * d as f64 - n as f64).abs() > 1e-6 * d as f64 {
        return Err(Error::invalid(format!(
            "psi_n = {psi_n} is inconsistent with n = {n}, d = {d}"
        )));
    }
    let e_t = constants.e_minus_t();
    let sqrt_d = (d as f64).sqrt();

    // G = e^{-t} a_t W X/√d + v_t Ω.
    let mut g = model.weights().dot(&data.x());
    g *= e_t * constants.a_t / sqrt_d;
    let mut rng = seeding::rng_stream(seed, &[0x0E9]);
    let v_t = constants.v_t();
    g.mapv_inplace(|value| value + v_t * rng.sample::<f64, _>(StandardNormal));

    let mut u = g.dot(&g.t());
    u /= n as f64;
    let w = model.weights();
    let wwt = w.dot(&w.t());
    u.scaled_add(constants.b_t.powi(2) / d as f64, &wwt);
    for i in 0..p {
        u[[i, i]] += constants.s_t2;
    }
    linalg::symmetrize(&mut u);

    let v = equivalent_noise_coupling(model, constants);
    Ok(GramPair {
        u,
        v,
        provenance: GramProvenance::GaussianEquivalent { seed },
    })
}

/// The deterministic coupling `V = Ṽ = (μ₁ √Δ_t / Γ_t) W / √d`.
pub fn equivalent_noise_coupling(model: &RfModel, constants: &ScalarConstants) -> Array2<f64> {
    let scale =
        constants.mu1 * constants.sqrt_delta() / (constants.gamma_t() * (model.d() as f64).sqrt());
    let mut v = model.weights().to_owned();
    v *= scale;
    v
}

/// Population Gram matrix `Ũ = (μ₁²/Γ_t²) W Σ_t Wᵀ/d + (‖σ‖² − μ₁²) I`,
/// with `Σ_t = e^{-2t} Σ + Δ_t I` materialized from the measure at the
/// model's dimension.
pub fn build_population_gram(
    model: &RfModel,
    measure: &SpectralMeasure,
    constants: &ScalarConstants,
) -> Result<Array2<f64>> {
    let (p, d) = (model.p(), model.d());
    let e_2t = (-2.0 * constants.t).exp();
    let eigs = measure.eigenvalues(d);
    let coeff = constants.mu1_sq() / (constants.gamma_t2 * d as f64);

    // W diag(Σ_t) Wᵀ via column scaling.
    let mut scaled = model.weights().to_owned();
    for (mut col, &lambda) in scaled.columns_mut().into_iter().zip(eigs.iter()) {
        col *= e_2t * lambda + constants.delta_t;
    }
    let mut u = scaled.dot(&model.weights().t());
    u *= coeff;
    let bulk = constants.bulk_variance();
    for i in 0..p {
        u[[i, i]] += bulk;
    }
    linalg::symmetrize(&mut u);
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::constants::{compute_constants, DEFAULT_QUAD_ORDER};
    use approx::assert_abs_diff_eq;

    fn setup(
        p: usize,
        d: usize,
        n: usize,
        t: f64,
    ) -> (RfModel, Dataset, ScalarConstants) {
        let model = RfModel::sample(p, d, Activation::tanh(), 21).unwrap();
        let measure = SpectralMeasure::isotropic();
        let data = Dataset::sample_gaussian(d, n, &measure, 22).unwrap();
        let constants = compute_constants(&Activation::tanh(), 1.0, t, DEFAULT_QUAD_ORDER).unwrap();
        (model, data, constants)
    }

    #[test]
    fn monte_carlo_feature_power_matches_constants() {
        // Tr U / p estimates E[σ(pre)²] = ‖σ‖²; finite-size error O(1/√d).
        let (model, data, constants) = setup(240, 60, 120, 0.1);
        let gram = build_gram_mc(&model, &data, 0.1, 100, 3).unwrap();
        let trace: f64 = (0..gram.p()).map(|i| gram.u[[i, i]]).sum();
        assert_abs_diff_eq!(
            trace / gram.p() as f64 / constants.sigma_norm2,
            1.0,
            epsilon = 0.05
        );
    }

    #[test]
    fn monte_carlo_and_equivalent_grams_agree() {
        // The Gaussian-equivalent surrogate must reproduce the empirical
        // Gram's coarse spectral observables at moderate dimension.
        let (model, data, constants) = setup(240, 60, 120, 0.1);
        let mc = build_gram_mc(&model, &data, 0.1, 400, 3).unwrap();
        let gep = build_gram_gep(&model, &data, &constants, 2.0, 4).unwrap();

        let mc_vals = linalg::sym_eigenvalues(&mc.u.view()).unwrap();
        let gep_vals = linalg::sym_eigenvalues(&gep.u.view()).unwrap();
        let top = (mc_vals.last().unwrap(), gep_vals.last().unwrap());
        assert_abs_diff_eq!(top.0 / top.1, 1.0, epsilon = 0.15);
        let mean =
            (mc_vals.sum() / 240.0, gep_vals.sum() / 240.0);
        assert_abs_diff_eq!(mean.0 / mean.1, 1.0, epsilon = 0.05);

        // The noise couplings agree entrywise up to Monte-Carlo noise.
        let rel = linalg::rel_frobenius_distance(&mc.v.view(), &gep.v.view());
        assert!(rel < 0.15, "noise coupling mismatch {rel}");
    }

    #[test]
    fn equivalent_gram_respects_structural_floor() {
        // U = PSD + PSD + s² I, so its spectrum sits above s_t².
        let (model, data, constants) = setup(200, 50, 100, 0.35);
        let gep = build_gram_gep(&model, &data, &constants, 2.0, 9).unwrap();
        let vals = linalg::sym_eigenvalues(&gep.u.view()).unwrap();
        assert!(vals[0] >= constants.s_t2 * (1.0 - 1e-10));
        // Exact symmetry after construction.
        for i in 0..gep.p() {
            for j in 0..gep.p() {
                assert_eq!(gep.u[[i, j]], gep.u[[j, i]]);
            }
        }
    }

    #[test]
    fn population_gram_matches_marchenko_pastur_edge() {
        // For Σ = I at σ_x² = 1, Ũ = μ₁² W Wᵀ/d + (s²+v²) I, whose top
        // eigenvalue approaches μ₁² (1+√ψ_p)² + s² + v².
        let d = 100;
        let p = 400;
        let model = RfModel::sample(p, d, Activation::tanh(), 31).unwrap();
        let constants =
            compute_constants(&Activation::tanh(), 1.0, 0.2, DEFAULT_QUAD_ORDER).unwrap();
        let u = build_population_gram(&model, &SpectralMeasure::isotropic(), &constants).unwrap();
        let vals = linalg::sym_eigenvalues(&u.view()).unwrap();
        let psi_p = 4.0f64;
        let edge = constants.mu1_sq() * (1.0 + psi_p.sqrt()).powi(2) + constants.bulk_variance();
        assert_abs_diff_eq!(vals.last().unwrap() / edge, 1.0, epsilon = 0.05);
        // p − d zero directions of W Wᵀ pin the lower spectrum at s²+v².
        assert_abs_diff_eq!(vals[0], constants.bulk_variance(), epsilon = 1e-10);
    }

    #[test]
    fn deterministic_given_seed() {
        let (model, data, constants) = setup(60, 20, 40, 0.1);
        let a = build_gram_mc(&model, &data, 0.1, 7, 12).unwrap();
        let b = build_gram_mc(&model, &data, 0.1, 7, 12).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.v, b.v);
        let c = build_gram_gep(&model, &data, &constants, 2.0, 5).unwrap();
        let e = build_gram_gep(&model, &data, &constants, 2.0, 5).unwrap();
        assert_eq!(c.u, e.u);
        assert_eq!(
            c.provenance,
            GramProvenance::GaussianEquivalent { seed: 5 }
        );
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let (model, data, constants) = setup(60, 20, 40, 0.1);
        assert!(build_gram_mc(&model, &data, 0.0, 7, 1).is_err());
        assert!(build_gram_mc(&model, &data, 0.1, 0, 1).is_err());
        // psi_n must match n/d = 2.
        assert!(build_gram_gep(&model, &data, &constants, 3.0, 1).is_err());
        let other = Dataset::sample_gaussian(21, 40, &SpectralMeasure::isotropic(), 1).unwrap();
        assert!(build_gram_mc(&model, &other, 0.1, 7, 1).is_err());
        assert!(build_gram_gep(&model, &other, &constants, 2.0, 1).is_err());
    }
}
