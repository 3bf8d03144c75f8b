//! Score-matching losses, gradient training, and the closed-form flow.
//!
//! With the Gram pair `(U, V)` of [`crate::gram`], the denoising
//! score-matching loss of the read-out `A ∈ ℝ^{d×p}` is exactly quadratic:
//!
//! ```text
//! L(A) = 1 + (Δ_t/d)·Tr(Aᵀ A U)/p + (2√Δ_t/(d√p))·Tr(A V),
//! ∇_A L = (2Δ_t/(d p))·A U + (2√Δ_t/(d√p))·Vᵀ.
//! ```
//!
//! Gradient descent with rate `η` therefore contracts each eigenmode `λ` of
//! `U` by `1 − 2Δ_t η λ/(d p)` per step, converging to
//! `A* = −√p Vᵀ U⁻¹/√Δ_t`, and the iterates admit a closed form in the
//! eigenbasis of `U`: with `τ = k η/d²` held fixed as `d → ∞`,
//!
//! ```text
//! A(τ)/√p = −Vᵀ U⁻¹/√Δ_t + (Vᵀ U⁻¹/√Δ_t + A₀/√p)·exp(−2 Δ_t U τ/ψ_p).
//! ```
//!
//! [`GramFlow`] materializes that solution once per eigendecomposition, and
//! [`LossEvaluator`] turns any quadratic observable (training loss, test
//! loss against an independent Gram pair, population loss, score error)
//! into an `O(p²)`-per-`τ` curve by precomputing its projections onto the
//! flow's eigenmodes. The score error against the true Gaussian score is
//! itself such a quadratic functional: for data covariance `Σ`,
//! `E‖s_A(y) − ∇ log P_t(y)‖²/d` with `y ~ N(0, Σ_t)` expands into the
//! population Gram `Ũ`, the coupling `(μ₁/Γ_t) W/√d`, and the constant
//! `Tr(Σ_t^{-1})/d`, so no Monte-Carlo noise enters the closed-form curves
//! (a Monte-Carlo estimator is still provided and cross-checked in tests).

use crate::constants::ScalarConstants;
use crate::error::{Error, Result};
use crate::gram::{self, GramPair};
use crate::linalg::{self, SymEigen};
use crate::measure::SpectralMeasure;
use crate::model::{Dataset, RfModel};
use crate::seeding;
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

/// Stability threshold for the per-mode gradient-descent contraction factor
/// `2 Δ_t η λ_max/(d p)`; 2 is the exact boundary, 1.9 leaves margin.
pub const GD_STABILITY_LIMIT: f64 = 1.9;

/// Training loss in trace form.
pub fn loss_trace_form(a: &ArrayView2<f64>, gram: &GramPair, t: f64) -> Result<f64> {
    let (p, d) = (gram.p(), gram.d());
    if a.dim() != (d, p) {
        return Err(Error::DimensionMismatch(format!(
            "read-out must be {d}x{p}, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let delta_t = delta_of(t)?;
    let au = a.dot(&gram.u);
    let quad: f64 = au.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
    let cross: f64 = a
        .iter()
        .zip(gram.v.t().iter())
        .map(|(x, y)| x * y)
        .sum();
    Ok(1.0 + delta_t / d as f64 * quad / p as f64
        + 2.0 * delta_t.sqrt() / (d as f64 * (p as f64).sqrt()) * cross)
}

/// Gradient of [`loss_trace_form`] with respect to the read-out.
pub fn loss_gradient(a: &ArrayView2<f64>, gram: &GramPair, t: f64) -> Result<Array2<f64>> {
    let (p, d) = (gram.p(), gram.d());
    if a.dim() != (d, p) {
        return Err(Error::DimensionMismatch(format!(
            "read-out must be {d}x{p}, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let delta_t = delta_of(t)?;
    let mut grad = a.dot(&gram.u);
    grad *= 2.0 * delta_t / (d as f64 * p as f64);
    grad.scaled_add(
        2.0 * delta_t.sqrt() / (d as f64 * (p as f64).sqrt()),
        &gram.v.t(),
    );
    Ok(grad)
}

/// Direct Monte-Carlo estimate of the training loss
/// `E‖√Δ_t s_A(x_t) + ξ‖²/d`, averaging over the dataset and `n_noise`
/// fresh replicas drawn with the same per-point streams as
/// [`gram::build_gram_mc`].
pub fn eval_losses_mc(
    model: &RfModel,
    data: &Dataset,
    t: f64,
    n_noise: usize,
    seed: u64,
) -> Result<f64> {
    if data.d() != model.d() {
        return Err(Error::DimensionMismatch(format!(
            "dataset dimension {} does not match model dimension {}",
            data.d(),
            model.d()
        )));
    }
    let delta_t = delta_of(t)?;
    if n_noise == 0 {
        return Err(Error::invalid("need at least one noise replica"));
    }
    let (d, n) = (model.d(), data.n());
    let e_t = (-t).exp();
    let sqrt_delta = delta_t.sqrt();
    let x = data.x();

    let mut total = 0.0;
    let mut noised = Array2::<f64>::zeros((d, n));
    let mut noise = Array2::<f64>::zeros((d, n));
    for replica in 0..n_noise {
        for point in 0..n {
            let mut rng = seeding::rng_stream(seed, &[point as u64, replica as u64]);
            for row in 0..d {
                let xi: f64 = rng.sample(StandardNormal);
                noise[[row, point]] = xi;
                noised[[row, point]] = e_t * x[[row, point]] + sqrt_delta * xi;
            }
        }
        let mut score = model.score_batch(&noised.view())?;
        score *= sqrt_delta;
        score += &noise;
        total += score.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / (n as f64 * n_noise as f64 * d as f64))
}

fn delta_of(t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!(
            "diffusion time must be positive and finite, got {t}"
        )));
    }
    Ok(1.0 - (-2.0 * t).exp())
}

/// Optimizer choice for [`train`].
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerKind {
    /// Plain gradient descent; `eta` is validated against the stability
    /// bound [`GD_STABILITY_LIMIT`].
    GradientDescent,
    /// Adam with the usual moment estimates; not covered by the closed form.
    Adam {
        /// First-moment decay (default 0.9).
        beta1: f64,
        /// Second-moment decay (default 0.999).
        beta2: f64,
        /// Denominator regularizer (default 1e-8).
        epsilon: f64,
    },
}

impl OptimizerKind {
    /// Adam with standard defaults.
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Initialization of the read-out.
#[derive(Debug, Clone, PartialEq)]
pub enum InitReadout {
    /// Start from `A = 0` (score of pure noise).
    Zero,
    /// I.i.d. Gaussian entries of the given standard deviation.
    Gaussian {
        /// Entry standard deviation.
        scale: f64,
        /// Seed of the init stream.
        seed: u64,
    },
}

impl InitReadout {
    /// Materialize the initial read-out.
    pub fn build(&self, d: usize, p: usize) -> Array2<f64> {
        match *self {
            InitReadout::Zero => Array2::zeros((d, p)),
            InitReadout::Gaussian { scale, seed } => {
                let mut rng = seeding::rng_stream(seed, &[0xA0]);
                Array2::from_shape_simple_fn((d, p), || {
                    scale * rng.sample::<f64, _>(StandardNormal)
                })
            }
        }
    }
}

/// Configuration of a gradient-training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Diffusion time of the loss.
    pub t: f64,
    /// Learning rate on `∇_A L`; the rescaled time after `k` steps is
    /// `τ = k η/d²`.
    pub eta: f64,
    /// Number of optimizer steps.
    pub n_steps: usize,
    /// Optimizer.
    pub optimizer: OptimizerKind,
    /// Rescaled times `τ` at which observables are recorded; `None` means
    /// forty log-spaced points over the run (plus `τ = 0` and the end).
    pub record_times: Option<Vec<f64>>,
    /// Read-out initialization.
    pub init: InitReadout,
}

/// How an observable column of a trace was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservableProvenance {
    /// Deterministic quadratic trace form.
    TraceForm,
    /// Monte-Carlo average over fresh Gaussians.
    MonteCarlo,
}

/// One recorded point of a training run.
#[derive(Debug, Clone, Copy)]
pub struct TraceRecord {
    /// Optimizer step index.
    pub step: usize,
    /// Rescaled time `τ = step·η/d²`.
    pub tau: f64,
    /// Training loss (trace form on the training Gram).
    pub l_train: f64,
    /// Loss on a held-out Gram pair, when one was supplied.
    pub l_test: Option<f64>,
    /// Population (infinite-sample) loss, when requested.
    pub l_gen: Option<f64>,
    /// Score error against the true Gaussian score, when requested.
    pub e_score: Option<f64>,
}

/// Result of [`train`]: the recorded observables and their provenance.
#[derive(Debug, Clone)]
pub struct TrainingTrace {
    /// Records in increasing `τ`.
    pub records: Vec<TraceRecord>,
    /// Provenance of the loss columns.
    pub loss_provenance: ObservableProvenance,
    /// Provenance of the score-error column, when present.
    pub e_score_provenance: Option<ObservableProvenance>,
}

/// Optional observables evaluated along a training run.
#[derive(Default)]
pub struct TrainObservables<'a> {
    /// Held-out Gram pair for `l_test`.
    pub test: Option<&'a GramPair>,
    /// Population pair `(Ũ, Ṽ)` for `l_gen`.
    pub population: Option<(&'a Array2<f64>, &'a Array2<f64>)>,
    /// Monte-Carlo score-error batch for `e_score`.
    pub score: Option<&'a ScoreErrorBatch>,
}

/// Train the model's read-out on a Gram pair, recording observables.
///
/// Gradient descent validates `eta` against the stability bound; training
/// aborts with a numerical error if the training loss exceeds ten times its
/// initial value (relevant for Adam, whose updates have no closed-form
/// stability theory).
pub fn train(
    model: &mut RfModel,
    gram_train: &GramPair,
    observables: &TrainObservables<'_>,
    config: &TrainConfig,
) -> Result<TrainingTrace> {
    let (p, d) = (gram_train.p(), gram_train.d());
    if model.p() != p || model.d() != d {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{}, gram pair is {p}x{d}",
            model.p(),
            model.d()
        )));
    }
    if !(config.eta > 0.0 && config.eta.is_finite()) {
        return Err(Error::invalid(format!(
            "learning rate must be positive and finite, got {}",
            config.eta
        )));
    }
    let delta_t = delta_of(config.t)?;

    if matches!(config.optimizer, OptimizerKind::GradientDescent) {
        // Power iteration yields a lower estimate of λ_max; inflate before
        // comparing against the stability threshold.
        let lambda_max = 1.05 * linalg::psd_max_eigenvalue(&gram_train.u.view(), 120);
        let contraction = 2.0 * delta_t * config.eta * lambda_max / (d as f64 * p as f64);
        if contraction >= GD_STABILITY_LIMIT {
            let eta_max =
                GD_STABILITY_LIMIT * d as f64 * p as f64 / (2.0 * delta_t * lambda_max);
            return Err(Error::invalid(format!(
                "eta = {} exceeds the gradient-descent stability bound (max stable ~{eta_max:.3e})",
                config.eta
            )));
        }
    }

    let tau_of = |step: usize| step as f64 * config.eta / (d as f64 * d as f64);
    let record_steps = resolve_record_steps(config, tau_of)?;

    let mut a = config.init.build(d, p);
    let mut adam_m = Array2::<f64>::zeros((0, 0));
    let mut adam_v = Array2::<f64>::zeros((0, 0));
    if matches!(config.optimizer, OptimizerKind::Adam { .. }) {
        adam_m = Array2::zeros((d, p));
        adam_v = Array2::zeros((d, p));
    }

    let mut records = Vec::with_capacity(record_steps.len());
    let mut initial_loss = None;
    let mut next_record = 0usize;
    for step in 0..=config.n_steps {
        if next_record < record_steps.len() && record_steps[next_record] == step {
            next_record += 1;
            let l_train = loss_trace_form(&a.view(), gram_train, config.t)?;
            let l_test = match observables.test {
                Some(gram) => Some(loss_trace_form(&a.view(), gram, config.t)?),
                None => None,
            };
            let l_gen = match observables.population {
                Some((u, v)) => Some(population_loss(&a.view(), u, v, config.t)?),
                None => None,
            };
            let e_score = observables.score.map(|batch| batch.error_for(&a.view()));
            records.push(TraceRecord {
                step,
                tau: tau_of(step),
                l_train,
                l_test,
                l_gen,
                e_score,
            });
            let initial = *initial_loss.get_or_insert(l_train);
            if !l_train.is_finite() || (initial > 0.0 && l_train > 10.0 * initial) {
                return Err(Error::numerical(format!(
                    "training diverged at step {step} (l_train = {l_train:.3e}, initial {initial:.3e}); reduce eta"
                )));
            }
        }
        if step == config.n_steps {
            break;
        }
        let grad = loss_gradient(&a.view(), gram_train, config.t)?;
        match config.optimizer {
            OptimizerKind::GradientDescent => {
                a.scaled_add(-config.eta, &grad);
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let k = (step + 1) as i32;
                adam_m.zip_mut_with(&grad, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                adam_v.zip_mut_with(&grad, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                let bias1 = 1.0 - beta1.powi(k);
                let bias2 = 1.0 - beta2.powi(k);
                for ((a_ij, &m_ij), &v_ij) in
                    a.iter_mut().zip(adam_m.iter()).zip(adam_v.iter())
                {
                    let m_hat = m_ij / bias1;
                    let v_hat = v_ij / bias2;
                    *a_ij -= config.eta * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
    model.set_readout(a)?;
    Ok(TrainingTrace {
        records,
        loss_provenance: ObservableProvenance::TraceForm,
        e_score_provenance: observables
            .score
            .map(|_| ObservableProvenance::MonteCarlo),
    })
}

/// Loss against an explicit population pair `(Ũ, Ṽ)`.
fn population_loss(
    a: &ArrayView2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    t: f64,
) -> Result<f64> {
    let pair = GramPair {
        u: u.clone(),
        v: v.clone(),
        provenance: gram::GramProvenance::GaussianEquivalent { seed: 0 },
    };
    loss_trace_form(a, &pair, t)
}

/// Turn requested record times into a sorted list of unique step indices.
fn resolve_record_steps(
    config: &TrainConfig,
    tau_of: impl Fn(usize) -> f64,
) -> Result<Vec<usize>> {
    let taus: Vec<f64> = match &config.record_times {
        Some(times) => {
            if times.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
                return Err(Error::invalid("record times must be finite and non-negative"));
            }
            times.clone()
        }
        None => {
            let end = tau_of(config.n_steps);
            let start = tau_of(1);
            log_spaced(start, end, 40)
        }
    };
    let tau_unit = tau_of(1);
    let mut steps: Vec<usize> = taus
        .iter()
        .map(|&tau| ((tau / tau_unit).round() as usize).min(config.n_steps))
        .collect();
    steps.push(0);
    steps.push(config.n_steps);
    steps.sort_unstable();
    steps.dedup();
    Ok(steps)
}

/// `count` log-spaced values from `lo` to `hi` (inclusive); degenerates
/// gracefully when `lo` or the range is trivial.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 0 || !(hi > 0.0) {
        return vec![];
    }
    let lo = lo.max(hi * 1e-12).max(f64::MIN_POSITIVE);
    if count == 1 || lo >= hi {
        return vec![hi];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

// ---------------------------------------------------------------------------
// Closed-form gradient flow.
// ---------------------------------------------------------------------------

/// The closed-form gradient-flow solution in the eigenbasis of the training
/// Gram matrix; built once per eigendecomposition and evaluated at any `τ`.
#[derive(Debug, Clone)]
pub struct GramFlow {
    eigen: SymEigen,
    /// Fixed point in the eigenbasis: `F̃ = Vᵀ Q Λ⁻¹ / √Δ_t`, `d × p`.
    fixed_point: Array2<f64>,
    /// Decaying coefficient `C = F̃ + A₀ Q/√p`, `d × p`.
    drift: Array2<f64>,
    /// Per-mode decay rates `2 Δ_t λ_k / ψ_p`.
    rates: Array1<f64>,
    delta_t: f64,
    p: usize,
    d: usize,
    /// Number of eigenvalues clamped by the inversion floor.
    pub n_floored: usize,
}

impl GramFlow {
    /// Diagonalize the training Gram matrix and prepare the flow from the
    /// initial read-out `a0` (pass `None` for the zero initialization).
    pub fn new(gram: &GramPair, t: f64, a0: Option<&ArrayView2<f64>>) -> Result<Self> {
        let delta_t = delta_of(t)?;
        let (p, d) = (gram.p(), gram.d());
        let psi_p = p as f64 / d as f64;
        let eigen = linalg::sym_eigen(&gram.u.view())?;

        let floor = eigen.max_value().abs().max(1.0) * 1e-14;
        let mut n_floored = 0usize;
        // B = Qᵀ V (p × d); F̃ᵀ = Λ⁻¹ B / √Δ.
        let b = eigen.basis_t.dot(&gram.v);
        let mut fixed_point_t = b;
        for (mut row, &lambda) in fixed_point_t.rows_mut().into_iter().zip(eigen.values.iter()) {
            let safe = if lambda < floor {
                n_floored += 1;
                floor
            } else {
                lambda
            };
            row *= 1.0 / (safe * delta_t.sqrt());
        }
        let fixed_point = fixed_point_t.t().to_owned();

        let drift = match a0 {
            Some(a0) => {
                if a0.dim() != (d, p) {
                    return Err(Error::DimensionMismatch(format!(
                        "initial read-out must be {d}x{p}, got {}x{}",
                        a0.nrows(),
                        a0.ncols()
                    )));
                }
                let mut y0 = a0.dot(&eigen.basis_t.t());
                y0 /= (p as f64).sqrt();
                &fixed_point + &y0
            }
            None => fixed_point.clone(),
        };

        let rates = eigen
            .values
            .mapv(|lambda| 2.0 * delta_t * lambda.max(0.0) / psi_p);
        Ok(GramFlow {
            eigen,
            fixed_point,
            drift,
            rates,
            delta_t,
            p,
            d,
        n_floored,
        })
    }

    /// Number of features.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Ambient dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// `Δ_t` of the flow's loss.
    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    /// Eigenvalues of the training Gram matrix, ascending.
    pub fn spectrum(&self) -> &Array1<f64> {
        &self.eigen.values
    }

    /// Per-mode decay factors `exp(−rate_k τ)`.
    pub fn decay(&self, tau: f64) -> Array1<f64> {
        self.rates.mapv(|r| (-r * tau).exp())
    }

    /// The read-out at rescaled time `τ` in the original coordinates.
    pub fn readout_at(&self, tau: f64) -> Array2<f64> {
        let e = self.decay(tau);
        let mut y = self.drift.clone();
        for (mut col, &e_k) in y.columns_mut().into_iter().zip(e.iter()) {
            col *= e_k;
        }
        y -= &self.fixed_point;
        let mut a = y.dot(&self.eigen.basis_t);
        a *= (self.p as f64).sqrt();
        a
    }

    /// The `τ → ∞` fixed point `A* = −√p Vᵀ U⁻¹/√Δ_t`.
    pub fn readout_limit(&self) -> Array2<f64> {
        let mut a = self.fixed_point.dot(&self.eigen.basis_t);
        a *= -(self.p as f64).sqrt();
        a
    }

    /// Evaluator of the training loss itself (diagonal fast path).
    pub fn train_loss_evaluator(&self, gram: &GramPair) -> LossEvaluator {
        let p_mat = self.eigen.basis_t.dot(&gram.v);
        self.build_evaluator(
            QuadKind::Diagonal(self.eigen.values.clone()),
            &p_mat,
            1.0,
            self.delta_t / self.d as f64,
            2.0 * self.delta_t.sqrt() / self.d as f64,
        )
    }

    /// Evaluator of the loss against an arbitrary Gram pair (e.g. a held-out
    /// test set). Costs two `p×p×p` products up front.
    pub fn loss_evaluator(&self, gram: &GramPair) -> LossEvaluator {
        let m = self
            .eigen
            .basis_t
            .dot(&gram.u)
            .dot(&self.eigen.basis_t.t());
        let p_mat = self.eigen.basis_t.dot(&gram.v);
        self.build_evaluator(
            QuadKind::Full(m),
            &p_mat,
            1.0,
            self.delta_t / self.d as f64,
            2.0 * self.delta_t.sqrt() / self.d as f64,
        )
    }

    /// Evaluator of the loss against a Gaussian-equivalent Gram pair given by
    /// its factors, avoiding any `p×p×p` product: the test Gram is
    /// `U = G Gᵀ/n + b² W Wᵀ/d + s² I` with `G` the `p × n` equivalent
    /// feature matrix.
    pub fn gep_loss_evaluator(
        &self,
        model: &RfModel,
        test_data: &Dataset,
        constants: &ScalarConstants,
        seed: u64,
    ) -> Result<LossEvaluator> {
        let n = test_data.n();
        let e_t = constants.e_minus_t();
        let sqrt_d = (self.d as f64).sqrt();
        let mut g = model.weights().dot(&test_data.x());
        g *= e_t * constants.a_t / sqrt_d;
        let mut rng = seeding::rng_stream(seed, &[0x0E9]);
        let v_t = constants.v_t();
        g.mapv_inplace(|value| value + v_t * rng.sample::<f64, _>(StandardNormal));

        let gq = self.eigen.basis_t.dot(&g); // p × n
        let wq = self.eigen.basis_t.dot(&model.weights()); // p × d
        let mut m = gq.dot(&gq.t());
        m /= n as f64;
        m.scaled_add(constants.b_t.powi(2) / self.d as f64, &wq.dot(&wq.t()));
        for i in 0..self.p {
            m[[i, i]] += constants.s_t2;
        }
        let mut p_mat = wq;
        p_mat *= constants.mu1 * constants.sqrt_delta() / (constants.gamma_t() * sqrt_d);
        Ok(self.build_evaluator(
            QuadKind::Full(m),
            &p_mat,
            1.0,
            self.delta_t / self.d as f64,
            2.0 * self.delta_t.sqrt() / self.d as f64,
        ))
    }

    /// Evaluator of the population (infinite-sample) loss, using the
    /// factored form of `Ũ` (costs `O(p² d)`).
    pub fn population_loss_evaluator(
        &self,
        model: &RfModel,
        measure: &SpectralMeasure,
        constants: &ScalarConstants,
    ) -> Result<LossEvaluator> {
        let (m, wq) = self.population_quadratic(model, measure, constants)?;
        let mut p_mat = wq;
        p_mat *= constants.mu1 * constants.sqrt_delta()
            / (constants.gamma_t() * (self.d as f64).sqrt());
        Ok(self.build_evaluator(
            QuadKind::Full(m),
            &p_mat,
            1.0,
            self.delta_t / self.d as f64,
            2.0 * self.delta_t.sqrt() / self.d as f64,
        ))
    }

    /// Evaluator of the exact score error
    /// `E‖s_A(y) − ∇ log P_t(y)‖²/d`, `y ~ N(0, Σ_t)`, which is quadratic in
    /// the read-out with the population Gram as its kernel.
    pub fn score_error_evaluator(
        &self,
        model: &RfModel,
        measure: &SpectralMeasure,
        constants: &ScalarConstants,
    ) -> Result<LossEvaluator> {
        let (m, wq) = self.population_quadratic(model, measure, constants)?;
        let mut p_mat = wq;
        p_mat *= constants.mu1 / (constants.gamma_t() * (self.d as f64).sqrt());
        let e_2t = (-2.0 * constants.t).exp();
        let eigs = measure.eigenvalues(self.d);
        let true_score_power = eigs
            .iter()
            .map(|&l| 1.0 / (e_2t * l + constants.delta_t))
            .sum::<f64>()
            / self.d as f64;
        Ok(self.build_evaluator(
            QuadKind::Full(m),
            &p_mat,
            true_score_power,
            1.0 / self.d as f64,
            2.0 / self.d as f64,
        ))
    }

    /// `Qᵀ Ũ Q` via the factored population Gram, plus `Qᵀ W` for reuse.
    fn population_quadratic(
        &self,
        model: &RfModel,
        measure: &SpectralMeasure,
        constants: &ScalarConstants,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if model.p() != self.p || model.d() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "model is {}x{}, flow is {}x{}",
                model.p(),
                model.d(),
                self.p,
                self.d
            )));
        }
        let e_2t = (-2.0 * constants.t).exp();
        let eigs = measure.eigenvalues(self.d);
        let wq = self.eigen.basis_t.dot(&model.weights()); // p × d
        let mut scaled = wq.clone();
        for (mut col, &lambda) in scaled.columns_mut().into_iter().zip(eigs.iter()) {
            col *= e_2t * lambda + constants.delta_t;
        }
        let mut m = scaled.dot(&wq.t());
        m *= constants.mu1_sq() / (constants.gamma_t2 * self.d as f64);
        let bulk = constants.bulk_variance();
        for i in 0..self.p {
            m[[i, i]] += bulk;
        }
        linalg::symmetrize(&mut m);
        Ok((m, wq))
    }

    fn build_evaluator(
        &self,
        quad: QuadKind,
        p_mat: &Array2<f64>,
        constant: f64,
        u_coeff: f64,
        v_coeff: f64,
    ) -> LossEvaluator {
        let f = &self.fixed_point; // d × p
        let c = &self.drift; // d × p

        // c0 = Tr(F̃ M F̃ᵀ), linear_k = (M F̃ᵀ C)_{kk}, quad = M ∘ (CᵀC).
        let (c0, linear, quad) = match quad {
            QuadKind::Diagonal(lambda) => {
                let mut c0 = 0.0;
                let mut linear = Array1::zeros(self.p);
                let mut gdiag = Array1::zeros(self.p);
                for k in 0..self.p {
                    let f_col = f.column(k);
                    let c_col = c.column(k);
                    c0 += lambda[k] * f_col.dot(&f_col);
                    linear[k] = lambda[k] * f_col.dot(&c_col);
                    gdiag[k] = lambda[k] * c_col.dot(&c_col);
                }
                (c0, linear, QuadKind::Diagonal(gdiag))
            }
            QuadKind::Full(m) => {
                let mf = m.dot(&f.t().to_owned()); // p × d
                let c0 = mf
                    .iter()
                    .zip(f.t().iter())
                    .map(|(x, y)| x * y)
                    .sum::<f64>();
                let mut linear = Array1::zeros(self.p);
                for k in 0..self.p {
                    linear[k] = mf.row(k).dot(&c.column(k));
                }
                let ctc = c.t().dot(c);
                let g = &m * &ctc;
                (c0, linear, QuadKind::Full(g))
            }
        };

        // v0 = Tr(F̃ P), v_lin_k = (P C)_{kk} with P = Qᵀ V (p × d).
        let mut v0 = 0.0;
        let mut v_lin = Array1::zeros(self.p);
        for k in 0..self.p {
            v0 += p_mat.row(k).dot(&f.column(k));
            v_lin[k] = p_mat.row(k).dot(&c.column(k));
        }

        LossEvaluator {
            constant,
            u_coeff,
            v_coeff,
            c0,
            linear,
            quad,
            v0,
            v_lin,
        }
    }
}

enum QuadKind {
    Diagonal(Array1<f64>),
    Full(Array2<f64>),
}

/// A quadratic observable of the flow, reduced to its eigenmode projections;
/// evaluation at one `τ` costs `O(p²)` (or `O(p)` on the diagonal path).
pub struct LossEvaluator {
    constant: f64,
    u_coeff: f64,
    v_coeff: f64,
    c0: f64,
    linear: Array1<f64>,
    quad: QuadKind,
    v0: f64,
    v_lin: Array1<f64>,
}

impl LossEvaluator {
    /// Observable value given the per-mode decay vector of the flow.
    pub fn value(&self, decay: &Array1<f64>) -> f64 {
        let quad_term = match &self.quad {
            QuadKind::Diagonal(g) => g
                .iter()
                .zip(decay.iter())
                .map(|(&g_k, &e_k)| g_k * e_k * e_k)
                .sum::<f64>(),
            QuadKind::Full(g) => decay.dot(&g.dot(decay)),
        };
        let linear_term: f64 = self.linear.dot(decay);
        let v_term: f64 = self.v_lin.dot(decay);
        self.constant + self.u_coeff * (self.c0 - 2.0 * linear_term + quad_term)
            + self.v_coeff * (v_term - self.v0)
    }

    /// Evaluate the observable along a `τ` grid.
    pub fn curve(&self, flow: &GramFlow, taus: &[f64]) -> Vec<f64> {
        taus.iter()
            .map(|&tau| self.value(&flow.decay(tau)))
            .collect()
    }
}

/// Monte-Carlo score-error estimator on a fixed batch of noised Gaussians,
/// sharing the batch across read-outs (common random numbers).
pub struct ScoreErrorBatch {
    features: Array2<f64>,
    true_score: Array2<f64>,
    d: usize,
    p: usize,
}

impl ScoreErrorBatch {
    /// Draw `n_samples` points `y ~ N(0, Σ_t)` and precompute the feature
    /// map and true score.
    pub fn new(
        model: &RfModel,
        measure: &SpectralMeasure,
        t: f64,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let delta_t = delta_of(t)?;
        if n_samples == 0 {
            return Err(Error::invalid("need at least one score sample"));
        }
        let d = model.d();
        let e_2t = (-2.0 * t).exp();
        let eigs = measure.eigenvalues(d);
        let mut rng = seeding::rng_stream(seed, &[0x5C0]);
        let mut y = Array2::zeros((d, n_samples));
        let mut true_score = Array2::zeros((d, n_samples));
        for col in 0..n_samples {
            for row in 0..d {
                let var = e_2t * eigs[row] + delta_t;
                let sample = var.sqrt() * rng.sample::<f64, _>(StandardNormal);
                y[[row, col]] = sample;
                true_score[[row, col]] = -sample / var;
            }
        }
        let features = model.features(&y.view())?;
        Ok(ScoreErrorBatch {
            features,
            true_score,
            d,
            p: model.p(),
        })
    }

    /// `E‖(A/√p)φ(y) − s_true(y)‖²/d` on the fixed batch.
    pub fn error_for(&self, a: &ArrayView2<f64>) -> f64 {
        let mut s = a.dot(&self.features);
        s /= (self.p as f64).sqrt();
        s -= &self.true_score;
        s.iter().map(|v| v * v).sum::<f64>() / (self.d as f64 * s.ncols() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::constants::{compute_constants, DEFAULT_QUAD_ORDER};
    use crate::gram::{build_gram_gep, build_gram_mc, build_population_gram};
    use approx::assert_abs_diff_eq;

    fn small_setup(
        p: usize,
        d: usize,
        n: usize,
        t: f64,
    ) -> (RfModel, Dataset, ScalarConstants, GramPair) {
        let model = RfModel::sample(p, d, Activation::tanh(), 77).unwrap();
        let data =
            Dataset::sample_gaussian(d, n, &SpectralMeasure::isotropic(), 78).unwrap();
        let constants =
            compute_constants(&Activation::tanh(), 1.0, t, DEFAULT_QUAD_ORDER).unwrap();
        let gram = build_gram_gep(&model, &data, &constants, n as f64 / d as f64, 79).unwrap();
        (model, data, constants, gram)
    }

    #[test]
    fn zero_readout_loss_is_one() {
        let (_, _, _, gram) = small_setup(24, 8, 16, 0.1);
        let a = Array2::<f64>::zeros((8, 24));
        assert_abs_diff_eq!(
            loss_trace_form(&a.view(), &gram, 0.1).unwrap(),
            1.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Independent oracle: central differences of the trace-form loss.
        let (_, _, _, gram) = small_setup(16, 4, 8, 0.2);
        let mut rng = seeding::rng_stream(5, &[]);
        let a = Array2::from_shape_simple_fn((4, 16), || {
            rng.sample::<f64, _>(StandardNormal) * 0.3
        });
        let grad = loss_gradient(&a.view(), &gram, 0.2).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            for j in 0..16 {
                let mut plus = a.clone();
                plus[[i, j]] += h;
                let mut minus = a.clone();
                minus[[i, j]] -= h;
                let fd = (loss_trace_form(&plus.view(), &gram, 0.2).unwrap()
                    - loss_trace_form(&minus.view(), &gram, 0.2).unwrap())
                    / (2.0 * h);
                assert_abs_diff_eq!(grad[[i, j]], fd, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn monte_carlo_loss_matches_trace_form_exactly() {
        // With the same per-point noise streams, the direct Monte-Carlo loss
        // differs from the trace form on the Monte-Carlo Gram only by the
        // sampled mean of ‖ξ‖²/d replacing its expectation 1.
        let (mut model, data, _, _) = small_setup(20, 6, 10, 0.15);
        let (t, n_noise, seed) = (0.15, 11, 31);
        let mut rng = seeding::rng_stream(44, &[]);
        let a = Array2::from_shape_simple_fn((6, 20), || {
            rng.sample::<f64, _>(StandardNormal) * 0.5
        });
        model.set_readout(a.clone()).unwrap();

        let gram = build_gram_mc(&model, &data, t, n_noise, seed).unwrap();
        let trace = loss_trace_form(&a.view(), &gram, t).unwrap();
        let direct = eval_losses_mc(&model, &data, t, n_noise, seed).unwrap();

        let mut noise_power = 0.0;
        for point in 0..data.n() {
            for replica in 0..n_noise {
                let mut stream = seeding::rng_stream(seed, &[point as u64, replica as u64]);
                for _ in 0..data.d() {
                    let xi: f64 = stream.sample(StandardNormal);
                    noise_power += xi * xi;
                }
            }
        }
        noise_power /= (data.n() * n_noise * data.d()) as f64;
        assert_abs_diff_eq!(direct - trace, noise_power - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_descent_matches_closed_form() {
        let (mut model, _, _, gram) = small_setup(24, 8, 16, 0.1);
        let t = 0.1;
        let d = 8.0;
        let p = 24.0;
        let delta = 1.0 - (-2.0f64 * t).exp();
        let lambda_max = linalg::sym_eigenvalues(&gram.u.view()).unwrap()[23];
        let eta = 0.5 * d * p / (delta * lambda_max); // half the stability bound
        let n_steps = 512;
        let config = TrainConfig {
            t,
            eta,
            n_steps,
            optimizer: OptimizerKind::GradientDescent,
            record_times: Some(vec![]),
            init: InitReadout::Gaussian { scale: 0.2, seed: 9 },
        };
        let trace = train(&mut model, &gram, &TrainObservables::default(), &config).unwrap();
        assert!(trace.records.len() >= 2);

        let a0 = config.init.build(8, 24);
        let flow = GramFlow::new(&gram, t, Some(&a0.view())).unwrap();
        let tau_end = n_steps as f64 * eta / (d * d);
        let closed = flow.readout_at(tau_end);
        let rel = linalg::rel_frobenius_distance(&model.a.view(), &closed.view());
        // Discrete steps approximate the flow to O(η·rate); the bound here
        // reflects the coarse step chosen to keep the test fast.
        assert!(rel < 0.02, "closed form vs GD relative distance {rel}");

        // The fixed point is reached in the τ → ∞ limit.
        let limit = flow.readout_limit();
        let far = flow.readout_at(1e9);
        assert!(linalg::rel_frobenius_distance(&far.view(), &limit.view()) < 1e-9);
    }

    #[test]
    fn gd_rejects_unstable_step_size() {
        let (mut model, _, _, gram) = small_setup(24, 8, 16, 0.1);
        let config = TrainConfig {
            t: 0.1,
            eta: 1e9,
            n_steps: 10,
            optimizer: OptimizerKind::GradientDescent,
            record_times: None,
            init: InitReadout::Zero,
        };
        let err = train(&mut model, &gram, &TrainObservables::default(), &config).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "got {err:?}");
    }

    #[test]
    fn adam_divergence_is_reported() {
        let (mut model, _, _, gram) = small_setup(24, 8, 16, 0.1);
        let config = TrainConfig {
            t: 0.1,
            eta: 50.0,
            n_steps: 4000,
            optimizer: OptimizerKind::adam_default(),
            record_times: Some(log_spaced(1e-6, 1.0, 200)),
            init: InitReadout::Zero,
        };
        let err = train(&mut model, &gram, &TrainObservables::default(), &config);
        match err {
            Err(Error::Numerical(msg)) => assert!(msg.contains("diverged"), "{msg}"),
            other => panic!("expected divergence abort, got {other:?}"),
        }
    }

    #[test]
    fn adam_reduces_loss() {
        let (mut model, _, _, gram) = small_setup(24, 8, 16, 0.1);
        let config = TrainConfig {
            t: 0.1,
            eta: 0.05,
            n_steps: 300,
            optimizer: OptimizerKind::adam_default(),
            record_times: None,
            init: InitReadout::Zero,
        };
        let trace = train(&mut model, &gram, &TrainObservables::default(), &config).unwrap();
        let first = trace.records.first().unwrap().l_train;
        let last = trace.records.last().unwrap().l_train;
        assert!(last < first, "Adam failed to reduce the loss: {first} -> {last}");
        assert_eq!(trace.loss_provenance, ObservableProvenance::TraceForm);
    }

    #[test]
    fn evaluators_match_direct_losses() {
        let (model, _data, constants, gram) = small_setup(30, 10, 20, 0.2);
        let test_data =
            Dataset::sample_gaussian(10, 20, &SpectralMeasure::isotropic(), 501).unwrap();
        let gram_test = build_gram_gep(&model, &test_data, &constants, 2.0, 502).unwrap();
        let a0 = InitReadout::Gaussian { scale: 0.3, seed: 91 }.build(10, 30);
        let flow = GramFlow::new(&gram, 0.2, Some(&a0.view())).unwrap();

        let train_eval = flow.train_loss_evaluator(&gram);
        let test_eval = flow.loss_evaluator(&gram_test);
        let gep_eval = flow
            .gep_loss_evaluator(&model, &test_data, &constants, 502)
            .unwrap();
        let pop_u =
            build_population_gram(&model, &SpectralMeasure::isotropic(), &constants).unwrap();
        let pop_v = gram::equivalent_noise_coupling(&model, &constants);
        let pop_pair = GramPair {
            u: pop_u.clone(),
            v: pop_v.clone(),
            provenance: gram::GramProvenance::GaussianEquivalent { seed: 0 },
        };
        let pop_eval = flow
            .population_loss_evaluator(&model, &SpectralMeasure::isotropic(), &constants)
            .unwrap();

        for &tau in &[0.0, 0.3, 2.0, 50.0, 1e4] {
            let a = flow.readout_at(tau);
            let decay = flow.decay(tau);
            assert_abs_diff_eq!(
                train_eval.value(&decay),
                loss_trace_form(&a.view(), &gram, 0.2).unwrap(),
                epsilon = 1e-10
            );
            assert_abs_diff_eq!(
                test_eval.value(&decay),
                loss_trace_form(&a.view(), &gram_test, 0.2).unwrap(),
                epsilon = 1e-10
            );
            // The factored evaluator reproduces the dense one with the same
            // equivalent-noise seed.
            assert_abs_diff_eq!(
                gep_eval.value(&decay),
                test_eval.value(&decay),
                epsilon = 1e-10
            );
            assert_abs_diff_eq!(
                pop_eval.value(&decay),
                loss_trace_form(&a.view(), &pop_pair, 0.2).unwrap(),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn score_error_evaluator_matches_direct_formula() {
        // Same quadratic expansion assembled from explicit matrices, no
        // eigenmode projections: pins the evaluator machinery exactly.
        let (model, _, constants, gram) = small_setup(30, 10, 20, 0.2);
        let measure = SpectralMeasure::isotropic();
        let a0 = InitReadout::Gaussian { scale: 0.4, seed: 13 }.build(10, 30);
        let flow = GramFlow::new(&gram, 0.2, Some(&a0.view())).unwrap();
        let eval = flow
            .score_error_evaluator(&model, &measure, &constants)
            .unwrap();
        let pop_u = build_population_gram(&model, &measure, &constants).unwrap();
        let (d, p) = (10.0, 30.0);
        for &tau in &[0.0, 0.5, 4.0, 1e5] {
            let a = flow.readout_at(tau);
            let au = a.dot(&pop_u);
            let quad: f64 = au.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
            let cross: f64 = a
                .dot(&model.weights())
                .diag()
                .sum();
            let direct = quad / (d * p)
                + 2.0 * constants.mu1 / (constants.gamma_t() * d.sqrt())
                    * cross
                    / (d * p.sqrt())
                + 1.0 / constants.gamma_t2;
            assert_abs_diff_eq!(eval.value(&flow.decay(tau)), direct, epsilon = 1e-10);
        }
        // At A = 0 the score error is exactly Tr(Σ_t^{-1})/d = 1/Γ².
        let zero_flow = GramFlow::new(&gram, 0.2, None).unwrap();
        let zero_eval = zero_flow
            .score_error_evaluator(&model, &measure, &constants)
            .unwrap();
        let at_zero = zero_eval.value(&zero_flow.decay(0.0));
        assert_abs_diff_eq!(at_zero, 1.0 / constants.gamma_t2, epsilon = 1e-12);
    }

    #[test]
    fn analytic_score_error_matches_monte_carlo() {
        let (model, _, constants, gram) = small_setup(90, 30, 60, 0.2);
        let measure = SpectralMeasure::isotropic();
        let flow = GramFlow::new(&gram, 0.2, None).unwrap();
        let eval = flow
            .score_error_evaluator(&model, &measure, &constants)
            .unwrap();
        let batch = ScoreErrorBatch::new(&model, &measure, 0.2, 60_000, 612).unwrap();
        for &tau in &[0.0, 1.0, 30.0] {
            let analytic = eval.value(&flow.decay(tau));
            let mc = batch.error_for(&flow.readout_at(tau).view());
            // The analytic form uses the asymptotic population Gram while
            // the batch evaluates the true finite-d features, so agreement
            // is limited by the O(d^{-1/2}) equivalence error (~4% was
            // measured at d = 20), not by the Monte-Carlo noise.
            assert_abs_diff_eq!(mc / analytic, 1.0, epsilon = 0.08);
        }
    }

    #[test]
    fn log_spaced_grid_is_sane() {
        let grid = log_spaced(1e-3, 1e3, 7);
        assert_eq!(grid.len(), 7);
        assert_abs_diff_eq!(grid[0], 1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(grid[6], 1e3, epsilon = 1e-9);
        for w in grid.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert_eq!(log_spaced(1.0, 0.0, 5), Vec::<f64>::new());
    }
}
