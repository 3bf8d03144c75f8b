//! Kind-specific runners: each computes one experiment's numbers and
//! returns plain data for the persistence layer.
//!
//! Every random object of a run is drawn from a stream derived from the
//! root seed and a fixed role tag, so runs are reproducible from the
//! manifest alone and independent of thread scheduling. A cell shared by
//! several runners — sample a model and data, build the Gram pair, follow
//! the closed-form flow — lives in [`closed_form_curve`].

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::constants::{compute_constants, ScalarConstants, DEFAULT_QUAD_ORDER};
use crate::error::{Error, Result};
use crate::generation::{
    generate_samples, kl_divergence_gmm, memorization_fraction, mixture_mean, sample_mixture,
    NoiseLadder, SamplerConfig, SamplerScheme, ScoreProvider, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN,
    DEFAULT_DDIM_STEPS, DEFAULT_LADDER_LEN, DEFAULT_T_MIN, DEFAULT_T_START,
};
use crate::gram::{build_gram_gep, build_gram_mc};
use crate::measure::SpectralMeasure;
use crate::model::{Dataset, RfModel};
use crate::seeding::derive_seed;
use crate::spectrum::{
    self, density_plemelj, empirical_spectrum, rho2_density, spectrum_summary, SpectrumSummary,
};
use crate::training::{
    log_spaced, train, GramFlow, InitReadout, OptimizerKind, ScoreErrorBatch, TrainConfig,
    TrainObservables,
};

use super::config::{
    parse_activation, parse_measure, CollapseParams, ConstantsParams, GenerateParams, GramMethod,
    ProviderTag, SchemeTag, SpectrumParams, TrainMethod, TrainParams,
};

/// Role tags of the per-run seed streams.
mod tag {
    pub const MODEL: u64 = 0x01;
    pub const TRAIN_DATA: u64 = 0x02;
    pub const TEST_DATA: u64 = 0x03;
    pub const GRAM: u64 = 0x04;
    pub const TEST_GRAM: u64 = 0x05;
    pub const SCORE_BATCH: u64 = 0x06;
    pub const MIXTURE: u64 = 0x07;
    pub const SAMPLER: u64 = 0x08;
    pub const BOOTSTRAP: u64 = 0x09;
    pub const KL: u64 = 0x0A;
    pub const SNAPSHOT: u64 = 0x0B;
}

/// Evaluate the scalar constants of a `constants` run.
pub fn run_constants(params: &ConstantsParams) -> Result<ScalarConstants> {
    let activation = parse_activation(&params.activation)?;
    compute_constants(&activation, params.sigma_x2, params.t, params.order)
}

/// Numeric output of a `spectrum` run.
#[derive(Debug)]
pub struct SpectrumArtifacts {
    /// Closed-form summary (edges, point mass, timescales).
    pub summary: SpectrumSummary,
    /// λ grid of the density table.
    pub grid: Vec<f64>,
    /// Full analytic density; NaN where the solver failed.
    pub rho: Vec<f64>,
    /// Population-bulk density `ρ₂`; NaN where the solver failed.
    pub rho2: Vec<f64>,
    /// Eigenvalues of one finite-size Gram, when requested.
    pub empirical: Option<Vec<f64>>,
}

/// Solve the analytic density and, optionally, one finite-size spectrum.
pub fn run_spectrum(params: &SpectrumParams, seed: u64) -> Result<SpectrumArtifacts> {
    let measure = parse_measure(&params.measure)?;
    let activation = parse_activation(&params.activation)?;
    let constants = compute_constants(&activation, measure.sigma_x2(), params.t, DEFAULT_QUAD_ORDER)?;

    let grid = spectrum::default_grid(&constants, &measure, params.psi_p, params.psi_n, params.grid)?;
    let schedule = eps_schedule(params.eps_final);
    let curve = density_plemelj(
        &grid,
        &measure,
        &constants,
        params.psi_p,
        params.psi_n,
        &schedule,
    )?;
    let rho2 = rho2_density(&measure, &constants, params.psi_p, &grid, params.eps_final)?;
    let summary = spectrum_summary(&constants, &measure, params.psi_p, params.psi_n)?;

    let empirical = match params.empirical_d {
        None => None,
        Some(d) => {
            let p = ratio_count("psi_p", params.psi_p, d)?;
            let n = ratio_count("psi_n", params.psi_n, d)?;
            let model = RfModel::sample(p, d, activation.clone(), derive_seed(seed, &[tag::MODEL]))?;
            let data = Dataset::sample_gaussian(d, n, &measure, derive_seed(seed, &[tag::TRAIN_DATA]))?;
            let gram = build_gram_gep(
                &model,
                &data,
                &constants,
                params.psi_n,
                derive_seed(seed, &[tag::GRAM]),
            )?;
            Some(empirical_spectrum(&gram.u.view())?.to_vec())
        }
    };

    Ok(SpectrumArtifacts {
        summary,
        grid,
        rho: curve.rho,
        rho2: rho2.rho,
        empirical,
    })
}

/// ε continuation schedule: decades from `0.1` down to the target.
fn eps_schedule(eps_final: f64) -> Vec<f64> {
    let mut schedule = Vec::new();
    let mut eps = 0.1;
    while eps > eps_final * 1.000001 {
        schedule.push(eps);
        eps /= 10.0;
    }
    schedule.push(eps_final);
    schedule
}

/// Convert a ratio `ψ` at dimension `d` to a positive count.
fn ratio_count(name: &str, psi: f64, d: usize) -> Result<usize> {
    let count = (psi * d as f64).round();
    if !(count >= 1.0) {
        return Err(Error::invalid(format!(
            "{name} = {psi} rounds to zero at d = {d}"
        )));
    }
    Ok(count as usize)
}

/// Loss and score-error columns of one training curve.
#[derive(Debug, Clone)]
pub struct CurveColumns {
    /// Rescaled times.
    pub taus: Vec<f64>,
    /// Training loss.
    pub l_train: Vec<f64>,
    /// Held-out loss.
    pub l_test: Vec<f64>,
    /// Generalization gap `l_test − l_train`.
    pub l_gen: Vec<f64>,
    /// Score error against the true Gaussian score; NaN when not computed.
    pub e_score: Vec<f64>,
}

impl CurveColumns {
    /// CSV rows in the `(tau, l_train, l_test, l_gen, e_score)` schema.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.taus.len())
            .map(|i| {
                vec![
                    self.taus[i],
                    self.l_train[i],
                    self.l_test[i],
                    self.l_gen[i],
                    self.e_score[i],
                ]
            })
            .collect()
    }

    /// Column names of [`CurveColumns::rows`].
    pub const COLUMNS: [&'static str; 5] = ["tau", "l_train", "l_test", "l_gen", "e_score"];
}

/// One closed-form cell: dimensions, time, data model, and Gram choice.
#[derive(Debug, Clone)]
pub struct CellSpec<'a> {
    /// Ambient dimension.
    pub d: usize,
    /// Feature ratio.
    pub psi_p: f64,
    /// Sample ratio.
    pub psi_n: f64,
    /// Diffusion time.
    pub t: f64,
    /// Activation name.
    pub activation: &'a str,
    /// Data-spectrum string.
    pub measure: &'a str,
    /// Gram construction.
    pub gram: GramMethod,
    /// Noise replicas of the Monte-Carlo Gram.
    pub n_noise: usize,
    /// Whether to evaluate the score-error column.
    pub with_score: bool,
    /// Cell seed; roles are derived from it.
    pub seed: u64,
}

/// Sample a cell, follow the closed-form flow, and evaluate the loss
/// columns at the given `τ` values.
pub fn closed_form_curve(spec: &CellSpec<'_>, taus: &[f64]) -> Result<CurveColumns> {
    let measure = parse_measure(spec.measure)?;
    let activation = parse_activation(spec.activation)?;
    let constants = compute_constants(&activation, measure.sigma_x2(), spec.t, DEFAULT_QUAD_ORDER)?;
    let p = ratio_count("psi_p", spec.psi_p, spec.d)?;
    let n = ratio_count("psi_n", spec.psi_n, spec.d)?;

    let model = RfModel::sample(p, spec.d, activation, derive_seed(spec.seed, &[tag::MODEL]))?;
    let train_data =
        Dataset::sample_gaussian(spec.d, n, &measure, derive_seed(spec.seed, &[tag::TRAIN_DATA]))?;
    let test_data =
        Dataset::sample_gaussian(spec.d, n, &measure, derive_seed(spec.seed, &[tag::TEST_DATA]))?;

    let gram_train = match spec.gram {
        GramMethod::Gep => build_gram_gep(
            &model,
            &train_data,
            &constants,
            spec.psi_n,
            derive_seed(spec.seed, &[tag::GRAM]),
        )?,
        GramMethod::Mc => build_gram_mc(
            &model,
            &train_data,
            spec.t,
            spec.n_noise,
            derive_seed(spec.seed, &[tag::GRAM]),
        )?,
    };
    let flow = GramFlow::new(&gram_train, spec.t, None)?;

    let l_train = flow.train_loss_evaluator(&gram_train).curve(&flow, taus);
    drop(gram_train);
    let l_test = flow
        .gep_loss_evaluator(
            &model,
            &test_data,
            &constants,
            derive_seed(spec.seed, &[tag::TEST_GRAM]),
        )?
        .curve(&flow, taus);
    let e_score = if spec.with_score {
        flow.score_error_evaluator(&model, &measure, &constants)?
            .curve(&flow, taus)
    } else {
        vec![f64::NAN; taus.len()]
    };

    let l_gen = l_test
        .iter()
        .zip(&l_train)
        .map(|(test, train)| test - train)
        .collect();
    Ok(CurveColumns {
        taus: taus.to_vec(),
        l_train,
        l_test,
        l_gen,
        e_score,
    })
}

const N_SCORE_MC: usize = 256;

/// Run one training experiment and return its curve.
pub fn run_train(params: &TrainParams, seed: u64) -> Result<CurveColumns> {
    match params.method {
        TrainMethod::ClosedForm => {
            let spec = CellSpec {
                d: params.d,
                psi_p: params.psi_p,
                psi_n: params.psi_n,
                t: params.t,
                activation: &params.activation,
                measure: &params.measure,
                gram: params.gram,
                n_noise: params.n_noise,
                with_score: true,
                seed,
            };
            let taus = log_spaced(params.tau_min, params.tau_max, params.n_tau);
            closed_form_curve(&spec, &taus)
        }
        TrainMethod::Gd | TrainMethod::Adam => run_train_iterative(params, seed),
    }
}

fn run_train_iterative(params: &TrainParams, seed: u64) -> Result<CurveColumns> {
    let measure = parse_measure(&params.measure)?;
    let activation = parse_activation(&params.activation)?;
    let constants =
        compute_constants(&activation, measure.sigma_x2(), params.t, DEFAULT_QUAD_ORDER)?;
    let p = ratio_count("psi_p", params.psi_p, params.d)?;
    let n = ratio_count("psi_n", params.psi_n, params.d)?;

    let mut model = RfModel::sample(p, params.d, activation, derive_seed(seed, &[tag::MODEL]))?;
    let train_data =
        Dataset::sample_gaussian(params.d, n, &measure, derive_seed(seed, &[tag::TRAIN_DATA]))?;
    let test_data =
        Dataset::sample_gaussian(params.d, n, &measure, derive_seed(seed, &[tag::TEST_DATA]))?;

    let gram_train = match params.gram {
        GramMethod::Gep => build_gram_gep(
            &model,
            &train_data,
            &constants,
            params.psi_n,
            derive_seed(seed, &[tag::GRAM]),
        )?,
        GramMethod::Mc => build_gram_mc(
            &model,
            &train_data,
            params.t,
            params.n_noise,
            derive_seed(seed, &[tag::GRAM]),
        )?,
    };
    let gram_test = build_gram_gep(
        &model,
        &test_data,
        &constants,
        params.psi_n,
        derive_seed(seed, &[tag::TEST_GRAM]),
    )?;
    let score_batch = ScoreErrorBatch::new(
        &model,
        &measure,
        params.t,
        N_SCORE_MC,
        derive_seed(seed, &[tag::SCORE_BATCH]),
    )?;

    let config = TrainConfig {
        t: params.t,
        eta: params.eta,
        n_steps: params.n_steps,
        optimizer: match params.method {
            TrainMethod::Adam => OptimizerKind::adam_default(),
            _ => OptimizerKind::GradientDescent,
        },
        record_times: None,
        init: InitReadout::Zero,
    };
    let observables = TrainObservables {
        test: Some(&gram_test),
        population: None,
        score: Some(&score_batch),
    };
    let trace = train(&mut model, &gram_train, &observables, &config)?;

    let mut columns = CurveColumns {
        taus: Vec::new(),
        l_train: Vec::new(),
        l_test: Vec::new(),
        l_gen: Vec::new(),
        e_score: Vec::new(),
    };
    for record in &trace.records {
        let l_test = record.l_test.unwrap_or(f64::NAN);
        columns.taus.push(record.tau);
        columns.l_train.push(record.l_train);
        columns.l_test.push(l_test);
        columns.l_gen.push(l_test - record.l_train);
        columns.e_score.push(record.e_score.unwrap_or(f64::NAN));
    }
    Ok(columns)
}

/// Onset and timescale numbers of one `collapse` run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CollapseRun {
    /// Sample ratio of the run.
    pub psi_n: f64,
    /// First recorded `τ` with `L_gen > δ`.
    pub tau_star: f64,
    /// First recorded `τ` with `E_score` inside the relative window of
    /// its minimum.
    pub tau_gen_measured: f64,
    /// Closed-form memorization timescale.
    pub tau_mem_predicted: f64,
    /// Closed-form generalization timescale.
    pub tau_gen_predicted: f64,
    /// `tau_star / tau_mem_predicted`.
    pub onset_ratio: f64,
}

/// Proportional fit `y = slope · x`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitSummary {
    /// Least-squares slope through the origin.
    pub slope: f64,
    /// Coefficient of determination of the proportional fit, measured
    /// against the zero baseline (uncentered, as usual for fits without an
    /// intercept).
    pub r_squared: f64,
}

/// JSON summary of a `collapse` sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollapseSummary {
    /// Per-`ψ_n` onset numbers.
    pub runs: Vec<CollapseRun>,
    /// Fit of `τ*` against `τ_mem`.
    pub fit: FitSummary,
    /// Onset threshold used.
    pub delta: f64,
    /// Relative `E_score` window used.
    pub rel_window: f64,
}

/// Sweep `ψ_n`, locating onset times on a per-run log grid.
///
/// Runs are sequential (each holds a `p×p` eigendecomposition); the curve
/// of run `i` uses the seed stream `(seed, i)`.
pub fn run_collapse(params: &CollapseParams, seed: u64) -> Result<(CollapseSummary, Vec<CurveColumns>)> {
    let measure = parse_measure(&params.measure)?;
    let activation = parse_activation(&params.activation)?;
    let constants =
        compute_constants(&activation, measure.sigma_x2(), params.t, DEFAULT_QUAD_ORDER)?;

    let mut runs = Vec::with_capacity(params.psi_n_values.len());
    let mut curves = Vec::with_capacity(params.psi_n_values.len());
    for (index, &psi_n) in params.psi_n_values.iter().enumerate() {
        let (tau_gen_predicted, tau_mem_predicted) = spectrum::timescales_for_measure(
            &constants,
            &measure,
            params.psi_p,
            psi_n,
        )?;
        let taus = log_spaced(
            1e-2 * tau_gen_predicted,
            1e3 * tau_mem_predicted,
            params.n_tau,
        );
        let spec = CellSpec {
            d: params.d,
            psi_p: params.psi_p,
            psi_n,
            t: params.t,
            activation: &params.activation,
            measure: &params.measure,
            gram: GramMethod::Gep,
            n_noise: 0,
            with_score: true,
            seed: derive_seed(seed, &[index as u64]),
        };
        let curve = closed_form_curve(&spec, &taus)?;

        let tau_star = first_crossing(&curve.taus, &curve.l_gen, params.delta).ok_or_else(|| {
            Error::numerical(format!(
                "L_gen never exceeded delta = {} for psi_n = {psi_n} (tau up to {:.3e})",
                params.delta,
                taus.last().copied().unwrap_or(f64::NAN)
            ))
        })?;
        let tau_gen_measured = first_within_window(&curve.taus, &curve.e_score, params.rel_window)
            .ok_or_else(|| {
                Error::numerical(format!(
                    "E_score window never entered for psi_n = {psi_n}"
                ))
            })?;

        runs.push(CollapseRun {
            psi_n,
            tau_star,
            tau_gen_measured,
            tau_mem_predicted,
            tau_gen_predicted,
            onset_ratio: tau_star / tau_mem_predicted,
        });
        curves.push(curve);
    }

    let xs: Vec<f64> = runs.iter().map(|r| r.tau_mem_predicted).collect();
    let ys: Vec<f64> = runs.iter().map(|r| r.tau_star).collect();
    let fit = fit_through_origin(&xs, &ys)?;
    Ok((
        CollapseSummary {
            runs,
            fit,
            delta: params.delta,
            rel_window: params.rel_window,
        },
        curves,
    ))
}

/// First `τ` whose observable exceeds the threshold.
pub fn first_crossing(taus: &[f64], values: &[f64], threshold: f64) -> Option<f64> {
    taus.iter()
        .zip(values)
        .find(|(_, &v)| v > threshold)
        .map(|(&tau, _)| tau)
}

/// First `τ` whose value is within `window` (relative) of the minimum.
pub fn first_within_window(taus: &[f64], values: &[f64], window: f64) -> Option<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let cutoff = min * (1.0 + window) + f64::EPSILON;
    taus.iter()
        .zip(values)
        .find(|(_, &v)| v <= cutoff)
        .map(|(&tau, _)| tau)
}

/// Least-squares proportional fit with its `R²`.
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> Result<FitSummary> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid("fit needs equal-length nonempty samples"));
    }
    let sxx: f64 = x.iter().map(|&a| a * a).sum();
    if !(sxx > 0.0) {
        return Err(Error::numerical("degenerate abscissae in proportional fit"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| a * b).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - slope * a).powi(2))
        .sum();
    // No-intercept model: the baseline is y = 0, so the total sum of
    // squares is uncentered.
    let ss_tot: f64 = y.iter().map(|&b| b * b).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        f64::NAN
    };
    Ok(FitSummary { slope, r_squared })
}

/// JSON summary of a `generate` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateSummary {
    /// Provider name.
    pub provider: String,
    /// Scheme name.
    pub scheme: String,
    /// Fraction of generated samples flagged as memorized.
    pub f_mem: f64,
    /// Lower bootstrap confidence bound.
    pub ci_low: f64,
    /// Upper bootstrap confidence bound.
    pub ci_high: f64,
    /// Distance-ratio threshold.
    pub k: f64,
    /// Number of generated samples.
    pub n_generated: usize,
    /// Training-set size.
    pub n_train: usize,
    /// KL estimate against the target mixture; absent when the provider
    /// has no consistent cross-`t` score (the `rf` provider).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
}

/// Sample the backward process and report memorization (and KL when
/// the provider context allows).
pub fn run_generate(params: &GenerateParams, seed: u64) -> Result<(GenerateSummary, Array2<f64>)> {
    let mu = mixture_mean(params.d, false);
    let x_train = sample_mixture(&mu.view(), params.n_train, derive_seed(seed, &[tag::MIXTURE]))?;
    let train_set = Dataset::from_columns(x_train.clone(), SpectralMeasure::isotropic())?;

    let scheme = match params.scheme {
        SchemeTag::Em => SamplerScheme::EulerMaruyamaSde {
            steps: params.steps,
            t_start: DEFAULT_T_START,
            t_min: DEFAULT_T_MIN,
        },
        SchemeTag::Ddim => SamplerScheme::DdimDeterministic {
            ladder_len: DEFAULT_LADDER_LEN.max(params.steps),
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            steps: params.steps,
        },
    };
    let sampler = SamplerConfig {
        scheme,
        n_samples: params.n_samples,
        seed: derive_seed(seed, &[tag::SAMPLER]),
    };

    let rf_assets = if params.provider == ProviderTag::Rf {
        Some(rf_provider_assets(params, &train_set, seed)?)
    } else {
        None
    };
    let provider = match params.provider {
        ProviderTag::Gmm => ScoreProvider::exact_gmm(mu.clone())?,
        ProviderTag::Empirical => ScoreProvider::empirical(&train_set),
        ProviderTag::Rf => {
            let (model, snapshots) = rf_assets.as_ref().expect("assets built above");
            ScoreProvider::trained_rf(model, snapshots.clone())?
        }
    };

    let samples = generate_samples(&provider, &sampler)?;
    let report = memorization_fraction(
        &samples.view(),
        &x_train.view(),
        params.k,
        params.n_bootstrap,
        derive_seed(seed, &[tag::BOOTSTRAP]),
    )?;

    let kl = if params.kl && params.provider != ProviderTag::Rf {
        Some(kl_divergence_gmm(
            &provider,
            &mu.view(),
            params.n_samples,
            &NoiseLadder::canonical(),
            derive_seed(seed, &[tag::KL]),
        )?)
    } else {
        None
    };

    Ok((
        GenerateSummary {
            provider: params.provider.name().to_owned(),
            scheme: params.scheme.name().to_owned(),
            f_mem: report.f_mem,
            ci_low: report.ci_low,
            ci_high: report.ci_high,
            k: report.k,
            n_generated: report.n_generated,
            n_train: report.n_train,
            kl,
        },
        samples,
    ))
}

/// Train the `rf` provider's read-out snapshots on a log ladder of times.
///
/// Each snapshot is the closed-form read-out at the training horizon,
/// driven by a Monte-Carlo Gram of the (non-Gaussian) mixture training
/// set at that time.
fn rf_provider_assets(
    params: &GenerateParams,
    train_set: &Dataset,
    seed: u64,
) -> Result<(RfModel, Vec<(f64, Array2<f64>)>)> {
    let activation = parse_activation("tanh")?;
    let p = ratio_count("psi_p", params.psi_p, params.d)?;
    let model = RfModel::sample(p, params.d, activation, derive_seed(seed, &[tag::MODEL]))?;

    let (t_lo, t_hi) = match params.scheme {
        SchemeTag::Em => (DEFAULT_T_MIN, DEFAULT_T_START),
        // The deterministic ladder starts near `t ≈ β₁/2` and ends at the
        // terminal time of the canonical schedule.
        SchemeTag::Ddim => (0.4 * DEFAULT_BETA_MIN, 1.1 * DEFAULT_T_START),
    };
    let t_values = log_spaced(t_lo, t_hi, params.rf_snapshots);
    let mut snapshots = Vec::with_capacity(t_values.len());
    for (index, &t_snap) in t_values.iter().enumerate() {
        let gram = build_gram_mc(
            &model,
            train_set,
            t_snap,
            32,
            derive_seed(seed, &[tag::SNAPSHOT, index as u64]),
        )?;
        let flow = GramFlow::new(&gram, t_snap, None)?;
        snapshots.push((t_snap, flow.readout_at(params.train_tau)));
    }
    Ok((model, snapshots))
}

impl ProviderTag {
    /// Lowercase CLI name.
    pub fn name(self) -> &'static str {
        match self {
            ProviderTag::Gmm => "gmm",
            ProviderTag::Empirical => "empirical",
            ProviderTag::Rf => "rf",
        }
    }
}

impl SchemeTag {
    /// Lowercase CLI name.
    pub fn name(self) -> &'static str {
        match self {
            SchemeTag::Em => "em",
            SchemeTag::Ddim => "ddim",
        }
    }
}

/// Default number of DDIM sub-steps when the CLI leaves `--steps` unset.
pub const DDIM_DEFAULT_STEPS: usize = DEFAULT_DDIM_STEPS;

/// Columns of the generated-samples CSV: one coordinate per column.
pub fn sample_columns(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

/// Rows of the generated-samples CSV: one generated point per row.
pub fn sample_rows(samples: &Array2<f64>) -> Vec<Vec<f64>> {
    (0..samples.ncols())
        .map(|j| samples.column(j).to_vec())
        .collect()
}
