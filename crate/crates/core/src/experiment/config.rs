//! Experiment configuration: schema, parsing, and validation.
//!
//! A run is described by a small TOML document with three scalar keys and
//! exactly one parameter table named after the run kind:
//!
//! ```toml
//! kind = "train"
//! seed = 7
//! output_dir = "out/train-demo"   # optional; the CLI flag overrides it
//!
//! [train]
//! d = 16
//! psi_p = 4.0
//! psi_n = 2.0
//! t = 0.1
//! ```
//!
//! Parsing is strict: unknown keys anywhere in the document are errors, a
//! parameter table that does not match `kind` is an error, and sweeps with
//! empty value lists are rejected before any artifact is written. Every
//! field left out of the file is filled with its documented default at
//! parse time, so the configuration embedded in the run manifest is fully
//! resolved — re-running from a manifest reproduces the run exactly.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::constants::DEFAULT_QUAD_ORDER;
use crate::error::{Error, Result};
use crate::measure::SpectralMeasure;

/// Version stamp written into manifests and CSV headers.
///
/// Bump when an artifact schema changes shape; consumers key on it.
pub const ARTIFACT_VERSION: u32 = 1;

/// Run manifest: the artifact version plus the fully resolved
/// configuration.
///
/// Identical manifests produce bit-identical CSV outputs, and re-running
/// from an emitted manifest reproduces every number exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Schema version of all artifacts in the directory.
    pub artifact_version: u32,
    /// The resolved configuration, with every default made explicit.
    pub config: RawConfig,
}

/// Experiment kind tag, the `kind = "..."` key of a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindTag {
    /// Scalar Gaussian-equivalence constants at one `(activation, σ_x², t)`.
    Constants,
    /// Analytic spectral density and summary, optional finite-size check.
    Spectrum,
    /// One training run: loss and score-error curves against `τ`.
    Train,
    /// Sweep over `ψ_n`: overfitting onset times against `τ_mem`.
    Collapse,
    /// Backward sampling plus memorization / KL diagnostics.
    Generate,
    /// `(ψ_n, ψ_p)` phase grid of the generalization gap.
    Phase,
}

impl KindTag {
    /// Lowercase name, as written in config files and artifact names.
    pub fn name(self) -> &'static str {
        match self {
            KindTag::Constants => "constants",
            KindTag::Spectrum => "spectrum",
            KindTag::Train => "train",
            KindTag::Collapse => "collapse",
            KindTag::Generate => "generate",
            KindTag::Phase => "phase",
        }
    }
}

impl fmt::Display for KindTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// On-disk shape of a config file; also the `config` field of a manifest.
///
/// Exactly one parameter table — the one named after `kind` — must be
/// present. All tables reject unknown keys, so misspellings fail loudly
/// instead of silently falling back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    /// Which runner to dispatch to.
    pub kind: KindTag,
    /// Root seed; every random object of the run derives from it.
    pub seed: u64,
    /// Artifact directory. Optional in files (the CLI may supply it).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Parameters for `kind = "constants"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsParams>,
    /// Parameters for `kind = "spectrum"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumParams>,
    /// Parameters for `kind = "train"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainParams>,
    /// Parameters for `kind = "collapse"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collapse: Option<CollapseParams>,
    /// Parameters for `kind = "generate"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateParams>,
    /// Parameters for `kind = "phase"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseParams>,
}

/// A validated experiment description: kind-specific parameters, the root
/// seed, and the artifact directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Resolved parameters of the selected runner.
    pub kind: ExperimentKind,
    /// Root seed of the run.
    pub seed: u64,
    /// Directory all artifacts are written into.
    pub output_dir: PathBuf,
}

/// Resolved parameters, tagged by runner.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentKind {
    /// Scalar constants evaluation.
    Constants(ConstantsParams),
    /// Spectral density run.
    Spectrum(SpectrumParams),
    /// Single training run.
    Train(TrainParams),
    /// Onset-time sweep over `ψ_n`.
    Collapse(CollapseParams),
    /// Sampling and memorization run.
    Generate(GenerateParams),
    /// `(ψ_n, ψ_p)` phase sweep.
    Phase(PhaseParams),
}

impl ExperimentKind {
    /// The tag this variant corresponds to.
    pub fn tag(&self) -> KindTag {
        match self {
            ExperimentKind::Constants(_) => KindTag::Constants,
            ExperimentKind::Spectrum(_) => KindTag::Spectrum,
            ExperimentKind::Train(_) => KindTag::Train,
            ExperimentKind::Collapse(_) => KindTag::Collapse,
            ExperimentKind::Generate(_) => KindTag::Generate,
            ExperimentKind::Phase(_) => KindTag::Phase,
        }
    }
}

fn default_activation() -> String {
    "tanh".to_owned()
}

fn default_measure() -> String {
    "1:1".to_owned()
}

fn default_sigma_x2() -> f64 {
    1.0
}

fn default_order() -> usize {
    DEFAULT_QUAD_ORDER
}

/// Parameters of a `constants` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsParams {
    /// Activation name (`tanh`, `erf`, ...).
    #[serde(default = "default_activation")]
    pub activation: String,
    /// Per-coordinate data variance `σ_x²`.
    #[serde(default = "default_sigma_x2")]
    pub sigma_x2: f64,
    /// Diffusion time `t`.
    pub t: f64,
    /// Gauss–Hermite quadrature order.
    #[serde(default = "default_order")]
    pub order: usize,
}

impl ConstantsParams {
    /// Check ranges; activation is validated when it is parsed.
    pub fn validate(&self) -> Result<()> {
        ensure_positive("constants.t", self.t)?;
        ensure_positive("constants.sigma_x2", self.sigma_x2)?;
        if self.order < 2 {
            return Err(Error::Config(
                "constants.order must be at least 2".to_owned(),
            ));
        }
        Ok(())
    }
}

fn default_grid_count() -> usize {
    300
}

fn default_eps_final() -> f64 {
    1e-4
}

/// Parameters of a `spectrum` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumParams {
    /// Feature ratio `ψ_p = p/d`.
    pub psi_p: f64,
    /// Sample ratio `ψ_n = n/d`.
    pub psi_n: f64,
    /// Diffusion time `t`.
    pub t: f64,
    /// Data spectrum as `λ1:w1,λ2:w2,...` (weights are normalized).
    #[serde(default = "default_measure")]
    pub measure: String,
    /// Activation name.
    #[serde(default = "default_activation")]
    pub activation: String,
    /// Number of λ grid points.
    #[serde(default = "default_grid_count")]
    pub grid: usize,
    /// Final ε of the Stieltjes continuation to the real axis.
    #[serde(default = "default_eps_final")]
    pub eps_final: f64,
    /// When set, also diagonalize one finite-size Gram at this `d` and
    /// emit its eigenvalues.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empirical_d: Option<usize>,
}

impl SpectrumParams {
    /// Check ratios, grid size, and the ε target.
    pub fn validate(&self) -> Result<()> {
        ensure_positive("spectrum.psi_p", self.psi_p)?;
        ensure_positive("spectrum.psi_n", self.psi_n)?;
        ensure_positive("spectrum.t", self.t)?;
        ensure_positive("spectrum.eps_final", self.eps_final)?;
        if self.grid < 8 {
            return Err(Error::Config("spectrum.grid must be at least 8".to_owned()));
        }
        if self.eps_final > 0.1 {
            return Err(Error::Config(
                "spectrum.eps_final must not exceed 0.1".to_owned(),
            ));
        }
        if let Some(d) = self.empirical_d {
            if d == 0 {
                return Err(Error::Config(
                    "spectrum.empirical_d must be positive".to_owned(),
                ));
            }
        }
        parse_measure(&self.measure)?;
        parse_activation(&self.activation)?;
        Ok(())
    }
}

/// How a training run evolves the read-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMethod {
    /// Exact gradient flow through the Gram eigendecomposition.
    ClosedForm,
    /// Discrete gradient descent.
    Gd,
    /// Adam with default moments.
    Adam,
}

impl FromStr for TrainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed-form" => Ok(TrainMethod::ClosedForm),
            "gd" => Ok(TrainMethod::Gd),
            "adam" => Ok(TrainMethod::Adam),
            other => Err(Error::Config(format!(
                "unknown train method `{other}` (expected closed-form, gd, or adam)"
            ))),
        }
    }
}

/// How the training Gram pair is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GramMethod {
    /// Deterministic Gaussian-equivalent form.
    Gep,
    /// Monte-Carlo average over noise replicas.
    Mc,
}

impl FromStr for GramMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gep" => Ok(GramMethod::Gep),
            "mc" => Ok(GramMethod::Mc),
            other => Err(Error::Config(format!(
                "unknown gram method `{other}` (expected gep or mc)"
            ))),
        }
    }
}

fn default_train_method() -> TrainMethod {
    TrainMethod::ClosedForm
}

fn default_gram_method() -> GramMethod {
    GramMethod::Gep
}

fn default_n_noise() -> usize {
    32
}

fn default_tau_min() -> f64 {
    1.0
}

fn default_tau_max() -> f64 {
    1e5
}

fn default_n_tau() -> usize {
    60
}

fn default_eta() -> f64 {
    0.05
}

fn default_n_steps() -> usize {
    2000
}

/// Parameters of a `train` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    /// Ambient dimension.
    pub d: usize,
    /// Feature ratio `ψ_p = p/d`.
    pub psi_p: f64,
    /// Sample ratio `ψ_n = n/d`.
    pub psi_n: f64,
    /// Diffusion time `t`.
    pub t: f64,
    /// Activation name.
    #[serde(default = "default_activation")]
    pub activation: String,
    /// Data spectrum as `λ1:w1,...`.
    #[serde(default = "default_measure")]
    pub measure: String,
    /// Dynamics: exact flow or a discrete optimizer.
    #[serde(default = "default_train_method")]
    pub method: TrainMethod,
    /// Gram construction for the training objective.
    #[serde(default = "default_gram_method")]
    pub gram: GramMethod,
    /// Noise replicas per data point for the Monte-Carlo Gram.
    #[serde(default = "default_n_noise")]
    pub n_noise: usize,
    /// Smallest recorded `τ` (closed form).
    #[serde(default = "default_tau_min")]
    pub tau_min: f64,
    /// Largest recorded `τ` (closed form).
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    /// Number of log-spaced record times (closed form).
    #[serde(default = "default_n_tau")]
    pub n_tau: usize,
    /// Learning rate (gd / adam).
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Optimizer steps (gd / adam).
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
}

impl TrainParams {
    /// Check dimensions, the `τ` window, and the optimizer settings.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("train.d must be positive".to_owned()));
        }
        ensure_positive("train.psi_p", self.psi_p)?;
        ensure_positive("train.psi_n", self.psi_n)?;
        ensure_positive("train.t", self.t)?;
        ensure_positive("train.tau_min", self.tau_min)?;
        if !(self.tau_max > self.tau_min) {
            return Err(Error::Config(
                "train.tau_max must exceed train.tau_min".to_owned(),
            ));
        }
        if self.n_tau < 2 {
            return Err(Error::Config("train.n_tau must be at least 2".to_owned()));
        }
        ensure_positive("train.eta", self.eta)?;
        if self.method != TrainMethod::ClosedForm && self.n_steps == 0 {
            return Err(Error::Config(
                "train.n_steps must be positive for iterative methods".to_owned(),
            ));
        }
        if self.gram == GramMethod::Mc && self.n_noise == 0 {
            return Err(Error::Config(
                "train.n_noise must be positive for the mc gram".to_owned(),
            ));
        }
        parse_measure(&self.measure)?;
        parse_activation(&self.activation)?;
        Ok(())
    }
}

fn default_collapse_d() -> usize {
    100
}

fn default_collapse_psi_p() -> f64 {
    64.0
}

fn default_collapse_t() -> f64 {
    0.1
}

fn default_collapse_psi_n_values() -> Vec<f64> {
    vec![4.0, 8.0, 16.0, 32.0]
}

fn default_delta() -> f64 {
    0.01
}

fn default_rel_window() -> f64 {
    0.1
}

fn default_collapse_n_tau() -> usize {
    400
}

/// Parameters of a `collapse` run: one closed-form training curve per
/// `ψ_n`, onset times, and the fit of `τ*` against `τ_mem`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseParams {
    /// Ambient dimension.
    #[serde(default = "default_collapse_d")]
    pub d: usize,
    /// Feature ratio, fixed across the sweep.
    #[serde(default = "default_collapse_psi_p")]
    pub psi_p: f64,
    /// Diffusion time `t`.
    #[serde(default = "default_collapse_t")]
    pub t: f64,
    /// Swept sample ratios.
    #[serde(default = "default_collapse_psi_n_values")]
    pub psi_n_values: Vec<f64>,
    /// Overfitting-onset threshold on `L_gen`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Relative window defining the measured `τ_gen`: first `τ` with
    /// `E_score` within this fraction of its minimum.
    #[serde(default = "default_rel_window")]
    pub rel_window: f64,
    /// Log-spaced `τ` grid size per run.
    #[serde(default = "default_collapse_n_tau")]
    pub n_tau: usize,
    /// Activation name.
    #[serde(default = "default_activation")]
    pub activation: String,
    /// Data spectrum as `λ1:w1,...`.
    #[serde(default = "default_measure")]
    pub measure: String,
}

impl CollapseParams {
    /// Check the sweep list and thresholds.
    pub fn validate(&self) -> Result<()> {
        if self.psi_n_values.is_empty() {
            return Err(Error::Config(
                "collapse.psi_n_values must not be empty".to_owned(),
            ));
        }
        if self.d == 0 {
            return Err(Error::Config("collapse.d must be positive".to_owned()));
        }
        ensure_positive("collapse.psi_p", self.psi_p)?;
        ensure_positive("collapse.t", self.t)?;
        ensure_positive("collapse.delta", self.delta)?;
        ensure_positive("collapse.rel_window", self.rel_window)?;
        for &psi_n in &self.psi_n_values {
            ensure_positive("collapse.psi_n_values", psi_n)?;
        }
        if self.n_tau < 8 {
            return Err(Error::Config(
                "collapse.n_tau must be at least 8".to_owned(),
            ));
        }
        parse_measure(&self.measure)?;
        parse_activation(&self.activation)?;
        Ok(())
    }
}

/// Score provider of a `generate` run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderTag {
    /// Exact two-mode mixture score.
    Gmm,
    /// Empirical score of the training set.
    Empirical,
    /// Trained random-features read-outs on a time ladder.
    Rf,
}

impl FromStr for ProviderTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(ProviderTag::Gmm),
            "empirical" => Ok(ProviderTag::Empirical),
            "rf" => Ok(ProviderTag::Rf),
            other => Err(Error::Config(format!(
                "unknown provider `{other}` (expected gmm, empirical, or rf)"
            ))),
        }
    }
}

/// Backward-sampling scheme of a `generate` run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeTag {
    /// Euler–Maruyama on the reverse SDE.
    Em,
    /// Deterministic noise-prediction recursion.
    Ddim,
}

impl FromStr for SchemeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(SchemeTag::Em),
            "ddim" => Ok(SchemeTag::Ddim),
            other => Err(Error::Config(format!(
                "unknown scheme `{other}` (expected em or ddim)"
            ))),
        }
    }
}

fn default_provider() -> ProviderTag {
    ProviderTag::Gmm
}

fn default_scheme() -> SchemeTag {
    SchemeTag::Em
}

fn default_generate_d() -> usize {
    8
}

fn default_n_train() -> usize {
    16
}

fn default_n_samples() -> usize {
    500
}

fn default_k() -> f64 {
    crate::generation::DEFAULT_MEMORIZATION_K
}

fn default_em_steps() -> usize {
    1000
}

fn default_n_bootstrap() -> usize {
    crate::generation::DEFAULT_BOOTSTRAP
}

fn default_kl() -> bool {
    true
}

fn default_rf_psi_p() -> f64 {
    16.0
}

fn default_rf_train_tau() -> f64 {
    1e4
}

fn default_rf_snapshots() -> usize {
    24
}

/// Parameters of a `generate` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateParams {
    /// Score provider.
    #[serde(default = "default_provider")]
    pub provider: ProviderTag,
    /// Sampling scheme.
    #[serde(default = "default_scheme")]
    pub scheme: SchemeTag,
    /// Ambient dimension.
    #[serde(default = "default_generate_d")]
    pub d: usize,
    /// Training-set size.
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    /// Number of generated trajectories.
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// Memorization distance-ratio threshold.
    #[serde(default = "default_k")]
    pub k: f64,
    /// Integration steps (EM) or ladder sub-sampling (DDIM).
    #[serde(default = "default_em_steps")]
    pub steps: usize,
    /// Bootstrap resamples of the memorization CI.
    #[serde(default = "default_n_bootstrap")]
    pub n_bootstrap: usize,
    /// Compute the KL estimate when the provider allows it (`gmm` and
    /// `empirical`; the `rf` provider has no cross-`t` score consistency).
    #[serde(default = "default_kl")]
    pub kl: bool,
    /// Feature ratio of the `rf` provider's model.
    #[serde(default = "default_rf_psi_p")]
    pub psi_p: f64,
    /// Training horizon `τ` of every `rf` read-out snapshot.
    #[serde(default = "default_rf_train_tau")]
    pub train_tau: f64,
    /// Number of time-ladder snapshots of the `rf` provider.
    #[serde(default = "default_rf_snapshots")]
    pub rf_snapshots: usize,
}

impl GenerateParams {
    /// Check counts and the threshold range.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("generate.d must be positive".to_owned()));
        }
        if self.n_train < 2 {
            return Err(Error::Config(
                "generate.n_train must be at least 2".to_owned(),
            ));
        }
        if self.n_samples == 0 {
            return Err(Error::Config(
                "generate.n_samples must be positive".to_owned(),
            ));
        }
        if self.steps == 0 {
            return Err(Error::Config("generate.steps must be positive".to_owned()));
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(Error::Config(
                "generate.k must lie strictly between 0 and 1".to_owned(),
            ));
        }
        if self.provider == ProviderTag::Rf {
            ensure_positive("generate.psi_p", self.psi_p)?;
            ensure_positive("generate.train_tau", self.train_tau)?;
            if self.rf_snapshots < 2 {
                return Err(Error::Config(
                    "generate.rf_snapshots must be at least 2".to_owned(),
                ));
            }
        }
        Ok(())
    }
}

fn default_phase_d() -> usize {
    32
}

fn default_phase_t() -> f64 {
    0.1
}

fn default_phase_values() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
}

fn default_tau_checkpoints() -> Vec<f64> {
    vec![1e3, 1e4]
}

/// Parameters of a `phase` run: the generalization gap on a
/// `(ψ_n, ψ_p)` grid at a few `τ` checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseParams {
    /// Ambient dimension of every cell.
    #[serde(default = "default_phase_d")]
    pub d: usize,
    /// Diffusion time `t`.
    #[serde(default = "default_phase_t")]
    pub t: f64,
    /// Grid values of `ψ_n`.
    #[serde(default = "default_phase_values")]
    pub psi_n_values: Vec<f64>,
    /// Grid values of `ψ_p`.
    #[serde(default = "default_phase_values")]
    pub psi_p_values: Vec<f64>,
    /// Rescaled times the gap is evaluated at.
    #[serde(default = "default_tau_checkpoints")]
    pub tau_checkpoints: Vec<f64>,
    /// Activation name.
    #[serde(default = "default_activation")]
    pub activation: String,
    /// Data spectrum as `λ1:w1,...`.
    #[serde(default = "default_measure")]
    pub measure: String,
}

impl PhaseParams {
    /// Check the grid lists and checkpoint times.
    pub fn validate(&self) -> Result<()> {
        if self.psi_n_values.is_empty() || self.psi_p_values.is_empty() {
            return Err(Error::Config(
                "phase.psi_n_values and phase.psi_p_values must not be empty".to_owned(),
            ));
        }
        if self.tau_checkpoints.is_empty() {
            return Err(Error::Config(
                "phase.tau_checkpoints must not be empty".to_owned(),
            ));
        }
        if self.d == 0 {
            return Err(Error::Config("phase.d must be positive".to_owned()));
        }
        ensure_positive("phase.t", self.t)?;
        for &v in self.psi_n_values.iter().chain(&self.psi_p_values) {
            ensure_positive("phase grid values", v)?;
        }
        for &tau in &self.tau_checkpoints {
            ensure_positive("phase.tau_checkpoints", tau)?;
        }
        parse_measure(&self.measure)?;
        parse_activation(&self.activation)?;
        Ok(())
    }
}

impl ExperimentConfig {
    /// Parse a TOML config document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)
            .map_err(|err| Error::Config(format!("config parse error: {err}")))?;
        Self::from_raw(raw)
    }

    /// Load a config from a file: TOML, or — when the file is a run
    /// manifest (`.json`) — the configuration embedded in it.
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_file_with_dir(path, None)
    }

    /// [`ExperimentConfig::from_file`] with an output-directory override;
    /// the override wins over the file's `output_dir`, and files may omit
    /// the key entirely when an override is supplied.
    pub fn from_file_with_dir(path: &Path, out_dir: Option<PathBuf>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut raw = if path.extension().is_some_and(|ext| ext == "json") {
            let manifest: Manifest = serde_json::from_str(&text)
                .map_err(|err| Error::Config(format!("manifest parse error: {err}")))?;
            if manifest.artifact_version != ARTIFACT_VERSION {
                return Err(Error::Config(format!(
                    "manifest artifact version {} does not match this binary (version {})",
                    manifest.artifact_version, ARTIFACT_VERSION
                )));
            }
            manifest.config
        } else {
            toml::from_str(&text)
                .map_err(|err| Error::Config(format!("config parse error: {err}")))?
        };
        if let Some(dir) = out_dir {
            raw.output_dir = Some(dir);
        }
        Self::from_raw(raw)
    }

    /// Resolve a raw document: exactly one parameter table, matching
    /// `kind`, must be present, and the output directory must be known.
    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let RawConfig {
            kind,
            seed,
            output_dir,
            constants,
            spectrum,
            train,
            collapse,
            generate,
            phase,
        } = raw;

        let mut tables: Vec<&str> = Vec::new();
        if constants.is_some() {
            tables.push("constants");
        }
        if spectrum.is_some() {
            tables.push("spectrum");
        }
        if train.is_some() {
            tables.push("train");
        }
        if collapse.is_some() {
            tables.push("collapse");
        }
        if generate.is_some() {
            tables.push("generate");
        }
        if phase.is_some() {
            tables.push("phase");
        }
        for table in &tables {
            if *table != kind.name() {
                return Err(Error::Config(format!(
                    "parameter table [{table}] does not match kind = \"{kind}\""
                )));
            }
        }

        let missing = || Error::Config(format!("missing parameter table [{}]", kind.name()));
        let kind = match kind {
            KindTag::Constants => ExperimentKind::Constants(constants.ok_or_else(missing)?),
            KindTag::Spectrum => ExperimentKind::Spectrum(spectrum.ok_or_else(missing)?),
            KindTag::Train => ExperimentKind::Train(train.ok_or_else(missing)?),
            KindTag::Collapse => ExperimentKind::Collapse(collapse.ok_or_else(missing)?),
            KindTag::Generate => ExperimentKind::Generate(generate.ok_or_else(missing)?),
            KindTag::Phase => ExperimentKind::Phase(phase.ok_or_else(missing)?),
        };

        let output_dir = output_dir.ok_or_else(|| {
            Error::Config("output_dir missing (set it in the config or pass --out-dir)".to_owned())
        })?;
        Ok(ExperimentConfig {
            kind,
            seed,
            output_dir,
        })
    }

    /// Replace the output directory (the CLI flag overrides the file).
    pub fn with_output_dir(mut self, dir: PathBuf) -> Self {
        self.output_dir = dir;
        self
    }

    /// The raw on-disk shape, fully resolved (all defaults explicit).
    pub fn to_raw(&self) -> RawConfig {
        let mut raw = RawConfig {
            kind: self.kind.tag(),
            seed: self.seed,
            output_dir: Some(self.output_dir.clone()),
            constants: None,
            spectrum: None,
            train: None,
            collapse: None,
            generate: None,
            phase: None,
        };
        match &self.kind {
            ExperimentKind::Constants(p) => raw.constants = Some(p.clone()),
            ExperimentKind::Spectrum(p) => raw.spectrum = Some(p.clone()),
            ExperimentKind::Train(p) => raw.train = Some(p.clone()),
            ExperimentKind::Collapse(p) => raw.collapse = Some(p.clone()),
            ExperimentKind::Generate(p) => raw.generate = Some(p.clone()),
            ExperimentKind::Phase(p) => raw.phase = Some(p.clone()),
        }
        raw
    }

    /// The manifest this run will write.
    pub fn manifest(&self) -> Manifest {
        Manifest {
            artifact_version: ARTIFACT_VERSION,
            config: self.to_raw(),
        }
    }

    /// Validate every parameter; no artifact is written when this fails.
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ExperimentKind::Constants(p) => p.validate(),
            ExperimentKind::Spectrum(p) => p.validate(),
            ExperimentKind::Train(p) => p.validate(),
            ExperimentKind::Collapse(p) => p.validate(),
            ExperimentKind::Generate(p) => p.validate(),
            ExperimentKind::Phase(p) => p.validate(),
        }
    }
}

fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::Config(format!("{name} must be positive, got {value}")));
    }
    Ok(())
}

/// Parse a measure spec string, mapping failures to config errors.
pub fn parse_measure(text: &str) -> Result<SpectralMeasure> {
    SpectralMeasure::parse(text).map_err(|err| Error::Config(format!("measure: {err}")))
}

/// Parse an activation name, mapping failures to config errors.
pub fn parse_activation(name: &str) -> Result<Activation> {
    Activation::parse(name).map_err(|err| Error::Config(format!("activation: {err}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_train_config() {
        let cfg = ExperimentConfig::from_toml_str(
            "kind = \"train\"\nseed = 7\noutput_dir = \"out\"\n\n[train]\nd = 16\npsi_p = 4.0\npsi_n = 2.0\nt = 0.1\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        match &cfg.kind {
            ExperimentKind::Train(p) => {
                assert_eq!(p.d, 16);
                assert_eq!(p.method, TrainMethod::ClosedForm);
                assert_eq!(p.gram, GramMethod::Gep);
                assert_eq!(p.n_tau, default_n_tau());
            }
            other => panic!("wrong kind: {other:?}"),
        }
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_with_name() {
        let err = ExperimentConfig::from_toml_str(
            "kind = \"train\"\nseed = 1\noutput_dir = \"out\"\n\n[train]\nd = 8\npsi_p = 2.0\npsi_n = 1.0\nt = 0.1\netaa = 0.3\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("etaa"), "message should name the key: {msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_mismatched_parameter_table() {
        let err = ExperimentConfig::from_toml_str(
            "kind = \"train\"\nseed = 1\noutput_dir = \"out\"\n\n[spectrum]\npsi_p = 4.0\npsi_n = 2.0\nt = 0.1\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("[spectrum]"));
    }

    #[test]
    fn rejects_missing_parameter_table() {
        let err =
            ExperimentConfig::from_toml_str("kind = \"phase\"\nseed = 1\noutput_dir = \"out\"\n")
                .unwrap_err();
        assert!(err.to_string().contains("[phase]"));
    }

    #[test]
    fn empty_sweep_list_fails_validation() {
        let cfg = ExperimentConfig::from_toml_str(
            "kind = \"collapse\"\nseed = 1\noutput_dir = \"out\"\n\n[collapse]\npsi_n_values = []\n",
        )
        .unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn raw_round_trip_is_lossless() {
        let cfg = ExperimentConfig::from_toml_str(
            "kind = \"generate\"\nseed = 99\noutput_dir = \"g\"\n\n[generate]\nprovider = \"empirical\"\nscheme = \"ddim\"\nd = 6\nn_train = 12\nsteps = 50\n",
        )
        .unwrap();
        let text = toml::to_string(&cfg.to_raw()).unwrap();
        let again = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn manifest_json_round_trip_is_lossless() {
        let cfg = ExperimentConfig::from_toml_str(
            "kind = \"spectrum\"\nseed = 3\noutput_dir = \"s\"\n\n[spectrum]\npsi_p = 16.0\npsi_n = 4.0\nt = 0.1\nempirical_d = 50\n",
        )
        .unwrap();
        let json = serde_json::to_string(&cfg.manifest()).unwrap();
        let manifest: Manifest = serde_json::from_str(&json).unwrap();
        let again = ExperimentConfig::from_raw(manifest.config).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn kind_tags_parse_all_variants() {
        for (name, tag) in [
            ("constants", KindTag::Constants),
            ("spectrum", KindTag::Spectrum),
            ("train", KindTag::Train),
            ("collapse", KindTag::Collapse),
            ("generate", KindTag::Generate),
            ("phase", KindTag::Phase),
        ] {
            assert_eq!(tag.name(), name);
        }
        assert_eq!("gmm".parse::<ProviderTag>().unwrap(), ProviderTag::Gmm);
        assert_eq!("ddim".parse::<SchemeTag>().unwrap(), SchemeTag::Ddim);
        assert_eq!(
            "closed-form".parse::<TrainMethod>().unwrap(),
            TrainMethod::ClosedForm
        );
        assert!("nope".parse::<ProviderTag>().is_err());
    }
}
