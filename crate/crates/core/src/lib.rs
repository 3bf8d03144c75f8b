//! `rflab` — a numerical laboratory for diffusion score models built on
//! random features.
//!
//! The crate studies a two-layer score model `s(x) = (A/√p) σ(W x/√d)` with a
//! frozen Gaussian random first layer `W ∈ ℝ^{p×d}` and a trained read-out
//! `A ∈ ℝ^{d×p}`, fitted by denoising score matching on `n` Gaussian training
//! points noised by an Ornstein–Uhlenbeck process. Everything of interest is
//! controlled by the ratios `ψ_p = p/d` and `ψ_n = n/d` and by scalar Gaussian
//! moments of the activation.
//!
//! Module map:
//!
//! * [`quad`], [`activation`], [`constants`] — Gauss–Hermite quadrature and
//!   the scalar constants of the noised feature map;
//! * [`measure`], [`model`], [`gram`] — data covariance spectra, the
//!   random-feature model, and its training Gram matrices (empirical and
//!   Gaussian-equivalent);
//! * [`training`] — quadratic score-matching losses, gradients, gradient
//!   descent/Adam loops, and the closed-form gradient-flow solution;
//! * [`spectrum`] — the coupled Stieltjes-transform equations for the Gram
//!   spectral density, its asymptotic bulks, and memorization/generalization
//!   timescales;
//! * [`generation`] — backward samplers (stochastic and deterministic),
//!   score providers, memorization metrics, and a KL estimate for mixture
//!   targets;
//! * [`experiment`] — config-file driven experiment runners shared by the
//!   `rflab` command-line interface.

// The system BLAS/LAPACK provides every dense kernel used here; this anchor
// keeps the link directives from openblas-src even though no symbol from the
// crate itself is referenced.
use openblas_src as _;

pub mod activation;
pub mod constants;
pub mod error;
pub mod experiment;
pub mod generation;
pub mod gram;
pub mod linalg;
pub mod measure;
pub mod model;
pub mod quad;
pub mod seeding;
pub mod spectrum;
pub mod training;

pub use error::{Error, Result};
