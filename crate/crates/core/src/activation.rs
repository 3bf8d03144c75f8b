//! Pointwise activations for the random-feature score model.
//!
//! The asymptotic theory implemented in [`crate::constants`] and
//! [`crate::spectrum`] assumes the activation is centred: `E[σ(Z)] = 0`
//! under a standard Gaussian input. The odd activations ([`Activation::Tanh`],
//! [`Activation::Erf`]) satisfy this at *every* input scale. The rectifier
//! variant is recentred at construction so the property holds at unit input
//! scale; being non-odd, no constant shift can enforce it at all scales
//! simultaneously, and the same caveat applies to a general tabulated
//! activation. Callers probing strongly non-unit input variances with
//! non-odd activations should expect the centring assumption to degrade.

use crate::error::{Error, Result};
use crate::quad::GaussHermite;
use ndarray::ArrayViewMut2;

/// Order of the quadrature rule used for construction-time recentring.
const RECENTER_QUAD_ORDER: usize = 80;

/// A scalar activation function applied entrywise to pre-activations.
#[derive(Debug, Clone)]
pub enum Activation {
    /// Hyperbolic tangent; odd and bounded.
    Tanh,
    /// Error function `erf(x)`; odd and bounded.
    Erf,
    /// `scale·max(x, 0) − scale/√(2π)`: a rectifier recentred to zero mean
    /// under a unit Gaussian input.
    ScaledShiftedRelu {
        /// Multiplier applied to the rectified input.
        scale: f64,
        /// Constant subtracted so that `E[σ(Z)] = 0`; fixed at construction.
        shift: f64,
    },
    /// Natural cubic spline through user-supplied samples, recentred at
    /// construction and clamped to its endpoint values outside the grid.
    Tabulated(TabulatedActivation),
}

impl Activation {
    /// The hyperbolic tangent activation.
    pub fn tanh() -> Self {
        Activation::Tanh
    }

    /// The error-function activation.
    pub fn erf() -> Self {
        Activation::Erf
    }

    /// A recentred rectifier with the given positive scale.
    pub fn scaled_shifted_relu(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!(
                "rectifier scale must be positive and finite, got {scale}"
            )));
        }
        let shift = scale / (2.0 * std::f64::consts::PI).sqrt();
        Ok(Activation::ScaledShiftedRelu { scale, shift })
    }

    /// A tabulated activation interpolated from `(xs, ys)` samples.
    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Ok(Activation::Tabulated(TabulatedActivation::new(xs, ys)?))
    }

    /// Evaluate the activation at a point.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Erf => libm::erf(x),
            Activation::ScaledShiftedRelu { scale, shift } => scale * x.max(0.0) - shift,
            Activation::Tabulated(tab) => tab.eval(x),
        }
    }

    /// Apply the activation entrywise in place.
    pub fn apply_inplace(&self, mut a: ArrayViewMut2<f64>) {
        match self {
            Activation::Tanh => a.mapv_inplace(f64::tanh),
            Activation::Erf => a.mapv_inplace(libm::erf),
            Activation::ScaledShiftedRelu { scale, shift } => {
                let (s, c) = (*scale, *shift);
                a.mapv_inplace(|x| s * x.max(0.0) - c)
            }
            Activation::Tabulated(tab) => a.mapv_inplace(|x| tab.eval(x)),
        }
    }

    /// True when `σ(−x) = −σ(x)`, in which case the zero-mean property is
    /// scale-independent.
    pub fn is_odd(&self) -> bool {
        matches!(self, Activation::Tanh | Activation::Erf)
    }

    /// Parse a CLI/config name: `tanh`, `erf`, `relu` or `relu:<scale>`.
    pub fn parse(name: &str) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        match lower.as_str() {
            "tanh" => Ok(Activation::Tanh),
            "erf" => Ok(Activation::Erf),
            "relu" => Activation::scaled_shifted_relu(1.0),
            other => {
                if let Some(rest) = other.strip_prefix("relu:") {
                    let scale: f64 = rest.parse().map_err(|_| {
                        Error::invalid(format!("cannot parse rectifier scale in '{name}'"))
                    })?;
                    Activation::scaled_shifted_relu(scale)
                } else {
                    Err(Error::invalid(format!(
                        "unknown activation '{name}' (expected tanh, erf, relu or relu:<scale>)"
                    )))
                }
            }
        }
    }

    /// Canonical name for manifests and file headers.
    pub fn name(&self) -> String {
        match self {
            Activation::Tanh => "tanh".to_string(),
            Activation::Erf => "erf".to_string(),
            Activation::ScaledShiftedRelu { scale, .. } => format!("relu:{scale}"),
            Activation::Tabulated(_) => "tabulated".to_string(),
        }
    }
}

/// Natural cubic spline through strictly increasing sample points.
#[derive(Debug, Clone)]
pub struct TabulatedActivation {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Spline second derivatives at the knots (natural boundary: zero at ends).
    second: Vec<f64>,
    /// Constant subtracted to enforce `E[σ(Z)] = 0` at unit input scale.
    shift: f64,
}

impl TabulatedActivation {
    /// Build the spline and recentre it under the standard Gaussian.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch(format!(
                "tabulated activation needs matching grids, got {} xs and {} ys",
                xs.len(),
                ys.len()
            )));
        }
        if xs.len() < 4 {
            return Err(Error::invalid(
                "tabulated activation needs at least 4 sample points",
            ));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("tabulated activation samples must be finite"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "tabulated activation grid must be strictly increasing",
            ));
        }

        let second = natural_spline_second_derivatives(&xs, &ys);
        let mut tab = TabulatedActivation {
            xs,
            ys,
            second,
            shift: 0.0,
        };
        let rule = GaussHermite::new(RECENTER_QUAD_ORDER)?;
        tab.shift = rule.integrate(|z| tab.eval_raw(z));
        Ok(tab)
    }

    /// Recentring constant determined at construction.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Spline value before recentring, clamped outside the grid.
    fn eval_raw(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        // Index of the interval [xs[i], xs[i+1]] containing x.
        let i = match self
            .xs
            .binary_search_by(|probe| probe.partial_cmp(&x).expect("finite grid"))
        {
            Ok(exact) => return self.ys[exact],
            Err(insertion) => insertion - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = x - self.xs[i];
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let slope = (self.ys[i + 1] - self.ys[i]) / h - h * (2.0 * m0 + m1) / 6.0;
        self.ys[i] + t * (slope + t * (m0 / 2.0 + t * (m1 - m0) / (6.0 * h)))
    }

    /// Recentred spline value.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_raw(x) - self.shift
    }
}

/// Solve the natural-spline tridiagonal system for second derivatives.
fn natural_spline_second_derivatives(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut second = vec![0.0; n];
    if n < 3 {
        return second;
    }
    // Thomas algorithm on the interior unknowns M_1..M_{n-2}.
    let m = n - 2;
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for k in 0..m {
        let i = k + 1;
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        diag[k] = 2.0 * (h0 + h1);
        upper[k] = h1;
        rhs[k] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
    }
    for k in 1..m {
        let i = k + 1;
        let lower = xs[i] - xs[i - 1];
        let w = lower / diag[k - 1];
        diag[k] -= w * upper[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    if m > 0 {
        second[m] = rhs[m - 1] / diag[m - 1];
        for k in (0..m - 1).rev() {
            second[k + 1] = (rhs[k] - upper[k] * second[k + 2]) / diag[k];
        }
    }
    second
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn odd_activations_have_zero_gaussian_mean_at_any_scale() {
        let rule = GaussHermite::new(60).unwrap();
        for act in [Activation::tanh(), Activation::erf()] {
            for gamma in [0.3, 1.0, 2.7] {
                let mean = rule.integrate(|z| act.eval(gamma * z));
                assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn erf_matches_reference_value() {
        // Oracle: erf(0.5) from standard tables.
        let act = Activation::erf();
        assert_abs_diff_eq!(act.eval(0.5), 0.5204998778130465, epsilon = 1e-15);
        assert_abs_diff_eq!(act.eval(-0.5), -0.5204998778130465, epsilon = 1e-15);
    }

    #[test]
    fn rectifier_is_recentred_at_unit_scale_only() {
        // The kink at zero limits Gauss-Hermite to algebraic accuracy, so
        // even a high-order rule verifies the analytic recentring constant
        // only at the 1e-3 level.
        let rule = GaussHermite::new(400).unwrap();
        let act = Activation::scaled_shifted_relu(1.7).unwrap();
        let mean_unit = rule.integrate(|z| act.eval(z));
        assert_abs_diff_eq!(mean_unit, 0.0, epsilon = 1e-3);
        // Analytic check of the shape: slope `scale` on the positive side.
        assert_abs_diff_eq!(act.eval(2.0) - act.eval(1.0), 1.7, epsilon = 1e-15);
        assert_abs_diff_eq!(act.eval(-1.0), act.eval(-2.0), epsilon = 1e-15);
        // Non-odd: the recentring does not survive a change of input scale.
        let mean_scaled = rule.integrate(|z| act.eval(2.0 * z));
        assert!(mean_scaled.abs() > 1e-2);
    }

    #[test]
    fn rejects_bad_rectifier_scale() {
        assert!(Activation::scaled_shifted_relu(0.0).is_err());
        assert!(Activation::scaled_shifted_relu(-1.0).is_err());
        assert!(Activation::scaled_shifted_relu(f64::NAN).is_err());
    }

    #[test]
    fn tabulated_reproduces_tanh() {
        let xs: Vec<f64> = (0..=400).map(|i| -8.0 + 16.0 * i as f64 / 400.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| x.tanh()).collect();
        let act = Activation::tabulated(xs, ys).unwrap();
        for &x in &[-3.3, -0.71, 0.0, 0.013, 1.9, 5.5] {
            assert_abs_diff_eq!(act.eval(x), x.tanh(), epsilon = 1e-6);
        }
        // tanh is already centred, so the recorded shift is tiny.
        if let Activation::Tabulated(tab) = &act {
            assert!(tab.shift().abs() < 1e-9);
        } else {
            unreachable!();
        }
    }

    #[test]
    fn tabulated_is_recentred_and_clamped() {
        // A deliberately uncentred function: x ↦ x² on [-6, 6].
        let xs: Vec<f64> = (0..=240).map(|i| -6.0 + 12.0 * i as f64 / 240.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| x * x).collect();
        let act = Activation::tabulated(xs, ys).unwrap();
        let rule = GaussHermite::new(80).unwrap();
        let mean = rule.integrate(|z| act.eval(z));
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
        // Constant extrapolation beyond the grid.
        assert_abs_diff_eq!(act.eval(100.0), act.eval(6.0), epsilon = 1e-12);
        assert_abs_diff_eq!(act.eval(-100.0), act.eval(-6.0), epsilon = 1e-12);
    }

    #[test]
    fn tabulated_validation() {
        assert!(Activation::tabulated(vec![0.0, 1.0], vec![0.0, 1.0]).is_err());
        assert!(
            Activation::tabulated(vec![0.0, 1.0, 1.0, 2.0], vec![0.0; 4]).is_err(),
            "non-increasing grid must be rejected"
        );
        assert!(Activation::tabulated(vec![0.0, 1.0, 2.0, f64::NAN], vec![0.0; 4]).is_err());
        assert!(Activation::tabulated(vec![0.0, 1.0, 2.0, 3.0], vec![0.0; 3]).is_err());
    }

    #[test]
    fn parse_round_trips() {
        assert!(matches!(Activation::parse("tanh").unwrap(), Activation::Tanh));
        assert!(matches!(Activation::parse("ERF").unwrap(), Activation::Erf));
        assert!(matches!(
            Activation::parse("relu").unwrap(),
            Activation::ScaledShiftedRelu { .. }
        ));
        match Activation::parse("relu:2.5").unwrap() {
            Activation::ScaledShiftedRelu { scale, .. } => {
                assert_abs_diff_eq!(scale, 2.5, epsilon = 1e-15)
            }
            _ => panic!("expected rectifier"),
        }
        assert!(Activation::parse("gelu").is_err());
        assert!(Activation::parse("relu:x").is_err());
    }

    #[test]
    fn apply_inplace_matches_eval() {
        use ndarray::array;
        let act = Activation::tanh();
        let mut a = array![[0.3, -1.2], [2.0, 0.0]];
        let b = a.clone();
        act.apply_inplace(a.view_mut());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(*x, act.eval(*y), epsilon = 1e-15);
        }
    }
}
