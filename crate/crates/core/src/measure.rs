//! Discrete spectral measures for the data covariance.
//!
//! The training data is Gaussian with covariance `Σ`; only the spectrum of
//! `Σ` enters the asymptotic theory, and this crate restricts it to finite
//! mixtures of atoms `ρ_Σ = Σ_a w_a δ(λ − λ_a)`. Because the random first
//! layer is rotation invariant, `Σ` can be taken diagonal without loss of
//! generality; a measure is materialized at dimension `d` by assigning each
//! atom an integer multiplicity via the largest-remainder method. The
//! *realized* measure (multiplicities over `d`) is what finite-`d`
//! simulations actually see and is recorded alongside the requested one.

use crate::error::{Error, Result};
use ndarray::Array1;

/// One atom of a discrete spectral measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralAtom {
    /// Eigenvalue location, `λ ≥ 0`.
    pub lambda: f64,
    /// Probability weight, `w > 0`.
    pub weight: f64,
}

/// A normalized discrete measure on `[0, ∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    atoms: Vec<SpectralAtom>,
}

impl SpectralMeasure {
    /// Build a measure from `(λ, w)` pairs; weights must be positive and sum
    /// to one within `1e-12`, eigenvalues non-negative and finite.
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("spectral measure needs at least one atom"));
        }
        for &(lambda, weight) in &pairs {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::invalid(format!(
                    "spectral atom location must be finite and non-negative, got {lambda}"
                )));
            }
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(Error::invalid(format!(
                    "spectral atom weight must be positive and finite, got {weight}"
                )));
            }
        }
        let total: f64 = pairs.iter().map(|&(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "spectral measure weights must sum to 1 (got {total}); \
                 use SpectralMeasure::normalized to rescale"
            )));
        }
        Ok(SpectralMeasure {
            atoms: pairs
                .into_iter()
                .map(|(lambda, weight)| SpectralAtom { lambda, weight })
                .collect(),
        })
    }

    /// Build a measure from unnormalized positive weights, rescaling them.
    pub fn normalized(pairs: Vec<(f64, f64)>) -> Result<Self> {
        let total: f64 = pairs.iter().map(|&(_, w)| w).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::invalid("spectral measure weights must sum to a positive value"));
        }
        Self::new(pairs.into_iter().map(|(l, w)| (l, w / total)).collect())
    }

    /// The isotropic (white) covariance: a single unit atom.
    pub fn isotropic() -> Self {
        SpectralMeasure {
            atoms: vec![SpectralAtom {
                lambda: 1.0,
                weight: 1.0,
            }],
        }
    }

    /// Atoms of the measure.
    pub fn atoms(&self) -> &[SpectralAtom] {
        &self.atoms
    }

    /// Average variance `σ_x² = ∫ λ dρ_Σ = Tr Σ / d`.
    pub fn sigma_x2(&self) -> f64 {
        self.atoms.iter().map(|a| a.lambda * a.weight).sum()
    }

    /// `k`-th moment `∫ λ^k dρ_Σ`.
    pub fn moment(&self, k: u32) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.lambda.powi(k as i32) * a.weight)
            .sum()
    }

    /// Largest eigenvalue in the support.
    pub fn max_lambda(&self) -> f64 {
        self.atoms.iter().map(|a| a.lambda).fold(0.0, f64::max)
    }

    /// Integer multiplicities at dimension `d` via the largest-remainder
    /// method (ties broken by atom order); they always sum to `d`.
    pub fn multiplicities(&self, d: usize) -> Vec<usize> {
        let mut base: Vec<usize> = Vec::with_capacity(self.atoms.len());
        let mut fractional: Vec<(usize, f64)> = Vec::with_capacity(self.atoms.len());
        let mut assigned = 0usize;
        for (idx, atom) in self.atoms.iter().enumerate() {
            let quota = atom.weight * d as f64;
            let floor = quota.floor() as usize;
            base.push(floor);
            fractional.push((idx, quota - floor as f64));
            assigned += floor;
        }
        let mut remainder = d.saturating_sub(assigned);
        fractional.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(idx, _) in fractional.iter() {
            if remainder == 0 {
                break;
            }
            base[idx] += 1;
            remainder -= 1;
        }
        base
    }

    /// The measure actually realized at dimension `d`: atom weights become
    /// `multiplicity / d`, and atoms rounded to zero copies disappear.
    pub fn realized(&self, d: usize) -> Result<SpectralMeasure> {
        if d == 0 {
            return Err(Error::invalid("cannot realize a measure at dimension 0"));
        }
        let mult = self.multiplicities(d);
        let pairs: Vec<(f64, f64)> = self
            .atoms
            .iter()
            .zip(&mult)
            .filter(|(_, &m)| m > 0)
            .map(|(a, &m)| (a.lambda, m as f64 / d as f64))
            .collect();
        SpectralMeasure::new(pairs)
    }

    /// Covariance eigenvalues at dimension `d`, atom by atom, length `d`.
    pub fn eigenvalues(&self, d: usize) -> Array1<f64> {
        let mult = self.multiplicities(d);
        let mut out = Array1::zeros(d);
        let mut k = 0;
        for (atom, &m) in self.atoms.iter().zip(&mult) {
            for _ in 0..m {
                out[k] = atom.lambda;
                k += 1;
            }
        }
        out
    }

    /// Parse the CLI form `λ1:w1,λ2:w2,...`; weights are normalized.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (lambda, weight) = part.split_once(':').ok_or_else(|| {
                Error::invalid(format!(
                    "spectral atom '{part}' must look like lambda:weight"
                ))
            })?;
            let lambda: f64 = lambda
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad atom location in '{part}'")))?;
            let weight: f64 = weight
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad atom weight in '{part}'")))?;
            pairs.push((lambda, weight));
        }
        SpectralMeasure::normalized(pairs)
    }

    /// Canonical CLI/manifest string, `λ1:w1,λ2:w2,...`.
    pub fn to_spec_string(&self) -> String {
        self.atoms
            .iter()
            .map(|a| format!("{}:{}", a.lambda, a.weight))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn validates_inputs() {
        assert!(SpectralMeasure::new(vec![]).is_err());
        assert!(SpectralMeasure::new(vec![(-1.0, 1.0)]).is_err());
        assert!(SpectralMeasure::new(vec![(1.0, 0.0)]).is_err());
        assert!(SpectralMeasure::new(vec![(1.0, 0.5)]).is_err(), "weights must sum to 1");
        assert!(SpectralMeasure::new(vec![(1.0, 0.5), (2.0, 0.5)]).is_ok());
        assert!(SpectralMeasure::new(vec![(f64::NAN, 1.0)]).is_err());
    }

    #[test]
    fn isotropic_moments() {
        let m = SpectralMeasure::isotropic();
        assert_abs_diff_eq!(m.sigma_x2(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.moment(3), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.max_lambda(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn largest_remainder_hand_example() {
        // Oracle worked by hand: weights (0.5, 0.3, 0.2) at d = 7 give
        // quotas (3.5, 2.1, 1.4); floors (3, 2, 1) leave one seat, which the
        // largest fraction (0.5) wins: (4, 2, 1).
        let m = SpectralMeasure::new(vec![(1.0, 0.5), (2.0, 0.3), (3.0, 0.2)]).unwrap();
        assert_eq!(m.multiplicities(7), vec![4, 2, 1]);
        // At d = 10 the quotas are integral and exact.
        assert_eq!(m.multiplicities(10), vec![5, 3, 2]);
    }

    #[test]
    fn realized_measure_reflects_rounding() {
        let m = SpectralMeasure::new(vec![(1.0, 0.999), (5.0, 0.001)]).unwrap();
        // At d = 10 the small atom receives no copies and disappears.
        let r = m.realized(10).unwrap();
        assert_eq!(r.atoms().len(), 1);
        assert_abs_diff_eq!(r.atoms()[0].weight, 1.0, epsilon = 1e-15);
        // Eigenvalue expansion matches multiplicities.
        let eigs = m.eigenvalues(10);
        assert_eq!(eigs.len(), 10);
        assert!(eigs.iter().all(|&l| l == 1.0));
    }

    #[test]
    fn parse_round_trip() {
        let m = SpectralMeasure::parse("1:1").unwrap();
        assert_eq!(m, SpectralMeasure::isotropic());
        let m = SpectralMeasure::parse("0.5:2, 2.0:6").unwrap();
        assert_abs_diff_eq!(m.atoms()[0].weight, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(m.atoms()[1].weight, 0.75, epsilon = 1e-15);
        let again = SpectralMeasure::parse(&m.to_spec_string()).unwrap();
        assert_eq!(m, again);
        assert!(SpectralMeasure::parse("nonsense").is_err());
        assert!(SpectralMeasure::parse("1").is_err());
    }

    proptest! {
        #[test]
        fn multiplicities_always_sum_to_d(
            raw in proptest::collection::vec((0.0f64..10.0, 0.01f64..1.0), 1..6),
            d in 1usize..200,
        ) {
            let m = SpectralMeasure::normalized(raw).unwrap();
            let mult = m.multiplicities(d);
            prop_assert_eq!(mult.iter().sum::<usize>(), d);
            // Largest-remainder never misses a quota by one full seat.
            for (atom, &k) in m.atoms().iter().zip(&mult) {
                let quota = atom.weight * d as f64;
                prop_assert!((k as f64 - quota).abs() < 1.0 + 1e-9);
            }
        }

        #[test]
        fn realized_weights_are_multiplicity_fractions(
            raw in proptest::collection::vec((0.0f64..10.0, 0.05f64..1.0), 1..5),
            d in 5usize..300,
        ) {
            // Distinct lambdas so atoms stay identifiable.
            let pairs: Vec<(f64, f64)> = raw
                .iter()
                .enumerate()
                .map(|(i, &(l, w))| (l + i as f64 * 20.0, w))
                .collect();
            let m = SpectralMeasure::normalized(pairs).unwrap();
            let mult = m.multiplicities(d);
            let r = m.realized(d).unwrap();
            let mut idx = 0;
            for (atom, &k) in m.atoms().iter().zip(&mult) {
                if k > 0 {
                    prop_assert!((r.atoms()[idx].lambda - atom.lambda).abs() < 1e-12);
                    prop_assert!((r.atoms()[idx].weight - k as f64 / d as f64).abs() < 1e-12);
                    idx += 1;
                }
            }
            prop_assert_eq!(idx, r.atoms().len());
        }
    }
}
