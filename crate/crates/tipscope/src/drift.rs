//! Time-dependent parameter laws λ(t) that drive the nonautonomous systems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Linear,
    Logistic,
    #[serde(rename = "affine")]
    AffineDecreasing,
}

/// A parameter drift λ(t) with rate constant `rate`.
///
/// * `Linear`: λ(t) = rate·t + λ₀
/// * `Logistic`: λ(t) = e^{rate·t} / (λ₁ + e^{rate·t}) with λ₁ = (1−λ₀)/λ₀,
///   so λ(0) = λ₀ and λ saturates at 1
/// * `AffineDecreasing`: λ(t) = λ₀ + rate·t with rate < 0 (decreasing ramp)
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterDrift {
    pub kind: DriftKind,
    pub rate: f64,
    pub lambda0: f64,
    pub lambda1: f64,
}

impl ParameterDrift {
    pub fn linear(rate: f64) -> Self {
        ParameterDrift { kind: DriftKind::Linear, rate, lambda0: 0.0, lambda1: 0.0 }
    }

    pub fn logistic(rate: f64) -> Self {
        Self::logistic_from(rate, 1e-6).expect("default lambda0 is valid")
    }

    pub fn logistic_from(rate: f64, lambda0: f64) -> Result<Self> {
        if !(lambda0 > 0.0 && lambda0 < 1.0) {
            return Err(Error::InvalidInput(format!(
                "logistic drift needs 0 < lambda0 < 1, got {lambda0}"
            )));
        }
        Ok(ParameterDrift {
            kind: DriftKind::Logistic,
            rate,
            lambda0,
            lambda1: (1.0 - lambda0) / lambda0,
        })
    }

    pub fn affine_decreasing(rate: f64) -> Result<Self> {
        if rate >= 0.0 {
            return Err(Error::InvalidInput(format!(
                "affine-decreasing drift needs rate < 0, got {rate}"
            )));
        }
        Ok(ParameterDrift { kind: DriftKind::AffineDecreasing, rate, lambda0: 5.0, lambda1: 0.0 })
    }

    /// λ(t). The logistic branch switches between two algebraically equal
    /// forms so that large |rate·t| cannot overflow the exponential.
    pub fn lambda_at(&self, t: f64) -> f64 {
        match self.kind {
            DriftKind::Linear | DriftKind::AffineDecreasing => self.lambda0 + self.rate * t,
            DriftKind::Logistic => {
                let rt = self.rate * t;
                if rt >= 0.0 {
                    1.0 / (1.0 + self.lambda1 * (-rt).exp())
                } else {
                    let e = rt.exp();
                    e / (self.lambda1 + e)
                }
            }
        }
    }

    /// dλ/dt.
    pub fn lambda_dot_at(&self, t: f64) -> f64 {
        match self.kind {
            DriftKind::Linear | DriftKind::AffineDecreasing => self.rate,
            DriftKind::Logistic => {
                let lam = self.lambda_at(t);
                self.rate * lam * (1.0 - lam)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn logistic_starts_at_lambda0() {
        let d = ParameterDrift::logistic(0.5);
        assert_abs_diff_eq!(d.lambda_at(0.0), 1e-6, epsilon = 1e-18);
    }

    #[test]
    fn linear_reaches_one_at_expected_time() {
        let d = ParameterDrift::linear(0.0625);
        assert_abs_diff_eq!(d.lambda_at(16.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn affine_hits_zero_at_interval_end() {
        let d = ParameterDrift::affine_decreasing(-0.002).unwrap();
        assert_abs_diff_eq!(d.lambda_at(2500.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn affine_rejects_nonnegative_rate() {
        assert!(ParameterDrift::affine_decreasing(0.01).is_err());
    }

    #[test]
    fn logistic_rejects_bad_lambda0() {
        assert!(ParameterDrift::logistic_from(0.5, 0.0).is_err());
        assert!(ParameterDrift::logistic_from(0.5, 1.5).is_err());
    }

    #[test]
    fn derivatives_are_constant_for_ramps() {
        let d = ParameterDrift::linear(0.065);
        assert_eq!(d.lambda_dot_at(0.0), 0.065);
        assert_eq!(d.lambda_dot_at(123.4), 0.065);
    }

    #[test]
    fn logistic_derivative_at_midpoint() {
        // find t with lambda = 1/2: rt = ln(lambda1)
        let d = ParameterDrift::logistic(0.5);
        let t_mid = d.lambda1.ln() / d.rate;
        assert_abs_diff_eq!(d.lambda_at(t_mid), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.lambda_dot_at(t_mid), 0.125, epsilon = 1e-12);
    }

    #[test]
    fn logistic_saturates_without_overflow() {
        let d = ParameterDrift::logistic(0.5);
        assert_abs_diff_eq!(d.lambda_at(1000.0), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.lambda_at(-1000.0), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.lambda_dot_at(1e6), 0.0, epsilon = 1e-12);
        assert!(d.lambda_at(1e9).is_finite());
    }

    #[test]
    fn logistic_derivative_matches_finite_difference_on_grid() {
        let d = ParameterDrift::logistic(0.5);
        let delta = 1e-6;
        for k in 0..=1000 {
            let t = k as f64 * 0.1;
            let fd = (d.lambda_at(t + delta) - d.lambda_at(t - delta)) / (2.0 * delta);
            assert_abs_diff_eq!(d.lambda_dot_at(t), fd, epsilon = 1e-6);
        }
    }

    proptest! {
        #[test]
        fn logistic_value_stays_inside_unit_interval(
            t in -200.0..200.0f64,
            r in 0.01..2.0f64,
        ) {
            let d = ParameterDrift::logistic(r);
            let v = d.lambda_at(t);
            prop_assert!(v > 0.0 && v <= 1.0);
            // the open upper bound holds wherever the gap to 1 is
            // representable in double precision
            if r * t < 30.0 {
                prop_assert!(v < 1.0);
            }
        }

        #[test]
        fn drifts_are_monotone(
            t in 0.0..500.0f64,
            dt in 0.001..10.0f64,
            r in 0.01..1.0f64,
        ) {
            let lin = ParameterDrift::linear(r);
            prop_assert!(lin.lambda_at(t + dt) > lin.lambda_at(t));
            let log = ParameterDrift::logistic(r);
            prop_assert!(log.lambda_at(t + dt) >= log.lambda_at(t));
            if r * (t + dt) < 30.0 {
                prop_assert!(log.lambda_at(t + dt) > log.lambda_at(t));
            }
            let aff = ParameterDrift::affine_decreasing(-r).unwrap();
            prop_assert!(aff.lambda_at(t + dt) < aff.lambda_at(t));
        }

        #[test]
        fn logistic_derivative_matches_finite_difference(
            t in 0.0..100.0f64,
            r in 0.05..1.0f64,
        ) {
            let d = ParameterDrift::logistic(r);
            let delta = 1e-6;
            let fd = (d.lambda_at(t + delta) - d.lambda_at(t - delta)) / (2.0 * delta);
            prop_assert!((d.lambda_dot_at(t) - fd).abs() < 1e-6);
        }
    }
}
