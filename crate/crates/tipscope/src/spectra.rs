//! Steklov averages of the instantaneous growth rates and the spectral
//! summaries built from them: endpoint Lyapunov estimates, Sacker-Sell
//! interval bounds, and adjoint-based lower estimates.

use crate::error::{Error, Result};
use crate::integrate::{self, IntegrationOptions, Trajectory};
use crate::mat;
use crate::systems::SystemModel;

/// Steklov averages μ_i(t, H) of the diagonal growth rates over a sliding
/// window of length H, together with their time derivatives.
#[derive(Debug, Clone)]
pub struct SteklovSeries {
    pub dim: usize,
    pub dt: f64,
    pub window: f64,
    pub times: Vec<f64>,
    /// Row-major samples × dim.
    pub values: Vec<f64>,
    /// Row-major samples × dim.
    pub derivatives: Vec<f64>,
}

impl SteklovSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn derivative(&self, k: usize) -> &[f64] {
        &self.derivatives[k * self.dim..(k + 1) * self.dim]
    }
}

/// Running trapezoid integral of each b component; P[k·n + i] = ∫ b_i up to
/// sample k.
fn prefix_integrals(traj: &Trajectory, b: &[f64]) -> Vec<f64> {
    let n = traj.dim;
    let m = traj.len();
    let dt = traj.dt_out;
    let mut p = vec![0.0; m * n];
    for k in 1..m {
        for i in 0..n {
            p[k * n + i] = p[(k - 1) * n + i] + 0.5 * dt * (b[(k - 1) * n + i] + b[k * n + i]);
        }
    }
    p
}

/// Computes μ_i(t, H) on the trajectory grid. A window of zero returns the
/// instantaneous rates themselves.
pub fn steklov_series(traj: &Trajectory, h_window: f64) -> Result<SteklovSeries> {
    let b = traj
        .b_diag
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("trajectory carries no growth-rate series".into()))?;
    let n = traj.dim;
    let m = traj.len();
    let dt = traj.dt_out;
    if !h_window.is_finite() || h_window < 0.0 {
        return Err(Error::InvalidInput(format!("bad averaging window {h_window}")));
    }

    if h_window == 0.0 {
        if m < 2 {
            return Err(Error::InvalidInput("trajectory has too few samples".into()));
        }
        let values = b.clone();
        let derivatives = differentiate(n, dt, &values);
        return Ok(SteklovSeries {
            dim: n,
            dt,
            window: 0.0,
            times: traj.times.clone(),
            values,
            derivatives,
        });
    }

    let w_f = h_window / dt;
    let w = w_f.round() as usize;
    if w == 0 || (w_f - w as f64).abs() > 1e-9 * w_f.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "averaging window {h_window} is not a multiple of the sample spacing {dt}"
        )));
    }
    if m <= w + 1 {
        return Err(Error::InvalidInput(format!(
            "trajectory spans {:.6} time units, too short for averaging window {h_window}",
            (m.max(1) - 1) as f64 * dt
        )));
    }

    let p = prefix_integrals(traj, b);
    let m_out = m - w;
    let mut values = vec![0.0; m_out * n];
    for k in 0..m_out {
        for i in 0..n {
            values[k * n + i] = (p[(k + w) * n + i] - p[k * n + i]) / h_window;
        }
    }
    let derivatives = differentiate(n, dt, &values);
    Ok(SteklovSeries {
        dim: n,
        dt,
        window: h_window,
        times: traj.times[..m_out].to_vec(),
        values,
        derivatives,
    })
}

/// Second-order finite differences on the uniform grid: central in the
/// interior, one-sided at the ends.
fn differentiate(n: usize, dt: f64, values: &[f64]) -> Vec<f64> {
    let m = values.len() / n;
    let mut d = vec![0.0; m * n];
    for i in 0..n {
        d[i] = (values[n + i] - values[i]) / dt;
        d[(m - 1) * n + i] = (values[(m - 1) * n + i] - values[(m - 2) * n + i]) / dt;
        for k in 1..m - 1 {
            d[k * n + i] = (values[(k + 1) * n + i] - values[(k - 1) * n + i]) / (2.0 * dt);
        }
    }
    d
}

/// Endpoint and interval estimates of the stability spectrum.
#[derive(Debug, Clone)]
pub struct SpectralEstimate {
    /// μ_i over the whole run, the upper Lyapunov estimate per direction.
    pub upper_lyapunov: Vec<f64>,
    /// Per-direction minimum of μ_i(t, H) after the startup transient.
    pub sacker_sell_lo: Vec<f64>,
    /// Per-direction maximum of μ_i(t, H) after the startup transient.
    pub sacker_sell_hi: Vec<f64>,
    pub window: f64,
}

/// Upper Lyapunov estimates (whole-run averages) and Sacker-Sell interval
/// bounds (extremes of the windowed averages, with the first max(10, H)
/// time units discarded as transient).
pub fn lyapunov_estimates(traj: &Trajectory, h_window: f64) -> Result<SpectralEstimate> {
    let b = traj
        .b_diag
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("trajectory carries no growth-rate series".into()))?;
    let n = traj.dim;
    let m = traj.len();
    if m < 2 {
        return Err(Error::InvalidInput("trajectory has too few samples".into()));
    }
    let p = prefix_integrals(traj, b);
    let total = traj.t_end() - traj.times[0];
    let upper: Vec<f64> = (0..n).map(|i| p[(m - 1) * n + i] / total).collect();

    let series = steklov_series(traj, h_window)?;
    let skip = 10.0f64.max(h_window);
    let t0 = series.times[0];
    let mut start = series.times.iter().position(|&t| t - t0 >= skip).unwrap_or(series.len());
    if start >= series.len() {
        start = 0;
    }
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for k in start..series.len() {
        let v = series.value(k);
        for i in 0..n {
            lo[i] = lo[i].min(v[i]);
            hi[i] = hi[i].max(v[i]);
        }
    }
    Ok(SpectralEstimate {
        upper_lyapunov: upper,
        sacker_sell_lo: lo,
        sacker_sell_hi: hi,
        window: h_window,
    })
}

/// Lower Lyapunov estimates from the adjoint problem Ẏ = −A(t)ᵀY along the
/// same trajectory: each adjoint whole-run average bounds a forward rate
/// from below after negation. The adjoint factor starts from the
/// column-reversed identity so that its i-th column shadows the i-th
/// slowest forward direction instead of fighting a realignment transient.
pub fn adjoint_lower_estimates(system: &SystemModel, traj: &Trajectory) -> Result<Vec<f64>> {
    let n = system.dim;
    if traj.dim != n {
        return Err(Error::InvalidInput(format!(
            "trajectory dimension {} does not match system dimension {n}",
            traj.dim
        )));
    }
    if traj.len() < 2 {
        return Err(Error::InvalidInput("trajectory has too few samples".into()));
    }
    let rhs_base = system.clone();
    let jac_base = system.clone();
    let mut adj = SystemModel::custom(
        &format!("{}_adjoint", system.name),
        n,
        system.drift,
        move |x, lam, out| rhs_base.rhs(x, lam, out),
        move |x, lam, out| {
            let mut j = vec![0.0; n * n];
            jac_base.jacobian(x, lam, &mut j);
            for r in 0..n {
                for c in 0..n {
                    out[r * n + c] = -j[c * n + r];
                }
            }
        },
        traj.state(0).to_vec(),
        (traj.times[0], traj.t_end()),
    );
    adj.stiff = system.stiff;

    let opts = IntegrationOptions { dt_out: traj.dt_out, ..IntegrationOptions::default() };
    let q0 = mat::reversal(n);
    let adj_traj =
        integrate::integrate_with_qr(&adj, traj.state(0), Some(&q0), (traj.times[0], traj.t_end()), &opts)?;
    let est = lyapunov_estimates(&adj_traj, 0.0)?;
    let mut lower: Vec<f64> = est.upper_lyapunov.iter().map(|u| -u).collect();
    lower.sort_by(|a, b| b.partial_cmp(a).expect("finite estimates"));
    Ok(lower)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::ParameterDrift;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fabricated(dim: usize, dt: f64, b_fn: impl Fn(f64, usize) -> f64, m: usize) -> Trajectory {
        let times: Vec<f64> = (0..m).map(|k| k as f64 * dt).collect();
        let b: Vec<f64> =
            times.iter().flat_map(|&t| (0..dim).map(|i| b_fn(t, i)).collect::<Vec<_>>()).collect();
        Trajectory {
            dim,
            dt_out: dt,
            times,
            states: vec![0.0; m * dim],
            lambdas: vec![0.0; m],
            q_factors: None,
            b_diag: Some(b),
            diverged: false,
            max_q_drift: 0.0,
        }
    }

    #[test]
    fn constant_rates_average_to_themselves() {
        let traj = fabricated(2, 0.01, |_, i| if i == 0 { -1.0 } else { 0.25 }, 501);
        let s = steklov_series(&traj, 2.0).unwrap();
        assert_eq!(s.len(), 301);
        for k in 0..s.len() {
            assert_abs_diff_eq!(s.value(k)[0], -1.0, epsilon = 1e-13);
            assert_abs_diff_eq!(s.value(k)[1], 0.25, epsilon = 1e-13);
            assert!(s.derivative(k)[0].abs() < 1e-12);
        }
    }

    #[test]
    fn linear_rates_average_exactly() {
        // trapezoid quadrature is exact on b(t) = t, so μ(t, H) = t + H/2
        let traj = fabricated(1, 0.01, |t, _| t, 1001);
        let s = steklov_series(&traj, 2.0).unwrap();
        for k in 0..s.len() {
            assert_abs_diff_eq!(s.value(k)[0], s.times[k] + 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s.derivative(k)[0], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_window_returns_instantaneous_rates() {
        let traj = fabricated(1, 0.01, |t, _| (t * 3.0).sin(), 401);
        let s = steklov_series(&traj, 0.0).unwrap();
        assert_eq!(s.len(), traj.len());
        assert_eq!(s.values, traj.b_diag.clone().unwrap());
    }

    #[test]
    fn windows_are_additive() {
        let traj = fabricated(1, 0.01, |t, _| (t * 0.7).sin() + 0.3 * (t * 2.9).cos(), 2001);
        let h = 1.0;
        let s1 = steklov_series(&traj, h).unwrap();
        let s2 = steklov_series(&traj, 2.0 * h).unwrap();
        let w = (h / 0.01).round() as usize;
        for k in 0..s2.len() {
            let lhs = 2.0 * h * s2.value(k)[0];
            let rhs = h * s1.value(k)[0] + h * s1.value(k + w)[0];
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-13);
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let no_b = Trajectory {
            dim: 1,
            dt_out: 0.01,
            times: vec![0.0, 0.01],
            states: vec![0.0, 0.0],
            lambdas: vec![0.0, 0.0],
            q_factors: None,
            b_diag: None,
            diverged: false,
            max_q_drift: 0.0,
        };
        assert!(steklov_series(&no_b, 1.0).is_err());

        let short = fabricated(1, 0.01, |_, _| 0.0, 51);
        assert!(steklov_series(&short, 1.0).is_err());

        let traj = fabricated(1, 0.01, |_, _| 0.0, 501);
        assert!(steklov_series(&traj, 0.015).is_err());
        assert!(steklov_series(&traj, -1.0).is_err());
        assert!(steklov_series(&traj, f64::NAN).is_err());
    }

    #[test]
    fn scalar_decay_spectrum() {
        let sys = SystemModel::custom(
            "decay",
            1,
            ParameterDrift::linear(0.0),
            |x, _, out| out[0] = -x[0],
            |_, _, out| out[0] = -1.0,
            vec![1.0],
            (0.0, 20.0),
        );
        let traj = integrate::integrate_with_qr(
            &sys,
            &[1.0],
            None,
            (0.0, 20.0),
            &IntegrationOptions::default(),
        )
        .unwrap();
        let est = lyapunov_estimates(&traj, 2.0).unwrap();
        assert_abs_diff_eq!(est.upper_lyapunov[0], -1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(est.sacker_sell_lo[0], -1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(est.sacker_sell_hi[0], -1.0, epsilon = 1e-10);
        let lower = adjoint_lower_estimates(&sys, &traj).unwrap();
        assert_abs_diff_eq!(lower[0], -1.0, epsilon = 1e-9);
    }

    fn constant_matrix(a: [f64; 4], t_end: f64) -> SystemModel {
        SystemModel::custom(
            "const",
            2,
            ParameterDrift::linear(0.0),
            move |x, _, out| {
                out[0] = a[0] * x[0] + a[1] * x[1];
                out[1] = a[2] * x[0] + a[3] * x[1];
            },
            move |_, _, out| out.copy_from_slice(&a),
            vec![1.0, 1.0],
            (0.0, t_end),
        )
    }

    #[test]
    fn diagonal_spectrum_brackets() {
        let sys = constant_matrix([-1.0, 0.0, 0.0, -2.0], 30.0);
        let traj = integrate::integrate_with_qr(
            &sys,
            &[1.0, 1.0],
            None,
            (0.0, 30.0),
            &IntegrationOptions::default(),
        )
        .unwrap();
        let est = lyapunov_estimates(&traj, 2.0).unwrap();
        assert_abs_diff_eq!(est.upper_lyapunov[0], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(est.upper_lyapunov[1], -2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(est.sacker_sell_lo[0], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(est.sacker_sell_hi[1], -2.0, epsilon = 1e-9);
        let lower = adjoint_lower_estimates(&sys, &traj).unwrap();
        assert_abs_diff_eq!(lower[0], -1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(lower[1], -2.0, epsilon = 1e-8);
    }

    #[test]
    fn symmetric_matrix_endpoint_bias() {
        // eigenvalues −1 and −3; the leading whole-run average carries a
        // mixing correction of −ln(2)/(2T) from the equal-weight start
        let t_end = 20.0;
        let sys = constant_matrix([-2.0, 1.0, 1.0, -2.0], t_end);
        let traj = integrate::integrate_with_qr(
            &sys,
            &[1.0, 1.0],
            None,
            (0.0, t_end),
            &IntegrationOptions::default(),
        )
        .unwrap();
        let est = lyapunov_estimates(&traj, 2.0).unwrap();
        let expected = -1.0 - (2.0f64).ln() / (2.0 * t_end);
        assert_abs_diff_eq!(est.upper_lyapunov[0], expected, epsilon = 1e-5);
    }

    #[test]
    fn trajectory_mismatch_is_rejected() {
        let sys = constant_matrix([-1.0, 0.0, 0.0, -2.0], 5.0);
        let traj = fabricated(1, 0.01, |_, _| -1.0, 201);
        assert!(adjoint_lower_estimates(&sys, &traj).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn diagonal_lower_bounds_match_rates(
            a in -3.0..-0.5f64,
            b in -3.0..-0.5f64,
        ) {
            let sys = constant_matrix([a, 0.0, 0.0, b], 15.0);
            let traj = integrate::integrate_with_qr(
                &sys,
                &[1.0, 1.0],
                None,
                (0.0, 15.0),
                &IntegrationOptions::default(),
            )
            .unwrap();
            let est = lyapunov_estimates(&traj, 1.0).unwrap();
            prop_assert!((est.upper_lyapunov[0] - a).abs() < 1e-8);
            prop_assert!((est.upper_lyapunov[1] - b).abs() < 1e-8);
            let lower = adjoint_lower_estimates(&sys, &traj).unwrap();
            let mut sorted = [a, b];
            sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
            prop_assert!((lower[0] - sorted[0]).abs() < 1e-8);
            prop_assert!((lower[1] - sorted[1]).abs() < 1e-8);
        }
    }
}
