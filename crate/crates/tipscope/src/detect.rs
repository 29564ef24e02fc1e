//! The three tipping detectors: tracking radius, sustained Steklov
//! derivative, and the leading-direction angle dip, plus a bisection search
//! for the critical rate.

use serde::Serialize;

use crate::drift::DriftKind;
use crate::error::{Error, Result};
use crate::integrate::{self, IntegrationOptions, Trajectory};
use crate::spectra::{steklov_series, SteklovSeries};
use crate::systems::{self, QseCurve, Stability, SystemModel};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_SUSTAIN: f64 = 1.0;
pub const DEFAULT_WINDOW: f64 = 2.0;
pub const DEFAULT_RISE_MIN: f64 = 0.01;
/// Transient skip defaults to this fraction of the run length.
pub const DEFAULT_SKIP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    TrackingRadius,
    SteklovDerivative,
    QAngle,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] =
        [DetectorKind::TrackingRadius, DetectorKind::SteklovDerivative, DetectorKind::QAngle];

    /// Stable lowercase tag used in file names and CSV columns.
    pub fn slug(self) -> &'static str {
        match self {
            DetectorKind::TrackingRadius => "tracking_radius",
            DetectorKind::SteklovDerivative => "steklov_derivative",
            DetectorKind::QAngle => "q_angle",
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionResult {
    pub method: DetectorKind,
    pub tipped: bool,
    pub tip_time: Option<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Diagnostics {
    Tracking {
        radius: f64,
        max_distance: f64,
    },
    Steklov {
        settling_time: f64,
        epsilon: f64,
        h: f64,
    },
    QAngle {
        minimum_angle: f64,
        minimum_time: f64,
        subsequent_rise: f64,
        transient_skip: f64,
        rise_min: f64,
    },
}

/// The stable quasi-static branch nearest the system's initial condition at
/// the start of the run; this is the branch a tracking trajectory follows.
pub fn tracked_branch(system: &SystemModel) -> Result<QseCurve> {
    let curves = systems::qse_curves(system)?;
    let lam0 = system.drift.lambda_at(system.t_span.0);
    let x0 = system.x0[0];
    curves
        .into_iter()
        .filter(|c| c.stability == Stability::Stable)
        .min_by(|a, b| {
            let da = (a.at(lam0)[0] - x0).abs();
            let db = (b.at(lam0)[0] - x0).abs();
            da.partial_cmp(&db).expect("finite branch distances")
        })
        .ok_or_else(|| Error::InvalidInput("system has no stable quasi-static branch".into()))
}

/// Reports tipping at the first sample whose first state component leaves
/// the radius-neighborhood of the given stable branch.
pub fn tracking_radius_detect(
    traj: &Trajectory,
    branch: &QseCurve,
    radius: f64,
) -> Result<DetectionResult> {
    if branch.stability != Stability::Stable {
        return Err(Error::InvalidInput(
            "tracking is defined relative to a stable quasi-static branch".into(),
        ));
    }
    if !radius.is_finite() || radius <= 0.0 {
        return Err(Error::InvalidInput(format!("bad tracking radius {radius}")));
    }
    let mut max_distance: f64 = 0.0;
    let mut tip_time = None;
    for k in 0..traj.len() {
        let target = branch.at(traj.lambdas[k]);
        let d = (traj.state(k)[0] - target[0]).abs();
        if d > max_distance {
            max_distance = d;
        }
        if d > radius {
            tip_time = Some(traj.times[k]);
            break;
        }
    }
    Ok(DetectionResult {
        method: DetectorKind::TrackingRadius,
        tipped: tip_time.is_some(),
        tip_time,
        diagnostics: Diagnostics::Tracking { radius, max_distance },
    })
}

fn check_compatible(reference: &SteklovSeries, test: &SteklovSeries) -> Result<()> {
    if reference.dim != test.dim {
        return Err(Error::InvalidInput(format!(
            "series dimensions differ: {} vs {}",
            reference.dim, test.dim
        )));
    }
    if (reference.dt - test.dt).abs() > 1e-12 {
        return Err(Error::InvalidInput("series sample spacings differ".into()));
    }
    if (reference.window - test.window).abs() > 1e-12 {
        return Err(Error::InvalidInput("series averaging windows differ".into()));
    }
    if reference.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput("empty series".into()));
    }
    if (reference.times[0] - test.times[0]).abs() > 1e-9 {
        return Err(Error::InvalidInput("series start times differ".into()));
    }
    Ok(())
}

/// Sustained-derivative test against a settled reference.
///
/// The settling time T is the first time after which every component of the
/// reference derivative stays within ±epsilon. Tipping fires at the end of
/// the first window of length h past T over which some single component of
/// the test derivative exceeds epsilon in magnitude throughout and is
/// positive at the window's end.
pub fn steklov_detect(
    reference: &SteklovSeries,
    test: &SteklovSeries,
    epsilon: f64,
    h: f64,
) -> Result<DetectionResult> {
    check_compatible(reference, test)?;
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::InvalidInput(format!("bad threshold {epsilon}")));
    }
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidInput(format!("bad sustain duration {h}")));
    }
    let dt = test.dt;
    let w_f = h / dt;
    let w_h = w_f.round() as usize;
    if w_h == 0 || (w_f - w_h as f64).abs() > 1e-9 * w_f.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "sustain duration {h} is not a multiple of the sample spacing {dt}"
        )));
    }

    let n = reference.dim;
    let mut last_violation = None;
    for k in 0..reference.len() {
        let d = reference.derivative(k);
        if (0..n).any(|i| d[i].abs() > epsilon) {
            last_violation = Some(k);
        }
    }
    let settling_time = match last_violation {
        None => reference.times[0],
        Some(l) if l + 1 < reference.len() => reference.times[l + 1],
        Some(_) => {
            return Err(Error::DetectorInapplicable(
                "reference trajectory never settles below the derivative threshold".into(),
            ))
        }
    };

    let start = test
        .times
        .iter()
        .position(|&t| t > settling_time)
        .unwrap_or(test.len());
    let mut tip_time = None;
    'scan: for k in start..test.len().saturating_sub(w_h) {
        for i in 0..n {
            let sustained =
                (k..=k + w_h).all(|j| test.derivative(j)[i].abs() > epsilon);
            if sustained && test.derivative(k + w_h)[i] > 0.0 {
                tip_time = Some(test.times[k + w_h]);
                break 'scan;
            }
        }
    }

    Ok(DetectionResult {
        method: DetectorKind::SteklovDerivative,
        tipped: tip_time.is_some(),
        tip_time,
        diagnostics: Diagnostics::Steklov { settling_time, epsilon, h },
    })
}

/// Angle between the leading orthogonal-factor columns of a reference run
/// and a test run, sample by sample.
#[derive(Debug, Clone)]
pub struct QAngleSeries {
    pub dt: f64,
    pub times: Vec<f64>,
    pub angles: Vec<f64>,
}

pub fn q_angle_series(reference: &Trajectory, test: &Trajectory) -> Result<QAngleSeries> {
    let n = reference.dim;
    if n < 2 {
        return Err(Error::InvalidInput(
            "the angle diagnostic requires dimension at least 2".into(),
        ));
    }
    if test.dim != n {
        return Err(Error::InvalidInput(format!(
            "trajectory dimensions differ: {} vs {}",
            n, test.dim
        )));
    }
    if (reference.dt_out - test.dt_out).abs() > 1e-12 {
        return Err(Error::InvalidInput("trajectory grids have different spacing".into()));
    }
    if reference.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    if (reference.times[0] - test.times[0]).abs() > 1e-9 {
        return Err(Error::InvalidInput("trajectory grids start at different times".into()));
    }
    if reference.q_factors.is_none() || test.q_factors.is_none() {
        return Err(Error::InvalidInput("trajectory carries no orthogonal factors".into()));
    }
    let m = reference.len().min(test.len());
    let mut times = Vec::with_capacity(m);
    let mut angles = Vec::with_capacity(m);
    for k in 0..m {
        let qr = reference.q(k).expect("checked above");
        let qt = test.q(k).expect("checked above");
        let mut dot = 0.0;
        for r in 0..n {
            dot += qr[r * n] * qt[r * n];
        }
        times.push(reference.times[k]);
        angles.push(dot.clamp(-1.0, 1.0).acos());
    }
    Ok(QAngleSeries { dt: reference.dt_out, times, angles })
}

/// Dip test on the angle series: find the deepest point that sits at least
/// rise_min below the running maximum (ignoring everything before the
/// transient skip), and report it as a tip if the series afterwards rises
/// by at least rise_min again.
pub fn q_angle_detect(
    series: &QAngleSeries,
    transient_skip: f64,
    rise_min: f64,
) -> Result<DetectionResult> {
    if series.times.is_empty() {
        return Err(Error::InvalidInput("empty angle series".into()));
    }
    if !transient_skip.is_finite() || transient_skip < 0.0 {
        return Err(Error::InvalidInput(format!("bad transient skip {transient_skip}")));
    }
    if !rise_min.is_finite() || rise_min <= 0.0 {
        return Err(Error::InvalidInput(format!("bad rise threshold {rise_min}")));
    }
    let m = series.times.len();
    let ang = &series.angles;
    let k0 = series
        .times
        .iter()
        .position(|&t| t >= transient_skip)
        .unwrap_or(m);

    let mut run_max = vec![0.0; m];
    let mut acc = f64::NEG_INFINITY;
    for k in 0..m {
        acc = acc.max(ang[k]);
        run_max[k] = acc;
    }
    let mut tail_max = vec![0.0; m];
    let mut acc = f64::NEG_INFINITY;
    for k in (0..m).rev() {
        acc = acc.max(ang[k]);
        tail_max[k] = acc;
    }

    let mut best: Option<usize> = None;
    for k in k0..m {
        if run_max[k] - ang[k] >= rise_min {
            match best {
                Some(j) if ang[j] <= ang[k] => {}
                _ => best = Some(k),
            }
        }
    }

    let (j, tipped) = match best {
        Some(j) => (j, tail_max[j] - ang[j] >= rise_min),
        None => {
            // nothing dipped below the running maximum; report the smallest
            // post-skip angle for diagnostics
            let lo = k0.min(m - 1);
            let mut j = lo;
            for k in lo..m {
                if ang[k] < ang[j] {
                    j = k;
                }
            }
            (j, false)
        }
    };

    Ok(DetectionResult {
        method: DetectorKind::QAngle,
        tipped,
        tip_time: if tipped { Some(series.times[j]) } else { None },
        diagnostics: Diagnostics::QAngle {
            minimum_angle: ang[j],
            minimum_time: series.times[j],
            subsequent_rise: tail_max[j] - ang[j],
            transient_skip,
            rise_min,
        },
    })
}

/// Classification span used by the bisection: rates just above the critical
/// one tip long after the benchmark interval ends, so the search widens the
/// span tenfold for the ramped families. The decreasing-rate system already
/// runs long enough for its listed interval.
fn classification_span(system: &SystemModel) -> (f64, f64) {
    let (t0, t1) = system.t_span;
    if system.drift.kind == DriftKind::AffineDecreasing {
        (t0, t1)
    } else {
        (t0, t0 + 10.0 * (t1 - t0))
    }
}

pub fn critical_rate_search(
    name: &str,
    r_lo: f64,
    r_hi: f64,
    detector: DetectorKind,
    tol: f64,
) -> Result<f64> {
    critical_rate_search_with_history(name, r_lo, r_hi, detector, tol).map(|(r, _)| r)
}

/// Bisection on the rate until the bracket is narrower than tol; returns
/// the final midpoint and the bracket after each refinement. For the
/// decreasing-rate system the search runs on the rate magnitude.
pub fn critical_rate_search_with_history(
    name: &str,
    r_lo: f64,
    r_hi: f64,
    detector: DetectorKind,
    tol: f64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidInput(format!("bad bisection tolerance {tol}")));
    }
    if !r_lo.is_finite() || !r_hi.is_finite() {
        return Err(Error::InvalidInput("bracket endpoints must be finite".into()));
    }
    let probe = SystemModel::builtin(name, r_lo)?;
    let negative = probe.drift.kind == DriftKind::AffineDecreasing;
    let span = classification_span(&probe);
    let rate_of = |m: f64| if negative { -m } else { m };
    let (lo_mag, hi_mag) = (r_lo.abs(), r_hi.abs());
    if lo_mag >= hi_mag {
        return Err(Error::InvalidInput(
            "bracket must run from the smaller to the larger rate magnitude".into(),
        ));
    }

    let opts = IntegrationOptions::default();
    // reference run for the comparison detectors, computed once
    let reference = match detector {
        DetectorKind::TrackingRadius => None,
        _ => {
            let sys = SystemModel::builtin(name, rate_of(lo_mag))?;
            Some(integrate::integrate_with_qr(&sys, &sys.x0, None, span, &opts)?)
        }
    };
    let ref_series = match (&reference, detector) {
        (Some(traj), DetectorKind::SteklovDerivative) => {
            Some(steklov_series(traj, DEFAULT_WINDOW)?)
        }
        _ => None,
    };

    let classify = |m: f64| -> Result<bool> {
        let sys = SystemModel::builtin(name, rate_of(m))?;
        let result = match detector {
            DetectorKind::TrackingRadius => {
                let radius = sys.default_tracking_radius().ok_or_else(|| {
                    Error::InvalidInput(format!("no default tracking radius for {name}"))
                })?;
                let traj = integrate::integrate(&sys, &sys.x0, span, &opts)?;
                let branch = tracked_branch(&sys)?;
                tracking_radius_detect(&traj, &branch, radius)?
            }
            DetectorKind::SteklovDerivative => {
                let traj = integrate::integrate_with_qr(&sys, &sys.x0, None, span, &opts)?;
                let series = steklov_series(&traj, DEFAULT_WINDOW)?;
                steklov_detect(ref_series.as_ref().expect("reference prepared"), &series,
                    DEFAULT_EPSILON, DEFAULT_SUSTAIN)?
            }
            DetectorKind::QAngle => {
                let traj = integrate::integrate_with_qr(&sys, &sys.x0, None, span, &opts)?;
                let series =
                    q_angle_series(reference.as_ref().expect("reference prepared"), &traj)?;
                let skip = span.0 + DEFAULT_SKIP_FRACTION * (span.1 - span.0);
                q_angle_detect(&series, skip, DEFAULT_RISE_MIN)?
            }
        };
        Ok(result.tipped)
    };

    if classify(lo_mag)? {
        return Err(Error::InvalidInput(format!(
            "lower bracket endpoint {} already tips",
            rate_of(lo_mag)
        )));
    }
    if !classify(hi_mag)? {
        return Err(Error::InvalidInput(format!(
            "upper bracket endpoint {} does not tip",
            rate_of(hi_mag)
        )));
    }

    let (mut a, mut b) = (lo_mag, hi_mag);
    let mut history = vec![(rate_of(a), rate_of(b))];
    while (b - a).abs() >= tol {
        let mid = 0.5 * (a + b);
        if classify(mid)? {
            b = mid;
        } else {
            a = mid;
        }
        history.push((rate_of(a), rate_of(b)));
    }
    Ok((rate_of(0.5 * (a + b)), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn run_tracking(name: &str, rate: f64) -> DetectionResult {
        let sys = SystemModel::builtin(name, rate).unwrap();
        let traj = integrate::integrate(&sys, &sys.x0, sys.t_span,
            &IntegrationOptions::default()).unwrap();
        let branch = tracked_branch(&sys).unwrap();
        tracking_radius_detect(&traj, &branch, sys.default_tracking_radius().unwrap()).unwrap()
    }

    #[test]
    fn tracking_rejects_unstable_branch() {
        let sys = SystemModel::builtin("unique_linear", 0.065).unwrap();
        let traj = integrate::integrate(&sys, &[0.5], (0.0, 1.0), &IntegrationOptions::default())
            .unwrap();
        let unstable = systems::qse_curves(&sys)
            .unwrap()
            .into_iter()
            .find(|c| c.stability != Stability::Stable)
            .unwrap();
        assert!(tracking_radius_detect(&traj, &unstable, 0.5).is_err());
        let stable = tracked_branch(&sys).unwrap();
        assert!(tracking_radius_detect(&traj, &stable, -1.0).is_err());
    }

    #[test]
    fn tracking_is_monotone_in_rate() {
        let mut last_time = f64::INFINITY;
        for rate in [0.065, 0.066, 0.07, 0.08, 0.09] {
            let res = run_tracking("unique_linear", rate);
            assert!(res.tipped, "rate {rate} should tip");
            let t = res.tip_time.unwrap();
            assert!(t <= last_time, "tip time grew from {last_time} to {t} at rate {rate}");
            last_time = t;
        }
        assert!(!run_tracking("unique_linear", 0.06).tipped);
    }

    #[test]
    fn tracking_results_are_deterministic() {
        let a = serde_json::to_string(&run_tracking("unique_linear", 0.065)).unwrap();
        let b = serde_json::to_string(&run_tracking("unique_linear", 0.065)).unwrap();
        assert_eq!(a, b);
    }

    fn series(dim: usize, dt: f64, derivs: Vec<f64>) -> SteklovSeries {
        let m = derivs.len() / dim;
        SteklovSeries {
            dim,
            dt,
            window: 2.0,
            times: (0..m).map(|k| k as f64 * dt).collect(),
            values: vec![0.0; m * dim],
            derivatives: derivs,
        }
    }

    #[test]
    fn steklov_settles_then_fires() {
        let m = 60;
        // reference: loud for the first 10 samples, then quiet
        let ref_d: Vec<f64> = (0..m).map(|k| if k < 10 { 0.01 } else { 1e-5 }).collect();
        // test: quiet, then a sustained positive push from sample 15 on
        let test_d: Vec<f64> = (0..m).map(|k| if k < 15 { 1e-5 } else { 0.02 }).collect();
        let r = series(1, 0.1, ref_d);
        let t = series(1, 0.1, test_d);
        let res = steklov_detect(&r, &t, 1e-3, 1.0).unwrap();
        // T = times[10] = 1.0; first full sustain window past T starting at
        // sample 15 ends at sample 25
        assert!(res.tipped);
        assert_abs_diff_eq!(res.tip_time.unwrap(), 2.5, epsilon = 1e-12);
        match res.diagnostics {
            Diagnostics::Steklov { settling_time, .. } => {
                assert_abs_diff_eq!(settling_time, 1.0, epsilon = 1e-12);
                assert!(res.tip_time.unwrap() > settling_time);
            }
            _ => panic!("wrong diagnostics variant"),
        }
    }

    #[test]
    fn steklov_quiet_reference_settles_immediately() {
        let m = 40;
        let quiet: Vec<f64> = vec![1e-5; m];
        let test_d: Vec<f64> = (0..m).map(|k| if k < 5 { 1e-5 } else { 0.02 }).collect();
        let res = steklov_detect(&series(1, 0.1, quiet), &series(1, 0.1, test_d), 1e-3, 1.0)
            .unwrap();
        match res.diagnostics {
            Diagnostics::Steklov { settling_time, .. } => {
                assert_abs_diff_eq!(settling_time, 0.0, epsilon = 1e-12)
            }
            _ => panic!("wrong diagnostics variant"),
        }
        assert!(res.tipped);
    }

    #[test]
    fn steklov_unsettled_reference_is_inapplicable() {
        let loud = vec![0.02; 30];
        let quiet = vec![1e-5; 30];
        let err = steklov_detect(&series(1, 0.1, loud), &series(1, 0.1, quiet), 1e-3, 1.0)
            .unwrap_err();
        assert!(matches!(err, Error::DetectorInapplicable(_)));
    }

    #[test]
    fn steklov_requires_positive_final_derivative() {
        let m = 60;
        let quiet: Vec<f64> = vec![1e-5; m];
        let negative: Vec<f64> = (0..m).map(|k| if k < 15 { 1e-5 } else { -0.02 }).collect();
        let res = steklov_detect(&series(1, 0.1, quiet), &series(1, 0.1, negative), 1e-3, 1.0)
            .unwrap();
        assert!(!res.tipped);
    }

    #[test]
    fn steklov_window_must_be_one_component() {
        let m = 60;
        let quiet: Vec<f64> = vec![1e-5; 2 * m];
        // component 0 exceeds on samples 15..=20, component 1 on 21..=30:
        // no single component sustains a full 11-sample window
        let mixed: Vec<f64> = (0..m)
            .flat_map(|k| {
                let c0 = if (15..=20).contains(&k) { 0.02 } else { 1e-5 };
                let c1 = if (21..=30).contains(&k) { 0.02 } else { 1e-5 };
                [c0, c1]
            })
            .collect();
        let res = steklov_detect(&series(2, 0.1, quiet), &series(2, 0.1, mixed), 1e-3, 1.0)
            .unwrap();
        assert!(!res.tipped);
    }

    #[test]
    fn steklov_validates_series_compatibility() {
        let a = series(1, 0.1, vec![1e-5; 30]);
        let mut b = series(1, 0.05, vec![1e-5; 30]);
        assert!(steklov_detect(&a, &b, 1e-3, 1.0).is_err());
        b.dt = 0.1;
        b.window = 4.0;
        assert!(steklov_detect(&a, &b, 1e-3, 1.0).is_err());
        let c = series(2, 0.1, vec![1e-5; 60]);
        assert!(steklov_detect(&a, &c, 1e-3, 1.0).is_err());
        let d = series(1, 0.1, vec![1e-5; 30]);
        assert!(steklov_detect(&a, &d, 1e-3, 0.15).is_err());
        assert!(steklov_detect(&a, &d, -1.0, 1.0).is_err());
    }

    fn q_traj(dt: f64, qs: Vec<[f64; 4]>) -> Trajectory {
        let m = qs.len();
        Trajectory {
            dim: 2,
            dt_out: dt,
            times: (0..m).map(|k| k as f64 * dt).collect(),
            states: vec![0.0; m * 2],
            lambdas: vec![0.0; m],
            q_factors: Some(qs.into_iter().flatten().collect()),
            b_diag: Some(vec![0.0; m * 2]),
            diverged: false,
            max_q_drift: 0.0,
        }
    }

    #[test]
    fn angle_of_identical_factors_is_zero() {
        let id = [1.0, 0.0, 0.0, 1.0];
        let a = q_traj(0.1, vec![id; 20]);
        let b = q_traj(0.1, vec![id; 20]);
        let s = q_angle_series(&a, &b).unwrap();
        assert!(s.angles.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthogonal_first_columns_give_right_angle() {
        let id = [1.0, 0.0, 0.0, 1.0];
        let swap = [0.0, 1.0, 1.0, 0.0];
        let s = q_angle_series(&q_traj(0.1, vec![id; 5]), &q_traj(0.1, vec![swap; 5])).unwrap();
        for &v in &s.angles {
            assert_abs_diff_eq!(v, std::f64::consts::FRAC_PI_2, epsilon = 1e-15);
        }
    }

    #[test]
    fn angle_series_rejects_bad_inputs() {
        let one_d = Trajectory {
            dim: 1,
            dt_out: 0.1,
            times: vec![0.0, 0.1],
            states: vec![0.0; 2],
            lambdas: vec![0.0; 2],
            q_factors: Some(vec![1.0, 1.0]),
            b_diag: Some(vec![0.0; 2]),
            diverged: false,
            max_q_drift: 0.0,
        };
        assert!(q_angle_series(&one_d, &one_d).is_err());

        let id = [1.0, 0.0, 0.0, 1.0];
        let a = q_traj(0.1, vec![id; 5]);
        let b = q_traj(0.2, vec![id; 5]);
        assert!(q_angle_series(&a, &b).is_err());
        let mut c = q_traj(0.1, vec![id; 5]);
        c.q_factors = None;
        assert!(q_angle_series(&a, &c).is_err());
    }

    fn angle_series_from(dt: f64, angles: Vec<f64>) -> QAngleSeries {
        QAngleSeries { dt, times: (0..angles.len()).map(|k| k as f64 * dt).collect(), angles }
    }

    #[test]
    fn dip_followed_by_rise_is_detected() {
        // level 0.2, parabolic dip to 0.05 centered at t = 5, recovery
        let angles: Vec<f64> = (0..101)
            .map(|k| {
                let t = k as f64 * 0.1;
                let d = (t - 5.0).abs();
                if d < 1.5 { 0.05 + 0.15 * (d / 1.5) * (d / 1.5) } else { 0.2 }
            })
            .collect();
        let s = angle_series_from(0.1, angles);
        let res = q_angle_detect(&s, 1.0, 0.01).unwrap();
        assert!(res.tipped);
        assert_abs_diff_eq!(res.tip_time.unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn monotone_decrease_is_not_a_dip() {
        let angles: Vec<f64> = (0..101).map(|k| 0.3 - 0.002 * k as f64).collect();
        let s = angle_series_from(0.1, angles);
        let res = q_angle_detect(&s, 1.0, 0.01).unwrap();
        assert!(!res.tipped);
        assert!(res.tip_time.is_none());
    }

    #[test]
    fn dip_inside_transient_skip_is_ignored() {
        // dip at t = 0.5, full recovery to a flat plateau before the skip
        let angles: Vec<f64> = (0..101)
            .map(|k| {
                let t = k as f64 * 0.1;
                if (t - 0.5).abs() < 0.3 { 0.1 } else { 0.3 }
            })
            .collect();
        let s = angle_series_from(0.1, angles);
        let res = q_angle_detect(&s, 1.0, 0.01).unwrap();
        assert!(!res.tipped);
    }

    #[test]
    fn late_dip_without_recovery_is_ignored() {
        // the series ends at its minimum; no subsequent rise can confirm it
        let angles: Vec<f64> = (0..101)
            .map(|k| {
                let t = k as f64 * 0.1;
                if t < 8.0 { 0.3 } else { 0.3 - 0.1 * (t - 8.0) }
            })
            .collect();
        let s = angle_series_from(0.1, angles);
        let res = q_angle_detect(&s, 1.0, 0.01).unwrap();
        assert!(!res.tipped);
    }

    #[test]
    fn critical_rate_requires_straddling_bracket() {
        let err = critical_rate_search("unique_linear", 0.05, 0.055, DetectorKind::TrackingRadius,
            1e-3).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        let err = critical_rate_search("unique_linear", 0.05, 0.08, DetectorKind::TrackingRadius,
            0.0).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        let err = critical_rate_search("unique_linear", 0.08, 0.05, DetectorKind::TrackingRadius,
            1e-3).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn critical_rate_brackets_shrink_toward_threshold() {
        let (r_c, history) = critical_rate_search_with_history(
            "unique_linear", 0.05, 0.08, DetectorKind::TrackingRadius, 1e-3).unwrap();
        assert!((r_c - 0.0625).abs() < 2e-3, "r_c = {r_c}");
        assert!(history.len() > 3);
        for pair in history.windows(2) {
            let (lo0, hi0) = pair[0];
            let (lo1, hi1) = pair[1];
            assert!(hi1 - lo1 <= 0.5 * (hi0 - lo0) + 1e-15);
        }
        let (lo, hi) = *history.last().unwrap();
        assert!(hi - lo < 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn angles_stay_in_range(
            phis in proptest::collection::vec(0.0..std::f64::consts::TAU, 4..20),
            psis in proptest::collection::vec(0.0..std::f64::consts::TAU, 4..20),
        ) {
            let m = phis.len().min(psis.len());
            let rot = |p: f64| {
                let (s, c) = p.sin_cos();
                [c, -s, s, c]
            };
            let a = q_traj(0.1, phis[..m].iter().map(|&p| rot(p)).collect());
            let b = q_traj(0.1, psis[..m].iter().map(|&p| rot(p)).collect());
            let s = q_angle_series(&a, &b).unwrap();
            for &v in &s.angles {
                prop_assert!((0.0..=std::f64::consts::PI).contains(&v));
                prop_assert!(v.is_finite());
            }
        }
    }
}
