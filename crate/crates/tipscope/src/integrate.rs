//! Numerical integration of the state ODE and of the coupled
//! state + orthogonal-factor system, sampled on a uniform output grid.
//!
//! Non-stiff systems use an adaptive Dormand-Prince 5(4) pair stepped
//! exactly onto every output grid point. The stiff resource-consumer path
//! uses fixed-step implicit Euler with a Newton solve per step, advancing
//! the orthogonal factor by Heun's rule on the same step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat;
use crate::systems::SystemModel;

fn default_tol() -> f64 {
    1e-12
}
fn default_dt_out() -> f64 {
    0.01
}
fn default_implicit_dt() -> f64 {
    1e-3
}
fn default_divergence_cutoff() -> f64 {
    1e8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOptions {
    #[serde(default = "default_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_tol")]
    pub rel_tol: f64,
    /// Uniform output-grid spacing.
    #[serde(default = "default_dt_out")]
    pub dt_out: f64,
    /// Force the implicit integrator on or off; unset means "use the
    /// system's default".
    #[serde(default)]
    pub implicit: Option<bool>,
    /// Fixed step of the implicit integrator; must divide dt_out.
    #[serde(default = "default_implicit_dt")]
    pub implicit_dt: f64,
    /// Any |x_i| beyond this truncates the trajectory with a divergence flag.
    #[serde(default = "default_divergence_cutoff")]
    pub divergence_cutoff: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            abs_tol: default_tol(),
            rel_tol: default_tol(),
            dt_out: default_dt_out(),
            implicit: None,
            implicit_dt: default_implicit_dt(),
            divergence_cutoff: default_divergence_cutoff(),
        }
    }
}

/// A uniformly sampled solution, optionally augmented with the orthogonal
/// factor Q(t) and the diagonal of the triangularized coefficient matrix
/// B(t) = QᵀAQ − S.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dim: usize,
    pub dt_out: f64,
    pub times: Vec<f64>,
    /// Row-major samples × dim.
    pub states: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Row-major samples × dim × dim, when QR integration was requested.
    pub q_factors: Option<Vec<f64>>,
    /// Row-major samples × dim, alongside `q_factors`.
    pub b_diag: Option<Vec<f64>>,
    /// True when the run was truncated by the divergence cutoff.
    pub diverged: bool,
    /// Largest orthogonality defect ‖QᵀQ−I‖_F seen before re-projection.
    pub max_q_drift: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn q(&self, k: usize) -> Option<&[f64]> {
        let nn = self.dim * self.dim;
        self.q_factors.as_ref().map(|q| &q[k * nn..(k + 1) * nn])
    }

    pub fn b_row(&self, k: usize) -> Option<&[f64]> {
        self.b_diag.as_ref().map(|b| &b[k * self.dim..(k + 1) * self.dim])
    }

    /// Whether the pre-projection orthogonality drift ever exceeded the
    /// diagnostic threshold.
    pub fn orthogonality_warning(&self) -> bool {
        self.max_q_drift > 1e-6
    }
}

/// S(Q, A): the skew-symmetric matrix with S_ij = (QᵀAQ)_ij below the
/// diagonal, zeros on it, and −(QᵀAQ)_ji above it.
pub fn skew_projection(n: usize, q: &[f64], a: &[f64]) -> Vec<f64> {
    let mut tmp = vec![0.0; n * n];
    let mut m = vec![0.0; n * n];
    mat::qt_a_q(n, q, a, &mut tmp, &mut m);
    let mut s = vec![0.0; n * n];
    skew_from_qtaq(n, &m, &mut s);
    s
}

fn skew_from_qtaq(n: usize, m: &[f64], s: &mut [f64]) {
    for i in 0..n {
        s[i * n + i] = 0.0;
        for j in 0..i {
            s[i * n + j] = m[i * n + j];
            s[j * n + i] = -m[i * n + j];
        }
    }
}

/// Integrates ẋ = f(x, λ(t)) on the uniform grid.
pub fn integrate(
    system: &SystemModel,
    x0: &[f64],
    t_span: (f64, f64),
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    run(system, x0, None, t_span, opts)
}

/// Integrates the coupled system ẋ = f(x, λ(t)), Q̇ = Q·S(Q, A) with
/// A(t) = D_x f along the solution, re-orthonormalizing Q after every
/// accepted step. `q0` defaults to the identity.
pub fn integrate_with_qr(
    system: &SystemModel,
    x0: &[f64],
    q0: Option<&[f64]>,
    t_span: (f64, f64),
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    let n = system.dim;
    let ident = mat::identity(n);
    let q0 = q0.unwrap_or(&ident);
    if q0.len() != n * n {
        return Err(Error::InvalidInput(format!(
            "Q0 has {} entries, expected {}",
            q0.len(),
            n * n
        )));
    }
    if mat::orthogonality_defect(n, q0) >= 1e-12 {
        return Err(Error::InvalidInput("Q0 is not orthogonal".into()));
    }
    run(system, x0, Some(q0), t_span, opts)
}

fn validate(system: &SystemModel, x0: &[f64], t_span: (f64, f64), opts: &IntegrationOptions) -> Result<usize> {
    let (t0, t1) = t_span;
    if !t0.is_finite() || !t1.is_finite() || t1 <= t0 {
        return Err(Error::InvalidInput(format!("bad time span [{t0}, {t1}]")));
    }
    if x0.len() != system.dim {
        return Err(Error::InvalidInput(format!(
            "initial condition has {} components, system has dimension {}",
            x0.len(),
            system.dim
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial condition must be finite".into()));
    }
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if !positive(opts.dt_out) || !positive(opts.abs_tol) || !positive(opts.rel_tol) {
        return Err(Error::InvalidInput(
            "dt_out and tolerances must be positive".into(),
        ));
    }
    let n_seg = ((t1 - t0) / opts.dt_out + 1e-9).floor() as usize;
    if n_seg == 0 {
        return Err(Error::InvalidInput("time span shorter than dt_out".into()));
    }
    Ok(n_seg)
}

fn run(
    system: &SystemModel,
    x0: &[f64],
    q0: Option<&[f64]>,
    t_span: (f64, f64),
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    let n_seg = validate(system, x0, t_span, opts)?;
    let implicit = opts.implicit.unwrap_or(system.stiff);
    if implicit {
        run_implicit(system, x0, q0, t_span, n_seg, opts)
    } else {
        run_explicit(system, x0, q0, t_span, n_seg, opts)
    }
}

/// Recorder shared by both integrator paths.
struct Recorder<'a> {
    system: &'a SystemModel,
    n: usize,
    with_q: bool,
    times: Vec<f64>,
    states: Vec<f64>,
    lambdas: Vec<f64>,
    q_factors: Vec<f64>,
    b_diag: Vec<f64>,
    jac: Vec<f64>,
    tmp: Vec<f64>,
    qtaq: Vec<f64>,
}

impl<'a> Recorder<'a> {
    fn new(system: &'a SystemModel, with_q: bool, capacity: usize) -> Self {
        let n = system.dim;
        Recorder {
            system,
            n,
            with_q,
            times: Vec::with_capacity(capacity),
            states: Vec::with_capacity(capacity * n),
            lambdas: Vec::with_capacity(capacity),
            q_factors: if with_q { Vec::with_capacity(capacity * n * n) } else { Vec::new() },
            b_diag: if with_q { Vec::with_capacity(capacity * n) } else { Vec::new() },
            jac: vec![0.0; n * n],
            tmp: vec![0.0; n * n],
            qtaq: vec![0.0; n * n],
        }
    }

    fn push(&mut self, t: f64, lam: f64, x: &[f64], q: Option<&[f64]>) {
        let n = self.n;
        self.times.push(t);
        self.lambdas.push(lam);
        self.states.extend_from_slice(x);
        if self.with_q {
            let q = q.expect("QR recording requires a Q factor");
            self.q_factors.extend_from_slice(q);
            self.system.jacobian(x, lam, &mut self.jac);
            mat::qt_a_q(n, q, &self.jac, &mut self.tmp, &mut self.qtaq);
            for i in 0..n {
                self.b_diag.push(self.qtaq[i * n + i]);
            }
        }
    }

    fn finish(self, dt_out: f64, diverged: bool, max_q_drift: f64) -> Trajectory {
        Trajectory {
            dim: self.n,
            dt_out,
            times: self.times,
            states: self.states,
            lambdas: self.lambdas,
            q_factors: if self.with_q { Some(self.q_factors) } else { None },
            b_diag: if self.with_q { Some(self.b_diag) } else { None },
            diverged,
            max_q_drift,
        }
    }
}

// Dormand-Prince 5(4) coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Extended-state right-hand side: the state block follows f, the optional Q
/// block follows Q·S(Q, A(x, λ)).
struct Flow<'a> {
    system: &'a SystemModel,
    n: usize,
    with_q: bool,
    jac: Vec<f64>,
    tmp: Vec<f64>,
    qtaq: Vec<f64>,
    s: Vec<f64>,
}

impl<'a> Flow<'a> {
    fn new(system: &'a SystemModel, with_q: bool) -> Self {
        let n = system.dim;
        Flow {
            system,
            n,
            with_q,
            jac: vec![0.0; n * n],
            tmp: vec![0.0; n * n],
            qtaq: vec![0.0; n * n],
            s: vec![0.0; n * n],
        }
    }

    fn ext_dim(&self) -> usize {
        if self.with_q {
            self.n + self.n * self.n
        } else {
            self.n
        }
    }

    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let lam = self.system.drift.lambda_at(t);
        self.system.rhs(&y[..n], lam, &mut dy[..n]);
        if self.with_q {
            let q = &y[n..];
            self.system.jacobian(&y[..n], lam, &mut self.jac);
            mat::qt_a_q(n, q, &self.jac, &mut self.tmp, &mut self.qtaq);
            skew_from_qtaq(n, &self.qtaq, &mut self.s);
            mat::matmul(n, q, &self.s, &mut dy[n..]);
        }
    }

    /// Re-orthonormalizes the Q block in place; returns the pre-projection
    /// orthogonality defect (0 when there is no Q block).
    fn project(&mut self, y: &mut [f64]) -> f64 {
        if !self.with_q {
            return 0.0;
        }
        let n = self.n;
        let q = &mut y[n..];
        let defect = mat::orthogonality_defect(n, q);
        mat::mgs_columns(n, q);
        defect
    }
}

fn run_explicit(
    system: &SystemModel,
    x0: &[f64],
    q0: Option<&[f64]>,
    t_span: (f64, f64),
    n_seg: usize,
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    let n = system.dim;
    let (t0, _) = t_span;
    let mut flow = Flow::new(system, q0.is_some());
    let ny = flow.ext_dim();

    let mut y = vec![0.0; ny];
    y[..n].copy_from_slice(x0);
    if let Some(q0) = q0 {
        y[n..].copy_from_slice(q0);
    }

    let mut rec = Recorder::new(system, q0.is_some(), n_seg + 1);
    rec.push(t0, system.drift.lambda_at(t0), &y[..n], q0);

    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; ny]).collect();
    let mut y_new = vec![0.0; ny];
    let mut y_stage = vec![0.0; ny];

    let mut t = t0;
    let mut h = (opts.dt_out * 0.01).min(opts.dt_out);
    let mut max_drift: f64 = 0.0;
    let mut diverged = false;

    flow.eval(t, &y, &mut k[0]);

    'outer: for seg in 1..=n_seg {
        let t_target = t0 + seg as f64 * opts.dt_out;
        loop {
            let remaining = t_target - t;
            if remaining <= 1e-12 * t_target.abs().max(1.0) {
                break;
            }
            let h_eff = h.min(remaining);
            if h_eff < 1e-13 * t.abs().max(1.0) {
                return Err(Error::Stiffness { time: t });
            }

            // stages 2..6
            for i in 0..ny {
                y_stage[i] = y[i] + h_eff * A21 * k[0][i];
            }
            flow.eval(t + C[1] * h_eff, &y_stage, &mut k[1]);
            for i in 0..ny {
                y_stage[i] = y[i] + h_eff * (A31 * k[0][i] + A32 * k[1][i]);
            }
            flow.eval(t + C[2] * h_eff, &y_stage, &mut k[2]);
            for i in 0..ny {
                y_stage[i] = y[i] + h_eff * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
            }
            flow.eval(t + C[3] * h_eff, &y_stage, &mut k[3]);
            for i in 0..ny {
                y_stage[i] = y[i]
                    + h_eff * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
            }
            flow.eval(t + C[4] * h_eff, &y_stage, &mut k[4]);
            for i in 0..ny {
                y_stage[i] = y[i]
                    + h_eff
                        * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i]
                            + A65 * k[4][i]);
            }
            flow.eval(t + C[5] * h_eff, &y_stage, &mut k[5]);
            // 5th-order solution; its derivative is the last stage (FSAL)
            for i in 0..ny {
                y_new[i] = y[i]
                    + h_eff
                        * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i]
                            + B6 * k[5][i]);
            }
            flow.eval(t + h_eff, &y_new, &mut k[6]);

            // weighted RMS error estimate
            let mut err_sq = 0.0;
            for i in 0..ny {
                let e = h_eff
                    * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                        + E7 * k[6][i]);
                let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_new[i].abs());
                err_sq += (e / sc) * (e / sc);
            }
            let err = (err_sq / ny as f64).sqrt();

            if err.is_finite() && err <= 1.0 {
                t = if h_eff == remaining { t_target } else { t + h_eff };
                y.copy_from_slice(&y_new);
                let drift = flow.project(&mut y);
                if drift > max_drift {
                    max_drift = drift;
                }
                if flow.with_q {
                    // the projection moved Q, so refresh the FSAL derivative
                    flow.eval(t, &y, &mut k[0]);
                } else {
                    k.swap(0, 6);
                }
                if y[..n].iter().any(|v| !v.is_finite() || v.abs() > opts.divergence_cutoff) {
                    diverged = true;
                    break 'outer;
                }
                let fac = if err == 0.0 {
                    FAC_MAX
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
                };
                h = h_eff * fac;
            } else {
                let fac = if err.is_finite() {
                    (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0)
                } else {
                    FAC_MIN
                };
                h = h_eff * fac;
            }
        }
        if !diverged {
            let lam = system.drift.lambda_at(t);
            let (x, q) = y.split_at(n);
            rec.push(t, lam, x, if flow.with_q { Some(q) } else { None });
        }
    }

    Ok(rec.finish(opts.dt_out, diverged, max_drift))
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX: usize = 50;

/// Solves m·x = rhs in place for small n by Gaussian elimination with
/// partial pivoting; returns false on a singular pivot.
fn gauss_solve(n: usize, m: &mut [f64], rhs: &mut [f64]) -> bool {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        if m[piv * n + col] == 0.0 {
            return false;
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            rhs.swap(col, piv);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f != 0.0 {
                for c in col..n {
                    m[r * n + c] -= f * m[col * n + c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut s = rhs[col];
        for c in col + 1..n {
            s -= m[col * n + c] * rhs[c];
        }
        rhs[col] = s / m[col * n + col];
    }
    true
}

fn run_implicit(
    system: &SystemModel,
    x0: &[f64],
    q0: Option<&[f64]>,
    t_span: (f64, f64),
    n_seg: usize,
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    let n = system.dim;
    let (t0, _) = t_span;
    let dt = opts.implicit_dt;
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidInput("implicit_dt must be positive".into()));
    }
    let rec_every_f = opts.dt_out / dt;
    let rec_every = rec_every_f.round() as usize;
    if rec_every == 0 || (rec_every_f - rec_every as f64).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "implicit_dt {} must divide dt_out {}",
            dt, opts.dt_out
        )));
    }
    let n_steps = n_seg * rec_every;

    let with_q = q0.is_some();
    let mut rec = Recorder::new(system, with_q, n_seg + 1);

    let mut x = x0.to_vec();
    let mut q: Vec<f64> = q0.map(|q| q.to_vec()).unwrap_or_default();
    rec.push(t0, system.drift.lambda_at(t0), &x, q0.map(|_| q.as_slice()));

    // scratch
    let mut a_old = vec![0.0; n * n];
    let mut a_new = vec![0.0; n * n];
    let mut f_val = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut newton_m = vec![0.0; n * n];
    let mut jac = vec![0.0; n * n];
    let mut z = vec![0.0; n];
    let mut k1 = vec![0.0; n * n];
    let mut k2 = vec![0.0; n * n];
    let mut pred = vec![0.0; n * n];
    let mut tmp = vec![0.0; n * n];
    let mut qtaq = vec![0.0; n * n];
    let mut s = vec![0.0; n * n];

    if with_q {
        system.jacobian(&x, system.drift.lambda_at(t0), &mut a_old);
    }

    let mut max_drift: f64 = 0.0;
    let mut diverged = false;

    for step in 1..=n_steps {
        let t_new = t0 + step as f64 * dt;
        let lam_new = system.drift.lambda_at(t_new);

        // Newton iteration for z − x − dt·f(z, λ_new) = 0, started from the
        // current state.
        z.copy_from_slice(&x);
        let mut converged = false;
        for _ in 0..NEWTON_MAX {
            system.rhs(&z, lam_new, &mut f_val);
            for i in 0..n {
                g[i] = z[i] - x[i] - dt * f_val[i];
            }
            system.jacobian(&z, lam_new, &mut jac);
            for i in 0..n {
                for j in 0..n {
                    newton_m[i * n + j] =
                        if i == j { 1.0 - dt * jac[i * n + j] } else { -dt * jac[i * n + j] };
                }
            }
            if !gauss_solve(n, &mut newton_m, &mut g) {
                return Err(Error::Integration {
                    time: t_new,
                    message: "singular Newton matrix in implicit step".into(),
                });
            }
            let mut dz_max: f64 = 0.0;
            for i in 0..n {
                z[i] -= g[i];
                dz_max = dz_max.max(g[i].abs());
            }
            if dz_max <= NEWTON_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Integration {
                time: t_new,
                message: format!("Newton iteration did not converge within {NEWTON_MAX} steps"),
            });
        }

        if with_q {
            // Heun step for Q with A evaluated at the two step endpoints.
            system.jacobian(&z, lam_new, &mut a_new);
            mat::qt_a_q(n, &q, &a_old, &mut tmp, &mut qtaq);
            skew_from_qtaq(n, &qtaq, &mut s);
            mat::matmul(n, &q, &s, &mut k1);
            for i in 0..n * n {
                pred[i] = q[i] + dt * k1[i];
            }
            mat::qt_a_q(n, &pred, &a_new, &mut tmp, &mut qtaq);
            skew_from_qtaq(n, &qtaq, &mut s);
            mat::matmul(n, &pred, &s, &mut k2);
            for i in 0..n * n {
                q[i] += 0.5 * dt * (k1[i] + k2[i]);
            }
            let drift = mat::orthogonality_defect(n, &q);
            if drift > max_drift {
                max_drift = drift;
            }
            mat::mgs_columns(n, &mut q);
            std::mem::swap(&mut a_old, &mut a_new);
        }

        x.copy_from_slice(&z);

        if x.iter().any(|v| !v.is_finite() || v.abs() > opts.divergence_cutoff) {
            diverged = true;
            break;
        }

        if step % rec_every == 0 {
            rec.push(t_new, lam_new, &x, if with_q { Some(q.as_slice()) } else { None });
        }
    }

    Ok(rec.finish(opts.dt_out, diverged, max_drift))
}
