//! The benchmark systems: right-hand sides, analytic Jacobians,
//! quasi-static equilibrium (QSE) curves, and reference critical rates.
//!
//! All polynomial systems are written in the shifted variable u = x − λ(t),
//! so their equilibria ride along with the drifting parameter.

use std::fmt;
use std::sync::Arc;

use crate::drift::ParameterDrift;
use crate::error::{Error, Result};

/// Constants of the resource-consumer model
/// Ṙ = λR(1−R/K) − aCR/(R+R_h), Ċ = ε(eaCR/(R+R_h) − mC).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcParams {
    pub a: f64,
    pub e: f64,
    pub k: f64,
    pub m: f64,
    pub eps: f64,
    pub r_h: f64,
}

impl Default for RcParams {
    fn default() -> Self {
        RcParams { a: 1.0, e: 1.0, k: 10.0, m: 0.75, eps: 0.01, r_h: 2.0 }
    }
}

/// Second equation of the partially decoupled 2D extensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// ẏ = x − y
    Linear,
    /// ẏ = x²/2 − y
    HalfSquare,
}

type DynField = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum Family {
    /// ẋ = −u(u−δ): one stable QSE at x = λ+δ, one unstable at x = λ.
    Unique { delta: f64, coupling: Option<Coupling> },
    /// ẋ = −u(u²−δ²): stable QSEs at x = λ±δ, unstable at x = λ.
    Bistable { delta: f64, coupling: Option<Coupling> },
    ResourceConsumer(RcParams),
    /// Caller-supplied right-hand side and state Jacobian, both functions of
    /// (state, λ). Gives library users access to the QR machinery for
    /// systems outside the built-in catalog.
    Custom { rhs: DynField, jacobian: DynField },
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Unique { delta, coupling } => f
                .debug_struct("Unique")
                .field("delta", delta)
                .field("coupling", coupling)
                .finish(),
            Family::Bistable { delta, coupling } => f
                .debug_struct("Bistable")
                .field("delta", delta)
                .field("coupling", coupling)
                .finish(),
            Family::ResourceConsumer(p) => f.debug_tuple("ResourceConsumer").field(p).finish(),
            Family::Custom { .. } => f.debug_struct("Custom").finish_non_exhaustive(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SystemModel {
    pub name: String,
    pub dim: usize,
    pub drift: ParameterDrift,
    pub family: Family,
    /// Default initial condition.
    pub x0: Vec<f64>,
    /// Default integration interval.
    pub t_span: (f64, f64),
    /// Whether the default integrator is the fixed-step implicit one.
    pub stiff: bool,
}

impl SystemModel {
    /// Builds one of the seven built-in systems with its default initial
    /// condition and time interval.
    pub fn builtin(name: &str, rate: f64) -> Result<SystemModel> {
        if !rate.is_finite() {
            return Err(Error::InvalidInput(format!("rate must be finite, got {rate}")));
        }
        let delta = 0.5;
        let model = match name {
            "unique_linear" => SystemModel {
                name: name.into(),
                dim: 1,
                drift: ParameterDrift::linear(rate),
                family: Family::Unique { delta, coupling: None },
                x0: vec![0.5],
                t_span: (0.0, 60.0),
                stiff: false,
            },
            "bistable_linear" => SystemModel {
                name: name.into(),
                dim: 1,
                drift: ParameterDrift::linear(rate),
                family: Family::Bistable { delta, coupling: None },
                x0: vec![0.5],
                t_span: (0.0, 140.0),
                stiff: false,
            },
            "unique_logistic" => SystemModel {
                name: name.into(),
                dim: 1,
                drift: ParameterDrift::logistic(rate),
                family: Family::Unique { delta, coupling: None },
                x0: vec![0.5],
                t_span: (0.0, 60.0),
                stiff: false,
            },
            "bistable_logistic" => SystemModel {
                name: name.into(),
                dim: 1,
                drift: ParameterDrift::logistic(rate),
                family: Family::Bistable { delta, coupling: None },
                x0: vec![0.5],
                t_span: (0.0, 100.0),
                stiff: false,
            },
            "bistable_linear_2d" => SystemModel {
                name: name.into(),
                dim: 2,
                drift: ParameterDrift::linear(rate),
                family: Family::Bistable { delta, coupling: Some(Coupling::Linear) },
                x0: vec![0.5, 0.5],
                t_span: (0.0, 140.0),
                stiff: false,
            },
            "bistable_logistic_2d" => SystemModel {
                name: name.into(),
                dim: 2,
                drift: ParameterDrift::logistic(rate),
                family: Family::Bistable { delta, coupling: Some(Coupling::HalfSquare) },
                x0: vec![0.5, 0.5],
                t_span: (0.0, 100.0),
                stiff: false,
            },
            "resource_consumer" => SystemModel {
                name: name.into(),
                dim: 2,
                drift: ParameterDrift::affine_decreasing(rate)?,
                family: Family::ResourceConsumer(RcParams::default()),
                x0: vec![6.0, 16.0],
                t_span: (0.0, 2500.0),
                stiff: true,
            },
            _ => return Err(Error::UnknownSystem(name.into())),
        };
        Ok(model)
    }

    /// Builds a polynomial-family variant with explicit shape constants, as
    /// used by config-defined systems.
    pub fn polynomial(
        name: &str,
        bistable: bool,
        delta: f64,
        coupling: Option<Coupling>,
        drift: ParameterDrift,
        x0: Vec<f64>,
        t_span: (f64, f64),
    ) -> Result<SystemModel> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
        }
        let dim = if coupling.is_some() { 2 } else { 1 };
        if x0.len() != dim {
            return Err(Error::InvalidInput(format!(
                "initial condition has {} components, system has dimension {dim}",
                x0.len()
            )));
        }
        let family = if bistable {
            Family::Bistable { delta, coupling }
        } else {
            Family::Unique { delta, coupling }
        };
        Ok(SystemModel { name: name.into(), dim, drift, family, x0, t_span, stiff: false })
    }

    /// Wraps caller-supplied right-hand side and Jacobian closures.
    pub fn custom(
        name: &str,
        dim: usize,
        drift: ParameterDrift,
        rhs: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        jacobian: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        x0: Vec<f64>,
        t_span: (f64, f64),
    ) -> SystemModel {
        SystemModel {
            name: name.into(),
            dim,
            drift,
            family: Family::Custom { rhs: Arc::new(rhs), jacobian: Arc::new(jacobian) },
            x0,
            t_span,
            stiff: false,
        }
    }

    /// f(x, λ) into `out` (length `dim`).
    pub fn rhs(&self, x: &[f64], lam: f64, out: &mut [f64]) {
        match &self.family {
            Family::Unique { delta, coupling } => {
                let u = x[0] - lam;
                out[0] = -u * (u - delta);
                if let Some(c) = coupling {
                    out[1] = coupling_rhs(*c, x);
                }
            }
            Family::Bistable { delta, coupling } => {
                let u = x[0] - lam;
                out[0] = -u * (u * u - delta * delta);
                if let Some(c) = coupling {
                    out[1] = coupling_rhs(*c, x);
                }
            }
            Family::ResourceConsumer(p) => {
                let (r, c) = (x[0], x[1]);
                let d = r + p.r_h;
                out[0] = lam * r * (1.0 - r / p.k) - p.a * c * r / d;
                out[1] = p.eps * (p.e * p.a * c * r / d - p.m * c);
            }
            Family::Custom { rhs, .. } => rhs(x, lam, out),
        }
    }

    /// D_x f(x, λ) into `out` (row-major, length `dim`·`dim`).
    pub fn jacobian(&self, x: &[f64], lam: f64, out: &mut [f64]) {
        match &self.family {
            Family::Unique { delta, coupling } => {
                let u = x[0] - lam;
                let fx = delta - 2.0 * u;
                fill_poly_jacobian(fx, *coupling, x, out);
            }
            Family::Bistable { delta, coupling } => {
                let u = x[0] - lam;
                let fx = delta * delta - 3.0 * u * u;
                fill_poly_jacobian(fx, *coupling, x, out);
            }
            Family::ResourceConsumer(p) => {
                let (r, c) = (x[0], x[1]);
                let d = r + p.r_h;
                out[0] = lam * (1.0 - 2.0 * r / p.k) - p.a * c * p.r_h / (d * d);
                out[1] = -p.a * r / d;
                out[2] = p.eps * p.e * p.a * c * p.r_h / (d * d);
                out[3] = p.eps * (p.e * p.a * r / d - p.m);
            }
            Family::Custom { jacobian, .. } => jacobian(x, lam, out),
        }
    }

    /// Distance between the tracked stable QSE and the nearest unstable one;
    /// the default tracking radius. None for systems without that structure.
    pub fn default_tracking_radius(&self) -> Option<f64> {
        match &self.family {
            Family::Unique { delta, .. } | Family::Bistable { delta, .. } => Some(*delta),
            _ => None,
        }
    }
}

fn coupling_rhs(c: Coupling, x: &[f64]) -> f64 {
    match c {
        Coupling::Linear => x[0] - x[1],
        Coupling::HalfSquare => 0.5 * x[0] * x[0] - x[1],
    }
}

fn fill_poly_jacobian(fx: f64, coupling: Option<Coupling>, x: &[f64], out: &mut [f64]) {
    match coupling {
        None => out[0] = fx,
        Some(c) => {
            out[0] = fx;
            out[1] = 0.0;
            out[2] = match c {
                Coupling::Linear => 1.0,
                Coupling::HalfSquare => x[0],
            };
            out[3] = -1.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Stability {
    Stable,
    Unstable,
    Saddle,
}

/// One equilibrium branch of the frozen-λ family, evaluable at any λ.
#[derive(Debug, Clone)]
pub enum QseBranch {
    /// x₁ = λ + offset, with y from the coupling when 2D.
    PolyOffset { offset: f64, coupling: Option<Coupling> },
    /// (R, C) = (0, 0).
    RcExtinction,
    /// (R, C) = (K, 0).
    RcResourceOnly { k: f64 },
    /// Coexistence point R* = mR_h/(ea−m), C* = λ(1−R*/K)(R*+R_h)/a.
    RcCoexistence { r_star: f64, k: f64, r_h: f64, a: f64 },
}

#[derive(Debug, Clone)]
pub struct QseCurve {
    pub branch: QseBranch,
    pub stability: Stability,
}

impl QseCurve {
    pub fn at(&self, lam: f64) -> Vec<f64> {
        match &self.branch {
            QseBranch::PolyOffset { offset, coupling } => {
                let x = lam + offset;
                match coupling {
                    None => vec![x],
                    Some(Coupling::Linear) => vec![x, x],
                    Some(Coupling::HalfSquare) => vec![x, 0.5 * x * x],
                }
            }
            QseBranch::RcExtinction => vec![0.0, 0.0],
            QseBranch::RcResourceOnly { k } => vec![*k, 0.0],
            QseBranch::RcCoexistence { r_star, k, r_h, a } => {
                let c_star = lam * (1.0 - r_star / k) * (r_star + r_h) / a;
                vec![*r_star, c_star]
            }
        }
    }
}

/// Stability of an equilibrium from its (row-major) frozen-λ Jacobian.
fn classify(dim: usize, jac: &[f64]) -> Stability {
    match dim {
        1 => {
            if jac[0] < 0.0 {
                Stability::Stable
            } else {
                Stability::Unstable
            }
        }
        2 => {
            let tr = jac[0] + jac[3];
            let det = jac[0] * jac[3] - jac[1] * jac[2];
            if det < 0.0 {
                Stability::Saddle
            } else if tr < 0.0 && det > 0.0 {
                Stability::Stable
            } else {
                Stability::Unstable
            }
        }
        _ => unreachable!("built-in systems are one- or two-dimensional"),
    }
}

/// All equilibrium branches of the frozen-λ family for `system`, as curves in
/// λ. Stability labels are the generic ones away from degeneracies.
pub fn qse_curves(system: &SystemModel) -> Result<Vec<QseCurve>> {
    let stab = |offset: f64, coupling: Option<Coupling>| {
        // Label at a representative point; the polynomial labels do not
        // depend on λ.
        let x = QseCurve { branch: QseBranch::PolyOffset { offset, coupling }, stability: Stability::Stable }
            .at(1.0);
        let mut jac = vec![0.0; system.dim * system.dim];
        system.jacobian(&x, 1.0, &mut jac);
        classify(system.dim, &jac)
    };
    match &system.family {
        Family::Unique { delta, coupling } => Ok(vec![
            QseCurve {
                branch: QseBranch::PolyOffset { offset: 0.0, coupling: *coupling },
                stability: stab(0.0, *coupling),
            },
            QseCurve {
                branch: QseBranch::PolyOffset { offset: *delta, coupling: *coupling },
                stability: stab(*delta, *coupling),
            },
        ]),
        Family::Bistable { delta, coupling } => Ok(vec![
            QseCurve {
                branch: QseBranch::PolyOffset { offset: -delta, coupling: *coupling },
                stability: stab(-delta, *coupling),
            },
            QseCurve {
                branch: QseBranch::PolyOffset { offset: 0.0, coupling: *coupling },
                stability: stab(0.0, *coupling),
            },
            QseCurve {
                branch: QseBranch::PolyOffset { offset: *delta, coupling: *coupling },
                stability: stab(*delta, *coupling),
            },
        ]),
        Family::ResourceConsumer(p) => {
            let denom = p.e * p.a - p.m;
            if denom == 0.0 {
                return Err(Error::Singular(
                    "resource-consumer coexistence equilibrium undefined when e·a = m".into(),
                ));
            }
            let r_star = p.m * p.r_h / denom;
            // Labels at the default drift start λ = 5, the regime the model
            // is studied in.
            let lam0 = 5.0;
            let label = |point: &[f64]| {
                let mut jac = vec![0.0; 4];
                system.jacobian(point, lam0, &mut jac);
                classify(2, &jac)
            };
            let coex = QseBranch::RcCoexistence { r_star, k: p.k, r_h: p.r_h, a: p.a };
            let coex_point = QseCurve { branch: coex.clone(), stability: Stability::Stable }.at(lam0);
            Ok(vec![
                QseCurve { branch: QseBranch::RcExtinction, stability: label(&[0.0, 0.0]) },
                QseCurve {
                    branch: QseBranch::RcResourceOnly { k: p.k },
                    stability: label(&[p.k, 0.0]),
                },
                QseCurve { branch: coex, stability: label(&coex_point) },
            ])
        }
        Family::Custom { .. } => Err(Error::InvalidInput(
            "custom systems do not carry closed-form equilibrium curves".into(),
        )),
    }
}

/// All equilibria of the frozen-λ system at the given λ, with stability
/// labels computed from the Jacobian eigenvalues at each point.
pub fn qse_branches(system: &SystemModel, lam: f64) -> Result<Vec<(Vec<f64>, Stability)>> {
    let curves = qse_curves(system)?;
    Ok(curves
        .iter()
        .map(|c| {
            let point = c.at(lam);
            let mut jac = vec![0.0; system.dim * system.dim];
            system.jacobian(&point, lam, &mut jac);
            let s = classify(system.dim, &jac);
            (point, s)
        })
        .collect())
}

/// Reference critical rate for the built-in systems. Exact for
/// unique_linear (δ²/4); the others are the established numerical values.
/// The 2D extensions share their 1D parents' rates because the x equation is
/// unchanged.
pub fn analytic_critical_rate(name: &str) -> Result<f64> {
    match name {
        "unique_linear" => Ok(0.0625),
        "bistable_linear" | "bistable_linear_2d" => Ok(0.049),
        "unique_logistic" => Ok(0.5),
        "bistable_logistic" | "bistable_logistic_2d" => Ok(0.377),
        "resource_consumer" => Ok(-0.002),
        _ => Err(Error::UnknownSystem(name.into())),
    }
}

/// Default sub-critical reference rate used by the comparison detectors.
pub fn default_reference_rate(name: &str) -> Result<f64> {
    match name {
        "unique_linear" => Ok(0.06),
        "bistable_linear" | "bistable_linear_2d" => Ok(0.048),
        "unique_logistic" => Ok(0.49),
        "bistable_logistic" | "bistable_logistic_2d" => Ok(0.377),
        "resource_consumer" => Ok(-0.001),
        _ => Err(Error::UnknownSystem(name.into())),
    }
}

pub const BUILTIN_NAMES: [&str; 7] = [
    "unique_linear",
    "bistable_linear",
    "unique_logistic",
    "bistable_logistic",
    "bistable_linear_2d",
    "bistable_logistic_2d",
    "resource_consumer",
];
