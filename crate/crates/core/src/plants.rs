//! Plant models with known steady-state maps, and disturbance signals.
//!
//! Every plant exposes the vector field `f(x, u, w)`, the decomposed
//! steady-state map `h(u, w) = h_u(u) + h_w(w)` and the input Jacobian
//! `H(u) = ∂h_u/∂u` consumed by the gradient-flow controller.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::linalg::{check_hurwitz, numerical_jacobian, solve_lyapunov, spectral_norm};
use crate::numerics::ConvexRegion;
use crate::{Error, Matrix, Result, Vector};

/// Lipschitz constants of the steady-state maps and of the vector field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    pub ell_hu: f64,
    pub ell_hw: f64,
    /// Field constants; `None` when no global constant exists on the operating set.
    pub field_x: Option<f64>,
    pub field_u: Option<f64>,
    pub field_w: Option<f64>,
}

/// Exponential-stability constants `‖x(t) − h‖ ≤ k ‖x0 − h‖ e^{−a t}` for frozen inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub decay: f64,
    pub overshoot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantModel {
    Lti { a: Matrix, b: Matrix, e: Matrix },
    /// SIS epidemic in the coordinates `(x̃, ũ) = (x, 1/u)`.
    Sis { beta: f64, gamma: f64, mu: f64 },
    /// Unicycle under the polar-coordinate stabilizing law with reference input `u`.
    Unicycle { gain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub model: PlantModel,
    pub n: usize,
    pub n_u: usize,
    pub n_w: usize,
    /// Leading state components that enter costs and the tracking error.
    pub tracked: usize,
    pub lipschitz: LipschitzConstants,
    pub stability: StabilityConstants,
    /// Admissible input box, when the plant only satisfies its assumptions on one.
    pub input_box: Option<ConvexRegion>,
}

impl PlantSpec {
    pub fn name(&self) -> &'static str {
        match self.model {
            PlantModel::Lti { .. } => "lti",
            PlantModel::Sis { .. } => "sis",
            PlantModel::Unicycle { .. } => "unicycle",
        }
    }

    /// Canonical parameter string; identical plants produce identical descriptors.
    pub fn descriptor(&self) -> String {
        match &self.model {
            PlantModel::Lti { a, b, e } => format!(
                "lti(a={:?},b={:?},e={:?})",
                a.transpose().as_slice(),
                b.transpose().as_slice(),
                e.transpose().as_slice()
            ),
            PlantModel::Sis { beta, gamma, mu } => format!("sis(beta={beta:e},gamma={gamma:e},mu={mu:e})"),
            PlantModel::Unicycle { gain } => format!("unicycle(k={gain:e})"),
        }
    }

    pub fn field(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector {
        match &self.model {
            PlantModel::Lti { a, b, e } => {
                let mut dx = a * x + b * u;
                if !w.is_empty() {
                    dx += e * w;
                }
                dx
            }
            PlantModel::Sis { beta, gamma, mu } => {
                let (xi, ut) = (x[0], u[0]);
                Vector::from_element(1, beta / ut * (1.0 - xi) * xi - (gamma + mu) * xi)
            }
            PlantModel::Unicycle { gain } => {
                let state = [x[0], x[1], x[2]];
                let (v, omega) = match polar_transform(state, [u[0], u[1]]) {
                    Ok((rho, phi)) => stabilizing_law(rho, phi, *gain),
                    // At the reference the law is at rest.
                    Err(_) => (0.0, 0.0),
                };
                let d = unicycle_field(state, [v, omega]);
                Vector::from_column_slice(&d)
            }
        }
    }

    /// Input part of the steady-state map.
    pub fn h_u(&self, u: &Vector) -> Vector {
        match &self.model {
            PlantModel::Lti { a, b, .. } => -lti_inverse(a) * (b * u),
            PlantModel::Sis { beta, gamma, mu } => {
                Vector::from_element(1, 1.0 - (mu + gamma) / beta * u[0])
            }
            // Orientation is not pinned at rest; it is outside the tracked block.
            PlantModel::Unicycle { .. } => Vector::from_column_slice(&[u[0], u[1], 0.0]),
        }
    }

    /// Disturbance part of the steady-state map.
    pub fn h_w(&self, w: &Vector) -> Vector {
        match &self.model {
            PlantModel::Lti { a, e, .. } if !w.is_empty() => -lti_inverse(a) * (e * w),
            _ => Vector::zeros(self.n),
        }
    }

    pub fn steady_state(&self, u: &Vector, w: &Vector) -> Vector {
        self.h_u(u) + self.h_w(w)
    }

    /// Jacobian `H(u)` of `h_u`, of shape `n × n_u`.
    pub fn input_jacobian(&self, _u: &Vector) -> Matrix {
        match &self.model {
            PlantModel::Lti { a, b, .. } => -lti_inverse(a) * b,
            PlantModel::Sis { beta, gamma, mu } => Matrix::from_element(1, 1, -(mu + gamma) / beta),
            PlantModel::Unicycle { .. } => {
                Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
            }
        }
    }

    /// State Jacobian `∂f/∂x`, analytic where available.
    pub fn state_jacobian(&self, x: &Vector, u: &Vector, w: &Vector) -> Matrix {
        match &self.model {
            PlantModel::Lti { a, .. } => a.clone(),
            PlantModel::Sis { beta, gamma, mu } => {
                Matrix::from_element(1, 1, beta / u[0] * (1.0 - 2.0 * x[0]) - (gamma + mu))
            }
            PlantModel::Unicycle { .. } => numerical_jacobian(|y| self.field(y, u, w), x, 1e-6),
        }
    }

    /// Restricts a state vector to the tracked block.
    pub fn tracked_part(&self, x: &Vector) -> Vector {
        x.rows(0, self.tracked).into_owned()
    }
}

fn lti_inverse(a: &Matrix) -> Matrix {
    // Construction guarantees `a` is Hurwitz, hence invertible.
    a.clone().try_inverse().expect("Hurwitz matrix is invertible")
}

/// `ẋ = A x + B u + E w` with Hurwitz `A`.
pub fn lti_plant(a: Matrix, b: Matrix, e: Matrix) -> Result<PlantSpec> {
    check_hurwitz(&a)?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::dim(n, b.nrows(), "rows of B"));
    }
    if e.nrows() != n && e.ncols() > 0 {
        return Err(Error::dim(n, e.nrows(), "rows of E"));
    }
    let inv = lti_inverse(&a);
    let ell_hu = spectral_norm(&(&inv * &b));
    let ell_hw = if e.ncols() == 0 { 0.0 } else { spectral_norm(&(&inv * &e)) };
    let p = solve_lyapunov(&a, &Matrix::identity(n, n))?;
    let eig = p.clone().symmetric_eigenvalues();
    let (pmin, pmax) = (eig.min(), eig.max());
    Ok(PlantSpec {
        n,
        n_u: b.ncols(),
        n_w: e.ncols(),
        tracked: n,
        lipschitz: LipschitzConstants {
            ell_hu,
            ell_hw,
            field_x: Some(spectral_norm(&a)),
            field_u: Some(spectral_norm(&b)),
            field_w: Some(spectral_norm(&e)),
        },
        stability: StabilityConstants {
            decay: 1.0 / (2.0 * pmax),
            overshoot: (pmax / pmin).sqrt(),
        },
        input_box: None,
        model: PlantModel::Lti { a, b, e },
    })
}

/// Fraction of the disease-free threshold `β/(μ+γ)` kept as the upper input bound.
pub const SIS_INPUT_MARGIN: f64 = 0.95;

/// SIS epidemic in transformed coordinates `x̃ = x`, `ũ = 1/u ∈ [1, 0.95 β/(μ+γ)]`.
pub fn sis_plant(beta: f64, gamma: f64, mu: f64) -> Result<PlantSpec> {
    for (name, v) in [("beta", beta), ("gamma", gamma), ("mu", mu)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("SIS parameter {name} must be > 0, got {v}")));
        }
    }
    let slope = (mu + gamma) / beta;
    let u_max = SIS_INPUT_MARGIN / slope;
    if u_max <= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "no endemic regime: 0.95·β/(μ+γ) = {u_max} <= 1"
        )));
    }
    // Slowest linearized decay over the box is at the largest ũ.
    let decay = beta / u_max - (mu + gamma);
    Ok(PlantSpec {
        model: PlantModel::Sis { beta, gamma, mu },
        n: 1,
        n_u: 1,
        n_w: 0,
        tracked: 1,
        lipschitz: LipschitzConstants {
            ell_hu: slope,
            ell_hw: 0.0,
            field_x: Some(beta + gamma + mu),
            field_u: Some(beta / 4.0),
            field_w: Some(0.0),
        },
        stability: StabilityConstants {
            decay,
            overshoot: 1.0,
        },
        input_box: Some(ConvexRegion::boxed(vec![1.0], vec![u_max])?),
    })
}

/// The untransformed SIS field `(ṡ, ẋ)` for contact-reduction input `u ∈ (0, 1]`.
pub fn sis_full_field(s: f64, x: f64, u: f64, beta: f64, gamma: f64, mu: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("SIS fractions out of [0,1]: s={s}, x={x}")));
    }
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::InvalidParameter(format!("SIS input u={u} outside (0,1]")));
    }
    let infections = u * beta * s * x;
    Ok((mu - mu * s - infections + gamma * x, infections - (gamma + mu) * x))
}

/// Unicycle kinematics for state `(a, b, θ)` and inputs `(v, ω)`.
pub fn unicycle_field(state: [f64; 3], inputs: [f64; 2]) -> [f64; 3] {
    let (v, omega) = (inputs[0], inputs[1]);
    [v * state[2].cos(), v * state[2].sin(), omega]
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Distance and bearing error of the robot relative to the reference point.
pub fn polar_transform(state: [f64; 3], reference: [f64; 2]) -> Result<(f64, f64)> {
    let (da, db) = (reference[0] - state[0], reference[1] - state[1]);
    let rho = da.hypot(db);
    if rho == 0.0 {
        return Err(Error::Singular("robot coincides with the reference point".into()));
    }
    Ok((rho, wrap_angle(db.atan2(da) - state[2])))
}

/// Low-level stabilizing law returning `(v, ω)`.
pub fn stabilizing_law(rho: f64, phi: f64, gain: f64) -> (f64, f64) {
    let v = gain * rho * phi.cos();
    let omega = gain * (phi.cos() + 1.0) * phi.sin() + gain * phi;
    (v, omega)
}

/// Unicycle closed under [`stabilizing_law`]; the high-level input is the reference point.
pub fn stabilized_unicycle(gain: f64) -> Result<PlantSpec> {
    if !(gain > 0.0) || !gain.is_finite() {
        return Err(Error::InvalidParameter(format!("unicycle gain must be > 0, got {gain}")));
    }
    Ok(PlantSpec {
        model: PlantModel::Unicycle { gain },
        n: 3,
        n_u: 2,
        n_w: 0,
        tracked: 2,
        lipschitz: LipschitzConstants {
            ell_hu: 1.0,
            ell_hw: 0.0,
            field_x: None,
            field_u: None,
            field_w: Some(0.0),
        },
        // Nominal rate of the bearing dynamics; the distance decays at a
        // bearing-dependent rate.
        stability: StabilityConstants {
            decay: gain,
            overshoot: 1.0,
        },
        input_box: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceKind {
    Constant { value: Vec<f64> },
    /// `w_i(t) = mean_i + amplitude_i sin(omega_i t)`.
    Sinusoid { mean: Vec<f64>, amplitude: Vec<f64>, omega: Vec<f64> },
    /// Steps between `values` at `breakpoints`, each smoothed by a linear ramp.
    PiecewiseConstant { breakpoints: Vec<f64>, values: Vec<Vec<f64>>, ramp: f64 },
}

/// Exogenous input `w_t`, absolutely continuous with a known derivative bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSignal {
    pub kind: DisturbanceKind,
    /// `ess sup ‖ẇ‖` over all time.
    pub derivative_ess_sup: f64,
}

/// Default smoothing ramp for piecewise-constant disturbances.
pub const DEFAULT_RAMP: f64 = 0.1;

impl DisturbanceSignal {
    pub fn new(kind: DisturbanceKind) -> Result<Self> {
        let derivative_ess_sup = match &kind {
            DisturbanceKind::Constant { value } => {
                if value.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("constant disturbance must be finite".into()));
                }
                0.0
            }
            DisturbanceKind::Sinusoid { mean, amplitude, omega } => {
                if amplitude.len() != mean.len() || omega.len() != mean.len() {
                    return Err(Error::dim(mean.len(), amplitude.len().min(omega.len()), "sinusoid fields"));
                }
                amplitude
                    .iter()
                    .zip(omega)
                    .map(|(a, w)| (a * w).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }
            DisturbanceKind::PiecewiseConstant { breakpoints, values, ramp } => {
                if values.len() != breakpoints.len() + 1 {
                    return Err(Error::InvalidParameter(format!(
                        "piecewise disturbance needs {} values, got {}",
                        breakpoints.len() + 1,
                        values.len()
                    )));
                }
                if !(*ramp > 0.0) {
                    return Err(Error::InvalidParameter("ramp must be > 0".into()));
                }
                let dim = values[0].len();
                if values.iter().any(|v| v.len() != dim) {
                    return Err(Error::InvalidParameter("piecewise values differ in dimension".into()));
                }
                if breakpoints.windows(2).any(|p| p[1] - p[0] < *ramp) {
                    return Err(Error::InvalidParameter(
                        "breakpoints must be increasing and at least one ramp apart".into(),
                    ));
                }
                piecewise_slopes(values, *ramp).into_iter().fold(0.0, f64::max)
            }
        };
        Ok(Self {
            kind,
            derivative_ess_sup,
        })
    }

    pub fn constant(value: Vec<f64>) -> Result<Self> {
        Self::new(DisturbanceKind::Constant { value })
    }

    /// Zero-dimensional disturbance for plants without exogenous inputs.
    pub fn none() -> Self {
        Self {
            kind: DisturbanceKind::Constant { value: vec![] },
            derivative_ess_sup: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            DisturbanceKind::Constant { value } => value.len(),
            DisturbanceKind::Sinusoid { mean, .. } => mean.len(),
            DisturbanceKind::PiecewiseConstant { values, .. } => values[0].len(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, DisturbanceKind::Constant { .. })
    }

    pub fn value(&self, t: f64) -> Vector {
        match &self.kind {
            DisturbanceKind::Constant { value } => Vector::from_column_slice(value),
            DisturbanceKind::Sinusoid { mean, amplitude, omega } => Vector::from_iterator(
                mean.len(),
                (0..mean.len()).map(|i| mean[i] + amplitude[i] * (omega[i] * t).sin()),
            ),
            DisturbanceKind::PiecewiseConstant { breakpoints, values, ramp } => {
                let mut w = Vector::from_column_slice(&values[0]);
                for (j, b) in breakpoints.iter().enumerate() {
                    let frac = ((t - b) / ramp).clamp(0.0, 1.0);
                    if frac > 0.0 {
                        let step = Vector::from_column_slice(&values[j + 1]) - Vector::from_column_slice(&values[j]);
                        w += step * frac;
                    }
                }
                w
            }
        }
    }

    pub fn derivative(&self, t: f64) -> Vector {
        match &self.kind {
            DisturbanceKind::Constant { value } => Vector::zeros(value.len()),
            DisturbanceKind::Sinusoid { amplitude, omega, .. } => Vector::from_iterator(
                amplitude.len(),
                (0..amplitude.len()).map(|i| amplitude[i] * omega[i] * (omega[i] * t).cos()),
            ),
            DisturbanceKind::PiecewiseConstant { breakpoints, values, ramp } => {
                let mut d = Vector::zeros(values[0].len());
                for (j, b) in breakpoints.iter().enumerate() {
                    if t >= *b && t < b + ramp {
                        let step = Vector::from_column_slice(&values[j + 1]) - Vector::from_column_slice(&values[j]);
                        d += step / *ramp;
                    }
                }
                d
            }
        }
    }

    /// `ess sup ‖ẇ_τ‖` for `τ ∈ [t0, t]`.
    pub fn derivative_ess_sup_on(&self, t0: f64, t: f64) -> f64 {
        match &self.kind {
            DisturbanceKind::PiecewiseConstant { breakpoints, values, ramp } => piecewise_slopes(values, *ramp)
                .into_iter()
                .zip(breakpoints)
                .filter(|(_, b)| **b < t && **b + ramp > t0)
                .map(|(s, _)| s)
                .fold(0.0, f64::max),
            _ if t <= t0 => 0.0,
            _ => self.derivative_ess_sup,
        }
    }

    /// Componentwise bounding box `W_c` of the signal values.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            DisturbanceKind::Constant { value } => (value.clone(), value.clone()),
            DisturbanceKind::Sinusoid { mean, amplitude, .. } => (
                mean.iter().zip(amplitude).map(|(m, a)| m - a.abs()).collect(),
                mean.iter().zip(amplitude).map(|(m, a)| m + a.abs()).collect(),
            ),
            DisturbanceKind::PiecewiseConstant { values, .. } => {
                let dim = values[0].len();
                let lo = (0..dim)
                    .map(|i| values.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min))
                    .collect();
                let hi = (0..dim)
                    .map(|i| values.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max))
                    .collect();
                (lo, hi)
            }
        }
    }
}

fn piecewise_slopes(values: &[Vec<f64>], ramp: f64) -> Vec<f64> {
    values
        .windows(2)
        .map(|p| {
            p[0].iter()
                .zip(&p[1])
                .map(|(a, b)| (b - a).powi(2))
                .sum::<f64>()
                .sqrt()
                / ramp
        })
        .collect()
}
