//! ISS certificate engine: Lyapunov constants, the gain ceiling `η*`, the
//! transient envelope and the gradient-error budgets `δ`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::controller::{instance_descriptor, Trajectory};
use crate::linalg::{solve_lyapunov, spectral_norm};
use crate::objective::CostSpec;
use crate::plants::{DisturbanceSignal, PlantModel, PlantSpec};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    Empirical,
    User,
    /// Computed on a linearization; valid only near the linearization point.
    LocalSurrogate,
}

/// Bounds of a Lyapunov function `W(x, u, w)` for the plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConstants {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub d6: f64,
    pub provenance: Provenance,
}

impl LyapunovConstants {
    pub fn validate(&self) -> Result<()> {
        let ds = [self.d1, self.d2, self.d3, self.d4];
        if ds.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidParameter(format!("d1..d4 must be positive, got {ds:?}")));
        }
        if !(self.d5 >= 0.0) || !(self.d6 >= 0.0) {
            return Err(Error::InvalidParameter("d5, d6 must be >= 0".into()));
        }
        if self.d1 > self.d2 {
            return Err(Error::InvalidParameter(format!("d1 = {} exceeds d2 = {}", self.d1, self.d2)));
        }
        Ok(())
    }
}

fn constants_from_state_matrix(a: &Matrix, ell_hu: f64, ell_hw: f64, provenance: Provenance) -> Result<LyapunovConstants> {
    let n = a.nrows();
    let p = solve_lyapunov(a, &Matrix::identity(n, n))?;
    let eig = p.clone().symmetric_eigenvalues();
    let d4 = 2.0 * spectral_norm(&p);
    Ok(LyapunovConstants {
        d1: eig.min(),
        d2: eig.max(),
        d3: 1.0,
        d4,
        d5: d4 * ell_hu,
        d6: d4 * ell_hw,
        provenance,
    })
}

/// Constants of `W = (x − h)ᵀ P (x − h)` with `AᵀP + PA = −I`.
pub fn lti_lyapunov_constants(a: &Matrix, b: &Matrix, e: &Matrix) -> Result<LyapunovConstants> {
    let inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("state matrix is singular".into()))?;
    let ell_hu = spectral_norm(&(&inv * b));
    let ell_hw = if e.ncols() == 0 { 0.0 } else { spectral_norm(&(&inv * e)) };
    constants_from_state_matrix(a, ell_hu, ell_hw, Provenance::Analytic)
}

/// Lyapunov constants for any shipped plant: exact for LTI plants, otherwise
/// from the linearization at the equilibrium `h(u, w)`.
pub fn plant_lyapunov_constants(plant: &PlantSpec, u: &Vector, w: &Vector) -> Result<LyapunovConstants> {
    match &plant.model {
        PlantModel::Lti { a, b, e } => lti_lyapunov_constants(a, b, e),
        _ => {
            let x = plant.steady_state(u, w);
            let a = plant.state_jacobian(&x, u, w);
            constants_from_state_matrix(&a, plant.lipschitz.ell_hu, plant.lipschitz.ell_hw, Provenance::LocalSurrogate)
        }
    }
}

/// The constants entering the gain ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainCeilingInputs {
    pub mu: f64,
    pub ell: f64,
    pub s: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub ell_hu: f64,
    pub ell_y: f64,
}

/// `η* = min{2μ/ℓ², (1−s)² d3 μ / (ℓ_hu (d4 ℓ_hu + d5)((1−s) μ ℓ_y + 2ℓ²))}`.
pub fn eta_star(g: &GainCeilingInputs) -> Result<f64> {
    for (name, v) in [("mu", g.mu), ("ell", g.ell), ("d3", g.d3), ("d4", g.d4)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
        }
    }
    for (name, v) in [("d5", g.d5), ("ell_hu", g.ell_hu), ("ell_y", g.ell_y)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
        }
    }
    if !(g.s > 0.0 && g.s < 1.0) {
        return Err(Error::InvalidParameter(format!("s must lie in (0, 1), got {}", g.s)));
    }
    let first = 2.0 * g.mu / (g.ell * g.ell);
    let denom = g.ell_hu * (g.d4 * g.ell_hu + g.d5) * ((1.0 - g.s) * g.mu * g.ell_y + 2.0 * g.ell * g.ell);
    let second = if denom > 0.0 {
        (1.0 - g.s).powi(2) * g.d3 * g.mu / denom
    } else {
        f64::INFINITY
    };
    Ok(first.min(second))
}

/// Everything needed to certify one plant/cost instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateInputs {
    pub s: f64,
    pub mu: f64,
    pub ell_u: f64,
    pub ell_x: f64,
    /// Gradient constant of the gain ceiling; `None` reads it as `ℓ_x`.
    pub ell_y: Option<f64>,
    pub ell_hu: f64,
    pub ell_hw: f64,
    pub ell_j: f64,
    pub ell_j_provenance: Provenance,
    pub lyapunov: LyapunovConstants,
    /// Diameter of the admissible input set.
    pub diam_u: f64,
    /// Region radius of the plant's stability assumption, when known.
    pub r0: Option<f64>,
    pub instance: String,
}

/// Default free analysis parameter `s`.
pub const DEFAULT_S: f64 = 0.5;

impl CertificateInputs {
    pub fn from_problem(plant: &PlantSpec, cost: &CostSpec, lyapunov: LyapunovConstants, ell_j: f64, ell_j_provenance: Provenance) -> Self {
        Self {
            s: DEFAULT_S,
            mu: cost.mu_u,
            ell_u: cost.ell_u,
            ell_x: cost.ell_x,
            ell_y: None,
            ell_hu: plant.lipschitz.ell_hu,
            ell_hw: plant.lipschitz.ell_hw,
            ell_j,
            ell_j_provenance,
            lyapunov,
            diam_u: cost.region.bounding_diameter(),
            r0: None,
            instance: instance_descriptor(plant, cost),
        }
    }

    /// `ℓ = ℓ_u + ℓ_hu² ℓ_x`.
    pub fn ell(&self) -> f64 {
        self.ell_u + self.ell_hu * self.ell_hu * self.ell_x
    }

    pub fn ell_y(&self) -> f64 {
        self.ell_y.unwrap_or(self.ell_x)
    }

    pub fn gain_ceiling(&self) -> GainCeilingInputs {
        GainCeilingInputs {
            mu: self.mu,
            ell: self.ell(),
            s: self.s,
            d3: self.lyapunov.d3,
            d4: self.lyapunov.d4,
            d5: self.lyapunov.d5,
            ell_hu: self.ell_hu,
            ell_y: self.ell_y(),
        }
    }

    pub fn eta_star(&self) -> Result<f64> {
        self.lyapunov.validate()?;
        eta_star(&self.gain_ceiling())
    }
}

/// The constants of the transient bound for a gain `η` and slope `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IssConstants {
    pub theta: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub alpha: f64,
}

/// Evaluates the certificate constants; refuses gains outside `(0, η*)` and
/// slopes `γ ≥ c0/c3`.
pub fn iss_constants(inputs: &CertificateInputs, eta: f64, gamma: f64) -> Result<IssConstants> {
    let eta_star = inputs.eta_star()?;
    if !(eta > 0.0) || eta >= eta_star {
        return Err(Error::GainAboveCeiling { eta, eta_star });
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
    }
    let d = &inputs.lyapunov;
    let ell = inputs.ell();
    let coupling = if d.d5 == 0.0 { 0.0 } else { d.d5 / (ell * inputs.ell_hu) };
    let theta = 1.0 / (1.0 + d.d4 + coupling);
    let s = inputs.s;
    let c0 = (s * inputs.mu * eta).min(s * d.d3 / d.d2);
    let c1 = ((1.0 - theta) / 2.0).min(theta * d.d1) / eta;
    let c2 = ((1.0 - theta) / 2.0).max(theta * d.d2) / eta;
    let c3 = 2f64.sqrt() / c1;
    let c4 = (2.0 * eta).sqrt() * 1f64.max(1.0 / d.d1.sqrt());
    let c5 = 2f64.sqrt() / eta.sqrt() * inputs.ell_j + d.d4 * inputs.ell_hw / (eta.sqrt() * d.d1.sqrt());
    let limit = c0 / c3;
    if gamma >= limit {
        return Err(Error::NoExponentialRate { gamma, limit });
    }
    Ok(IssConstants {
        theta,
        c0,
        c1,
        c2,
        c3,
        c4,
        c5,
        kappa1: (c2 / c1).sqrt(),
        kappa2: c5 / (c0 * c1.sqrt()),
        kappa3: c4 / (c0 * c1.sqrt()),
        alpha: c0 - gamma * c3,
    })
}

/// Gradient-error budget `δ` for the four learning setups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DeltaBudget {
    /// `ℓ_hu ℓ_x √n_ξ (3 sup + 2 ω_p(ϱ) + 2 ‖A‖∞ ϱ)`.
    StateResnet {
        ell_hu: f64,
        ell_x: f64,
        n_xi: usize,
        sup_error: f64,
        modulus: f64,
        skip_norm: f64,
        rho: f64,
    },
    /// `ℓ_hu ℓ_x √n sup`.
    StateFeedforward { ell_hu: f64, ell_x: f64, n: usize, sup_error: f64 },
    /// `e_u,fd + n_u ê_φ/ε + ℓ_hu e_x,fd + n ℓ_hu ê_ψ/ε`.
    CostFeedforward {
        e_u_fd: f64,
        n_u: usize,
        e_phi: f64,
        e_x_fd: f64,
        n: usize,
        e_psi: f64,
        ell_hu: f64,
        epsilon: f64,
    },
    /// `e_u,fd + n_u^{3/2} ε⁻¹ (3 e_u + 2 ω_φ + 2‖A_u‖∞) + ℓ_hu e_x,fd + n^{3/2} ε⁻¹ ℓ_hu (3 e_x + 2 ω_ψ + 2‖A_x‖∞)`.
    CostResnet {
        e_u_fd: f64,
        n_u: usize,
        e_u_train: f64,
        omega_phi: f64,
        skip_u: f64,
        e_x_fd: f64,
        n: usize,
        e_x_train: f64,
        omega_psi: f64,
        skip_x: f64,
        ell_hu: f64,
        epsilon: f64,
    },
}

impl DeltaBudget {
    pub fn delta(&self) -> f64 {
        match *self {
            DeltaBudget::StateResnet {
                ell_hu,
                ell_x,
                n_xi,
                sup_error,
                modulus,
                skip_norm,
                rho,
            } => ell_hu * ell_x * (n_xi as f64).sqrt() * (3.0 * sup_error + 2.0 * modulus + 2.0 * skip_norm * rho),
            DeltaBudget::StateFeedforward { ell_hu, ell_x, n, sup_error } => ell_hu * ell_x * (n as f64).sqrt() * sup_error,
            DeltaBudget::CostFeedforward {
                e_u_fd,
                n_u,
                e_phi,
                e_x_fd,
                n,
                e_psi,
                ell_hu,
                epsilon,
            } => e_u_fd + n_u as f64 * e_phi / epsilon + ell_hu * e_x_fd + n as f64 * ell_hu * e_psi / epsilon,
            DeltaBudget::CostResnet {
                e_u_fd,
                n_u,
                e_u_train,
                omega_phi,
                skip_u,
                e_x_fd,
                n,
                e_x_train,
                omega_psi,
                skip_x,
                ell_hu,
                epsilon,
            } => {
                e_u_fd
                    + (n_u as f64).powf(1.5) / epsilon * (3.0 * e_u_train + 2.0 * omega_phi + 2.0 * skip_u)
                    + ell_hu * e_x_fd
                    + (n as f64).powf(1.5) / epsilon * ell_hu * (3.0 * e_x_train + 2.0 * omega_psi + 2.0 * skip_x)
            }
        }
    }

    /// Caveats the report should carry alongside the value.
    pub fn notes(&self) -> Vec<String> {
        match self {
            DeltaBudget::CostResnet { .. } => vec![
                "residual cost budget uses dimension^(3/2)/epsilon coefficients (feedforward uses dimension/epsilon)".into(),
                "residual cost budget adds 2*||A||_inf without a cover-radius factor, unlike the state budget".into(),
            ],
            DeltaBudget::StateResnet { .. } => vec!["modulus of continuity is an empirical estimate".into()],
            _ => vec![],
        }
    }
}

/// Certificate for one gain, with provenance of every constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssCertificate {
    pub inputs: CertificateInputs,
    pub ell: f64,
    pub ell_y: f64,
    pub eta: f64,
    pub eta_star: f64,
    pub gamma: f64,
    pub constants: IssConstants,
    pub delta: Option<f64>,
    pub delta_budget: Option<DeltaBudget>,
    pub provenance: BTreeMap<String, Provenance>,
    pub notes: Vec<String>,
    pub config_hash: String,
}

/// Builds a certificate, refusing gains that violate the gain condition.
pub fn certify(inputs: &CertificateInputs, eta: f64, gamma: f64, budget: Option<DeltaBudget>) -> Result<IssCertificate> {
    let constants = iss_constants(inputs, eta, gamma)?;
    let eta_star = inputs.eta_star()?;
    let mut provenance = BTreeMap::new();
    let lyap = inputs.lyapunov.provenance;
    for key in ["d1", "d2", "d3", "d4", "d5", "d6"] {
        provenance.insert(key.to_string(), lyap);
    }
    provenance.insert("ell_j".into(), inputs.ell_j_provenance);
    provenance.insert(
        "ell_y".into(),
        if inputs.ell_y.is_some() { Provenance::User } else { Provenance::Analytic },
    );
    for key in ["mu", "ell_u", "ell_x", "ell_hu", "ell_hw", "s", "eta"] {
        provenance.insert(key.to_string(), Provenance::Analytic);
    }
    let derived = if lyap == Provenance::Analytic && inputs.ell_j_provenance == Provenance::Analytic {
        Provenance::Analytic
    } else if lyap == Provenance::LocalSurrogate {
        Provenance::LocalSurrogate
    } else {
        Provenance::Empirical
    };
    for key in ["c0", "c1", "c2", "c3", "c4", "c5", "kappa1", "kappa2", "kappa3", "alpha", "eta_star"] {
        provenance.insert(key.to_string(), derived);
    }
    let mut notes = Vec::new();
    if inputs.ell_y.is_none() {
        notes.push("ell_y taken equal to ell_x".into());
    }
    if lyap == Provenance::LocalSurrogate {
        notes.push("Lyapunov constants from a linearization: the certificate is local".into());
    }
    if let Some(b) = &budget {
        notes.extend(b.notes());
        provenance.insert("delta".into(), Provenance::Empirical);
    }
    Ok(IssCertificate {
        ell: inputs.ell(),
        ell_y: inputs.ell_y(),
        eta,
        eta_star,
        gamma,
        constants,
        delta: budget.as_ref().map(DeltaBudget::delta),
        delta_budget: budget,
        provenance,
        notes,
        inputs: inputs.clone(),
        config_hash: String::new(),
    })
}

impl IssCertificate {
    /// `κ1 e^{−α(t−t0)/2} ‖z0‖ + κ2 ess sup ‖ẇ‖ + κ3 δ`.
    pub fn tracking_bound(&self, elapsed: f64, z0: f64, ess_sup_wdot: f64, delta: f64) -> Result<f64> {
        let k = &self.constants;
        if !(k.alpha > 0.0) {
            return Err(Error::NoExponentialRate {
                gamma: self.gamma,
                limit: k.c0 / k.c3,
            });
        }
        Ok(k.kappa1 * (-0.5 * k.alpha * elapsed).exp() * z0 + k.kappa2 * ess_sup_wdot + k.kappa3 * delta)
    }

    /// Upper limit on the initial-region radius `r′`, when `r0` is known.
    pub fn initial_region_limit(&self, ess_sup_wdot: f64, delta: f64) -> Option<f64> {
        let k = &self.constants;
        let r = std::f64::consts::SQRT_2;
        self.inputs.r0.map(|r0| {
            r0 / (r * k.kappa1) - r * k.kappa3 * delta - r * k.kappa2 * ess_sup_wdot - r * k.kappa1 * self.inputs.diam_u
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Outcome of comparing a trajectory with its envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub holds: bool,
    /// Largest `‖z‖ − envelope` (negative when the bound holds with room).
    pub max_violation: f64,
    pub envelope: Vec<f64>,
    pub margin: Vec<f64>,
}

/// Numeric slack of [`verify_bound`].
pub const BOUND_SLACK: f64 = 1e-9;

/// Checks `‖z(t)‖ ≤ envelope(t) + slack` at every sample.
pub fn verify_bound(trajectory: &Trajectory, cert: &IssCertificate, delta: f64, ess_sup_wdot: f64) -> Result<BoundReport> {
    if !cert.inputs.instance.is_empty() && trajectory.meta.instance != cert.inputs.instance {
        return Err(Error::InstanceMismatch(trajectory.meta.instance.clone(), cert.inputs.instance.clone()));
    }
    verify_envelope(&trajectory.times, &trajectory.error, cert, delta, ess_sup_wdot)
}

/// [`verify_bound`] on an arbitrary error series `errors[k]` sampled at `times[k]`.
pub fn verify_envelope(times: &[f64], errors: &[f64], cert: &IssCertificate, delta: f64, ess_sup_wdot: f64) -> Result<BoundReport> {
    if times.len() != errors.len() {
        return Err(Error::dim(times.len(), errors.len(), "error samples"));
    }
    if times.is_empty() {
        log::warn!("empty trajectory: bound holds vacuously");
        return Ok(BoundReport {
            holds: true,
            max_violation: f64::NEG_INFINITY,
            envelope: vec![],
            margin: vec![],
        });
    }
    let (t0, z0) = (times[0], errors[0]);
    let mut envelope = Vec::with_capacity(times.len());
    let mut margin = Vec::with_capacity(times.len());
    let mut worst = f64::NEG_INFINITY;
    for (t, z) in times.iter().zip(errors) {
        let b = cert.tracking_bound(t - t0, z0, ess_sup_wdot, delta)?;
        envelope.push(b);
        margin.push(b - z);
        worst = worst.max(z - b);
    }
    Ok(BoundReport {
        holds: worst <= BOUND_SLACK,
        max_violation: worst,
        envelope,
        margin,
    })
}

/// `‖(x − h(u, w), u − u*)‖` on the tracked block, the coordinates of the
/// Lyapunov argument. Differs from the recorded `‖z‖` by the state offset
/// `h(u, w) − h(u*, w)`.
pub fn lyapunov_coordinate_error(trajectory: &Trajectory, plant: &PlantSpec, disturbance: &DisturbanceSignal) -> Vec<f64> {
    trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .zip(&trajectory.inputs)
        .zip(&trajectory.u_star)
        .map(|(((t, x), u), us)| {
            let h = plant.steady_state(u, &disturbance.value(*t));
            let dx = plant.tracked_part(x) - plant.tracked_part(&h);
            (dx.norm_squared() + (u - us).norm_squared()).sqrt()
        })
        .collect()
}
