//! Projected gradient-flow controller `u̇ = Π_C{u − η ĝ} − u` and the joint
//! plant/controller simulation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::linalg::check_len;
use crate::numerics::{integrate, ConvexRegion, StepperConfig};
use crate::objective::{nominal_gradient, CostSpec, OptimalTrajectoryMap};
use crate::perception::StatePerception;
use crate::plants::{DisturbanceSignal, PlantSpec};
use crate::surrogate::SurrogateGradient;
use crate::{Error, Result, Vector};

/// Source of the gradient estimate used by the controller.
#[derive(Debug, Clone)]
pub enum FeedbackMode {
    /// `F(x, u)` with the true state.
    Exact,
    /// `F(x, u) + e` with `e = (δ + γ‖z‖) ê` along a fixed unit direction `ê`.
    InjectedError { gamma: f64, delta: f64, direction: Vector },
    /// `F(p̂(ξ), u)` with the perceived state.
    StatePerception(Arc<StatePerception>),
    /// `ĝ_u(u) + H(u)ᵀ ĝ_x(x)`; an absent input surrogate means `∇φ` is known.
    CostPerception {
        phi: Option<Arc<SurrogateGradient>>,
        psi: Arc<SurrogateGradient>,
    },
}

impl FeedbackMode {
    pub fn name(&self) -> &'static str {
        match self {
            FeedbackMode::Exact => "exact",
            FeedbackMode::InjectedError { .. } => "injected_error",
            FeedbackMode::StatePerception(_) => "state_perception",
            FeedbackMode::CostPerception { .. } => "cost_perception",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub eta: f64,
    pub mode: FeedbackMode,
    pub region: ConvexRegion,
}

impl ControllerConfig {
    pub fn new(eta: f64, mode: FeedbackMode, region: ConvexRegion) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidParameter(format!("controller gain must be > 0, got {eta}")));
        }
        if let FeedbackMode::InjectedError { gamma, delta, direction } = &mode {
            if !(*gamma >= 0.0) || !(*delta >= 0.0) {
                return Err(Error::InvalidParameter("injected gamma and delta must be >= 0".into()));
            }
            let norm = direction.norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("error direction must be a unit vector, norm {norm}")));
            }
        }
        region.validate()?;
        Ok(Self { eta, mode, region })
    }
}

/// Optimizer at `w(t0)`, used to evaluate `‖z‖` inside the injected error.
#[derive(Debug, Clone)]
pub struct ErrorAnchor {
    pub u_star: Vector,
    pub x_star: Vector,
}

/// Gradient estimate for the configured mode.
pub fn gradient_estimate(
    config: &ControllerConfig,
    cost: &CostSpec,
    plant: &PlantSpec,
    t: f64,
    x: &Vector,
    u: &Vector,
    anchor: Option<&ErrorAnchor>,
) -> Result<Vector> {
    match &config.mode {
        FeedbackMode::Exact => nominal_gradient(cost, plant, x, u),
        FeedbackMode::InjectedError { gamma, delta, direction } => {
            let mut scale = *delta;
            if *gamma > 0.0 {
                let a = anchor.ok_or_else(|| Error::InvalidParameter("gamma > 0 needs an optimizer anchor".into()))?;
                let dx = plant.tracked_part(x) - plant.tracked_part(&a.x_star);
                let du = u - &a.u_star;
                scale += gamma * (dx.norm_squared() + du.norm_squared()).sqrt();
            }
            check_len(direction, plant.n_u, "error direction")?;
            Ok(nominal_gradient(cost, plant, x, u)? + direction * scale)
        }
        FeedbackMode::StatePerception(p) => {
            let estimate = p.estimate(t, x)?;
            let mut x_hat = x.clone();
            check_len(&estimate, plant.tracked, "perceived state")?;
            x_hat.rows_mut(0, plant.tracked).copy_from(&estimate);
            nominal_gradient(cost, plant, &x_hat, u)
        }
        FeedbackMode::CostPerception { phi, psi } => {
            let g_u = match phi {
                Some(s) => s.gradient(u)?,
                None => cost.phi.gradient(u),
            };
            let g_tracked = psi.gradient(&plant.tracked_part(x))?;
            let mut g_x = Vector::zeros(plant.n);
            g_x.rows_mut(0, plant.tracked).copy_from(&g_tracked);
            Ok(g_u + plant.input_jacobian(u).transpose() * g_x)
        }
    }
}

/// `Π_C{u − η ĝ} − u`.
pub fn controller_field(
    config: &ControllerConfig,
    cost: &CostSpec,
    plant: &PlantSpec,
    t: f64,
    x: &Vector,
    u: &Vector,
    anchor: Option<&ErrorAnchor>,
) -> Result<Vector> {
    let g = gradient_estimate(config, cost, plant, t, x, u, anchor)?;
    Ok(config.region.project(&(u - g * config.eta))? - u)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub config_hash: String,
    /// Plant and cost descriptor, used to match certificates to runs.
    pub instance: String,
    pub mode: String,
}

/// Recorded closed-loop samples.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub u_star: Vec<Vector>,
    pub x_star: Vec<Vector>,
    /// `‖z(t)‖` with `z = (x − x*, u − u*)` on the tracked block.
    pub error: Vec<f64>,
    pub bound: Option<Vec<f64>>,
    pub meta: TrajectoryMeta,
    /// Set when the integration stopped early; samples up to the failure are kept.
    pub failure: Option<Error>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_input(&self) -> Option<&Vector> {
        self.inputs.last()
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOptions {
    /// Project `u(t0)` onto `C` before integrating.
    pub project_initial_input: bool,
    pub oracle: OptimalTrajectoryMap,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            project_initial_input: true,
            oracle: OptimalTrajectoryMap::new(),
        }
    }
}

/// Integrates the joint flow of `(x, u)` and records the tracking error against
/// the optimizer, evaluated at each recorded sample.
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop(
    plant: &PlantSpec,
    cost: &CostSpec,
    config: &ControllerConfig,
    disturbance: &DisturbanceSignal,
    x0: &Vector,
    u0: &Vector,
    stepper: &StepperConfig,
    seed: u64,
    options: SimulationOptions,
) -> Result<Trajectory> {
    check_len(x0, plant.n, "initial state")?;
    check_len(u0, plant.n_u, "initial input")?;
    if disturbance.dim() != plant.n_w {
        return Err(Error::dim(plant.n_w, disturbance.dim(), "disturbance"));
    }
    let u_init = if options.project_initial_input {
        config.region.project(u0)?
    } else {
        u0.clone()
    };
    let mut oracle = options.oracle;
    let needs_anchor = matches!(config.mode, FeedbackMode::InjectedError { gamma, .. } if gamma > 0.0);
    let anchor = if needs_anchor {
        let (u_star, x_star) = oracle.solve(cost, plant, &disturbance.value(stepper.t0))?;
        Some(ErrorAnchor { u_star, x_star })
    } else {
        None
    };

    let (n, m) = (plant.n, plant.n_u);
    let mut joint = Vector::zeros(n + m);
    joint.rows_mut(0, n).copy_from(x0);
    joint.rows_mut(n, m).copy_from(&u_init);

    let field = |t: f64, s: &Vector| -> Result<Vector> {
        let x = s.rows(0, n).into_owned();
        let u = s.rows(n, m).into_owned();
        let w = disturbance.value(t);
        let mut d = Vector::zeros(n + m);
        d.rows_mut(0, n).copy_from(&plant.field(&x, &u, &w));
        d.rows_mut(n, m)
            .copy_from(&controller_field(config, cost, plant, t, &x, &u, anchor.as_ref())?);
        Ok(d)
    };

    let mut oracle_failure = None;
    let mut u_star = Vec::new();
    let mut x_star = Vec::new();
    let mut error = Vec::new();
    let mut cached: Option<(Vector, Vector)> = None;
    let path = integrate(field, &joint, stepper, |t, s| {
        if oracle_failure.is_some() {
            return;
        }
        let solved = match (&cached, disturbance.is_constant()) {
            (Some(sol), true) => Ok(sol.clone()),
            _ => oracle.solve(cost, plant, &disturbance.value(t)),
        };
        match solved {
            Ok((us, xs)) => {
                let x = s.rows(0, n).into_owned();
                let u = s.rows(n, m).into_owned();
                let dx = plant.tracked_part(&x) - plant.tracked_part(&xs);
                error.push((dx.norm_squared() + (u - &us).norm_squared()).sqrt());
                u_star.push(us.clone());
                x_star.push(xs.clone());
                cached = Some((us, xs));
            }
            Err(e) => oracle_failure = Some(e),
        }
    });
    if let Some(e) = oracle_failure {
        return Err(e);
    }
    let states = path.states.iter().map(|s| s.rows(0, n).into_owned()).collect();
    let inputs = path.states.iter().map(|s| s.rows(n, m).into_owned()).collect();
    Ok(Trajectory {
        times: path.times,
        states,
        inputs,
        u_star,
        x_star,
        error,
        bound: None,
        meta: TrajectoryMeta {
            seed,
            config_hash: String::new(),
            instance: instance_descriptor(plant, cost),
            mode: config.mode.name().to_string(),
        },
        failure: path.failure,
    })
}

/// Identifier of a plant/cost pair shared by trajectories and certificates.
pub fn instance_descriptor(plant: &PlantSpec, cost: &CostSpec) -> String {
    format!("{}|{}", plant.descriptor(), cost.descriptor())
}

/// Minimum number of samples in the tail window of [`steady_state_error`].
pub const MIN_TAIL_SAMPLES: usize = 10;

/// Largest `‖z(t)‖` over the final `tail_fraction` of the horizon.
pub fn steady_state_error(trajectory: &Trajectory, tail_fraction: f64) -> Result<f64> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("tail fraction must lie in (0, 1], got {tail_fraction}")));
    }
    let (Some(first), Some(last)) = (trajectory.times.first(), trajectory.times.last()) else {
        return Err(Error::TooShort("empty trajectory".into()));
    };
    let start = last - tail_fraction * (last - first);
    let tail: Vec<f64> = trajectory
        .times
        .iter()
        .zip(&trajectory.error)
        .filter(|(t, _)| **t >= start - 1e-12)
        .map(|(_, e)| *e)
        .collect();
    if tail.len() < MIN_TAIL_SAMPLES {
        return Err(Error::TooShort(format!(
            "tail window holds {} samples, need {MIN_TAIL_SAMPLES}",
            tail.len()
        )));
    }
    Ok(tail.into_iter().fold(0.0, f64::max))
}

/// Least-squares rate `a` of `v(t) ≈ c e^{−a t}` over samples with `v > floor`.
pub fn fit_decay_rate(times: &[f64], values: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > floor && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mt) * (p.1 - my), a.1 + (p.0 - mt).powi(2)));
    (sxx > 0.0).then(|| -sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{CostFn, projected_gradient_descent};
    use crate::plants::{lti_plant, sis_plant};
    use crate::Matrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn scalar_setup() -> (PlantSpec, CostSpec) {
        // ẋ = −x, h = 0: F(x, u) = 2(u − r) with φ = (u − r)².
        let plant = lti_plant(-Matrix::identity(1, 1), Matrix::zeros(1, 1), Matrix::zeros(1, 0)).unwrap();
        let cost = CostSpec::new(
            CostFn::quadratic(vec![1.0], vec![4.5]).unwrap(),
            CostFn::quadratic(vec![0.0], vec![0.0]).unwrap(),
            ConvexRegion::boxed(vec![0.0], vec![10.0]).unwrap(),
            None,
        )
        .unwrap();
        (plant, cost)
    }

    #[test]
    fn field_examples() {
        let (plant, cost) = scalar_setup();
        let cfg = ControllerConfig::new(1.0, FeedbackMode::Exact, cost.region.clone()).unwrap();
        // F(5) = 1 with η = 1.
        let du = controller_field(&cfg, &cost, &plant, 0.0, &v(&[0.0]), &v(&[5.0]), None).unwrap();
        assert!((du[0] + 1.0).abs() < 1e-15);
        let du = controller_field(&cfg, &cost, &plant, 0.0, &v(&[0.0]), &v(&[4.5]), None).unwrap();
        assert_eq!(du[0], 0.0);
    }

    #[test]
    fn injected_error_shift_is_bounded() {
        let (plant, cost) = scalar_setup();
        let eta = 0.7;
        let exact = ControllerConfig::new(eta, FeedbackMode::Exact, cost.region.clone()).unwrap();
        let injected = ControllerConfig::new(
            eta,
            FeedbackMode::InjectedError {
                gamma: 0.0,
                delta: 0.1,
                direction: v(&[1.0]),
            },
            cost.region.clone(),
        )
        .unwrap();
        for k in 0..50 {
            let u = v(&[0.2 * k as f64]);
            let a = controller_field(&exact, &cost, &plant, 0.0, &v(&[0.0]), &u, None).unwrap();
            let b = controller_field(&injected, &cost, &plant, 0.0, &v(&[0.0]), &u, None).unwrap();
            assert!((a - b).norm() <= eta * 0.1 + 1e-15);
        }
        assert!(ControllerConfig::new(
            1.0,
            FeedbackMode::InjectedError {
                gamma: 0.0,
                delta: 0.1,
                direction: v(&[2.0])
            },
            cost.region.clone()
        )
        .is_err());
        assert!(ControllerConfig::new(0.0, FeedbackMode::Exact, cost.region.clone()).is_err());
    }

    fn sis_setup() -> (PlantSpec, CostSpec) {
        let plant = sis_plant(4.0, 1.0 / 9.0, 1e-4).unwrap();
        let cost = CostSpec::new(
            CostFn::quadratic(vec![1.0], vec![1.0 / 0.36]).unwrap(),
            CostFn::quadratic(vec![1.0], vec![0.85]).unwrap(),
            plant.input_box.clone().unwrap(),
            None,
        )
        .unwrap();
        (plant, cost)
    }

    #[test]
    fn sis_exact_reaches_closed_form() {
        let (plant, cost) = sis_setup();
        let cfg = ControllerConfig::new(0.5, FeedbackMode::Exact, cost.region.clone()).unwrap();
        let stepper = StepperConfig::new(1e-2, 0.0, 60.0, 10).unwrap();
        let traj = simulate_closed_loop(
            &plant,
            &cost,
            &cfg,
            &DisturbanceSignal::none(),
            &v(&[0.5]),
            &v(&[1.5]),
            &stepper,
            1,
            SimulationOptions::default(),
        )
        .unwrap();
        let c = (1e-4 + 1.0 / 9.0) / 4.0;
        let closed = (1.0 / 0.36 + c * 0.15) / (1.0 + c * c);
        assert!(steady_state_error(&traj, 0.1).unwrap() <= 1e-3);
        assert!((traj.final_input().unwrap()[0] - closed).abs() <= 1e-3);
    }

    #[test]
    fn outside_start_is_attracted() {
        let (plant, cost) = sis_setup();
        let cfg = ControllerConfig::new(0.5, FeedbackMode::Exact, cost.region.clone()).unwrap();
        let stepper = StepperConfig::new(1e-2, 0.0, 5.0, 10).unwrap();
        let opts = SimulationOptions {
            project_initial_input: false,
            ..Default::default()
        };
        let traj = simulate_closed_loop(
            &plant,
            &cost,
            &cfg,
            &DisturbanceSignal::none(),
            &v(&[0.5]),
            &v(&[0.2]),
            &stepper,
            1,
            opts,
        )
        .unwrap();
        let dist: Vec<f64> = traj.inputs.iter().map(|u| cost.region.distance(u).unwrap()).collect();
        assert!(dist[0] > 0.5);
        let rate = fit_decay_rate(&traj.times, &dist, 1e-12).unwrap();
        assert!(rate > 0.0);
    }

    #[test]
    fn steady_state_examples() {
        let mk = |err: Vec<f64>| Trajectory {
            times: (0..err.len()).map(|i| i as f64).collect(),
            states: vec![],
            inputs: vec![],
            u_star: vec![],
            x_star: vec![],
            error: err,
            bound: None,
            meta: TrajectoryMeta::default(),
            failure: None,
        };
        assert_eq!(steady_state_error(&mk(vec![0.01; 100]), 0.2).unwrap(), 0.01);
        let decaying: Vec<f64> = (0..400).map(|i| (-(i as f64) * 0.2).exp()).collect();
        assert!(steady_state_error(&mk(decaying), 0.1).unwrap() <= 1e-9);
        assert!(matches!(steady_state_error(&mk(vec![1.0; 5]), 0.5), Err(Error::TooShort(_))));
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let vals: Vec<f64> = t.iter().map(|s| 3.0 * (-1.7 * s).exp()).collect();
        assert!((fit_decay_rate(&t, &vals, 0.0).unwrap() - 1.7).abs() < 1e-10);
    }

    #[test]
    fn oracle_matches_controller_fixed_point() {
        let (plant, cost) = sis_setup();
        let d = projected_gradient_descent(&cost, &plant, &Vector::zeros(0), &v(&[2.0]), 1e-12, 10_000, false).unwrap();
        let cfg = ControllerConfig::new(0.3, FeedbackMode::Exact, cost.region.clone()).unwrap();
        let x = plant.h_u(&d.u);
        let du = controller_field(&cfg, &cost, &plant, 0.0, &x, &d.u, None).unwrap();
        assert!(du.norm() < 1e-9);
    }
}
