//! Deterministic fixed-step integration and Euclidean projections.

use serde::{Deserialize, Serialize};

use crate::linalg::check_len;
use crate::{Error, Result, Vector};

/// Sweep budget for Dykstra's alternating projection.
pub const DYKSTRA_MAX_SWEEPS: usize = 10_000;
/// Stopping tolerance on the per-sweep change of the Dykstra iterate.
pub const DYKSTRA_TOL: f64 = 1e-12;

/// Horizon and step of a fixed-step integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub t0: f64,
    pub t1: f64,
    /// Record every `record_every`-th step (the final step is always recorded).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_record_every() -> usize {
    1
}

impl StepperConfig {
    pub fn new(dt: f64, t0: f64, t1: f64, record_every: usize) -> Result<Self> {
        let cfg = Self {
            dt,
            t0,
            t1,
            record_every,
        };
        cfg.steps()?;
        Ok(cfg)
    }

    /// Number of integration steps over the horizon.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t1 >= self.t0) || !self.t0.is_finite() || !self.t1.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon [{}, {}] is not ordered",
                self.t0, self.t1
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be >= 1".into()));
        }
        let raw = (self.t1 - self.t0) / self.dt;
        let n = raw.round();
        if (raw - n).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon length {} is not an integer multiple of dt = {}",
                self.t1 - self.t0,
                self.dt
            )));
        }
        Ok(n as usize)
    }

    /// Time of step `i`, computed without accumulating rounding.
    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }
}

/// A single halfspace `normal · x <= offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// Closed convex constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexRegion {
    /// Axis-aligned box; infinite bounds are allowed.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// Finite intersection of halfspaces.
    Polyhedron { dim: usize, halfspaces: Vec<Halfspace> },
}

impl ConvexRegion {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let region = ConvexRegion::Box { lower, upper };
        region.validate()?;
        Ok(region)
    }

    /// The whole space of dimension `dim`.
    pub fn unbounded(dim: usize) -> Self {
        ConvexRegion::Box {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let region = ConvexRegion::Ball { center, radius };
        region.validate()?;
        Ok(region)
    }

    pub fn polyhedron(dim: usize, halfspaces: Vec<Halfspace>) -> Result<Self> {
        let region = ConvexRegion::Polyhedron { dim, halfspaces };
        region.validate()?;
        Ok(region)
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexRegion::Box { lower, .. } => lower.len(),
            ConvexRegion::Ball { center, .. } => center.len(),
            ConvexRegion::Polyhedron { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConvexRegion::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::dim(lower.len(), upper.len(), "box bounds"));
                }
                for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
                    if lo.is_nan() || hi.is_nan() || lo > hi {
                        return Err(Error::EmptyRegion(format!(
                            "box coordinate {i} has lower {lo} > upper {hi}"
                        )));
                    }
                }
            }
            ConvexRegion::Ball { center, radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "ball radius must be > 0, got {radius}"
                    )));
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidParameter("ball center must be finite".into()));
                }
            }
            ConvexRegion::Polyhedron { dim, halfspaces } => {
                for h in halfspaces {
                    if h.normal.len() != *dim {
                        return Err(Error::dim(*dim, h.normal.len(), "halfspace normal"));
                    }
                    if h.normal.iter().all(|v| *v == 0.0) && h.offset < 0.0 {
                        return Err(Error::EmptyRegion("halfspace 0·x <= negative".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Euclidean projection of `point` onto the region.
    pub fn project(&self, point: &Vector) -> Result<Vector> {
        self.validate()?;
        check_len(point, self.dim(), "projection point")?;
        match self {
            ConvexRegion::Box { lower, upper } => Ok(Vector::from_iterator(
                point.len(),
                point
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(p, (lo, hi))| p.clamp(*lo, *hi)),
            )),
            ConvexRegion::Ball { center, radius } => {
                let c = Vector::from_column_slice(center);
                let offset = point - &c;
                let dist = offset.norm();
                if dist <= *radius {
                    Ok(point.clone())
                } else {
                    Ok(c + offset * (*radius / dist))
                }
            }
            ConvexRegion::Polyhedron { halfspaces, .. } => dykstra(halfspaces, point),
        }
    }

    pub fn contains(&self, point: &Vector, tol: f64) -> bool {
        if point.len() != self.dim() {
            return false;
        }
        match self {
            ConvexRegion::Box { lower, upper } => point
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(p, (lo, hi))| *p >= lo - tol && *p <= hi + tol),
            ConvexRegion::Ball { center, radius } => {
                (point - Vector::from_column_slice(center)).norm() <= radius + tol
            }
            ConvexRegion::Polyhedron { halfspaces, .. } => halfspaces.iter().all(|h| {
                let n = Vector::from_column_slice(&h.normal);
                n.dot(point) <= h.offset + tol * n.norm().max(1.0)
            }),
        }
    }

    /// Euclidean distance from `point` to the region.
    pub fn distance(&self, point: &Vector) -> Result<f64> {
        Ok((point - self.project(point)?).norm())
    }

    /// Axis-aligned bounding box, if one can be read off without solving an LP.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            ConvexRegion::Box { lower, upper } => Some((lower.clone(), upper.clone())),
            ConvexRegion::Ball { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            ConvexRegion::Polyhedron { .. } => None,
        }
    }

    /// Diameter of the bounding box (infinite when unbounded or unknown).
    pub fn bounding_diameter(&self) -> f64 {
        match self {
            ConvexRegion::Ball { radius, .. } => 2.0 * radius,
            _ => match self.bounding_box() {
                Some((lo, hi)) => lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h)| (h - l).powi(2))
                    .sum::<f64>()
                    .sqrt(),
                None => f64::INFINITY,
            },
        }
    }

    /// Minkowski sum with a closed ball of `radius`, for box and ball regions.
    pub fn inflate(&self, radius: f64) -> Result<Self> {
        match self {
            ConvexRegion::Box { lower, upper } => ConvexRegion::boxed(
                lower.iter().map(|l| l - radius).collect(),
                upper.iter().map(|u| u + radius).collect(),
            ),
            ConvexRegion::Ball { center, radius: r } => ConvexRegion::ball(center.clone(), r + radius),
            // A box superset is what callers need to decide training regions.
            ConvexRegion::Polyhedron { .. } => Err(Error::InvalidParameter(
                "inflation is only defined for box and ball regions".into(),
            )),
        }
    }
}

fn project_halfspace(h: &Halfspace, point: &Vector) -> Vector {
    let n = Vector::from_column_slice(&h.normal);
    let nn = n.norm_squared();
    if nn == 0.0 {
        return point.clone();
    }
    let excess = n.dot(point) - h.offset;
    if excess <= 0.0 {
        point.clone()
    } else {
        point - n * (excess / nn)
    }
}

/// Cyclic Dykstra projection onto an intersection of halfspaces.
fn dykstra(halfspaces: &[Halfspace], point: &Vector) -> Result<Vector> {
    if halfspaces.is_empty() {
        return Ok(point.clone());
    }
    let mut x = point.clone();
    let mut corrections = vec![Vector::zeros(point.len()); halfspaces.len()];
    for _sweep in 0..DYKSTRA_MAX_SWEEPS {
        let start = x.clone();
        for (h, corr) in halfspaces.iter().zip(corrections.iter_mut()) {
            let shifted = &x + &*corr;
            let projected = project_halfspace(h, &shifted);
            *corr = shifted - &projected;
            x = projected;
        }
        if (&x - &start).norm() <= DYKSTRA_TOL {
            return Ok(x);
        }
    }
    let residual = halfspaces
        .iter()
        .map(|h| (Vector::from_column_slice(&h.normal).dot(&x) - h.offset).max(0.0))
        .fold(0.0, f64::max);
    Err(Error::NotConverged {
        what: "Dykstra projection",
        iterations: DYKSTRA_MAX_SWEEPS,
        residual,
    })
}

fn check_finite(v: &Vector, t: f64, stage: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            t,
            context: format!("{stage} derivative component {i} = {}", v[i]),
        });
    }
    Ok(())
}

/// One classical 4-stage Runge–Kutta step.
pub fn rk4_step<F>(field: &mut F, t: f64, state: &Vector, dt: f64) -> Result<Vector>
where
    F: FnMut(f64, &Vector) -> Result<Vector>,
{
    let half = 0.5 * dt;
    let k1 = field(t, state)?;
    check_finite(&k1, t, "stage 1")?;
    let k2 = field(t + half, &(state + &k1 * half))?;
    check_finite(&k2, t + half, "stage 2")?;
    let k3 = field(t + half, &(state + &k2 * half))?;
    check_finite(&k3, t + half, "stage 3")?;
    let k4 = field(t + dt, &(state + &k3 * dt))?;
    check_finite(&k4, t + dt, "stage 4")?;
    Ok(state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Recorded samples of an integration, possibly cut short by a failure.
#[derive(Debug, Clone)]
pub struct SampledPath {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// Set when integration stopped early; the samples up to the failure are kept.
    pub failure: Option<Error>,
}

impl SampledPath {
    pub fn last(&self) -> Option<&Vector> {
        self.states.last()
    }

    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

/// Integrates `field` from `x0` over the stepper horizon.
///
/// `observer` is invoked at every recorded sample, including `t0`.
pub fn integrate<F, O>(mut field: F, x0: &Vector, stepper: &StepperConfig, mut observer: O) -> SampledPath
where
    F: FnMut(f64, &Vector) -> Result<Vector>,
    O: FnMut(f64, &Vector),
{
    let mut path = SampledPath {
        times: Vec::new(),
        states: Vec::new(),
        failure: None,
    };
    if let Err(e) = check_finite(x0, stepper.t0, "initial state") {
        path.failure = Some(e);
        return path;
    }
    let steps = match stepper.steps() {
        Ok(n) => n,
        Err(e) => {
            path.failure = Some(e);
            return path;
        }
    };
    let mut record = |t: f64, x: &Vector, path: &mut SampledPath| {
        observer(t, x);
        path.times.push(t);
        path.states.push(x.clone());
    };
    let mut x = x0.clone();
    record(stepper.t0, &x, &mut path);
    for i in 0..steps {
        let t = stepper.time_at(i);
        match rk4_step(&mut field, t, &x, stepper.dt) {
            Ok(next) => x = next,
            Err(e) => {
                path.failure = Some(e);
                return path;
            }
        }
        let k = i + 1;
        if k % stepper.record_every == 0 || k == steps {
            record(stepper.time_at(k), &x, &mut path);
        }
    }
    path
}
