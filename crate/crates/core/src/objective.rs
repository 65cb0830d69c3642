//! Target problem: input and state costs, the composite gradient and an
//! oracle for the time-varying optimizer `(u*_t, x*_t)`.

use serde::{Deserialize, Serialize};

use crate::linalg::check_len;
use crate::numerics::ConvexRegion;
use crate::plants::{DisturbanceSignal, PlantSpec};
use crate::{Error, Result, Vector};

/// Residual tolerance of the oracle's projected-gradient fixed point.
pub const ORACLE_TOL: f64 = 1e-10;
pub const ORACLE_MAX_ITERATIONS: usize = 200_000;

/// A smooth scalar cost with an analytic gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostFn {
    /// `Σ_i w_i (v_i − r_i)²`.
    Quadratic { weights: Vec<f64>, reference: Vec<f64> },
    /// `Σ_i s_i(v_i)` with natural cubic splines through tabulated values.
    Table { tables: Vec<SplineTable> },
}

impl CostFn {
    pub fn quadratic(weights: Vec<f64>, reference: Vec<f64>) -> Result<Self> {
        if weights.len() != reference.len() {
            return Err(Error::dim(reference.len(), weights.len(), "quadratic cost weights"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("quadratic weights must be >= 0".into()));
        }
        Ok(CostFn::Quadratic { weights, reference })
    }

    pub fn dim(&self) -> usize {
        match self {
            CostFn::Quadratic { weights, .. } => weights.len(),
            CostFn::Table { tables } => tables.len(),
        }
    }

    pub fn value(&self, v: &Vector) -> f64 {
        match self {
            CostFn::Quadratic { weights, reference } => weights
                .iter()
                .zip(reference)
                .zip(v.iter())
                .map(|((w, r), x)| w * (x - r).powi(2))
                .sum(),
            CostFn::Table { tables } => tables.iter().zip(v.iter()).map(|(s, x)| s.eval(*x).0).sum(),
        }
    }

    pub fn gradient(&self, v: &Vector) -> Vector {
        match self {
            CostFn::Quadratic { weights, reference } => Vector::from_iterator(
                v.len(),
                weights.iter().zip(reference).zip(v.iter()).map(|((w, r), x)| 2.0 * w * (x - r)),
            ),
            CostFn::Table { tables } => {
                Vector::from_iterator(v.len(), tables.iter().zip(v.iter()).map(|(s, x)| s.eval(*x).1))
            }
        }
    }

    /// Lipschitz constant of the gradient.
    pub fn smoothness(&self) -> f64 {
        match self {
            CostFn::Quadratic { weights, .. } => 2.0 * weights.iter().fold(0.0_f64, |a, w| a.max(*w)),
            CostFn::Table { tables } => tables.iter().map(SplineTable::max_curvature).fold(0.0, f64::max),
        }
    }

    /// Strong-convexity constant, when one can be read off exactly.
    pub fn strong_convexity(&self) -> Option<f64> {
        match self {
            CostFn::Quadratic { weights, .. } => Some(2.0 * weights.iter().fold(f64::INFINITY, |a, w| a.min(*w))),
            CostFn::Table { .. } => None,
        }
    }

    /// Bound on third partial derivatives.
    pub fn third_derivative_bound(&self) -> Option<f64> {
        match self {
            CostFn::Quadratic { .. } => Some(0.0),
            CostFn::Table { tables } => Some(tables.iter().map(SplineTable::max_jerk).fold(0.0, f64::max)),
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            CostFn::Quadratic { weights, reference } => format!("quadratic(w={weights:?},r={reference:?})"),
            CostFn::Table { tables } => {
                let parts: Vec<String> = tables.iter().map(|t| format!("{:?}/{:?}", t.knots, t.values)).collect();
                format!("table({})", parts.join(";"))
            }
        }
    }
}

/// Natural cubic spline through `(knots[i], values[i])`, extended linearly outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineData", into = "SplineData")]
pub struct SplineTable {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    moments: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SplineData {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<SplineData> for SplineTable {
    type Error = Error;

    fn try_from(d: SplineData) -> Result<Self> {
        SplineTable::new(d.knots, d.values)
    }
}

impl From<SplineTable> for SplineData {
    fn from(s: SplineTable) -> Self {
        SplineData {
            knots: s.knots,
            values: s.values,
        }
    }
}

impl SplineTable {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::dim(knots.len(), values.len(), "spline values"));
        }
        if knots.len() < 3 {
            return Err(Error::InvalidParameter("spline table needs at least 3 knots".into()));
        }
        if knots.windows(2).any(|p| !(p[1] > p[0])) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("spline knots must increase and values be finite".into()));
        }
        let n = knots.len();
        // Tridiagonal solve (Thomas) for the interior moments.
        let h: Vec<f64> = knots.windows(2).map(|p| p[1] - p[0]).collect();
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            rhs[i] = 6.0 * ((values[i + 1] - values[i]) / h[i] - (values[i] - values[i - 1]) / h[i - 1]);
        }
        for i in 2..n - 1 {
            let m = h[i - 1] / diag[i - 1];
            diag[i] -= m * h[i - 1];
            rhs[i] -= m * rhs[i - 1];
        }
        let mut moments = vec![0.0; n];
        for i in (1..n - 1).rev() {
            let upper = if i + 1 < n - 1 { h[i] * moments[i + 1] } else { 0.0 };
            moments[i] = (rhs[i] - upper) / diag[i];
        }
        Ok(Self { knots, values, moments })
    }

    /// Value and derivative at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let n = self.knots.len();
        let (k, v, m) = (&self.knots, &self.values, &self.moments);
        if x <= k[0] || x >= k[n - 1] {
            let (i, j) = if x <= k[0] { (0, 1) } else { (n - 2, n - 1) };
            let h = k[j] - k[i];
            let slope = if x <= k[0] {
                (v[j] - v[i]) / h - h * (2.0 * m[i] + m[j]) / 6.0
            } else {
                (v[j] - v[i]) / h + h * (m[i] + 2.0 * m[j]) / 6.0
            };
            let anchor = if x <= k[0] { 0 } else { n - 1 };
            return (v[anchor] + slope * (x - k[anchor]), slope);
        }
        let i = k.partition_point(|kk| *kk <= x).saturating_sub(1).min(n - 2);
        let h = k[i + 1] - k[i];
        let (a, b) = ((k[i + 1] - x) / h, (x - k[i]) / h);
        let value = a * v[i] + b * v[i + 1] + ((a.powi(3) - a) * m[i] + (b.powi(3) - b) * m[i + 1]) * h * h / 6.0;
        let deriv = (v[i + 1] - v[i]) / h + ((1.0 - 3.0 * a * a) * m[i] + (3.0 * b * b - 1.0) * m[i + 1]) * h / 6.0;
        (value, deriv)
    }

    fn max_curvature(&self) -> f64 {
        self.moments.iter().fold(0.0, |a, m| a.max(m.abs()))
    }

    fn max_jerk(&self) -> f64 {
        self.moments
            .windows(2)
            .zip(self.knots.windows(2))
            .map(|(m, k)| ((m[1] - m[0]) / (k[1] - k[0])).abs())
            .fold(0.0, f64::max)
    }
}

/// Input cost `φ`, state cost `ψ` on the tracked state block, constants and constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub phi: CostFn,
    pub psi: CostFn,
    pub ell_u: f64,
    pub ell_x: f64,
    /// Strong-convexity constant of the composite cost.
    pub mu_u: f64,
    pub region: ConvexRegion,
}

impl CostSpec {
    /// Builds a spec reading `ℓ_u`, `ℓ_x` from the costs; `μ_u` defaults to the
    /// strong convexity of `φ`, since composing `ψ` with an affine map only adds
    /// convex curvature.
    pub fn new(phi: CostFn, psi: CostFn, region: ConvexRegion, mu_u: Option<f64>) -> Result<Self> {
        if phi.dim() != region.dim() {
            return Err(Error::dim(region.dim(), phi.dim(), "input cost vs constraint set"));
        }
        region.validate()?;
        let mu_u = match mu_u.or_else(|| phi.strong_convexity()) {
            Some(m) if m > 0.0 => m,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "composite strong-convexity constant must be > 0 (got {other:?}); supply mu_u"
                )))
            }
        };
        Ok(Self {
            ell_u: phi.smoothness(),
            ell_x: psi.smoothness(),
            mu_u,
            phi,
            psi,
            region,
        })
    }

    /// `ℓ = ℓ_u + ℓ_hu² ℓ_x`, the smoothness of the composite cost.
    pub fn composite_smoothness(&self, plant: &PlantSpec) -> f64 {
        self.ell_u + plant.lipschitz.ell_hu.powi(2) * self.ell_x
    }

    pub fn descriptor(&self) -> String {
        format!("phi={};psi={};region={:?}", self.phi.descriptor(), self.psi.descriptor(), self.region)
    }

    fn check(&self, plant: &PlantSpec) -> Result<()> {
        if self.phi.dim() != plant.n_u {
            return Err(Error::dim(plant.n_u, self.phi.dim(), "input cost vs plant inputs"));
        }
        if self.psi.dim() != plant.tracked {
            return Err(Error::dim(plant.tracked, self.psi.dim(), "state cost vs tracked states"));
        }
        Ok(())
    }
}

/// `φ(u) + ψ(h_u(u) + h_w(w))`.
pub fn composite_cost(cost: &CostSpec, plant: &PlantSpec, u: &Vector, w: &Vector) -> Result<f64> {
    cost.check(plant)?;
    check_len(u, plant.n_u, "input")?;
    let x = plant.steady_state(u, w);
    Ok(cost.phi.value(u) + cost.psi.value(&plant.tracked_part(&x)))
}

/// Gradient of the state cost padded to the full state dimension.
pub fn state_cost_gradient(cost: &CostSpec, plant: &PlantSpec, x: &Vector) -> Vector {
    let g = cost.psi.gradient(&plant.tracked_part(x));
    let mut full = Vector::zeros(plant.n);
    full.rows_mut(0, plant.tracked).copy_from(&g);
    full
}

/// `F(x, u) = ∇φ(u) + H(u)ᵀ ∇ψ(x)`.
pub fn nominal_gradient(cost: &CostSpec, plant: &PlantSpec, x: &Vector, u: &Vector) -> Result<Vector> {
    cost.check(plant)?;
    check_len(x, plant.n, "state")?;
    check_len(u, plant.n_u, "input")?;
    Ok(cost.phi.gradient(u) + plant.input_jacobian(u).transpose() * state_cost_gradient(cost, plant, x))
}

/// Gradient of the composite cost, `F(h(u, w), u)`.
pub fn composite_gradient(cost: &CostSpec, plant: &PlantSpec, u: &Vector, w: &Vector) -> Result<Vector> {
    nominal_gradient(cost, plant, &plant.steady_state(u, w), u)
}

/// Outcome of a projected-gradient solve.
#[derive(Debug, Clone)]
pub struct Descent {
    pub u: Vector,
    pub residual: f64,
    pub iterations: usize,
    /// Composite cost at every iterate, when traced.
    pub costs: Vec<f64>,
}

/// Projected gradient descent with step `1/ℓ` until `‖u − Π_C(u − ∇g/ℓ)‖ ≤ tol`.
pub fn projected_gradient_descent(
    cost: &CostSpec,
    plant: &PlantSpec,
    w: &Vector,
    u0: &Vector,
    tol: f64,
    max_iterations: usize,
    trace: bool,
) -> Result<Descent> {
    let step = 1.0 / cost.composite_smoothness(plant);
    let mut u = cost.region.project(u0)?;
    let mut costs = Vec::new();
    let mut residual = f64::INFINITY;
    for it in 0..=max_iterations {
        if trace {
            costs.push(composite_cost(cost, plant, &u, w)?);
        }
        let g = composite_gradient(cost, plant, &u, w)?;
        let next = cost.region.project(&(&u - g * step))?;
        residual = (&next - &u).norm();
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok(Descent {
                u,
                residual,
                iterations: it,
                costs,
            });
        }
        u = next;
    }
    Err(Error::NotConverged {
        what: "optimizer oracle",
        iterations: max_iterations,
        residual,
    })
}

/// Oracle for `w ↦ (u*(w), x*(w))`, warm-started from the previous solution.
#[derive(Debug, Clone)]
pub struct OptimalTrajectoryMap {
    pub tol: f64,
    pub max_iterations: usize,
    warm: Option<Vector>,
    /// Empirical Lipschitz constant of `w ↦ u*(w)`.
    pub ell_j: Option<f64>,
}

impl Default for OptimalTrajectoryMap {
    fn default() -> Self {
        Self {
            tol: ORACLE_TOL,
            max_iterations: ORACLE_MAX_ITERATIONS,
            warm: None,
            ell_j: None,
        }
    }
}

impl OptimalTrajectoryMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, cost: &CostSpec, plant: &PlantSpec, w: &Vector) -> Result<(Vector, Vector)> {
        let start = match &self.warm {
            Some(u) if u.len() == plant.n_u => u.clone(),
            _ => initial_guess(&cost.region),
        };
        let d = projected_gradient_descent(cost, plant, w, &start, self.tol, self.max_iterations, false)?;
        let x = plant.steady_state(&d.u, w);
        self.warm = Some(d.u.clone());
        Ok((d.u, x))
    }

    /// Estimates `ℓ_J` as the largest `‖u*(w) − u*(w′)‖ / ‖w − w′‖` over
    /// `samples` disturbance values on `[t0, t1]`, and stores it.
    pub fn estimate_ell_j(
        &mut self,
        cost: &CostSpec,
        plant: &PlantSpec,
        signal: &DisturbanceSignal,
        t0: f64,
        t1: f64,
        samples: usize,
    ) -> Result<f64> {
        if signal.dim() == 0 || signal.is_constant() || samples < 2 {
            self.ell_j = Some(0.0);
            return Ok(0.0);
        }
        let mut points = Vec::with_capacity(samples);
        for i in 0..samples {
            let t = t0 + (t1 - t0) * i as f64 / (samples - 1) as f64;
            let w = signal.value(t);
            let (u, _) = self.solve(cost, plant, &w)?;
            points.push((w, u));
        }
        let mut best: f64 = 0.0;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let dw = (&points[i].0 - &points[j].0).norm();
                if dw > 1e-9 {
                    best = best.max((&points[i].1 - &points[j].1).norm() / dw);
                }
            }
        }
        self.ell_j = Some(best);
        Ok(best)
    }
}

fn initial_guess(region: &ConvexRegion) -> Vector {
    let dim = region.dim();
    let raw = match region {
        ConvexRegion::Box { lower, upper } => Vector::from_iterator(
            dim,
            lower.iter().zip(upper).map(|(l, u)| match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => *l,
                (false, true) => *u,
                (false, false) => 0.0,
            }),
        ),
        ConvexRegion::Ball { center, .. } => Vector::from_column_slice(center),
        ConvexRegion::Polyhedron { .. } => Vector::zeros(dim),
    };
    region.project(&raw).unwrap_or(raw)
}
