//! Centered-difference gradients of neural cost surrogates.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::linalg::check_len;
use crate::numerics::ConvexRegion;
use crate::objective::CostFn;
use crate::perception::{PerceptionNet, TrainingSet};
use crate::{Error, Result, Vector};

/// What to do with a stencil point outside the surrogate's training domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DomainPolicy {
    /// Project the point back onto the domain and log a warning once.
    #[default]
    Project,
    Reject,
}

/// A trained scalar cost surrogate (first network output) with its stencil step.
#[derive(Debug, Clone)]
pub struct SurrogateGradient {
    pub net: PerceptionNet,
    pub epsilon: f64,
    /// Region the surrogate was trained on.
    pub domain: ConvexRegion,
    /// Readings are rounded to multiples of this value, when set.
    pub resolution: Option<f64>,
    pub policy: DomainPolicy,
    warned: Arc<AtomicBool>,
}

impl SurrogateGradient {
    pub fn new(net: PerceptionNet, epsilon: f64, domain: ConvexRegion, resolution: Option<f64>, policy: DomainPolicy) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
        }
        if net.input_dim() != domain.dim() {
            return Err(Error::dim(domain.dim(), net.input_dim(), "surrogate input vs domain"));
        }
        if let Some(r) = resolution {
            if !(r > 0.0) {
                return Err(Error::InvalidParameter(format!("resolution must be > 0, got {r}")));
            }
        }
        Ok(Self {
            net,
            epsilon,
            domain,
            resolution,
            policy,
            warned: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.net.clone(), epsilon, self.domain.clone(), self.resolution, self.policy)
    }

    /// Surrogate reading `φ̂(v)`, after the domain policy and quantization.
    pub fn evaluate(&self, v: &Vector) -> Result<f64> {
        check_len(v, self.dim(), "surrogate point")?;
        let point = if self.domain.contains(v, 1e-12) {
            v.clone()
        } else {
            match self.policy {
                DomainPolicy::Reject => {
                    return Err(Error::OutsideDomain(format!("{:?}", v.as_slice())));
                }
                DomainPolicy::Project => {
                    if !self.warned.swap(true, Ordering::Relaxed) {
                        log::warn!(
                            "surrogate probe {:?} outside its training domain; projecting back",
                            v.as_slice()
                        );
                    }
                    self.domain.project(v)?
                }
            }
        };
        let raw = self.net.forward(&point)?[0];
        Ok(match self.resolution {
            Some(r) => (raw / r).round() * r,
            None => raw,
        })
    }

    /// `ĝ(v) = Σ_i (φ̂(v + ε b_i) − φ̂(v − ε b_i)) / (2ε) b_i`.
    pub fn gradient(&self, v: &Vector) -> Result<Vector> {
        centered_difference(|p| self.evaluate(p), v, self.epsilon)
    }

    /// Largest `|φ̂ − φ|` over the samples, as read through [`Self::evaluate`].
    pub fn sup_error(&self, data: &TrainingSet) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (x, y) in data.inputs.iter().zip(&data.targets) {
            worst = worst.max((self.evaluate(x)? - y[0]).abs());
        }
        Ok(worst)
    }
}

/// Centered differences of `f` along the canonical basis; `2·dim` evaluations.
pub fn centered_difference<F>(f: F, point: &Vector, epsilon: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    let mut g = Vector::zeros(point.len());
    let mut probe = point.clone();
    for i in 0..point.len() {
        probe[i] = point[i] + epsilon;
        let plus = f(&probe)?;
        probe[i] = point[i] - epsilon;
        let minus = f(&probe)?;
        probe[i] = point[i];
        g[i] = (plus - minus) / (2.0 * epsilon);
    }
    Ok(g)
}

/// `√dim · M₃ ε² / 6`, the Euclidean truncation bound over `dim` coordinates.
pub fn fd_truncation_bound(m3: f64, epsilon: f64, dim: usize) -> f64 {
    (dim as f64).sqrt() * m3 * epsilon * epsilon / 6.0
}

/// Truncation plus surrogate amplification, `dim·ê/ε + √dim·M₃ε²/6`.
pub fn fd_error_budget(e_hat: f64, m3: f64, epsilon: f64, dim: usize) -> f64 {
    dim as f64 * e_hat / epsilon + fd_truncation_bound(m3, epsilon, dim)
}

/// Bounds and fallback for [`select_epsilon`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRange {
    pub min: f64,
    pub max: f64,
    /// Used when `M₃ = 0`, where truncation vanishes and the budget is monotone.
    pub default: f64,
}

impl Default for EpsilonRange {
    fn default() -> Self {
        Self {
            min: 1e-6,
            max: 0.5,
            default: 1e-2,
        }
    }
}

/// Minimizer `ε* = (3√dim·ê/M₃)^{1/3}` of [`fd_error_budget`], clipped to the range.
pub fn select_epsilon(e_hat: f64, m3: f64, dim: usize, range: &EpsilonRange) -> f64 {
    if !(m3 > 0.0) {
        return range.default.clamp(range.min, range.max);
    }
    if e_hat <= 0.0 {
        return range.min;
    }
    (3.0 * (dim as f64).sqrt() * e_hat / m3).cbrt().clamp(range.min, range.max)
}

/// Training pairs `(v, f(v))` for a cost surrogate.
pub fn cost_samples(cost: &CostFn, points: Vec<Vector>, region: String, seed: u64) -> Result<TrainingSet> {
    let targets = points.iter().map(|p| Vector::from_element(1, cost.value(p))).collect();
    TrainingSet::new(points, targets, region, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{Activation, Mlp};
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn scalar(f: fn(f64) -> f64) -> impl Fn(&Vector) -> Result<f64> {
        move |p: &Vector| Ok(f(p[0]))
    }

    #[test]
    fn centered_difference_examples() {
        let g = centered_difference(scalar(|u| u * u), &v(&[1.0]), 0.1).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-14);
        let g = centered_difference(scalar(|u| u * u * u), &v(&[1.0]), 0.1).unwrap();
        assert!((g[0] - 3.01).abs() < 1e-12);
        let g = centered_difference(|_: &Vector| Ok(4.2), &v(&[1.0, -2.0, 0.5]), 0.1).unwrap();
        assert_eq!(g, Vector::zeros(3));
    }

    #[test]
    fn truncation_bound_examples() {
        assert_eq!(fd_truncation_bound(0.0, 0.1, 3), 0.0);
        let bound = fd_truncation_bound(6.0, 0.1, 1);
        assert!((bound - 0.01).abs() < 1e-15);
        let g = centered_difference(scalar(|u| u * u * u), &v(&[1.0]), 0.1).unwrap();
        assert!((g[0] - 3.0).abs() <= bound + 1e-12);
    }

    #[test]
    fn exponential_error_is_second_order() {
        let errs: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|e| (centered_difference(scalar(f64::exp), &v(&[0.0]), *e).unwrap()[0] - 1.0).abs())
            .collect();
        let slope = (errs[0].ln() - errs[2].ln()) / (1e-1f64.ln() - 1e-3f64.ln());
        assert!((slope - 2.0).abs() <= 0.1, "slope {slope}");
    }

    #[test]
    fn epsilon_selection() {
        let range = EpsilonRange::default();
        assert_eq!(select_epsilon(0.0, 1.0, 2, &range), range.min);
        assert_eq!(select_epsilon(1e-4, 0.0, 2, &range), range.default);
        let e1 = select_epsilon(1e-5, 2.0, 3, &range);
        let e2 = select_epsilon(2e-5, 2.0, 3, &range);
        assert!((e2 / e1 - 2f64.cbrt()).abs() < 1e-9);
        let b = |e| fd_error_budget(1e-5, 2.0, e, 3);
        assert!(b(e1) <= b(2.0 * e1) && b(e1) <= b(0.5 * e1));
    }

    fn identity_surrogate(policy: DomainPolicy, resolution: Option<f64>) -> SurrogateGradient {
        let mut m = Mlp::zeros(vec![1, 1], Activation::Tanh).unwrap();
        m.layers[0].weights[(0, 0)] = 1.0;
        SurrogateGradient::new(
            PerceptionNet::Feedforward(m),
            0.1,
            ConvexRegion::boxed(vec![0.0], vec![1.0]).unwrap(),
            resolution,
            policy,
        )
        .unwrap()
    }

    #[test]
    fn domain_policies() {
        let s = identity_surrogate(DomainPolicy::Reject, None);
        assert!(matches!(s.gradient(&v(&[0.95])), Err(Error::OutsideDomain(_))));
        let s = identity_surrogate(DomainPolicy::Project, None);
        // The upper probe is clamped to 1, giving (1 − 0.85)/0.2.
        assert!((s.gradient(&v(&[0.95])).unwrap()[0] - 0.75).abs() < 1e-12);
        let q = identity_surrogate(DomainPolicy::Project, Some(0.25));
        assert_eq!(q.evaluate(&v(&[0.3])).unwrap(), 0.25);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn exact_on_quadratics(
            d in prop::collection::vec(0.1f64..3.0, 1..4),
            c in prop::collection::vec(-2.0f64..2.0, 3),
            x in prop::collection::vec(-2.0f64..2.0, 3),
            eps in 1e-3f64..0.5,
        ) {
            let n = d.len();
            let f = |p: &Vector| Ok((0..n).map(|i| d[i] * (p[i] - c[i]).powi(2) + 0.3 * p[i]).sum::<f64>());
            let point = Vector::from_iterator(n, x.iter().copied().take(n));
            let g = centered_difference(f, &point, eps).unwrap();
            for i in 0..n {
                prop_assert!((g[i] - (2.0 * d[i] * (point[i] - c[i]) + 0.3)).abs() <= 1e-10);
            }
        }

        #[test]
        fn surrogate_amplification_bound(
            amp in 0.0f64..1e-2,
            freq in 1.0f64..50.0,
            x in prop::collection::vec(-1.0f64..1.0, 2),
            eps in 1e-3f64..0.2,
        ) {
            let truth = |p: &Vector| p[0] * p[0] + 2.0 * p[1] * p[1];
            let noisy = |p: &Vector| Ok(truth(p) + amp * (freq * (p[0] + 2.0 * p[1])).sin());
            let point = Vector::from_vec(x);
            let g = centered_difference(noisy, &point, eps).unwrap();
            let exact = v(&[2.0 * point[0], 4.0 * point[1]]);
            prop_assert!((g - exact).norm() <= 2.0 * amp / eps + 1e-12);
        }
    }
}
