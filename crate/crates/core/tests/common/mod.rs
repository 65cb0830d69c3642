#![allow(dead_code)]

use fbopt_core::numerics::ConvexRegion;
use fbopt_core::objective::{CostFn, CostSpec};
use fbopt_core::plants::{lti_plant, sis_plant, DisturbanceKind, DisturbanceSignal, PlantSpec};
use fbopt_core::{Matrix, Vector};

pub fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

/// `ẋ = −x + u + w` on `C = [−2, 2]²` with unit-weight quadratic costs.
pub fn lti_benchmark() -> (PlantSpec, CostSpec) {
    let i2 = Matrix::identity(2, 2);
    let plant = lti_plant(-i2.clone(), i2.clone(), i2).unwrap();
    let cost = CostSpec::new(
        CostFn::quadratic(vec![1.0, 1.0], vec![1.0, -0.5]).unwrap(),
        CostFn::quadratic(vec![1.0, 1.0], vec![0.5, 1.0]).unwrap(),
        ConvexRegion::boxed(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(),
        None,
    )
    .unwrap();
    (plant, cost)
}

pub fn lti_disturbances() -> Vec<(&'static str, DisturbanceSignal)> {
    vec![
        ("constant", DisturbanceSignal::constant(vec![0.2, -0.1]).unwrap()),
        (
            "sinusoid",
            DisturbanceSignal::new(DisturbanceKind::Sinusoid {
                mean: vec![0.0, 0.0],
                amplitude: vec![0.3, 0.3],
                omega: vec![0.5, 0.5],
            })
            .unwrap(),
        ),
    ]
}

/// The epidemic example in `(x, 1/u)` coordinates, `ũ_ref = 1/0.36`, `x_ref = 0.85`.
pub fn sis_problem() -> (PlantSpec, CostSpec) {
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

pub fn sis_closed_form() -> f64 {
    let c = (1e-4 + 1.0 / 9.0) / 4.0;
    (1.0 / 0.36 + c * 0.15) / (1.0 + c * c)
}
