//! Perception networks, generative maps, training data and cover checks.

mod maps;
mod net;

pub use maps::{
    gaussian_basis_map, render_robot_image, Arena, GenerativeMap, PerceptionNoise, Readout, StatePerception,
    HEADING_INTENSITY,
};
pub use net::{
    train, Activation, Dense, LayerFile, Mlp, PerceptionNet, ResidualNet, TrainConfig, TrainReport, WeightFile,
    WEIGHT_FORMAT_VERSION,
};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::linalg::sup_norm;
use crate::{Error, Matrix, Result, Vector};

/// Paired inputs and targets with a description of the sampled region.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Vec<Vector>,
    pub targets: Vec<Vector>,
    pub region: String,
    pub seed: u64,
}

impl TrainingSet {
    pub fn new(inputs: Vec<Vector>, targets: Vec<Vector>, region: String, seed: u64) -> Result<Self> {
        let set = Self {
            inputs,
            targets,
            region,
            seed,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::InvalidParameter("training set is empty".into()));
        }
        if self.inputs.len() != self.targets.len() {
            return Err(Error::dim(self.inputs.len(), self.targets.len(), "training targets"));
        }
        let (di, dt) = (self.inputs[0].len(), self.targets[0].len());
        if self.inputs.iter().any(|x| x.len() != di) || self.targets.iter().any(|y| y.len() != dt) {
            return Err(Error::InvalidParameter("training samples have ragged dimensions".into()));
        }
        if self.targets.iter().any(|y| y.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("training targets must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn target_dim(&self) -> usize {
        self.targets[0].len()
    }

    /// Samples as columns of an input and a target matrix.
    pub fn as_matrices(&self) -> (Matrix, Matrix) {
        let x = Matrix::from_columns(&self.inputs);
        let y = Matrix::from_columns(&self.targets);
        (x, y)
    }

    /// CSV with a `# region=… seed=…` comment line and columns `in0…, out0…`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Serialization(e.to_string());
        writeln!(out, "# region={} seed={}", self.region, self.seed).map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (0..self.input_dim())
            .map(|i| format!("in{i}"))
            .chain((0..self.target_dim()).map(|i| format!("out{i}")))
            .collect();
        w.write_record(&header).map_err(|e| Error::Serialization(e.to_string()))?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let row: Vec<String> = x.iter().chain(y.iter()).map(|v| format!("{v:e}")).collect();
            w.write_record(&row).map_err(|e| Error::Serialization(e.to_string()))?;
        }
        w.flush().map_err(io)
    }

    pub fn read_csv<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input
            .read_to_string(&mut text)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        let (mut region, mut seed) = (String::new(), 0);
        let body = match text.strip_prefix("# ") {
            Some(rest) => {
                let (line, body) = rest.split_once('\n').unwrap_or((rest, ""));
                for field in line.split_whitespace() {
                    if let Some(v) = field.strip_prefix("region=") {
                        region = v.to_string();
                    } else if let Some(v) = field.strip_prefix("seed=") {
                        seed = v.parse().map_err(|_| Error::Serialization(format!("bad seed '{v}'")))?;
                    }
                }
                body
            }
            None => text.as_str(),
        };
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let header = r.headers().map_err(|e| Error::Serialization(e.to_string()))?.clone();
        let n_in = header.iter().filter(|h| h.starts_with("in")).count();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Serialization(e.to_string()))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Serialization(e.to_string()))?;
            inputs.push(Vector::from_column_slice(&vals[..n_in]));
            targets.push(Vector::from_column_slice(&vals[n_in..]));
        }
        Self::new(inputs, targets, region, seed)
    }
}

/// `max_i ‖net(ξ_i) − y_i‖∞` over the training samples.
pub fn sup_training_error(net: &PerceptionNet, data: &TrainingSet) -> Result<f64> {
    data.validate()?;
    let (x, y) = data.as_matrices();
    if x.nrows() != net.input_dim() || y.nrows() != net.output_dim() {
        return Err(Error::dim(net.input_dim(), x.nrows(), "training set vs network"));
    }
    let diff = net.forward_batch(&x) - y;
    Ok(diff.iter().fold(0.0, |a, v| a.max(v.abs())))
}

/// Appends zeros to reach dimension `dim`.
pub fn lift(x: &Vector, dim: usize) -> Result<Vector> {
    if x.len() > dim {
        return Err(Error::InvalidParameter(format!(
            "cannot lift a {}-vector into dimension {dim}",
            x.len()
        )));
    }
    let mut out = Vector::zeros(dim);
    out.rows_mut(0, x.len()).copy_from(x);
    Ok(out)
}

/// First `n` entries of `y`.
pub fn project_head(y: &Vector, n: usize) -> Result<Vector> {
    if n > y.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot take {n} entries of a {}-vector",
            y.len()
        )));
    }
    Ok(y.rows(0, n).into_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverMode {
    Plain,
    PartialOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub rho: f64,
    pub mode: CoverMode,
    pub holds: bool,
    /// Whether the componentwise sandwich condition holds at every probe.
    pub partial_order_ok: bool,
    /// Indices of probe points that violate the condition.
    pub failures: Vec<usize>,
}

fn sup_dist(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (p, q)| m.max((p - q).abs()))
}

fn preceq(a: &Vector, b: &Vector) -> bool {
    a.iter().zip(b.iter()).all(|(p, q)| p <= q)
}

fn sandwiched(samples: &[Vector], x: &Vector, rho: f64) -> bool {
    let below: Vec<&Vector> = samples.iter().filter(|w| preceq(w, x)).collect();
    let above: Vec<&Vector> = samples.iter().filter(|z| preceq(x, z)).collect();
    below.iter().any(|w| above.iter().any(|z| sup_dist(w, z) <= rho))
}

/// Checks whether `samples` form a `ρ`-cover of the probe grid.
pub fn check_rho_cover(samples: &[Vector], probes: &[Vector], rho: f64, mode: CoverMode) -> CoverReport {
    let mut failures = Vec::new();
    let mut order_failures = false;
    for (i, x) in probes.iter().enumerate() {
        let ok = match mode {
            CoverMode::Plain => samples.iter().any(|s| sup_dist(s, x) <= rho),
            CoverMode::PartialOrder => sandwiched(samples, x, rho),
        };
        if !ok {
            failures.push(i);
            order_failures |= mode == CoverMode::PartialOrder;
        }
    }
    let holds = !samples.is_empty() && failures.is_empty();
    CoverReport {
        rho,
        mode,
        holds,
        partial_order_ok: match mode {
            CoverMode::PartialOrder => holds && !order_failures,
            CoverMode::Plain => probes.iter().all(|x| sandwiched(samples, x, rho)) && !samples.is_empty(),
        },
        failures,
    }
}

/// Smallest plain-cover radius: `max_probe min_sample ‖x − s‖∞`.
pub fn cover_radius(samples: &[Vector], probes: &[Vector]) -> f64 {
    probes
        .iter()
        .map(|x| samples.iter().map(|s| sup_dist(s, x)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Uniform grid with `per_dim` points per coordinate over a box.
pub fn probe_grid(lower: &[f64], upper: &[f64], per_dim: usize) -> Result<Vec<Vector>> {
    if lower.len() != upper.len() {
        return Err(Error::dim(lower.len(), upper.len(), "probe grid bounds"));
    }
    if per_dim < 2 {
        return Err(Error::InvalidParameter("probe grid needs >= 2 points per dimension".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
        return Err(Error::EmptyRegion("probe grid bounds must be finite and ordered".into()));
    }
    let dim = lower.len();
    let total = per_dim.pow(dim as u32);
    Ok((0..total)
        .map(|mut k| {
            Vector::from_iterator(
                dim,
                (0..dim).map(|d| {
                    let idx = k % per_dim;
                    k /= per_dim;
                    lower[d] + (upper[d] - lower[d]) * idx as f64 / (per_dim - 1) as f64
                }),
            )
        })
        .collect())
}

/// Empirical modulus of continuity of the perception map from the data:
/// `max ‖x_i − x_j‖∞` over pairs with `‖ξ_i − ξ_j‖∞ ≤ ρ`.
pub fn modulus_estimate(data: &TrainingSet, rho: f64) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..data.len() {
        for j in i + 1..data.len() {
            if sup_dist(&data.inputs[i], &data.inputs[j]) <= rho {
                best = best.max(sup_norm(&(&data.targets[i] - &data.targets[j])));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn sup_error_examples() {
        let net = PerceptionNet::Feedforward(Mlp::zeros(vec![1, 1], Activation::Tanh).unwrap());
        let data = TrainingSet::new(vec![v(&[0.0]), v(&[1.0])], vec![v(&[1.0]), v(&[-2.0])], String::new(), 0).unwrap();
        assert_eq!(sup_training_error(&net, &data).unwrap(), 2.0);
        let mut ident = Mlp::zeros(vec![1, 1], Activation::Tanh).unwrap();
        ident.layers[0].weights[(0, 0)] = 1.0;
        let data = TrainingSet::new(vec![v(&[0.5]), v(&[-3.0])], vec![v(&[0.5]), v(&[-3.0])], String::new(), 0).unwrap();
        assert_eq!(sup_training_error(&PerceptionNet::Feedforward(ident), &data).unwrap(), 0.0);
    }

    #[test]
    fn lift_and_head() {
        assert_eq!(lift(&v(&[1.0, 2.0]), 4).unwrap(), v(&[1.0, 2.0, 0.0, 0.0]));
        assert_eq!(project_head(&v(&[1.0, 2.0, 0.0, 0.0]), 2).unwrap(), v(&[1.0, 2.0]));
        assert!(lift(&v(&[1.0, 2.0]), 1).is_err());
        assert!(project_head(&v(&[1.0]), 2).is_err());
    }

    #[test]
    fn cover_examples() {
        let samples = vec![v(&[0.0]), v(&[0.5]), v(&[1.0])];
        let probes = probe_grid(&[0.0], &[1.0], 21).unwrap();
        assert!(check_rho_cover(&samples, &probes, 0.25, CoverMode::Plain).holds);
        assert!(check_rho_cover(&samples, &probes, 0.5, CoverMode::PartialOrder).holds);
        let r = check_rho_cover(&samples, &probes, 0.4, CoverMode::PartialOrder);
        assert!(!r.holds && !r.failures.is_empty());
        assert!(!check_rho_cover(&[], &probes, 10.0, CoverMode::Plain).holds);
        assert!((cover_radius(&samples, &probes) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn training_set_csv_round_trip() {
        let data = TrainingSet::new(
            vec![v(&[0.1, 0.2]), v(&[1e-7, -3.5])],
            vec![v(&[1.0]), v(&[0.123456789012345])],
            "sis".into(),
            42,
        )
        .unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = TrainingSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, data);
        assert!(TrainingSet::new(vec![], vec![], String::new(), 0).is_err());
    }

    #[test]
    fn modulus_on_monotone_data() {
        let inputs: Vec<Vector> = (0..11).map(|i| v(&[i as f64 * 0.1])).collect();
        let targets = inputs.iter().map(|x| x * 3.0).collect();
        let data = TrainingSet::new(inputs, targets, String::new(), 0).unwrap();
        assert!((modulus_estimate(&data, 0.1 + 1e-12) - 0.3).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn lift_round_trip(xs in prop::collection::vec(-1e3f64..1e3, 1..6), extra in 0usize..4) {
            let x = Vector::from_vec(xs);
            let lifted = lift(&x, x.len() + extra).unwrap();
            prop_assert_eq!(project_head(&lifted, x.len()).unwrap(), x);
        }

        #[test]
        fn sup_error_bounds_each_sample(w in -2.0f64..2.0, b in -1.0f64..1.0, ys in prop::collection::vec(-5.0f64..5.0, 1..30)) {
            let mut m = Mlp::zeros(vec![1, 1], Activation::Tanh).unwrap();
            m.layers[0].weights[(0, 0)] = w;
            m.layers[0].bias[0] = b;
            let net = PerceptionNet::Feedforward(m);
            let inputs: Vec<Vector> = (0..ys.len()).map(|i| v(&[i as f64 * 0.1])).collect();
            let targets: Vec<Vector> = ys.iter().map(|y| v(&[*y])).collect();
            let data = TrainingSet::new(inputs.clone(), targets.clone(), String::new(), 0).unwrap();
            let sup = sup_training_error(&net, &data).unwrap();
            for (x, y) in inputs.iter().zip(&targets) {
                let e = sup_norm(&(net.forward(x).unwrap() - y));
                prop_assert!(e <= sup);
            }
        }
    }
}
