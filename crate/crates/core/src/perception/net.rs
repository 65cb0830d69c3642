//! Feedforward and residual networks trained with Adam on mean-squared error.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::{check_len, inf_norm};
use crate::{Error, Matrix, Result, Vector};

use super::TrainingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// A dense layer `W a + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vector,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: Vector::zeros(outputs),
        }
    }

    fn forward(&self, a: &Matrix) -> Matrix {
        let mut z = &self.weights * a;
        for mut col in z.column_iter_mut() {
            col += &self.bias;
        }
        z
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Fully connected network; hidden layers use `activation`, the output layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Dense>,
    pub seed: u64,
}

struct MlpCache {
    /// Layer inputs `a_0 … a_{L−1}`.
    inputs: Vec<Matrix>,
    /// Hidden pre-activations.
    pre: Vec<Matrix>,
}

impl Mlp {
    /// Random initialization scaled by fan-in (Glorot for tanh, He for relu).
    pub fn new(widths: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidParameter(format!("invalid layer widths {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|p| {
                let var = match activation {
                    Activation::Tanh => 2.0 / (p[0] + p[1]) as f64,
                    Activation::Relu => 2.0 / p[0] as f64,
                };
                let normal = Normal::new(0.0, var.sqrt()).expect("positive variance");
                Dense {
                    weights: Matrix::from_fn(p[1], p[0], |_, _| normal.sample(&mut rng)),
                    bias: Vector::zeros(p[1]),
                }
            })
            .collect();
        Ok(Self {
            widths,
            activation,
            layers,
            seed,
        })
    }

    /// A network whose every weight and bias is zero.
    pub fn zeros(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let mut net = Self::new(widths, activation, 0)?;
        for layer in &mut net.layers {
            layer.weights.fill(0.0);
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn forward(&self, x: &Vector) -> Vector {
        let out = self.forward_batch(&Matrix::from_column_slice(x.len(), 1, x.as_slice()));
        out.column(0).into_owned()
    }

    pub fn forward_batch(&self, x: &Matrix) -> Matrix {
        self.forward_cached(x).0
    }

    fn forward_cached(&self, x: &Matrix) -> (Matrix, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a);
            cache.inputs.push(a);
            if i == last {
                return (z, cache);
            }
            a = z.map(|v| self.activation.apply(v));
            cache.pre.push(z);
        }
        unreachable!("network has at least one layer")
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    fn backward(&self, cache: &MlpCache, d_out: Matrix, grads: &mut [Dense]) -> Matrix {
        let mut dz = d_out;
        for i in (0..self.layers.len()).rev() {
            grads[i].weights += &dz * cache.inputs[i].transpose();
            for col in dz.column_iter() {
                grads[i].bias += col;
            }
            let da = self.layers[i].weights.transpose() * &dz;
            if i == 0 {
                return da;
            }
            let act = self.activation;
            dz = da.zip_map(&cache.pre[i - 1], |g, z| g * act.derivative(z));
        }
        unreachable!("network has at least one layer")
    }

    fn zero_grads(&self) -> Vec<Dense> {
        self.layers
            .iter()
            .map(|l| Dense::zeros(l.weights.ncols(), l.weights.nrows()))
            .collect()
    }
}

/// `y = A_out z_L + b_out` with `z_{k+1} = z_k + block_k(z_k)` and `z_0 = x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNet {
    pub width: usize,
    pub blocks: Vec<Mlp>,
    pub readout: Dense,
    pub seed: u64,
}

impl ResidualNet {
    pub fn new(width: usize, hidden: usize, blocks: usize, outputs: usize, activation: Activation, seed: u64) -> Result<Self> {
        if width == 0 || hidden == 0 || outputs == 0 {
            return Err(Error::InvalidParameter("residual network sizes must be positive".into()));
        }
        let mut nets = Vec::with_capacity(blocks);
        for k in 0..blocks {
            let mut block = Mlp::new(vec![width, hidden, width], activation, seed.wrapping_add(k as u64 + 1))?;
            // Start near the identity so early training is stable.
            block.layers[1].weights *= 0.1;
            nets.push(block);
        }
        let readout = Mlp::new(vec![width, outputs], activation, seed)?.layers.remove(0);
        Ok(Self {
            width,
            blocks: nets,
            readout,
            seed,
        })
    }

    /// `‖A_out‖∞`, the default skip-matrix norm.
    pub fn skip_norm(&self) -> f64 {
        inf_norm(&self.readout.weights)
    }

    pub fn forward(&self, x: &Vector) -> Vector {
        self.forward_batch(&Matrix::from_column_slice(x.len(), 1, x.as_slice()))
            .column(0)
            .into_owned()
    }

    pub fn forward_batch(&self, x: &Matrix) -> Matrix {
        let mut z = x.clone();
        for block in &self.blocks {
            z += block.forward_batch(&z);
        }
        self.readout.forward(&z)
    }
}

/// A trainable perception network of either architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum PerceptionNet {
    Feedforward(Mlp),
    Residual(ResidualNet),
}

impl PerceptionNet {
    pub fn input_dim(&self) -> usize {
        match self {
            PerceptionNet::Feedforward(m) => m.input_dim(),
            PerceptionNet::Residual(r) => r.width,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            PerceptionNet::Feedforward(m) => m.output_dim(),
            PerceptionNet::Residual(r) => r.readout.bias.len(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PerceptionNet::Feedforward(_) => "feedforward",
            PerceptionNet::Residual(_) => "residual",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            PerceptionNet::Feedforward(m) => m.seed,
            PerceptionNet::Residual(r) => r.seed,
        }
    }

    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        check_len(x, self.input_dim(), "network input")?;
        Ok(match self {
            PerceptionNet::Feedforward(m) => m.forward(x),
            PerceptionNet::Residual(r) => r.forward(x),
        })
    }

    pub fn forward_batch(&self, x: &Matrix) -> Matrix {
        match self {
            PerceptionNet::Feedforward(m) => m.forward_batch(x),
            PerceptionNet::Residual(r) => r.forward_batch(x),
        }
    }

    fn layers(&self) -> Vec<&Dense> {
        match self {
            PerceptionNet::Feedforward(m) => m.layers.iter().collect(),
            PerceptionNet::Residual(r) => r
                .blocks
                .iter()
                .flat_map(|b| b.layers.iter())
                .chain(std::iter::once(&r.readout))
                .collect(),
        }
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        match self {
            PerceptionNet::Feedforward(m) => m.layers.iter_mut().collect(),
            PerceptionNet::Residual(r) => r
                .blocks
                .iter_mut()
                .flat_map(|b| b.layers.iter_mut())
                .chain(std::iter::once(&mut r.readout))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// All parameters, layer by layer, weights (column-major) before biases.
    pub fn params(&self) -> Vec<f64> {
        flatten(self.layers())
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(self.param_count(), params.len(), "parameter vector"));
        }
        let mut offset = 0;
        for layer in self.layers_mut() {
            let nw = layer.weights.len();
            layer.weights.as_mut_slice().copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias.len();
            layer.bias.as_mut_slice().copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Mean-squared loss over a batch and its parameter gradient.
    fn loss_and_gradient(&self, x: &Matrix, y: &Matrix) -> (f64, Vec<f64>) {
        let scale = 1.0 / (y.len() as f64);
        match self {
            PerceptionNet::Feedforward(m) => {
                let (out, cache) = m.forward_cached(x);
                let diff = out - y;
                let loss = diff.norm_squared() * scale;
                let mut grads = m.zero_grads();
                m.backward(&cache, diff * (2.0 * scale), &mut grads);
                (loss, flatten(grads.iter().collect()))
            }
            PerceptionNet::Residual(r) => {
                let mut zs = vec![x.clone()];
                let mut caches = Vec::with_capacity(r.blocks.len());
                for block in &r.blocks {
                    let z = zs.last().unwrap();
                    let (delta, cache) = block.forward_cached(z);
                    zs.push(z + delta);
                    caches.push(cache);
                }
                let z_last = zs.last().unwrap();
                let diff = r.readout.forward(z_last) - y;
                let loss = diff.norm_squared() * scale;
                let d_out = diff * (2.0 * scale);
                let mut readout_grad = Dense {
                    weights: &d_out * z_last.transpose(),
                    bias: Vector::zeros(r.readout.bias.len()),
                };
                for col in d_out.column_iter() {
                    readout_grad.bias += col;
                }
                let mut dz = r.readout.weights.transpose() * &d_out;
                let mut block_grads: Vec<Vec<Dense>> = r.blocks.iter().map(Mlp::zero_grads).collect();
                for k in (0..r.blocks.len()).rev() {
                    let d_in = r.blocks[k].backward(&caches[k], dz.clone(), &mut block_grads[k]);
                    dz += d_in;
                }
                let all: Vec<&Dense> = block_grads
                    .iter()
                    .flat_map(|g| g.iter())
                    .chain(std::iter::once(&readout_grad))
                    .collect();
                (loss, flatten(all))
            }
        }
    }
}

fn flatten(layers: Vec<&Dense>) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(|l| l.param_count()).sum());
    for l in layers {
        out.extend_from_slice(l.weights.as_slice());
        out.extend_from_slice(l.bias.as_slice());
    }
    out
}

/// Mini-batch training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Learning rate reached at the last epoch by geometric decay; defaults to `learning_rate`.
    #[serde(default)]
    pub final_learning_rate: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        let final_lr = self.final_learning_rate.unwrap_or(self.learning_rate);
        if !(self.learning_rate > 0.0) || !(final_lr > 0.0) {
            return Err(Error::InvalidParameter("learning rates must be > 0".into()));
        }
        Ok(())
    }

    fn rate_at(&self, epoch: usize) -> f64 {
        let lr_end = self.final_learning_rate.unwrap_or(self.learning_rate);
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * (lr_end / self.learning_rate).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub losses: Vec<f64>,
    /// Full-data mean-squared error after training.
    pub final_loss: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Trains `net` in place; deterministic given `config.seed`.
pub fn train(net: &mut PerceptionNet, data: &TrainingSet, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    data.validate()?;
    if data.input_dim() != net.input_dim() || data.target_dim() != net.output_dim() {
        return Err(Error::dim(net.input_dim(), data.input_dim(), "training set vs network"));
    }
    let n = data.len();
    let (x_all, y_all) = data.as_matrices();
    let mut params = net.params();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut losses = Vec::with_capacity(config.epochs);
    let mut step = 0i32;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.rate_at(epoch);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch) {
            let x = x_all.select_columns(chunk);
            let y = y_all.select_columns(chunk);
            let (loss, grad) = net.loss_and_gradient(&x, &y);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            step += 1;
            let (c1, c2) = (1.0 - ADAM_BETA1.powi(step), 1.0 - ADAM_BETA2.powi(step));
            for i in 0..params.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
            net.set_params(&params)?;
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: mean });
        }
        losses.push(mean);
    }
    let final_loss = (net.forward_batch(&x_all) - &y_all).norm_squared() / y_all.len() as f64;
    if !final_loss.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: config.epochs,
            loss: final_loss,
        });
    }
    Ok(TrainReport { losses, final_loss })
}

/// Version tag of the JSON weight format.
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub rows: usize,
    pub cols: usize,
    /// Row-major weights.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// On-disk representation of a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    pub format_version: u32,
    pub kind: String,
    pub activation: Activation,
    /// Layer widths for feedforward nets; `[width, hidden, outputs]` for residual nets.
    pub widths: Vec<usize>,
    pub blocks: usize,
    pub layers: Vec<LayerFile>,
    pub seed: u64,
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl WeightFile {
    pub fn from_net(net: &PerceptionNet, metadata: serde_json::Map<String, serde_json::Value>) -> Self {
        let layers = net
            .layers()
            .into_iter()
            .map(|l| LayerFile {
                rows: l.weights.nrows(),
                cols: l.weights.ncols(),
                weights: l.weights.transpose().as_slice().to_vec(),
                bias: l.bias.as_slice().to_vec(),
            })
            .collect();
        let (activation, widths, blocks) = match net {
            PerceptionNet::Feedforward(m) => (m.activation, m.widths.clone(), 0),
            PerceptionNet::Residual(r) => {
                let act = r.blocks.first().map_or(Activation::Tanh, |b| b.activation);
                let hidden = r.blocks.first().map_or(0, |b| b.widths[1]);
                (act, vec![r.width, hidden, r.readout.bias.len()], r.blocks.len())
            }
        };
        Self {
            format_version: WEIGHT_FORMAT_VERSION,
            kind: net.kind().to_string(),
            activation,
            widths,
            blocks,
            layers,
            seed: net.seed(),
            metadata,
        }
    }

    pub fn to_net(&self) -> Result<PerceptionNet> {
        if self.format_version != WEIGHT_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported weight format version {}",
                self.format_version
            )));
        }
        let mut net = match self.kind.as_str() {
            "feedforward" => PerceptionNet::Feedforward(Mlp::new(self.widths.clone(), self.activation, self.seed)?),
            "residual" => {
                if self.widths.len() != 3 {
                    return Err(Error::Serialization("residual net needs widths [width, hidden, outputs]".into()));
                }
                PerceptionNet::Residual(ResidualNet::new(
                    self.widths[0],
                    self.widths[1].max(1),
                    self.blocks,
                    self.widths[2],
                    self.activation,
                    self.seed,
                )?)
            }
            other => return Err(Error::Serialization(format!("unknown network kind '{other}'"))),
        };
        let mut targets = net.layers_mut();
        if targets.len() != self.layers.len() {
            return Err(Error::Serialization(format!(
                "expected {} layers, file has {}",
                targets.len(),
                self.layers.len()
            )));
        }
        for (dst, src) in targets.iter_mut().zip(&self.layers) {
            if dst.weights.nrows() != src.rows
                || dst.weights.ncols() != src.cols
                || src.weights.len() != src.rows * src.cols
                || src.bias.len() != src.rows
            {
                return Err(Error::Serialization("layer shape does not match architecture".into()));
            }
            if src.weights.iter().chain(&src.bias).any(|v| !v.is_finite()) {
                return Err(Error::Serialization("non-finite weight in file".into()));
            }
            dst.weights = Matrix::from_row_slice(src.rows, src.cols, &src.weights);
            dst.bias = Vector::from_column_slice(&src.bias);
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_data() -> TrainingSet {
        let inputs: Vec<Vector> = (0..1000).map(|i| Vector::from_element(1, -1.0 + 2.0 * i as f64 / 999.0)).collect();
        let targets = inputs.iter().map(|x| x * 2.0).collect();
        TrainingSet::new(inputs, targets, "[-1,1]".into(), 0).unwrap()
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let mut net = PerceptionNet::Feedforward(Mlp::new(vec![1, 4, 1], Activation::Tanh, 3).unwrap());
        let before = net.clone();
        let cfg = TrainConfig {
            epochs: 0,
            batch: 10,
            learning_rate: 1e-2,
            final_learning_rate: None,
            seed: 1,
        };
        train(&mut net, &linear_data(), &cfg).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn linear_target_is_learned() {
        let mut net = PerceptionNet::Feedforward(Mlp::new(vec![1, 1], Activation::Tanh, 3).unwrap());
        let cfg = TrainConfig {
            epochs: 200,
            batch: 50,
            learning_rate: 1e-2,
            final_learning_rate: Some(1e-4),
            seed: 1,
        };
        let report = train(&mut net, &linear_data(), &cfg).unwrap();
        assert!(report.final_loss <= 1e-6, "loss {}", report.final_loss);
    }

    #[test]
    fn sine_target_is_learned() {
        let inputs: Vec<Vector> = (0..400)
            .map(|i| Vector::from_element(1, -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / 399.0))
            .collect();
        let targets = inputs.iter().map(|x| x.map(f64::sin)).collect();
        let data = TrainingSet::new(inputs, targets, "[-pi,pi]".into(), 0).unwrap();
        let mut net = PerceptionNet::Feedforward(Mlp::new(vec![1, 32, 32, 1], Activation::Tanh, 7).unwrap());
        let cfg = TrainConfig {
            epochs: 300,
            batch: 32,
            learning_rate: 5e-3,
            final_learning_rate: Some(5e-4),
            seed: 2,
        };
        let report = train(&mut net, &data, &cfg).unwrap();
        assert!(report.final_loss <= 1e-3, "loss {}", report.final_loss);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let run = || {
            let mut net = PerceptionNet::Residual(ResidualNet::new(1, 8, 2, 1, Activation::Tanh, 4).unwrap());
            let cfg = TrainConfig {
                epochs: 5,
                batch: 64,
                learning_rate: 1e-3,
                final_learning_rate: None,
                seed: 9,
            };
            train(&mut net, &linear_data(), &cfg).unwrap();
            net.params()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn zero_blocks_give_affine_readout() {
        let mut net = ResidualNet::new(3, 5, 2, 2, Activation::Relu, 1).unwrap();
        for b in &mut net.blocks {
            for l in &mut b.layers {
                l.weights.fill(0.0);
                l.bias.fill(0.0);
            }
        }
        let x = Vector::from_column_slice(&[0.5, -1.0, 2.0]);
        let expected = &net.readout.weights * &x + &net.readout.bias;
        assert_eq!(net.forward(&x), expected);
    }

    fn numeric_gradient_check(mut net: PerceptionNet) {
        let x = Matrix::from_fn(net.input_dim(), 3, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
        let y = Matrix::from_fn(net.output_dim(), 3, |i, j| (i + j) as f64 * 0.25);
        let (_, grad) = net.loss_and_gradient(&x, &y);
        let params = net.params();
        let h = 1e-6;
        for k in (0..params.len()).step_by(3) {
            let mut p = params.clone();
            p[k] += h;
            net.set_params(&p).unwrap();
            let (lp, _) = net.loss_and_gradient(&x, &y);
            p[k] -= 2.0 * h;
            net.set_params(&p).unwrap();
            let (lm, _) = net.loss_and_gradient(&x, &y);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-6 * fd.abs().max(1.0), "param {k}: {fd} vs {}", grad[k]);
        }
        net.set_params(&params).unwrap();
    }

    #[test]
    fn backprop_matches_finite_differences() {
        numeric_gradient_check(PerceptionNet::Feedforward(Mlp::new(vec![3, 5, 4, 2], Activation::Tanh, 5).unwrap()));
        numeric_gradient_check(PerceptionNet::Residual(ResidualNet::new(3, 4, 2, 2, Activation::Tanh, 6).unwrap()));
    }

    #[test]
    fn weight_file_round_trip() {
        for net in [
            PerceptionNet::Feedforward(Mlp::new(vec![4, 6, 1], Activation::Relu, 2).unwrap()),
            PerceptionNet::Residual(ResidualNet::new(4, 3, 2, 4, Activation::Tanh, 8).unwrap()),
        ] {
            let text = WeightFile::from_net(&net, Default::default()).to_json().unwrap();
            let back = WeightFile::from_json(&text).unwrap().to_net().unwrap();
            assert_eq!(back, net);
        }
        let mut file = WeightFile::from_net(
            &PerceptionNet::Feedforward(Mlp::new(vec![1, 1], Activation::Tanh, 0).unwrap()),
            Default::default(),
        );
        file.format_version = 99;
        assert!(file.to_net().is_err());
    }
}
