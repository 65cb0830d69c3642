//! The subcommands: train, simulate, certify, sweep, validate and reproduce.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fbopt_core::certification::{
    certify, lyapunov_coordinate_error, plant_lyapunov_constants, verify_bound, verify_envelope, CertificateInputs,
    DeltaBudget, IssCertificate, Provenance,
};
use fbopt_core::controller::{
    simulate_closed_loop, steady_state_error, ControllerConfig, FeedbackMode, SimulationOptions, Trajectory,
};
use fbopt_core::numerics::{ConvexRegion, StepperConfig};
use fbopt_core::objective::{CostSpec, OptimalTrajectoryMap};
use fbopt_core::perception::{
    check_rho_cover, cover_radius, modulus_estimate, probe_grid, sup_training_error, train, CoverMode, GenerativeMap,
    Mlp, PerceptionNet, Readout, ResidualNet, StatePerception, TrainConfig, TrainingSet, WeightFile,
};
use fbopt_core::plants::{DisturbanceKind, DisturbanceSignal, PlantSpec};
use fbopt_core::surrogate::{cost_samples, fd_truncation_bound, SurrogateGradient};
use fbopt_core::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{
    check_sweep_values, ExperimentConfig, ModeConfig, NetworkSpec, SamplingConfig, SweepAxis, TrainingSection,
};
use crate::output::{ensure_dir, num, write_csv, write_json, write_svg, Stamp};
use crate::plot::{LinePlot, Series};
use crate::{recipes, CliError, Result};

pub const STATE_WEIGHTS: &str = "weights.json";
pub const COST_WEIGHTS: &str = "cost_weights.json";

/// Disturbance samples used to estimate `ℓ_J` when it is not given.
const ELL_J_SAMPLES: usize = 64;
/// Probe points of the training-set cover report.
const COVER_PROBES: usize = 256;
/// Training sets wider than this are not written out as CSV.
const MAX_CSV_COLUMNS: usize = 64;
/// Cap on the total size of the `ê` probe grid.
const MAX_COST_PROBES: usize = 100_000;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

// Derived seeds, so one config seed fixes every random draw.
fn net_seed(seed: u64) -> u64 {
    seed.wrapping_add(2)
}

fn train_seed(seed: u64) -> u64 {
    seed.wrapping_add(4)
}

fn sample_seed(seed: u64) -> u64 {
    seed.wrapping_add(6)
}

fn probe_seed(seed: u64) -> u64 {
    seed.wrapping_add(8)
}

pub fn stamp(cfg: &ExperimentConfig) -> Stamp {
    Stamp {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

/// Plant, cost, disturbance, horizon and initial condition of a config.
#[derive(Debug, Clone)]
pub struct Problem {
    pub plant: PlantSpec,
    pub cost: CostSpec,
    pub disturbance: DisturbanceSignal,
    pub stepper: StepperConfig,
    pub x0: Vector,
    pub u0: Vector,
}

impl Problem {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let plant = cfg.plant()?;
        let cost = cfg.cost(&plant)?;
        let disturbance = cfg.disturbance()?;
        Ok(Self {
            x0: cfg.initial_state(&plant, &disturbance),
            u0: cfg.initial_input(),
            stepper: cfg.stepper()?,
            plant,
            cost,
            disturbance,
        })
    }

    pub fn ess_sup_wdot(&self) -> f64 {
        self.disturbance.derivative_ess_sup_on(self.stepper.t0, self.stepper.t1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSummary {
    /// Probes are drawn in state space and mapped into the network's input space.
    pub probes: usize,
    /// Smallest `ρ` at which the samples cover every probe.
    pub radius: f64,
    /// Whether the partial-order sandwich also holds at that radius.
    pub partial_order_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seed: u64,
    /// `state_perception` or `cost_perception`.
    pub target: String,
    pub weights: String,
    pub samples: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub sup_training_error: f64,
    pub cover: Option<CoverSummary>,
    pub modulus: Option<f64>,
    pub skip_norm: Option<f64>,
}

fn sampling_box(sampling: &SamplingConfig) -> Option<(Vec<f64>, Vec<f64>)> {
    match sampling {
        SamplingConfig::Grid { lower, upper, .. } | SamplingConfig::Uniform { lower, upper, .. } => {
            Some((lower.clone(), upper.clone()))
        }
        SamplingConfig::ArenaCells { .. } => None,
    }
}

fn uniform_points(lower: &[f64], upper: &[f64], count: usize, seed: u64) -> Result<Vec<Vector>> {
    if lower.len() != upper.len() || lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(config_err("sampling bounds must have equal length and lower <= upper"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            Vector::from_iterator(
                lower.len(),
                lower.iter().zip(upper).map(|(l, u)| if l < u { rng.gen_range(*l..=*u) } else { *l }),
            )
        })
        .collect())
}

fn sample_states(sampling: &SamplingConfig, map: Option<&GenerativeMap>, seed: u64) -> Result<Vec<Vector>> {
    match sampling {
        SamplingConfig::Grid { lower, upper, per_dim } => Ok(probe_grid(lower, upper, *per_dim)?),
        SamplingConfig::Uniform { lower, upper, count } => uniform_points(lower, upper, *count, seed),
        SamplingConfig::ArenaCells { headings } => {
            let Some(GenerativeMap::RobotImage { arena, .. }) = map else {
                return Err(config_err("arena_cells sampling needs a robot_image map"));
            };
            let mut out = Vec::with_capacity(arena.grid * arena.grid * headings);
            for row in 0..arena.grid {
                for col in 0..arena.grid {
                    for h in 0..*headings {
                        out.push(Vector::from_column_slice(&[
                            arena.cell_center(col),
                            arena.cell_center(row),
                            TAU * h as f64 / *headings as f64,
                        ]));
                    }
                }
            }
            Ok(out)
        }
    }
}

fn cover_probe_states(sampling: &SamplingConfig, map: Option<&GenerativeMap>, seed: u64) -> Result<Vec<Vector>> {
    if let Some((lower, upper)) = sampling_box(sampling) {
        let per_dim = ((COVER_PROBES as f64).powf(1.0 / lower.len().max(1) as f64).floor() as usize).max(2);
        return Ok(probe_grid(&lower, &upper, per_dim)?);
    }
    match map {
        Some(GenerativeMap::RobotImage { arena, .. }) => {
            let half = 0.5 * arena.cell_size();
            let (lo, hi) = (arena.lower + half, arena.upper - half);
            uniform_points(&[lo, lo, 0.0], &[hi, hi, TAU], COVER_PROBES, seed)
        }
        _ => Err(config_err("cannot place cover probes for this sampling")),
    }
}

fn build_net(spec: &NetworkSpec, inputs: usize, outputs: usize, seed: u64) -> Result<PerceptionNet> {
    Ok(match spec {
        NetworkSpec::Feedforward { hidden, activation } => {
            let mut widths = vec![inputs];
            widths.extend(hidden);
            widths.push(outputs);
            PerceptionNet::Feedforward(Mlp::new(widths, *activation, seed)?)
        }
        NetworkSpec::Residual {
            hidden,
            blocks,
            activation,
        } => PerceptionNet::Residual(ResidualNet::new(inputs, *hidden, *blocks, outputs, *activation, seed)?),
    })
}

fn train_config(t: &TrainingSection, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: t.epochs,
        batch: t.batch,
        learning_rate: t.learning_rate,
        final_learning_rate: t.final_learning_rate,
        seed: train_seed(seed),
    }
}

fn weights_path(configured: &Option<PathBuf>, dir: &Path, default: &str) -> PathBuf {
    configured.clone().unwrap_or_else(|| dir.join(default))
}

fn write_training_set(path: &Path, stamp: &Stamp, data: &TrainingSet) -> Result<()> {
    let (ni, nt) = (data.input_dim(), data.target_dim());
    if ni + nt > MAX_CSV_COLUMNS {
        log::info!("training set has {} columns; not writing {}", ni + nt, path.display());
        return Ok(());
    }
    let header: Vec<String> = (0..ni).map(|i| format!("in_{i}")).chain((0..nt).map(|i| format!("out_{i}"))).collect();
    let rows: Vec<Vec<String>> = data
        .inputs
        .iter()
        .zip(&data.targets)
        .map(|(a, b)| a.iter().chain(b.iter()).map(|v| num(*v)).collect())
        .collect();
    write_csv(path, stamp, &header, &rows)
}

fn readout_outputs(readout: &Readout, plant: &PlantSpec) -> Result<usize> {
    match readout {
        Readout::Head { n } if *n == plant.tracked => Ok(*n),
        Readout::Head { n } => Err(config_err(format!(
            "head readout has n = {n} but the plant tracks {} state components",
            plant.tracked
        ))),
        Readout::GridCells { arena } if plant.tracked == 2 => Ok(2 * arena.grid),
        Readout::GridCells { .. } => Err(config_err("grid_cells readout needs a planar tracked state")),
    }
}

fn skip_norm_of(net: &PerceptionNet) -> Option<f64> {
    match net {
        PerceptionNet::Residual(r) => Some(r.skip_norm()),
        PerceptionNet::Feedforward(_) => None,
    }
}

fn train_state_perception(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    let p = cfg.perception.as_ref().expect("checked by caller");
    let plant = cfg.plant()?;
    let stamp = stamp(cfg);
    p.map.validate()?;
    let outputs = readout_outputs(&p.readout, &plant)?;
    let states = sample_states(&p.training.sampling, Some(&p.map), sample_seed(cfg.seed))?;
    if states.is_empty() {
        return Err(config_err("training needs at least one sample"));
    }
    let region = match sampling_box(&p.training.sampling) {
        Some((lo, hi)) => format!("box {lo:?}..{hi:?}"),
        None => "arena cell centers".to_string(),
    };
    let mut inputs = Vec::with_capacity(states.len());
    let mut targets = Vec::with_capacity(states.len());
    for x in &states {
        inputs.push(p.map.apply(x)?);
        targets.push(p.readout.encode(&plant.tracked_part(x), outputs)?);
    }
    let data = TrainingSet::new(inputs, targets, region, cfg.seed)?;
    let mut net = build_net(&p.network, p.map.output_dim(), outputs, net_seed(cfg.seed))?;
    log::info!("training {} net on {} samples", net.kind(), data.len());
    let report = train(&mut net, &data, &train_config(&p.training, cfg.seed))?;
    let sup = sup_training_error(&net, &data)?;

    let probes: Vec<Vector> = cover_probe_states(&p.training.sampling, Some(&p.map), probe_seed(cfg.seed))?
        .iter()
        .map(|x| p.map.apply(x))
        .collect::<std::result::Result<_, _>>()?;
    let radius = cover_radius(&data.inputs, &probes);
    let order = check_rho_cover(&data.inputs, &probes, radius, CoverMode::PartialOrder);
    let cover = CoverSummary {
        probes: probes.len(),
        radius,
        partial_order_holds: order.holds,
    };
    let modulus = matches!(net, PerceptionNet::Residual(_)).then(|| modulus_estimate(&data, radius));
    let skip_norm = skip_norm_of(&net);

    let path = weights_path(&p.weights, out, STATE_WEIGHTS);
    let mut meta = Map::new();
    meta.insert("config_hash".into(), json!(stamp.config_hash));
    meta.insert("seed".into(), json!(cfg.seed));
    meta.insert("target".into(), json!("state_perception"));
    meta.insert("samples".into(), json!(data.len()));
    meta.insert("sup_training_error".into(), json!(sup));
    meta.insert("cover_radius".into(), json!(radius));
    if let Some(m) = modulus {
        meta.insert("modulus".into(), json!(m));
    }
    fs::write(&path, WeightFile::from_net(&net, meta).to_json()?)?;
    write_training_set(&out.join("training_set.csv"), &stamp, &data)?;
    Ok(TrainSummary {
        config_hash: stamp.config_hash,
        seed: cfg.seed,
        target: "state_perception".into(),
        weights: path.display().to_string(),
        samples: data.len(),
        input_dim: data.input_dim(),
        output_dim: outputs,
        epochs: p.training.epochs,
        final_loss: report.final_loss,
        sup_training_error: sup,
        cover: Some(cover),
        modulus,
        skip_norm,
    })
}

fn train_cost_perception(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    let c = cfg.cost_perception.as_ref().expect("checked by caller");
    let plant = cfg.plant()?;
    let stamp = stamp(cfg);
    let (lower, upper) = sampling_box(&c.training.sampling).ok_or_else(|| config_err("cost samples must be drawn from a box"))?;
    if lower.len() != plant.tracked {
        return Err(config_err(format!("cost samples need {} coordinates", plant.tracked)));
    }
    let points = sample_states(&c.training.sampling, None, sample_seed(cfg.seed))?;
    if points.is_empty() {
        return Err(config_err("training needs at least one sample"));
    }
    let data = cost_samples(&cfg.cost.psi, points, format!("box {lower:?}..{upper:?}"), cfg.seed)?;
    let mut net = build_net(&c.network, plant.tracked, 1, net_seed(cfg.seed))?;
    log::info!("training cost surrogate on {} samples", data.len());
    let report = train(&mut net, &data, &train_config(&c.training, cfg.seed))?;
    let sup = sup_training_error(&net, &data)?;
    let probes = cover_probe_states(&c.training.sampling, None, probe_seed(cfg.seed))?;
    let radius = cover_radius(&data.inputs, &probes);
    let order = check_rho_cover(&data.inputs, &probes, radius, CoverMode::PartialOrder);
    let modulus = matches!(net, PerceptionNet::Residual(_)).then(|| modulus_estimate(&data, radius));
    let skip_norm = skip_norm_of(&net);

    let path = weights_path(&c.weights, out, COST_WEIGHTS);
    let mut meta = Map::new();
    meta.insert("config_hash".into(), json!(stamp.config_hash));
    meta.insert("seed".into(), json!(cfg.seed));
    meta.insert("target".into(), json!("cost_perception"));
    meta.insert("samples".into(), json!(data.len()));
    meta.insert("sup_training_error".into(), json!(sup));
    meta.insert("cover_radius".into(), json!(radius));
    meta.insert("domain_lower".into(), json!(lower));
    meta.insert("domain_upper".into(), json!(upper));
    if let Some(m) = modulus {
        meta.insert("modulus".into(), json!(m));
    }
    fs::write(&path, WeightFile::from_net(&net, meta).to_json()?)?;
    write_training_set(&out.join("cost_training_set.csv"), &stamp, &data)?;
    Ok(TrainSummary {
        config_hash: stamp.config_hash,
        seed: cfg.seed,
        target: "cost_perception".into(),
        weights: path.display().to_string(),
        samples: data.len(),
        input_dim: plant.tracked,
        output_dim: 1,
        epochs: c.training.epochs,
        final_loss: report.final_loss,
        sup_training_error: sup,
        cover: Some(CoverSummary {
            probes: probes.len(),
            radius,
            partial_order_holds: order.holds,
        }),
        modulus,
        skip_norm,
    })
}

/// Trains every network the config describes and writes `train_report.json`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TrainSummary>> {
    if cfg.perception.is_none() && cfg.cost_perception.is_none() {
        return Err(config_err("config has no [perception] or [cost_perception] section to train"));
    }
    ensure_dir(out)?;
    let mut reports = Vec::new();
    if cfg.perception.is_some() {
        reports.push(train_state_perception(cfg, out)?);
    }
    if cfg.cost_perception.is_some() {
        reports.push(train_cost_perception(cfg, out)?);
    }
    write_json(&out.join("train_report.json"), &reports)?;
    Ok(reports)
}

fn load_weights(path: &Path) -> Result<(PerceptionNet, Map<String, Value>)> {
    if !path.exists() {
        return Err(config_err(format!(
            "weights file {} not found; run `fbopt train` with this config first",
            path.display()
        )));
    }
    let file = WeightFile::from_json(&fs::read_to_string(path)?)?;
    Ok((file.to_net()?, file.metadata))
}

fn meta_f64(meta: &Map<String, Value>, key: &str) -> Option<f64> {
    meta.get(key).and_then(Value::as_f64)
}

/// Feedback mode with the gradient-error level it is certified against.
#[derive(Debug, Clone)]
pub struct ModeSetup {
    pub mode: FeedbackMode,
    pub budget: Option<DeltaBudget>,
    /// `δ` used in the envelope; `None` when no budget is available.
    pub delta: Option<f64>,
    pub gamma: f64,
    pub notes: Vec<String>,
}

pub fn build_mode(cfg: &ExperimentConfig, problem: &Problem, dir: &Path) -> Result<ModeSetup> {
    let (plant, cost) = (&problem.plant, &problem.cost);
    let ell_hu = plant.lipschitz.ell_hu;
    let mut notes = Vec::new();
    let gamma = cfg.certificate.gamma;
    Ok(match &cfg.controller.mode {
        ModeConfig::Exact => ModeSetup {
            mode: FeedbackMode::Exact,
            budget: None,
            delta: Some(0.0),
            gamma,
            notes,
        },
        ModeConfig::InjectedError { gamma, delta, direction } => {
            let d = Vector::from_column_slice(direction);
            let norm = d.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(config_err("injected error direction must be a nonzero vector"));
            }
            ModeSetup {
                mode: FeedbackMode::InjectedError {
                    gamma: *gamma,
                    delta: *delta,
                    direction: d / norm,
                },
                budget: None,
                delta: Some(*delta),
                gamma: *gamma,
                notes,
            }
        }
        ModeConfig::StatePerception => {
            let p = cfg.perception.as_ref().expect("validated config");
            let (net, meta) = load_weights(&weights_path(&p.weights, dir, STATE_WEIGHTS))?;
            readout_outputs(&p.readout, plant)?;
            if meta.get("config_hash").and_then(Value::as_str) != Some(cfg.hash().as_str()) {
                log::warn!("state weights were trained under a different config");
            }
            let sup = meta_f64(&meta, "sup_training_error");
            let budget = match (&p.readout, sup, &net) {
                (Readout::Head { .. }, Some(sup), PerceptionNet::Feedforward(_)) => Some(DeltaBudget::StateFeedforward {
                    ell_hu,
                    ell_x: cost.ell_x,
                    n: plant.n,
                    sup_error: sup,
                }),
                (Readout::Head { .. }, Some(sup), PerceptionNet::Residual(r)) => Some(DeltaBudget::StateResnet {
                    ell_hu,
                    ell_x: cost.ell_x,
                    n_xi: p.map.output_dim(),
                    sup_error: sup,
                    modulus: meta_f64(&meta, "modulus").unwrap_or(f64::INFINITY),
                    skip_norm: r.skip_norm(),
                    rho: meta_f64(&meta, "cover_radius").unwrap_or(f64::INFINITY),
                }),
                (Readout::GridCells { arena }, ..) => {
                    notes.push(format!(
                        "grid-cell readout: no gradient-error budget; estimates are quantized to cells of width {}",
                        arena.cell_size()
                    ));
                    None
                }
                _ => {
                    notes.push("weight file has no sup_training_error: no gradient-error budget".into());
                    None
                }
            };
            if p.noise.is_some() {
                notes.push("perception noise is not part of the gradient-error budget".into());
            }
            let mut perception = StatePerception::new(p.map.clone(), net, p.readout.clone())?;
            perception.noise = p.noise;
            ModeSetup {
                mode: FeedbackMode::StatePerception(Arc::new(perception)),
                delta: if p.noise.is_some() { None } else { budget.as_ref().map(DeltaBudget::delta) },
                budget,
                gamma,
                notes,
            }
        }
        ModeConfig::CostPerception => {
            let c = cfg.cost_perception.as_ref().expect("validated config");
            let (net, meta) = load_weights(&weights_path(&c.weights, dir, COST_WEIGHTS))?;
            let (lower, upper) =
                sampling_box(&c.training.sampling).ok_or_else(|| config_err("cost samples must be drawn from a box"))?;
            let domain = ConvexRegion::boxed(lower.clone(), upper.clone())?;
            let surrogate = SurrogateGradient::new(net.clone(), c.epsilon, domain, c.resolution, c.policy)?;
            let cap = (MAX_COST_PROBES as f64).powf(1.0 / lower.len().max(1) as f64).floor() as usize;
            let probes = probe_grid(&lower, &upper, c.probes_per_dim.min(cap).max(2))?;
            let probe_set = cost_samples(&cfg.cost.psi, probes, String::new(), cfg.seed)?;
            let e_psi = surrogate.sup_error(&probe_set)?;
            let e_x_fd = match cfg.cost.psi.third_derivative_bound() {
                Some(m3) => fd_truncation_bound(m3, c.epsilon, plant.tracked),
                None => {
                    notes.push("no third-derivative bound on psi: truncation error unbounded".into());
                    f64::INFINITY
                }
            };
            let budget = match &net {
                PerceptionNet::Feedforward(_) => DeltaBudget::CostFeedforward {
                    e_u_fd: 0.0,
                    n_u: plant.n_u,
                    e_phi: 0.0,
                    e_x_fd,
                    n: plant.n,
                    e_psi,
                    ell_hu,
                    epsilon: c.epsilon,
                },
                PerceptionNet::Residual(r) => DeltaBudget::CostResnet {
                    e_u_fd: 0.0,
                    n_u: plant.n_u,
                    e_u_train: 0.0,
                    omega_phi: 0.0,
                    skip_u: 0.0,
                    e_x_fd,
                    n: plant.n,
                    e_x_train: meta_f64(&meta, "sup_training_error").unwrap_or(f64::INFINITY),
                    omega_psi: meta_f64(&meta, "modulus").unwrap_or(f64::INFINITY),
                    skip_x: r.skip_norm(),
                    ell_hu,
                    epsilon: c.epsilon,
                },
            };
            notes.push(format!("surrogate sup error on {} probes: {e_psi:e}", probe_set.len()));
            ModeSetup {
                mode: FeedbackMode::CostPerception {
                    phi: None,
                    psi: Arc::new(surrogate),
                },
                delta: Some(budget.delta()),
                budget: Some(budget),
                gamma,
                notes,
            }
        }
    })
}

/// Certificate inputs from user constants or from the plant and cost models.
pub fn certificate_inputs(cfg: &ExperimentConfig, problem: &Problem) -> Result<CertificateInputs> {
    let (plant, cost, dist) = (&problem.plant, &problem.cost, &problem.disturbance);
    let (t0, t1) = (problem.stepper.t0, problem.stepper.t1);
    let lyapunov = match &cfg.certificate.lyapunov {
        Some(user) => user.constants(),
        None => {
            let w0 = dist.value(t0);
            let (u_star, _) = OptimalTrajectoryMap::new().solve(cost, plant, &w0)?;
            plant_lyapunov_constants(plant, &u_star, &w0)?
        }
    };
    let (ell_j, provenance) = match cfg.certificate.ell_j {
        Some(v) => (v, Provenance::User),
        None if dist.is_constant() || dist.dim() == 0 => (0.0, Provenance::Analytic),
        None => (
            OptimalTrajectoryMap::new().estimate_ell_j(cost, plant, dist, t0, t1, ELL_J_SAMPLES)?,
            Provenance::Empirical,
        ),
    };
    let mut inputs = CertificateInputs::from_problem(plant, cost, lyapunov, ell_j, provenance);
    inputs.s = cfg.certificate.s;
    inputs.ell_y = cfg.certificate.ell_y;
    inputs.r0 = cfg.certificate.r0;
    Ok(inputs)
}

pub fn resolve_eta(cfg: &ExperimentConfig, inputs: Option<&CertificateInputs>) -> Result<f64> {
    match (cfg.controller.eta, cfg.controller.eta_fraction) {
        (Some(eta), _) => Ok(eta),
        (None, Some(frac)) => {
            let inputs = inputs.ok_or_else(|| config_err("eta_fraction needs a certifiable plant or user Lyapunov constants"))?;
            Ok(frac * inputs.eta_star()?)
        }
        (None, None) => Err(config_err("controller needs eta or eta_fraction")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub eta_star: f64,
    pub gamma: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub alpha: f64,
    pub lyapunov_provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub holds: bool,
    pub max_violation: f64,
    pub ess_sup_wdot: f64,
    /// `κ2 ess sup ‖ẇ‖ + κ3 δ`, the limit of the envelope.
    pub ultimate_bound: f64,
    pub kappa3_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub plant: String,
    pub mode: String,
    pub eta: f64,
    pub samples: usize,
    pub t_final: f64,
    pub tail_fraction: f64,
    pub steady_state_error: Option<f64>,
    pub final_error: Option<f64>,
    pub final_state: Vec<f64>,
    pub final_input: Vec<f64>,
    pub optimal_input: Vec<f64>,
    pub optimal_state: Vec<f64>,
    pub delta: Option<f64>,
    pub delta_budget: Option<DeltaBudget>,
    pub certificate: Option<CertificateSummary>,
    pub bound: Option<BoundSummary>,
    pub failure: Option<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: SimulationSummary,
    pub trajectory: Trajectory,
    pub certificate: Option<IssCertificate>,
}

fn last_vec(v: &[Vector]) -> Vec<f64> {
    v.last().map(|x| x.iter().copied().collect()).unwrap_or_default()
}

/// Runs one closed-loop simulation without writing anything; weights are read from `dir`.
pub fn run_simulation(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    let problem = Problem::new(cfg)?;
    let setup = build_mode(cfg, &problem, dir)?;
    let mut notes = setup.notes.clone();
    let inputs = match certificate_inputs(cfg, &problem) {
        Ok(i) => Some(i),
        Err(e) => {
            notes.push(format!("no certificate: {e}"));
            None
        }
    };
    let eta = resolve_eta(cfg, inputs.as_ref())?;
    let hash = cfg.hash();
    let certificate = inputs.as_ref().and_then(|i| match certify(i, eta, setup.gamma, setup.budget.clone()) {
        Ok(mut c) => {
            c.config_hash = hash.clone();
            notes.extend(c.notes.iter().cloned());
            Some(c)
        }
        Err(e) => {
            notes.push(format!("no certificate: {}", CliError::from(e)));
            None
        }
    });
    let controller = ControllerConfig::new(eta, setup.mode.clone(), problem.cost.region.clone())?;
    let mut trajectory = simulate_closed_loop(
        &problem.plant,
        &problem.cost,
        &controller,
        &problem.disturbance,
        &problem.x0,
        &problem.u0,
        &problem.stepper,
        cfg.seed,
        SimulationOptions::default(),
    )?;
    trajectory.meta.config_hash = hash.clone();
    let ess = problem.ess_sup_wdot();
    let bound = match (&certificate, setup.delta) {
        (Some(c), Some(delta)) => {
            let report = verify_bound(&trajectory, c, delta, ess)?;
            trajectory.bound = Some(report.envelope);
            let k = &c.constants;
            Some(BoundSummary {
                holds: report.holds,
                max_violation: report.max_violation,
                ess_sup_wdot: ess,
                ultimate_bound: k.kappa2 * ess + k.kappa3 * delta,
                kappa3_delta: k.kappa3 * delta,
            })
        }
        _ => None,
    };
    let steady = match &trajectory.failure {
        None => Some(steady_state_error(&trajectory, cfg.analysis.tail_fraction)?),
        Some(_) => None,
    };
    let summary = SimulationSummary {
        name: cfg.name.clone(),
        config_hash: hash,
        seed: cfg.seed,
        plant: problem.plant.name().to_string(),
        mode: controller.mode.name().to_string(),
        eta,
        samples: trajectory.len(),
        t_final: trajectory.times.last().copied().unwrap_or(problem.stepper.t0),
        tail_fraction: cfg.analysis.tail_fraction,
        steady_state_error: steady,
        final_error: trajectory.error.last().copied(),
        final_state: last_vec(&trajectory.states),
        final_input: last_vec(&trajectory.inputs),
        optimal_input: last_vec(&trajectory.u_star),
        optimal_state: last_vec(&trajectory.x_star),
        delta: setup.delta,
        delta_budget: setup.budget.clone(),
        certificate: certificate.as_ref().map(|c| CertificateSummary {
            eta_star: c.eta_star,
            gamma: c.gamma,
            kappa1: c.constants.kappa1,
            kappa2: c.constants.kappa2,
            kappa3: c.constants.kappa3,
            alpha: c.constants.alpha,
            lyapunov_provenance: c.inputs.lyapunov.provenance,
        }),
        bound,
        failure: trajectory.failure.as_ref().map(|e| e.to_string()),
        notes,
    };
    Ok(RunOutcome {
        summary,
        trajectory,
        certificate,
    })
}

fn trajectory_rows(traj: &Trajectory, plant: &PlantSpec) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["t".to_string()];
    header.extend((0..plant.n).map(|i| format!("x_{i}")));
    header.extend((0..plant.n_u).map(|i| format!("u_{i}")));
    header.extend((0..plant.n_u).map(|i| format!("u_star_{i}")));
    header.extend((0..plant.n).map(|i| format!("x_star_{i}")));
    header.push("z_norm".into());
    header.push("bound".into());
    let rows = (0..traj.len())
        .map(|k| {
            let mut row = vec![num(traj.times[k])];
            row.extend(traj.states[k].iter().map(|v| num(*v)));
            row.extend(traj.inputs[k].iter().map(|v| num(*v)));
            row.extend(traj.u_star[k].iter().map(|v| num(*v)));
            row.extend(traj.x_star[k].iter().map(|v| num(*v)));
            row.push(num(traj.error[k]));
            row.push(traj.bound.as_ref().map(|b| num(b[k])).unwrap_or_default());
            row
        })
        .collect();
    (header, rows)
}

fn component(vs: &[Vector], i: usize) -> Vec<f64> {
    vs.iter().map(|v| v[i]).collect()
}

fn write_trajectory_plots(out: &Path, stamp: &Stamp, traj: &Trajectory, plant: &PlantSpec, title: &str) -> Result<()> {
    let t = &traj.times;
    let mut states = LinePlot::new(format!("{title}: state"), "t", "x");
    for i in 0..plant.tracked {
        states = states
            .with(Series::new(format!("x_{i}"), t, &component(&traj.states, i)))
            .with(Series::new(format!("x*_{i}"), t, &component(&traj.x_star, i)).dashed());
    }
    write_svg(&out.join("states.svg"), stamp, &states.render())?;
    let mut inputs = LinePlot::new(format!("{title}: input"), "t", "u");
    for i in 0..plant.n_u {
        inputs = inputs
            .with(Series::new(format!("u_{i}"), t, &component(&traj.inputs, i)))
            .with(Series::new(format!("u*_{i}"), t, &component(&traj.u_star, i)).dashed());
    }
    write_svg(&out.join("inputs.svg"), stamp, &inputs.render())?;
    let mut error = LinePlot::new(format!("{title}: tracking error"), "t", "|z|")
        .log_y()
        .with(Series::new("|z(t)|", t, &traj.error));
    if let Some(b) = &traj.bound {
        error = error.with(Series::new("envelope", t, b).dashed());
    }
    write_svg(&out.join("error.svg"), stamp, &error.render())
}

/// Simulates, then writes `trajectory.csv`, `summary.json` and, with `plot`, SVG figures.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path, plot: bool) -> Result<SimulationSummary> {
    ensure_dir(out)?;
    let outcome = run_simulation(cfg, out)?;
    let stamp = stamp(cfg);
    let plant = cfg.plant()?;
    let (header, rows) = trajectory_rows(&outcome.trajectory, &plant);
    write_csv(&out.join("trajectory.csv"), &stamp, &header, &rows)?;
    write_json(&out.join("summary.json"), &outcome.summary)?;
    if plot {
        write_trajectory_plots(out, &stamp, &outcome.trajectory, &plant, &cfg.name)?;
    }
    if let Some(f) = &outcome.summary.failure {
        return Err(CliError::Numeric(format!("integration stopped early: {f}")));
    }
    Ok(outcome.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub config_hash: String,
    pub seed: u64,
    pub ess_sup_wdot: f64,
    /// Admissible initial-region radius `r′`, when `r0` is configured.
    pub initial_region_limit: Option<f64>,
    pub certificate: IssCertificate,
}

/// Builds the certificate for the configured gain and writes `certificate.json`.
pub fn cmd_certify(cfg: &ExperimentConfig, out: &Path) -> Result<CertificateReport> {
    let problem = Problem::new(cfg)?;
    let inputs = certificate_inputs(cfg, &problem)?;
    let eta = resolve_eta(cfg, Some(&inputs))?;
    let setup = build_mode(cfg, &problem, out)?;
    let mut certificate = certify(&inputs, eta, setup.gamma, setup.budget)?;
    certificate.config_hash = cfg.hash();
    certificate.notes.extend(setup.notes);
    let ess = problem.ess_sup_wdot();
    let report = CertificateReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        ess_sup_wdot: ess,
        initial_region_limit: certificate.initial_region_limit(ess, setup.delta.unwrap_or(0.0)),
        certificate,
    };
    ensure_dir(out)?;
    write_json(&out.join("certificate.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub value: f64,
    /// `ok`, or the error that stopped this cell.
    pub status: String,
    pub steady_state_error: Option<f64>,
    pub delta: Option<f64>,
    pub ultimate_bound: Option<f64>,
    /// `ultimate_bound − steady_state_error`.
    pub bound_margin: Option<f64>,
    pub bound_holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
    pub failed_cells: usize,
    /// Index of the smallest steady-state error among successful cells.
    pub minimum_index: Option<usize>,
    /// The minimum lies strictly inside the axis and every cell succeeded.
    pub interior_minimum: bool,
    /// Steady-state error never decreases along the axis.
    pub nondecreasing: bool,
}

fn sweep_cell_config(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    c.sweep = None;
    match axis {
        SweepAxis::Eta => {
            c.controller.eta = Some(value);
            c.controller.eta_fraction = None;
        }
        SweepAxis::Delta => match &mut c.controller.mode {
            ModeConfig::InjectedError { delta, .. } => *delta = value,
            _ => return Err(config_err("a delta sweep needs the injected_error mode")),
        },
        SweepAxis::Epsilon => match &mut c.cost_perception {
            Some(cp) => cp.epsilon = value,
            None => return Err(config_err("an epsilon sweep needs a [cost_perception] section")),
        },
        SweepAxis::Samples => {
            if !(value >= 1.0) || value.fract() != 0.0 {
                return Err(config_err(format!("sample counts must be positive integers, got {value}")));
            }
            match c.controller.mode {
                ModeConfig::StatePerception => {
                    let p = c.perception.as_mut().expect("validated config");
                    p.training.sampling.set_count(value as usize);
                    p.weights = None;
                }
                ModeConfig::CostPerception => {
                    let cp = c.cost_perception.as_mut().expect("validated config");
                    cp.training.sampling.set_count(value as usize);
                    cp.weights = None;
                }
                _ => return Err(config_err("a samples sweep needs a perception mode")),
            }
        }
    }
    Ok(c)
}

fn run_sweep_cell(cfg: &ExperimentConfig, axis: SweepAxis, index: usize, value: f64, out: &Path) -> Result<SimulationSummary> {
    let cell = sweep_cell_config(cfg, axis, value)?;
    let dir = if axis == SweepAxis::Samples {
        let d = out.join(format!("samples_{index}"));
        ensure_dir(&d)?;
        let mut only = cell.clone();
        match cell.controller.mode {
            ModeConfig::StatePerception => only.cost_perception = None,
            _ => only.perception = None,
        }
        cmd_train(&only, &d)?;
        d
    } else {
        out.to_path_buf()
    };
    let outcome = run_simulation(&cell, &dir)?;
    if let Some(f) = &outcome.summary.failure {
        return Err(CliError::Numeric(format!("integration stopped early: {f}")));
    }
    Ok(outcome.summary)
}

fn sweep_flags(cells: &[SweepCell]) -> (Option<usize>, bool, bool) {
    let ok: Vec<(usize, f64)> = cells
        .iter()
        .filter_map(|c| c.steady_state_error.map(|e| (c.index, e)))
        .collect();
    let minimum = ok
        .iter()
        .fold(None::<(usize, f64)>, |best, &(i, e)| match best {
            Some((_, b)) if b <= e => best,
            _ => Some((i, e)),
        })
        .map(|(i, _)| i);
    let all_ok = ok.len() == cells.len();
    let interior = all_ok && matches!(minimum, Some(i) if i > 0 && i + 1 < cells.len());
    let nondecreasing = all_ok && ok.windows(2).all(|w| w[1].1 >= w[0].1);
    (minimum, interior, nondecreasing)
}

/// Runs one simulation per axis value in parallel; failed cells are reported, not fatal.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], out: &Path) -> Result<SweepSummary> {
    check_sweep_values(values)?;
    sweep_cell_config(cfg, axis, values[0])?;
    ensure_dir(out)?;
    let cells: Vec<SweepCell> = values
        .par_iter()
        .enumerate()
        .map(|(index, &value)| match run_sweep_cell(cfg, axis, index, value, out) {
            Ok(s) => {
                let ultimate = s.bound.as_ref().map(|b| b.ultimate_bound);
                SweepCell {
                    index,
                    value,
                    status: "ok".into(),
                    steady_state_error: s.steady_state_error,
                    delta: s.delta,
                    ultimate_bound: ultimate,
                    bound_margin: ultimate.zip(s.steady_state_error).map(|(b, e)| b - e),
                    bound_holds: s.bound.as_ref().map(|b| b.holds),
                }
            }
            Err(e) => {
                log::warn!("sweep cell {index} ({value}) failed: {e}");
                SweepCell {
                    index,
                    value,
                    status: format!("error: {e}"),
                    steady_state_error: None,
                    delta: None,
                    ultimate_bound: None,
                    bound_margin: None,
                    bound_holds: None,
                }
            }
        })
        .collect();
    let (minimum_index, interior_minimum, nondecreasing) = sweep_flags(&cells);
    let stamp = stamp(cfg);
    let summary = SweepSummary {
        name: cfg.name.clone(),
        config_hash: stamp.config_hash.clone(),
        seed: cfg.seed,
        axis,
        failed_cells: cells.iter().filter(|c| c.status != "ok").count(),
        cells,
        minimum_index,
        interior_minimum,
        nondecreasing,
    };
    let header: Vec<String> = [
        "index",
        "value",
        "status",
        "steady_state_error",
        "delta",
        "ultimate_bound",
        "bound_margin",
        "bound_holds",
    ]
    .map(String::from)
    .to_vec();
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let rows: Vec<Vec<String>> = summary
        .cells
        .iter()
        .map(|c| {
            vec![
                c.index.to_string(),
                num(c.value),
                c.status.clone(),
                opt(c.steady_state_error),
                opt(c.delta),
                opt(c.ultimate_bound),
                opt(c.bound_margin),
                c.bound_holds.map(|b| b.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &stamp, &header, &rows)?;
    write_json(&out.join("sweep.json"), &summary)?;
    let xs: Vec<f64> = summary.cells.iter().map(|c| c.value).collect();
    let pick = |f: fn(&SweepCell) -> Option<f64>| -> Vec<f64> { summary.cells.iter().map(|c| f(c).unwrap_or(f64::NAN)).collect() };
    let axis_name = serde_json::to_value(axis).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    let mut chart = LinePlot::new(format!("{}: {axis_name} sweep", cfg.name), axis_name, "steady-state error")
        .log_y()
        .with(Series::new("steady-state error", &xs, &pick(|c| c.steady_state_error)))
        .with(Series::new("ultimate bound", &xs, &pick(|c| c.ultimate_bound)).dashed());
    let positive = xs.iter().all(|x| *x > 0.0);
    let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), x| (a.min(*x), b.max(*x)));
    if positive && hi / lo > 50.0 {
        chart = chart.log_x();
    }
    write_svg(&out.join("sweep.svg"), &stamp, &chart.render())?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRun {
    pub disturbance: String,
    pub eta_fraction: f64,
    pub eta: f64,
    pub delta: f64,
    pub samples: usize,
    pub holds: bool,
    pub max_violation: f64,
    /// The same envelope checked on `(x − h(u, w), u − u*)`.
    pub lyapunov_holds: bool,
    pub lyapunov_max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    /// Gain ceiling per disturbance, in configuration order.
    pub eta_star: Vec<f64>,
    pub runs: Vec<ValidationRun>,
    pub all_hold: bool,
    pub lyapunov_all_hold: bool,
}

fn disturbance_label(kind: &DisturbanceKind) -> &'static str {
    match kind {
        DisturbanceKind::Constant { .. } => "constant",
        DisturbanceKind::Sinusoid { .. } => "sinusoid",
        DisturbanceKind::PiecewiseConstant { .. } => "piecewise_constant",
    }
}

/// Checks the certificate envelope over the `[validation]` grid of gains, errors and disturbances.
pub fn cmd_validate(cfg: &ExperimentConfig, out: &Path) -> Result<ValidationSummary> {
    let v = cfg.validation.as_ref().ok_or_else(|| config_err("config has no [validation] section"))?;
    if v.eta_fractions.is_empty() || v.deltas.is_empty() || v.disturbances.is_empty() {
        return Err(config_err("validation needs gains, deltas and disturbances"));
    }
    let direction = Vector::from_column_slice(&v.direction);
    if !(direction.norm() > 0.0) {
        return Err(config_err("validation direction must be a nonzero vector"));
    }
    let direction = direction.normalize();
    let mut cases = Vec::new();
    let mut ceilings = Vec::new();
    for kind in &v.disturbances {
        let mut dcfg = cfg.clone();
        dcfg.disturbance = Some(kind.clone());
        let problem = Problem::new(&dcfg)?;
        let inputs = certificate_inputs(&dcfg, &problem)?;
        ceilings.push(inputs.eta_star()?);
        let problem = Arc::new(problem);
        let inputs = Arc::new(inputs);
        for &frac in &v.eta_fractions {
            for &delta in &v.deltas {
                cases.push((kind.clone(), problem.clone(), inputs.clone(), frac, delta));
            }
        }
    }
    let runs: Vec<ValidationRun> = cases
        .par_iter()
        .map(|(kind, problem, inputs, frac, delta)| -> Result<ValidationRun> {
            let eta = frac * inputs.eta_star()?;
            let certificate = certify(inputs, eta, 0.0, None)?;
            let mode = FeedbackMode::InjectedError {
                gamma: 0.0,
                delta: *delta,
                direction: direction.clone(),
            };
            let controller = ControllerConfig::new(eta, mode, problem.cost.region.clone())?;
            let traj = simulate_closed_loop(
                &problem.plant,
                &problem.cost,
                &controller,
                &problem.disturbance,
                &problem.x0,
                &problem.u0,
                &problem.stepper,
                cfg.seed,
                SimulationOptions::default(),
            )?;
            if let Some(f) = &traj.failure {
                return Err(CliError::Numeric(format!("integration stopped early: {f}")));
            }
            let ess = problem.ess_sup_wdot();
            let report = verify_bound(&traj, &certificate, *delta, ess)?;
            let lyap_errors = lyapunov_coordinate_error(&traj, &problem.plant, &problem.disturbance);
            let lyap = verify_envelope(&traj.times, &lyap_errors, &certificate, *delta, ess)?;
            Ok(ValidationRun {
                disturbance: disturbance_label(kind).into(),
                eta_fraction: *frac,
                eta,
                delta: *delta,
                samples: traj.len(),
                holds: report.holds,
                max_violation: report.max_violation,
                lyapunov_holds: lyap.holds,
                lyapunov_max_violation: lyap.max_violation,
            })
        })
        .collect::<Result<_>>()?;
    let stamp = stamp(cfg);
    let summary = ValidationSummary {
        name: cfg.name.clone(),
        config_hash: stamp.config_hash.clone(),
        seed: cfg.seed,
        eta_star: ceilings,
        all_hold: runs.iter().all(|r| r.holds),
        lyapunov_all_hold: runs.iter().all(|r| r.lyapunov_holds),
        runs,
    };
    ensure_dir(out)?;
    let header: Vec<String> = [
        "disturbance",
        "eta_fraction",
        "eta",
        "delta",
        "samples",
        "holds",
        "max_violation",
        "lyapunov_holds",
        "lyapunov_max_violation",
    ]
    .map(String::from)
    .to_vec();
    let rows: Vec<Vec<String>> = summary
        .runs
        .iter()
        .map(|r| {
            vec![
                r.disturbance.clone(),
                num(r.eta_fraction),
                num(r.eta),
                num(r.delta),
                r.samples.to_string(),
                r.holds.to_string(),
                num(r.max_violation),
                r.lyapunov_holds.to_string(),
                num(r.lyapunov_max_violation),
            ]
        })
        .collect();
    write_csv(&out.join("validation.csv"), &stamp, &header, &rows)?;
    write_json(&out.join("validation.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub recipe: String,
    pub config_hash: String,
    pub seed: u64,
    /// Artifact files written, relative to the output directory.
    pub artifacts: BTreeMap<String, Vec<String>>,
}

/// Runs a checked-in recipe end to end: train, validate, certify, simulate and sweep as configured.
pub fn cmd_reproduce(recipe: &str, seed: Option<u64>, out: &Path, plot: bool) -> Result<ReproduceSummary> {
    let mut cfg = recipes::load(recipe)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    ensure_dir(out)?;
    let stamp = stamp(&cfg);
    let text = toml::to_string(&cfg).map_err(|e| config_err(e.to_string()))?;
    fs::write(out.join("config.toml"), format!("{}\n{text}", stamp.comment_line()))?;
    let mut artifacts = BTreeMap::new();
    artifacts.insert("config".to_string(), vec!["config.toml".to_string()]);
    if cfg.perception.is_some() || cfg.cost_perception.is_some() {
        cmd_train(&cfg, out)?;
        let mut files = vec!["train_report.json".to_string()];
        if cfg.perception.is_some() {
            files.push(STATE_WEIGHTS.into());
        }
        if cfg.cost_perception.is_some() {
            files.push(COST_WEIGHTS.into());
        }
        artifacts.insert("train".into(), files);
    }
    if cfg.validation.is_some() {
        cmd_validate(&cfg, out)?;
        artifacts.insert("validate".into(), vec!["validation.csv".into(), "validation.json".into()]);
    }
    let problem = Problem::new(&cfg)?;
    match certificate_inputs(&cfg, &problem) {
        Ok(_) => {
            cmd_certify(&cfg, out)?;
            artifacts.insert("certify".into(), vec!["certificate.json".into()]);
        }
        Err(e) => log::warn!("skipping certification: {e}"),
    }
    cmd_simulate(&cfg, out, plot)?;
    let mut files = vec!["trajectory.csv".to_string(), "summary.json".to_string()];
    if plot {
        files.extend(["states.svg", "inputs.svg", "error.svg"].map(String::from));
    }
    artifacts.insert("simulate".into(), files);
    if let Some(s) = &cfg.sweep {
        cmd_sweep(&cfg, s.axis, &s.values, out)?;
        artifacts.insert(
            "sweep".into(),
            ["sweep.csv", "sweep.json", "sweep.svg"].map(String::from).to_vec(),
        );
    }
    let summary = ReproduceSummary {
        recipe: recipe.to_string(),
        config_hash: stamp.config_hash,
        seed: cfg.seed,
        artifacts,
    };
    write_json(&out.join("reproduce.json"), &summary)?;
    Ok(summary)
}
