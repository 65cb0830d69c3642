//! Experiment configuration: one TOML file per experiment.

use std::path::{Path, PathBuf};

use fbopt_core::certification::{LyapunovConstants, Provenance};
use fbopt_core::numerics::{ConvexRegion, StepperConfig};
use fbopt_core::objective::{CostFn, CostSpec};
use fbopt_core::perception::{Activation, GenerativeMap, PerceptionNoise, Readout};
use fbopt_core::plants::{lti_plant, sis_plant, stabilized_unicycle, DisturbanceKind, DisturbanceSignal, PlantSpec};
use fbopt_core::surrogate::DomainPolicy;
use fbopt_core::{Matrix, Vector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub plant: PlantConfig,
    pub cost: CostConfig,
    pub controller: ControllerSection,
    #[serde(default)]
    pub disturbance: Option<DisturbanceKind>,
    pub initial: InitialConfig,
    pub stepper: StepperSection,
    #[serde(default)]
    pub perception: Option<PerceptionSection>,
    #[serde(default)]
    pub cost_perception: Option<CostPerceptionSection>,
    #[serde(default)]
    pub certificate: CertificateSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub validation: Option<ValidationSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    /// Row-major matrices; `e` may be omitted when there is no disturbance.
    Lti {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        #[serde(default)]
        e: Vec<Vec<f64>>,
    },
    Sis { beta: f64, gamma: f64, mu: f64 },
    Unicycle { gain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub phi: CostFn,
    pub psi: CostFn,
    /// Constraint set `C`; defaults to the plant's admissible input box.
    #[serde(default)]
    pub region: Option<ConvexRegion>,
    #[serde(default)]
    pub mu_u: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    /// Absolute gain; exclusive with `eta_fraction`.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Gain as a fraction of the certified ceiling `η*`.
    #[serde(default)]
    pub eta_fraction: Option<f64>,
    pub mode: ModeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeConfig {
    Exact,
    InjectedError {
        #[serde(default)]
        gamma: f64,
        delta: f64,
        direction: Vec<f64>,
    },
    StatePerception,
    CostPerception,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Initial state; omitted means the equilibrium `h(u0, w(t0))`.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub u0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSection {
    pub dt: f64,
    #[serde(default)]
    pub t0: f64,
    pub t1: f64,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// Hidden widths; input and output sizes follow from the data.
    Feedforward { hidden: Vec<usize>, activation: Activation },
    Residual {
        hidden: usize,
        blocks: usize,
        activation: Activation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingConfig {
    /// `per_dim` evenly spaced points per coordinate of the box.
    Grid { lower: Vec<f64>, upper: Vec<f64>, per_dim: usize },
    /// `count` uniform random points in the box.
    Uniform { lower: Vec<f64>, upper: Vec<f64>, count: usize },
    /// Every arena cell center at `headings` evenly spaced orientations.
    ArenaCells { headings: usize },
}

impl SamplingConfig {
    pub fn count(&self, grid: usize) -> usize {
        match self {
            SamplingConfig::Grid { lower, per_dim, .. } => per_dim.pow(lower.len() as u32),
            SamplingConfig::Uniform { count, .. } => *count,
            SamplingConfig::ArenaCells { headings } => grid * grid * headings,
        }
    }

    pub fn set_count(&mut self, n: usize) {
        match self {
            SamplingConfig::Grid { lower, per_dim, .. } => {
                *per_dim = (n as f64).powf(1.0 / lower.len().max(1) as f64).round().max(2.0) as usize
            }
            SamplingConfig::Uniform { count, .. } => *count = n,
            SamplingConfig::ArenaCells { headings } => *headings = n.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub sampling: SamplingConfig,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub final_learning_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionSection {
    pub map: GenerativeMap,
    pub readout: Readout,
    pub network: NetworkSpec,
    pub training: TrainingSection,
    #[serde(default)]
    pub noise: Option<PerceptionNoise>,
    /// Weight file; defaults to `weights.json` in the output directory.
    #[serde(default)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostPerceptionSection {
    pub network: NetworkSpec,
    /// Samples of `ψ`; the sampled box is also the surrogate's domain.
    pub training: TrainingSection,
    pub epsilon: f64,
    #[serde(default)]
    pub resolution: Option<f64>,
    #[serde(default)]
    pub policy: DomainPolicy,
    /// Evenly spaced points per coordinate used to measure `ê`.
    #[serde(default = "default_probes")]
    pub probes_per_dim: usize,
    #[serde(default)]
    pub weights: Option<PathBuf>,
}

fn default_probes() -> usize {
    2001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserLyapunov {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub d6: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default)]
    pub ell_y: Option<f64>,
    /// User value of `ℓ_J`; estimated from the disturbance when omitted.
    #[serde(default)]
    pub ell_j: Option<f64>,
    #[serde(default)]
    pub r0: Option<f64>,
    #[serde(default)]
    pub lyapunov: Option<UserLyapunov>,
    #[serde(default)]
    pub gamma: f64,
}

fn default_s() -> f64 {
    fbopt_core::certification::DEFAULT_S
}

impl Default for CertificateSection {
    fn default() -> Self {
        Self {
            s: default_s(),
            ell_y: None,
            ell_j: None,
            r0: None,
            lyapunov: None,
            gamma: 0.0,
        }
    }
}

impl UserLyapunov {
    pub fn constants(&self) -> LyapunovConstants {
        LyapunovConstants {
            d1: self.d1,
            d2: self.d2,
            d3: self.d3,
            d4: self.d4,
            d5: self.d5,
            d6: self.d6,
            provenance: Provenance::User,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Fraction of the horizon read as steady state.
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
}

fn default_tail() -> f64 {
    0.1
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            tail_fraction: default_tail(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Eta,
    Delta,
    Epsilon,
    Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Grid of injected-error runs compared against the certificate envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    pub eta_fractions: Vec<f64>,
    pub deltas: Vec<f64>,
    pub disturbances: Vec<DisturbanceKind>,
    pub direction: Vec<f64>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn matrix(rows: &[Vec<f64>], name: &str, ncols_if_empty: usize, nrows_if_empty: usize) -> Result<Matrix, CliError> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(nrows_if_empty, ncols_if_empty));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(config_err(format!("matrix {name} has ragged rows")));
    }
    Ok(Matrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (self.controller.eta, self.controller.eta_fraction) {
            (Some(_), Some(_)) => return Err(config_err("set only one of controller.eta and controller.eta_fraction")),
            (None, None) => return Err(config_err("controller needs eta or eta_fraction")),
            _ => {}
        }
        for cost in [&self.cost.phi, &self.cost.psi] {
            if let CostFn::Quadratic { weights, reference } = cost {
                CostFn::quadratic(weights.clone(), reference.clone())?;
            }
        }
        match self.controller.mode {
            ModeConfig::StatePerception if self.perception.is_none() => {
                return Err(config_err("state_perception mode needs a [perception] section"))
            }
            ModeConfig::CostPerception if self.cost_perception.is_none() => {
                return Err(config_err("cost_perception mode needs a [cost_perception] section"))
            }
            _ => {}
        }
        if let Some(p) = &self.perception {
            check_training(&p.training)?;
        }
        if let Some(c) = &self.cost_perception {
            check_training(&c.training)?;
            if !matches!(c.training.sampling, SamplingConfig::Grid { .. } | SamplingConfig::Uniform { .. }) {
                return Err(config_err("cost samples must be drawn from a box"));
            }
        }
        if let Some(s) = &self.sweep {
            check_sweep_values(&s.values)?;
        }
        let plant = self.plant()?;
        let cost = self.cost(&plant)?;
        if self.initial.u0.len() != plant.n_u {
            return Err(config_err(format!("initial.u0 needs {} entries", plant.n_u)));
        }
        if let Some(x0) = &self.initial.x0 {
            if x0.len() != plant.n {
                return Err(config_err(format!("initial.x0 needs {} entries", plant.n)));
            }
        }
        self.disturbance()?;
        self.stepper()?;
        let _ = cost;
        Ok(())
    }

    pub fn plant(&self) -> Result<PlantSpec, CliError> {
        Ok(match &self.plant {
            PlantConfig::Lti { a, b, e } => {
                let a = matrix(a, "a", 0, 0)?;
                let b = matrix(b, "b", 0, a.nrows())?;
                let e = matrix(e, "e", 0, a.nrows())?;
                lti_plant(a, b, e)?
            }
            PlantConfig::Sis { beta, gamma, mu } => sis_plant(*beta, *gamma, *mu)?,
            PlantConfig::Unicycle { gain } => stabilized_unicycle(*gain)?,
        })
    }

    pub fn cost(&self, plant: &PlantSpec) -> Result<CostSpec, CliError> {
        let region = match (&self.cost.region, &plant.input_box) {
            (Some(r), _) => r.clone(),
            (None, Some(b)) => b.clone(),
            (None, None) => ConvexRegion::unbounded(plant.n_u),
        };
        Ok(CostSpec::new(self.cost.phi.clone(), self.cost.psi.clone(), region, self.cost.mu_u)?)
    }

    pub fn disturbance(&self) -> Result<DisturbanceSignal, CliError> {
        Ok(match &self.disturbance {
            Some(kind) => DisturbanceSignal::new(kind.clone())?,
            None => DisturbanceSignal::none(),
        })
    }

    pub fn stepper(&self) -> Result<StepperConfig, CliError> {
        let s = &self.stepper;
        Ok(StepperConfig::new(s.dt, s.t0, s.t1, s.record_every)?)
    }

    pub fn initial_input(&self) -> Vector {
        Vector::from_column_slice(&self.initial.u0)
    }

    /// `x0`, or the equilibrium of the initial input.
    pub fn initial_state(&self, plant: &PlantSpec, disturbance: &DisturbanceSignal) -> Vector {
        match &self.initial.x0 {
            Some(x) => Vector::from_column_slice(x),
            None => plant.steady_state(&self.initial_input(), &disturbance.value(self.stepper.t0)),
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

fn check_training(t: &TrainingSection) -> Result<(), CliError> {
    if t.sampling.count(1) == 0 {
        return Err(config_err("training needs at least one sample"));
    }
    if t.epochs == 0 || t.batch == 0 {
        return Err(config_err("training epochs and batch must be >= 1"));
    }
    Ok(())
}

pub fn check_sweep_values(values: &[f64]) -> Result<(), CliError> {
    if values.len() < 2 {
        return Err(config_err("a sweep needs at least two axis values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(config_err("sweep values must be finite"));
    }
    Ok(())
}
