//! Generative maps `ξ = q(x)` and the state-estimation pipeline `x̂ = p̂(q(x))`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{project_head, PerceptionNet};
use crate::linalg::check_len;
use crate::{Error, Result, Vector};

/// Intensity of the pixel marking the robot heading.
pub const HEADING_INTENSITY: f64 = 0.5;

/// `ξ_j = exp(−Σ_k (x_k − μ_jk)² / (2 σ_k²))`.
pub fn gaussian_basis_map(x: &Vector, means: &[Vec<f64>], variance: &[f64]) -> Result<Vector> {
    if variance.len() != x.len() {
        return Err(Error::dim(x.len(), variance.len(), "basis variance"));
    }
    let mut out = Vector::zeros(means.len());
    for (j, mean) in means.iter().enumerate() {
        if mean.len() != x.len() {
            return Err(Error::dim(x.len(), mean.len(), "basis mean"));
        }
        let q: f64 = x
            .iter()
            .zip(mean)
            .zip(variance)
            .map(|((xi, m), s2)| (xi - m).powi(2) / (2.0 * s2))
            .sum();
        out[j] = (-q).exp();
    }
    Ok(out)
}

/// Square arena `[lower, upper]²` rasterized into `grid × grid` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub lower: f64,
    pub upper: f64,
    pub grid: usize,
}

impl Arena {
    pub fn cell_size(&self) -> f64 {
        (self.upper - self.lower) / self.grid as f64
    }

    /// Column/row cell of a coordinate, with the upper edge folded into the last cell.
    pub fn cell(&self, coord: f64) -> Result<usize> {
        if !(coord >= self.lower && coord <= self.upper) {
            return Err(Error::OutsideDomain(format!(
                "coordinate {coord} outside arena [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok((((coord - self.lower) / self.cell_size()).floor() as usize).min(self.grid - 1))
    }

    pub fn cell_center(&self, index: usize) -> f64 {
        self.lower + (index as f64 + 0.5) * self.cell_size()
    }
}

/// Grayscale image of the robot, flattened row-major (rows follow `b`, columns `a`).
///
/// A 2×2 blob of intensity 1 starts at the robot's cell and a single
/// [`HEADING_INTENSITY`] pixel sits next to it in the quantized heading
/// direction; both are clipped at the border. A box blur of `blur` cells
/// then spreads each pixel's mass uniformly, clamping at the edges so the
/// pixel sum is preserved.
pub fn render_robot_image(a: f64, b: f64, theta: f64, arena: &Arena, blur: usize) -> Result<Vector> {
    let n = arena.grid;
    let (col, row) = (arena.cell(a)?, arena.cell(b)?);
    let mut img = vec![0.0; n * n];
    for dr in 0..2 {
        for dc in 0..2 {
            if row + dr < n && col + dc < n {
                img[(row + dr) * n + col + dc] = 1.0;
            }
        }
    }
    // Quadrant 0: +a, 1: +b, 2: −a, 3: −b.
    let quadrant = ((theta.rem_euclid(2.0 * PI) + PI / 4.0) / (PI / 2.0)).floor() as usize % 4;
    let (mr, mc): (isize, isize) = match quadrant {
        0 => (0, 2),
        1 => (2, 0),
        2 => (0, -1),
        _ => (-1, 0),
    };
    let (r, c) = (row as isize + mr, col as isize + mc);
    if (0..n as isize).contains(&r) && (0..n as isize).contains(&c) {
        img[r as usize * n + c as usize] = HEADING_INTENSITY;
    }
    if blur == 0 {
        return Ok(Vector::from_vec(img));
    }
    let side = 2 * blur + 1;
    let share = 1.0 / (side * side) as f64;
    let mut out = vec![0.0; n * n];
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    for r in 0..n {
        for c in 0..n {
            let mass = img[r * n + c];
            if mass == 0.0 {
                continue;
            }
            for dr in -(blur as isize)..=blur as isize {
                for dc in -(blur as isize)..=blur as isize {
                    out[clamp(r as isize + dr) * n + clamp(c as isize + dc)] += mass * share;
                }
            }
        }
    }
    Ok(Vector::from_vec(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerativeMap {
    /// One Gaussian bump per entry of `means`, with diagonal `variance`.
    GaussianBasis { means: Vec<Vec<f64>>, variance: Vec<f64> },
    /// Overhead image of a unicycle with state `(a, b, θ)`.
    RobotImage { arena: Arena, blur: usize },
}

impl GenerativeMap {
    pub fn validate(&self) -> Result<()> {
        match self {
            GenerativeMap::GaussianBasis { means, variance } => {
                if means.is_empty() || means.iter().flatten().any(|m| !m.is_finite()) {
                    return Err(Error::InvalidParameter("basis means must be finite and nonempty".into()));
                }
                if variance.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::InvalidParameter("basis variance must be positive".into()));
                }
            }
            GenerativeMap::RobotImage { arena, .. } => {
                if arena.grid < 4 || !(arena.upper > arena.lower) {
                    return Err(Error::InvalidParameter("robot image needs grid >= 4 and a nonempty arena".into()));
                }
            }
        }
        Ok(())
    }

    /// Dimension `n_ξ` of the perception signal.
    pub fn output_dim(&self) -> usize {
        match self {
            GenerativeMap::GaussianBasis { means, .. } => means.len(),
            GenerativeMap::RobotImage { arena, .. } => arena.grid * arena.grid,
        }
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        match self {
            GenerativeMap::GaussianBasis { means, variance } => gaussian_basis_map(x, means, variance),
            GenerativeMap::RobotImage { arena, blur } => {
                check_len(x, 3, "robot state")?;
                render_robot_image(x[0], x[1], x[2], arena, *blur)
            }
        }
    }
}

/// Conversion from network output to a state estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Readout {
    /// The first `n` network outputs.
    Head { n: usize },
    /// Row and column one-hot halves decoded by argmax to cell centers `(a, b)`.
    GridCells { arena: Arena },
}

impl Readout {
    pub fn decode(&self, y: &Vector) -> Result<Vector> {
        match self {
            Readout::Head { n } => project_head(y, *n),
            Readout::GridCells { arena } => {
                let g = arena.grid;
                check_len(y, 2 * g, "grid classifier output")?;
                let argmax = |s: &[f64]| {
                    s.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best })
                        .0
                };
                let col = argmax(&y.as_slice()[..g]);
                let row = argmax(&y.as_slice()[g..]);
                Ok(Vector::from_column_slice(&[arena.cell_center(col), arena.cell_center(row)]))
            }
        }
    }

    /// Training target for a state under this readout.
    pub fn encode(&self, x: &Vector, outputs: usize) -> Result<Vector> {
        match self {
            Readout::Head { n } => super::lift(&project_head(x, *n)?, outputs),
            Readout::GridCells { arena } => {
                let g = arena.grid;
                let mut y = Vector::zeros(2 * g);
                y[arena.cell(x[0])?] = 1.0;
                y[g + arena.cell(x[1])?] = 1.0;
                Ok(y)
            }
        }
    }
}

/// Bounded additive noise on the perception signal, held piecewise constant in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionNoise {
    pub amplitude: f64,
    pub hold: f64,
    pub seed: u64,
}

/// `x̂ = readout(p̂(q(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePerception {
    pub map: GenerativeMap,
    pub net: PerceptionNet,
    pub readout: Readout,
    pub noise: Option<PerceptionNoise>,
}

impl StatePerception {
    pub fn new(map: GenerativeMap, net: PerceptionNet, readout: Readout) -> Result<Self> {
        map.validate()?;
        if net.input_dim() != map.output_dim() {
            return Err(Error::dim(map.output_dim(), net.input_dim(), "network input vs perception signal"));
        }
        Ok(Self {
            map,
            net,
            readout,
            noise: None,
        })
    }

    /// Estimate of the tracked state block at time `t`.
    pub fn estimate(&self, t: f64, x: &Vector) -> Result<Vector> {
        let mut xi = self.map.apply(x)?;
        if let Some(noise) = &self.noise {
            let slot = (t / noise.hold).floor() as i64 as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ slot.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            for v in xi.iter_mut() {
                *v += noise.amplitude * rng.gen_range(-1.0..=1.0);
            }
        }
        self.readout.decode(&self.net.forward(&xi)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ARENA: Arena = Arena {
        lower: -2.0,
        upper: 2.0,
        grid: 16,
    };

    #[test]
    fn gaussian_basis_examples() {
        let means = vec![vec![1.0], vec![5.0], vec![9.0], vec![13.0]];
        let xi = gaussian_basis_map(&Vector::from_element(1, 1.0), &means, &[1.0]).unwrap();
        assert_eq!(xi.len(), 4);
        assert_eq!(xi[0], 1.0);
        assert!((xi[1] - (-8.0f64).exp()).abs() < 1e-15);
        assert!((xi[1] - 3.355e-4).abs() < 1e-7);
    }

    #[test]
    fn robot_image_construction() {
        let img = render_robot_image(0.0, 0.0, 0.0, &ARENA, 0).unwrap();
        assert_eq!(img.iter().filter(|v| **v == 1.0).count(), 4);
        let a = render_robot_image(0.01, 0.02, 0.3, &ARENA, 1).unwrap();
        let b = render_robot_image(0.2, 0.2, 0.3, &ARENA, 1).unwrap();
        assert_eq!(a, b);
        for (x, y) in [(0.0, 0.0), (-2.0, -2.0), (1.99, -1.9), (2.0, 2.0)] {
            let raw = render_robot_image(x, y, 1.0, &ARENA, 0).unwrap().sum();
            let blurred = render_robot_image(x, y, 1.0, &ARENA, 1).unwrap().sum();
            assert!((raw - blurred).abs() < 1e-9);
        }
        assert!(render_robot_image(2.5, 0.0, 0.0, &ARENA, 0).is_err());
    }

    #[test]
    fn robot_image_injective_over_cells() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..16 {
            for j in 0..16 {
                let img = render_robot_image(ARENA.cell_center(i), ARENA.cell_center(j), 0.0, &ARENA, 0).unwrap();
                let key: Vec<u64> = img.iter().map(|v| v.to_bits()).collect();
                assert!(seen.insert(key), "cells ({i}, {j}) collide");
            }
        }
    }

    #[test]
    fn grid_readout_round_trip() {
        let r = Readout::GridCells { arena: ARENA };
        let x = Vector::from_column_slice(&[-0.6, 1.3, 0.0]);
        let y = r.encode(&x, 32).unwrap();
        let d = r.decode(&y).unwrap();
        assert!((d[0] - x[0]).abs() <= ARENA.cell_size() / 2.0);
        assert!((d[1] - x[1]).abs() <= ARENA.cell_size() / 2.0);
    }
}
