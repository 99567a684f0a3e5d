//! Model families: open or periodic 2D grids, 3D ±J cubes and bipartite RBMs
//! with Gabor-filter couplings.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::model::IsingModel;

pub use crate::model::{load_model, save_model};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Boundary {
    #[default]
    Open,
    Periodic,
}

fn meta(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

fn check_side(side: usize, boundary: Boundary) -> Result<()> {
    if side < 1 {
        return Err(Error::Argument("side must be at least 1".into()));
    }
    if boundary == Boundary::Periodic && side < 3 {
        return Err(Error::Argument(
            "periodic boundaries need side >= 3 to avoid duplicate edges".into(),
        ));
    }
    Ok(())
}

/// Nearest-neighbour `side × side` grid with uniform coupling and field.
/// Variable `(r, c)` has index `r * side + c`.
pub fn grid2d(side: usize, coupling: f64, field: f64) -> Result<IsingModel> {
    grid2d_with(side, coupling, field, Boundary::Open)
}

pub fn grid2d_with(side: usize, coupling: f64, field: f64, boundary: Boundary) -> Result<IsingModel> {
    check_side(side, boundary)?;
    let m = side * side;
    let mut edges = Vec::with_capacity(2 * m);
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            if c + 1 < side {
                edges.push((i, i + 1, coupling));
            } else if boundary == Boundary::Periodic {
                edges.push((r * side, i, coupling));
            }
            if r + 1 < side {
                edges.push((i, i + side, coupling));
            } else if boundary == Boundary::Periodic {
                edges.push((c, i, coupling));
            }
        }
    }
    let model = IsingModel::new(m, edges, vec![field; m])?;
    Ok(model.with_meta(meta(json!({
        "generator": "grid2d",
        "side": side,
        "coupling": coupling,
        "field": field,
        "periodic": boundary == Boundary::Periodic,
    }))))
}

/// `side³` cube with nearest-neighbour couplings drawn independently from
/// `{-1, +1}` and zero fields. Variable `(x, y, z)` has index
/// `(x * side + y) * side + z`.
pub fn cube3d_pm_j(side: usize, seed: u64) -> Result<IsingModel> {
    cube3d_pm_j_with(side, seed, Boundary::Open)
}

pub fn cube3d_pm_j_with(side: usize, seed: u64, boundary: Boundary) -> Result<IsingModel> {
    check_side(side, boundary)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = |x: usize, y: usize, z: usize| (x * side + y) * side + z;
    let m = side * side * side;
    let mut edges = Vec::with_capacity(3 * m);
    for x in 0..side {
        for y in 0..side {
            for z in 0..side {
                let i = idx(x, y, z);
                let nbrs = [
                    (x + 1 < side).then(|| idx(x + 1, y, z)),
                    (y + 1 < side).then(|| idx(x, y + 1, z)),
                    (z + 1 < side).then(|| idx(x, y, z + 1)),
                ];
                let wraps = [idx(0, y, z), idx(x, 0, z), idx(x, y, 0)];
                for (nb, wrap) in nbrs.into_iter().zip(wraps) {
                    let j = match (nb, boundary) {
                        (Some(j), _) => j,
                        (None, Boundary::Periodic) => wrap,
                        (None, Boundary::Open) => continue,
                    };
                    let coupling = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    edges.push((i, j, coupling));
                }
            }
        }
    }
    let model = IsingModel::new(m, edges, vec![0.0; m])?;
    Ok(model.with_meta(meta(json!({
        "generator": "cube3d_pm_j",
        "side": side,
        "seed": seed,
        "periodic": boundary == Boundary::Periodic,
    }))))
}

/// Parameters of one Gabor filter over a square image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaborParams {
    pub center: (f64, f64),
    pub orientation: f64,
    pub frequency: f64,
    pub phase: f64,
    pub envelope: f64,
    pub aspect: f64,
    pub amplitude: f64,
}

impl GaborParams {
    /// Draws a filter with unit amplitude: center uniform over the image,
    /// orientation in `[0, π)`, frequency in `[0.05, 0.25]` cycles/pixel,
    /// phase in `[0, 2π)`, envelope in `[2, 6]` px and aspect in `[0.5, 1]`.
    pub fn random<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Self {
        let hi = (side.max(1) - 1) as f64;
        Self {
            center: (rng.random_range(0.0..=hi), rng.random_range(0.0..=hi)),
            orientation: rng.random_range(0.0..PI),
            frequency: rng.random_range(0.05..=0.25),
            phase: rng.random_range(0.0..2.0 * PI),
            envelope: rng.random_range(2.0..=6.0),
            aspect: rng.random_range(0.5..=1.0),
            amplitude: 1.0,
        }
    }

    /// `A exp(-(u'^2 + κ^2 v'^2) / (2σ^2)) cos(2π f u' + φ)` at pixel `(u, v)`,
    /// with `(u', v')` the offset from the center rotated by the orientation.
    pub fn value(&self, u: f64, v: f64) -> f64 {
        let (du, dv) = (u - self.center.0, v - self.center.1);
        let (s, c) = self.orientation.sin_cos();
        let up = du * c + dv * s;
        let vp = -du * s + dv * c;
        let env = (-(up * up + self.aspect * self.aspect * vp * vp) / (2.0 * self.envelope * self.envelope)).exp();
        self.amplitude * env * (2.0 * PI * self.frequency * up + self.phase).cos()
    }

    /// Filter over a `side × side` image in row-major order (`u` = column).
    pub fn render(&self, side: usize) -> Vec<f64> {
        (0..side * side)
            .map(|p| self.value((p % side) as f64, (p / side) as f64))
            .collect()
    }
}

/// Gabor filter bank with each filter rescaled to unit L2 norm.
pub fn gabor_weights(num_visible: usize, num_hidden: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let side = (num_visible as f64).sqrt().round() as usize;
    if side * side != num_visible {
        return Err(Error::Argument(format!(
            "num_visible = {num_visible} is not a perfect square; load weights from a file instead"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_hidden)
        .map(|h| {
            let mut params = GaborParams::random(side, &mut rng);
            let raw = params.render(side);
            let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::Domain(format!("Gabor filter {h} vanished on the grid")));
            }
            params.amplitude = 1.0 / norm;
            Ok(params.render(side))
        })
        .collect()
}

/// Bipartite model from a `num_hidden × num_visible` weight matrix. Visible
/// units take indices `0..V`, hidden unit `h` takes `V + h`; fields are zero.
pub fn rbm_from_weights(weights: &[Vec<f64>]) -> Result<IsingModel> {
    let num_hidden = weights.len();
    let num_visible = weights.first().map_or(0, Vec::len);
    if let Some(h) = weights.iter().position(|row| row.len() != num_visible) {
        return Err(Error::Argument(format!(
            "weight row {h} has {} columns, expected {num_visible}",
            weights[h].len()
        )));
    }
    let m = num_visible + num_hidden;
    let mut edges = Vec::with_capacity(num_visible * num_hidden);
    for v in 0..num_visible {
        for (h, row) in weights.iter().enumerate() {
            edges.push((v, num_visible + h, row[v]));
        }
    }
    IsingModel::new(m, edges, vec![0.0; m])
}

/// RBM with random Gabor couplings; `num_visible` must be a perfect square.
pub fn rbm_gabor(num_visible: usize, num_hidden: usize, seed: u64) -> Result<IsingModel> {
    let weights = gabor_weights(num_visible, num_hidden, seed)?;
    let model = rbm_from_weights(&weights)?;
    Ok(model.with_meta(meta(json!({
        "generator": "rbm_gabor",
        "num_visible": num_visible,
        "num_hidden": num_hidden,
        "seed": seed,
    }))))
}

/// Reads a weight CSV with one row per hidden unit and one column per
/// visible unit. Lines starting with `#` are skipped.
pub fn load_weight_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(col, cell)| {
                cell.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("{} line {} column {}: {e}", path.display(), line_no + 1, col + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}
