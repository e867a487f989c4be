use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Anything that estimates the injected noise `ε` from `z_t` at level `σ`.
pub trait NoisePredictor {
    fn dim(&self) -> usize;
    fn predict(&self, z: &Matrix, sigma: f64) -> Result<Matrix>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Reverse SDE, `z ← z − 2Δσ ε̂ + sqrt(2σΔσ) ξ`.
    EulerMaruyama,
    /// Probability-flow ODE, `z ← z − Δσ ε̂`.
    ProbabilityFlow,
}

/// Decreasing geometric levels from `sigma_max` to `sigma_min`
/// (`steps + 1` entries).
pub fn sigma_grid(sigma_min: f64, sigma_max: f64, steps: usize) -> Vec<f64> {
    let ratio = (sigma_min / sigma_max).ln();
    (0..=steps)
        .map(|i| {
            if i == steps {
                sigma_min
            } else {
                sigma_max * (ratio * i as f64 / steps as f64).exp()
            }
        })
        .collect()
}

/// Integrates the reverse dynamics from `z ~ N(0, sigma_max² I)` in the
/// predictor's coordinate system.
pub fn reverse_sample(
    predictor: &dyn NoisePredictor,
    n: usize,
    sigma_min: f64,
    sigma_max: f64,
    steps: usize,
    kind: SamplerKind,
    seed: u64,
) -> Result<Matrix> {
    if steps == 0 {
        return Err(Error::invalid("sample", "steps must be at least 1"));
    }
    let dim = predictor.dim();
    if n == 0 {
        return Ok(Matrix::zeros(0, dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<f64> = (0..n * dim)
        .map(|_| sigma_max * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let mut z = Matrix::new(n, dim, init)?;
    let grid = sigma_grid(sigma_min, sigma_max, steps);
    for (step, w) in grid.windows(2).enumerate() {
        let (sigma, next) = (w[0], w[1]);
        let delta = sigma - next;
        let eps = predictor.predict(&z, sigma)?;
        if eps.rows() != n || eps.cols() != dim {
            return Err(Error::Shape {
                op: "sample",
                left: vec![eps.rows(), eps.cols()],
                right: vec![n, dim],
            });
        }
        let noise_scale = (2.0 * sigma * delta).sqrt();
        for (zv, e) in z.data_mut().iter_mut().zip(eps.data()) {
            match kind {
                SamplerKind::EulerMaruyama => {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    *zv += -2.0 * delta * e + noise_scale * xi;
                }
                SamplerKind::ProbabilityFlow => *zv -= delta * e,
            }
        }
        if z.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                stage: "sampling step",
                index: step,
            });
        }
    }
    Ok(z)
}

/// Exact noise for a point mass at `center`: `(z − c) / σ`.
#[derive(Debug, Clone)]
pub struct PointMassOracle {
    pub center: Vec<f64>,
}

impl NoisePredictor for PointMassOracle {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn predict(&self, z: &Matrix, sigma: f64) -> Result<Matrix> {
        let mut out = z.clone();
        for r in 0..out.rows() {
            for (v, c) in out.row_mut(r).iter_mut().zip(&self.center) {
                *v = (*v - c) / sigma;
            }
        }
        Ok(out)
    }
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone)]
pub struct ZeroPredictor {
    pub dim: usize,
}

impl NoisePredictor for ZeroPredictor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, z: &Matrix, _sigma: f64) -> Result<Matrix> {
        Ok(Matrix::zeros(z.rows(), z.cols()))
    }
}
