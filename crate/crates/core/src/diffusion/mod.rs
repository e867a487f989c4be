//! Variance-exploding score model over flattened VAE latents.
//!
//! The noise level is the time itself, `σ(t) = t`, and the forward process
//! is `z_t = z_0 + σ ε`. A five-layer SiLU MLP denoiser predicts `ε` from
//! `z_t` and an embedding of `ln σ`. Samples come from integrating the
//! reverse dynamics with score `−ε̂ / σ` over a geometric grid of levels.
//! Latents are standardized per coordinate before training and
//! de-standardized after sampling.

mod sampler;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, ParamStore, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Linear;

pub use sampler::{reverse_sample, sigma_grid, NoisePredictor, PointMassOracle, SamplerKind, ZeroPredictor};

pub const CHECKPOINT_KIND: &str = "diffusion";

/// Rows per denoiser call during sampling.
const SAMPLE_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub d_hidden: usize,
    /// Sinusoid pairs in the noise-level embedding.
    pub time_frequencies: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub steps: usize,
    pub sampler: SamplerKind,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            d_hidden: 128,
            time_frequencies: 64,
            sigma_min: 0.002,
            sigma_max: 20.0,
            epochs: 500,
            batch_size: 256,
            adam: AdamConfig::default(),
            steps: 50,
            sampler: SamplerKind::EulerMaruyama,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid("diffusion config", m.to_string()));
        if self.d_hidden == 0 || self.time_frequencies == 0 || self.batch_size == 0 {
            return bad("widths and batch size must be positive");
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min && self.sigma_max.is_finite()) {
            return bad("need 0 < sigma_min < sigma_max");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// `z_t = z0 + sigma * eps` with seeded standard-normal `eps`.
pub fn perturb(z0: &Matrix, sigma: f64, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = z0.clone();
    for v in out.data_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * e;
    }
    out
}

/// Geometric frequencies spanning roughly one cycle per 100 units of `ln σ`
/// up to ten per unit.
fn frequencies(k: usize) -> Vec<f64> {
    let (lo, hi) = (0.01f64.ln(), 10f64.ln());
    (0..k)
        .map(|i| {
            let f = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
            (lo + f * (hi - lo)).exp()
        })
        .collect()
}

/// `[sin(f ln σ) ..., cos(f ln σ) ...]` per row.
pub fn time_features(sigmas: &[f64], k: usize) -> Vec<f64> {
    let freqs = frequencies(k);
    let mut out = Vec::with_capacity(sigmas.len() * 2 * k);
    for s in sigmas {
        let l = s.ln();
        out.extend(freqs.iter().map(|f| (f * l).sin()));
        out.extend(freqs.iter().map(|f| (f * l).cos()));
    }
    out
}

/// `FC_in → (+ t_emb) → FC_1 → FC_2 → FC_3 → FC_out` with SiLU between the
/// hidden layers.
///
/// With `c = 1/sqrt(1 + σ²)` the prediction is
/// `ε̂ = σ c² z + c · F(c z, σ)`, where `F` is the MLP. The first term is the
/// exact noise estimate for unit-variance Gaussian data, so `F` only learns
/// the correction.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserMlp {
    dim: usize,
    time_frequencies: usize,
    fc_in: Linear,
    time: Linear,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    fc_out: Linear,
}

impl DenoiserMlp {
    pub fn new(store: &mut ParamStore, dim: usize, hidden: usize, time_frequencies: usize, rng: &mut impl Rng) -> Self {
        Self {
            dim,
            time_frequencies,
            fc_in: Linear::new(store, "den.fc_in", dim, hidden, rng),
            time: Linear::new(store, "den.time", 2 * time_frequencies, hidden, rng),
            fc1: Linear::new(store, "den.fc1", hidden, 2 * hidden, rng),
            fc2: Linear::new(store, "den.fc2", 2 * hidden, 2 * hidden, rng),
            fc3: Linear::new(store, "den.fc3", 2 * hidden, hidden, rng),
            fc_out: Linear::new(store, "den.fc_out", hidden, dim, rng),
        }
    }

    /// `z: [B, dim]` at per-row levels `sigmas` to predicted noise `[B, dim]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: Var, sigmas: &[f64]) -> Result<Var> {
        let shape = g.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != self.dim || shape[0] != sigmas.len() {
            return Err(Error::Shape {
                op: "denoise",
                left: shape,
                right: vec![sigmas.len(), self.dim],
            });
        }
        let b = sigmas.len();
        let scale: Vec<f64> = sigmas
            .iter()
            .flat_map(|s| std::iter::repeat_n(1.0 / (1.0 + s * s).sqrt(), self.dim))
            .collect();
        let c_in = g.constant(vec![b, self.dim], scale)?;
        let zin = g.mul(z, c_in)?;
        let h0 = self.fc_in.forward(g, store, zin)?;
        let tf = g.constant(vec![b, 2 * self.time_frequencies], time_features(sigmas, self.time_frequencies))?;
        let temb = self.time.forward(g, store, tf)?;
        let h = g.add(h0, temb)?;
        let h = g.silu(h)?;
        let h = self.fc1.forward(g, store, h)?;
        let h = g.silu(h)?;
        let h = self.fc2.forward(g, store, h)?;
        let h = g.silu(h)?;
        let h = self.fc3.forward(g, store, h)?;
        let h = g.silu(h)?;
        let f = self.fc_out.forward(g, store, h)?;
        let per_row = |c: &dyn Fn(f64) -> f64| -> Vec<f64> {
            sigmas.iter().flat_map(|s| std::iter::repeat_n(c(*s), self.dim)).collect()
        };
        let c_skip = g.constant(vec![b, self.dim], per_row(&|s| s / (1.0 + s * s)))?;
        let c_out = g.constant(vec![b, self.dim], per_row(&|s| 1.0 / (1.0 + s * s).sqrt()))?;
        let skip = g.mul(z, c_skip)?;
        let scaled = g.mul(f, c_out)?;
        g.add(skip, scaled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionLog {
    /// Mean batch loss per epoch.
    pub epochs: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffusionMeta {
    config: DiffusionConfig,
    latent_dim: usize,
    latent_mean: Vec<f64>,
    latent_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DiffusionModel {
    config: DiffusionConfig,
    store: ParamStore,
    denoiser: DenoiserMlp,
    latent_mean: Vec<f64>,
    latent_std: Vec<f64>,
}

impl DiffusionModel {
    /// Untrained model with identity latent standardization.
    pub fn new(latent_dim: usize, config: &DiffusionConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(latent_dim, config, &mut rng)
    }

    fn with_rng(latent_dim: usize, config: &DiffusionConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if latent_dim == 0 {
            return Err(Error::invalid("diffusion", "latent dimension must be positive"));
        }
        let mut store = ParamStore::new();
        let denoiser = DenoiserMlp::new(&mut store, latent_dim, config.d_hidden, config.time_frequencies, rng);
        Ok(Self {
            config: config.clone(),
            store,
            denoiser,
            latent_mean: vec![0.0; latent_dim],
            latent_std: vec![1.0; latent_dim],
        })
    }

    pub fn config(&self) -> &DiffusionConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.denoiser.dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn denoiser(&self) -> &DenoiserMlp {
        &self.denoiser
    }

    /// Predicted noise for standardized `z_t` at one level.
    pub fn denoise(&self, z: &Matrix, sigma: f64) -> Result<Matrix> {
        let mut g = Graph::new();
        let zv = g.constant(vec![z.rows(), z.cols()], z.data().to_vec())?;
        let sig = vec![sigma; z.rows()];
        let out = self.denoiser.forward(&mut g, &self.store, zv, &sig)?;
        Matrix::new(z.rows(), z.cols(), g.value(out).to_vec())
    }

    /// Denoising loss graph for standardized `z0` with given levels and
    /// noise: `Σ‖ε̂ − ε‖² / B`.
    pub fn loss_graph(&self, g: &mut Graph, z0: &Matrix, sigmas: &[f64], eps: &[f64]) -> Result<Var> {
        let b = z0.rows();
        let mut zt = z0.clone();
        for (r, s) in sigmas.iter().enumerate() {
            for (v, e) in zt.row_mut(r).iter_mut().zip(&eps[r * z0.cols()..(r + 1) * z0.cols()]) {
                *v += s * e;
            }
        }
        let zv = g.constant(vec![b, z0.cols()], zt.into_data())?;
        let pred = self.denoiser.forward(g, &self.store, zv, sigmas)?;
        let target = g.constant(vec![b, z0.cols()], eps.to_vec())?;
        let diff = g.sub(pred, target)?;
        let sq = g.sum_squares(diff)?;
        g.scale(sq, 1.0 / b as f64)
    }

    fn draw_sigmas(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let (lo, hi) = (self.config.sigma_min.ln(), self.config.sigma_max.ln());
        (0..n).map(|_| rng.random_range(lo..hi).exp()).collect()
    }

    pub fn standardize(&self, z: &Matrix) -> Matrix {
        let mut out = z.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.latent_mean).zip(&self.latent_std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn destandardize(&self, z: &Matrix) -> Matrix {
        let mut out = z.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.latent_mean).zip(&self.latent_std) {
                *v = *v * s + m;
            }
        }
        out
    }

    /// `n` latents in the original (unstandardized) coordinates.
    pub fn sample(&self, n: usize, steps: usize, seed: u64) -> Result<Matrix> {
        self.sample_with(n, steps, self.config.sampler, seed)
    }

    pub fn sample_with(&self, n: usize, steps: usize, kind: SamplerKind, seed: u64) -> Result<Matrix> {
        let z = reverse_sample(self, n, self.config.sigma_min, self.config.sigma_max, steps, kind, seed)?;
        Ok(self.destandardize(&z))
    }

    // ------------------------------------------------------------ persistence

    pub fn to_checkpoint(&self, schema_fingerprint: &str) -> Result<Checkpoint> {
        let meta = DiffusionMeta {
            config: self.config.clone(),
            latent_dim: self.latent_dim(),
            latent_mean: self.latent_mean.clone(),
            latent_std: self.latent_std.clone(),
        };
        Ok(Checkpoint::from_store(
            CHECKPOINT_KIND,
            schema_fingerprint,
            serde_json::to_string(&meta)?,
            &self.store,
        ))
    }

    /// Restores a model trained on latents of width `latent_dim` for the
    /// schema with `schema_fingerprint`.
    pub fn from_checkpoint(ckpt: &Checkpoint, schema_fingerprint: &str, latent_dim: usize) -> Result<Self> {
        ckpt.expect(CHECKPOINT_KIND, schema_fingerprint)?;
        let meta: DiffusionMeta = serde_json::from_str(&ckpt.meta)
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {}", e)))?;
        if meta.latent_dim != latent_dim {
            return Err(Error::Checkpoint(format!(
                "diffusion model expects latents of width {}, VAE produces {}",
                meta.latent_dim, latent_dim
            )));
        }
        if meta.latent_mean.len() != latent_dim
            || meta.latent_std.len() != latent_dim
            || meta.latent_std.iter().any(|s| !(*s > 0.0 && s.is_finite()))
            || meta.latent_mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::Checkpoint("invalid latent standardization".into()));
        }
        let mut model = Self::new(latent_dim, &meta.config, 0)?;
        ckpt.restore_into(&mut model.store)?;
        model.latent_mean = meta.latent_mean;
        model.latent_std = meta.latent_std;
        Ok(model)
    }

    pub fn save(&self, path: &Path, schema_fingerprint: &str) -> Result<()> {
        self.to_checkpoint(schema_fingerprint)?.save(path)
    }

    pub fn load(path: &Path, schema_fingerprint: &str, latent_dim: usize) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, schema_fingerprint, latent_dim)
    }
}

impl NoisePredictor for DiffusionModel {
    fn dim(&self) -> usize {
        self.latent_dim()
    }

    fn predict(&self, z: &Matrix, sigma: f64) -> Result<Matrix> {
        let mut out = Matrix::zeros(0, z.cols());
        for start in (0..z.rows()).step_by(SAMPLE_CHUNK) {
            let idx: Vec<usize> = (start..(start + SAMPLE_CHUNK).min(z.rows())).collect();
            out = out.vstack(&self.denoise(&z.select_rows(&idx), sigma)?)?;
        }
        Ok(out)
    }
}

/// Trains a denoiser on `latents` (rows are flattened VAE means).
pub fn train_diffusion(latents: &Matrix, config: &DiffusionConfig, seed: u64) -> Result<(DiffusionModel, DiffusionLog)> {
    if latents.rows() == 0 {
        return Err(Error::invalid("train_diffusion", "no latents to train on"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DiffusionModel::with_rng(latents.cols(), config, &mut rng)?;
    let (mean, std) = latents.column_moments();
    model.latent_mean = mean;
    model.latent_std = std.into_iter().map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
    let z = model.standardize(latents);

    let mut adam = Adam::new(config.adam, &model.store);
    let mut order: Vec<usize> = (0..z.rows()).collect();
    let mut log = DiffusionLog { epochs: Vec::with_capacity(config.epochs) };
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for batch in order.chunks(config.batch_size) {
            let zb = z.select_rows(batch);
            let sigmas = model.draw_sigmas(batch.len(), &mut rng);
            let eps: Vec<f64> = (0..zb.rows() * zb.cols()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut g = Graph::new();
            let loss = model.loss_graph(&mut g, &zb, &sigmas, &eps).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { stage: "diffusion step", index: step },
                other => other,
            })?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged { stage: "diffusion step", index: step });
            }
            let grads = g.backward(loss)?;
            g.write_param_grads(&grads, &mut model.store);
            adam.step(&mut model.store)?;
            total += value;
            batches += 1;
            step += 1;
        }
        let mean = total / batches as f64;
        log::debug!("diffusion epoch {} loss {:.5}", epoch, mean);
        log.epochs.push(mean);
    }
    Ok((model, log))
}

/// Denoising loss with fresh seeded levels and noise, for any predictor
/// operating on the given (already standardized) latents.
pub fn diffusion_loss(predictor: &dyn NoisePredictor, z0: &Matrix, sigma_min: f64, sigma_max: f64, seed: u64) -> Result<f64> {
    if z0.rows() == 0 {
        return Err(Error::invalid("diffusion_loss", "empty batch"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (sigma_min.ln(), sigma_max.ln());
    let mut total = 0.0;
    for r in 0..z0.rows() {
        let sigma = rng.random_range(lo..hi).exp();
        let eps: Vec<f64> = (0..z0.cols()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let zt: Vec<f64> = z0.row(r).iter().zip(&eps).map(|(z, e)| z + sigma * e).collect();
        let pred = predictor.predict(&Matrix::new(1, z0.cols(), zt)?, sigma)?;
        total += pred.data().iter().zip(&eps).map(|(p, e)| (p - e).powi(2)).sum::<f64>();
    }
    Ok(total / z0.rows() as f64)
}
