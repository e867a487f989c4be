//! Transformer variational autoencoder over column tokens.
//!
//! An encoded row is tokenized into `M` tokens of width `d`. The tokens pass
//! through two encoder blocks, and per-token linear heads give `mu` and
//! `logvar`. A sample `z = mu + exp(0.5 logvar) * eps` goes through two
//! decoder blocks and the detokenizer. Downstream diffusion trains on the
//! flattened `mu` of each row.

mod loss;
mod transformer;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, ParamStore, Var};
use crate::checkpoint::Checkpoint;
use crate::data::{decode_encoded, encode, Layout, Table, TableSchema};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Linear;
use crate::tokenizer::{outputs_to_rows, Detokenized, FeatureTokenizer};

pub use loss::{kl_divergence, kl_graph, vae_loss, vae_loss_graph, LossParts, LossVars};
pub use transformer::{BlockOutput, TransformerBlock};

pub const CHECKPOINT_KIND: &str = "vae";

/// Blocks in each of the encoder and decoder stacks.
pub const DEPTH: usize = 2;

/// Rows per forward pass outside training.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaConfig {
    pub initial: f64,
    /// When false, `initial` is used for every epoch.
    pub adaptive: bool,
    /// Epochs without reconstruction improvement before `beta` is reduced.
    pub patience: usize,
    pub factor: f64,
    pub floor: f64,
}

impl Default for BetaConfig {
    fn default() -> Self {
        Self {
            initial: 1e-2,
            adaptive: true,
            patience: 5,
            factor: 0.5,
            floor: 1e-5,
        }
    }
}

impl BetaConfig {
    pub fn fixed(beta: f64) -> Self {
        Self {
            initial: beta,
            adaptive: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub d: usize,
    pub heads: usize,
    /// Feed-forward hidden width as a multiple of `d`.
    pub ffn_multiplier: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub beta: BetaConfig,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            d: 8,
            heads: 2,
            ffn_multiplier: 4,
            epochs: 200,
            batch_size: 64,
            adam: AdamConfig::default(),
            beta: BetaConfig::default(),
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid("vae config", m.to_string()));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad("d must be a positive multiple of heads");
        }
        if self.ffn_multiplier == 0 || self.batch_size == 0 {
            return bad("ffn_multiplier and batch_size must be positive");
        }
        let b = &self.beta;
        if !(b.initial >= 0.0 && b.floor >= 0.0 && b.factor > 0.0 && b.factor <= 1.0 && b.patience > 0) {
            return bad("beta schedule out of range");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VaeMeta {
    config: VaeConfig,
    schema: TableSchema,
    beta: f64,
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    config: VaeConfig,
    schema: TableSchema,
    layout: Layout,
    store: ParamStore,
    tokenizer: FeatureTokenizer,
    encoder: Vec<TransformerBlock>,
    mu_head: Linear,
    logvar_head: Linear,
    decoder: Vec<TransformerBlock>,
    beta: f64,
}

/// Graph nodes of a full forward pass.
struct Forward {
    mu: Var,
    logvar: Var,
    recon: Detokenized,
    attention: Vec<Var>,
}

impl VaeModel {
    /// Fresh model for a fitted schema.
    pub fn new(schema: &TableSchema, config: &VaeConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(schema, config, &mut rng)
    }

    fn with_rng(schema: &TableSchema, config: &VaeConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if !schema.is_fitted() {
            return Err(Error::Schema("VAE needs a fitted schema".into()));
        }
        let layout = Layout::new(schema);
        let d = config.d;
        let hidden = d * config.ffn_multiplier;
        let mut store = ParamStore::new();
        let tokenizer = FeatureTokenizer::new(&mut store, &layout, d, rng);
        let mut encoder = Vec::with_capacity(DEPTH);
        for i in 0..DEPTH {
            encoder.push(TransformerBlock::new(&mut store, &format!("enc{i}"), d, config.heads, hidden, rng)?);
        }
        let mu_head = Linear::new(&mut store, "mu", d, d, rng);
        let logvar_head = Linear::new(&mut store, "logvar", d, d, rng);
        let mut decoder = Vec::with_capacity(DEPTH);
        for i in 0..DEPTH {
            decoder.push(TransformerBlock::new(&mut store, &format!("dec{i}"), d, config.heads, hidden, rng)?);
        }
        Ok(Self {
            config: config.clone(),
            schema: schema.clone(),
            layout,
            store,
            tokenizer,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            beta: config.beta.initial,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    /// The fitted schema the model encodes with.
    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn tokenizer(&self) -> &FeatureTokenizer {
        &self.tokenizer
    }

    pub fn n_tokens(&self) -> usize {
        self.tokenizer.n_tokens()
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    /// Width of a flattened latent, `M · d`.
    pub fn latent_dim(&self) -> usize {
        self.n_tokens() * self.config.d
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn encode_graph(&self, g: &mut Graph, x: Var) -> Result<(Var, Var, Vec<Var>)> {
        let mut h = self.tokenizer.tokenize_graph(g, &self.store, x)?;
        let mut attention = Vec::new();
        for blk in &self.encoder {
            let o = blk.forward(g, &self.store, h)?;
            h = o.out;
            attention.extend(o.attention);
        }
        let mu = self.mu_head.forward(g, &self.store, h)?;
        let logvar = self.logvar_head.forward(g, &self.store, h)?;
        Ok((mu, logvar, attention))
    }

    fn decode_graph(&self, g: &mut Graph, z: Var) -> Result<(Detokenized, Vec<Var>)> {
        let mut h = z;
        let mut attention = Vec::new();
        for blk in &self.decoder {
            let o = blk.forward(g, &self.store, h)?;
            h = o.out;
            attention.extend(o.attention);
        }
        Ok((self.tokenizer.detokenize_graph(g, &self.store, h)?, attention))
    }

    /// Full pass on encoded rows; `eps` (same shape as `mu`) switches on
    /// reparameterized sampling, otherwise `z = mu`.
    fn forward(&self, g: &mut Graph, x: Var, eps: Option<Vec<f64>>) -> Result<Forward> {
        let (mu, logvar, mut attention) = self.encode_graph(g, x)?;
        let z = match eps {
            Some(eps) => {
                let e = g.constant(g.shape(mu).to_vec(), eps)?;
                let half = g.scale(logvar, 0.5)?;
                let sigma = g.exp(half)?;
                let noise = g.mul(sigma, e)?;
                g.add(mu, noise)?
            }
            None => mu,
        };
        let (recon, dec_attention) = self.decode_graph(g, z)?;
        attention.extend(dec_attention);
        Ok(Forward {
            mu,
            logvar,
            recon,
            attention,
        })
    }

    /// Builds the training loss for a batch of encoded rows, sampling `z`
    /// with `eps`. Used by training and by gradient checks.
    pub fn loss_graph(&self, g: &mut Graph, x: &Matrix, eps: Option<Vec<f64>>, beta: f64) -> Result<LossVars> {
        let xv = g.constant(vec![x.rows(), x.cols()], x.data().to_vec())?;
        let f = self.forward(g, xv, eps)?;
        vae_loss_graph(g, &self.layout, xv, &f.recon, f.mu, f.logvar, beta)
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.layout.width() {
            return Err(Error::Shape {
                op: "vae",
                left: vec![x.rows(), x.cols()],
                right: vec![x.rows(), self.layout.width()],
            });
        }
        Ok(())
    }

    /// `mu` and `sigma` for encoded rows, flattened to `[B, M·d]`.
    pub fn encode_matrix(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_width(x)?;
        let w = self.latent_dim();
        let mut mu = Matrix::zeros(0, w);
        let mut sigma = Matrix::zeros(0, w);
        for chunk in chunks(x) {
            let mut g = Graph::new();
            let xv = g.constant(vec![chunk.rows(), chunk.cols()], chunk.data().to_vec())?;
            let (m, lv, _) = self.encode_graph(&mut g, xv)?;
            for (mr, lr) in g.value(m).chunks(w).zip(g.value(lv).chunks(w)) {
                mu.push_row(mr)?;
                let s: Vec<f64> = lr.iter().map(|v| (0.5 * v).exp()).collect();
                sigma.push_row(&s)?;
            }
        }
        Ok((mu, sigma))
    }

    /// `(mu, sigma)` as `M × d` matrices for one encoded row.
    pub fn encode(&self, encoded_row: &[f64]) -> Result<(Matrix, Matrix)> {
        let x = Matrix::new(1, encoded_row.len(), encoded_row.to_vec())?;
        let (mu, sigma) = self.encode_matrix(&x)?;
        let (m, d) = (self.n_tokens(), self.config.d);
        Ok((Matrix::new(m, d, mu.into_data())?, Matrix::new(m, d, sigma.into_data())?))
    }

    /// Reconstructed `M × d` embedding for one latent `Z`.
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        let (m, d) = (self.n_tokens(), self.config.d);
        if z.rows() != m || z.cols() != d {
            return Err(Error::Shape {
                op: "vae decode",
                left: vec![z.rows(), z.cols()],
                right: vec![m, d],
            });
        }
        let mut g = Graph::new();
        let mut h = g.constant(vec![1, m, d], z.data().to_vec())?;
        for blk in &self.decoder {
            h = blk.forward(&mut g, &self.store, h)?.out;
        }
        Matrix::new(m, d, g.value(h).to_vec())
    }

    /// Decodes flattened latents `[B, M·d]` into encoded rows holding
    /// real values and discrete probability vectors.
    pub fn decode_latents(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.latent_dim() {
            return Err(Error::Shape {
                op: "vae decode",
                left: vec![z.rows(), z.cols()],
                right: vec![z.rows(), self.latent_dim()],
            });
        }
        let mut out = Matrix::zeros(0, self.layout.width());
        for chunk in chunks(z) {
            let mut g = Graph::new();
            let zv = g.constant(vec![chunk.rows(), self.n_tokens(), self.config.d], chunk.data().to_vec())?;
            let (recon, _) = self.decode_graph(&mut g, zv)?;
            let rows = outputs_to_rows(&g, &self.layout, &recon)?;
            out = out.vstack(&rows)?;
        }
        Ok(out)
    }

    fn encode_table(&self, table: &Table) -> Result<Matrix> {
        let t = table.with_schema(self.schema.clone())?;
        Ok(encode(&t)?.values)
    }

    /// Flattened `mu` per row, `[n, M·d]`.
    pub fn extract_latents(&self, table: &Table) -> Result<Matrix> {
        let x = self.encode_table(table)?;
        Ok(self.encode_matrix(&x)?.0)
    }

    /// Encodes with `z = mu`, decodes, and hard-decodes back to a table.
    pub fn reconstruct(&self, table: &Table) -> Result<Table> {
        let z = self.extract_latents(table)?;
        let rows = self.decode_latents(&z)?;
        decode_encoded(&rows, &self.schema)
    }

    /// Attention weights of every head in every block, each `[B·M, M]`.
    pub fn attention_maps(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_width(x)?;
        let mut g = Graph::new();
        let xv = g.constant(vec![x.rows(), x.cols()], x.data().to_vec())?;
        let f = self.forward(&mut g, xv, None)?;
        let m = self.n_tokens();
        f.attention
            .iter()
            .map(|a| Matrix::new(x.rows() * m, m, g.value(*a).to_vec()))
            .collect()
    }

    // ------------------------------------------------------------ persistence

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = VaeMeta {
            config: self.config.clone(),
            schema: self.schema.clone(),
            beta: self.beta,
        };
        Ok(Checkpoint::from_store(
            CHECKPOINT_KIND,
            &self.schema.fingerprint(),
            serde_json::to_string(&meta)?,
            &self.store,
        ))
    }

    /// Restores a model, refusing checkpoints written for a different
    /// schema structure.
    pub fn from_checkpoint(ckpt: &Checkpoint, schema: &TableSchema) -> Result<Self> {
        ckpt.expect(CHECKPOINT_KIND, &schema.fingerprint())?;
        let meta: VaeMeta = serde_json::from_str(&ckpt.meta)
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {}", e)))?;
        let fitted = meta.schema.validated()?;
        let fitted = schema.with_standardization_of(&fitted)?;
        let mut model = Self::new(&fitted, &meta.config, 0)?;
        ckpt.restore_into(&mut model.store)?;
        model.beta = meta.beta;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path, schema: &TableSchema) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, schema)
    }
}

fn chunks(x: &Matrix) -> impl Iterator<Item = Matrix> + '_ {
    (0..x.rows().div_ceil(EVAL_CHUNK)).map(move |c| {
        let idx: Vec<usize> = (c * EVAL_CHUNK..((c + 1) * EVAL_CHUNK).min(x.rows())).collect();
        x.select_rows(&idx)
    })
}

/// `z = mu + sigma * eps` with seeded standard-normal `eps`.
pub fn reparameterize(mu: &Matrix, sigma: &Matrix, seed: u64) -> Result<Matrix> {
    if mu.rows() != sigma.rows() || mu.cols() != sigma.cols() {
        return Err(Error::Shape {
            op: "reparameterize",
            left: vec![mu.rows(), mu.cols()],
            right: vec![sigma.rows(), sigma.cols()],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = mu
        .data()
        .iter()
        .zip(sigma.data())
        .map(|(m, s)| {
            let e: f64 = StandardNormal.sample(&mut rng);
            m + s * e
        })
        .collect();
    Matrix::new(mu.rows(), mu.cols(), data)
}

/// Trains a VAE on `table`. Its schema is fitted on `table` unless it
/// already carries standardization.
pub fn train_vae(table: &Table, config: &VaeConfig, seed: u64) -> Result<(VaeModel, TrainingLog)> {
    if table.is_empty() {
        return Err(Error::invalid("train_vae", "training table is empty"));
    }
    let schema = if table.schema().is_fitted() {
        table.schema().clone()
    } else {
        table.fit_standardization()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = VaeModel::with_rng(&schema, config, &mut rng)?;
    let x = encode(&table.with_schema(schema)?)?.values;
    let log = fit(&mut model, &x, &mut rng)?;
    Ok((model, log))
}

fn fit(model: &mut VaeModel, x: &Matrix, rng: &mut ChaCha8Rng) -> Result<TrainingLog> {
    use rand::seq::SliceRandom;

    let cfg = model.config.clone();
    let mut adam = Adam::new(cfg.adam, &model.store);
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut best_recon = f64::INFINITY;
    let mut stale = 0;
    let token_numel = model.latent_dim();

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut sum_loss, mut sum_recon, mut sum_kl) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(batch);
            let eps: Vec<f64> = (0..batch.len() * token_numel)
                .map(|_| StandardNormal.sample(rng))
                .collect();
            let mut g = Graph::new();
            let lv = model.loss_graph(&mut g, &xb, Some(eps), model.beta).map_err(|e| diverged(e, epoch))?;
            let loss = g.scalar(lv.total);
            if !loss.is_finite() {
                return Err(Error::Diverged { stage: "vae epoch", index: epoch });
            }
            let grads = g.backward(lv.total)?;
            g.write_param_grads(&grads, &mut model.store);
            adam.step(&mut model.store)?;
            let w = batch.len() as f64;
            sum_loss += loss * w;
            sum_recon += g.scalar(lv.recon) * w;
            sum_kl += g.scalar(lv.kl) * w;
        }
        let n = x.rows() as f64;
        let entry = EpochLog {
            epoch,
            loss: sum_loss / n,
            recon: sum_recon / n,
            kl: sum_kl / n,
            beta: model.beta,
        };
        log::debug!("vae epoch {} loss {:.5} recon {:.5} kl {:.5} beta {:.2e}", epoch, entry.loss, entry.recon, entry.kl, entry.beta);
        if cfg.beta.adaptive {
            if entry.recon < best_recon {
                best_recon = entry.recon;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.beta.patience {
                    model.beta = (model.beta * cfg.beta.factor).max(cfg.beta.floor);
                    stale = 0;
                }
            }
        }
        log.epochs.push(entry);
    }
    Ok(log)
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged { stage: "vae epoch", index: epoch },
        other => other,
    }
}
