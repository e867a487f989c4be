//! Oversampling of non-zero-target rows with the VAE-diffusion generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{decode_encoded, ColumnKind, ColumnSchema, Table, TableSchema, Value};
use crate::diffusion::{train_diffusion, DiffusionConfig, DiffusionLog, DiffusionModel};
use crate::error::{Error, Result};
use crate::vae::{train_vae, TrainingLog, VaeConfig, VaeModel};

/// Name of the 0/1 column that marks generated rows.
pub const SYNTHETIC_COLUMN: &str = "__synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RebalancePlan {
    /// Desired non-zero rows per zero row.
    pub ratio: f64,
    pub zero: usize,
    pub nonzero: usize,
    pub to_generate: usize,
}

/// `to_generate = max(0, round(zero · ratio) − nonzero)`.
pub fn plan_counts(zero: usize, nonzero: usize, ratio: f64) -> Result<RebalancePlan> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::invalid("plan_rebalance", format!("ratio must be positive, got {}", ratio)));
    }
    if nonzero == 0 {
        return Err(Error::invalid(
            "plan_rebalance",
            "table has no non-zero rows to learn from",
        ));
    }
    let wanted = (zero as f64 * ratio).round() as usize;
    Ok(RebalancePlan {
        ratio,
        zero,
        nonzero,
        to_generate: wanted.saturating_sub(nonzero),
    })
}

pub fn plan_rebalance(table: &Table, ratio: f64) -> Result<RebalancePlan> {
    let (zero, nonzero) = table.zero_nonzero_counts()?;
    plan_counts(zero, nonzero, ratio)
}

/// Acceptance rules for generated rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationFilters {
    /// Reject rows whose decoded target is zero.
    pub nonzero_target: bool,
    /// Give up after `budget_factor · n` draws.
    pub budget_factor: usize,
    /// Give up early once the running acceptance rate falls below this
    /// (checked after at least `n` draws).
    pub min_acceptance: f64,
}

impl Default for GenerationFilters {
    fn default() -> Self {
        Self {
            nonzero_target: true,
            budget_factor: 10,
            min_acceptance: 0.5,
        }
    }
}

/// Outcome of [`generate_synthetic_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub table: Table,
    pub attempts: usize,
}

impl Generated {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            1.0
        } else {
            self.table.n_rows() as f64 / self.attempts as f64
        }
    }
}

/// Samples latents, decodes them to rows and keeps those passing `filters`
/// until `n` rows are accepted.
pub fn generate_synthetic_rows(
    vae: &VaeModel,
    diffusion: &DiffusionModel,
    n: usize,
    seed: u64,
    filters: &GenerationFilters,
) -> Result<Generated> {
    if diffusion.latent_dim() != vae.latent_dim() {
        return Err(Error::invalid(
            "generate",
            format!(
                "diffusion latent width {} does not match VAE width {}",
                diffusion.latent_dim(),
                vae.latent_dim()
            ),
        ));
    }
    let schema = vae.schema().clone();
    let target = schema.target_index();
    let levels = if filters.nonzero_target {
        Some(schema.target_levels()?)
    } else {
        None
    };
    let mut out = Table::empty(schema.clone());
    let budget = n.saturating_mul(filters.budget_factor.max(1));
    let mut attempts = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = diffusion.config().steps;
    while out.n_rows() < n {
        if attempts >= budget {
            return Err(budget_error(out.n_rows(), attempts, n));
        }
        let remaining = n - out.n_rows();
        let rate = if attempts == 0 {
            1.0
        } else {
            (out.n_rows() as f64 / attempts as f64).max(0.05)
        };
        let draw = ((remaining as f64 / rate).ceil() as usize).clamp(1, budget - attempts);
        let z = diffusion.sample(draw, steps, rng.random())?;
        let decoded = decode_encoded(&vae.decode_latents(&z)?, &schema)?;
        attempts += draw;
        for row in decoded.rows() {
            if out.n_rows() == n {
                break;
            }
            let keep = match (&levels, target) {
                (Some(levels), Some(t)) => levels[row[t].category().expect("discrete target")] != 0.0,
                _ => true,
            };
            if keep {
                out.push_row(row.clone())?;
            }
        }
        let rate = out.n_rows() as f64 / attempts as f64;
        if out.n_rows() < n && attempts >= n && rate < filters.min_acceptance {
            return Err(budget_error(out.n_rows(), attempts, n));
        }
    }
    log::info!(
        "generated {} rows in {} draws (acceptance {:.3})",
        n,
        attempts,
        if attempts == 0 { 1.0 } else { n as f64 / attempts as f64 }
    );
    Ok(Generated { table: out, attempts })
}

fn budget_error(accepted: usize, attempts: usize, needed: usize) -> Error {
    Error::RetryBudget {
        accepted,
        attempts,
        needed,
        rate: if attempts == 0 { 0.0 } else { accepted as f64 / attempts as f64 },
    }
}

pub fn synthetic_column() -> ColumnSchema {
    ColumnSchema::discrete(SYNTHETIC_COLUMN, ColumnKind::Nominal, vec!["0".into(), "1".into()])
}

/// Original rows (flagged 0) followed by synthetic rows (flagged 1).
pub fn combine(training: &Table, synthetic: &Table) -> Result<Table> {
    let original = training.with_constant_column(synthetic_column(), Value::Category(0))?;
    let generated = synthetic
        .with_schema(training.schema().clone())?
        .with_constant_column(synthetic_column(), Value::Category(1))?;
    original.concat(&generated)
}

/// Appends `plan.to_generate` synthetic non-zero rows to `training`.
pub fn rebalance(
    training: &Table,
    vae: &VaeModel,
    diffusion: &DiffusionModel,
    plan: &RebalancePlan,
    seed: u64,
    filters: &GenerationFilters,
) -> Result<Table> {
    let (zero, nonzero) = training.zero_nonzero_counts()?;
    if (zero, nonzero) != (plan.zero, plan.nonzero) {
        return Err(Error::invalid(
            "rebalance",
            format!(
                "plan was computed for {}/{} rows, table has {}/{}",
                plan.zero, plan.nonzero, zero, nonzero
            ),
        ));
    }
    let generated = generate_synthetic_rows(vae, diffusion, plan.to_generate, seed, filters)?;
    combine(training, &generated.table)
}

/// Rows with a non-zero target.
pub fn minority_rows(table: &Table) -> Result<Table> {
    let y = table.target_values()?;
    let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] != 0.0).collect();
    Ok(table.select_rows(&idx))
}

/// Trained generator and its logs.
pub struct Generator {
    pub vae: VaeModel,
    pub vae_log: TrainingLog,
    pub diffusion: DiffusionModel,
    pub diffusion_log: DiffusionLog,
}

/// Trains VAE then diffusion on the non-zero rows of `training`.
pub fn train_generator(training: &Table, vae_cfg: &VaeConfig, diff_cfg: &DiffusionConfig, seed: u64) -> Result<Generator> {
    let minority = minority_rows(training)?;
    let (vae, vae_log) = train_vae(&minority, vae_cfg, seed)?;
    let latents = vae.extract_latents(&minority)?;
    let (diffusion, diffusion_log) = train_diffusion(&latents, diff_cfg, seed.wrapping_add(1))?;
    Ok(Generator {
        vae,
        vae_log,
        diffusion,
        diffusion_log,
    })
}

/// Schema of a rebalanced table built from `training`.
pub fn rebalanced_schema(training: &TableSchema) -> Result<TableSchema> {
    training.with_column(synthetic_column())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_plan_arithmetic() {
        assert_eq!(plan_counts(15142, 2714, 1.0).unwrap().to_generate, 12428);
        assert_eq!(plan_counts(10599, 1899, 1.0).unwrap().to_generate, 8700);
        assert_eq!(plan_counts(40, 40, 1.0).unwrap().to_generate, 0);
        assert_eq!(plan_counts(10, 30, 1.0).unwrap().to_generate, 0);
        assert!(plan_counts(10, 0, 1.0).is_err());
        assert!(plan_counts(10, 3, 0.0).is_err());
    }
}
