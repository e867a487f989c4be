//! Synthetic-data quality metrics.
//!
//! All metrics compare a real and a synthetic [`Table`] over the same
//! schema. Table-level entry points encode the rows; matrix-level variants
//! take encoded rows directly.
//!
//! * C2ST trains a logistic classifier on the column-standardized encoded
//!   matrix and maps the mean cross-validated AUC through
//!   `1 − (max(AUC, 0.5) · 2 − 1)`.
//! * α-precision and β-recall use centroid balls in an encoded space
//!   standardized by the pooled moments of both tables, so
//!   `alpha_precision(A, B) == beta_recall(B, A)`.
//! * PCD compares Pearson correlations of category indices and reals.

mod density;
mod detection;
mod pcd;
mod support;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use density::{
    compute_densities, density_export, sanitize_file_stem, tv_distance, ColumnDensity, DensityExport, JointDensity,
};
pub use detection::{auc, c2st_matrix, cross_validated_auc, detection_score, C2stConfig, LogisticClassifier};
pub use pcd::{pcd, pearson, PcdResult};
pub use support::{aggregate, alpha_precision_matrix, beta_recall_matrix, default_grid, CentroidBalls};

use crate::data::{encode, Table};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn check_pair(op: &'static str, real: &Table, synthetic: &Table) -> Result<()> {
    let diff = real.schema().diff(synthetic.schema());
    if !diff.is_empty() {
        return Err(Error::Schema(format!("{}: {}", op, diff.join("; "))));
    }
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::invalid(op, "both tables must be non-empty"));
    }
    Ok(())
}

/// Encodes both tables with standardization fitted on `fit_on`.
fn encode_pair(real: &Table, synthetic: &Table, fit_on: &Table) -> Result<(Matrix, Matrix)> {
    let schema = fit_on.fit_standardization();
    let r = encode(&real.with_schema(schema.clone())?)?.values;
    let s = encode(&synthetic.with_schema(schema)?)?.values;
    Ok((r, s))
}

/// Detection score of `synthetic` against `real`.
pub fn c2st(real: &Table, synthetic: &Table, cfg: &C2stConfig) -> Result<f64> {
    check_pair("c2st", real, synthetic)?;
    let (r, s) = encode_pair(real, synthetic, real)?;
    c2st_matrix(&r, &s, cfg)
}

/// Both tables encoded and standardized by their pooled moments.
fn pooled_pair(real: &Table, synthetic: &Table) -> Result<(Matrix, Matrix)> {
    let union = real.concat(&synthetic.with_schema(real.schema().clone())?)?;
    let (r, s) = encode_pair(real, synthetic, &union)?;
    let pooled = detection::standardize_columns(&r.vstack(&s)?);
    let n = r.rows();
    let split = |range: std::ops::Range<usize>| pooled.select_rows(&range.collect::<Vec<_>>());
    Ok((split(0..n), split(n..pooled.rows())))
}

pub fn alpha_precision(real: &Table, synthetic: &Table, grid: &[f64]) -> Result<f64> {
    check_pair("alpha_precision", real, synthetic)?;
    let (r, s) = pooled_pair(real, synthetic)?;
    alpha_precision_matrix(&r, &s, grid)
}

pub fn beta_recall(real: &Table, synthetic: &Table, grid: &[f64]) -> Result<f64> {
    check_pair("beta_recall", real, synthetic)?;
    let (r, s) = pooled_pair(real, synthetic)?;
    beta_recall_matrix(&r, &s, grid)
}

/// Permutes every column independently: marginals are kept exactly and
/// dependence between columns is destroyed.
pub fn independent_marginal_shuffle(table: &Table, seed: u64) -> Result<Table> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<_>> = table.rows().to_vec();
    for j in 0..table.n_cols() {
        let mut col = table.column_values(j);
        col.shuffle(&mut rng);
        for (r, v) in rows.iter_mut().zip(col) {
            r[j] = v;
        }
    }
    Table::new(table.schema().clone(), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityConfig {
    pub folds: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    pub bins: usize,
    /// Columns to export marginal histograms for; all when absent.
    pub density_columns: Option<Vec<String>>,
    pub joint_pairs: Vec<(String, String)>,
}

impl Default for QualityConfig {
    fn default() -> Self {
        let c = C2stConfig::default();
        Self {
            folds: c.folds,
            iterations: c.iterations,
            lr: c.lr,
            seed: c.seed,
            bins: 30,
            density_columns: None,
            joint_pairs: Vec::new(),
        }
    }
}

impl QualityConfig {
    pub fn c2st(&self) -> C2stConfig {
        C2stConfig {
            folds: self.folds,
            iterations: self.iterations,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub real_rows: usize,
    pub synthetic_rows: usize,
    pub c2st: f64,
    pub alpha_precision: f64,
    pub beta_recall: f64,
    pub pcd_columns: Vec<String>,
    pub pcd_matrix: Vec<Vec<f64>>,
    pub pcd_mean: f64,
    pub pcd_zero_variance: Vec<String>,
    pub tv_distance: BTreeMap<String, f64>,
    /// Density CSV file names, relative to the export directory.
    pub density_exports: Vec<String>,
}

/// Computes every metric; density CSVs are written to `export_dir` when
/// given.
pub fn evaluate_quality(
    real: &Table,
    synthetic: &Table,
    cfg: &QualityConfig,
    export_dir: Option<&Path>,
) -> Result<QualityReport> {
    check_pair("quality", real, synthetic)?;
    let grid = default_grid();
    let c2st = c2st(real, synthetic, &cfg.c2st())?;
    let (pr, ps) = pooled_pair(real, synthetic)?;
    let alpha = alpha_precision_matrix(&pr, &ps, &grid)?;
    let beta = beta_recall_matrix(&pr, &ps, &grid)?;
    let p = pcd(real, synthetic)?;
    let columns = cfg
        .density_columns
        .clone()
        .unwrap_or_else(|| real.schema().columns().iter().map(|c| c.name.clone()).collect());
    let (densities, files) = match export_dir {
        Some(dir) => {
            let (d, files) = density_export(real, synthetic, &columns, &cfg.joint_pairs, cfg.bins, dir)?;
            let names = files
                .iter()
                .map(|f| f.file_name().unwrap_or_default().to_string_lossy().into_owned())
                .collect();
            (d, names)
        }
        None => (
            compute_densities(real, synthetic, &columns, &cfg.joint_pairs, cfg.bins)?,
            Vec::new(),
        ),
    };
    Ok(QualityReport {
        real_rows: real.n_rows(),
        synthetic_rows: synthetic.n_rows(),
        c2st,
        alpha_precision: alpha,
        beta_recall: beta,
        pcd_columns: p.columns,
        pcd_matrix: p.matrix,
        pcd_mean: p.mean,
        pcd_zero_variance: p.zero_variance,
        tv_distance: densities.columns.iter().map(|c| (c.column.clone(), c.tv_distance)).collect(),
        density_exports: files,
    })
}
