//! Shapley attributions for a fitted predictor.
//!
//! The value of a coalition `S` for row `x` is the mean prediction over a
//! background set with the features in `S` taken from `x` and the others
//! from each background row. Exact mode enumerates all coalitions; sampled
//! mode averages marginal contributions over random feature orders.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::predictors::{ModelFile, TreeEnsemble, ZipModel};

/// Largest feature count accepted by exact mode.
pub const MAX_EXACT_FEATURES: usize = 16;

/// Background rows drawn by default.
pub const DEFAULT_BACKGROUND: usize = 128;

/// Anything that maps one feature row to a prediction.
pub trait Model {
    fn n_features(&self) -> usize;
    fn predict_row(&self, x: &[f64]) -> f64;
}

impl Model for TreeEnsemble {
    fn n_features(&self) -> usize {
        self.features.len()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        TreeEnsemble::predict_row(self, x)
    }
}

impl Model for ZipModel {
    fn n_features(&self) -> usize {
        self.features.len()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        let (p, lambda) = self.components(x);
        crate::predictors::zip_expectation(p, lambda)
    }
}

impl Model for ModelFile {
    fn n_features(&self) -> usize {
        self.features().len()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            ModelFile::Gbt(t) => Model::predict_row(t, x),
            ModelFile::Zip(z) => Model::predict_row(z, x),
        }
    }
}

/// Wraps a closure as a [`Model`].
pub struct FnModel<F> {
    pub n_features: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64> Model for FnModel<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ShapleyMode {
    Exact,
    Sampled { n_permutations: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult {
    pub feature_names: Vec<String>,
    /// Rows × features.
    pub phi: Matrix,
    /// Mean prediction over the background set.
    pub base_value: f64,
    pub mode: ShapleyMode,
    /// Monte Carlo standard error of each entry of `phi` (sampled mode).
    pub std_errors: Option<Matrix>,
}

/// Draws up to `n` background rows without replacement.
pub fn sample_background(x: &Matrix, n: usize, seed: u64) -> Matrix {
    if x.rows() <= n {
        return x.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, x.rows(), n).into_vec();
    idx.sort_unstable();
    x.select_rows(&idx)
}

/// Coalition value: mean prediction with `mask` features from `x`.
fn coalition_value(model: &dyn Model, x: &[f64], mask: u32, background: &Matrix, scratch: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for b in background.iter_rows() {
        for (j, s) in scratch.iter_mut().enumerate() {
            *s = if mask >> j & 1 == 1 { x[j] } else { b[j] };
        }
        total += model.predict_row(scratch);
    }
    total / background.rows() as f64
}

pub fn shapley(
    model: &dyn Model,
    feature_names: &[String],
    rows: &Matrix,
    background: &Matrix,
    mode: ShapleyMode,
    seed: u64,
) -> Result<AttributionResult> {
    let m = model.n_features();
    if rows.cols() != m || background.cols() != m || feature_names.len() != m {
        return Err(Error::Shape {
            op: "shapley",
            left: vec![rows.cols(), background.cols(), feature_names.len()],
            right: vec![m, m, m],
        });
    }
    if background.rows() == 0 {
        return Err(Error::invalid("shapley", "background set is empty"));
    }
    let base_value = background.iter_rows().map(|b| model.predict_row(b)).sum::<f64>() / background.rows() as f64;
    let (phi, std_errors) = match mode {
        ShapleyMode::Exact => {
            if m > MAX_EXACT_FEATURES {
                return Err(Error::invalid(
                    "shapley",
                    format!(
                        "exact mode supports at most {} features, got {}; use sampled mode",
                        MAX_EXACT_FEATURES, m
                    ),
                ));
            }
            (exact(model, rows, background), None)
        }
        ShapleyMode::Sampled { n_permutations } => {
            if n_permutations < 2 {
                return Err(Error::invalid("shapley", "sampled mode needs at least 2 permutations"));
            }
            let (phi, se) = sampled(model, rows, background, n_permutations, seed);
            (phi, Some(se))
        }
    };
    Ok(AttributionResult {
        feature_names: feature_names.to_vec(),
        phi,
        base_value,
        mode,
        std_errors,
    })
}

fn exact(model: &dyn Model, rows: &Matrix, background: &Matrix) -> Matrix {
    let m = rows.cols();
    // |S|! (m − |S| − 1)! / m!
    let mut weight = vec![0.0; m.max(1)];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut v = 1.0 / m as f64;
        // 1 / (m · C(m−1, s))
        for k in 0..s {
            v *= (k + 1) as f64 / (m - 1 - k) as f64;
        }
        *w = v;
    }
    let mut phi = Matrix::zeros(rows.rows(), m);
    let mut scratch = vec![0.0; m];
    let full = 1u32 << m;
    for (r, x) in rows.iter_rows().enumerate() {
        let values: Vec<f64> = (0..full).map(|mask| coalition_value(model, x, mask, background, &mut scratch)).collect();
        let out = phi.row_mut(r);
        for (i, o) in out.iter_mut().enumerate() {
            let bit = 1u32 << i;
            let mut acc = 0.0;
            for mask in 0..full {
                if mask & bit == 0 {
                    acc += weight[mask.count_ones() as usize] * (values[(mask | bit) as usize] - values[mask as usize]);
                }
            }
            *o = acc;
        }
    }
    phi
}

fn sampled(model: &dyn Model, rows: &Matrix, background: &Matrix, n_perm: usize, seed: u64) -> (Matrix, Matrix) {
    let m = rows.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = Matrix::zeros(rows.rows(), m);
    let mut se = Matrix::zeros(rows.rows(), m);
    let mut scratch = vec![0.0; m];
    let mut order: Vec<usize> = (0..m).collect();
    for (r, x) in rows.iter_rows().enumerate() {
        let mut sum = vec![0.0; m];
        let mut sum_sq = vec![0.0; m];
        let empty = coalition_value(model, x, 0, background, &mut scratch);
        for _ in 0..n_perm {
            order.shuffle(&mut rng);
            let mut mask = 0u32;
            let mut prev = empty;
            for &i in &order {
                mask |= 1 << i;
                let v = coalition_value(model, x, mask, background, &mut scratch);
                let d = v - prev;
                sum[i] += d;
                sum_sq[i] += d * d;
                prev = v;
            }
        }
        let n = n_perm as f64;
        for i in 0..m {
            let mean = sum[i] / n;
            let var = ((sum_sq[i] - n * mean * mean) / (n - 1.0)).max(0.0);
            phi.set(r, i, mean);
            se.set(r, i, (var / n).sqrt());
        }
    }
    (phi, se)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub mean_abs_phi: f64,
}

/// Features by decreasing mean `|φ|`; ties keep feature order.
pub fn importance_ranking(result: &AttributionResult) -> Vec<Importance> {
    let n = result.phi.rows().max(1) as f64;
    let mut out: Vec<Importance> = result
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| Importance {
            feature: name.clone(),
            mean_abs_phi: result.phi.column(j).iter().map(|v| v.abs()).sum::<f64>() / n,
        })
        .collect();
    out.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi));
    out
}

fn check_values(result: &AttributionResult, values: &Matrix) -> Result<()> {
    if values.rows() != result.phi.rows() || values.cols() != result.phi.cols() {
        return Err(Error::Shape {
            op: "shap export",
            left: vec![values.rows(), values.cols()],
            right: vec![result.phi.rows(), result.phi.cols()],
        });
    }
    Ok(())
}

/// `feature,row,value,phi` for every row and feature (feature-major).
pub fn summary_csv(result: &AttributionResult, feature_values: &Matrix) -> Result<String> {
    check_values(result, feature_values)?;
    let mut out = String::from("feature,row,value,phi\n");
    for (j, name) in result.feature_names.iter().enumerate() {
        for r in 0..result.phi.rows() {
            writeln!(out, "{},{},{},{}", name, r, feature_values.get(r, j), result.phi.get(r, j)).unwrap();
        }
    }
    Ok(out)
}

/// `rank,feature,mean_abs_phi`, rank 1 first.
pub fn importance_csv(ranking: &[Importance]) -> String {
    let mut out = String::from("rank,feature,mean_abs_phi\n");
    for (k, imp) in ranking.iter().enumerate() {
        writeln!(out, "{},{},{}", k + 1, imp.feature, imp.mean_abs_phi).unwrap();
    }
    out
}

/// Writes [`summary_csv`] to `path` and returns the importance ranking.
pub fn summary_export(result: &AttributionResult, feature_values: &Matrix, path: &Path) -> Result<Vec<Importance>> {
    let body = summary_csv(result, feature_values)?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(importance_ranking(result))
}

/// `value,phi,interaction_value` per row, optionally sorted by `value`.
pub fn dependence_csv(
    result: &AttributionResult,
    feature_values: &Matrix,
    feature: &str,
    interaction_feature: &str,
    sort_by_value: bool,
) -> Result<String> {
    check_values(result, feature_values)?;
    let find = |name: &str| {
        result
            .feature_names
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::invalid("dependence_export", format!("unknown feature `{}`", name)))
    };
    let (f, g) = (find(feature)?, find(interaction_feature)?);
    let mut rows: Vec<(f64, f64, f64)> = (0..result.phi.rows())
        .map(|r| (feature_values.get(r, f), result.phi.get(r, f), feature_values.get(r, g)))
        .collect();
    if sort_by_value {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let mut out = String::from("value,phi,interaction_value\n");
    for (v, p, i) in rows {
        writeln!(out, "{},{},{}", v, p, i).unwrap();
    }
    Ok(out)
}

pub fn dependence_export(
    result: &AttributionResult,
    feature_values: &Matrix,
    feature: &str,
    interaction_feature: &str,
    sort_by_value: bool,
    path: &Path,
) -> Result<()> {
    let body = dependence_csv(result, feature_values, feature, interaction_feature, sort_by_value)?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_weights_sum_to_one_per_feature() {
        // Σ_S w(|S|) over subsets of the other m−1 features equals 1.
        let m = 5usize;
        let model = FnModel { n_features: m, f: |x: &[f64]| x[0] };
        let x = Matrix::new(1, m, vec![1.0; m]).unwrap();
        let bg = Matrix::zeros(1, m);
        let phi = exact(&model, &x, &bg);
        assert!((phi.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn background_sampling_is_seeded() {
        let x = Matrix::new(10, 1, (0..10).map(f64::from).collect()).unwrap();
        assert_eq!(sample_background(&x, 4, 1), sample_background(&x, 4, 1));
        assert_eq!(sample_background(&x, 40, 1), x);
    }
}
