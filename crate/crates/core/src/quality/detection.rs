use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Rank-based ROC AUC; tied scores count one half.
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::invalid("auc", "labels and scores differ in length"));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("auc", "both classes must be present"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks (1-based) over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Logistic regression fitted by full-batch gradient descent on mean
/// log-loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticClassifier {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LogisticClassifier {
    pub fn fit(x: &Matrix, y: &[bool], iterations: usize, lr: f64) -> Self {
        let (n, p) = (x.rows(), x.cols());
        let mut w = vec![0.0; p];
        let mut b = 0.0;
        let mut grad = vec![0.0; p];
        for _ in 0..iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (row, &label) in x.iter_rows().zip(y) {
                let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let r = sigmoid(z) - if label { 1.0 } else { 0.0 };
                gb += r;
                for (g, a) in grad.iter_mut().zip(row) {
                    *g += r * a;
                }
            }
            let scale = lr / n.max(1) as f64;
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= scale * g;
            }
            b -= scale * gb;
        }
        Self { weights: w, intercept: b }
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>()
    }

    /// Probability of the positive class, strictly inside (0, 1) for
    /// finite inputs of moderate size.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.decision(row))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct C2stConfig {
    pub folds: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for C2stConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            iterations: 500,
            lr: 0.1,
            seed: 0,
        }
    }
}

/// `1 − (max(AUC, 0.5) · 2 − 1)` from the mean cross-validated AUC of a
/// logistic classifier separating `real` (label 0) from `synthetic`
/// (label 1). Rows are encoded feature vectors.
///
/// Rows are put in a canonical order before folds are drawn, so the score
/// does not depend on the input row order. Folds are stratified by label.
pub fn c2st_matrix(real: &Matrix, synthetic: &Matrix, cfg: &C2stConfig) -> Result<f64> {
    Ok(detection_score(cross_validated_auc(real, synthetic, cfg)?))
}

pub fn detection_score(auc: f64) -> f64 {
    1.0 - (auc.max(0.5) * 2.0 - 1.0)
}

pub fn cross_validated_auc(real: &Matrix, synthetic: &Matrix, cfg: &C2stConfig) -> Result<f64> {
    if real.cols() != synthetic.cols() {
        return Err(Error::Shape {
            op: "c2st",
            left: vec![real.rows(), real.cols()],
            right: vec![synthetic.rows(), synthetic.cols()],
        });
    }
    if cfg.folds < 2 {
        return Err(Error::invalid("c2st", "need at least 2 folds"));
    }
    if real.rows() < cfg.folds || synthetic.rows() < cfg.folds {
        return Err(Error::invalid(
            "c2st",
            format!(
                "{} real and {} synthetic rows cannot fill {} folds",
                real.rows(),
                synthetic.rows(),
                cfg.folds
            ),
        ));
    }
    let x = standardize_columns(&real.vstack(synthetic)?);
    let labels: Vec<bool> = (0..x.rows()).map(|i| i >= real.rows()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fold_of = vec![0usize; x.rows()];
    for class in [false, true] {
        let mut members: Vec<usize> = (0..x.rows()).filter(|&i| labels[i] == class).collect();
        members.sort_by(|&a, &b| cmp_rows(x.row(a), x.row(b)));
        members.shuffle(&mut rng);
        for (k, &i) in members.iter().enumerate() {
            fold_of[i] = k % cfg.folds;
        }
    }

    let mut total = 0.0;
    for fold in 0..cfg.folds {
        let train: Vec<usize> = (0..x.rows()).filter(|&i| fold_of[i] != fold).collect();
        let valid: Vec<usize> = (0..x.rows()).filter(|&i| fold_of[i] == fold).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let model = LogisticClassifier::fit(&xt, &yt, cfg.iterations, cfg.lr);
        let scores: Vec<f64> = valid.iter().map(|&i| model.decision(x.row(i))).collect();
        let yv: Vec<bool> = valid.iter().map(|&i| labels[i]).collect();
        total += auc(&yv, &scores)?;
    }
    Ok(total / cfg.folds as f64)
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// Centers and scales each column by its own moments; constant columns
/// become zero.
pub(crate) fn standardize_columns(x: &Matrix) -> Matrix {
    let (mean, std) = x.column_moments();
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(&mean).zip(&std) {
            *v = if *s > 1e-12 { (*v - m) / s } else { 0.0 };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_hand_examples() {
        let labels = [false, false, true, true];
        assert_eq!(auc(&labels, &[0.1, 0.4, 0.35, 0.8]).unwrap(), 0.75);
        assert_eq!(auc(&labels, &[0.1, 0.2, 0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(auc(&labels, &[0.4, 0.3, 0.2, 0.1]).unwrap(), 0.0);
        assert_eq!(auc(&labels, &[0.5; 4]).unwrap(), 0.5);
        assert!(auc(&[true, true], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn detection_score_formula() {
        assert_eq!(detection_score(0.5), 1.0);
        assert_eq!(detection_score(0.3), 1.0);
        assert_eq!(detection_score(1.0), 0.0);
        assert!((detection_score(0.75) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn too_few_rows_for_folds() {
        let a = Matrix::zeros(3, 2);
        assert!(c2st_matrix(&a, &a, &C2stConfig::default()).is_err());
    }

    #[test]
    fn probabilities_stay_inside_unit_interval() {
        let x = Matrix::new(4, 1, vec![-1.0, -0.5, 0.5, 1.0]).unwrap();
        let m = LogisticClassifier::fit(&x, &[false, false, true, true], 200, 0.5);
        for r in x.iter_rows() {
            let p = m.predict_proba(r);
            assert!(p > 0.0 && p < 1.0);
        }
        assert!(m.weights[0] > 0.0);
    }
}
