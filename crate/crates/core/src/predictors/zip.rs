use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::FeatureSet;
use crate::autodiff::sigmoid;
use crate::data::Table;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZipConfig {
    pub max_iter: usize,
    /// Converged once an EM iteration improves the log-likelihood by less.
    pub tol: f64,
    /// Added to the diagonal of every inner Newton system.
    pub ridge: f64,
    pub inner_iter: usize,
}

impl Default for ZipConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tol: 1e-7,
            ridge: 1e-6,
            inner_iter: 50,
        }
    }
}

/// Zero-inflated Poisson regression:
/// `P(y = 0) = p + (1 − p) e^{−λ}`, `P(y = k) = (1 − p) λ^k e^{−λ} / k!`,
/// with `logit p = γ·x̃` and `ln λ = β·x̃`, where `x̃ = [1, standardized
/// features]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZipModel {
    pub features: FeatureSet,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// `[intercept, one weight per feature]` of the zero-state logit.
    pub zero_coef: Vec<f64>,
    /// `[intercept, one weight per feature]` of the log rate.
    pub rate_coef: Vec<f64>,
    /// Standard errors from the observed information; absent if singular.
    pub zero_se: Option<Vec<f64>>,
    pub rate_se: Option<Vec<f64>>,
    pub log_likelihood: f64,
    /// Log-likelihood after initialization and after every EM iteration.
    pub trajectory: Vec<f64>,
}

/// `(1 − p) λ`.
pub fn zip_expectation(p: f64, lambda: f64) -> f64 {
    (1.0 - p) * lambda
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_factorial(k: f64) -> f64 {
    (2..=k as u64).map(|i| (i as f64).ln()).sum()
}

/// Design rows `[1, (x − mean)/std]` plus integer targets.
struct Design {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    log_fact: Vec<f64>,
}

impl Design {
    fn loglik(&self, gamma: &[f64], beta: &[f64]) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .zip(&self.log_fact)
            .map(|((x, &y), lf)| {
                let eta = dot(gamma, x);
                let mu = dot(beta, x);
                if y == 0.0 {
                    // log(e^η + e^{−λ}) − log(1 + e^η)
                    let (a, b) = (eta, -mu.exp());
                    let m = a.max(b);
                    m + ((a - m).exp() + (b - m).exp()).ln() - softplus(eta)
                } else {
                    -softplus(eta) + y * mu - mu.exp() - lf
                }
            })
            .sum()
    }

    /// Posterior zero-state probability per row.
    fn responsibilities(&self, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(x, &y)| {
                if y != 0.0 {
                    return 0.0;
                }
                // e^η / (e^η + e^{−λ}) = σ(η + λ)
                sigmoid(dot(gamma, x) + dot(beta, x).exp())
            })
            .collect()
    }
}

/// Newton ascent with step halving on a concave objective given by
/// `eval(θ) -> (value, gradient, negative Hessian)`.
fn newton_ascent(
    theta: &mut [f64],
    cfg: &ZipConfig,
    eval: impl Fn(&[f64]) -> (f64, Vec<f64>, DMatrix<f64>),
    value: impl Fn(&[f64]) -> f64,
) {
    let k = theta.len();
    for _ in 0..cfg.inner_iter {
        let (f0, g, mut h) = eval(theta);
        for i in 0..k {
            h[(i, i)] += cfg.ridge;
        }
        let Some(chol) = h.cholesky() else {
            return;
        };
        let step = chol.solve(&DVector::from_vec(g));
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let f1 = value(&cand);
            if f1.is_finite() && f1 >= f0 {
                theta.copy_from_slice(&cand);
                improved = f1 - f0 > 1e-13 * (1.0 + f0.abs());
                break;
            }
            scale *= 0.5;
        }
        if !improved || step.amax() * scale < 1e-10 {
            return;
        }
    }
}

fn outer(rows: &[Vec<f64>], weights: &[f64]) -> DMatrix<f64> {
    let k = rows.first().map_or(0, |r| r.len());
    let mut h = DMatrix::zeros(k, k);
    for (x, &w) in rows.iter().zip(weights) {
        for a in 0..k {
            let wa = w * x[a];
            for b in a..k {
                h[(a, b)] += wa * x[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    h
}

fn weighted_sum(rows: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let k = rows.first().map_or(0, |r| r.len());
    let mut g = vec![0.0; k];
    for (x, &w) in rows.iter().zip(weights) {
        for (g, v) in g.iter_mut().zip(x) {
            *g += w * v;
        }
    }
    g
}

/// Maximum-likelihood ZIP by EM over the latent zero state, with Newton
/// (IRLS) M-steps.
pub fn fit_zip(table: &Table, cfg: &ZipConfig) -> Result<ZipModel> {
    let features = FeatureSet::from_schema(table.schema());
    let x = features.matrix(table)?;
    let y = table.target_values()?;
    fit_zip_matrix(features, &x, &y, cfg)
}

pub(crate) fn fit_zip_matrix(features: FeatureSet, x: &Matrix, y: &[f64], cfg: &ZipConfig) -> Result<ZipModel> {
    if y.is_empty() {
        return Err(Error::invalid("fit_zip", "table is empty"));
    }
    if let Some(bad) = y.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0)) {
        return Err(Error::invalid("fit_zip", format!("target {} is not a non-negative integer", bad)));
    }
    if y.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid(
            "fit_zip",
            "every target is zero; the zero-inflation probability is not identifiable",
        ));
    }
    let (means, stds) = x.column_moments();
    let stds: Vec<f64> = stds.into_iter().map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
    let rows: Vec<Vec<f64>> = x
        .iter_rows()
        .map(|r| {
            std::iter::once(1.0)
                .chain(r.iter().zip(&means).zip(&stds).map(|((v, m), s)| (v - m) / s))
                .collect()
        })
        .collect();
    let design = Design {
        log_fact: y.iter().map(|v| log_factorial(*v)).collect(),
        x: rows,
        y: y.to_vec(),
    };
    let k = x.cols() + 1;
    let positive: Vec<f64> = y.iter().copied().filter(|v| *v > 0.0).collect();
    let mut gamma = vec![0.0; k];
    let mut beta = vec![0.0; k];
    beta[0] = (positive.iter().sum::<f64>() / positive.len() as f64).ln();

    let mut ll = design.loglik(&gamma, &beta);
    let mut trajectory = vec![ll];
    let mut converged = false;
    for iter in 0..cfg.max_iter {
        let w = design.responsibilities(&gamma, &beta);
        // M-step for γ: Σ w η − log(1 + e^η)
        newton_ascent(
            &mut gamma,
            cfg,
            |g| {
                let (mut f, mut resid, mut curv) = (0.0, Vec::with_capacity(w.len()), Vec::with_capacity(w.len()));
                for (x, wi) in design.x.iter().zip(&w) {
                    let eta = dot(g, x);
                    let p = sigmoid(eta);
                    f += wi * eta - softplus(eta);
                    resid.push(wi - p);
                    curv.push(p * (1.0 - p));
                }
                (f, weighted_sum(&design.x, &resid), outer(&design.x, &curv))
            },
            |g| design.x.iter().zip(&w).map(|(x, wi)| {
                let eta = dot(g, x);
                wi * eta - softplus(eta)
            }).sum(),
        );
        // M-step for β: Σ (1 − w)(y μ − e^μ)
        newton_ascent(
            &mut beta,
            cfg,
            |b| {
                let (mut f, mut resid, mut curv) = (0.0, Vec::with_capacity(w.len()), Vec::with_capacity(w.len()));
                for ((x, wi), &yi) in design.x.iter().zip(&w).zip(&design.y) {
                    let mu = dot(b, x);
                    let lam = mu.exp();
                    f += (1.0 - wi) * (yi * mu - lam);
                    resid.push((1.0 - wi) * (yi - lam));
                    curv.push((1.0 - wi) * lam);
                }
                (f, weighted_sum(&design.x, &resid), outer(&design.x, &curv))
            },
            |b| design.x.iter().zip(&w).zip(&design.y).map(|((x, wi), &yi)| {
                let mu = dot(b, x);
                (1.0 - wi) * (yi * mu - mu.exp())
            }).sum(),
        );
        let next = design.loglik(&gamma, &beta);
        if !next.is_finite() {
            return Err(Error::Diverged { stage: "zip em iteration", index: iter });
        }
        if next < ll - 1e-9 * (1.0 + ll.abs()) {
            return Err(Error::Convergence(format!(
                "fit_zip: log-likelihood decreased from {} to {} at iteration {}",
                ll, next, iter
            )));
        }
        trajectory.push(next);
        let gain = next - ll;
        ll = next;
        if gain < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let tail: Vec<String> = trajectory.iter().rev().take(5).rev().map(|v| format!("{:.6}", v)).collect();
        return Err(Error::Convergence(format!(
            "fit_zip: no convergence within {} iterations; last log-likelihoods [{}]",
            cfg.max_iter,
            tail.join(", ")
        )));
    }
    let (zero_se, rate_se) = match standard_errors(&design, &gamma, &beta) {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    Ok(ZipModel {
        features,
        means,
        stds,
        zero_coef: gamma,
        rate_coef: beta,
        zero_se,
        rate_se,
        log_likelihood: ll,
        trajectory,
    })
}

/// Square roots of the diagonal of the inverse observed information of
/// the full likelihood in `(γ, β)`.
fn standard_errors(design: &Design, gamma: &[f64], beta: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let k = gamma.len();
    let mut info = DMatrix::<f64>::zeros(2 * k, 2 * k);
    for (x, &y) in design.x.iter().zip(&design.y) {
        let eta = dot(gamma, x);
        let lam = dot(beta, x).exp();
        let p = sigmoid(eta);
        // second derivatives of the row log-likelihood in (η, μ)
        let (hee, hmm, hem) = if y == 0.0 {
            let r = sigmoid(eta + lam);
            (r * (1.0 - r) - p * (1.0 - p), -lam * (1.0 - r) + lam * lam * r * (1.0 - r), lam * (1.0 - r) * r)
        } else {
            (-p * (1.0 - p), -lam, 0.0)
        };
        for a in 0..k {
            for b in 0..k {
                let xx = x[a] * x[b];
                info[(a, b)] -= hee * xx;
                info[(k + a, k + b)] -= hmm * xx;
                info[(a, k + b)] -= hem * xx;
                info[(k + a, b)] -= hem * xx;
            }
        }
    }
    let cov = info.cholesky()?.inverse();
    let se = |i: usize| cov[(i, i)].max(0.0).sqrt();
    Some(((0..k).map(se).collect(), (k..2 * k).map(se).collect()))
}

impl ZipModel {
    /// `(p, λ)` for one row of raw features.
    pub fn components(&self, x: &[f64]) -> (f64, f64) {
        let z: Vec<f64> = std::iter::once(1.0)
            .chain(x.iter().zip(&self.means).zip(&self.stds).map(|((v, m), s)| (v - m) / s))
            .collect();
        (sigmoid(dot(&self.zero_coef, &z)), dot(&self.rate_coef, &z).exp())
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.features.len() {
            return Err(Error::Shape {
                op: "zip_predict",
                left: vec![x.rows(), x.cols()],
                right: vec![0, self.features.len()],
            });
        }
        Ok(x.iter_rows()
            .map(|r| {
                let (p, lam) = self.components(r);
                zip_expectation(p, lam)
            })
            .collect())
    }

    /// Structural checks for a deserialized model.
    pub fn validate(&self) -> Result<()> {
        let k = self.features.len();
        let lens_ok = self.means.len() == k
            && self.stds.len() == k
            && self.zero_coef.len() == k + 1
            && self.rate_coef.len() == k + 1
            && self.zero_se.as_ref().is_none_or(|s| s.len() == k + 1)
            && self.rate_se.as_ref().is_none_or(|s| s.len() == k + 1);
        if !lens_ok {
            return Err(Error::invalid("zip", "coefficient vectors do not match the feature count"));
        }
        let finite = self
            .means
            .iter()
            .chain(&self.zero_coef)
            .chain(&self.rate_coef)
            .all(|v| v.is_finite())
            && self.stds.iter().all(|s| *s > 0.0 && s.is_finite());
        if !finite {
            return Err(Error::invalid("zip", "non-finite coefficient or non-positive scale"));
        }
        Ok(())
    }
}

pub fn zip_predict(model: &ZipModel, table: &Table) -> Result<Vec<f64>> {
    model.predict_matrix(&model.features.matrix(table)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectation_cases() {
        assert_eq!(zip_expectation(1.0, 5.0), 0.0);
        assert_eq!(zip_expectation(0.0, 3.0), 3.0);
        assert_eq!(zip_expectation(0.5, 2.0), 1.0);
    }

    #[test]
    fn log_factorial_small_values() {
        assert_eq!(log_factorial(0.0), 0.0);
        assert_eq!(log_factorial(1.0), 0.0);
        assert!((log_factorial(5.0) - 120f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }
}
