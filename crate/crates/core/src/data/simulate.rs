//! Ground-truth zero-inflated Poisson tables.
//!
//! Explanatory columns are drawn independently from declared marginals.
//! Each row then enters the zero state with probability `p` and otherwise
//! draws its count from `Poisson(λ)`, where `logit p` and `log λ` are built
//! from the row's standardized features. A feature is the raw value (or the
//! category index for discrete columns) centered and scaled by the moments of
//! the generated sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::schema::{format_number, ColumnKind, ColumnSchema, TableSchema};
use super::table::{Table, Value};
use crate::autodiff::sigmoid;
use crate::error::{Error, Result};

/// Counts above this are clamped so the target stays within the
/// count-cardinality cap.
pub const MAX_SIMULATED_COUNT: u64 = 31;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    /// Normal, redrawn until it lands in `[min, max]`.
    Normal { mean: f64, std: f64, min: f64, max: f64 },
    /// `min + LogNormal` with the given overall mean and std, redrawn above `max`.
    ShiftedLogNormal { mean: f64, std: f64, min: f64, max: f64 },
    /// Category probabilities, aligned with the column's values.
    Categorical { probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanatorySpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Raw values for discrete kinds.
    #[serde(default)]
    pub values: Vec<String>,
    pub marginal: Marginal,
}

/// One additive contribution to `logit p` or `log λ`, over standardized
/// features `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Term {
    /// `weight * z`
    Linear { feature: String, weight: f64 },
    /// `weight * cos(frequency * z)`
    Cosine { feature: String, frequency: f64, weight: f64 },
    /// `weight` when `z > threshold`
    Step { feature: String, threshold: f64, weight: f64 },
    /// `weight * z_a * z_b`
    Product { a: String, b: String, weight: f64 },
}

impl Term {
    fn features(&self) -> Vec<&str> {
        match self {
            Term::Linear { feature, .. } | Term::Cosine { feature, .. } | Term::Step { feature, .. } => {
                vec![feature]
            }
            Term::Product { a, b, .. } => vec![a, b],
        }
    }

    fn eval(&self, z: &[f64], index: &impl Fn(&str) -> usize) -> f64 {
        match self {
            Term::Linear { feature, weight } => weight * z[index(feature)],
            Term::Cosine {
                feature,
                frequency,
                weight,
            } => weight * (frequency * z[index(feature)]).cos(),
            Term::Step {
                feature,
                threshold,
                weight,
            } => {
                if z[index(feature)] > *threshold {
                    *weight
                } else {
                    0.0
                }
            }
            Term::Product { a, b, weight } => weight * z[index(a)] * z[index(b)],
        }
    }
}

/// Zero-state logit and Poisson log-rate, each an intercept plus terms.
///
/// Infinite intercepts are allowed: `+inf` for the zero logit forces `p = 1`,
/// `-inf` forces `p = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZipParams {
    pub zero_intercept: f64,
    #[serde(default)]
    pub zero_terms: Vec<Term>,
    pub rate_intercept: f64,
    #[serde(default)]
    pub rate_terms: Vec<Term>,
}

impl ZipParams {
    pub fn constant(zero_logit: f64, log_rate: f64) -> Self {
        Self {
            zero_intercept: zero_logit,
            zero_terms: Vec::new(),
            rate_intercept: log_rate,
            rate_terms: Vec::new(),
        }
    }

    /// True when every term is linear.
    pub fn is_linear(&self) -> bool {
        self.zero_terms
            .iter()
            .chain(&self.rate_terms)
            .all(|t| matches!(t, Term::Linear { .. }))
    }

    /// Linear weights per feature in `names` order, for comparison with a
    /// fitted log-linear model. Non-linear terms are ignored.
    pub fn linear_weights(&self, names: &[&str]) -> (Vec<f64>, Vec<f64>) {
        let collect = |terms: &[Term]| {
            names
                .iter()
                .map(|n| {
                    terms
                        .iter()
                        .map(|t| match t {
                            Term::Linear { feature, weight } if feature == n => *weight,
                            _ => 0.0,
                        })
                        .sum()
                })
                .collect()
        };
        (collect(&self.zero_terms), collect(&self.rate_terms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub columns: Vec<ExplanatorySpec>,
    pub target: String,
}

impl SimulationSpec {
    pub fn validate(&self, params: &ZipParams) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("simulate_zip_table", m));
        if self.columns.is_empty() {
            return bad("no explanatory columns".into());
        }
        for (i, c) in self.columns.iter().enumerate() {
            if c.name == self.target || self.columns[..i].iter().any(|o| o.name == c.name) {
                return bad(format!("duplicate column `{}`", c.name));
            }
            match (&c.marginal, c.kind.is_discrete()) {
                (Marginal::Categorical { probs }, true) => {
                    if probs.len() != c.values.len() || probs.len() < 2 {
                        return bad(format!(
                            "column `{}` needs one probability per value (at least 2)",
                            c.name
                        ));
                    }
                    let total: f64 = probs.iter().sum();
                    if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
                        return bad(format!("column `{}` probabilities must sum to 1", c.name));
                    }
                }
                (
                    Marginal::Normal { mean, std, min, max }
                    | Marginal::ShiftedLogNormal { mean, std, min, max },
                    false,
                ) => {
                    if !(std.is_finite() && *std > 0.0 && min < max && mean.is_finite()) {
                        return bad(format!("column `{}` has an invalid marginal", c.name));
                    }
                    if matches!(c.marginal, Marginal::ShiftedLogNormal { .. }) && mean <= min {
                        return bad(format!("column `{}` needs mean above min", c.name));
                    }
                }
                _ => {
                    return bad(format!(
                        "column `{}` marginal does not match kind {}",
                        c.name,
                        c.kind.as_str()
                    ))
                }
            }
        }
        for t in params.zero_terms.iter().chain(&params.rate_terms) {
            for f in t.features() {
                if self.index_of(f).is_none() {
                    return bad(format!("term references unknown column `{}`", f));
                }
            }
        }
        for w in [params.zero_intercept, params.rate_intercept] {
            if w.is_nan() {
                return bad("NaN intercept".into());
            }
        }
        if params.rate_intercept == f64::INFINITY {
            return bad("infinite log-rate".into());
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn explanatory_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Fourteen explanatory columns with Table-style marginals plus a
    /// `Total_Crash` count target.
    pub fn paper_shaped() -> Self {
        let nominal = |name: &str, p1: f64| ExplanatorySpec {
            name: name.into(),
            kind: ColumnKind::Nominal,
            values: vec!["0".into(), "1".into()],
            marginal: Marginal::Categorical {
                probs: vec![1.0 - p1, p1],
            },
        };
        let normal = |name: &str, mean: f64, std: f64, min: f64, max: f64| ExplanatorySpec {
            name: name.into(),
            kind: ColumnKind::RealValued,
            values: Vec::new(),
            marginal: Marginal::Normal { mean, std, min, max },
        };
        let skewed = |name: &str, mean: f64, std: f64, min: f64, max: f64| ExplanatorySpec {
            name: name.into(),
            kind: ColumnKind::RealValued,
            values: Vec::new(),
            marginal: Marginal::ShiftedLogNormal { mean, std, min, max },
        };
        let hours: Vec<String> = (0..24).map(|h| h.to_string()).collect();
        Self {
            columns: vec![
                ExplanatorySpec {
                    name: "Hour".into(),
                    kind: ColumnKind::Ordinal,
                    marginal: Marginal::Categorical {
                        probs: vec![1.0 / 24.0; 24],
                    },
                    values: hours,
                },
                ExplanatorySpec {
                    name: "Number_of_Lanes".into(),
                    kind: ColumnKind::Ordinal,
                    values: ["2", "3", "4", "5"].iter().map(|s| s.to_string()).collect(),
                    marginal: Marginal::Categorical {
                        probs: vec![0.03, 0.47, 0.49, 0.01],
                    },
                },
                nominal("Light_Presence", 0.305),
                nominal("Surface_Type", 0.61),
                nominal("Direction", 0.5),
                skewed("AAHT", 2.8, 1.76, 0.0001, 8.62),
                skewed("Segment_Length", 0.142, 0.136, 0.05, 1.1),
                skewed("Lane_Width", 12.37, 1.35, 11.0, 22.0),
                normal("Roadway_Width", 85.8, 14.5, 55.0, 132.0),
                skewed("Median_Width", 59.8, 51.7, 7.0, 300.0),
                normal("Left_Shoulder_Width", 8.9, 3.1, 0.0, 12.0),
                normal("Right_Shoulder_Width", 8.9, 3.1, 0.0, 12.0),
                skewed("Curvature_degree", 0.68, 0.99, 0.0, 4.07),
                normal("Grade_Percentage", 0.1, 2.1, -5.0, 5.0),
            ],
            target: "Total_Crash".into(),
        }
    }

    /// Four explanatory columns (`x1`, `x2` real; `lit` binary; `band`
    /// ordinal with four levels) and a `y` count target.
    pub fn small() -> Self {
        let normal = |name: &str| ExplanatorySpec {
            name: name.into(),
            kind: ColumnKind::RealValued,
            values: Vec::new(),
            marginal: Marginal::Normal {
                mean: 0.0,
                std: 1.0,
                min: -4.0,
                max: 4.0,
            },
        };
        Self {
            columns: vec![
                normal("x1"),
                normal("x2"),
                ExplanatorySpec {
                    name: "lit".into(),
                    kind: ColumnKind::Nominal,
                    values: vec!["0".into(), "1".into()],
                    marginal: Marginal::Categorical { probs: vec![0.6, 0.4] },
                },
                ExplanatorySpec {
                    name: "band".into(),
                    kind: ColumnKind::Ordinal,
                    values: ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
                    marginal: Marginal::Categorical {
                        probs: vec![0.25; 4],
                    },
                },
            ],
            target: "y".into(),
        }
    }
}

impl ZipParams {
    /// Log-linear law for [`SimulationSpec::paper_shaped`], giving about 85%
    /// zero rows.
    pub fn paper_shaped_linear() -> Self {
        let lin = |f: &str, w: f64| Term::Linear {
            feature: f.into(),
            weight: w,
        };
        Self {
            zero_intercept: 1.05,
            zero_terms: vec![lin("AAHT", -0.45), lin("Segment_Length", -0.3), lin("Light_Presence", 0.1)],
            rate_intercept: -0.25,
            rate_terms: vec![
                lin("AAHT", 0.35),
                lin("Segment_Length", 0.25),
                lin("Hour", 0.1),
                lin("Grade_Percentage", -0.15),
                lin("Lane_Width", -0.1),
                lin("Curvature_degree", 0.1),
                lin("Median_Width", -0.05),
                lin("Surface_Type", 0.1),
            ],
        }
    }

    /// The linear law plus rush-hour, traffic-threshold and interaction
    /// effects that a log-linear fit cannot represent. Also about 85% zeros.
    pub fn paper_shaped_nonlinear() -> Self {
        let mut p = Self::paper_shaped_linear();
        p.zero_intercept = 1.2;
        p.rate_intercept = -0.55;
        p.zero_terms.push(Term::Cosine {
            feature: "Hour".into(),
            frequency: 3.6,
            weight: -0.6,
        });
        p.rate_terms.extend([
            Term::Cosine {
                feature: "Hour".into(),
                frequency: 3.6,
                weight: 0.6,
            },
            Term::Step {
                feature: "AAHT".into(),
                threshold: 0.8,
                weight: 0.7,
            },
            Term::Product {
                a: "Lane_Width".into(),
                b: "Curvature_degree".into(),
                weight: -0.3,
            },
        ]);
        p
    }

    /// Log-linear law for [`SimulationSpec::small`].
    pub fn small_linear() -> Self {
        let lin = |f: &str, w: f64| Term::Linear {
            feature: f.into(),
            weight: w,
        };
        Self {
            zero_intercept: 0.4,
            zero_terms: vec![lin("x1", -0.8), lin("lit", 0.5)],
            rate_intercept: 0.3,
            rate_terms: vec![lin("x1", 0.5), lin("x2", -0.3), lin("band", 0.2), lin("lit", 0.25)],
        }
    }
}

/// Draws `n_rows` rows from `spec` under `params`.
pub fn simulate_zip_table(n_rows: usize, spec: &SimulationSpec, params: &ZipParams, seed: u64) -> Result<Table> {
    spec.validate(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.columns.len();

    let mut raw: Vec<Vec<Value>> = Vec::with_capacity(m);
    for c in &spec.columns {
        let col = (0..n_rows)
            .map(|_| draw(&c.marginal, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        raw.push(col);
    }

    let features = standardized_columns(&raw);
    let index = |name: &str| spec.index_of(name).expect("validated");
    let mut counts = Vec::with_capacity(n_rows);
    let mut z = vec![0.0; m];
    for i in 0..n_rows {
        for (zj, f) in z.iter_mut().zip(&features) {
            *zj = f[i];
        }
        let zero_logit = params.zero_intercept + params.zero_terms.iter().map(|t| t.eval(&z, &index)).sum::<f64>();
        let log_rate = params.rate_intercept + params.rate_terms.iter().map(|t| t.eval(&z, &index)).sum::<f64>();
        let p = sigmoid(zero_logit);
        let u: f64 = rng.random();
        let y = if u < p {
            0
        } else {
            let lambda = log_rate.exp();
            if lambda <= 1e-300 {
                0
            } else if !lambda.is_finite() {
                MAX_SIMULATED_COUNT
            } else {
                let d = Poisson::new(lambda).map_err(|e| Error::invalid("simulate_zip_table", e.to_string()))?;
                (d.sample(&mut rng) as u64).min(MAX_SIMULATED_COUNT)
            }
        };
        counts.push(y);
    }

    let max_count = counts.iter().copied().max().unwrap_or(0).max(1);
    let mut columns = vec![ColumnSchema::discrete(
        spec.target.clone(),
        ColumnKind::Count,
        (0..=max_count).map(|v| v.to_string()).collect(),
    )];
    for c in &spec.columns {
        columns.push(match c.kind {
            ColumnKind::RealValued => ColumnSchema::real(c.name.clone()),
            kind => ColumnSchema::discrete(c.name.clone(), kind, c.values.clone()),
        });
    }
    let schema = TableSchema::new(columns, Some(&spec.target))?;

    let rows = (0..n_rows)
        .map(|i| {
            let mut row = Vec::with_capacity(m + 1);
            row.push(Value::Category(counts[i] as usize));
            row.extend(raw.iter().map(|col| col[i]));
            row
        })
        .collect();
    Table::new(schema, rows)
}

/// Columns centered and scaled by their sample moments; a constant column
/// maps to zeros.
pub(crate) fn standardized_columns(columns: &[Vec<Value>]) -> Vec<Vec<f64>> {
    columns
        .iter()
        .map(|col| {
            let v: Vec<f64> = col.iter().map(|x| x.as_f64()).collect();
            standardize(&v)
        })
        .collect()
}

pub(crate) fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let std = if std > 1e-12 { std } else { 1.0 };
    v.iter().map(|x| (x - mean) / std).collect()
}

fn draw(m: &Marginal, rng: &mut ChaCha8Rng) -> Result<Value> {
    const TRIES: usize = 1000;
    let err = |e: rand_distr::NormalError| Error::invalid("simulate_zip_table", e.to_string());
    Ok(match m {
        Marginal::Categorical { probs } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            Value::Category(pick)
        }
        Marginal::Normal { mean, std, min, max } => {
            let d = Normal::new(*mean, *std).map_err(err)?;
            let mut x = d.sample(rng);
            for _ in 0..TRIES {
                if (*min..=*max).contains(&x) {
                    break;
                }
                x = d.sample(rng);
            }
            Value::Real(x.clamp(*min, *max))
        }
        Marginal::ShiftedLogNormal { mean, std, min, max } => {
            let excess = mean - min;
            let s2 = (1.0 + (std / excess).powi(2)).ln();
            let d = Normal::new(excess.ln() - 0.5 * s2, s2.sqrt()).map_err(err)?;
            let mut x = min + d.sample(rng).exp();
            for _ in 0..TRIES {
                if x <= *max {
                    break;
                }
                x = min + d.sample(rng).exp();
            }
            Value::Real(x.clamp(*min, *max))
        }
    })
}

/// Renders a count level the way simulated tables spell it.
pub fn count_label(v: u64) -> String {
    format_number(v as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SimulationSpec {
        SimulationSpec {
            columns: vec![ExplanatorySpec {
                name: "x".into(),
                kind: ColumnKind::RealValued,
                values: Vec::new(),
                marginal: Marginal::Normal {
                    mean: 0.0,
                    std: 1.0,
                    min: -5.0,
                    max: 5.0,
                },
            }],
            target: "y".into(),
        }
    }

    #[test]
    fn certain_zero_state_gives_all_zeros() {
        let t = simulate_zip_table(500, &tiny_spec(), &ZipParams::constant(f64::INFINITY, 1.0), 4).unwrap();
        assert!(t.target_values().unwrap().iter().all(|y| *y == 0.0));
    }

    #[test]
    fn no_zero_state_gives_poisson_mean() {
        let n = 10_000;
        let t = simulate_zip_table(n, &tiny_spec(), &ZipParams::constant(f64::NEG_INFINITY, 2f64.ln()), 5).unwrap();
        let y = t.target_values().unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        // Poisson(2): variance 2
        let se = (2.0 / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn reproducible_under_seed() {
        let spec = SimulationSpec::paper_shaped();
        let p = ZipParams::paper_shaped_nonlinear();
        let a = simulate_zip_table(300, &spec, &p, 11).unwrap();
        let b = simulate_zip_table(300, &spec, &p, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_laws_are_mostly_zero() {
        let spec = SimulationSpec::paper_shaped();
        for p in [ZipParams::paper_shaped_linear(), ZipParams::paper_shaped_nonlinear()] {
            let t = simulate_zip_table(17856, &spec, &p, 2024).unwrap();
            let (z, nz) = t.zero_nonzero_counts().unwrap();
            let frac = z as f64 / (z + nz) as f64;
            assert!((0.80..=0.90).contains(&frac), "zero fraction {frac}");
            assert_eq!(t.n_cols(), 15);
        }
    }

    #[test]
    fn empty_table_keeps_schema() {
        let t = simulate_zip_table(0, &SimulationSpec::paper_shaped(), &ZipParams::paper_shaped_linear(), 1).unwrap();
        assert_eq!(t.n_rows(), 0);
        assert_eq!(t.n_cols(), 15);
    }

    #[test]
    fn unknown_term_feature_is_rejected() {
        let mut p = ZipParams::constant(0.0, 0.0);
        p.rate_terms.push(Term::Linear {
            feature: "nope".into(),
            weight: 1.0,
        });
        assert!(simulate_zip_table(10, &tiny_spec(), &p, 0).is_err());
    }
}
