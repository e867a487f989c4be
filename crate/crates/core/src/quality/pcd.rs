use serde::{Deserialize, Serialize};

use crate::data::Table;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcdResult {
    pub columns: Vec<String>,
    /// `|S_AB − R_AB| / 2` for every pair; symmetric with zero diagonal.
    pub matrix: Vec<Vec<f64>>,
    /// Mean over pairs `A < B`.
    pub mean: f64,
    /// Columns constant in either table; their entries are reported as 0.
    pub zero_variance: Vec<String>,
}

/// Pearson correlation, or `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 1e-24 * n || syy <= 1e-24 * n {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Column-major numeric view: category index for discrete columns, the
/// standardized value for real ones.
fn numeric_columns(table: &Table) -> Vec<Vec<f64>> {
    let schema = table.schema();
    (0..table.n_cols())
        .map(|j| {
            let s = schema.column(j).standardization;
            table
                .rows()
                .iter()
                .map(|r| {
                    let v = r[j].as_f64();
                    match (r[j].real(), s) {
                        (Some(_), Some(s)) => s.apply(v),
                        _ => v,
                    }
                })
                .collect()
        })
        .collect()
}

fn variance_free(col: &[f64]) -> bool {
    col.windows(2).all(|w| w[0] == w[1])
}

/// Pair-wise correlation difference between the real (`R`) and the
/// synthetic (`S`) table.
pub fn pcd(real: &Table, synthetic: &Table) -> Result<PcdResult> {
    let diff = real.schema().diff(synthetic.schema());
    if !diff.is_empty() {
        return Err(Error::Schema(format!("pcd: {}", diff.join("; "))));
    }
    if real.n_rows() < 2 || synthetic.n_rows() < 2 {
        return Err(Error::invalid("pcd", "both tables need at least 2 rows"));
    }
    let r = numeric_columns(real);
    let s = numeric_columns(synthetic);
    let m = r.len();
    let flagged: Vec<bool> = (0..m).map(|j| variance_free(&r[j]) || variance_free(&s[j])).collect();
    let mut matrix = vec![vec![0.0; m]; m];
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..m {
        for b in a + 1..m {
            pairs += 1;
            if flagged[a] || flagged[b] {
                continue;
            }
            let entry = match (pearson(&r[a], &r[b]), pearson(&s[a], &s[b])) {
                (Some(rc), Some(sc)) => (sc - rc).abs() / 2.0,
                _ => 0.0,
            };
            matrix[a][b] = entry;
            matrix[b][a] = entry;
            total += entry;
        }
    }
    let columns: Vec<String> = real.schema().columns().iter().map(|c| c.name.clone()).collect();
    let zero_variance: Vec<String> = (0..m).filter(|&j| flagged[j]).map(|j| columns[j].clone()).collect();
    for name in &zero_variance {
        log::warn!("pcd: column `{}` has zero variance; its entries are reported as 0", name);
    }
    Ok(PcdResult {
        columns,
        matrix,
        mean: if pairs == 0 { 0.0 } else { total / pairs as f64 },
        zero_variance,
    })
}
