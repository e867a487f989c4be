use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared error overall and on rows with a non-zero target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n_overall: usize,
    pub n_nonzero: usize,
    pub mse_overall: f64,
    pub rmse_overall: f64,
    /// 0 when no target is non-zero.
    pub mse_nonzero: f64,
    pub rmse_nonzero: f64,
}

impl AccuracyReport {
    pub const CSV_HEADER: &'static str = "n_overall,n_nonzero,mse_overall,rmse_overall,mse_nonzero,rmse_nonzero";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.n_overall, self.n_nonzero, self.mse_overall, self.rmse_overall, self.mse_nonzero, self.rmse_nonzero
        )
    }
}

pub(crate) fn mse(pred: &[f64], y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

pub fn evaluate(predictions: &[f64], targets: &[f64]) -> Result<AccuracyReport> {
    if predictions.len() != targets.len() {
        return Err(Error::invalid(
            "evaluate",
            format!("{} predictions for {} targets", predictions.len(), targets.len()),
        ));
    }
    let (np, nt): (Vec<f64>, Vec<f64>) = predictions
        .iter()
        .zip(targets)
        .filter(|(_, t)| **t != 0.0)
        .map(|(p, t)| (*p, *t))
        .unzip();
    let mse_overall = mse(predictions, targets);
    let mse_nonzero = mse(&np, &nt);
    Ok(AccuracyReport {
        n_overall: targets.len(),
        n_nonzero: nt.len(),
        mse_overall,
        rmse_overall: mse_overall.sqrt(),
        mse_nonzero,
        rmse_nonzero: mse_nonzero.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_report() {
        let r = evaluate(&[0.0, 0.0], &[0.0, 2.0]).unwrap();
        assert_eq!(r.mse_overall, 2.0);
        assert_eq!(r.rmse_overall, 2f64.sqrt());
        assert_eq!(r.mse_nonzero, 4.0);
        assert_eq!(r.rmse_nonzero, 2.0);
        assert_eq!((r.n_overall, r.n_nonzero), (2, 1));
    }

    #[test]
    fn perfect_predictions_and_length_mismatch() {
        let y = [0.0, 1.0, 3.0];
        let r = evaluate(&y, &y).unwrap();
        assert_eq!([r.mse_overall, r.rmse_overall, r.mse_nonzero, r.rmse_nonzero], [0.0; 4]);
        assert!(evaluate(&[1.0], &y).is_err());
    }
}
