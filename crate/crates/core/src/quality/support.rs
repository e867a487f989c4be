use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `{0.05, 0.10, …, 0.95}`.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

/// Centroid of `reference`, and for each level in `grid` the radius
/// containing that fraction of `reference`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidBalls {
    pub centroid: Vec<f64>,
    pub radii: Vec<f64>,
}

impl CentroidBalls {
    pub fn fit(reference: &Matrix, grid: &[f64]) -> Result<Self> {
        if reference.rows() == 0 {
            return Err(Error::invalid("support", "reference set is empty"));
        }
        if let Some(a) = grid.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::invalid("support", format!("grid level {} outside (0, 1]", a)));
        }
        let (centroid, _) = reference.column_moments();
        let mut d: Vec<f64> = reference.iter_rows().map(|r| distance(r, &centroid)).collect();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        // smallest radius covering at least a fraction `a` of the reference
        let radii = grid
            .iter()
            .map(|a| d[((a * n as f64).ceil() as usize).clamp(1, n) - 1])
            .collect();
        Ok(Self { centroid, radii })
    }

    /// Fraction of `points` inside each ball.
    pub fn coverage(&self, points: &Matrix) -> Result<Vec<f64>> {
        if points.rows() == 0 {
            return Err(Error::invalid("support", "evaluated set is empty"));
        }
        if points.cols() != self.centroid.len() {
            return Err(Error::Shape {
                op: "support",
                left: vec![points.rows(), points.cols()],
                right: vec![1, self.centroid.len()],
            });
        }
        let d: Vec<f64> = points.iter_rows().map(|r| distance(r, &self.centroid)).collect();
        let n = d.len() as f64;
        Ok(self
            .radii
            .iter()
            .map(|r| d.iter().filter(|x| **x <= *r).count() as f64 / n)
            .collect())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `clamp(1 − 2 · mean |P_a − a|, 0, 1)`.
pub fn aggregate(coverage: &[f64], grid: &[f64]) -> f64 {
    let dev = coverage.iter().zip(grid).map(|(p, a)| (p - a).abs()).sum::<f64>() / grid.len().max(1) as f64;
    (1.0 - 2.0 * dev).clamp(0.0, 1.0)
}

/// Share of synthetic points inside the real set's α-balls, aggregated
/// over `grid`.
pub fn alpha_precision_matrix(real: &Matrix, synthetic: &Matrix, grid: &[f64]) -> Result<f64> {
    let balls = CentroidBalls::fit(real, grid)?;
    Ok(aggregate(&balls.coverage(synthetic)?, grid))
}

/// Share of real points inside the synthetic set's β-balls, aggregated
/// over `grid`.
pub fn beta_recall_matrix(real: &Matrix, synthetic: &Matrix, grid: &[f64]) -> Result<f64> {
    let balls = CentroidBalls::fit(synthetic, grid)?;
    Ok(aggregate(&balls.coverage(real)?, grid))
}
