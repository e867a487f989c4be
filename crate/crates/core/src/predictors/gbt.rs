use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureSet;
use super::metrics::mse;
use crate::augmentation::SYNTHETIC_COLUMN;
use crate::data::Table;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Candidate split thresholds per feature.
pub const MAX_THRESHOLDS: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("gbt", format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.min_leaf == 0 {
            return Err(Error::invalid("gbt", "min_leaf must be at least 1"));
        }
        Ok(())
    }

    /// `n_trees {100, 300} × max_depth {3, 5} × lr {0.05, 0.1} × min_leaf {5}`.
    pub fn default_grid() -> Vec<GbtConfig> {
        let mut grid = Vec::new();
        for n_trees in [100, 300] {
            for max_depth in [3, 5] {
                for learning_rate in [0.05, 0.1] {
                    grid.push(GbtConfig {
                        n_trees,
                        max_depth,
                        learning_rate,
                        min_leaf: 5,
                    });
                }
            }
        }
        grid
    }
}

/// Regression tree; rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Every feature index used by a split.
    pub fn split_features(&self, out: &mut Vec<usize>) {
        if let Node::Split { feature, left, right, .. } = self {
            out.push(*feature);
            left.split_features(out);
            right.split_features(out);
        }
    }

    fn check(&self, n_features: usize) -> Result<()> {
        match self {
            Node::Leaf { value } if value.is_finite() => Ok(()),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } if *feature < n_features && !threshold.is_nan() => {
                left.check(n_features)?;
                right.check(n_features)
            }
            _ => Err(Error::invalid("gbt", "tree has an out-of-range feature or non-finite value")),
        }
    }
}

/// `prediction = base_prediction + learning_rate · Σ tree(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeEnsemble {
    pub features: FeatureSet,
    pub base_prediction: f64,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub trees: Vec<Node>,
}

impl TreeEnsemble {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.base_prediction + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.features.len() {
            return Err(Error::Shape {
                op: "predict_gbt",
                left: vec![x.rows(), x.cols()],
                right: vec![0, self.features.len()],
            });
        }
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }

    /// Structural checks for a deserialized model.
    pub fn validate(&self) -> Result<()> {
        if !self.base_prediction.is_finite() || !self.learning_rate.is_finite() {
            return Err(Error::invalid("gbt", "non-finite base prediction or learning rate"));
        }
        for t in &self.trees {
            t.check(self.features.len())?;
            if t.depth() > self.max_depth {
                return Err(Error::invalid("gbt", "tree deeper than max_depth"));
            }
        }
        Ok(())
    }
}

pub fn predict_gbt(model: &TreeEnsemble, table: &Table) -> Result<Vec<f64>> {
    model.predict_matrix(&model.features.matrix(table)?)
}

/// Feature values mapped to threshold bins.
struct Binned {
    thresholds: Vec<Vec<f64>>,
    /// `bins[f][row]`: number of thresholds of feature `f` below the value.
    bins: Vec<Vec<u16>>,
}

fn thresholds_for(column: &[f64]) -> Vec<f64> {
    let mut v = column.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() <= MAX_THRESHOLDS + 1 {
        return v.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect();
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut t: Vec<f64> = (1..=MAX_THRESHOLDS)
        .map(|k| sorted[(k * n / (MAX_THRESHOLDS + 1)).min(n - 1)])
        .collect();
    t.dedup();
    // the largest value would send everything left
    if t.last() == v.last() {
        t.pop();
    }
    t
}

impl Binned {
    fn new(x: &Matrix) -> Self {
        let mut thresholds = Vec::with_capacity(x.cols());
        let mut bins = Vec::with_capacity(x.cols());
        for f in 0..x.cols() {
            let col = x.column(f);
            let t = thresholds_for(&col);
            bins.push(col.iter().map(|v| t.partition_point(|th| th < v) as u16).collect());
            thresholds.push(t);
        }
        Self { thresholds, bins }
    }
}

struct Builder<'a> {
    binned: &'a Binned,
    residual: &'a [f64],
    cfg: &'a GbtConfig,
    /// Leaf value reached by each training row in the tree being built.
    leaf_of: Vec<f64>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    bin: usize,
}

impl Builder<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> Node {
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&i| self.residual[i]).sum();
        let leaf = |b: &mut Self| {
            let value = sum / n as f64;
            for &i in &rows {
                b.leaf_of[i] = value;
            }
            Node::Leaf { value }
        };
        if depth >= self.cfg.max_depth || n < 2 * self.cfg.min_leaf {
            return leaf(self);
        }
        let Some(best) = self.best_split(&rows, sum) else {
            return leaf(self);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.binned.bins[best.feature][i] as usize <= best.bin);
        Node::Split {
            feature: best.feature,
            threshold: self.binned.thresholds[best.feature][best.bin],
            left: Box::new(self.build(left, depth + 1)),
            right: Box::new(self.build(right, depth + 1)),
        }
    }

    fn best_split(&self, rows: &[usize], sum: f64) -> Option<BestSplit> {
        let n = rows.len();
        let parent = sum * sum / n as f64;
        let min_leaf = self.cfg.min_leaf;
        let mut best: Option<BestSplit> = None;
        for (f, t) in self.binned.thresholds.iter().enumerate() {
            if t.is_empty() {
                continue;
            }
            let nb = t.len() + 1;
            let mut hs = vec![0.0; nb];
            let mut hc = vec![0usize; nb];
            let bins = &self.binned.bins[f];
            for &i in rows {
                let b = bins[i] as usize;
                hs[b] += self.residual[i];
                hc[b] += 1;
            }
            let (mut ls, mut lc) = (0.0, 0usize);
            for b in 0..t.len() {
                ls += hs[b];
                lc += hc[b];
                if lc < min_leaf {
                    continue;
                }
                let rc = n - lc;
                if rc < min_leaf {
                    break;
                }
                let rs = sum - ls;
                let gain = ls * ls / lc as f64 + rs * rs / rc as f64 - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                    best = Some(BestSplit { gain, feature: f, bin: b });
                }
            }
        }
        best
    }
}

/// Training-set MSE after each boosting round (entry 0 is the mean
/// predictor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtLog {
    pub train_mse: Vec<f64>,
}

/// Squared-error gradient boosting on the table's explanatory columns.
pub fn train_gbt(table: &Table, cfg: &GbtConfig) -> Result<(TreeEnsemble, GbtLog)> {
    cfg.validate()?;
    let features = FeatureSet::from_schema(table.schema());
    let x = features.matrix(table)?;
    let y = table.target_values()?;
    fit_matrix(features, &x, &y, cfg)
}

pub(crate) fn fit_matrix(features: FeatureSet, x: &Matrix, y: &[f64], cfg: &GbtConfig) -> Result<(TreeEnsemble, GbtLog)> {
    if y.is_empty() {
        return Err(Error::invalid("train_gbt", "table is empty"));
    }
    if y.len() < cfg.min_leaf {
        return Err(Error::invalid(
            "train_gbt",
            format!("{} rows is fewer than min_leaf = {}", y.len(), cfg.min_leaf),
        ));
    }
    let n = y.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let binned = Binned::new(x);
    let mut residual: Vec<f64> = y.iter().map(|v| v - base).collect();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut log = GbtLog {
        train_mse: vec![mse(&pred, y)],
    };
    for _ in 0..cfg.n_trees {
        let mut b = Builder {
            binned: &binned,
            residual: &residual,
            cfg,
            leaf_of: vec![0.0; n],
        };
        let tree = b.build((0..n).collect(), 0);
        for i in 0..n {
            pred[i] += cfg.learning_rate * b.leaf_of[i];
        }
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        trees.push(tree);
        log.train_mse.push(mse(&pred, y));
    }
    Ok((
        TreeEnsemble {
            features,
            base_prediction: base,
            learning_rate: cfg.learning_rate,
            max_depth: cfg.max_depth,
            trees,
        },
        log,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub config: GbtConfig,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: GbtConfig,
    pub table: Vec<CvRow>,
}

/// k-fold cross-validation of every config; the lowest mean validation MSE
/// wins, earlier configs winning ties.
///
/// Rows flagged in a [`SYNTHETIC_COLUMN`] are never validated on: they
/// join every training fold, and only original rows are split into folds.
pub fn grid_search(table: &Table, grid: &[GbtConfig], folds: usize, seed: u64) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::invalid("grid_search", "grid is empty"));
    }
    let synthetic: Vec<bool> = match table.schema().index_of(SYNTHETIC_COLUMN) {
        Some(c) => table.rows().iter().map(|r| r[c].as_f64() != 0.0).collect(),
        None => vec![false; table.n_rows()],
    };
    let mut order: Vec<usize> = (0..table.n_rows()).filter(|&i| !synthetic[i]).collect();
    if folds < 2 || order.len() < folds {
        return Err(Error::invalid(
            "grid_search",
            format!("cannot split {} original rows into {} folds", order.len(), folds),
        ));
    }
    let features = FeatureSet::from_schema(table.schema());
    let x = features.matrix(table)?;
    let y = table.target_values()?;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // synthetic rows keep `folds`, which matches no validation fold
    let mut fold_of = vec![folds; y.len()];
    for (k, &i) in order.iter().enumerate() {
        fold_of[i] = k % folds;
    }
    let mut rows = Vec::with_capacity(grid.len());
    for cfg in grid {
        cfg.validate()?;
        let mut fold_mse = Vec::with_capacity(folds);
        for fold in 0..folds {
            let train: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] != fold).collect();
            let valid: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] == fold).collect();
            let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let (model, _) = fit_matrix(features.clone(), &x.select_rows(&train), &ty, cfg)?;
            let pred = model.predict_matrix(&x.select_rows(&valid))?;
            let vy: Vec<f64> = valid.iter().map(|&i| y[i]).collect();
            fold_mse.push(mse(&pred, &vy));
        }
        let mean_mse = fold_mse.iter().sum::<f64>() / folds as f64;
        log::info!("grid {:?}: mean validation mse {:.6}", cfg, mean_mse);
        rows.push(CvRow {
            config: *cfg,
            fold_mse,
            mean_mse,
        });
    }
    let best = rows
        .iter()
        .fold(None::<&CvRow>, |acc, r| match acc {
            Some(a) if a.mean_mse <= r.mean_mse => Some(a),
            _ => Some(r),
        })
        .expect("grid is non-empty")
        .config;
    Ok(GridSearchResult { best, table: rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_are_midpoints_for_few_values() {
        assert_eq!(thresholds_for(&[3.0, 1.0, 2.0, 1.0]), vec![1.5, 2.5]);
        assert!(thresholds_for(&[4.0; 5]).is_empty());
    }

    #[test]
    fn thresholds_are_capped_for_many_values() {
        let col: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        let t = thresholds_for(&col);
        assert!(t.len() <= MAX_THRESHOLDS);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!(*t.last().unwrap() < 9999.0);
    }
}
