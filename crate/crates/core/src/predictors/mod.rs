//! Crash-count predictors: squared-error gradient-boosted trees and a
//! zero-inflated Poisson baseline, plus MSE/RMSE evaluation.
//!
//! Both models read the table's explanatory columns through
//! [`FeatureSet`] and are saved as JSON model files tagged by `model`
//! (`"gbt"` or `"zip"`).

mod features;
mod gbt;
mod metrics;
mod zip;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{FeatureColumn, FeatureSet};
pub use gbt::{
    grid_search, predict_gbt, train_gbt, CvRow, GbtConfig, GbtLog, GridSearchResult, Node, TreeEnsemble,
    MAX_THRESHOLDS,
};
pub use metrics::{evaluate, AccuracyReport};
pub use zip::{fit_zip, zip_expectation, zip_predict, ZipConfig, ZipModel};

use crate::data::Table;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelFile {
    Gbt(TreeEnsemble),
    Zip(ZipModel),
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(text)?;
        match &m {
            ModelFile::Gbt(t) => t.validate()?,
            ModelFile::Zip(z) => z.validate()?,
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn features(&self) -> &FeatureSet {
        match self {
            ModelFile::Gbt(t) => &t.features,
            ModelFile::Zip(z) => &z.features,
        }
    }

    pub fn predict(&self, table: &Table) -> Result<Vec<f64>> {
        match self {
            ModelFile::Gbt(t) => predict_gbt(t, table),
            ModelFile::Zip(z) => zip_predict(z, table),
        }
    }

    pub fn predict_matrix(&self, x: &crate::matrix::Matrix) -> Result<Vec<f64>> {
        match self {
            ModelFile::Gbt(t) => t.predict_matrix(x),
            ModelFile::Zip(z) => z.predict_matrix(x),
        }
    }
}
