use serde::{Deserialize, Serialize};

use crate::augmentation::SYNTHETIC_COLUMN;
use crate::data::{ColumnKind, Table, TableSchema};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One explanatory input of a predictor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<String>,
}

/// Explanatory columns of a table, in schema order: everything except the
/// target and the synthetic-row flag.
///
/// Features are numeric: a discrete cell becomes its category index and a
/// real cell keeps its raw value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub columns: Vec<FeatureColumn>,
}

impl FeatureSet {
    pub fn from_schema(schema: &TableSchema) -> Self {
        let target = schema.target_index();
        let columns = schema
            .columns()
            .iter()
            .enumerate()
            .filter(|(j, c)| Some(*j) != target && c.name != SYNTHETIC_COLUMN)
            .map(|(_, c)| FeatureColumn {
                name: c.name.clone(),
                kind: c.kind,
                values: c.values.clone(),
            })
            .collect();
        Self { columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Column positions of each feature in `schema`, checking kinds and
    /// category lists.
    pub fn resolve(&self, schema: &TableSchema) -> Result<Vec<usize>> {
        self.columns
            .iter()
            .map(|f| {
                let j = schema
                    .index_of(&f.name)
                    .ok_or_else(|| Error::Schema(format!("table lacks feature column `{}`", f.name)))?;
                let c = schema.column(j);
                if c.kind != f.kind {
                    return Err(Error::Schema(format!(
                        "feature `{}` is {} in the model but {} in the table",
                        f.name,
                        f.kind.as_str(),
                        c.kind.as_str()
                    )));
                }
                if c.values != f.values {
                    return Err(Error::Schema(format!("feature `{}` has different category values", f.name)));
                }
                Ok(j)
            })
            .collect()
    }

    /// Rows × features numeric matrix.
    pub fn matrix(&self, table: &Table) -> Result<Matrix> {
        let idx = self.resolve(table.schema())?;
        let mut data = Vec::with_capacity(table.n_rows() * idx.len());
        for r in table.rows() {
            data.extend(idx.iter().map(|&j| r[j].as_f64()));
        }
        Matrix::new(table.n_rows(), idx.len(), data)
    }
}
