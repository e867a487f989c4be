//! Column typing and the schema sidecar format.
//!
//! A sidecar is a TOML document with one `[[columns]]` table per CSV column:
//!
//! ```toml
//! [[columns]]
//! name = "Total_Crash"
//! kind = "count"
//! values = ["0", "1", "2"]
//! target = true
//!
//! [[columns]]
//! name = "AAHT"
//! kind = "real_valued"
//! mean = 2.66     # optional until fitted
//! std = 1.75
//! ```
//!
//! Discrete columns (`count`, `ordinal`, `nominal`) list their values in
//! encoding order; `values` may be omitted, in which case they are inferred
//! from the data at load time.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Distinct observed values allowed when inferring a count column.
pub const MAX_COUNT_CARDINALITY: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Count,
    Ordinal,
    Nominal,
    RealValued,
}

impl ColumnKind {
    pub fn is_discrete(self) -> bool {
        !matches!(self, ColumnKind::RealValued)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Count => "count",
            ColumnKind::Ordinal => "ordinal",
            ColumnKind::Nominal => "nominal",
            ColumnKind::RealValued => "real_valued",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    pub fn invert(&self, standardized: f64) -> f64 {
        standardized * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Raw values of a discrete column, in encoding order.
    pub values: Vec<String>,
    pub standardization: Option<Standardization>,
}

impl ColumnSchema {
    pub fn discrete(name: impl Into<String>, kind: ColumnKind, values: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind,
            values,
            standardization: None,
        }
    }

    pub fn real(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::RealValued,
            values: Vec::new(),
            standardization: None,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn category_index(&self, raw: &str) -> Option<usize> {
        self.values.iter().position(|v| v == raw)
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Schema("column with empty name".into()));
        }
        if self.kind.is_discrete() {
            if self.values.len() < 2 {
                return Err(Error::Schema(format!(
                    "discrete column `{}` needs at least 2 values, has {}",
                    self.name,
                    self.values.len()
                )));
            }
            let mut sorted = self.values.clone();
            sorted.sort();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Schema(format!("column `{}` repeats a value", self.name)));
            }
            if self.standardization.is_some() {
                return Err(Error::Schema(format!(
                    "discrete column `{}` cannot carry mean/std",
                    self.name
                )));
            }
        } else {
            if !self.values.is_empty() {
                return Err(Error::Schema(format!(
                    "real-valued column `{}` cannot list values",
                    self.name
                )));
            }
            if let Some(s) = self.standardization {
                if !(s.std > 0.0 && s.std.is_finite() && s.mean.is_finite()) {
                    return Err(Error::Schema(format!(
                        "column `{}` has invalid standardization {:?}",
                        self.name, s
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    columns: Vec<ColumnSchema>,
    target: Option<usize>,
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnSchema>, target: Option<&str>) -> Result<Self> {
        let target = match target {
            Some(name) => Some(
                columns
                    .iter()
                    .position(|c| c.name == name)
                    .ok_or_else(|| Error::Schema(format!("target column `{}` not in schema", name)))?,
            ),
            None => None,
        };
        let schema = Self { columns, target };
        schema.validate_structure()?;
        Ok(schema)
    }

    /// Like [`TableSchema::new`] but allows discrete columns with no values
    /// yet (to be inferred from data).
    fn new_partial(columns: Vec<ColumnSchema>, target: Option<usize>) -> Self {
        Self { columns, target }
    }

    fn validate_structure(&self) -> Result<()> {
        for c in &self.columns {
            c.validate()?;
        }
        for (i, c) in self.columns.iter().enumerate() {
            if self.columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        if let Some(t) = self.target {
            let col = &self.columns[t];
            if !col.kind.is_discrete() {
                return Err(Error::Schema(format!(
                    "target `{}` must be a discrete count column",
                    col.name
                )));
            }
            if let Some(bad) = col.values.iter().find(|v| parse_count(v).is_none()) {
                return Err(Error::Schema(format!(
                    "target `{}` has non-numeric value `{}`",
                    col.name, bad
                )));
            }
        }
        Ok(())
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    pub fn column(&self, i: usize) -> &ColumnSchema {
        &self.columns[i]
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target_index(&self) -> Option<usize> {
        self.target
    }

    pub fn target_name(&self) -> Option<&str> {
        self.target.map(|t| self.columns[t].name.as_str())
    }

    pub(crate) fn require_target(&self) -> Result<usize> {
        self.target
            .ok_or_else(|| Error::Schema("schema declares no target column".into()))
    }

    /// Numeric value of each target category.
    pub fn target_levels(&self) -> Result<Vec<f64>> {
        let t = self.require_target()?;
        Ok(self.columns[t]
            .values
            .iter()
            .map(|v| parse_count(v).expect("validated at construction"))
            .collect())
    }

    pub fn is_fitted(&self) -> bool {
        self.columns
            .iter()
            .all(|c| c.kind.is_discrete() || c.standardization.is_some())
    }

    /// Copies standardization from `fitted`, which must share this schema's
    /// structure.
    pub fn with_standardization_of(&self, fitted: &TableSchema) -> Result<Self> {
        if self.fingerprint() != fitted.fingerprint() {
            return Err(Error::Schema(format!(
                "schema structure differs: {}",
                self.diff(fitted).join("; ")
            )));
        }
        Ok(fitted.clone())
    }

    pub(crate) fn set_standardization(&mut self, col: usize, s: Standardization) {
        self.columns[col].standardization = Some(s);
    }

    /// Appends a column (used for the synthetic-provenance flag).
    pub fn with_column(&self, column: ColumnSchema) -> Result<Self> {
        let mut columns = self.columns.clone();
        columns.push(column);
        let schema = Self {
            columns,
            target: self.target,
        };
        schema.validate_structure()?;
        Ok(schema)
    }

    /// Drops the named column if present.
    pub fn without_column(&self, name: &str) -> Self {
        let Some(i) = self.index_of(name) else {
            return self.clone();
        };
        let mut columns = self.columns.clone();
        columns.remove(i);
        let target = self.target.and_then(|t| match t.cmp(&i) {
            std::cmp::Ordering::Less => Some(t),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(t - 1),
        });
        Self { columns, target }
    }

    /// SHA-256 over the canonical JSON form of the column structure (names,
    /// kinds, values, target). Standardization is excluded, so a fitted schema
    /// and its unfitted sidecar share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut bare = self.clone();
        for c in bare.columns.iter_mut() {
            c.standardization = None;
        }
        let canonical = serde_json::to_vec(&bare).expect("schema serializes");
        hex(&Sha256::digest(&canonical))
    }

    /// Re-checks invariants of a schema obtained by deserialization.
    pub fn validated(self) -> Result<Self> {
        if let Some(t) = self.target {
            if t >= self.columns.len() {
                return Err(Error::Schema(format!("target index {} out of range", t)));
            }
        }
        if self.columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        self.validate_structure()?;
        Ok(self)
    }

    /// Human-readable list of differences, empty when equal.
    pub fn diff(&self, other: &TableSchema) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.columns {
            match other.index_of(&c.name) {
                None => out.push(format!("column `{}` missing on right", c.name)),
                Some(j) => {
                    let o = &other.columns[j];
                    if o.kind != c.kind {
                        out.push(format!(
                            "column `{}` kind {} vs {}",
                            c.name,
                            c.kind.as_str(),
                            o.kind.as_str()
                        ));
                    } else if o.values != c.values {
                        out.push(format!("column `{}` value lists differ", c.name));
                    }
                }
            }
        }
        for o in &other.columns {
            if self.index_of(&o.name).is_none() {
                out.push(format!("column `{}` missing on left", o.name));
            }
        }
        if self.target_name() != other.target_name() {
            out.push(format!(
                "target {:?} vs {:?}",
                self.target_name(),
                other.target_name()
            ));
        }
        out
    }

    // ------------------------------------------------------------ sidecar io

    /// Parses a sidecar. Discrete columns may omit `values`; such a schema
    /// is only usable after [`TableSchema::infer_values`].
    pub fn from_sidecar_str(text: &str) -> Result<Self> {
        let doc: SidecarDoc = toml::from_str(text)?;
        let mut target = None;
        let mut columns = Vec::with_capacity(doc.columns.len());
        for (i, c) in doc.columns.into_iter().enumerate() {
            if c.target {
                if target.is_some() {
                    return Err(Error::Schema("more than one target column".into()));
                }
                target = Some(i);
            }
            let standardization = match (c.mean, c.std) {
                (Some(mean), Some(std)) => Some(Standardization { mean, std }),
                (None, None) => None,
                _ => {
                    return Err(Error::Schema(format!(
                        "column `{}` must give both mean and std or neither",
                        c.name
                    )))
                }
            };
            columns.push(ColumnSchema {
                name: c.name,
                kind: c.kind,
                values: c.values.unwrap_or_default(),
                standardization,
            });
        }
        if columns.is_empty() {
            return Err(Error::Schema("sidecar declares no columns".into()));
        }
        let schema = Self::new_partial(columns, target);
        if schema.needs_inference() {
            // validate everything except the missing value lists
            let mut probe = schema.clone();
            for c in probe.columns.iter_mut() {
                if c.kind.is_discrete() && c.values.is_empty() {
                    c.values = vec!["0".into(), "1".into()];
                }
            }
            probe.validate_structure()?;
        } else {
            schema.validate_structure()?;
        }
        Ok(schema)
    }

    pub fn to_sidecar_string(&self) -> Result<String> {
        let doc = SidecarDoc {
            columns: self
                .columns
                .iter()
                .enumerate()
                .map(|(i, c)| SidecarColumn {
                    name: c.name.clone(),
                    kind: c.kind,
                    values: c.kind.is_discrete().then(|| c.values.clone()),
                    target: self.target == Some(i),
                    mean: c.standardization.map(|s| s.mean),
                    std: c.standardization.map(|s| s.std),
                })
                .collect(),
        };
        Ok(toml::to_string(&doc)?)
    }

    pub(crate) fn needs_inference(&self) -> bool {
        self.columns
            .iter()
            .any(|c| c.kind.is_discrete() && c.values.is_empty())
    }

    /// Fills missing discrete value lists from raw column cells.
    pub(crate) fn infer_values(&mut self, raw_columns: &[Vec<&str>]) -> Result<()> {
        for (c, cells) in self.columns.iter_mut().zip(raw_columns) {
            if !(c.kind.is_discrete() && c.values.is_empty()) {
                continue;
            }
            let mut distinct: Vec<String> = cells.iter().map(|s| s.trim().to_string()).collect();
            distinct.sort();
            distinct.dedup();
            if c.kind == ColumnKind::Count && distinct.len() > MAX_COUNT_CARDINALITY {
                return Err(Error::Schema(format!(
                    "count column `{}` has {} distinct values (limit {}); declare it \
                     real_valued or bin it and list the bins under `values`",
                    c.name,
                    distinct.len(),
                    MAX_COUNT_CARDINALITY
                )));
            }
            sort_values(&mut distinct);
            if distinct.len() == 1 {
                // keep the column well-formed; the extra level is never observed
                let extra = match distinct[0].parse::<f64>() {
                    Ok(v) => format_number(v + 1.0),
                    Err(_) => format!("{}_other", distinct[0]),
                };
                distinct.push(extra);
            }
            c.values = distinct;
        }
        self.validate_structure()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarDoc {
    columns: Vec<SidecarColumn>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarColumn {
    name: String,
    kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    target: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    std: Option<f64>,
}

/// Parses a count level such as `"3"` or `"3.0"`.
pub(crate) fn parse_count(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Numeric order when every value parses as a number, lexicographic otherwise.
pub(crate) fn sort_values(values: &mut [String]) {
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        values.sort_by(|a, b| {
            let (x, y): (f64, f64) = (a.parse().unwrap(), b.parse().unwrap());
            x.total_cmp(&y)
        });
    } else {
        values.sort();
    }
}

pub(crate) fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{}", v)
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{:02x}", b);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIDECAR: &str = r#"
[[columns]]
name = "Total_Crash"
kind = "count"
values = ["0", "1", "2"]
target = true

[[columns]]
name = "Surface"
kind = "nominal"
values = ["Asphalt", "Concrete"]

[[columns]]
name = "AAHT"
kind = "real_valued"
"#;

    #[test]
    fn sidecar_round_trip() {
        let s = TableSchema::from_sidecar_str(SIDECAR).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.target_name(), Some("Total_Crash"));
        assert!(!s.is_fitted());
        let text = s.to_sidecar_string().unwrap();
        assert_eq!(TableSchema::from_sidecar_str(&text).unwrap(), s);
    }

    #[test]
    fn rejects_single_value_discrete() {
        let bad = SIDECAR.replace(r#"["Asphalt", "Concrete"]"#, r#"["Asphalt"]"#);
        assert!(TableSchema::from_sidecar_str(&bad).is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = format!("{SIDECAR}\ncolour = \"red\"\n");
        assert!(TableSchema::from_sidecar_str(&bad).is_err());
    }

    #[test]
    fn fingerprint_tracks_values() {
        let a = TableSchema::from_sidecar_str(SIDECAR).unwrap();
        let b = TableSchema::from_sidecar_str(&SIDECAR.replace("Concrete", "Gravel")).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        let mut fitted = a.clone();
        fitted.set_standardization(2, Standardization { mean: 1.0, std: 2.0 });
        assert_eq!(a.fingerprint(), fitted.fingerprint());
        assert_eq!(a.diff(&b).len(), 1);
    }

    #[test]
    fn numeric_values_sort_numerically() {
        let mut v: Vec<String> = ["10", "2", "1"].iter().map(|s| s.to_string()).collect();
        sort_values(&mut v);
        assert_eq!(v, ["1", "2", "10"]);
    }
}
