use std::path::Path;

use super::schema::{format_number, ColumnKind, ColumnSchema, Standardization, TableSchema};
use crate::error::{Error, Result};

/// One cell: a category index into the column's value list, or a raw real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Category(usize),
    Real(f64),
}

impl Value {
    pub fn category(self) -> Option<usize> {
        match self {
            Value::Category(c) => Some(c),
            Value::Real(_) => None,
        }
    }

    pub fn real(self) -> Option<f64> {
        match self {
            Value::Real(r) => Some(r),
            Value::Category(_) => None,
        }
    }

    /// Category index or raw real, as a number.
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Category(c) => c as f64,
            Value::Real(r) => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: TableSchema,
    rows: Vec<Vec<Value>>,
}

impl Table {
    /// Validates every row against the schema.
    pub fn new(schema: TableSchema, rows: Vec<Vec<Value>>) -> Result<Self> {
        for (r, row) in rows.iter().enumerate() {
            check_row(&schema, r, row)?;
        }
        Ok(Self { schema, rows })
    }

    pub fn empty(schema: TableSchema) -> Self {
        Self {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Value] {
        &self.rows[i]
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_values(&self, col: usize) -> Vec<Value> {
        self.rows.iter().map(|r| r[col]).collect()
    }

    pub fn push_row(&mut self, row: Vec<Value>) -> Result<()> {
        check_row(&self.schema, self.rows.len(), &row)?;
        self.rows.push(row);
        Ok(())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn filter_rows(&self, mut keep: impl FnMut(&[Value]) -> bool) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Appends `other`'s rows; schemas must agree on columns and values.
    pub fn concat(&self, other: &Table) -> Result<Self> {
        let diff = self.schema.diff(&other.schema);
        if !diff.is_empty() {
            return Err(Error::Schema(format!("cannot concatenate: {}", diff.join("; "))));
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(Self {
            schema: self.schema.clone(),
            rows,
        })
    }

    /// Same rows under a schema that differs only in standardization.
    pub fn with_schema(&self, schema: TableSchema) -> Result<Self> {
        let diff = self.schema.diff(&schema);
        if !diff.is_empty() {
            return Err(Error::Schema(format!("incompatible schema: {}", diff.join("; "))));
        }
        Ok(Self {
            schema,
            rows: self.rows.clone(),
        })
    }

    /// Appends a column filled with one value.
    pub fn with_constant_column(&self, column: ColumnSchema, value: Value) -> Result<Self> {
        let schema = self.schema.with_column(column)?;
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.push(value);
                r
            })
            .collect();
        Table::new(schema, rows)
    }

    pub fn without_column(&self, name: &str) -> Self {
        let Some(i) = self.schema.index_of(name) else {
            return self.clone();
        };
        Self {
            schema: self.schema.without_column(name),
            rows: self
                .rows
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.remove(i);
                    r
                })
                .collect(),
        }
    }

    /// Numeric target values (the count each category stands for).
    pub fn target_values(&self) -> Result<Vec<f64>> {
        let t = self.schema.require_target()?;
        let levels = self.schema.target_levels()?;
        Ok(self
            .rows
            .iter()
            .map(|r| levels[r[t].category().expect("target is discrete")])
            .collect())
    }

    /// Count of rows with zero and non-zero target.
    pub fn zero_nonzero_counts(&self) -> Result<(usize, usize)> {
        let y = self.target_values()?;
        let zeros = y.iter().filter(|v| **v == 0.0).count();
        Ok((zeros, y.len() - zeros))
    }

    /// Returns a schema whose real-valued columns carry this table's
    /// mean and population std. A zero std is replaced by 1.
    pub fn fit_standardization(&self) -> TableSchema {
        let mut schema = self.schema.clone();
        for (j, c) in self.schema.columns().iter().enumerate() {
            if c.kind != ColumnKind::RealValued {
                continue;
            }
            let (mean, std) = if self.rows.is_empty() {
                (0.0, 1.0)
            } else {
                let n = self.rows.len() as f64;
                let vals: Vec<f64> = self.rows.iter().map(|r| r[j].as_f64()).collect();
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            };
            let std = if std > 1e-12 && std.is_finite() { std } else { 1.0 };
            schema.set_standardization(j, Standardization { mean, std });
        }
        schema
    }

    // ------------------------------------------------------------------ csv

    pub fn read_csv(reader: impl std::io::Read, schema: &TableSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut source = Vec::with_capacity(schema.len());
        for c in schema.columns() {
            let pos = header.iter().position(|h| *h == c.name).ok_or_else(|| Error::Cell {
                row: 0,
                column: c.name.clone(),
                message: "column missing from CSV header".into(),
            })?;
            source.push(pos);
        }
        if let Some(extra) = header.iter().find(|h| schema.index_of(h).is_none()) {
            return Err(Error::Cell {
                row: 0,
                column: extra.clone(),
                message: "column not declared in schema".into(),
            });
        }

        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            records.push(rec);
        }

        let mut schema = schema.clone();
        if schema.needs_inference() {
            let raw: Vec<Vec<&str>> = source
                .iter()
                .map(|&p| records.iter().map(|r| r.get(p).unwrap_or("")).collect())
                .collect();
            schema.infer_values(&raw)?;
        }

        let mut rows = Vec::with_capacity(records.len());
        for (r, rec) in records.iter().enumerate() {
            // data rows are 1-based after the header
            let line = r + 1;
            let mut row = Vec::with_capacity(schema.len());
            for (c, &p) in schema.columns().iter().zip(&source) {
                let cell = rec.get(p).ok_or_else(|| Error::Cell {
                    row: line,
                    column: c.name.clone(),
                    message: "missing cell".into(),
                })?;
                row.push(parse_cell(c, cell.trim()).map_err(|message| Error::Cell {
                    row: line,
                    column: c.name.clone(),
                    message,
                })?);
            }
            rows.push(row);
        }
        Ok(Self { schema, rows })
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        w.write_record(self.schema.columns().iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(self.schema.columns().iter().zip(row).map(|(c, v)| format_cell(c, *v)))?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn load_csv(path: &Path, schema: &TableSchema) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), schema)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Loads a CSV with its schema sidecar.
pub fn load_csv(path: &Path, schema_path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(schema_path).map_err(|e| Error::io(schema_path, e))?;
    let schema = TableSchema::from_sidecar_str(&text)?;
    Table::load_csv(path, &schema)
}

fn parse_cell(col: &ColumnSchema, cell: &str) -> std::result::Result<Value, String> {
    if col.kind.is_discrete() {
        if let Some(i) = col.category_index(cell) {
            return Ok(Value::Category(i));
        }
        // tolerate "2.0" for a level listed as "2"
        if let Ok(v) = cell.parse::<f64>() {
            if let Some(i) = col
                .values
                .iter()
                .position(|s| s.parse::<f64>().is_ok_and(|x| x == v))
            {
                return Ok(Value::Category(i));
            }
        }
        Err(format!("unknown category `{}`", cell))
    } else {
        let v: f64 = cell
            .parse()
            .map_err(|_| format!("cannot parse `{}` as a number", cell))?;
        if !v.is_finite() {
            return Err(format!("non-finite value `{}`", cell));
        }
        Ok(Value::Real(v))
    }
}

fn format_cell(col: &ColumnSchema, v: Value) -> String {
    match v {
        Value::Category(i) => col.values[i].clone(),
        Value::Real(r) if col.kind == ColumnKind::RealValued => format!("{}", r),
        Value::Real(r) => format_number(r),
    }
}

fn check_row(schema: &TableSchema, r: usize, row: &[Value]) -> Result<()> {
    if row.len() != schema.len() {
        return Err(Error::Cell {
            row: r + 1,
            column: String::new(),
            message: format!("row has {} cells, schema has {} columns", row.len(), schema.len()),
        });
    }
    for (c, v) in schema.columns().iter().zip(row) {
        let bad = match (c.kind.is_discrete(), v) {
            (true, Value::Category(i)) if *i < c.cardinality() => None,
            (true, Value::Category(i)) => Some(format!("category index {} out of range", i)),
            (true, Value::Real(_)) => Some("real value in a discrete column".to_string()),
            (false, Value::Real(x)) if x.is_finite() => None,
            (false, Value::Real(_)) => Some("non-finite value".to_string()),
            (false, Value::Category(_)) => Some("category in a real-valued column".to_string()),
        };
        if let Some(message) = bad {
            return Err(Error::Cell {
                row: r + 1,
                column: c.name.clone(),
                message,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> TableSchema {
        TableSchema::from_sidecar_str(
            r#"
[[columns]]
name = "y"
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
"#,
        )
        .unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let csv = "y,Surface,AAHT\n0,Asphalt,1.5\n2,Concrete,0.25\n1,Asphalt,3\n";
        let t = Table::read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.row(1), &[Value::Category(2), Value::Category(1), Value::Real(0.25)]);
        assert_eq!(t.target_values().unwrap(), vec![0.0, 2.0, 1.0]);
    }

    #[test]
    fn unknown_category_names_row_and_column() {
        let csv = "y,Surface,AAHT\n0,Asphalt,1.5\n1,Gravel,2.0\n";
        let err = Table::read_csv(csv.as_bytes(), &schema()).unwrap_err();
        match err {
            Error::Cell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "Surface");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unparseable_number_is_rejected() {
        let csv = "y,Surface,AAHT\n0,Asphalt,fast\n";
        let err = Table::read_csv(csv.as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("AAHT"), "{err}");
    }

    #[test]
    fn missing_column_is_rejected() {
        let csv = "y,AAHT\n0,1.5\n";
        let err = Table::read_csv(csv.as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("Surface"), "{err}");
    }

    #[test]
    fn infers_values_when_omitted() {
        let s = TableSchema::from_sidecar_str(
            "[[columns]]\nname = \"y\"\nkind = \"count\"\ntarget = true\n",
        )
        .unwrap();
        let t = Table::read_csv("y\n10\n2\n0\n2\n".as_bytes(), &s).unwrap();
        assert_eq!(t.schema().column(0).values, ["0", "2", "10"]);
    }

    #[test]
    fn count_cardinality_cap() {
        let s = TableSchema::from_sidecar_str("[[columns]]\nname = \"y\"\nkind = \"count\"\n").unwrap();
        let body: String = (0..40).map(|i| format!("{i}\n")).collect();
        let err = Table::read_csv(format!("y\n{body}").as_bytes(), &s).unwrap_err();
        assert!(err.to_string().contains("limit 32"), "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let csv = "y,Surface,AAHT\n0,Asphalt,1.5\n2,Concrete,0.1\n";
        let t = Table::read_csv(csv.as_bytes(), &schema()).unwrap();
        let out = t.to_csv_string().unwrap();
        assert_eq!(out, csv);
    }
}
