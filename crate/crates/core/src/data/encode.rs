use super::schema::{ColumnKind, TableSchema};
use super::table::{Table, Value};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Where one schema column lives inside an encoded row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub column: usize,
    pub start: usize,
    pub width: usize,
    pub discrete: bool,
}

/// Encoded layout: standardized real columns first, then one one-hot span
/// per discrete column, each group in schema order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    spans: Vec<Span>,
    width: usize,
}

impl Layout {
    pub fn new(schema: &TableSchema) -> Self {
        let mut spans = Vec::with_capacity(schema.len());
        let mut at = 0;
        for (j, c) in schema.columns().iter().enumerate() {
            if c.kind == ColumnKind::RealValued {
                spans.push(Span {
                    column: j,
                    start: at,
                    width: 1,
                    discrete: false,
                });
                at += 1;
            }
        }
        for (j, c) in schema.columns().iter().enumerate() {
            if c.kind.is_discrete() {
                spans.push(Span {
                    column: j,
                    start: at,
                    width: c.cardinality(),
                    discrete: true,
                });
                at += c.cardinality();
            }
        }
        Self { spans, width: at }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Spans in encoded order.
    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn span_of(&self, column: usize) -> &Span {
        self.spans
            .iter()
            .find(|s| s.column == column)
            .expect("every column has a span")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub values: Matrix,
    pub layout: Layout,
}

/// One-hot encodes discrete columns and standardizes real ones.
pub fn encode(table: &Table) -> Result<EncodedMatrix> {
    let schema = table.schema();
    if !schema.is_fitted() {
        return Err(Error::Schema(
            "schema is not fitted: real-valued columns need mean/std".into(),
        ));
    }
    let layout = Layout::new(schema);
    let mut m = Matrix::zeros(table.n_rows(), layout.width());
    for (i, row) in table.rows().iter().enumerate() {
        let out = m.row_mut(i);
        for s in layout.spans() {
            match row[s.column] {
                Value::Category(c) => out[s.start + c] = 1.0,
                Value::Real(x) => {
                    let st = schema.column(s.column).standardization.expect("fitted");
                    out[s.start] = st.apply(x);
                }
            }
        }
    }
    Ok(EncodedMatrix { values: m, layout })
}

/// Inverse of [`encode`]: argmax per one-hot span (lowest index on ties),
/// de-standardized reals.
pub fn decode_encoded(matrix: &Matrix, schema: &TableSchema) -> Result<Table> {
    if !schema.is_fitted() {
        return Err(Error::Schema("schema is not fitted".into()));
    }
    let layout = Layout::new(schema);
    if matrix.cols() != layout.width() {
        return Err(Error::Shape {
            op: "decode_encoded",
            left: vec![matrix.rows(), matrix.cols()],
            right: vec![matrix.rows(), layout.width()],
        });
    }
    let mut rows = Vec::with_capacity(matrix.rows());
    for r in matrix.iter_rows() {
        let mut row = vec![Value::Real(0.0); schema.len()];
        for s in layout.spans() {
            let cells = &r[s.start..s.start + s.width];
            row[s.column] = if s.discrete {
                Value::Category(argmax(cells))
            } else {
                let st = schema.column(s.column).standardization.expect("fitted");
                let v = st.invert(cells[0]);
                if !v.is_finite() {
                    return Err(Error::NonFinite { op: "decode_encoded" });
                }
                Value::Real(v)
            };
        }
        rows.push(row);
    }
    Table::new(schema.clone(), rows)
}

/// Index of the largest entry; the first one wins ties. NaN never wins.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] || xs[best].is_nan() && !x.is_nan() {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{ColumnSchema, Standardization};

    fn schema() -> TableSchema {
        let mut real = ColumnSchema::real("w");
        real.standardization = Some(Standardization { mean: 10.0, std: 2.0 });
        TableSchema::new(
            vec![
                ColumnSchema::discrete("light", ColumnKind::Nominal, vec!["0".into(), "1".into()]),
                real,
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn nominal_index_one_is_second_slot() {
        let t = Table::new(schema(), vec![vec![Value::Category(1), Value::Real(10.0)]]).unwrap();
        let e = encode(&t).unwrap();
        // real first, then one-hot
        assert_eq!(e.values.row(0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn decode_rules() {
        let m = Matrix::new(3, 3, vec![1.0, 0.9, 0.1, 0.0, 0.5, 0.5, -1.0, 0.2, 0.7]).unwrap();
        let t = decode_encoded(&m, &schema()).unwrap();
        assert_eq!(t.row(0), &[Value::Category(0), Value::Real(12.0)]);
        assert_eq!(t.row(1)[0], Value::Category(0));
        assert_eq!(t.row(2), &[Value::Category(1), Value::Real(8.0)]);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let m = Matrix::zeros(1, 4);
        assert!(decode_encoded(&m, &schema()).is_err());
    }

    #[test]
    fn unfitted_schema_is_an_error() {
        let s = TableSchema::new(vec![ColumnSchema::real("w")], None).unwrap();
        let t = Table::new(s, vec![vec![Value::Real(1.0)]]).unwrap();
        assert!(encode(&t).is_err());
    }
}
