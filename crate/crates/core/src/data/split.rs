use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::table::Table;
use crate::error::{Error, Result};

/// Row indices of a train/test partition, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded partition stratified on zero vs non-zero target (a single stratum
/// when the schema has no target). Each stratum of size `n` sends
/// `ceil((1 - train_fraction) * n)` rows to the test side.
pub fn split_indices(table: &Table, train_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(
            "split",
            format!("train_fraction must lie in (0, 1), got {}", train_fraction),
        ));
    }
    let strata: Vec<Vec<usize>> = match table.schema().target_index() {
        Some(_) => {
            let y = table.target_values()?;
            let (zero, nonzero): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| y[i] == 0.0);
            vec![zero, nonzero]
        }
        None => vec![(0..table.n_rows()).collect()],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut stratum in strata {
        stratum.shuffle(&mut rng);
        let n_test = test_count(stratum.len(), train_fraction);
        test.extend_from_slice(&stratum[..n_test]);
        train.extend_from_slice(&stratum[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Rows of one stratum assigned to the test side.
pub fn test_count(n: usize, train_fraction: f64) -> usize {
    // the small slack keeps exact products such as 0.5 * 10 from rounding up
    let raw = (1.0 - train_fraction) * n as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Splits into (train, test) tables.
pub fn split(table: &Table, train_fraction: f64, seed: u64) -> Result<(Table, Table)> {
    let idx = split_indices(table, train_fraction, seed)?;
    Ok((table.select_rows(&idx.train), table.select_rows(&idx.test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{ColumnKind, ColumnSchema, TableSchema};
    use crate::data::table::Value;

    fn table(zeros: usize, nonzeros: usize) -> Table {
        let schema = TableSchema::new(
            vec![ColumnSchema::discrete(
                "y",
                ColumnKind::Count,
                vec!["0".into(), "1".into()],
            )],
            Some("y"),
        )
        .unwrap();
        let rows = (0..zeros + nonzeros)
            .map(|i| vec![Value::Category(usize::from(i >= zeros))])
            .collect();
        Table::new(schema, rows).unwrap()
    }

    #[test]
    fn reproduces_published_split_sizes() {
        let t = table(15142, 2714);
        let s = split_indices(&t, 0.7, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (12498, 5358));
        let (train, _) = split(&t, 0.7, 1).unwrap();
        assert_eq!(train.zero_nonzero_counts().unwrap(), (10599, 1899));
    }

    #[test]
    fn half_of_ten_is_five() {
        let s = split_indices(&table(6, 4), 0.5, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (5, 5));
    }

    #[test]
    fn same_seed_same_partition() {
        let t = table(70, 30);
        assert_eq!(split_indices(&t, 0.7, 9).unwrap(), split_indices(&t, 0.7, 9).unwrap());
        assert_ne!(split_indices(&t, 0.7, 9).unwrap(), split_indices(&t, 0.7, 10).unwrap());
    }

    #[test]
    fn fraction_bounds() {
        assert!(split_indices(&table(2, 2), 1.0, 0).is_err());
        assert!(split_indices(&table(2, 2), 0.0, 0).is_err());
    }
}
