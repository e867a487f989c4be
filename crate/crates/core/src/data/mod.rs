//! Typed tables: schema sidecars, CSV ingestion, encoding, splitting and a
//! zero-inflated Poisson simulator.

mod encode;
mod schema;
mod simulate;
mod split;
mod table;

pub use encode::{argmax, decode_encoded, encode, EncodedMatrix, Layout, Span};
pub use schema::{ColumnKind, ColumnSchema, Standardization, TableSchema, MAX_COUNT_CARDINALITY};
pub use simulate::{
    count_label, simulate_zip_table, ExplanatorySpec, Marginal, SimulationSpec, Term, ZipParams,
    MAX_SIMULATED_COUNT,
};
pub use split::{split, split_indices, test_count, SplitIndices};
pub use table::{load_csv, Table, Value};

