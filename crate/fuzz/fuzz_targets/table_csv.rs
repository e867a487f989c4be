//! Input: schema sidecar, a NUL byte, then CSV text.

#![no_main]

use libfuzzer_sys::fuzz_target;
use vaediff::data::{Table, TableSchema};

fuzz_target!(|data: &[u8]| {
    let Some(cut) = data.iter().position(|b| *b == 0) else {
        return;
    };
    let Ok(text) = std::str::from_utf8(&data[..cut]) else {
        return;
    };
    let Ok(schema) = TableSchema::from_sidecar_str(text) else {
        return;
    };
    if let Ok(table) = Table::read_csv(&data[cut + 1..], &schema) {
        let csv = table.to_csv_string().expect("valid table serializes");
        let again = Table::read_csv(csv.as_bytes(), &schema).expect("written csv reads back");
        assert_eq!(again.to_csv_string().expect("valid table serializes"), csv);
    }
});
