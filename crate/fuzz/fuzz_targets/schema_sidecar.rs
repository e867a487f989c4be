#![no_main]

use libfuzzer_sys::fuzz_target;
use vaediff::data::TableSchema;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(schema) = TableSchema::from_sidecar_str(text) {
        let written = schema.to_sidecar_string().expect("parsed schema serializes");
        let again = TableSchema::from_sidecar_str(&written).expect("written sidecar parses");
        assert_eq!(again.to_sidecar_string().expect("parsed schema serializes"), written);
    }
});
