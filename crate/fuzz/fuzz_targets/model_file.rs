#![no_main]

use libfuzzer_sys::fuzz_target;
use vaediff::predictors::ModelFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = ModelFile::from_json(text) {
        let written = model.to_json().expect("parsed model serializes");
        let again = ModelFile::from_json(&written).expect("written model parses");
        assert_eq!(again.to_json().expect("parsed model serializes"), written);
    }
});
