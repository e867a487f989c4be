#![no_main]

use libfuzzer_sys::fuzz_target;
use vaediff_cli::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_toml_str(text) {
        let _ = cfg.validate();
        let written = cfg.to_toml_string().expect("parsed config serializes");
        let again = RunConfig::from_toml_str(&written).expect("written config parses");
        assert_eq!(again.to_toml_string().expect("parsed config serializes"), written);
    }
});
