#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = mixlap::cli::parse_config(text) {
            let again = mixlap::cli::parse_config(&cfg.to_document()).expect("normalized config reparses");
            assert_eq!(cfg, again);
        }
    }
});
