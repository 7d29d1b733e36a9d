#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = multirate::config::parse_config(text) {
        let _ = cfg.to_benchmark();
    }
});
