#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = multirate::harness::parse_convergence_csv(text);
});
