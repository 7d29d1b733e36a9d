#![no_main]

use libfuzzer_sys::fuzz_target;
use multirate::contraction::{parse_report, report_to_text};

fuzz_target!(|text: &str| {
    if let Ok(report) = parse_report(text) {
        let _ = parse_report(&report_to_text(&report));
    }
});
