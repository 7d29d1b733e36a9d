#![no_main]

use libfuzzer_sys::fuzz_target;
use multirate::csv_io::{emit_trajectory, parse_trajectory};

// Anything that parses must survive emit then parse unchanged.
fuzz_target!(|text: &str| {
    if let Ok(traj) = parse_trajectory(text) {
        let again = parse_trajectory(&emit_trajectory(&traj)).expect("emitted CSV parses");
        assert_eq!(again.macro_times.len(), traj.macro_times.len());
        assert_eq!(again.fast_times.len(), traj.fast_times.len());
    }
});
