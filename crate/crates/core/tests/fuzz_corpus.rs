//! The checked-in fuzz seeds must be accepted by their parsers, so that
//! fuzzing starts from valid inputs.

use std::fs;
use std::path::PathBuf;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn seeds_parse() {
    for (p, text) in seeds("parse_config") {
        let cfg = multirate::config::parse_config(&text)
            .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.to_benchmark().unwrap();
    }
    for (p, text) in seeds("parse_params") {
        multirate::config::parse_params(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, text) in seeds("parse_trajectory") {
        let traj = multirate::csv_io::parse_trajectory(&text)
            .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(multirate::csv_io::emit_trajectory(&traj), text);
    }
    for (p, text) in seeds("parse_report") {
        multirate::contraction::parse_report(&text)
            .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, text) in seeds("parse_convergence_csv") {
        let samples = multirate::harness::parse_convergence_csv(&text)
            .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(samples.len() >= 4);
    }
}
