use proptest::prelude::*;

use multirate::config::{parse_config, parse_params};
use multirate::contraction::parse_report;
use multirate::csv_io::{emit_trajectory, parse_trajectory};
use multirate::harness::parse_convergence_csv;
use multirate::problem::Trajectory;

fn grid(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6..1.0f64, len).prop_map(|steps| {
        steps
            .iter()
            .scan(0.0, |t, dt| {
                let now = *t;
                *t += dt;
                Some(now)
            })
            .collect()
    })
}

fn states(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
            dim,
        ),
        n,
    )
}

fn trajectory() -> impl Strategy<Value = Trajectory> {
    (
        1usize..6,
        1usize..12,
        1usize..3,
        1usize..3,
        0usize..2,
        0usize..2,
    )
        .prop_flat_map(|(nm, nf, ds, df, dzs, dzf)| {
            (
                grid(nm),
                grid(nf),
                states(nm, ds),
                states(nf, df),
                states(nm, dzs),
                states(nf, dzf),
                prop::collection::vec("[a-z =.0-9]{0,20}", 0..3),
            )
        })
        .prop_map(
            |(
                macro_times,
                fast_times,
                slow_states,
                fast_states,
                z_slow_states,
                z_fast_states,
                warnings,
            )| Trajectory {
                macro_times,
                slow_states,
                fast_times,
                fast_states,
                z_slow_states,
                z_fast_states,
                warnings,
            },
        )
}

proptest! {
    #[test]
    fn trajectory_csv_round_trips(t in trajectory()) {
        let text = emit_trajectory(&t);
        let back = parse_trajectory(&text).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(emit_trajectory(&back), text);
    }

    #[test]
    fn parsers_reject_garbage_without_panicking(s in "\\PC{0,200}") {
        let _ = parse_trajectory(&s);
        let _ = parse_config(&s);
        let _ = parse_report(&s);
        let _ = parse_params(&s);
        let _ = parse_convergence_csv(&s);
    }

    #[test]
    fn parsers_survive_mutated_csv(t in trajectory(), cut in 0usize..400, junk in "[,0-9e.+\\-\n#a-z]{0,8}") {
        let mut text = emit_trajectory(&t);
        let at = text.char_indices().map(|(i, _)| i).nth(cut % text.chars().count().max(1)).unwrap_or(0);
        text.insert_str(at, &junk);
        if let Ok(parsed) = parse_trajectory(&text) {
            // Whatever parses must re-emit into something that parses to the same value.
            prop_assert_eq!(parse_trajectory(&emit_trajectory(&parsed)).unwrap(), parsed);
        }
    }

    #[test]
    fn params_round_trip(values in prop::collection::btree_map("[a-z][a-z0-9_]{0,5}", -1e6..1e6f64, 0..5)) {
        let text: Vec<String> = values.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        prop_assert_eq!(parse_params(&text.join(",")).unwrap(), values);
    }
}
