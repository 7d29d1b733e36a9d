use multirate::dae::integrate_dae;
use multirate::ode::integrate;
use multirate::problem::{MacroStepPlan, PartitionedDae, PartitionedOde, Strategy};
use multirate::problems::{build_default, state_distance, Model};
use multirate::steppers::{step_free, NewtonConfig, Scheme};

fn ode(id: &str) -> PartitionedOde {
    match build_default(id).unwrap().model {
        Model::Ode(p) => p,
        Model::Dae(_) => panic!("{id} is a DAE"),
    }
}

/// Integrates one subsystem alone with `steps` equal steps of `scheme`.
fn single_rate(
    p: &PartitionedOde,
    slow: bool,
    scheme: Scheme,
    steps: usize,
    cfg: &NewtonConfig,
) -> Vec<Vec<f64>> {
    let h = (p.t_end - p.t0) / steps as f64;
    let (f, partner, mut y) = if slow {
        (p.f_slow.clone(), p.y_fast0.clone(), p.y_slow0.clone())
    } else {
        (p.f_fast.clone(), p.y_slow0.clone(), p.y_fast0.clone())
    };
    let rhs = |t: f64, y: &[f64], out: &mut [f64]| {
        if slow {
            f(t, y, &partner, out)
        } else {
            f(t, &partner, y, out)
        }
    };
    let mut out = vec![y.clone()];
    for i in 0..steps {
        y = step_free(scheme, &rhs, p.t0 + i as f64 * h, &y, h, cfg).unwrap();
        out.push(y.clone());
    }
    out
}

#[test]
fn decoupled_problem_matches_independent_integration() {
    let p = ode("lin2-decoupled");
    for scheme in [
        Scheme::ExplicitEuler,
        Scheme::Heun,
        Scheme::Rk4,
        Scheme::ImplicitEuler,
    ] {
        for s in Strategy::ALL {
            for dense in [false, true] {
                let mut plan = MacroStepPlan::new(0.1, 3, s, scheme).with_dense_output(dense);
                // Implicit steps agree to the Newton tolerance; make it tight.
                plan.newton.abs_tol = 1e-15;
                let t = integrate(&p, &plan).unwrap();
                let slow = single_rate(&p, true, scheme, 10, &plan.newton);
                let fast = single_rate(&p, false, scheme, 30, &plan.newton);
                for (a, b) in t
                    .slow_states
                    .iter()
                    .zip(&slow)
                    .chain(t.fast_states.iter().zip(&fast))
                {
                    assert!((a[0] - b[0]).abs() <= 1e-13, "{scheme} {s}: {a:?} {b:?}");
                }
            }
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let p = ode("nonlin-osc");
    for s in Strategy::ALL {
        let plan = MacroStepPlan::new(0.05, 5, s, Scheme::Rk4);
        let a = integrate(&p, &plan).unwrap();
        let b = integrate(&p, &plan.clone().with_parallel(!plan.parallel)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn strategies_converge_to_each_other_with_m_one() {
    let p = ode("lin2");
    let gap = |h: f64| {
        let ends: Vec<_> = Strategy::ALL
            .iter()
            .map(|&s| {
                integrate(&p, &MacroStepPlan::new(h, 1, s, Scheme::Heun))
                    .unwrap()
                    .final_state()
            })
            .collect();
        state_distance(&ends[0], &ends[1]).max(state_distance(&ends[0], &ends[2]))
    };
    let (coarse, fine) = (gap(0.1), gap(0.025));
    // Rate at least 2 between H = 0.1 and H = 0.025 means a reduction by 16.
    assert!(fine * 16.0 <= coarse * 1.05, "{coarse} {fine}");
}

#[test]
fn dae_without_constraints_matches_ode_trajectory() {
    let p = ode("lin2");
    let dae = PartitionedDae::from_ode(&p);
    let plan =
        MacroStepPlan::new(0.2, 4, Strategy::SlowestFirst, Scheme::ImplicitEuler).with_orders(0, 1);
    let a = integrate(&p, &plan).unwrap();
    let b = integrate_dae(&dae, &plan).unwrap();
    for (u, v) in a.fast_states.iter().zip(&b.fast_states) {
        assert!((u[0] - v[0]).abs() <= 1e-12);
    }
    assert!(b.z_fast_states.iter().all(Vec::is_empty));
}

#[test]
fn final_window_takes_the_remainder() {
    let p = ode("lin2");
    let t = integrate(
        &p,
        &MacroStepPlan::new(0.3, 2, Strategy::FullyDecoupled, Scheme::Heun),
    )
    .unwrap();
    assert_eq!(t.macro_times.len(), 5);
    assert!((t.macro_times[4] - 1.0).abs() < 1e-15);
    assert!((t.macro_times[4] - t.macro_times[3] - 0.1).abs() < 1e-12);
    assert_eq!(t.fast_times.len(), 9);
    t.validate(0.0, 1.0).unwrap();
}

#[test]
fn higher_order_history_is_used_after_the_first_window() {
    let p = ode("lin2");
    let reference = build_default("lin2").unwrap().reference_at(1.0).unwrap();
    let err = |h: f64| {
        let plan = MacroStepPlan::new(h, 4, Strategy::FullyDecoupled, Scheme::Rk4);
        assert_eq!(plan.extrap_order, 3);
        let t = integrate(&p, &plan).unwrap();
        // Only the first window lacks history.
        assert!(
            t.warnings.iter().all(|w| w.contains("t = 0")),
            "{:?}",
            t.warnings
        );
        state_distance(&t.final_state(), &reference)
    };
    // The order-1 fallback in the first window leaves a single O(H^3) term.
    let (e1, e2, e3) = (err(0.1), err(0.05), err(0.025));
    assert!(e1 / e2 > 7.0 && e2 / e3 > 7.0, "{e1} {e2} {e3}");
}
