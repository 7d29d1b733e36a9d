//! Multirate integration of partitioned ODEs: one macro window per call for
//! each coupling strategy, and the full-horizon driver.
//!
//! Within a window `[t̄, t̄ + H]` the slow subsystem takes one step of size
//! `H` and the fast subsystem `m` steps of size `h = H / m`. Each side sees
//! its partner only through a [`Waveform`]:
//!
//! * fully-decoupled: both partners are extrapolated from window-start data;
//! * slowest-first: the slow step uses an extrapolated fast partner, then the
//!   fast steps use an interpolant of the freshly computed slow data;
//! * fastest-first: the mirror image, interpolating the fast micro nodes.

use std::sync::Arc;

use crate::coupling::{
    extrapolate_constant, extrapolate_history, extrapolate_linear, interpolate_nodes, Waveform,
};
use crate::error::{Error, Result};
use crate::problem::{
    micro_nodes, validate_plan, MacroStepPlan, PartitionedOde, Strategy, Trajectory,
};
use crate::steppers::{bind_partner, ode_step, step_free, step_with_dense, NewtonConfig, Scheme};

/// Time-stamped node values of one channel.
pub type Nodes = Vec<(f64, Vec<f64>)>;

/// Node buffers of the previous window, used by history extrapolation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowHistory {
    pub slow: Nodes,
    pub fast: Nodes,
}

/// The two partner waveforms a window actually integrated against.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformsUsed {
    /// Fast-channel waveform seen by the slow step.
    pub seen_by_slow: Waveform,
    /// Slow-channel waveform seen by the fast steps.
    pub seen_by_fast: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub slow_end: Vec<f64>,
    /// `m + 1` fast nodes from `t̄` to `t̄ + H`.
    pub fast_nodes: Nodes,
    pub waveforms_used: WaveformsUsed,
    /// Node buffers handed to the next window.
    pub history: WindowHistory,
    pub warnings: Vec<String>,
}

/// Builds an extrapolation waveform of the requested order on `window`.
///
/// Order 0 holds `value`, order 1 follows `slope()`, and higher orders fit a
/// polynomial through `history`. When the history is too short (first
/// window, or too few nodes) the operator drops to order 1 and a warning is
/// recorded.
pub(crate) fn extrapolate_channel(
    order: usize,
    window: (f64, f64),
    value: &[f64],
    slope: &dyn Fn() -> Result<Vec<f64>>,
    history: Option<&Nodes>,
    channel: &str,
    warnings: &mut Vec<String>,
) -> Result<Waveform> {
    let len = window.1 - window.0;
    match order {
        0 => extrapolate_constant(window.0, value, len),
        1 => extrapolate_linear(window.0, value, &slope()?, len),
        q => match history {
            Some(nodes) if nodes.len() > q => extrapolate_history(nodes, q, window),
            _ => {
                let have = history.map_or(0, Vec::len);
                warnings.push(format!(
                    "window at t = {}: {channel} extrapolation of order {q} needs {} history nodes, found {have}; used order 1",
                    window.0,
                    q + 1
                ));
                extrapolate_linear(window.0, value, &slope()?, len)
            }
        },
    }
}

fn slow_rhs(p: &PartitionedOde) -> impl Fn(f64, &[f64], &[f64], &mut [f64]) + '_ {
    move |t, y, w, out| (p.f_slow)(t, y, w, out)
}

fn fast_rhs(p: &PartitionedOde) -> impl Fn(f64, &[f64], &[f64], &mut [f64]) + '_ {
    move |t, y, w, out| (p.f_fast)(t, w, y, out)
}

fn eval_rhs(f: &crate::problem::OdeFn, t: f64, ys: &[f64], yf: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    f(t, ys, yf, &mut out);
    out
}

/// Extrapolated partner waveforms for both channels at the window start.
fn extrapolations(
    p: &PartitionedOde,
    window: (f64, f64),
    ys: &[f64],
    yf: &[f64],
    plan: &MacroStepPlan,
    history: Option<&WindowHistory>,
    warnings: &mut Vec<String>,
) -> Result<(Waveform, Waveform)> {
    let t = window.0;
    let slow = extrapolate_channel(
        plan.extrap_order,
        window,
        ys,
        &|| Ok(eval_rhs(&p.f_slow, t, ys, yf, p.dim_slow)),
        history.map(|h| &h.slow),
        "slow",
        warnings,
    )?;
    let fast = extrapolate_channel(
        plan.extrap_order,
        window,
        yf,
        &|| Ok(eval_rhs(&p.f_fast, t, ys, yf, p.dim_fast)),
        history.map(|h| &h.fast),
        "fast",
        warnings,
    )?;
    Ok((slow, fast))
}

/// One slow macro step against `partner`, returning the end value and the
/// step's continuous extension.
fn slow_step(
    p: &PartitionedOde,
    scheme: Scheme,
    window: (f64, f64),
    ys: &[f64],
    partner: &Waveform,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, Waveform)> {
    partner.check_covers(window.0, window.1)?;
    let rhs = slow_rhs(p);
    let bound = bind_partner(&rhs, partner);
    step_with_dense(scheme, &bound, window.0, ys, window.1 - window.0, cfg)
}

/// `m` fast micro steps against `partner`.
fn fast_steps(
    p: &PartitionedOde,
    scheme: Scheme,
    window: (f64, f64),
    m: usize,
    yf: &[f64],
    partner: &Waveform,
    cfg: &NewtonConfig,
) -> Result<Nodes> {
    let rhs = fast_rhs(p);
    let times = micro_nodes(window.0, window.1, m);
    let mut nodes = Vec::with_capacity(m + 1);
    nodes.push((times[0], yf.to_vec()));
    let mut y = yf.to_vec();
    for w in times.windows(2) {
        y = ode_step(scheme, &rhs, w[0], &y, w[1] - w[0], partner, cfg)?;
        nodes.push((w[1], y.clone()));
    }
    Ok(nodes)
}

/// Slow-channel interpolant over the window for slowest-first coupling:
/// order 0 holds the new endpoint value, order 1 joins the endpoints, and
/// dense output (or order ≥ 2) uses the step's continuous extension.
fn slow_interpolant(
    plan: &MacroStepPlan,
    window: (f64, f64),
    ys0: &[f64],
    ys1: &[f64],
    dense: &Waveform,
) -> Result<Waveform> {
    if plan.slow_uses_dense() {
        return Ok(dense.clone());
    }
    let nodes = vec![(window.0, ys0.to_vec()), (window.1, ys1.to_vec())];
    interpolate_nodes(&nodes, plan.interp_order.min(1), window)
}

/// History buffers from one finished window: the fast micro nodes and the
/// slow continuous extension sampled on an equally fine grid.
fn window_history(
    plan: &MacroStepPlan,
    window: (f64, f64),
    slow_dense: &Waveform,
    fast_nodes: &Nodes,
) -> WindowHistory {
    let samples = plan.multirate_factor.max(plan.extrap_order).max(1);
    let slow = micro_nodes(window.0, window.1, samples)
        .into_iter()
        .map(|t| (t, slow_dense.eval(t)))
        .collect();
    WindowHistory {
        slow,
        fast: fast_nodes.clone(),
    }
}

fn check_strategy(plan: &MacroStepPlan, expected: Strategy) -> Result<()> {
    if plan.strategy == expected {
        Ok(())
    } else {
        Err(Error::InvalidPlan(vec![format!(
            "window routine for {expected} called with a {} plan",
            plan.strategy
        )]))
    }
}

/// Fully-decoupled window: both subsystems advance independently against
/// partner data extrapolated from `t̄` (or from the previous window).
pub fn window_fully_decoupled(
    p: &PartitionedOde,
    window: (f64, f64),
    ys: &[f64],
    yf: &[f64],
    plan: &MacroStepPlan,
    history: Option<&WindowHistory>,
) -> Result<WindowResult> {
    check_strategy(plan, Strategy::FullyDecoupled)?;
    let mut warnings = Vec::new();
    let (slow_w, fast_w) = extrapolations(p, window, ys, yf, plan, history, &mut warnings)?;
    let m = plan.multirate_factor;
    let ((ys1, dense), fast_nodes) = if plan.parallel {
        std::thread::scope(|s| {
            let slow =
                s.spawn(|| slow_step(p, plan.scheme_slow, window, ys, &fast_w, &plan.newton));
            let fast = fast_steps(p, plan.scheme_fast, window, m, yf, &slow_w, &plan.newton);
            let slow = slow.join().expect("slow subsystem worker panicked");
            Ok::<_, Error>((slow?, fast?))
        })?
    } else {
        (
            slow_step(p, plan.scheme_slow, window, ys, &fast_w, &plan.newton)?,
            fast_steps(p, plan.scheme_fast, window, m, yf, &slow_w, &plan.newton)?,
        )
    };
    Ok(WindowResult {
        history: window_history(plan, window, &dense, &fast_nodes),
        slow_end: ys1,
        fast_nodes,
        waveforms_used: WaveformsUsed {
            seen_by_slow: fast_w,
            seen_by_fast: slow_w,
        },
        warnings,
    })
}

/// Slowest-first window: the slow step runs against the extrapolated fast
/// channel, then the fast steps run against an interpolant of the new slow data.
pub fn window_slowest_first(
    p: &PartitionedOde,
    window: (f64, f64),
    ys: &[f64],
    yf: &[f64],
    plan: &MacroStepPlan,
    history: Option<&WindowHistory>,
) -> Result<WindowResult> {
    check_strategy(plan, Strategy::SlowestFirst)?;
    let mut warnings = Vec::new();
    let (_, fast_w) = extrapolations(p, window, ys, yf, plan, history, &mut warnings)?;
    let (ys1, dense) = slow_step(p, plan.scheme_slow, window, ys, &fast_w, &plan.newton)?;
    let slow_int = slow_interpolant(plan, window, ys, &ys1, &dense)?;
    let fast_nodes = fast_steps(
        p,
        plan.scheme_fast,
        window,
        plan.multirate_factor,
        yf,
        &slow_int,
        &plan.newton,
    )?;
    Ok(WindowResult {
        history: window_history(plan, window, &dense, &fast_nodes),
        slow_end: ys1,
        fast_nodes,
        waveforms_used: WaveformsUsed {
            seen_by_slow: fast_w,
            seen_by_fast: slow_int,
        },
        warnings,
    })
}

/// Fastest-first window: the fast steps run against the extrapolated slow
/// channel, then the slow step runs against an interpolant of the micro nodes.
pub fn window_fastest_first(
    p: &PartitionedOde,
    window: (f64, f64),
    ys: &[f64],
    yf: &[f64],
    plan: &MacroStepPlan,
    history: Option<&WindowHistory>,
) -> Result<WindowResult> {
    check_strategy(plan, Strategy::FastestFirst)?;
    let mut warnings = Vec::new();
    let (slow_w, _) = extrapolations(p, window, ys, yf, plan, history, &mut warnings)?;
    let fast_nodes = fast_steps(
        p,
        plan.scheme_fast,
        window,
        plan.multirate_factor,
        yf,
        &slow_w,
        &plan.newton,
    )?;
    let fast_int = interpolate_nodes(&fast_nodes, plan.interp_order, window)?;
    let (ys1, dense) = slow_step(p, plan.scheme_slow, window, ys, &fast_int, &plan.newton)?;
    Ok(WindowResult {
        history: window_history(plan, window, &dense, &fast_nodes),
        slow_end: ys1,
        fast_nodes,
        waveforms_used: WaveformsUsed {
            seen_by_slow: fast_int,
            seen_by_fast: slow_w,
        },
        warnings,
    })
}

/// Dispatches to the window routine of `plan.strategy`.
pub fn window(
    p: &PartitionedOde,
    window: (f64, f64),
    ys: &[f64],
    yf: &[f64],
    plan: &MacroStepPlan,
    history: Option<&WindowHistory>,
) -> Result<WindowResult> {
    let run = match plan.strategy {
        Strategy::FullyDecoupled => window_fully_decoupled,
        Strategy::SlowestFirst => window_slowest_first,
        Strategy::FastestFirst => window_fastest_first,
    };
    run(p, window, ys, yf, plan, history)
}

/// Integrates `p` over its horizon with `plan`.
///
/// Problems marked with [`PartitionedOde::lift_single_rate`] are integrated
/// monolithically with step `H` and the slow scheme; their fast grid equals
/// the macro grid.
pub fn integrate(p: &PartitionedOde, plan: &MacroStepPlan) -> Result<Trajectory> {
    let checked = validate_plan(plan, p.t0, p.t_end)?;
    if p.is_single_rate() {
        return integrate_single_rate(p, plan.scheme_slow, &checked.windows, &plan.newton);
    }
    let mut traj = Trajectory {
        macro_times: vec![p.t0],
        slow_states: vec![p.y_slow0.clone()],
        fast_times: vec![p.t0],
        fast_states: vec![p.y_fast0.clone()],
        ..Default::default()
    };
    let mut ys = p.y_slow0.clone();
    let mut yf = p.y_fast0.clone();
    let mut history: Option<WindowHistory> = None;
    for &w in &checked.windows {
        let result = window(p, w, &ys, &yf, plan, history.as_ref())?;
        if result
            .slow_end
            .iter()
            .chain(result.fast_nodes.iter().flat_map(|n| n.1.iter()))
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite(format!(
                "state after the window ending at t = {}",
                w.1
            )));
        }
        traj.warnings.extend(result.warnings);
        for (t, y) in result.fast_nodes.into_iter().skip(1) {
            traj.fast_times.push(t);
            traj.fast_states.push(y);
        }
        traj.macro_times.push(w.1);
        traj.slow_states.push(result.slow_end.clone());
        ys = result.slow_end;
        yf = traj.fast_states.last().cloned().unwrap_or_default();
        history = Some(result.history);
    }
    traj.z_slow_states = vec![Vec::new(); traj.macro_times.len()];
    traj.z_fast_states = vec![Vec::new(); traj.fast_times.len()];
    Ok(traj)
}

/// Monolithic integration of the coupled system, one step per window.
fn integrate_single_rate(
    p: &PartitionedOde,
    scheme: Scheme,
    windows: &[(f64, f64)],
    cfg: &NewtonConfig,
) -> Result<Trajectory> {
    let (ns, nf) = (p.dim_slow, p.dim_fast);
    let (fs, ff) = (Arc::clone(&p.f_slow), Arc::clone(&p.f_fast));
    let rhs = move |t: f64, y: &[f64], out: &mut [f64]| {
        let (ys, yf) = y.split_at(ns);
        let (os, of) = out.split_at_mut(ns);
        fs(t, ys, yf, os);
        ff(t, ys, yf, of);
    };
    let mut y = p.y_slow0.clone();
    y.extend_from_slice(&p.y_fast0);
    let mut traj = Trajectory {
        macro_times: vec![p.t0],
        slow_states: vec![p.y_slow0.clone()],
        fast_times: vec![p.t0],
        fast_states: vec![p.y_fast0.clone()],
        ..Default::default()
    };
    for &(a, b) in windows {
        y = step_free(scheme, &rhs, a, &y, b - a, cfg)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state at t = {b}")));
        }
        traj.macro_times.push(b);
        traj.slow_states.push(y[..ns].to_vec());
        traj.fast_times.push(b);
        traj.fast_states.push(y[ns..ns + nf].to_vec());
    }
    traj.z_slow_states = vec![Vec::new(); traj.macro_times.len()];
    traj.z_fast_states = vec![Vec::new(); traj.fast_times.len()];
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{build_default, Model};

    fn lin2() -> PartitionedOde {
        match build_default("lin2").unwrap().model {
            Model::Ode(p) => p,
            Model::Dae(_) => unreachable!(),
        }
    }

    fn euler(strategy: Strategy, extrap: usize, interp: usize) -> MacroStepPlan {
        MacroStepPlan::new(0.1, 2, strategy, Scheme::ExplicitEuler).with_orders(extrap, interp)
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn fully_decoupled_hand_values() {
        let r = window_fully_decoupled(
            &lin2(),
            (0.0, 0.1),
            &[1.0],
            &[1.0],
            &euler(Strategy::FullyDecoupled, 0, 0),
            None,
        )
        .unwrap();
        // y_S: 1 + 0.1 (-1 + 0.1). y_F with y_S frozen at 1: 1 + 0.05 (0.2 - 10), then 0.51 + 0.05 (0.2 - 5.1).
        close(r.slow_end[0], 0.91, 1e-15);
        let fast: Vec<f64> = r.fast_nodes.iter().map(|n| n.1[0]).collect();
        assert_eq!(
            r.fast_nodes.iter().map(|n| n.0).collect::<Vec<_>>(),
            vec![0.0, 0.05, 0.1]
        );
        close(fast[1], 0.51, 1e-15);
        close(fast[2], 0.265, 1e-15);
    }

    #[test]
    fn slowest_first_hand_values() {
        let r = window_slowest_first(
            &lin2(),
            (0.0, 0.1),
            &[1.0],
            &[1.0],
            &euler(Strategy::SlowestFirst, 0, 1),
            None,
        )
        .unwrap();
        close(r.slow_end[0], 0.91, 1e-15);
        // The second micro step sees the slow interpolant at t = 0.05: 0.955.
        close(r.fast_nodes[1].1[0], 0.51, 1e-15);
        close(
            r.fast_nodes[2].1[0],
            0.51 + 0.05 * (0.2 * 0.955 - 5.1),
            1e-15,
        );
        let seen = r.waveforms_used.seen_by_fast.eval(0.025);
        close(seen[0], 0.9775, 1e-15);
    }

    #[test]
    fn fastest_first_hand_values() {
        let mut plan = euler(Strategy::FastestFirst, 0, 1);
        plan.scheme_slow = Scheme::ImplicitEuler;
        let r = window_fastest_first(&lin2(), (0.0, 0.1), &[1.0], &[1.0], &plan, None).unwrap();
        close(r.fast_nodes[2].1[0], 0.265, 1e-15);
        // Implicit Euler reads the fast interpolant at t = 0.1.
        close(r.slow_end[0], (1.0 + 0.01 * 0.265) / 1.1, 1e-10);
    }

    #[test]
    fn zero_field_is_constant() {
        let zero: crate::problem::OdeFn = Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0));
        let p =
            PartitionedOde::new(zero.clone(), zero, vec![1.5, -2.0], vec![3.0], 0.0, 1.0).unwrap();
        for s in Strategy::ALL {
            let plan = MacroStepPlan::new(0.3, 3, s, Scheme::Rk4);
            let t = integrate(&p, &plan).unwrap();
            assert_eq!(t.macro_times.len(), 5);
            assert!(t.slow_states.iter().all(|y| y == &vec![1.5, -2.0]));
            assert!(t.fast_states.iter().all(|y| y == &vec![3.0]));
        }
    }

    #[test]
    fn single_window_matches_window_call() {
        let p = lin2().with_horizon(0.0, 0.1).unwrap();
        for s in Strategy::ALL {
            let plan = MacroStepPlan::new(0.1, 5, s, Scheme::Heun);
            let t = integrate(&p, &plan).unwrap();
            let w = window(&p, (0.0, 0.1), &[1.0], &[1.0], &plan, None).unwrap();
            assert_eq!(t.slow_states[1], w.slow_end);
            let fast: Vec<Vec<f64>> = w.fast_nodes.into_iter().map(|n| n.1).collect();
            assert_eq!(t.fast_states, fast);
        }
    }

    #[test]
    fn parallel_equals_sequential() {
        let plan = MacroStepPlan::new(0.05, 4, Strategy::FullyDecoupled, Scheme::Rk4);
        let a = integrate(&lin2(), &plan.clone().with_parallel(false)).unwrap();
        let b = integrate(&lin2(), &plan.with_parallel(true)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_routine_is_rejected() {
        let plan = euler(Strategy::SlowestFirst, 0, 0);
        assert!(window_fully_decoupled(&lin2(), (0.0, 0.1), &[1.0], &[1.0], &plan, None).is_err());
    }

    #[test]
    fn high_order_extrapolation_falls_back_in_first_window() {
        let plan = MacroStepPlan::new(0.1, 2, Strategy::FullyDecoupled, Scheme::Rk4);
        assert_eq!(plan.extrap_order, 3);
        let t = integrate(&lin2(), &plan).unwrap();
        assert!(!t.warnings.is_empty());
        assert!(
            t.warnings
                .iter()
                .all(|w| w.contains("t = 0") || w.contains("t̄ = 0")),
            "{:?}",
            t.warnings
        );
    }
}
