//! Dynamic iteration for split semi-explicit index-1 DAEs.
//!
//! The slow unknowns `(y_S, z_S)` and fast unknowns `(y_F, z_F)` are
//! integrated with implicit Euler: one step of size `H` on the slow side and
//! `m` steps of size `h` on the fast side. A window performs `k` sweeps; in
//! each sweep the partner channels are bound either to the previous
//! iterate's waveforms ("old") or to interpolants of the current sweep's
//! results ("new"), depending on the strategy:
//!
//! | strategy        | slow equations see | fast equations see |
//! |-----------------|--------------------|--------------------|
//! | fully-decoupled | old fast           | old slow           |
//! | slowest-first   | old fast           | new slow           |
//! | fastest-first   | new fast           | old slow           |
//!
//! Iterate 0 is built by extrapolation from the window start. With `k = 1`
//! this is multirate co-simulation.

use nalgebra::DMatrix;

use crate::contraction::ContractionReport;
use crate::coupling::{interpolate_nodes, Waveform};
use crate::error::{Error, Result};
use crate::linalg::{condition_inf, lu_solve, max_abs};
use crate::ode::{extrapolate_channel, Nodes};
use crate::problem::{
    micro_nodes, validate_plan, DaeState, MacroStepPlan, PartitionedDae, StateRef, Strategy,
    Trajectory,
};
use crate::steppers::{implicit_euler_dae_step, newton_solve, NewtonConfig, Scheme};

/// Largest accepted condition number of the algebraic Jacobians.
pub const CONDITION_CAP: f64 = 1e12;

/// Consistency tolerance relative to the Newton tolerance.
const CONSISTENCY_FACTOR: f64 = 10.0;

/// Fast node of a DAE window: time, `y_F`, `z_F`.
pub type FastNode = (f64, Vec<f64>, Vec<f64>);

/// Previous-window node buffers for each channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DaeHistory {
    pub y_slow: Nodes,
    pub z_slow: Nodes,
    pub y_fast: Nodes,
    pub z_fast: Nodes,
}

/// Waveforms of all four channels at one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub y_slow: Waveform,
    pub z_slow: Waveform,
    pub y_fast: Waveform,
    pub z_fast: Waveform,
    /// Completed sweeps that produced this iterate (0 for the extrapolation).
    pub sweep: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaeWindowResult {
    /// State at the window end after the last sweep.
    pub end: DaeState,
    /// `m + 1` fast nodes of the last sweep.
    pub fast_nodes: Vec<FastNode>,
    /// Window-end state of every iterate, from iterate 0 (extrapolation) to `k`.
    pub sweep_ends: Vec<DaeState>,
    pub history: DaeHistory,
    pub warnings: Vec<String>,
}

/// Results of one sweep before they are turned into waveforms.
struct SweepOutcome {
    y_slow: Vec<f64>,
    z_slow: Vec<f64>,
    fast: Vec<FastNode>,
}

fn state_ref<'a>(ys: &'a [f64], yf: &'a [f64], zs: &'a [f64], zf: &'a [f64]) -> StateRef<'a> {
    StateRef {
        y_slow: ys,
        y_fast: yf,
        z_slow: zs,
        z_fast: zf,
    }
}

/// Stacked algebraic residual `(g_S, g_F)` as a function of `z = (z_S, z_F)`.
fn stacked_g(p: &PartitionedDae, t: f64, ys: &[f64], yf: &[f64], z: &[f64], out: &mut [f64]) {
    let (zs, zf) = z.split_at(p.dim_zslow);
    let (gs, gf) = out.split_at_mut(p.dim_zslow);
    let x = state_ref(ys, yf, zs, zf);
    (p.g_slow)(t, x, gs);
    (p.g_fast)(t, x, gf);
}

/// Central-difference Jacobian of `f` at `x`.
pub(crate) fn central_jacobian(
    f: &mut dyn FnMut(&[f64], &mut [f64]),
    x: &[f64],
    rows: usize,
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut xp = x.to_vec();
    let (mut fp, mut fm) = (vec![0.0; rows], vec![0.0; rows]);
    for j in 0..x.len() {
        let d = f64::EPSILON.cbrt() * (1.0 + x[j].abs());
        xp[j] = x[j] + d;
        let up = xp[j];
        f(&xp, &mut fp);
        xp[j] = x[j] - d;
        let down = xp[j];
        f(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..rows {
            jac[(i, j)] = (fp[i] - fm[i]) / (up - down);
        }
    }
    jac
}

/// Solves the full algebraic system at `(t0, y0)` and checks the index-1
/// conditions: `∂g_S/∂z_S`, `∂g_F/∂z_F` and the full `∂g/∂z` must be
/// regular with condition number below [`CONDITION_CAP`].
pub fn consistent_initialize(
    p: &PartitionedDae,
    t0: f64,
    y_slow: &[f64],
    y_fast: &[f64],
    z_guess: (&[f64], &[f64]),
    cfg: &NewtonConfig,
) -> Result<DaeState> {
    let mut guess = z_guess.0.to_vec();
    guess.extend_from_slice(z_guess.1);
    if guess.len() != p.dim_z() {
        return Err(Error::InvalidProblem(format!(
            "algebraic guess has {} entries, expected {}",
            guess.len(),
            p.dim_z()
        )));
    }
    let z = if guess.is_empty() {
        guess
    } else {
        newton_solve(
            &mut |z, out| stacked_g(p, t0, y_slow, y_fast, z, out),
            &guess,
            cfg,
            t0,
        )?
        .x
    };
    check_index_one(p, t0, y_slow, y_fast, &z)?;
    let (zs, zf) = z.split_at(p.dim_zslow);
    Ok(DaeState {
        y_slow: y_slow.to_vec(),
        y_fast: y_fast.to_vec(),
        z_slow: zs.to_vec(),
        z_fast: zf.to_vec(),
    })
}

fn check_index_one(p: &PartitionedDae, t: f64, ys: &[f64], yf: &[f64], z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Ok(());
    }
    let full = central_jacobian(&mut |z, out| stacked_g(p, t, ys, yf, z, out), z, p.dim_z());
    let (ns, nf) = (p.dim_zslow, p.dim_zfast);
    let blocks = [
        ("∂g_S/∂z_S", full.view((0, 0), (ns, ns)).into_owned()),
        ("∂g_F/∂z_F", full.view((ns, ns), (nf, nf)).into_owned()),
        ("∂g/∂z", full.clone()),
    ];
    for (name, block) in blocks {
        match condition_inf(&block) {
            Some(c) if c < CONDITION_CAP => {}
            Some(c) => {
                return Err(Error::IndexOne(format!(
                    "{name} at t = {t} has condition number {c:e} (cap {CONDITION_CAP:e})"
                )))
            }
            None => return Err(Error::IndexOne(format!("{name} is singular at t = {t}"))),
        }
    }
    Ok(())
}

/// Time derivative of the algebraic solution along the flow:
/// `ż = -(∂g/∂z)^{-1} (∂g/∂t + ∂g/∂y ẏ)`, with the bracket taken as one
/// central directional difference.
fn algebraic_slope(
    p: &PartitionedDae,
    t: f64,
    x: &DaeState,
    dys: &[f64],
    dyf: &[f64],
) -> Result<Vec<f64>> {
    if p.dim_z() == 0 {
        return Ok(Vec::new());
    }
    let mut z = x.z_slow.clone();
    z.extend_from_slice(&x.z_fast);
    let gz = central_jacobian(
        &mut |z, out| stacked_g(p, t, &x.y_slow, &x.y_fast, z, out),
        &z,
        p.dim_z(),
    );
    let d = f64::EPSILON.cbrt() * (1.0 + t.abs());
    let shift = |s: f64, y: &[f64], dy: &[f64]| -> Vec<f64> {
        y.iter().zip(dy).map(|(a, b)| a + s * b).collect()
    };
    let (mut gp, mut gm) = (vec![0.0; p.dim_z()], vec![0.0; p.dim_z()]);
    stacked_g(
        p,
        t + d,
        &shift(d, &x.y_slow, dys),
        &shift(d, &x.y_fast, dyf),
        &z,
        &mut gp,
    );
    stacked_g(
        p,
        t - d,
        &shift(-d, &x.y_slow, dys),
        &shift(-d, &x.y_fast, dyf),
        &z,
        &mut gm,
    );
    let rhs: Vec<f64> = gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| -(a - b) / (2.0 * d))
        .collect();
    lu_solve(gz, &rhs).ok_or(Error::SingularJacobian { t })
}

fn differential_slopes(p: &PartitionedDae, t: f64, x: &DaeState) -> (Vec<f64>, Vec<f64>) {
    let mut ds = vec![0.0; p.dim_slow];
    let mut df = vec![0.0; p.dim_fast];
    (p.f_slow)(t, x.as_ref(), &mut ds);
    (p.f_fast)(t, x.as_ref(), &mut df);
    (ds, df)
}

/// Iterate-0 waveforms: every channel extrapolated from `t̄` (or history).
fn initial_iterate(
    p: &PartitionedDae,
    window: (f64, f64),
    x: &DaeState,
    plan: &MacroStepPlan,
    history: Option<&DaeHistory>,
    warnings: &mut Vec<String>,
) -> Result<IterationState> {
    let t = window.0;
    let (dys, dyf) = differential_slopes(p, t, x);
    let z_slope = || algebraic_slope(p, t, x, &dys, &dyf);
    let q = plan.extrap_order;
    let y_slow = extrapolate_channel(
        q,
        window,
        &x.y_slow,
        &|| Ok(dys.clone()),
        history.map(|h| &h.y_slow),
        "y_S",
        warnings,
    )?;
    let y_fast = extrapolate_channel(
        q,
        window,
        &x.y_fast,
        &|| Ok(dyf.clone()),
        history.map(|h| &h.y_fast),
        "y_F",
        warnings,
    )?;
    let z_slow = extrapolate_channel(
        q,
        window,
        &x.z_slow,
        &|| Ok(z_slope()?[..p.dim_zslow].to_vec()),
        history.map(|h| &h.z_slow),
        "z_S",
        warnings,
    )?;
    let z_fast = extrapolate_channel(
        q,
        window,
        &x.z_fast,
        &|| Ok(z_slope()?[p.dim_zslow..].to_vec()),
        history.map(|h| &h.z_fast),
        "z_F",
        warnings,
    )?;
    Ok(IterationState {
        y_slow,
        z_slow,
        y_fast,
        z_fast,
        sweep: 0,
    })
}

/// One implicit Euler step of size `H` on `(y_S, z_S)` with the fast
/// channels read from `yf_w`, `zf_w`.
fn slow_solve(
    p: &PartitionedDae,
    window: (f64, f64),
    x: &DaeState,
    yf_w: &Waveform,
    zf_w: &Waveform,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    yf_w.check_covers(window.0, window.1)?;
    zf_w.check_covers(window.0, window.1)?;
    let f = |t: f64, y: &[f64], z: &[f64], out: &mut [f64]| {
        let (yf, zf) = (yf_w.eval(t), zf_w.eval(t));
        (p.f_slow)(t, state_ref(y, &yf, z, &zf), out)
    };
    let g = |t: f64, y: &[f64], z: &[f64], out: &mut [f64]| {
        let (yf, zf) = (yf_w.eval(t), zf_w.eval(t));
        (p.g_slow)(t, state_ref(y, &yf, z, &zf), out)
    };
    let (y, z, _) = implicit_euler_dae_step(
        &f,
        &g,
        window.0,
        &x.y_slow,
        &x.z_slow,
        window.1 - window.0,
        cfg,
    )?;
    Ok((y, z))
}

/// `m` implicit Euler steps on `(y_F, z_F)` with the slow channels read
/// from `ys_w`, `zs_w`.
fn fast_solve(
    p: &PartitionedDae,
    window: (f64, f64),
    m: usize,
    x: &DaeState,
    ys_w: &Waveform,
    zs_w: &Waveform,
    cfg: &NewtonConfig,
) -> Result<Vec<FastNode>> {
    ys_w.check_covers(window.0, window.1)?;
    zs_w.check_covers(window.0, window.1)?;
    let f = |t: f64, y: &[f64], z: &[f64], out: &mut [f64]| {
        let (ys, zs) = (ys_w.eval(t), zs_w.eval(t));
        (p.f_fast)(t, state_ref(&ys, y, &zs, z), out)
    };
    let g = |t: f64, y: &[f64], z: &[f64], out: &mut [f64]| {
        let (ys, zs) = (ys_w.eval(t), zs_w.eval(t));
        (p.g_fast)(t, state_ref(&ys, y, &zs, z), out)
    };
    let times = micro_nodes(window.0, window.1, m);
    let mut nodes = Vec::with_capacity(m + 1);
    let (mut y, mut z) = (x.y_fast.clone(), x.z_fast.clone());
    nodes.push((times[0], y.clone(), z.clone()));
    for w in times.windows(2) {
        let (yn, zn, _) = implicit_euler_dae_step(&f, &g, w[0], &y, &z, w[1] - w[0], cfg)?;
        y = yn;
        z = zn;
        nodes.push((w[1], y.clone(), z.clone()));
    }
    Ok(nodes)
}

/// Slow-channel interpolants from the endpoint data: order 0 holds the new
/// value, order ≥ 1 joins the endpoints (implicit Euler's continuous
/// extension is linear).
fn slow_waveforms(
    plan: &MacroStepPlan,
    window: (f64, f64),
    x: &DaeState,
    ys1: &[f64],
    zs1: &[f64],
) -> Result<(Waveform, Waveform)> {
    let q = plan.interp_order.min(1);
    let ys = interpolate_nodes(
        &[(window.0, x.y_slow.clone()), (window.1, ys1.to_vec())],
        q,
        window,
    )?;
    let zs = interpolate_nodes(
        &[(window.0, x.z_slow.clone()), (window.1, zs1.to_vec())],
        q,
        window,
    )?;
    Ok((ys, zs))
}

/// Fast-channel interpolants through the micro nodes.
fn fast_waveforms(
    plan: &MacroStepPlan,
    window: (f64, f64),
    nodes: &[FastNode],
) -> Result<(Waveform, Waveform)> {
    let q = plan.interp_order.min(nodes.len() - 1);
    let y: Nodes = nodes.iter().map(|(t, y, _)| (*t, y.clone())).collect();
    let z: Nodes = nodes.iter().map(|(t, _, z)| (*t, z.clone())).collect();
    Ok((
        interpolate_nodes(&y, q, window)?,
        interpolate_nodes(&z, q, window)?,
    ))
}

fn sweep(
    p: &PartitionedDae,
    window: (f64, f64),
    x: &DaeState,
    plan: &MacroStepPlan,
    old: &IterationState,
) -> Result<SweepOutcome> {
    let m = plan.multirate_factor;
    let cfg = &plan.newton;
    let (y_slow, z_slow, fast) = match plan.strategy {
        Strategy::FullyDecoupled => {
            if plan.parallel {
                std::thread::scope(|s| {
                    let slow = s.spawn(|| slow_solve(p, window, x, &old.y_fast, &old.z_fast, cfg));
                    let fast = fast_solve(p, window, m, x, &old.y_slow, &old.z_slow, cfg);
                    let (ys, zs) = slow.join().expect("slow subsystem worker panicked")?;
                    Ok::<_, Error>((ys, zs, fast?))
                })?
            } else {
                let (ys, zs) = slow_solve(p, window, x, &old.y_fast, &old.z_fast, cfg)?;
                let fast = fast_solve(p, window, m, x, &old.y_slow, &old.z_slow, cfg)?;
                (ys, zs, fast)
            }
        }
        Strategy::SlowestFirst => {
            let (ys, zs) = slow_solve(p, window, x, &old.y_fast, &old.z_fast, cfg)?;
            let (ys_w, zs_w) = slow_waveforms(plan, window, x, &ys, &zs)?;
            let fast = fast_solve(p, window, m, x, &ys_w, &zs_w, cfg)?;
            (ys, zs, fast)
        }
        Strategy::FastestFirst => {
            let fast = fast_solve(p, window, m, x, &old.y_slow, &old.z_slow, cfg)?;
            let (yf_w, zf_w) = fast_waveforms(plan, window, &fast)?;
            let (ys, zs) = slow_solve(p, window, x, &yf_w, &zf_w, cfg)?;
            (ys, zs, fast)
        }
    };
    Ok(SweepOutcome {
        y_slow,
        z_slow,
        fast,
    })
}

fn outcome_end(o: &SweepOutcome) -> DaeState {
    let (_, yf, zf) = o.fast.last().cloned().unwrap_or_default();
    DaeState {
        y_slow: o.y_slow.clone(),
        y_fast: yf,
        z_slow: o.z_slow.clone(),
        z_fast: zf,
    }
}

fn iterate_end(it: &IterationState, t: f64) -> DaeState {
    DaeState {
        y_slow: it.y_slow.eval(t),
        y_fast: it.y_fast.eval(t),
        z_slow: it.z_slow.eval(t),
        z_fast: it.z_fast.eval(t),
    }
}

fn check_consistent(p: &PartitionedDae, t: f64, x: &DaeState, cfg: &NewtonConfig) -> Result<()> {
    let (gs, gf) = p.constraint_residual(t, x.as_ref());
    let residual = max_abs(&gs).max(max_abs(&gf));
    if residual > CONSISTENCY_FACTOR * cfg.abs_tol || !residual.is_finite() {
        return Err(Error::Inconsistent { t, residual });
    }
    Ok(())
}

fn check_dae_plan(plan: &MacroStepPlan) -> Result<()> {
    let mut problems = Vec::new();
    for (side, scheme) in [("slow", plan.scheme_slow), ("fast", plan.scheme_fast)] {
        if scheme != Scheme::ImplicitEuler {
            problems.push(format!(
                "the DAE integrator supports implicit-euler only ({side} scheme is {scheme})"
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidPlan(problems))
    }
}

/// One macro window of `plan.sweeps` dynamic-iteration sweeps.
///
/// Without `history` the window is treated as the first one and `x` must be
/// consistent (`‖g‖ ≤ 10 · abs_tol`).
pub fn dae_window(
    p: &PartitionedDae,
    window: (f64, f64),
    x: &DaeState,
    plan: &MacroStepPlan,
    history: Option<&DaeHistory>,
) -> Result<DaeWindowResult> {
    check_dae_plan(plan)?;
    if plan.sweeps < 1 {
        return Err(Error::InvalidPlan(vec!["sweep count k must be ≥ 1".into()]));
    }
    if history.is_none() {
        check_consistent(p, window.0, x, &plan.newton)?;
    }
    let mut warnings = Vec::new();
    let mut iterate = initial_iterate(p, window, x, plan, history, &mut warnings)?;
    let mut sweep_ends = vec![iterate_end(&iterate, window.1)];
    let mut last = None;
    for k in 1..=plan.sweeps {
        let outcome = sweep(p, window, x, plan, &iterate)?;
        let (y_slow, z_slow) = slow_waveforms(plan, window, x, &outcome.y_slow, &outcome.z_slow)?;
        let (y_fast, z_fast) = fast_waveforms(plan, window, &outcome.fast)?;
        iterate = IterationState {
            y_slow,
            z_slow,
            y_fast,
            z_fast,
            sweep: k,
        };
        sweep_ends.push(outcome_end(&outcome));
        last = Some(outcome);
    }
    let outcome = last.expect("at least one sweep");
    let end = outcome_end(&outcome);
    if [&end.y_slow, &end.y_fast, &end.z_slow, &end.z_fast]
        .iter()
        .any(|v| v.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::NonFinite(format!(
            "state after the window ending at t = {}",
            window.1
        )));
    }
    let history = DaeHistory {
        y_slow: vec![(window.0, x.y_slow.clone()), (window.1, end.y_slow.clone())],
        z_slow: vec![(window.0, x.z_slow.clone()), (window.1, end.z_slow.clone())],
        y_fast: outcome
            .fast
            .iter()
            .map(|(t, y, _)| (*t, y.clone()))
            .collect(),
        z_fast: outcome
            .fast
            .iter()
            .map(|(t, _, z)| (*t, z.clone()))
            .collect(),
    };
    Ok(DaeWindowResult {
        end,
        fast_nodes: outcome.fast,
        sweep_ends,
        history,
        warnings,
    })
}

/// Integrates `p` over its horizon: consistent initialization at `t0`,
/// then `plan.sweeps` sweeps per window.
pub fn integrate_dae(p: &PartitionedDae, plan: &MacroStepPlan) -> Result<Trajectory> {
    let checked = validate_plan(plan, p.t0, p.t_end)?;
    check_dae_plan(plan)?;
    let mut x = consistent_initialize(
        p,
        p.t0,
        &p.y_slow0,
        &p.y_fast0,
        (&p.z_slow0, &p.z_fast0),
        &plan.newton,
    )?;
    let mut traj = Trajectory {
        macro_times: vec![p.t0],
        slow_states: vec![x.y_slow.clone()],
        z_slow_states: vec![x.z_slow.clone()],
        fast_times: vec![p.t0],
        fast_states: vec![x.y_fast.clone()],
        z_fast_states: vec![x.z_fast.clone()],
        ..Default::default()
    };
    let mut history: Option<DaeHistory> = None;
    for &w in &checked.windows {
        let result = dae_window(p, w, &x, plan, history.as_ref())?;
        traj.warnings.extend(result.warnings);
        for (t, y, z) in result.fast_nodes.into_iter().skip(1) {
            traj.fast_times.push(t);
            traj.fast_states.push(y);
            traj.z_fast_states.push(z);
        }
        traj.macro_times.push(w.1);
        traj.slow_states.push(result.end.y_slow.clone());
        traj.z_slow_states.push(result.end.z_slow.clone());
        x = result.end;
        history = Some(result.history);
    }
    Ok(traj)
}

/// [`integrate_dae`] behind the stability gate: refuses to run when the
/// report's verdict for `plan.strategy` fails, unless `force` is set.
pub fn integrate_dae_gated(
    p: &PartitionedDae,
    plan: &MacroStepPlan,
    report: &ContractionReport,
    force: bool,
) -> Result<Trajectory> {
    let verdict = report.verdict(plan.strategy);
    if !verdict.pass && !force {
        return Err(Error::StabilityGate {
            strategy: plan.strategy,
            failed: verdict.failed.join("; "),
        });
    }
    integrate_dae(p, plan)
}

/// Monolithic implicit Euler on the whole DAE with `steps` equal steps;
/// both grids are the step grid. Used for analyzer samples and as an
/// independent cross-check of references.
pub fn integrate_single_rate_dae(
    p: &PartitionedDae,
    steps: usize,
    cfg: &NewtonConfig,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidPlan(vec!["step count must be ≥ 1".into()]));
    }
    let x0 = consistent_initialize(
        p,
        p.t0,
        &p.y_slow0,
        &p.y_fast0,
        (&p.z_slow0, &p.z_fast0),
        cfg,
    )?;
    let (ns, nzs) = (p.dim_slow, p.dim_zslow);
    let f = |t: f64, y: &[f64], z: &[f64], out: &mut [f64]| {
        let (ys, yf) = y.split_at(ns);
        let (zs, zf) = z.split_at(nzs);
        let (os, of) = out.split_at_mut(ns);
        let x = state_ref(ys, yf, zs, zf);
        (p.f_slow)(t, x, os);
        (p.f_fast)(t, x, of);
    };
    let g = |t: f64, y: &[f64], z: &[f64], out: &mut [f64]| {
        let (ys, yf) = y.split_at(ns);
        stacked_g(p, t, ys, yf, z, out);
    };
    let times = micro_nodes(p.t0, p.t_end, steps);
    let mut y = [x0.y_slow.clone(), x0.y_fast.clone()].concat();
    let mut z = [x0.z_slow.clone(), x0.z_fast.clone()].concat();
    let mut traj = Trajectory {
        macro_times: vec![p.t0],
        slow_states: vec![x0.y_slow.clone()],
        z_slow_states: vec![x0.z_slow.clone()],
        fast_times: vec![p.t0],
        fast_states: vec![x0.y_fast.clone()],
        z_fast_states: vec![x0.z_fast.clone()],
        ..Default::default()
    };
    for w in times.windows(2) {
        let (yn, zn, _) = implicit_euler_dae_step(&f, &g, w[0], &y, &z, w[1] - w[0], cfg)?;
        y = yn;
        z = zn;
        traj.macro_times.push(w[1]);
        traj.fast_times.push(w[1]);
        traj.slow_states.push(y[..ns].to_vec());
        traj.fast_states.push(y[ns..].to_vec());
        traj.z_slow_states.push(z[..nzs].to_vec());
        traj.z_fast_states.push(z[nzs..].to_vec());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ode::integrate;
    use crate::problems::{
        build, build_default, dae_lin_model, state_distance, LinearModel, Model,
    };

    fn dae_lin(b: f64, d: f64) -> PartitionedDae {
        dae_lin_model(1.0, b, 1.0, d).unwrap().to_dae().unwrap()
    }

    fn ie_plan(h: f64, m: usize, strategy: Strategy) -> MacroStepPlan {
        MacroStepPlan::new(h, m, strategy, Scheme::ImplicitEuler).with_orders(0, 0)
    }

    fn init(p: &PartitionedDae) -> DaeState {
        consistent_initialize(
            p,
            p.t0,
            &p.y_slow0,
            &p.y_fast0,
            (&p.z_slow0, &p.z_fast0),
            &NewtonConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn consistent_initialization_hand_values() {
        let x = init(&dae_lin(0.0, 0.0));
        assert!((x.z_slow[0] - 1.0).abs() < 1e-12 && (x.z_fast[0] - 1.0).abs() < 1e-12);
        // z_S = 1 + 0.5 z_F, z_F = 1 + 0.5 z_S, so both equal 1.5 / 0.75 = 2.
        let x = init(&dae_lin(0.5, 0.5));
        assert!((x.z_slow[0] - 2.0).abs() < 1e-12, "{:?}", x.z_slow);
        assert!((x.z_fast[0] - 2.0).abs() < 1e-12, "{:?}", x.z_fast);
    }

    #[test]
    fn random_linear_constraints_are_solved() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = NewtonConfig {
            abs_tol: 1e-13,
            ..NewtonConfig::default()
        };
        for _ in 0..20 {
            let (ns, nf, nzs, nzf) = (
                rng.random_range(1..3),
                rng.random_range(1..3),
                rng.random_range(1..3),
                rng.random_range(1..3),
            );
            let mut m = LinearModel::zeros(ns, nf, nzs, nzf, 0.0, 1.0);
            let mut fill = |x: &mut nalgebra::DMatrix<f64>, scale: f64| {
                x.iter_mut()
                    .for_each(|v| *v = scale * rng.random_range(-1.0..1.0))
            };
            for blk in [&mut m.c.ss, &mut m.c.sf, &mut m.c.fs, &mut m.c.ff] {
                fill(blk, 2.0);
            }
            for blk in [&mut m.d.ss, &mut m.d.sf, &mut m.d.fs, &mut m.d.ff] {
                fill(blk, 0.2);
            }
            for i in 0..nzs {
                m.d.ss[(i, i)] += 1.0;
            }
            for i in 0..nzf {
                m.d.ff[(i, i)] += 1.0;
            }
            m.initial
                .y_slow
                .iter_mut()
                .chain(m.initial.y_fast.iter_mut())
                .for_each(|v| *v = rng.random_range(-1.0..1.0));
            let p = m.to_dae().unwrap();
            let x = consistent_initialize(
                &p,
                0.0,
                &p.y_slow0,
                &p.y_fast0,
                (&p.z_slow0, &p.z_fast0),
                &cfg,
            )
            .unwrap();
            let (gs, gf) = p.constraint_residual(0.0, x.as_ref());
            assert!(max_abs(&gs).max(max_abs(&gf)) <= 1e-12);
        }
    }

    #[test]
    fn index_one_violations_are_reported() {
        let zero: crate::problem::DaeFn = Arc::new(|_, _, out: &mut [f64]| out.fill(0.0));
        // g_S does not depend on z_S.
        let gs: crate::problem::DaeFn =
            Arc::new(|_, x: StateRef, out: &mut [f64]| out[0] = x.z_fast[0] - x.y_slow[0]);
        let gf: crate::problem::DaeFn =
            Arc::new(|_, x: StateRef, out: &mut [f64]| out[0] = x.z_fast[0] + x.z_slow[0]);
        let initial = DaeState {
            y_slow: vec![1.0],
            y_fast: vec![1.0],
            z_slow: vec![0.0],
            z_fast: vec![0.0],
        };
        let p = PartitionedDae::new(zero.clone(), zero, gs, gf, initial, 0.0, 1.0).unwrap();
        let err = consistent_initialize(
            &p,
            0.0,
            &[1.0],
            &[1.0],
            (&[0.0], &[0.0]),
            &NewtonConfig::default(),
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::IndexOne(ref s) if s.contains("∂g_S/∂z_S")),
            "{err}"
        );
    }

    #[test]
    fn inconsistent_start_is_rejected() {
        let p = dae_lin(0.3, 0.3);
        let x = DaeState {
            z_slow: vec![0.0],
            ..init(&p)
        };
        let err = dae_window(
            &p,
            (0.0, 0.1),
            &x,
            &ie_plan(0.1, 2, Strategy::FullyDecoupled),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Inconsistent { .. }), "{err}");
    }

    #[test]
    fn explicit_schemes_are_rejected() {
        let p = dae_lin(0.3, 0.3);
        let plan = MacroStepPlan::new(0.1, 2, Strategy::FullyDecoupled, Scheme::Heun);
        assert!(matches!(
            integrate_dae(&p, &plan),
            Err(Error::InvalidPlan(_))
        ));
    }

    #[test]
    fn empty_constraints_match_ode_driver() {
        let Model::Ode(ode) = build_default("lin2").unwrap().model else {
            unreachable!()
        };
        let dae = PartitionedDae::from_ode(&ode);
        for s in Strategy::ALL {
            let plan = ie_plan(0.1, 3, s);
            let a = integrate(&ode, &plan).unwrap();
            let b = integrate_dae(&dae, &plan).unwrap();
            assert_eq!(a.macro_times, b.macro_times);
            assert_eq!(a.fast_times, b.fast_times);
            for (u, v) in a
                .slow_states
                .iter()
                .chain(&a.fast_states)
                .zip(b.slow_states.iter().chain(&b.fast_states))
            {
                assert!((u[0] - v[0]).abs() <= 1e-12, "{s}: {u:?} {v:?}");
            }
        }
    }

    #[test]
    fn equilibrium_is_preserved() {
        let mut m = dae_lin_model(1.0, 0.4, 1.0, 0.4).unwrap();
        m.initial.y_slow = vec![0.0];
        m.initial.y_fast = vec![0.0];
        let p = m.to_dae().unwrap();
        for s in Strategy::ALL {
            let t = integrate_dae(&p, &ie_plan(0.25, 2, s).with_sweeps(2)).unwrap();
            let x = t.final_state();
            assert_eq!(
                max_abs(&[x.y_slow, x.y_fast, x.z_slow, x.z_fast].concat()),
                0.0
            );
        }
    }

    #[test]
    fn decoupled_constraints_converge() {
        let bench = build(
            "dae-lin",
            &[("b".to_string(), 0.0), ("d".to_string(), 0.0)]
                .into_iter()
                .collect(),
        )
        .unwrap();
        let p = bench.model.as_dae();
        let reference = bench.reference_at(1.0).unwrap();
        let fine = integrate_single_rate_dae(&p, 4000, &NewtonConfig::default())
            .unwrap()
            .final_state();
        assert!(state_distance(&fine, &reference) < 1e-3);
        let err = |h: f64| {
            state_distance(
                &integrate_dae(&p, &ie_plan(h, 4, Strategy::FullyDecoupled))
                    .unwrap()
                    .final_state(),
                &reference,
            )
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e2 < e1 && e1 / e2 > 1.7, "{e1} {e2}");
    }

    #[test]
    fn second_sweep_is_closer_to_the_fixed_point() {
        let p = dae_lin(0.4, 0.4);
        let x = init(&p);
        for s in Strategy::ALL {
            let fixed = dae_window(
                &p,
                (0.0, 0.1),
                &x,
                &ie_plan(0.1, 4, s).with_sweeps(40),
                None,
            )
            .unwrap()
            .end;
            let r =
                dae_window(&p, (0.0, 0.1), &x, &ie_plan(0.1, 4, s).with_sweeps(2), None).unwrap();
            assert_eq!(r.sweep_ends.len(), 3);
            let d1 = state_distance(&r.sweep_ends[1], &fixed);
            let d2 = state_distance(&r.sweep_ends[2], &fixed);
            assert!(d2 < d1, "{s}: {d1} {d2}");
        }
    }

    #[test]
    fn strategies_share_the_fixed_point() {
        let p = dae_lin(0.3, 0.3);
        let x = init(&p);
        let ends: Vec<DaeState> = Strategy::ALL
            .iter()
            .map(|&s| {
                dae_window(
                    &p,
                    (0.0, 0.2),
                    &x,
                    &ie_plan(0.2, 4, s).with_orders(0, 1).with_sweeps(60),
                    None,
                )
                .unwrap()
                .end
            })
            .collect();
        // Each sweep solves to the Newton tolerance 1e-10, which bounds the agreement.
        assert!(state_distance(&ends[0], &ends[1]) < 1e-9);
        assert!(state_distance(&ends[0], &ends[2]) < 1e-9);
    }

    #[test]
    fn parallel_sweeps_equal_sequential() {
        let p = dae_lin(0.3, 0.3);
        let plan = ie_plan(0.1, 3, Strategy::FullyDecoupled).with_sweeps(2);
        let a = integrate_dae(&p, &plan.clone().with_parallel(false)).unwrap();
        let b = integrate_dae(&p, &plan.with_parallel(true)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accepted_nodes_satisfy_the_constraints() {
        // Fully decoupled, k = 1, constant extrapolation: each side solves its
        // constraint against the partner values frozen at the window start.
        let (b, d) = (0.3, 0.3);
        let p = dae_lin(b, d);
        let x = init(&p);
        let plan = ie_plan(0.1, 4, Strategy::FullyDecoupled);
        let r = dae_window(&p, (0.0, 0.1), &x, &plan, None).unwrap();
        let tol = 10.0 * plan.newton.abs_tol;
        assert!((r.end.z_slow[0] - r.end.y_slow[0] - b * x.z_fast[0]).abs() <= tol);
        for (_, yf, zf) in &r.fast_nodes {
            assert!((zf[0] - yf[0] - d * x.z_slow[0]).abs() <= tol);
        }
    }
}
