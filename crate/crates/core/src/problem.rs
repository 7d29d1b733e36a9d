//! Problem definitions, macro-step plans and trajectories shared by every
//! integrator in the crate.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::steppers::{NewtonConfig, Scheme};

/// Right-hand side `f(t, y_slow, y_fast) -> out` of one ODE subsystem.
pub type OdeFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Right-hand side or constraint of one DAE subsystem, evaluated at the
/// full state `(y_S, y_F, z_S, z_F)`.
pub type DaeFn = Arc<dyn Fn(f64, StateRef<'_>, &mut [f64]) + Send + Sync>;

/// Largest extrapolation order accepted by [`validate_plan`].
pub const MAX_EXTRAP_ORDER: usize = 6;

/// Borrowed view of a full DAE state.
#[derive(Debug, Clone, Copy)]
pub struct StateRef<'a> {
    pub y_slow: &'a [f64],
    pub y_fast: &'a [f64],
    pub z_slow: &'a [f64],
    pub z_fast: &'a [f64],
}

/// Owned full state of a partitioned DAE (or ODE, with empty `z`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DaeState {
    pub y_slow: Vec<f64>,
    pub y_fast: Vec<f64>,
    pub z_slow: Vec<f64>,
    pub z_fast: Vec<f64>,
}

impl DaeState {
    pub fn as_ref(&self) -> StateRef<'_> {
        StateRef {
            y_slow: &self.y_slow,
            y_fast: &self.y_fast,
            z_slow: &self.z_slow,
            z_fast: &self.z_fast,
        }
    }
}

/// Component-wise partitioned ODE `y_S' = f_S(t, y_S, y_F)`, `y_F' = f_F(t, y_S, y_F)`.
#[derive(Clone)]
pub struct PartitionedOde {
    pub dim_slow: usize,
    pub dim_fast: usize,
    pub f_slow: OdeFn,
    pub f_fast: OdeFn,
    pub y_slow0: Vec<f64>,
    pub y_fast0: Vec<f64>,
    pub t0: f64,
    pub t_end: f64,
    single_rate: bool,
}

impl fmt::Debug for PartitionedOde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartitionedOde")
            .field("dim_slow", &self.dim_slow)
            .field("dim_fast", &self.dim_fast)
            .field("t0", &self.t0)
            .field("t_end", &self.t_end)
            .field("single_rate", &self.single_rate)
            .finish_non_exhaustive()
    }
}

impl PartitionedOde {
    pub fn new(
        f_slow: OdeFn,
        f_fast: OdeFn,
        y_slow0: Vec<f64>,
        y_fast0: Vec<f64>,
        t0: f64,
        t_end: f64,
    ) -> Result<Self> {
        let problem = Self {
            dim_slow: y_slow0.len(),
            dim_fast: y_fast0.len(),
            f_slow,
            f_fast,
            y_slow0,
            y_fast0,
            t0,
            t_end,
            single_rate: false,
        };
        problem.check()?;
        Ok(problem)
    }

    fn check(&self) -> Result<()> {
        if self.dim_slow == 0 || self.dim_fast == 0 {
            return Err(Error::InvalidProblem(
                "slow and fast dimensions must both be at least 1".into(),
            ));
        }
        check_horizon(self.t0, self.t_end)?;
        check_finite("y_slow0", &self.y_slow0)?;
        check_finite("y_fast0", &self.y_fast0)
    }

    /// Marks the problem for monolithic single-rate integration: the driver
    /// then steps the coupled system with `m = 1`, handing each subsystem the
    /// partner's freshly computed stage values. Only used to build references.
    pub fn lift_single_rate(&self) -> Self {
        Self {
            single_rate: true,
            ..self.clone()
        }
    }

    pub fn is_single_rate(&self) -> bool {
        self.single_rate
    }

    pub fn with_horizon(&self, t0: f64, t_end: f64) -> Result<Self> {
        check_horizon(t0, t_end)?;
        Ok(Self {
            t0,
            t_end,
            ..self.clone()
        })
    }
}

/// Semi-explicit partitioned DAE with slow/fast differential and algebraic
/// unknowns. Algebraic dimensions may be zero; a problem with no algebraic
/// unknowns at all is a plain ODE.
#[derive(Clone)]
pub struct PartitionedDae {
    pub dim_slow: usize,
    pub dim_fast: usize,
    pub dim_zslow: usize,
    pub dim_zfast: usize,
    pub f_slow: DaeFn,
    pub f_fast: DaeFn,
    pub g_slow: DaeFn,
    pub g_fast: DaeFn,
    pub y_slow0: Vec<f64>,
    pub y_fast0: Vec<f64>,
    pub z_slow0: Vec<f64>,
    pub z_fast0: Vec<f64>,
    pub t0: f64,
    pub t_end: f64,
}

impl fmt::Debug for PartitionedDae {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartitionedDae")
            .field("dim_slow", &self.dim_slow)
            .field("dim_fast", &self.dim_fast)
            .field("dim_zslow", &self.dim_zslow)
            .field("dim_zfast", &self.dim_zfast)
            .field("t0", &self.t0)
            .field("t_end", &self.t_end)
            .finish_non_exhaustive()
    }
}

impl PartitionedDae {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        f_slow: DaeFn,
        f_fast: DaeFn,
        g_slow: DaeFn,
        g_fast: DaeFn,
        initial: DaeState,
        t0: f64,
        t_end: f64,
    ) -> Result<Self> {
        let problem = Self {
            dim_slow: initial.y_slow.len(),
            dim_fast: initial.y_fast.len(),
            dim_zslow: initial.z_slow.len(),
            dim_zfast: initial.z_fast.len(),
            f_slow,
            f_fast,
            g_slow,
            g_fast,
            y_slow0: initial.y_slow,
            y_fast0: initial.y_fast,
            z_slow0: initial.z_slow,
            z_fast0: initial.z_fast,
            t0,
            t_end,
        };
        if problem.dim_slow == 0 || problem.dim_fast == 0 {
            return Err(Error::InvalidProblem(
                "slow and fast differential dimensions must both be at least 1".into(),
            ));
        }
        check_horizon(t0, t_end)?;
        check_finite("y_slow0", &problem.y_slow0)?;
        check_finite("y_fast0", &problem.y_fast0)?;
        check_finite("z_slow0", &problem.z_slow0)?;
        check_finite("z_fast0", &problem.z_fast0)?;
        Ok(problem)
    }

    /// Views an ODE as a DAE without algebraic unknowns.
    pub fn from_ode(ode: &PartitionedOde) -> Self {
        let fs = ode.f_slow.clone();
        let ff = ode.f_fast.clone();
        let empty: DaeFn = Arc::new(|_, _, _| {});
        Self {
            dim_slow: ode.dim_slow,
            dim_fast: ode.dim_fast,
            dim_zslow: 0,
            dim_zfast: 0,
            f_slow: Arc::new(move |t, x, out| fs(t, x.y_slow, x.y_fast, out)),
            f_fast: Arc::new(move |t, x, out| ff(t, x.y_slow, x.y_fast, out)),
            g_slow: empty.clone(),
            g_fast: empty,
            y_slow0: ode.y_slow0.clone(),
            y_fast0: ode.y_fast0.clone(),
            z_slow0: Vec::new(),
            z_fast0: Vec::new(),
            t0: ode.t0,
            t_end: ode.t_end,
        }
    }

    pub fn initial_state(&self) -> DaeState {
        DaeState {
            y_slow: self.y_slow0.clone(),
            y_fast: self.y_fast0.clone(),
            z_slow: self.z_slow0.clone(),
            z_fast: self.z_fast0.clone(),
        }
    }

    pub fn dim_z(&self) -> usize {
        self.dim_zslow + self.dim_zfast
    }

    pub fn with_horizon(&self, t0: f64, t_end: f64) -> Result<Self> {
        check_horizon(t0, t_end)?;
        Ok(Self {
            t0,
            t_end,
            ..self.clone()
        })
    }

    /// Evaluates `(g_S, g_F)` at `x`.
    pub fn constraint_residual(&self, t: f64, x: StateRef<'_>) -> (Vec<f64>, Vec<f64>) {
        let mut gs = vec![0.0; self.dim_zslow];
        let mut gf = vec![0.0; self.dim_zfast];
        (self.g_slow)(t, x, &mut gs);
        (self.g_fast)(t, x, &mut gf);
        (gs, gf)
    }
}

fn check_horizon(t0: f64, t_end: f64) -> Result<()> {
    if !(t0.is_finite() && t_end.is_finite() && t0 < t_end) {
        return Err(Error::InvalidProblem(format!(
            "horizon requires t0 < t_end, got [{t0}, {t_end}]"
        )));
    }
    Ok(())
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidProblem(format!(
            "{name} has non-finite entries"
        )))
    }
}

/// Order in which the two subsystems are advanced inside a macro window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    FullyDecoupled,
    SlowestFirst,
    FastestFirst,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::FullyDecoupled,
        Strategy::SlowestFirst,
        Strategy::FastestFirst,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::FullyDecoupled => "fully-decoupled",
            Strategy::SlowestFirst => "slowest-first",
            Strategy::FastestFirst => "fastest-first",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "fully-decoupled" => Ok(Strategy::FullyDecoupled),
            "slowest-first" => Ok(Strategy::SlowestFirst),
            "fastest-first" => Ok(Strategy::FastestFirst),
            other => Err(Error::InvalidPlan(vec![format!(
                "unknown strategy `{other}` (expected fully-decoupled, slowest-first or fastest-first)"
            )])),
        }
    }
}

/// Macro-step plan: `H`, multirate factor `m`, coupling strategy, base
/// schemes and coupling operator orders.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroStepPlan {
    pub macro_step: f64,
    pub multirate_factor: usize,
    pub strategy: Strategy,
    pub scheme_slow: Scheme,
    pub scheme_fast: Scheme,
    pub extrap_order: usize,
    pub interp_order: usize,
    /// Use the slow scheme's continuous extension as the slow interpolant
    /// in slowest-first windows.
    pub dense_output: bool,
    /// Dynamic-iteration sweeps per window (DAE path; the ODE path uses 1).
    pub sweeps: usize,
    pub newton: NewtonConfig,
    /// Run the two subsystems of fully-decoupled windows on two threads.
    pub parallel: bool,
}

impl MacroStepPlan {
    /// Plan with order `p - 1` coupling operators for a base scheme of order `p`.
    pub fn new(
        macro_step: f64,
        multirate_factor: usize,
        strategy: Strategy,
        scheme: Scheme,
    ) -> Self {
        let q = scheme.order().saturating_sub(1);
        Self {
            macro_step,
            multirate_factor,
            strategy,
            scheme_slow: scheme,
            scheme_fast: scheme,
            extrap_order: q,
            interp_order: q,
            dense_output: false,
            sweeps: 1,
            newton: NewtonConfig::default(),
            parallel: false,
        }
    }

    pub fn with_orders(mut self, extrap_order: usize, interp_order: usize) -> Self {
        self.extrap_order = extrap_order;
        self.interp_order = interp_order;
        self
    }

    pub fn with_macro_step(mut self, macro_step: f64) -> Self {
        self.macro_step = macro_step;
        self
    }

    pub fn with_sweeps(mut self, sweeps: usize) -> Self {
        self.sweeps = sweeps;
        self
    }

    pub fn with_dense_output(mut self, dense: bool) -> Self {
        self.dense_output = dense;
        self
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    /// Micro step `h = H / m`.
    pub fn micro_step(&self) -> f64 {
        self.macro_step / self.multirate_factor as f64
    }

    /// Whether slowest-first windows interpolate the slow channel with the
    /// slow scheme's continuous extension.
    pub(crate) fn slow_uses_dense(&self) -> bool {
        self.dense_output || self.interp_order >= 2
    }
}

/// A plan that passed [`validate_plan`], together with its window tiling.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckedPlan {
    pub plan: MacroStepPlan,
    pub micro_step: f64,
    pub windows: Vec<(f64, f64)>,
}

/// Checks a plan against a horizon and tiles `[t0, t_end]` into macro windows.
pub fn validate_plan(plan: &MacroStepPlan, t0: f64, t_end: f64) -> Result<CheckedPlan> {
    let mut problems = Vec::new();
    let h_ok = plan.macro_step.is_finite() && plan.macro_step > 0.0;
    if !h_ok {
        problems.push(format!("macro step H must be > 0, got {}", plan.macro_step));
    }
    let m = plan.multirate_factor;
    if m < 1 {
        problems.push("multirate factor must be ≥ 1".to_string());
    }
    if plan.sweeps < 1 {
        problems.push("sweep count k must be ≥ 1".to_string());
    }
    if plan.extrap_order > MAX_EXTRAP_ORDER {
        problems.push(format!(
            "extrapolation order {} exceeds the supported maximum {MAX_EXTRAP_ORDER}",
            plan.extrap_order
        ));
    }
    match plan.strategy {
        Strategy::SlowestFirst if plan.slow_uses_dense() => {
            match plan.scheme_slow.dense_output_order() {
                Some(d) if d >= plan.interp_order => {}
                Some(d) => problems.push(format!(
                    "interpolation order {} exceeds the dense output order {d} of {}",
                    plan.interp_order, plan.scheme_slow
                )),
                None => problems.push(format!("{} provides no dense output", plan.scheme_slow)),
            }
        }
        Strategy::FastestFirst if m >= 1 && plan.interp_order > m => problems.push(format!(
            "interpolation order {} needs {} micro nodes but m + 1 = {}",
            plan.interp_order,
            plan.interp_order + 1,
            m + 1
        )),
        _ => {}
    }
    if !(plan.newton.abs_tol > 0.0) {
        problems.push("Newton tolerance must be > 0".to_string());
    }
    if plan.newton.max_iters < 1 {
        problems.push("Newton max_iters must be ≥ 1".to_string());
    }
    if !(t0.is_finite() && t_end.is_finite() && t0 < t_end) {
        problems.push(format!("horizon requires t0 < t_end, got [{t0}, {t_end}]"));
    }
    if !problems.is_empty() {
        return Err(Error::InvalidPlan(problems));
    }
    Ok(CheckedPlan {
        plan: plan.clone(),
        micro_step: plan.micro_step(),
        windows: macro_windows(t0, t_end, plan.macro_step),
    })
}

/// Tiles `[t0, t_end]` with windows of length `macro_step`; a non-divisible
/// remainder becomes a shortened final window ending exactly at `t_end`.
pub fn macro_windows(t0: f64, t_end: f64, macro_step: f64) -> Vec<(f64, f64)> {
    let span = t_end - t0;
    let ratio = span / macro_step;
    let nearest = ratio.round();
    let full = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        ratio.floor() as usize
    };
    let mut nodes: Vec<f64> = (0..=full).map(|i| t0 + i as f64 * macro_step).collect();
    if full == 0 || t_end - nodes[full] > 1e-12 * span.max(1.0) {
        nodes.push(t_end);
    } else {
        nodes[full] = t_end;
    }
    nodes.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Micro-node times of one window: `m + 1` nodes from `start` to `end`.
pub fn micro_nodes(start: f64, end: f64, m: usize) -> Vec<f64> {
    let h = (end - start) / m as f64;
    (0..=m)
        .map(|j| if j == m { end } else { start + j as f64 * h })
        .collect()
}

/// Numerical solution on the macro (slow) and micro (fast) grids.
///
/// Slow states and slow algebraic states live on `macro_times`; fast
/// states and fast algebraic states on `fast_times`. Algebraic vectors are
/// empty for ODE problems but stay aligned with their grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub macro_times: Vec<f64>,
    pub slow_states: Vec<Vec<f64>>,
    pub fast_times: Vec<f64>,
    pub fast_states: Vec<Vec<f64>>,
    pub z_slow_states: Vec<Vec<f64>>,
    pub z_fast_states: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    /// Final full state.
    pub fn final_state(&self) -> DaeState {
        DaeState {
            y_slow: self.slow_states.last().cloned().unwrap_or_default(),
            y_fast: self.fast_states.last().cloned().unwrap_or_default(),
            z_slow: self.z_slow_states.last().cloned().unwrap_or_default(),
            z_fast: self.z_fast_states.last().cloned().unwrap_or_default(),
        }
    }

    /// Checks grid and alignment invariants.
    pub fn validate(&self, t0: f64, t_end: f64) -> std::result::Result<(), String> {
        let first = self.macro_times.first().ok_or("empty macro grid")?;
        if *first != t0 || *self.macro_times.last().unwrap() != t_end {
            return Err("macro grid must start at t0 and end at t_end".into());
        }
        for (name, grid) in [("macro", &self.macro_times), ("micro", &self.fast_times)] {
            if grid.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(format!("{name} grid is not strictly increasing"));
            }
        }
        if self.slow_states.len() != self.macro_times.len()
            || self.z_slow_states.len() != self.macro_times.len()
        {
            return Err("slow state arrays do not match the macro grid".into());
        }
        if self.fast_states.len() != self.fast_times.len()
            || self.z_fast_states.len() != self.fast_times.len()
        {
            return Err("fast state arrays do not match the micro grid".into());
        }
        let mut j = 0;
        for t in &self.macro_times {
            while j < self.fast_times.len() && self.fast_times[j] < *t {
                j += 1;
            }
            if j == self.fast_times.len() || self.fast_times[j] != *t {
                return Err(format!("macro node {t} missing from the micro grid"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn zero_ode() -> PartitionedOde {
        let z: OdeFn = Arc::new(|_, _, _, out| out.fill(0.0));
        PartitionedOde::new(z.clone(), z, vec![1.0], vec![2.0], 0.0, 1.0).unwrap()
    }

    #[test]
    fn micro_step_is_h_over_m() {
        let plan = MacroStepPlan::new(0.1, 4, Strategy::FullyDecoupled, Scheme::ExplicitEuler);
        let checked = validate_plan(&plan, 0.0, 1.0).unwrap();
        assert_eq!(checked.micro_step, 0.025);
    }

    #[test]
    fn zero_multirate_factor_rejected() {
        let mut plan = MacroStepPlan::new(0.1, 0, Strategy::FullyDecoupled, Scheme::ExplicitEuler);
        plan.macro_step = -1.0;
        let err = validate_plan(&plan, 0.0, 1.0).unwrap_err().to_string();
        assert!(err.contains("multirate factor must be ≥ 1"), "{err}");
        assert!(err.contains("macro step H must be > 0"), "{err}");
    }

    #[test]
    fn remainder_window_is_shortened() {
        let w = macro_windows(0.0, 1.0, 0.3);
        assert_eq!(w.len(), 4);
        let lengths: Vec<f64> = w.iter().map(|(a, b)| b - a).collect();
        for l in &lengths[..3] {
            assert!((l - 0.3).abs() < 1e-15);
        }
        assert!((lengths[3] - 0.1).abs() < 1e-15);
        assert_eq!(w.last().unwrap().1, 1.0);
    }

    #[test]
    fn divisible_horizon_has_no_sliver() {
        for j in 0..8 {
            let h = 0.1 * 0.5f64.powi(j);
            let w = macro_windows(0.0, 1.0, h);
            assert_eq!(w.len(), 10 << j);
        }
    }

    #[test]
    fn lift_is_idempotent() {
        let p = zero_ode();
        let once = p.lift_single_rate();
        let twice = once.lift_single_rate();
        assert!(once.is_single_rate() && twice.is_single_rate());
        assert_eq!(once.y_slow0, twice.y_slow0);
    }

    #[test]
    fn interp_order_beyond_micro_nodes_rejected() {
        let plan =
            MacroStepPlan::new(0.1, 2, Strategy::FastestFirst, Scheme::Heun).with_orders(1, 3);
        assert!(validate_plan(&plan, 0.0, 1.0).is_err());
    }

    #[test]
    fn dense_order_checked_for_slowest_first() {
        let plan = MacroStepPlan::new(0.1, 2, Strategy::SlowestFirst, Scheme::ExplicitEuler)
            .with_orders(0, 2);
        let err = validate_plan(&plan, 0.0, 1.0).unwrap_err().to_string();
        assert!(err.contains("dense output order"), "{err}");
    }

    proptest! {
        #[test]
        fn windows_tile_the_horizon(t0 in -5.0f64..5.0, span in 0.01f64..10.0, frac in 0.001f64..1.0) {
            let t_end = t0 + span;
            let h = span * frac;
            let w = macro_windows(t0, t_end, h);
            prop_assert_eq!(w[0].0, t0);
            prop_assert_eq!(w.last().unwrap().1, t_end);
            let total: f64 = w.iter().map(|(a, b)| b - a).sum();
            prop_assert!((total - span).abs() <= 1e-12 * span.max(1.0) * w.len() as f64);
            for pair in w.windows(2) {
                prop_assert_eq!(pair[0].1, pair[1].0);
            }
            for (a, b) in &w {
                prop_assert!(b > a);
                prop_assert!(b - a <= h * (1.0 + 1e-9));
            }
        }
    }
}
