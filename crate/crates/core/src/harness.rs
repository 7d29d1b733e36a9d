//! Convergence-order studies and stability sweeps against benchmark references.

use std::fmt::{self, Write as _};
use std::ops::Range;

use crate::contraction::{analyze, default_samples, Verdict};
use crate::coupling::extrapolation_lphi;
use crate::dae::integrate_dae;
use crate::error::{Error, Result};
use crate::linalg::max_abs;
use crate::ode::integrate;
use crate::problem::{DaeState, MacroStepPlan, Strategy, Trajectory};
use crate::problems::{build, Benchmark, Model};
use crate::steppers::Scheme;

/// Minimum number of step sizes in a study.
pub const MIN_STUDY_SAMPLES: usize = 4;

/// Rungs of the default step ladder.
pub const DEFAULT_RUNGS: usize = 5;

/// Growth factors up to this value count as bounded in a stability sweep.
pub const BOUNDED_GROWTH: f64 = 1.02;

/// Errors above this are treated as divergence.
const DIVERGED_ERROR: f64 = 1e150;

/// Result of a log-log least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeFit {
    Order(f64),
    /// All errors are exactly zero.
    Exact,
    /// Fewer than two positive errors, or a mix of zero and nonzero errors.
    Undefined,
}

impl SlopeFit {
    pub fn value(self) -> Option<f64> {
        match self {
            SlopeFit::Order(p) => Some(p),
            _ => None,
        }
    }
}

impl fmt::Display for SlopeFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlopeFit::Order(p) => write!(f, "{p:.4}"),
            SlopeFit::Exact => f.write_str("exact"),
            SlopeFit::Undefined => f.write_str("undefined"),
        }
    }
}

/// Least-squares slope of `ln(error)` against `ln(step)`.
pub fn fit_slope(steps: &[f64], errors: &[f64]) -> SlopeFit {
    if errors.iter().all(|&e| e == 0.0) && !errors.is_empty() {
        return SlopeFit::Exact;
    }
    if errors.iter().any(|&e| !(e > 0.0) || !e.is_finite())
        || steps.len() != errors.len()
        || steps.len() < 2
    {
        return SlopeFit::Undefined;
    }
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        SlopeFit::Undefined
    } else {
        SlopeFit::Order(sxy / sxx)
    }
}

/// Geometric ladder `h0, h0/2, ...` with [`DEFAULT_RUNGS`] rungs.
pub fn default_ladder(h0: f64) -> Vec<f64> {
    (0..DEFAULT_RUNGS)
        .map(|j| h0 * 0.5f64.powi(j as i32))
        .collect()
}

/// Checks a step list: at least four entries, positive, strictly decreasing.
pub fn check_ladder(steps: &[f64]) -> Result<()> {
    if steps.len() < MIN_STUDY_SAMPLES {
        return Err(Error::InvalidPlan(vec![format!(
            "≥ {MIN_STUDY_SAMPLES} step sizes required, got {}",
            steps.len()
        )]));
    }
    if steps.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(Error::InvalidPlan(vec![
            "step sizes must be positive".into()
        ]));
    }
    if steps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidPlan(vec![
            "step sizes must be strictly decreasing".into(),
        ]));
    }
    Ok(())
}

/// Integrates a benchmark with the integrator matching its form.
pub fn run_plan(bench: &Benchmark, plan: &MacroStepPlan) -> Result<Trajectory> {
    match &bench.model {
        Model::Ode(p) => integrate(p, plan),
        Model::Dae(p) => integrate_dae(p, plan),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub step: f64,
    pub error_slow: f64,
    pub error_fast: f64,
    pub error_alg: f64,
    pub error_total: f64,
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    max_abs(&d)
}

/// Sup-norm errors of `state` against `reference`, split by channel.
pub fn state_errors(step: f64, state: &DaeState, reference: &DaeState) -> ErrorSample {
    let error_slow = diff_norm(&state.y_slow, &reference.y_slow);
    let error_fast = diff_norm(&state.y_fast, &reference.y_fast);
    let error_alg = diff_norm(&state.z_slow, &reference.z_slow)
        .max(diff_norm(&state.z_fast, &reference.z_fast));
    ErrorSample {
        step,
        error_slow,
        error_fast,
        error_alg,
        error_total: error_slow.max(error_fast).max(error_alg),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub problem: String,
    pub samples: Vec<ErrorSample>,
    pub slope_slow: SlopeFit,
    pub slope_fast: SlopeFit,
    pub slope_alg: SlopeFit,
    pub slope_total: SlopeFit,
    /// Sample indices used by the fits.
    pub fit_window: Range<usize>,
}

impl ConvergenceReport {
    /// Fits every column over `samples[fit_window]`.
    pub fn from_samples(
        problem: &str,
        samples: Vec<ErrorSample>,
        fit_window: Range<usize>,
    ) -> Self {
        let w = &samples[fit_window.clone()];
        let steps: Vec<f64> = w.iter().map(|s| s.step).collect();
        let col =
            |f: fn(&ErrorSample) -> f64| fit_slope(&steps, &w.iter().map(f).collect::<Vec<_>>());
        Self {
            problem: problem.to_string(),
            slope_slow: col(|s| s.error_slow),
            slope_fast: col(|s| s.error_fast),
            slope_alg: col(|s| s.error_alg),
            slope_total: col(|s| s.error_total),
            samples,
            fit_window,
        }
    }
}

/// Runs `template` with every macro step in `steps` and fits observed
/// orders over all but the largest step. Runs execute in parallel; the
/// report keeps the input order.
pub fn convergence_study(
    bench: &Benchmark,
    template: &MacroStepPlan,
    steps: &[f64],
) -> Result<ConvergenceReport> {
    check_ladder(steps)?;
    let reference = bench.reference_at(bench.model.t_end())?;
    let results: Vec<Result<ErrorSample>> = std::thread::scope(|s| {
        let handles: Vec<_> = steps
            .iter()
            .map(|&h| {
                let reference = &reference;
                s.spawn(move || {
                    let plan = template.clone().with_macro_step(h);
                    let traj = run_plan(bench, &plan).map_err(|e| Error::Study {
                        step: h,
                        source: Box::new(e),
                    })?;
                    Ok(state_errors(h, &traj.final_state(), reference))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("study worker panicked"))
            .collect()
    });
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    let n = samples.len();
    Ok(ConvergenceReport::from_samples(&bench.id, samples, 1..n))
}

/// Heun with order-`extrap_order` extrapolation, fully decoupled: the
/// coupling error caps the observed order at `extrap_order + 1`.
pub fn order_degradation_probe(
    bench: &Benchmark,
    steps: &[f64],
    m: usize,
    extrap_order: usize,
) -> Result<ConvergenceReport> {
    let template = MacroStepPlan::new(
        steps.first().copied().unwrap_or(0.1),
        m,
        Strategy::FullyDecoupled,
        Scheme::Heun,
    )
    .with_orders(extrap_order, extrap_order);
    convergence_study(bench, &template, steps)
}

/// Total error at every macro node of `traj`.
pub fn window_errors(bench: &Benchmark, traj: &Trajectory) -> Result<Vec<f64>> {
    let mut fast_at = traj
        .fast_times
        .iter()
        .zip(&traj.fast_states)
        .zip(&traj.z_fast_states)
        .peekable();
    let mut out = Vec::with_capacity(traj.macro_times.len());
    for (i, &t) in traj.macro_times.iter().enumerate() {
        let (yf, zf) = loop {
            match fast_at.next() {
                Some(((&tf, y), z)) if tf == t => break (y.clone(), z.clone()),
                Some(_) => continue,
                None => {
                    return Err(Error::InvalidProblem(format!(
                        "macro node {t} missing from the micro grid"
                    )))
                }
            }
        };
        let state = DaeState {
            y_slow: traj.slow_states[i].clone(),
            y_fast: yf,
            z_slow: traj.z_slow_states[i].clone(),
            z_fast: zf,
        };
        out.push(state_errors(0.0, &state, &bench.reference_at(t)?).error_total);
    }
    Ok(out)
}

/// Mean per-window growth factor `(e_to / e_from)^(1 / (to - from))`.
pub fn growth_factor(errors: &[f64], from: usize, to: usize) -> f64 {
    if to <= from || to >= errors.len() {
        return f64::NAN;
    }
    let (a, b) = (errors[from], errors[to]);
    if a == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (b / a).powf(1.0 / (to - from) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepStatus {
    Stable,
    Growing,
    Diverged,
}

impl SweepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepStatus::Stable => "stable",
            SweepStatus::Growing => "growing",
            SweepStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub b: f64,
    pub d: f64,
    pub alpha_s: f64,
    pub alpha_f: f64,
    pub verdict: Verdict,
    pub growth: f64,
    pub status: SweepStatus,
    /// False only when the analyzer passes but the run is not stable; a
    /// failing verdict with a stable run is allowed (the conditions are
    /// sufficient, not necessary).
    pub consistent: bool,
}

/// Settings of a stability sweep on `dae-lin` (with `a = c = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub strategy: Strategy,
    pub sweeps: usize,
    pub macro_step: f64,
    pub multirate_factor: usize,
    pub windows: usize,
    /// First window of the growth measurement.
    pub from_window: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            strategy: Strategy::FullyDecoupled,
            sweeps: 1,
            macro_step: 0.25,
            multirate_factor: 4,
            windows: 20,
            from_window: 5,
        }
    }
}

/// Measures per-window error growth on `dae-lin(b, d)` for every grid
/// point and sets it beside the analyzer verdict. Failed or overflowing
/// runs are recorded as diverged. Rows come back in grid order.
pub fn stability_sweep(grid: &[(f64, f64)], settings: &SweepSettings) -> Result<Vec<SweepRow>> {
    let run_point = |b: f64, d: f64| -> Result<SweepRow> {
        let params = [("b".to_string(), b), ("d".to_string(), d)]
            .into_iter()
            .collect();
        let base = build("dae-lin", &params)?;
        let bench = base.with_t_end(settings.macro_step * settings.windows as f64)?;
        let plan = MacroStepPlan::new(
            settings.macro_step,
            settings.multirate_factor,
            settings.strategy,
            Scheme::ImplicitEuler,
        )
        .with_orders(0, 0)
        .with_sweeps(settings.sweeps);
        // Samples stay on the catalog horizon: some grid points have growing
        // exact solutions that leave the Newton tolerance's range on long runs.
        let dae = base.model.as_dae();
        let samples = default_samples(&dae, &plan.newton, None)?;
        let report = analyze(
            "dae-lin",
            &dae,
            &samples,
            extrapolation_lphi(plan.extrap_order),
            0,
            settings.sweeps,
        )?;
        let verdict = report.verdict(settings.strategy);
        let growth = match run_plan(&bench, &plan).and_then(|traj| window_errors(&bench, &traj)) {
            Ok(errors) if errors.iter().all(|e| e.is_finite() && *e < DIVERGED_ERROR) => {
                growth_factor(&errors, settings.from_window, settings.windows)
            }
            Ok(_) => f64::INFINITY,
            Err(e) if e.exit_code() == 2 => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let status = if !growth.is_finite() {
            SweepStatus::Diverged
        } else if growth > BOUNDED_GROWTH {
            SweepStatus::Growing
        } else {
            SweepStatus::Stable
        };
        Ok(SweepRow {
            b,
            d,
            alpha_s: report.alpha_s,
            alpha_f: report.alpha_f,
            consistent: !(verdict.pass && status != SweepStatus::Stable),
            verdict,
            growth,
            status,
        })
    };
    std::thread::scope(|s| {
        let handles: Vec<_> = grid
            .iter()
            .map(|&(b, d)| s.spawn(move || run_point(b, d)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

const CONVERGENCE_HEADER: &str = "H,error_slow,error_fast,error_alg,error_total";

/// Convergence report as CSV; fitted slopes follow as `#` lines.
pub fn convergence_to_csv(r: &ConvergenceReport) -> String {
    let mut s = format!("{CONVERGENCE_HEADER}\n");
    for x in &r.samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt(x.step),
            fmt(x.error_slow),
            fmt(x.error_fast),
            fmt(x.error_alg),
            fmt(x.error_total)
        );
    }
    let _ = writeln!(s, "# problem = {}", r.problem);
    let _ = writeln!(
        s,
        "# fit_window = {}..{}",
        r.fit_window.start, r.fit_window.end
    );
    for (name, fit) in [
        ("slow", r.slope_slow),
        ("fast", r.slope_fast),
        ("alg", r.slope_alg),
        ("total", r.slope_total),
    ] {
        let _ = writeln!(s, "# slope_{name} = {fit}");
    }
    s
}

/// Parses the sample rows of [`convergence_to_csv`]; `#` lines are skipped.
pub fn parse_convergence_csv(text: &str) -> Result<Vec<ErrorSample>> {
    let err = |line: usize, message: String| Error::Parse {
        context: "convergence csv",
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == CONVERGENCE_HEADER => {}
        Some((i, _)) => return Err(err(i + 1, format!("header must be `{CONVERGENCE_HEADER}`"))),
        None => return Err(err(1, "missing header".into())),
    }
    lines
        .map(|(i, l)| {
            let v = l
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| err(i + 1, format!("invalid number `{}`", c.trim())))
                })
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != 5 {
                return Err(err(i + 1, format!("expected 5 fields, got {}", v.len())));
            }
            Ok(ErrorSample {
                step: v[0],
                error_slow: v[1],
                error_fast: v[2],
                error_alg: v[3],
                error_total: v[4],
            })
        })
        .collect()
}

/// Stability sweep table as CSV.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("b,d,alpha_S,alpha_F,verdict,failed,growth,status,consistent\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            fmt(r.b),
            fmt(r.d),
            fmt(r.alpha_s),
            fmt(r.alpha_f),
            if r.verdict.pass { "pass" } else { "fail" },
            r.verdict.failed.join("; "),
            fmt(r.growth),
            r.status.as_str(),
            r.consistent
        );
    }
    s
}
