//! Lipschitz estimates, contraction ratios and the per-strategy stability
//! conditions of the co-simulation of split index-1 DAEs.
//!
//! All constants are maxima over sample points of infinity norms of
//! finite-difference Jacobian blocks. The contraction ratios use the
//! normalized product `‖(∂g_S/∂z_S)^{-1} ∂g_S/∂z_F‖∞` (and its fast
//! mirror), which equals `L^{g_S}_F / L^{g_S}_S` for scalar constraints with
//! unit diagonal. Samples come from a numerical trajectory, so every
//! estimate is a lower bound of the supremum over the exact solution.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dae::{consistent_initialize, integrate_single_rate_dae};
use crate::error::{Error, Result};
use crate::linalg::{inf_norm, lu_solve_matrix};
use crate::problem::{DaeState, PartitionedDae, StateRef, Strategy};
use crate::steppers::NewtonConfig;

/// Index of the slow subsystem in the `[λ][ρ]` tables.
pub const S: usize = 0;
/// Index of the fast subsystem in the `[λ][ρ]` tables.
pub const F: usize = 1;

/// Coarse single-rate steps used for the default sample trajectory.
pub const DEFAULT_SAMPLE_STEPS: usize = 20;

/// A sample point `(t, x)` with consistent algebraic components.
pub type Sample = (f64, DaeState);

/// `[λ][ρ]` tables of Lipschitz constants.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LipschitzEstimates {
    /// `g_λ` with respect to `z_ρ`.
    pub lg: [[f64; 2]; 2],
    /// `f_λ` with respect to `y_ρ`.
    pub mf: [[f64; 2]; 2],
    /// `f_λ` with respect to `z_ρ`.
    pub lf: [[f64; 2]; 2],
    /// `g_λ` with respect to `y_ρ`.
    pub mg: [[f64; 2]; 2],
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    FSlow,
    FFast,
    GSlow,
    GFast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    YSlow,
    YFast,
    ZSlow,
    ZFast,
}

fn func_dim(p: &PartitionedDae, f: Func) -> usize {
    match f {
        Func::FSlow => p.dim_slow,
        Func::FFast => p.dim_fast,
        Func::GSlow => p.dim_zslow,
        Func::GFast => p.dim_zfast,
    }
}

fn var_mut(x: &mut DaeState, v: Var) -> &mut Vec<f64> {
    match v {
        Var::YSlow => &mut x.y_slow,
        Var::YFast => &mut x.y_fast,
        Var::ZSlow => &mut x.z_slow,
        Var::ZFast => &mut x.z_fast,
    }
}

fn call(p: &PartitionedDae, f: Func, t: f64, x: StateRef<'_>, out: &mut [f64]) {
    match f {
        Func::FSlow => (p.f_slow)(t, x, out),
        Func::FFast => (p.f_fast)(t, x, out),
        Func::GSlow => (p.g_slow)(t, x, out),
        Func::GFast => (p.g_fast)(t, x, out),
    }
}

/// Central-difference Jacobian of one function block with respect to one
/// variable block, increment `eps * (1 + |x_j|)`.
fn block_jacobian(
    p: &PartitionedDae,
    f: Func,
    v: Var,
    t: f64,
    x: &DaeState,
    eps: f64,
) -> Result<DMatrix<f64>> {
    let rows = func_dim(p, f);
    let mut work = x.clone();
    let cols = var_mut(&mut work, v).len();
    let mut jac = DMatrix::zeros(rows, cols);
    let (mut up, mut down) = (vec![0.0; rows], vec![0.0; rows]);
    for j in 0..cols {
        let base = var_mut(&mut work, v)[j];
        let d = eps * (1.0 + base.abs());
        var_mut(&mut work, v)[j] = base + d;
        let hi = var_mut(&mut work, v)[j];
        call(p, f, t, work.as_ref(), &mut up);
        var_mut(&mut work, v)[j] = base - d;
        let lo = var_mut(&mut work, v)[j];
        call(p, f, t, work.as_ref(), &mut down);
        var_mut(&mut work, v)[j] = base;
        for i in 0..rows {
            jac[(i, j)] = (up[i] - down[i]) / (hi - lo);
        }
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Jacobian estimate at t = {t}")));
    }
    Ok(jac)
}

/// Default increment for the central differences.
pub fn default_fd_eps() -> f64 {
    f64::EPSILON.cbrt()
}

/// Estimates all sixteen Lipschitz constants as maxima over `samples`.
pub fn estimate_lipschitz(
    p: &PartitionedDae,
    samples: &[Sample],
    fd_eps: Option<f64>,
) -> Result<LipschitzEstimates> {
    if samples.is_empty() {
        return Err(Error::InvalidProblem(
            "Lipschitz estimation needs at least one sample".into(),
        ));
    }
    let eps = fd_eps.unwrap_or_else(default_fd_eps);
    let mut est = LipschitzEstimates {
        samples: samples.len(),
        ..Default::default()
    };
    let funcs = [(Func::FSlow, Func::GSlow), (Func::FFast, Func::GFast)];
    let ys = [Var::YSlow, Var::YFast];
    let zs = [Var::ZSlow, Var::ZFast];
    for (t, x) in samples {
        for (lam, (f, g)) in funcs.iter().enumerate() {
            for rho in 0..2 {
                let bump = |slot: &mut f64, m: DMatrix<f64>| *slot = slot.max(inf_norm(&m));
                bump(
                    &mut est.mf[lam][rho],
                    block_jacobian(p, *f, ys[rho], *t, x, eps)?,
                );
                bump(
                    &mut est.lf[lam][rho],
                    block_jacobian(p, *f, zs[rho], *t, x, eps)?,
                );
                bump(
                    &mut est.mg[lam][rho],
                    block_jacobian(p, *g, ys[rho], *t, x, eps)?,
                );
                bump(
                    &mut est.lg[lam][rho],
                    block_jacobian(p, *g, zs[rho], *t, x, eps)?,
                );
            }
        }
    }
    Ok(est)
}

/// Normalized contraction ratios `(α_S, α_F)`: maxima over the samples of
/// `‖(∂g_S/∂z_S)^{-1} ∂g_S/∂z_F‖∞` and `‖(∂g_F/∂z_F)^{-1} ∂g_F/∂z_S‖∞`.
/// A side without algebraic unknowns, or without the partner's, has ratio 0.
pub fn contraction_ratios(
    p: &PartitionedDae,
    samples: &[Sample],
    fd_eps: Option<f64>,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidProblem(
            "contraction ratios need at least one sample".into(),
        ));
    }
    let eps = fd_eps.unwrap_or_else(default_fd_eps);
    let (mut alpha_s, mut alpha_f) = (0.0_f64, 0.0_f64);
    for (t, x) in samples {
        for (g, own, other, slot, name) in [
            (
                Func::GSlow,
                Var::ZSlow,
                Var::ZFast,
                &mut alpha_s,
                "∂g_S/∂z_S",
            ),
            (
                Func::GFast,
                Var::ZFast,
                Var::ZSlow,
                &mut alpha_f,
                "∂g_F/∂z_F",
            ),
        ] {
            let self_block = block_jacobian(p, g, own, *t, x, eps)?;
            let cross = block_jacobian(p, g, other, *t, x, eps)?;
            if self_block.nrows() == 0 || cross.ncols() == 0 {
                continue;
            }
            let product = lu_solve_matrix(self_block, &cross)
                .ok_or_else(|| Error::IndexOne(format!("{name} is singular at t = {t}")))?;
            *slot = slot.max(inf_norm(&product));
        }
    }
    Ok((alpha_s, alpha_f))
}

/// The plain Lipschitz-ratio form `(L^{g_S}_F / L^{g_S}_S, L^{g_F}_S / L^{g_F}_F)`.
pub fn ratio_form(est: &LipschitzEstimates) -> (f64, f64) {
    let ratio = |num: f64, den: f64| {
        if num == 0.0 {
            0.0
        } else if den == 0.0 {
            f64::INFINITY
        } else {
            num / den
        }
    };
    (
        ratio(est.lg[S][F], est.lg[S][S]),
        ratio(est.lg[F][S], est.lg[F][F]),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub strategy: Strategy,
    pub pass: bool,
    /// The violated inequalities, empty on pass.
    pub failed: Vec<String>,
}

/// Sufficient stability conditions, strict inequalities:
///
/// * fully-decoupled: `α_S < 1/L_Φ` and `α_F < 1/L_Φ`;
/// * slowest-first: `α_S < 1/L_Φ` and `α_F < 1`;
/// * fastest-first: `α_F < 1/L_Φ` and `α_S < 1`.
pub fn stability_verdicts(alpha_s: f64, alpha_f: f64, lphi: f64) -> [Verdict; 3] {
    let inv = 1.0 / lphi;
    let check = |strategy: Strategy, conds: [(&str, f64, f64, &str); 2]| {
        let failed: Vec<String> = conds
            .iter()
            .filter(|(_, a, bound, _)| !(a < bound))
            .map(|(name, _, _, bound_name)| format!("{name} >= {bound_name}"))
            .collect();
        Verdict {
            strategy,
            pass: failed.is_empty(),
            failed,
        }
    };
    [
        check(
            Strategy::FullyDecoupled,
            [
                ("alpha_S", alpha_s, inv, "1/lphi"),
                ("alpha_F", alpha_f, inv, "1/lphi"),
            ],
        ),
        check(
            Strategy::SlowestFirst,
            [
                ("alpha_S", alpha_s, inv, "1/lphi"),
                ("alpha_F", alpha_f, 1.0, "1"),
            ],
        ),
        check(
            Strategy::FastestFirst,
            [
                ("alpha_F", alpha_f, inv, "1/lphi"),
                ("alpha_S", alpha_s, 1.0, "1"),
            ],
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationCheck {
    pub pass: bool,
    /// `L_Φ α^k`.
    pub value: f64,
    /// Smallest `k ≥ 1` with `L_Φ α^k < 1`, `None` when no `k` works.
    pub smallest_k: Option<usize>,
}

/// Window-to-window error propagation condition `L_Φ α^k < 1`.
pub fn window_error_propagation_check(alpha: f64, lphi: f64, k: usize) -> PropagationCheck {
    let value = if alpha == 0.0 {
        0.0
    } else {
        lphi * alpha.powi(k as i32)
    };
    let smallest_k = if alpha == 0.0 || lphi * alpha < 1.0 {
        Some(1)
    } else if alpha >= 1.0 {
        None
    } else {
        // The product decreases geometrically; start just below the
        // logarithmic estimate and step up.
        let guess = ((1.0 / lphi).ln() / alpha.ln()).floor().max(1.0) as usize;
        (guess.saturating_sub(2).max(1)..).find(|&j| lphi * alpha.powi(j as i32) < 1.0)
    };
    PropagationCheck {
        pass: value < 1.0,
        value,
        smallest_k,
    }
}

/// Sufficient step bounds for the DAE-ODE case; `None` means unconstrained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBounds {
    /// `H < 1 / (M^{f_S}_S + L^{f_S}_S M^{g_S}_S)`.
    pub macro_step: Option<f64>,
    /// `h < 1 / (M^{f_F}_S + L^{f_F}_S M^{g_S}_F)`.
    pub micro_step: Option<f64>,
}

pub const STEP_BOUND_NOTE: &str = "sufficient bounds, typically pessimistic for stiff problems";

pub fn suggest_step_bounds(est: &LipschitzEstimates) -> StepBounds {
    let bound = |den: f64| (den > 0.0).then(|| 1.0 / den);
    StepBounds {
        macro_step: bound(est.mf[S][S] + est.lf[S][S] * est.mg[S][S]),
        micro_step: bound(est.mf[F][S] + est.lf[F][S] * est.mg[S][F]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub problem: String,
    pub alpha_s: f64,
    pub alpha_f: f64,
    pub ratio_alpha_s: f64,
    pub ratio_alpha_f: f64,
    pub lphi: f64,
    pub extrap_order: usize,
    pub sweeps: usize,
    pub estimates: LipschitzEstimates,
    pub verdicts: Vec<Verdict>,
    /// Propagation check for `α = max(α_S, α_F)` and `sweeps`.
    pub propagation: PropagationCheck,
    pub bounds: StepBounds,
}

impl ContractionReport {
    /// Verdict of `strategy`.
    pub fn verdict(&self, strategy: Strategy) -> Verdict {
        self.verdicts
            .iter()
            .find(|v| v.strategy == strategy)
            .cloned()
            .unwrap_or_else(|| {
                stability_verdicts(self.alpha_s, self.alpha_f, self.lphi)[strategy_index(strategy)]
                    .clone()
            })
    }
}

fn strategy_index(s: Strategy) -> usize {
    Strategy::ALL.iter().position(|x| *x == s).unwrap_or(0)
}

/// Full analysis of `p` over `samples`.
pub fn analyze(
    label: &str,
    p: &PartitionedDae,
    samples: &[Sample],
    lphi: f64,
    extrap_order: usize,
    sweeps: usize,
) -> Result<ContractionReport> {
    let estimates = estimate_lipschitz(p, samples, None)?;
    let (alpha_s, alpha_f) = contraction_ratios(p, samples, None)?;
    let (ratio_alpha_s, ratio_alpha_f) = ratio_form(&estimates);
    Ok(ContractionReport {
        problem: label.to_string(),
        alpha_s,
        alpha_f,
        ratio_alpha_s,
        ratio_alpha_f,
        lphi,
        extrap_order,
        sweeps,
        estimates,
        verdicts: stability_verdicts(alpha_s, alpha_f, lphi).to_vec(),
        propagation: window_error_propagation_check(alpha_s.max(alpha_f), lphi, sweeps.max(1)),
        bounds: suggest_step_bounds(&estimates),
    })
}

/// Sample points from a coarse single-rate implicit Euler trajectory. With
/// a seed, each node also contributes two randomly perturbed differential
/// states (relative size 0.1) with re-solved algebraic components.
pub fn default_samples(
    p: &PartitionedDae,
    cfg: &NewtonConfig,
    seed: Option<u64>,
) -> Result<Vec<Sample>> {
    let traj = integrate_single_rate_dae(p, DEFAULT_SAMPLE_STEPS, cfg)?;
    let mut samples: Vec<Sample> = (0..traj.macro_times.len())
        .map(|i| {
            (
                traj.macro_times[i],
                DaeState {
                    y_slow: traj.slow_states[i].clone(),
                    y_fast: traj.fast_states[i].clone(),
                    z_slow: traj.z_slow_states[i].clone(),
                    z_fast: traj.z_fast_states[i].clone(),
                },
            )
        })
        .collect();
    if let Some(seed) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = samples.clone();
        for (t, x) in &base {
            for _ in 0..2 {
                let mut perturb = |v: &[f64]| -> Vec<f64> {
                    v.iter()
                        .map(|a| a + 0.1 * (1.0 + a.abs()) * rng.random_range(-1.0..1.0))
                        .collect()
                };
                let ys = perturb(&x.y_slow);
                let yf = perturb(&x.y_fast);
                let state = consistent_initialize(p, *t, &ys, &yf, (&x.z_slow, &x.z_fast), cfg)?;
                samples.push((*t, state));
            }
        }
    }
    Ok(samples)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "unconstrained".to_string(), fmt_f64)
}

const TABLE_NAMES: [(&str, usize, usize); 4] =
    [("SS", S, S), ("SF", S, F), ("FS", F, S), ("FF", F, F)];

/// Serializes the report: `key = value` lines for machines, `#` lines with
/// a table for people.
pub fn report_to_text(r: &ContractionReport) -> String {
    let mut s = String::from("# contraction report\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("problem", r.problem.clone());
    kv("samples", r.estimates.samples.to_string());
    kv("alpha_S", fmt_f64(r.alpha_s));
    kv("alpha_F", fmt_f64(r.alpha_f));
    kv("ratio_alpha_S", fmt_f64(r.ratio_alpha_s));
    kv("ratio_alpha_F", fmt_f64(r.ratio_alpha_f));
    kv("lphi", fmt_f64(r.lphi));
    kv("extrap_order", r.extrap_order.to_string());
    kv("k", r.sweeps.to_string());
    for (prefix, table) in [
        ("Lg", &r.estimates.lg),
        ("Mf", &r.estimates.mf),
        ("Lf", &r.estimates.lf),
        ("Mg", &r.estimates.mg),
    ] {
        for (suffix, i, j) in TABLE_NAMES {
            kv(&format!("{prefix}_{suffix}"), fmt_f64(table[i][j]));
        }
    }
    for v in &r.verdicts {
        let value = if v.pass {
            "pass".to_string()
        } else {
            format!("fail: {}", v.failed.join("; "))
        };
        kv(&format!("verdict.{}", v.strategy), value);
    }
    kv("propagation.value", fmt_f64(r.propagation.value));
    kv("propagation.pass", r.propagation.pass.to_string());
    kv(
        "propagation.smallest_k",
        r.propagation
            .smallest_k
            .map_or_else(|| "none".to_string(), |k| k.to_string()),
    );
    kv("suggested_H", fmt_opt(r.bounds.macro_step));
    kv("suggested_h", fmt_opt(r.bounds.micro_step));
    let _ = writeln!(s, "#");
    let _ = writeln!(
        s,
        "# alpha_S = {:.6}  alpha_F = {:.6}  lphi = {:.6}",
        r.alpha_s, r.alpha_f, r.lphi
    );
    let _ = writeln!(s, "# {:<16} {:<8} failed", "strategy", "verdict");
    for v in &r.verdicts {
        let _ = writeln!(
            s,
            "# {:<16} {:<8} {}",
            v.strategy.as_str(),
            if v.pass { "pass" } else { "fail" },
            v.failed.join("; ")
        );
    }
    let _ = writeln!(s, "# step bounds are {STEP_BOUND_NOTE}");
    let _ = writeln!(
        s,
        "# estimates are sampled maxima, hence lower bounds of the true suprema"
    );
    s
}

/// Parses the output of [`report_to_text`].
pub fn parse_report(text: &str) -> Result<ContractionReport> {
    const CTX: &str = "contraction report";
    let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            context: CTX,
            line: i + 1,
            message: "expected `key = value`".into(),
        })?;
        let key = k.trim().to_string();
        if map
            .insert(key.clone(), (i + 1, v.trim().to_string()))
            .is_some()
        {
            return Err(Error::Parse {
                context: CTX,
                line: i + 1,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    let last_line = text.lines().count();
    let mut take = |key: &str| -> Result<(usize, String)> {
        map.remove(key).ok_or_else(|| Error::Parse {
            context: CTX,
            line: last_line,
            message: format!("missing key `{key}`"),
        })
    };
    fn num<T: std::str::FromStr>((line, v): (usize, String), key: &str) -> Result<T> {
        v.parse().map_err(|_| Error::Parse {
            context: CTX,
            line,
            message: format!("`{key}` has invalid value `{v}`"),
        })
    }
    let mut estimates = LipschitzEstimates {
        samples: num(take("samples")?, "samples")?,
        ..Default::default()
    };
    let problem = take("problem")?.1;
    let alpha_s = num(take("alpha_S")?, "alpha_S")?;
    let alpha_f = num(take("alpha_F")?, "alpha_F")?;
    let ratio_alpha_s = num(take("ratio_alpha_S")?, "ratio_alpha_S")?;
    let ratio_alpha_f = num(take("ratio_alpha_F")?, "ratio_alpha_F")?;
    let lphi = num(take("lphi")?, "lphi")?;
    let extrap_order = num(take("extrap_order")?, "extrap_order")?;
    let sweeps = num(take("k")?, "k")?;
    for (prefix, table) in [
        ("Lg", &mut estimates.lg),
        ("Mf", &mut estimates.mf),
        ("Lf", &mut estimates.lf),
        ("Mg", &mut estimates.mg),
    ] {
        for (suffix, i, j) in TABLE_NAMES {
            let key = format!("{prefix}_{suffix}");
            table[i][j] = num(take(&key)?, &key)?;
        }
    }
    let mut verdicts = Vec::new();
    for strategy in Strategy::ALL {
        let key = format!("verdict.{strategy}");
        let (line, v) = take(&key)?;
        let verdict = if v == "pass" {
            Verdict {
                strategy,
                pass: true,
                failed: Vec::new(),
            }
        } else if let Some(rest) = v.strip_prefix("fail:") {
            Verdict {
                strategy,
                pass: false,
                failed: rest
                    .split(';')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
            }
        } else {
            return Err(Error::Parse {
                context: CTX,
                line,
                message: format!("`{key}` must be `pass` or `fail: ...`"),
            });
        };
        verdicts.push(verdict);
    }
    let value = num(take("propagation.value")?, "propagation.value")?;
    let pass = num(take("propagation.pass")?, "propagation.pass")?;
    let (line, k) = take("propagation.smallest_k")?;
    let smallest_k = if k == "none" {
        None
    } else {
        Some(num((line, k), "propagation.smallest_k")?)
    };
    let bound = |(line, v): (usize, String), key: &str| -> Result<Option<f64>> {
        if v == "unconstrained" {
            Ok(None)
        } else {
            num((line, v), key).map(Some)
        }
    };
    let bounds = StepBounds {
        macro_step: bound(take("suggested_H")?, "suggested_H")?,
        micro_step: bound(take("suggested_h")?, "suggested_h")?,
    };
    if let Some((key, (line, _))) = map.into_iter().next() {
        return Err(Error::Parse {
            context: CTX,
            line,
            message: format!("unknown key `{key}`"),
        });
    }
    Ok(ContractionReport {
        problem,
        alpha_s,
        alpha_f,
        ratio_alpha_s,
        ratio_alpha_f,
        lphi,
        extrap_order,
        sweeps,
        estimates,
        verdicts,
        propagation: PropagationCheck {
            pass,
            value,
            smallest_k,
        },
        bounds,
    })
}
