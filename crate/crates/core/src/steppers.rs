//! One-step base schemes for a single subsystem and the Newton machinery
//! used by implicit steps and algebraic constraints.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::coupling::{dense_hermite, dense_linear, Waveform};
use crate::error::{Error, Result};
use crate::linalg::{lu_solve, max_abs};

/// Halvings tried by the damped Newton update before the step is taken anyway.
const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    ExplicitEuler,
    Heun,
    Rk4,
    ImplicitEuler,
}

impl Scheme {
    pub fn order(self) -> usize {
        match self {
            Scheme::ExplicitEuler | Scheme::ImplicitEuler => 1,
            Scheme::Heun => 2,
            Scheme::Rk4 => 4,
        }
    }

    /// Order of the continuous extension: linear for the Euler methods,
    /// cubic Hermite otherwise (order 2 for Heun, 3 for RK4).
    pub fn dense_output_order(self) -> Option<usize> {
        Some(match self {
            Scheme::ExplicitEuler | Scheme::ImplicitEuler => 1,
            Scheme::Heun => 2,
            Scheme::Rk4 => 3,
        })
    }

    pub fn is_implicit(self) -> bool {
        matches!(self, Scheme::ImplicitEuler)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::ExplicitEuler => "explicit-euler",
            Scheme::Heun => "heun",
            Scheme::Rk4 => "rk4",
            Scheme::ImplicitEuler => "implicit-euler",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "explicit-euler" | "euler" => Ok(Scheme::ExplicitEuler),
            "heun" => Ok(Scheme::Heun),
            "rk4" => Ok(Scheme::Rk4),
            "implicit-euler" => Ok(Scheme::ImplicitEuler),
            other => Err(Error::InvalidPlan(vec![format!(
                "unknown scheme `{other}` (expected explicit-euler, heun, rk4 or implicit-euler)"
            )])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Convergence threshold on the residual max-norm.
    pub abs_tol: f64,
    pub max_iters: usize,
    /// Relative finite-difference increment: `fd_eps * (1 + |x_j|)`.
    pub fd_eps: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            max_iters: 25,
            fd_eps: f64::EPSILON.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Forward-difference Jacobian of `residual` at `x`, given `r = residual(x)`.
pub fn fd_jacobian(
    residual: &mut dyn FnMut(&[f64], &mut [f64]),
    x: &[f64],
    r: &[f64],
    fd_eps: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(r.len(), n);
    let mut xp = x.to_vec();
    let mut rp = vec![0.0; r.len()];
    for j in 0..n {
        let step = fd_eps * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        let dx = xp[j] - x[j];
        residual(&xp, &mut rp);
        for i in 0..r.len() {
            jac[(i, j)] = (rp[i] - r[i]) / dx;
        }
        xp[j] = x[j];
    }
    jac
}

/// Damped Newton iteration for `residual(x) = 0` with a finite-difference
/// Jacobian. `t` only labels errors.
pub fn newton_solve(
    residual: &mut dyn FnMut(&[f64], &mut [f64]),
    x0: &[f64],
    cfg: &NewtonConfig,
    t: f64,
) -> Result<NewtonOutcome> {
    let mut x = x0.to_vec();
    let mut r = vec![0.0; x.len()];
    residual(&x, &mut r);
    let mut norm = max_abs(&r);
    let mut trial = vec![0.0; x.len()];
    let mut r_trial = vec![0.0; x.len()];
    for iteration in 0..=cfg.max_iters {
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("Newton residual at t = {t}")));
        }
        if norm <= cfg.abs_tol {
            return Ok(NewtonOutcome {
                x,
                iterations: iteration,
                residual: norm,
            });
        }
        if iteration == cfg.max_iters {
            break;
        }
        let jac = fd_jacobian(residual, &x, &r, cfg.fd_eps);
        let dx = lu_solve(jac, &r).ok_or(Error::SingularJacobian { t })?;
        let mut lambda = 1.0;
        for halving in 0..=MAX_HALVINGS {
            for ((xt, xi), di) in trial.iter_mut().zip(&x).zip(&dx) {
                *xt = xi - lambda * di;
            }
            residual(&trial, &mut r_trial);
            let trial_norm = max_abs(&r_trial);
            if trial_norm <= norm || halving == MAX_HALVINGS {
                break;
            }
            lambda *= 0.5;
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut r, &mut r_trial);
        norm = max_abs(&r);
    }
    Err(Error::NewtonFailed {
        t,
        iterations: cfg.max_iters,
        residual: norm,
    })
}

/// Solves `g(z) = 0` for the algebraic unknowns with the remaining
/// arguments already bound into `g`.
pub fn solve_algebraic(
    g: &dyn Fn(&[f64], &mut [f64]),
    z_guess: &[f64],
    cfg: &NewtonConfig,
    t: f64,
) -> Result<NewtonOutcome> {
    newton_solve(&mut |z, out| g(z, out), z_guess, cfg, t)
}

/// One implicit Euler step on the stacked unknown `(y_next, z_next)`:
/// `y_next = y + h f(t+h, y_next, z_next)`, `0 = g(t+h, y_next, z_next)`.
/// Partner channels are expected to be bound into `f` and `g`.
#[allow(clippy::too_many_arguments)]
pub fn implicit_euler_dae_step(
    f: &dyn Fn(f64, &[f64], &[f64], &mut [f64]),
    g: &dyn Fn(f64, &[f64], &[f64], &mut [f64]),
    t: f64,
    y: &[f64],
    z: &[f64],
    h: f64,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, Vec<f64>, NewtonOutcome)> {
    let n = y.len();
    let t1 = t + h;
    let mut guess = y.to_vec();
    guess.extend_from_slice(z);
    let mut residual = |u: &[f64], out: &mut [f64]| {
        let (yn, zn) = u.split_at(n);
        let (ry, rz) = out.split_at_mut(n);
        f(t1, yn, zn, ry);
        for ((r, yi), y0) in ry.iter_mut().zip(yn).zip(y) {
            *r = yi - y0 - h * *r;
        }
        g(t1, yn, zn, rz);
    };
    let outcome = newton_solve(&mut residual, &guess, cfg, t1)?;
    let (yn, zn) = outcome.x.split_at(n);
    Ok((yn.to_vec(), zn.to_vec(), outcome))
}

/// One step of `scheme` on the self-contained system `y' = rhs(t, y)`.
pub fn step_free(
    scheme: Scheme,
    rhs: &dyn Fn(f64, &[f64], &mut [f64]),
    t: f64,
    y: &[f64],
    h: f64,
    cfg: &NewtonConfig,
) -> Result<Vec<f64>> {
    let n = y.len();
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, d)| x + s * d).collect()
    };
    let eval = |t: f64, y: &[f64]| {
        let mut k = vec![0.0; n];
        rhs(t, y, &mut k);
        k
    };
    let next = match scheme {
        Scheme::ExplicitEuler => axpy(y, h, &eval(t, y)),
        Scheme::Heun => {
            let k1 = eval(t, y);
            let k2 = eval(t + h, &axpy(y, h, &k1));
            y.iter()
                .zip(k1.iter().zip(&k2))
                .map(|(yi, (a, b))| yi + 0.5 * h * (a + b))
                .collect()
        }
        Scheme::Rk4 => {
            let k1 = eval(t, y);
            let k2 = eval(t + 0.5 * h, &axpy(y, 0.5 * h, &k1));
            let k3 = eval(t + 0.5 * h, &axpy(y, 0.5 * h, &k2));
            let k4 = eval(t + h, &axpy(y, h, &k3));
            (0..n)
                .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect()
        }
        Scheme::ImplicitEuler => {
            let f = |t: f64, y: &[f64], _z: &[f64], out: &mut [f64]| rhs(t, y, out);
            let g = |_: f64, _: &[f64], _: &[f64], _: &mut [f64]| {};
            implicit_euler_dae_step(&f, &g, t, y, &[], h, cfg)?.0
        }
    };
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{scheme} step from t = {t}")));
    }
    Ok(next)
}

/// One step of `scheme` on the decoupled subsystem `y' = rhs(t, y, w(t))`
/// whose partner `w` is the frozen waveform `partner`.
pub fn ode_step(
    scheme: Scheme,
    rhs: &dyn Fn(f64, &[f64], &[f64], &mut [f64]),
    t: f64,
    y: &[f64],
    h: f64,
    partner: &Waveform,
    cfg: &NewtonConfig,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidPlan(vec![format!(
            "step size must be > 0, got {h}"
        )]));
    }
    partner.check_covers(t, t + h)?;
    let bound = bind_partner(rhs, partner);
    step_free(scheme, &bound, t, y, h, cfg)
}

/// `rhs(t, y, partner(t))` as a self-contained right-hand side.
pub fn bind_partner<'a>(
    rhs: &'a dyn Fn(f64, &[f64], &[f64], &mut [f64]),
    partner: &'a Waveform,
) -> impl Fn(f64, &[f64], &mut [f64]) + 'a {
    move |t, y, out| {
        let w = partner.eval(t);
        rhs(t, y, &w, out)
    }
}

/// Endpoint data of one completed step.
#[derive(Debug, Clone)]
pub struct StepData<'a> {
    pub t: f64,
    pub h: f64,
    pub y0: &'a [f64],
    pub y1: &'a [f64],
    pub f0: &'a [f64],
    pub f1: &'a [f64],
}

/// Continuous extension of a completed step, of the scheme's dense order.
pub fn dense_output(scheme: Scheme, step: &StepData<'_>) -> Result<Waveform> {
    let (t0, t1) = (step.t, step.t + step.h);
    match scheme {
        Scheme::ExplicitEuler | Scheme::ImplicitEuler => dense_linear(t0, t1, step.y0, step.y1, 1),
        Scheme::Heun | Scheme::Rk4 => {
            let order = scheme.dense_output_order().unwrap_or(1);
            dense_hermite(t0, t1, (step.y0, step.f0), (step.y1, step.f1), order)
        }
    }
}

/// One step plus its continuous extension.
pub fn step_with_dense(
    scheme: Scheme,
    rhs: &dyn Fn(f64, &[f64], &mut [f64]),
    t: f64,
    y: &[f64],
    h: f64,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, Waveform)> {
    let y1 = step_free(scheme, rhs, t, y, h, cfg)?;
    let mut f0 = vec![0.0; y.len()];
    let mut f1 = vec![0.0; y.len()];
    if matches!(scheme, Scheme::Heun | Scheme::Rk4) {
        rhs(t, y, &mut f0);
        rhs(t + h, &y1, &mut f1);
    }
    let w = dense_output(
        scheme,
        &StepData {
            t,
            h,
            y0: y,
            y1: &y1,
            f0: &f0,
            f1: &f1,
        },
    )?;
    Ok((y1, w))
}
