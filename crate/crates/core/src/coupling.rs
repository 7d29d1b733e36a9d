//! Coupling waveforms: time-continuous stand-ins for the partner
//! subsystem's variables over one macro window.
//!
//! Every waveform is linear in its node data and carries two numbers besides
//! the data itself: the approximation `order` it is declared to have (an
//! order-`q` operator reproduces polynomials of degree `q` and has window
//! error `O(H^(q+1))`), and `lphi`, the sup-norm bound of the operator as a
//! map from node values to waveform values on the window. For polynomial
//! kinds `lphi` is the maximum over the window of the summed absolute
//! Lagrange basis values.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Samples used by the coarse scan of [`lebesgue_sup`].
const LPHI_SCAN_POINTS: usize = 501;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveformKind {
    ConstantExtrap,
    LinearExtrap,
    HistoryPolyExtrap(usize),
    NodeInterp(usize),
    DenseOutput(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    start: f64,
    end: f64,
    kind: WaveformKind,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    /// Slopes for linear extrapolation (one) and Hermite dense output (two).
    slopes: Vec<Vec<f64>>,
    order: usize,
    lphi: f64,
}

/// Order-0 extrapolation: `v` held constant on `[t_bar, t_bar + window_len]`.
pub fn extrapolate_constant(t_bar: f64, v: &[f64], window_len: f64) -> Result<Waveform> {
    check_len(window_len)?;
    Ok(Waveform {
        start: t_bar,
        end: t_bar + window_len,
        kind: WaveformKind::ConstantExtrap,
        times: vec![t_bar],
        values: vec![v.to_vec()],
        slopes: Vec::new(),
        order: 0,
        lphi: 1.0,
    })
}

/// Order-1 extrapolation `v + (t - t_bar) * slope`, with the slope supplied
/// by the caller (typically the right-hand side at `t_bar`).
///
/// `lphi` is the bound with respect to the node value `v` (1); the slope's
/// contribution is `O(H)` and belongs to the right-hand side's Lipschitz constant.
pub fn extrapolate_linear(
    t_bar: f64,
    v: &[f64],
    slope: &[f64],
    window_len: f64,
) -> Result<Waveform> {
    check_len(window_len)?;
    if v.len() != slope.len() {
        return Err(Error::Waveform("value and slope dimensions differ".into()));
    }
    Ok(Waveform {
        start: t_bar,
        end: t_bar + window_len,
        kind: WaveformKind::LinearExtrap,
        times: vec![t_bar],
        values: vec![v.to_vec()],
        slopes: vec![slope.to_vec()],
        order: 1,
        lphi: 1.0,
    })
}

/// Degree-`q` polynomial through history nodes at or before the window
/// start, evaluated forward on `window`. When more than `q + 1` nodes are
/// supplied an evenly spread subset including the newest node is used.
pub fn extrapolate_history(
    nodes: &[(f64, Vec<f64>)],
    q: usize,
    window: (f64, f64),
) -> Result<Waveform> {
    check_len(window.1 - window.0)?;
    let (times, values) = select_nodes(nodes, q)?;
    let tol = tolerance(window);
    if times.iter().any(|&t| t > window.0 + tol) {
        return Err(Error::Waveform(
            "history nodes must not lie after the window start".into(),
        ));
    }
    let lphi = lebesgue_sup(&times, window.0, window.1);
    Ok(Waveform {
        start: window.0,
        end: window.1,
        kind: WaveformKind::HistoryPolyExtrap(q),
        times,
        values,
        slopes: Vec::new(),
        order: q,
        lphi,
    })
}

/// Degree-`q` interpolating polynomial through nodes inside `window`. With
/// more than `q + 1` nodes an evenly spread subset including both ends is
/// used; `q = 0` holds the newest node.
pub fn interpolate_nodes(
    nodes: &[(f64, Vec<f64>)],
    q: usize,
    window: (f64, f64),
) -> Result<Waveform> {
    check_len(window.1 - window.0)?;
    let (times, values) = select_nodes(nodes, q)?;
    let tol = tolerance(window);
    if times
        .iter()
        .any(|&t| t < window.0 - tol || t > window.1 + tol)
    {
        return Err(Error::Waveform(
            "interpolation nodes must lie inside the window".into(),
        ));
    }
    let lphi = lebesgue_sup(&times, window.0, window.1);
    Ok(Waveform {
        start: window.0,
        end: window.1,
        kind: WaveformKind::NodeInterp(q),
        times,
        values,
        slopes: Vec::new(),
        order: q,
        lphi,
    })
}

/// Continuous extension of one step: the linear segment between the
/// endpoint values.
pub fn dense_linear(t0: f64, t1: f64, y0: &[f64], y1: &[f64], order: usize) -> Result<Waveform> {
    check_len(t1 - t0)?;
    Ok(Waveform {
        start: t0,
        end: t1,
        kind: WaveformKind::DenseOutput(order),
        times: vec![t0, t1],
        values: vec![y0.to_vec(), y1.to_vec()],
        slopes: Vec::new(),
        order,
        lphi: 1.0,
    })
}

/// Continuous extension of one step: the cubic Hermite interpolant of
/// endpoint values and slopes. Its value basis is nonnegative and sums to
/// one, so `lphi = 1`.
pub fn dense_hermite(
    t0: f64,
    t1: f64,
    (y0, f0): (&[f64], &[f64]),
    (y1, f1): (&[f64], &[f64]),
    order: usize,
) -> Result<Waveform> {
    check_len(t1 - t0)?;
    Ok(Waveform {
        start: t0,
        end: t1,
        kind: WaveformKind::DenseOutput(order),
        times: vec![t0, t1],
        values: vec![y0.to_vec(), y1.to_vec()],
        slopes: vec![f0.to_vec(), f1.to_vec()],
        order,
        lphi: 1.0,
    })
}

/// The `lphi` bound of a waveform.
pub fn operator_lphi(w: &Waveform) -> f64 {
    w.lphi
}

/// `lphi` of the extrapolation operator a plan of the given order uses:
/// orders 0 and 1 come from window-start data (bound 1), higher orders from
/// `q + 1` equispaced nodes over the preceding window.
pub fn extrapolation_lphi(order: usize) -> f64 {
    if order <= 1 {
        return 1.0;
    }
    let nodes: Vec<f64> = (0..=order)
        .map(|i| -1.0 + i as f64 / order as f64)
        .collect();
    lebesgue_sup(&nodes, 0.0, 1.0)
}

/// `max_{t in [a, b]} sum_i |l_i(t)|` for the Lagrange basis on `nodes`: a
/// 501-point scan followed by golden-section refinement around the best sample.
pub fn lebesgue_sup(nodes: &[f64], a: f64, b: f64) -> f64 {
    if nodes.len() <= 1 {
        return 1.0;
    }
    let f = |t: f64| basis_abs_sum(nodes, t);
    let step = (b - a) / (LPHI_SCAN_POINTS - 1) as f64;
    let (mut best_i, mut best) = (0, f(a));
    for i in 1..LPHI_SCAN_POINTS {
        let v = f(a + i as f64 * step);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut lo = a + best_i.saturating_sub(1) as f64 * step;
    let mut hi = (a + (best_i + 1) as f64 * step).min(b);
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let x1 = hi - golden * (hi - lo);
        let x2 = lo + golden * (hi - lo);
        if f(x1) >= f(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    best.max(f(0.5 * (lo + hi)))
}

fn basis_abs_sum(nodes: &[f64], t: f64) -> f64 {
    lagrange_weights(nodes, t).iter().map(|w| w.abs()).sum()
}

fn lagrange_weights(nodes: &[f64], t: f64) -> Vec<f64> {
    nodes
        .iter()
        .enumerate()
        .map(|(i, &ti)| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(1.0, |acc, (_, &tj)| acc * (t - tj) / (ti - tj))
        })
        .collect()
}

fn check_len(len: f64) -> Result<()> {
    if len.is_finite() && len > 0.0 {
        Ok(())
    } else {
        Err(Error::Waveform(format!(
            "window length must be > 0, got {len}"
        )))
    }
}

fn tolerance((a, b): (f64, f64)) -> f64 {
    1e-9 * (b - a) + 4.0 * f64::EPSILON * a.abs().max(b.abs())
}

/// Indices of `q + 1` evenly spread nodes out of `n`, always including the
/// newest; `q = 0` picks the newest alone.
pub(crate) fn spread_indices(n: usize, q: usize) -> Vec<usize> {
    if q == 0 {
        return vec![n - 1];
    }
    (0..=q)
        .map(|j| ((j * (n - 1)) as f64 / q as f64).round() as usize)
        .collect()
}

type NodeData = (Vec<f64>, Vec<Vec<f64>>);

fn select_nodes(nodes: &[(f64, Vec<f64>)], q: usize) -> Result<NodeData> {
    if nodes.len() < q + 1 {
        return Err(Error::Waveform(format!(
            "order {q} needs {} nodes, got {}",
            q + 1,
            nodes.len()
        )));
    }
    let mut sorted: Vec<&(f64, Vec<f64>)> = nodes.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let span = sorted.last().unwrap().0 - sorted[0].0;
    let scale = span.abs().max(sorted[0].0.abs()).max(1e-300);
    if sorted
        .windows(2)
        .any(|w| (w[1].0 - w[0].0).abs() <= 1e-14 * scale)
    {
        return Err(Error::Waveform("duplicate node times".into()));
    }
    let dim = sorted[0].1.len();
    if sorted.iter().any(|n| n.1.len() != dim || !n.0.is_finite()) {
        return Err(Error::Waveform(
            "node values have inconsistent dimensions".into(),
        ));
    }
    let picked = spread_indices(sorted.len(), q);
    Ok(picked
        .into_iter()
        .map(|i| (sorted[i].0, sorted[i].1.clone()))
        .unzip())
}

impl Waveform {
    pub fn window(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    pub fn kind(&self) -> WaveformKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lphi(&self) -> f64 {
        self.lphi
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Node times and values the waveform was built from.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.times
            .iter()
            .copied()
            .zip(self.values.iter().map(Vec::as_slice))
    }

    /// Whether `[a, b]` lies inside the evaluation window (up to round-off).
    pub fn covers(&self, a: f64, b: f64) -> bool {
        let tol = tolerance((self.start, self.end));
        a >= self.start - tol && b <= self.end + tol
    }

    pub fn check_covers(&self, a: f64, b: f64) -> Result<()> {
        if self.covers(a, b) {
            Ok(())
        } else {
            let t = if a < self.start { a } else { b };
            Err(Error::OutsideWindow {
                t,
                start: self.start,
                end: self.end,
            })
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    /// Evaluates the waveform at `t`. Callers are expected to stay inside
    /// the window (see [`Waveform::covers`]); outside it the underlying
    /// polynomial is continued.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self.kind {
            WaveformKind::ConstantExtrap => out.copy_from_slice(&self.values[0]),
            WaveformKind::LinearExtrap => {
                let dt = t - self.times[0];
                for ((o, v), s) in out.iter_mut().zip(&self.values[0]).zip(&self.slopes[0]) {
                    *o = v + dt * s;
                }
            }
            WaveformKind::HistoryPolyExtrap(_) | WaveformKind::NodeInterp(_) => {
                if self.times.len() == 1 {
                    out.copy_from_slice(&self.values[0]);
                    return;
                }
                out.fill(0.0);
                for (w, v) in lagrange_weights(&self.times, t).iter().zip(&self.values) {
                    for (o, vi) in out.iter_mut().zip(v) {
                        *o += w * vi;
                    }
                }
            }
            WaveformKind::DenseOutput(_) => {
                let (t0, t1) = (self.times[0], self.times[1]);
                let h = t1 - t0;
                let s = (t - t0) / h;
                let (y0, y1) = (&self.values[0], &self.values[1]);
                if self.slopes.is_empty() {
                    for ((o, a), b) in out.iter_mut().zip(y0).zip(y1) {
                        *o = a + s * (b - a);
                    }
                } else {
                    let s2 = s * s;
                    let s3 = s2 * s;
                    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                    let h10 = s3 - 2.0 * s2 + s;
                    let h01 = -2.0 * s3 + 3.0 * s2;
                    let h11 = s3 - s2;
                    let (f0, f1) = (&self.slopes[0], &self.slopes[1]);
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = h00 * y0[i] + h * h10 * f0[i] + h01 * y1[i] + h * h11 * f1[i];
                    }
                }
            }
        }
    }

    /// CSV dump `t,v0,v1,...` with `samples + 1` equispaced rows.
    pub fn to_csv(&self, samples: usize) -> String {
        let samples = samples.max(1);
        let mut s = String::from("t");
        for i in 0..self.dim() {
            let _ = write!(s, ",v{i}");
        }
        s.push('\n');
        for k in 0..=samples {
            let t = if k == samples {
                self.end
            } else {
                self.start + (self.end - self.start) * k as f64 / samples as f64
            };
            let _ = write!(s, "{t:.16e}");
            for v in self.eval(t) {
                let _ = write!(s, ",{v:.16e}");
            }
            s.push('\n');
        }
        s
    }
}
