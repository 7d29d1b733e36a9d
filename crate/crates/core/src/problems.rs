//! Benchmark problems with reference solutions.
//!
//! Linear problems carry an exact reference through the matrix exponential
//! of the reduced system `ẏ = (A - B D⁻¹ C) y`, `z = -D⁻¹ C y`. The
//! nonlinear oscillator uses fine-step RK4. Every reference checks itself
//! against a second resolution (two half steps of the exponential, or half
//! the RK4 step) and must agree to 1e-10 at the requested time.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{expm_apply, expm_apply_halved, lu_solve_matrix, max_abs, mul_add};
use crate::problem::{DaeFn, DaeState, OdeFn, PartitionedDae, PartitionedOde};
use crate::steppers::{step_free, NewtonConfig, Scheme};

/// Agreement required between the two resolutions of a reference.
pub const REFERENCE_SELF_CHECK: f64 = 1e-10;

/// Step of the fine RK4 reference.
pub const FINE_RK4_STEP: f64 = 1e-4;

/// Slow/fast block quadruple `[SS, SF, FS, FF]` of a coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub ss: DMatrix<f64>,
    pub sf: DMatrix<f64>,
    pub fs: DMatrix<f64>,
    pub ff: DMatrix<f64>,
}

impl Blocks {
    /// All-zero blocks for row dimensions `(rs, rf)` and column dimensions `(cs, cf)`.
    pub fn zeros((rs, rf): (usize, usize), (cs, cf): (usize, usize)) -> Self {
        Self {
            ss: DMatrix::zeros(rs, cs),
            sf: DMatrix::zeros(rs, cf),
            fs: DMatrix::zeros(rf, cs),
            ff: DMatrix::zeros(rf, cf),
        }
    }

    fn assemble(&self) -> DMatrix<f64> {
        let (rs, rf) = (self.ss.nrows(), self.fs.nrows());
        let (cs, cf) = (self.ss.ncols(), self.sf.ncols());
        let mut m = DMatrix::zeros(rs + rf, cs + cf);
        m.view_mut((0, 0), (rs, cs)).copy_from(&self.ss);
        m.view_mut((0, cs), (rs, cf)).copy_from(&self.sf);
        m.view_mut((rs, 0), (rf, cs)).copy_from(&self.fs);
        m.view_mut((rs, cs), (rf, cf)).copy_from(&self.ff);
        m
    }
}

/// Linear partitioned DAE (an ODE when both algebraic dimensions are 0):
///
/// ```text
/// y_S' = A_SS y_S + A_SF y_F + B_SS z_S + B_SF z_F
/// y_F' = A_FS y_S + A_FF y_F + B_FS z_S + B_FF z_F
///    0 = C_SS y_S + C_SF y_F + D_SS z_S + D_SF z_F
///    0 = C_FS y_S + C_FF y_F + D_FS z_S + D_FF z_F
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Blocks,
    pub b: Blocks,
    pub c: Blocks,
    pub d: Blocks,
    pub initial: DaeState,
    pub t0: f64,
    pub t_end: f64,
}

impl LinearModel {
    /// Model with the given dimensions, zero coefficients and zero initial data.
    pub fn zeros(ns: usize, nf: usize, nzs: usize, nzf: usize, t0: f64, t_end: f64) -> Self {
        Self {
            a: Blocks::zeros((ns, nf), (ns, nf)),
            b: Blocks::zeros((ns, nf), (nzs, nzf)),
            c: Blocks::zeros((nzs, nzf), (ns, nf)),
            d: Blocks::zeros((nzs, nzf), (nzs, nzf)),
            initial: DaeState {
                y_slow: vec![0.0; ns],
                y_fast: vec![0.0; nf],
                z_slow: vec![0.0; nzs],
                z_fast: vec![0.0; nzf],
            },
            t0,
            t_end,
        }
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.initial.y_slow.len(),
            self.initial.y_fast.len(),
            self.initial.z_slow.len(),
            self.initial.z_fast.len(),
        )
    }

    pub fn is_ode(&self) -> bool {
        let (_, _, nzs, nzf) = self.dims();
        nzs == 0 && nzf == 0
    }

    /// Checks that every block has the shape implied by the initial data.
    pub fn check(&self) -> Result<()> {
        let (ns, nf, nzs, nzf) = self.dims();
        let expect = [
            ("A", &self.a, (ns, nf), (ns, nf)),
            ("B", &self.b, (ns, nf), (nzs, nzf)),
            ("C", &self.c, (nzs, nzf), (ns, nf)),
            ("D", &self.d, (nzs, nzf), (nzs, nzf)),
        ];
        for (name, blocks, (rs, rf), (cs, cf)) in expect {
            for (suffix, m, r, c) in [
                ("SS", &blocks.ss, rs, cs),
                ("SF", &blocks.sf, rs, cf),
                ("FS", &blocks.fs, rf, cs),
                ("FF", &blocks.ff, rf, cf),
            ] {
                if m.nrows() != r || m.ncols() != c {
                    return Err(Error::field(
                        format!("{name}_{suffix}"),
                        format!("expected a {r}x{c} matrix, got {}x{}", m.nrows(), m.ncols()),
                    ));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::field(
                        format!("{name}_{suffix}"),
                        "entries must be finite",
                    ));
                }
            }
        }
        Ok(())
    }

    /// `K = -D⁻¹ C`, the algebraic unknowns as a function of `y`.
    pub fn algebraic_map(&self) -> Result<DMatrix<f64>> {
        let (ns, nf, _, _) = self.dims();
        if self.is_ode() {
            return Ok(DMatrix::zeros(0, ns + nf));
        }
        let d = self.d.assemble();
        let c = self.c.assemble();
        lu_solve_matrix(d, &c)
            .map(|x| -x)
            .ok_or_else(|| Error::IndexOne("the algebraic coefficient matrix D is singular".into()))
    }

    /// `A + B K`, the reduced system matrix.
    pub fn reduced_matrix(&self) -> Result<DMatrix<f64>> {
        let a = self.a.assemble();
        if self.is_ode() {
            return Ok(a);
        }
        Ok(a + self.b.assemble() * self.algebraic_map()?)
    }

    fn rhs_and_constraints(&self) -> (DaeFn, DaeFn, DaeFn, DaeFn) {
        let row = |x: &Blocks, y: &Blocks, slow: bool| -> DaeFn {
            let (m1, m2, m3, m4) = if slow {
                (x.ss.clone(), x.sf.clone(), y.ss.clone(), y.sf.clone())
            } else {
                (x.fs.clone(), x.ff.clone(), y.fs.clone(), y.ff.clone())
            };
            Arc::new(move |_, s, out: &mut [f64]| {
                out.fill(0.0);
                mul_add(&m1, s.y_slow, out);
                mul_add(&m2, s.y_fast, out);
                mul_add(&m3, s.z_slow, out);
                mul_add(&m4, s.z_fast, out);
            })
        };
        (
            row(&self.a, &self.b, true),
            row(&self.a, &self.b, false),
            row(&self.c, &self.d, true),
            row(&self.c, &self.d, false),
        )
    }

    pub fn to_dae(&self) -> Result<PartitionedDae> {
        self.check()?;
        let (fs, ff, gs, gf) = self.rhs_and_constraints();
        PartitionedDae::new(fs, ff, gs, gf, self.initial.clone(), self.t0, self.t_end)
    }

    /// The ODE view; fails when the model has algebraic unknowns.
    pub fn to_ode(&self) -> Result<PartitionedOde> {
        self.check()?;
        if !self.is_ode() {
            return Err(Error::InvalidProblem("model has algebraic unknowns".into()));
        }
        let row = |m1: DMatrix<f64>, m2: DMatrix<f64>| -> OdeFn {
            Arc::new(move |_, ys, yf, out: &mut [f64]| {
                out.fill(0.0);
                mul_add(&m1, ys, out);
                mul_add(&m2, yf, out);
            })
        };
        PartitionedOde::new(
            row(self.a.ss.clone(), self.a.sf.clone()),
            row(self.a.fs.clone(), self.a.ff.clone()),
            self.initial.y_slow.clone(),
            self.initial.y_fast.clone(),
            self.t0,
            self.t_end,
        )
    }
}

/// Problem in either form.
#[derive(Debug, Clone)]
pub enum Model {
    Ode(PartitionedOde),
    Dae(PartitionedDae),
}

impl Model {
    pub fn t0(&self) -> f64 {
        match self {
            Model::Ode(p) => p.t0,
            Model::Dae(p) => p.t0,
        }
    }

    pub fn t_end(&self) -> f64 {
        match self {
            Model::Ode(p) => p.t_end,
            Model::Dae(p) => p.t_end,
        }
    }

    /// DAE view (an ODE becomes a DAE without algebraic unknowns).
    pub fn as_dae(&self) -> PartitionedDae {
        match self {
            Model::Ode(p) => PartitionedDae::from_ode(p),
            Model::Dae(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone)]
enum Reference {
    /// `y(t) = exp(M (t - t0)) y0`, `z = K y`.
    Exponential {
        matrix: DMatrix<f64>,
        algebraic: DMatrix<f64>,
        y0: Vec<f64>,
        t0: f64,
        dim_slow: usize,
        dim_zslow: usize,
    },
    /// Monolithic RK4 with a fixed fine step.
    FineRk4 { step: f64 },
}

/// A problem together with its reference solution.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub id: String,
    pub description: String,
    pub model: Model,
    pub stiffness: String,
    pub coupling: String,
    reference: Reference,
    cache: Arc<Mutex<HashMap<u64, DaeState>>>,
}

impl Benchmark {
    /// Benchmark for a linear model with a matrix-exponential reference.
    pub fn linear(id: &str, description: &str, model: &LinearModel) -> Result<Self> {
        let matrix = model.reduced_matrix()?;
        let algebraic = model.algebraic_map()?;
        let problem = if model.is_ode() {
            Model::Ode(model.to_ode()?)
        } else {
            Model::Dae(model.to_dae()?)
        };
        let y0 = [model.initial.y_slow.clone(), model.initial.y_fast.clone()].concat();
        let eig = matrix.clone().complex_eigenvalues();
        let rates: Vec<f64> = eig.iter().map(|c| c.norm()).collect();
        let (lo, hi) = rates.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &r| {
            (lo.min(r), hi.max(r))
        });
        let stiffness = if lo > 0.0 {
            format!("rate ratio {:.3e}", hi / lo)
        } else {
            format!("largest rate {hi:.3e}")
        };
        let coupling = coupling_strength(model);
        Ok(Self {
            id: id.to_string(),
            description: description.to_string(),
            model: problem,
            stiffness,
            coupling,
            reference: Reference::Exponential {
                matrix,
                algebraic,
                y0,
                t0: model.t0,
                dim_slow: model.initial.y_slow.len(),
                dim_zslow: model.initial.z_slow.len(),
            },
            cache: Arc::default(),
        })
    }

    fn fine_rk4(
        id: &str,
        description: &str,
        ode: PartitionedOde,
        stiffness: &str,
        coupling: &str,
    ) -> Self {
        Self {
            id: id.to_string(),
            description: description.to_string(),
            model: Model::Ode(ode),
            stiffness: stiffness.to_string(),
            coupling: coupling.to_string(),
            reference: Reference::FineRk4 {
                step: FINE_RK4_STEP,
            },
            cache: Arc::default(),
        }
    }

    pub fn is_dae(&self) -> bool {
        matches!(self.model, Model::Dae(_))
    }

    /// The same benchmark on `[t0, t_end]`.
    pub fn with_t_end(&self, t_end: f64) -> Result<Self> {
        let model = match &self.model {
            Model::Ode(p) => Model::Ode(p.with_horizon(p.t0, t_end)?),
            Model::Dae(p) => Model::Dae(p.with_horizon(p.t0, t_end)?),
        };
        Ok(Self {
            model,
            ..self.clone()
        })
    }

    fn evaluate(&self, t: f64, halved: bool) -> Result<DaeState> {
        match &self.reference {
            Reference::Exponential {
                matrix,
                algebraic,
                y0,
                t0,
                dim_slow,
                dim_zslow,
            } => {
                let y = if halved {
                    expm_apply_halved(matrix, t - t0, y0)
                } else {
                    expm_apply(matrix, t - t0, y0)
                };
                let mut z = vec![0.0; algebraic.nrows()];
                mul_add(algebraic, &y, &mut z);
                Ok(DaeState {
                    y_slow: y[..*dim_slow].to_vec(),
                    y_fast: y[*dim_slow..].to_vec(),
                    z_slow: z[..*dim_zslow].to_vec(),
                    z_fast: z[*dim_zslow..].to_vec(),
                })
            }
            Reference::FineRk4 { step } => {
                let Model::Ode(p) = &self.model else {
                    return Err(Error::InvalidProblem(
                        "fine RK4 reference needs an ODE".into(),
                    ));
                };
                fine_rk4_solution(p, t, if halved { 0.5 * step } else { *step })
            }
        }
    }

    /// Reference state at `t`, cached per time. Each new time is
    /// evaluated at two resolutions that must agree to [`REFERENCE_SELF_CHECK`].
    pub fn reference_at(&self, t: f64) -> Result<DaeState> {
        if let Some(hit) = self
            .cache
            .lock()
            .expect("reference cache poisoned")
            .get(&t.to_bits())
        {
            return Ok(hit.clone());
        }
        let disagreement = self.self_check(t)?;
        if !(disagreement <= REFERENCE_SELF_CHECK) {
            return Err(Error::NonFinite(format!(
                "reference of {} at t = {t} fails its self-check: the two resolutions differ by {disagreement:e}",
                self.id
            )));
        }
        let value = self.evaluate(t, false)?;
        self.cache
            .lock()
            .expect("reference cache poisoned")
            .insert(t.to_bits(), value.clone());
        Ok(value)
    }

    /// Max-norm difference between the two reference resolutions at `t`.
    pub fn self_check(&self, t: f64) -> Result<f64> {
        let a = self.evaluate(t, false)?;
        let b = self.evaluate(t, true)?;
        Ok(state_distance(&a, &b))
    }
}

/// Max-norm distance between two full states.
pub fn state_distance(a: &DaeState, b: &DaeState) -> f64 {
    let d = |x: &[f64], y: &[f64]| -> f64 {
        let diff: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
        max_abs(&diff)
    };
    d(&a.y_slow, &b.y_slow)
        .max(d(&a.y_fast, &b.y_fast))
        .max(d(&a.z_slow, &b.z_slow))
        .max(d(&a.z_fast, &b.z_fast))
}

fn coupling_strength(model: &LinearModel) -> String {
    let norm = |m: &DMatrix<f64>| m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cross = norm(&model.a.sf).max(norm(&model.a.fs));
    let alg = norm(&model.d.sf).max(norm(&model.d.fs));
    format!("max cross coefficient {cross}, max algebraic cross coefficient {alg}")
}

/// Monolithic RK4 from `t0` to `t` with the largest equal step not above `step`.
pub fn fine_rk4_solution(p: &PartitionedOde, t: f64, step: f64) -> Result<DaeState> {
    let ns = p.dim_slow;
    let (fs, ff) = (Arc::clone(&p.f_slow), Arc::clone(&p.f_fast));
    let rhs = move |t: f64, y: &[f64], out: &mut [f64]| {
        let (ys, yf) = y.split_at(ns);
        let (os, of) = out.split_at_mut(ns);
        fs(t, ys, yf, os);
        ff(t, ys, yf, of);
    };
    let span = t - p.t0;
    let mut y = [p.y_slow0.clone(), p.y_fast0.clone()].concat();
    if span > 0.0 {
        let n = (span / step).ceil().max(1.0) as usize;
        let h = span / n as f64;
        let cfg = NewtonConfig::default();
        for i in 0..n {
            y = step_free(Scheme::Rk4, &rhs, p.t0 + i as f64 * h, &y, h, &cfg)?;
        }
    }
    Ok(DaeState {
        y_slow: y[..ns].to_vec(),
        y_fast: y[ns..].to_vec(),
        ..Default::default()
    })
}

/// Catalog listing entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogInfo {
    pub id: &'static str,
    pub description: &'static str,
    pub params: &'static [(&'static str, f64)],
}

const LIN2_PARAMS: &[(&str, f64)] = &[("slow", -1.0), ("sf", 0.1), ("fs", 0.2), ("fast", -10.0)];
const LIN2_STIFF_PARAMS: &[(&str, f64)] =
    &[("slow", -1.0), ("sf", 0.1), ("fs", 0.2), ("fast", -200.0)];
const LIN2_DECOUPLED_PARAMS: &[(&str, f64)] = &[("slow", -1.0), ("fast", -10.0)];
const DECAY_PARAMS: &[(&str, f64)] = &[("rate", -1.0)];
const NONLIN_PARAMS: &[(&str, f64)] = &[("sf", 0.1), ("fs", 0.2), ("fast", -8.0)];
const DAE_LIN_PARAMS: &[(&str, f64)] = &[("a", 1.0), ("b", 0.3), ("c", 1.0), ("d", 0.3)];
const DAE_ODE_PARAMS: &[(&str, f64)] = &[("a", 1.0), ("b", 0.3)];

/// Every built-in problem with its tunable parameters and defaults.
pub fn catalog() -> Vec<CatalogInfo> {
    vec![
        CatalogInfo {
            id: "lin2",
            description: "y_S' = slow*y_S + sf*y_F, y_F' = fs*y_S + fast*y_F, y(0) = (1, 1), t in [0, 1]",
            params: LIN2_PARAMS,
        },
        CatalogInfo {
            id: "lin2-stiff",
            description: "lin2 with fast rate -200",
            params: LIN2_STIFF_PARAMS,
        },
        CatalogInfo {
            id: "lin2-decoupled",
            description: "lin2 without cross coupling",
            params: LIN2_DECOUPLED_PARAMS,
        },
        CatalogInfo {
            id: "decay",
            description: "y_S' = rate*y_S, y_F' = rate*y_F, uncoupled, y(0) = (1, 1), t in [0, 1]",
            params: DECAY_PARAMS,
        },
        CatalogInfo {
            id: "nonlin-osc",
            description: "y_S' = -y_S + sf*sin(y_F), y_F' = fast*y_F + fs*y_S^2, y(0) = (1, 1), t in [0, 1]",
            params: NONLIN_PARAMS,
        },
        CatalogInfo {
            id: "dae-lin",
            description: "y_S' = -y_S + z_F, 0 = z_S - a*y_S - b*z_F, y_F' = -10*y_F + z_S, 0 = z_F - c*y_F - d*z_S, y(0) = (1, 1), t in [0, 1]",
            params: DAE_LIN_PARAMS,
        },
        CatalogInfo {
            id: "dae-ode",
            description: "y_S' = -y_S + y_F, 0 = z_S - a*y_S - b*y_F, y_F' = -10*y_F + z_S (fast side is an ODE), y(0) = (1, 1), t in [0, 1]",
            params: DAE_ODE_PARAMS,
        },
    ]
}

fn resolve_params(
    info: &CatalogInfo,
    given: &BTreeMap<String, f64>,
) -> Result<BTreeMap<&'static str, f64>> {
    let mut out: BTreeMap<&'static str, f64> = info.params.iter().copied().collect();
    for (k, v) in given {
        let Some((name, _)) = info.params.iter().find(|(n, _)| n == k) else {
            let known: Vec<&str> = info.params.iter().map(|p| p.0).collect();
            return Err(Error::field(
                k.clone(),
                format!(
                    "unknown parameter for {} (known: {})",
                    info.id,
                    known.join(", ")
                ),
            ));
        };
        if !v.is_finite() {
            return Err(Error::field(k.clone(), "value must be finite"));
        }
        out.insert(name, *v);
    }
    Ok(out)
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn two_by_two(slow: f64, sf: f64, fs: f64, fast: f64) -> LinearModel {
    let mut m = LinearModel::zeros(1, 1, 0, 0, 0.0, 1.0);
    m.a = Blocks {
        ss: scalar(slow),
        sf: scalar(sf),
        fs: scalar(fs),
        ff: scalar(fast),
    };
    m.initial.y_slow = vec![1.0];
    m.initial.y_fast = vec![1.0];
    m
}

/// `dae-lin` as a linear model.
pub fn dae_lin_model(a: f64, b: f64, c: f64, d: f64) -> Result<LinearModel> {
    if (1.0 - b * d).abs() < 1e-12 {
        return Err(Error::IndexOne(format!(
            "dae-lin with b*d = 1 (b = {b}, d = {d}) has a singular algebraic Jacobian"
        )));
    }
    let mut m = LinearModel::zeros(1, 1, 1, 1, 0.0, 1.0);
    m.a.ss = scalar(-1.0);
    m.a.ff = scalar(-10.0);
    m.b.sf = scalar(1.0);
    m.b.fs = scalar(1.0);
    m.c.ss = scalar(-a);
    m.c.ff = scalar(-c);
    m.d = Blocks {
        ss: scalar(1.0),
        sf: scalar(-b),
        fs: scalar(-d),
        ff: scalar(1.0),
    };
    m.initial.y_slow = vec![1.0];
    m.initial.y_fast = vec![1.0];
    Ok(m)
}

/// `dae-ode` as a linear model: `dae-lin` with the fast constraint removed.
pub fn dae_ode_model(a: f64, b: f64) -> LinearModel {
    let mut m = LinearModel::zeros(1, 1, 1, 0, 0.0, 1.0);
    m.a.ss = scalar(-1.0);
    m.a.sf = scalar(1.0);
    m.a.ff = scalar(-10.0);
    m.b.fs = scalar(1.0);
    m.c.ss = scalar(-a);
    m.c.sf = scalar(-b);
    m.d.ss = scalar(1.0);
    m.initial.y_slow = vec![1.0];
    m.initial.y_fast = vec![1.0];
    m
}

/// Builds catalog entry `id` with `params` overriding its defaults.
pub fn build(id: &str, params: &BTreeMap<String, f64>) -> Result<Benchmark> {
    let id = id.trim().to_ascii_lowercase();
    let info = catalog().into_iter().find(|c| c.id == id).ok_or_else(|| {
        let ids: Vec<&str> = catalog().iter().map(|c| c.id).collect();
        Error::InvalidProblem(format!(
            "unknown problem `{id}` (known: {})",
            ids.join(", ")
        ))
    })?;
    let p = resolve_params(&info, params)?;
    match info.id {
        "lin2" | "lin2-stiff" => Benchmark::linear(
            info.id,
            info.description,
            &two_by_two(p["slow"], p["sf"], p["fs"], p["fast"]),
        ),
        "lin2-decoupled" => Benchmark::linear(
            info.id,
            info.description,
            &two_by_two(p["slow"], 0.0, 0.0, p["fast"]),
        ),
        "decay" => Benchmark::linear(
            info.id,
            info.description,
            &two_by_two(p["rate"], 0.0, 0.0, p["rate"]),
        ),
        "nonlin-osc" => {
            let (sf, fs, fast) = (p["sf"], p["fs"], p["fast"]);
            let ode = PartitionedOde::new(
                Arc::new(move |_, ys, yf, out| out[0] = -ys[0] + sf * yf[0].sin()),
                Arc::new(move |_, ys, yf, out| out[0] = fast * yf[0] + fs * ys[0] * ys[0]),
                vec![1.0],
                vec![1.0],
                0.0,
                1.0,
            )?;
            let coupling = format!("cross coefficients {sf}, {fs}");
            Ok(Benchmark::fine_rk4(
                info.id,
                info.description,
                ode,
                "moderate",
                &coupling,
            ))
        }
        "dae-lin" => Benchmark::linear(
            info.id,
            info.description,
            &dae_lin_model(p["a"], p["b"], p["c"], p["d"])?,
        ),
        "dae-ode" => Benchmark::linear(info.id, info.description, &dae_ode_model(p["a"], p["b"])),
        other => Err(Error::InvalidProblem(format!("unknown problem `{other}`"))),
    }
}

/// Catalog entry with default parameters.
pub fn build_default(id: &str) -> Result<Benchmark> {
    build(id, &BTreeMap::new())
}
