//! Problem configuration files and inline parameter lists.
//!
//! A configuration file is TOML describing a linear problem (see
//! [`LinearModel`] for the equations):
//!
//! ```toml
//! name = "my-problem"        # optional
//! kind = "dae"               # optional: "ode" or "dae", inferred otherwise
//! t0 = 0.0                   # optional, default 0
//! t_end = 1.0
//! y_slow0 = [1.0]
//! y_fast0 = [1.0]
//! z_slow0 = [0.0]            # algebraic guesses, omit for ODEs
//! z_fast0 = [0.0]
//! A_SS = [[-1.0]]            # matrices as arrays of rows; omitted blocks are zero
//! A_SF = [[0.1]]
//! A_FS = [[0.2]]
//! A_FF = [[-10.0]]
//! B_SF = [[1.0]]             # B_**: z in f, C_**: y in g, D_**: z in g
//! D_SS = [[1.0]]
//! D_FF = [[1.0]]
//! ```
//!
//! Errors name the offending field and its line.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Deserialize;
use toml::Spanned;

use crate::error::{Error, Result};
use crate::problems::{Benchmark, LinearModel};

type Matrix = Option<Spanned<Vec<Vec<f64>>>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    kind: Option<Spanned<String>>,
    t0: Option<f64>,
    t_end: Spanned<f64>,
    y_slow0: Spanned<Vec<f64>>,
    y_fast0: Spanned<Vec<f64>>,
    z_slow0: Option<Spanned<Vec<f64>>>,
    z_fast0: Option<Spanned<Vec<f64>>>,
    #[serde(rename = "A_SS")]
    a_ss: Matrix,
    #[serde(rename = "A_SF")]
    a_sf: Matrix,
    #[serde(rename = "A_FS")]
    a_fs: Matrix,
    #[serde(rename = "A_FF")]
    a_ff: Matrix,
    #[serde(rename = "B_SS")]
    b_ss: Matrix,
    #[serde(rename = "B_SF")]
    b_sf: Matrix,
    #[serde(rename = "B_FS")]
    b_fs: Matrix,
    #[serde(rename = "B_FF")]
    b_ff: Matrix,
    #[serde(rename = "C_SS")]
    c_ss: Matrix,
    #[serde(rename = "C_SF")]
    c_sf: Matrix,
    #[serde(rename = "C_FS")]
    c_fs: Matrix,
    #[serde(rename = "C_FF")]
    c_ff: Matrix,
    #[serde(rename = "D_SS")]
    d_ss: Matrix,
    #[serde(rename = "D_SF")]
    d_sf: Matrix,
    #[serde(rename = "D_FS")]
    d_fs: Matrix,
    #[serde(rename = "D_FF")]
    d_ff: Matrix,
}

/// A parsed configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub name: String,
    pub model: LinearModel,
}

impl ProblemConfig {
    pub fn to_benchmark(&self) -> Result<Benchmark> {
        Benchmark::linear(
            &self.name,
            "linear problem from a configuration file",
            &self.model,
        )
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())]
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
        + 1
}

fn field_err(
    text: &str,
    field: &str,
    span: std::ops::Range<usize>,
    message: impl std::fmt::Display,
) -> Error {
    Error::field(
        field,
        format!("line {}: {message}", line_of(text, span.start)),
    )
}

fn matrix(
    text: &str,
    field: &str,
    value: &Matrix,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    let Some(spanned) = value else {
        return Ok(DMatrix::zeros(rows, cols));
    };
    let data = spanned.get_ref();
    let span = spanned.span();
    if data.is_empty() || data.iter().all(Vec::is_empty) {
        if rows * cols == 0 {
            return Ok(DMatrix::zeros(rows, cols));
        }
        return Err(field_err(
            text,
            field,
            span,
            format!("expected a {rows}x{cols} matrix, got an empty one"),
        ));
    }
    let width = data[0].len();
    if data.iter().any(|r| r.len() != width) {
        return Err(field_err(text, field, span, "rows have different lengths"));
    }
    if data.len() != rows || width != cols {
        return Err(field_err(
            text,
            field,
            span,
            format!(
                "expected a {rows}x{cols} matrix, got {}x{width}",
                data.len()
            ),
        ));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(field_err(text, field, span, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| data[i][j]))
}

fn vector(text: &str, field: &str, value: &Spanned<Vec<f64>>) -> Result<Vec<f64>> {
    if value.get_ref().iter().any(|v| !v.is_finite()) {
        return Err(field_err(
            text,
            field,
            value.span(),
            "entries must be finite",
        ));
    }
    Ok(value.get_ref().clone())
}

/// Parses a configuration file.
pub fn parse_config(text: &str) -> Result<ProblemConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
        context: "config",
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let y_slow = vector(text, "y_slow0", &raw.y_slow0)?;
    let y_fast = vector(text, "y_fast0", &raw.y_fast0)?;
    if y_slow.is_empty() {
        return Err(field_err(
            text,
            "y_slow0",
            raw.y_slow0.span(),
            "must have at least one entry",
        ));
    }
    if y_fast.is_empty() {
        return Err(field_err(
            text,
            "y_fast0",
            raw.y_fast0.span(),
            "must have at least one entry",
        ));
    }
    let z_slow = match &raw.z_slow0 {
        Some(v) => vector(text, "z_slow0", v)?,
        None => Vec::new(),
    };
    let z_fast = match &raw.z_fast0 {
        Some(v) => vector(text, "z_fast0", v)?,
        None => Vec::new(),
    };
    if let Some(kind) = &raw.kind {
        let has_z = !(z_slow.is_empty() && z_fast.is_empty());
        match kind.get_ref().as_str() {
            "ode" if has_z => {
                return Err(field_err(
                    text,
                    "kind",
                    kind.span(),
                    "an ode must not define z_slow0 or z_fast0",
                ));
            }
            "dae" if !has_z => {
                return Err(field_err(
                    text,
                    "kind",
                    kind.span(),
                    "a dae needs z_slow0 or z_fast0",
                ));
            }
            "ode" | "dae" => {}
            other => {
                return Err(field_err(
                    text,
                    "kind",
                    kind.span(),
                    format!("expected \"ode\" or \"dae\", got \"{other}\""),
                ));
            }
        }
    }
    let t0 = raw.t0.unwrap_or(0.0);
    let t_end = *raw.t_end.get_ref();
    if !(t0.is_finite() && t_end.is_finite() && t0 < t_end) {
        return Err(field_err(
            text,
            "t_end",
            raw.t_end.span(),
            format!("horizon requires t0 < t_end, got [{t0}, {t_end}]"),
        ));
    }
    let (ns, nf, nzs, nzf) = (y_slow.len(), y_fast.len(), z_slow.len(), z_fast.len());
    let mut model = LinearModel::zeros(ns, nf, nzs, nzf, t0, t_end);
    model.initial.y_slow = y_slow;
    model.initial.y_fast = y_fast;
    model.initial.z_slow = z_slow;
    model.initial.z_fast = z_fast;
    let m = |field: &str, v: &Matrix, r: usize, c: usize| matrix(text, field, v, r, c);
    model.a.ss = m("A_SS", &raw.a_ss, ns, ns)?;
    model.a.sf = m("A_SF", &raw.a_sf, ns, nf)?;
    model.a.fs = m("A_FS", &raw.a_fs, nf, ns)?;
    model.a.ff = m("A_FF", &raw.a_ff, nf, nf)?;
    model.b.ss = m("B_SS", &raw.b_ss, ns, nzs)?;
    model.b.sf = m("B_SF", &raw.b_sf, ns, nzf)?;
    model.b.fs = m("B_FS", &raw.b_fs, nf, nzs)?;
    model.b.ff = m("B_FF", &raw.b_ff, nf, nzf)?;
    model.c.ss = m("C_SS", &raw.c_ss, nzs, ns)?;
    model.c.sf = m("C_SF", &raw.c_sf, nzs, nf)?;
    model.c.fs = m("C_FS", &raw.c_fs, nzf, ns)?;
    model.c.ff = m("C_FF", &raw.c_ff, nzf, nf)?;
    model.d.ss = m("D_SS", &raw.d_ss, nzs, nzs)?;
    model.d.sf = m("D_SF", &raw.d_sf, nzs, nzf)?;
    model.d.fs = m("D_FS", &raw.d_fs, nzf, nzs)?;
    model.d.ff = m("D_FF", &raw.d_ff, nzf, nzf)?;
    Ok(ProblemConfig {
        name: raw.name.unwrap_or_else(|| "config".to_string()),
        model,
    })
}

/// Parses an inline parameter list `name=value,name=value`.
pub fn parse_params(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::field(item, "expected `name=value`"))?;
        let key = k.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::field(
                key,
                "parameter names use letters, digits and `_`",
            ));
        }
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::field(key, format!("`{}` is not a number", v.trim())))?;
        if !value.is_finite() {
            return Err(Error::field(key, "value must be finite"));
        }
        if out.insert(key.to_string(), value).is_some() {
            return Err(Error::field(key, "given more than once"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DAE: &str = r#"
name = "two-by-two"
t_end = 2.0
y_slow0 = [1.0]
y_fast0 = [1.0]
z_slow0 = [0.0]
z_fast0 = [0.0]
A_SS = [[-1.0]]
A_FF = [[-10.0]]
B_SF = [[1.0]]
B_FS = [[1.0]]
C_SS = [[-1.0]]
C_FF = [[-1.0]]
D_SS = [[1.0]]
D_SF = [[-0.5]]
D_FS = [[-0.5]]
D_FF = [[1.0]]
"#;

    #[test]
    fn parses_dae_config() {
        let cfg = parse_config(DAE).unwrap();
        assert_eq!(cfg.name, "two-by-two");
        assert_eq!(cfg.model.t_end, 2.0);
        assert_eq!(cfg.model.d.sf[(0, 0)], -0.5);
        assert_eq!(cfg.model.a.sf.shape(), (1, 1));
        assert_eq!(cfg.model.a.sf[(0, 0)], 0.0);
        // z = -D^{-1} C y with y = (1, 1): z_S = z_F = 1.5 / 0.75 = 2.
        let k = cfg.model.algebraic_map().unwrap();
        assert!((k[(0, 0)] + k[(0, 1)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn shape_error_names_field_and_line() {
        let text = DAE.replace("A_FF = [[-10.0]]", "A_FF = [[-10.0, 1.0]]");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("A_FF"), "{err}");
        assert!(err.contains("line 9"), "{err}");
    }

    #[test]
    fn unknown_field_reports_line() {
        let text = format!("{DAE}bogus = 1\n");
        match parse_config(&text).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 18);
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_field_and_kind_checks() {
        assert!(parse_config("t_end = 1.0\ny_slow0 = [1.0]\n").is_err());
        let ode_with_z =
            "kind = \"ode\"\nt_end = 1.0\ny_slow0 = [1.0]\ny_fast0 = [1.0]\nz_slow0 = [0.0]\n";
        let err = parse_config(ode_with_z).unwrap_err().to_string();
        assert!(err.contains("kind") && err.contains("line 1"), "{err}");
        let bad_horizon = "t0 = 1.0\nt_end = 1.0\ny_slow0 = [1.0]\ny_fast0 = [1.0]\n";
        assert!(parse_config(bad_horizon)
            .unwrap_err()
            .to_string()
            .contains("t_end"));
    }

    #[test]
    fn params() {
        let p = parse_params("b=0.5, d=0.25").unwrap();
        assert_eq!(p["b"], 0.5);
        assert_eq!(p["d"], 0.25);
        assert!(parse_params("b").is_err());
        assert!(parse_params("b=x").is_err());
        assert!(parse_params("b=1,b=2").is_err());
        assert!(parse_params("b=inf").is_err());
        assert!(parse_params("").unwrap().is_empty());
    }
}
