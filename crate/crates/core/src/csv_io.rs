//! Trajectory CSV.
//!
//! Columns are `t, y_S0.., y_F0.., z_S0.., z_F0..` with a mandatory header.
//! Every time of the union of the macro and micro grids gets one row; cells
//! of a grid the time does not belong to are left empty (slow cells on
//! micro-only rows). Values are written with 17 significant digits, so
//! parsing an emitted file restores the trajectory exactly. Trajectory
//! warnings are kept as leading `# warning: ` lines.

use crate::error::{Error, Result};
use crate::problem::Trajectory;

const CTX: &str = "trajectory csv";
const WARNING_PREFIX: &str = "# warning: ";

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        context: CTX,
        line,
        message: message.into(),
    }
}

fn dim_of(states: &[Vec<f64>]) -> usize {
    states.first().map_or(0, Vec::len)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `traj` as CSV.
pub fn emit_trajectory(traj: &Trajectory) -> String {
    let (ns, nf) = (dim_of(&traj.slow_states), dim_of(&traj.fast_states));
    let (nzs, nzf) = (dim_of(&traj.z_slow_states), dim_of(&traj.z_fast_states));
    let mut out = String::new();
    for w in &traj.warnings {
        out.push_str(WARNING_PREFIX);
        out.push_str(&w.replace(['\n', '\r'], " "));
        out.push('\n');
    }
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    for (prefix, n) in [("y_S", ns), ("y_F", nf), ("z_S", nzs), ("z_F", nzf)] {
        header.extend((0..n).map(|i| format!("{prefix}{i}")));
    }
    writer.write_record(&header).expect("writing to memory");
    let (mut i, mut j) = (0, 0);
    while i < traj.macro_times.len() || j < traj.fast_times.len() {
        let tm = traj.macro_times.get(i).copied().unwrap_or(f64::INFINITY);
        let tf = traj.fast_times.get(j).copied().unwrap_or(f64::INFINITY);
        let t = tm.min(tf);
        let slow = (tm == t).then_some(i);
        let fast = (tf == t).then_some(j);
        let mut row = vec![fmt(t)];
        let cells =
            |row: &mut Vec<String>, idx: Option<usize>, states: &[Vec<f64>], n: usize| match idx {
                Some(k) => row.extend(states[k].iter().map(|v| fmt(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), n)),
            };
        cells(&mut row, slow, &traj.slow_states, ns);
        cells(&mut row, fast, &traj.fast_states, nf);
        cells(&mut row, slow, &traj.z_slow_states, nzs);
        cells(&mut row, fast, &traj.z_fast_states, nzf);
        writer.write_record(&row).expect("writing to memory");
        if slow.is_some() {
            i += 1;
        }
        if fast.is_some() {
            j += 1;
        }
    }
    let body = writer.into_inner().expect("flushing to memory");
    out.push_str(&String::from_utf8(body).expect("csv output is UTF-8"));
    out
}

fn column_counts(header: &csv::StringRecord) -> Result<[usize; 4]> {
    if header.get(0) != Some("t") {
        return Err(parse_err(1, "header must start with `t`"));
    }
    let prefixes = ["y_S", "y_F", "z_S", "z_F"];
    let mut counts = [0usize; 4];
    let mut group = 0;
    for name in header.iter().skip(1) {
        while group < 4 && name != format!("{}{}", prefixes[group], counts[group]) {
            group += 1;
        }
        if group == 4 {
            return Err(parse_err(1, format!("unexpected column `{name}`")));
        }
        counts[group] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(parse_err(
            1,
            "header needs at least one y_S and one y_F column",
        ));
    }
    Ok(counts)
}

fn parse_cells(cells: &[&str], line: usize) -> Result<Option<Vec<f64>>> {
    if cells.iter().all(|c| c.is_empty()) {
        return Ok(None);
    }
    cells
        .iter()
        .map(|c| {
            c.parse::<f64>()
                .map_err(|_| parse_err(line, format!("invalid number `{c}`")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Parses the output of [`emit_trajectory`].
pub fn parse_trajectory(text: &str) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    let mut skipped = 0;
    for line in text.lines() {
        if let Some(w) = line.strip_prefix(WARNING_PREFIX) {
            traj.warnings.push(w.to_string());
        } else if !line.starts_with('#') {
            break;
        }
        skipped += 1;
    }
    let body: String = text.lines().skip(skipped).flat_map(|l| [l, "\n"]).collect();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(body.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(skipped + 1, e.to_string()))?
        .clone();
    let counts = column_counts(&header).map_err(|e| match e {
        Error::Parse { message, .. } => parse_err(skipped + 1, message),
        other => other,
    })?;
    let width = 1 + counts.iter().sum::<usize>();
    let mut last_t = f64::NEG_INFINITY;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize) + skipped;
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize) + skipped;
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, got {}", record.len()),
            ));
        }
        let t: f64 = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid time `{}`", &record[0])))?;
        if !(t > last_t) {
            return Err(parse_err(line, "times must be strictly increasing"));
        }
        last_t = t;
        let fields: Vec<&str> = record.iter().skip(1).collect();
        let mut groups = Vec::with_capacity(4);
        let mut at = 0;
        for n in counts {
            groups.push(parse_cells(&fields[at..at + n], line)?);
            at += n;
        }
        let on = |g: &Option<Vec<f64>>, n: usize| n > 0 && g.is_some();
        let slow = on(&groups[0], counts[0]);
        let fast = on(&groups[1], counts[1]);
        if !slow && !fast {
            return Err(parse_err(line, "row has neither slow nor fast values"));
        }
        if (counts[2] > 0 && groups[2].is_some() != slow)
            || (counts[3] > 0 && groups[3].is_some() != fast)
        {
            return Err(parse_err(
                line,
                "algebraic cells must be filled exactly on their grid",
            ));
        }
        let mut g = groups.into_iter();
        let (ys, yf, zs, zf) = (
            g.next().flatten(),
            g.next().flatten(),
            g.next().flatten(),
            g.next().flatten(),
        );
        if slow {
            traj.macro_times.push(t);
            traj.slow_states.push(ys.unwrap_or_default());
            traj.z_slow_states.push(zs.unwrap_or_default());
        }
        if fast {
            traj.fast_times.push(t);
            traj.fast_states.push(yf.unwrap_or_default());
            traj.z_fast_states.push(zf.unwrap_or_default());
        }
    }
    Ok(traj)
}
