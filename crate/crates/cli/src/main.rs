use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use multirate::config::{parse_config, parse_params};
use multirate::contraction::{analyze, default_samples, report_to_text, ContractionReport};
use multirate::coupling::extrapolation_lphi;
use multirate::csv_io::emit_trajectory;
use multirate::dae::integrate_dae_gated;
use multirate::harness::{
    convergence_study, convergence_to_csv, default_ladder, stability_sweep, sweep_to_csv,
    SweepSettings,
};
use multirate::ode::integrate;
use multirate::problem::{MacroStepPlan, Strategy};
use multirate::problems::{build, catalog, Benchmark, Model};
use multirate::steppers::Scheme;
use multirate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "multirate",
    version,
    about = "Multirate co-simulation of partitioned ODEs and index-1 DAEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one problem and write the trajectory as CSV.
    Run(Common),
    /// Run a convergence study over a ladder of macro steps.
    Convergence(Common),
    /// Estimate Lipschitz constants and contraction ratios.
    Contraction(Common),
    /// Measure error growth over a (b, d) grid of dae-lin.
    Sweep(SweepArgs),
    /// List the built-in problems.
    Catalog,
}

#[derive(Args, Debug)]
struct Common {
    /// Built-in problem id (see `catalog`).
    #[arg(long)]
    problem: Option<String>,
    /// TOML problem file, or inline parameters `name=value,...` for --problem.
    #[arg(long)]
    config: Option<String>,
    #[arg(long, default_value = "fully-decoupled")]
    strategy: Strategy,
    /// Base scheme for both subsystems (default: heun for ODEs, implicit-euler for DAEs).
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Macro step; a comma-separated ladder for `convergence`.
    #[arg(long = "H", value_delimiter = ',')]
    macro_steps: Vec<f64>,
    /// Multirate factor.
    #[arg(long, default_value_t = 4)]
    m: usize,
    /// Dynamic-iteration sweeps per window (DAEs only).
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Extrapolation order (default: scheme order minus one).
    #[arg(long)]
    extrap_order: Option<usize>,
    /// Interpolation order (default: scheme order minus one).
    #[arg(long)]
    interp_order: Option<usize>,
    /// Use the slow scheme's dense output for slow interpolation.
    #[arg(long)]
    dense_output: bool,
    /// Replace the problem's end time.
    #[arg(long)]
    t_end: Option<f64>,
    /// Output file (standard output when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run even when the stability analysis fails for the chosen strategy.
    #[arg(long)]
    force: bool,
    /// Seed for randomized analyzer samples.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value = "fully-decoupled")]
    strategy: Strategy,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.3, 0.4, 1.5])]
    b: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.3, 0.4, 1.5])]
    d: Vec<f64>,
    #[arg(long = "H", default_value_t = SweepSettings::default().macro_step)]
    macro_step: f64,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    windows: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_problem(c: &Common) -> Result<Benchmark> {
    let bench = match (&c.problem, &c.config) {
        (Some(id), None) => build(id, &BTreeMap::new())?,
        (Some(id), Some(cfg)) => {
            let params = if Path::new(cfg).is_file() {
                parse_params(fs::read_to_string(cfg)?.trim())?
            } else {
                parse_params(cfg)?
            };
            build(id, &params)?
        }
        (None, Some(path)) => parse_config(&fs::read_to_string(path)?)?.to_benchmark()?,
        (None, None) => {
            return Err(Error::InvalidProblem(
                "either --problem or --config is required".into(),
            ))
        }
    };
    match c.t_end {
        Some(t) => bench.with_t_end(t),
        None => Ok(bench),
    }
}

fn plan_for(c: &Common, bench: &Benchmark, macro_step: f64) -> Result<MacroStepPlan> {
    let default_scheme = if bench.is_dae() {
        Scheme::ImplicitEuler
    } else {
        Scheme::Heun
    };
    let scheme = c.scheme.unwrap_or(default_scheme);
    if !bench.is_dae() && c.k != 1 {
        return Err(Error::InvalidPlan(vec![format!(
            "ODE problems use k = 1, got k = {}",
            c.k
        )]));
    }
    let mut plan = MacroStepPlan::new(macro_step, c.m, c.strategy, scheme)
        .with_sweeps(c.k)
        .with_dense_output(c.dense_output);
    let extrap = c.extrap_order.unwrap_or(plan.extrap_order);
    let interp = c.interp_order.unwrap_or(plan.interp_order);
    plan = plan.with_orders(extrap, interp);
    Ok(plan)
}

fn single_step(c: &Common) -> Result<f64> {
    match c.macro_steps.as_slice() {
        [] => Ok(0.1),
        [h] => Ok(*h),
        many => Err(Error::InvalidPlan(vec![format!(
            "expected one macro step, got {}",
            many.len()
        )])),
    }
}

fn report_for(
    bench: &Benchmark,
    plan: &MacroStepPlan,
    seed: Option<u64>,
) -> Result<ContractionReport> {
    let dae = bench.model.as_dae();
    let samples = default_samples(&dae, &plan.newton, seed)?;
    analyze(
        &bench.id,
        &dae,
        &samples,
        extrapolation_lphi(plan.extrap_order),
        plan.extrap_order,
        plan.sweeps,
    )
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(c: &Common) -> Result<()> {
    let bench = load_problem(c)?;
    let plan = plan_for(c, &bench, single_step(c)?)?;
    let started = Instant::now();
    let traj = match &bench.model {
        Model::Ode(p) => integrate(p, &plan)?,
        Model::Dae(p) => {
            let report = report_for(&bench, &plan, c.seed)?;
            integrate_dae_gated(p, &plan, &report, c.force)?
        }
    };
    eprintln!(
        "# {} windows, {} micro nodes in {:.3} ms",
        traj.macro_times.len() - 1,
        traj.fast_times.len() - 1,
        started.elapsed().as_secs_f64() * 1e3
    );
    emit(&c.out, &emit_trajectory(&traj))
}

fn convergence(c: &Common) -> Result<()> {
    let bench = load_problem(c)?;
    let ladder = if c.macro_steps.is_empty() {
        default_ladder(0.1)
    } else {
        c.macro_steps.clone()
    };
    let plan = plan_for(c, &bench, ladder[0])?;
    let report = convergence_study(&bench, &plan, &ladder)?;
    let csv = convergence_to_csv(&report);
    emit(&c.out, &csv)?;
    if c.out.is_some() {
        for line in csv.lines().filter(|l| l.starts_with("# slope_")) {
            println!("{}", line.trim_start_matches("# "));
        }
    }
    Ok(())
}

fn contraction(c: &Common) -> Result<()> {
    let bench = load_problem(c)?;
    let plan = plan_for(c, &bench, single_step(c)?)?;
    emit(&c.out, &report_to_text(&report_for(&bench, &plan, c.seed)?))
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let grid: Vec<(f64, f64)> =
        a.b.iter()
            .flat_map(|&b| a.d.iter().map(move |&d| (b, d)))
            .collect();
    let settings = SweepSettings {
        strategy: a.strategy,
        sweeps: a.k,
        macro_step: a.macro_step,
        multirate_factor: a.m,
        windows: a.windows,
        from_window: SweepSettings::default()
            .from_window
            .min(a.windows.saturating_sub(1)),
    };
    emit(&a.out, &sweep_to_csv(&stability_sweep(&grid, &settings)?))
}

fn list_catalog() -> Result<()> {
    let mut s = String::new();
    for info in catalog() {
        let params: Vec<String> = info
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        s.push_str(&format!(
            "{}\n    {}\n    params: {}\n",
            info.id,
            info.description,
            params.join(",")
        ));
    }
    emit(&None, &s)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(c) => run(c),
        Command::Convergence(c) => convergence(c),
        Command::Contraction(c) => contraction(c),
        Command::Sweep(a) => sweep(a),
        Command::Catalog => list_catalog(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
