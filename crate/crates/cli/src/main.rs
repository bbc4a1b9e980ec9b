use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nozzle_core::battery::{self, Level};
use nozzle_core::boundary::BoundaryData;
use nozzle_core::config::{self, RunConfig};
use nozzle_core::euler::{self, EulerContext, EulerError};
use nozzle_core::gas::Truncation;
use nozzle_core::grid::write_csv;
use nozzle_core::potential::{self, mach_field, PotentialSolution};
use nozzle_core::report::RunReport;
use nozzle_core::streamline;
use nozzle_core::transport;
use nozzle_core::{BoundaryFamily, GasModel, ScalarField};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(name = "nozzle", version, about = "Subsonic potential and Euler flow in a rectangular nozzle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set grid.n=33`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Irrotational flow at the configured flux multiplier.
    Potential(Common),
    /// Critical flux multiplier of the truncated problems.
    CriticalTheta(Common),
    /// Rotational flow by fixed-point iteration.
    Euler {
        #[command(flatten)]
        common: Common,
        /// Swirl amplitude, shorthand for `boundary.eps_kappa`.
        #[arg(long)]
        epsilon_kappa: Option<f64>,
        /// Bernoulli perturbation amplitude, shorthand for `boundary.eps_b`.
        #[arg(long)]
        epsilon_b: Option<f64>,
        /// Outer iteration tolerance, shorthand for `euler.fp_tol`.
        #[arg(long)]
        fp_tol: Option<f64>,
    },
    /// Streamline foot points and Bernoulli field of the potential flow.
    Streamline(Common),
    /// Run the verification battery.
    Verify {
        #[command(flatten)]
        common: Common,
        /// `quick` (under a second) or `full` (refinement studies, minutes).
        #[arg(long, default_value = "quick")]
        level: Level,
        /// Regression fixture file; created on first run.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Solver(String),
    Verify,
    Io(std::io::Error),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

fn load(common: &Common, extra: &[String]) -> Result<(RunConfig, PathBuf), Failure> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = common.overrides.clone();
    overrides.extend_from_slice(extra);
    let text = config::apply_overrides(&text, &overrides).map_err(|e| Failure::Config(e.to_string()))?;
    let cfg = config::parse_config(&text).map_err(|e| Failure::Config(e.to_string()))?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

/// Print without panicking when stdout is closed early.
fn say(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn finish(report: &mut RunReport, out: &Path) -> Result<(), Failure> {
    let path = report.write(out)?;
    for line in report.summary() {
        say(&line);
    }
    say(&format!("report: {}", path.display()));
    Ok(())
}

fn csv(report: &mut RunReport, out: &Path, name: &str, names: &[&str], fields: &[&ScalarField]) -> Result<(), Failure> {
    if !report.config.output.fields {
        return Ok(());
    }
    let mut buf = Vec::new();
    write_csv(&mut buf, names, fields)?;
    report.write_output(out, name, &buf)?;
    Ok(())
}

fn setup(cfg: &RunConfig) -> Result<(GasModel, BoundaryData), Failure> {
    let gas = cfg.gas_model().map_err(|e| Failure::Config(e.to_string()))?;
    let b = cfg.boundary_data().map_err(|e| Failure::Config(e.to_string()))?;
    Ok((gas, b))
}

fn potential_fields(report: &mut RunReport, out: &Path, s: &PotentialSolution, gas: &GasModel, name: &str) -> Result<(), Failure> {
    let law = nozzle_core::gas::DensityLaw::new(*gas, s.m.map(|m| Truncation::new(m).expect("validated")))
        .map_err(|e| Failure::Solver(e.to_string()))?;
    let mach = mach_field(&law, &s.u);
    csv(
        report,
        out,
        name,
        &["phi", "u1", "u2", "u3", "rho", "mach"],
        &[&s.phi, &s.u.c[0], &s.u.c[1], &s.u.c[2], &s.rho, &mach],
    )
}

fn solve_configured_potential(cfg: &RunConfig, gas: &GasModel, b: &BoundaryData) -> Result<PotentialSolution, Failure> {
    let trunc = cfg.potential.truncation.map(|m| Truncation::new(m).expect("validated"));
    potential::solve_potential(gas, b, cfg.potential.theta, trunc, &cfg.potential.options(), None)
        .map_err(|e| Failure::Solver(e.to_string()))
}

fn run_potential(common: &Common) -> Result<(), Failure> {
    let (cfg, out) = load(common, &[])?;
    let (gas, b) = setup(&cfg)?;
    let mut report = RunReport::new("potential", &cfg);
    let sol = report.time("solve", || solve_configured_potential(&cfg, &gas, &b));
    let sol = match sol {
        Ok(s) => s,
        Err(e) => {
            report.status = "not converged".into();
            finish(&mut report, &out)?;
            return Err(e);
        }
    };
    report.value("theta", sol.theta);
    report.value("picard_iterations", sol.picard_iters as f64);
    report.value("max_mach", sol.mach_max);
    report.value("max_speed_sq", sol.max_speed_sq);
    let (min_u1, at) = potential::check_positivity_u1(&sol);
    report.value("min_u1", min_u1);
    report.section("min_u1_point", &at);
    report.value("relative_residual", sol.residual);
    report.value("mass_balance", potential::mass_balance(&sol, &b));
    report.history("picard_update", sol.history.clone());
    potential_fields(&mut report, &out, &sol, &gas, "potential-fields.csv")?;
    finish(&mut report, &out)
}

#[derive(Serialize)]
struct SweepRow {
    theta: f64,
    converged: bool,
    mach_max: f64,
    max_speed_sq: f64,
}

fn run_critical(common: &Common) -> Result<(), Failure> {
    let (cfg, out) = load(common, &[])?;
    let (gas, b) = setup(&cfg)?;
    let mut report = RunReport::new("critical-theta", &cfg);
    let popts = cfg.potential.options();
    let copts = cfg.critical.options();
    let mut table = Vec::new();
    for m in cfg.critical.truncations() {
        let r = report.time(&format!("m={m}"), || potential::find_critical_theta(&gas, &b, m, &copts, &popts));
        match r {
            Ok(r) => {
                report.value(&format!("theta_star_m{m}"), r.theta_star);
                report.value(&format!("bracket_low_m{m}"), r.bracket.0);
                report.value(&format!("bracket_high_m{m}"), r.bracket.1);
                report.section(&format!("critical_m{m}"), &r);
                for s in &r.mach_trace {
                    table.push((m, s.theta, s.converged, s.mach_max));
                }
            }
            Err(e) => {
                report.status = format!("m={m}: {e}");
                finish(&mut report, &out)?;
                return Err(Failure::Solver(e.to_string()));
            }
        }
    }
    if !cfg.critical.thetas.0.is_empty() {
        let mut sweep = Vec::new();
        let mut guess: Option<ScalarField> = None;
        for &theta in &cfg.critical.thetas.0 {
            let s = potential::solve_potential(&gas, &b, theta, None, &popts, guess.as_ref());
            let row = match &s {
                Ok(s) => SweepRow {
                    theta,
                    converged: true,
                    mach_max: s.mach_max,
                    max_speed_sq: s.max_speed_sq,
                },
                Err(_) => SweepRow {
                    theta,
                    converged: false,
                    mach_max: f64::NAN,
                    max_speed_sq: f64::NAN,
                },
            };
            report.value(&format!("sweep_mach_theta_{theta}"), row.mach_max);
            sweep.push(row);
            guess = s.ok().map(|s| s.phi);
        }
        report.section("mach_sweep", &sweep);
    }
    let mut text = String::from("m,theta,converged,mach_max\n");
    for (m, t, c, mach) in &table {
        text.push_str(&format!("{m},{t:.16e},{c},{mach:.16e}\n"));
    }
    report.write_output(&out, "mach-trace.csv", text.as_bytes())?;
    finish(&mut report, &out)
}

fn run_streamline(common: &Common) -> Result<(), Failure> {
    let (cfg, out) = load(common, &[])?;
    let (gas, b) = setup(&cfg)?;
    let mut report = RunReport::new("streamline", &cfg);
    let sol = solve_configured_potential(&cfg, &gas, &b)?;
    let traces = report
        .time("trace", || streamline::trace_field(&sol.u, cfg.streamline.rk_tol, cfg.streamline.u1_floor))
        .map_err(|e| Failure::Solver(e.to_string()))?;
    let bern = transport::bernoulli_field(&b, &traces).map_err(|e| Failure::Solver(e.to_string()))?;
    let g = sol.u.grid();
    let drift = (0..g.len())
        .map(|p| {
            let x = g.point(p);
            (traces.gamma2.values[p] - x[1]).abs().max((traces.gamma3.values[p] - x[2]).abs())
        })
        .fold(0.0, f64::max);
    report.value("max_foot_point_drift", drift);
    report.value("steps_rejected", traces.steps_rejected() as f64);
    report.value("bernoulli_min", bern.min());
    report.value("bernoulli_max", bern.max());
    csv(
        &mut report,
        &out,
        "streamline-fields.csv",
        &["gamma2", "gamma3", "B"],
        &[&traces.gamma2, &traces.gamma3, &bern],
    )?;
    finish(&mut report, &out)
}

fn run_euler(common: &Common, ek: Option<f64>, eb: Option<f64>, fp: Option<f64>) -> Result<(), Failure> {
    let mut extra = Vec::new();
    if let Some(v) = ek {
        extra.push(format!("boundary.eps_kappa={v}"));
    }
    if let Some(v) = eb {
        extra.push(format!("boundary.eps_b={v}"));
    }
    if let Some(v) = fp {
        extra.push(format!("euler.fp_tol={v}"));
    }
    let (cfg, out) = load(common, &extra)?;
    let gas = cfg.gas_model().map_err(|e| Failure::Config(e.to_string()))?;
    let grid = cfg.grid().map_err(|e| Failure::Config(e.to_string()))?;
    let family = match cfg.boundary.family() {
        f @ BoundaryFamily::Cosine { base_flux, .. } => f.with_base_flux(base_flux * cfg.euler.theta),
        f => f,
    };
    let b = family.build(&grid, &gas).map_err(|e| Failure::Config(e.to_string()))?;
    let ecfg = cfg.euler_config();
    let mut report = RunReport::new("euler", &cfg);
    let ctx = report
        .time("background", || EulerContext::new(&b, &gas, &ecfg))
        .map_err(|e| Failure::Solver(e.to_string()))?;
    report.value("sigma0", ctx.sigma0);
    let res = report.time("fixed_point", || euler::run_euler_from(&ctx, None));
    let sol = match res {
        Ok(s) => s,
        Err(e) => {
            if let EulerError::NotConverged { history } = &e {
                report.history("update", history.iter().map(|s| s.update).collect());
                report.section("outer_steps", history);
            }
            report.status = e.to_string();
            finish(&mut report, &out)?;
            return Err(Failure::Solver(e.to_string()));
        }
    };
    report.value("outer_iterations", sol.history.len() as f64);
    if let Some(r) = sol.worst_ratio(1e3 * ecfg.fp_tol) {
        report.value("worst_history_ratio", r);
    }
    report.value("omega_max", sol.omega.max_abs());
    report.value("w_max", sol.w.max_abs());
    report.value("min_u1", sol.u.c[0].min());
    for (name, v) in euler::EulerResiduals::NAMES.iter().zip(sol.residuals.values()) {
        report.value(&format!("residual_{name}"), v);
    }
    report.history("update", sol.history.iter().map(|s| s.update).collect());
    report.section("outer_steps", &sol.history);
    let mut hist = String::from("step,update,ratio,alpha,omega_div,potential_iters\n");
    for (i, s) in sol.history.iter().enumerate() {
        hist.push_str(&format!(
            "{},{:.16e},{},{},{:.16e},{}\n",
            i + 1,
            s.update,
            s.ratio.map_or(String::new(), |r| format!("{r:.16e}")),
            s.alpha,
            s.omega_div,
            s.potential_iters
        ));
    }
    report.write_output(&out, "euler-history.csv", hist.as_bytes())?;
    csv(
        &mut report,
        &out,
        "euler-fields.csv",
        &["u1", "u2", "u3", "rho", "B", "omega1", "omega2", "omega3", "W1", "W2", "W3", "phi"],
        &[
            &sol.u.c[0],
            &sol.u.c[1],
            &sol.u.c[2],
            &sol.rho,
            &sol.b,
            &sol.omega.c[0],
            &sol.omega.c[1],
            &sol.omega.c[2],
            &sol.w.c[0],
            &sol.w.c[1],
            &sol.w.c[2],
            &sol.phi,
        ],
    )?;
    finish(&mut report, &out)
}

fn run_verify(common: &Common, level: Level, fixtures: Option<PathBuf>) -> Result<(), Failure> {
    let (cfg, out) = load(common, &[])?;
    let mut report = RunReport::new("verify", &cfg);
    let mut rows = report.time("battery", || battery::verify_battery(level));
    let path = fixtures.unwrap_or_else(|| out.join("fixtures.json"));
    let created = battery::freeze_or_compare(&mut rows, &path, 1e-6)?;
    if created {
        say(&format!("froze regression fixtures in {}", path.display()));
    }
    say(battery::render_table(&rows).trim_end());
    for r in &rows {
        report.values.push(nozzle_core::report::Row {
            name: format!("{}: {}", r.module, r.oracle),
            value: r.observed,
            limit: None,
            pass: Some(r.pass),
        });
    }
    report.section("battery", &rows);
    let ok = rows.iter().all(|r| r.pass);
    report.status = if ok { "all rows pass".into() } else { "failures".into() };
    let path = report.write(&out)?;
    say(&format!("report: {}", path.display()));
    if ok {
        Ok(())
    } else {
        Err(Failure::Verify)
    }
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("NOZZLE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Config(format!("NOZZLE_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Potential(c) => run_potential(c),
        Command::CriticalTheta(c) => run_critical(c),
        Command::Streamline(c) => run_streamline(c),
        Command::Euler {
            common,
            epsilon_kappa,
            epsilon_b,
            fp_tol,
        } => run_euler(common, *epsilon_kappa, *epsilon_b, *fp_tol),
        Command::Verify { common, level, fixtures } => run_verify(common, *level, fixtures.clone()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver error: {m}");
            ExitCode::from(EXIT_SOLVER)
        }
        Err(Failure::Verify) => {
            eprintln!("verification failed");
            ExitCode::from(EXIT_VERIFY)
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::from(1)
        }
    }
}
