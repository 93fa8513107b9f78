//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 usage error,
//! 3 initial data rejected, 4 diagnostics failed, 5 numerical failure,
//! 6 I/O failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, ZeroThresholdPath};
use crate::coupler::{self, Checkpoint, CoupledState, RunOutcome};
use crate::diagnostics::Status;
use crate::error::{Error, Result};
use crate::maxwell::{maxwell_p, maxwell_tau, ShearHistory};
use crate::meso::{compute_tau, hl_solve, MesoRow};
use crate::model::{nondimensionalize, nondimensionalize_zero_threshold, PhysicalParams};
use crate::output::{self, num, write_atomic, RunSummary, RunWriter};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_DIAGNOSTICS: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;
pub const EXIT_IO: i32 = 6;

/// Environment variable supplying the default output directory.
pub const OUT_ENV: &str = "HL_COUETTE_OUT";

#[derive(Debug, Parser)]
#[command(name = "hl-couette", version, about = "Hébraud–Lequeux stress density coupled to planar Couette flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML configuration file; the standard scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set grid.dt=5e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output directory (default: $HL_COUETTE_OUT, then `hl-couette-out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArgs {
    fn dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("hl-couette-out"))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the initial data and print the validation report.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the coupled simulation to the horizon.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Drive a single stress-density row with the `hl_run.shear_rate` protocol.
    HlRun {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate the zero-threshold closed forms at constant shear.
    Oracle {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Re-run the diagnostics over a run directory.
    Diagnose {
        /// Directory written by `run`.
        dir: PathBuf,
        /// Take diagnostics tolerances from this config instead of the run's.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Also write the recomputed reports as JSON to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print the non-dimensional groups of a dimensional parameter set.
    Nondim {
        #[arg(long)]
        rho: f64,
        #[arg(long = "L")]
        length: f64,
        #[arg(long = "T0")]
        t0: f64,
        #[arg(long = "sigma-c")]
        sigma_c: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long = "G0")]
        g0: f64,
        #[arg(long)]
        mu: f64,
    },
}

/// Maps an error onto the documented exit codes.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) => EXIT_VALIDATION,
        Error::Diagnostic(_) | Error::BoundViolation(_) => EXIT_DIAGNOSTICS,
        Error::Cfl { .. } | Error::Instability { .. } | Error::NonContraction { .. } => EXIT_NUMERICAL,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Normal output goes to `stdout`.
pub fn dispatch<I, T>(args: I, stdout: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut text = String::new();
    let result = execute(cli.command, &mut text);
    let _ = stdout.write_all(text.as_bytes());
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command, out: &mut String) -> Result<i32> {
    match command {
        Command::Validate { cfg } => validate(&cfg, out),
        Command::Run { cfg, out: dir, resume } => run(&cfg, &dir.dir(), resume.as_deref(), out),
        Command::HlRun { cfg, out: dir } => hl_run(&cfg, &dir.dir(), out),
        Command::Oracle { cfg, out: dir } => oracle(&cfg, &dir.dir(), out),
        Command::Diagnose { dir, config, set, json } => diagnose(&dir, config.as_deref(), &set, json.as_deref(), out),
        Command::Nondim {
            rho,
            length,
            t0,
            sigma_c,
            alpha,
            g0,
            mu,
        } => nondim(
            &PhysicalParams {
                rho,
                mu,
                g0,
                alpha,
                t0,
                sigma_c,
                length,
            },
            out,
        ),
    }
}

fn load(cfg: &ConfigArgs) -> Result<RunConfig> {
    RunConfig::load(cfg.config.as_deref(), &cfg.set)
}

fn validate(args: &ConfigArgs, out: &mut String) -> Result<i32> {
    let resolved = load(args)?.resolve()?;
    out.push_str(&resolved.validation.to_text());
    Ok(if resolved.validation.accepted { EXIT_OK } else { EXIT_VALIDATION })
}

fn status_code(worst: Status) -> i32 {
    if worst == Status::Fail {
        EXIT_DIAGNOSTICS
    } else {
        EXIT_OK
    }
}

fn run(args: &ConfigArgs, dir: &Path, resume: Option<&Path>, out: &mut String) -> Result<i32> {
    let cfg = load(args)?;
    if cfg.model.sigma_c == 0.0 && cfg.solver.zero_threshold_path == ZeroThresholdPath::Maxwell {
        if resume.is_some() {
            return Err(Error::Config("the zero-threshold path does not use checkpoints".into()));
        }
        return run_maxwell(&cfg, dir, out);
    }
    let resolved = cfg.resolve()?;
    if !resolved.validation.accepted {
        out.push_str(&resolved.validation.to_text());
        return Err(Error::Validation(
            "initial data is outside the proven regime; set solver.allow_unproven = true to run anyway".into(),
        ));
    }
    let problem = &resolved.problem;
    let opts = cfg.run_options()?;
    let config_json = cfg.to_json();
    let final_step = problem.space.n_steps();
    let (context, state) = match resume {
        Some(path) => {
            let cp: Checkpoint = output::read_json(path)?;
            cp.verify(problem, &opts.diagnostics)?;
            (cp.context, cp.state)
        }
        None => (resolved.context.clone(), CoupledState::initial(&resolved.initial)),
    };
    let mut writer = RunWriter::new(dir, config_json.clone(), cfg.density_every()?, final_step, context.clone());
    if state.step > 0 {
        let name = output::density_name(0);
        let p0 = output::density_csv(problem, &context.p0, 0)?;
        write_atomic(&dir.join(&name), p0.as_bytes())?;
        writer.density_files.push(name);
    }
    let outcome: RunOutcome = coupler::run(problem, &context, state, &opts, &mut writer)?;
    let worst = outcome.worst_status();
    let summary = RunSummary {
        schema: output::SCHEMA_VERSION,
        fingerprint: problem.fingerprint(),
        path: "meso".into(),
        config: serde_json::from_str(&config_json).expect("config JSON re-parses"),
        problem: problem.clone(),
        diagnostics: opts.diagnostics,
        eta: context.eta,
        validation: Some(resolved.validation.clone()),
        final_step: outcome.state.step,
        final_time: problem.space.time(outcome.state.step),
        worst_status: worst,
        stats: Some(outcome.state.stats),
        reports: outcome.reports.clone(),
        snapshot_files: writer.snapshot_files.clone(),
        density_files: writer.density_files.clone(),
    };
    output::write_json(&dir.join(output::SUMMARY_FILE), &summary)?;
    if let Some(last) = outcome.reports.last() {
        out.push_str(&last.to_table());
    }
    let s = &outcome.state.stats;
    let _ = writeln!(out, "eta = {:.17e}", context.eta);
    let _ = writeln!(out, "min D = {:.6e} at t = {} (y index {})", s.min_d, s.min_d_t, s.min_d_y);
    let _ = writeln!(out, "max p = {:.6e}", s.max_density);
    let _ = writeln!(out, "max mass error = {:.3e}", s.max_mass_error);
    let _ = writeln!(
        out,
        "picard: at most {} iterations, contraction ratio <= {:.3e}",
        s.max_picard_iterations, s.max_picard_ratio
    );
    let _ = writeln!(out, "worst status = {worst:?}");
    let _ = writeln!(out, "{} snapshots written to {}", summary.snapshot_files.len(), dir.display());
    Ok(status_code(worst))
}

fn run_maxwell(cfg: &RunConfig, dir: &Path, out: &mut String) -> Result<i32> {
    let resolved = cfg.resolve()?;
    let problem = &resolved.problem;
    let traj = coupler::run_maxwell(problem, &resolved.initial, 1)?;
    let every = cfg.snapshot_every()?;
    let n_steps = problem.space.n_steps();
    let fingerprint = problem.fingerprint();
    let config_json = cfg.to_json();
    let mut files = Vec::new();
    for (n, t) in traj.times.iter().enumerate() {
        if !(n == 0 || n == n_steps || (every > 0 && n % every == 0)) {
            continue;
        }
        let u = crate::macro_flow::MacroState { u: traj.u[n].clone() }
            .full_velocity(problem.protocol.velocity(*t), &problem.space);
        let mut s = String::new();
        let _ = writeln!(s, "# hl-couette maxwell v{}", output::SCHEMA_VERSION);
        let _ = writeln!(s, "# fingerprint {fingerprint}");
        let _ = writeln!(s, "# step {n}");
        let _ = writeln!(s, "# t {}", num(*t));
        let _ = writeln!(s, "# config {config_json}");
        s.push_str("y,U,tau\n");
        for (j, (uj, tj)) in u.iter().zip(&traj.tau[n]).enumerate() {
            let _ = writeln!(s, "{},{},{}", num(problem.space.y(j)), num(*uj), num(*tj));
        }
        let name = output::snapshot_name(n);
        write_atomic(&dir.join(&name), s.as_bytes())?;
        files.push(name);
    }
    let summary = RunSummary {
        schema: output::SCHEMA_VERSION,
        fingerprint,
        path: "maxwell".into(),
        config: serde_json::from_str(&config_json).expect("config JSON re-parses"),
        problem: problem.clone(),
        diagnostics: cfg.diagnostics,
        eta: resolved.context.eta,
        validation: Some(resolved.validation.clone()),
        final_step: n_steps,
        final_time: problem.space.time(n_steps),
        worst_status: Status::Pass,
        stats: None,
        reports: vec![],
        snapshot_files: files.clone(),
        density_files: vec![],
    };
    output::write_json(&dir.join(output::SUMMARY_FILE), &summary)?;
    let _ = writeln!(out, "zero-threshold path: closed Maxwell system");
    let _ = writeln!(out, "picard: at most {} iterations", traj.max_picard_iterations);
    let _ = writeln!(out, "{} snapshots written to {}", files.len(), dir.display());
    Ok(EXIT_OK)
}

fn single_row(cfg: &RunConfig) -> Result<(crate::grid::SigmaGrid, MesoRow)> {
    let sigma = cfg.sigma_grid()?;
    let mut row = cfg.initial.density.cell_averages(&sigma, 0.0)?;
    let mass = sigma.integrate(&row);
    if !(mass > 0.0) {
        return Err(Error::Validation("density preset has no mass on the sigma mesh".into()));
    }
    row.iter_mut().for_each(|p| *p /= mass);
    Ok((sigma, MesoRow(row)))
}

fn hl_run(args: &ConfigArgs, dir: &Path, out: &mut String) -> Result<i32> {
    let cfg = load(args)?;
    cfg.model.check()?;
    cfg.hl_run.shear_rate.check()?;
    let space = cfg.space_grid()?;
    let (sigma, p0) = single_row(&cfg)?;
    let rate = &cfg.hl_run.shear_rate;
    let b: Vec<f64> = (0..space.n_steps())
        .map(|n| cfg.model.g0 * rate.integral(space.time(n), space.time(n + 1)) / space.dt)
        .collect();
    let mut every_cfg = cfg.clone();
    every_cfg.output.snapshot_cadence = cfg.hl_run.snapshot_cadence;
    let every = every_cfg.snapshot_every()?;
    let traj = hl_solve(&p0, &b, space.dt, &sigma, &cfg.model, &Default::default(), every)?;

    let mut series = format!("# hl-couette hl-run v{}\nt,tau,D,mass,sup\n", output::SCHEMA_VERSION);
    for k in 0..traj.times.len() {
        let _ = writeln!(
            series,
            "{},{},{},{},{}",
            num(traj.times[k]),
            num(traj.tau[k]),
            num(traj.d[k]),
            num(traj.mass[k]),
            num(traj.sup[k])
        );
    }
    write_atomic(&dir.join("hl_series.csv"), series.as_bytes())?;
    let mut dens = format!("# hl-couette hl-density v{}\nt,sigma,p\n", output::SCHEMA_VERSION);
    let centers = sigma.centers();
    for (t, row) in &traj.snapshots {
        for (c, p) in centers.iter().zip(&row.0) {
            let _ = writeln!(dens, "{},{},{}", num(*t), num(*c), num(*p));
        }
    }
    write_atomic(&dir.join("hl_density.csv"), dens.as_bytes())?;
    let last = traj.times.len() - 1;
    let _ = writeln!(
        out,
        "t = {}: tau = {:.6e}, D = {:.6e}, mass = {:.15}",
        traj.times[last], traj.tau[last], traj.d[last], traj.mass[last]
    );
    let _ = writeln!(out, "wrote hl_series.csv and hl_density.csv to {}", dir.display());
    Ok(EXIT_OK)
}

fn oracle(args: &ConfigArgs, dir: &Path, out: &mut String) -> Result<i32> {
    let cfg = load(args)?;
    cfg.model.check()?;
    if cfg.model.sigma_c != 0.0 || cfg.model.t0 != 1.0 {
        return Err(Error::Config(
            "the closed forms are evaluated in relaxation-time units with sigma_c = 0; set model.sigma_c = 0 and model.t0 = 1"
                .into(),
        ));
    }
    let (sigma, p0) = single_row(&cfg)?;
    let history = ShearHistory::constant(cfg.oracle.shear);
    let tau0 = compute_tau(&p0, &sigma);
    let mut tau_csv = format!("# hl-couette oracle-tau v{}\nt,tau\n", output::SCHEMA_VERSION);
    let mut p_csv = format!("# hl-couette oracle-p v{}\nt,sigma,p\n", output::SCHEMA_VERSION);
    let centers = sigma.centers();
    for &t in &cfg.oracle.times {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Config(format!("oracle time {t} must be finite and non-negative")));
        }
        let _ = writeln!(tau_csv, "{},{}", num(t), num(maxwell_tau(tau0, &history, t)));
        let p = maxwell_p(&p0, &history, t, &sigma, cfg.model.alpha);
        for (c, v) in centers.iter().zip(&p.0) {
            let _ = writeln!(p_csv, "{},{},{}", num(t), num(*c), num(*v));
        }
    }
    write_atomic(&dir.join("oracle_tau.csv"), tau_csv.as_bytes())?;
    write_atomic(&dir.join("oracle_p.csv"), p_csv.as_bytes())?;
    let _ = writeln!(
        out,
        "wrote oracle_tau.csv and oracle_p.csv ({} times) to {}",
        cfg.oracle.times.len(),
        dir.display()
    );
    Ok(EXIT_OK)
}

fn diagnose(dir: &Path, config: Option<&Path>, set: &[String], json: Option<&Path>, out: &mut String) -> Result<i32> {
    let cfg = if config.is_some() || !set.is_empty() {
        Some(RunConfig::load(config, set)?.diagnostics)
    } else {
        None
    };
    let outcome = output::diagnose_dir(dir, cfg.as_ref())?;
    for r in &outcome.reports {
        let _ = writeln!(out, "== {} (stored report {})", r.file, if r.matches_stored { "reproduced" } else { "differs" });
        out.push_str(&r.report.to_table());
    }
    for s in &outcome.skipped {
        let _ = writeln!(out, "== {s}: no density dump, skipped");
    }
    let worst = outcome.worst_status();
    let _ = writeln!(out, "worst status = {worst:?}");
    if let Some(path) = json {
        output::write_json(path, &outcome)?;
    }
    let reproduced = cfg.is_some() || outcome.reports.iter().all(|r| r.matches_stored);
    if !reproduced {
        let _ = writeln!(out, "stored reports could not be reproduced");
        return Ok(EXIT_DIAGNOSTICS);
    }
    Ok(status_code(worst))
}

fn nondim(params: &PhysicalParams, out: &mut String) -> Result<i32> {
    let g = if params.sigma_c == 0.0 {
        nondimensionalize_zero_threshold(params)?
    } else {
        nondimensionalize(params)?
    };
    let _ = writeln!(out, "rho' = {}", g.rho_p);
    let _ = writeln!(out, "alpha' = {}", g.alpha_p);
    let _ = writeln!(out, "G0' = {}", g.g0_p);
    let _ = writeln!(out, "mu' = {}", g.mu_p);
    let _ = writeln!(
        out,
        "scales: time {}, length {}, stress {}, velocity {}",
        g.scales.time,
        g.scales.length,
        g.scales.stress,
        g.scales.velocity()
    );
    Ok(EXIT_OK)
}
