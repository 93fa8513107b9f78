//! On-disk artifacts: schema-versioned CSV snapshots, sparse density dumps,
//! the JSON run summary, checkpoints and the reader used by `diagnose`.
//!
//! Floats are written with 17 significant digits so every value read back is
//! bit-identical to the one written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupler::{Checkpoint, CoupledState, Observer, Problem, RunContext, RunStats, Snapshot};
use crate::diagnostics::{self, DiagnosticsConfig, DiagnosticsReport, SnapshotView, Status};
use crate::error::{Error, Result};
use crate::meso::{compute_d, MesoRow, RowAccumulators};
use crate::model::ValidationReport;

pub const SCHEMA_VERSION: u32 = 1;

/// Largest density dump (values per file) the writer accepts.
pub const MAX_DUMP_VALUES: usize = 50_000_000;

pub const SUMMARY_FILE: &str = "summary.json";
pub const FAILURE_FILE: &str = "failure.json";

pub fn snapshot_name(step: usize) -> String {
    format!("snapshot_{step:06}.csv")
}

pub fn density_name(step: usize) -> String {
    format!("density_{step:06}.csv")
}

pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint_{step:06}.json")
}

pub(crate) fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

const SNAPSHOT_COLUMNS: &str =
    "y,U,tau,D,mass,shear,diffusion,gradient_energy,clipped_mass,min_before_clip,edge_mass,last_shear";

/// Field snapshot of a coupled run.
pub fn snapshot_csv(problem: &Problem, state: &CoupledState, config_json: &str) -> String {
    let space = &problem.space;
    let t = space.time(state.step);
    let velocity = state.velocity.full_velocity(problem.protocol.velocity(t), space);
    let mut s = String::new();
    let _ = writeln!(s, "# hl-couette snapshot v{SCHEMA_VERSION}");
    let _ = writeln!(s, "# fingerprint {}", problem.fingerprint());
    let _ = writeln!(s, "# step {}", state.step);
    let _ = writeln!(s, "# t {}", num(t));
    match state.window_moment {
        Some((r, y)) => {
            let _ = writeln!(s, "# moment_residual {} {y}", num(r));
        }
        None => {
            let _ = writeln!(s, "# moment_residual none");
        }
    }
    let _ = writeln!(s, "# config {config_json}");
    let _ = writeln!(s, "{SNAPSHOT_COLUMNS}");
    for (j, (row, a)) in state.rows.iter().zip(&state.acc).enumerate() {
        let fields = [
            space.y(j),
            velocity[j],
            crate::meso::compute_tau(row, &problem.sigma),
            compute_d(row, &problem.sigma, &problem.params),
            row.mass(&problem.sigma),
            a.shear,
            a.diffusion,
            a.gradient_energy,
            a.clipped_mass,
            a.min_before_clip,
            a.edge_mass,
            state.last_shear[j],
        ];
        let line: Vec<String> = fields.iter().map(|&v| num(v)).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

/// Full `p(y, σ)` dump of one state.
pub fn density_csv(problem: &Problem, rows: &[MesoRow], step: usize) -> Result<String> {
    let n = rows.len() * problem.sigma.n_cells();
    if n > MAX_DUMP_VALUES {
        return Err(Error::Config(format!(
            "density dump of {n} values exceeds the limit of {MAX_DUMP_VALUES}"
        )));
    }
    let mut s = String::with_capacity(n * 64);
    let _ = writeln!(s, "# hl-couette density v{SCHEMA_VERSION}");
    let _ = writeln!(s, "# fingerprint {}", problem.fingerprint());
    let _ = writeln!(s, "# step {step}");
    let _ = writeln!(s, "# t {}", num(problem.space.time(step)));
    let _ = writeln!(s, "y_index,y,sigma,p");
    let centers = problem.sigma.centers();
    for (j, row) in rows.iter().enumerate() {
        let y = num(problem.space.y(j));
        for (c, p) in centers.iter().zip(&row.0) {
            let _ = writeln!(s, "{j},{y},{},{}", num(*c), num(*p));
        }
    }
    Ok(s)
}

/// Parsed snapshot CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFile {
    pub fingerprint: String,
    pub step: usize,
    pub t: f64,
    pub moment_residual: Option<(f64, usize)>,
    pub y: Vec<f64>,
    pub velocity: Vec<f64>,
    pub tau: Vec<f64>,
    pub d: Vec<f64>,
    pub acc: Vec<RowAccumulators>,
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn header_map(path: &Path, text: &str, kind: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    let expected = format!("# hl-couette {kind} v{SCHEMA_VERSION}");
    if first != expected {
        return Err(parse_err(path, format!("expected `{expected}`, found `{first}`")));
    }
    for line in lines.take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        let (k, v) = body.split_once(' ').unwrap_or((body, ""));
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#'))
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_f64(path: &Path, ln: usize, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| parse_err(path, format!("line {}: `{v}` is not a number", ln + 1)))
}

fn header_value<T: std::str::FromStr>(path: &Path, map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    map.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(path, format!("missing or malformed `{key}` header")))
}

pub fn parse_snapshot(path: &Path, text: &str) -> Result<SnapshotFile> {
    let head = header_map(path, text, "snapshot")?;
    let moment_residual = match head.get("moment_residual").map(String::as_str) {
        Some("none") | None => None,
        Some(v) => {
            let (r, y) = v
                .split_once(' ')
                .ok_or_else(|| parse_err(path, "malformed `moment_residual` header"))?;
            Some((
                parse_f64(path, 0, r)?,
                y.parse().map_err(|_| parse_err(path, "malformed `moment_residual` header"))?,
            ))
        }
    };
    let mut out = SnapshotFile {
        fingerprint: header_value(path, &head, "fingerprint")?,
        step: header_value(path, &head, "step")?,
        t: header_value(path, &head, "t")?,
        moment_residual,
        y: vec![],
        velocity: vec![],
        tau: vec![],
        d: vec![],
        acc: vec![],
    };
    for (ln, line) in data_lines(text) {
        let v = line
            .split(',')
            .map(|x| parse_f64(path, ln, x))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != 12 {
            return Err(parse_err(path, format!("line {}: expected 12 columns, found {}", ln + 1, v.len())));
        }
        out.y.push(v[0]);
        out.velocity.push(v[1]);
        out.tau.push(v[2]);
        out.d.push(v[3]);
        out.acc.push(RowAccumulators {
            shear: v[5],
            diffusion: v[6],
            gradient_energy: v[7],
            clipped_mass: v[8],
            min_before_clip: v[9],
            edge_mass: v[10],
        });
    }
    Ok(out)
}

/// Reads a density dump back into rows; shapes must match the problem.
pub fn parse_density(path: &Path, text: &str, problem: &Problem) -> Result<(String, usize, Vec<MesoRow>)> {
    let head = header_map(path, text, "density")?;
    let fingerprint: String = header_value(path, &head, "fingerprint")?;
    let step: usize = header_value(path, &head, "step")?;
    let (n_y, n_s) = (problem.space.n_y, problem.sigma.n_cells());
    let mut rows = vec![MesoRow(Vec::with_capacity(n_s)); n_y];
    for (ln, line) in data_lines(text) {
        let mut parts = line.split(',');
        let j: usize = parts
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| parse_err(path, format!("line {}: bad row index", ln + 1)))?;
        let p = parts
            .nth(2)
            .ok_or_else(|| parse_err(path, format!("line {}: expected 4 columns", ln + 1)))?;
        let row = rows
            .get_mut(j)
            .ok_or_else(|| parse_err(path, format!("line {}: row index {j} out of range", ln + 1)))?;
        row.0.push(parse_f64(path, ln, p)?);
    }
    if rows.iter().any(|r| r.0.len() != n_s) {
        return Err(parse_err(path, format!("expected {n_y} rows of {n_s} cells")));
    }
    Ok((fingerprint, step, rows))
}

/// Machine-readable summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub fingerprint: String,
    /// `"meso"` or `"maxwell"`.
    pub path: String,
    pub config: serde_json::Value,
    pub problem: Problem,
    pub diagnostics: DiagnosticsConfig,
    pub eta: f64,
    pub validation: Option<ValidationReport>,
    pub final_step: usize,
    pub final_time: f64,
    pub worst_status: Status,
    pub stats: Option<RunStats>,
    pub reports: Vec<DiagnosticsReport>,
    pub snapshot_files: Vec<String>,
    pub density_files: Vec<String>,
}

/// Observer writing snapshot, density, checkpoint and failure files.
pub struct RunWriter {
    pub dir: PathBuf,
    pub config_json: String,
    pub density_every: usize,
    pub final_step: usize,
    pub context: RunContext,
    pub snapshot_files: Vec<String>,
    pub density_files: Vec<String>,
}

impl RunWriter {
    pub fn new(dir: &Path, config_json: String, density_every: usize, final_step: usize, context: RunContext) -> Self {
        RunWriter {
            dir: dir.to_path_buf(),
            config_json,
            density_every,
            final_step,
            context,
            snapshot_files: vec![],
            density_files: vec![],
        }
    }

    fn wants_density(&self, step: usize) -> bool {
        step == 0 || step == self.final_step || (self.density_every > 0 && step.is_multiple_of(self.density_every))
    }
}

impl Observer for RunWriter {
    fn snapshot(&mut self, snap: &Snapshot<'_>) -> Result<()> {
        let step = snap.state.step;
        let name = snapshot_name(step);
        write_atomic(
            &self.dir.join(&name),
            snapshot_csv(snap.problem, snap.state, &self.config_json).as_bytes(),
        )?;
        self.snapshot_files.push(name);
        if self.wants_density(step) {
            let name = density_name(step);
            write_atomic(&self.dir.join(&name), density_csv(snap.problem, &snap.state.rows, step)?.as_bytes())?;
            self.density_files.push(name);
        }
        Ok(())
    }

    fn checkpoint(&mut self, cp: &Checkpoint) -> Result<()> {
        write_json(&self.dir.join(checkpoint_name(cp.state.step)), cp)
    }

    fn failure(&mut self, problem: &Problem, state: &CoupledState, error: &crate::Error) {
        #[derive(Serialize)]
        struct Failure<'a> {
            error: String,
            t: f64,
            checkpoint: Checkpoint,
            config: &'a str,
        }
        let dump = Failure {
            error: error.to_string(),
            t: problem.space.time(state.step),
            checkpoint: Checkpoint::new(problem, &self.context, state),
            config: &self.config_json,
        };
        match write_json(&self.dir.join(FAILURE_FILE), &dump) {
            Ok(()) => log::error!("state at failure written to {}", self.dir.join(FAILURE_FILE).display()),
            Err(e) => log::error!("could not write the failure dump: {e}"),
        }
    }
}

/// One recomputed snapshot report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rediagnosed {
    pub file: String,
    pub report: DiagnosticsReport,
    /// Whether the stored report for the same step is bit-identical.
    pub matches_stored: bool,
}

/// Result of re-running the checks over a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOutcome {
    pub fingerprint: String,
    pub reports: Vec<Rediagnosed>,
    /// Snapshots without a density dump, which carry only field data.
    pub skipped: Vec<String>,
}

impl DiagnoseOutcome {
    pub fn worst_status(&self) -> Status {
        self.reports.iter().map(|r| r.report.worst_status()).max().unwrap_or(Status::Pass)
    }
}

/// Recomputes the diagnostics of every snapshot in `dir` that has a density
/// dump. Every file must carry the summary's fingerprint.
pub fn diagnose_dir(dir: &Path, cfg: Option<&DiagnosticsConfig>) -> Result<DiagnoseOutcome> {
    let summary: RunSummary = read_json(&dir.join(SUMMARY_FILE))?;
    if summary.path != "meso" {
        return Err(Error::Config(format!("`{}` run directories carry no density data", summary.path)));
    }
    let problem = &summary.problem;
    let fingerprint = problem.fingerprint();
    if fingerprint != summary.fingerprint {
        return Err(Error::Checkpoint("summary fingerprint does not match its problem".into()));
    }
    let cfg = cfg.copied().unwrap_or(summary.diagnostics);
    let load_density = |name: &str| -> Result<Vec<MesoRow>> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (fp, _, rows) = parse_density(&path, &text, problem)?;
        if fp != fingerprint {
            return Err(Error::Checkpoint(format!("{} belongs to a different run", path.display())));
        }
        Ok(rows)
    };
    let p0 = load_density(&density_name(0))?;
    let mut out = DiagnoseOutcome {
        fingerprint: fingerprint.clone(),
        reports: vec![],
        skipped: vec![],
    };
    for name in &summary.snapshot_files {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let snap = parse_snapshot(&path, &text)?;
        if snap.fingerprint != fingerprint {
            return Err(Error::Checkpoint(format!("{} belongs to a different run", path.display())));
        }
        let dname = density_name(snap.step);
        if !summary.density_files.contains(&dname) {
            out.skipped.push(name.clone());
            continue;
        }
        let rows = load_density(&dname)?;
        let report = diagnostics::snapshot_report(
            &SnapshotView {
                step: snap.step,
                t: snap.t,
                rows: &rows,
                acc: &snap.acc,
                p0: &p0,
                eta: summary.eta,
                params: &problem.params,
                sigma: &problem.sigma,
                dt: problem.space.dt,
                moment_residual: snap.moment_residual,
            },
            &cfg,
        );
        let matches_stored = summary.reports.contains(&report);
        out.reports.push(Rediagnosed {
            file: name.clone(),
            report,
            matches_stored,
        });
    }
    Ok(out)
}
