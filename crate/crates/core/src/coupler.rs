//! Coupled macro/meso time stepping.
//!
//! Each macro step solves the fixed point `u = F₂(F₁(u))` by Picard
//! iteration: the shear speed of the current velocity iterate advances every
//! meso row from the start-of-step state (in parallel over `y`), the new mean
//! stresses drive one backward-Euler momentum step, and the loop stops once
//! the relative change of the velocity drops below the tolerance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{self, DiagnosticsConfig, DiagnosticsReport, SnapshotView, Status};
use crate::error::{Error, Result};
use crate::grid::{SigmaGrid, SpaceTimeGrid};
use crate::macro_flow::{heat_step, l2_sq, shear_speed, MacroState};
use crate::maxwell::{integrate_linear, MaxwellTrajectory};
use crate::meso::{advance_row, compute_d, compute_tau, HlOptions, MesoRow, RowAccumulators, TRUNCATION_TOL};
use crate::model::{compute_eta, InitialData, PhysicalParams, ReferenceScales, ShearProtocol};

/// Velocity norms below this are treated as zero by the convergence test.
const ABS_FLOOR: f64 = 1e-12;
/// Changes below this fraction of the velocity norm are rounding noise and
/// are left out of the contraction estimate.
const NOISE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardSettings {
    /// Relative discrete-L² change of the velocity at which to stop.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardSettings {
    fn default() -> Self {
        PicardSettings { tol: 1e-8, max_iter: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PicardStats {
    /// Applications of the fixed-point map.
    pub iterations: usize,
    /// Largest measured `‖u^{k+1} − u^k‖ / ‖u^k − u^{k−1}‖`, if any pair was
    /// above rounding noise.
    pub ratio: Option<f64>,
    /// Relative change at the last iteration.
    pub last_change: f64,
}

/// Iterates `apply` from `start` until the velocity settles. `apply` maps a
/// velocity iterate to the next one plus whatever else the caller needs from
/// the accepted iterate.
pub fn picard<E, F>(start: &MacroState, t: f64, settings: &PicardSettings, mut apply: F) -> Result<(MacroState, E, PicardStats)>
where
    F: FnMut(&MacroState) -> Result<(MacroState, E)>,
{
    let mut current = start.clone();
    let mut prev_diff: Option<f64> = None;
    let mut stats = PicardStats::default();
    loop {
        let (next, extra) = apply(&current)?;
        stats.iterations += 1;
        let diff = diff_norm(&next.u, &current.u);
        let norm = l2_sq(&next.u, 1.0).sqrt();
        let scale = norm.max(ABS_FLOOR);
        stats.last_change = diff / scale;
        if let Some(p) = prev_diff {
            if p > NOISE_FLOOR * scale && diff > NOISE_FLOOR * scale {
                let r = diff / p;
                stats.ratio = Some(stats.ratio.map_or(r, |m: f64| m.max(r)));
            }
        }
        if diff <= settings.tol * scale {
            return Ok((next, extra, stats));
        }
        if stats.iterations >= settings.max_iter {
            return Err(Error::NonContraction {
                t,
                iterations: stats.iterations,
                last_change: stats.last_change,
                ratio: stats.ratio.unwrap_or(f64::NAN),
            });
        }
        prev_diff = Some(diff);
        current = next;
    }
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Everything that defines a coupled run except its initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub params: PhysicalParams,
    pub protocol: ShearProtocol,
    pub sigma: SigmaGrid,
    pub space: SpaceTimeGrid,
    pub picard: PicardSettings,
    pub hl: HlOptions,
    pub allow_unproven: bool,
}

impl Problem {
    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("problem serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Running extrema over every macro step of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub max_mass_error: f64,
    pub max_mass_error_y: usize,
    pub min_before_clip: f64,
    pub clipped_mass: f64,
    /// Largest density seen, native units.
    pub max_density: f64,
    /// Smallest diffusion coefficient seen, native units, and where.
    pub min_d: f64,
    pub min_d_t: f64,
    pub min_d_y: usize,
    pub max_picard_iterations: usize,
    pub max_picard_ratio: f64,
    pub total_picard_iterations: usize,
    /// Largest moment-identity residual, scaled units, and where.
    pub max_moment_residual: f64,
    pub max_moment_residual_t: f64,
    pub max_moment_residual_y: usize,
    pub truncation_warning: bool,
}

impl RunStats {
    fn new() -> Self {
        RunStats {
            max_mass_error: 0.0,
            max_mass_error_y: 0,
            min_before_clip: f64::MAX,
            clipped_mass: 0.0,
            max_density: 0.0,
            min_d: f64::MAX,
            min_d_t: 0.0,
            min_d_y: 0,
            max_picard_iterations: 0,
            max_picard_ratio: 0.0,
            total_picard_iterations: 0,
            max_moment_residual: 0.0,
            max_moment_residual_t: 0.0,
            max_moment_residual_y: 0,
            truncation_warning: false,
        }
    }
}

/// Solution at one macro time node. Stresses and diffusion coefficients are
/// always recomputed from the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledState {
    pub step: usize,
    pub velocity: MacroState,
    pub rows: Vec<MesoRow>,
    pub acc: Vec<RowAccumulators>,
    /// Shear speed held over the step that produced this state.
    pub last_shear: Vec<f64>,
    pub stats: RunStats,
    /// Largest moment residual since the last snapshot, with its row.
    pub window_moment: Option<(f64, usize)>,
}

impl CoupledState {
    pub fn initial(data: &InitialData) -> Self {
        let n = data.p0.len();
        CoupledState {
            step: 0,
            velocity: MacroState { u: data.u0.clone() },
            rows: data.p0.iter().cloned().map(MesoRow).collect(),
            acc: vec![RowAccumulators::new(); n],
            last_shear: vec![0.0; n],
            stats: RunStats::new(),
            window_moment: None,
        }
    }

    pub fn tau(&self, sigma: &SigmaGrid) -> Vec<f64> {
        self.rows.iter().map(|r| compute_tau(r, sigma)).collect()
    }

    pub fn d_field(&self, sigma: &SigmaGrid, params: &PhysicalParams) -> Vec<f64> {
        self.rows.iter().map(|r| compute_d(r, sigma, params)).collect()
    }

    pub fn masses(&self, sigma: &SigmaGrid) -> Vec<f64> {
        self.rows.iter().map(|r| r.mass(sigma)).collect()
    }
}

/// Advances the coupled system by one macro step.
pub fn coupled_step(state: &CoupledState, problem: &Problem) -> Result<(CoupledState, PicardStats)> {
    let space = &problem.space;
    let (t0, t1) = (space.time(state.step), space.time(state.step + 1));
    let v1 = problem.protocol.velocity(t1);
    let vdot = problem.protocol.mean_rate(t0, t1);
    let (velocity, (rows, acc, shear), stats) = picard(&state.velocity, t1, &problem.picard, |uk| {
        let b = shear_speed(uk, v1, &problem.params, space);
        let advanced: Vec<(MesoRow, RowAccumulators)> = state
            .rows
            .par_iter()
            .zip(state.acc.par_iter())
            .zip(b.par_iter())
            .map(|((row, acc), &bj)| advance_row(row, acc, bj, space.dt, &problem.sigma, &problem.params, &problem.hl))
            .collect::<Result<_>>()?;
        let (rows, acc): (Vec<_>, Vec<_>) = advanced.into_iter().unzip();
        let tau: Vec<f64> = rows.iter().map(|r| compute_tau(r, &problem.sigma)).collect();
        let next = heat_step(&state.velocity, &tau, vdot, &problem.params, space.dt, space, problem.allow_unproven)?;
        Ok((next, (rows, acc, b)))
    })?;
    let next = CoupledState {
        step: state.step + 1,
        velocity,
        rows,
        acc,
        last_shear: shear,
        stats: state.stats,
        window_moment: state.window_moment,
    };
    Ok((next, stats))
}

/// Data fixed at `t = 0` that the diagnostics compare against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunContext {
    pub p0: Vec<MesoRow>,
    pub eta: f64,
}

impl RunContext {
    pub fn new(data: &InitialData, problem: &Problem) -> Self {
        let stress = ReferenceScales::of(&problem.params).stress;
        let alpha = problem.params.alpha / (stress * stress);
        RunContext {
            p0: data.p0.iter().cloned().map(MesoRow).collect(),
            eta: compute_eta(&data.p0, &problem.sigma, alpha).eta,
        }
    }

    pub fn p0_sup(&self) -> f64 {
        self.p0.iter().fold(0.0, |m, r| m.max(r.sup()))
    }
}

/// Snapshot cadence and stopping point of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub struct RunOptions {
    /// Steps between snapshots (0: only the first and last).
    pub snapshot_every: usize,
    /// Steps between checkpoints (0: none).
    pub checkpoint_every: usize,
    /// Last step to compute; defaults to the horizon.
    pub stop_step: Option<usize>,
    pub diagnostics: DiagnosticsConfig,
}


/// What a run hands to its observer at a snapshot.
pub struct Snapshot<'a> {
    pub problem: &'a Problem,
    pub state: &'a CoupledState,
    pub t: f64,
    pub report: &'a DiagnosticsReport,
}

/// Receives snapshots, checkpoints and the state at a hard failure.
pub trait Observer {
    fn snapshot(&mut self, _snap: &Snapshot<'_>) -> Result<()> {
        Ok(())
    }
    fn checkpoint(&mut self, _cp: &Checkpoint) -> Result<()> {
        Ok(())
    }
    fn failure(&mut self, _problem: &Problem, _state: &CoupledState, _error: &Error) {}
}

/// Observer that keeps nothing.
pub struct Discard;

impl Observer for Discard {}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: CoupledState,
    pub reports: Vec<DiagnosticsReport>,
}

impl RunOutcome {
    pub fn worst_status(&self) -> Status {
        self.reports.iter().map(|r| r.worst_status()).max().unwrap_or(Status::Pass)
    }
}

fn record_step(stats: &mut RunStats, state: &CoupledState, problem: &Problem, picard_stats: &PicardStats) {
    let t = problem.space.time(state.step);
    for (j, r) in state.rows.iter().enumerate() {
        let e = (r.mass(&problem.sigma) - 1.0).abs();
        if e > stats.max_mass_error {
            stats.max_mass_error = e;
            stats.max_mass_error_y = j;
        }
        stats.max_density = stats.max_density.max(r.sup());
        let d = compute_d(r, &problem.sigma, &problem.params);
        if d < stats.min_d {
            stats.min_d = d;
            stats.min_d_t = t;
            stats.min_d_y = j;
        }
    }
    stats.min_before_clip = state.acc.iter().fold(stats.min_before_clip, |m, a| m.min(a.min_before_clip));
    stats.clipped_mass = state.acc.iter().map(|a| a.clipped_mass).sum();
    if !stats.truncation_warning && state.acc.iter().any(|a| a.edge_mass > TRUNCATION_TOL) {
        log::warn!("density reached the truncated sigma boundary by t = {t}");
        stats.truncation_warning = true;
    }
    stats.max_picard_iterations = stats.max_picard_iterations.max(picard_stats.iterations);
    stats.total_picard_iterations += picard_stats.iterations;
    if let Some(r) = picard_stats.ratio {
        stats.max_picard_ratio = stats.max_picard_ratio.max(r);
    }
}

fn hard_check(state: &CoupledState, problem: &Problem, cfg: &DiagnosticsConfig) -> Result<()> {
    let t = problem.space.time(state.step);
    for (j, r) in state.rows.iter().enumerate() {
        let m = r.mass(&problem.sigma);
        if !((m - 1.0).abs() <= cfg.mass_tol) {
            return Err(Error::Diagnostic(format!(
                "mass of row {j} is {m:.17} at step {} (t = {t})",
                state.step
            )));
        }
    }
    Ok(())
}

/// Advances `state` to the horizon (or `opts.stop_step`), checking hard
/// invariants every step and running the diagnostics at each snapshot.
pub fn run(
    problem: &Problem,
    ctx: &RunContext,
    state: CoupledState,
    opts: &RunOptions,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    let n_steps = problem.space.n_steps();
    let stop = opts.stop_step.unwrap_or(n_steps).min(n_steps);
    let cfg = &opts.diagnostics;
    let mut state = state;
    let mut reports = Vec::new();
    let is_snapshot = |step: usize| step == 0 || step == n_steps || (opts.snapshot_every > 0 && step.is_multiple_of(opts.snapshot_every));

    let emit = |state: &mut CoupledState, reports: &mut Vec<DiagnosticsReport>, observer: &mut dyn Observer| -> Result<()> {
        let t = problem.space.time(state.step);
        let report = diagnostics::snapshot_report(
            &SnapshotView {
                step: state.step,
                t,
                rows: &state.rows,
                acc: &state.acc,
                p0: &ctx.p0,
                eta: ctx.eta,
                params: &problem.params,
                sigma: &problem.sigma,
                dt: problem.space.dt,
                moment_residual: state.window_moment,
            },
            cfg,
        );
        for e in report.entries.iter().filter(|e| e.status != Status::Pass) {
            log::warn!("t = {t}: check {} {:?} (value {:e}, bound {:e})", e.name, e.status, e.value, e.bound);
        }
        if let Some(e) = report.hard_failure() {
            return Err(Error::Diagnostic(format!(
                "{} failed at step {} (t = {t}, y index {:?}): value {:e}",
                e.name, state.step, e.worst_y, e.value
            )));
        }
        observer.snapshot(&Snapshot {
            problem,
            state,
            t,
            report: &report,
        })?;
        state.window_moment = None;
        reports.push(report);
        Ok(())
    };

    if state.step == 0 {
        let mut stats = state.stats;
        record_step(&mut stats, &state, problem, &PicardStats::default());
        state.stats = stats;
        if let Err(e) = hard_check(&state, problem, cfg).and_then(|_| emit(&mut state, &mut reports, observer)) {
            observer.failure(problem, &state, &e);
            return Err(e);
        }
    }
    while state.step < stop {
        let tau_prev = state.tau(&problem.sigma);
        let (mut next, picard_stats) = match coupled_step(&state, problem) {
            Ok(v) => v,
            Err(e) => {
                observer.failure(problem, &state, &e);
                return Err(e);
            }
        };
        let residuals =
            diagnostics::moment_residuals(&tau_prev, &next.rows, &next.last_shear, problem.space.dt, &problem.params, &problem.sigma);
        let t = problem.space.time(next.step);
        let mut stats = next.stats;
        for (j, &r) in residuals.iter().enumerate() {
            if r > stats.max_moment_residual {
                stats.max_moment_residual = r;
                stats.max_moment_residual_t = t;
                stats.max_moment_residual_y = j;
            }
            if next.window_moment.is_none_or(|(w, _)| r > w) {
                next.window_moment = Some((r, j));
            }
        }
        record_step(&mut stats, &next, problem, &picard_stats);
        next.stats = stats;
        if let Err(e) = hard_check(&next, problem, cfg) {
            observer.failure(problem, &next, &e);
            return Err(e);
        }
        state = next;
        if is_snapshot(state.step) {
            if let Err(e) = emit(&mut state, &mut reports, observer) {
                observer.failure(problem, &state, &e);
                return Err(e);
            }
        }
        if opts.checkpoint_every > 0 && state.step.is_multiple_of(opts.checkpoint_every) {
            observer.checkpoint(&Checkpoint::new(problem, ctx, &state))?;
        }
    }
    Ok(RunOutcome { state, reports })
}

/// Format version of [`Checkpoint`].
pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete restart data: problem, `t = 0` context and current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: String,
    pub problem: Problem,
    pub context: RunContext,
    pub state: CoupledState,
}

impl Checkpoint {
    pub fn new(problem: &Problem, ctx: &RunContext, state: &CoupledState) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            fingerprint: problem.fingerprint(),
            problem: problem.clone(),
            context: ctx.clone(),
            state: state.clone(),
        }
    }

    /// Checks version, fingerprints and shapes against `problem` (which may
    /// differ only in its horizon) and re-validates the state: masses and the
    /// comparison lower bound must still hold.
    pub fn verify(&self, problem: &Problem, cfg: &DiagnosticsConfig) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.fingerprint != self.problem.fingerprint() {
            return Err(Error::Checkpoint("stored fingerprint does not match the stored problem".into()));
        }
        let mut same = problem.clone();
        same.space.horizon = self.problem.space.horizon;
        if same.fingerprint() != self.fingerprint {
            return Err(Error::Checkpoint(
                "checkpoint was written for different parameters, grids or protocol".into(),
            ));
        }
        let t = problem.space.time(self.state.step);
        if t > problem.space.horizon + 0.5 * problem.space.dt {
            return Err(Error::Checkpoint(format!(
                "checkpoint time {t} lies beyond the requested horizon {}",
                problem.space.horizon
            )));
        }
        let n_y = problem.space.n_y;
        let n_s = problem.sigma.n_cells();
        let s = &self.state;
        if s.rows.len() != n_y
            || s.acc.len() != n_y
            || s.last_shear.len() != n_y
            || s.velocity.u.len() != n_y
            || self.context.p0.len() != n_y
            || s.rows.iter().chain(&self.context.p0).any(|r| r.0.len() != n_s)
        {
            return Err(Error::Checkpoint("field shapes do not match the grids".into()));
        }
        hard_check(s, problem, cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let xi: Vec<f64> = s.acc.iter().map(|a| a.shear).collect();
        let dint: Vec<f64> = s.acc.iter().map(|a| a.diffusion).collect();
        let sub = diagnostics::compute_sub_solution(&self.context.p0, &xi, &dint, t, &problem.params, &problem.sigma);
        let checks = diagnostics::check_comparison(
            &s.rows,
            &sub,
            self.context.eta,
            &problem.params,
            &problem.sigma,
            problem.space.dt,
            t,
            cfg,
        );
        if let Some(c) = checks.iter().find(|c| c.status == Status::Fail) {
            return Err(Error::Checkpoint(format!(
                "restart state violates {} (value {:e}, bound {:e})",
                c.name, c.value, c.bound
            )));
        }
        Ok(())
    }
}

/// Zero-threshold fast path: the linear `(u, τ)` system with the initial
/// stresses of the given densities.
pub fn run_maxwell(problem: &Problem, data: &InitialData, record_every: usize) -> Result<MaxwellTrajectory> {
    if problem.params.sigma_c != 0.0 {
        return Err(Error::Config(format!(
            "the Maxwell path needs sigma_c = 0, got {}",
            problem.params.sigma_c
        )));
    }
    let tau0: Vec<f64> = data
        .p0
        .iter()
        .map(|r| compute_tau(&MesoRow(r.clone()), &problem.sigma))
        .collect();
    integrate_linear(
        &problem.params,
        &problem.protocol,
        &problem.space,
        &data.u0,
        &tau0,
        &problem.picard,
        record_every,
    )
}
