//! Checks of conservation, positivity and the a priori bounds of the model
//! against computed states.
//!
//! Bounds are stated in scaled units (time in `T0`, stress in `σc`, or in
//! stress unit 1 when the threshold vanishes); every check converts the
//! native quantities before comparing. Hard checks (mass, positivity) abort a
//! run; soft checks pass within their tolerance, warn up to
//! `warn_factor` times it, and fail beyond.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SigmaGrid, SpaceTimeGrid};
use crate::kernel::smooth_piecewise_constant;
use crate::macro_flow::{h1_semi_sq, heat_step, l2_sq, MacroState};
use crate::meso::{compute_d, compute_tau, MesoRow, RowAccumulators};
use crate::model::{PhysicalParams, ReferenceScales};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Warn,
    Fail,
}

/// One check at one snapshot. `margin` is the signed distance to the bound
/// before tolerance (negative: the bound is exceeded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub severity: Severity,
    pub value: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub margin: f64,
    pub status: Status,
    pub t: f64,
    pub worst_y: Option<usize>,
}

/// Slack constants of the soft checks and tolerances of the hard ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub mass_tol: f64,
    pub positivity_tol: f64,
    pub clipped_mass_tol: f64,
    /// Relative slack on the sup-norm bound.
    pub linf_rel_tol: f64,
    /// Slack on the diffusion floor, in units of `η`.
    pub d_floor_slack: f64,
    /// `C` in `p ≥ p₋ − C (dσ + dt)`.
    pub comparison_c: f64,
    /// `C` in `|moment residual| ≤ C (dσ + dt)`.
    pub moment_c: f64,
    /// Relative slack on the Lipschitz bound of the momentum solve.
    pub f2_slack: f64,
    /// Relative slack on the gradient bound.
    pub gradient_slack: f64,
    pub warn_factor: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            mass_tol: 1e-10,
            positivity_tol: 1e-12,
            clipped_mass_tol: 1e-10,
            linf_rel_tol: 1e-6,
            d_floor_slack: 1e-3,
            comparison_c: 0.01,
            moment_c: 0.5,
            f2_slack: 0.05,
            gradient_slack: 0.0,
            warn_factor: 2.0,
        }
    }
}

impl DiagnosticsConfig {
    fn status(&self, severity: Severity, excess: f64, tol: f64) -> Status {
        if excess <= tol {
            Status::Pass
        } else if severity == Severity::Soft && excess <= self.warn_factor * tol {
            Status::Warn
        } else {
            Status::Fail
        }
    }

    /// `value ≤ bound + tol`.
    #[allow(clippy::too_many_arguments)]
    fn upper(&self, name: &str, severity: Severity, value: f64, bound: f64, tol: f64, t: f64, y: Option<usize>) -> CheckEntry {
        let excess = value - bound;
        CheckEntry {
            name: name.into(),
            severity,
            value,
            bound,
            tolerance: tol,
            margin: -excess,
            status: if value.is_nan() { Status::Fail } else { self.status(severity, excess, tol) },
            t,
            worst_y: y,
        }
    }

    /// `value ≥ bound − tol`.
    #[allow(clippy::too_many_arguments)]
    fn lower(&self, name: &str, severity: Severity, value: f64, bound: f64, tol: f64, t: f64, y: Option<usize>) -> CheckEntry {
        let excess = bound - value;
        CheckEntry {
            name: name.into(),
            severity,
            value,
            bound,
            tolerance: tol,
            margin: -excess,
            status: if value.is_nan() { Status::Fail } else { self.status(severity, excess, tol) },
            t,
            worst_y: y,
        }
    }
}

/// Checks run at one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub step: usize,
    pub t: f64,
    pub entries: Vec<CheckEntry>,
}

impl DiagnosticsReport {
    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn hard_failure(&self) -> Option<&CheckEntry> {
        self.entries
            .iter()
            .find(|e| e.severity == Severity::Hard && e.status == Status::Fail)
    }

    pub fn worst_status(&self) -> Status {
        self.entries.iter().map(|e| e.status).max().unwrap_or(Status::Pass)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("t = {:.6} (step {})\n", self.t, self.step);
        s.push_str(&format!(
            "  {:<22} {:<5} {:>24} {:>24} {:>10} {:>11} {:>6}\n",
            "check", "kind", "value", "bound", "tolerance", "margin", "status"
        ));
        for e in &self.entries {
            let y = e.worst_y.map(|y| format!(" y#{y}")).unwrap_or_default();
            s.push_str(&format!(
                "  {:<22} {:<5} {:>24.16e} {:>24.16e} {:>10.3e} {:>11.3e} {:>6}{}\n",
                e.name,
                match e.severity {
                    Severity::Hard => "hard",
                    Severity::Soft => "soft",
                },
                e.value,
                e.bound,
                e.tolerance,
                e.margin,
                match e.status {
                    Status::Pass => "pass",
                    Status::Warn => "WARN",
                    Status::Fail => "FAIL",
                },
                y
            ));
        }
        s
    }
}

/// Conversions from native to scaled units.
#[derive(Debug, Clone, Copy)]
struct Units {
    time: f64,
    stress: f64,
    alpha: f64,
}

impl Units {
    fn of(params: &PhysicalParams) -> Self {
        let s = ReferenceScales::of(params);
        Units {
            time: s.time,
            stress: s.stress,
            alpha: params.alpha / (s.stress * s.stress),
        }
    }
}

/// Mass, positivity and clipping of every row (hard checks).
pub fn check_mass_positivity(
    rows: &[MesoRow],
    acc: &[RowAccumulators],
    sigma: &SigmaGrid,
    t: f64,
    cfg: &DiagnosticsConfig,
) -> Vec<CheckEntry> {
    let (mut mass_err, mut mass_y) = (0.0, 0);
    let (mut min_p, mut min_y) = (f64::MAX, 0);
    for (j, r) in rows.iter().enumerate() {
        let e = (r.mass(sigma) - 1.0).abs();
        if e > mass_err || e.is_nan() {
            mass_err = e;
            mass_y = j;
        }
        let m = r.0.iter().fold(f64::MAX, |a, &p| a.min(p));
        if m < min_p {
            min_p = m;
            min_y = j;
        }
    }
    let (mut pre, mut pre_y) = (f64::MAX, 0);
    let mut clipped = 0.0;
    for (j, a) in acc.iter().enumerate() {
        if a.min_before_clip < pre {
            pre = a.min_before_clip;
            pre_y = j;
        }
        clipped += a.clipped_mass;
    }
    let mut out = vec![
        cfg.upper("mass", Severity::Hard, mass_err, 0.0, cfg.mass_tol, t, Some(mass_y)),
        cfg.lower("positivity", Severity::Hard, min_p, 0.0, cfg.positivity_tol, t, Some(min_y)),
    ];
    if !acc.is_empty() {
        out.push(cfg.lower(
            "positivity_before_clip",
            Severity::Hard,
            pre.min(min_p),
            0.0,
            cfg.positivity_tol,
            t,
            Some(pre_y),
        ));
        out.push(cfg.upper("clipped_mass", Severity::Hard, clipped, 0.0, cfg.clipped_mass_tol, t, None));
    }
    out
}

/// `max p ≤ ‖p0‖∞ + √(α t/π)` in scaled units.
pub fn linf_bound_scaled(p0_sup_scaled: f64, alpha_scaled: f64, t_scaled: f64) -> f64 {
    p0_sup_scaled + (alpha_scaled * t_scaled / PI).sqrt()
}

pub fn check_linf_bound(
    rows: &[MesoRow],
    p0_sup: f64,
    params: &PhysicalParams,
    t: f64,
    cfg: &DiagnosticsConfig,
) -> CheckEntry {
    let u = Units::of(params);
    let (mut sup, mut y) = (0.0, 0);
    for (j, r) in rows.iter().enumerate() {
        let s = r.sup();
        if s > sup {
            sup = s;
            y = j;
        }
    }
    let bound = linf_bound_scaled(p0_sup * u.stress, u.alpha, t / u.time);
    cfg.upper("linf_bound", Severity::Soft, sup * u.stress, bound, cfg.linf_rel_tol * bound, t, Some(y))
}

/// `min_y D ≥ (η/2) e^{-t}` in scaled units.
pub fn check_d_floor(
    rows: &[MesoRow],
    eta: f64,
    params: &PhysicalParams,
    sigma: &SigmaGrid,
    t: f64,
    cfg: &DiagnosticsConfig,
) -> CheckEntry {
    let u = Units::of(params);
    let d_scale = u.time / (u.stress * u.stress);
    let (mut min_d, mut y) = (f64::MAX, 0);
    for (j, r) in rows.iter().enumerate() {
        let d = compute_d(r, sigma, params) * d_scale;
        if d < min_d {
            min_d = d;
            y = j;
        }
    }
    let floor = 0.5 * eta * (-t / u.time).exp();
    cfg.lower("d_floor", Severity::Soft, min_d, floor, cfg.d_floor_slack * eta, t, Some(y))
}

/// Damped Gaussian convolution of the initial densities bounding the
/// solution from below.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSolution {
    pub t: f64,
    pub rows: Vec<MesoRow>,
}

/// `p₋ = e^{-t/T0} p0 ⋆ N(ξ, 2 ∫₀ᵗ D ds)` per row, with `ξ = ∫₀ᵗ b ds`.
pub fn compute_sub_solution(
    p0: &[MesoRow],
    xi: &[f64],
    accumulated_d: &[f64],
    t: f64,
    params: &PhysicalParams,
    sigma: &SigmaGrid,
) -> SubSolution {
    let decay = (-t / params.t0).exp();
    let rows = p0
        .iter()
        .zip(xi.iter().zip(accumulated_d))
        .map(|(row, (&x, &d))| {
            let mut v = smooth_piecewise_constant(sigma, &row.0, x, (2.0 * d).max(0.0).sqrt());
            v.iter_mut().for_each(|p| *p *= decay);
            MesoRow(v)
        })
        .collect();
    SubSolution { t, rows }
}

/// `p ≥ p₋ − C (dσ + dt)` pointwise, and the diffusion floor re-derived from
/// the exterior mass of `p₋`.
#[allow(clippy::too_many_arguments)]
pub fn check_comparison(
    rows: &[MesoRow],
    sub: &SubSolution,
    eta: f64,
    params: &PhysicalParams,
    sigma: &SigmaGrid,
    dt: f64,
    t: f64,
    cfg: &DiagnosticsConfig,
) -> Vec<CheckEntry> {
    let u = Units::of(params);
    let h = sigma.d_sigma() / u.stress + dt / u.time;
    let (mut gap, mut y) = (f64::MAX, 0);
    let (mut floor_min, mut floor_y) = (f64::MAX, 0);
    for (j, (r, s)) in rows.iter().zip(&sub.rows).enumerate() {
        let g = r.0.iter().zip(&s.0).fold(f64::MAX, |m, (p, q)| m.min(p - q)) * u.stress;
        if g < gap {
            gap = g;
            y = j;
        }
        let f = u.alpha * s.exterior_mass(sigma);
        if f < floor_min {
            floor_min = f;
            floor_y = j;
        }
    }
    let floor = 0.5 * eta * (-t / u.time).exp();
    vec![
        cfg.lower("comparison", Severity::Soft, gap, 0.0, cfg.comparison_c * h, t, Some(y)),
        cfg.lower(
            "sub_solution_floor",
            Severity::Soft,
            floor_min,
            floor,
            cfg.d_floor_slack * eta,
            t,
            Some(floor_y),
        ),
    ]
}

/// Residual of `∂t τ + (τ − ∫_{|σ|≤σc} σ p)/T0 = b` between two consecutive
/// states (backward difference at the later one), per row, in scaled units.
pub fn moment_residuals(
    tau_prev: &[f64],
    rows: &[MesoRow],
    shear: &[f64],
    dt: f64,
    params: &PhysicalParams,
    sigma: &SigmaGrid,
) -> Vec<f64> {
    let u = Units::of(params);
    rows.iter()
        .zip(tau_prev.iter().zip(shear))
        .map(|(r, (&tau0, &b))| {
            let tau1 = compute_tau(r, sigma);
            let inner = r.interior_moment(sigma);
            let res = (tau1 - tau0) / dt + (tau1 - inner) / params.t0 - b;
            res.abs() * u.time / u.stress
        })
        .collect()
}

pub fn check_moment_identity(
    max_residual: f64,
    params: &PhysicalParams,
    sigma: &SigmaGrid,
    dt: f64,
    t: f64,
    worst_y: Option<usize>,
    cfg: &DiagnosticsConfig,
) -> CheckEntry {
    let u = Units::of(params);
    let h = sigma.d_sigma() / u.stress + dt / u.time;
    cfg.upper("moment_identity", Severity::Soft, max_residual, 0.0, cfg.moment_c * h, t, worst_y)
}

/// `(2/η) e^T (‖p0‖∞ (1/2 + T) + α T^{3/2}/√π)`, scaled units.
pub fn gradient_bound(eta: f64, p0_sup: f64, alpha: f64, horizon: f64) -> f64 {
    2.0 / eta * horizon.exp() * (p0_sup * (0.5 + horizon) + alpha / PI.sqrt() * horizon.powf(1.5))
}

pub fn check_gradient_bound(
    acc: &[RowAccumulators],
    p0_sup: f64,
    eta: f64,
    params: &PhysicalParams,
    t: f64,
    cfg: &DiagnosticsConfig,
) -> CheckEntry {
    let u = Units::of(params);
    let factor = u.stress.powi(3) / u.time;
    let (mut worst, mut y) = (0.0, 0);
    for (j, a) in acc.iter().enumerate() {
        let v = a.gradient_energy * factor;
        if v > worst {
            worst = v;
            y = j;
        }
    }
    let bound = gradient_bound(eta, p0_sup * u.stress, u.alpha, t / u.time);
    cfg.upper("gradient_bound", Severity::Soft, worst, bound, cfg.gradient_slack * bound, t, Some(y))
}

/// Everything needed to check one snapshot of a coupled run.
#[derive(Debug, Clone, Copy)]
pub struct SnapshotView<'a> {
    pub step: usize,
    pub t: f64,
    pub rows: &'a [MesoRow],
    pub acc: &'a [RowAccumulators],
    pub p0: &'a [MesoRow],
    pub eta: f64,
    pub params: &'a PhysicalParams,
    pub sigma: &'a SigmaGrid,
    pub dt: f64,
    /// Largest moment-identity residual since the previous snapshot, with its row.
    pub moment_residual: Option<(f64, usize)>,
}

/// Runs the full per-snapshot check set.
pub fn snapshot_report(view: &SnapshotView<'_>, cfg: &DiagnosticsConfig) -> DiagnosticsReport {
    let t = view.t;
    let p0_sup = view.p0.iter().fold(0.0, |m: f64, r| m.max(r.sup()));
    let mut entries = check_mass_positivity(view.rows, view.acc, view.sigma, t, cfg);
    entries.push(check_linf_bound(view.rows, p0_sup, view.params, t, cfg));
    entries.push(check_d_floor(view.rows, view.eta, view.params, view.sigma, t, cfg));
    let xi: Vec<f64> = view.acc.iter().map(|a| a.shear).collect();
    let dint: Vec<f64> = view.acc.iter().map(|a| a.diffusion).collect();
    let sub = compute_sub_solution(view.p0, &xi, &dint, t, view.params, view.sigma);
    entries.extend(check_comparison(
        view.rows,
        &sub,
        view.eta,
        view.params,
        view.sigma,
        view.dt,
        t,
        cfg,
    ));
    let (res, y) = view.moment_residual.map_or((0.0, None), |(r, y)| (r, Some(y)));
    entries.push(check_moment_identity(res, view.params, view.sigma, view.dt, t, y, cfg));
    if view.eta > 0.0 {
        entries.push(check_gradient_bound(view.acc, p0_sup, view.eta, view.params, t, cfg));
    }
    DiagnosticsReport {
        step: view.step,
        t,
        entries,
    }
}

/// Result of [`measure_f2_lipschitz`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzMeasurement {
    pub horizon: f64,
    /// `‖v‖_{L²(0,T;H¹)}`.
    pub response: f64,
    /// `‖τ1 − τ2‖_{L∞(0,T;L²)}`.
    pub forcing: f64,
    pub ratio: f64,
    /// `2 √T / μ`.
    pub bound: f64,
}

impl LipschitzMeasurement {
    pub fn entry(&self, cfg: &DiagnosticsConfig) -> CheckEntry {
        cfg.upper(
            "f2_lipschitz",
            Severity::Soft,
            self.ratio,
            self.bound,
            cfg.f2_slack * self.bound,
            self.horizon,
            None,
        )
    }
}

/// Empirical Lipschitz ratio of the momentum solve: both stress histories
/// drive the same solver from zero data and zero wall velocity; the
/// response is the difference of the velocities.
pub fn measure_f2_lipschitz(
    tau1: &dyn Fn(f64, f64) -> f64,
    tau2: &dyn Fn(f64, f64) -> f64,
    params: &PhysicalParams,
    space: &SpaceTimeGrid,
) -> Result<LipschitzMeasurement> {
    let ys = space.interior_nodes();
    let dy = space.dy();
    let sample = |f: &dyn Fn(f64, f64) -> f64, t: f64| -> Vec<f64> { ys.iter().map(|&y| f(t, y)).collect() };
    let mut forcing = 0.0f64;
    let mut u1 = MacroState::zeros(space.n_y);
    let mut u2 = MacroState::zeros(space.n_y);
    let mut response = 0.0;
    for n in 0..=space.n_steps() {
        let t = space.time(n);
        let (a, b) = (sample(tau1, t), sample(tau2, t));
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        forcing = forcing.max(l2_sq(&diff, dy).sqrt());
        if n == 0 {
            continue;
        }
        u1 = heat_step(&u1, &a, 0.0, params, space.dt, space, true)?;
        u2 = heat_step(&u2, &b, 0.0, params, space.dt, space, true)?;
        let v: Vec<f64> = u1.u.iter().zip(&u2.u).map(|(x, y)| x - y).collect();
        response += (l2_sq(&v, dy) + h1_semi_sq(&v, dy)) * space.dt;
    }
    if forcing == 0.0 {
        return Err(Error::Diagnostic("identical stress fields: the Lipschitz ratio is undefined".into()));
    }
    let response = response.sqrt();
    Ok(LipschitzMeasurement {
        horizon: space.horizon,
        response,
        forcing,
        ratio: response / forcing,
        bound: 2.0 * space.horizon.sqrt() / params.mu,
    })
}
