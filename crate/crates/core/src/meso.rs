//! Single-point Hébraud–Lequeux solver on the truncated stress axis.
//!
//! One step of
//!
//! ```text
//! ∂t p + b ∂σ p − D(p) ∂σσ p + 1{|σ|>σc} p / T0 = (D(p)/α) δ0,   D(p) = (α/T0) ∫_{|σ|>σc} p
//! ```
//!
//! is an IMEX splitting on a finite-volume mesh: explicit first-order upwind
//! advection and explicit relaxation sink, re-injection of exactly the removed
//! mass into the two cells adjacent to `σ = 0`, then a backward-Euler diffusion
//! solve with `D` frozen at the start of the step. Both mesh ends are
//! zero-flux, so the discrete mass is conserved to rounding.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SigmaGrid;
use crate::model::PhysicalParams;
use crate::tridiag;

/// Density below which a pre-clip value is treated as a scheme failure.
pub const INSTABILITY_TOL: f64 = 1e-8;
/// Mass allowed in the two outermost cells on either side before the
/// truncation monitor warns.
pub const TRUNCATION_TOL: f64 = 1e-8;

/// Stress density of one spatial node, as cell averages on a [`SigmaGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MesoRow(pub Vec<f64>);

impl MesoRow {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn mass(&self, grid: &SigmaGrid) -> f64 {
        grid.integrate(&self.0)
    }

    /// Mass of the relaxing blocks, `∫_{|σ|>σc} p`.
    pub fn exterior_mass(&self, grid: &SigmaGrid) -> f64 {
        let inner = grid.interior_cells();
        let outside: f64 = self.0[..inner.start].iter().chain(&self.0[inner.end..]).sum();
        outside * grid.d_sigma()
    }

    /// `∫_{|σ|≤σc} σ p`.
    pub fn interior_moment(&self, grid: &SigmaGrid) -> f64 {
        grid.interior_cells()
            .map(|i| grid.center(i) * self.0[i])
            .sum::<f64>()
            * grid.d_sigma()
    }

    pub fn sup(&self) -> f64 {
        self.0.iter().fold(0.0, |m, &p| m.max(p))
    }

    /// Mass in the two outermost cells at each end of the mesh.
    pub fn edge_mass(&self, grid: &SigmaGrid) -> f64 {
        let n = self.0.len();
        (self.0[0] + self.0[1] + self.0[n - 2] + self.0[n - 1]) * grid.d_sigma()
    }

    /// `∫ |∂σ p|²` with one-sided differences across interior faces.
    pub fn gradient_energy(&self, grid: &SigmaGrid) -> f64 {
        let h = grid.d_sigma();
        self.0.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / h
    }
}

/// Diffusion coefficient `D(p) = (α/T0) ∫_{|σ|>σc} p`.
pub fn compute_d(row: &MesoRow, grid: &SigmaGrid, params: &PhysicalParams) -> f64 {
    params.alpha / params.t0 * row.exterior_mass(grid)
}

/// Mean stress `τ = ∫ σ p`.
pub fn compute_tau(row: &MesoRow, grid: &SigmaGrid) -> f64 {
    row.0
        .iter()
        .enumerate()
        .map(|(i, p)| grid.center(i) * p)
        .sum::<f64>()
        * grid.d_sigma()
}

/// Scheme switches. Both factors exist only to inject faults when exercising
/// the diagnostics; `sink_scale` multiplies the relaxation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HlOptions {
    pub sink_scale: f64,
    /// Multiplies the advection speed actually applied (the accumulated shear
    /// still records the requested one). Fault injection only.
    pub advection_scale: f64,
}

impl Default for HlOptions {
    fn default() -> Self {
        HlOptions {
            sink_scale: 1.0,
            advection_scale: 1.0,
        }
    }
}

/// Per-step bookkeeping returned by [`hl_step`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    /// Frozen diffusion coefficient used for the step.
    pub d_coeff: f64,
    /// Mass removed by the sink (and re-injected at the origin).
    pub relaxed_mass: f64,
    /// Smallest density before clipping.
    pub min_before_clip: f64,
    /// Mass removed by clipping negative densities.
    pub clipped_mass: f64,
}

/// Smallest number of equal sub-steps keeping `|b| dt/dσ + dt/T0 <= 1`.
pub fn substeps_needed(b: f64, dt: f64, grid: &SigmaGrid, params: &PhysicalParams, opts: &HlOptions) -> usize {
    let load = (b * opts.advection_scale).abs() * dt / grid.d_sigma() + opts.sink_scale * dt / params.t0;
    (load.ceil() as usize).max(1)
}

/// One IMEX step of the Hébraud–Lequeux equation with advection speed `b`.
pub fn hl_step(
    row: &MesoRow,
    b: f64,
    dt: f64,
    grid: &SigmaGrid,
    params: &PhysicalParams,
    opts: &HlOptions,
) -> Result<(MesoRow, StepInfo)> {
    let n = grid.n_cells();
    let h = grid.d_sigma();
    let p = &row.0;
    debug_assert_eq!(p.len(), n);

    let b = b * opts.advection_scale;
    let courant = b.abs() * dt / h;
    let relaxation = opts.sink_scale * dt / params.t0;
    if courant + relaxation > 1.0 + 1e-12 {
        return Err(Error::Cfl {
            courant,
            relaxation,
            dt,
        });
    }
    let d_coeff = compute_d(row, grid, params);

    let mut q = p.clone();
    // upwind fluxes through interior faces; both mesh ends are closed
    if b > 0.0 {
        for i in 0..n - 1 {
            let moved = courant * p[i];
            q[i] -= moved;
            q[i + 1] += moved;
        }
    } else if b < 0.0 {
        for i in 0..n - 1 {
            let moved = courant * p[i + 1];
            q[i + 1] -= moved;
            q[i] += moved;
        }
    }

    let inner = grid.interior_cells();
    let mut relaxed = 0.0;
    for i in (0..inner.start).chain(inner.end..n) {
        let removed = relaxation * p[i];
        q[i] -= removed;
        relaxed += removed;
    }
    let o = grid.origin();
    q[o - 1] += 0.5 * relaxed;
    q[o] += 0.5 * relaxed;

    if d_coeff > 0.0 {
        let r = d_coeff * dt / (h * h);
        let lower = vec![-r; n];
        let upper = vec![-r; n];
        let mut diag = vec![1.0 + 2.0 * r; n];
        diag[0] = 1.0 + r;
        diag[n - 1] = 1.0 + r;
        tridiag::solve_in_place(&lower, &diag, &upper, &mut q);
    }

    let mut min_before_clip = f64::INFINITY;
    let mut worst = 0;
    let mut clipped = 0.0;
    for (i, v) in q.iter_mut().enumerate() {
        if *v < min_before_clip {
            min_before_clip = *v;
            worst = i;
        }
        if *v < 0.0 {
            clipped -= *v * h;
            *v = 0.0;
        }
    }
    if min_before_clip < -INSTABILITY_TOL {
        return Err(Error::Instability {
            cell: worst,
            value: min_before_clip,
        });
    }

    Ok((
        MesoRow(q),
        StepInfo {
            d_coeff,
            relaxed_mass: relaxed * h,
            min_before_clip,
            clipped_mass: clipped,
        },
    ))
}

/// Running integrals carried alongside one row.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RowAccumulators {
    /// `∫ b dt`: accumulated shear displacement of the stress axis.
    pub shear: f64,
    /// `∫ D dt`.
    pub diffusion: f64,
    /// `∫ ∫ |∂σ p|² dσ dt`.
    pub gradient_energy: f64,
    /// Total clipped mass.
    pub clipped_mass: f64,
    /// Smallest pre-clip density seen.
    pub min_before_clip: f64,
    /// Largest mass seen in the outermost cells.
    pub edge_mass: f64,
}

impl RowAccumulators {
    pub fn new() -> Self {
        RowAccumulators {
            min_before_clip: f64::MAX,
            ..Default::default()
        }
    }
}

/// Advances a row over `dt` with constant `b`, sub-cycling to satisfy the
/// explicit stability limit.
pub fn advance_row(
    row: &MesoRow,
    acc: &RowAccumulators,
    b: f64,
    dt: f64,
    grid: &SigmaGrid,
    params: &PhysicalParams,
    opts: &HlOptions,
) -> Result<(MesoRow, RowAccumulators)> {
    let m = substeps_needed(b, dt, grid, params, opts);
    let ds = dt / m as f64;
    let mut acc = *acc;
    let mut cur = row.clone();
    for _ in 0..m {
        let (next, info) = hl_step(&cur, b, ds, grid, params, opts)?;
        acc.shear += b * ds;
        acc.diffusion += info.d_coeff * ds;
        acc.clipped_mass += info.clipped_mass;
        acc.min_before_clip = acc.min_before_clip.min(info.min_before_clip);
        acc.gradient_energy += next.gradient_energy(grid) * ds;
        acc.edge_mass = acc.edge_mass.max(next.edge_mass(grid));
        cur = next;
    }
    Ok((cur, acc))
}

/// Uniform sup-norm bound `‖p0‖∞ + √(α t / π)` (non-dimensional units).
pub fn linf_bound(p0_sup: f64, alpha: f64, t: f64) -> f64 {
    p0_sup + (alpha * t / PI).sqrt()
}

/// Time series produced by [`hl_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct HlTrajectory {
    pub times: Vec<f64>,
    pub d: Vec<f64>,
    pub tau: Vec<f64>,
    pub mass: Vec<f64>,
    pub sup: Vec<f64>,
    pub final_row: MesoRow,
    /// Rows at the requested snapshot step indices.
    pub snapshots: Vec<(f64, MesoRow)>,
    pub accumulators: RowAccumulators,
    pub truncation_warning: bool,
}

/// Integrates one row over `b_series.len()` steps of `dt`; `b_series[n]` is
/// held over `[n dt, (n+1) dt]`. Snapshots are kept every `snapshot_every`
/// steps (0 disables them).
///
/// In non-dimensional units the sup-norm bound is enforced as a hard check.
pub fn hl_solve(
    p0: &MesoRow,
    b_series: &[f64],
    dt: f64,
    grid: &SigmaGrid,
    params: &PhysicalParams,
    opts: &HlOptions,
    snapshot_every: usize,
) -> Result<HlTrajectory> {
    let p0_sup = p0.sup();
    let check_bound = params.is_nondimensional() && params.sigma_c > 0.0;
    let mut traj = HlTrajectory {
        times: vec![0.0],
        d: vec![compute_d(p0, grid, params)],
        tau: vec![compute_tau(p0, grid)],
        mass: vec![p0.mass(grid)],
        sup: vec![p0_sup],
        final_row: p0.clone(),
        snapshots: if snapshot_every > 0 { vec![(0.0, p0.clone())] } else { vec![] },
        accumulators: RowAccumulators::new(),
        truncation_warning: false,
    };
    let mut row = p0.clone();
    let mut acc = RowAccumulators::new();
    for (n, &b) in b_series.iter().enumerate() {
        let (next, next_acc) = advance_row(&row, &acc, b, dt, grid, params, opts)?;
        row = next;
        acc = next_acc;
        let t = (n + 1) as f64 * dt;
        let sup = row.sup();
        if check_bound {
            let bound = linf_bound(p0_sup, params.alpha, t);
            if sup > bound + 1e-6 * (1.0 + bound) {
                return Err(Error::BoundViolation(format!(
                    "sup p = {sup:.12} exceeds {bound:.12} at t = {t}"
                )));
            }
        }
        if !traj.truncation_warning && acc.edge_mass > TRUNCATION_TOL {
            log::warn!(
                "mass {:.3e} reached the truncated sigma boundary at t = {t}",
                acc.edge_mass
            );
            traj.truncation_warning = true;
        }
        traj.times.push(t);
        traj.d.push(compute_d(&row, grid, params));
        traj.tau.push(compute_tau(&row, grid));
        traj.mass.push(row.mass(grid));
        traj.sup.push(sup);
        if snapshot_every > 0 && (n + 1) % snapshot_every == 0 {
            traj.snapshots.push((t, row.clone()));
        }
    }
    traj.final_row = row;
    traj.accumulators = acc;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DensityPreset;

    fn gaussian(grid: &SigmaGrid) -> MesoRow {
        let mut v = DensityPreset::standard_gaussian().cell_averages(grid, 0.0).unwrap();
        let m = grid.integrate(&v);
        v.iter_mut().for_each(|p| *p /= m);
        MesoRow(v)
    }

    fn uniform(grid: &SigmaGrid, lo: f64, hi: f64) -> MesoRow {
        MesoRow(DensityPreset::Uniform { low: lo, high: hi }.cell_averages(grid, 0.0).unwrap())
    }

    #[test]
    fn d_vanishes_for_support_inside_threshold() {
        let g = SigmaGrid::standard();
        assert_eq!(compute_d(&uniform(&g, -1.0, 1.0), &g, &PhysicalParams::unit()), 0.0);
    }

    #[test]
    fn d_uniform_on_four() {
        let g = SigmaGrid::standard();
        assert!((compute_d(&uniform(&g, -2.0, 2.0), &g, &PhysicalParams::unit()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn d_gaussian_tail() {
        let g = SigmaGrid::new(8.0, 1024, 1.0).unwrap();
        // reference: erfc(1/sqrt 2)
        let d = compute_d(&gaussian(&g), &g, &PhysicalParams::unit());
        assert!((d - 0.317_310_507_862_914_1).abs() < 1e-12);
    }

    #[test]
    fn tau_examples() {
        let g = SigmaGrid::standard();
        assert!(compute_tau(&gaussian(&g), &g).abs() < 1e-12);
        assert!((compute_tau(&uniform(&g, 0.0, 2.0), &g) - 1.0).abs() < 1e-14);
        // narrow hat around 0.5: cells [0.5 - 2h, 0.5 + 2h] with weights 1,2,2,1... symmetric
        let h = g.d_sigma();
        let mut hat = vec![0.0; g.n_cells()];
        let c = g.origin() + 16; // cell whose left edge is 0.5
        hat[c - 2] = 1.0;
        hat[c - 1] = 2.0;
        hat[c] = 2.0;
        hat[c + 1] = 1.0;
        let m: f64 = hat.iter().sum::<f64>() * h;
        hat.iter_mut().for_each(|p| *p /= m);
        assert!((compute_tau(&MesoRow(hat), &g) - 0.5).abs() < h * h);
    }

    #[test]
    fn step_conserves_mass_and_positivity() {
        let g = SigmaGrid::standard();
        let p = PhysicalParams::unit();
        let mut row = gaussian(&g);
        for k in 0..200 {
            let b = if k % 3 == 0 { -7.0 } else { 12.0 };
            let before = row.mass(&g);
            let (next, info) = hl_step(&row, b, 2e-3, &g, &p, &HlOptions::default()).unwrap();
            assert!((next.mass(&g) - before).abs() < 1e-13);
            assert!(info.min_before_clip >= -1e-12);
            row = next;
        }
        assert!((row.mass(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_shear_preserves_even_symmetry() {
        let g = SigmaGrid::standard();
        let p = PhysicalParams::unit();
        let mut row = uniform(&g, -2.0, 2.0);
        for _ in 0..300 {
            row = hl_step(&row, 0.0, 1e-3, &g, &p, &HlOptions::default()).unwrap().0;
        }
        assert!(compute_tau(&row, &g).abs() < 1e-12);
        let n = g.n_cells();
        for i in 0..n / 2 {
            assert!((row.0[i] - row.0[n - 1 - i]).abs() < 1e-13);
        }
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = SigmaGrid::standard();
        let err = hl_step(&gaussian(&g), 40.0, 1e-3, &g, &PhysicalParams::unit(), &HlOptions::default());
        assert!(matches!(err, Err(Error::Cfl { .. })));
        assert_eq!(substeps_needed(40.0, 1e-3, &g, &PhysicalParams::unit(), &HlOptions::default()), 2);
        let (r, _) = advance_row(
            &gaussian(&g),
            &RowAccumulators::new(),
            40.0,
            1e-3,
            &g,
            &PhysicalParams::unit(),
            &HlOptions::default(),
        )
        .unwrap();
        assert!((r.mass(&g) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn relaxed_mass_reinjected_at_origin() {
        let g = SigmaGrid::standard();
        let row = uniform(&g, 2.0, 3.0);
        let (next, info) = hl_step(&row, 0.0, 1e-3, &g, &PhysicalParams::unit(), &HlOptions::default()).unwrap();
        assert!((info.relaxed_mass - 1e-3).abs() < 1e-15);
        assert!((info.d_coeff - 1.0).abs() < 1e-15);
        assert!(next.0[g.origin()] > 0.0 && next.0[g.origin() - 1] > 0.0);
    }

    #[test]
    fn decoupled_solve_keeps_d_above_floor() {
        let g = SigmaGrid::standard();
        let p = PhysicalParams::unit();
        let row = uniform(&g, -2.0, 2.0);
        let eta = crate::model::compute_eta(std::slice::from_ref(&row.0), &g, 1.0).eta;
        let dt = 1e-3;
        let traj = hl_solve(&row, &vec![0.0; 1000], dt, &g, &p, &HlOptions::default(), 0).unwrap();
        assert!((traj.d[0] - 0.5).abs() < 1e-14);
        assert!(traj.d.windows(2).all(|w| w[1] <= w[0] + 1e-14));
        let floor = 0.5 * eta * (-1.0f64).exp();
        assert!(traj.d.iter().all(|&d| d >= floor));
        assert!(traj.mass.iter().all(|m| (m - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_point_mode_is_relabelled_forcing() {
        let g = SigmaGrid::standard();
        let p = PhysicalParams {
            g0: 2.5,
            ..PhysicalParams::unit()
        };
        let rate: Vec<f64> = (0..300).map(|n| (n as f64 * 0.01).sin()).collect();
        let b: Vec<f64> = rate.iter().map(|r| p.g0 * r).collect();
        let a = hl_solve(&gaussian(&g), &b, 1e-3, &g, &p, &HlOptions::default(), 0).unwrap();
        let b2: Vec<f64> = rate.iter().map(|r| r * p.g0).collect();
        let c = hl_solve(&gaussian(&g), &b2, 1e-3, &g, &p, &HlOptions::default(), 0).unwrap();
        assert_eq!(a.tau, c.tau);
    }
}
