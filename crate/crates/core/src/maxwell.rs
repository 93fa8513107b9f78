//! Closed forms of the zero-threshold (Maxwell) reduction and the linear
//! `(u, τ)` integrator used as its reference.
//!
//! With no threshold every block relaxes, `D ≡ α` and the density is an
//! explicit heat-kernel expression in the accumulated shear
//! `χ(t) = ∫₀ᵗ b ds`:
//!
//! ```text
//! p(t) = e^{-t} p0 ⋆ G_{αt}(· − χ(t)) + ∫₀ᵗ e^{-r} G_{αr}(· − χ(t) + χ(t − r)) dr
//! ```
//!
//! and the mean stress obeys `∂t τ + τ = b`. Functions taking a history are in
//! non-dimensional units (`T0 = 1`).

use serde::{Deserialize, Serialize};

use crate::coupler::{picard, PicardSettings, PicardStats};
use crate::error::Result;
use crate::grid::{SigmaGrid, SpaceTimeGrid};
use crate::kernel::{point_source_cell_averages, smooth_piecewise_constant};
use crate::macro_flow::{heat_step, shear_speed, MacroState};
use crate::meso::MesoRow;
use crate::model::{PhysicalParams, ShearProtocol};

/// Shear-rate history `b(s)` at one spatial node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShearHistory {
    /// `b(s) = gain · V(s) + offset`.
    Protocol {
        gain: f64,
        offset: f64,
        protocol: ShearProtocol,
    },
    /// `b(s) = values[n]` on `[n dt, (n+1) dt)`, zero afterwards.
    Steps { dt: f64, values: Vec<f64> },
}

impl ShearHistory {
    pub fn constant(b: f64) -> Self {
        ShearHistory::Protocol {
            gain: 0.0,
            offset: b,
            protocol: ShearProtocol::Zero,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            ShearHistory::Protocol { gain, offset, protocol } => gain * protocol.velocity(t) + offset,
            ShearHistory::Steps { dt, values } => {
                let n = (t / dt).floor();
                if n < 0.0 {
                    0.0
                } else {
                    values.get(n as usize).copied().unwrap_or(0.0)
                }
            }
        }
    }

    /// `χ(t) = ∫₀ᵗ b ds`, exact.
    pub fn accumulated(&self, t: f64) -> f64 {
        match self {
            ShearHistory::Protocol { gain, offset, protocol } => gain * protocol.integral(0.0, t) + offset * t,
            ShearHistory::Steps { dt, values } => {
                let mut acc = 0.0;
                for (n, v) in values.iter().enumerate() {
                    let a = n as f64 * dt;
                    if a >= t {
                        break;
                    }
                    acc += v * ((n + 1) as f64 * dt).min(t) - v * a;
                }
                acc
            }
        }
    }

    /// `∫₀ᵗ e^{-(t-s)} b(s) ds`, exact.
    pub fn relaxed(&self, t: f64) -> f64 {
        match self {
            ShearHistory::Protocol { gain, offset, protocol } => {
                gain * protocol.relaxed_integral(0.0, t, 1.0) - offset * (-t).exp_m1()
            }
            ShearHistory::Steps { dt, values } => {
                let mut acc = 0.0;
                for (n, v) in values.iter().enumerate() {
                    let a = n as f64 * dt;
                    if a >= t {
                        break;
                    }
                    let e = ((n + 1) as f64 * dt).min(t);
                    acc += v * (-(t - e)).exp() * -(-(e - a)).exp_m1();
                }
                acc
            }
        }
    }
}

/// `τ(t) = τ0 e^{-t} + ∫₀ᵗ e^{-(t-s)} b(s) ds`.
pub fn maxwell_tau(tau0: f64, history: &ShearHistory, t: f64) -> f64 {
    tau0 * (-t).exp() + history.relaxed(t)
}

/// Number of memory-integral intervals used by [`maxwell_p`].
pub const MEMORY_INTERVALS: usize = 400;

/// Cell averages of the explicit zero-threshold density at time `t`.
///
/// The first term is an exact cell-averaged convolution of the
/// piecewise-constant `p0`. The memory integral runs over the age
/// `r = t − s` on the graded nodes `r_k = t (k/M)²`, each interval weighted by
/// its exact `e^{-r}` mass and a kernel frozen at the interval midpoint. The
/// kernel stays a cell-averaged Gaussian down to vanishing width, so the
/// `r → 0` end needs no special casing. Mass is `1` up to truncation; the row
/// is not renormalised.
pub fn maxwell_p(p0: &MesoRow, history: &ShearHistory, t: f64, grid: &SigmaGrid, alpha: f64) -> MesoRow {
    maxwell_p_with(p0, history, t, grid, alpha, MEMORY_INTERVALS)
}

pub fn maxwell_p_with(
    p0: &MesoRow,
    history: &ShearHistory,
    t: f64,
    grid: &SigmaGrid,
    alpha: f64,
    intervals: usize,
) -> MesoRow {
    if t <= 0.0 {
        return p0.clone();
    }
    let chi_t = history.accumulated(t);
    let decay = (-t).exp();
    let mut out = smooth_piecewise_constant(grid, &p0.0, chi_t, (2.0 * alpha * t).sqrt());
    out.iter_mut().for_each(|v| *v *= decay);
    let m = intervals.max(1) as f64;
    for k in 0..intervals.max(1) {
        let r0 = t * (k as f64 / m).powi(2);
        let r1 = t * ((k + 1) as f64 / m).powi(2);
        let weight = (-r0).exp() * -(-(r1 - r0)).exp_m1();
        let r = 0.5 * (r0 + r1);
        let centre = chi_t - history.accumulated(t - r);
        let kernel = point_source_cell_averages(grid, centre, (2.0 * alpha * r).sqrt());
        for (o, g) in out.iter_mut().zip(kernel) {
            *o += weight * g;
        }
    }
    MesoRow(out)
}

/// Recorded solution of the linear zero-threshold system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxwellTrajectory {
    pub times: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    /// Shear speed held over each step, `shear[n][j]` on `[t_n, t_{n+1}]`.
    pub shear: Vec<Vec<f64>>,
    pub max_picard_iterations: usize,
}

impl MaxwellTrajectory {
    /// Shear history of node `j` for [`maxwell_p`].
    pub fn history(&self, j: usize, dt: f64) -> ShearHistory {
        ShearHistory::Steps {
            dt,
            values: self.shear.iter().map(|row| row[j]).collect(),
        }
    }
}

/// Integrates `ρ ∂t u = μ ∂yy u + ∂y τ − ρ V̇ y/L`, `∂t τ + τ/T0 = b` with
/// backward Euler for `u` and the exact integrating factor for `τ` at the
/// end-of-step shear speed, recording every `record_every` steps.
pub fn integrate_linear(
    params: &PhysicalParams,
    protocol: &ShearProtocol,
    space: &SpaceTimeGrid,
    u0: &[f64],
    tau0: &[f64],
    settings: &PicardSettings,
    record_every: usize,
) -> Result<MaxwellTrajectory> {
    let dt = space.dt;
    let keep = (-dt / params.t0).exp();
    let gain = -params.t0 * (-dt / params.t0).exp_m1();
    let mut u = MacroState { u: u0.to_vec() };
    let mut tau = tau0.to_vec();
    let mut out = MaxwellTrajectory {
        times: vec![0.0],
        u: vec![u.u.clone()],
        tau: vec![tau.clone()],
        shear: Vec::with_capacity(space.n_steps()),
        max_picard_iterations: 0,
    };
    for n in 0..space.n_steps() {
        let (t0, t1) = (space.time(n), space.time(n + 1));
        let v1 = protocol.velocity(t1);
        let vdot = protocol.mean_rate(t0, t1);
        let (next, (tau_next, b), stats): (MacroState, (Vec<f64>, Vec<f64>), PicardStats) =
            picard(&u, t1, settings, |uk| {
                let b = shear_speed(uk, v1, params, space);
                let tau_k: Vec<f64> = tau.iter().zip(&b).map(|(s, bj)| keep * s + gain * bj).collect();
                let u_next = heat_step(&u, &tau_k, vdot, params, dt, space, true)?;
                Ok((u_next, (tau_k, b)))
            })?;
        out.max_picard_iterations = out.max_picard_iterations.max(stats.iterations);
        u = next;
        tau = tau_next;
        out.shear.push(b);
        if record_every > 0 && (n + 1) % record_every == 0 {
            out.times.push(t1);
            out.u.push(u.u.clone());
            out.tau.push(tau.clone());
        }
    }
    Ok(out)
}

/// Reference solution on a grid four times finer in `y` and `t`, sampled
/// back on the production nodes and times.
pub fn maxwell_reference_run(
    params: &PhysicalParams,
    protocol: &ShearProtocol,
    space: &SpaceTimeGrid,
    u0: &dyn Fn(f64) -> f64,
    tau0: &dyn Fn(f64) -> f64,
    settings: &PicardSettings,
    record_every: usize,
) -> Result<MaxwellTrajectory> {
    const REFINE: usize = 4;
    let fine = SpaceTimeGrid::new(
        REFINE * (space.n_y + 1) - 1,
        space.length,
        space.dt / REFINE as f64,
        space.horizon,
    )?;
    let ys = fine.interior_nodes();
    let u_fine: Vec<f64> = ys.iter().map(|&y| u0(y)).collect();
    let tau_fine: Vec<f64> = ys.iter().map(|&y| tau0(y)).collect();
    let run = integrate_linear(params, protocol, &fine, &u_fine, &tau_fine, settings, REFINE * record_every)?;
    let coarse = |f: &Vec<f64>| -> Vec<f64> { (0..space.n_y).map(|j| f[REFINE * (j + 1) - 1]).collect() };
    Ok(MaxwellTrajectory {
        times: run.times,
        u: run.u.iter().map(coarse).collect(),
        tau: run.tau.iter().map(coarse).collect(),
        shear: run
            .shear
            .chunks(REFINE)
            .map(|c| {
                let avg: Vec<f64> = (0..fine.n_y)
                    .map(|j| c.iter().map(|r| r[j]).sum::<f64>() / c.len() as f64)
                    .collect();
                coarse(&avg)
            })
            .collect(),
        max_picard_iterations: run.max_picard_iterations,
    })
}
