//! Lifted momentum equation across the gap.
//!
//! With `U = u + V(t) y / L`, the velocity perturbation solves
//! `ρ ∂t u = μ ∂yy u + ∂y τ − ρ V̇ y / L` with `u = 0` at both walls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::model::PhysicalParams;
use crate::tridiag;

/// Lifted velocity at the interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroState {
    pub u: Vec<f64>,
}

impl MacroState {
    pub fn zeros(n_y: usize) -> Self {
        MacroState { u: vec![0.0; n_y] }
    }

    /// Full velocity `U = u + V y / L` at the interior nodes.
    pub fn full_velocity(&self, wall_velocity: f64, grid: &SpaceTimeGrid) -> Vec<f64> {
        self.u
            .iter()
            .enumerate()
            .map(|(j, u)| u + wall_velocity * grid.y(j) / grid.length)
            .collect()
    }
}

/// `∂y f` at interior nodes of a field known only there: centred differences
/// inside, second-order one-sided at the first and last node.
pub fn interior_gradient(f: &[f64], dy: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 3, "need at least three nodes");
    let mut g = vec![0.0; n];
    // differenced against the wall-side value so constants give exactly zero
    g[0] = (4.0 * (f[1] - f[0]) - (f[2] - f[0])) / (2.0 * dy);
    for j in 1..n - 1 {
        g[j] = (f[j + 1] - f[j - 1]) / (2.0 * dy);
    }
    g[n - 1] = (4.0 * (f[n - 1] - f[n - 2]) - (f[n - 1] - f[n - 3])) / (2.0 * dy);
    g
}

/// `∂y u` of the lifted velocity at all `n_y + 2` nodes (walls included),
/// using the homogeneous wall values.
pub fn gradient(u: &MacroState, grid: &SpaceTimeGrid) -> Vec<f64> {
    let n = u.u.len();
    let dy = grid.dy();
    let at = |k: usize| -> f64 {
        if k == 0 || k == n + 1 {
            0.0
        } else {
            u.u[k - 1]
        }
    };
    let mut g = vec![0.0; n + 2];
    g[0] = (4.0 * at(1) - at(2)) / (2.0 * dy);
    for (k, gk) in g.iter_mut().enumerate().take(n + 1).skip(1) {
        *gk = (at(k + 1) - at(k - 1)) / (2.0 * dy);
    }
    g[n + 1] = (at(n - 1) - 4.0 * at(n)) / (2.0 * dy);
    g
}

/// Local advection speed `b = G0 (∂y u + V/L)` at the interior nodes.
pub fn shear_speed(u: &MacroState, wall_velocity: f64, params: &PhysicalParams, grid: &SpaceTimeGrid) -> Vec<f64> {
    let g = gradient(u, grid);
    g[1..=u.u.len()]
        .iter()
        .map(|du| params.g0 * (du + wall_velocity / params.length))
        .collect()
}

/// One backward-Euler step. `wall_acceleration` is the mean of `V̇` over the
/// step; `tau` is the end-of-step stress at interior nodes.
pub fn heat_step(
    u: &MacroState,
    tau: &[f64],
    wall_acceleration: f64,
    params: &PhysicalParams,
    dt: f64,
    grid: &SpaceTimeGrid,
    allow_unproven: bool,
) -> Result<MacroState> {
    if params.mu == 0.0 && params.sigma_c > 0.0 && !allow_unproven {
        return Err(Error::Config(
            "mu = 0 with a positive threshold is outside the proven regime; set allow_unproven to run it".into(),
        ));
    }
    let n = grid.n_y;
    assert_eq!(u.u.len(), n);
    assert_eq!(tau.len(), n);
    let dy = grid.dy();
    let dtau = interior_gradient(tau, dy);
    let inertia = params.rho / dt;
    let k = params.mu / (dy * dy);
    let lower = vec![-k; n];
    let upper = vec![-k; n];
    let diag = vec![inertia + 2.0 * k; n];
    let mut rhs: Vec<f64> = (0..n)
        .map(|j| inertia * u.u[j] + dtau[j] - params.rho * wall_acceleration * grid.y(j) / grid.length)
        .collect();
    tridiag::solve_in_place(&lower, &diag, &upper, &mut rhs);
    Ok(MacroState { u: rhs })
}

/// `∫ u² dy` (interior nodes, walls vanish).
pub fn l2_sq(u: &[f64], dy: f64) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>() * dy
}

/// `∫ |∂y u|² dy` from face differences including both wall faces.
pub fn h1_semi_sq(u: &[f64], dy: f64) -> f64 {
    let n = u.len();
    let at = |k: usize| if k == 0 || k == n + 1 { 0.0 } else { u[k - 1] };
    (0..=n).map(|k| (at(k + 1) - at(k)).powi(2)).sum::<f64>() / dy
}
