//! Model parameters, wall-velocity protocols, scaling transforms and
//! initial-data validation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SigmaGrid, SpaceTimeGrid};
use crate::kernel::gaussian_interval_mass;

/// Dimensional constants of the coupled model.
///
/// The solvers accept any consistent unit system; the non-dimensional form is
/// the special case `t0 = length = sigma_c = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    /// Mass density.
    pub rho: f64,
    /// Macroscopic (regularising) viscosity.
    pub mu: f64,
    /// Elastic modulus.
    pub g0: f64,
    /// Mechanical fragility, in stress² units.
    pub alpha: f64,
    /// Relaxation time.
    pub t0: f64,
    /// Yield threshold.
    pub sigma_c: f64,
    /// Gap width.
    pub length: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams::unit()
    }
}

impl PhysicalParams {
    /// All-unit parameters.
    pub fn unit() -> Self {
        PhysicalParams {
            rho: 1.0,
            mu: 1.0,
            g0: 1.0,
            alpha: 1.0,
            t0: 1.0,
            sigma_c: 1.0,
            length: 1.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("g0", self.g0),
            ("alpha", self.alpha),
            ("t0", self.t0),
            ("length", self.length),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("mu", self.mu), ("sigma_c", self.sigma_c)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Whether the parameter regime is covered by the well-posedness theory:
    /// a positive threshold needs a positive viscosity; the zero-threshold
    /// (Maxwell) reduction is well posed for any `mu >= 0`.
    pub fn within_theory(&self) -> bool {
        self.sigma_c == 0.0 || self.mu > 0.0
    }

    pub fn is_nondimensional(&self) -> bool {
        self.t0 == 1.0 && self.length == 1.0 && (self.sigma_c == 1.0 || self.sigma_c == 0.0)
    }
}

/// Time, length and stress units used to scale the equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScales {
    pub time: f64,
    pub length: f64,
    pub stress: f64,
}

impl ReferenceScales {
    pub fn of(params: &PhysicalParams) -> Self {
        ReferenceScales {
            time: params.t0,
            length: params.length,
            stress: if params.sigma_c > 0.0 { params.sigma_c } else { 1.0 },
        }
    }

    pub fn velocity(&self) -> f64 {
        self.length / self.time
    }
}

/// Non-dimensional groups of the model together with the scales used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionlessParams {
    /// Reynolds-like number `ρ L² / (σc T0²)`.
    pub rho_p: f64,
    /// `α / σc²`.
    pub alpha_p: f64,
    /// `G0 / σc`.
    pub g0_p: f64,
    /// `μ / (T0 σc)`.
    pub mu_p: f64,
    pub scales: ReferenceScales,
    /// Whether the threshold was scaled to one (false on the zero-threshold path).
    pub unit_threshold: bool,
}

struct GroupFactors {
    rho: f64,
    alpha: f64,
    g0: f64,
    mu: f64,
}

impl GroupFactors {
    // Forward maps multiply by `rho` and divide by the others; the inverse
    // undoes exactly that with the same factor so round trips stay within 1 ulp.
    fn new(s: &ReferenceScales) -> Self {
        GroupFactors {
            rho: s.length * s.length / (s.stress * s.time * s.time),
            alpha: s.stress * s.stress,
            g0: s.stress,
            mu: s.time * s.stress,
        }
    }
}

fn scale_groups(params: &PhysicalParams, scales: ReferenceScales, unit_threshold: bool) -> DimensionlessParams {
    let f = GroupFactors::new(&scales);
    DimensionlessParams {
        rho_p: params.rho * f.rho,
        alpha_p: params.alpha / f.alpha,
        g0_p: params.g0 / f.g0,
        mu_p: params.mu / f.mu,
        scales,
        unit_threshold,
    }
}

/// Scales time by `T0`, space by `L` and stress by `σc`.
pub fn nondimensionalize(params: &PhysicalParams) -> Result<DimensionlessParams> {
    params.check()?;
    if params.sigma_c == 0.0 {
        return Err(Error::ScalingUndefined);
    }
    Ok(scale_groups(params, ReferenceScales::of(params), true))
}

/// Zero-threshold reduction: only time and space are scaled (stress unit 1).
pub fn nondimensionalize_zero_threshold(params: &PhysicalParams) -> Result<DimensionlessParams> {
    params.check()?;
    if params.sigma_c != 0.0 {
        return Err(Error::InvalidParams(format!(
            "zero-threshold scaling requested with sigma_c = {}",
            params.sigma_c
        )));
    }
    Ok(scale_groups(params, ReferenceScales::of(params), false))
}

impl DimensionlessParams {
    /// Inverse of [`nondimensionalize`] with the attached scales.
    pub fn redimensionalize(&self) -> PhysicalParams {
        let f = GroupFactors::new(&self.scales);
        PhysicalParams {
            rho: self.rho_p / f.rho,
            mu: self.mu_p * f.mu,
            g0: self.g0_p * f.g0,
            alpha: self.alpha_p * f.alpha,
            t0: self.scales.time,
            sigma_c: if self.unit_threshold { self.scales.stress } else { 0.0 },
            length: self.scales.length,
        }
    }

    /// Parameters in which the solver sees the scaled problem.
    pub fn as_model(&self) -> PhysicalParams {
        PhysicalParams {
            rho: self.rho_p,
            mu: self.mu_p,
            g0: self.g0_p,
            alpha: self.alpha_p,
            t0: 1.0,
            sigma_c: if self.unit_threshold { 1.0 } else { 0.0 },
            length: 1.0,
        }
    }
}

/// Primed fields produced by [`rescale_fields`].
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledFields {
    pub velocity: Vec<f64>,
    pub density: Vec<Vec<f64>>,
    pub stress: Vec<f64>,
}

/// `U' = (T0/L) U`, `p' = σc p`, `τ' = τ/σc`.
pub fn rescale_fields(
    velocity: &[f64],
    density: &[Vec<f64>],
    stress: &[f64],
    params: &PhysicalParams,
) -> Result<RescaledFields> {
    if params.sigma_c == 0.0 {
        return Err(Error::ScalingUndefined);
    }
    let s = ReferenceScales::of(params);
    Ok(rescale_with(velocity, density, stress, &s))
}

pub(crate) fn rescale_with(
    velocity: &[f64],
    density: &[Vec<f64>],
    stress: &[f64],
    s: &ReferenceScales,
) -> RescaledFields {
    let vf = s.time / s.length;
    RescaledFields {
        velocity: velocity.iter().map(|u| u * vf).collect(),
        density: density
            .iter()
            .map(|row| row.iter().map(|p| p * s.stress).collect())
            .collect(),
        stress: stress.iter().map(|t| t / s.stress).collect(),
    }
}

/// Wall velocity `V(t)` of the moving plate. Every preset satisfies `V(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShearProtocol {
    /// Plate at rest.
    Zero,
    /// Linear ramp to `plateau` at `ramp_time`, constant afterwards.
    Ramp { ramp_time: f64, plateau: f64 },
    /// `amplitude · sin(2πt / period)`.
    Sine { amplitude: f64, period: f64 },
    /// Piecewise-linear interpolation of `(t, V)` knots, held constant after the last knot.
    Table { knots: Vec<[f64; 2]> },
}

/// A piece of a protocol on which it is either affine or sinusoidal.
#[derive(Debug, Clone, Copy)]
enum Piece {
    Affine { start: f64, end: f64, v_start: f64, slope: f64 },
    Sine { start: f64, end: f64, amplitude: f64, omega: f64 },
}

impl ShearProtocol {
    pub fn constant_after_ramp(ramp_time: f64, plateau: f64) -> Self {
        ShearProtocol::Ramp { ramp_time, plateau }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            ShearProtocol::Zero => Ok(()),
            ShearProtocol::Ramp { ramp_time, plateau } => {
                if !(ramp_time.is_finite() && *ramp_time > 0.0 && plateau.is_finite()) {
                    return Err(Error::InvalidParams(format!(
                        "ramp needs a positive ramp_time and finite plateau, got ({ramp_time}, {plateau})"
                    )));
                }
                Ok(())
            }
            ShearProtocol::Sine { amplitude, period } => {
                if !(period.is_finite() && *period > 0.0 && amplitude.is_finite()) {
                    return Err(Error::InvalidParams(format!(
                        "sine needs a positive period and finite amplitude, got ({amplitude}, {period})"
                    )));
                }
                Ok(())
            }
            ShearProtocol::Table { knots } => {
                if knots.is_empty() {
                    return Err(Error::InvalidParams("protocol table has no knots".into()));
                }
                if knots[0][0] != 0.0 {
                    return Err(Error::InvalidParams(format!(
                        "protocol table must start at t = 0, first knot is at {}",
                        knots[0][0]
                    )));
                }
                if knots.iter().any(|k| !(k[0].is_finite() && k[1].is_finite())) {
                    return Err(Error::InvalidParams("protocol table has non-finite entries".into()));
                }
                if knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::InvalidParams("protocol table knots must be strictly increasing".into()));
                }
                Ok(())
            }
        }
    }

    pub fn velocity(&self, t: f64) -> f64 {
        match self {
            ShearProtocol::Zero => 0.0,
            ShearProtocol::Ramp { ramp_time, plateau } => {
                if t >= *ramp_time {
                    *plateau
                } else {
                    plateau * t / ramp_time
                }
            }
            ShearProtocol::Sine { amplitude, period } => amplitude * (2.0 * PI * t / period).sin(),
            ShearProtocol::Table { knots } => {
                let last = knots[knots.len() - 1];
                if t >= last[0] {
                    return last[1];
                }
                if t <= knots[0][0] {
                    return knots[0][1];
                }
                let k = knots.partition_point(|k| k[0] <= t);
                let (a, b) = (knots[k - 1], knots[k]);
                a[1] + (b[1] - a[1]) * (t - a[0]) / (b[0] - a[0])
            }
        }
    }

    /// `V̇(t)`, taken from the right at kinks.
    pub fn rate(&self, t: f64) -> f64 {
        match self {
            ShearProtocol::Zero => 0.0,
            ShearProtocol::Ramp { ramp_time, plateau } => {
                if t >= *ramp_time {
                    0.0
                } else {
                    plateau / ramp_time
                }
            }
            ShearProtocol::Sine { amplitude, period } => {
                let w = 2.0 * PI / period;
                amplitude * w * (w * t).cos()
            }
            ShearProtocol::Table { knots } => {
                let last = knots[knots.len() - 1];
                if t >= last[0] || t < knots[0][0] {
                    return 0.0;
                }
                let k = knots.partition_point(|k| k[0] <= t);
                let (a, b) = (knots[k - 1], knots[k]);
                (b[1] - a[1]) / (b[0] - a[0])
            }
        }
    }

    /// Average of `V̇` over `[t0, t1]`, i.e. the exact increment quotient.
    pub fn mean_rate(&self, t0: f64, t1: f64) -> f64 {
        (self.velocity(t1) - self.velocity(t0)) / (t1 - t0)
    }

    fn pieces(&self, a: f64, b: f64) -> Vec<Piece> {
        debug_assert!(a <= b);
        let mut out = Vec::new();
        let mut push_affine = |s: f64, e: f64, this: &ShearProtocol| {
            if e > s {
                out.push(Piece::Affine {
                    start: s,
                    end: e,
                    v_start: this.velocity(s),
                    slope: this.rate(s),
                });
            }
        };
        match self {
            ShearProtocol::Zero => {}
            ShearProtocol::Ramp { ramp_time, .. } => {
                push_affine(a, b.min(*ramp_time).max(a), self);
                push_affine(a.max(*ramp_time).min(b), b, self);
            }
            ShearProtocol::Sine { amplitude, period } => {
                if b > a {
                    out.push(Piece::Sine {
                        start: a,
                        end: b,
                        amplitude: *amplitude,
                        omega: 2.0 * PI / period,
                    });
                }
            }
            ShearProtocol::Table { knots } => {
                let mut cuts = vec![a];
                cuts.extend(knots.iter().map(|k| k[0]).filter(|&t| t > a && t < b));
                cuts.push(b);
                for w in cuts.windows(2) {
                    push_affine(w[0], w[1], self);
                }
            }
        }
        out
    }

    /// `∫_a^b V(s) ds`, exact.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.pieces(a, b)
            .into_iter()
            .map(|p| match p {
                Piece::Affine { start, end, v_start, slope } => {
                    let l = end - start;
                    v_start * l + 0.5 * slope * l * l
                }
                Piece::Sine { start, end, amplitude, omega } => {
                    amplitude * ((omega * start).cos() - (omega * end).cos()) / omega
                }
            })
            .sum()
    }

    /// `∫_a^b e^{-rate (b - s)} V(s) ds`, exact.
    pub fn relaxed_integral(&self, a: f64, b: f64, rate: f64) -> f64 {
        self.pieces(a, b)
            .into_iter()
            .map(|p| match p {
                Piece::Affine { start, end, v_start, slope } => {
                    let l = end - start;
                    let decay_after = (-rate * (b - end)).exp();
                    let (w0, w1) = affine_exp_weights(l, rate);
                    decay_after * (v_start * w0 + slope * w1)
                }
                Piece::Sine { start, end, amplitude, omega } => {
                    let decay_after = (-rate * (b - end)).exp();
                    let f = |s: f64| rate * (omega * s).sin() - omega * (omega * s).cos();
                    let inner = (f(end) - (-rate * (end - start)).exp() * f(start))
                        / (rate * rate + omega * omega);
                    decay_after * amplitude * inner
                }
            })
            .sum()
    }

    /// Protocol expressed in scaled time and velocity units.
    pub fn rescaled(&self, scales: &ReferenceScales) -> Self {
        let vf = scales.time / scales.length;
        match self {
            ShearProtocol::Zero => ShearProtocol::Zero,
            ShearProtocol::Ramp { ramp_time, plateau } => ShearProtocol::Ramp {
                ramp_time: ramp_time / scales.time,
                plateau: plateau * vf,
            },
            ShearProtocol::Sine { amplitude, period } => ShearProtocol::Sine {
                amplitude: amplitude * vf,
                period: period / scales.time,
            },
            ShearProtocol::Table { knots } => ShearProtocol::Table {
                knots: knots.iter().map(|k| [k[0] / scales.time, k[1] * vf]).collect(),
            },
        }
    }

    /// Inverse of [`ShearProtocol::rescaled`].
    pub fn dimensional(&self, scales: &ReferenceScales) -> Self {
        let vf = scales.length / scales.time;
        match self {
            ShearProtocol::Zero => ShearProtocol::Zero,
            ShearProtocol::Ramp { ramp_time, plateau } => ShearProtocol::Ramp {
                ramp_time: ramp_time * scales.time,
                plateau: plateau * vf,
            },
            ShearProtocol::Sine { amplitude, period } => ShearProtocol::Sine {
                amplitude: amplitude * vf,
                period: period * scales.time,
            },
            ShearProtocol::Table { knots } => ShearProtocol::Table {
                knots: knots.iter().map(|k| [k[0] * scales.time, k[1] * vf]).collect(),
            },
        }
    }
}

/// `(∫_0^l e^{-λ(l-r)} dr, ∫_0^l e^{-λ(l-r)} r dr)`.
fn affine_exp_weights(l: f64, rate: f64) -> (f64, f64) {
    let x = rate * l;
    if x.abs() < 1e-4 {
        // series: l(1 - x/2 + x²/6 - x³/24), l²(1/2 - x/6 + x²/24 - x³/120)
        let w0 = l * (1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0);
        let w1 = l * l * (0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0);
        (w0, w1)
    } else {
        let one_minus = -(-x).exp_m1();
        (one_minus / rate, l / rate - one_minus / (rate * rate))
    }
}

/// Stress-distribution presets, parameterised in the units of the grid they
/// are sampled on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityPreset {
    Gaussian { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    Mixture { components: Vec<WeightedDensity> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDensity {
    pub weight: f64,
    pub density: DensityPreset,
}

impl DensityPreset {
    pub fn standard_gaussian() -> Self {
        DensityPreset::Gaussian { mean: 0.0, std: 1.0 }
    }

    /// Exact cell averages of the preset shifted by `shift`, before normalisation.
    pub fn cell_averages(&self, grid: &SigmaGrid, shift: f64) -> Result<Vec<f64>> {
        let h = grid.d_sigma();
        match self {
            DensityPreset::Gaussian { mean, std } => {
                if !(std.is_finite() && *std > 0.0) {
                    return Err(Error::Validation(format!("gaussian width must be positive, got {std}")));
                }
                Ok((0..grid.n_cells())
                    .map(|i| gaussian_interval_mass(grid.edge(i), grid.edge(i + 1), mean + shift, *std) / h)
                    .collect())
            }
            DensityPreset::Uniform { low, high } => {
                if !(high > low) {
                    return Err(Error::Validation(format!("uniform preset needs low < high, got [{low}, {high}]")));
                }
                let (lo, hi) = (low + shift, high + shift);
                Ok((0..grid.n_cells())
                    .map(|i| {
                        let overlap = (grid.edge(i + 1).min(hi) - grid.edge(i).max(lo)).max(0.0);
                        overlap / (hi - lo) / h
                    })
                    .collect())
            }
            DensityPreset::Mixture { components } => {
                if components.is_empty() || components.iter().any(|c| !(c.weight >= 0.0)) {
                    return Err(Error::Validation("mixture needs non-negative weights".into()));
                }
                let mut acc = vec![0.0; grid.n_cells()];
                for c in components {
                    for (a, v) in acc.iter_mut().zip(c.density.cell_averages(grid, shift)?) {
                        *a += c.weight * v;
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Same preset in a stress unit `factor` times larger.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            DensityPreset::Gaussian { mean, std } => DensityPreset::Gaussian {
                mean: mean * factor,
                std: std * factor,
            },
            DensityPreset::Uniform { low, high } => DensityPreset::Uniform {
                low: low * factor,
                high: high * factor,
            },
            DensityPreset::Mixture { components } => DensityPreset::Mixture {
                components: components
                    .iter()
                    .map(|c| WeightedDensity {
                        weight: c.weight,
                        density: c.density.scaled(factor),
                    })
                    .collect(),
            },
        }
    }
}

/// Initial velocity presets (interior nodes; walls are fixed by the lifting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocityPreset {
    #[default]
    Zero,
    /// `amplitude · sin(mode π y / L)`.
    Sine { amplitude: f64, mode: u32 },
}

impl VelocityPreset {
    pub fn sample(&self, grid: &SpaceTimeGrid) -> Vec<f64> {
        match self {
            VelocityPreset::Zero => vec![0.0; grid.n_y],
            VelocityPreset::Sine { amplitude, mode } => grid
                .interior_nodes()
                .iter()
                .map(|y| amplitude * (*mode as f64 * PI * y / grid.length).sin())
                .collect(),
        }
    }
}

/// Sampled initial data: velocity perturbation at interior nodes and one
/// stress-density row (cell averages) per interior node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub u0: Vec<f64>,
    pub p0: Vec<Vec<f64>>,
}

impl InitialData {
    /// Samples presets. The density mean is shifted by `y_shift · (y/L - 1/2)`
    /// across the gap; every row is normalised on the truncated mesh.
    pub fn from_presets(
        velocity: &VelocityPreset,
        density: &DensityPreset,
        y_shift: f64,
        sigma: &SigmaGrid,
        space: &SpaceTimeGrid,
    ) -> Result<Self> {
        let u0 = velocity.sample(space);
        let p0 = space
            .interior_nodes()
            .iter()
            .map(|y| {
                let mut row = density.cell_averages(sigma, y_shift * (y / space.length - 0.5))?;
                let mass = sigma.integrate(&row);
                if !(mass > 0.0) {
                    return Err(Error::Validation("density preset has no mass on the sigma mesh".into()));
                }
                row.iter_mut().for_each(|p| *p /= mass);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(InitialData { u0, p0 })
    }

    pub fn density_sup(&self) -> f64 {
        self.p0.iter().flatten().fold(0.0, |m, &p| m.max(p))
    }
}

/// Result of the non-degeneracy search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    /// `α · inf_y inf_χ` of the mass outside the shifted threshold window.
    pub eta: f64,
    /// Row attaining the infimum.
    pub y_index: usize,
    /// Minimising shift; the window is `[-threshold - chi, threshold - chi]`.
    pub chi: f64,
}

/// Largest mass captured by a window of `2 · threshold` sliding over the
/// cell boundaries of one row, with the window's centre. Ties go to the
/// window closest to the origin.
fn best_window(row: &[f64], grid: &SigmaGrid) -> (f64, f64) {
    let h = grid.d_sigma();
    let width = grid.interior_cells().len();
    let n = row.len();
    if width == 0 {
        return (0.0, 0.0);
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &p in row {
        prefix.push(prefix.last().unwrap() + p * h);
    }
    let mut best = (f64::NEG_INFINITY, 0.0f64);
    for start in 0..=(n - width) {
        let captured = prefix[start + width] - prefix[start];
        let centre = grid.edge(start) + 0.5 * width as f64 * h;
        if captured > best.0 || (captured == best.0 && centre.abs() < best.1.abs()) {
            best = (captured, centre);
        }
    }
    best
}

/// Non-degeneracy constant of the initial densities (window half-width is the
/// grid's threshold; with a zero threshold every cell is exterior).
pub fn compute_eta(p0: &[Vec<f64>], grid: &SigmaGrid, alpha: f64) -> EtaEstimate {
    let mut out = EtaEstimate {
        eta: f64::INFINITY,
        y_index: 0,
        chi: 0.0,
    };
    for (j, row) in p0.iter().enumerate() {
        let total = grid.integrate(row);
        let (captured, centre) = best_window(row, grid);
        let outside = (total - captured).max(0.0);
        let eta = alpha * outside;
        if eta < out.eta {
            out = EtaEstimate {
                eta,
                y_index: j,
                chi: if centre == 0.0 { 0.0 } else { -centre },
            };
        }
    }
    if !out.eta.is_finite() {
        out.eta = 0.0;
    }
    out
}

/// One named validation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Worst row, when the check is per-row.
    pub worst_y: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub eta: f64,
    pub eta_y_index: usize,
    pub eta_chi: f64,
    pub checks: Vec<ValidationCheck>,
    /// Rows whose mass was silently renormalised, with the mass found.
    pub renormalized_rows: Vec<(usize, f64)>,
    /// Positive `eta` and parameters inside the proven regime.
    pub theory_backed: bool,
    /// Hard checks passed and (theory-backed or explicitly overridden).
    pub accepted: bool,
}

impl ValidationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("eta = {:.17e}\n", self.eta));
        s.push_str(&format!("eta_y_index = {}\n", self.eta_y_index));
        s.push_str(&format!("eta_chi = {:.17e}\n", self.eta_chi));
        s.push_str(&format!("theory_backed = {}\n", self.theory_backed));
        s.push_str(&format!("accepted = {}\n", self.accepted));
        for (j, m) in &self.renormalized_rows {
            s.push_str(&format!("renormalized row {j} (mass {m:.17e})\n"));
        }
        for c in &self.checks {
            let loc = c.worst_y.map(|y| format!(" [y index {y}]")).unwrap_or_default();
            s.push_str(&format!(
                "check {:<24} {}{} {}\n",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                loc,
                c.detail
            ));
        }
        s
    }
}

/// Tolerances of the initial-data checks.
pub const NEGATIVE_DENSITY_TOL: f64 = 1e-12;
pub const RENORMALIZE_TOL: f64 = 1e-6;

/// Checks and normalises initial data.
///
/// Returns the (possibly renormalised) data and the report, or a rejection
/// error naming the offending entry. Degenerate `eta = 0` is not a rejection;
/// it only clears `theory_backed` and, without `allow_unproven`, `accepted`.
pub fn validate_initial(
    data: &InitialData,
    protocol: &ShearProtocol,
    params: &PhysicalParams,
    sigma: &SigmaGrid,
    space: &SpaceTimeGrid,
    allow_unproven: bool,
) -> Result<(InitialData, ValidationReport)> {
    params.check()?;
    protocol.check()?;
    let mut checks = Vec::new();

    if data.u0.len() != space.n_y || data.p0.len() != space.n_y {
        return Err(Error::Validation(format!(
            "initial data has {} velocity samples and {} density rows, grid has {} interior nodes",
            data.u0.len(),
            data.p0.len(),
            space.n_y
        )));
    }
    if let Some((j, row)) = data.p0.iter().enumerate().find(|(_, r)| r.len() != sigma.n_cells()) {
        return Err(Error::Validation(format!(
            "density row {j} has {} cells, sigma mesh has {}",
            row.len(),
            sigma.n_cells()
        )));
    }
    if let Some(j) = data.u0.iter().position(|u| !u.is_finite()) {
        return Err(Error::Validation(format!("initial velocity is not finite at y index {j}")));
    }
    let u_l2 = (data.u0.iter().map(|u| u * u).sum::<f64>() * space.dy()).sqrt();
    checks.push(ValidationCheck {
        name: "u0_square_integrable".into(),
        passed: true,
        detail: format!("||u0||_L2 = {u_l2:.6e}"),
        worst_y: None,
    });

    let mut min_p = (f64::INFINITY, 0, 0);
    for (j, row) in data.p0.iter().enumerate() {
        for (i, &p) in row.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::Validation(format!("p0 is not finite at (y index {j}, sigma index {i})")));
            }
            if p < min_p.0 {
                min_p = (p, j, i);
            }
        }
    }
    if min_p.0 < -NEGATIVE_DENSITY_TOL {
        return Err(Error::Validation(format!(
            "p0 is negative ({:e}) at (y index {}, sigma index {})",
            min_p.0, min_p.1, min_p.2
        )));
    }
    checks.push(ValidationCheck {
        name: "p0_nonnegative".into(),
        passed: true,
        detail: format!("min p0 = {:.6e}", min_p.0),
        worst_y: Some(min_p.1),
    });

    let mut p0 = data.p0.clone();
    let mut renormalized = Vec::new();
    let mut worst_drift = (0.0, 0);
    for (j, row) in p0.iter_mut().enumerate() {
        row.iter_mut().for_each(|p| *p = p.max(0.0));
        let mass = sigma.integrate(row);
        let drift = (mass - 1.0).abs();
        if drift > worst_drift.0 {
            worst_drift = (drift, j);
        }
        if drift > RENORMALIZE_TOL {
            return Err(Error::Validation(format!(
                "p0 row at y index {j} has mass {mass:.12}, off by more than {RENORMALIZE_TOL:e}"
            )));
        }
        if mass != 1.0 {
            row.iter_mut().for_each(|p| *p /= mass);
            if drift > 1e-12 {
                renormalized.push((j, mass));
            }
        }
    }
    checks.push(ValidationCheck {
        name: "p0_normalized".into(),
        passed: true,
        detail: format!(
            "max |mass - 1| = {:.3e}; {} row(s) renormalised",
            worst_drift.0,
            renormalized.len()
        ),
        worst_y: Some(worst_drift.1),
    });

    let centers = sigma.centers();
    let (sup, first_moment) = p0.iter().fold((0.0f64, 0.0f64), |(s, m), row| {
        let rs = row.iter().fold(0.0f64, |a, &p| a.max(p));
        let rm: f64 = row.iter().zip(&centers).map(|(p, c)| p * c.abs()).sum::<f64>() * sigma.d_sigma();
        (s.max(rs), m.max(rm))
    });
    checks.push(ValidationCheck {
        name: "p0_bounded".into(),
        passed: sup.is_finite(),
        detail: format!("||p0||_inf = {sup:.6e}"),
        worst_y: None,
    });
    checks.push(ValidationCheck {
        name: "p0_first_moment".into(),
        passed: first_moment.is_finite(),
        detail: format!("max_y int |sigma| p0 = {first_moment:.6e}"),
        worst_y: None,
    });

    let v0 = protocol.velocity(0.0);
    if v0 != 0.0 {
        return Err(Error::Validation(format!("wall velocity must vanish at t = 0, V(0) = {v0}")));
    }
    checks.push(ValidationCheck {
        name: "wall_velocity_starts_at_rest".into(),
        passed: true,
        detail: "V(0) = 0".into(),
        worst_y: None,
    });

    let alpha_scaled = params.alpha / ReferenceScales::of(params).stress.powi(2);
    let eta = compute_eta(&p0, sigma, alpha_scaled);
    let eta_ok = eta.eta > 0.0;
    checks.push(ValidationCheck {
        name: "non_degeneracy".into(),
        passed: eta_ok,
        detail: format!("eta = {:.6e} (chi = {:.4})", eta.eta, eta.chi),
        worst_y: Some(eta.y_index),
    });
    let params_ok = params.within_theory();
    checks.push(ValidationCheck {
        name: "viscosity_regime".into(),
        passed: params_ok,
        detail: if params_ok {
            "inside the proven regime".into()
        } else {
            "mu = 0 with sigma_c > 0: outside proven well-posedness".into()
        },
        worst_y: None,
    });

    let theory_backed = eta_ok && params_ok;
    let report = ValidationReport {
        eta: eta.eta,
        eta_y_index: eta.y_index,
        eta_chi: eta.chi,
        checks,
        renormalized_rows: renormalized,
        theory_backed,
        accepted: theory_backed || allow_unproven,
    };
    Ok((InitialData { u0: data.u0.clone(), p0 }, report))
}
