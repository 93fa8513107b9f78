//! Gaussian heat-kernel quadratures on the stress mesh.
//!
//! Densities on a [`SigmaGrid`] are treated as piecewise constant (cell
//! averages). Convolving such a density with a Gaussian and re-averaging over
//! the cells can be done exactly with the second antiderivative of the
//! Gaussian, which keeps these quadratures well defined down to zero width
//! (the kernel becoming a Dirac mass).

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::{erf, erfc};

use crate::grid::SigmaGrid;

/// CDF of `N(0, 1)`.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Mass of `N(mean, std²)` on `[a, b]`. For `std == 0` this is the Dirac mass
/// at `mean`, split in halves when `mean` sits on an endpoint.
pub fn gaussian_interval_mass(a: f64, b: f64, mean: f64, std: f64) -> f64 {
    debug_assert!(a <= b);
    if std <= 0.0 {
        let h = |x: f64| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                0.0
            } else {
                0.5
            }
        };
        return h(b - mean) - h(a - mean);
    }
    let za = (a - mean) / std * FRAC_1_SQRT_2;
    let zb = (b - mean) / std * FRAC_1_SQRT_2;
    if za >= 0.0 {
        0.5 * (erfc(za) - erfc(zb))
    } else if zb <= 0.0 {
        0.5 * (erfc(-zb) - erfc(-za))
    } else {
        0.5 * (erf(zb) - erf(za))
    }
}

/// Second antiderivative of the `N(0, std²)` density restricted to `z <= 0`
/// (for `z > 0` use `G(z) = z + G(-z)`).
fn g_neg(z: f64, std: f64) -> f64 {
    debug_assert!(z <= 0.0);
    if std <= 0.0 {
        return 0.0;
    }
    let s = z / std;
    z * std_normal_cdf(s) + std * (-0.5 * s * s).exp() / (2.0 * PI).sqrt()
}

/// `G(x + h) - 2 G(x) + G(x - h)`: the mass a unit density on one cell of
/// width `h` sends to a cell whose left edge is `x` further along, under the
/// kernel `N(0, std²)`.
fn second_difference(x: f64, h: f64, std: f64) -> f64 {
    let pts = [x + h, x, x - h];
    let weights = [1.0, -2.0, 1.0];
    let mut acc = 0.0;
    let mut linear = 0.0;
    for (&z, &w) in pts.iter().zip(&weights) {
        if z > 0.0 {
            acc += w * g_neg(-z, std);
            linear += w * z;
        } else {
            acc += w * g_neg(z, std);
        }
    }
    (acc + linear).max(0.0)
}

/// Cell averages of `N(center, std²)` on the mesh (mass leaving the mesh is lost).
pub fn point_source_cell_averages(grid: &SigmaGrid, center: f64, std: f64) -> Vec<f64> {
    let h = grid.d_sigma();
    (0..grid.n_cells())
        .map(|j| gaussian_interval_mass(grid.edge(j), grid.edge(j + 1), center, std) / h)
        .collect()
}

/// Exact cell averages of `density ⋆ N(shift, std²)` where `density` is the
/// piecewise-constant function given by its cell averages.
pub fn smooth_piecewise_constant(grid: &SigmaGrid, density: &[f64], shift: f64, std: f64) -> Vec<f64> {
    let n = grid.n_cells();
    assert_eq!(density.len(), n);
    let h = grid.d_sigma();
    // transfer[k + n - 1]: fraction of a source cell's mass landing k cells to the right.
    let transfer: Vec<f64> = (0..2 * n - 1)
        .map(|idx| {
            let k = idx as f64 - (n - 1) as f64;
            second_difference(k * h - shift, h, std) / h
        })
        .collect();
    let mut out = vec![0.0; n];
    for (i, &p) in density.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let base = n - 1 - i;
        for (j, o) in out.iter_mut().enumerate() {
            *o += p * transfer[base + j];
        }
    }
    out
}
