//! Stress-space and physical-space meshes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when checking that the threshold and the origin
/// fall on cell boundaries.
const ALIGN_TOL: f64 = 1e-9;

/// Uniform cell-centred mesh of the truncated stress axis `[-half_width, half_width]`.
///
/// The origin and the relaxation threshold `±threshold` are always cell
/// boundaries, so the exterior set `|σ| > threshold` is a union of whole cells
/// and the re-injection at `σ = 0` is shared by the two cells adjacent to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SigmaGridSpec", into = "SigmaGridSpec")]
pub struct SigmaGrid {
    half_width: f64,
    n_cells: usize,
    threshold: f64,
    d_sigma: f64,
    threshold_cells: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct SigmaGridSpec {
    half_width: f64,
    n_cells: usize,
    threshold: f64,
}

impl TryFrom<SigmaGridSpec> for SigmaGrid {
    type Error = Error;
    fn try_from(s: SigmaGridSpec) -> Result<Self> {
        SigmaGrid::new(s.half_width, s.n_cells, s.threshold)
    }
}

impl From<SigmaGrid> for SigmaGridSpec {
    fn from(g: SigmaGrid) -> Self {
        SigmaGridSpec {
            half_width: g.half_width,
            n_cells: g.n_cells,
            threshold: g.threshold,
        }
    }
}

impl SigmaGrid {
    pub fn new(half_width: f64, n_cells: usize, threshold: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "sigma half width must be positive, got {half_width}"
            )));
        }
        if n_cells < 4 || !n_cells.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "n_sigma must be even and >= 4, got {n_cells}"
            )));
        }
        if !(threshold.is_finite() && threshold >= 0.0) {
            return Err(Error::InvalidGrid(format!(
                "threshold must be non-negative, got {threshold}"
            )));
        }
        if threshold >= half_width {
            return Err(Error::InvalidGrid(format!(
                "truncation radius {half_width} must exceed the threshold {threshold}"
            )));
        }
        let d_sigma = 2.0 * half_width / n_cells as f64;
        let ratio = threshold / d_sigma;
        let threshold_cells = ratio.round();
        if (ratio - threshold_cells).abs() > ALIGN_TOL * ratio.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "threshold {threshold} is not a cell boundary (threshold / d_sigma = {ratio})"
            )));
        }
        Ok(SigmaGrid {
            half_width,
            n_cells,
            threshold,
            d_sigma,
            threshold_cells: threshold_cells as usize,
        })
    }

    /// `Σ = 4`, 256 cells, unit threshold.
    pub fn standard() -> Self {
        SigmaGrid::new(4.0, 256, 1.0).expect("standard sigma grid is valid")
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn d_sigma(&self) -> f64 {
        self.d_sigma
    }

    /// Left edge of cell `i` (`i == n_cells` gives the right end of the mesh).
    pub fn edge(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.d_sigma
    }

    pub fn center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.d_sigma
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    /// Index of the first cell with non-negative stress; cells `origin - 1`
    /// and `origin` share the boundary `σ = 0`.
    pub fn origin(&self) -> usize {
        self.n_cells / 2
    }

    /// Cells inside `[-threshold, threshold]`, i.e. the non-relaxing blocks.
    pub fn interior_cells(&self) -> std::ops::Range<usize> {
        let o = self.origin();
        (o - self.threshold_cells)..(o + self.threshold_cells)
    }

    pub fn is_exterior(&self, i: usize) -> bool {
        !self.interior_cells().contains(&i)
    }

    /// Same mesh with every length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        SigmaGrid::new(self.half_width * factor, self.n_cells, self.threshold * factor)
    }

    /// Midpoint-rule integral of `values` over the mesh.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.d_sigma
    }
}

/// Uniform `(t, y)` mesh on `[0, horizon] x [0, length]`.
///
/// Velocities live on the `n_y` interior nodes `y_j = (j + 1) dy`; both walls
/// carry the prescribed (lifted: zero) value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub n_y: usize,
    pub length: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl SpaceTimeGrid {
    pub fn new(n_y: usize, length: f64, dt: f64, horizon: f64) -> Result<Self> {
        let grid = SpaceTimeGrid {
            n_y,
            length,
            dt,
            horizon,
        };
        grid.check()?;
        Ok(grid)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_y < 3 {
            return Err(Error::InvalidGrid(format!("n_y must be >= 3, got {}", self.n_y)));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::InvalidGrid(format!("gap length must be positive, got {}", self.length)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {}", self.horizon)));
        }
        let steps = self.horizon / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(())
    }

    pub fn dy(&self) -> f64 {
        self.length / (self.n_y + 1) as f64
    }

    /// Position of interior node `j` (0-based).
    pub fn y(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.dy()
    }

    pub fn interior_nodes(&self) -> Vec<f64> {
        (0..self.n_y).map(|j| self.y(j)).collect()
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Time of step `n`; computed from the index so that restarted runs land
    /// on bit-identical time nodes.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        SpaceTimeGrid::new(self.n_y, self.length, dt, self.horizon)
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        SpaceTimeGrid::new(self.n_y, self.length, self.dt, horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_alignment() {
        let g = SigmaGrid::standard();
        assert_eq!(g.d_sigma(), 1.0 / 32.0);
        assert_eq!(g.origin(), 128);
        assert_eq!(g.interior_cells(), 96..160);
        assert_eq!(g.edge(96), -1.0);
        assert_eq!(g.edge(160), 1.0);
        assert_eq!(g.edge(128), 0.0);
        assert!(g.is_exterior(95) && !g.is_exterior(96) && !g.is_exterior(159) && g.is_exterior(160));
    }

    #[test]
    fn zero_threshold_makes_every_cell_exterior() {
        let g = SigmaGrid::new(8.0, 512, 0.0).unwrap();
        assert!(g.interior_cells().is_empty());
        assert!((0..512).all(|i| g.is_exterior(i)));
    }

    #[test]
    fn misaligned_threshold_is_rejected() {
        assert!(SigmaGrid::new(4.0, 250, 1.0).is_err());
        assert!(SigmaGrid::new(4.0, 255, 1.0).is_err());
        assert!(SigmaGrid::new(1.0, 64, 1.0).is_err());
    }

    #[test]
    fn grid_serde_revalidates() {
        let g = SigmaGrid::standard();
        let s = serde_json::to_string(&g).unwrap();
        let back: SigmaGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
        assert!(serde_json::from_str::<SigmaGrid>(r#"{"half_width":4.0,"n_cells":250,"threshold":1.0}"#).is_err());
    }

    #[test]
    fn space_time_grid() {
        let g = SpaceTimeGrid::new(64, 1.0, 1e-3, 1.0).unwrap();
        assert_eq!(g.n_steps(), 1000);
        assert!((g.dy() - 1.0 / 65.0).abs() < 1e-16);
        assert!((g.y(63) - 64.0 / 65.0).abs() < 1e-15);
        assert!(SpaceTimeGrid::new(2, 1.0, 1e-3, 1.0).is_err());
        assert!(SpaceTimeGrid::new(8, 1.0, 0.3, 1.0).is_err());
    }
}
