//! Run configuration: TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupler::{PicardSettings, Problem, RunContext, RunOptions};
use crate::diagnostics::DiagnosticsConfig;
use crate::error::{Error, Result};
use crate::grid::{SigmaGrid, SpaceTimeGrid};
use crate::meso::HlOptions;
use crate::model::{
    validate_initial, DensityPreset, InitialData, PhysicalParams, ReferenceScales, ShearProtocol, ValidationReport,
    VelocityPreset,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_y: usize,
    pub n_sigma: usize,
    /// Truncation radius in threshold units (stress units when `sigma_c = 0`).
    pub sigma_max: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_y: 64,
            n_sigma: 256,
            sigma_max: 4.0,
            dt: 1e-3,
            horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub velocity: VelocityPreset,
    pub density: DensityPreset,
    /// Mean of the density drifts by `y_shift (y/L − 1/2)` across the gap.
    pub y_shift: f64,
    /// CSV of `p0` (one row per interior node, one column per cell);
    /// replaces `density` when set.
    pub density_file: Option<PathBuf>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            velocity: VelocityPreset::Zero,
            density: DensityPreset::standard_gaussian(),
            y_shift: 0.0,
            density_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroThresholdPath {
    /// Linear `(u, τ)` system.
    #[default]
    Maxwell,
    /// General coupled solver with every cell exterior.
    Meso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub picard_tol: f64,
    pub picard_max: usize,
    pub allow_unproven: bool,
    pub zero_threshold_path: ZeroThresholdPath,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = PicardSettings::default();
        SolverConfig {
            picard_tol: p.tol,
            picard_max: p.max_iter,
            allow_unproven: false,
            zero_threshold_path: ZeroThresholdPath::Maxwell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Time between field snapshots.
    pub snapshot_cadence: f64,
    /// Time between full density dumps (0: first and last snapshot only).
    pub density_cadence: f64,
    /// Time between checkpoints (0: none).
    pub checkpoint_cadence: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            snapshot_cadence: 0.1,
            density_cadence: 0.0,
            checkpoint_cadence: 0.0,
        }
    }
}

/// Single-point mode: the prescribed shear rate `γ̇(t)` drives one row with
/// `b = G0 γ̇`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HlRunConfig {
    pub shear_rate: ShearProtocol,
    /// Time between density snapshots.
    pub snapshot_cadence: f64,
}

impl Default for HlRunConfig {
    fn default() -> Self {
        HlRunConfig {
            shear_rate: ShearProtocol::Zero,
            snapshot_cadence: 0.1,
        }
    }
}

/// Times at which the zero-threshold closed forms are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub times: Vec<f64>,
    /// Constant shear speed used for the closed forms.
    pub shear: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            times: vec![0.0, 0.25, 0.5, 1.0],
            shear: 1.0,
        }
    }
}

/// Fully merged configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: PhysicalParams,
    pub protocol: ShearProtocol,
    pub initial: InitialConfig,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub diagnostics: DiagnosticsConfig,
    pub hl_run: HlRunConfig,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    /// The standard scenario: unit parameters, Gaussian `p0`, ramp to 1 at
    /// `t = 0.5`, `n_y = 64`, `n_σ = 256`, `Σ = 4`, `dt = 1e-3`, `T = 1`.
    fn default() -> Self {
        RunConfig {
            model: PhysicalParams::unit(),
            protocol: ShearProtocol::constant_after_ramp(0.5, 1.0),
            initial: InitialConfig::default(),
            grid: GridConfig::default(),
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            hl_run: HlRunConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

/// Everything a coupled run needs, resolved from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub problem: Problem,
    pub initial: InitialData,
    pub context: RunContext,
    pub validation: ValidationReport,
}

fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not of the form section.key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override `{raw}` has an empty key segment")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{}` runs through a non-table value", path.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for raw in overrides {
            let (path, value) = parse_override(raw)?;
            apply_override(&mut table, &path, value)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from the standard scenario when `None`) and
    /// applies the overrides. Relative data paths resolve against the
    /// config's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        if let (Some(base), Some(file)) = (path.and_then(Path::parent), cfg.initial.density_file.as_mut()) {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn sigma_grid(&self) -> Result<SigmaGrid> {
        let stress = ReferenceScales::of(&self.model).stress;
        SigmaGrid::new(self.grid.sigma_max * stress, self.grid.n_sigma, self.model.sigma_c)
    }

    pub fn space_grid(&self) -> Result<SpaceTimeGrid> {
        SpaceTimeGrid::new(self.grid.n_y, self.model.length, self.grid.dt, self.grid.horizon)
    }

    pub fn problem(&self) -> Result<Problem> {
        self.model.check()?;
        self.protocol.check()?;
        Ok(Problem {
            params: self.model,
            protocol: self.protocol.clone(),
            sigma: self.sigma_grid()?,
            space: self.space_grid()?,
            picard: PicardSettings {
                tol: self.solver.picard_tol,
                max_iter: self.solver.picard_max,
            },
            hl: HlOptions::default(),
            allow_unproven: self.solver.allow_unproven,
        })
    }

    /// Samples (or reads) and validates the initial data.
    pub fn resolve(&self) -> Result<Resolved> {
        let problem = self.problem()?;
        let raw = match &self.initial.density_file {
            Some(path) => InitialData {
                u0: self.initial.velocity.sample(&problem.space),
                p0: read_density_table(path)?,
            },
            None => InitialData::from_presets(
                &self.initial.velocity,
                &self.initial.density,
                self.initial.y_shift,
                &problem.sigma,
                &problem.space,
            )?,
        };
        let (initial, validation) = validate_initial(
            &raw,
            &problem.protocol,
            &problem.params,
            &problem.sigma,
            &problem.space,
            self.solver.allow_unproven,
        )?;
        let context = RunContext::new(&initial, &problem);
        Ok(Resolved {
            problem,
            initial,
            context,
            validation,
        })
    }

    fn steps(&self, cadence: f64, what: &str) -> Result<usize> {
        if cadence <= 0.0 {
            return Ok(0);
        }
        let k = cadence / self.grid.dt;
        if (k - k.round()).abs() > 1e-9 * k.max(1.0) || k.round() < 1.0 {
            return Err(Error::Config(format!(
                "{what} cadence {cadence} is not a positive multiple of dt {}",
                self.grid.dt
            )));
        }
        Ok(k.round() as usize)
    }

    pub fn snapshot_every(&self) -> Result<usize> {
        self.steps(self.output.snapshot_cadence, "snapshot")
    }

    pub fn density_every(&self) -> Result<usize> {
        self.steps(self.output.density_cadence, "density")
    }

    pub fn run_options(&self) -> Result<RunOptions> {
        Ok(RunOptions {
            snapshot_every: self.snapshot_every()?,
            checkpoint_every: self.steps(self.output.checkpoint_cadence, "checkpoint")?,
            stop_step: None,
            diagnostics: self.diagnostics,
        })
    }
}

/// Reads a density table: comma-separated, `#` comments, one row per node.
pub fn read_density_table(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    msg: format!("line {}: `{}`: {e}", ln + 1, v.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}
