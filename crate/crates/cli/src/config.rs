//! JSON scenario files.
//!
//! Angles are given in degrees, lengths in metres, frequencies in hertz.
//! Unknown keys are rejected so typos surface as errors instead of silently
//! falling back to defaults.

use std::f64::consts::FRAC_PI_8;
use std::path::Path;

use serde::Deserialize;

use rffence_core::quietzone::QzOptimizerParams;
use rffence_core::shield::ShieldParams;
use rffence_core::{Direction, Refinement};

use crate::error::{CliError, CliResult, IoContext};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    FarField,
    QuietZone,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub kind: ScenarioKind,
    pub frequency: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub far_field: Option<FarFieldSection>,
    #[serde(default)]
    pub shield: ShieldSection,
    #[serde(default)]
    pub batch: BatchSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub quiet_zone: Option<QuietZoneSection>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub render: RenderSection,
}

fn default_spacing() -> f64 {
    0.2
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarFieldSection {
    pub rows: usize,
    pub cols: usize,
    /// Element pitch in wavelengths.
    #[serde(default = "default_spacing")]
    pub spacing_wavelengths: f64,
    #[serde(default = "one")]
    pub rho: f64,
    #[serde(default = "one")]
    pub e0: f64,
    #[serde(default = "one")]
    pub resolution_deg: f64,
    /// `[theta, phi]` of the illuminating wave.
    #[serde(default)]
    pub aoa: [f64; 2],
    #[serde(default)]
    pub fsda: Vec<[f64; 2]>,
    #[serde(default)]
    pub hssa: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShieldSection {
    pub tau_fsda: f64,
    pub tau_hssa: f64,
    pub eta: f64,
    pub w_opt: f64,
    pub mu: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ShieldSection {
    fn default() -> Self {
        let p = ShieldParams::default();
        Self {
            tau_fsda: p.tau_fsda,
            tau_hssa: p.tau_hssa,
            eta: p.eta,
            w_opt: p.w_opt,
            mu: p.mu,
            tolerance: p.tolerance,
            max_iterations: p.max_iterations,
        }
    }
}

impl ShieldSection {
    pub fn params(&self, d: usize, u: usize) -> ShieldParams {
        ShieldParams {
            d,
            u,
            tau_fsda: self.tau_fsda,
            tau_hssa: self.tau_hssa,
            eta: self.eta,
            w_opt: self.w_opt,
            mu: self.mu,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSection {
    pub cases: usize,
    pub aoa_count: usize,
    pub aod_count: usize,
    pub theta_max_deg: f64,
    pub d: usize,
    pub u: usize,
    /// Existing codebook to draw cases from instead of building one.
    pub codebook: Option<String>,
}

impl Default for BatchSection {
    fn default() -> Self {
        Self {
            cases: 50,
            aoa_count: 10,
            aod_count: 50,
            theta_max_deg: 60.0,
            d: 2,
            u: 1,
            codebook: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Azimuth,
    Elevation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepLayout {
    /// HSSA at the base direction, FSDAs at `base -/+ s`.
    Between,
    /// FSDAs at `base - fsda_spacing` and `base`, HSSA at `base + s`.
    Outside,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub layout: SweepLayout,
    pub base: [f64; 2],
    #[serde(default = "default_fsda_spacing")]
    pub fsda_spacing_deg: f64,
    pub start_deg: f64,
    pub stop_deg: f64,
    pub samples: usize,
}

fn default_fsda_spacing() -> f64 {
    20.0
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RefinementSpec {
    Factor(f64),
    TargetPoints(usize),
}

impl From<RefinementSpec> for Refinement {
    fn from(r: RefinementSpec) -> Self {
        match r {
            RefinementSpec::Factor(f) => Refinement::Factor(f),
            RefinementSpec::TargetPoints(n) => Refinement::TargetPoints(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceField {
    #[default]
    Scattered,
    Total,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuietZoneSection {
    pub side: f64,
    pub rows: usize,
    pub cols: usize,
    pub margin: f64,
    pub source: [f64; 3],
    #[serde(default = "one")]
    pub amplitude: f64,
    pub center: [f64; 3],
    pub radius: f64,
    pub coarse_counts: [usize; 3],
    pub refinement: RefinementSpec,
    /// Pixels per side of the z-slice heatmaps.
    #[serde(default = "default_slice")]
    pub slice_resolution: usize,
    #[serde(default)]
    pub slice_field: SliceField,
}

fn default_slice() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub initial_step: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub power_threshold: f64,
    pub self_check: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            initial_step: FRAC_PI_8,
            max_iterations: 150,
            tolerance: 1e-9,
            power_threshold: 0.0,
            self_check: false,
        }
    }
}

impl OptimizerSection {
    pub fn params(&self) -> QzOptimizerParams {
        QzOptimizerParams {
            initial_step: self.initial_step,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            power_threshold: self.power_threshold,
            self_check: self.self_check,
            ..QzOptimizerParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    #[default]
    Db,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub scale: Scale,
    pub floor_db: f64,
    /// Phase CSV (as written by `shield run` / `quietzone run`) to render.
    pub phase_file: Option<String>,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            scale: Scale::Db,
            floor_db: -120.0,
            phase_file: None,
        }
    }
}

pub fn direction(deg: [f64; 2]) -> Direction {
    Direction::from_degrees(deg[0], deg[1].rem_euclid(360.0))
}

/// A parsed scenario plus the text it came from, for error locations.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub text: String,
}

impl LoadedScenario {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_text(text)
    }

    pub fn from_text(text: String) -> CliResult<Self> {
        let mut de = serde_json::Deserializer::from_str(&text);
        let scenario: Scenario = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::config(format!("{path}: {inner}"))
        })?;
        let loaded = Self { scenario, text };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Config error naming `path` (dotted) and, when found, its line.
    pub fn fail(&self, path: &str, reason: impl std::fmt::Display) -> CliError {
        match locate(&self.text, path) {
            Some(line) => CliError::config(format!("{path}: {reason} (line {line})")),
            None => CliError::config(format!("{path}: {reason}")),
        }
    }

    fn check(&self, ok: bool, path: &str, reason: impl std::fmt::Display) -> CliResult<()> {
        if ok {
            Ok(())
        } else {
            Err(self.fail(path, reason))
        }
    }

    fn validate(&self) -> CliResult<()> {
        let s = &self.scenario;
        self.check(
            s.version == SCHEMA_VERSION,
            "version",
            format!("unsupported schema version {} (expected {SCHEMA_VERSION})", s.version),
        )?;
        self.check(s.frequency > 0.0 && s.frequency.is_finite(), "frequency", "must be positive")?;

        let sh = &s.shield;
        for (key, v) in [("shield.tau_fsda", sh.tau_fsda), ("shield.tau_hssa", sh.tau_hssa)] {
            self.check(v > 0.0 && v <= 1.0, key, format!("{v} outside (0, 1]"))?;
        }
        self.check((0.0..=1.0).contains(&sh.eta), "shield.eta", format!("{} outside [0, 1]", sh.eta))?;
        self.check(sh.w_opt >= 0.0 && sh.w_opt.is_finite(), "shield.w_opt", "must be >= 0")?;
        self.check(sh.mu > 0.0 && sh.mu.is_finite(), "shield.mu", format!("{} must be positive", sh.mu))?;
        self.check(sh.tolerance >= 0.0, "shield.tolerance", "must be >= 0")?;

        let b = &s.batch;
        self.check(b.cases >= 1, "batch.cases", "must be at least 1")?;
        self.check(b.aoa_count >= 1, "batch.aoa_count", "must be at least 1")?;
        self.check(b.d >= 1, "batch.d", "must be at least 1")?;
        self.check(b.u >= 1, "batch.u", "must be at least 1")?;
        self.check(
            b.aod_count >= b.d + b.u,
            "batch.aod_count",
            format!("must be at least d + u = {}", b.d + b.u),
        )?;
        self.check(
            b.theta_max_deg > 0.0 && b.theta_max_deg < 90.0,
            "batch.theta_max_deg",
            "must lie in (0, 90)",
        )?;

        if let Some(ff) = &s.far_field {
            self.check(ff.rows >= 1, "far_field.rows", "must be at least 1")?;
            self.check(ff.cols >= 1, "far_field.cols", "must be at least 1")?;
            self.check(ff.spacing_wavelengths > 0.0, "far_field.spacing_wavelengths", "must be positive")?;
            self.check(ff.rho >= 0.0, "far_field.rho", "must be >= 0")?;
            self.check(ff.e0 > 0.0, "far_field.e0", "must be positive")?;
            self.check(
                ff.resolution_deg > 0.0 && (90.0 / ff.resolution_deg - (90.0 / ff.resolution_deg).round()).abs() < 1e-9,
                "far_field.resolution_deg",
                "must divide 90 degrees",
            )?;
            self.check(
                (0.0..90.0).contains(&ff.aoa[0]),
                "far_field.aoa",
                "elevation must lie in [0, 90)",
            )?;
            for (key, list) in [("far_field.fsda", &ff.fsda), ("far_field.hssa", &ff.hssa)] {
                for a in list {
                    self.check((0.0..=90.0).contains(&a[0]), key, format!("elevation {} outside [0, 90]", a[0]))?;
                }
            }
        }
        if let Some(sw) = &s.sweep {
            self.check(sw.samples >= 1, "sweep.samples", "must be at least 1")?;
            self.check(sw.start_deg <= sw.stop_deg, "sweep.stop_deg", "must be >= start_deg")?;
            self.check(sw.start_deg >= 0.0, "sweep.start_deg", "must be >= 0")?;
        }
        if let Some(qz) = &s.quiet_zone {
            self.check(qz.side > 0.0, "quiet_zone.side", "must be positive")?;
            self.check(qz.rows >= 1 && qz.cols >= 1, "quiet_zone.rows", "panels need at least one element")?;
            self.check((0.0..0.5).contains(&qz.margin), "quiet_zone.margin", "must lie in [0, 0.5)")?;
            self.check(qz.radius > 0.0 && qz.radius < qz.side, "quiet_zone.radius", "must lie in (0, side)")?;
            self.check(qz.amplitude > 0.0, "quiet_zone.amplitude", "must be positive")?;
            let inside = |p: &[f64; 3]| p.iter().all(|&c| (0.0..=qz.side).contains(&c));
            self.check(inside(&qz.source), "quiet_zone.source", "must lie inside the domain")?;
            self.check(inside(&qz.center), "quiet_zone.center", "must lie inside the domain")?;
            self.check(qz.coarse_counts.iter().all(|&n| n >= 3), "quiet_zone.coarse_counts", "need at least 3 nodes per axis")?;
            self.check(qz.slice_resolution >= 1, "quiet_zone.slice_resolution", "must be at least 1")?;
            match qz.refinement {
                RefinementSpec::Factor(f) => {
                    self.check(f >= 1.0, "quiet_zone.refinement.factor", format!("{f} must be >= 1"))?
                }
                RefinementSpec::TargetPoints(n) => {
                    self.check(n >= 1, "quiet_zone.refinement.target_points", "must be at least 1")?
                }
            }
        }
        let o = &s.optimizer;
        self.check(
            o.initial_step > 0.0 && o.initial_step <= std::f64::consts::PI,
            "optimizer.initial_step",
            "must lie in (0, pi]",
        )?;
        self.check(o.max_iterations >= 1, "optimizer.max_iterations", "must be at least 1")?;
        self.check(o.tolerance >= 0.0, "optimizer.tolerance", "must be >= 0")?;
        self.check(o.power_threshold >= 0.0, "optimizer.power_threshold", "must be >= 0")?;
        self.check(s.render.floor_db < 0.0, "render.floor_db", "must be negative")?;
        Ok(())
    }

    pub fn far_field(&self) -> CliResult<&FarFieldSection> {
        self.scenario
            .far_field
            .as_ref()
            .ok_or_else(|| self.fail("far_field", "section required for this command"))
    }

    pub fn quiet_zone(&self) -> CliResult<&QuietZoneSection> {
        self.scenario
            .quiet_zone
            .as_ref()
            .ok_or_else(|| self.fail("quiet_zone", "section required for this command"))
    }

    pub fn sweep(&self) -> CliResult<&SweepSection> {
        self.scenario
            .sweep
            .as_ref()
            .ok_or_else(|| self.fail("sweep", "section required for this command"))
    }
}

/// 1-based line of the last key in a dotted path, searching each key after
/// the position of its parent.
pub fn locate(text: &str, path: &str) -> Option<usize> {
    let mut pos = 0;
    for key in path.split('.') {
        let needle = format!("\"{key}\"");
        pos += text[pos..].find(&needle)?;
    }
    Some(text[..pos].matches('\n').count() + 1)
}
