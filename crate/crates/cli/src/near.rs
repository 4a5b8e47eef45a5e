//! Quiet-zone command: build the enclosed scene, optimise, report.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;

use rffence_core::nearfield::{element_weights, field_at_points};
use rffence_core::quietzone::StopReason;
use rffence_core::{
    illuminate, run_quiet_zone, DualVolumeGrid, FieldMode, PhaseProfile, PointSource, QuietZoneMetrics,
    QuietZoneOutcome, Scene, Vec3,
};

use crate::config::{LoadedScenario, QuietZoneSection, SliceField};
use crate::error::{CliError, CliResult, IoContext, Stage};
use crate::heatmap::Heatmap;
use crate::output::{write_csv, Timing};

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn scene(qz: &QuietZoneSection, frequency: f64) -> CliResult<Scene> {
    let source = PointSource::new(qz.amplitude, frequency, vec3(qz.source)).stage("source")?;
    Scene::enclosed(qz.side, qz.rows, qz.cols, qz.margin, source).stage("scene")
}

pub fn grid(qz: &QuietZoneSection) -> CliResult<Arc<DualVolumeGrid>> {
    let g = DualVolumeGrid::build(qz.side, qz.coarse_counts, vec3(qz.center), qz.radius, qz.refinement.into())
        .stage("volume grid")?;
    Ok(Arc::new(g))
}

pub fn run(scn: &LoadedScenario) -> CliResult<(Scene, Arc<DualVolumeGrid>, QuietZoneOutcome)> {
    let qz = scn.quiet_zone()?;
    let scene = scene(qz, scn.scenario.frequency)?;
    let grid = grid(qz)?;
    let outcome = run_quiet_zone(&scene, &grid, &scn.scenario.optimizer.params()).stage("quiet zone")?;
    Ok((scene, grid, outcome))
}

/// Cell-centred `n x n` points on the plane `z = z0`; row `i` is `y`.
pub fn slice_points(side: f64, n: usize, z0: f64) -> Vec<Vec3> {
    let h = side / n as f64;
    (0..n)
        .flat_map(|i| (0..n).map(move |j| Vec3::new((j as f64 + 0.5) * h, (i as f64 + 0.5) * h, z0)))
        .collect()
}

pub fn slice(scene: &Scene, phases: &[PhaseProfile], qz: &QuietZoneSection) -> CliResult<Array2<f64>> {
    let incident = illuminate(scene).stage("illumination")?;
    let flat = scene.flatten_phases(phases).stage("phases")?;
    let w = element_weights(&incident, &flat);
    let n = qz.slice_resolution;
    let points = slice_points(qz.side, n, qz.center[2]);
    let mode = match qz.slice_field {
        SliceField::Scattered => FieldMode::Scattered,
        SliceField::Total => FieldMode::Total,
    };
    let values = field_at_points(scene, &w, &points, mode).stage("slice")?;
    Ok(Array2::from_shape_vec((n, n), values.iter().map(|v| v.norm()).collect()).expect("n*n points"))
}

#[derive(Serialize)]
struct MetricsRow {
    stage: &'static str,
    avg_power: f64,
    avg_magnitude: f64,
    suppression_db: Option<f64>,
}

fn metrics_row(stage: &'static str, m: &QuietZoneMetrics) -> MetricsRow {
    MetricsRow {
        stage,
        avg_power: m.avg_power,
        avg_magnitude: m.avg_magnitude,
        suppression_db: m.suppression_db,
    }
}

#[derive(Serialize)]
struct SummaryRow {
    coarse_points: usize,
    fine_points: usize,
    sweeps: usize,
    stop: &'static str,
    final_step: f64,
    zone_suppression_db: Option<f64>,
    outside_change_db: f64,
}

#[derive(Serialize)]
struct HistoryRow {
    sweep: usize,
    avg_power: f64,
    avg_magnitude: f64,
    accepted: usize,
    step: f64,
}

#[derive(Serialize)]
struct PhaseRow {
    panel: usize,
    row: usize,
    col: usize,
    phase: f64,
}

fn stop_name(s: &StopReason) -> &'static str {
    match s {
        StopReason::MaxIterations => "max_iterations",
        StopReason::Tolerance => "tolerance",
        StopReason::PowerThreshold => "power_threshold",
        StopReason::StepFloor => "step_floor",
    }
}

pub fn write_phases(path: &Path, phases: &[PhaseProfile]) -> CliResult<()> {
    let rows: Vec<PhaseRow> = phases
        .iter()
        .enumerate()
        .flat_map(|(panel, p)| {
            p.values()
                .indexed_iter()
                .map(move |((row, col), &phase)| PhaseRow { panel, row, col, phase })
                .collect::<Vec<_>>()
        })
        .collect();
    write_csv(path, &rows)
}

/// Reads a `panel,row,col,phase` table back into per-panel profiles.
pub fn read_phases(path: &Path, scene: &Scene) -> CliResult<Vec<PhaseProfile>> {
    let mut r = csv::Reader::from_path(path).at(path)?;
    let mut flat = Vec::with_capacity(scene.element_count());
    let panels = scene.panels();
    for rec in r.records() {
        let rec = rec.at(path)?;
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let parse_idx = |i: usize| field(i).parse::<usize>().map_err(|e| CliError::io(path, e));
        let (panel, row, col) = (parse_idx(0)?, parse_idx(1)?, parse_idx(2)?);
        let phase: f64 = field(3).parse().map_err(|e| CliError::io(path, e))?;
        let expected = flat.len();
        let at = panels
            .iter()
            .take(panel)
            .map(|p| p.len())
            .sum::<usize>()
            + panels.get(panel).map_or(usize::MAX, |p| row * p.cols() + col);
        if at != expected {
            return Err(CliError::io(path, format!("row for element {expected} out of order")));
        }
        flat.push(phase);
    }
    scene.split_phases(&flat).map_err(|e| CliError::io(path, e))
}

pub fn cmd_quietzone_run(scn: &LoadedScenario, out: &Path) -> CliResult<QuietZoneOutcome> {
    let t0 = Instant::now();
    let qz = scn.quiet_zone()?;
    let (scene, grid, o) = run(scn)?;

    write_csv(
        &out.join("metrics.csv"),
        &[
            metrics_row("baseline", &o.baseline_metrics),
            metrics_row("init", &o.init_metrics),
            metrics_row("final", &o.final_metrics),
        ],
    )?;
    write_csv(
        &out.join("summary.csv"),
        &[SummaryRow {
            coarse_points: grid.coarse_points().len(),
            fine_points: grid.fine_points().len(),
            sweeps: o.descent.sweeps,
            stop: stop_name(&o.descent.stop),
            final_step: o.descent.final_step,
            zone_suppression_db: o.final_metrics.suppression_db,
            outside_change_db: o.outside_change_db,
        }],
    )?;
    let history: Vec<HistoryRow> = o
        .descent
        .history
        .iter()
        .enumerate()
        .map(|(sweep, h)| HistoryRow {
            sweep,
            avg_power: h.metrics.avg_power,
            avg_magnitude: h.metrics.avg_magnitude,
            accepted: h.accepted,
            step: h.step,
        })
        .collect();
    write_csv(&out.join("history.csv"), &history)?;
    write_phases(&out.join("phases.csv"), &o.final_phases)?;

    let r = &scn.scenario.render;
    let before = slice(&scene, &o.baseline_phases, qz)?;
    let after = slice(&scene, &o.final_phases, qz)?;
    Heatmap::from_magnitudes(&before, r.scale, r.floor_db)?.write(&out.join("slice_before.pgm"))?;
    Heatmap::from_magnitudes(&after, r.scale, r.floor_db)?.write(&out.join("slice_after.pgm"))?;
    Timing::new("quietzone run", t0.elapsed(), o.descent.sweeps).write(out)?;
    Ok(o)
}

pub fn render_slice(scn: &LoadedScenario, phase_file: Option<&Path>, path: &Path) -> CliResult<()> {
    let qz = scn.quiet_zone()?;
    let scene = scene(qz, scn.scenario.frequency)?;
    let phases = match phase_file {
        Some(p) => read_phases(p, &scene)?,
        None => scene.pec_baseline(),
    };
    let values = slice(&scene, &phases, qz)?;
    let r = &scn.scenario.render;
    Heatmap::from_magnitudes(&values, r.scale, r.floor_db)?.write(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_points_are_cell_centred() {
        let p = slice_points(4.0, 4, 2.0);
        assert_eq!(p.len(), 16);
        assert_eq!(p[0], Vec3::new(0.5, 0.5, 2.0));
        assert_eq!(p[1], Vec3::new(1.5, 0.5, 2.0));
        assert_eq!(p[4], Vec3::new(0.5, 1.5, 2.0));
    }

    #[test]
    fn phases_table_round_trips() {
        let source = PointSource::new(1.0, 28e9, Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let scene = Scene::enclosed(2.0, 2, 3, 0.1, source).unwrap();
        let flat: Vec<f64> = (0..scene.element_count()).map(|i| i as f64 * 0.1).collect();
        let phases = scene.split_phases(&flat).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phases.csv");
        write_phases(&path, &phases).unwrap();
        assert_eq!(read_phases(&path, &scene).unwrap(), phases);

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(1, 2);
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert!(read_phases(&path, &scene).is_err());
    }
}
