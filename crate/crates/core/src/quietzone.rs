//! Coordinate descent over element phases to empty a spherical zone.
//!
//! Every element's contribution to every zone point is linear in
//! `exp(j Phi_n)`, so the zone field is kept as running sums
//! `S_p = sum_n c_{n,p} exp(j Phi_n)` with `c_{n,p} = E_inc,n exp(j k R)/R`.
//! Trying a new phase for one element then costs `O(N_QZ)` instead of a full
//! re-evaluation.

use std::f64::consts::{FRAC_PI_8, PI};
use std::sync::Arc;

use num_complex::Complex64 as c64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::Vec3;
use crate::grid::DualVolumeGrid;
use crate::nearfield::{
    element_weights, field_at_points, green, illuminate, magnitude_db, mean_magnitude, mean_power,
    quiet_zone_metrics, scatter_to_grid, FieldMode, QuietZoneMetrics, Scene, VolumeFieldMap,
};
use crate::phase::{wrap_phase, PhaseProfile};

/// Zone points per partial sum. Fixed so sums do not depend on threading.
const CHUNK: usize = 4096;

/// Relative gain below which a candidate counts as no improvement; keeps
/// round-off from masquerading as progress at a fixed point.
const ACCEPT_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QzOptimizerParams {
    /// Initial probe step `delta phi` (rad).
    pub initial_step: f64,
    /// Sweep cap; one sweep visits every element once.
    pub max_iterations: usize,
    /// Stop when an improving sweep lowers zone power by less than this fraction.
    pub tolerance: f64,
    /// Stop once the zone mean magnitude (V/m) falls to this value.
    pub power_threshold: f64,
    /// Stop once halving has shrunk the step below this (rad).
    pub min_step: f64,
    /// Compare the cache against a full recomputation after every sweep.
    pub self_check: bool,
}

impl Default for QzOptimizerParams {
    fn default() -> Self {
        Self {
            initial_step: FRAC_PI_8,
            max_iterations: 150,
            tolerance: 1e-9,
            power_threshold: 0.0,
            min_step: 1e-12,
            self_check: false,
        }
    }
}

impl QzOptimizerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0 && self.initial_step <= PI) {
            return Err(invalid("initial_step", format!("{} outside (0, pi]", self.initial_step)));
        }
        if self.max_iterations < 1 {
            return Err(invalid("max_iterations", "must be at least 1"));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(invalid("tolerance", format!("{} must be >= 0", self.tolerance)));
        }
        if !(self.power_threshold >= 0.0) {
            return Err(invalid("power_threshold", format!("{} must be >= 0", self.power_threshold)));
        }
        if !(self.min_step > 0.0) {
            return Err(invalid("min_step", format!("{} must be positive", self.min_step)));
        }
        Ok(())
    }
}

/// Per-(element, zone point) couplings plus the running zone field.
#[derive(Debug, Clone)]
pub struct FieldCache {
    /// Element-major: `coupling[n * points + p]`.
    coupling: Vec<c64>,
    sums: Vec<c64>,
    phases: Vec<f64>,
    points: usize,
}

fn chunked_sum<F>(len: usize, f: F) -> f64
where
    F: Fn(std::ops::Range<usize>) -> f64 + Sync,
{
    if len <= CHUNK {
        return f(0..len);
    }
    let partials: Vec<f64> = (0..len.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
        .collect();
    partials.iter().sum()
}

impl FieldCache {
    pub fn new(scene: &Scene, incident: &[c64], points: &[Vec3], phases: &[f64]) -> Result<Self> {
        let n_el = scene.element_count();
        if incident.len() != n_el || phases.len() != n_el {
            return Err(Error::DimensionMismatch {
                what: "field cache inputs",
                expected: n_el.to_string(),
                actual: format!("{} incident, {} phases", incident.len(), phases.len()),
            });
        }
        if points.is_empty() {
            return Err(Error::Empty("quiet-zone fine grid"));
        }
        let k = scene.wavenumber();
        let np = points.len();
        let rows: Vec<Vec<c64>> = scene
            .elements()
            .par_iter()
            .zip(incident)
            .enumerate()
            .map(|(n, (e, inc))| {
                points
                    .iter()
                    .enumerate()
                    .map(|(p, x)| {
                        green(k, e, x).map(|g| inc * g).ok_or(Error::DegenerateGeometry {
                            what: "grid point coincides with element",
                            element: n,
                            point: p,
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let coupling: Vec<c64> = rows.into_iter().flatten().collect();
        let phases: Vec<f64> = phases.iter().map(|&p| wrap_phase(p)).collect();
        let mut cache = Self {
            coupling,
            sums: vec![c64::new(0.0, 0.0); np],
            phases,
            points: np,
        };
        cache.sums = cache.recompute();
        Ok(cache)
    }

    pub fn element_count(&self) -> usize {
        self.phases.len()
    }

    pub fn point_count(&self) -> usize {
        self.points
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Current zone field.
    pub fn field(&self) -> &[c64] {
        &self.sums
    }

    pub fn coupling(&self, element: usize) -> &[c64] {
        &self.coupling[element * self.points..(element + 1) * self.points]
    }

    /// Zone field rebuilt from the couplings, ignoring the running sums.
    pub fn recompute(&self) -> Vec<c64> {
        (0..self.points)
            .into_par_iter()
            .map(|p| {
                self.phases
                    .iter()
                    .enumerate()
                    .map(|(n, &phi)| self.coupling[n * self.points + p] * c64::cis(phi))
                    .sum()
            })
            .collect()
    }

    pub fn zone_power(&self) -> f64 {
        let s = &self.sums;
        chunked_sum(s.len(), |r| s[r].iter().map(|v| v.norm_sqr()).sum()) / s.len() as f64
    }

    pub fn zone_magnitude(&self) -> f64 {
        let s = &self.sums;
        chunked_sum(s.len(), |r| s[r].iter().map(|v| v.norm()).sum()) / s.len() as f64
    }

    /// Zone power if `element` were set to `phase`.
    pub fn candidate_power(&self, element: usize, phase: f64) -> f64 {
        let delta = c64::cis(phase) - c64::cis(self.phases[element]);
        let c = self.coupling(element);
        let s = &self.sums;
        chunked_sum(s.len(), |r| {
            s[r.clone()]
                .iter()
                .zip(&c[r])
                .map(|(s, c)| (s + c * delta).norm_sqr())
                .sum()
        }) / s.len() as f64
    }

    /// Zone powers for `phase + step` and `phase - step` in one pass.
    pub fn probe_pair(&self, element: usize, step: f64) -> (f64, f64) {
        let cur = c64::cis(self.phases[element]);
        let up = cur * (c64::cis(step) - 1.0);
        let down = cur * (c64::cis(-step) - 1.0);
        let c = self.coupling(element);
        let s = &self.sums;
        let n = s.len() as f64;
        let sum = |delta: c64| {
            chunked_sum(s.len(), |r| {
                s[r.clone()]
                    .iter()
                    .zip(&c[r])
                    .map(|(s, c)| (s + c * delta).norm_sqr())
                    .sum()
            }) / n
        };
        (sum(up), sum(down))
    }

    /// Set one element's phase and update the running sums.
    pub fn apply(&mut self, element: usize, phase: f64) {
        let phase = wrap_phase(phase);
        let delta = c64::cis(phase) - c64::cis(self.phases[element]);
        let c = &self.coupling[element * self.points..(element + 1) * self.points];
        self.sums.iter_mut().zip(c).for_each(|(s, c)| *s += c * delta);
        self.phases[element] = phase;
    }

    /// Largest pointwise error of the running sums against `reference`,
    /// relative to the largest reference magnitude.
    pub fn relative_error(&self, reference: &[c64]) -> f64 {
        let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let err = self
            .sums
            .iter()
            .zip(reference)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        if scale > 0.0 {
            err / scale
        } else {
            err
        }
    }
}

/// One pass in element order, giving each element the phase that minimises
/// zone power with every other element held fixed: `arg(-r)` with
/// `r = sum_p conj(c_{n,p}) (S_p - c_{n,p} exp(j Phi_n))`.
pub fn init_per_element(cache: &mut FieldCache) {
    for n in 0..cache.element_count() {
        let cur = c64::cis(cache.phases[n]);
        let c = cache.coupling(n);
        let r: c64 = c
            .iter()
            .zip(&cache.sums)
            .map(|(c, s)| c.conj() * (s - c * cur))
            .sum();
        if r.norm_sqr() > 0.0 {
            cache.apply(n, (-r).arg());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub metrics: QuietZoneMetrics,
    pub accepted: usize,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    Tolerance,
    PowerThreshold,
    StepFloor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentOutcome {
    /// Zone statistics after each sweep, preceded by the starting point.
    pub history: Vec<SweepRecord>,
    pub sweeps: usize,
    pub final_step: f64,
    pub stop: StopReason,
}

fn zone_metrics(cache: &FieldCache) -> QuietZoneMetrics {
    QuietZoneMetrics {
        avg_power: cache.zone_power(),
        avg_magnitude: cache.zone_magnitude(),
        suppression_db: None,
    }
}

/// From-scratch zone field for a phase vector.
pub type Verifier<'a> = &'a dyn Fn(&[f64]) -> Result<Vec<c64>>;

/// Probe `Phi_n`, `Phi_n + step` and `Phi_n - step` for every element in
/// turn, keeping the lowest zone power. A sweep with no accepted change
/// halves the step.
///
/// `verify`, when given, must return the from-scratch zone field for a
/// phase vector; it is called after every sweep if `params.self_check`.
pub fn optimize(
    cache: &mut FieldCache,
    params: &QzOptimizerParams,
    verify: Option<Verifier<'_>>,
) -> Result<DescentOutcome> {
    params.validate()?;
    let mut step = params.initial_step;
    let mut power = cache.zone_power();
    let mut history = vec![SweepRecord {
        metrics: zone_metrics(cache),
        accepted: 0,
        step,
    }];
    let mut stop = StopReason::MaxIterations;
    let mut sweeps = 0;
    while sweeps < params.max_iterations {
        sweeps += 1;
        let before = power;
        let mut accepted = 0;
        for n in 0..cache.element_count() {
            let (up, down) = cache.probe_pair(n, step);
            let phi = cache.phases[n];
            let (best, cand) = if up <= down { (up, phi + step) } else { (down, phi - step) };
            if best < power * (1.0 - ACCEPT_RTOL) {
                cache.apply(n, cand);
                // re-read rather than trust `best`, so drift cannot build up
                power = cache.zone_power();
                accepted += 1;
            }
        }
        if params.self_check {
            if let Some(f) = verify {
                let reference = f(cache.phases())?;
                let err = cache.relative_error(&reference);
                if err > 1e-6 {
                    return Err(Error::CacheInconsistency { sweep: sweeps, relative_error: err });
                }
            }
        }
        let metrics = zone_metrics(cache);
        history.push(SweepRecord { metrics, accepted, step });
        if metrics.avg_magnitude <= params.power_threshold {
            stop = StopReason::PowerThreshold;
            break;
        }
        if accepted == 0 {
            step *= 0.5;
            if step < params.min_step {
                stop = StopReason::StepFloor;
                break;
            }
        } else if before > 0.0 && (before - power) / before < params.tolerance {
            stop = StopReason::Tolerance;
            break;
        }
    }
    Ok(DescentOutcome {
        history,
        sweeps,
        final_step: step,
        stop,
    })
}

/// Everything a quiet-zone run produces.
#[derive(Debug, Clone)]
pub struct QuietZoneOutcome {
    pub baseline_phases: Vec<PhaseProfile>,
    pub init_phases: Vec<PhaseProfile>,
    pub final_phases: Vec<PhaseProfile>,
    pub baseline: VolumeFieldMap,
    pub optimized: VolumeFieldMap,
    pub baseline_metrics: QuietZoneMetrics,
    pub init_metrics: QuietZoneMetrics,
    pub final_metrics: QuietZoneMetrics,
    /// Change of the outside-zone mean magnitude (dB).
    pub outside_change_db: f64,
    pub descent: DescentOutcome,
}

/// Baseline, per-element initialisation, descent, and before/after maps.
pub fn run_quiet_zone(
    scene: &Scene,
    grid: &Arc<DualVolumeGrid>,
    params: &QzOptimizerParams,
) -> Result<QuietZoneOutcome> {
    params.validate()?;
    let incident = illuminate(scene)?;
    let baseline_phases = scene.pec_baseline();
    let baseline = scatter_to_grid(scene, &baseline_phases, &incident, grid)?;
    let baseline_metrics = quiet_zone_metrics(&baseline, None)?;

    let flat = scene.flatten_phases(&baseline_phases)?;
    let mut cache = FieldCache::new(scene, &incident, grid.fine_points(), &flat)?;
    init_per_element(&mut cache);
    let init_phases = scene.split_phases(cache.phases())?;
    let init_metrics = with_reference(zone_metrics(&cache), &baseline_metrics)?;

    let verify = |phases: &[f64]| {
        let w = element_weights(&incident, phases);
        field_at_points(scene, &w, grid.fine_points(), FieldMode::Scattered)
    };
    let descent = optimize(&mut cache, params, Some(&verify))?;
    let final_phases = scene.split_phases(cache.phases())?;
    let optimized = scatter_to_grid(scene, &final_phases, &incident, grid)?;
    let final_metrics = quiet_zone_metrics(&optimized, Some(&baseline))?;
    let outside_change_db = magnitude_db(
        optimized.outside_mean_magnitude(),
        baseline.outside_mean_magnitude(),
    )?;
    Ok(QuietZoneOutcome {
        baseline_phases,
        init_phases,
        final_phases,
        baseline,
        optimized,
        baseline_metrics,
        init_metrics,
        final_metrics,
        outside_change_db,
        descent,
    })
}

fn with_reference(m: QuietZoneMetrics, reference: &QuietZoneMetrics) -> Result<QuietZoneMetrics> {
    Ok(QuietZoneMetrics {
        suppression_db: Some(magnitude_db(m.avg_magnitude, reference.avg_magnitude)?),
        ..m
    })
}

/// Mean power and magnitude of an arbitrary field sample.
pub fn sample_metrics(values: &[c64]) -> QuietZoneMetrics {
    QuietZoneMetrics {
        avg_power: mean_power(values),
        avg_magnitude: mean_magnitude(values),
        suppression_db: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PointSource, RisArray};
    use crate::grid::Refinement;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn small_scene(n: usize) -> (Scene, Arc<DualVolumeGrid>) {
        let src = PointSource::new(1.0, 28e9, Vec3::new(3.0, 1.0, 1.0)).unwrap();
        let scene = Scene::enclosed(4.0, n, n, 0.1, src).unwrap();
        let grid = DualVolumeGrid::build(4.0, [9, 9, 9], Vec3::new(2.0, 2.0, 2.0), 0.5, Refinement::Factor(4.0)).unwrap();
        (scene, Arc::new(grid))
    }

    fn cache_for(scene: &Scene, grid: &DualVolumeGrid) -> FieldCache {
        let inc = illuminate(scene).unwrap();
        FieldCache::new(scene, &inc, grid.fine_points(), &vec![PI; scene.element_count()]).unwrap()
    }

    fn full(scene: &Scene, grid: &DualVolumeGrid, phases: &[f64]) -> Vec<c64> {
        let inc = illuminate(scene).unwrap();
        field_at_points(scene, &element_weights(&inc, phases), grid.fine_points(), FieldMode::Scattered).unwrap()
    }

    #[test]
    fn single_element_init_is_closed_form_and_harmless() {
        let panel = RisArray::new(1, 1, 0.1, 0.1, Vec3::new(2.0, 0.0, 2.0), -Vec3::x(), Vec3::z()).unwrap();
        let src = PointSource::new(1.0, 28e9, Vec3::new(3.0, 1.0, 1.0)).unwrap();
        let scene = Scene::new(4.0, vec![panel], src).unwrap();
        let grid = DualVolumeGrid::build(4.0, [9, 9, 9], Vec3::new(2.0, 2.0, 2.0), 0.5, Refinement::Factor(2.0)).unwrap();
        let mut cache = cache_for(&scene, &grid);
        let before = cache.zone_magnitude();
        init_per_element(&mut cache);
        // the rest field is zero, so r vanishes and the phase is kept
        assert_eq!(cache.phases()[0], PI);
        assert!((cache.zone_magnitude() - before).abs() <= 1e-15 * before);
    }

    #[test]
    fn two_equal_elements_cancel() {
        // two elements mirrored about the zone centre see every zone point
        // at mirrored distances; with one zone point at the centre the
        // couplings are equal and init must anti-align them.
        let a = RisArray::new(1, 1, 0.1, 0.1, Vec3::new(2.0, 0.0, 2.0), -Vec3::x(), Vec3::z()).unwrap();
        let b = RisArray::new(1, 1, 0.1, 0.1, Vec3::new(2.0, 4.0, 2.0), Vec3::x(), Vec3::z()).unwrap();
        let src = PointSource::new(1.0, 28e9, Vec3::new(4.0, 2.0, 2.0)).unwrap();
        let scene = Scene::new(4.0, vec![a, b], src).unwrap();
        let inc = illuminate(&scene).unwrap();
        let centre = [Vec3::new(2.0, 2.0, 2.0)];
        let mut cache = FieldCache::new(&scene, &inc, &centre, &[PI, PI]).unwrap();
        let alone = cache.coupling(0)[0].norm();
        assert!((cache.coupling(1)[0] - cache.coupling(0)[0]).norm() < 1e-12 * alone);
        init_per_element(&mut cache);
        assert!(cache.field()[0].norm() < 1e-9 * alone);
    }

    #[test]
    fn init_does_not_raise_zone_field() {
        let (scene, grid) = small_scene(4);
        let mut cache = cache_for(&scene, &grid);
        let base = cache.zone_power();
        init_per_element(&mut cache);
        assert!(cache.zone_power() <= base);
    }

    #[test]
    fn cache_tracks_random_updates() {
        let (scene, grid) = small_scene(4);
        let mut cache = cache_for(&scene, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let n = rng.random_range(0..cache.element_count());
            cache.apply(n, rng.random_range(0.0..TAU));
        }
        let reference = full(&scene, &grid, cache.phases());
        assert!(cache.relative_error(&reference) < 1e-9);
        assert!(cache.relative_error(&cache.recompute()) < 1e-12);
    }

    #[test]
    fn candidate_power_matches_apply() {
        let (scene, grid) = small_scene(3);
        let mut cache = cache_for(&scene, &grid);
        let p = cache.candidate_power(5, 1.3);
        cache.apply(5, 1.3);
        assert!((p - cache.zone_power()).abs() <= 1e-12 * p);
    }

    #[test]
    fn descent_history_is_monotone_and_self_checked() {
        let (scene, grid) = small_scene(4);
        let mut cache = cache_for(&scene, &grid);
        init_per_element(&mut cache);
        let inc = illuminate(&scene).unwrap();
        let verify = |ph: &[f64]| {
            field_at_points(&scene, &element_weights(&inc, ph), grid.fine_points(), FieldMode::Scattered)
        };
        let params = QzOptimizerParams { max_iterations: 30, self_check: true, ..Default::default() };
        let out = optimize(&mut cache, &params, Some(&verify)).unwrap();
        assert!(out.history.windows(2).all(|w| w[1].metrics.avg_power <= w[0].metrics.avg_power));
        assert!(out.history.last().unwrap().metrics.avg_power < out.history[0].metrics.avg_power);
    }

    #[test]
    fn fixed_point_halves_step() {
        // a lone element's zone power is phase-invariant: nothing can improve
        let panel = RisArray::new(1, 1, 0.1, 0.1, Vec3::new(2.0, 0.0, 2.0), -Vec3::x(), Vec3::z()).unwrap();
        let src = PointSource::new(1.0, 28e9, Vec3::new(3.0, 1.0, 1.0)).unwrap();
        let scene = Scene::new(4.0, vec![panel], src).unwrap();
        let grid = DualVolumeGrid::build(4.0, [9, 9, 9], Vec3::new(2.0, 2.0, 2.0), 0.5, Refinement::Factor(2.0)).unwrap();
        let mut cache = cache_for(&scene, &grid);
        let before = cache.zone_power();
        let params = QzOptimizerParams { max_iterations: 1, ..Default::default() };
        let out = optimize(&mut cache, &params, None).unwrap();
        assert_eq!(out.sweeps, 1);
        assert_eq!(out.history[1].accepted, 0);
        assert_eq!(out.final_step, FRAC_PI_8 / 2.0);
        assert_eq!(cache.zone_power(), before);
    }

    #[test]
    fn power_and_magnitude_mostly_agree_on_candidates() {
        // The two criteria share minimisers only approximately; on random
        // states they pick the same candidate in the large majority of cases.
        let (scene, grid) = small_scene(3);
        let mut cache = cache_for(&scene, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut agree, mut total) = (0, 0);
        for _ in 0..200 {
            let n = rng.random_range(0..cache.element_count());
            cache.apply(n, rng.random_range(0.0..TAU));
            let phi = cache.phases()[n];
            let cands = [phi, phi + FRAC_PI_8, phi - FRAC_PI_8];
            let mags: Vec<f64> = cands
                .iter()
                .map(|&c| {
                    let delta = c64::cis(c) - c64::cis(phi);
                    cache.field().iter().zip(cache.coupling(n)).map(|(s, k)| (s + k * delta).norm()).sum()
                })
                .collect();
            let pows: Vec<f64> = cands.iter().map(|&c| cache.candidate_power(n, c)).collect();
            let argmin = |v: &[f64]| (0..3).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
            agree += usize::from(argmin(&mags) == argmin(&pows));
            total += 1;
        }
        assert!(agree as f64 >= 0.8 * total as f64, "{agree}/{total}");
    }

    #[test]
    fn deterministic_phases() {
        let (scene, grid) = small_scene(3);
        let params = QzOptimizerParams { max_iterations: 10, ..Default::default() };
        let a = run_quiet_zone(&scene, &grid, &params).unwrap();
        let b = run_quiet_zone(&scene, &grid, &params).unwrap();
        assert_eq!(a.final_phases, b.final_phases);
        assert!(a.final_metrics.suppression_db.unwrap() < 0.0);
    }

    #[test]
    fn rejects_bad_params() {
        let p = QzOptimizerParams { initial_step: 4.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = QzOptimizerParams { max_iterations: 0, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
