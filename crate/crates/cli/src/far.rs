//! Far-field slicing commands: codebook construction, single SHIELD runs,
//! seeded Monte-Carlo batches and angular-separation sweeps.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use rffence_core::shield::{self, aggregate_performance, RegionKind, ShieldResult};
use rffence_core::{
    build_codebook, generate_entry, scattered_field, wavelength_from_frequency, ArrayDescriptor,
    AngularFieldMap, AngularGrid, Codebook, CodebookEntry, Direction, FarFieldConfig, PhaseProfile, RisArray,
};

use crate::config::{direction, FarFieldSection, LoadedScenario, Scale, SweepAxis, SweepLayout};
use crate::error::{CliError, CliResult, IoContext, Stage};
use crate::heatmap::Heatmap;
use crate::output::{write_csv, write_phase_matrix, Timing};

pub fn descriptor(ff: &FarFieldSection, frequency: f64) -> CliResult<ArrayDescriptor> {
    let pitch = ff.spacing_wavelengths * wavelength_from_frequency(frequency);
    let array = RisArray::planar(ff.rows, ff.cols, pitch, pitch).stage("array")?;
    let cfg = FarFieldConfig::new(ff.rho, ff.e0).stage("far-field config")?;
    ArrayDescriptor::new(array, cfg, frequency).stage("array")
}

pub fn angular_grid(ff: &FarFieldSection) -> CliResult<Arc<AngularGrid>> {
    Ok(Arc::new(
        AngularGrid::with_resolution(ff.resolution_deg.to_radians()).stage("angular grid")?,
    ))
}

fn degrees(d: Direction) -> (f64, f64) {
    let (t, p) = d.to_degrees();
    // strip conversion noise so CSVs show the configured angles
    let r = |x: f64| (x * 1e9).round() / 1e9;
    (r(t), r(p))
}

fn fmt_dir(d: Direction) -> String {
    let (t, p) = degrees(d);
    format!("{t}:{p}")
}

// ---------------------------------------------------------------- codebook

/// `aoa_count` arrival directions, each paired with the same `aod_count`
/// departure directions, drawn uniformly on a 1-degree lattice with
/// `theta <= theta_max`. Pairs are AoA-major.
pub fn sample_angle_set(
    aoa_count: usize,
    aod_count: usize,
    theta_max_deg: f64,
    rng: &mut ChaCha8Rng,
) -> CliResult<Vec<(Direction, Direction)>> {
    let tmax = theta_max_deg.floor() as i64;
    // a pole counts once, whatever its azimuth
    let capacity = (tmax * 360 + 1) as usize;
    if aoa_count > capacity || aod_count > capacity {
        return Err(CliError::config(format!(
            "batch: cannot draw {} distinct directions from {capacity} lattice points",
            aoa_count.max(aod_count)
        )));
    }
    let mut draw = |n: usize| {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let t = rng.random_range(0..=tmax);
            let p = if t == 0 { 0 } else { rng.random_range(0..360i64) };
            if seen.insert((t, p)) {
                out.push(Direction::from_degrees(t as f64, p as f64));
            }
        }
        out
    };
    let aoas = draw(aoa_count);
    let aods = draw(aod_count);
    Ok(aoas
        .iter()
        .flat_map(|&a| aods.iter().map(move |&d| (a, d)))
        .collect())
}

#[derive(Serialize)]
struct AngleRow {
    index: usize,
    aoa_theta_deg: f64,
    aoa_phi_deg: f64,
    aod_theta_deg: f64,
    aod_phi_deg: f64,
    initial_poi: f64,
}

pub fn build_book(scn: &LoadedScenario, seed: u64) -> CliResult<Codebook> {
    let ff = scn.far_field()?;
    let b = &scn.scenario.batch;
    let desc = descriptor(ff, scn.scenario.frequency)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = sample_angle_set(b.aoa_count, b.aod_count, b.theta_max_deg, &mut rng)?;
    build_codebook(&desc, &pairs).stage("codebook")
}

pub fn cmd_codebook_build(scn: &LoadedScenario, seed: u64, out: &Path) -> CliResult<()> {
    let t0 = Instant::now();
    let book = build_book(scn, seed)?;
    let path = out.join("codebook.rfcb");
    book.save(&path).map_err(|e| CliError::io(&path, e))?;
    let rows: Vec<AngleRow> = book
        .entries()
        .iter()
        .enumerate()
        .map(|(index, e)| {
            let (at, ap) = degrees(e.aoa);
            let (dt, dp) = degrees(e.aod);
            AngleRow {
                index,
                aoa_theta_deg: at,
                aoa_phi_deg: ap,
                aod_theta_deg: dt,
                aod_phi_deg: dp,
                initial_poi: e.initial_poi,
            }
        })
        .collect();
    write_csv(&out.join("codebook_angles.csv"), &rows)?;
    Timing::new("codebook build", t0.elapsed(), book.len()).write(out)
}

// ------------------------------------------------------------- single run

/// Generates the configured FSDA then HSSA entries for the scenario's AoA.
pub fn scenario_entries(scn: &LoadedScenario, desc: &ArrayDescriptor) -> CliResult<Vec<CodebookEntry>> {
    let ff = scn.far_field()?;
    if ff.fsda.is_empty() {
        return Err(scn.fail("far_field.fsda", "at least one delivery direction required"));
    }
    if ff.hssa.is_empty() {
        return Err(scn.fail("far_field.hssa", "at least one suppression direction required"));
    }
    let aoa = direction(ff.aoa);
    ff.fsda
        .iter()
        .chain(&ff.hssa)
        .map(|&a| generate_entry(desc, aoa, direction(a)).stage("codebook"))
        .collect()
}

pub fn run_regions(
    scn: &LoadedScenario,
    desc: &ArrayDescriptor,
    grid: &Arc<AngularGrid>,
    entries: &[CodebookEntry],
    d: usize,
) -> CliResult<ShieldResult> {
    let params = scn.scenario.shield.params(d, entries.len() - d);
    let refs: Vec<&CodebookEntry> = entries.iter().collect();
    shield::run(desc, &refs, grid, &params).stage("shield")
}

/// Class aggregate (dB) of one region kind.
pub fn class_db(result: &ShieldResult, kind: RegionKind) -> CliResult<f64> {
    let (finals, initials): (Vec<f64>, Vec<f64>) = result
        .regions
        .iter()
        .filter(|r| r.kind == kind)
        .map(|r| (r.final_magnitude, r.initial))
        .unzip();
    aggregate_performance(&finals, &initials).stage("performance")
}

#[derive(Serialize)]
struct RegionRow {
    region: String,
    kind: &'static str,
    theta_deg: f64,
    phi_deg: f64,
    initial: f64,
    common: f64,
    #[serde(rename = "final")]
    final_magnitude: f64,
    p_db: f64,
}

fn kind_name(k: RegionKind) -> &'static str {
    match k {
        RegionKind::Delivery => "fsda",
        RegionKind::Suppression => "hssa",
    }
}

fn region_labels(result: &ShieldResult) -> Vec<String> {
    let (mut nd, mut nu) = (0, 0);
    result
        .regions
        .iter()
        .map(|r| match r.kind {
            RegionKind::Delivery => {
                nd += 1;
                format!("fsda_{nd}")
            }
            RegionKind::Suppression => {
                nu += 1;
                format!("hssa_{nu}")
            }
        })
        .collect()
}

/// One-row metrics table: iteration count, costs and every `P_k`.
pub fn write_metrics(path: &Path, result: &ShieldResult) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).at(path)?;
    let labels = region_labels(result);
    let mut header = vec!["iterations".to_string(), "initial_cost".into(), "final_cost".into()];
    header.extend(labels.iter().map(|l| format!("{l}_p_db")));
    w.write_record(&header).at(path)?;
    let mut row = vec![
        result.iterations.to_string(),
        result.initial_cost.to_string(),
        result.final_cost.to_string(),
    ];
    row.extend(result.regions.iter().map(|r| r.p_db.to_string()));
    w.write_record(&row).at(path)?;
    w.flush().at(path)
}

pub fn render_map(map: &AngularFieldMap, path: &Path, scale: Scale, floor_db: f64) -> CliResult<()> {
    Heatmap::from_magnitudes(&map.magnitude(), scale, floor_db)?.write(path)
}

pub fn cmd_shield_run(scn: &LoadedScenario, out: &Path) -> CliResult<ShieldResult> {
    let t0 = Instant::now();
    let ff = scn.far_field()?;
    let desc = descriptor(ff, scn.scenario.frequency)?;
    let grid = angular_grid(ff)?;
    let entries = scenario_entries(scn, &desc)?;
    let result = run_regions(scn, &desc, &grid, &entries, ff.fsda.len())?;

    write_metrics(&out.join("metrics.csv"), &result)?;
    let labels = region_labels(&result);
    let rows: Vec<RegionRow> = result
        .regions
        .iter()
        .zip(labels)
        .map(|(r, region)| {
            let (t, p) = degrees(r.direction);
            RegionRow {
                region,
                kind: kind_name(r.kind),
                theta_deg: t,
                phi_deg: p,
                initial: r.initial,
                common: r.common,
                final_magnitude: r.final_magnitude,
                p_db: r.p_db,
            }
        })
        .collect();
    write_csv(&out.join("regions.csv"), &rows)?;
    write_csv(
        &out.join("cost_history.csv"),
        &result
            .cost_history
            .iter()
            .enumerate()
            .map(|(iteration, &cost)| CostRow { iteration, cost })
            .collect::<Vec<_>>(),
    )?;
    write_phase_matrix(&out.join("phase_opt.csv"), &result.phi_opt)?;
    write_phase_matrix(&out.join("phase_common.csv"), &result.phi_common)?;

    let render = &scn.scenario.render;
    let src = desc.source(direction(ff.aoa)).stage("source")?;
    let after = scattered_field(&desc.array, &result.phi_opt, &src, &grid, &desc.config).stage("field map")?;
    let before =
        scattered_field(&desc.array, &result.phi_common, &src, &grid, &desc.config).stage("field map")?;
    render_map(&before, &out.join("field_before.pgm"), render.scale, render.floor_db)?;
    render_map(&after, &out.join("field_after.pgm"), render.scale, render.floor_db)?;
    render_map(&result.composite, &out.join("composite.pgm"), render.scale, render.floor_db)?;
    Timing::new("shield run", t0.elapsed(), 1).write(out)?;
    Ok(result)
}

#[derive(Serialize)]
struct CostRow {
    iteration: usize,
    cost: f64,
}

// ------------------------------------------------------------------ batch

/// One sampled case: an AoA group and the entry indices for its regions.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub index: usize,
    pub fsda: Vec<usize>,
    pub hssa: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub spec: CaseSpec,
    pub aoa: Direction,
    pub outcome: Result<CaseMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub fsda_p_db: Vec<f64>,
    pub hssa_p_db: Vec<f64>,
    pub fsda_class_db: f64,
    pub hssa_class_db: f64,
    pub iterations: usize,
    pub final_cost: f64,
}

/// Bin edges (dB) reproduce the grouping of the published cumulative plots.
pub const FSDA_BINS: [(&str, f64, f64); 5] = [
    ("[0,-2)", -2.0, f64::INFINITY),
    ("[-2,-4)", -4.0, -2.0),
    ("[-4,-6)", -6.0, -4.0),
    ("[-6,-8)", -8.0, -6.0),
    ("<=-8", f64::NEG_INFINITY, -8.0),
];
pub const HSSA_BINS: [(&str, f64, f64); 3] = [
    (">-20", -20.0, f64::INFINITY),
    ("[-20,-50)", -50.0, -20.0),
    ("<=-50", f64::NEG_INFINITY, -50.0),
];

/// A bin labelled `[a,b)` holds `b < P <= a`. Gains above 0 dB land in the
/// first bin.
pub fn bin_index(bins: &[(&str, f64, f64)], p_db: f64) -> usize {
    bins.iter()
        .position(|&(_, lo, hi)| p_db > lo && p_db <= hi)
        .unwrap_or(bins.len() - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub class: &'static str,
    pub bin: &'static str,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub seed: u64,
    pub cases: Vec<CaseRecord>,
    pub histogram: Vec<HistogramRow>,
    pub failures: usize,
    pub elapsed: std::time::Duration,
}

impl BatchReport {
    fn successes(&self) -> impl Iterator<Item = &CaseMetrics> {
        self.cases.iter().filter_map(|c| c.outcome.as_ref().ok())
    }

    /// Fraction of successful cases whose HSSA class is at or below `db`.
    pub fn hssa_fraction_below(&self, db: f64) -> f64 {
        fraction(self.successes().map(|m| m.hssa_class_db <= db))
    }

    /// Fraction of successful cases whose FSDA class is at or above `db`.
    pub fn fsda_fraction_above(&self, db: f64) -> f64 {
        fraction(self.successes().map(|m| m.fsda_class_db >= db))
    }
}

fn fraction(flags: impl Iterator<Item = bool>) -> f64 {
    let (hit, n) = flags.fold((0usize, 0usize), |(h, n), f| (h + f as usize, n + 1));
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// Entry indices grouped by AoA, in order of first appearance.
pub fn aoa_groups(book: &Codebook) -> Vec<Vec<usize>> {
    let mut keys: Vec<(u64, u64)> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, e) in book.entries().iter().enumerate() {
        let key = (e.aoa.theta.to_bits(), e.aoa.phi.to_bits());
        match keys.iter().position(|&k| k == key) {
            Some(g) => groups[g].push(i),
            None => {
                keys.push(key);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

/// Draws every case up front from one generator, so the sample does not
/// depend on scheduling.
pub fn sample_cases(
    groups: &[Vec<usize>],
    n_cases: usize,
    d: usize,
    u: usize,
    rng: &mut ChaCha8Rng,
) -> CliResult<Vec<CaseSpec>> {
    let usable: Vec<&Vec<usize>> = groups.iter().filter(|g| g.len() >= d + u).collect();
    if usable.is_empty() {
        return Err(CliError::config(format!(
            "batch: no angle of arrival has the {} departures a case needs",
            d + u
        )));
    }
    Ok((0..n_cases)
        .map(|index| {
            let group = usable[rng.random_range(0..usable.len())];
            let picks = sample(rng, group.len(), d + u).into_vec();
            let ids: Vec<usize> = picks.iter().map(|&p| group[p]).collect();
            CaseSpec {
                index,
                fsda: ids[..d].to_vec(),
                hssa: ids[d..].to_vec(),
            }
        })
        .collect())
}

fn run_case(
    book: &Codebook,
    grid: &Arc<AngularGrid>,
    params: &shield::ShieldParams,
    spec: &CaseSpec,
) -> CaseRecord {
    let entries: Vec<&CodebookEntry> = spec
        .fsda
        .iter()
        .chain(&spec.hssa)
        .map(|&i| &book.entries()[i])
        .collect();
    let aoa = entries[0].aoa;
    let outcome = shield::run(book.descriptor(), &entries, grid, params)
        .map_err(|e| e.to_string())
        .and_then(|r| {
            let class = |kind| class_db(&r, kind).map_err(|e| e.message);
            let p = |kind| r.regions.iter().filter(|x| x.kind == kind).map(|x| x.p_db).collect();
            Ok(CaseMetrics {
                fsda_p_db: p(RegionKind::Delivery),
                hssa_p_db: p(RegionKind::Suppression),
                fsda_class_db: class(RegionKind::Delivery)?,
                hssa_class_db: class(RegionKind::Suppression)?,
                iterations: r.iterations,
                final_cost: r.final_cost,
            })
        });
    CaseRecord {
        spec: spec.clone(),
        aoa,
        outcome,
    }
}

pub fn histogram(cases: &[CaseRecord]) -> Vec<HistogramRow> {
    let ok: Vec<&CaseMetrics> = cases.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
    let mut rows = Vec::new();
    let mut class = |name: &'static str, bins: &[(&'static str, f64, f64)], pick: &dyn Fn(&CaseMetrics) -> f64| {
        let mut counts = vec![0usize; bins.len()];
        for m in &ok {
            counts[bin_index(bins, pick(m))] += 1;
        }
        for (b, &count) in bins.iter().zip(&counts) {
            rows.push(HistogramRow {
                class: name,
                bin: b.0,
                count,
                fraction: if ok.is_empty() { 0.0 } else { count as f64 / ok.len() as f64 },
            });
        }
    };
    class("fsda", &FSDA_BINS, &|m| m.fsda_class_db);
    class("hssa", &HSSA_BINS, &|m| m.hssa_class_db);
    rows
}

/// Loads the configured codebook or builds one from the seeded angle set.
pub fn batch_codebook(scn: &LoadedScenario, seed: u64) -> CliResult<Codebook> {
    match &scn.scenario.batch.codebook {
        Some(p) => {
            let path = Path::new(p);
            Codebook::load(path).map_err(|e| CliError::io(path, e))
        }
        None => build_book(scn, seed),
    }
}

pub fn run_batch(scn: &LoadedScenario, seed: u64) -> CliResult<BatchReport> {
    let t0 = Instant::now();
    let ff = scn.far_field()?;
    let b = &scn.scenario.batch;
    let grid = angular_grid(ff)?;
    let book = batch_codebook(scn, seed)?;
    let params = scn.scenario.shield.params(b.d, b.u);
    params.validate().stage("shield")?;
    // the case stream is independent of the angle-set stream
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let specs = sample_cases(&aoa_groups(&book), b.cases, b.d, b.u, &mut rng)?;
    let mut cases: Vec<CaseRecord> = specs.par_iter().map(|s| run_case(&book, &grid, &params, s)).collect();
    cases.sort_by_key(|c| c.spec.index);
    let failures = cases.iter().filter(|c| c.outcome.is_err()).count();
    Ok(BatchReport {
        seed,
        histogram: histogram(&cases),
        cases,
        failures,
        elapsed: t0.elapsed(),
    })
}

#[derive(Serialize)]
struct CaseRow {
    case: usize,
    aoa: String,
    fsda: String,
    hssa: String,
    fsda_p_db: String,
    hssa_p_db: String,
    fsda_class_db: Option<f64>,
    hssa_class_db: Option<f64>,
    iterations: Option<usize>,
    final_cost: Option<f64>,
    status: String,
}

fn join<T>(items: impl IntoIterator<Item = T>, f: impl Fn(T) -> String) -> String {
    items.into_iter().map(f).collect::<Vec<_>>().join(";")
}

#[derive(Serialize)]
struct HistRow<'a> {
    class: &'a str,
    bin: &'a str,
    count: usize,
    fraction: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    seed: u64,
    cases: usize,
    failures: usize,
    hssa_below_20db: f64,
    fsda_within_4db: f64,
}

/// Writes the case table, histogram and summary (all byte-deterministic
/// for a fixed seed) plus a separate timing file.
pub fn write_batch(report: &BatchReport, book: &Codebook, out: &Path) -> CliResult<()> {
    let e = book.entries();
    let rows: Vec<CaseRow> = report
        .cases
        .iter()
        .map(|c| {
            let m = c.outcome.as_ref().ok();
            CaseRow {
                case: c.spec.index,
                aoa: fmt_dir(c.aoa),
                fsda: join(&c.spec.fsda, |&i| fmt_dir(e[i].aod)),
                hssa: join(&c.spec.hssa, |&i| fmt_dir(e[i].aod)),
                fsda_p_db: m.map(|m| join(&m.fsda_p_db, |v| v.to_string())).unwrap_or_default(),
                hssa_p_db: m.map(|m| join(&m.hssa_p_db, |v| v.to_string())).unwrap_or_default(),
                fsda_class_db: m.map(|m| m.fsda_class_db),
                hssa_class_db: m.map(|m| m.hssa_class_db),
                iterations: m.map(|m| m.iterations),
                final_cost: m.map(|m| m.final_cost),
                status: match &c.outcome {
                    Ok(_) => "ok".into(),
                    Err(msg) => format!("failed: {msg}"),
                },
            }
        })
        .collect();
    write_csv(&out.join("batch_cases.csv"), &rows)?;
    let hist: Vec<HistRow> = report
        .histogram
        .iter()
        .map(|h| HistRow {
            class: h.class,
            bin: h.bin,
            count: h.count,
            fraction: h.fraction,
        })
        .collect();
    write_csv(&out.join("batch_histogram.csv"), &hist)?;
    write_csv(
        &out.join("batch_summary.csv"),
        &[SummaryRow {
            seed: report.seed,
            cases: report.cases.len(),
            failures: report.failures,
            hssa_below_20db: report.hssa_fraction_below(-20.0),
            fsda_within_4db: report.fsda_fraction_above(-4.0),
        }],
    )?;
    Timing::new("shield batch", report.elapsed, report.cases.len()).write(out)
}

pub fn cmd_shield_batch(scn: &LoadedScenario, seed: u64, out: &Path) -> CliResult<BatchReport> {
    let report = run_batch(scn, seed)?;
    // rebuilding is cheap next to the batch and keeps run_batch self-contained
    let book = batch_codebook(scn, seed)?;
    write_batch(&report, &book, out)?;
    Ok(report)
}

// ------------------------------------------------------------------ sweep

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub separation_deg: f64,
    pub fsda_p_db: f64,
    pub hssa_p_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlaggedRow {
    pub separation_deg: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepSeries {
    pub rows: Vec<SweepRow>,
    pub flagged: Vec<FlaggedRow>,
}

/// Moves `base` by `delta` degrees along one axis.
fn offset(base: [f64; 2], axis: SweepAxis, delta: f64) -> [f64; 2] {
    match axis {
        SweepAxis::Azimuth => [base[0], base[1] + delta],
        SweepAxis::Elevation => [base[0] + delta, base[1]],
    }
}

/// `(fsda, hssa)` as `[theta, phi]` degrees.
pub type Regions = (Vec<[f64; 2]>, Vec<[f64; 2]>);

/// Region directions for a separation, or why none exist.
pub fn layout(
    axis: SweepAxis,
    kind: SweepLayout,
    base: [f64; 2],
    fsda_spacing: f64,
    s: f64,
) -> Result<Regions, String> {
    let (fsda, hssa) = match kind {
        SweepLayout::Between => (
            vec![offset(base, axis, -s), offset(base, axis, s)],
            vec![base],
        ),
        SweepLayout::Outside => (
            vec![offset(base, axis, -fsda_spacing), base],
            vec![offset(base, axis, s)],
        ),
    };
    let all: Vec<[f64; 2]> = fsda.iter().chain(&hssa).copied().collect();
    if let Some(a) = all.iter().find(|a| !(0.0..=90.0).contains(&a[0])) {
        return Err(format!("elevation {} outside [0, 90]", a[0]));
    }
    let dirs: Vec<Direction> = all.iter().map(|&a| direction(a)).collect();
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            if dirs[i].separation(dirs[j]) < 1e-9 {
                return Err("regions coincide".into());
            }
        }
    }
    Ok((fsda, hssa))
}

pub fn separations(start: f64, stop: f64, samples: usize) -> Vec<f64> {
    if samples == 1 {
        return vec![start];
    }
    (0..samples)
        .map(|i| start + (stop - start) * i as f64 / (samples - 1) as f64)
        .collect()
}

pub fn run_sweep(scn: &LoadedScenario) -> CliResult<SweepSeries> {
    let ff = scn.far_field()?;
    let sw = scn.sweep()?;
    let desc = descriptor(ff, scn.scenario.frequency)?;
    let grid = angular_grid(ff)?;
    let aoa = direction(ff.aoa);
    let points = separations(sw.start_deg, sw.stop_deg, sw.samples);
    let results: Vec<CliResult<Result<SweepRow, FlaggedRow>>> = points
        .par_iter()
        .map(|&s| {
            let (fsda, hssa) = match layout(sw.axis, sw.layout, sw.base, sw.fsda_spacing_deg, s) {
                Ok(l) => l,
                Err(reason) => return Ok(Err(FlaggedRow { separation_deg: s, reason })),
            };
            let entries = fsda
                .iter()
                .chain(&hssa)
                .map(|&a| generate_entry(&desc, aoa, direction(a)).stage("codebook"))
                .collect::<CliResult<Vec<_>>>()?;
            match run_regions(scn, &desc, &grid, &entries, fsda.len()) {
                Ok(r) => Ok(Ok(SweepRow {
                    separation_deg: s,
                    fsda_p_db: class_db(&r, RegionKind::Delivery)?,
                    hssa_p_db: class_db(&r, RegionKind::Suppression)?,
                })),
                Err(e) => Ok(Err(FlaggedRow {
                    separation_deg: s,
                    reason: e.message,
                })),
            }
        })
        .collect();
    let mut series = SweepSeries::default();
    for r in results {
        match r? {
            Ok(row) => series.rows.push(row),
            Err(flag) => series.flagged.push(flag),
        }
    }
    Ok(series)
}

#[derive(Serialize)]
struct SweepCsv {
    separation_deg: f64,
    fsda_p_db: f64,
    hssa_p_db: f64,
}

#[derive(Serialize)]
struct FlagCsv<'a> {
    separation_deg: f64,
    reason: &'a str,
}

pub fn cmd_shield_sweep(scn: &LoadedScenario, out: &Path) -> CliResult<SweepSeries> {
    let t0 = Instant::now();
    let series = run_sweep(scn)?;
    let rows: Vec<SweepCsv> = series
        .rows
        .iter()
        .map(|r| SweepCsv {
            separation_deg: r.separation_deg,
            fsda_p_db: r.fsda_p_db,
            hssa_p_db: r.hssa_p_db,
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &rows)?;
    let flagged: Vec<FlagCsv> = series
        .flagged
        .iter()
        .map(|f| FlagCsv {
            separation_deg: f.separation_deg,
            reason: &f.reason,
        })
        .collect();
    write_csv(&out.join("sweep_flagged.csv"), &flagged)?;
    Timing::new("shield sweep", t0.elapsed(), series.rows.len() + series.flagged.len()).write(out)?;
    Ok(series)
}

// ----------------------------------------------------------------- render

pub fn render_profile(scn: &LoadedScenario, phase: Option<PhaseProfile>, path: &Path) -> CliResult<()> {
    let ff = scn.far_field()?;
    let desc = descriptor(ff, scn.scenario.frequency)?;
    let grid = angular_grid(ff)?;
    let aoa = direction(ff.aoa);
    let phase = match phase {
        Some(p) => p,
        None => {
            let first = ff
                .fsda
                .first()
                .ok_or_else(|| scn.fail("far_field.fsda", "nothing to render without a phase file"))?;
            generate_entry(&desc, aoa, direction(*first)).stage("codebook")?.phase
        }
    };
    let src = desc.source(aoa).stage("source")?;
    let map = scattered_field(&desc.array, &phase, &src, &grid, &desc.config).stage("field map")?;
    let r = &scn.scenario.render;
    render_map(&map, path, r.scale, r.floor_db)
}

pub fn phase_from_rows(rows: Vec<Vec<f64>>, path: &Path) -> CliResult<PhaseProfile> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(CliError::io(path, "phase matrix rows have unequal lengths"));
    }
    let values = Array2::from_shape_vec((r, c), rows.concat()).expect("shape checked");
    PhaseProfile::new(values).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_partition_the_line() {
        assert_eq!(bin_index(&FSDA_BINS, 0.5), 0);
        assert_eq!(bin_index(&FSDA_BINS, -1.9999), 0);
        assert_eq!(bin_index(&FSDA_BINS, -2.0), 1);
        assert_eq!(bin_index(&FSDA_BINS, -8.0), 4);
        assert_eq!(bin_index(&FSDA_BINS, -80.0), 4);
        assert_eq!(bin_index(&HSSA_BINS, -19.0), 0);
        assert_eq!(bin_index(&HSSA_BINS, -20.0), 1);
        assert_eq!(bin_index(&HSSA_BINS, -50.0), 2);
        assert_eq!(bin_index(&HSSA_BINS, f64::NEG_INFINITY), 2);
    }

    #[test]
    fn angle_set_is_seeded_and_distinct() {
        let a = sample_angle_set(4, 30, 60.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_angle_set(4, 30, 60.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 120);
        let aods: BTreeSet<(u64, u64)> = a[..30].iter().map(|p| (p.1.theta.to_bits(), p.1.phi.to_bits())).collect();
        assert_eq!(aods.len(), 30);
        assert!(a.iter().all(|(x, y)| x.theta <= 60f64.to_radians() + 1e-12 && y.theta <= 60f64.to_radians() + 1e-12));
    }

    #[test]
    fn oversized_angle_set_rejected() {
        assert!(sample_angle_set(1, 400, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn cases_pick_distinct_entries_within_one_group() {
        let groups = vec![vec![0, 1, 2], vec![3, 4, 5, 6, 7]];
        let cases = sample_cases(&groups, 40, 2, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for c in &cases {
            let ids: Vec<usize> = c.fsda.iter().chain(&c.hssa).copied().collect();
            let set: BTreeSet<usize> = ids.iter().copied().collect();
            assert_eq!(set.len(), 4);
            // only the second group is large enough
            assert!(ids.iter().all(|&i| i >= 3));
        }
        assert!(sample_cases(&groups, 1, 3, 3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn separations_cover_range() {
        assert_eq!(separations(5.0, 5.0, 1), vec![5.0]);
        assert_eq!(separations(0.0, 10.0, 3), vec![0.0, 5.0, 10.0]);
    }

    #[test]
    fn layouts_flag_impossible_geometry() {
        assert!(layout(SweepAxis::Azimuth, SweepLayout::Between, [30.0, 90.0], 20.0, 0.0).is_err());
        assert!(layout(SweepAxis::Elevation, SweepLayout::Outside, [80.0, 0.0], 20.0, 15.0).is_err());
        let (f, h) = layout(SweepAxis::Azimuth, SweepLayout::Outside, [30.0, 90.0], 20.0, 10.0).unwrap();
        assert_eq!(f, vec![[30.0, 70.0], [30.0, 90.0]]);
        assert_eq!(h, vec![[30.0, 100.0]]);
    }

    #[test]
    fn histogram_fractions_close() {
        let mk = |i, f, h| CaseRecord {
            spec: CaseSpec { index: i, fsda: vec![], hssa: vec![] },
            aoa: Direction::new(0.0, 0.0),
            outcome: Ok(CaseMetrics {
                fsda_p_db: vec![],
                hssa_p_db: vec![],
                fsda_class_db: f,
                hssa_class_db: h,
                iterations: 1,
                final_cost: 0.0,
            }),
        };
        let failed = CaseRecord {
            outcome: Err("x".into()),
            ..mk(3, 0.0, 0.0)
        };
        let cases = vec![mk(0, -1.0, -60.0), mk(1, -5.0, -30.0), mk(2, -9.0, -10.0), failed];
        let h = histogram(&cases);
        for class in ["fsda", "hssa"] {
            let s: f64 = h.iter().filter(|r| r.class == class).map(|r| r.fraction).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert_eq!(h.iter().filter(|r| r.count > 0).count(), 6);
    }
}
