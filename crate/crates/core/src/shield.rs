//! Multiplexing several codebook beams into one phase profile.
//!
//! The pipeline:
//!
//! 1. threshold each entry's angular map into delivery (`M_d`) and
//!    suppression (`M_u`) masks;
//! 2. build a composite target field from the strongest delivery entry per
//!    cell, scaled by `eta` where the masks overlap;
//! 3. back-project the composite onto the aperture (matched filter) for a
//!    starting profile;
//! 4. refine by gradient descent on
//!    `J = sum_{M_d} |E - T|^2 + w_opt sum_{M_u} |E|^2`, rejecting any step
//!    that raises `J` and halving the rate when that happens.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64 as c64;
use rayon::prelude::*;

use crate::codebook::{ArrayDescriptor, CodebookEntry};
use crate::error::{invalid, Error, Result};
use crate::farfield::{
    element_weights, field_at_poi, scattered_field, ApertureSum, Direction, FarFieldConfig,
};
use crate::geometry::{PlaneWaveSource, RisArray};
use crate::grid::{AngularFieldMap, AngularGrid};
use crate::phase::{wrap_phase, PhaseProfile};

/// Floor for `P_k` when the final field underflows.
pub const PERFORMANCE_FLOOR_DB: f64 = -200.0;

/// Cells per partial sum in the gradient reduction. Fixed so results do
/// not depend on the thread count.
const REDUCTION_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShieldParams {
    /// Delivery regions; the first `d` entries handed to the pipeline.
    pub d: usize,
    /// Suppression regions; the `u` entries after the delivery ones.
    pub u: usize,
    pub tau_fsda: f64,
    pub tau_hssa: f64,
    /// Compromise factor applied to delivery targets inside `M_d ∩ M_u`.
    pub eta: f64,
    pub w_opt: f64,
    pub mu: f64,
    /// Stop once an accepted step improves `J` by less than this fraction.
    pub tolerance: f64,
    /// Attempted steps, accepted or rejected.
    pub max_iterations: usize,
}

impl Default for ShieldParams {
    fn default() -> Self {
        Self {
            d: 2,
            u: 1,
            tau_fsda: 0.95,
            tau_hssa: 0.96,
            eta: 0.75,
            w_opt: 0.5,
            mu: 0.02,
            tolerance: 1e-3,
            max_iterations: 100,
        }
    }
}

impl ShieldParams {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(invalid("d", "need at least one delivery region"));
        }
        if self.u < 1 {
            return Err(invalid("u", "need at least one suppression region"));
        }
        for (name, tau) in [("tau_fsda", self.tau_fsda), ("tau_hssa", self.tau_hssa)] {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(invalid(name, format!("{tau} outside (0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid("eta", format!("{} outside [0, 1]", self.eta)));
        }
        if !(self.w_opt >= 0.0 && self.w_opt.is_finite()) {
            return Err(invalid("w_opt", format!("{} must be >= 0", self.w_opt)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(invalid("mu", format!("{} must be positive", self.mu)));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(invalid("tolerance", format!("{} must be >= 0", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub delivery: Array2<bool>,
    pub suppression: Array2<bool>,
}

impl RegionMasks {
    pub fn delivery_count(&self) -> usize {
        self.delivery.iter().filter(|&&b| b).count()
    }

    pub fn suppression_count(&self) -> usize {
        self.suppression.iter().filter(|&&b| b).count()
    }

    pub fn overlap_count(&self) -> usize {
        self.delivery
            .iter()
            .zip(&self.suppression)
            .filter(|(&a, &b)| a && b)
            .count()
    }
}

/// Cells strictly above `tau * max|E|`; the argmax is always kept.
pub fn threshold_mask(map: &AngularFieldMap, tau: f64) -> Array2<bool> {
    let limit = tau * map.max_magnitude();
    let mut mask = map.values().mapv(|v| v.norm() > limit);
    mask[map.argmax()] = true;
    mask
}

/// Masks from `d` delivery maps followed by `u` suppression maps.
pub fn build_masks(maps: &[AngularFieldMap], params: &ShieldParams) -> Result<RegionMasks> {
    if maps.is_empty() {
        return Err(Error::Empty("entry list"));
    }
    check_split(maps.len(), params)?;
    let shape = maps[0].values().dim();
    if maps.iter().any(|m| m.values().dim() != shape) {
        return Err(invalid("maps", "entry maps are on different grids"));
    }
    let union = |maps: &[AngularFieldMap], tau| {
        maps.iter().fold(Array2::from_elem(shape, false), |acc, m| {
            acc | threshold_mask(m, tau)
        })
    };
    Ok(RegionMasks {
        delivery: union(&maps[..params.d], params.tau_fsda),
        suppression: union(&maps[params.d..], params.tau_hssa),
    })
}

fn check_split(n: usize, params: &ShieldParams) -> Result<()> {
    if n != params.d + params.u {
        return Err(Error::DimensionMismatch {
            what: "shield entries",
            expected: format!("d + u = {}", params.d + params.u),
            actual: n.to_string(),
        });
    }
    Ok(())
}

/// Strongest delivery entry per `M_d` cell, times `eta` inside `M_u`, zero
/// outside `M_d`. Ties go to the lower entry index.
pub fn composite_field(
    maps: &[AngularFieldMap],
    masks: &RegionMasks,
    params: &ShieldParams,
) -> Result<AngularFieldMap> {
    check_split(maps.len(), params)?;
    let delivery = &maps[..params.d];
    let values = Array2::from_shape_fn(masks.delivery.dim(), |cell| {
        if !masks.delivery[cell] {
            return c64::new(0.0, 0.0);
        }
        let mut best = delivery[0].values()[cell];
        for m in &delivery[1..] {
            let v = m.values()[cell];
            if v.norm() > best.norm() {
                best = v;
            }
        }
        if masks.suppression[cell] {
            best * params.eta
        } else {
            best
        }
    });
    AngularFieldMap::new(maps[0].grid().clone(), values)
}

fn active_cells(map: &AngularFieldMap) -> Vec<((usize, usize), c64)> {
    map.values()
        .indexed_iter()
        .filter(|(_, v)| v.norm_sqr() > 0.0)
        .map(|(ij, v)| (ij, *v))
        .collect()
}

/// Matched-filter synthesis: `a_n = sum_cells E_c exp(-j psi_out_n)`,
/// `Phi_n = arg(a_n) - psi_inc_n`.
pub fn back_project(
    composite: &AngularFieldMap,
    array: &RisArray,
    src: &PlaneWaveSource,
) -> Result<PhaseProfile> {
    let cells = active_cells(composite);
    if cells.is_empty() {
        return Err(Error::NoActiveRegion);
    }
    let kernel = ApertureSum::new(array, src.wavenumber());
    let grid = composite.grid();
    let n_el = array.len();
    let cols = array.cols();
    let partials: Vec<Vec<c64>> = cells
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut acc = vec![c64::new(0.0, 0.0); n_el];
            for &((i, j), value) in chunk {
                let (theta, phi) = grid.direction(i, j);
                let (ex, ey) = kernel.factors(Direction::new(theta, phi));
                accumulate_outer(&mut acc, value, &ey, &ex, cols);
            }
            acc
        })
        .collect();
    let a = sum_partials(partials, n_el);
    let inc = crate::farfield::incident_phase(array, src);
    let values: Vec<f64> = a
        .iter()
        .zip(inc.iter())
        .map(|(a, psi)| wrap_phase(a.arg() - psi))
        .collect();
    PhaseProfile::from_vec(array.rows(), array.cols(), values)
}

/// `acc[r, c] += coef * conj(ey[r]) * conj(ex[c])`.
#[inline]
fn accumulate_outer(acc: &mut [c64], coef: c64, ey: &[c64], ex: &[c64], cols: usize) {
    for (row, fy) in acc.chunks_exact_mut(cols).zip(ey) {
        let cy = coef * fy.conj();
        for (a, fx) in row.iter_mut().zip(ex) {
            *a += cy * fx.conj();
        }
    }
}

fn sum_partials(partials: Vec<Vec<c64>>, n: usize) -> Vec<c64> {
    partials
        .into_iter()
        .fold(vec![c64::new(0.0, 0.0); n], |mut acc, p| {
            acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
            acc
        })
}

/// One squared-error term of the objective at a single direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub direction: Direction,
    /// Target magnitude (real, V/m).
    pub target: f64,
    pub weight: f64,
}

/// The refinement objective with per-direction steering factors cached.
#[derive(Debug, Clone)]
pub struct Objective {
    terms: Vec<Term>,
    // per term: gain, column factors, row factors
    gains: Vec<f64>,
    ex: Vec<Vec<c64>>,
    ey: Vec<Vec<c64>>,
    incident: Vec<c64>,
    rows: usize,
    cols: usize,
}

impl Objective {
    pub fn new(
        terms: Vec<Term>,
        array: &RisArray,
        src: &PlaneWaveSource,
        cfg: &FarFieldConfig,
    ) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Empty("objective"));
        }
        let kernel = ApertureSum::new(array, src.wavenumber());
        let scale = cfg.e0 * src.amplitude();
        let (ex, ey): (Vec<_>, Vec<_>) = terms.iter().map(|t| kernel.factors(t.direction)).unzip();
        let gains = terms
            .iter()
            .map(|t| scale * cfg.element_gain(t.direction.theta))
            .collect();
        let incident = crate::farfield::incident_phase(array, src)
            .iter()
            .map(|&p| c64::cis(p))
            .collect();
        Ok(Self {
            terms,
            gains,
            ex,
            ey,
            incident,
            rows: array.rows(),
            cols: array.cols(),
        })
    }

    /// Delivery cells target the composite magnitude with weight 1;
    /// suppression cells target zero with weight `w_opt`. A cell in both
    /// masks contributes both terms.
    pub fn from_masks(
        masks: &RegionMasks,
        composite: &AngularFieldMap,
        w_opt: f64,
        array: &RisArray,
        src: &PlaneWaveSource,
        cfg: &FarFieldConfig,
    ) -> Result<Self> {
        let grid = composite.grid();
        let dir = |(i, j): (usize, usize)| {
            let (t, p) = grid.direction(i, j);
            Direction::new(t, p)
        };
        let mut terms: Vec<Term> = masks
            .delivery
            .indexed_iter()
            .filter(|(_, &m)| m)
            .map(|(cell, _)| Term {
                direction: dir(cell),
                target: composite.values()[cell].norm(),
                weight: 1.0,
            })
            .collect();
        terms.extend(
            masks
                .suppression
                .indexed_iter()
                .filter(|(_, &m)| m)
                .map(|(cell, _)| Term {
                    direction: dir(cell),
                    target: 0.0,
                    weight: w_opt,
                }),
        );
        Self::new(terms, array, src, cfg)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    fn weights(&self, phase: &PhaseProfile) -> Result<Vec<c64>> {
        if phase.rows() != self.rows || phase.cols() != self.cols {
            return Err(Error::DimensionMismatch {
                what: "phase profile vs objective",
                expected: format!("{}x{}", self.rows, self.cols),
                actual: format!("{}x{}", phase.rows(), phase.cols()),
            });
        }
        Ok(phase
            .as_slice()
            .iter()
            .zip(&self.incident)
            .map(|(&p, inc)| c64::cis(p) * inc)
            .collect())
    }

    fn field(&self, t: usize, w: &[c64]) -> c64 {
        crate::farfield::sum_with_factors(w, &self.ex[t], &self.ey[t]) * self.gains[t]
    }

    pub fn cost(&self, phase: &PhaseProfile) -> Result<f64> {
        let w = self.weights(phase)?;
        Ok(self.cost_with(&w))
    }

    fn cost_with(&self, w: &[c64]) -> f64 {
        let partials: Vec<f64> = (0..self.terms.len())
            .collect::<Vec<_>>()
            .par_chunks(REDUCTION_CHUNK)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&t| {
                        let r = self.field(t, w) - self.terms[t].target;
                        self.terms[t].weight * r.norm_sqr()
                    })
                    .sum::<f64>()
            })
            .collect();
        partials.iter().sum()
    }

    /// `J` and `dJ/dPhi_n = -2 sum_t w_t Im{conj(E_t - T_t) g_{t,n}}`, where
    /// `g_{t,n}` is element `n`'s contribution to `E_t`.
    pub fn cost_and_gradient(&self, phase: &PhaseProfile) -> Result<(f64, Array2<f64>)> {
        let w = self.weights(phase)?;
        let n_el = w.len();
        let idx: Vec<usize> = (0..self.terms.len()).collect();
        let partials: Vec<(f64, Vec<c64>)> = idx
            .par_chunks(REDUCTION_CHUNK)
            .map(|chunk| {
                let mut cost = 0.0;
                let mut back = vec![c64::new(0.0, 0.0); n_el];
                for &t in chunk {
                    let term = &self.terms[t];
                    let r = self.field(t, &w) - term.target;
                    cost += term.weight * r.norm_sqr();
                    // accumulates conj(B_n), B_n = sum_t w_t gain_t conj(r_t) ey_r ex_c
                    let coef = r * term.weight * self.gains[t];
                    accumulate_outer(&mut back, coef, &self.ey[t], &self.ex[t], self.cols);
                }
                (cost, back)
            })
            .collect();
        let cost = partials.iter().map(|(c, _)| c).sum();
        let back = sum_partials(partials.into_iter().map(|(_, b)| b).collect(), n_el);
        let grad: Vec<f64> = back
            .iter()
            .zip(&w)
            .map(|(b, wn)| -2.0 * (b.conj() * wn).im)
            .collect();
        Ok((
            cost,
            Array2::from_shape_vec((self.rows, self.cols), grad).expect("array-sized gradient"),
        ))
    }
}

/// `20 log10(final / initial)`, floored at [`PERFORMANCE_FLOOR_DB`].
pub fn performance(final_magnitude: f64, initial_magnitude: f64) -> Result<f64> {
    if !(initial_magnitude > 0.0) {
        return Err(Error::ZeroReference);
    }
    if final_magnitude < 1e-10 * initial_magnitude {
        return Ok(PERFORMANCE_FLOOR_DB);
    }
    Ok(20.0 * (final_magnitude / initial_magnitude).log10())
}

/// Region-class figure: mean final magnitude over mean initial magnitude.
pub fn aggregate_performance(finals: &[f64], initials: &[f64]) -> Result<f64> {
    if finals.is_empty() || finals.len() != initials.len() {
        return Err(Error::Empty("performance samples"));
    }
    let n = finals.len() as f64;
    performance(finals.iter().sum::<f64>() / n, initials.iter().sum::<f64>() / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub phase: PhaseProfile,
    pub iterations: usize,
    pub cost_history: Vec<f64>,
    pub final_mu: f64,
}

/// Descent with step rejection: a step that raises `J` is discarded and
/// `mu` halved. Convergence is judged on accepted steps only.
pub fn refine(init: &PhaseProfile, objective: &Objective, params: &ShieldParams) -> Result<RefineOutcome> {
    let (mut cost, mut grad) = objective.cost_and_gradient(init)?;
    if !cost.is_finite() {
        return Err(Error::Divergence { stage: "refine", iteration: 0 });
    }
    let mut phase = init.clone();
    let mut mu = params.mu;
    let mut history = vec![cost];
    let mut iterations = 0;
    while iterations < params.max_iterations {
        if cost == 0.0 || grad.iter().all(|&g| g == 0.0) {
            break;
        }
        iterations += 1;
        let candidate = PhaseProfile::new(&phase.values().view() - &(&grad * mu))?;
        let (c_cost, c_grad) = objective.cost_and_gradient(&candidate)?;
        if !c_cost.is_finite() {
            return Err(Error::Divergence { stage: "refine", iteration: iterations });
        }
        if c_cost > cost {
            mu *= 0.5;
            continue;
        }
        let rel = (cost - c_cost) / cost;
        phase = candidate;
        cost = c_cost;
        grad = c_grad;
        history.push(cost);
        if rel < params.tolerance {
            break;
        }
    }
    Ok(RefineOutcome {
        phase,
        iterations,
        cost_history: history,
        final_mu: mu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    Delivery,
    Suppression,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionPerformance {
    pub kind: RegionKind,
    pub direction: Direction,
    pub initial: f64,
    pub common: f64,
    pub final_magnitude: f64,
    /// `P_k` of the refined profile (dB).
    pub p_db: f64,
}

#[derive(Debug, Clone)]
pub struct ShieldResult {
    pub phi_opt: PhaseProfile,
    pub phi_common: PhaseProfile,
    pub regions: Vec<RegionPerformance>,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub cost_history: Vec<f64>,
    pub masks: RegionMasks,
    pub entry_maps: Vec<AngularFieldMap>,
    pub composite: AngularFieldMap,
}

impl ShieldResult {
    pub fn delivery(&self) -> impl Iterator<Item = &RegionPerformance> {
        self.regions.iter().filter(|r| r.kind == RegionKind::Delivery)
    }

    pub fn suppression(&self) -> impl Iterator<Item = &RegionPerformance> {
        self.regions.iter().filter(|r| r.kind == RegionKind::Suppression)
    }
}

/// The full pipeline for `d` delivery entries followed by `u` suppression
/// entries, all sharing one angle of arrival.
pub fn run(
    desc: &ArrayDescriptor,
    entries: &[&CodebookEntry],
    grid: &Arc<AngularGrid>,
    params: &ShieldParams,
) -> Result<ShieldResult> {
    params.validate()?;
    if entries.is_empty() {
        return Err(Error::Empty("entry list"));
    }
    check_split(entries.len(), params)?;
    let aoa = entries[0].aoa;
    if entries.iter().any(|e| e.aoa != aoa) {
        return Err(invalid("entries", "all entries must share one angle of arrival"));
    }
    let src = desc.source(aoa)?;
    let cfg = &desc.config;
    let array = &desc.array;
    let entry_maps = entries
        .iter()
        .map(|e| scattered_field(array, &e.phase, &src, grid, cfg))
        .collect::<Result<Vec<_>>>()?;
    let masks = build_masks(&entry_maps, params)?;
    let composite = composite_field(&entry_maps, &masks, params)?;
    let phi_common = back_project(&composite, array, &src)?;
    let objective = Objective::from_masks(&masks, &composite, params.w_opt, array, &src, cfg)?;
    let outcome = refine(&phi_common, &objective, params)?;

    let regions = entries
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let at = |phase: &PhaseProfile| field_at_poi(array, phase, &src, cfg, e.aod).map(|s| s.magnitude);
            let final_magnitude = at(&outcome.phase)?;
            Ok(RegionPerformance {
                kind: if k < params.d {
                    RegionKind::Delivery
                } else {
                    RegionKind::Suppression
                },
                direction: e.aod,
                initial: e.initial_poi,
                common: at(&phi_common)?,
                final_magnitude,
                p_db: performance(final_magnitude, e.initial_poi)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ShieldResult {
        phi_opt: outcome.phase,
        phi_common,
        regions,
        iterations: outcome.iterations,
        initial_cost: outcome.cost_history[0],
        final_cost: *outcome.cost_history.last().expect("history starts non-empty"),
        cost_history: outcome.cost_history,
        masks,
        entry_maps,
        composite,
    })
}

/// Complex weights of a profile, for callers evaluating fields directly.
pub fn profile_weights(array: &RisArray, phase: &PhaseProfile, src: &PlaneWaveSource) -> Vec<c64> {
    element_weights(array, phase, src)
}
