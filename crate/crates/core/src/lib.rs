//! Physical-optics field models and phase optimizers for slicing wireless
//! coverage with reconfigurable intelligent surfaces.
//!
//! The far-field side ([`farfield`], [`codebook`], [`shield`]) steers and
//! multiplexes beams over an angular grid; the near-field side
//! ([`nearfield`], [`quietzone`]) carves a low-field sphere out of a room
//! lined with panels.

// `!(x > 0.0)` is how parameter checks reject NaN along with the rest
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codebook;
pub mod error;
pub mod farfield;
pub mod geometry;
pub mod grid;
pub mod nearfield;
pub mod phase;
pub mod quietzone;
pub mod shield;

pub use num_complex::Complex64 as c64;

pub use codebook::{build_codebook, generate_entry, ArrayDescriptor, Codebook, CodebookEntry, FormatError};
pub use error::{Error, Result};
pub use farfield::{
    coherence_bound, field_at_poi, incident_phase, scattered_field, steering_profile, Direction,
    FarFieldConfig, PoiSample,
};
pub use geometry::{wavelength_from_frequency, PlaneWaveSource, PointSource, RisArray, Vec3, SPEED_OF_LIGHT};
pub use grid::{AngularFieldMap, AngularGrid, DualVolumeGrid, Refinement};
pub use nearfield::{
    illuminate, quiet_zone_metrics, scatter_to_grid, FieldMode, QuietZoneMetrics, Scene, VolumeFieldMap,
};
pub use phase::{wrap_phase, PhaseProfile};
pub use quietzone::{
    init_per_element, optimize, run_quiet_zone, FieldCache, QuietZoneOutcome, QzOptimizerParams,
};
pub use shield::{
    back_project, build_masks, composite_field, performance, refine, Objective, RegionMasks,
    ShieldParams, ShieldResult,
};
