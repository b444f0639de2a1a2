//! Deterministic simulator and library for confidence-aware exploration of
//! uneven terrain.
//!
//! The crate covers the full desk-scale pipeline: an analytic ground-truth
//! terrain sampled by a simulated ranging sensor, a per-cell filtered
//! elevation map with confidence tracking, geometric traversability analysis
//! over that map, a sampling-based local exploration planner whose utility
//! combines volumetric and confidence gain, and a mission loop that runs
//! scripted episodes and records their outcomes for evaluation.
//!
//! Everything is seeded: one random stream drives an episode, so a rerun
//! with the same configuration reproduces the mission record byte for byte.
//!
//! The numeric core (filter cells, terrain attributes, gains) is generic
//! over the scalar type via [`real::Real`]; the pipeline instantiates it at
//! `f64` and the crate root exports those concrete aliases.

// Validation guards are written `!(x > 0.0)` on purpose: the negation also
// rejects NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over fixed-size matrix and voxel axes read better than
// iterator chains here.
#![allow(clippy::needless_range_loop)]

pub mod elevation;
pub mod experiment;
pub mod exploration;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod mission;
pub mod planner;
pub mod terrain;
pub mod linalg;
pub mod real;
pub mod sensor;
pub mod traversability;

pub use grid::{cell_center, footprint_offsets, grid_index, Cell, CellRect};

/// Filter cell state at the pipeline's working precision.
pub type ElevationCell = elevation::ElevationCell<f64>;
/// Rolling elevation map at the pipeline's working precision.
pub type LocalMap = elevation::LocalMap<f64>;
/// Arena-wide confidence record at the pipeline's working precision.
pub type GlobalConfidenceMap = elevation::GlobalConfidenceMap<f64>;
/// Traversability weights and limits at the pipeline's working precision.
pub type TraversabilityParams = traversability::TraversabilityParams<f64>;
/// Per-cell geometric attributes at the pipeline's working precision.
pub type TerrainAttributes = traversability::TerrainAttributes<f64>;
/// Derived attribute layer at the pipeline's working precision.
pub type AttributeLayer = traversability::AttributeLayer<f64>;

use thiserror::Error;

/// Errors surfaced by configuration parsing, validation and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("io failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
