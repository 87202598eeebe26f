//! Grid-point porosity of periodic structures.
//!
//! A regular grid is laid over the unit cell. A point is occupied when it
//! lies inside some atom's van der Waals sphere (nearest periodic image).
//! It is admissible when a probe sphere centred there touches no atom, and
//! accessible when it is admissible and connected, through face-adjacent
//! admissible points, to a channel that wraps around the cell.

mod grid;
mod radii;
mod structure;

use thiserror::Error;

use crate::embedding::{quantize_informatics, BinSpec, EmbeddingError, InformaticsFields, NumericField};

pub use grid::{
    classify, clearance_grid, compute_porosity, validity_warnings, ClearanceGrid, GridSpec, PorosityOptions, PorosityResult,
    DEFAULT_DENSITY, DEFAULT_PROBE_RADIUS,
};
pub use radii::{RadiusTable, FALLBACK_RADIUS};
pub use structure::{PeriodicStructure, Site};

#[derive(Debug, Error)]
pub enum PorosityError {
    #[error("invalid structure: {0}")]
    Structure(String),
    #[error("lattice is singular or left-handed (volume {0})")]
    SingularLattice(f64),
    #[error("no van der Waals radius for `{0}`")]
    MissingRadius(String),
    #[error("probe radius {0} must be finite and non-negative")]
    NegativeProbe(f64),
    #[error("grid density {0} must be finite and positive")]
    BadDensity(f64),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Porosity and accessible-porosity tokens.
pub fn porosity_tokens(result: &PorosityResult, spec: &BinSpec) -> Result<(String, String), EmbeddingError> {
    Ok((
        quantize_informatics(result.void_fraction, NumericField::Porosity, spec)?,
        quantize_informatics(result.accessible_fraction, NumericField::AccessiblePorosity, spec)?,
    ))
}

/// Volume, atom count and both porosity values as informatics fields.
pub fn structure_informatics(s: &PeriodicStructure, result: &PorosityResult) -> InformaticsFields {
    InformaticsFields {
        unit_cell_volume: Some(s.volume()),
        atom_count: Some(s.sites().len() as u32).filter(|&n| n > 0),
        porosity_fraction: Some(result.void_fraction),
        accessible_void_fraction: Some(result.accessible_fraction),
        ..InformaticsFields::default()
    }
}

#[cfg(test)]
mod tests;
