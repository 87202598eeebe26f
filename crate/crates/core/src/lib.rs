//! Coordinate-free crystal property toolkit.
//!
//! A crystal is described by its formula, its space group and optional
//! informatics fields (topology, cell volume, porosity, ...). These are turned
//! into a fixed-length token sequence, embedded, and fed to a small
//! transformer encoder trained with masked-token and lattice-parameter
//! objectives, then finetuned for property regression.

pub mod grammar;
pub mod objectives;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod tensor;
pub mod porosity;
pub mod training;
