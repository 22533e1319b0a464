//! Conditional generation of match-3 level layouts with bot-validated
//! difficulty.
//!
//! The pipeline: [`dataset`] builds and annotates layouts using the
//! [`engine`] and scripted [`bot`]; [`model`] trains a masked conditional
//! VAE on top of the [`neural`] kernels; [`eval`] runs the inference sweep
//! and metric suite.

pub mod bot;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod eval;
pub mod grid;
pub mod model;
pub mod neural;

pub use error::{Error, Result};
pub use grid::{CellKind, ConditionSpec, LevelGrid, LevelSize, Pos, SymmetryKind};
