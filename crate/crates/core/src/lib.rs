//! Age-structured mechanical tumor growth: an explicit finite-volume solver
//! for cells structured by cell-cycle age and position, moved by a
//! porous-medium pressure law, together with reference solvers and the
//! diagnostics used to study the stiff-pressure (Hele-Shaw) limit.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod initial;
pub mod io;
pub mod kernels;
pub mod oracles;
pub mod params;
pub mod stepper;
pub mod sum;
pub mod sweep;

pub use error::{Error, ErrorClass, Result};
pub use grid::{Grid, GridSpec, State};
pub use params::{default_parameters, ParameterSet, Preset, PresetScalars};
pub use stepper::{run, step, RunResult, SimConfig};
