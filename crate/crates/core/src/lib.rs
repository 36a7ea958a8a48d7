//! Cellular sheaves over graphs and the opinion-dynamics flows they support.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod expression;
pub mod flow;
pub mod graph;
pub mod nonlinear;
pub mod run;
pub mod scenario;
pub mod sheaf;
pub mod spectral;

pub use error::{Result, SheafError};
pub use flow::{FlowConfig, Integrator, Trajectory};
pub use graph::{Graph, Subcomplex};
pub use sheaf::{CoboundaryMatrix, Cochain0, Cochain1, Sheaf};

pub use nalgebra;
