use thiserror::Error;

/// Errors raised by sheaf construction, linear algebra and the flow integrators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SheafError {
    #[error("edge {edge}: endpoint {vertex} out of range for {n_vertices} vertices")]
    VertexOutOfRange {
        edge: usize,
        vertex: usize,
        n_vertices: usize,
    },
    #[error("edge {edge} is a self-loop on vertex {vertex}")]
    SelfLoop { edge: usize, vertex: usize },
    #[error("edge {edge} duplicates an earlier edge ({u}, {v})")]
    DuplicateEdge { edge: usize, u: usize, v: usize },
    #[error("dimension list has length {found}, expected {expected}")]
    DimensionCount { expected: usize, found: usize },
    #[error("edge {edge}: missing restriction block for vertex {vertex}")]
    MissingRestriction { edge: usize, vertex: usize },
    #[error(
        "edge {edge}, vertex {vertex}: restriction block is {found_rows}x{found_cols}, expected {expected_rows}x{expected_cols}"
    )]
    ShapeMismatch {
        edge: usize,
        vertex: usize,
        expected_rows: usize,
        expected_cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("non-finite entry in {context}")]
    NonFiniteEntry { context: String },
    #[error("{context}: length {found}, expected {expected}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("reluctance for vertex {vertex} is {value}, must be finite and >= 0")]
    NegativeGamma { vertex: usize, value: f64 },
    #[error("vertex {vertex} is not an endpoint of edge {edge}")]
    NotIncident { vertex: usize, edge: usize },
    #[error("edge {edge} has an endpoint outside the vertex subset")]
    DanglingEdge { edge: usize },
    #[error("index {index} out of range ({len} available) in {context}")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },
    #[error("symmetric eigensolver failed: {0}")]
    EigSolverFailure(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no convergence by t = {t}: residual {residual:e} above tolerance {tol:e}")]
    NonConvergence { t: f64, residual: f64, tol: f64 },
    #[error("step {step} too large: explicit integration diverged at t = {t}")]
    StepTooLarge { step: f64, t: f64 },
    #[error("state is not an interior fixed point: edge {edge} has margin {margin:e}")]
    NotInterior { edge: usize, margin: f64 },
    #[error("negative edge set does not disconnect the graph")]
    NotACutset,
}

pub type Result<T, E = SheafError> = std::result::Result<T, E>;
