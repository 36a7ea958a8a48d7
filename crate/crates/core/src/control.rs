//! Stabilizability and detectability of the controlled heat equation
//! `dx/dt = -alpha L x + B u`, `y = C x`, with `B`/`C` the identity on the
//! stalks over a vertex subset and zero elsewhere.
//!
//! Each report carries two independent verdicts: the cohomological one
//! (`H^0(G, S; F) = 0`) and a direct rank test of the Hautus matrix at
//! `lambda = 0`. Eigenvalues of `-alpha L` are real and nonpositive, so every
//! other `lambda` with nonnegative real part already gives full rank.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dynamics::{vertex_indices, vertex_set};
use crate::error::Result;
use crate::graph::Subcomplex;
use crate::sheaf::Sheaf;
use crate::spectral::{numerical_rank, relative_h0_with_tol, sheaf_laplacian, DEFAULT_RANK_TOL};

/// Diffusion strength used in the Hautus matrix. The rank test does not depend on it.
pub const CONTROL_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlProperty {
    Stabilizable,
    Detectable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlReport {
    pub property: ControlProperty,
    /// Input set `U` or observation set `Y`.
    pub vertex_set: Vec<usize>,
    pub relative_h0_dim: usize,
    pub cohomology_verdict: bool,
    pub rank_verdict: bool,
    pub hautus_rank: usize,
    pub state_dim: usize,
    pub lambda_checked: Vec<f64>,
    pub tol: f64,
    pub note: &'static str,
}

impl ControlReport {
    pub fn agree(&self) -> bool {
        self.cohomology_verdict == self.rank_verdict
    }
}

const LAMBDA_NOTE: &str =
    "only lambda = 0 tested: -alpha L is symmetric NSD, other lambda with Re >= 0 give full rank";

fn selector(sheaf: &Sheaf, set: &[usize]) -> DMatrix<f64> {
    let idx = vertex_indices(sheaf, set);
    let mut b = DMatrix::zeros(sheaf.total_vertex_dim(), idx.len());
    for (k, &i) in idx.iter().enumerate() {
        b[(i, k)] = 1.0;
    }
    b
}

fn relative_dim(sheaf: &Sheaf, set: &[usize], tol: f64) -> Result<usize> {
    let a = Subcomplex::induced(sheaf.graph(), set)?;
    Ok(relative_h0_with_tol(sheaf, &a, tol)?.dim())
}

/// Stabilizability with input set `U`: `[-alpha L | B]` must have full row rank.
pub fn stabilizable(sheaf: &Sheaf, inputs: &[usize]) -> Result<ControlReport> {
    stabilizable_with_tol(sheaf, inputs, DEFAULT_RANK_TOL)
}

pub fn stabilizable_with_tol(sheaf: &Sheaf, inputs: &[usize], tol: f64) -> Result<ControlReport> {
    let set = vertex_set(sheaf, inputs)?;
    let n = sheaf.total_vertex_dim();
    let l = sheaf_laplacian(sheaf).into_matrix() * -CONTROL_ALPHA;
    let b = selector(sheaf, &set);
    let mut hautus = DMatrix::zeros(n, n + b.ncols());
    hautus.columns_mut(0, n).copy_from(&l);
    hautus.columns_mut(n, b.ncols()).copy_from(&b);
    let rank = numerical_rank(&hautus, tol);
    let rel = relative_dim(sheaf, &set, tol)?;
    Ok(ControlReport {
        property: ControlProperty::Stabilizable,
        vertex_set: set,
        relative_h0_dim: rel,
        cohomology_verdict: rel == 0,
        rank_verdict: rank == n,
        hautus_rank: rank,
        state_dim: n,
        lambda_checked: vec![0.0],
        tol,
        note: LAMBDA_NOTE,
    })
}

/// Detectability with observation set `Y`: `[-alpha L ; C]` must have full column rank.
pub fn detectable(sheaf: &Sheaf, observed: &[usize]) -> Result<ControlReport> {
    detectable_with_tol(sheaf, observed, DEFAULT_RANK_TOL)
}

pub fn detectable_with_tol(sheaf: &Sheaf, observed: &[usize], tol: f64) -> Result<ControlReport> {
    let set = vertex_set(sheaf, observed)?;
    let n = sheaf.total_vertex_dim();
    let l = sheaf_laplacian(sheaf).into_matrix() * -CONTROL_ALPHA;
    let c = selector(sheaf, &set).transpose();
    let mut hautus = DMatrix::zeros(n + c.nrows(), n);
    hautus.rows_mut(0, n).copy_from(&l);
    hautus.rows_mut(n, c.nrows()).copy_from(&c);
    let rank = numerical_rank(&hautus, tol);
    let rel = relative_dim(sheaf, &set, tol)?;
    Ok(ControlReport {
        property: ControlProperty::Detectable,
        vertex_set: set,
        relative_h0_dim: rel,
        cohomology_verdict: rel == 0,
        rank_verdict: rank == n,
        hautus_rank: rank,
        state_dim: n,
        lambda_checked: vec![0.0],
        tol,
        note: LAMBDA_NOTE,
    })
}
