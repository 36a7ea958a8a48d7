//! Linear opinion dynamics: sheaf heat equation, stubborn agents with
//! harmonic extension, and reluctance feedback.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SheafError};
use crate::flow::{self, AffineSystem, FlowConfig, Monitor, OnDivergence, RunSpec, Trajectory};
use crate::sheaf::{Cochain0, Sheaf};
use crate::spectral::{self, kernel_basis, pinv_solve, sheaf_laplacian, DEFAULT_RANK_TOL};

fn check_x0(sheaf: &Sheaf, x0: &Cochain0) -> Result<()> {
    if x0.len() != sheaf.total_vertex_dim() {
        return Err(SheafError::LengthMismatch {
            context: "initial 0-cochain",
            expected: sheaf.total_vertex_dim(),
            found: x0.len(),
        });
    }
    Ok(())
}

/// Cochain indices belonging to the given vertices, vertex order preserved.
pub(crate) fn vertex_indices(sheaf: &Sheaf, vertices: &[usize]) -> Vec<usize> {
    vertices
        .iter()
        .flat_map(|&v| sheaf.vertex_range(v))
        .collect()
}

/// Sorted, deduplicated, range-checked vertex set.
pub(crate) fn vertex_set(sheaf: &Sheaf, vertices: &[usize]) -> Result<Vec<usize>> {
    let n = sheaf.graph().n_vertices();
    let mut out = vertices.to_vec();
    out.sort_unstable();
    out.dedup();
    if let Some(&v) = out.iter().find(|&&v| v >= n) {
        return Err(SheafError::IndexOutOfRange {
            context: "vertex set",
            index: v,
            len: n,
        });
    }
    Ok(out)
}

fn complement(sheaf: &Sheaf, set: &[usize]) -> Vec<usize> {
    (0..sheaf.graph().n_vertices())
        .filter(|v| set.binary_search(v).is_err())
        .collect()
}

fn energy_monitor(sheaf: &Sheaf) -> Monitor<'static> {
    let delta = sheaf.coboundary();
    Monitor {
        names: vec!["disagreement", "norm2_x"],
        eval: Box::new(move |x| vec![delta.apply_raw(x).norm_squared(), x.norm_squared()]),
    }
}

fn run_affine(
    sys: &AffineSystem,
    x0: &DVector<f64>,
    cfg: &FlowConfig,
    monitor: Monitor<'_>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let (integrator, step, exact) = flow::plan_affine(cfg, sys, x0)?;
    let rhs = |x: &DVector<f64>| sys.rhs(x);
    flow::run(
        x0,
        RunSpec {
            rhs: &rhs,
            exact,
            restep: None,
            integrator,
            step,
            t_max: cfg.t_max,
            tol: cfg.tol_for(x0),
            record_every: cfg.record_every,
            on_divergence: OnDivergence::Error,
            monitor,
        },
    )
}

/// Integrates `dx/dt = -alpha L x`. Records `disagreement = ||delta x||^2` and `norm2_x`.
pub fn diffuse(sheaf: &Sheaf, x0: &Cochain0, cfg: &FlowConfig) -> Result<Trajectory> {
    check_x0(sheaf, x0)?;
    let l = sheaf_laplacian(sheaf).into_matrix();
    let sys = AffineSystem::homogeneous(l * cfg.alpha);
    run_affine(&sys, x0.values(), cfg, energy_monitor(sheaf))
}

/// Limit of the heat equation without integrating: orthogonal projection onto `H^0`.
pub fn diffusion_limit(sheaf: &Sheaf, x0: &Cochain0) -> Result<Cochain0> {
    check_x0(sheaf, x0)?;
    let basis = spectral::h0(sheaf)?;
    x0.with_values(basis.project(x0.values()))
}

/// Harmonic extension of `u` (stacked over `boundary` in increasing vertex
/// order) to the remaining vertices `Y`:
/// `y = -L[Y,Y]^+ L[Y,U] u + P_ker(L[Y,Y]) y0`.
///
/// With `y0 = None` this is the minimum-norm extension.
pub fn harmonic_extend(
    sheaf: &Sheaf,
    boundary: &[usize],
    u: &DVector<f64>,
    y0: Option<&DVector<f64>>,
) -> Result<Cochain0> {
    let uset = vertex_set(sheaf, boundary)?;
    let yset = complement(sheaf, &uset);
    let ui = vertex_indices(sheaf, &uset);
    let yi = vertex_indices(sheaf, &yset);
    if u.len() != ui.len() {
        return Err(SheafError::LengthMismatch {
            context: "boundary values",
            expected: ui.len(),
            found: u.len(),
        });
    }
    if let Some(y0) = y0 {
        if y0.len() != yi.len() {
            return Err(SheafError::LengthMismatch {
                context: "interior initial values",
                expected: yi.len(),
                found: y0.len(),
            });
        }
    }
    let l = sheaf_laplacian(sheaf).into_matrix();
    let lyy = l.select_rows(&yi).select_columns(&yi);
    let lyu = l.select_rows(&yi).select_columns(&ui);
    let mut y = -pinv_solve(&lyy, &(&lyu * u))?;
    if let Some(y0) = y0 {
        y += kernel_basis(&lyy, DEFAULT_RANK_TOL)?.project(y0);
    }
    let mut x = DVector::zeros(sheaf.total_vertex_dim());
    for (k, &i) in ui.iter().enumerate() {
        x[i] = u[k];
    }
    for (k, &i) in yi.iter().enumerate() {
        x[i] = y[k];
    }
    sheaf.cochain0(x)
}

/// Harmonic extension of `x0|_U` keeping the `ker L[Y,Y]` part of `x0|_Y`:
/// the limit of [`stubborn_diffuse`].
pub fn stubborn_limit(sheaf: &Sheaf, stubborn: &[usize], x0: &Cochain0) -> Result<Cochain0> {
    check_x0(sheaf, x0)?;
    let uset = vertex_set(sheaf, stubborn)?;
    let yset = complement(sheaf, &uset);
    let u = x0.values().select_rows(&vertex_indices(sheaf, &uset));
    let y0 = x0.values().select_rows(&vertex_indices(sheaf, &yset));
    harmonic_extend(sheaf, &uset, &u, Some(&y0))
}

/// Integrates `dx_v/dt = -alpha (L x)_v` for `v` off `U`, `0` on `U`.
/// Implemented by masking rows, so the state stays in all of `C^0`.
pub fn stubborn_diffuse(
    sheaf: &Sheaf,
    stubborn: &[usize],
    x0: &Cochain0,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    check_x0(sheaf, x0)?;
    let uset = vertex_set(sheaf, stubborn)?;
    let yset = complement(sheaf, &uset);
    let ui = vertex_indices(sheaf, &uset);
    let yi = vertex_indices(sheaf, &yset);
    let l = sheaf_laplacian(sheaf).into_matrix() * cfg.alpha;
    let lyy = l.select_rows(&yi).select_columns(&yi);
    let lyu = l.select_rows(&yi).select_columns(&ui);
    let u = x0.values().select_rows(&ui);
    let sys = AffineSystem {
        free: yi,
        a: lyy,
        b: -(lyu * u),
        dim: sheaf.total_vertex_dim(),
    };
    run_affine(&sys, x0.values(), cfg, energy_monitor(sheaf))
}

/// Integrates `dx_v/dt = -alpha (L x)_v + alpha gamma_v ((x0)_v - x_v)`.
pub fn reluctant_diffuse(
    sheaf: &Sheaf,
    gamma: &[f64],
    x0: &Cochain0,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    check_x0(sheaf, x0)?;
    let weights = reluctance_diagonal(sheaf, gamma)?;
    let l = sheaf_laplacian(sheaf).into_matrix();
    let a = (l + DMatrix::from_diagonal(&weights)) * cfg.alpha;
    let b = weights.component_mul(x0.values()) * cfg.alpha;
    let n = a.nrows();
    let sys = AffineSystem {
        free: (0..n).collect(),
        a,
        b,
        dim: n,
    };
    run_affine(&sys, x0.values(), cfg, energy_monitor(sheaf))
}

/// Limit of [`reluctant_diffuse`] in closed form:
/// `(L + G)^+ G x0 + P_ker(L + G) x0` with `G = diag(gamma_v I)`.
pub fn reluctant_limit(sheaf: &Sheaf, gamma: &[f64], x0: &Cochain0) -> Result<Cochain0> {
    check_x0(sheaf, x0)?;
    let weights = reluctance_diagonal(sheaf, gamma)?;
    let a = sheaf_laplacian(sheaf).into_matrix() + DMatrix::from_diagonal(&weights);
    let mut x = pinv_solve(&a, &weights.component_mul(x0.values()))?;
    x += kernel_basis(&a, DEFAULT_RANK_TOL)?.project(x0.values());
    x0.with_values(x)
}

fn reluctance_diagonal(sheaf: &Sheaf, gamma: &[f64]) -> Result<DVector<f64>> {
    let n = sheaf.graph().n_vertices();
    if gamma.len() != n {
        return Err(SheafError::LengthMismatch {
            context: "reluctance vector",
            expected: n,
            found: gamma.len(),
        });
    }
    let mut w = DVector::zeros(sheaf.total_vertex_dim());
    for (v, &g) in gamma.iter().enumerate() {
        if !(g.is_finite() && g >= 0.0) {
            return Err(SheafError::NegativeGamma {
                vertex: v,
                value: g,
            });
        }
        for i in sheaf.vertex_range(v) {
            w[i] = g;
        }
    }
    Ok(w)
}
