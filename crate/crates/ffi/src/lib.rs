//! C ABI over `sheaf-dynamics`.
//!
//! Sheaves are passed around as opaque `SdSheaf` handles. Every function
//! returns an [`SdStatus`]; on failure a message is available from
//! [`sd_last_error_message`] on the same thread. Matrices are dense and
//! row-major. Output buffers are caller-allocated and their length is checked.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sheaf_dynamics::nalgebra::{DMatrix, DVector};
use sheaf_dynamics::scenario::{parse_scenario, parse_sheaf_json, ScenarioError};
use sheaf_dynamics::{control, dynamics, expression, run, spectral, Graph, Sheaf, SheafError};

/// Opaque sheaf handle. Free with [`sd_sheaf_free`].
pub struct SdSheaf(Sheaf);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed or inconsistent input (JSON, shapes, indices).
    Validation = 3,
    NonConvergence = 4,
    /// Any other numerical failure.
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn sd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

struct Failure(SdStatus, String);

impl From<SheafError> for Failure {
    fn from(e: SheafError) -> Self {
        let status = match e {
            SheafError::NonConvergence { .. } => SdStatus::NonConvergence,
            SheafError::EigSolverFailure(_)
            | SheafError::StepTooLarge { .. }
            | SheafError::NotInterior { .. }
            | SheafError::NotACutset => SdStatus::Numerical,
            _ => SdStatus::Validation,
        };
        Failure(status, e.to_string())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Numerical(inner) => inner.into(),
            ScenarioError::Io { .. } => Failure(SdStatus::Io, e.to_string()),
            _ => Failure(SdStatus::Validation, e.to_string()),
        }
    }
}

fn fail<T>(status: SdStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SdStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SdStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(SdStatus::NullPointer, format!("{what} is NULL"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(SdStatus::NullPointer, format!("{what} is NULL"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a>(h: *const SdSheaf) -> Result<&'a Sheaf, Failure> {
    match h.as_ref() {
        Some(s) => Ok(&s.0),
        None => fail(SdStatus::NullPointer, "sheaf handle is NULL"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(SdStatus::NullPointer, format!("{what} is NULL"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(SdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn store(out: *mut *mut SdSheaf, sheaf: Sheaf) -> Result<(), Failure> {
    if out.is_null() {
        return fail(SdStatus::NullPointer, "output handle pointer is NULL");
    }
    *out = Box::into_raw(Box::new(SdSheaf(sheaf)));
    Ok(())
}

fn copy_out(src: &[f64], dst: &mut [f64]) -> Result<(), Failure> {
    if dst.len() < src.len() {
        return fail(
            SdStatus::BufferTooSmall,
            format!("output needs {} entries, got {}", src.len(), dst.len()),
        );
    }
    dst[..src.len()].copy_from_slice(src);
    Ok(())
}

fn copy_matrix(m: &DMatrix<f64>, dst: &mut [f64]) -> Result<(), Failure> {
    copy_out(m.transpose().as_slice(), dst)
}

/// Builds a sheaf.
///
/// `edges` holds `2 * n_edges` vertex indices `(u0, v0, u1, v1, ...)`.
/// `maps` concatenates, per edge, the row-major map out of `u`
/// (`edge_dims[e] x vertex_dims[u]`) followed by the map out of `v`;
/// `maps_len` must equal the total entry count.
///
/// # Safety
/// Every pointer must reference at least the stated number of readable
/// elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_sheaf_new(
    n_vertices: usize,
    vertex_dims: *const usize,
    n_edges: usize,
    edges: *const usize,
    edge_dims: *const usize,
    maps: *const f64,
    maps_len: usize,
    out: *mut *mut SdSheaf,
) -> SdStatus {
    guard(|| {
        let vdims = slice(vertex_dims, n_vertices, "vertex_dims")?;
        let pairs = slice(edges, 2 * n_edges, "edges")?;
        let edims = slice(edge_dims, n_edges, "edge_dims")?;
        let data = slice(maps, maps_len, "maps")?;
        let mut keyed = BTreeMap::new();
        let mut at = 0usize;
        for e in 0..n_edges {
            for vertex in [pairs[2 * e], pairs[2 * e + 1]] {
                let cols = *vdims.get(vertex).ok_or_else(|| {
                    Failure(
                        SdStatus::Validation,
                        format!("edge {e}: vertex {vertex} out of range"),
                    )
                })?;
                let len = edims[e] * cols;
                if at + len > data.len() {
                    return fail(SdStatus::Validation, format!("maps too short at edge {e}"));
                }
                keyed.insert(
                    (vertex, e),
                    DMatrix::from_row_slice(edims[e], cols, &data[at..at + len]),
                );
                at += len;
            }
        }
        if at != data.len() {
            return fail(
                SdStatus::Validation,
                format!("maps has {} entries, expected {at}", data.len()),
            );
        }
        let graph = Graph::new(
            n_vertices,
            (0..n_edges).map(|e| (pairs[2 * e], pairs[2 * e + 1])),
        )?;
        let sheaf = Sheaf::new(graph, vdims.to_vec(), edims.to_vec(), keyed)?;
        store(out, sheaf)
    })
}

/// Builds a sheaf from JSON in the scenario `sheaf` schema.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_sheaf_from_json(
    json: *const c_char,
    out: *mut *mut SdSheaf,
) -> SdStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        store(out, parse_sheaf_json(text)?)
    })
}

/// # Safety
/// `sheaf` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sd_sheaf_free(sheaf: *mut SdSheaf) {
    if !sheaf.is_null() {
        drop(Box::from_raw(sheaf));
    }
}

/// # Safety
/// `sheaf` must be a live handle; each output pointer may be NULL to skip it.
#[no_mangle]
pub unsafe extern "C" fn sd_sheaf_dims(
    sheaf: *const SdSheaf,
    n_vertices: *mut usize,
    n_edges: *mut usize,
    total_vertex_dim: *mut usize,
    total_edge_dim: *mut usize,
) -> SdStatus {
    guard(|| {
        let s = handle(sheaf)?;
        for (p, v) in [
            (n_vertices, s.graph().n_vertices()),
            (n_edges, s.graph().n_edges()),
            (total_vertex_dim, s.total_vertex_dim()),
            (total_edge_dim, s.total_edge_dim()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Dense coboundary, `total_edge_dim x total_vertex_dim`, row-major.
///
/// # Safety
/// `out` must reference `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sd_sheaf_coboundary(
    sheaf: *const SdSheaf,
    out: *mut f64,
    out_len: usize,
) -> SdStatus {
    guard(|| {
        let s = handle(sheaf)?;
        copy_matrix(&s.coboundary().to_dense(), slice_mut(out, out_len, "out")?)
    })
}

/// Dense sheaf Laplacian, `total_vertex_dim` squared, row-major.
///
/// # Safety
/// `out` must reference `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sd_sheaf_laplacian(
    sheaf: *const SdSheaf,
    out: *mut f64,
    out_len: usize,
) -> SdStatus {
    guard(|| {
        let s = handle(sheaf)?;
        copy_matrix(
            spectral::sheaf_laplacian(s).matrix(),
            slice_mut(out, out_len, "out")?,
        )
    })
}

/// `dim H^0`. Pass `tol <= 0` for the default relative tolerance.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_sheaf_h0_dim(
    sheaf: *const SdSheaf,
    tol: f64,
    out: *mut usize,
) -> SdStatus {
    guard(|| {
        let s = handle(sheaf)?;
        if out.is_null() {
            return fail(SdStatus::NullPointer, "out is NULL");
        }
        let tol = if tol > 0.0 {
            tol
        } else {
            spectral::DEFAULT_RANK_TOL
        };
        *out = spectral::h0_with_tol(s, tol)?.dim();
        Ok(())
    })
}

/// Orthogonal projection of `x0` onto `H^0`: the heat-equation limit.
///
/// # Safety
/// `x0` and `out` must reference `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sd_diffusion_limit(
    sheaf: *const SdSheaf,
    x0: *const f64,
    len: usize,
    out: *mut f64,
) -> SdStatus {
    guard(|| {
        let s = handle(sheaf)?;
        let x = s.cochain0_from_slice(slice(x0, len, "x0")?)?;
        let lim = dynamics::diffusion_limit(s, &x)?;
        copy_out(lim.values().as_slice(), slice_mut(out, len, "out")?)
    })
}

/// Minimum-norm harmonic extension of `u` from the `boundary` vertices.
/// `u` stacks the boundary stalks in increasing vertex order; `out` receives
/// the full 0-cochain.
///
/// # Safety
/// Pointers must reference the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn sd_harmonic_extend(
    sheaf: *const SdSheaf,
    boundary: *const usize,
    n_boundary: usize,
    u: *const f64,
    u_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SdStatus {
    guard(|| {
        let s = handle(sheaf)?;
        let b = slice(boundary, n_boundary, "boundary")?;
        let u = DVector::from_column_slice(slice(u, u_len, "u")?);
        let x = dynamics::harmonic_extend(s, b, &u, None)?;
        copy_out(x.values().as_slice(), slice_mut(out, out_len, "out")?)
    })
}

/// Stabilizability with inputs on the given vertices. Writes the
/// cohomological verdict and the Hautus rank verdict (1 = stabilizable).
///
/// # Safety
/// `inputs` must reference `n_inputs` indices; outputs may be NULL.
#[no_mangle]
pub unsafe extern "C" fn sd_stabilizable(
    sheaf: *const SdSheaf,
    inputs: *const usize,
    n_inputs: usize,
    cohomology_verdict: *mut bool,
    rank_verdict: *mut bool,
) -> SdStatus {
    guard(|| {
        let s = handle(sheaf)?;
        let r = control::stabilizable(s, slice(inputs, n_inputs, "inputs")?)?;
        if !cohomology_verdict.is_null() {
            *cohomology_verdict = r.cohomology_verdict;
        }
        if !rank_verdict.is_null() {
            *rank_verdict = r.rank_verdict;
        }
        Ok(())
    })
}

/// Nearest sheaf (in Frobenius norm) for which `x` is a global section.
///
/// # Safety
/// `x` must reference `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_expression_limit(
    sheaf: *const SdSheaf,
    x: *const f64,
    len: usize,
    out: *mut *mut SdSheaf,
) -> SdStatus {
    guard(|| {
        let s = handle(sheaf)?;
        let x = s.cochain0_from_slice(slice(x, len, "x")?)?;
        store(out, expression::expression_limit(s, &x)?)
    })
}

/// Runs a scenario given as JSON text and writes its outputs into `out_dir`.
/// Returns `NonConvergence` (outputs still written) when a flow did not settle.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sd_run_scenario(
    scenario_json: *const c_char,
    out_dir: *const c_char,
) -> SdStatus {
    guard(|| {
        let text = str_arg(scenario_json, "scenario_json")?;
        let dir = str_arg(out_dir, "out_dir")?;
        let scenario = parse_scenario(text)?;
        let summary = run::run(&scenario, Path::new(dir))?;
        if summary.converged() == Some(false) {
            return fail(SdStatus::NonConvergence, "flow did not converge");
        }
        Ok(())
    })
}
