//! Sheaf Laplacians, numerical kernels (global, local and relative
//! cohomology in degree 0), projectors and pseudoinverse solves.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SheafError};
use crate::graph::Subcomplex;
use crate::sheaf::{subgraph_restriction, CoboundaryMatrix, Sheaf};

/// Eigen/singular values at or below `tol * max(1, largest)` count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Residual bound checked on every computed section: `||delta b|| <= 1e-9 * max(1, ||delta||)`.
pub const SECTION_RESIDUAL_TOL: f64 = 1e-9;

/// Symmetric positive semidefinite `delta^T delta` with the 0-cochain block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    matrix: DMatrix<f64>,
    offsets: Vec<usize>,
}

impl Laplacian {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Block `(v, u)` as a copied matrix.
    pub fn block(&self, v: usize, u: usize) -> DMatrix<f64> {
        let (r0, r1) = (self.offsets[v], self.offsets[v + 1]);
        let (c0, c1) = (self.offsets[u], self.offsets[u + 1]);
        self.matrix.view((r0, c0), (r1 - r0, c1 - c0)).into_owned()
    }
}

/// Orthonormal basis of a subspace, stored as matrix columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: DMatrix<f64>,
    tol: f64,
}

impl SubspaceBasis {
    pub fn new(basis: DMatrix<f64>, tol: f64) -> Self {
        Self { basis, tol }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Dimension of the ambient cochain space.
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Coordinates `B^T x` of `x` in this basis.
    pub fn coordinates(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(x)
    }

    /// Orthogonal projection `B B^T x`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.basis * self.coordinates(x)
    }
}

/// `L = delta^T delta`, assembled blockwise from the edge rows.
pub fn laplacian(delta: &CoboundaryMatrix) -> Laplacian {
    let (_, n) = delta.shape();
    let vertex_offsets = delta.vertex_offsets().to_vec();
    let mut l = DMatrix::zeros(n, n);
    for row in delta.rows() {
        let blocks = [(row.tail, &row.tail_block), (row.head, &row.head_block)];
        for &(a, ba) in &blocks {
            for &(b, bb) in &blocks {
                let prod = ba.tr_mul(bb);
                let mut view = l.view_mut(
                    (vertex_offsets[a], vertex_offsets[b]),
                    (ba.ncols(), bb.ncols()),
                );
                view += prod;
            }
        }
    }
    let sym = (&l + l.transpose()) * 0.5;
    Laplacian {
        matrix: sym,
        offsets: vertex_offsets,
    }
}

/// Laplacian of a sheaf.
pub fn sheaf_laplacian(sheaf: &Sheaf) -> Laplacian {
    laplacian(&sheaf.coboundary())
}

fn sorted_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000).ok_or_else(|| {
        SheafError::EigSolverFailure(format!("no convergence on a {n}x{n} matrix"))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// Ascending eigenvalues and matching orthonormal eigenvectors of a symmetric matrix.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    sorted_eigen(m)
}

/// Orthonormal basis of the numerical kernel of a symmetric PSD matrix:
/// eigenvectors with eigenvalue `<= tol * max(lambda_max, 1)`.
pub fn kernel_basis(m: &DMatrix<f64>, tol: f64) -> Result<SubspaceBasis> {
    let n = m.nrows();
    let (values, vectors) = sorted_eigen(m)?;
    let cutoff = tol * values.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
    let cols: Vec<usize> = (0..n).filter(|&i| values[i].abs() <= cutoff).collect();
    let mut basis = DMatrix::zeros(n, cols.len());
    for (k, &i) in cols.iter().enumerate() {
        basis.set_column(k, &vectors.column(i));
    }
    Ok(SubspaceBasis { basis, tol })
}

/// Numerical rank by SVD: singular values above `tol * max(1, sigma_max)`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let cutoff = tol * sv.iter().fold(1.0_f64, |a, &b| a.max(b));
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Largest singular value (0 for an empty matrix).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0, |a, &b| a.max(b))
}

/// Kernel of `delta` restricted to the given column and row index sets,
/// computed from the eigendecomposition of the restricted Gram matrix and
/// cross-checked against an SVD rank count.
fn restricted_kernel(
    delta: &DMatrix<f64>,
    rows: &[usize],
    cols: &[usize],
    tol: f64,
) -> Result<SubspaceBasis> {
    let sub = delta.select_rows(rows).select_columns(cols);
    let gram = sub.tr_mul(&sub);
    let basis = kernel_basis(&gram, tol)?;
    let scale = spectral_norm(&sub).max(1.0);
    for (k, col) in basis.basis.column_iter().enumerate() {
        let r = (&sub * col).norm();
        if r > SECTION_RESIDUAL_TOL * scale {
            log::warn!("kernel vector {k} has residual {r:e} (scale {scale:e})");
        }
    }
    let svd_dim = cols.len() - numerical_rank(&sub, tol);
    if svd_dim != basis.dim() {
        log::warn!(
            "kernel dimension disagreement: eigen {} vs svd {}",
            basis.dim(),
            svd_dim
        );
    }
    Ok(basis)
}

/// `H^0(G; F)`: orthonormal basis of global sections.
pub fn h0(sheaf: &Sheaf) -> Result<SubspaceBasis> {
    h0_with_tol(sheaf, DEFAULT_RANK_TOL)
}

pub fn h0_with_tol(sheaf: &Sheaf, tol: f64) -> Result<SubspaceBasis> {
    let delta = sheaf.coboundary().to_dense();
    let rows: Vec<usize> = (0..delta.nrows()).collect();
    let cols: Vec<usize> = (0..delta.ncols()).collect();
    restricted_kernel(&delta, &rows, &cols, tol)
}

/// `H^0(A; F)`: sections over the subcomplex `A`, in the coordinates of `C^0(A; F)`
/// (vertex blocks of `A` in increasing vertex order).
pub fn local_sections(sheaf: &Sheaf, a: &Subcomplex) -> Result<SubspaceBasis> {
    local_sections_with_tol(sheaf, a, DEFAULT_RANK_TOL)
}

pub fn local_sections_with_tol(sheaf: &Sheaf, a: &Subcomplex, tol: f64) -> Result<SubspaceBasis> {
    let (sub, _) = subgraph_restriction(sheaf, a)?;
    h0_with_tol(&sub, tol)
}

/// Relative cohomology `H^0(G, A; F)` together with the vertices it lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeH0 {
    /// Basis in the coordinates of `C^0(G, A; F)`.
    pub basis: SubspaceBasis,
    /// Vertices outside `A`, in increasing order.
    pub free_vertices: Vec<usize>,
    /// Cochain indices of `C^0(G, A; F)` inside `C^0(G; F)`.
    pub free_indices: Vec<usize>,
}

impl RelativeH0 {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Basis vectors extended by zero over `A`, as columns of a `C^0(G; F)` matrix.
    pub fn extend_by_zero(&self, total_dim: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(total_dim, self.dim());
        for (k, &i) in self.free_indices.iter().enumerate() {
            out.row_mut(i).copy_from(&self.basis.matrix().row(k));
        }
        out
    }

    /// Largest `||delta b||` over the zero-extended basis: how far the
    /// "global sections vanishing on A" reading is from holding.
    pub fn embedding_residual(&self, sheaf: &Sheaf) -> f64 {
        let ext = self.extend_by_zero(sheaf.total_vertex_dim());
        let delta = sheaf.coboundary();
        ext.column_iter()
            .map(|c| delta.apply_raw(&c.into_owned()).norm())
            .fold(0.0, f64::max)
    }
}

/// Kernel of `delta` with columns restricted to vertices off `A` and rows to
/// edges not in `A`.
pub fn relative_h0(sheaf: &Sheaf, a: &Subcomplex) -> Result<RelativeH0> {
    relative_h0_with_tol(sheaf, a, DEFAULT_RANK_TOL)
}

pub fn relative_h0_with_tol(sheaf: &Sheaf, a: &Subcomplex, tol: f64) -> Result<RelativeH0> {
    let delta = sheaf.coboundary().to_dense();
    let free_vertices: Vec<usize> = (0..sheaf.graph().n_vertices())
        .filter(|&v| !a.contains_vertex(v))
        .collect();
    let free_indices: Vec<usize> = free_vertices
        .iter()
        .flat_map(|&v| sheaf.vertex_range(v))
        .collect();
    let rows: Vec<usize> = (0..sheaf.graph().n_edges())
        .filter(|&e| !a.contains_edge(e))
        .flat_map(|e| sheaf.edge_range(e))
        .collect();
    let basis = restricted_kernel(&delta, &rows, &free_indices, tol)?;
    Ok(RelativeH0 {
        basis,
        free_vertices,
        free_indices,
    })
}

/// Orthogonal projector `B B^T` onto the span of an orthonormal basis.
pub fn projector(basis: &SubspaceBasis) -> DMatrix<f64> {
    basis.matrix() * basis.matrix().transpose()
}

/// Moore-Penrose pseudoinverse of a symmetric matrix via its eigendecomposition.
pub fn pseudo_inverse(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_eigen(m)?;
    let cutoff = tol * values.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
    let inv = DVector::from_iterator(
        values.len(),
        values
            .iter()
            .map(|&l| if l.abs() > cutoff { 1.0 / l } else { 0.0 }),
    );
    Ok(&vectors * DMatrix::from_diagonal(&inv) * vectors.transpose())
}

/// Minimum-norm least-squares solution `M^+ b` of a symmetric system.
pub fn pinv_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    pinv_solve_with_tol(m, b, DEFAULT_RANK_TOL)
}

pub fn pinv_solve_with_tol(m: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    if m.nrows() != b.len() {
        return Err(SheafError::LengthMismatch {
            context: "pinv_solve right-hand side",
            expected: m.nrows(),
            found: b.len(),
        });
    }
    let (values, vectors) = sorted_eigen(m)?;
    let cutoff = tol * values.iter().fold(1.0_f64, |a, &v| a.max(v.abs()));
    let mut coords = vectors.tr_mul(b);
    for (c, &l) in coords.iter_mut().zip(values.iter()) {
        *c = if l.abs() > cutoff { *c / l } else { 0.0 };
    }
    Ok(vectors * coords)
}

/// Extreme eigenvalues and the smallest eigenvalue above the kernel cutoff.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpectrumSummary {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Smallest eigenvalue with `|lambda|` above the cutoff, if any.
    pub smallest_nonzero: Option<f64>,
    pub kernel_dim: usize,
    pub tol: f64,
}

impl SpectrumSummary {
    /// Not positive semidefinite: `lambda_min < -tol * max(1, lambda_max)`.
    pub fn not_psd(&self) -> bool {
        self.lambda_min < -self.tol * self.lambda_max.max(1.0)
    }

    /// Eigenvalues of both signs beyond the cutoff.
    pub fn indefinite(&self) -> bool {
        self.not_psd() && self.lambda_max > self.tol * self.lambda_min.abs().max(1.0)
    }
}

pub fn spectrum_summary(m: &DMatrix<f64>, tol: f64) -> Result<SpectrumSummary> {
    let (values, _) = sorted_eigen(m)?;
    if values.is_empty() {
        return Ok(SpectrumSummary {
            lambda_min: 0.0,
            lambda_max: 0.0,
            smallest_nonzero: None,
            kernel_dim: 0,
            tol,
        });
    }
    let cutoff = tol * values.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
    let smallest_nonzero = values
        .iter()
        .copied()
        .filter(|l| l.abs() > cutoff)
        .min_by(|a, b| a.abs().total_cmp(&b.abs()));
    Ok(SpectrumSummary {
        lambda_min: values[0],
        lambda_max: values[values.len() - 1],
        smallest_nonzero,
        kernel_dim: values.iter().filter(|l| l.abs() <= cutoff).count(),
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::sheaf::tests::worked_example;

    const PRINTED_L: [[f64; 6]; 6] = [
        [5.0, -2.0, 4.0, 0.0, -1.0, 0.0],
        [-2.0, 2.0, -1.0, -1.0, 0.0, 0.0],
        [4.0, -1.0, 5.0, -1.0, 0.0, 0.0],
        [0.0, -1.0, -1.0, 2.0, 1.0, -1.0],
        [-1.0, 0.0, 0.0, 1.0, 2.0, -1.0],
        [0.0, 0.0, 0.0, -1.0, -1.0, 2.0],
    ];

    #[test]
    fn worked_example_laplacian_is_exact() {
        let l = sheaf_laplacian(&worked_example());
        for (i, row) in PRINTED_L.iter().enumerate() {
            for (j, &want) in row.iter().enumerate() {
                assert_eq!(l.matrix()[(i, j)], want, "({i},{j})");
            }
        }
    }

    #[test]
    fn block_formula() {
        let s = worked_example();
        let l = sheaf_laplacian(&s);
        for v in 0..4 {
            let mut diag = DMatrix::zeros(s.vertex_dims()[v], s.vertex_dims()[v]);
            for e in s.graph().incident_edges(v) {
                let f = s.restriction(v, e).unwrap();
                diag += f.tr_mul(f);
            }
            assert!((l.block(v, v) - diag).norm() <= 1e-12);
            for u in 0..4 {
                if u == v {
                    continue;
                }
                let expected = match s.graph().find_edge(u, v) {
                    Some(e) => -s
                        .restriction(v, e)
                        .unwrap()
                        .tr_mul(s.restriction(u, e).unwrap()),
                    None => DMatrix::zeros(s.vertex_dims()[v], s.vertex_dims()[u]),
                };
                assert!((l.block(v, u) - expected).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn graph_laplacian_and_zero_maps() {
        let l = sheaf_laplacian(&Sheaf::constant(Graph::path(2), 1));
        assert_eq!(
            l.matrix(),
            &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
        let g = Graph::path(3);
        let zero = Sheaf::from_edge_maps(
            g,
            vec![2, 1, 2],
            vec![1, 1],
            vec![
                (DMatrix::zeros(1, 2), DMatrix::zeros(1, 1)),
                (DMatrix::zeros(1, 1), DMatrix::zeros(1, 2)),
            ],
        )
        .unwrap();
        assert_eq!(sheaf_laplacian(&zero).matrix(), &DMatrix::zeros(5, 5));
        assert_eq!(h0(&zero).unwrap().dim(), 5);
    }

    #[test]
    fn kernel_of_cycle_is_constants() {
        let s = Sheaf::constant(Graph::cycle(3), 1);
        let k = h0(&s).unwrap();
        assert_eq!(k.dim(), 1);
        let c = k.matrix().column(0);
        let expected = 1.0 / 3f64.sqrt();
        for x in c.iter() {
            assert!((x.abs() - expected).abs() < 1e-12);
        }
        assert_eq!(
            kernel_basis(&DMatrix::identity(3, 3), 1e-10).unwrap().dim(),
            0
        );
    }

    #[test]
    fn constant_rn_has_n_sections() {
        for n in 1..4 {
            let s = Sheaf::constant(Graph::complete(4), n);
            assert_eq!(h0(&s).unwrap().dim(), n);
        }
    }

    #[test]
    fn local_and_relative() {
        let g = Graph::path(5);
        let s = Sheaf::constant(g.clone(), 1);
        let a = Subcomplex::induced(&g, &[0, 1, 3, 4]).unwrap();
        assert_eq!(local_sections(&s, &a).unwrap().dim(), 2);
        let single = Subcomplex::induced(&g, &[2]).unwrap();
        assert_eq!(local_sections(&s, &single).unwrap().dim(), 1);
        assert_eq!(local_sections(&s, &Subcomplex::empty()).unwrap().dim(), 0);

        assert_eq!(relative_h0(&s, &single).unwrap().dim(), 0);
        let all = Subcomplex::full(&g);
        assert_eq!(relative_h0(&s, &all).unwrap().dim(), 0);

        let two = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
        let s2 = Sheaf::constant(two.clone(), 1);
        let rel = relative_h0(&s2, &Subcomplex::induced(&two, &[0, 1]).unwrap()).unwrap();
        assert_eq!(rel.dim(), 1);
        assert!(rel.embedding_residual(&s2) < 1e-12);
        assert_eq!(rel.free_vertices, vec![2, 3]);
    }

    #[test]
    fn projector_cases() {
        let empty = SubspaceBasis::new(DMatrix::zeros(3, 0), 1e-10);
        assert_eq!(projector(&empty), DMatrix::zeros(3, 3));
        let full = SubspaceBasis::new(DMatrix::identity(3, 3), 1e-10);
        assert_eq!(projector(&full), DMatrix::identity(3, 3));
        let p = projector(&h0(&Sheaf::constant(Graph::path(4), 1)).unwrap());
        assert!((p - DMatrix::from_element(4, 4, 0.25)).norm() < 1e-12);
    }

    #[test]
    fn pinv_cases() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let x = pinv_solve(&m, &DVector::from_vec(vec![4.0, 0.0])).unwrap();
        assert!((x - DVector::from_vec(vec![2.0, 0.0])).norm() < 1e-14);

        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let x = pinv_solve(&m, &DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert!((x - DVector::from_vec(vec![0.5, -0.5])).norm() < 1e-14);
        let x = pinv_solve(&m, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(x.norm() < 1e-14);
    }

    #[test]
    fn polite_company_contains_polarized_section() {
        // Path a-b-c-d; the two right agents express -x to their left
        // neighbours and are frank with each other.
        let g = Graph::path(4);
        let one = || DMatrix::from_element(1, 1, 1.0);
        let neg = || DMatrix::from_element(1, 1, -1.0);
        let s = Sheaf::from_edge_maps(
            g,
            vec![1; 4],
            vec![1; 3],
            vec![(one(), one()), (one(), neg()), (one(), one())],
        )
        .unwrap();
        let k = h0(&s).unwrap();
        assert_eq!(k.dim(), 1);
        let x = DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]) * 0.5;
        assert!((k.project(&x) - &x).norm() < 1e-12);
    }
}
