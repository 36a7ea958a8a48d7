//! Cellular sheaves on graphs, cochains and the coboundary operator.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SheafError};
use crate::graph::{Graph, Subcomplex};

/// Above this total dimension the coboundary is only ever applied blockwise.
pub const DENSE_COBOUNDARY_LIMIT: usize = 4096;

/// A cellular sheaf: stalk dimensions on vertices and edges plus one
/// restriction map per incident (vertex, edge) pair.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Sheaf {
    graph: Graph,
    vertex_dims: Vec<usize>,
    edge_dims: Vec<usize>,
    /// `maps[e] = [F_{tail <= e}, F_{head <= e}]`.
    maps: Vec<[DMatrix<f64>; 2]>,
    vertex_offsets: Arc<[usize]>,
    edge_offsets: Arc<[usize]>,
}

fn offsets(dims: &[usize]) -> Arc<[usize]> {
    let mut out = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &d in dims {
        acc += d;
        out.push(acc);
    }
    out.into()
}

fn check_finite(m: &DMatrix<f64>, context: impl FnOnce() -> String) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SheafError::NonFiniteEntry { context: context() })
    }
}

impl Sheaf {
    /// Validating constructor. `restrictions` is keyed by incident pair
    /// `(vertex, edge)`; each block must be `edge_dims[e] x vertex_dims[v]`.
    pub fn new(
        graph: Graph,
        vertex_dims: Vec<usize>,
        edge_dims: Vec<usize>,
        mut restrictions: BTreeMap<(usize, usize), DMatrix<f64>>,
    ) -> Result<Self> {
        if vertex_dims.len() != graph.n_vertices() {
            return Err(SheafError::DimensionCount {
                expected: graph.n_vertices(),
                found: vertex_dims.len(),
            });
        }
        if edge_dims.len() != graph.n_edges() {
            return Err(SheafError::DimensionCount {
                expected: graph.n_edges(),
                found: edge_dims.len(),
            });
        }
        let mut maps = Vec::with_capacity(graph.n_edges());
        for (e, &(u, v)) in graph.edges().iter().enumerate() {
            let mut take = |vertex: usize| -> Result<DMatrix<f64>> {
                let block = restrictions
                    .remove(&(vertex, e))
                    .ok_or(SheafError::MissingRestriction { edge: e, vertex })?;
                if block.nrows() != edge_dims[e] || block.ncols() != vertex_dims[vertex] {
                    return Err(SheafError::ShapeMismatch {
                        edge: e,
                        vertex,
                        expected_rows: edge_dims[e],
                        expected_cols: vertex_dims[vertex],
                        found_rows: block.nrows(),
                        found_cols: block.ncols(),
                    });
                }
                check_finite(&block, || format!("restriction ({vertex}, edge {e})"))?;
                Ok(block)
            };
            let tail = take(u)?;
            let head = take(v)?;
            maps.push([tail, head]);
        }
        if let Some((&(vertex, edge), _)) = restrictions.iter().next() {
            return Err(if edge < graph.n_edges() {
                SheafError::NotIncident { vertex, edge }
            } else {
                SheafError::IndexOutOfRange {
                    context: "restriction edge index",
                    index: edge,
                    len: graph.n_edges(),
                }
            });
        }
        Ok(Self::from_parts(graph, vertex_dims, edge_dims, maps))
    }

    /// Builds from per-edge `(tail map, head map)` pairs in the graph's edge order.
    pub fn from_edge_maps(
        graph: Graph,
        vertex_dims: Vec<usize>,
        edge_dims: Vec<usize>,
        maps: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    ) -> Result<Self> {
        if maps.len() != graph.n_edges() {
            return Err(SheafError::DimensionCount {
                expected: graph.n_edges(),
                found: maps.len(),
            });
        }
        let mut keyed = BTreeMap::new();
        for (e, (tail, head)) in maps.into_iter().enumerate() {
            let (u, v) = graph.edge(e);
            keyed.insert((u, e), tail);
            keyed.insert((v, e), head);
        }
        Self::new(graph, vertex_dims, edge_dims, keyed)
    }

    pub(crate) fn from_parts(
        graph: Graph,
        vertex_dims: Vec<usize>,
        edge_dims: Vec<usize>,
        maps: Vec<[DMatrix<f64>; 2]>,
    ) -> Self {
        let vertex_offsets = offsets(&vertex_dims);
        let edge_offsets = offsets(&edge_dims);
        Self {
            graph,
            vertex_dims,
            edge_dims,
            maps,
            vertex_offsets,
            edge_offsets,
        }
    }

    /// The constant sheaf with stalk `R^n` everywhere and identity restrictions.
    pub fn constant(graph: Graph, n: usize) -> Self {
        let maps = (0..graph.n_edges())
            .map(|_| [DMatrix::identity(n, n), DMatrix::identity(n, n)])
            .collect();
        let vdims = vec![n; graph.n_vertices()];
        let edims = vec![n; graph.n_edges()];
        Self::from_parts(graph, vdims, edims, maps)
    }

    /// Same graph and stalks, new restriction maps. Shapes are re-validated.
    pub fn with_maps(&self, maps: Vec<[DMatrix<f64>; 2]>) -> Result<Self> {
        let pairs = maps.into_iter().map(|[a, b]| (a, b)).collect();
        Self::from_edge_maps(
            self.graph.clone(),
            self.vertex_dims.clone(),
            self.edge_dims.clone(),
            pairs,
        )
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn vertex_dims(&self) -> &[usize] {
        &self.vertex_dims
    }

    pub fn edge_dims(&self) -> &[usize] {
        &self.edge_dims
    }

    pub fn total_vertex_dim(&self) -> usize {
        *self.vertex_offsets.last().unwrap()
    }

    pub fn total_edge_dim(&self) -> usize {
        *self.edge_offsets.last().unwrap()
    }

    pub fn vertex_range(&self, v: usize) -> std::ops::Range<usize> {
        self.vertex_offsets[v]..self.vertex_offsets[v + 1]
    }

    pub fn edge_range(&self, e: usize) -> std::ops::Range<usize> {
        self.edge_offsets[e]..self.edge_offsets[e + 1]
    }

    pub fn vertex_offsets(&self) -> &[usize] {
        &self.vertex_offsets
    }

    /// `[tail map, head map]` of edge `e`.
    pub fn edge_maps(&self, e: usize) -> &[DMatrix<f64>; 2] {
        &self.maps[e]
    }

    pub fn all_edge_maps(&self) -> &[[DMatrix<f64>; 2]] {
        &self.maps
    }

    /// `F_{v <= e}`, if `v` is an endpoint of `e`.
    pub fn restriction(&self, v: usize, e: usize) -> Option<&DMatrix<f64>> {
        let (u, w) = self.graph.edge(e);
        if v == u {
            Some(&self.maps[e][0])
        } else if v == w {
            Some(&self.maps[e][1])
        } else {
            None
        }
    }

    pub fn cochain0(&self, values: DVector<f64>) -> Result<Cochain0> {
        Cochain0::new(values, self.vertex_offsets.clone())
    }

    pub fn cochain0_from_slice(&self, values: &[f64]) -> Result<Cochain0> {
        self.cochain0(DVector::from_column_slice(values))
    }

    pub fn zero_cochain0(&self) -> Cochain0 {
        Cochain0 {
            values: DVector::zeros(self.total_vertex_dim()),
            offsets: self.vertex_offsets.clone(),
        }
    }

    pub fn cochain1(&self, values: DVector<f64>) -> Result<Cochain1> {
        Cochain1::new(values, self.edge_offsets.clone())
    }

    /// The coboundary with the canonical orientation (tail = lower index).
    pub fn coboundary(&self) -> CoboundaryMatrix {
        coboundary(self)
    }

    /// Block row `delta_e` restricted to its two endpoint column blocks:
    /// `[-F_tail | F_head]`, of shape `edge_dim x (d_tail + d_head)`.
    pub fn edge_block_row(&self, e: usize) -> DMatrix<f64> {
        let [tail, head] = &self.maps[e];
        let rows = self.edge_dims[e];
        let mut out = DMatrix::zeros(rows, tail.ncols() + head.ncols());
        out.columns_mut(0, tail.ncols()).copy_from(&(-tail));
        out.columns_mut(tail.ncols(), head.ncols()).copy_from(head);
        out
    }

    /// Gathers `x_e = (x_tail, x_head)` for edge `e`.
    pub fn edge_gather(&self, e: usize, x: &DVector<f64>) -> DVector<f64> {
        let (u, v) = self.graph.edge(e);
        let (ru, rv) = (self.vertex_range(u), self.vertex_range(v));
        let mut out = DVector::zeros(ru.len() + rv.len());
        out.rows_mut(0, ru.len())
            .copy_from(&x.rows(ru.start, ru.len()));
        out.rows_mut(ru.len(), rv.len())
            .copy_from(&x.rows(rv.start, rv.len()));
        out
    }
}

/// Vertex-indexed stacked vector (an element of C^0).
#[derive(Debug, Clone, PartialEq)]
pub struct Cochain0 {
    values: DVector<f64>,
    offsets: Arc<[usize]>,
}

impl Cochain0 {
    fn new(values: DVector<f64>, offsets: Arc<[usize]>) -> Result<Self> {
        let expected = *offsets.last().unwrap();
        if values.len() != expected {
            return Err(SheafError::LengthMismatch {
                context: "0-cochain",
                expected,
                found: values.len(),
            });
        }
        if !values.iter().all(|x| x.is_finite()) {
            return Err(SheafError::NonFiniteEntry {
                context: "0-cochain".into(),
            });
        }
        Ok(Self { values, offsets })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.values.as_slice()[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: DVector<f64>) -> Result<Self> {
        Self::new(values, self.offsets.clone())
    }
}

/// Edge-indexed stacked vector (an element of C^1).
#[derive(Debug, Clone, PartialEq)]
pub struct Cochain1 {
    values: DVector<f64>,
    offsets: Arc<[usize]>,
}

impl Cochain1 {
    fn new(values: DVector<f64>, offsets: Arc<[usize]>) -> Result<Self> {
        let expected = *offsets.last().unwrap();
        if values.len() != expected {
            return Err(SheafError::LengthMismatch {
                context: "1-cochain",
                expected,
                found: values.len(),
            });
        }
        Ok(Self { values, offsets })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.values.as_slice()[self.offsets[e]..self.offsets[e + 1]]
    }
}

/// One oriented block row of the coboundary.
#[derive(Debug, Clone, PartialEq)]
pub struct CoboundaryRow {
    pub tail: usize,
    pub head: usize,
    /// `-F_{tail <= e}`
    pub tail_block: DMatrix<f64>,
    /// `+F_{head <= e}`
    pub head_block: DMatrix<f64>,
}

/// The coboundary `delta: C^0 -> C^1`, stored block-sparse by edge rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CoboundaryMatrix {
    rows: Vec<CoboundaryRow>,
    vertex_offsets: Arc<[usize]>,
    edge_offsets: Arc<[usize]>,
}

/// Assembles the coboundary of `sheaf`: for `e = u -> v`,
/// `(delta x)_e = F_{v<=e} x_v - F_{u<=e} x_u`.
pub fn coboundary(sheaf: &Sheaf) -> CoboundaryMatrix {
    let rows = sheaf
        .graph
        .edges()
        .iter()
        .zip(&sheaf.maps)
        .map(|(&(tail, head), [ft, fh])| CoboundaryRow {
            tail,
            head,
            tail_block: -ft,
            head_block: fh.clone(),
        })
        .collect();
    CoboundaryMatrix {
        rows,
        vertex_offsets: sheaf.vertex_offsets.clone(),
        edge_offsets: sheaf.edge_offsets.clone(),
    }
}

impl CoboundaryMatrix {
    /// `(rows, cols) = (total edge dim, total vertex dim)`.
    pub fn shape(&self) -> (usize, usize) {
        (
            *self.edge_offsets.last().unwrap(),
            *self.vertex_offsets.last().unwrap(),
        )
    }

    pub fn vertex_offsets(&self) -> &[usize] {
        &self.vertex_offsets
    }

    pub fn edge_offsets(&self) -> &[usize] {
        &self.edge_offsets
    }

    pub fn rows(&self) -> &[CoboundaryRow] {
        &self.rows
    }

    /// `(tail, head)` of edge `e`.
    pub fn orientation(&self, e: usize) -> (usize, usize) {
        (self.rows[e].tail, self.rows[e].head)
    }

    /// Signed block `(e, w)`; `None` when `w` is not an endpoint of `e`.
    pub fn block(&self, e: usize, w: usize) -> Option<&DMatrix<f64>> {
        let row = &self.rows[e];
        if w == row.tail {
            Some(&row.tail_block)
        } else if w == row.head {
            Some(&row.head_block)
        } else {
            None
        }
    }

    pub fn prefers_dense(&self) -> bool {
        let (r, c) = self.shape();
        r.max(c) <= DENSE_COBOUNDARY_LIMIT
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (r, c) = self.shape();
        let mut out = DMatrix::zeros(r, c);
        for (e, row) in self.rows.iter().enumerate() {
            let r0 = self.edge_offsets[e];
            for (w, block) in [(row.tail, &row.tail_block), (row.head, &row.head_block)] {
                let c0 = self.vertex_offsets[w];
                out.view_mut((r0, c0), block.shape()).copy_from(block);
            }
        }
        out
    }

    /// `y = delta x` on raw vectors.
    pub fn apply_raw(&self, x: &DVector<f64>) -> DVector<f64> {
        let (r, _) = self.shape();
        let mut y = DVector::zeros(r);
        for (e, row) in self.rows.iter().enumerate() {
            let r0 = self.edge_offsets[e];
            let xt = x.rows(self.vertex_offsets[row.tail], row.tail_block.ncols());
            let xh = x.rows(self.vertex_offsets[row.head], row.head_block.ncols());
            let mut ye = y.rows_mut(r0, row.head_block.nrows());
            ye.gemv(1.0, &row.tail_block, &xt, 0.0);
            ye.gemv(1.0, &row.head_block, &xh, 1.0);
        }
        y
    }

    /// `x = delta^T y` on raw vectors.
    pub fn transpose_apply_raw(&self, y: &DVector<f64>) -> DVector<f64> {
        let (_, c) = self.shape();
        let mut x = DVector::zeros(c);
        for (e, row) in self.rows.iter().enumerate() {
            let ye = y.rows(self.edge_offsets[e], row.head_block.nrows());
            for (w, block) in [(row.tail, &row.tail_block), (row.head, &row.head_block)] {
                let mut xw = x.rows_mut(self.vertex_offsets[w], block.ncols());
                xw.gemv_tr(1.0, block, &ye, 1.0);
            }
        }
        x
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.tail_block.norm_squared() + r.head_block.norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

/// `y_e = F_{v<=e} x_v - F_{u<=e} x_u` for each oriented edge `u -> v`.
pub fn apply_coboundary(delta: &CoboundaryMatrix, x: &Cochain0) -> Result<Cochain1> {
    let (_, cols) = delta.shape();
    if x.len() != cols {
        return Err(SheafError::LengthMismatch {
            context: "apply_coboundary",
            expected: cols,
            found: x.len(),
        });
    }
    Ok(Cochain1 {
        values: delta.apply_raw(x.values()),
        offsets: delta.edge_offsets.clone(),
    })
}

/// Index bookkeeping for [`augment_reluctance`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReluctanceMap {
    /// Number of vertices of the original graph. Original vertex `v` keeps index `v`.
    pub n_original: usize,
    /// `parent[v]`: augmented index of the parent vertex attached to `v`.
    pub parent: Vec<usize>,
    /// `parent_edge[v]`: augmented index of the edge `v -- parent[v]`.
    pub parent_edge: Vec<usize>,
}

impl ReluctanceMap {
    pub fn parents(&self) -> &[usize] {
        &self.parent
    }
}

/// Attaches to every vertex `v` a parent vertex `v'` through a new edge `e'`,
/// with `F'(v') = F'(e') = F(v)` and both new restriction maps `sqrt(gamma_v) I`.
pub fn augment_reluctance(sheaf: &Sheaf, gamma: &[f64]) -> Result<(Sheaf, ReluctanceMap)> {
    let n = sheaf.graph.n_vertices();
    if gamma.len() != n {
        return Err(SheafError::LengthMismatch {
            context: "reluctance vector",
            expected: n,
            found: gamma.len(),
        });
    }
    if let Some((vertex, &value)) = gamma
        .iter()
        .enumerate()
        .find(|(_, g)| !(g.is_finite() && **g >= 0.0))
    {
        return Err(SheafError::NegativeGamma { vertex, value });
    }
    let m = sheaf.graph.n_edges();
    let mut edges = sheaf.graph.edges().to_vec();
    edges.extend((0..n).map(|v| (v, n + v)));
    let graph = Graph::new(2 * n, edges)?;

    let mut vdims = sheaf.vertex_dims.clone();
    vdims.extend_from_slice(&sheaf.vertex_dims);
    let mut edims = sheaf.edge_dims.clone();
    edims.extend_from_slice(&sheaf.vertex_dims);

    let mut maps = sheaf.maps.clone();
    for (v, &g) in gamma.iter().enumerate() {
        let d = sheaf.vertex_dims[v];
        let block = DMatrix::identity(d, d) * g.sqrt();
        maps.push([block.clone(), block]);
    }
    let map = ReluctanceMap {
        n_original: n,
        parent: (n..2 * n).collect(),
        parent_edge: (m..m + n).collect(),
    };
    Ok((Sheaf::from_parts(graph, vdims, edims, maps), map))
}

/// Index bookkeeping for [`subgraph_restriction`]: new index -> original index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubcomplexMap {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
}

/// Restricts a sheaf to an incidence-closed subcomplex, copying stalks and maps.
pub fn subgraph_restriction(sheaf: &Sheaf, a: &Subcomplex) -> Result<(Sheaf, SubcomplexMap)> {
    let mut new_index = vec![usize::MAX; sheaf.graph.n_vertices()];
    for (i, &v) in a.vertices().iter().enumerate() {
        if v >= new_index.len() {
            return Err(SheafError::IndexOutOfRange {
                context: "subcomplex vertices",
                index: v,
                len: new_index.len(),
            });
        }
        new_index[v] = i;
    }
    let mut edges = Vec::with_capacity(a.edges().len());
    let mut maps = Vec::with_capacity(a.edges().len());
    let mut edims = Vec::with_capacity(a.edges().len());
    for &e in a.edges() {
        if e >= sheaf.graph.n_edges() {
            return Err(SheafError::IndexOutOfRange {
                context: "subcomplex edges",
                index: e,
                len: sheaf.graph.n_edges(),
            });
        }
        let (u, v) = sheaf.graph.edge(e);
        let (nu, nv) = (new_index[u], new_index[v]);
        if nu == usize::MAX || nv == usize::MAX {
            return Err(SheafError::DanglingEdge { edge: e });
        }
        // Relabeling is monotone, so tail stays tail.
        edges.push((nu, nv));
        maps.push(sheaf.maps[e].clone());
        edims.push(sheaf.edge_dims[e]);
    }
    let vdims = a.vertices().iter().map(|&v| sheaf.vertex_dims[v]).collect();
    let graph = Graph::new(a.vertices().len(), edges)?;
    Ok((
        Sheaf::from_parts(graph, vdims, edims, maps),
        SubcomplexMap {
            vertices: a.vertices().to_vec(),
            edges: a.edges().to_vec(),
        },
    ))
}
