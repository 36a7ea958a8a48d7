//! Undirected simple graphs and vertex/edge subcomplexes.

use std::collections::HashSet;

use crate::error::{Result, SheafError};

/// An undirected simple graph.
///
/// Edges are stored as `(u, v)` with `u < v`, in insertion order. The stored
/// pair also fixes the edge orientation used by every coboundary: `u` is the
/// tail and `v` the head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph, normalizing each pair to `(min, max)`.
    pub fn new(n_vertices: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (e, (a, b)) in edges.into_iter().enumerate() {
            for vertex in [a, b] {
                if vertex >= n_vertices {
                    return Err(SheafError::VertexOutOfRange {
                        edge: e,
                        vertex,
                        n_vertices,
                    });
                }
            }
            if a == b {
                return Err(SheafError::SelfLoop { edge: e, vertex: a });
            }
            let pair = (a.min(b), a.max(b));
            if !seen.insert(pair) {
                return Err(SheafError::DuplicateEdge {
                    edge: e,
                    u: pair.0,
                    v: pair.1,
                });
            }
            out.push(pair);
        }
        Ok(Self {
            n_vertices,
            edges: out,
        })
    }

    pub fn empty(n_vertices: usize) -> Self {
        Self {
            n_vertices,
            edges: Vec::new(),
        }
    }

    pub fn path(n: usize) -> Self {
        Self {
            n_vertices: n,
            edges: (1..n).map(|i| (i - 1, i)).collect(),
        }
    }

    /// Cycle on `n >= 3` vertices; smaller `n` falls back to a path.
    pub fn cycle(n: usize) -> Self {
        let mut g = Self::path(n);
        if n >= 3 {
            g.edges.push((0, n - 1));
        }
        g
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect();
        Self {
            n_vertices: n,
            edges,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `(tail, head)` of edge `e`.
    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    /// Index of the edge joining `a` and `b`, in either order.
    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        let pair = (a.min(b), a.max(b));
        self.edges.iter().position(|&p| p == pair)
    }

    pub fn incident_edges(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, &(a, b))| a == v || b == v)
            .map(|(e, _)| e)
    }

    /// Connected components using only the edges for which `keep` holds.
    /// Returns a component label per vertex and the number of components.
    pub fn components_with(&self, keep: impl Fn(usize) -> bool) -> (Vec<usize>, usize) {
        let mut parent: Vec<usize> = (0..self.n_vertices).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            if keep(e) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        // labels in order of first appearance
        let mut root_label = vec![usize::MAX; self.n_vertices];
        let mut count = 0;
        let label = (0..self.n_vertices)
            .map(|v| {
                let r = find(&mut parent, v);
                if root_label[r] == usize::MAX {
                    root_label[r] = count;
                    count += 1;
                }
                root_label[r]
            })
            .collect();
        (label, count)
    }

    pub fn components(&self) -> (Vec<usize>, usize) {
        self.components_with(|_| true)
    }
}

/// A subset of vertices together with a subset of edges whose endpoints all
/// lie in the vertex subset.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Subcomplex {
    vertices: Vec<usize>,
    edges: Vec<usize>,
}

impl Subcomplex {
    /// Explicit subgraph. Fails with `DanglingEdge` if an edge leaves the vertex set.
    pub fn new(graph: &Graph, vertices: &[usize], edges: &[usize]) -> Result<Self> {
        let vertices = sorted_unique(vertices);
        let edges = sorted_unique(edges);
        if let Some(&v) = vertices.iter().find(|&&v| v >= graph.n_vertices()) {
            return Err(SheafError::IndexOutOfRange {
                context: "subcomplex vertices",
                index: v,
                len: graph.n_vertices(),
            });
        }
        for &e in &edges {
            if e >= graph.n_edges() {
                return Err(SheafError::IndexOutOfRange {
                    context: "subcomplex edges",
                    index: e,
                    len: graph.n_edges(),
                });
            }
            let (a, b) = graph.edge(e);
            if vertices.binary_search(&a).is_err() || vertices.binary_search(&b).is_err() {
                return Err(SheafError::DanglingEdge { edge: e });
            }
        }
        Ok(Self { vertices, edges })
    }

    /// Vertex subset with every edge whose two endpoints lie in it.
    pub fn induced(graph: &Graph, vertices: &[usize]) -> Result<Self> {
        let vertices = sorted_unique(vertices);
        if let Some(&v) = vertices.iter().find(|&&v| v >= graph.n_vertices()) {
            return Err(SheafError::IndexOutOfRange {
                context: "subcomplex vertices",
                index: v,
                len: graph.n_vertices(),
            });
        }
        let edges = graph
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, (a, b))| {
                vertices.binary_search(a).is_ok() && vertices.binary_search(b).is_ok()
            })
            .map(|(e, _)| e)
            .collect();
        Ok(Self { vertices, edges })
    }

    pub fn full(graph: &Graph) -> Self {
        Self {
            vertices: (0..graph.n_vertices()).collect(),
            edges: (0..graph.n_edges()).collect(),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn contains_vertex(&self, v: usize) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }

    pub fn contains_edge(&self, e: usize) -> bool {
        self.edges.binary_search(&e).is_ok()
    }
}

fn sorted_unique(items: &[usize]) -> Vec<usize> {
    let mut v = items.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}
