//! Random instance generators and exact oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use num_rational::BigRational;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sheaf_dynamics::nalgebra::{DMatrix, DVector};
use sheaf_dynamics::{Graph, Sheaf};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Random simple graph on `n` vertices; each pair is an edge with probability `p`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges).unwrap()
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize, p_extra: f64) -> Graph {
    let mut edges = BTreeSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.insert((u, v));
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p_extra) {
                edges.insert((u, v));
            }
        }
    }
    Graph::new(n, edges).unwrap()
}

/// How restriction blocks are drawn.
#[derive(Debug, Clone, Copy)]
pub enum Blocks {
    /// Standard normal entries.
    Gaussian,
    /// Integers in `-2..=2`, which produces exact rank drops often.
    SmallInt,
    /// Integer outer products: exactly rank one, so sections are common.
    LowRank,
}

pub fn random_block(rng: &mut ChaCha8Rng, kind: Blocks, r: usize, c: usize) -> DMatrix<f64> {
    match kind {
        Blocks::Gaussian => gaussian_mat(rng, r, c),
        Blocks::SmallInt => DMatrix::from_fn(r, c, |_, _| rng.random_range(-2..=2) as f64),
        Blocks::LowRank => {
            let a = DMatrix::from_fn(r, 1, |_, _| rng.random_range(-3..=3) as f64);
            let b = DMatrix::from_fn(1, c, |_, _| rng.random_range(-3..=3) as f64);
            a * b
        }
    }
}

/// Random sheaf with at most `max_vertices` vertices and stalks of dimension at most `max_dim`.
pub fn random_sheaf(
    rng: &mut ChaCha8Rng,
    max_vertices: usize,
    max_dim: usize,
    kind: Blocks,
) -> Sheaf {
    let n = rng.random_range(1..=max_vertices);
    let p = rng.random_range(0.2..0.8);
    let graph = random_graph(rng, n, p);
    sheaf_on(rng, graph, max_dim, kind)
}

pub fn sheaf_on(rng: &mut ChaCha8Rng, graph: Graph, max_dim: usize, kind: Blocks) -> Sheaf {
    let vdims: Vec<usize> = (0..graph.n_vertices())
        .map(|_| rng.random_range(1..=max_dim))
        .collect();
    let edims: Vec<usize> = (0..graph.n_edges())
        .map(|_| rng.random_range(1..=max_dim))
        .collect();
    let maps = graph
        .edges()
        .iter()
        .zip(&edims)
        .map(|(&(u, v), &d)| {
            (
                random_block(rng, kind, d, vdims[u]),
                random_block(rng, kind, d, vdims[v]),
            )
        })
        .collect();
    Sheaf::from_edge_maps(graph, vdims, edims, maps).unwrap()
}

pub fn any_kind(rng: &mut ChaCha8Rng) -> Blocks {
    match rng.random_range(0..3) {
        0 => Blocks::Gaussian,
        1 => Blocks::SmallInt,
        _ => Blocks::LowRank,
    }
}

/// Scalar constant sheaf on an edge: the standard two-vertex example.
pub fn constant_edge() -> Sheaf {
    Sheaf::constant(Graph::path(2), 1)
}

/// Exact rank by fraction-free Gaussian elimination over the rationals.
/// Every finite `f64` is a dyadic rational, so the conversion is lossless.
pub fn exact_rank(m: &DMatrix<f64>) -> usize {
    let zero = BigRational::from_float(0.0).unwrap();
    let mut a: Vec<Vec<BigRational>> = (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| BigRational::from_float(m[(i, j)]).unwrap())
                .collect()
        })
        .collect();
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&r| a[r][c] != zero) else {
            continue;
        };
        a.swap(rank, p);
        for r in rank + 1..rows {
            if a[r][c] != zero {
                let f = &a[r][c] / &a[rank][c];
                let (top, bottom) = a.split_at_mut(r);
                for (dst, src) in bottom[0][c..].iter_mut().zip(&top[rank][c..]) {
                    *dst -= &f * src;
                }
            }
        }
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}

/// Moore-Penrose pseudo-inverse through nalgebra's SVD, independent of the library's eigen-based one.
pub fn svd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return m.transpose();
    }
    let svd = m.clone().svd(true, true);
    let cutoff = 1e-10 * svd.singular_values.max().max(1.0);
    svd.pseudo_inverse(cutoff).unwrap()
}

/// Orthonormal kernel basis from the SVD, columns.
pub fn svd_kernel(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // pad to square so that V_t carries a full basis
    let mut sq = DMatrix::zeros(m.nrows().max(n), n);
    sq.rows_mut(0, m.nrows()).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.unwrap();
    let cutoff = 1e-10 * svd.singular_values.max().max(1.0);
    let cols: Vec<usize> = (0..n)
        .filter(|&i| svd.singular_values[i] <= cutoff)
        .collect();
    let mut k = DMatrix::zeros(n, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        k.set_column(j, &vt.row(i).transpose());
    }
    k
}

pub fn vertex_indices(sheaf: &Sheaf, set: &[usize]) -> Vec<usize> {
    set.iter().flat_map(|&v| sheaf.vertex_range(v)).collect()
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
