//! Property tests for the structural invariants of sheaves and their flows.

mod common;

use proptest::prelude::*;
use sheaf_dynamics::control::stabilizable;
use sheaf_dynamics::dynamics::{diffuse, diffusion_limit, harmonic_extend};
use sheaf_dynamics::expression::expression_limit;
use sheaf_dynamics::nalgebra::{DMatrix, DVector};
use sheaf_dynamics::nonlinear::{
    nl_laplacian_apply, signed_laplacian, ConfidenceShape, EdgePotential, SquaredFalloff,
};
use sheaf_dynamics::scenario::{parse_sheaf_json, sheaf_to_json};
use sheaf_dynamics::sheaf::augment_reluctance;
use sheaf_dynamics::spectral::{h0, numerical_rank, sheaf_laplacian, DEFAULT_RANK_TOL};
use sheaf_dynamics::{FlowConfig, Graph, Integrator, Sheaf};

/// Sheaf on at most `max_n` vertices with stalks of dimension 1..=3 and entries in [-3, 3].
/// Entries are rounded to quarters half the time, which makes exact rank drops likely.
fn arb_sheaf(max_n: usize) -> impl Strategy<Value = Sheaf> {
    (1..=max_n)
        .prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
                .collect();
            let k = pairs.len();
            (
                Just(n),
                Just(pairs),
                prop::collection::vec(any::<bool>(), k),
                prop::collection::vec(1usize..=3, n),
                any::<bool>(),
            )
        })
        .prop_flat_map(|(n, pairs, keep, vdims, coarse)| {
            let edges: Vec<(usize, usize)> = pairs
                .into_iter()
                .zip(keep)
                .filter(|p| p.1)
                .map(|p| p.0)
                .collect();
            let m = edges.len();
            (
                Just(n),
                Just(edges),
                Just(vdims),
                prop::collection::vec(1usize..=3, m),
                prop::collection::vec(-3.0f64..3.0, 2 * m * 9),
                Just(coarse),
            )
        })
        .prop_map(|(n, edges, vdims, edims, pool, coarse)| {
            let mut it = pool
                .into_iter()
                .map(|x| if coarse { (x * 4.0).round() / 4.0 } else { x });
            let maps = edges
                .iter()
                .zip(&edims)
                .map(|(&(u, v), &d)| {
                    let a = DMatrix::from_fn(d, vdims[u], |_, _| it.next().unwrap());
                    let b = DMatrix::from_fn(d, vdims[v], |_, _| it.next().unwrap());
                    (a, b)
                })
                .collect();
            Sheaf::from_edge_maps(Graph::new(n, edges).unwrap(), vdims, edims, maps).unwrap()
        })
}

fn sheaf_and_x(max_n: usize) -> impl Strategy<Value = (Sheaf, DVector<f64>)> {
    arb_sheaf(max_n).prop_flat_map(|s| {
        let n = s.total_vertex_dim();
        (
            Just(s),
            prop::collection::vec(-5.0f64..5.0, n).prop_map(DVector::from_vec),
        )
    })
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    a.shape() == b.shape() && (a - b).amax() <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn laplacian_blocks_follow_the_incidence_formula(sheaf in arb_sheaf(6)) {
        let l = sheaf_laplacian(&sheaf);
        let g = sheaf.graph();
        for v in 0..g.n_vertices() {
            let mut diag = DMatrix::zeros(sheaf.vertex_dims()[v], sheaf.vertex_dims()[v]);
            for e in g.incident_edges(v) {
                let f = sheaf.restriction(v, e).unwrap();
                diag += f.transpose() * f;
            }
            prop_assert!(close(&l.block(v, v), &diag, 1e-12));
            for u in 0..g.n_vertices() {
                if u == v {
                    continue;
                }
                let want = match g.find_edge(u, v) {
                    Some(e) => -(sheaf.restriction(v, e).unwrap().transpose() * sheaf.restriction(u, e).unwrap()),
                    None => DMatrix::zeros(sheaf.vertex_dims()[v], sheaf.vertex_dims()[u]),
                };
                prop_assert!(close(&l.block(v, u), &want, 1e-12));
            }
        }
        let d = sheaf.coboundary().to_dense();
        prop_assert!(close(l.matrix(), &(d.transpose() * &d), 1e-12));
    }

    #[test]
    fn kernel_of_laplacian_is_kernel_of_coboundary(sheaf in arb_sheaf(6)) {
        let basis = h0(&sheaf).unwrap();
        let d = sheaf.coboundary().to_dense();
        prop_assert_eq!(basis.dim(), sheaf.total_vertex_dim() - numerical_rank(&d, DEFAULT_RANK_TOL));
        let scale = d.norm().max(1.0);
        for b in basis.matrix().column_iter() {
            prop_assert!((&d * b).norm() <= 1e-9 * scale);
            prop_assert!((b.norm() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn diffusion_limit_is_orthogonal_projection((sheaf, x) in sheaf_and_x(6)) {
        let x0 = sheaf.cochain0(x.clone()).unwrap();
        let p = diffusion_limit(&sheaf, &x0).unwrap();
        let again = diffusion_limit(&sheaf, &p).unwrap();
        prop_assert!((p.values() - again.values()).amax() <= 1e-9 * (1.0 + x.amax()));
        let d = sheaf.coboundary().to_dense();
        prop_assert!((&d * p.values()).amax() <= 1e-8 * (1.0 + x.amax()) * d.norm().max(1.0));
        // the discarded part is orthogonal to every section
        let resid = &x - p.values();
        for b in h0(&sheaf).unwrap().matrix().column_iter() {
            prop_assert!(resid.dot(&b).abs() <= 1e-8 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn disagreement_never_increases((sheaf, x) in sheaf_and_x(5)) {
        let cfg = FlowConfig { integrator: Some(Integrator::Rk4), t_max: 5.0, record_every: 1, ..FlowConfig::default() };
        let traj = diffuse(&sheaf, &sheaf.cochain0(x).unwrap(), &cfg).unwrap();
        let dis = traj.observable("disagreement").unwrap();
        let norm = traj.observable("norm2_x").unwrap();
        for k in 1..dis.len() {
            prop_assert!(dis[k] <= dis[k - 1] + 1e-9);
            prop_assert!(norm[k] <= norm[k - 1] + 1e-9);
        }
    }

    #[test]
    fn harmonic_extension_is_harmonic_off_the_boundary(
        (sheaf, x) in sheaf_and_x(6),
        mask in prop::collection::vec(any::<bool>(), 6),
    ) {
        let n = sheaf.graph().n_vertices();
        let boundary: Vec<usize> = (0..n).filter(|&v| mask[v]).collect();
        let idx = common::vertex_indices(&sheaf, &boundary);
        let u = x.select_rows(&idx);
        let ext = harmonic_extend(&sheaf, &boundary, &u, None).unwrap();
        prop_assert!((ext.values().select_rows(&idx) - &u).amax() == 0.0);
        // L[Y,U] u lies in the range of L[Y,Y], so the interior equations are solvable
        let l = sheaf_laplacian(&sheaf).into_matrix();
        let lx = &l * ext.values();
        let interior: Vec<usize> = (0..n).filter(|v| !boundary.contains(v)).collect();
        let yi = common::vertex_indices(&sheaf, &interior);
        let scale = (1.0 + x.amax()) * l.amax().max(1.0);
        prop_assert!(lx.select_rows(&yi).amax() <= 1e-8 * scale);
    }

    #[test]
    fn reluctance_adds_gamma_to_the_diagonal(
        sheaf in arb_sheaf(5),
        gamma in prop::collection::vec(0.0f64..3.0, 5),
    ) {
        let n = sheaf.graph().n_vertices();
        let gamma = &gamma[..n];
        let (aug, map) = augment_reluctance(&sheaf, gamma).unwrap();
        let l = sheaf_laplacian(&sheaf);
        let la = sheaf_laplacian(&aug);
        for (v, &g) in gamma.iter().enumerate() {
            let d = sheaf.vertex_dims()[v];
            let want = l.block(v, v) + DMatrix::identity(d, d) * g;
            prop_assert!(close(&la.block(v, v), &want, 1e-12));
            let p = map.parent[v];
            prop_assert_eq!(aug.vertex_dims()[p], d);
            prop_assert!(close(&la.block(v, p), &(DMatrix::identity(d, d) * -g), 1e-12));
        }
    }

    #[test]
    fn control_verdicts_agree(
        sheaf in arb_sheaf(6),
        mask in prop::collection::vec(any::<bool>(), 6),
    ) {
        let set: Vec<usize> = (0..sheaf.graph().n_vertices()).filter(|&v| mask[v]).collect();
        let r = stabilizable(&sheaf, &set).unwrap();
        prop_assert!(r.agree());
    }

    #[test]
    fn expression_limit_projects_each_block_row((sheaf, x) in sheaf_and_x(5)) {
        let x0 = sheaf.cochain0(x.clone()).unwrap();
        let lie = expression_limit(&sheaf, &x0).unwrap();
        let d = lie.coboundary().to_dense();
        prop_assert!((&d * &x).amax() <= 1e-9 * (1.0 + d.amax()) * (1.0 + x.amax()));
        for e in 0..sheaf.graph().n_edges() {
            let row = sheaf.edge_block_row(e);
            let xe = sheaf.edge_gather(e, &x);
            let n2 = xe.norm_squared();
            let want = if n2 > 0.0 { &row - (&row * &xe) * xe.transpose() / n2 } else { row };
            prop_assert!(close(&lie.edge_block_row(e), &want, 1e-9));
        }
    }

    #[test]
    fn sections_lie_in_the_signed_kernel(
        sheaf in arb_sheaf(6),
        mask in prop::collection::vec(any::<bool>(), 15),
    ) {
        let neg: Vec<usize> = (0..sheaf.graph().n_edges()).filter(|&e| mask[e]).collect();
        let signed = signed_laplacian(&sheaf, &neg).unwrap();
        prop_assert!(close(&signed.matrix, &signed.matrix.transpose(), 0.0));
        let scale = signed.matrix.amax().max(1.0);
        for b in h0(&sheaf).unwrap().matrix().column_iter() {
            prop_assert!((&signed.matrix * b).amax() <= 1e-8 * scale);
        }
    }

    #[test]
    fn quadratic_potential_is_the_linear_laplacian((sheaf, x) in sheaf_and_x(6)) {
        let lx = nl_laplacian_apply(&sheaf, &EdgePotential::Quadratic, &sheaf.cochain0(x.clone()).unwrap()).unwrap();
        let want = sheaf_laplacian(&sheaf).matrix() * &x;
        prop_assert!((lx.values() - want).amax() <= 1e-10 * (1.0 + x.amax()));
    }

    #[test]
    fn sheaf_json_round_trips_exactly(sheaf in arb_sheaf(6)) {
        let back = parse_sheaf_json(&sheaf_to_json(&sheaf)).unwrap();
        prop_assert_eq!(back.graph().edges(), sheaf.graph().edges());
        prop_assert_eq!(back.vertex_dims(), sheaf.vertex_dims());
        prop_assert_eq!(back.all_edge_maps(), sheaf.all_edge_maps());
    }

    #[test]
    fn bounded_confidence_shape_is_monotone_and_saturates(d in 0.01f64..10.0, a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let f = SquaredFalloff;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(f.psi(lo, d) <= f.psi(hi, d) + 1e-15);
        prop_assert!(f.dpsi(lo, d) >= f.dpsi(hi, d) - 1e-15);
        prop_assert!(f.dpsi(hi, d) >= 0.0 && f.dpsi(lo, d) <= 1.0);
        if hi >= d {
            prop_assert_eq!(f.dpsi(hi, d), 0.0);
            prop_assert!((f.psi(hi, d) - d / 3.0).abs() <= 1e-12 * d);
        }
    }
}
