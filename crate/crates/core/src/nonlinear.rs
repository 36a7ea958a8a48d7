//! Nonlinear Laplacians `delta^T grad U (delta x)` built from edgewise
//! potentials: quadratic, bounded confidence and signed (antagonistic).
//!
//! Potential conventions: the quadratic edge potential is `U_e(y) = 1/2 ||y||^2`,
//! bounded confidence uses `U_e(y) = 1/2 psi_e(||y||^2)`, and signed edges use
//! `+-1/2 ||y||^2`. With these, `nl_laplacian_apply` is exactly the gradient
//! of `potential`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Result, SheafError};
use crate::flow::{
    self, AffineSystem, FlowConfig, Integrator, Monitor, OnDivergence, RunSpec, Trajectory,
};
use crate::graph::Subcomplex;
use crate::sheaf::{Cochain0, Sheaf};
use crate::spectral::{
    h0, local_sections, sheaf_laplacian, spectrum_summary, symmetric_eigen, SpectrumSummary,
    DEFAULT_RANK_TOL,
};

/// Margins closer to zero than this make a point a non-interior fixed point.
pub const INTERIOR_MARGIN: f64 = 1e-6;
/// Relative tolerance for an edge to count as in agreement (`delta_e x = 0`).
pub const AGREE_TOL: f64 = 1e-9;

/// Influence profile of a bounded-confidence edge. `dpsi` must vanish for
/// `s >= d` and be positive below it.
pub trait ConfidenceShape: Send + Sync {
    fn psi(&self, s: f64, d: f64) -> f64;
    fn dpsi(&self, s: f64, d: f64) -> f64;
    /// Upper bound on `dpsi`, used to size explicit steps.
    fn max_slope(&self) -> f64 {
        1.0
    }
    fn name(&self) -> &str;
}

/// `psi'(s) = (max(0, 1 - s/D))^2`, `psi(s) = D/3 (1 - (1 - min(s, D)/D)^3)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredFalloff;

impl ConfidenceShape for SquaredFalloff {
    fn psi(&self, s: f64, d: f64) -> f64 {
        let r = 1.0 - s.min(d) / d;
        d / 3.0 * (1.0 - r * r * r)
    }

    fn dpsi(&self, s: f64, d: f64) -> f64 {
        let r = (1.0 - s / d).max(0.0);
        r * r
    }

    fn name(&self) -> &str {
        "squared-falloff"
    }
}

#[derive(Clone)]
pub enum EdgePotential {
    Quadratic,
    BoundedConfidence {
        thresholds: Vec<f64>,
        shape: Arc<dyn ConfidenceShape>,
    },
    /// `negative[e]` marks `e` as antagonistic.
    Signed {
        negative: Vec<bool>,
    },
}

impl fmt::Debug for EdgePotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Quadratic => write!(f, "Quadratic"),
            Self::BoundedConfidence { thresholds, shape } => f
                .debug_struct("BoundedConfidence")
                .field("thresholds", thresholds)
                .field("shape", &shape.name())
                .finish(),
            Self::Signed { negative } => f
                .debug_struct("Signed")
                .field("negative", negative)
                .finish(),
        }
    }
}

impl EdgePotential {
    pub fn bounded_confidence(thresholds: Vec<f64>) -> Self {
        Self::BoundedConfidence {
            thresholds,
            shape: Arc::new(SquaredFalloff),
        }
    }

    /// Signed potential with the listed edges negative.
    pub fn signed(n_edges: usize, negative_edges: &[usize]) -> Result<Self> {
        Ok(Self::Signed {
            negative: negative_mask(n_edges, negative_edges)?,
        })
    }

    pub fn validate(&self, sheaf: &Sheaf) -> Result<()> {
        let m = sheaf.graph().n_edges();
        match self {
            Self::Quadratic => Ok(()),
            Self::BoundedConfidence { thresholds, .. } => check_thresholds(m, thresholds),
            Self::Signed { negative } => {
                if negative.len() != m {
                    return Err(SheafError::LengthMismatch {
                        context: "edge signs",
                        expected: m,
                        found: negative.len(),
                    });
                }
                Ok(())
            }
        }
    }

    /// Scalar weight `w_e` with `grad U_e(y) = w_e y`.
    fn weight(&self, e: usize, s: f64) -> f64 {
        match self {
            Self::Quadratic => 1.0,
            Self::BoundedConfidence { thresholds, shape } => shape.dpsi(s, thresholds[e]),
            Self::Signed { negative } => {
                if negative[e] {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }

    fn edge_value(&self, e: usize, s: f64) -> f64 {
        match self {
            Self::Quadratic => 0.5 * s,
            Self::BoundedConfidence { thresholds, shape } => 0.5 * shape.psi(s, thresholds[e]),
            Self::Signed { .. } => 0.5 * self.weight(e, s) * s,
        }
    }
}

fn negative_mask(n_edges: usize, negative_edges: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; n_edges];
    for &e in negative_edges {
        if e >= n_edges {
            return Err(SheafError::IndexOutOfRange {
                context: "negative edges",
                index: e,
                len: n_edges,
            });
        }
        mask[e] = true;
    }
    Ok(mask)
}

fn check_thresholds(n_edges: usize, thresholds: &[f64]) -> Result<()> {
    if thresholds.len() != n_edges {
        return Err(SheafError::LengthMismatch {
            context: "confidence thresholds",
            expected: n_edges,
            found: thresholds.len(),
        });
    }
    if let Some((e, d)) = thresholds
        .iter()
        .enumerate()
        .find(|(_, d)| !(d.is_finite() && **d > 0.0))
    {
        return Err(SheafError::InvalidConfig(format!(
            "threshold for edge {e} must be > 0, got {d}"
        )));
    }
    Ok(())
}

fn check_x(sheaf: &Sheaf, x: &DVector<f64>) -> Result<()> {
    if x.len() != sheaf.total_vertex_dim() {
        return Err(SheafError::LengthMismatch {
            context: "0-cochain",
            expected: sheaf.total_vertex_dim(),
            found: x.len(),
        });
    }
    Ok(())
}

/// `Psi(x) = sum_e U_e(delta_e x)`.
pub fn potential(sheaf: &Sheaf, pot: &EdgePotential, x: &Cochain0) -> Result<f64> {
    pot.validate(sheaf)?;
    check_x(sheaf, x.values())?;
    let y = sheaf.coboundary().apply_raw(x.values());
    Ok((0..sheaf.graph().n_edges())
        .map(|e| {
            let r = sheaf.edge_range(e);
            pot.edge_value(e, y.rows(r.start, r.len()).norm_squared())
        })
        .sum())
}

fn apply_raw(sheaf: &Sheaf, pot: &EdgePotential, x: &DVector<f64>) -> DVector<f64> {
    let delta = sheaf.coboundary();
    let mut y = delta.apply_raw(x);
    for e in 0..sheaf.graph().n_edges() {
        let r = sheaf.edge_range(e);
        let mut ye = y.rows_mut(r.start, r.len());
        let w = pot.weight(e, ye.norm_squared());
        ye *= w;
    }
    delta.transpose_apply_raw(&y)
}

/// `L^Phi x = delta^T grad U (delta x)`.
pub fn nl_laplacian_apply(sheaf: &Sheaf, pot: &EdgePotential, x: &Cochain0) -> Result<Cochain0> {
    pot.validate(sheaf)?;
    check_x(sheaf, x.values())?;
    x.with_values(apply_raw(sheaf, pot, x.values()))
}

fn signed_matrix(sheaf: &Sheaf, negative: &[bool]) -> DMatrix<f64> {
    let delta = sheaf.coboundary().to_dense();
    let mut sd = delta.clone();
    for (e, &neg) in negative.iter().enumerate() {
        if neg {
            let r = sheaf.edge_range(e);
            sd.rows_mut(r.start, r.len()).neg_mut();
        }
    }
    let m = delta.tr_mul(&sd);
    (&m + m.transpose()) * 0.5
}

/// Integrates `dx/dt = -alpha L^Phi x`. Quadratic and signed potentials are
/// linear and may use exact-eigen; bounded confidence defaults to rk4.
/// Signed flows that blow up are truncated with `diverged` set.
/// Records `Psi` and `norm2_x`.
pub fn nl_diffuse(
    sheaf: &Sheaf,
    pot: &EdgePotential,
    x0: &Cochain0,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    pot.validate(sheaf)?;
    check_x(sheaf, x0.values())?;
    cfg.validate()?;
    let alpha = cfg.alpha;
    let psi_monitor = || Monitor {
        names: vec!["Psi", "norm2_x"],
        eval: Box::new(move |x: &DVector<f64>| {
            let c = x0.with_values(x.clone()).expect("length checked");
            vec![
                potential(sheaf, pot, &c).unwrap_or(f64::NAN),
                x.norm_squared(),
            ]
        }),
    };
    let linear = match pot {
        EdgePotential::Quadratic => {
            Some((sheaf_laplacian(sheaf).into_matrix(), OnDivergence::Error))
        }
        EdgePotential::Signed { negative } => {
            Some((signed_matrix(sheaf, negative), OnDivergence::Flag))
        }
        EdgePotential::BoundedConfidence { .. } => None,
    };
    if let Some((l, on_divergence)) = linear {
        let sys = AffineSystem::homogeneous(l * alpha);
        let (integrator, step, exact) = flow::plan_affine(cfg, &sys, x0.values())?;
        let rhs = |x: &DVector<f64>| sys.rhs(x);
        return flow::run(
            x0.values(),
            RunSpec {
                rhs: &rhs,
                exact,
                restep: None,
                integrator,
                step,
                t_max: cfg.t_max,
                tol: cfg.tol_for(x0.values()),
                record_every: cfg.record_every,
                on_divergence,
                monitor: psi_monitor(),
            },
        );
    }

    let EdgePotential::BoundedConfidence { shape, .. } = pot else {
        unreachable!("linear kinds handled above")
    };
    let integrator = match cfg.integrator {
        None => Integrator::Rk4,
        Some(Integrator::ExactEigen) => {
            return Err(SheafError::InvalidConfig(
                "bounded-confidence flow is nonlinear; use rk4 or euler".into(),
            ))
        }
        Some(i) => i,
    };
    let step = cfg.step.unwrap_or_else(|| {
        let l = sheaf_laplacian(sheaf).into_matrix();
        let lmax = flow::power_iteration(|v| &l * v, l.nrows()) * alpha * shape.max_slope();
        if lmax > 0.0 {
            0.5 / lmax
        } else {
            1.0
        }
    });
    let rhs = |x: &DVector<f64>| apply_raw(sheaf, pot, x) * -alpha;
    flow::run(
        x0.values(),
        RunSpec {
            rhs: &rhs,
            exact: None,
            restep: None,
            integrator,
            step,
            t_max: cfg.t_max,
            tol: cfg.tol_for(x0.values()),
            record_every: cfg.record_every,
            on_divergence: OnDivergence::Error,
            monitor: psi_monitor(),
        },
    )
}

/// `G_x`: edges whose disagreement is strictly below threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveSubgraph {
    pub in_gx: Vec<bool>,
    /// `||delta_e x||^2 - D_e`.
    pub margins: Vec<f64>,
}

impl EffectiveSubgraph {
    pub fn edges(&self) -> Vec<usize> {
        (0..self.in_gx.len()).filter(|&e| self.in_gx[e]).collect()
    }

    /// Smallest `|margin|`, or infinity without edges.
    pub fn min_abs_margin(&self) -> f64 {
        self.margins
            .iter()
            .fold(f64::INFINITY, |a, m| a.min(m.abs()))
    }
}

fn edge_disagreements(sheaf: &Sheaf, x: &DVector<f64>) -> Vec<f64> {
    let y = sheaf.coboundary().apply_raw(x);
    (0..sheaf.graph().n_edges())
        .map(|e| {
            let r = sheaf.edge_range(e);
            y.rows(r.start, r.len()).norm_squared()
        })
        .collect()
}

pub fn effective_subgraph(
    sheaf: &Sheaf,
    thresholds: &[f64],
    x: &Cochain0,
) -> Result<EffectiveSubgraph> {
    check_thresholds(sheaf.graph().n_edges(), thresholds)?;
    check_x(sheaf, x.values())?;
    let margins: Vec<f64> = edge_disagreements(sheaf, x.values())
        .iter()
        .zip(thresholds)
        .map(|(s, d)| s - d)
        .collect();
    Ok(EffectiveSubgraph {
        in_gx: margins.iter().map(|&m| m < 0.0).collect(),
        margins,
    })
}

/// The sheaf `F_x`: same vertices, only the edges of `G_x`.
pub fn effective_sheaf(
    sheaf: &Sheaf,
    thresholds: &[f64],
    x: &Cochain0,
) -> Result<(Sheaf, EffectiveSubgraph)> {
    let gx = effective_subgraph(sheaf, thresholds, x)?;
    let all: Vec<usize> = (0..sheaf.graph().n_vertices()).collect();
    let sub = Subcomplex::new(sheaf.graph(), &all, &gx.edges())?;
    let (fx, _) = crate::sheaf::subgraph_restriction(sheaf, &sub)?;
    Ok((fx, gx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeClass {
    /// `delta_e x = 0`.
    Agree,
    /// `||delta_e x||^2 >= D_e`.
    Saturated,
    /// Disagrees but still within confidence: the point is not a fixed point.
    Active,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcEquilibrium {
    pub pass: bool,
    pub classes: Vec<EdgeClass>,
    pub tol: f64,
}

/// Fixed-point test for bounded confidence: every edge agrees or is saturated.
/// Agreement means `||delta_e x|| <= AGREE_TOL (1 + ||delta_e||_F ||x_e||)`.
pub fn bc_equilibrium_check(
    sheaf: &Sheaf,
    thresholds: &[f64],
    x: &Cochain0,
) -> Result<BcEquilibrium> {
    check_thresholds(sheaf.graph().n_edges(), thresholds)?;
    check_x(sheaf, x.values())?;
    let s = edge_disagreements(sheaf, x.values());
    let classes: Vec<EdgeClass> = (0..s.len())
        .map(|e| {
            let scale =
                1.0 + sheaf.edge_block_row(e).norm() * sheaf.edge_gather(e, x.values()).norm();
            if s[e].sqrt() <= AGREE_TOL * scale {
                EdgeClass::Agree
            } else if s[e] >= thresholds[e] {
                EdgeClass::Saturated
            } else {
                EdgeClass::Active
            }
        })
        .collect();
    Ok(BcEquilibrium {
        pass: !classes.contains(&EdgeClass::Active),
        classes,
        tol: AGREE_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcProbeReport {
    pub effective_edges: Vec<usize>,
    pub min_abs_margin: f64,
    pub epsilon: f64,
    /// Per trial: `||x_inf - P x_perturbed||_inf`, `P` the projector onto `H^0(G_x*; F_x*)`.
    pub errors: Vec<f64>,
    pub converged: Vec<bool>,
    pub tol: f64,
    pub pass: bool,
}

/// Perturbs a strict-interior fixed point by `trials` random vectors of norm
/// `epsilon` and checks the flow lands on the projection onto `H^0(G_x*; F_x*)`.
pub fn bc_local_stability_probe(
    sheaf: &Sheaf,
    thresholds: &[f64],
    x_star: &Cochain0,
    epsilon: f64,
    trials: usize,
    seed: u64,
    cfg: &FlowConfig,
) -> Result<BcProbeReport> {
    let (fx, gx) = effective_sheaf(sheaf, thresholds, x_star)?;
    if let Some(e) = (0..gx.margins.len()).find(|&e| gx.margins[e].abs() < INTERIOR_MARGIN) {
        return Err(SheafError::NotInterior {
            edge: e,
            margin: gx.margins[e],
        });
    }
    let basis = h0(&fx)?;
    let pot = EdgePotential::BoundedConfidence {
        thresholds: thresholds.to_vec(),
        shape: Arc::new(SquaredFalloff),
    };
    let tol = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(trials);
    let mut converged = Vec::with_capacity(trials);
    for _ in 0..trials {
        let n = x_star.len();
        let dir = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let dir = if n == 0 { dir } else { dir.normalize() };
        let xp = x_star.values() + dir * epsilon;
        let target = basis.project(&xp);
        let traj = nl_diffuse(sheaf, &pot, &x_star.with_values(xp)?, cfg)?;
        converged.push(traj.converged);
        errors.push((traj.limit - target).amax());
    }
    Ok(BcProbeReport {
        effective_edges: gx.edges(),
        min_abs_margin: gx.min_abs_margin(),
        epsilon,
        pass: errors.iter().all(|&e| e <= tol) && converged.iter().all(|&c| c),
        errors,
        converged,
        tol,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedLaplacian {
    pub matrix: DMatrix<f64>,
    pub spectrum: SpectrumSummary,
}

/// `L^S = delta^T S delta` with `S = -I` on the listed edges, `+I` elsewhere.
pub fn signed_laplacian(sheaf: &Sheaf, negative_edges: &[usize]) -> Result<SignedLaplacian> {
    let mask = negative_mask(sheaf.graph().n_edges(), negative_edges)?;
    let matrix = signed_matrix(sheaf, &mask);
    let spectrum = spectrum_summary(&matrix, DEFAULT_RANK_TOL)?;
    Ok(SignedLaplacian { matrix, spectrum })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutsetReport {
    /// Vertices of the component `G_0` the witness lives on.
    pub component: Vec<usize>,
    /// Local section on `G_0` extended by zero, unit norm.
    pub witness: Option<DVector<f64>>,
    /// `x^T L^S x` at the witness.
    pub quadratic_form: Option<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub not_psd: bool,
    /// Witness found exactly when `L^S` is not PSD.
    pub agrees_with_spectrum: bool,
}

/// If removing the negative edges disconnects the graph, looks for a local
/// section on one positive component that does not extend by zero to a
/// global section. Such a section, extended by zero, has `x^T L^S x < 0`.
pub fn cutset_indefiniteness(sheaf: &Sheaf, negative_edges: &[usize]) -> Result<CutsetReport> {
    let graph = sheaf.graph();
    let mask = negative_mask(graph.n_edges(), negative_edges)?;
    let (labels, count) = graph.components_with(|e| !mask[e]);
    let (_, base_count) = graph.components();
    if negative_edges.is_empty() || count <= base_count {
        return Err(SheafError::NotACutset);
    }
    let signed = signed_laplacian(sheaf, negative_edges)?;

    let mut best: Option<(f64, Vec<usize>, DVector<f64>)> = None;
    for c in 0..count {
        let verts: Vec<usize> = (0..graph.n_vertices())
            .filter(|&v| labels[v] == c)
            .collect();
        let edges: Vec<usize> = (0..graph.n_edges())
            .filter(|&e| {
                let (u, v) = graph.edge(e);
                !mask[e] && labels[u] == c && labels[v] == c
            })
            .collect();
        let sub = Subcomplex::new(graph, &verts, &edges)?;
        let sections = local_sections(sheaf, &sub)?;
        if sections.dim() == 0 {
            continue;
        }
        let idx: Vec<usize> = verts.iter().flat_map(|&v| sheaf.vertex_range(v)).collect();
        let mut ext = DMatrix::zeros(sheaf.total_vertex_dim(), sections.dim());
        for (k, &i) in idx.iter().enumerate() {
            ext.row_mut(i).copy_from(&sections.matrix().row(k));
        }
        // most negative direction of the signed form on the zero-extended sections
        let form = ext.transpose() * &signed.matrix * &ext;
        let form = (&form + form.transpose()) * 0.5;
        let (vals, vecs) = symmetric_eigen(&form)?;
        if vals[0] < -DEFAULT_RANK_TOL * signed.spectrum.lambda_max.abs().max(1.0)
            && best.as_ref().is_none_or(|b| vals[0] < b.0)
        {
            let w = &ext * vecs.column(0);
            best = Some((vals[0], verts, w));
        }
    }
    let not_psd = signed.spectrum.not_psd();
    let (component, witness, quadratic_form) = match best {
        Some((_, verts, w)) => {
            let q = w.dot(&(&signed.matrix * &w));
            (verts, Some(w), Some(q))
        }
        None => (Vec::new(), None, None),
    };
    Ok(CutsetReport {
        agrees_with_spectrum: witness.is_some() == not_psd,
        component,
        witness,
        quadratic_form,
        lambda_min: signed.spectrum.lambda_min,
        lambda_max: signed.spectrum.lambda_max,
        not_psd,
    })
}
