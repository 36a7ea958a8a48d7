//! Evolving restriction maps: the expression flow with opinions held fixed,
//! and the joint flow of opinions and expressions.
//!
//! Only the endpoint blocks `delta_e = [-F_tail | F_head]` of each edge are
//! stored and updated, so off-pattern entries of the coboundary stay exactly
//! zero.

use std::ops::Range;

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Result, SheafError};
use crate::flow::{
    self, FlowConfig, Integrator, Monitor, OnDivergence, RunSpec, Series, EXACT_EIGEN_LIMIT,
};
use crate::sheaf::{Cochain0, Sheaf};
use crate::spectral::{numerical_rank, symmetric_eigen, DEFAULT_RANK_TOL};

/// Blocks with an eigenvalue below `-CERTIFICATE_TOL` count as not semidefinite.
pub const CERTIFICATE_TOL: f64 = 1e-10;
/// Rayleigh quotient is left undefined when `||x||^2` falls below this.
pub const RAYLEIGH_FLOOR: f64 = 1e-14;
/// The joint step is re-derived from the current state this often.
pub const RESTEP_EVERY: usize = 100;
/// Default joint step is `JOINT_STEP_FACTOR / (alpha lambda_max + beta ||x||^2)`.
/// Small enough that rk4 holds the diagonal blocks of `M` to ~1e-8.
pub const JOINT_STEP_FACTOR: f64 = 0.02;

pub const MONITOR_NAMES: [&str; 5] = ["Psi", "frob2_delta", "norm2_x", "norm2_dx", "rayleigh"];

/// Flat state `[x ; vec(delta_0) ; vec(delta_1) ; ...]`, blocks column-major.
#[derive(Debug, Clone)]
struct Layout {
    n: usize,
    offsets: Vec<usize>,
    shapes: Vec<(usize, usize)>,
    ends: Vec<(Range<usize>, Range<usize>)>,
}

impl Layout {
    fn new(sheaf: &Sheaf) -> Self {
        let n = sheaf.total_vertex_dim();
        let mut offsets = Vec::new();
        let mut shapes = Vec::new();
        let mut ends = Vec::new();
        let mut at = n;
        for (e, &(u, v)) in sheaf.graph().edges().iter().enumerate() {
            let (ru, rv) = (sheaf.vertex_range(u), sheaf.vertex_range(v));
            let shape = (sheaf.edge_dims()[e], ru.len() + rv.len());
            offsets.push(at);
            at += shape.0 * shape.1;
            shapes.push(shape);
            ends.push((ru, rv));
        }
        Self {
            n,
            offsets,
            shapes,
            ends,
        }
    }

    fn len(&self) -> usize {
        self.offsets
            .last()
            .zip(self.shapes.last())
            .map_or(self.n, |(o, (r, c))| o + r * c)
    }

    fn pack(&self, sheaf: &Sheaf, x: &DVector<f64>) -> DVector<f64> {
        let mut s = DVector::zeros(self.len());
        s.rows_mut(0, self.n).copy_from(x);
        for e in 0..self.offsets.len() {
            let row = sheaf.edge_block_row(e);
            s.rows_mut(self.offsets[e], row.len())
                .copy_from_slice(row.as_slice());
        }
        s
    }

    fn row<'a>(&self, s: &'a DVector<f64>, e: usize) -> DMatrixView<'a, f64> {
        let (r, c) = self.shapes[e];
        DMatrixView::from_slice(
            &s.as_slice()[self.offsets[e]..self.offsets[e] + r * c],
            r,
            c,
        )
    }

    fn x_edge(&self, s: &DVector<f64>, e: usize) -> DVector<f64> {
        let (ru, rv) = &self.ends[e];
        DVector::from_iterator(
            ru.len() + rv.len(),
            ru.clone().chain(rv.clone()).map(|i| s[i]),
        )
    }

    fn unpack_sheaf(&self, base: &Sheaf, s: &DVector<f64>) -> Sheaf {
        let maps = (0..self.offsets.len())
            .map(|e| {
                let row = self.row(s, e);
                let du = self.ends[e].0.len();
                let c = row.ncols();
                [
                    -row.columns(0, du).into_owned(),
                    row.columns(du, c - du).into_owned(),
                ]
            })
            .collect();
        Sheaf::from_parts(
            base.graph().clone(),
            base.vertex_dims().to_vec(),
            base.edge_dims().to_vec(),
            maps,
        )
    }

    /// Vector field; `alpha = None` freezes `x`.
    fn field(&self, s: &DVector<f64>, alpha: Option<f64>, beta: f64) -> DVector<f64> {
        let mut out = DVector::zeros(s.len());
        for e in 0..self.offsets.len() {
            let row = self.row(s, e);
            let xe = self.x_edge(s, e);
            let y = row * &xe;
            if let Some(alpha) = alpha {
                let g = row.tr_mul(&y) * -alpha;
                let (ru, rv) = &self.ends[e];
                for (k, i) in ru.clone().chain(rv.clone()).enumerate() {
                    out[i] += g[k];
                }
            }
            let d = (&y * xe.transpose()) * -beta;
            out.rows_mut(self.offsets[e], d.len())
                .copy_from_slice(d.as_slice());
        }
        out
    }

    fn scalars(&self, s: &DVector<f64>) -> [f64; 5] {
        let mut dx2 = 0.0;
        let mut frob2 = 0.0;
        for e in 0..self.offsets.len() {
            let row = self.row(s, e);
            dx2 += (row * self.x_edge(s, e)).norm_squared();
            frob2 += row.norm_squared();
        }
        let x2 = s.rows(0, self.n).norm_squared();
        let rayleigh = if x2 < RAYLEIGH_FLOOR {
            f64::NAN
        } else {
            dx2 / x2
        };
        [0.5 * dx2, frob2, x2, dx2, rayleigh]
    }

    fn diag_m(&self, sheaf: &Sheaf, s: &DVector<f64>, alpha: f64, beta: f64) -> Vec<DMatrix<f64>> {
        let nv = sheaf.graph().n_vertices();
        let mut blocks: Vec<DMatrix<f64>> = (0..nv)
            .map(|v| {
                let r = sheaf.vertex_range(v);
                let xv = s.rows(r.start, r.len());
                xv * xv.transpose() * -beta
            })
            .collect();
        for (e, &(u, v)) in sheaf.graph().edges().iter().enumerate() {
            let row = self.row(s, e);
            let du = self.ends[e].0.len();
            let dv = self.ends[e].1.len();
            let fu = row.columns(0, du);
            let fv = row.columns(du, dv);
            blocks[u] += fu.tr_mul(&fu) * alpha;
            blocks[v] += fv.tr_mul(&fv) * alpha;
        }
        blocks
    }
}

/// One vertex's diagonal block of `M = alpha delta^T delta - beta x x^T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagBlock {
    pub vertex: usize,
    #[serde(skip)]
    pub block: DMatrix<f64>,
    pub min_eig: f64,
    pub max_eig: f64,
}

fn diag_blocks(blocks: Vec<DMatrix<f64>>) -> Result<Vec<DiagBlock>> {
    blocks
        .into_iter()
        .enumerate()
        .map(|(vertex, block)| {
            let (min_eig, max_eig) = if block.nrows() == 0 {
                (0.0, 0.0)
            } else {
                let (vals, _) = symmetric_eigen(&block)?;
                (vals[0], vals[vals.len() - 1])
            };
            Ok(DiagBlock {
                vertex,
                block,
                min_eig,
                max_eig,
            })
        })
        .collect()
}

/// Pointwise observables of a state `(x, delta)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorValues {
    /// `Psi = 1/2 ||delta x||^2`.
    pub psi: f64,
    pub frob2_delta: f64,
    pub norm2_x: f64,
    pub norm2_dx: f64,
    /// `||delta x||^2 / ||x||^2`, `None` when `||x||^2 < RAYLEIGH_FLOOR`.
    pub rayleigh: Option<f64>,
    pub diag_m: Vec<DiagBlock>,
}

fn check_x(sheaf: &Sheaf, x: &Cochain0) -> Result<()> {
    if x.len() != sheaf.total_vertex_dim() {
        return Err(SheafError::LengthMismatch {
            context: "0-cochain",
            expected: sheaf.total_vertex_dim(),
            found: x.len(),
        });
    }
    Ok(())
}

fn check_rate(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(SheafError::InvalidConfig(format!(
            "{name} must be > 0, got {value}"
        )))
    }
}

pub fn monitors(sheaf: &Sheaf, x: &Cochain0, alpha: f64, beta: f64) -> Result<MonitorValues> {
    check_x(sheaf, x)?;
    let layout = Layout::new(sheaf);
    let s = layout.pack(sheaf, x.values());
    let [psi, frob2_delta, norm2_x, norm2_dx, rayleigh] = layout.scalars(&s);
    Ok(MonitorValues {
        psi,
        frob2_delta,
        norm2_x,
        norm2_dx,
        rayleigh: (!rayleigh.is_nan()).then_some(rayleigh),
        diag_m: diag_blocks(layout.diag_m(sheaf, &s, alpha, beta))?,
    })
}

/// `Psi(x, delta) = 1/2 x^T delta^T delta x`.
pub fn psi(sheaf: &Sheaf, x: &Cochain0) -> Result<f64> {
    check_x(sheaf, x)?;
    Ok(0.5 * sheaf.coboundary().apply_raw(x.values()).norm_squared())
}

/// Right-hand side of the joint system at `(x, delta)`: `dx/dt` and, per
/// edge, `d delta_e / dt` as an `edge_dim x (d_tail + d_head)` block row.
pub fn joint_vector_field(
    sheaf: &Sheaf,
    x: &Cochain0,
    alpha: f64,
    beta: f64,
) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
    check_x(sheaf, x)?;
    let layout = Layout::new(sheaf);
    let f = layout.field(&layout.pack(sheaf, x.values()), Some(alpha), beta);
    let rows = (0..layout.offsets.len())
        .map(|e| layout.row(&f, e).into_owned())
        .collect();
    Ok((f.rows(0, layout.n).into_owned(), rows))
}

/// Sampled evolution of a sheaf (and, for the joint flow, of the opinions).
#[derive(Debug, Clone)]
pub struct SheafTrajectory {
    pub times: Vec<f64>,
    pub sheaf_states: Vec<Sheaf>,
    /// Present for the joint flow only.
    pub cochain_states: Option<Vec<DVector<f64>>>,
    pub monitors: Vec<Series>,
    /// `diag_m[k][v]`: block of `M` at vertex `v`, sample `k`.
    pub diag_m: Vec<Vec<DMatrix<f64>>>,
    pub final_sheaf: Sheaf,
    pub final_x: DVector<f64>,
    pub converged: bool,
    pub residual: f64,
    pub steps: usize,
    pub t_final: f64,
    pub integrator: Integrator,
    pub step: f64,
    pub tol: f64,
}

impl SheafTrajectory {
    pub fn monitor(&self, name: &str) -> Option<&[f64]> {
        self.monitors
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.values.as_slice())
    }

    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(SheafError::NonConvergence {
                t: self.t_final,
                residual: self.residual,
                tol: self.tol,
            })
        }
    }
}

fn assemble(
    sheaf: &Sheaf,
    layout: &Layout,
    traj: flow::Trajectory,
    joint: bool,
    alpha: f64,
    beta: f64,
) -> SheafTrajectory {
    let sheaf_states = traj
        .states
        .iter()
        .map(|s| layout.unpack_sheaf(sheaf, s))
        .collect();
    let cochain_states = joint.then(|| {
        traj.states
            .iter()
            .map(|s| s.rows(0, layout.n).into_owned())
            .collect()
    });
    let diag_m = traj
        .states
        .iter()
        .map(|s| layout.diag_m(sheaf, s, alpha, beta))
        .collect();
    SheafTrajectory {
        times: traj.times,
        sheaf_states,
        cochain_states,
        monitors: traj.observables,
        diag_m,
        final_sheaf: layout.unpack_sheaf(sheaf, &traj.limit),
        final_x: traj.limit.rows(0, layout.n).into_owned(),
        converged: traj.converged,
        residual: traj.residual,
        steps: traj.steps,
        t_final: traj.t_final,
        integrator: traj.integrator,
        step: traj.step,
        tol: traj.tol,
    }
}

fn scalar_monitor(layout: &Layout) -> Monitor<'_> {
    Monitor {
        names: MONITOR_NAMES.to_vec(),
        eval: Box::new(move |s| layout.scalars(s).to_vec()),
    }
}

/// Integrates `d delta_e/dt = -beta delta_e x_e x_e^T` with `x` held fixed.
/// Every edge decays independently; exact-eigen uses the per-edge closed form.
/// `cfg.alpha` is ignored. `diag_m` is evaluated with `alpha = 1`.
pub fn expression_diffuse(
    sheaf: &Sheaf,
    x: &Cochain0,
    beta: f64,
    cfg: &FlowConfig,
) -> Result<SheafTrajectory> {
    check_x(sheaf, x)?;
    check_rate("beta", beta)?;
    cfg.validate()?;
    let layout = Layout::new(sheaf);
    let s0 = layout.pack(sheaf, x.values());
    let rates: Vec<f64> = (0..layout.offsets.len())
        .map(|e| beta * layout.x_edge(&s0, e).norm_squared())
        .collect();
    let integrator = cfg.integrator.unwrap_or(if s0.len() <= EXACT_EIGEN_LIMIT {
        Integrator::ExactEigen
    } else {
        Integrator::Rk4
    });
    let positive = rates.iter().copied().filter(|&r| r > 0.0);
    let step = cfg.step.unwrap_or_else(|| match integrator {
        Integrator::ExactEigen => positive.min_by(f64::total_cmp).map_or(1.0, |r| 0.1 / r),
        _ => positive.max_by(f64::total_cmp).map_or(1.0, |r| 0.5 / r),
    });

    // delta_e(t) = delta_e - delta_e P_e (1 - exp(-rate_e t)), P_e = x_e x_e^T / ||x_e||^2
    let decays: Vec<DMatrix<f64>> = (0..layout.offsets.len())
        .map(|e| {
            let xe = layout.x_edge(&s0, e);
            let n2 = xe.norm_squared();
            if n2 == 0.0 {
                DMatrix::zeros(layout.shapes[e].0, layout.shapes[e].1)
            } else {
                layout.row(&s0, e) * &xe * xe.transpose() / n2
            }
        })
        .collect();
    let exact = |t: f64| {
        let mut s = s0.clone();
        for (e, d) in decays.iter().enumerate() {
            let w = -(1.0 - (-rates[e] * t).exp());
            let mut slot = s.rows_mut(layout.offsets[e], d.len());
            slot.axpy(w, &DVector::from_column_slice(d.as_slice()), 1.0);
        }
        s
    };
    let rhs = |s: &DVector<f64>| layout.field(s, None, beta);
    let traj = flow::run(
        &s0,
        RunSpec {
            rhs: &rhs,
            exact: Some(Box::new(exact)),
            restep: None,
            integrator,
            step,
            t_max: cfg.t_max,
            tol: cfg.tol_for(&s0),
            record_every: cfg.record_every,
            on_divergence: OnDivergence::Error,
            monitor: scalar_monitor(&layout),
        },
    )?;
    Ok(assemble(sheaf, &layout, traj, false, 1.0, beta))
}

/// Closed-form limit of [`expression_diffuse`]:
/// `delta'_e = delta_e (I - x_e x_e^T / ||x_e||^2)`, or `delta_e` when `x_e = 0`.
pub fn expression_limit(sheaf: &Sheaf, x: &Cochain0) -> Result<Sheaf> {
    check_x(sheaf, x)?;
    let maps = (0..sheaf.graph().n_edges())
        .map(|e| {
            let xe = sheaf.edge_gather(e, x.values());
            let row = sheaf.edge_block_row(e);
            let n2 = xe.norm_squared();
            let row = if n2 == 0.0 {
                row
            } else {
                let y = &row * &xe;
                row - y * xe.transpose() / n2
            };
            let du = sheaf.vertex_dims()[sheaf.graph().edge(e).0];
            let c = row.ncols();
            [
                -row.columns(0, du).into_owned(),
                row.columns(du, c - du).into_owned(),
            ]
        })
        .collect();
    Ok(Sheaf::from_parts(
        sheaf.graph().clone(),
        sheaf.vertex_dims().to_vec(),
        sheaf.edge_dims().to_vec(),
        maps,
    ))
}

/// Squared Frobenius distance between the coboundaries of two sheaves on the same graph.
pub fn sheaf_distance(a: &Sheaf, b: &Sheaf) -> Result<f64> {
    if a.graph() != b.graph()
        || a.vertex_dims() != b.vertex_dims()
        || a.edge_dims() != b.edge_dims()
    {
        return Err(SheafError::InvalidConfig(
            "sheaf distance needs identical graphs and stalks".into(),
        ));
    }
    Ok((0..a.graph().n_edges())
        .map(|e| (a.edge_block_row(e) - b.edge_block_row(e)).norm_squared())
        .sum())
}

fn joint_step(layout: &Layout, s: &DVector<f64>, alpha: f64, beta: f64) -> f64 {
    // lambda_max(delta^T delta) via power iteration on the block rows
    let lmax = flow::power_iteration(
        |v| {
            let mut out = DVector::zeros(layout.n);
            for e in 0..layout.offsets.len() {
                let row = layout.row(s, e);
                let (ru, rv) = &layout.ends[e];
                let ve = DVector::from_iterator(
                    ru.len() + rv.len(),
                    ru.clone().chain(rv.clone()).map(|i| v[i]),
                );
                let g = row.tr_mul(&(row * ve));
                for (k, i) in ru.clone().chain(rv.clone()).enumerate() {
                    out[i] += g[k];
                }
            }
            out
        },
        layout.n,
    );
    let rate = alpha * lmax + beta * s.rows(0, layout.n).norm_squared();
    if rate > 0.0 {
        JOINT_STEP_FACTOR / rate
    } else {
        1.0
    }
}

/// Integrates `dx/dt = -alpha delta^T delta x`, `d delta_e/dt = -beta delta_e x_e x_e^T`
/// with `alpha = cfg.alpha`. Only rk4 and euler apply; the default step
/// `JOINT_STEP_FACTOR / (alpha lambda_max(delta^T delta) + beta ||x||^2)` is refreshed every
/// [`RESTEP_EVERY`] steps.
pub fn joint_diffuse(
    sheaf: &Sheaf,
    x0: &Cochain0,
    beta: f64,
    cfg: &FlowConfig,
) -> Result<SheafTrajectory> {
    check_x(sheaf, x0)?;
    check_rate("beta", beta)?;
    cfg.validate()?;
    let alpha = cfg.alpha;
    let integrator = match cfg.integrator {
        None => Integrator::Rk4,
        Some(Integrator::ExactEigen) => {
            return Err(SheafError::InvalidConfig(
                "the joint flow is nonlinear; use rk4 or euler".into(),
            ))
        }
        Some(i) => i,
    };
    let layout = Layout::new(sheaf);
    let s0 = layout.pack(sheaf, x0.values());
    let restep = |s: &DVector<f64>| joint_step(&layout, s, alpha, beta);
    let step = cfg.step.unwrap_or_else(|| restep(&s0));
    let rhs = |s: &DVector<f64>| layout.field(s, Some(alpha), beta);
    let traj = flow::run(
        &s0,
        RunSpec {
            rhs: &rhs,
            exact: None,
            restep: cfg.step.is_none().then_some((RESTEP_EVERY, &restep as _)),
            integrator,
            step,
            t_max: cfg.t_max,
            tol: cfg.tol_for(&s0),
            record_every: cfg.record_every,
            on_divergence: OnDivergence::Error,
            monitor: scalar_monitor(&layout),
        },
    )?;
    Ok(assemble(sheaf, &layout, traj, true, alpha, beta))
}

/// Outcome of the diagonal-block test on `M = alpha delta^T delta - beta x x^T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    /// Some diagonal block is not positive semidefinite.
    pub certified: bool,
    /// First vertex whose block has an eigenvalue below `-tol`.
    pub witness_vertex: Option<usize>,
    /// The witness block also has an eigenvalue above `+tol`. A 1x1 block
    /// never does; a negative scalar still certifies.
    pub strictly_indefinite: bool,
    pub blocks: Vec<DiagBlock>,
    pub tol: f64,
}

/// Sufficient condition for the joint flow to end at `x_inf != 0`.
pub fn nontrivial_limit_certificate(
    sheaf: &Sheaf,
    x0: &Cochain0,
    alpha: f64,
    beta: f64,
) -> Result<Certificate> {
    let m = monitors(sheaf, x0, alpha, beta)?;
    let witness = m.diag_m.iter().find(|b| b.min_eig < -CERTIFICATE_TOL);
    Ok(Certificate {
        certified: witness.is_some(),
        witness_vertex: witness.map(|b| b.vertex),
        strictly_indefinite: witness.is_some_and(|b| b.max_eig > CERTIFICATE_TOL),
        blocks: m.diag_m,
        tol: CERTIFICATE_TOL,
    })
}

/// Smallest `kappa = 2^k` (`k < max_doublings`) for which `(delta, kappa x0)` certifies.
/// `None` if `x0 = 0` or the search runs out.
pub fn certifying_scale(
    sheaf: &Sheaf,
    x0: &Cochain0,
    alpha: f64,
    beta: f64,
    max_doublings: u32,
) -> Result<Option<f64>> {
    let mut kappa = 1.0;
    for _ in 0..max_doublings {
        let scaled = x0.with_values(x0.values() * kappa)?;
        if nontrivial_limit_certificate(sheaf, &scaled, alpha, beta)?.certified {
            return Ok(Some(kappa));
        }
        kappa *= 2.0;
    }
    Ok(None)
}

/// Result of perturbing an equilibrium of the joint flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    /// Rank of the derivative of `(x, delta) -> delta x` at the equilibrium.
    pub jacobian_rank: usize,
    /// Rows of that derivative (`total edge dim`).
    pub jacobian_rows: usize,
    pub epsilon: f64,
    /// Per trial: sup over samples of `||delta x|| + ||z(t) - z*||`.
    pub excursions: Vec<f64>,
    pub bound: f64,
    pub stable: bool,
}

impl LyapunovReport {
    pub fn full_rank(&self) -> bool {
        self.jacobian_rank == self.jacobian_rows
    }
}

/// Perturbs `(x*, delta*)` by `trials` random vectors of norm `epsilon`, runs
/// the joint flow to `t_max` and checks each trajectory stays within `10 epsilon`.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_probe(
    sheaf: &Sheaf,
    x_star: &Cochain0,
    alpha: f64,
    beta: f64,
    epsilon: f64,
    trials: usize,
    t_max: f64,
    seed: u64,
) -> Result<LyapunovReport> {
    check_x(sheaf, x_star)?;
    let layout = Layout::new(sheaf);
    let z_star = layout.pack(sheaf, x_star.values());

    // derivative of (x, delta) -> delta x: [delta | blocks of x_e^T]
    let m = sheaf.total_edge_dim();
    let mut jac = DMatrix::zeros(m, z_star.len());
    for e in 0..layout.offsets.len() {
        let r0 = sheaf.edge_range(e).start;
        let row = layout.row(&z_star, e);
        let xe = layout.x_edge(&z_star, e);
        let (ru, rv) = &layout.ends[e];
        for (k, col) in ru.clone().chain(rv.clone()).enumerate() {
            for i in 0..row.nrows() {
                jac[(r0 + i, col)] = row[(i, k)];
            }
        }
        let (r, c) = layout.shapes[e];
        for j in 0..c {
            for i in 0..r {
                jac[(r0 + i, layout.offsets[e] + j * r + i)] = xe[j];
            }
        }
    }
    let jacobian_rank = numerical_rank(&jac, DEFAULT_RANK_TOL);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = FlowConfig {
        alpha,
        t_max,
        record_every: 1,
        ..FlowConfig::default()
    };
    let bound = 10.0 * epsilon;
    let mut excursions = Vec::with_capacity(trials);
    for _ in 0..trials {
        let dir = DVector::from_fn(z_star.len(), |_, _| StandardNormal.sample(&mut rng));
        let z0 = &z_star + dir.normalize() * epsilon;
        let perturbed = layout.unpack_sheaf(sheaf, &z0);
        let x0 = x_star.with_values(z0.rows(0, layout.n).into_owned())?;
        let traj = joint_diffuse(&perturbed, &x0, beta, &cfg)?;
        let worst = traj
            .sheaf_states
            .iter()
            .zip(traj.cochain_states.as_deref().unwrap_or_default())
            .map(|(s, x)| {
                let z = layout.pack(s, x);
                s.coboundary().apply_raw(x).norm() + (z - &z_star).norm()
            })
            .fold(0.0, f64::max);
        excursions.push(worst);
    }
    Ok(LyapunovReport {
        jacobian_rank,
        jacobian_rows: m,
        epsilon,
        stable: excursions.iter().all(|&d| d <= bound),
        excursions,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn liar() -> (Sheaf, Cochain0) {
        let s = Sheaf::constant(Graph::path(2), 1);
        let x = s.cochain0_from_slice(&[-4.0, 1.0]).unwrap();
        (s, x)
    }

    #[test]
    fn closed_form_learns_to_lie() {
        let (s, x) = liar();
        let t = expression_limit(&s, &x).unwrap();
        let [fu, fv] = t.edge_maps(0);
        assert!((fu[0] + 3.0 / 17.0).abs() < 1e-15);
        assert!((fv[0] - 12.0 / 17.0).abs() < 1e-15);
    }

    #[test]
    fn integrated_expression_flow_matches_closed_form() {
        let (s, x) = liar();
        for integrator in [Integrator::ExactEigen, Integrator::Rk4, Integrator::Euler] {
            let cfg = FlowConfig {
                integrator: Some(integrator),
                ..FlowConfig::default()
            };
            let t = expression_diffuse(&s, &x, 1.0, &cfg)
                .unwrap()
                .require_converged()
                .unwrap();
            let [fu, fv] = t.final_sheaf.edge_maps(0);
            assert!((fu[0] + 3.0 / 17.0).abs() < 1e-6, "{integrator:?}");
            assert!((fv[0] - 12.0 / 17.0).abs() < 1e-6, "{integrator:?}");
            assert_eq!(t.times.len(), t.monitor("Psi").unwrap().len());
        }
    }

    #[test]
    fn zero_edge_is_left_alone() {
        let s = Sheaf::constant(Graph::path(3), 1);
        let x = s.cochain0_from_slice(&[0.0, 0.0, 2.0]).unwrap();
        let t = expression_limit(&s, &x).unwrap();
        assert_eq!(t.edge_block_row(0), s.edge_block_row(0));
        let d = expression_diffuse(&s, &x, 1.0, &FlowConfig::default()).unwrap();
        assert_eq!(d.final_sheaf.edge_block_row(0), s.edge_block_row(0));
    }

    #[test]
    fn section_is_fixed() {
        let s = Sheaf::constant(Graph::cycle(4), 2);
        let x = s
            .cochain0_from_slice(&[1.0, -2.0, 1.0, -2.0, 1.0, -2.0, 1.0, -2.0])
            .unwrap();
        let d = expression_diffuse(&s, &x, 1.0, &FlowConfig::default()).unwrap();
        assert_eq!(d.steps, 0);
        let j = joint_diffuse(&s, &x, 1.0, &FlowConfig::default()).unwrap();
        assert_eq!(j.steps, 0);
        assert!(j.converged);
    }

    #[test]
    fn psi_of_liar_edge() {
        let (s, x) = liar();
        let m = monitors(&s, &x, 1.0, 1.0).unwrap();
        assert_eq!(m.psi, 12.5);
        assert_eq!(m.norm2_dx, 25.0);
        assert_eq!(m.diag_m[0].block[(0, 0)], -15.0);
        assert_eq!(m.diag_m[1].block[(0, 0)], 0.0);
    }

    #[test]
    fn certificate_on_liar_edge() {
        let (s, x) = liar();
        let c = nontrivial_limit_certificate(&s, &x, 1.0, 1.0).unwrap();
        assert!(c.certified);
        assert_eq!(c.witness_vertex, Some(0));
        assert!(!c.strictly_indefinite);
        let zero = s.zero_cochain0();
        assert!(
            !nontrivial_limit_certificate(&s, &zero, 1.0, 1.0)
                .unwrap()
                .certified
        );
        let small = s.cochain0_from_slice(&[0.1, 0.2]).unwrap();
        assert!(
            !nontrivial_limit_certificate(&s, &small, 1.0, 1.0)
                .unwrap()
                .certified
        );
        assert_eq!(
            certifying_scale(&s, &small, 1.0, 1.0, 20).unwrap(),
            Some(8.0)
        );
    }

    #[test]
    fn joint_liar_conserves_diag_m() {
        let (s, x) = liar();
        let t = joint_diffuse(&s, &x, 1.0, &FlowConfig::default())
            .unwrap()
            .require_converged()
            .unwrap();
        assert!(t.final_x.norm() > 1e-6);
        let dx = t.final_sheaf.coboundary().apply_raw(&t.final_x);
        assert!(dx.norm() < 1e-8);
        let [fu, _] = t.final_sheaf.edge_maps(0);
        assert!(fu[0] < 0.0);
        let first = &t.diag_m[0];
        for snap in &t.diag_m {
            for (a, b) in first.iter().zip(snap) {
                assert!((a - b).amax() < 1e-7);
            }
        }
    }

    #[test]
    fn zero_opinions_do_not_move() {
        let (s, _) = liar();
        let t = joint_diffuse(&s, &s.zero_cochain0(), 1.0, &FlowConfig::default()).unwrap();
        assert_eq!(t.steps, 0);
    }

    #[test]
    fn lyapunov_probe_on_liar_limit() {
        let (s, x) = liar();
        let t = joint_diffuse(&s, &x, 1.0, &FlowConfig::default()).unwrap();
        let xs = s.cochain0(t.final_x.clone()).unwrap();
        let r = lyapunov_probe(&t.final_sheaf, &xs, 1.0, 1.0, 1e-3, 5, 20.0, 7).unwrap();
        assert!(r.full_rank());
        assert!(r.stable, "{:?}", r.excursions);
    }
}
