//! Time stepping shared by every flow: exact eigen propagation for affine
//! systems, classical RK4 and forward Euler, with convergence and divergence
//! monitoring.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SheafError};
use crate::spectral::symmetric_eigen;

/// Largest total dimension for which the automatic choice is `ExactEigen`.
pub const EXACT_EIGEN_LIMIT: usize = 512;
/// Power-iteration steps used to estimate the spectral radius.
pub const POWER_ITERATIONS: usize = 50;
/// A trajectory diverges once `||x|| > DIVERGENCE_FACTOR * (1 + ||x0||)`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    ExactEigen,
    Rk4,
    Euler,
}

impl Integrator {
    pub fn name(self) -> &'static str {
        match self {
            Integrator::ExactEigen => "exact-eigen",
            Integrator::Rk4 => "rk4",
            Integrator::Euler => "euler",
        }
    }
}

/// Integration parameters shared by the linear and nonlinear flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Diffusion strength, > 0.
    pub alpha: f64,
    /// `None` picks exact-eigen up to [`EXACT_EIGEN_LIMIT`], rk4 above.
    pub integrator: Option<Integrator>,
    /// Step / sampling interval. `None` derives one from the spectrum.
    pub step: Option<f64>,
    pub t_max: f64,
    /// Threshold on `||dx/dt||_inf`. `None` means `1e-9 * (1 + ||x0||_inf)`.
    pub convergence_tol: Option<f64>,
    /// Record every n-th step (step 0 is always recorded).
    pub record_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            integrator: None,
            step: None,
            t_max: 1e4,
            convergence_tol: None,
            record_every: 10,
        }
    }
}

impl FlowConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SheafError::InvalidConfig(msg));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if let Some(h) = self.step {
            if !(h.is_finite() && h > 0.0) {
                return bad(format!("step must be > 0, got {h}"));
            }
        }
        if let Some(tol) = self.convergence_tol {
            if !(tol.is_finite() && tol > 0.0) {
                return bad(format!("convergence_tol must be > 0, got {tol}"));
            }
        }
        // also rejects NaN
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.t_max > 0.0) {
            return bad(format!("t_max must be > 0, got {}", self.t_max));
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        Ok(())
    }

    pub(crate) fn tol_for(&self, x0: &DVector<f64>) -> f64 {
        self.convergence_tol
            .unwrap_or_else(|| 1e-9 * (1.0 + x0.amax()))
    }
}

/// A named scalar series recorded alongside a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

/// Sampled states of a flow plus monitored observables.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub observables: Vec<Series>,
    pub converged: bool,
    pub diverged: bool,
    /// Final state reached (the limit when `converged`).
    pub limit: DVector<f64>,
    /// `||dx/dt||_inf` at `limit`.
    pub residual: f64,
    pub steps: usize,
    pub t_final: f64,
    pub integrator: Integrator,
    pub step: f64,
    pub tol: f64,
}

impl Trajectory {
    pub fn observable(&self, name: &str) -> Option<&[f64]> {
        self.observables
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.values.as_slice())
    }

    /// Turns an unconverged run into `NonConvergence`.
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

/// `dx_F/dt = -A x_F + b` on the free coordinates `F`; the rest are frozen.
/// `A` must be symmetric.
#[derive(Debug, Clone)]
pub(crate) struct AffineSystem {
    pub free: Vec<usize>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub dim: usize,
}

impl AffineSystem {
    pub fn homogeneous(a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self {
            free: (0..n).collect(),
            b: DVector::zeros(n),
            a,
            dim: n,
        }
    }

    pub fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        let xf = DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| x[i]));
        let df = &self.b - &self.a * xf;
        let mut out = DVector::zeros(self.dim);
        for (k, &i) in self.free.iter().enumerate() {
            out[i] = df[k];
        }
        out
    }
}

/// Closed-form propagator for an [`AffineSystem`] from a fixed initial state.
pub(crate) struct ExactPropagator {
    free: Vec<usize>,
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    c0: DVector<f64>,
    d: DVector<f64>,
    cutoff: f64,
    base: DVector<f64>,
}

impl ExactPropagator {
    pub fn new(sys: &AffineSystem, x0: &DVector<f64>) -> Result<Self> {
        let (values, vectors) = symmetric_eigen(&sys.a)?;
        let xf = DVector::from_iterator(sys.free.len(), sys.free.iter().map(|&i| x0[i]));
        let c0 = vectors.tr_mul(&xf);
        let d = vectors.tr_mul(&sys.b);
        let cutoff = 1e-12 * values.iter().fold(1.0_f64, |a, &l| a.max(l.abs()));
        Ok(Self {
            free: sys.free.clone(),
            values,
            vectors,
            c0,
            d,
            cutoff,
            base: x0.clone(),
        })
    }

    /// Smallest nonzero `|lambda|` of `A`.
    pub fn smallest_rate(&self) -> Option<f64> {
        self.values
            .iter()
            .map(|l| l.abs())
            .filter(|&l| l > self.cutoff)
            .min_by(f64::total_cmp)
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        let c = DVector::from_iterator(
            self.values.len(),
            self.values.iter().enumerate().map(|(i, &l)| {
                if l.abs() <= self.cutoff {
                    self.c0[i] + self.d[i] * t
                } else {
                    let inf = self.d[i] / l;
                    inf + (self.c0[i] - inf) * (-l * t).exp()
                }
            }),
        );
        let xf = &self.vectors * c;
        let mut x = self.base.clone();
        for (k, &i) in self.free.iter().enumerate() {
            x[i] = xf[k];
        }
        x
    }
}

/// Spectral-radius estimate of a linear map by power iteration.
pub(crate) fn power_iteration(apply: impl Fn(&DVector<f64>) -> DVector<f64>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_iterator(n, (0..n).map(|i| 1.0 + (i % 7) as f64 / 7.0));
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = apply(&v);
        let norm = w.norm();
        if norm == 0.0 {
            return lambda;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda
}

/// What to do when the state blows up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum OnDivergence {
    /// Stable flow: blow-up means the explicit step is too large.
    Error,
    /// Possibly unstable flow: truncate and flag.
    Flag,
}

pub(crate) type MonitorFn<'a> = Box<dyn Fn(&DVector<f64>) -> Vec<f64> + 'a>;
pub(crate) type StepFn<'a> = &'a dyn Fn(&DVector<f64>) -> f64;
pub(crate) type ExactFn<'a> = Box<dyn Fn(f64) -> DVector<f64> + 'a>;

pub(crate) struct Monitor<'a> {
    pub names: Vec<&'static str>,
    pub eval: MonitorFn<'a>,
}

pub(crate) struct RunSpec<'a> {
    pub rhs: &'a dyn Fn(&DVector<f64>) -> DVector<f64>,
    /// Closed-form state at time `t`, required for `ExactEigen`.
    pub exact: Option<ExactFn<'a>>,
    /// `(every, f)`: recompute the step as `f(x)` every `every` steps (explicit methods only).
    pub restep: Option<(usize, StepFn<'a>)>,
    pub integrator: Integrator,
    pub step: f64,
    pub t_max: f64,
    pub tol: f64,
    pub record_every: usize,
    pub on_divergence: OnDivergence,
    pub monitor: Monitor<'a>,
}

/// Steps until `||f(x)||_inf <= tol`, `t_max`, or divergence.
pub(crate) fn run(x0: &DVector<f64>, spec: RunSpec<'_>) -> Result<Trajectory> {
    let mut h = spec.step;
    if spec.integrator == Integrator::ExactEigen && spec.exact.is_none() {
        return Err(SheafError::InvalidConfig(
            "exact-eigen integration is not available for this flow".into(),
        ));
    }
    let bound = DIVERGENCE_FACTOR * (1.0 + x0.norm());
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); spec.monitor.names.len()];

    let mut x = x0.clone();
    let mut steps = 0usize;
    let mut t = 0.0_f64;
    let mut converged = false;
    let mut diverged = false;
    let mut residual;
    loop {
        let f = (spec.rhs)(&x);
        residual = f.amax();
        let blown = !x.iter().all(|v| v.is_finite()) || x.norm() > bound;
        if blown {
            match spec.on_divergence {
                OnDivergence::Error => return Err(SheafError::StepTooLarge { step: h, t }),
                OnDivergence::Flag => {
                    diverged = true;
                    break;
                }
            }
        }
        if steps.is_multiple_of(spec.record_every) {
            times.push(t);
            for (s, v) in series.iter_mut().zip((spec.monitor.eval)(&x)) {
                s.push(v);
            }
            states.push(x.clone());
        }
        if residual <= spec.tol {
            converged = true;
            break;
        }
        if t >= spec.t_max * (1.0 - 1e-12) {
            break;
        }
        if let Some((every, restep)) = spec.restep {
            if steps > 0 && steps.is_multiple_of(every) {
                h = restep(&x);
            }
        }
        let h = match spec.integrator {
            Integrator::ExactEigen => h,
            _ => h.min(spec.t_max - t),
        };
        x = match spec.integrator {
            Integrator::ExactEigen => {
                spec.exact.as_ref().expect("checked above")((steps + 1) as f64 * h)
            }
            Integrator::Euler => &x + f * h,
            Integrator::Rk4 => {
                let k2 = (spec.rhs)(&(&x + &f * (0.5 * h)));
                let k3 = (spec.rhs)(&(&x + &k2 * (0.5 * h)));
                let k4 = (spec.rhs)(&(&x + &k3 * h));
                &x + (f + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
            }
        };
        steps += 1;
        t = if spec.integrator == Integrator::ExactEigen {
            steps as f64 * h
        } else {
            t + h
        };
    }
    let observables = spec
        .monitor
        .names
        .iter()
        .zip(series)
        .map(|(n, values)| Series {
            name: (*n).to_string(),
            values,
        })
        .collect();
    Ok(Trajectory {
        times,
        states,
        observables,
        converged,
        diverged,
        limit: x,
        residual,
        steps,
        t_final: t,
        integrator: spec.integrator,
        step: h,
        tol: spec.tol,
    })
}

/// Resolves the integrator and step for an affine system.
pub(crate) fn plan_affine<'a>(
    cfg: &FlowConfig,
    sys: &AffineSystem,
    x0: &DVector<f64>,
) -> Result<(Integrator, f64, Option<ExactFn<'a>>)> {
    let integrator = cfg.integrator.unwrap_or(if sys.dim <= EXACT_EIGEN_LIMIT {
        Integrator::ExactEigen
    } else {
        Integrator::Rk4
    });
    match integrator {
        Integrator::ExactEigen => {
            let prop = ExactPropagator::new(sys, x0)?;
            let h = cfg
                .step
                .unwrap_or_else(|| prop.smallest_rate().map_or(1.0, |r| 0.1 / r));
            Ok((integrator, h, Some(Box::new(move |t| prop.at(t)))))
        }
        _ => {
            let h = cfg.step.unwrap_or_else(|| {
                let lmax = power_iteration(|v| &sys.a * v, sys.free.len());
                if lmax > 0.0 {
                    0.5 / lmax
                } else {
                    1.0
                }
            });
            Ok((integrator, h, None))
        }
    }
}
