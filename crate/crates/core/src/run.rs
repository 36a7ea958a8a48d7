//! Runs a [`Scenario`] and writes `trajectory.csv`, `summary.json` and, for
//! `learn` / `joint`, `sheaf_final.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use crate::control::{detectable, stabilizable};
use crate::dynamics::{
    diffuse, diffusion_limit, reluctant_diffuse, reluctant_limit, stubborn_diffuse, stubborn_limit,
};
use crate::expression::{
    expression_diffuse, expression_limit, joint_diffuse, lyapunov_probe, monitors,
    nontrivial_limit_certificate, sheaf_distance, SheafTrajectory,
};
use crate::flow::{Series, Trajectory};
use crate::nonlinear::{
    bc_equilibrium_check, bc_local_stability_probe, cutset_indefiniteness, effective_subgraph,
    nl_diffuse, signed_laplacian, EdgePotential,
};
use crate::scenario::{subcomplex_of, Experiment, Scenario, ScenarioError, SheafSpec};
use crate::sheaf::Sheaf;
use crate::spectral::{
    h0_with_tol, local_sections_with_tol, numerical_rank, relative_h0_with_tol, sheaf_laplacian,
    spectrum_summary, DEFAULT_RANK_TOL,
};
use crate::SheafError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extrema {
    pub first: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
}

fn extrema(values: &[f64]) -> Option<Extrema> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    Some(Extrema {
        first: *finite.first()?,
        last: *finite.last()?,
        min: finite.iter().copied().fold(f64::INFINITY, f64::min),
        max: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSummary {
    pub integrator: &'static str,
    pub step: f64,
    pub steps: usize,
    pub samples: usize,
    pub t_final: f64,
    pub converged: bool,
    pub diverged: bool,
    /// `||dx/dt||_inf` at the last state, compared against `tol`.
    pub residual: f64,
    pub tol: f64,
    pub monitors: BTreeMap<String, Option<Extrema>>,
}

fn monitor_extrema(series: &[Series]) -> BTreeMap<String, Option<Extrema>> {
    series
        .iter()
        .map(|s| (s.name.clone(), extrema(&s.values)))
        .collect()
}

impl FlowSummary {
    fn of(t: &Trajectory) -> Self {
        Self {
            integrator: t.integrator.name(),
            step: t.step,
            steps: t.steps,
            samples: t.times.len(),
            t_final: t.t_final,
            converged: t.converged,
            diverged: t.diverged,
            residual: t.residual,
            tol: t.tol,
            monitors: monitor_extrema(&t.observables),
        }
    }

    fn of_sheaf(t: &SheafTrajectory) -> Self {
        Self {
            integrator: t.integrator.name(),
            step: t.step,
            steps: t.steps,
            samples: t.times.len(),
            t_final: t.t_final,
            converged: t.converged,
            diverged: false,
            residual: t.residual,
            tol: t.tol,
            monitors: monitor_extrema(&t.monitors),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dims {
    pub vertices: usize,
    pub edges: usize,
    pub total_vertex_dim: usize,
    pub total_edge_dim: usize,
}

/// Everything `summary.json` holds. All but `wall_time_s` is a deterministic
/// function of the scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema: u32,
    pub experiment: Experiment,
    pub seed: u64,
    pub dims: Dims,
    pub h0_dim: usize,
    /// Relative rank tolerance used for every dimension count below.
    pub rank_tol: f64,
    pub flow: Option<FlowSummary>,
    pub result: Value,
    pub wall_time_s: f64,
}

impl RunSummary {
    /// `Some(false)` when a flow that should settle did not.
    pub fn converged(&self) -> Option<bool> {
        self.flow.as_ref().map(|f| f.converged || f.diverged)
    }
}

/// In-memory products of a run, before anything is written.
pub struct RunOutput {
    pub summary: RunSummary,
    pub csv: Option<String>,
    pub final_sheaf: Option<Sheaf>,
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn csv_table(
    times: &[f64],
    states: &[DVector<f64>],
    columns: &[String],
    series: &[Series],
) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once("t".to_string())
        .chain(columns.iter().cloned())
        .chain(series.iter().map(|s| s.name.clone()));
    w.write_record(header).expect("in-memory write");
    for (k, t) in times.iter().enumerate() {
        let row = std::iter::once(*t)
            .chain(states[k].iter().copied())
            .chain(series.iter().map(|s| s.values[k]))
            .map(|v| v.to_string());
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

fn x_columns(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

fn trajectory_csv(t: &Trajectory) -> String {
    let n = t.states.first().map_or(0, |s| s.len());
    csv_table(&t.times, &t.states, &x_columns(n), &t.observables)
}

/// Columns: opinions (joint only), then every restriction-map entry as
/// `F{e}_{u|v}[r,c]`.
fn sheaf_trajectory_csv(t: &SheafTrajectory) -> String {
    let base = &t.final_sheaf;
    let mut columns = Vec::new();
    if t.cochain_states.is_some() {
        columns.extend(x_columns(base.total_vertex_dim()));
    }
    for e in 0..base.graph().n_edges() {
        for (side, m) in ["u", "v"].iter().zip(base.edge_maps(e)) {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    columns.push(format!("F{e}_{side}[{r},{c}]"));
                }
            }
        }
    }
    let states: Vec<DVector<f64>> = t
        .sheaf_states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut vals: Vec<f64> = t
                .cochain_states
                .as_ref()
                .map_or_else(Vec::new, |xs| xs[k].iter().copied().collect());
            for [a, b] in s.all_edge_maps() {
                for m in [a, b] {
                    vals.extend(m.transpose().iter());
                }
            }
            DVector::from_vec(vals)
        })
        .collect();
    csv_table(&t.times, &states, &columns, &t.monitors)
}

fn rank_of_delta(sheaf: &Sheaf, tol: f64) -> usize {
    numerical_rank(&sheaf.coboundary().to_dense(), tol)
}

fn sheaf_blocks_json(sheaf: &Sheaf) -> Value {
    serde_json::to_value(SheafSpec::from_sheaf(sheaf)).expect("plain data")
}

/// Runs the experiment without touching the filesystem.
pub fn execute(scenario: &Scenario) -> Result<RunOutput, SheafError> {
    execute_with_tol(scenario, DEFAULT_RANK_TOL)
}

/// As [`execute`], with `rank_tol` for the cohomology dimension counts.
pub fn execute_with_tol(scenario: &Scenario, rank_tol: f64) -> Result<RunOutput, SheafError> {
    let started = Instant::now();
    let sheaf = &scenario.sheaf;
    let cfg = scenario.flow();
    let x0 = sheaf.cochain0(scenario.x0_or_zero())?;
    let tol = rank_tol;
    let h0 = h0_with_tol(sheaf, tol)?;

    let mut flow = None;
    let mut csv = None;
    let mut final_sheaf = None;
    let result = match scenario.experiment() {
        Experiment::Cohomology { subcomplex } => {
            let l = sheaf_laplacian(sheaf).into_matrix();
            let spec = spectrum_summary(&l, tol)?;
            let rank = rank_of_delta(sheaf, tol);
            let mut out = json!({
                "h0_dim": h0.dim(),
                "coboundary_rank": rank,
                "hodge_check": h0.dim() + rank == sheaf.total_vertex_dim(),
                "laplacian_spectrum": spec,
                "laplacian": l.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            });
            if let Some(sub) = subcomplex {
                let a = subcomplex_of(sheaf, sub)
                    .map_err(|e| SheafError::InvalidConfig(e.to_string()))?;
                let local = local_sections_with_tol(sheaf, &a, tol)?;
                let rel = relative_h0_with_tol(sheaf, &a, tol)?;
                out["subcomplex"] = json!({
                    "vertices": a.vertices(),
                    "edges": a.edges(),
                    "local_sections_dim": local.dim(),
                    "relative_h0_dim": rel.dim(),
                    "relative_embedding_residual": rel.embedding_residual(sheaf),
                });
            }
            out
        }
        Experiment::Diffuse {} => {
            let t = diffuse(sheaf, &x0, cfg)?;
            let proj = diffusion_limit(sheaf, &x0)?;
            let out = json!({
                "limit": vec_json(&t.limit),
                "projected_limit": vec_json(proj.values()),
                "limit_vs_projection_inf": (&t.limit - proj.values()).amax(),
            });
            flow = Some(FlowSummary::of(&t));
            csv = Some(trajectory_csv(&t));
            out
        }
        Experiment::Stubborn { stubborn } => {
            let t = stubborn_diffuse(sheaf, stubborn, &x0, cfg)?;
            let ext = stubborn_limit(sheaf, stubborn, &x0)?;
            let out = json!({
                "limit": vec_json(&t.limit),
                "harmonic_extension": vec_json(ext.values()),
                "limit_vs_extension_inf": (&t.limit - ext.values()).amax(),
            });
            flow = Some(FlowSummary::of(&t));
            csv = Some(trajectory_csv(&t));
            out
        }
        Experiment::Reluctant { gamma } => {
            let t = reluctant_diffuse(sheaf, gamma, &x0, cfg)?;
            let closed = reluctant_limit(sheaf, gamma, &x0)?;
            let out = json!({
                "limit": vec_json(&t.limit),
                "closed_form_limit": vec_json(closed.values()),
                "limit_vs_closed_form_inf": (&t.limit - closed.values()).amax(),
            });
            flow = Some(FlowSummary::of(&t));
            csv = Some(trajectory_csv(&t));
            out
        }
        Experiment::Control { inputs, observed } => {
            let mut out = json!({});
            if let Some(u) = inputs {
                out["stabilizable"] =
                    serde_json::to_value(stabilizable(sheaf, u)?).expect("plain data");
            }
            if let Some(y) = observed {
                out["detectable"] =
                    serde_json::to_value(detectable(sheaf, y)?).expect("plain data");
            }
            out
        }
        Experiment::Learn { beta } => {
            let t = expression_diffuse(sheaf, &x0, *beta, cfg)?;
            let closed = expression_limit(sheaf, &x0)?;
            let out = json!({
                "final_sheaf": sheaf_blocks_json(&t.final_sheaf),
                "closed_form_sheaf": sheaf_blocks_json(&closed),
                "final_vs_closed_form_frob2": sheaf_distance(&t.final_sheaf, &closed)?,
                "distance_from_initial_frob2": sheaf_distance(sheaf, &t.final_sheaf)?,
                "final_disagreement_norm": t.final_sheaf.coboundary().apply_raw(x0.values()).norm(),
            });
            flow = Some(FlowSummary::of_sheaf(&t));
            csv = Some(sheaf_trajectory_csv(&t));
            final_sheaf = Some(t.final_sheaf);
            out
        }
        Experiment::Joint { beta, lyapunov } => {
            let alpha = cfg.alpha;
            let cert = nontrivial_limit_certificate(sheaf, &x0, alpha, *beta)?;
            let t = joint_diffuse(sheaf, &x0, *beta, cfg)?;
            let x_inf = sheaf.cochain0(t.final_x.clone())?;
            let m0 = monitors(sheaf, &x0, alpha, *beta)?;
            let m1 = monitors(&t.final_sheaf, &x_inf, alpha, *beta)?;
            let drift = m0
                .diag_m
                .iter()
                .zip(&m1.diag_m)
                .map(|(a, b)| (&a.block - &b.block).amax())
                .fold(0.0, f64::max);
            let mut out = json!({
                "certificate": cert,
                "limit_x": vec_json(&t.final_x),
                "limit_x_norm": t.final_x.norm(),
                "limit_disagreement_norm": m1.norm2_dx.sqrt(),
                "final_sheaf": sheaf_blocks_json(&t.final_sheaf),
                "diag_m_drift_inf": drift,
                "initial_monitors": m0,
                "final_monitors": m1,
            });
            if *lyapunov && t.converged {
                let probe = lyapunov_probe(
                    &t.final_sheaf,
                    &x_inf,
                    alpha,
                    *beta,
                    1e-3,
                    20,
                    100.0,
                    scenario.seed(),
                )?;
                out["lyapunov"] = serde_json::to_value(&probe).expect("plain data");
            }
            flow = Some(FlowSummary::of_sheaf(&t));
            csv = Some(sheaf_trajectory_csv(&t));
            final_sheaf = Some(t.final_sheaf);
            out
        }
        Experiment::Bc { thresholds, probe } => {
            let pot = EdgePotential::bounded_confidence(thresholds.clone());
            let t = nl_diffuse(sheaf, &pot, &x0, cfg)?;
            let x_inf = sheaf.cochain0(t.limit.clone())?;
            let gx = effective_subgraph(sheaf, thresholds, &x_inf)?;
            let eq = bc_equilibrium_check(sheaf, thresholds, &x_inf)?;
            let mut out = json!({
                "limit": vec_json(&t.limit),
                "effective_subgraph": gx,
                "equilibrium": eq,
            });
            if let Some(p) = probe {
                let report = bc_local_stability_probe(
                    sheaf,
                    thresholds,
                    &x_inf,
                    p.epsilon,
                    p.trials,
                    scenario.seed(),
                    cfg,
                );
                out["probe"] = match report {
                    Ok(r) => serde_json::to_value(r).expect("plain data"),
                    Err(e) => json!({ "error": e.to_string() }),
                };
            }
            flow = Some(FlowSummary::of(&t));
            csv = Some(trajectory_csv(&t));
            out
        }
        Experiment::Signed {
            negative_edges,
            simulate,
        } => {
            let l = signed_laplacian(sheaf, negative_edges)?;
            let mut out = json!({
                "spectrum": l.spectrum,
                "not_psd": l.spectrum.not_psd(),
                "indefinite": l.spectrum.indefinite(),
            });
            out["cutset"] = match cutset_indefiniteness(sheaf, negative_edges) {
                Ok(r) => json!({
                    "component": r.component,
                    "witness": r.witness.as_ref().map(vec_json),
                    "quadratic_form": r.quadratic_form,
                    "agrees_with_spectrum": r.agrees_with_spectrum,
                }),
                Err(SheafError::NotACutset) => json!({ "applicable": false }),
                Err(e) => return Err(e),
            };
            if *simulate {
                let pot = EdgePotential::signed(sheaf.graph().n_edges(), negative_edges)?;
                let t = nl_diffuse(sheaf, &pot, &x0, cfg)?;
                out["final_state"] = vec_json(&t.limit);
                flow = Some(FlowSummary::of(&t));
                csv = Some(trajectory_csv(&t));
            }
            out
        }
    };

    let summary = RunSummary {
        schema: crate::scenario::SCHEMA_VERSION,
        experiment: scenario.experiment().clone(),
        seed: scenario.seed(),
        dims: Dims {
            vertices: sheaf.graph().n_vertices(),
            edges: sheaf.graph().n_edges(),
            total_vertex_dim: sheaf.total_vertex_dim(),
            total_edge_dim: sheaf.total_edge_dim(),
        },
        h0_dim: h0.dim(),
        rank_tol: tol,
        flow,
        result,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        summary,
        csv,
        final_sheaf,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), ScenarioError> {
    fs::write(path, contents).map_err(|e| ScenarioError::io(path, e))
}

/// Executes and writes the artifacts into `out_dir` (created if missing).
pub fn run(scenario: &Scenario, out_dir: &Path) -> Result<RunSummary, ScenarioError> {
    write_outputs(execute(scenario)?, out_dir)
}

pub fn write_outputs(out: RunOutput, out_dir: &Path) -> Result<RunSummary, ScenarioError> {
    fs::create_dir_all(out_dir).map_err(|e| ScenarioError::io(out_dir, e))?;
    if let Some(csv) = &out.csv {
        write(&out_dir.join("trajectory.csv"), csv)?;
    }
    if let Some(s) = &out.final_sheaf {
        write(
            &out_dir.join("sheaf_final.json"),
            &crate::scenario::sheaf_to_json(s),
        )?;
    }
    let text = serde_json::to_string_pretty(&out.summary).expect("plain data");
    write(&out_dir.join("summary.json"), &text)?;
    Ok(out.summary)
}
