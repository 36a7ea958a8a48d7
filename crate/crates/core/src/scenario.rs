//! Scenario files (JSON, `"schema": 1`): a sheaf, initial opinions, one
//! experiment and its integrator settings.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "sheaf": {
//!     "vertex_dims": [1, 1],
//!     "edges": [
//!       { "u": 0, "v": 1, "dim": 1,
//!         "maps": { "u": { "shape": [1, 1], "data": [1] },
//!                   "v": { "shape": [1, 1], "data": [1] } } }
//!     ]
//!   },
//!   "x0": [-4, 1],
//!   "experiment": { "kind": "diffuse" },
//!   "integrator": { "alpha": 1.0, "record_every": 10 },
//!   "seed": 0
//! }
//! ```
//!
//! Blocks are row-major. `opinion_dims`, `discourse_dim` and `expressions`
//! are accepted as aliases for `vertex_dims`, `dim` and `maps`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::SheafError;
use crate::flow::FlowConfig;
use crate::graph::{Graph, Subcomplex};
use crate::sheaf::Sheaf;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid scenario at {path}: {message}")]
    Validation { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerical(#[from] SheafError),
}

impl ScenarioError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    fn validation(path: impl Into<String>, message: impl ToString) -> Self {
        Self::Validation {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Syntax { .. } | Self::Schema { .. } | Self::Validation { .. }
        )
    }
}

/// Dense block, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl BlockSpec {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            shape: [m.nrows(), m.ncols()],
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn to_matrix(&self, path: &str) -> Result<DMatrix<f64>, ScenarioError> {
        let [r, c] = self.shape;
        if self.data.len() != r * c {
            return Err(ScenarioError::schema(
                format!("{path}.data"),
                format!(
                    "shape {r}x{c} needs {} entries, found {}",
                    r * c,
                    self.data.len()
                ),
            ));
        }
        Ok(DMatrix::from_row_slice(r, c, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapsSpec {
    pub u: BlockSpec,
    pub v: BlockSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub u: usize,
    pub v: usize,
    #[serde(alias = "discourse_dim")]
    pub dim: usize,
    /// Restriction maps out of `u` and `v` respectively.
    #[serde(alias = "expressions")]
    pub maps: MapsSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SheafSpec {
    #[serde(alias = "opinion_dims")]
    pub vertex_dims: Vec<usize>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
}

impl SheafSpec {
    /// Edges are written with `u < v`, so `maps.u` is the tail map.
    pub fn from_sheaf(sheaf: &Sheaf) -> Self {
        let edges = sheaf
            .graph()
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(u, v))| {
                let [tail, head] = sheaf.edge_maps(e);
                EdgeSpec {
                    u,
                    v,
                    dim: sheaf.edge_dims()[e],
                    maps: MapsSpec {
                        u: BlockSpec::from_matrix(tail),
                        v: BlockSpec::from_matrix(head),
                    },
                }
            })
            .collect();
        Self {
            vertex_dims: sheaf.vertex_dims().to_vec(),
            edges,
        }
    }

    pub fn build(&self) -> Result<Sheaf, ScenarioError> {
        self.build_at("sheaf")
    }

    fn build_at(&self, root: &str) -> Result<Sheaf, ScenarioError> {
        let edge_path = |e: usize| format!("{root}.edges[{e}]");
        let graph = Graph::new(
            self.vertex_dims.len(),
            self.edges.iter().map(|e| (e.u, e.v)),
        )
        .map_err(|err| {
            let path = match &err {
                SheafError::VertexOutOfRange { edge, .. }
                | SheafError::SelfLoop { edge, .. }
                | SheafError::DuplicateEdge { edge, .. } => edge_path(*edge),
                _ => format!("{root}.edges"),
            };
            ScenarioError::validation(path, err)
        })?;
        let mut keyed = BTreeMap::new();
        for (e, spec) in self.edges.iter().enumerate() {
            let base = format!("{}.maps", edge_path(e));
            keyed.insert((spec.u, e), spec.maps.u.to_matrix(&format!("{base}.u"))?);
            keyed.insert((spec.v, e), spec.maps.v.to_matrix(&format!("{base}.v"))?);
        }
        let edims = self.edges.iter().map(|e| e.dim).collect();
        Sheaf::new(graph, self.vertex_dims.clone(), edims, keyed).map_err(|err| {
            let path = match &err {
                SheafError::MissingRestriction { edge, .. } => format!("{}.maps", edge_path(*edge)),
                SheafError::ShapeMismatch { edge, vertex, .. } => {
                    let side = if self.edges[*edge].u == *vertex {
                        "u"
                    } else {
                        "v"
                    };
                    format!("{}.maps.{side}", edge_path(*edge))
                }
                _ => root.to_string(),
            };
            ScenarioError::validation(path, err)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubcomplexSpec {
    pub vertices: Vec<usize>,
    /// Defaults to every edge with both endpoints in `vertices`.
    #[serde(default)]
    pub edges: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcProbeSpec {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_trials() -> usize {
    20
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// `H^0`, spectrum, and optionally local / relative cohomology of a subcomplex.
    Cohomology {
        #[serde(default)]
        subcomplex: Option<SubcomplexSpec>,
    },
    Diffuse {},
    Stubborn {
        stubborn: Vec<usize>,
    },
    Reluctant {
        gamma: Vec<f64>,
    },
    Control {
        #[serde(default)]
        inputs: Option<Vec<usize>>,
        #[serde(default)]
        observed: Option<Vec<usize>>,
    },
    /// Expression flow with `x0` held fixed.
    Learn {
        beta: f64,
    },
    Joint {
        beta: f64,
        #[serde(default)]
        lyapunov: bool,
    },
    Bc {
        thresholds: Vec<f64>,
        #[serde(default)]
        probe: Option<BcProbeSpec>,
    },
    Signed {
        negative_edges: Vec<usize>,
        #[serde(default = "default_true")]
        simulate: bool,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Cohomology { .. } => "cohomology",
            Self::Diffuse {} => "diffuse",
            Self::Stubborn { .. } => "stubborn",
            Self::Reluctant { .. } => "reluctant",
            Self::Control { .. } => "control",
            Self::Learn { .. } => "learn",
            Self::Joint { .. } => "joint",
            Self::Bc { .. } => "bc",
            Self::Signed { .. } => "signed",
        }
    }

    fn needs_x0(&self) -> bool {
        match self {
            Self::Cohomology { .. } | Self::Control { .. } => false,
            Self::Signed { simulate, .. } => *simulate,
            _ => true,
        }
    }
}

/// On-disk form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    pub sheaf: SheafSpec,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub experiment: Experiment,
    #[serde(default)]
    pub integrator: FlowConfig,
    #[serde(default)]
    pub seed: u64,
}

/// A parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub sheaf: Sheaf,
    pub x0: Option<DVector<f64>>,
}

impl Scenario {
    pub fn experiment(&self) -> &Experiment {
        &self.file.experiment
    }

    pub fn flow(&self) -> &FlowConfig {
        &self.file.integrator
    }

    pub fn seed(&self) -> u64 {
        self.file.seed
    }

    /// `x0`, or zeros when the experiment does not use it.
    pub fn x0_or_zero(&self) -> DVector<f64> {
        self.x0
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.sheaf.total_vertex_dim()))
    }
}

fn deserialize<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => ScenarioError::Schema {
                path,
                message: inner.to_string(),
            },
            _ => ScenarioError::Syntax {
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            },
        }
    })
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = deserialize(text)?;
    if file.schema != SCHEMA_VERSION {
        return Err(ScenarioError::schema(
            "schema",
            format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                file.schema
            ),
        ));
    }
    let sheaf = file.sheaf.build()?;
    validate(&file, &sheaf)?;
    let x0 = file.x0.as_ref().map(|x| DVector::from_column_slice(x));
    Ok(Scenario { file, sheaf, x0 })
}

pub fn parse_scenario_file(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    parse_scenario(&text)
}

/// Parses a bare sheaf object (the `sheaf` member of a scenario, or `sheaf_final.json`).
pub fn parse_sheaf_json(text: &str) -> Result<Sheaf, ScenarioError> {
    let spec: SheafSpec = deserialize(text)?;
    spec.build_at("$")
}

pub fn sheaf_to_json(sheaf: &Sheaf) -> String {
    serde_json::to_string_pretty(&SheafSpec::from_sheaf(sheaf)).expect("plain data serializes")
}

fn check_vertices(path: &str, set: &[usize], n: usize) -> Result<(), ScenarioError> {
    match set.iter().position(|&v| v >= n) {
        Some(k) => Err(ScenarioError::validation(
            format!("{path}[{k}]"),
            format!("vertex {} out of range (graph has {n} vertices)", set[k]),
        )),
        None => Ok(()),
    }
}

fn check_edges(path: &str, set: &[usize], m: usize) -> Result<(), ScenarioError> {
    match set.iter().position(|&e| e >= m) {
        Some(k) => Err(ScenarioError::validation(
            format!("{path}[{k}]"),
            format!("edge {} out of range (graph has {m} edges)", set[k]),
        )),
        None => Ok(()),
    }
}

fn check_len(path: &str, found: usize, expected: usize) -> Result<(), ScenarioError> {
    if found != expected {
        return Err(ScenarioError::validation(
            path,
            format!("expected {expected} entries, found {found}"),
        ));
    }
    Ok(())
}

fn check_positive(path: &str, value: f64) -> Result<(), ScenarioError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(ScenarioError::validation(
            path,
            format!("must be > 0, got {value}"),
        ));
    }
    Ok(())
}

fn validate(file: &ScenarioFile, sheaf: &Sheaf) -> Result<(), ScenarioError> {
    let n = sheaf.graph().n_vertices();
    let m = sheaf.graph().n_edges();
    file.integrator
        .validate()
        .map_err(|e| ScenarioError::validation("integrator", e))?;
    match &file.x0 {
        Some(x) => {
            check_len("x0", x.len(), sheaf.total_vertex_dim())?;
            if let Some(k) = x.iter().position(|v| !v.is_finite()) {
                return Err(ScenarioError::validation(format!("x0[{k}]"), "not finite"));
            }
        }
        None if file.experiment.needs_x0() => {
            return Err(ScenarioError::validation(
                "x0",
                format!("required by experiment '{}'", file.experiment.kind()),
            ))
        }
        None => {}
    }
    match &file.experiment {
        Experiment::Cohomology { subcomplex } => {
            if let Some(sub) = subcomplex {
                check_vertices("experiment.subcomplex.vertices", &sub.vertices, n)?;
                if let Some(edges) = &sub.edges {
                    check_edges("experiment.subcomplex.edges", edges, m)?;
                }
                subcomplex_of(sheaf, sub)?;
            }
        }
        Experiment::Diffuse {} => {}
        Experiment::Stubborn { stubborn } => check_vertices("experiment.stubborn", stubborn, n)?,
        Experiment::Reluctant { gamma } => {
            check_len("experiment.gamma", gamma.len(), n)?;
            if let Some(k) = gamma.iter().position(|g| !(g.is_finite() && *g >= 0.0)) {
                return Err(ScenarioError::validation(
                    format!("experiment.gamma[{k}]"),
                    format!("must be finite and >= 0, got {}", gamma[k]),
                ));
            }
        }
        Experiment::Control { inputs, observed } => {
            if inputs.is_none() && observed.is_none() {
                return Err(ScenarioError::validation(
                    "experiment",
                    "control needs 'inputs' and/or 'observed'",
                ));
            }
            if let Some(u) = inputs {
                check_vertices("experiment.inputs", u, n)?;
            }
            if let Some(y) = observed {
                check_vertices("experiment.observed", y, n)?;
            }
        }
        Experiment::Learn { beta } => check_positive("experiment.beta", *beta)?,
        Experiment::Joint { beta, .. } => {
            check_positive("experiment.beta", *beta)?;
            if file.integrator.integrator == Some(crate::flow::Integrator::ExactEigen) {
                return Err(ScenarioError::validation(
                    "integrator.integrator",
                    "joint flow needs rk4 or euler",
                ));
            }
        }
        Experiment::Bc { thresholds, probe } => {
            check_len("experiment.thresholds", thresholds.len(), m)?;
            for (k, &d) in thresholds.iter().enumerate() {
                check_positive(&format!("experiment.thresholds[{k}]"), d)?;
            }
            if let Some(p) = probe {
                check_positive("experiment.probe.epsilon", p.epsilon)?;
            }
        }
        Experiment::Signed { negative_edges, .. } => {
            check_edges("experiment.negative_edges", negative_edges, m)?
        }
    }
    Ok(())
}

pub fn subcomplex_of(sheaf: &Sheaf, sub: &SubcomplexSpec) -> Result<Subcomplex, ScenarioError> {
    let result = match &sub.edges {
        Some(edges) => Subcomplex::new(sheaf.graph(), &sub.vertices, edges),
        None => Subcomplex::induced(sheaf.graph(), &sub.vertices),
    };
    result.map_err(|e| ScenarioError::validation("experiment.subcomplex", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sheaf::tests::worked_example;

    const EDGE: &str = r#"{
        "schema": 1,
        "sheaf": { "vertex_dims": [1, 1], "edges": [
            { "u": 0, "v": 1, "dim": 1, "maps": {
                "u": { "shape": [1, 1], "data": [1] },
                "v": { "shape": [1, 1], "data": [1] } } } ] },
        "x0": [-4, 1],
        "experiment": { "kind": "diffuse" }
    }"#;

    #[test]
    fn parses_minimal_edge() {
        let s = parse_scenario(EDGE).unwrap();
        assert_eq!(
            s.sheaf.edge_block_row(0),
            DMatrix::from_row_slice(1, 2, &[-1.0, 1.0])
        );
        assert_eq!(s.flow(), &FlowConfig::default());
        assert_eq!(s.experiment().kind(), "diffuse");
    }

    #[test]
    fn aliases_are_accepted() {
        let text = EDGE
            .replace("vertex_dims", "opinion_dims")
            .replace("\"dim\"", "\"discourse_dim\"")
            .replace("\"maps\"", "\"expressions\"");
        assert!(parse_scenario(&text).is_ok());
    }

    #[test]
    fn single_vertex_without_edges() {
        let text = r#"{"schema":1,"sheaf":{"vertex_dims":[2],"edges":[]},"experiment":{"kind":"cohomology"}}"#;
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.sheaf.total_vertex_dim(), 2);
    }

    #[test]
    fn wrong_block_length_names_the_path() {
        let text = EDGE.replacen("\"data\": [1] }", "\"data\": [1, 2] }", 1);
        match parse_scenario(&text).unwrap_err() {
            ScenarioError::Schema { path, .. } => assert_eq!(path, "sheaf.edges[0].maps.u.data"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_categories() {
        assert!(matches!(
            parse_scenario("{ nope"),
            Err(ScenarioError::Syntax { .. })
        ));
        let unknown = EDGE.replace("\"diffuse\"", "\"teleport\"");
        match parse_scenario(&unknown).unwrap_err() {
            ScenarioError::Schema { path, .. } => assert_eq!(path, "experiment.kind"),
            other => panic!("{other:?}"),
        }
        let short = EDGE.replace("[-4, 1]", "[1]");
        match parse_scenario(&short).unwrap_err() {
            ScenarioError::Validation { path, .. } => assert_eq!(path, "x0"),
            other => panic!("{other:?}"),
        }
        let bad_shape = EDGE.replacen(
            "\"shape\": [1, 1], \"data\": [1] }",
            "\"shape\": [1, 2], \"data\": [1, 1] }",
            1,
        );
        match parse_scenario(&bad_shape).unwrap_err() {
            ScenarioError::Validation { path, .. } => assert_eq!(path, "sheaf.edges[0].maps.u"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sheaf_json_round_trip_is_exact() {
        let s = worked_example();
        let back = parse_sheaf_json(&sheaf_to_json(&s)).unwrap();
        assert_eq!(back, s);
        let odd = s
            .with_maps(
                s.all_edge_maps()
                    .iter()
                    .map(|[a, b]| [a / 3.0, b * std::f64::consts::PI])
                    .collect(),
            )
            .unwrap();
        assert_eq!(parse_sheaf_json(&sheaf_to_json(&odd)).unwrap(), odd);
    }
}
