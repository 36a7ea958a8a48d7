//! End-to-end tests of the `sheafsim` binary.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sheaf_dynamics::scenario::{parse_scenario_file, parse_sheaf_json, sheaf_to_json};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sheafsim"))
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(name)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn run_into(scenario: &Path, out: &Path) -> Output {
    bin()
        .arg("run")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const EDGE_SHEAF: &str = r#"{"vertex_dims": [1, 1], "edges": [{"u": 0, "v": 1, "dim": 1,
    "maps": {"u": {"shape": [1, 1], "data": [1]}, "v": {"shape": [1, 1], "data": [1]}}}]}"#;

#[test]
fn validate_accepts_shipped_examples() {
    let files: Vec<PathBuf> = fs::read_dir(example(""))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    assert!(files.len() >= 6);
    let out = bin().arg("validate").args(&files).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validation_errors_exit_2_with_a_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_scenario(
        dir.path(),
        "bad.json",
        r#"{"schema": 1, "sheaf": {"vertex_dims": [1, 1], "edges": [{"u": 0, "v": 1, "dim": 1,
            "maps": {"u": {"shape": [1, 1], "data": [1, 2]}, "v": {"shape": [1, 1], "data": [1]}}}]},
            "experiment": {"kind": "diffuse"}}"#,
    );
    let out = bin().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sheaf.edges[0].maps.u"));

    let syntax = write_scenario(dir.path(), "syntax.json", "{\"schema\": 1,");
    assert_eq!(
        code(&bin().arg("validate").arg(&syntax).output().unwrap()),
        2
    );

    let loops = write_scenario(
        dir.path(),
        "loop.json",
        r#"{"schema": 1, "sheaf": {"vertex_dims": [1], "edges": [{"u": 0, "v": 0, "dim": 1,
            "maps": {"u": {"shape": [1, 1], "data": [1]}, "v": {"shape": [1, 1], "data": [1]}}}]},
            "experiment": {"kind": "diffuse"}}"#,
    );
    let out = run_into(&loops, &dir.path().join("o"));
    assert_eq!(code(&out), 2);

    let neg_tol = bin()
        .args(["run", "--tol", "-1", "--out"])
        .arg(dir.path().join("o"))
        .arg(example("stubborn_path.json"))
        .output()
        .unwrap();
    assert_eq!(code(&neg_tol), 2);

    let missing = bin()
        .arg("validate")
        .arg(dir.path().join("nope.json"))
        .output()
        .unwrap();
    assert_eq!(code(&missing), 1);
}

#[test]
fn non_convergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(
        dir.path(),
        "short.json",
        &format!(
            r#"{{"schema": 1, "sheaf": {EDGE_SHEAF}, "x0": [-4, 1],
                "experiment": {{"kind": "diffuse"}}, "integrator": {{"t_max": 0.01}}}}"#
        ),
    );
    let out = run_into(&s, &dir.path().join("o"));
    assert_eq!(code(&out), 3);
    let sum = summary(&dir.path().join("o"));
    assert_eq!(sum["flow"]["converged"], false);
}

#[test]
fn diffuse_edge_reaches_mean() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(
        dir.path(),
        "edge.json",
        &format!(
            r#"{{"schema": 1, "sheaf": {EDGE_SHEAF}, "x0": [-4, 1],
                "experiment": {{"kind": "diffuse"}}, "integrator": {{"integrator": "rk4", "record_every": 7}}}}"#
        ),
    );
    let o = dir.path().join("o");
    assert_eq!(code(&run_into(&s, &o)), 0);
    let sum = summary(&o);
    let steps = sum["flow"]["steps"].as_u64().unwrap() as usize;

    let mut reader = csv::Reader::from_path(o.join("trajectory.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..3], ["t", "x0", "x1"]);
    let rows: Vec<Vec<f64>> = reader
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    // step 0 and every 7th step after it
    assert_eq!(rows.len(), steps / 7 + 1);
    assert_eq!(rows[0][..3], [0.0, -4.0, 1.0]);
    for w in rows.windows(2) {
        assert!(w[1][0] > w[0][0]);
    }
    let limit: Vec<f64> = serde_json::from_value(sum["result"]["limit"].clone()).unwrap();
    assert!(limit.iter().all(|v| (v + 1.5).abs() < 1e-6), "{limit:?}");
}

#[test]
fn learning_to_lie_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    assert_eq!(code(&run_into(&example("learning_to_lie.json"), &o)), 0);

    let text = fs::read_to_string(o.join("sheaf_final.json")).unwrap();
    let sheaf = parse_sheaf_json(&text).unwrap();
    let [fu, fv] = sheaf.edge_maps(0);
    assert!((fu[(0, 0)] + 3.0 / 17.0).abs() < 1e-6);
    assert!((fv[(0, 0)] - 12.0 / 17.0).abs() < 1e-6);
    // the written file is a fixed point of parse and print
    let again = parse_sheaf_json(&sheaf_to_json(&sheaf)).unwrap();
    assert_eq!(again.all_edge_maps(), sheaf.all_edge_maps());

    let sum = summary(&o);
    let steps = sum["flow"]["steps"].as_u64().unwrap() as usize;
    let rows = csv::Reader::from_path(o.join("trajectory.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(rows, steps + 1);
    assert_eq!(sum["flow"]["monitors"]["Psi"]["first"], 12.5);
}

fn without_wall_time(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_time_s");
    v
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["joint_liar.json", "bounded_confidence.json"] {
        let (a, b) = (
            dir.path().join(format!("a_{name}")),
            dir.path().join(format!("b_{name}")),
        );
        assert_eq!(code(&run_into(&example(name), &a)), 0);
        assert_eq!(code(&run_into(&example(name), &b)), 0);
        assert_eq!(
            without_wall_time(summary(&a)),
            without_wall_time(summary(&b)),
            "{name}"
        );
        assert_eq!(
            fs::read(a.join("trajectory.csv")).unwrap(),
            fs::read(b.join("trajectory.csv")).unwrap()
        );
    }
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    let out = bin()
        .args(["run", "--quiet", "--seed", "99", "--out"])
        .arg(&o)
        .arg(example("joint_liar.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(summary(&o)["seed"], 99);
}

#[test]
fn batch_writes_one_directory_per_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--quiet", "--batch"])
        .arg(example(""))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for stem in [
        "paper_example",
        "learning_to_lie",
        "joint_liar",
        "stubborn_path",
        "bounded_confidence",
        "signed_path",
    ] {
        assert!(
            dir.path().join(stem).join("summary.json").exists(),
            "{stem}"
        );
    }
    let signed = summary(&dir.path().join("signed_path"));
    assert_eq!(signed["flow"]["diverged"], true);
}

#[test]
fn cohomology_matches_exact_rank() {
    let path = example("paper_example.json");
    let out = bin().arg("cohomology").arg(&path).output().unwrap();
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let sheaf = parse_scenario_file(&path).unwrap().sheaf;
    let rank = common::exact_rank(&sheaf.coboundary().to_dense());
    assert_eq!(v["coboundary_rank"], rank);
    assert_eq!(v["h0_dim"], sheaf.total_vertex_dim() - rank);

    let out = bin()
        .arg("cohomology")
        .arg(&path)
        .args(["--subcomplex", "0,3"])
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["relative_h0_dim"].as_u64().unwrap() <= v["h0_dim"].as_u64().unwrap());
    assert!(v["local_sections_dim"].as_u64().unwrap() >= v["h0_dim"].as_u64().unwrap());
}
