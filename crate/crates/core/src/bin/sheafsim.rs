use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use sheaf_dynamics::run::{execute_with_tol, write_outputs, RunSummary};
use sheaf_dynamics::scenario::{
    parse_scenario_file, subcomplex_of, Scenario, ScenarioError, SubcomplexSpec,
};
use sheaf_dynamics::spectral::{self, DEFAULT_RANK_TOL};
use sheaf_dynamics::SheafError;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NON_CONVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "sheafsim",
    version,
    about = "Sheaf diffusion and opinion-dynamics experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate scenario files without running them.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run a scenario (or a directory of them with --batch).
    Run(RunArgs),
    /// Print cohomology of a scenario's sheaf as JSON.
    Cohomology {
        file: PathBuf,
        /// Relative rank tolerance.
        #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
        tol: f64,
        /// Comma-separated vertex set; adds local and relative H^0 of its induced subcomplex.
        #[arg(long, value_delimiter = ',')]
        subcomplex: Option<Vec<usize>>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(required_unless_present = "batch", conflicts_with = "batch")]
    file: Option<PathBuf>,
    /// Run every *.json in this directory in parallel; outputs go to <out>/<file stem>/.
    #[arg(long)]
    batch: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the convergence tolerance on ||dx/dt||_inf.
    #[arg(long)]
    tol: Option<f64>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

fn exit_code_for(err: &ScenarioError) -> u8 {
    match err {
        e if e.is_validation() => EXIT_VALIDATION,
        ScenarioError::Numerical(SheafError::NonConvergence { .. }) => EXIT_NON_CONVERGENCE,
        _ => 1,
    }
}

fn load(path: &Path, args: &RunArgs) -> Result<Scenario, ScenarioError> {
    let mut s = parse_scenario_file(path)?;
    if let Some(tol) = args.tol {
        s.file.integrator.convergence_tol = Some(tol);
        s.file
            .integrator
            .validate()
            .map_err(|e| ScenarioError::Validation {
                path: "--tol".into(),
                message: e.to_string(),
            })?;
    }
    if let Some(seed) = args.seed {
        s.file.seed = seed;
    }
    Ok(s)
}

fn run_one(path: &Path, out: &Path, args: &RunArgs) -> Result<RunSummary, ScenarioError> {
    let scenario = load(path, args)?;
    let output = execute_with_tol(&scenario, DEFAULT_RANK_TOL)?;
    write_outputs(output, out)
}

fn report(path: &Path, out: &Path, result: &Result<RunSummary, ScenarioError>, quiet: bool) -> u8 {
    match result {
        Ok(summary) => {
            let settled = summary.converged().unwrap_or(true);
            if !quiet {
                let flow = summary.flow.as_ref().map_or(String::new(), |f| {
                    format!(
                        " ({} steps, t = {:.4}, residual {:.3e}{})",
                        f.steps,
                        f.t_final,
                        f.residual,
                        if f.diverged { ", diverged" } else { "" }
                    )
                });
                println!(
                    "{}: {} -> {}{}{}",
                    path.display(),
                    summary.experiment.kind(),
                    out.display(),
                    flow,
                    if settled { "" } else { " NOT CONVERGED" }
                );
            }
            if settled {
                0
            } else {
                EXIT_NON_CONVERGENCE
            }
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            exit_code_for(e)
        }
    }
}

fn run(args: &RunArgs) -> u8 {
    if let Some(dir) = &args.batch {
        let mut files: Vec<PathBuf> = match std::fs::read_dir(dir) {
            Ok(entries) => entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect(),
            Err(e) => {
                eprintln!("{}: {e}", dir.display());
                return 1;
            }
        };
        files.sort();
        let codes: Vec<u8> = files
            .par_iter()
            .map(|f| {
                let stem = f.file_stem().unwrap_or_default();
                let out = args.out.join(stem);
                report(f, &out, &run_one(f, &out, args), args.quiet)
            })
            .collect();
        return codes.into_iter().max().unwrap_or(0);
    }
    let file = args.file.as_ref().expect("clap enforces file or --batch");
    report(file, &args.out, &run_one(file, &args.out, args), args.quiet)
}

fn cohomology(file: &Path, tol: f64, vertices: Option<Vec<usize>>) -> Result<(), ScenarioError> {
    let s = parse_scenario_file(file)?;
    let sheaf = &s.sheaf;
    let h0 = spectral::h0_with_tol(sheaf, tol)?;
    let l = spectral::sheaf_laplacian(sheaf).into_matrix();
    let rank = spectral::numerical_rank(&sheaf.coboundary().to_dense(), tol);
    let mut out = serde_json::json!({
        "h0_dim": h0.dim(),
        "coboundary_rank": rank,
        "total_vertex_dim": sheaf.total_vertex_dim(),
        "spectrum": spectral::spectrum_summary(&l, tol)?,
        "rank_tol": tol,
    });
    if let Some(vertices) = vertices {
        let a = subcomplex_of(
            sheaf,
            &SubcomplexSpec {
                vertices,
                edges: None,
            },
        )?;
        out["local_sections_dim"] = spectral::local_sections_with_tol(sheaf, &a, tol)?
            .dim()
            .into();
        out["relative_h0_dim"] = spectral::relative_h0_with_tol(sheaf, &a, tol)?.dim().into();
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("plain data")
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { files, quiet } => files
            .iter()
            .map(|f| match parse_scenario_file(f) {
                Ok(s) => {
                    if !quiet {
                        println!("{}: ok ({})", f.display(), s.experiment().kind());
                    }
                    0
                }
                Err(e) => {
                    eprintln!("{}: {e}", f.display());
                    exit_code_for(&e)
                }
            })
            .max()
            .unwrap_or(0),
        Command::Run(args) => run(&args),
        Command::Cohomology {
            file,
            tol,
            subcomplex,
        } => match cohomology(&file, tol, subcomplex) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("{}: {e}", file.display());
                exit_code_for(&e)
            }
        },
    };
    ExitCode::from(code)
}
