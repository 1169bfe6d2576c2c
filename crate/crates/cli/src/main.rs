use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use trimap::mesh::CellGeometry;
use trimap::solver::SolverKind;
use trimap::study::{rows_to_csv, run_convergence_study, run_stats_report, stats_to_csv, Problem, StudySpec};
use trimap::transform::{scale_m, transform_matrix};
use trimap::{Error, Family};

/// Convergence studies and transformation matrices for triangular elements.
#[derive(Debug, Parser)]
#[command(name = "trimap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve on a refinement ladder and report L² errors and observed rates.
    Study {
        #[arg(long, value_parser = parse_problem)]
        problem: Problem,
        /// lagrange:K, hermite, morley, argyris or bell
        #[arg(long, value_parser = parse_family)]
        element: Family,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
        levels: Vec<usize>,
        #[arg(long, default_value_t = 0.2)]
        perturb: f64,
        /// Keep unscaled derivative DoFs.
        #[arg(long)]
        no_scaling: bool,
        #[arg(long, value_parser = parse_solver, default_value = "lu")]
        solver: SolverKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// DoF count, nonzeros per row and condition estimate on an N × N mesh.
    Stats {
        #[arg(long, value_parser = parse_problem)]
        problem: Problem,
        /// One or more elements, comma separated.
        #[arg(long, value_parser = parse_family, value_delimiter = ',', required = true)]
        element: Vec<Family>,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long)]
        no_scaling: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the transformation matrix of one cell as CSV.
    DumpM {
        #[arg(long, value_parser = parse_family)]
        element: Family,
        /// Vertex coordinates x0,y0,x1,y1,x2,y2 (counter-clockwise).
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        cell: Vec<f64>,
        /// Apply the derivative-DoF scaling, with every vertex size set to the cell diameter.
        #[arg(long)]
        scaled: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_problem(s: &str) -> Result<Problem, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_solver(s: &str) -> Result<SolverKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn emit(text: &str, out: Option<&PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Study {
            problem,
            element,
            levels,
            perturb,
            no_scaling,
            solver,
            out,
        } => {
            let spec = StudySpec {
                problem,
                family: element,
                levels,
                perturb,
                scaled: !no_scaling,
                solver,
                out: out.clone(),
            };
            let rows = run_convergence_study(&spec)?;
            if out.is_none() {
                print!("{}", rows_to_csv(&rows));
            }
            Ok(())
        }
        Command::Stats {
            problem,
            element,
            n,
            no_scaling,
            out,
        } => {
            let rows = run_stats_report(problem, &element, n, !no_scaling)?;
            emit(&stats_to_csv(&rows), out.as_ref())
        }
        Command::DumpM {
            element,
            cell,
            scaled,
            out,
        } => {
            if cell.len() != 6 {
                return Err(anyhow!("--cell takes six coordinates, got {}", cell.len()));
            }
            let v = [[cell[0], cell[1]], [cell[2], cell[3]], [cell[4], cell[5]]];
            let probe = CellGeometry::from_vertices(v, [1.0; 3])?;
            let geom = CellGeometry::from_vertices(v, [probe.diameter; 3])?;
            if probe.jacobian_inv.determinant() < 0.0 {
                return Err(anyhow!("cell vertices must be counter-clockwise"));
            }
            let m = transform_matrix(element, &geom);
            let m = if scaled { scale_m(&m, &geom) } else { m };
            emit(&m.to_csv(), out.as_ref())
        }
    }
}

/// Solver failures exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Singular | Error::NotConverged { .. } | Error::Factorization(_) | Error::TooLarge(..)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
