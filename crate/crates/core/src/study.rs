//! Convergence studies and sparsity/conditioning reports on perturbed
//! meshes of the unit square, with manufactured solutions.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use log::{info, warn};
use nalgebra::DVector;

use crate::assembly::{assemble_load, assemble_operator, build_dof_map, matrix_stats, FormKind, FormSpec, WeakClamp};
use crate::error::{Error, Result};
use crate::mesh::build_unit_square_mesh;
use crate::refelem::Family;
use crate::solver::{l2_error, solve, SolveReport, SolverKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    /// `-Δu = f` with `u = sin(πx) sin(πy)`.
    Poisson,
    /// `Δ²u = f` with `u = x²(1-x)² y²(1-y)²`, clamped.
    Biharmonic,
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Problem::Poisson => "poisson",
            Problem::Biharmonic => "biharmonic",
        })
    }
}

impl FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(Problem::Poisson),
            "biharmonic" => Ok(Problem::Biharmonic),
            other => Err(Error::InvalidStudy(format!("unknown problem {other:?}"))),
        }
    }
}

impl Problem {
    pub fn exact(self, x: [f64; 2]) -> f64 {
        match self {
            Problem::Poisson => (PI * x[0]).sin() * (PI * x[1]).sin(),
            Problem::Biharmonic => bump(x[0]) * bump(x[1]),
        }
    }

    pub fn source(self, x: [f64; 2]) -> f64 {
        match self {
            Problem::Poisson => 2.0 * PI * PI * self.exact(x),
            Problem::Biharmonic => biharmonic_source(x),
        }
    }
}

fn bump(t: f64) -> f64 {
    (t * (1.0 - t)).powi(2)
}

/// `Δ²[p(x) p(y)]` for `p(t) = t²(1-t)²`: `p'''' = 24`, `p'' = 2 - 12t + 12t²`.
fn biharmonic_source(x: [f64; 2]) -> f64 {
    let d2 = |t: f64| 2.0 - 12.0 * t + 12.0 * t * t;
    24.0 * bump(x[1]) + 24.0 * bump(x[0]) + 2.0 * d2(x[0]) * d2(x[1])
}

/// Poisson ratio used by the plate discretizations in studies; at 1/2 the
/// cell form is `|∇²u|²`-coercive on every cell.
pub const STUDY_POISSON_RATIO: f64 = 0.5;

/// The discretization used for `problem` with `family`. Clamped conditions
/// for the plate forms use `γ_u = 10 k⁴` and `γ_n = 10 k²`, `k` the
/// embedded degree, in line with the Poisson penalty `10 k²`.
pub fn study_form(problem: Problem, family: Family, scaled: bool) -> Result<FormSpec> {
    family.validate()?;
    let k = family.embedded_degree() as f64;
    let incompatible = || Error::IncompatibleForm {
        element: family.to_string(),
        form: problem.to_string(),
    };
    let form = match (problem, family) {
        (Problem::Poisson, Family::Morley) => return Err(incompatible()),
        (Problem::Poisson, _) => FormSpec::poisson(family),
        (Problem::Biharmonic, Family::Morley | Family::Argyris | Family::Bell) => {
            FormSpec::plate(family, STUDY_POISSON_RATIO).with_clamp(WeakClamp {
                value_penalty: 10.0 * k.powi(4),
                slope_penalty: 10.0 * k * k,
            })
        }
        (Problem::Biharmonic, Family::Lagrange(d)) if d >= 2 => {
            let ip = FormSpec::plate_ip(family);
            let FormKind::PlateIp { alpha } = ip.kind else {
                unreachable!()
            };
            // The boundary slope penalty matches the interior jump penalty.
            ip.with_clamp(WeakClamp {
                value_penalty: 10.0 * k.powi(4),
                slope_penalty: alpha,
            })
        }
        (Problem::Biharmonic, _) => return Err(incompatible()),
    };
    Ok(form.with_scaling(scaled))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub problem: Problem,
    pub family: Family,
    pub levels: Vec<usize>,
    pub perturb: f64,
    pub scaled: bool,
    pub solver: SolverKind,
    pub out: Option<PathBuf>,
}

impl StudySpec {
    pub fn new(problem: Problem, family: Family, levels: Vec<usize>) -> Self {
        Self {
            problem,
            family,
            levels,
            perturb: 0.2,
            scaled: true,
            solver: SolverKind::Lu,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = *self
            .levels
            .first()
            .ok_or_else(|| Error::InvalidStudy("no mesh levels".into()))?;
        if first == 0 {
            return Err(Error::InvalidStudy("mesh sizes must be positive".into()));
        }
        for w in self.levels.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidStudy("mesh sizes must be strictly increasing".into()));
            }
        }
        for &n in &self.levels {
            if n % first != 0 || !(n / first).is_power_of_two() {
                return Err(Error::InvalidStudy(format!(
                    "{n} is not a power-of-two refinement of {first}"
                )));
            }
        }
        if !(0.0..0.5).contains(&self.perturb) {
            return Err(Error::InvalidStudy(format!(
                "perturbation {} outside [0, 0.5)",
                self.perturb
            )));
        }
        study_form(self.problem, self.family, self.scaled).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub dofs: usize,
    pub error: f64,
    /// `log₂(e_prev / e)`; absent on the first row.
    pub rate: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub fn rows_to_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("N,dofs,error,rate\n");
    for r in rows {
        let rate = r.rate.map(|x| format!("{x:.4}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{:.6e},{}", r.n, r.dofs, r.error, rate);
    }
    out
}

/// Assembles, solves and measures one mesh of a study.
pub fn solve_level(
    problem: Problem,
    family: Family,
    n: usize,
    perturb: f64,
    scaled: bool,
    solver: SolverKind,
) -> Result<(usize, SolveReport, f64)> {
    let form = study_form(problem, family, scaled)?;
    let mesh = build_unit_square_mesh(n, perturb)?;
    let dofs = build_dof_map(&mesh, family)?;
    let a = assemble_operator(&mesh, &dofs, &form)?;
    let b = assemble_load(&mesh, &dofs, |x| problem.source(x), &form)?;
    let report = match solve(&a, &b, solver) {
        Err(e @ Error::NotConverged { .. }) if solver == SolverKind::Cg => {
            warn!("{e}; falling back to LU");
            solve(&a, &b, SolverKind::Lu)?
        }
        other => other?,
    };
    let error = l2_error(&mesh, &dofs, scaled, &report.solution, |x| problem.exact(x))?;
    Ok((dofs.total_dofs(), report, error))
}

/// Runs the refinement ladder. With an output path, the CSV is written even
/// when a rung fails, holding the rows completed so far.
pub fn run_convergence_study(spec: &StudySpec) -> Result<Vec<ConvergenceRow>> {
    spec.validate()?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(spec.levels.len());
    let mut failure = None;
    for &n in &spec.levels {
        match solve_level(spec.problem, spec.family, n, spec.perturb, spec.scaled, spec.solver) {
            Ok((dofs, report, error)) => {
                let rate = rows.last().map(|p| (p.error / error).log2());
                info!("{} {} N={n}: dofs={dofs} error={error:.3e}", spec.problem, spec.family);
                rows.push(ConvergenceRow {
                    n,
                    dofs,
                    error,
                    rate,
                    iterations: report.iterations,
                    residual: report.residual,
                });
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if let Some(path) = &spec.out {
        std::fs::write(path, rows_to_csv(&rows))?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub family: Family,
    pub dofs: usize,
    pub nnz_per_row: f64,
    pub condition: f64,
}

pub fn stats_to_csv(rows: &[StatsRow]) -> String {
    let mut out = String::from("element,dofs,nnz_per_row,condition\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.4},{:.6e}", r.family, r.dofs, r.nnz_per_row, r.condition);
    }
    out
}

/// Largest mesh the statistics report accepts.
pub const STATS_MAX_N: usize = 16;

/// Sparsity and conditioning of the study operator on an unperturbed `N × N` mesh.
pub fn run_stats_report(problem: Problem, families: &[Family], n: usize, scaled: bool) -> Result<Vec<StatsRow>> {
    if n == 0 || n > STATS_MAX_N {
        return Err(Error::InvalidStudy(format!(
            "stats mesh size must be in 1..={STATS_MAX_N}"
        )));
    }
    let mesh = build_unit_square_mesh(n, 0.0)?;
    families
        .iter()
        .map(|&family| {
            let form = study_form(problem, family, scaled)?;
            let dofs = build_dof_map(&mesh, family)?;
            let a = assemble_operator(&mesh, &dofs, &form)?;
            let s = matrix_stats(&a)?;
            Ok(StatsRow {
                family,
                dofs: s.total_dofs,
                nnz_per_row: s.nnz_per_row,
                condition: s.condition_estimate,
            })
        })
        .collect()
}

/// DoF vector helper for callers that want the discrete solution itself.
pub fn solve_study_system(
    problem: Problem,
    family: Family,
    n: usize,
    perturb: f64,
    scaled: bool,
) -> Result<DVector<f64>> {
    solve_level(problem, family, n, perturb, scaled, SolverKind::Lu).map(|(_, r, _)| r.solution)
}
