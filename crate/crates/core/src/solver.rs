//! Linear solvers for the assembled SPD systems, eigenvalue estimates for
//! condition numbers, and L² errors of discrete solutions.

use std::fmt;
use std::str::FromStr;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::assembly::{integrate_discrete, DofMap};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::sparse::SparseMatrix;

/// Largest system the dense LU path accepts.
pub const DENSE_LIMIT: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Sparse direct LU with one refinement step.
    Lu,
    /// Dense LU with partial pivoting and one refinement step.
    Dense,
    /// Jacobi-preconditioned conjugate gradients.
    Cg,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Lu => "lu",
            SolverKind::Dense => "dense",
            SolverKind::Cg => "cg",
        })
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lu" => Ok(SolverKind::Lu),
            "dense" => Ok(SolverKind::Dense),
            "cg" => Ok(SolverKind::Cg),
            other => Err(Error::InvalidStudy(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: DVector<f64>,
    /// `‖A x - b‖₂ / ‖b‖₂` (absolute when `b = 0`).
    pub residual: f64,
    /// CG iterations; zero for direct solves.
    pub iterations: usize,
    /// `max |U| / max |A|` for dense LU.
    pub pivot_growth: Option<f64>,
    pub refined: bool,
    pub method: SolverKind,
}

fn relative_residual(a: &SparseMatrix, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let r = (a.mul_vec(x) - b).norm();
    let nb = b.norm();
    if nb > 0.0 {
        r / nb
    } else {
        r
    }
}

/// One residual-correction step; the correction is kept only if it does
/// not increase the residual.
fn refine_once(
    a: &SparseMatrix,
    b: &DVector<f64>,
    x: DVector<f64>,
    solve: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> (DVector<f64>, f64, bool) {
    let r0 = relative_residual(a, &x, b);
    let r = b - a.mul_vec(&x);
    let x1 = &x + solve(&r);
    let r1 = relative_residual(a, &x1, b);
    if r1 <= r0 {
        (x1, r1, true)
    } else {
        (x, r0, false)
    }
}

/// Dense LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: DMatrix<f64>,
    perm: Vec<usize>,
    growth: f64,
}

impl DenseLu {
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let amax = a.amax();
        let tiny = amax * f64::EPSILON * n as f64;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |m, c| if c.1 > m.1 { c } else { m });
            if pmax <= tiny || pmax == 0.0 {
                return Err(Error::Singular);
            }
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                lu[(i, k)] /= pivot;
            }
            // Rank-one update of the trailing block, column by column.
            for j in k + 1..n {
                let ukj = lu[(k, j)];
                if ukj != 0.0 {
                    for i in k + 1..n {
                        let lik = lu[(i, k)];
                        lu[(i, j)] -= lik * ukj;
                    }
                }
            }
        }
        let mut umax = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                umax = umax.max(lu[(i, j)].abs());
            }
        }
        Ok(Self {
            lu,
            perm,
            growth: if amax > 0.0 { umax / amax } else { 1.0 },
        })
    }

    pub fn pivot_growth(&self) -> f64 {
        self.growth
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.lu.nrows();
        let mut x = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        x
    }
}

/// Dense LU solve, optionally followed by one refinement step.
pub fn dense_lu_solve(a: &DMatrix<f64>, b: &DVector<f64>, refine: bool) -> Result<SolveReport> {
    if a.nrows() > DENSE_LIMIT {
        return Err(Error::TooLarge(a.nrows(), DENSE_LIMIT));
    }
    let lu = DenseLu::factor(a)?;
    let sparse = SparseMatrix::from_dense(a);
    let x = lu.solve(b);
    let (solution, residual, refined) = if refine {
        refine_once(&sparse, b, x, |r| lu.solve(r))
    } else {
        let r = relative_residual(&sparse, &x, b);
        (x, r, false)
    };
    Ok(SolveReport {
        solution,
        residual,
        iterations: 0,
        pivot_growth: Some(lu.pivot_growth()),
        refined,
        method: SolverKind::Dense,
    })
}

/// Sparse direct LU factorization (fill-reducing ordering, partial pivoting).
pub struct SparseLu {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.dim();
        let mut triplets = Vec::with_capacity(a.nnz());
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push(Triplet::new(i, j, v));
            }
        }
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let lu = m.sp_lu().map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { .. } => Error::Singular,
            other => Error::Factorization(format!("{other:?}")),
        })?;
        Ok(Self { lu, n })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = faer::Col::<f64>::from_fn(self.n, |i| b[i]);
        self.lu.solve_in_place(x.as_mat_mut());
        DVector::from_fn(self.n, |i, _| x[i])
    }
}

/// Sparse LU solve, optionally followed by one refinement step.
pub fn sparse_lu_solve(a: &SparseMatrix, b: &DVector<f64>, refine: bool) -> Result<SolveReport> {
    let lu = SparseLu::factor(a)?;
    let x = lu.solve(b);
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular);
    }
    let (solution, residual, refined) = if refine {
        refine_once(a, b, x, |r| lu.solve(r))
    } else {
        let r = relative_residual(a, &x, b);
        (x, r, false)
    };
    Ok(SolveReport {
        solution,
        residual,
        iterations: 0,
        pivot_growth: None,
        refined,
        method: SolverKind::Lu,
    })
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn cg_solve(a: &SparseMatrix, b: &DVector<f64>, rtol: f64, max_iter: usize) -> Result<SolveReport> {
    let n = a.dim();
    let diag = a.diagonal();
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(Error::Factorization(
            "Jacobi preconditioner needs a positive diagonal".into(),
        ));
    }
    let inv_diag = diag.map(|d| 1.0 / d);
    let nb = b.norm();
    let scale = if nb > 0.0 { nb } else { 1.0 };
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    if r.norm() / scale <= rtol {
        return Ok(SolveReport {
            solution: x,
            residual: r.norm() / scale,
            iterations: 0,
            pivot_growth: None,
            refined: false,
            method: SolverKind::Cg,
        });
    }
    let mut z = r.component_mul(&inv_diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut ap = DVector::zeros(n);
    for it in 1..=max_iter {
        a.matvec(p.as_slice(), ap.as_mut_slice());
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            return Err(Error::Factorization("matrix is not positive definite".into()));
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let res = r.norm() / scale;
        if res <= rtol {
            // Report the true residual rather than the recursively updated one.
            let residual = relative_residual(a, &x, b);
            return Ok(SolveReport {
                solution: x,
                residual,
                iterations: it,
                pivot_growth: None,
                refined: false,
                method: SolverKind::Cg,
            });
        }
        z = r.component_mul(&inv_diag);
        let rz_new = r.dot(&z);
        p *= rz_new / rz;
        p += &z;
        rz = rz_new;
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: relative_residual(a, &x, b),
    })
}

/// Solves with the requested method. CG uses `rtol = 1e-10` and at most
/// `10 n` iterations.
pub fn solve(a: &SparseMatrix, b: &DVector<f64>, kind: SolverKind) -> Result<SolveReport> {
    match kind {
        SolverKind::Lu => sparse_lu_solve(a, b, true),
        SolverKind::Dense => {
            if a.dim() > DENSE_LIMIT {
                return Err(Error::TooLarge(a.dim(), DENSE_LIMIT));
            }
            dense_lu_solve(&a.to_dense(), b, true)
        }
        SolverKind::Cg => cg_solve(a, b, 1e-10, 10 * a.dim().max(10)),
    }
}

/// Extreme eigenvalues of a symmetric matrix by power and inverse iteration,
/// stopped when the Rayleigh quotient changes by less than `rtol` relative
/// over a window of iterations.
#[derive(Debug, Clone, Copy)]
pub struct SymmetricEigs {
    pub rtol: f64,
    pub max_iter: usize,
}

impl SymmetricEigs {
    pub fn new(rtol: f64) -> Self {
        Self { rtol, max_iter: 20_000 }
    }

    fn start(n: usize) -> DVector<f64> {
        // Deterministic and not orthogonal to any smooth or oscillatory mode.
        let v = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64) * 0.7548776662).fract());
        let norm = v.norm();
        v / norm
    }

    fn iterate(&self, n: usize, apply: impl Fn(&DVector<f64>) -> DVector<f64>) -> Result<f64> {
        if n == 0 {
            return Err(Error::Singular);
        }
        let mut v = Self::start(n);
        let mut rho = 0.0;
        // The Rayleigh quotient converges at twice the rate of the vector,
        // so a stall below rtol² marks a converged estimate.
        let tol = (self.rtol * self.rtol).max(1e-12);
        for it in 0..self.max_iter {
            let w = apply(&v);
            let next = v.dot(&w);
            let norm = w.norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Singular);
            }
            v = w / norm;
            if it > 0 && (next - rho).abs() <= tol * next.abs() {
                debug!("eigenvalue iteration converged after {it} steps");
                return Ok(next);
            }
            rho = next;
        }
        Ok(rho)
    }

    pub fn largest(&self, a: &SparseMatrix) -> Result<f64> {
        self.iterate(a.dim(), |v| a.mul_vec(v))
    }

    /// Smallest eigenvalue through solves with `lu`.
    pub fn smallest(&self, a: &SparseMatrix, lu: &SparseLu) -> Result<f64> {
        let mu = self.iterate(a.dim(), |v| lu.solve(v))?;
        Ok(1.0 / mu)
    }
}

/// `‖u_h - u‖_{L²(Ω)}` with a degree `2k + 2` rule (capped at 12).
pub fn l2_error(
    mesh: &TriangleMesh,
    dofs: &DofMap,
    scaled: bool,
    u_h: &DVector<f64>,
    exact: impl Fn([f64; 2]) -> f64,
) -> Result<f64> {
    let degree = (2 * dofs.family().embedded_degree() + 2).min(12);
    let sq = integrate_discrete(mesh, dofs, u_h, scaled, degree, |v, x| (v - exact(x)).powi(2))?;
    Ok(sq.max(0.0).sqrt())
}
