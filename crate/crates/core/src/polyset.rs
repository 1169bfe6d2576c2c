//! Orthonormal polynomial bases on the reference triangle.
//!
//! Members are obtained by Gram–Schmidt orthonormalisation (two passes) of
//! the centroid-shifted, scaled monomials taken in graded order, under the L²
//! inner product of the reference triangle. The result is hierarchical: the
//! first `(k+1)(k+2)/2` members span the polynomials of degree `k`. The
//! constant member therefore equals `√2` (the triangle has area 1/2).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quadrature::triangle_rule;

pub const MAX_DEGREE: usize = 6;

/// Highest derivative order the basis can evaluate.
pub const MAX_DERIVATIVE_ORDER: usize = 3;

/// Derivative multi-indices `(∂x count, ∂y count)` grouped by order:
/// `[1, x, y, xx, xy, yy, xxx, xxy, xyy, yyy]`.
pub const DERIVATIVES: [(u32, u32); 10] = [
    (0, 0),
    (1, 0),
    (0, 1),
    (2, 0),
    (1, 1),
    (0, 2),
    (3, 0),
    (2, 1),
    (1, 2),
    (0, 3),
];

/// Number of multi-indices with order at most `order`.
pub fn derivative_count(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

/// Position of `∂x^dx ∂y^dy` in [`DERIVATIVES`].
pub fn derivative_index(dx: u32, dy: u32) -> usize {
    let n = (dx + dy) as usize;
    n * (n + 1) / 2 + dy as usize
}

const CENTROID: f64 = 1.0 / 3.0;
/// Shifted monomials use `1.5 (x - 1/3)` so they stay O(1) on the triangle.
const SCALE: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct PolyBasis {
    degree: usize,
    /// Row `k` holds member `k` in the shifted-monomial basis.
    coeffs: DMatrix<f64>,
}

fn monomial_exponents(degree: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity((degree + 1) * (degree + 2) / 2);
    for n in 0..=degree as u32 {
        for b in 0..=n {
            out.push((n - b, b));
        }
    }
    out
}

fn falling(a: u32, k: u32) -> f64 {
    (0..k).map(|i| (a - i) as f64).product()
}

fn powi(x: f64, k: u32) -> f64 {
    x.powi(k as i32)
}

/// Derivative `(dx, dy)` of every shifted monomial at one point.
fn monomial_derivatives(exps: &[(u32, u32)], p: [f64; 2], dx: u32, dy: u32, out: &mut [f64]) {
    let x = SCALE * (p[0] - CENTROID);
    let y = SCALE * (p[1] - CENTROID);
    for (o, &(a, b)) in out.iter_mut().zip(exps) {
        *o = if a < dx || b < dy {
            0.0
        } else {
            falling(a, dx) * powi(x, a - dx) * falling(b, dy) * powi(y, b - dy) * powi(SCALE, dx + dy)
        };
    }
}

impl PolyBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::DegreeOutOfRange(degree));
        }
        let exps = monomial_exponents(degree);
        let dim = exps.len();
        let rule = triangle_rule(2 * degree)?;
        let nq = rule.len();

        // Columns: sqrt(w)-weighted monomial values; `coef` tracks each column
        // as a combination of monomials.
        let mut cols = DMatrix::<f64>::zeros(nq, dim);
        let mut buf = vec![0.0; dim];
        for (q, (p, w)) in rule.iter().enumerate() {
            monomial_derivatives(&exps, *p, 0, 0, &mut buf);
            let sw = w.sqrt();
            for j in 0..dim {
                cols[(q, j)] = sw * buf[j];
            }
        }
        let mut coef = DMatrix::<f64>::identity(dim, dim);
        for j in 0..dim {
            for _pass in 0..2 {
                for i in 0..j {
                    let r = cols.column(i).dot(&cols.column(j));
                    let ci = cols.column(i).clone_owned();
                    cols.column_mut(j).axpy(-r, &ci, 1.0);
                    let ki = coef.column(i).clone_owned();
                    coef.column_mut(j).axpy(-r, &ki, 1.0);
                }
            }
            let norm = cols.column(j).norm();
            cols.column_mut(j).scale_mut(1.0 / norm);
            coef.column_mut(j).scale_mut(1.0 / norm);
        }
        Ok(Self {
            degree,
            coeffs: coef.transpose(),
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.coeffs.nrows()
    }

    /// Values and derivatives up to `max_order` of every member at `points`.
    ///
    /// Entry `d` of the result is the `dim × points.len()` table of the
    /// derivative `DERIVATIVES[d]`.
    pub fn tabulate(&self, points: &[[f64; 2]], max_order: usize) -> Result<Vec<DMatrix<f64>>> {
        if max_order > MAX_DERIVATIVE_ORDER {
            return Err(Error::OrderUnsupported(max_order));
        }
        let exps = monomial_exponents(self.degree);
        let dim = exps.len();
        let mut mono = DMatrix::<f64>::zeros(dim, points.len());
        let mut buf = vec![0.0; dim];
        let mut out = Vec::with_capacity(derivative_count(max_order));
        for &(dx, dy) in &DERIVATIVES[..derivative_count(max_order)] {
            for (q, p) in points.iter().enumerate() {
                monomial_derivatives(&exps, *p, dx, dy, &mut buf);
                for (j, v) in buf.iter().enumerate() {
                    mono[(j, q)] = *v;
                }
            }
            out.push(&self.coeffs * &mono);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(basis: &PolyBasis, degree: usize) -> DMatrix<f64> {
        let rule = triangle_rule(degree).unwrap();
        let tab = basis.tabulate(&rule.points, 0).unwrap();
        let v = &tab[0];
        let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(rule.weights.clone()));
        v * w * v.transpose()
    }

    fn sample_points() -> Vec<[f64; 2]> {
        // 66 lattice points of the degree-10 principal lattice.
        let mut pts = Vec::new();
        for j in 0..=10 {
            for i in 0..=(10 - j) {
                pts.push([i as f64 / 10.0, j as f64 / 10.0]);
            }
        }
        pts
    }

    #[test]
    fn constant_member_is_sqrt_two() {
        let b = PolyBasis::new(0).unwrap();
        assert_eq!(b.dim(), 1);
        let t = b.tabulate(&[[0.2, 0.3]], 0).unwrap();
        assert!((t[0][(0, 0)] - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn dimension_formula() {
        for p in 0..=MAX_DEGREE {
            assert_eq!(PolyBasis::new(p).unwrap().dim(), (p + 1) * (p + 2) / 2);
        }
        assert!(matches!(PolyBasis::new(7), Err(Error::DegreeOutOfRange(7))));
    }

    #[test]
    fn gram_matrix_is_identity_and_well_conditioned() {
        for p in 0..=MAX_DEGREE {
            let b = PolyBasis::new(p).unwrap();
            let g = gram(&b, 2 * p);
            let err = (&g - DMatrix::identity(b.dim(), b.dim())).amax();
            assert!(err < 1e-12, "p={p} err={err}");
            let sv = g.singular_values();
            let cond = sv.max() / sv.min();
            assert!(cond < 1e8);
        }
    }

    #[test]
    fn spans_all_monomials_up_to_degree() {
        let pts = sample_points();
        for p in 1..=MAX_DEGREE {
            let b = PolyBasis::new(p).unwrap();
            let rule = triangle_rule(2 * p).unwrap();
            let tq = b.tabulate(&rule.points, 0).unwrap();
            let ts = b.tabulate(&pts, 0).unwrap();
            for n in 0..=p as i32 {
                for k in 0..=n {
                    let f = |x: &[f64; 2]| x[0].powi(n - k) * x[1].powi(k);
                    // L2 projection equals interpolation for members of the span.
                    let proj: Vec<f64> = (0..b.dim())
                        .map(|j| {
                            rule.iter()
                                .enumerate()
                                .map(|(q, (x, w))| w * f(x) * tq[0][(j, q)])
                                .sum()
                        })
                        .collect();
                    for (s, x) in pts.iter().enumerate() {
                        let v: f64 = (0..b.dim()).map(|j| proj[j] * ts[0][(j, s)]).sum();
                        assert!((v - f(x)).abs() < 1e-12, "p={p} n={n} k={k} err={}", (v - f(x)).abs());
                    }
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = PolyBasis::new(5).unwrap();
        let x = [0.21, 0.33];
        let h = 1e-5;
        let t = b.tabulate(&[x], 3).unwrap();
        let shifted = |dx: f64, dy: f64| b.tabulate(&[[x[0] + dx, x[1] + dy]], 2).unwrap();
        let (px, mx) = (shifted(h, 0.0), shifted(-h, 0.0));
        let (py, my) = (shifted(0.0, h), shifted(0.0, -h));
        for j in 0..b.dim() {
            for (lower, dx_idx, dy_idx) in [(0, 1, 2), (1, 3, 4), (2, 4, 5), (3, 6, 7), (4, 7, 8), (5, 8, 9)] {
                let fd_x = (px[lower][(j, 0)] - mx[lower][(j, 0)]) / (2.0 * h);
                let fd_y = (py[lower][(j, 0)] - my[lower][(j, 0)]) / (2.0 * h);
                assert!((fd_x - t[dx_idx][(j, 0)]).abs() < 1e-4 * (1.0 + fd_x.abs()));
                assert!((fd_y - t[dy_idx][(j, 0)]).abs() < 1e-4 * (1.0 + fd_y.abs()));
            }
        }
    }

    #[test]
    fn derivative_index_layout() {
        for (i, &(dx, dy)) in DERIVATIVES.iter().enumerate() {
            assert_eq!(derivative_index(dx, dy), i);
        }
        assert_eq!(derivative_count(2), 6);
    }
}
