//! Quadrature rules on the reference interval `[0, 1]` and the reference
//! triangle with vertices `(0,0)`, `(1,0)`, `(0,1)`.
//!
//! Triangle rules are collapsed (Duffy) tensor products of Gauss–Legendre
//! rules, so every weight is positive and every point is interior.

use crate::error::{Error, Result};

/// Largest polynomial degree a triangle rule can be requested for.
pub const MAX_TRIANGLE_DEGREE: usize = 12;

/// Largest polynomial degree an interval rule can be requested for.
pub const MAX_INTERVAL_DEGREE: usize = 31;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule<P> {
    pub points: Vec<P>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

pub type TriangleRule = QuadRule<[f64; 2]>;
pub type IntervalRule = QuadRule<f64>;

impl<P> QuadRule<P> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&P, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` with `n` points.
///
/// Nodes are found by Newton iteration on the three-term recurrence, seeded
/// with the Chebyshev-like asymptotic guess; they are returned ascending.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule on `[0, 1]` exact for polynomials of degree `exact_degree`.
pub fn interval_rule(exact_degree: usize) -> Result<IntervalRule> {
    if exact_degree > MAX_INTERVAL_DEGREE {
        return Err(Error::QuadratureDegree(exact_degree));
    }
    let n = exact_degree / 2 + 1;
    let (nodes, weights) = gauss_legendre(n);
    Ok(QuadRule {
        points: nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        weights: weights.iter().map(|w| 0.5 * w).collect(),
        exact_degree,
    })
}

/// Collapsed Gauss rule on the reference triangle exact to `exact_degree`.
///
/// The map `(u, v) -> (u, v (1 - u))` carries the unit square onto the
/// triangle with Jacobian `1 - u`, so the `u` direction needs one extra
/// degree of exactness.
pub fn triangle_rule(exact_degree: usize) -> Result<TriangleRule> {
    if exact_degree > MAX_TRIANGLE_DEGREE {
        return Err(Error::QuadratureDegree(exact_degree));
    }
    let outer = interval_rule(exact_degree + 1)?;
    let inner = interval_rule(exact_degree)?;
    let mut points = Vec::with_capacity(outer.len() * inner.len());
    let mut weights = Vec::with_capacity(outer.len() * inner.len());
    for (&u, wu) in outer.iter() {
        for (&v, wv) in inner.iter() {
            points.push([u, v * (1.0 - u)]);
            weights.push(wu * wv * (1.0 - u));
        }
    }
    Ok(QuadRule {
        points,
        weights,
        exact_degree,
    })
}

/// Exact integral of `x^a y^b` over the reference triangle: `a! b! / (a+b+2)!`.
pub fn triangle_monomial_integral(a: u32, b: u32) -> f64 {
    let mut num = 1.0;
    for k in 1..=a {
        num *= k as f64;
    }
    for k in 1..=b {
        num *= k as f64;
    }
    let mut den = 1.0;
    for k in 1..=(a + b + 2) {
        den *= k as f64;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_triangle_integrates_area() {
        let rule = triangle_rule(0).unwrap();
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 0.5).abs() < 1e-15);
    }

    #[test]
    fn triangle_xy_is_one_over_24() {
        let rule = triangle_rule(2).unwrap();
        let v: f64 = rule.iter().map(|(p, w)| w * p[0] * p[1]).sum();
        assert!((v - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_x5y5_matches_beta_function() {
        let rule = triangle_rule(10).unwrap();
        let v: f64 = rule.iter().map(|(p, w)| w * p[0].powi(5) * p[1].powi(5)).sum();
        let exact = 1.0 / 33264.0;
        assert!(((v - exact) / exact).abs() < 1e-12);
    }

    #[test]
    fn interval_examples() {
        let r1 = interval_rule(1).unwrap();
        assert_eq!(r1.len(), 1);
        let v: f64 = r1.iter().map(|(x, w)| w * x).sum();
        assert!((v - 0.5).abs() < 1e-15);

        let r3 = interval_rule(3).unwrap();
        assert_eq!(r3.len(), 2);
        let v: f64 = r3.iter().map(|(x, w)| w * x.powi(3)).sum();
        assert!((v - 0.25).abs() < 1e-14);

        let r11 = interval_rule(11).unwrap();
        assert_eq!(r11.len(), 6);
        let v: f64 = r11.iter().map(|(x, w)| w * x.powi(11)).sum();
        assert!((v - 1.0 / 12.0).abs() < 1e-13);
    }

    #[test]
    fn out_of_range_degrees_are_rejected() {
        assert!(matches!(triangle_rule(13), Err(Error::QuadratureDegree(13))));
        assert!(interval_rule(40).is_err());
    }

    #[test]
    fn exactness_sweep_all_triangle_rules() {
        for d in 0..=MAX_TRIANGLE_DEGREE {
            let rule = triangle_rule(d).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            let sum: f64 = rule.weights.iter().sum();
            assert!((sum - 0.5).abs() < 1e-13);
            for a in 0..=d as u32 {
                for b in 0..=(d as u32 - a) {
                    let v: f64 = rule
                        .iter()
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    let exact = triangle_monomial_integral(a, b);
                    assert!(((v - exact) / exact).abs() < 1e-12, "d={d} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn exactness_sweep_interval_rules() {
        for d in 0..=MAX_INTERVAL_DEGREE {
            let rule = interval_rule(d).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for k in 0..=d as i32 {
                let v: f64 = rule.iter().map(|(x, w)| w * x.powi(k)).sum();
                let exact = 1.0 / (k as f64 + 1.0);
                assert!(((v - exact) / exact).abs() < 1e-12, "d={d} k={k}");
            }
        }
    }
}
