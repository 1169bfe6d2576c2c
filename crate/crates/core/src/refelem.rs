//! Reference-cell nodal bases for Lagrange, Hermite, Morley, Argyris and Bell
//! triangles.
//!
//! Every element is built the same way: the functionals are applied to the
//! orthonormal [`PolyBasis`] to form a generalized Vandermonde matrix, whose
//! inverse gives the nodal basis. Bell adds three constraint rows that kill
//! the quartic Legendre mode of the normal derivative along each edge, then
//! keeps only its 18 nodal rows.
//!
//! Reference conventions: vertices `(0,0)`, `(1,0)`, `(0,1)`; edge `i` is
//! opposite vertex `i` and runs from its lower-numbered endpoint to its
//! higher-numbered one; normals point out of the triangle.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::polyset::{derivative_count, derivative_index, PolyBasis};
use crate::quadrature::interval_rule;

pub const REFERENCE_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Local vertex pair `(start, end)` of edge `i`, with `start < end`.
pub const EDGE_VERTICES: [(usize, usize); 3] = [(1, 2), (0, 2), (0, 1)];

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Outward unit normals of the reference edges.
pub const REFERENCE_NORMALS: [[f64; 2]; 3] = [[SQRT_HALF, SQRT_HALF], [-1.0, 0.0], [0.0, -1.0]];

/// Unit tangents of the reference edges (start to end vertex).
pub const REFERENCE_TANGENTS: [[f64; 2]; 3] = [[-SQRT_HALF, SQRT_HALF], [0.0, 1.0], [1.0, 0.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Lagrange(usize),
    Hermite,
    Morley,
    Argyris,
    Bell,
}

impl Family {
    /// Degree of the smallest full polynomial space containing the element.
    pub fn embedded_degree(self) -> usize {
        match self {
            Family::Lagrange(k) => k,
            Family::Hermite => 3,
            Family::Morley => 2,
            Family::Argyris | Family::Bell => 5,
        }
    }

    /// Largest `d` such that every polynomial of degree `d` is in the space.
    pub fn reproduction_degree(self) -> usize {
        match self {
            Family::Bell => 4,
            other => other.embedded_degree(),
        }
    }

    pub fn space_dimension(self) -> usize {
        match self {
            Family::Lagrange(k) => (k + 1) * (k + 2) / 2,
            Family::Hermite => 10,
            Family::Morley => 6,
            Family::Argyris => 21,
            Family::Bell => 18,
        }
    }

    /// Whether the pullback alone maps reference nodal bases to physical ones.
    pub fn is_affine_equivalent(self) -> bool {
        matches!(self, Family::Lagrange(_))
    }

    /// The element whose reference tabulation the transformation acts on.
    /// Bell is mapped through the full quintic (Argyris) space.
    pub fn companion(self) -> Family {
        match self {
            Family::Bell => Family::Argyris,
            other => other,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Family::Lagrange(k) if !(1..=5).contains(&k) => Err(Error::UnsupportedElement(format!("lagrange:{k}"))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Lagrange(k) => write!(f, "lagrange:{k}"),
            Family::Hermite => f.write_str("hermite"),
            Family::Morley => f.write_str("morley"),
            Family::Argyris => f.write_str("argyris"),
            Family::Bell => f.write_str("bell"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let family = match lower.as_str() {
            "hermite" => Family::Hermite,
            "morley" => Family::Morley,
            "argyris" => Family::Argyris,
            "bell" => Family::Bell,
            other => {
                let k = other
                    .strip_prefix("lagrange:")
                    .or_else(|| other.strip_prefix("p"))
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| Error::UnsupportedElement(s.to_string()))?;
                Family::Lagrange(k)
            }
        };
        family.validate()?;
        Ok(family)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondDerivative {
    Xx,
    Xy,
    Yy,
}

impl SecondDerivative {
    pub const ALL: [SecondDerivative; 3] = [SecondDerivative::Xx, SecondDerivative::Xy, SecondDerivative::Yy];

    fn voigt(self) -> usize {
        match self {
            SecondDerivative::Xx => 0,
            SecondDerivative::Xy => 1,
            SecondDerivative::Yy => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionalKind {
    PointEval,
    /// Directional derivative along a unit vector.
    PointDeriv([f64; 2]),
    PointSecondDeriv(SecondDerivative),
    /// Derivative along the (outward) unit normal of `edge`, at its midpoint.
    EdgeNormalDeriv {
        edge: usize,
        normal: [f64; 2],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Entity {
    pub dim: u8,
    pub index: usize,
}

impl Entity {
    pub fn vertex(index: usize) -> Self {
        Self { dim: 0, index }
    }

    pub fn edge(index: usize) -> Self {
        Self { dim: 1, index }
    }

    pub fn interior() -> Self {
        Self { dim: 2, index: 0 }
    }
}

/// Value, gradient and Hessian (Voigt order xx, xy, yy) of a function at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodalFunctional {
    pub kind: FunctionalKind,
    pub point: [f64; 2],
    pub entity: Entity,
}

impl NodalFunctional {
    pub fn point_eval(point: [f64; 2], entity: Entity) -> Self {
        Self {
            kind: FunctionalKind::PointEval,
            point,
            entity,
        }
    }

    pub fn point_deriv(point: [f64; 2], direction: [f64; 2], entity: Entity) -> Self {
        Self {
            kind: FunctionalKind::PointDeriv(direction),
            point,
            entity,
        }
    }

    pub fn second_deriv(point: [f64; 2], component: SecondDerivative, entity: Entity) -> Self {
        Self {
            kind: FunctionalKind::PointSecondDeriv(component),
            point,
            entity,
        }
    }

    pub fn edge_normal(point: [f64; 2], edge: usize, normal: [f64; 2]) -> Self {
        Self {
            kind: FunctionalKind::EdgeNormalDeriv { edge, normal },
            point,
            entity: Entity::edge(edge),
        }
    }

    /// Highest derivative order the functional needs.
    pub fn order(&self) -> usize {
        match self.kind {
            FunctionalKind::PointEval => 0,
            FunctionalKind::PointDeriv(_) | FunctionalKind::EdgeNormalDeriv { .. } => 1,
            FunctionalKind::PointSecondDeriv(_) => 2,
        }
    }

    pub fn apply(&self, jet: &Jet) -> f64 {
        match self.kind {
            FunctionalKind::PointEval => jet.value,
            FunctionalKind::PointDeriv(d) | FunctionalKind::EdgeNormalDeriv { normal: d, .. } => {
                d[0] * jet.grad[0] + d[1] * jet.grad[1]
            }
            FunctionalKind::PointSecondDeriv(c) => jet.hess[c.voigt()],
        }
    }
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

fn midpoint(edge: usize) -> [f64; 2] {
    let (a, b) = EDGE_VERTICES[edge];
    lerp(REFERENCE_VERTICES[a], REFERENCE_VERTICES[b], 0.5)
}

/// Nodal functionals of `family` on the reference cell, in DoF order.
pub fn reference_functionals(family: Family) -> Result<Vec<NodalFunctional>> {
    family.validate()?;
    let mut out = Vec::with_capacity(family.space_dimension());
    let ex = [1.0, 0.0];
    let ey = [0.0, 1.0];
    match family {
        Family::Lagrange(k) => {
            for (v, &p) in REFERENCE_VERTICES.iter().enumerate() {
                out.push(NodalFunctional::point_eval(p, Entity::vertex(v)));
            }
            for (e, &(a, b)) in EDGE_VERTICES.iter().enumerate() {
                for j in 1..k {
                    let p = lerp(REFERENCE_VERTICES[a], REFERENCE_VERTICES[b], j as f64 / k as f64);
                    out.push(NodalFunctional::point_eval(p, Entity::edge(e)));
                }
            }
            for b in 1..k {
                for a in 1..(k - b) {
                    let p = [a as f64 / k as f64, b as f64 / k as f64];
                    out.push(NodalFunctional::point_eval(p, Entity::interior()));
                }
            }
        }
        Family::Hermite => {
            for (v, &p) in REFERENCE_VERTICES.iter().enumerate() {
                out.push(NodalFunctional::point_eval(p, Entity::vertex(v)));
                out.push(NodalFunctional::point_deriv(p, ex, Entity::vertex(v)));
                out.push(NodalFunctional::point_deriv(p, ey, Entity::vertex(v)));
            }
            out.push(NodalFunctional::point_eval([1.0 / 3.0, 1.0 / 3.0], Entity::interior()));
        }
        Family::Morley => {
            for (v, &p) in REFERENCE_VERTICES.iter().enumerate() {
                out.push(NodalFunctional::point_eval(p, Entity::vertex(v)));
            }
            for e in 0..3 {
                out.push(NodalFunctional::edge_normal(midpoint(e), e, REFERENCE_NORMALS[e]));
            }
        }
        Family::Argyris | Family::Bell => {
            for (v, &p) in REFERENCE_VERTICES.iter().enumerate() {
                out.push(NodalFunctional::point_eval(p, Entity::vertex(v)));
                out.push(NodalFunctional::point_deriv(p, ex, Entity::vertex(v)));
                out.push(NodalFunctional::point_deriv(p, ey, Entity::vertex(v)));
                for c in SecondDerivative::ALL {
                    out.push(NodalFunctional::second_deriv(p, c, Entity::vertex(v)));
                }
            }
            if family == Family::Argyris {
                for e in 0..3 {
                    out.push(NodalFunctional::edge_normal(midpoint(e), e, REFERENCE_NORMALS[e]));
                }
            }
        }
    }
    Ok(out)
}

/// Row of the Vandermonde matrix: `functional` applied to each basis member.
fn functional_row(poly: &PolyBasis, f: &NodalFunctional) -> Result<DVector<f64>> {
    let tab = poly.tabulate(&[f.point], f.order())?;
    Ok(DVector::from_fn(poly.dim(), |j, _| {
        let jet = jet_from_tables(&tab, j, 0);
        f.apply(&jet)
    }))
}

pub(crate) fn jet_from_tables(tab: &[DMatrix<f64>], j: usize, q: usize) -> Jet {
    let get = |d: usize| tab.get(d).map_or(0.0, |m| m[(j, q)]);
    Jet {
        value: get(0),
        grad: [get(1), get(2)],
        hess: [get(3), get(4), get(5)],
    }
}

/// Legendre polynomial `P_4` on `[-1, 1]`.
fn legendre4(x: f64) -> f64 {
    let x2 = x * x;
    (35.0 * x2 * x2 - 30.0 * x2 + 3.0) / 8.0
}

/// Row of the Bell constraint `∫_0^1 ∂n u(e(s)) P_4(2s-1) ds = 0` on edge `e`.
fn bell_constraint_row(poly: &PolyBasis, edge: usize) -> Result<DVector<f64>> {
    let rule = interval_rule(8)?;
    let (a, b) = EDGE_VERTICES[edge];
    let pts: Vec<[f64; 2]> = rule
        .points
        .iter()
        .map(|&s| lerp(REFERENCE_VERTICES[a], REFERENCE_VERTICES[b], s))
        .collect();
    let tab = poly.tabulate(&pts, 1)?;
    let n = REFERENCE_NORMALS[edge];
    Ok(DVector::from_fn(poly.dim(), |j, _| {
        rule.iter()
            .enumerate()
            .map(|(q, (&s, w))| w * legendre4(2.0 * s - 1.0) * (n[0] * tab[1][(j, q)] + n[1] * tab[2][(j, q)]))
            .sum()
    }))
}

/// Reference element of one family: nodal functionals plus nodal-basis
/// coefficients over an orthonormal [`PolyBasis`].
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    family: Family,
    poly: PolyBasis,
    functionals: Vec<NodalFunctional>,
    /// Row `i` expresses nodal basis function `i` in the orthonormal basis.
    coeffs: DMatrix<f64>,
}

impl ReferenceElement {
    pub fn new(family: Family) -> Result<Self> {
        let functionals = reference_functionals(family)?;
        let poly = PolyBasis::new(family.embedded_degree())?;
        let dim = poly.dim();
        let mut rows = Vec::with_capacity(dim);
        for f in &functionals {
            rows.push(functional_row(&poly, f)?);
        }
        if family == Family::Bell {
            for e in 0..3 {
                rows.push(bell_constraint_row(&poly, e)?);
            }
        }
        if rows.len() != dim {
            return Err(Error::UnsupportedElement(format!(
                "{family}: {} functionals for a space of dimension {dim}",
                rows.len()
            )));
        }
        let vandermonde = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
        let sv = vandermonde.singular_values();
        let rcond = sv.min() / sv.max();
        if rcond < 1e-13 {
            return Err(Error::SingularVandermonde {
                element: family.to_string(),
                pivot: rcond,
            });
        }
        let inverse = vandermonde.lu().try_inverse().ok_or(Error::SingularVandermonde {
            element: family.to_string(),
            pivot: 0.0,
        })?;
        let coeffs = inverse.transpose().rows(0, functionals.len()).into_owned();
        Ok(Self {
            family,
            poly,
            functionals,
            coeffs,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn embedded_degree(&self) -> usize {
        self.family.embedded_degree()
    }

    pub fn len(&self) -> usize {
        self.functionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functionals.is_empty()
    }

    pub fn functionals(&self) -> &[NodalFunctional] {
        &self.functionals
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn poly_basis(&self) -> &PolyBasis {
        &self.poly
    }

    /// Applies every nodal functional to a function described by its jet.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> Jet) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.functionals.iter().map(|n| n.apply(&f(n.point))))
    }

    /// Coefficient matrix as CSV: one row per basis function, 17 significant digits.
    pub fn coeffs_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.coeffs.nrows() {
            let row: Vec<String> = self.coeffs.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Reference basis values and derivatives at a set of points.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub points: Vec<[f64; 2]>,
    pub max_order: usize,
    /// Entry `d` holds derivative [`crate::polyset::DERIVATIVES`]`[d]`
    /// as a `basis × points` table.
    pub values: Vec<DMatrix<f64>>,
}

impl Tabulation {
    pub fn derivative(&self, dx: u32, dy: u32) -> &DMatrix<f64> {
        &self.values[derivative_index(dx, dy)]
    }

    pub fn num_basis(&self) -> usize {
        self.values[0].nrows()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn jet(&self, basis: usize, point: usize) -> Jet {
        jet_from_tables(&self.values, basis, point)
    }
}

fn check_reference_point(p: [f64; 2]) -> Result<()> {
    let tol = 1e-12;
    if p[0] < -tol || p[1] < -tol || p[0] + p[1] > 1.0 + tol {
        return Err(Error::PointOutsideReference(p[0], p[1]));
    }
    Ok(())
}

/// Tabulates values and derivatives up to `max_order ≤ 2`.
pub fn tabulate(element: &ReferenceElement, points: &[[f64; 2]], max_order: usize) -> Result<Tabulation> {
    if max_order > 2 {
        return Err(Error::OrderUnsupported(max_order));
    }
    tabulate_extended(element, points, max_order)
}

/// Like [`tabulate`] but also admits third derivatives, which the weak
/// clamped-plate boundary terms need.
pub fn tabulate_extended(element: &ReferenceElement, points: &[[f64; 2]], max_order: usize) -> Result<Tabulation> {
    if max_order > 3 {
        return Err(Error::OrderUnsupported(max_order));
    }
    for &p in points {
        check_reference_point(p)?;
    }
    let raw = element.poly.tabulate(points, max_order)?;
    debug_assert_eq!(raw.len(), derivative_count(max_order));
    Ok(Tabulation {
        points: points.to_vec(),
        max_order,
        values: raw.iter().map(|m| &element.coeffs * m).collect(),
    })
}
