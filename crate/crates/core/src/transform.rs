//! Per-cell transformation matrices relating physical nodal bases to pulled
//! back reference bases: `ψ_i = Σ_j M_ij F*(ψ̂_j)`.
//!
//! `M = V^T`, where `V` expresses the reference nodes through the pushed
//! forward physical nodes. Families whose pushed-forward nodes do not span
//! the reference ones (Morley, Argyris) go through an extended node set:
//! `V = E · V^C · D`. Bell is mapped through the Argyris (full quintic)
//! transformation and then restricted to its 18 vertex functionals.
//!
//! With `J = ∂x̂/∂x`, pushed-forward derivatives obey `F_*(∇) = J^T ∇̂` and
//! `F_*(∇²) = J^T ∇̂² J`, so the blocks of `V^C` involve `J^{-T}`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3};

use crate::mesh::CellGeometry;
use crate::refelem::{
    reference_functionals, Family, FunctionalKind, NodalFunctional, EDGE_VERTICES, REFERENCE_NORMALS,
    REFERENCE_TANGENTS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix {
    pub family: Family,
    /// `N_f × N_ref`; square except for Bell (18 × 21).
    pub matrix: DMatrix<f64>,
    /// DoF weights `s_i` folded into `matrix`: the scaled DoF is `s_i · n_i(u)`
    /// and the scaled basis function is `ψ_i / s_i`. All ones when unscaled.
    pub scaling: DVector<f64>,
}

impl TransformMatrix {
    fn unscaled(family: Family, matrix: DMatrix<f64>) -> Self {
        let n = matrix.nrows();
        Self {
            family,
            matrix,
            scaling: DVector::from_element(n, 1.0),
        }
    }

    pub fn is_scaled(&self) -> bool {
        self.scaling.iter().any(|&s| s != 1.0)
    }

    /// Rows of `matrix` as CSV, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> = self.matrix.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Factors of the three-step construction `V = E · V^C · D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeStepFactors {
    /// Extended × nodal: the extended nodes as combinations of the nodal ones.
    pub d: DMatrix<f64>,
    /// Square change of basis on the extended set.
    pub vc: DMatrix<f64>,
    /// Nodal × extended selector, one unit entry per row.
    pub e: DMatrix<f64>,
    /// `B^i = Ĝ_i J^{-T} G_i^T` per edge.
    pub b: [Matrix2<f64>; 3],
}

impl ThreeStepFactors {
    pub fn v(&self) -> DMatrix<f64> {
        &self.e * &self.vc * &self.d
    }
}

fn jinv_t(geom: &CellGeometry) -> Matrix2<f64> {
    geom.jacobian_inv.transpose()
}

/// Rotation-Jacobian block coupling the (normal, tangential) derivative
/// nodes on edge `i`.
pub fn edge_block(geom: &CellGeometry, edge: usize) -> Matrix2<f64> {
    let (nh, th) = (REFERENCE_NORMALS[edge], REFERENCE_TANGENTS[edge]);
    let (n, t) = (geom.normals[edge], geom.tangents[edge]);
    let ghat = Matrix2::new(nh[0], nh[1], th[0], th[1]);
    let g = Matrix2::new(n[0], n[1], t[0], t[1]);
    ghat * jinv_t(geom) * g.transpose()
}

/// Maps physical Hessian nodes (Voigt xx, xy, yy) to reference ones:
/// the 3×3 matrix of `H ↦ J^{-T} H J^{-1}`.
pub fn hessian_block(geom: &CellGeometry) -> Matrix3<f64> {
    let a = jinv_t(geom);
    let units = [
        Matrix2::new(1.0, 0.0, 0.0, 0.0),
        Matrix2::new(0.0, 1.0, 1.0, 0.0),
        Matrix2::new(0.0, 0.0, 0.0, 1.0),
    ];
    let mut out = Matrix3::zeros();
    for (k, u) in units.iter().enumerate() {
        let h = a * u * a.transpose();
        out[(0, k)] = h[(0, 0)];
        out[(1, k)] = h[(0, 1)];
        out[(2, k)] = h[(1, 1)];
    }
    out
}

pub fn lagrange_m(k: usize) -> TransformMatrix {
    let family = Family::Lagrange(k);
    TransformMatrix::unscaled(
        family,
        DMatrix::identity(family.space_dimension(), family.space_dimension()),
    )
}

pub fn hermite_m(geom: &CellGeometry) -> TransformMatrix {
    let mut m = DMatrix::identity(10, 10);
    let block = geom.jacobian_inv;
    for v in 0..3 {
        let s = 3 * v + 1;
        m.view_mut((s, s), (2, 2)).copy_from(&block);
    }
    TransformMatrix::unscaled(Family::Hermite, m)
}

/// The closed-form Morley `V`: identity on vertex values; the row of edge `i`
/// holds `∓B^i_01/ℓ_i` on its endpoint values and `B^i_00` on its own node.
pub fn morley_v(geom: &CellGeometry) -> DMatrix<f64> {
    let mut v = DMatrix::identity(6, 6);
    for i in 0..3 {
        let b = edge_block(geom, i);
        let (a, e) = EDGE_VERTICES[i];
        let l = geom.edge_lengths[i];
        v[(3 + i, a)] = -b[(0, 1)] / l;
        v[(3 + i, e)] = b[(0, 1)] / l;
        v[(3 + i, 3 + i)] = b[(0, 0)];
    }
    v
}

/// Morley factors on the 9-node extended set
/// `[3 vertex values, 3 midpoint normals, 3 midpoint tangentials]`.
pub fn morley_three_step(geom: &CellGeometry) -> ThreeStepFactors {
    let b = [edge_block(geom, 0), edge_block(geom, 1), edge_block(geom, 2)];
    let mut vc = DMatrix::identity(9, 9);
    for (i, bi) in b.iter().enumerate() {
        let idx = [3 + i, 6 + i];
        for r in 0..2 {
            for c in 0..2 {
                vc[(idx[r], idx[c])] = bi[(r, c)];
            }
        }
    }
    let mut d = DMatrix::zeros(9, 6);
    d.view_mut((0, 0), (6, 6)).fill_with_identity();
    for i in 0..3 {
        // Tangential derivative of a quadratic at the midpoint = difference quotient.
        let (a, e) = EDGE_VERTICES[i];
        let l = geom.edge_lengths[i];
        d[(6 + i, a)] = -1.0 / l;
        d[(6 + i, e)] = 1.0 / l;
    }
    let mut e = DMatrix::zeros(6, 9);
    e.view_mut((0, 0), (6, 6)).fill_with_identity();
    ThreeStepFactors { d, vc, e, b }
}

pub fn morley_m(geom: &CellGeometry) -> TransformMatrix {
    TransformMatrix::unscaled(Family::Morley, morley_v(geom).transpose())
}

/// Coefficients `(a, b, c)` with `p'(1/2) = a (p1 - p0) + b (p0' + p1') + c (p1'' - p0'')`
/// for the quintic on `[0, 1]` interpolating values, first and second
/// derivatives at both ends.
const QUINTIC_MIDPOINT_SLOPE: (f64, f64, f64) = (15.0 / 8.0, -7.0 / 16.0, 1.0 / 32.0);

/// Argyris factors on the 24-node extended set
/// `[6 per vertex (value, ∂x, ∂y, ∂xx, ∂xy, ∂yy), 3 midpoint normals, 3 midpoint tangentials]`.
pub fn argyris_three_step(geom: &CellGeometry) -> ThreeStepFactors {
    let b = [edge_block(geom, 0), edge_block(geom, 1), edge_block(geom, 2)];
    let grad = jinv_t(geom);
    let hess = hessian_block(geom);

    let mut vc = DMatrix::zeros(24, 24);
    for v in 0..3 {
        let s = 6 * v;
        vc[(s, s)] = 1.0;
        vc.view_mut((s + 1, s + 1), (2, 2)).copy_from(&grad);
        vc.view_mut((s + 3, s + 3), (3, 3)).copy_from(&hess);
    }
    for (i, bi) in b.iter().enumerate() {
        let idx = [18 + i, 21 + i];
        for r in 0..2 {
            for c in 0..2 {
                vc[(idx[r], idx[c])] = bi[(r, c)];
            }
        }
    }

    let mut d = DMatrix::zeros(24, 21);
    d.view_mut((0, 0), (21, 21)).fill_with_identity();
    let (ca, cb, cc) = QUINTIC_MIDPOINT_SLOPE;
    for i in 0..3 {
        let (va, vb) = EDGE_VERTICES[i];
        let l = geom.edge_lengths[i];
        let t = geom.tangents[i];
        let tt = [t[0] * t[0], 2.0 * t[0] * t[1], t[1] * t[1]];
        let row = 21 + i;
        // u_t(mid) = a/ℓ (u_b - u_a) + b (u_t,a + u_t,b) + c ℓ (u_tt,b - u_tt,a)
        d[(row, 6 * va)] = -ca / l;
        d[(row, 6 * vb)] = ca / l;
        for k in 0..2 {
            d[(row, 6 * va + 1 + k)] = cb * t[k];
            d[(row, 6 * vb + 1 + k)] = cb * t[k];
        }
        for k in 0..3 {
            d[(row, 6 * va + 3 + k)] = -cc * l * tt[k];
            d[(row, 6 * vb + 3 + k)] = cc * l * tt[k];
        }
    }

    let mut e = DMatrix::zeros(21, 24);
    e.view_mut((0, 0), (21, 21)).fill_with_identity();
    ThreeStepFactors { d, vc, e, b }
}

pub fn argyris_m(geom: &CellGeometry) -> TransformMatrix {
    TransformMatrix::unscaled(Family::Argyris, argyris_three_step(geom).v().transpose())
}

/// Expresses the 18 physical Bell basis functions in the physical Argyris
/// basis. A Bell function's normal derivative along each edge is the cubic
/// Hermite interpolant of its endpoint data, which fixes the midpoint
/// normal-derivative node.
pub fn bell_restriction(geom: &CellGeometry) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(18, 21);
    c.view_mut((0, 0), (18, 18)).fill_with_identity();
    for i in 0..3 {
        let (va, vb) = EDGE_VERTICES[i];
        let l = geom.edge_lengths[i];
        let n = geom.normals[i];
        let t = geom.tangents[i];
        // d/dt (n·∇u) = t^T H n in Voigt components.
        let tn = [t[0] * n[0], t[0] * n[1] + t[1] * n[0], t[1] * n[1]];
        let col = 18 + i;
        for k in 0..2 {
            c[(6 * va + 1 + k, col)] = 0.5 * n[k];
            c[(6 * vb + 1 + k, col)] = 0.5 * n[k];
        }
        for k in 0..3 {
            c[(6 * va + 3 + k, col)] = l / 8.0 * tn[k];
            c[(6 * vb + 3 + k, col)] = -l / 8.0 * tn[k];
        }
    }
    c
}

pub fn bell_m(geom: &CellGeometry) -> TransformMatrix {
    let arg = argyris_m(geom);
    TransformMatrix::unscaled(Family::Bell, bell_restriction(geom) * arg.matrix)
}

/// Unscaled transformation for any supported family.
pub fn transform_matrix(family: Family, geom: &CellGeometry) -> TransformMatrix {
    match family {
        Family::Lagrange(k) => lagrange_m(k),
        Family::Hermite => hermite_m(geom),
        Family::Morley => morley_m(geom),
        Family::Argyris => argyris_m(geom),
        Family::Bell => bell_m(geom),
    }
}

/// The physical nodal functionals of `family` on the cell: reference points
/// mapped forward, Cartesian derivatives kept Cartesian, edge normals
/// replaced by the physical outward normals.
pub fn physical_functionals(family: Family, geom: &CellGeometry) -> Vec<NodalFunctional> {
    reference_functionals(family)
        .expect("family validated by caller")
        .into_iter()
        .map(|f| {
            let point = geom.to_physical(f.point);
            let kind = match f.kind {
                FunctionalKind::EdgeNormalDeriv { edge, .. } => FunctionalKind::EdgeNormalDeriv {
                    edge,
                    normal: geom.normals[edge],
                },
                other => other,
            };
            NodalFunctional {
                kind,
                point,
                entity: f.entity,
            }
        })
        .collect()
}

/// DoF weights: 1 for values, `h(v)` per first derivative and `h(v)²` per
/// second derivative at vertex `v`, `ℓ_i` for normal derivatives on edge `i`.
pub fn dof_scaling(family: Family, geom: &CellGeometry) -> DVector<f64> {
    let funcs = reference_functionals(family).expect("family validated by caller");
    DVector::from_iterator(
        funcs.len(),
        funcs.iter().map(|f| match f.kind {
            FunctionalKind::PointEval => 1.0,
            FunctionalKind::PointDeriv(_) => geom.vertex_h[f.entity.index],
            FunctionalKind::PointSecondDeriv(_) => geom.vertex_h[f.entity.index].powi(2),
            FunctionalKind::EdgeNormalDeriv { edge, .. } => geom.edge_lengths[edge],
        }),
    )
}

/// Applies the derivative-DoF scaling: row `i` of `M` is divided by `s_i`
/// so that the DoF becomes `s_i · n_i(u)`.
pub fn scale_m(m: &TransformMatrix, geom: &CellGeometry) -> TransformMatrix {
    let s = dof_scaling(m.family, geom);
    let mut matrix = m.matrix.clone();
    for (i, mut row) in matrix.row_iter_mut().enumerate() {
        row /= s[i];
    }
    TransformMatrix {
        family: m.family,
        matrix,
        scaling: m.scaling.component_mul(&s),
    }
}
