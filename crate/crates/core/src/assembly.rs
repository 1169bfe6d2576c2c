//! Global degrees of freedom and assembly of the model bilinear forms.
//!
//! Cell matrices are integrated against the pulled-back companion basis and
//! then mapped with the congruence `A = M Ã M^T`. Derivative DoFs attached to
//! edges (normal derivatives) are shared with a sign so that neighbouring
//! cells agree on the global edge normal.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{cell_geometry, vertex_size_field, CellGeometry, TriangleMesh};
use crate::polyset::{derivative_index, DERIVATIVES};
use crate::quadrature::{interval_rule, triangle_rule, IntervalRule, TriangleRule};
use crate::refelem::{
    reference_functionals, tabulate_extended, Family, FunctionalKind, Jet, ReferenceElement, EDGE_VERTICES,
    REFERENCE_VERTICES,
};
use crate::solver::{SparseLu, SymmetricEigs};
use crate::transform::{physical_functionals, scale_m, transform_matrix, TransformMatrix};

pub use crate::sparse::{vector_to_text, SparseMatrix};

/// Local-to-global map. Global numbering is entity-blocked: all vertex
/// blocks, then edge blocks, then cell-interior blocks.
#[derive(Debug, Clone)]
pub struct DofMap {
    family: Family,
    local: usize,
    per_entity: [usize; 3],
    total: usize,
    indices: Vec<usize>,
    signs: Vec<i8>,
}

impl DofMap {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn total_dofs(&self) -> usize {
        self.total
    }

    pub fn local_dofs(&self) -> usize {
        self.local
    }

    /// DoFs per vertex, per edge and per cell interior.
    pub fn per_entity(&self) -> [usize; 3] {
        self.per_entity
    }

    pub fn num_cells(&self) -> usize {
        self.indices.len() / self.local.max(1)
    }

    /// Global indices and signs of the local DoFs of `cell`.
    pub fn cell(&self, cell: usize) -> (&[usize], &[i8]) {
        let r = cell * self.local..(cell + 1) * self.local;
        (&self.indices[r.clone()], &self.signs[r])
    }
}

/// Builds the DoF map. Edge-normal DoFs get sign `+1` on the cell whose
/// outward normal equals the global edge normal (the counter-clockwise
/// rotation of the stored edge direction), `-1` on the other.
pub fn build_dof_map(mesh: &TriangleMesh, family: Family) -> Result<DofMap> {
    let funcs = reference_functionals(family)?;
    let local = funcs.len();

    // Slot of each functional within its entity.
    let mut counts = [[0usize; 3]; 3];
    let mut slots = Vec::with_capacity(local);
    for f in &funcs {
        let (d, i) = (f.entity.dim as usize, f.entity.index);
        let i = if d == 2 { 0 } else { i };
        slots.push(counts[d][i]);
        counts[d][i] += 1;
    }
    let per_entity = [counts[0][0], counts[1][0], counts[2][0]];
    let edge_offset = mesh.num_vertices() * per_entity[0];
    let cell_offset = edge_offset + mesh.num_edges() * per_entity[1];
    let total = cell_offset + mesh.num_cells() * per_entity[2];

    let mut indices = Vec::with_capacity(local * mesh.num_cells());
    let mut signs = Vec::with_capacity(local * mesh.num_cells());
    for (c, cell) in mesh.cells.iter().enumerate() {
        for (f, &slot) in funcs.iter().zip(&slots) {
            let i = f.entity.index;
            let (g, s) = match f.entity.dim {
                0 => (cell[i] * per_entity[0] + slot, 1),
                1 => {
                    let (e, orient) = mesh.cell_edges[c][i];
                    let base = edge_offset + e * per_entity[1];
                    match f.kind {
                        FunctionalKind::EdgeNormalDeriv { .. } => (base + slot, edge_normal_sign(mesh, c, i, e)),
                        _ if orient < 0 => (base + per_entity[1] - 1 - slot, 1),
                        _ => (base + slot, 1),
                    }
                }
                _ => (cell_offset + c * per_entity[2] + slot, 1),
            };
            indices.push(g);
            signs.push(s);
        }
    }
    Ok(DofMap {
        family,
        local,
        per_entity,
        total,
        indices,
        signs,
    })
}

fn edge_normal_sign(mesh: &TriangleMesh, cell: usize, local_edge: usize, edge: usize) -> i8 {
    let [lo, hi] = mesh.edges[edge];
    let (a, b) = (mesh.vertices[lo], mesh.vertices[hi]);
    let global_normal = [-(b[1] - a[1]), b[0] - a[0]];
    let opposite = mesh.vertices[mesh.cells[cell][local_edge]];
    let outward = [0.5 * (a[0] + b[0]) - opposite[0], 0.5 * (a[1] + b[1]) - opposite[1]];
    if global_normal[0] * outward[0] + global_normal[1] * outward[1] > 0.0 {
        1
    } else {
        -1
    }
}

/// Weakly imposed clamped conditions `u = ∂u/∂n = 0` for the fourth-order
/// forms: the symmetric consistency terms obtained by integrating the cell
/// form by parts, plus penalties `γ_u/h³ ∫ u v` and `γ_n/h ∫ u_n v_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakClamp {
    pub value_penalty: f64,
    pub slope_penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FormKind {
    /// `∫∇u·∇v - ∫∂(u_n v + u v_n) + α/h ∫∂ u v`.
    PoissonNitsche { alpha: f64 },
    /// `∫ Δu Δv - (1-ν)(2u_xx v_yy + 2u_yy v_xx - 4u_xy v_xy)`.
    Plate { nu: f64 },
    /// Cellwise `∫ Δu Δv` plus gradient-jump penalty and averaged-Laplacian
    /// flux terms on interior edges.
    PlateIp { alpha: f64 },
    /// Plate form plus the six clamped-plate boundary terms with `β₁/h²`
    /// and `β₂/h` weights.
    PlateClampedNitsche { nu: f64, beta1: f64, beta2: f64 },
}

impl FormKind {
    fn name(&self) -> &'static str {
        match self {
            FormKind::PoissonNitsche { .. } => "poisson-nitsche",
            FormKind::Plate { .. } => "plate",
            FormKind::PlateIp { .. } => "plate-ip",
            FormKind::PlateClampedNitsche { .. } => "plate-clamped-nitsche",
        }
    }

    fn is_fourth_order(&self) -> bool {
        !matches!(self, FormKind::PoissonNitsche { .. })
    }

    /// Coefficient `c` in `Δu Δv - c (u_xx v_yy + u_yy v_xx - 2 u_xy v_xy)`.
    fn cofactor_weight(&self) -> f64 {
        match *self {
            FormKind::Plate { nu } | FormKind::PlateClampedNitsche { nu, .. } => 2.0 * (1.0 - nu),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormSpec {
    pub kind: FormKind,
    pub family: Family,
    /// Exactness degree of the cell rule for the bilinear form.
    pub cell_degree: usize,
    /// Exactness degree of the facet rule.
    pub facet_degree: usize,
    /// Exactness degree of the cell rule for load vectors.
    pub load_degree: usize,
    /// Use the `h`-scaled derivative DoFs.
    pub scaled: bool,
    pub clamp: Option<WeakClamp>,
}

impl FormSpec {
    pub fn new(kind: FormKind, family: Family) -> Self {
        let k = family.embedded_degree();
        Self {
            kind,
            family,
            cell_degree: (2 * k).min(12),
            facet_degree: 2 * k + 1,
            load_degree: (2 * k + 2).min(12),
            scaled: true,
            clamp: None,
        }
    }

    /// Poisson with `α = 10 k²`, `k` the embedded degree.
    pub fn poisson(family: Family) -> Self {
        let k = family.embedded_degree() as f64;
        Self::new(FormKind::PoissonNitsche { alpha: 10.0 * k * k }, family)
    }

    pub fn plate(family: Family, nu: f64) -> Self {
        Self::new(FormKind::Plate { nu }, family)
    }

    /// Interior penalty with `α = 100`.
    pub fn plate_ip(family: Family) -> Self {
        Self::new(FormKind::PlateIp { alpha: 100.0 }, family)
    }

    /// Clamped plate with `β₁ = β₂ = 100`.
    pub fn plate_clamped_nitsche(family: Family, nu: f64) -> Self {
        Self::new(
            FormKind::PlateClampedNitsche {
                nu,
                beta1: 100.0,
                beta2: 100.0,
            },
            family,
        )
    }

    pub fn with_scaling(mut self, scaled: bool) -> Self {
        self.scaled = scaled;
        self
    }

    pub fn with_clamp(mut self, clamp: WeakClamp) -> Self {
        self.clamp = Some(clamp);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        let incompatible = || Error::IncompatibleForm {
            element: self.family.to_string(),
            form: self.kind.name().to_string(),
        };
        let positive = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::UnsupportedElement(format!("{what} must be positive, got {x}")))
            }
        };
        let poisson_ratio = |nu: f64| {
            if (0.0..=0.5).contains(&nu) {
                Ok(())
            } else {
                Err(Error::UnsupportedElement(format!(
                    "Poisson ratio {nu} outside [0, 1/2]"
                )))
            }
        };
        let h2 = matches!(self.family, Family::Morley | Family::Argyris | Family::Bell);
        match self.kind {
            FormKind::PoissonNitsche { alpha } => positive(alpha, "alpha")?,
            FormKind::Plate { nu } => {
                poisson_ratio(nu)?;
                if !h2 {
                    return Err(incompatible());
                }
            }
            FormKind::PlateClampedNitsche { nu, beta1, beta2 } => {
                poisson_ratio(nu)?;
                positive(beta1, "beta1")?;
                positive(beta2, "beta2")?;
                if !h2 {
                    return Err(incompatible());
                }
            }
            FormKind::PlateIp { alpha } => {
                positive(alpha, "alpha")?;
                if !matches!(self.family, Family::Lagrange(k) if k >= 2) {
                    return Err(incompatible());
                }
            }
        }
        if let Some(c) = self.clamp {
            if !matches!(self.kind, FormKind::Plate { .. } | FormKind::PlateIp { .. }) {
                return Err(incompatible());
            }
            positive(c.value_penalty, "value penalty")?;
            positive(c.slope_penalty, "slope penalty")?;
        }
        Ok(())
    }
}

/// Reference data shared by every cell: companion tabulations at the cell
/// and facet quadrature points.
struct Kernel {
    cell_rule: TriangleRule,
    cell_tab: Vec<DMatrix<f64>>,
    facet_rule: IntervalRule,
    /// `[local edge][reversed]`: tabulation along the edge with the
    /// parameter running from the start vertex (or from the end if reversed).
    facet_tabs: Vec<[Vec<DMatrix<f64>>; 2]>,
}

impl Kernel {
    fn new(family: Family, cell_degree: usize, cell_order: usize, facet: Option<(usize, usize)>) -> Result<Self> {
        let companion = ReferenceElement::new(family.companion())?;
        let cell_rule = triangle_rule(cell_degree)?;
        let cell_tab = tabulate_extended(&companion, &cell_rule.points, cell_order)?.values;
        let (facet_rule, facet_tabs) = match facet {
            Some((degree, order)) => {
                let rule = interval_rule(degree)?;
                let mut tabs = Vec::with_capacity(3);
                for &(a, b) in &EDGE_VERTICES {
                    let along = |s: f64| {
                        let (p, q) = (REFERENCE_VERTICES[a], REFERENCE_VERTICES[b]);
                        [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]
                    };
                    let fwd: Vec<[f64; 2]> = rule.points.iter().map(|&s| along(s)).collect();
                    let rev: Vec<[f64; 2]> = rule.points.iter().map(|&s| along(1.0 - s)).collect();
                    tabs.push([
                        tabulate_extended(&companion, &fwd, order)?.values,
                        tabulate_extended(&companion, &rev, order)?.values,
                    ]);
                }
                (rule, tabs)
            }
            None => (interval_rule(0)?, Vec::new()),
        };
        Ok(Self {
            cell_rule,
            cell_tab,
            facet_rule,
            facet_tabs,
        })
    }
}

/// Physical derivative tables of the pulled-back basis from reference ones:
/// every order-`r` derivative is contracted with `J = ∂x̂/∂x` in each slot.
fn push_tables(geom: &CellGeometry, reference: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let j = &geom.jacobian;
    let mut out = Vec::with_capacity(reference.len());
    for &(dx, dy) in &DERIVATIVES[..reference.len()] {
        let r = (dx + dy) as usize;
        if r == 0 {
            out.push(reference[0].clone());
            continue;
        }
        let slot = |k: usize| usize::from(k >= dx as usize);
        let mut acc = DMatrix::zeros(reference[0].nrows(), reference[0].ncols());
        for combo in 0..(1usize << r) {
            let mut coef = 1.0;
            let mut ny = 0u32;
            for k in 0..r {
                let a = (combo >> k) & 1;
                coef *= j[(a, slot(k))];
                ny += a as u32;
            }
            if coef != 0.0 {
                acc += &reference[derivative_index(r as u32 - ny, ny)] * coef;
            }
        }
        out.push(acc);
    }
    out
}

/// `Σ_q w_q a(i, q) b(j, q)`.
fn wgram(a: &DMatrix<f64>, w: &[f64], b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut bw = b.clone();
    for (q, mut col) in bw.column_iter_mut().enumerate() {
        col *= w[q];
    }
    a * bw.transpose()
}

fn combo(tabs: &[DMatrix<f64>], terms: &[(usize, f64)]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(tabs[0].nrows(), tabs[0].ncols());
    // Derivatives beyond the tabulated order contribute nothing.
    for &(d, c) in terms {
        if c != 0.0 && d < tabs.len() {
            out += &tabs[d] * c;
        }
    }
    out
}

const X: usize = 1;
const Y: usize = 2;
const XX: usize = 3;
const XY: usize = 4;
const YY: usize = 5;
const XXX: usize = 6;
const XXY: usize = 7;
const XYY: usize = 8;
const YYY: usize = 9;

/// Per-basis traces needed by the facet terms at facet quadrature points.
struct Traces {
    value: DMatrix<f64>,
    normal: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    /// `∂_n Δu`
    laplacian_normal: DMatrix<f64>,
    /// `(m(u) n)_x, (m(u) n)_y` with `m(u) = Δu I - c cof(∇²u)`.
    moment: [DMatrix<f64>; 2],
    /// `∇u` components.
    grad: [DMatrix<f64>; 2],
    /// `u_tt` and `u_ntt`, with `t` the counter-clockwise rotation of `n`.
    tt: DMatrix<f64>,
    ntt: DMatrix<f64>,
}

fn traces(p: &[DMatrix<f64>], n: [f64; 2], c: f64) -> Traces {
    let t = [-n[1], n[0]];
    // T(n, t, t) summed over the index assignments, grouped by y count.
    let mut ntt = [(XXX, 0.0), (XXY, 0.0), (XYY, 0.0), (YYY, 0.0)];
    let v = [n, t, t];
    for bits in 0..8usize {
        let mut coef = 1.0;
        let mut ny = 0;
        for (k, vk) in v.iter().enumerate() {
            let a = (bits >> k) & 1;
            coef *= vk[a];
            ny += a;
        }
        ntt[ny].1 += coef;
    }
    Traces {
        value: p[0].clone(),
        normal: combo(p, &[(X, n[0]), (Y, n[1])]),
        laplacian: combo(p, &[(XX, 1.0), (YY, 1.0)]),
        laplacian_normal: combo(p, &[(XXX, n[0]), (XYY, n[0]), (XXY, n[1]), (YYY, n[1])]),
        moment: [
            combo(p, &[(XX, n[0]), (YY, n[0] * (1.0 - c)), (XY, c * n[1])]),
            combo(p, &[(YY, n[1]), (XX, n[1] * (1.0 - c)), (XY, c * n[0])]),
        ],
        grad: [p[X].clone(), p[Y].clone()],
        tt: combo(p, &[(XX, t[0] * t[0]), (XY, 2.0 * t[0] * t[1]), (YY, t[1] * t[1])]),
        ntt: combo(p, &ntt),
    }
}

/// Transformation for one cell, scaled if requested.
pub fn cell_transform(family: Family, geom: &CellGeometry, scaled: bool) -> TransformMatrix {
    let m = transform_matrix(family, geom);
    if scaled {
        scale_m(&m, geom)
    } else {
        m
    }
}

fn congruence(m: &DMatrix<f64>, a: &DMatrix<f64>, mt: &DMatrix<f64>) -> DMatrix<f64> {
    m * a * mt.transpose()
}

fn scatter(out: &mut SparseMatrix, rows: (&[usize], &[i8]), cols: (&[usize], &[i8]), a: &DMatrix<f64>) {
    for (i, (&gi, &si)) in rows.0.iter().zip(rows.1).enumerate() {
        for (j, (&gj, &sj)) in cols.0.iter().zip(cols.1).enumerate() {
            let v = a[(i, j)];
            if v != 0.0 {
                out.add(gi, gj, f64::from(si * sj) * v);
            }
        }
    }
}

/// Sparsity of the operator: cell couplings, plus neighbour couplings for
/// forms with interior-edge terms.
fn pattern(mesh: &TriangleMesh, dofs: &DofMap, neighbours: bool) -> SparseMatrix {
    let mut rows = vec![Vec::new(); dofs.total_dofs()];
    let mut couple = |a: &[usize], b: &[usize]| {
        for &i in a {
            rows[i].extend_from_slice(b);
        }
    };
    for c in 0..mesh.num_cells() {
        let (g, _) = dofs.cell(c);
        couple(g, g);
    }
    if neighbours {
        for ec in &mesh.edge_cells {
            if let Some((b, _)) = ec.second {
                let (ga, _) = dofs.cell(ec.first.0);
                let (gb, _) = dofs.cell(b);
                couple(ga, gb);
                couple(gb, ga);
            }
        }
    }
    SparseMatrix::from_pattern(rows)
}

fn check_dofs(dofs: &DofMap, family: Family, mesh: &TriangleMesh) -> Result<()> {
    if dofs.family() != family || dofs.num_cells() != mesh.num_cells() {
        return Err(Error::InvalidMesh(format!(
            "DoF map for {} on {} cells does not match {family} on {} cells",
            dofs.family(),
            dofs.num_cells(),
            mesh.num_cells()
        )));
    }
    Ok(())
}

/// Assembles the global operator of `form`.
pub fn assemble_operator(mesh: &TriangleMesh, dofs: &DofMap, form: &FormSpec) -> Result<SparseMatrix> {
    form.validate()?;
    check_dofs(dofs, form.family, mesh)?;
    let fourth = form.kind.is_fourth_order();
    let cell_order = if fourth { 2 } else { 1 };
    let boundary = match form.kind {
        FormKind::PoissonNitsche { .. } | FormKind::PlateClampedNitsche { .. } => true,
        _ => form.clamp.is_some(),
    };
    let interior = matches!(form.kind, FormKind::PlateIp { .. });
    let facet_order = if fourth { 3 } else { 1 };
    let kernel = Kernel::new(
        form.family,
        form.cell_degree,
        cell_order,
        (boundary || interior).then_some((form.facet_degree, facet_order)),
    )?;
    let sizes = vertex_size_field(mesh);
    let c = form.kind.cofactor_weight();
    let mut out = pattern(mesh, dofs, interior);

    let mut geoms = Vec::with_capacity(mesh.num_cells());
    let mut maps = Vec::with_capacity(mesh.num_cells());
    for cell in 0..mesh.num_cells() {
        let geom = cell_geometry(mesh, cell, &sizes)?;
        maps.push(cell_transform(form.family, &geom, form.scaled).matrix);
        geoms.push(geom);
    }

    for cell in 0..mesh.num_cells() {
        let geom = &geoms[cell];
        let p = push_tables(geom, &kernel.cell_tab);
        let w: Vec<f64> = kernel.cell_rule.weights.iter().map(|w| w * geom.det_jinv_abs).collect();
        let local = if fourth {
            let lap = combo(&p, &[(XX, 1.0), (YY, 1.0)]);
            let mut a = wgram(&lap, &w, &lap);
            if c != 0.0 {
                a -= (wgram(&p[XX], &w, &p[YY]) + wgram(&p[YY], &w, &p[XX]) - 2.0 * wgram(&p[XY], &w, &p[XY])) * c;
            }
            a
        } else {
            wgram(&p[X], &w, &p[X]) + wgram(&p[Y], &w, &p[Y])
        };
        let m = &maps[cell];
        scatter(&mut out, dofs.cell(cell), dofs.cell(cell), &congruence(m, &local, m));
    }

    if boundary {
        for &e in &mesh.boundary_edges {
            let (cell, i) = mesh.edge_cells[e].first;
            let geom = &geoms[cell];
            let p = push_tables(geom, &kernel.facet_tabs[i][0]);
            let h = geom.edge_lengths[i];
            let w: Vec<f64> = kernel.facet_rule.weights.iter().map(|w| w * h).collect();
            let tr = traces(&p, geom.normals[i], c);
            let local = boundary_matrix(&form.kind, form.clamp, &tr, &w, h);
            let m = &maps[cell];
            scatter(&mut out, dofs.cell(cell), dofs.cell(cell), &congruence(m, &local, m));
        }
    }

    if let FormKind::PlateIp { alpha } = form.kind {
        for (e, ec) in mesh.edge_cells.iter().enumerate() {
            let Some((cb, ib)) = ec.second else { continue };
            let (ca, ia) = ec.first;
            let (ga, gb) = (&geoms[ca], &geoms[cb]);
            let rev = |cell: usize, i: usize| usize::from(mesh.cell_edges[cell][i].1 < 0);
            let pa = push_tables(ga, &kernel.facet_tabs[ia][rev(ca, ia)]);
            let pb = push_tables(gb, &kernel.facet_tabs[ib][rev(cb, ib)]);
            let h = ga.edge_lengths[ia];
            debug_assert!((h - mesh_edge_length(mesh, e)).abs() < 1e-12 * h.max(1.0));
            let w: Vec<f64> = kernel.facet_rule.weights.iter().map(|w| w * h).collect();
            let n = ga.normals[ia];
            // [u_n] = (∇u_A - ∇u_B)·n_A and {Δu} = (Δu_A + Δu_B)/2.
            let ja = combo(&pa, &[(X, n[0]), (Y, n[1])]);
            let jb = combo(&pb, &[(X, -n[0]), (Y, -n[1])]);
            let aa = combo(&pa, &[(XX, 0.5), (YY, 0.5)]);
            let ab = combo(&pb, &[(XX, 0.5), (YY, 0.5)]);
            let block = |j1: &DMatrix<f64>, a1: &DMatrix<f64>, j2: &DMatrix<f64>, a2: &DMatrix<f64>| {
                wgram(j1, &w, j2) * (alpha / h) - wgram(a1, &w, j2) - wgram(j1, &w, a2)
            };
            let (ma, mb) = (&maps[ca], &maps[cb]);
            scatter(
                &mut out,
                dofs.cell(ca),
                dofs.cell(ca),
                &congruence(ma, &block(&ja, &aa, &ja, &aa), ma),
            );
            scatter(
                &mut out,
                dofs.cell(ca),
                dofs.cell(cb),
                &congruence(ma, &block(&ja, &aa, &jb, &ab), mb),
            );
            scatter(
                &mut out,
                dofs.cell(cb),
                dofs.cell(ca),
                &congruence(mb, &block(&jb, &ab, &ja, &aa), ma),
            );
            scatter(
                &mut out,
                dofs.cell(cb),
                dofs.cell(cb),
                &congruence(mb, &block(&jb, &ab, &jb, &ab), mb),
            );
        }
    }
    Ok(out)
}

fn mesh_edge_length(mesh: &TriangleMesh, e: usize) -> f64 {
    let [a, b] = mesh.edges[e];
    let (p, q) = (mesh.vertices[a], mesh.vertices[b]);
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Local boundary-facet matrix of `kind` on one edge of length `h`.
fn boundary_matrix(kind: &FormKind, clamp: Option<WeakClamp>, tr: &Traces, w: &[f64], h: f64) -> DMatrix<f64> {
    let sym = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        let m = wgram(a, w, b);
        &m + m.transpose()
    };
    match *kind {
        FormKind::PoissonNitsche { alpha } => wgram(&tr.value, w, &tr.value) * (alpha / h) - sym(&tr.normal, &tr.value),
        FormKind::PlateClampedNitsche { nu, beta1, beta2 } => {
            let c = 2.0 * (1.0 - nu);
            let shear = &tr.laplacian_normal - &tr.ntt * c;
            let bending = &tr.laplacian - &tr.tt * c;
            wgram(&tr.value, w, &tr.value) * (beta1 / (h * h))
                + wgram(&tr.laplacian, w, &tr.laplacian) * (beta2 / h)
                + sym(&shear, &tr.value)
                + sym(&bending, &tr.normal)
        }
        FormKind::Plate { .. } | FormKind::PlateIp { .. } => {
            let Some(clamp) = clamp else {
                return DMatrix::zeros(tr.value.nrows(), tr.value.nrows());
            };
            // ∫ (m(u) n)·∇v - (∂_n Δu) v, and its transpose, subtracted.
            let flux = wgram(&tr.moment[0], w, &tr.grad[0]) + wgram(&tr.moment[1], w, &tr.grad[1])
                - wgram(&tr.laplacian_normal, w, &tr.value);
            wgram(&tr.value, w, &tr.value) * (clamp.value_penalty / (h * h * h))
                + wgram(&tr.normal, w, &tr.normal) * (clamp.slope_penalty / h)
                - &flux
                - flux.transpose()
        }
    }
}

/// Per-cell physical basis values at the load/error quadrature points.
fn cell_values(kernel: &Kernel, m: &DMatrix<f64>) -> DMatrix<f64> {
    m * &kernel.cell_tab[0]
}

/// Load vector `∫ f v` with the transformed test basis.
pub fn assemble_load(
    mesh: &TriangleMesh,
    dofs: &DofMap,
    f: impl Fn([f64; 2]) -> f64,
    form: &FormSpec,
) -> Result<DVector<f64>> {
    check_dofs(dofs, form.family, mesh)?;
    let kernel = Kernel::new(form.family, form.load_degree, 0, None)?;
    let sizes = vertex_size_field(mesh);
    let mut b = DVector::zeros(dofs.total_dofs());
    for cell in 0..mesh.num_cells() {
        let geom = cell_geometry(mesh, cell, &sizes)?;
        let m = cell_transform(form.family, &geom, form.scaled);
        let v = cell_values(&kernel, &m.matrix);
        let fw: Vec<f64> = kernel
            .cell_rule
            .iter()
            .map(|(p, w)| w * geom.det_jinv_abs * f(geom.to_physical(*p)))
            .collect();
        let (g, s) = dofs.cell(cell);
        for i in 0..g.len() {
            let val: f64 = v.row(i).iter().zip(&fw).map(|(a, b)| a * b).sum();
            b[g[i]] += f64::from(s[i]) * val;
        }
    }
    Ok(b)
}

/// Global DoF vector of the interpolant of a function given by its jet.
/// Each cell writes the DoFs it owns; shared DoFs agree up to round-off.
pub fn interpolate(
    mesh: &TriangleMesh,
    dofs: &DofMap,
    u: impl Fn([f64; 2]) -> Jet,
    scaled: bool,
) -> Result<DVector<f64>> {
    let family = dofs.family();
    let sizes = vertex_size_field(mesh);
    let mut out = DVector::zeros(dofs.total_dofs());
    for cell in 0..mesh.num_cells() {
        let (g, s) = dofs.cell(cell);
        for (i, v) in local_interpolant(family, &cell_geometry(mesh, cell, &sizes)?, &u, scaled)
            .iter()
            .enumerate()
        {
            out[g[i]] = f64::from(s[i]) * v;
        }
    }
    Ok(out)
}

/// Local DoF values (cell orientation, outward normals) of `u` on one cell.
pub fn local_interpolant(
    family: Family,
    geom: &CellGeometry,
    u: impl Fn([f64; 2]) -> Jet,
    scaled: bool,
) -> DVector<f64> {
    let funcs = physical_functionals(family, geom);
    let m = cell_transform(family, geom, scaled);
    DVector::from_iterator(
        funcs.len(),
        funcs
            .iter()
            .enumerate()
            .map(|(k, f)| m.scaling[k] * f.apply(&u(f.point))),
    )
}

/// Evaluates `Σ_cells ∫ g(u_h(x), x)` for a global DoF vector, with `u_h`
/// reconstructed through the transformed basis.
pub fn integrate_discrete(
    mesh: &TriangleMesh,
    dofs: &DofMap,
    u: &DVector<f64>,
    scaled: bool,
    degree: usize,
    g: impl Fn(f64, [f64; 2]) -> f64,
) -> Result<f64> {
    let family = dofs.family();
    let kernel = Kernel::new(family, degree, 0, None)?;
    let sizes = vertex_size_field(mesh);
    let mut total = 0.0;
    for cell in 0..mesh.num_cells() {
        let geom = cell_geometry(mesh, cell, &sizes)?;
        let m = cell_transform(family, &geom, scaled);
        let v = cell_values(&kernel, &m.matrix);
        let (gi, s) = dofs.cell(cell);
        let coef = DVector::from_iterator(gi.len(), gi.iter().zip(s).map(|(&k, &sk)| f64::from(sk) * u[k]));
        let uh = v.transpose() * coef;
        total += kernel
            .cell_rule
            .iter()
            .enumerate()
            .map(|(q, (p, w))| w * geom.det_jinv_abs * g(uh[q], geom.to_physical(*p)))
            .sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixStats {
    pub total_dofs: usize,
    pub nnz_per_row: f64,
    pub condition_estimate: f64,
}

/// DoF count, mean nonzeros per row and `λ_max/λ_min`, the extreme
/// eigenvalues obtained by power iteration on `A` and on `A⁻¹` (through a
/// sparse LU factorization).
pub fn matrix_stats(a: &SparseMatrix) -> Result<MatrixStats> {
    let eigs = SymmetricEigs::new(1e-3);
    let lmax = eigs.largest(a)?;
    let lu = SparseLu::factor(a)?;
    let lmin = eigs.smallest(a, &lu)?;
    if lmin <= 0.0 {
        warn!("smallest eigenvalue estimate {lmin:e} is not positive");
    }
    Ok(MatrixStats {
        total_dofs: a.dim(),
        nnz_per_row: a.nnz_per_row(),
        condition_estimate: lmax / lmin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;

    fn jet_of(f: impl Fn(f64, f64) -> [f64; 6]) -> impl Fn([f64; 2]) -> Jet {
        move |x| {
            let v = f(x[0], x[1]);
            Jet {
                value: v[0],
                grad: [v[1], v[2]],
                hess: [v[3], v[4], v[5]],
            }
        }
    }

    #[test]
    fn dof_counts_follow_entity_formulas() {
        let mesh = build_unit_square_mesh(8, 0.0).unwrap();
        let (v, e, c) = (81, 208, 128);
        assert_eq!((mesh.num_vertices(), mesh.num_edges(), mesh.num_cells()), (v, e, c));
        let count = |f| build_dof_map(&mesh, f).unwrap().total_dofs();
        assert_eq!(count(Family::Morley), 289);
        assert_eq!(count(Family::Argyris), 694);
        assert_eq!(count(Family::Lagrange(3)), 625);
        assert_eq!(count(Family::Hermite), 3 * v + c);
        assert_eq!(count(Family::Bell), 6 * v);
        for k in 1..=5 {
            assert_eq!(
                count(Family::Lagrange(k)),
                v + (k - 1) * e + c * (k - 1) * k.saturating_sub(2) / 2
            );
        }
    }

    #[test]
    fn shared_entities_get_identical_indices() {
        let mesh = build_unit_square_mesh(3, 0.2).unwrap();
        for family in [Family::Lagrange(4), Family::Argyris, Family::Morley] {
            let dofs = build_dof_map(&mesh, family).unwrap();
            let funcs = reference_functionals(family).unwrap();
            for (e, ec) in mesh.edge_cells.iter().enumerate() {
                let Some((cb, ib)) = ec.second else { continue };
                let (ca, ia) = ec.first;
                let on_edge = |cell: usize, i: usize| -> Vec<(usize, i8)> {
                    let (g, s) = dofs.cell(cell);
                    funcs
                        .iter()
                        .enumerate()
                        .filter(|(_, f)| f.entity.dim == 1 && f.entity.index == i)
                        .map(|(k, _)| (g[k], s[k]))
                        .collect()
                };
                let (a, b) = (on_edge(ca, ia), on_edge(cb, ib));
                let mut ia_sorted: Vec<usize> = a.iter().map(|x| x.0).collect();
                let mut ib_sorted: Vec<usize> = b.iter().map(|x| x.0).collect();
                ia_sorted.sort();
                ib_sorted.sort();
                assert_eq!(ia_sorted, ib_sorted, "edge {e}");
                if family != Family::Lagrange(4) {
                    assert_eq!(a[0].1, -b[0].1, "normal signs must disagree on edge {e}");
                }
            }
        }
    }

    #[test]
    fn lagrange_edge_nodes_agree_physically() {
        // Reversed edges must place each global DoF at the same physical point.
        let mesh = build_unit_square_mesh(2, 0.3).unwrap();
        let family = Family::Lagrange(4);
        let dofs = build_dof_map(&mesh, family).unwrap();
        let sizes = vertex_size_field(&mesh);
        let mut at = vec![None; dofs.total_dofs()];
        for c in 0..mesh.num_cells() {
            let geom = cell_geometry(&mesh, c, &sizes).unwrap();
            let (g, _) = dofs.cell(c);
            for (k, f) in physical_functionals(family, &geom).iter().enumerate() {
                match at[g[k]] {
                    None => at[g[k]] = Some(f.point),
                    Some(p) => assert!((p[0] - f.point[0]).abs() + (p[1] - f.point[1]).abs() < 1e-13),
                }
            }
        }
    }

    #[test]
    fn morley_interpolant_is_consistent_across_edges() {
        let mesh = build_unit_square_mesh(4, 0.25).unwrap();
        let dofs = build_dof_map(&mesh, Family::Morley).unwrap();
        let sizes = vertex_size_field(&mesh);
        let u = jet_of(|x, y| {
            [
                (x * y).sin() + x * x,
                y * (x * y).cos() + 2.0 * x,
                x * (x * y).cos(),
                0.0,
                0.0,
                0.0,
            ]
        });
        for scaled in [false, true] {
            let mut seen: Vec<Option<f64>> = vec![None; dofs.total_dofs()];
            for c in 0..mesh.num_cells() {
                let geom = cell_geometry(&mesh, c, &sizes).unwrap();
                let local = local_interpolant(Family::Morley, &geom, &u, scaled);
                let (g, s) = dofs.cell(c);
                for k in 0..g.len() {
                    let v = f64::from(s[k]) * local[k];
                    match seen[g[k]] {
                        None => seen[g[k]] = Some(v),
                        Some(w) => assert!((v - w).abs() < 1e-12, "dof {} {v} vs {w}", g[k]),
                    }
                }
            }
        }
    }

    #[test]
    fn poisson_p1_single_square_is_spd() {
        let mesh = build_unit_square_mesh(1, 0.0).unwrap();
        let dofs = build_dof_map(&mesh, Family::Lagrange(1)).unwrap();
        let mut form = FormSpec::poisson(Family::Lagrange(1));
        form.kind = FormKind::PoissonNitsche { alpha: 10.0 };
        let a = assemble_operator(&mesh, &dofs, &form).unwrap();
        assert_eq!(a.dim(), 4);
        assert!(a.asymmetry() < 1e-12 * a.max_abs());
        assert!(a.to_dense().cholesky().is_some());
    }

    #[test]
    fn free_morley_plate_annihilates_linears() {
        let mesh = build_unit_square_mesh(3, 0.2).unwrap();
        let dofs = build_dof_map(&mesh, Family::Morley).unwrap();
        let a = assemble_operator(&mesh, &dofs, &FormSpec::plate(Family::Morley, 0.0)).unwrap();
        assert!(a.asymmetry() < 1e-10 * a.max_abs());
        for p in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            let u = interpolate(
                &mesh,
                &dofs,
                jet_of(move |x, y| [p[0] + p[1] * x + p[2] * y, p[1], p[2], 0.0, 0.0, 0.0]),
                true,
            )
            .unwrap();
            assert!(a.mul_vec(&u).amax() < 1e-9);
        }
    }

    #[test]
    fn plate_ip_is_symmetric_and_kills_harmonic_quadratic() {
        let mesh = build_unit_square_mesh(2, 0.2).unwrap();
        let family = Family::Lagrange(2);
        let dofs = build_dof_map(&mesh, family).unwrap();
        let a = assemble_operator(&mesh, &dofs, &FormSpec::plate_ip(family)).unwrap();
        assert!(a.asymmetry() < 1e-11 * a.max_abs());
        let u = interpolate(
            &mesh,
            &dofs,
            jet_of(|x, y| [x * x - y * y, 2.0 * x, -2.0 * y, 2.0, 0.0, -2.0]),
            true,
        )
        .unwrap();
        assert!(a.mul_vec(&u).amax() < 1e-10 * a.max_abs());
    }

    #[test]
    fn all_forms_are_symmetric() {
        let mesh = build_unit_square_mesh(3, 0.2).unwrap();
        let clamp = WeakClamp {
            value_penalty: 100.0,
            slope_penalty: 10.0,
        };
        let forms = [
            FormSpec::poisson(Family::Hermite),
            FormSpec::poisson(Family::Bell).with_scaling(false),
            FormSpec::plate(Family::Argyris, 0.3).with_clamp(clamp),
            FormSpec::plate(Family::Bell, 0.5).with_clamp(clamp),
            FormSpec::plate_ip(Family::Lagrange(3)).with_clamp(clamp),
            FormSpec::plate_clamped_nitsche(Family::Morley, 0.3),
            FormSpec::plate_clamped_nitsche(Family::Argyris, 0.3),
        ];
        for form in forms {
            let dofs = build_dof_map(&mesh, form.family).unwrap();
            let a = assemble_operator(&mesh, &dofs, &form).unwrap();
            assert!(a.asymmetry() < 1e-10 * a.max_abs(), "{:?}", form.kind);
        }
    }

    #[test]
    fn incompatible_forms_are_rejected() {
        let mesh = build_unit_square_mesh(1, 0.0).unwrap();
        for form in [
            FormSpec::plate(Family::Hermite, 0.3),
            FormSpec::plate(Family::Lagrange(3), 0.3),
            FormSpec::plate_ip(Family::Lagrange(1)),
            FormSpec::plate_ip(Family::Argyris),
            FormSpec::plate(Family::Morley, 0.7),
        ] {
            let dofs = build_dof_map(&mesh, form.family).unwrap();
            assert!(assemble_operator(&mesh, &dofs, &form).is_err());
        }
    }

    #[test]
    fn load_of_one_on_reference_cell() {
        let mesh = TriangleMesh::from_cells(REFERENCE_VERTICES.to_vec(), vec![[0, 1, 2]]).unwrap();
        let dofs = build_dof_map(&mesh, Family::Lagrange(1)).unwrap();
        let form = FormSpec::poisson(Family::Lagrange(1));
        let b = assemble_load(&mesh, &dofs, |_| 1.0, &form).unwrap();
        assert!(b.iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));
        let z = assemble_load(&mesh, &dofs, |_| 0.0, &form).unwrap();
        assert_eq!(z.amax(), 0.0);
    }

    #[test]
    fn pushed_tables_match_pointwise_chain_rule() {
        let geom = CellGeometry::from_vertices([[0.1, -0.2], [1.3, 0.4], [0.2, 0.9]], [1.0; 3]).unwrap();
        let el = ReferenceElement::new(Family::Lagrange(4)).unwrap();
        let pts = [[0.2, 0.3], [0.6, 0.1]];
        let tab = tabulate_extended(&el, &pts, 3).unwrap();
        let p = push_tables(&geom, &tab.values);
        for b in 0..el.len() {
            for q in 0..pts.len() {
                let r = tab.jet(b, q);
                let g = geom.push_gradient(r.grad);
                let h = geom.push_hessian(r.hess);
                let t = geom.push_third([
                    tab.values[XXX][(b, q)],
                    tab.values[XXY][(b, q)],
                    tab.values[XYY][(b, q)],
                    tab.values[YYY][(b, q)],
                ]);
                let expect = [r.value, g[0], g[1], h[0], h[1], h[2], t[0], t[1], t[2], t[3]];
                for (d, e) in expect.iter().enumerate() {
                    assert!((p[d][(b, q)] - e).abs() < 1e-10 * (1.0 + e.abs()));
                }
            }
        }
    }
}
