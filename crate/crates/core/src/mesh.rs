//! Triangulations of the unit square with edge connectivity, orientation
//! signs and per-cell affine geometry.
//!
//! Conventions: cells are counter-clockwise; local edge `i` is opposite local
//! vertex `i`; edges are stored with the lower global vertex first. A cell's
//! local orientation sign for an edge is `+1` when its lower-numbered local
//! endpoint is also the lower global vertex.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::refelem::EDGE_VERTICES;

/// Cells attached to an edge. `first` has the lower cell index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeCells {
    /// `(cell, local edge index)`
    pub first: (usize, usize),
    pub second: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 2]>,
    pub cells: Vec<[usize; 3]>,
    pub edges: Vec<[usize; 2]>,
    /// `(edge index, orientation sign)` per local edge.
    pub cell_edges: Vec<[(usize, i8); 3]>,
    pub edge_cells: Vec<EdgeCells>,
    pub boundary_edges: Vec<usize>,
    pub boundary_vertices: Vec<usize>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl TriangleMesh {
    /// Builds connectivity for counter-clockwise cells.
    pub fn from_cells(vertices: Vec<[f64; 2]>, cells: Vec<[usize; 3]>) -> Result<Self> {
        for (c, cell) in cells.iter().enumerate() {
            if cell.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("cell {c} references a missing vertex")));
            }
            let area = signed_area(vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]);
            if area <= 1e-14 {
                return Err(Error::DegenerateCell { cell: c, area });
            }
        }

        let mut lookup: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut edge_cells: Vec<EdgeCells> = Vec::new();
        let mut cell_edges = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let mut local = [(0usize, 1i8); 3];
            for (i, &(a, b)) in EDGE_VERTICES.iter().enumerate() {
                let (ga, gb) = (cell[a], cell[b]);
                let key = if ga < gb { [ga, gb] } else { [gb, ga] };
                let sign = if ga < gb { 1 } else { -1 };
                let e = match lookup.get(&key) {
                    Some(&e) => {
                        if edge_cells[e].second.is_some() {
                            return Err(Error::InvalidMesh(format!(
                                "edge {key:?} shared by more than two cells"
                            )));
                        }
                        edge_cells[e].second = Some((c, i));
                        e
                    }
                    None => {
                        let e = edges.len();
                        edges.push(key);
                        edge_cells.push(EdgeCells {
                            first: (c, i),
                            second: None,
                        });
                        lookup.insert(key, e);
                        e
                    }
                };
                local[i] = (e, sign);
            }
            cell_edges.push(local);
        }

        let boundary_edges: Vec<usize> = (0..edges.len()).filter(|&e| edge_cells[e].second.is_none()).collect();
        let mut on_boundary = vec![false; vertices.len()];
        for &e in &boundary_edges {
            on_boundary[edges[e][0]] = true;
            on_boundary[edges[e][1]] = true;
        }
        let boundary_vertices = (0..vertices.len()).filter(|&v| on_boundary[v]).collect();

        Ok(Self {
            vertices,
            cells,
            edges,
            cell_edges,
            edge_cells,
            boundary_edges,
            boundary_vertices,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_vertices(&self, cell: usize) -> [[f64; 2]; 3] {
        self.cells[cell].map(|v| self.vertices[v])
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_vertices(cell);
        signed_area(a, b, c)
    }

    pub fn is_boundary_edge(&self, edge: usize) -> bool {
        self.edge_cells[edge].second.is_none()
    }

    /// Copy with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.vertices {
            v[0] *= factor;
            v[1] *= factor;
        }
        out
    }

    /// Copy with cells listed in the order `perm` (new cell `i` = old `perm[i]`).
    pub fn permuted_cells(&self, perm: &[usize]) -> Result<Self> {
        let cells = perm.iter().map(|&c| self.cells[c]).collect();
        Self::from_cells(self.vertices.clone(), cells)
    }

    /// Plain-text export: `v x y` per vertex then `c i j k` per cell (0-based).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.17e} {:.17e}", v[0], v[1]);
        }
        for c in &self.cells {
            let _ = writeln!(s, "c {} {} {}", c[0], c[1], c[2]);
        }
        s
    }
}

/// `n × n` grid of the unit square, each square split along the diagonal
/// from `(i, j)` to `(i+1, j+1)`. Interior vertices are displaced by
/// `δx = (ε/n) sin(2πy) sin(πx)`, `δy = (ε/n) sin(2πx) sin(πy)`.
pub fn build_unit_square_mesh(n: usize, perturb: f64) -> Result<TriangleMesh> {
    if n == 0 {
        return Err(Error::InvalidMesh("grid size must be at least 1".into()));
    }
    if !(0.0..0.5).contains(&perturb) {
        return Err(Error::InvalidMesh(format!("perturbation {perturb} outside [0, 0.5)")));
    }
    let nf = n as f64;
    let amp = perturb / nf;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let x = i as f64 / nf;
            let y = j as f64 / nf;
            let interior = i > 0 && i < n && j > 0 && j < n;
            if interior && amp > 0.0 {
                let dx = amp * (2.0 * PI * y).sin() * (PI * x).sin();
                let dy = amp * (2.0 * PI * x).sin() * (PI * y).sin();
                vertices.push([x + dx, y + dy]);
            } else {
                vertices.push([x, y]);
            }
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            cells.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            cells.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriangleMesh::from_cells(vertices, cells)
}

/// Per-vertex characteristic size shared by every cell touching the vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSizeField(pub Vec<f64>);

impl VertexSizeField {
    pub fn get(&self, vertex: usize) -> f64 {
        self.0[vertex]
    }
}

/// `h(v)` = mean diameter of the cells incident to `v`.
pub fn vertex_size_field(mesh: &TriangleMesh) -> VertexSizeField {
    let mut sum = vec![0.0; mesh.num_vertices()];
    let mut count = vec![0usize; mesh.num_vertices()];
    for (c, cell) in mesh.cells.iter().enumerate() {
        let [a, b, d] = mesh.cell_vertices(c);
        let diam = [dist(b, d), dist(a, d), dist(a, b)].into_iter().fold(0.0, f64::max);
        for &v in cell {
            sum[v] += diam;
            count[v] += 1;
        }
    }
    VertexSizeField(
        sum.iter()
            .zip(&count)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect(),
    )
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Affine geometry of one cell. `jacobian` is `∂x̂/∂x` of the map from the
/// physical cell to the reference triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGeometry {
    pub vertices: [[f64; 2]; 3],
    pub jacobian: Matrix2<f64>,
    /// `∂x/∂x̂`; its columns are `v1 - v0` and `v2 - v0`.
    pub jacobian_inv: Matrix2<f64>,
    /// `|det ∂x/∂x̂|` = twice the cell area.
    pub det_jinv_abs: f64,
    /// Outward unit normals per local edge.
    pub normals: [[f64; 2]; 3],
    /// Unit tangents per local edge, from the lower to the higher local vertex.
    pub tangents: [[f64; 2]; 3],
    pub edge_lengths: [f64; 3],
    pub diameter: f64,
    pub vertex_h: [f64; 3],
}

impl CellGeometry {
    pub fn from_vertices(vertices: [[f64; 2]; 3], vertex_h: [f64; 3]) -> Result<Self> {
        let [v0, v1, v2] = vertices;
        let jinv = Matrix2::new(v1[0] - v0[0], v2[0] - v0[0], v1[1] - v0[1], v2[1] - v0[1]);
        let det = jinv.determinant();
        if det.abs() < 2e-14 {
            return Err(Error::DegenerateCell {
                cell: usize::MAX,
                area: 0.5 * det,
            });
        }
        let jacobian = jinv.try_inverse().ok_or(Error::Singular)?;
        let mut normals = [[0.0; 2]; 3];
        let mut tangents = [[0.0; 2]; 3];
        let mut edge_lengths = [0.0; 3];
        for (i, &(a, b)) in EDGE_VERTICES.iter().enumerate() {
            let d = [vertices[b][0] - vertices[a][0], vertices[b][1] - vertices[a][1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let t = [d[0] / len, d[1] / len];
            let mut n = [t[1], -t[0]];
            let mid = [
                0.5 * (vertices[a][0] + vertices[b][0]),
                0.5 * (vertices[a][1] + vertices[b][1]),
            ];
            let opp = vertices[i];
            if n[0] * (mid[0] - opp[0]) + n[1] * (mid[1] - opp[1]) < 0.0 {
                n = [-n[0], -n[1]];
            }
            normals[i] = n;
            tangents[i] = t;
            edge_lengths[i] = len;
        }
        let diameter = edge_lengths.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            vertices,
            jacobian,
            jacobian_inv: jinv,
            det_jinv_abs: det.abs(),
            normals,
            tangents,
            edge_lengths,
            diameter,
            vertex_h,
        })
    }

    /// The reference triangle mapped onto itself, with unit vertex sizes.
    pub fn reference() -> Self {
        Self::from_vertices(crate::refelem::REFERENCE_VERTICES, [1.0; 3]).expect("reference cell is valid")
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det_jinv_abs
    }

    pub fn to_physical(&self, xhat: [f64; 2]) -> [f64; 2] {
        let x = self.jacobian_inv * Vector2::new(xhat[0], xhat[1]);
        [self.vertices[0][0] + x[0], self.vertices[0][1] + x[1]]
    }

    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        let d = Vector2::new(x[0] - self.vertices[0][0], x[1] - self.vertices[0][1]);
        let r = self.jacobian * d;
        [r[0], r[1]]
    }

    /// Physical gradient from a reference gradient: `J^T ∇̂`.
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        let j = &self.jacobian;
        [j[(0, 0)] * g[0] + j[(1, 0)] * g[1], j[(0, 1)] * g[0] + j[(1, 1)] * g[1]]
    }

    /// Physical Hessian (Voigt xx, xy, yy) from a reference one: `J^T Ĥ J`.
    pub fn push_hessian(&self, h: [f64; 3]) -> [f64; 3] {
        let hm = Matrix2::new(h[0], h[1], h[1], h[2]);
        let p = self.jacobian.transpose() * hm * self.jacobian;
        [p[(0, 0)], p[(0, 1)], p[(1, 1)]]
    }

    /// Physical third derivatives `[xxx, xxy, xyy, yyy]` from reference ones.
    pub fn push_third(&self, t: [f64; 4]) -> [f64; 4] {
        let j = &self.jacobian;
        // Symmetric tensor entry T̂[a][b][c] from the 4 independent components.
        let that = |a: usize, b: usize, c: usize| t[a + b + c];
        let mut out = [0.0; 4];
        for (k, o) in out.iter_mut().enumerate() {
            // Output component with k y-indices: (x..x, y..y).
            let idx: [usize; 3] = match k {
                0 => [0, 0, 0],
                1 => [0, 0, 1],
                2 => [0, 1, 1],
                _ => [1, 1, 1],
            };
            let mut s = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        s += j[(a, idx[0])] * j[(b, idx[1])] * j[(c, idx[2])] * that(a, b, c);
                    }
                }
            }
            *o = s;
        }
        out
    }
}

pub fn cell_geometry(mesh: &TriangleMesh, cell: usize, sizes: &VertexSizeField) -> Result<CellGeometry> {
    let verts = mesh.cell_vertices(cell);
    let h = mesh.cells[cell].map(|v| sizes.get(v));
    CellGeometry::from_vertices(verts, h).map_err(|e| match e {
        Error::DegenerateCell { area, .. } => Error::DegenerateCell { cell, area },
        other => other,
    })
}
