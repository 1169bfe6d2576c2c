#![allow(dead_code)]

use nalgebra::DMatrix;
use trimap::mesh::CellGeometry;
use trimap::refelem::{tabulate, Family, Jet, ReferenceElement};
use trimap::transform::{physical_functionals, scale_m, transform_matrix, TransformMatrix};

/// SplitMix64: deterministic stream for generating test geometry.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Random counter-clockwise triangle with minimum angle above ~10 degrees.
pub fn random_triangle(rng: &mut SplitMix) -> [[f64; 2]; 3] {
    loop {
        let v: [[f64; 2]; 3] = [
            [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)],
            [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)],
            [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)],
        ];
        let area = 0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]));
        let l = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let lmax = l(v[0], v[1]).max(l(v[1], v[2])).max(l(v[0], v[2]));
        if area > 0.1 * lmax * lmax && lmax > 0.2 {
            return v;
        }
    }
}

pub fn random_geometry(rng: &mut SplitMix) -> CellGeometry {
    let v = random_triangle(rng);
    let h = [rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)];
    CellGeometry::from_vertices(v, h).unwrap()
}

/// Jets at physical point `x` of the transformed basis `Σ_j M_ij F*(ψ̂_j)`,
/// via the chain rule written out component by component.
pub fn transformed_jets(
    companion: &ReferenceElement,
    m: &TransformMatrix,
    geom: &CellGeometry,
    x: [f64; 2],
) -> Vec<Jet> {
    let xh = geom.to_reference(x);
    let xh = [xh[0].clamp(0.0, 1.0), xh[1].clamp(0.0, 1.0)];
    let tab = tabulate(companion, &[xh], 2).unwrap();
    let j = &geom.jacobian; // j[(a, i)] = ∂x̂_a/∂x_i
    let ref_jets: Vec<Jet> = (0..tab.num_basis())
        .map(|b| {
            let r = tab.jet(b, 0);
            let g = [
                j[(0, 0)] * r.grad[0] + j[(1, 0)] * r.grad[1],
                j[(0, 1)] * r.grad[0] + j[(1, 1)] * r.grad[1],
            ];
            let hh = [[r.hess[0], r.hess[1]], [r.hess[1], r.hess[2]]];
            let mut h = [[0.0; 2]; 2];
            for (p, hp) in h.iter_mut().enumerate() {
                for (q, hpq) in hp.iter_mut().enumerate() {
                    for a in 0..2 {
                        for c in 0..2 {
                            *hpq += j[(a, p)] * hh[a][c] * j[(c, q)];
                        }
                    }
                }
            }
            Jet {
                value: r.value,
                grad: g,
                hess: [h[0][0], h[0][1], h[1][1]],
            }
        })
        .collect();
    (0..m.matrix.nrows())
        .map(|i| {
            let mut out = Jet::default();
            for (k, rj) in ref_jets.iter().enumerate() {
                let c = m.matrix[(i, k)];
                out.value += c * rj.value;
                for d in 0..2 {
                    out.grad[d] += c * rj.grad[d];
                }
                for d in 0..3 {
                    out.hess[d] += c * rj.hess[d];
                }
            }
            out
        })
        .collect()
}

/// Polynomial `Σ c x^a y^b` with analytic jets.
#[derive(Debug, Clone)]
pub struct Poly(pub Vec<(f64, i32, i32)>);

impl Poly {
    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.0.iter().map(|&(c, a, b)| c * x[0].powi(a) * x[1].powi(b)).sum()
    }

    pub fn jet(&self, x: [f64; 2]) -> Jet {
        let d = |a: i32, k: i32, t: f64| -> f64 {
            if a < k {
                0.0
            } else {
                (0..k).map(|i| (a - i) as f64).product::<f64>() * t.powi(a - k)
            }
        };
        let mut j = Jet::default();
        for &(c, a, b) in &self.0 {
            j.value += c * d(a, 0, x[0]) * d(b, 0, x[1]);
            j.grad[0] += c * d(a, 1, x[0]) * d(b, 0, x[1]);
            j.grad[1] += c * d(a, 0, x[0]) * d(b, 1, x[1]);
            j.hess[0] += c * d(a, 2, x[0]) * d(b, 0, x[1]);
            j.hess[1] += c * d(a, 1, x[0]) * d(b, 1, x[1]);
            j.hess[2] += c * d(a, 0, x[0]) * d(b, 2, x[1]);
        }
        j
    }

    /// A polynomial with every monomial of degree ≤ `deg`, pseudo-random coefficients.
    pub fn random(deg: i32, rng: &mut SplitMix) -> Self {
        let mut terms = Vec::new();
        for n in 0..=deg {
            for b in 0..=n {
                terms.push((rng.uniform(-1.0, 1.0), n - b, b));
            }
        }
        Poly(terms)
    }
}

/// The 66 points of the degree-10 lattice on the reference triangle.
pub fn reference_samples() -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    for j in 0..=10 {
        for i in 0..=(10 - j) {
            pts.push([i as f64 / 10.0, j as f64 / 10.0]);
        }
    }
    pts
}

/// `max |Φ(ψ) - I|` for the physical functionals applied to the mapped basis.
pub fn duality_error(family: Family, geom: &CellGeometry, scaled: bool) -> f64 {
    let companion = ReferenceElement::new(family.companion()).unwrap();
    let mut m = transform_matrix(family, geom);
    if scaled {
        m = scale_m(&m, geom);
    }
    let funcs = physical_functionals(family, geom);
    let n = funcs.len();
    let mut d = DMatrix::zeros(n, n);
    for (k, f) in funcs.iter().enumerate() {
        let jets = transformed_jets(&companion, &m, geom, f.point);
        for (i, jet) in jets.iter().enumerate() {
            d[(k, i)] = m.scaling[k] * f.apply(jet);
        }
    }
    (d - DMatrix::identity(n, n)).amax()
}

/// Largest pointwise error of the mapped interpolant of `poly` on the 66 sample points.
pub fn reproduction_error(family: Family, geom: &CellGeometry, poly: &Poly) -> f64 {
    let companion = ReferenceElement::new(family.companion()).unwrap();
    let m = scale_m(&transform_matrix(family, geom), geom);
    let funcs = physical_functionals(family, geom);
    let dofs: Vec<f64> = funcs
        .iter()
        .enumerate()
        .map(|(k, f)| m.scaling[k] * f.apply(&poly.jet(f.point)))
        .collect();
    reference_samples()
        .iter()
        .map(|&xh| {
            let x = geom.to_physical(xh);
            let jets = transformed_jets(&companion, &m, geom, x);
            let uh: f64 = jets.iter().zip(&dofs).map(|(j, d)| j.value * d).sum();
            (uh - poly.value(x)).abs()
        })
        .fold(0.0, f64::max)
}
