mod common;

use common::{duality_error, random_geometry, reference_samples, reproduction_error, transformed_jets, Poly, SplitMix};
use trimap::mesh::CellGeometry;
use trimap::quadrature::interval_rule;
use trimap::refelem::{tabulate, Family, ReferenceElement, EDGE_VERTICES};
use trimap::transform::{argyris_three_step, morley_three_step, morley_v, transform_matrix};

const FAMILIES: [Family; 5] = [
    Family::Lagrange(3),
    Family::Hermite,
    Family::Morley,
    Family::Argyris,
    Family::Bell,
];

#[test]
fn physical_duality_on_random_triangles() {
    for family in FAMILIES {
        let mut rng = SplitMix(7);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let g = random_geometry(&mut rng);
            worst = worst.max(duality_error(family, &g, false));
            worst = worst.max(duality_error(family, &g, true));
        }
        assert!(worst < 1e-8, "{family}: {worst:e}");
    }
}

#[test]
fn hermite_duality_on_skewed_triangle() {
    let g = CellGeometry::from_vertices([[0.0, 0.0], [1.5, 0.5], [0.8, 1.2]], [1.0; 3]).unwrap();
    assert!(duality_error(Family::Hermite, &g, false) < 1e-10);
}

#[test]
fn polynomial_reproduction_through_the_map() {
    for family in FAMILIES {
        let deg = family.reproduction_degree() as i32;
        let mut rng = SplitMix(11);
        for _ in 0..20 {
            let g = random_geometry(&mut rng);
            let p = Poly::random(deg, &mut rng);
            let err = reproduction_error(family, &g, &p);
            assert!(err < 1e-8, "{family}: {err:e}");
        }
    }
}

#[test]
fn argyris_reproduces_the_quintic_example() {
    let mut rng = SplitMix(3);
    let g = random_geometry(&mut rng);
    let p = Poly(vec![(1.0, 5, 0), (-3.0, 2, 3)]);
    assert!(reproduction_error(Family::Argyris, &g, &p) < 1e-8);
}

#[test]
fn morley_three_step_matches_closed_form_on_random_cells() {
    let mut rng = SplitMix(5);
    for _ in 0..100 {
        let g = random_geometry(&mut rng);
        let f = morley_three_step(&g);
        assert!((f.v() - morley_v(&g)).amax() < 1e-10);
    }
}

#[test]
fn argyris_selector_has_one_unit_per_row() {
    let mut rng = SplitMix(9);
    let f = argyris_three_step(&random_geometry(&mut rng));
    assert_eq!((f.d.nrows(), f.d.ncols()), (24, 21));
    for r in 0..f.e.nrows() {
        let nz: Vec<f64> = f.e.row(r).iter().copied().filter(|&x| x != 0.0).collect();
        assert_eq!(nz, vec![1.0]);
    }
}

#[test]
fn bell_identity_geometry_recovers_reference_basis() {
    let g = CellGeometry::reference();
    let bell = ReferenceElement::new(Family::Bell).unwrap();
    let arg = ReferenceElement::new(Family::Argyris).unwrap();
    let m = transform_matrix(Family::Bell, &g);
    let pts = reference_samples();
    let tb = tabulate(&bell, &pts, 0).unwrap();
    let ta = tabulate(&arg, &pts, 0).unwrap();
    let mapped = &m.matrix * &ta.values[0];
    assert!((mapped - &tb.values[0]).amax() < 1e-10);
}

#[test]
fn physical_bell_functions_have_cubic_normal_derivatives() {
    let arg = ReferenceElement::new(Family::Argyris).unwrap();
    let rule = interval_rule(8).unwrap();
    let mut rng = SplitMix(21);
    for _ in 0..10 {
        let g = random_geometry(&mut rng);
        let m = transform_matrix(Family::Bell, &g);
        for e in 0..3 {
            let (a, b) = EDGE_VERTICES[e];
            let n = g.normals[e];
            let mut modes = vec![0.0; 18];
            for (&s, w) in rule.iter() {
                let x = [
                    g.vertices[a][0] + s * (g.vertices[b][0] - g.vertices[a][0]),
                    g.vertices[a][1] + s * (g.vertices[b][1] - g.vertices[a][1]),
                ];
                let t = 2.0 * s - 1.0;
                let p4 = (35.0 * t.powi(4) - 30.0 * t * t + 3.0) / 8.0;
                for (i, jet) in transformed_jets(&arg, &m, &g, x).iter().enumerate() {
                    modes[i] += w * p4 * (n[0] * jet.grad[0] + n[1] * jet.grad[1]);
                }
            }
            assert!(modes.iter().all(|v| v.abs() < 1e-9), "{modes:?}");
        }
    }
}
