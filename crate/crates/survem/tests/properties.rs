//! Property tests for the geometric and quadrature invariants that hold for
//! every admissible input, not just hand-picked cases.

use proptest::prelude::*;
use survem::quad::{
    dim_pk, gauss_legendre, gauss_lobatto, monomial_exponents, monomial_index,
    polygon_area_centroid, polygon_quadrature, ScaledMonomialBasis,
};

/// Strategy: a convex polygon from sorted angles on a circle, with all
/// angular gaps bounded away from zero so edges stay non-degenerate.
fn convex_polygon() -> impl Strategy<Value = Vec<[f64; 2]>> {
    (4usize..=10, 0.3f64..2.0, any::<u64>()).prop_filter_map(
        "angles too clustered",
        |(n, radius, seed)| {
            let mut angles: Vec<f64> = (0..n)
                .map(|i| {
                    let golden = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(i as u32);
                    (golden % 10_000) as f64 / 10_000.0 * std::f64::consts::TAU
                })
                .collect();
            angles.sort_by(f64::total_cmp);
            angles.dedup_by(|a, b| (*a - *b).abs() < 0.1);
            if angles.len() < 4 {
                return None;
            }
            Some(
                angles
                    .iter()
                    .map(|t| [radius * t.cos(), radius * t.sin()])
                    .collect(),
            )
        },
    )
}

proptest! {
    /// The shoelace area/centroid agree with the quadrature rule's zeroth
    /// and first moments on every convex polygon.
    #[test]
    fn area_and_centroid_match_the_quadrature_moments(verts in convex_polygon()) {
        let (area, centroid) = polygon_area_centroid(&verts);
        prop_assert!(area > 0.0);
        let rule = polygon_quadrature(&verts, 2).unwrap();
        let mass: f64 = rule.weights.iter().sum();
        let mx: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * p[0]).sum();
        let my: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * p[1]).sum();
        prop_assert!((mass - area).abs() <= 1e-12 * area.max(1.0));
        prop_assert!((mx / area - centroid[0]).abs() <= 1e-12);
        prop_assert!((my / area - centroid[1]).abs() <= 1e-12);
    }

    /// Graded-lexicographic monomial numbering is a bijection.
    #[test]
    fn monomial_numbering_round_trips(k in 0usize..=8) {
        let exps = monomial_exponents(k);
        prop_assert_eq!(exps.len(), dim_pk(k));
        for (idx, &(a1, a2)) in exps.iter().enumerate() {
            prop_assert_eq!(monomial_index(a1, a2), idx);
        }
    }

    /// Gauss-Legendre rules hit their stated degree of exactness: the
    /// integral of t^d over [-1, 1] is 0 for odd d and 2/(d+1) for even d.
    #[test]
    fn gauss_legendre_is_exact_to_its_degree(n in 1usize..=12) {
        let rule = gauss_legendre(n);
        prop_assert_eq!(rule.len(), n);
        for d in 0..=(2 * n - 1) {
            let quad: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&t, &w)| w * t.powi(d as i32))
                .sum();
            let exact = if d % 2 == 1 { 0.0 } else { 2.0 / (d as f64 + 1.0) };
            prop_assert!((quad - exact).abs() <= 1e-13, "n={}, degree {}", n, d);
        }
    }

    /// Gauss-Lobatto rules include both endpoints and integrate to the same
    /// exactness promise (2n - 3).
    #[test]
    fn gauss_lobatto_is_exact_to_its_degree(n in 2usize..=8) {
        let rule = gauss_lobatto(n).unwrap();
        prop_assert_eq!(rule.nodes[0], -1.0);
        prop_assert_eq!(rule.nodes[n - 1], 1.0);
        for d in 0..=(2 * n - 3) {
            let quad: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&t, &w)| w * t.powi(d as i32))
                .sum();
            let exact = if d % 2 == 1 { 0.0 } else { 2.0 / (d as f64 + 1.0) };
            prop_assert!((quad - exact).abs() <= 1e-13, "n={}, degree {}", n, d);
        }
    }

    /// Scaled monomials are bounded by 1 in magnitude at points within the
    /// scaling radius of the center, for every center and radius.
    #[test]
    fn scaled_monomials_stay_bounded_inside_their_ball(
        cx in -5.0f64..5.0,
        cy in -5.0f64..5.0,
        h in 0.01f64..10.0,
        ux in -1.0f64..1.0,
        uy in -1.0f64..1.0,
        k in 1usize..=4,
    ) {
        let basis = ScaledMonomialBasis::new(k, [cx, cy], h);
        let len = ux.hypot(uy);
        let clamp = if len > 1.0 { 1.0 / len } else { 1.0 };
        let p = [cx + h * ux * clamp, cy + h * uy * clamp];
        for (idx, value) in basis.eval(p).into_iter().enumerate() {
            prop_assert!(value.abs() <= 1.0 + 1e-12, "monomial {} = {}", idx, value);
        }
        prop_assert_eq!(basis.eval([cx, cy])[0], 1.0);
    }
}
