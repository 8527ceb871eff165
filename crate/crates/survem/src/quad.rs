//! Scaled monomial bases and quadrature on segments, triangles, and polygons.
//!
//! Monomials are scaled and centered per cell, `m_a(x) = ((x - x_c)/h)^a1 * ((y - y_c)/h)^a2`,
//! ordered by total degree and, within a degree, by decreasing x-exponent.
//! Polygon rules are assembled by fanning the cell into triangles about its
//! centroid and collapsing each triangle onto a tensor-product Gauss rule, so
//! they are degree-exact by construction for star-shaped cells.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Dimension of the space of bivariate polynomials of total degree <= k.
pub fn dim_pk(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

/// Exponent pairs (a1, a2) of the monomial basis of degree <= k, graded order,
/// x-exponent decreasing within each degree: 1, x, y, x^2, xy, y^2, ...
pub fn monomial_exponents(k: usize) -> Vec<(u32, u32)> {
    let mut exps = Vec::with_capacity(dim_pk(k));
    for d in 0..=k as u32 {
        for b in 0..=d {
            exps.push((d - b, b));
        }
    }
    exps
}

/// Index of the monomial x^a1 y^a2 in the graded ordering.
pub fn monomial_index(a1: u32, a2: u32) -> usize {
    let d = (a1 + a2) as usize;
    d * (d + 1) / 2 + a2 as usize
}

/// Legendre polynomial P_n and its derivative at x, by the three-term recurrence.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for m in 2..=n {
        let mf = m as f64;
        let p_next = ((2.0 * mf - 1.0) * x * p - (mf - 1.0) * p_prev) / mf;
        p_prev = p;
        p = p_next;
    }
    // (1 - x^2) P_n' = n (P_{n-1} - x P_n)
    let dp = if (1.0 - x * x).abs() > 1e-14 {
        n as f64 * (p_prev - x * p) / (1.0 - x * x)
    } else {
        // endpoint value: P_n'(±1) = ±^{n+1} n(n+1)/2
        let sign = if x > 0.0 { 1.0 } else { (-1.0f64).powi(n as i32 + 1) };
        sign * (n * (n + 1)) as f64 / 2.0
    };
    (p, dp)
}

/// A quadrature rule on the reference segment [-1, 1].
#[derive(Debug, Clone)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// n-point Gauss-Legendre rule on [-1, 1]; exact for degree 2n - 1.
///
/// Nodes are found by Newton iteration from Chebyshev initial guesses and
/// mirrored about the origin so the rule is exactly symmetric.
pub fn gauss_legendre(n: usize) -> Rule1d {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x.abs();
        nodes[n - 1 - i] = x.abs();
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule1d { nodes, weights }
}

/// Range of supported Gauss-Lobatto node counts.
pub const LOBATTO_MIN: usize = 2;
pub const LOBATTO_MAX: usize = 8;

/// n-point Gauss-Lobatto rule on [-1, 1] including both endpoints; exact for
/// degree 2n - 3. Supported for 2 <= n <= 8.
pub fn gauss_lobatto(n: usize) -> Result<Rule1d> {
    if !(LOBATTO_MIN..=LOBATTO_MAX).contains(&n) {
        return Err(Error::UnsupportedOrder { n, min: LOBATTO_MIN, max: LOBATTO_MAX });
    }
    let m = n - 1;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    nodes[0] = -1.0;
    nodes[m] = 1.0;
    // Interior nodes are the roots of P'_{n-1}; Newton on P' with
    // P'' from the Legendre differential equation.
    for i in 1..=m / 2 {
        let mut x = -(std::f64::consts::PI * i as f64 / m as f64).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(m, x);
            let ddp = (2.0 * x * dp - (m * (m + 1)) as f64 * p) / (1.0 - x * x);
            let dx = dp / ddp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x.abs();
        nodes[m - i] = x.abs();
    }
    if m % 2 == 0 {
        nodes[m / 2] = 0.0;
    }
    for i in 0..n {
        let (p, _) = legendre_with_deriv(m, nodes[i]);
        weights[i] = 2.0 / ((n * m) as f64 * p * p);
    }
    Ok(Rule1d { nodes, weights })
}

/// Monomial basis of total degree <= `degree`, scaled by the cell diameter
/// and centered at the cell centroid.
#[derive(Debug, Clone)]
pub struct ScaledMonomialBasis {
    pub degree: usize,
    pub center: [f64; 2],
    pub h: f64,
    exps: Vec<(u32, u32)>,
}

impl ScaledMonomialBasis {
    pub fn new(degree: usize, center: [f64; 2], h: f64) -> Self {
        assert!(h > 0.0, "scaling length must be positive");
        Self { degree, center, h, exps: monomial_exponents(degree) }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponents(&self) -> &[(u32, u32)] {
        &self.exps
    }

    /// Local coordinates (x - x_c)/h of a point.
    #[inline]
    pub fn local(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.center[0]) / self.h, (p[1] - self.center[1]) / self.h]
    }

    /// Values of all basis monomials at `p`, written into `out`.
    pub fn eval_into(&self, p: [f64; 2], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        let [xi, eta] = self.local(p);
        let mut xp = [1.0f64; 5];
        let mut yp = [1.0f64; 5];
        for d in 1..=self.degree {
            xp[d] = xp[d - 1] * xi;
            yp[d] = yp[d - 1] * eta;
        }
        for (i, &(a, b)) in self.exps.iter().enumerate() {
            out[i] = xp[a as usize] * yp[b as usize];
        }
    }

    pub fn eval(&self, p: [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(p, &mut out);
        out
    }

    /// Values and gradients of all basis monomials at `p`.
    pub fn eval_with_grad_into(&self, p: [f64; 2], vals: &mut [f64], gx: &mut [f64], gy: &mut [f64]) {
        self.eval_into(p, vals);
        let [xi, eta] = self.local(p);
        let mut xp = [1.0f64; 5];
        let mut yp = [1.0f64; 5];
        for d in 1..=self.degree {
            xp[d] = xp[d - 1] * xi;
            yp[d] = yp[d - 1] * eta;
        }
        for (i, &(a, b)) in self.exps.iter().enumerate() {
            gx[i] = if a == 0 { 0.0 } else { a as f64 * xp[a as usize - 1] * yp[b as usize] / self.h };
            gy[i] = if b == 0 { 0.0 } else { b as f64 * xp[a as usize] * yp[b as usize - 1] / self.h };
        }
    }

    /// Expansion of the Laplacian of basis monomial `idx` in the same basis:
    /// at most two (index, coefficient) pairs, all of degree |alpha| - 2.
    pub fn laplacian_in_basis(&self, idx: usize) -> Vec<(usize, f64)> {
        let (a, b) = self.exps[idx];
        let s = 1.0 / (self.h * self.h);
        let mut terms = Vec::with_capacity(2);
        if a >= 2 {
            terms.push((monomial_index(a - 2, b), (a * (a - 1)) as f64 * s));
        }
        if b >= 2 {
            terms.push((monomial_index(a, b - 2), (b * (b - 1)) as f64 * s));
        }
        terms
    }

    /// Expansion of d/dx_dir of basis monomial `idx` in the same basis.
    pub fn deriv_in_basis(&self, idx: usize, dir: usize) -> Option<(usize, f64)> {
        let (a, b) = self.exps[idx];
        match dir {
            0 if a >= 1 => Some((monomial_index(a - 1, b), a as f64 / self.h)),
            1 if b >= 1 => Some((monomial_index(a, b - 1), b as f64 / self.h)),
            _ => None,
        }
    }
}

/// A quadrature rule over a two-dimensional region.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integrate a scalar function over the region covered by the rule.
    pub fn integrate(&self, mut f: impl FnMut([f64; 2]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }
}

fn signed_area_triangle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

/// Append a rule exact for total degree `degree` on triangle (a, b, c).
///
/// The reference triangle is collapsed onto the unit square (Duffy transform),
/// so a tensor Gauss-Legendre rule integrates any bivariate polynomial of the
/// requested degree exactly.
pub fn triangle_rule_into(
    a: [f64; 2],
    b: [f64; 2],
    c: [f64; 2],
    degree: usize,
    points: &mut Vec<[f64; 2]>,
    weights: &mut Vec<f64>,
) {
    let n_xi = (degree + 3) / 2; // integrand degree + 1 in the collapsed direction
    let n_eta = (degree + 2) / 2;
    let rx = gauss_legendre(n_xi.max(1));
    let re = gauss_legendre(n_eta.max(1));
    let jac = 2.0 * signed_area_triangle(a, b, c);
    for (&xr, &wx) in rx.nodes.iter().zip(&rx.weights) {
        let xi = 0.5 * (xr + 1.0);
        for (&er, &we) in re.nodes.iter().zip(&re.weights) {
            let eta = 0.5 * (er + 1.0);
            // reference coordinates on the unit triangle
            let u = xi;
            let v = eta * (1.0 - xi);
            let w = 0.25 * wx * we * (1.0 - xi) * jac;
            points.push([
                a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]),
                a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
            ]);
            weights.push(w);
        }
    }
}

/// Shoelace area and centroid of a simple polygon with ccw vertices.
pub fn polygon_area_centroid(verts: &[[f64; 2]]) -> (f64, [f64; 2]) {
    let n = verts.len();
    let mut area2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let p = verts[i];
        let q = verts[(i + 1) % n];
        let cross = p[0] * q[1] - q[0] * p[1];
        area2 += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    let area = 0.5 * area2;
    (area, [cx / (3.0 * area2), cy / (3.0 * area2)])
}

/// Quadrature rule exact for polynomials of total degree <= `target_degree`
/// on a polygon star-shaped with respect to its centroid. Weights are positive
/// and sum to the polygon area.
pub fn polygon_quadrature(verts: &[[f64; 2]], target_degree: usize) -> Result<QuadratureRule> {
    if verts.len() < 3 {
        return Err(Error::Geometry(format!("polygon needs >= 3 vertices, got {}", verts.len())));
    }
    let (area, centroid) = polygon_area_centroid(verts);
    if !(area > 0.0) || !area.is_finite() {
        return Err(Error::Geometry(format!("polygon has non-positive area {area}")));
    }
    let n = verts.len();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for i in 0..n {
        let p = verts[i];
        let q = verts[(i + 1) % n];
        let tri_area = signed_area_triangle(centroid, p, q);
        if tri_area <= 0.0 {
            return Err(Error::Geometry(
                "polygon is not star-shaped with respect to its centroid".into(),
            ));
        }
        triangle_rule_into(centroid, p, q, target_degree, &mut points, &mut weights);
    }
    Ok(QuadratureRule { points, weights, exact_degree: target_degree })
}

/// Gram matrix H[i][j] = integral of m_i * m_j under the given rule.
pub fn monomial_mass_matrix(basis: &ScaledMonomialBasis, rule: &QuadratureRule) -> DMatrix<f64> {
    let nk = basis.len();
    let mut h = DMatrix::zeros(nk, nk);
    let mut vals = vec![0.0; nk];
    for (&p, &w) in rule.points.iter().zip(&rule.weights) {
        basis.eval_into(p, &mut vals);
        for i in 0..nk {
            let wv = w * vals[i];
            for j in i..nk {
                h[(i, j)] += wv * vals[j];
            }
        }
    }
    for i in 0..nk {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
    h
}
