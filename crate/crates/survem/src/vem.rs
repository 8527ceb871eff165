//! Per-element virtual element construction.
//!
//! For one polygonal cell and order `k` in 1..=4 this module builds the
//! degree-of-freedom layout, the elliptic projector onto degree-k
//! polynomials, the orthogonal (L2) projectors of the function and of its
//! gradient, and from those the stabilized local stiffness, advection,
//! reaction, and load contributions of the chart-form PDE
//! −∇·(K∇u) + w̃·∇u + γ̃u = √(det G)·f with K = √(det G)·G⁻¹ diagonal.
//!
//! Degrees of freedom: vertex values; values at the k−1 interior
//! Gauss–Lobatto nodes of each edge; cell moments (1/|P|)∫ v·m against the
//! scaled monomials of degree ≤ k−2. Every projector entry is a function of
//! these DOFs and the cell geometry alone.

use nalgebra::{DMatrix, DVector};

use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::quad::{
    dim_pk, gauss_lobatto, polygon_area_centroid, polygon_quadrature, ScaledMonomialBasis,
    QuadratureRule,
};

/// Stabilization recipes for the non-polynomial remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabKind {
    /// identity weighting of DOF residuals, scaled by trace(A)/dim
    DofiDofi,
    /// consistency-diagonal weighting of DOF residuals
    DRecipe,
}

impl StabKind {
    /// Default policy: the diagonal recipe for high orders, the plain DOF
    /// product otherwise.
    pub fn default_for_order(k: usize) -> StabKind {
        if k >= 3 {
            StabKind::DRecipe
        } else {
            StabKind::DofiDofi
        }
    }
}

/// Index bookkeeping for the local DOFs of one cell.
#[derive(Debug, Clone, Copy)]
pub struct DofLayout {
    pub k: usize,
    pub n_vertices: usize,
    /// interior Gauss–Lobatto DOFs per edge (= k − 1)
    pub per_edge: usize,
    pub n_moments: usize,
    pub total: usize,
}

impl DofLayout {
    pub fn new(n_vertices: usize, k: usize) -> Result<Self> {
        if !(1..=4).contains(&k) {
            return Err(Error::UnsupportedOrder { n: k, min: 1, max: 4 });
        }
        let per_edge = k - 1;
        let n_moments = (k - 1) * k / 2;
        Ok(DofLayout {
            k,
            n_vertices,
            per_edge,
            n_moments,
            total: n_vertices + n_vertices * per_edge + n_moments,
        })
    }

    pub fn vertex_dof(&self, i: usize) -> usize {
        debug_assert!(i < self.n_vertices);
        i
    }

    /// DOF of the `slot`-th interior Gauss–Lobatto node (ordered from the
    /// edge's first vertex) of edge `e` = (v_e, v_{e+1}).
    pub fn edge_dof(&self, e: usize, slot: usize) -> usize {
        debug_assert!(e < self.n_vertices && slot < self.per_edge);
        self.n_vertices + e * self.per_edge + slot
    }

    /// DOF of the moment against the `m`-th scaled monomial (degree ≤ k−2).
    pub fn moment_dof(&self, m: usize) -> usize {
        debug_assert!(m < self.n_moments);
        self.n_vertices + self.n_vertices * self.per_edge + m
    }
}

/// Interior Gauss–Lobatto nodes of the segment a→b for order k (k−1 nodes).
pub fn edge_interior_nodes(a: [f64; 2], b: [f64; 2], k: usize) -> Vec<[f64; 2]> {
    let gl = gauss_lobatto(k + 1).expect("orders 1..=4 stay within the Lobatto table");
    gl.nodes[1..k]
        .iter()
        .map(|&t| {
            let s = 0.5 * (t + 1.0);
            [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
        })
        .collect()
}

/// All projection operators of one cell, in scaled-monomial coordinates.
#[derive(Debug, Clone)]
pub struct LocalProjectors {
    pub layout: DofLayout,
    pub basis: ScaledMonomialBasis,
    pub verts: Vec<[f64; 2]>,
    pub area: f64,
    pub centroid: [f64; 2],
    pub diameter: f64,
    /// cell quadrature of degree 2k + 4, shared by all forms
    pub rule: QuadratureRule,
    /// DOFs of the scaled monomials, total × N_k
    pub d: DMatrix<f64>,
    /// gradient-pairing functionals, N_k × total (constant row replaced by
    /// the boundary average)
    pub b: DMatrix<f64>,
    /// ∫∇m_α·∇m_β with the boundary-average constant row, N_k × N_k
    pub g_proj: DMatrix<f64>,
    /// elliptic projector onto ℙ_k, N_k × total
    pub pi_nabla: DMatrix<f64>,
    /// monomial mass matrix ∫ m_α m_β, N_k × N_k
    pub h_mass: DMatrix<f64>,
    /// L2 projector onto ℙ_k, N_k × total
    pub pi0_k: DMatrix<f64>,
    /// L2 projector onto ℙ_{k−1}, N_{k−1} × total
    pub pi0_km1: DMatrix<f64>,
    /// components of the L2-projected gradient, each N_{k−1} × total
    pub pi0_grad: [DMatrix<f64>; 2],
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Build every projector of the cell `verts` (counterclockwise) at order k.
/// `cell` only labels errors.
pub fn projectors(verts: &[[f64; 2]], k: usize, cell: usize) -> Result<LocalProjectors> {
    let n = verts.len();
    let layout = DofLayout::new(n, k)?;
    let nk = dim_pk(k);
    let nkm1 = dim_pk(k - 1);
    let nkm2 = if k >= 2 { dim_pk(k - 2) } else { 0 };

    let (area, centroid) = polygon_area_centroid(verts);
    if area <= 0.0 {
        return Err(Error::Geometry(format!("cell {cell} is not counterclockwise")));
    }
    let mut diameter = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            diameter = diameter.max((verts[i][0] - verts[j][0]).hypot(verts[i][1] - verts[j][1]));
        }
    }
    let basis = ScaledMonomialBasis::new(k, centroid, diameter);
    let rule = polygon_quadrature(verts, 2 * k + 4)?;

    let gl = gauss_lobatto(k + 1)?;
    let perimeter: f64 = (0..n)
        .map(|i| {
            let a = verts[i];
            let b = verts[(i + 1) % n];
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .sum();

    // D: DOFs of every monomial
    let mut d = DMatrix::zeros(layout.total, nk);
    let mut vals = vec![0.0; nk];
    for i in 0..n {
        basis.eval_into(verts[i], &mut vals);
        for (alpha, &v) in vals.iter().enumerate() {
            d[(layout.vertex_dof(i), alpha)] = v;
        }
    }
    for e in 0..n {
        let a = verts[e];
        let b = verts[(e + 1) % n];
        for (slot, node) in edge_interior_nodes(a, b, k).into_iter().enumerate() {
            basis.eval_into(node, &mut vals);
            for (alpha, &v) in vals.iter().enumerate() {
                d[(layout.edge_dof(e, slot), alpha)] = v;
            }
        }
    }
    if layout.n_moments > 0 {
        // moment DOF m of monomial m_alpha = (1/|P|) ∫ m_m m_alpha
        let mut mom = DMatrix::<f64>::zeros(layout.n_moments, nk);
        for (p, &w) in rule.points.iter().zip(rule.weights.iter()) {
            basis.eval_into(*p, &mut vals);
            for m in 0..layout.n_moments {
                for alpha in 0..nk {
                    mom[(m, alpha)] += w * vals[m] * vals[alpha];
                }
            }
        }
        for m in 0..layout.n_moments {
            for alpha in 0..nk {
                d[(layout.moment_dof(m), alpha)] = mom[(m, alpha)] / area;
            }
        }
    }

    // B row α: v ↦ ∫∇m_α·∇v = −∫(Δm_α)v + ∮(∇m_α·n)v
    let mut b_mat = DMatrix::zeros(nk, layout.total);
    for alpha in 1..nk {
        for (beta, coeff) in basis.laplacian_in_basis(alpha) {
            debug_assert!(beta < nkm2);
            b_mat[(alpha, layout.moment_dof(beta))] -= coeff * area;
        }
    }
    let mut gx = vec![0.0; nk];
    let mut gy = vec![0.0; nk];
    for e in 0..n {
        let a = verts[e];
        let bb = verts[(e + 1) % n];
        let len = (bb[0] - a[0]).hypot(bb[1] - a[1]);
        let nrm = [(bb[1] - a[1]) / len, -(bb[0] - a[0]) / len];
        for (q, &t) in gl.nodes.iter().enumerate() {
            let s = 0.5 * (t + 1.0);
            let p = [a[0] + s * (bb[0] - a[0]), a[1] + s * (bb[1] - a[1])];
            let dof = if q == 0 {
                layout.vertex_dof(e)
            } else if q == k {
                layout.vertex_dof((e + 1) % n)
            } else {
                layout.edge_dof(e, q - 1)
            };
            let w = 0.5 * len * gl.weights[q];
            basis.eval_with_grad_into(p, &mut vals, &mut gx, &mut gy);
            for alpha in 1..nk {
                b_mat[(alpha, dof)] += w * (gx[alpha] * nrm[0] + gy[alpha] * nrm[1]);
            }
            // constant row: boundary average (1/|∂P|) ∮ v
            b_mat[(0, dof)] += w / perimeter;
        }
    }

    // G: gradient Gram with the same constant-row replacement
    let mut g_proj = DMatrix::zeros(nk, nk);
    for (p, &w) in rule.points.iter().zip(rule.weights.iter()) {
        basis.eval_with_grad_into(*p, &mut vals, &mut gx, &mut gy);
        for alpha in 1..nk {
            for beta in 0..nk {
                g_proj[(alpha, beta)] += w * (gx[alpha] * gx[beta] + gy[alpha] * gy[beta]);
            }
        }
    }
    for e in 0..n {
        let a = verts[e];
        let bb = verts[(e + 1) % n];
        let len = (bb[0] - a[0]).hypot(bb[1] - a[1]);
        for (q, &t) in gl.nodes.iter().enumerate() {
            let s = 0.5 * (t + 1.0);
            let p = [a[0] + s * (bb[0] - a[0]), a[1] + s * (bb[1] - a[1])];
            basis.eval_into(p, &mut vals);
            let w = 0.5 * len * gl.weights[q];
            for beta in 0..nk {
                g_proj[(0, beta)] += w * vals[beta] / perimeter;
            }
        }
    }

    let cond = condition_estimate(&g_proj);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::SingularProjector { cell, cond });
    }
    let g_lu = g_proj.clone().lu();
    let pi_nabla = g_lu
        .solve(&b_mat)
        .ok_or(Error::SingularProjector { cell, cond })?;

    // H and the computable moment rows
    let mut h_mass = DMatrix::zeros(nk, nk);
    for (p, &w) in rule.points.iter().zip(rule.weights.iter()) {
        basis.eval_into(*p, &mut vals);
        for alpha in 0..nk {
            for beta in alpha..nk {
                h_mass[(alpha, beta)] += w * vals[alpha] * vals[beta];
            }
        }
    }
    for alpha in 0..nk {
        for beta in 0..alpha {
            h_mass[(alpha, beta)] = h_mass[(beta, alpha)];
        }
    }
    let h_pin = &h_mass * &pi_nabla;
    let mut c_mat = DMatrix::zeros(nk, layout.total);
    for alpha in 0..nk {
        if alpha < nkm2 {
            c_mat[(alpha, layout.moment_dof(alpha))] = area;
        } else {
            for j in 0..layout.total {
                c_mat[(alpha, j)] = h_pin[(alpha, j)];
            }
        }
    }
    let h_lu = h_mass.clone().lu();
    let pi0_k = h_lu
        .solve(&c_mat)
        .ok_or(Error::SingularProjector { cell, cond: condition_estimate(&h_mass) })?;
    let h_km1 = h_mass.view((0, 0), (nkm1, nkm1)).into_owned();
    let h_km1_lu = h_km1.clone().lu();
    let pi0_km1 = h_km1_lu
        .solve(&c_mat.view((0, 0), (nkm1, layout.total)).into_owned())
        .ok_or(Error::SingularProjector { cell, cond: condition_estimate(&h_km1) })?;

    // gradient projection: ∫(Π∇v)_d m_β = −∫ v ∂_d m_β + ∮ v n_d m_β
    let mut pi0_grad = [DMatrix::zeros(nkm1, layout.total), DMatrix::zeros(nkm1, layout.total)];
    for dir in 0..2 {
        let mut r = DMatrix::zeros(nkm1, layout.total);
        for beta in 0..nkm1 {
            if let Some((gamma, coeff)) = basis.deriv_in_basis(beta, dir) {
                debug_assert!(gamma < nkm2.max(1));
                if layout.n_moments > 0 {
                    r[(beta, layout.moment_dof(gamma))] -= coeff * area;
                }
            }
        }
        for e in 0..n {
            let a = verts[e];
            let bb = verts[(e + 1) % n];
            let len = (bb[0] - a[0]).hypot(bb[1] - a[1]);
            let nrm = [(bb[1] - a[1]) / len, -(bb[0] - a[0]) / len];
            for (q, &t) in gl.nodes.iter().enumerate() {
                let s = 0.5 * (t + 1.0);
                let p = [a[0] + s * (bb[0] - a[0]), a[1] + s * (bb[1] - a[1])];
                let dof = if q == 0 {
                    layout.vertex_dof(e)
                } else if q == k {
                    layout.vertex_dof((e + 1) % n)
                } else {
                    layout.edge_dof(e, q - 1)
                };
                let w = 0.5 * len * gl.weights[q] * nrm[dir];
                basis.eval_into(p, &mut vals);
                for beta in 0..nkm1 {
                    r[(beta, dof)] += w * vals[beta];
                }
            }
        }
        pi0_grad[dir] = h_km1_lu
            .solve(&r)
            .ok_or(Error::SingularProjector { cell, cond: condition_estimate(&h_km1) })?;
    }

    Ok(LocalProjectors {
        layout,
        basis,
        verts: verts.to_vec(),
        area,
        centroid,
        diameter,
        rule,
        d,
        b: b_mat,
        g_proj,
        pi_nabla,
        h_mass,
        pi0_k,
        pi0_km1,
        pi0_grad,
    })
}

/// DOF vector of the interpolant of a smooth function (moments by cell
/// quadrature).
pub fn dof_vector_of(proj: &LocalProjectors, f: impl Fn([f64; 2]) -> f64) -> DVector<f64> {
    let layout = proj.layout;
    let n = layout.n_vertices;
    let k = layout.k;
    let mut dofs = DVector::zeros(layout.total);
    for i in 0..n {
        dofs[layout.vertex_dof(i)] = f(proj.verts[i]);
    }
    for e in 0..n {
        let a = proj.verts[e];
        let b = proj.verts[(e + 1) % n];
        for (slot, node) in edge_interior_nodes(a, b, k).into_iter().enumerate() {
            dofs[layout.edge_dof(e, slot)] = f(node);
        }
    }
    if layout.n_moments > 0 {
        let mut vals = vec![0.0; proj.basis.len()];
        for (p, &w) in proj.rule.points.iter().zip(proj.rule.weights.iter()) {
            proj.basis.eval_into(*p, &mut vals);
            let fv = f(*p);
            for m in 0..layout.n_moments {
                dofs[layout.moment_dof(m)] += w * fv * vals[m] / proj.area;
            }
        }
    }
    dofs
}

/// Stabilization matrix S acting on the DOF residual (I − D·Π∇).
pub fn stabilization(proj: &LocalProjectors, stab: StabKind, a_cons: &DMatrix<f64>) -> DMatrix<f64> {
    let total = proj.layout.total;
    let residual = DMatrix::identity(total, total) - &proj.d * &proj.pi_nabla;
    match stab {
        StabKind::DofiDofi => {
            let tau = a_cons.trace() / total as f64;
            tau * residual.transpose() * &residual
        }
        StabKind::DRecipe => {
            let max_diag = (0..total).map(|i| a_cons[(i, i)]).fold(0.0f64, f64::max);
            let floor = 1e-12 * max_diag;
            let mut weighted = residual.clone();
            for i in 0..total {
                let w = a_cons[(i, i)].max(floor);
                for j in 0..total {
                    weighted[(i, j)] *= w;
                }
            }
            residual.transpose() * weighted
        }
    }
}

/// Stabilized local matrices of the chart-form PDE.
#[derive(Debug, Clone)]
pub struct LocalForms {
    /// consistency + stabilization diffusion matrix
    pub a: DMatrix<f64>,
    /// consistency part alone
    pub a_cons: DMatrix<f64>,
    /// stabilization part alone
    pub s: DMatrix<f64>,
    /// advection matrix (rows test, columns trial)
    pub badv: DMatrix<f64>,
    /// reaction matrix
    pub c_react: DMatrix<f64>,
    pub stab_kind: StabKind,
}

/// Assemble the local forms by sampling the PDE coefficients at the cell's
/// quadrature points.
pub fn local_forms(
    proj: &LocalProjectors,
    chart: &Chart,
    w_hat: [f64; 2],
    gamma: f64,
    stab: StabKind,
) -> Result<LocalForms> {
    let nkm1 = dim_pk(proj.layout.k - 1);
    let total = proj.layout.total;
    let has_adv = w_hat != [0.0, 0.0];
    let has_react = gamma != 0.0;

    let mut m_k11 = DMatrix::zeros(nkm1, nkm1);
    let mut m_k22 = DMatrix::zeros(nkm1, nkm1);
    let mut m_w = [DMatrix::zeros(nkm1, nkm1), DMatrix::zeros(nkm1, nkm1)];
    let mut m_gamma = DMatrix::zeros(nkm1, nkm1);
    let mut vals = vec![0.0; proj.basis.len()];
    for (p, &w) in proj.rule.points.iter().zip(proj.rule.weights.iter()) {
        let coeff = chart.pde_coefficients_at(*p, w_hat, gamma)?;
        proj.basis.eval_into(*p, &mut vals);
        for alpha in 0..nkm1 {
            for beta in 0..nkm1 {
                let mm = w * vals[alpha] * vals[beta];
                m_k11[(alpha, beta)] += mm * coeff.k11;
                m_k22[(alpha, beta)] += mm * coeff.k22;
                if has_adv {
                    m_w[0][(alpha, beta)] += mm * coeff.w_tilde[0];
                    m_w[1][(alpha, beta)] += mm * coeff.w_tilde[1];
                }
                if has_react {
                    m_gamma[(alpha, beta)] += mm * coeff.gamma_tilde;
                }
            }
        }
    }

    let ex = &proj.pi0_grad[0];
    let ey = &proj.pi0_grad[1];
    let a_cons = ex.transpose() * &m_k11 * ex + ey.transpose() * &m_k22 * ey;
    let s = stabilization(proj, stab, &a_cons);
    let a = &a_cons + &s;
    let badv = if has_adv {
        proj.pi0_km1.transpose() * (&m_w[0] * ex + &m_w[1] * ey)
    } else {
        DMatrix::zeros(total, total)
    };
    let c_react = if has_react {
        proj.pi0_km1.transpose() * &m_gamma * &proj.pi0_km1
    } else {
        DMatrix::zeros(total, total)
    };
    Ok(LocalForms { a, a_cons, s, badv, c_react, stab_kind: stab })
}

/// Local load vector: ∫ √(det G) f (Π0_k φ_i) by quadrature.
pub fn local_load(
    proj: &LocalProjectors,
    chart: &Chart,
    f: &dyn Fn([f64; 2]) -> Result<f64>,
) -> Result<DVector<f64>> {
    let nk = proj.basis.len();
    let mut f_mom = DVector::zeros(nk);
    let mut vals = vec![0.0; nk];
    for (p, &w) in proj.rule.points.iter().zip(proj.rule.weights.iter()) {
        let weight = chart.pde_coefficients_at(*p, [0.0, 0.0], 0.0)?.weight;
        let fv = f(*p)?;
        proj.basis.eval_into(*p, &mut vals);
        for alpha in 0..nk {
            f_mom[alpha] += w * weight * fv * vals[alpha];
        }
    }
    Ok(proj.pi0_k.transpose() * f_mom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::Domain;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_star_polygon(rng: &mut impl Rng, n: usize) -> Vec<[f64; 2]> {
        let base: f64 = rng.gen_range(0.3..3.0);
        let mut angles: Vec<f64> = (0..n)
            .map(|i| std::f64::consts::TAU * i as f64 / n as f64 + rng.gen_range(-0.2..0.2))
            .collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cx = rng.gen_range(-2.0..2.0);
        let cy = rng.gen_range(-2.0..2.0);
        angles
            .iter()
            .map(|&t| {
                let r = base * rng.gen_range(0.6..1.0);
                [cx + r * t.cos(), cy + r * t.sin()]
            })
            .collect()
    }

    fn unit_square() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    }

    /// star polygon contained in (0,1)² so Flat-chart coefficients can be
    /// sampled on it
    fn random_polygon_in_unit_square(rng: &mut impl Rng, n: usize) -> Vec<[f64; 2]> {
        let base: f64 = rng.gen_range(0.1..0.35);
        let mut angles: Vec<f64> = (0..n)
            .map(|i| std::f64::consts::TAU * i as f64 / n as f64 + rng.gen_range(-0.2..0.2))
            .collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cx = rng.gen_range(0.4..0.6);
        let cy = rng.gen_range(0.4..0.6);
        angles
            .iter()
            .map(|&t| {
                let r = base * rng.gen_range(0.6..1.0);
                [cx + r * t.cos(), cy + r * t.sin()]
            })
            .collect()
    }

    fn mat_scale(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }

    #[test]
    fn dof_layout_counts() {
        let l = DofLayout::new(3, 1).unwrap();
        assert_eq!((l.per_edge, l.n_moments, l.total), (0, 0, 3));
        let l = DofLayout::new(3, 2).unwrap();
        assert_eq!((l.per_edge, l.n_moments, l.total), (1, 1, 7));
        let l = DofLayout::new(5, 4).unwrap();
        assert_eq!((l.per_edge, l.n_moments, l.total), (3, 6, 26));
        assert!(matches!(
            DofLayout::new(3, 5),
            Err(Error::UnsupportedOrder { n: 5, min: 1, max: 4 })
        ));
    }

    #[test]
    fn gradient_gram_factors_through_dofs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 1..=4 {
            for _ in 0..6 {
                let n = rng.gen_range(3..9);
                let poly = random_star_polygon(&mut rng, n);
                let proj = projectors(&poly, k, 0).unwrap();
                let bd = &proj.b * &proj.d;
                let scale = mat_scale(&proj.g_proj);
                assert!(
                    mat_scale(&(&bd - &proj.g_proj)) <= 1e-11 * scale,
                    "B·D != G at k={k} on {n}-gon"
                );
            }
        }
    }

    #[test]
    fn projectors_reproduce_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for k in 1..=4 {
            for _ in 0..6 {
                let n = rng.gen_range(3..11);
                let poly = random_star_polygon(&mut rng, n);
                let proj = projectors(&poly, k, 0).unwrap();
                let nk = dim_pk(k);
                let id = DMatrix::<f64>::identity(nk, nk);
                let r1 = &proj.pi_nabla * &proj.d - &id;
                let r2 = &proj.pi0_k * &proj.d - &id;
                assert!(mat_scale(&r1) <= 1e-9, "elliptic projector residual at k={k}");
                assert!(mat_scale(&r2) <= 1e-9, "L2 projector residual at k={k}");
            }
        }
    }

    #[test]
    fn projected_gradient_of_interpolants_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for k in 1..=4usize {
            let poly = random_star_polygon(&mut rng, 7);
            let proj = projectors(&poly, k, 0).unwrap();
            let nk = dim_pk(k);
            let nkm1 = dim_pk(k - 1);
            // interpolants of every monomial: columns of D
            for alpha in 0..nk {
                let dof = proj.d.column(alpha).into_owned();
                for dir in 0..2 {
                    let got = &proj.pi0_grad[dir] * &dof;
                    let mut want = DVector::zeros(nkm1);
                    if let Some((gamma, coeff)) = proj.basis.deriv_in_basis(alpha, dir) {
                        want[gamma] = coeff;
                    }
                    assert!(
                        (got - want).amax() <= 1e-10 / proj.diameter.min(1.0),
                        "gradient projection wrong for monomial {alpha}, dir {dir}, k={k}"
                    );
                }
            }
            // constant DOF vector: projected gradient vanishes
            let ones = dof_vector_of(&proj, |_| 1.0);
            let tol = 1e-11 * (1.0 / proj.diameter).max(1.0);
            for dir in 0..2 {
                assert!((&proj.pi0_grad[dir] * &ones).amax() <= tol);
            }
        }
    }

    #[test]
    fn moment_dofs_survive_the_l2_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let poly = random_star_polygon(&mut rng, 5);
        let proj = projectors(&poly, 2, 0).unwrap();
        let v = DVector::from_fn(proj.layout.total, |_, _| rng.gen_range(-1.0..1.0));
        // (1/|P|)∫(Π0_k v)·m_0 must equal the m_0 moment DOF
        let coords = &proj.pi0_k * &v;
        let moments = &proj.h_mass * coords;
        assert_abs_diff_eq!(
            moments[0] / proj.area,
            v[proj.layout.moment_dof(0)],
            epsilon = 1e-12
        );
    }

    #[test]
    fn unit_square_order1_matches_hand_computed_matrices() {
        let proj = projectors(&unit_square(), 1, 0).unwrap();
        let h = 2.0f64.sqrt();
        let bx = [-1.0, 1.0, 1.0, -1.0].map(|v| v / (2.0 * h));
        let by = [-1.0, -1.0, 1.0, 1.0].map(|v| v / (2.0 * h));
        for i in 0..4 {
            assert_abs_diff_eq!(proj.b[(0, i)], 0.25, epsilon = 1e-14);
            assert_abs_diff_eq!(proj.b[(1, i)], bx[i], epsilon = 1e-14);
            assert_abs_diff_eq!(proj.b[(2, i)], by[i], epsilon = 1e-14);
        }
        let chart = Chart::flat(Domain::UnitSquare).unwrap();
        let forms = local_forms(&proj, &chart, [0.0, 0.0], 0.0, StabKind::DofiDofi).unwrap();
        let expected = [
            [5.0, -1.0, -3.0, -1.0],
            [-1.0, 5.0, -1.0, -3.0],
            [-3.0, -1.0, 5.0, -1.0],
            [-1.0, -3.0, -1.0, 5.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(forms.a[(i, j)], expected[i][j] / 8.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn stabilization_kills_polynomials_and_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let chart = Chart::flat(Domain::UnitSquare).unwrap();
        for k in 1..=4usize {
            let poly: Vec<[f64; 2]> = unit_square()
                .iter()
                .map(|p| [0.2 + 0.6 * p[0], 0.2 + 0.6 * p[1]])
                .collect();
            let mut poly = poly;
            poly.push([0.2, 0.5]);
            let proj = projectors(&poly, k, 0).unwrap();
            for stab in [StabKind::DofiDofi, StabKind::DRecipe] {
                let forms = local_forms(&proj, &chart, [0.0, 0.0], 0.0, stab).unwrap();
                let scale = mat_scale(&forms.s);
                for alpha in 0..dim_pk(k) {
                    let dof = proj.d.column(alpha).into_owned();
                    let sv = &forms.s * &dof;
                    assert!(sv.amax() <= 1e-10 * scale.max(1.0), "S does not kill m_{alpha}");
                }
                let sym = &forms.s - forms.s.transpose();
                assert!(mat_scale(&sym) <= 1e-12 * scale.max(1.0));
                let eig = forms.s.clone().symmetric_eigen().eigenvalues;
                assert!(eig.min() >= -1e-12 * scale.max(1.0), "S indefinite for {stab:?}");
                let v = DVector::from_fn(proj.layout.total, |_, _| rng.gen_range(-1.0..1.0));
                let quad = (v.transpose() * &forms.s * &v)[0];
                assert!(quad >= -1e-12 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn flat_forms_are_k_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let chart = Chart::flat(Domain::UnitSquare).unwrap();
        for _ in 0..50 {
            let k = rng.gen_range(1..=4usize);
            let n = rng.gen_range(3..9);
            let poly = random_polygon_in_unit_square(&mut rng, n);
            let proj = projectors(&poly, k, 0).unwrap();
            let stab = if rng.gen() { StabKind::DofiDofi } else { StabKind::DRecipe };
            let forms = local_forms(&proj, &chart, [0.0, 0.0], 0.0, stab).unwrap();
            let v = DVector::from_fn(proj.layout.total, |_, _| rng.gen_range(-1.0..1.0));
            let q = DVector::from_fn(dim_pk(k), |_, _| rng.gen_range(-1.0..1.0));
            let dof_q = &proj.d * &q;
            let lhs = (v.transpose() * &forms.a * &dof_q)[0];
            // exact form from the gradient-pairing functionals: rows α ≥ 1 of B
            let bv = &proj.b * &v;
            let mut rhs = 0.0;
            for alpha in 1..dim_pk(k) {
                rhs += q[alpha] * bv[alpha];
            }
            let scale = mat_scale(&forms.a) * v.amax() * q.amax();
            assert!(
                (lhs - rhs).abs() <= 1e-9 * scale.max(1.0),
                "k-consistency violated: k={k}, diff={}",
                (lhs - rhs).abs()
            );
        }
    }

    #[test]
    fn constants_are_in_the_stiffness_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let chart = Chart::flat(Domain::UnitSquare).unwrap();
        for k in 1..=4usize {
            let poly = random_polygon_in_unit_square(&mut rng, 6);
            let proj = projectors(&poly, k, 0).unwrap();
            let forms =
                local_forms(&proj, &chart, [0.0, 0.0], 0.0, StabKind::default_for_order(k)).unwrap();
            let ones = dof_vector_of(&proj, |_| 1.0);
            let scale = mat_scale(&forms.a);
            assert!((&forms.a * &ones).amax() <= 1e-9 * scale);
            assert!((forms.a.transpose() * &ones).amax() <= 1e-9 * scale);
            if k == 1 {
                let row_sums = &forms.a * DVector::from_element(proj.layout.total, 1.0);
                assert!(row_sums.amax() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn interpolant_energies_stay_spectrally_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let chart = Chart::flat(Domain::UnitSquare).unwrap();
        let mut polys = vec![unit_square()];
        for _ in 0..4 {
            let n = rng.gen_range(4..9);
            polys.push(random_polygon_in_unit_square(&mut rng, n));
        }
        for poly in &polys {
            for k in 1..=4usize {
                let proj = projectors(poly, k, 0).unwrap();
                let forms =
                    local_forms(&proj, &chart, [0.0, 0.0], 0.0, StabKind::default_for_order(k))
                        .unwrap();
                let nk = dim_pk(k);
                // exact gradient Gram (no constant-row replacement)
                let mut gram = DMatrix::zeros(nk, nk);
                let mut vals = vec![0.0; nk];
                let mut gx = vec![0.0; nk];
                let mut gy = vec![0.0; nk];
                for (p, &w) in proj.rule.points.iter().zip(proj.rule.weights.iter()) {
                    proj.basis.eval_with_grad_into(*p, &mut vals, &mut gx, &mut gy);
                    for a in 0..nk {
                        for b in 0..nk {
                            gram[(a, b)] += w * (gx[a] * gx[b] + gy[a] * gy[b]);
                        }
                    }
                }
                let ah = proj.d.transpose() * &forms.a * &proj.d;
                // restrict to non-constant monomials
                let sub = |m: &DMatrix<f64>| m.view((1, 1), (nk - 1, nk - 1)).into_owned();
                let gram_s = sub(&gram);
                let ah_s = sub(&ah);
                let chol = gram_s.cholesky().expect("gradient Gram is SPD");
                let li = chol.l().try_inverse().unwrap();
                let reduced = &li * ah_s * li.transpose();
                let eig = reduced.symmetric_eigen().eigenvalues;
                let (lo, hi) = (eig.min(), eig.max());
                assert!(
                    lo >= 0.05 && hi <= 20.0,
                    "spectral bounds [{lo}, {hi}] out of range at k={k}"
                );
            }
        }
    }

    #[test]
    fn load_vector_moment_identities() {
        let chart = Chart::flat(Domain::UnitSquare).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for k in 2..=4usize {
            let poly: Vec<[f64; 2]> = vec![
                [0.1, 0.1],
                [0.9, 0.2],
                [0.8, 0.8],
                [0.4, 0.9],
                [0.1, 0.6],
            ];
            let proj = projectors(&poly, k, 0).unwrap();
            let zero = local_load(&proj, &chart, &|_| Ok(0.0)).unwrap();
            assert_eq!(zero.amax(), 0.0);
            let load = local_load(&proj, &chart, &|_| Ok(1.0)).unwrap();
            assert_abs_diff_eq!(load[proj.layout.moment_dof(0)], proj.area, epsilon = 1e-12);
            // f in P_{k-2}: the moment-DOF entries are |P| times f's coordinates
            let nkm2 = dim_pk(k - 2);
            let coeffs: Vec<f64> = (0..nkm2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let basis = proj.basis.clone();
            let f = move |p: [f64; 2]| {
                let mut vals = vec![0.0; basis.len()];
                basis.eval_into(p, &mut vals);
                Ok(coeffs.iter().zip(vals.iter()).map(|(c, v)| c * v).sum())
            };
            let load = local_load(&proj, &chart, &f).unwrap();
            // direct check: ∫ f φ_i = |P| f_m for the degree ≤ k−2 moment DOFs,
            // with f's coordinates recovered by an independent Gram solve
            let fm = {
                let mut v = DVector::<f64>::zeros(nkm2);
                let mut vals = vec![0.0; proj.basis.len()];
                let mut gram = DMatrix::<f64>::zeros(nkm2, nkm2);
                let mut rhs = DVector::zeros(nkm2);
                for (p, &w) in proj.rule.points.iter().zip(proj.rule.weights.iter()) {
                    proj.basis.eval_into(*p, &mut vals);
                    let fv = f(*p).unwrap();
                    for a in 0..nkm2 {
                        rhs[a] += w * fv * vals[a];
                        for b in 0..nkm2 {
                            gram[(a, b)] += w * vals[a] * vals[b];
                        }
                    }
                }
                v.copy_from(&gram.lu().solve(&rhs).unwrap());
                v
            };
            for m in 0..proj.layout.n_moments {
                assert_abs_diff_eq!(
                    load[proj.layout.moment_dof(m)],
                    proj.area * fm[m],
                    epsilon = 1e-11 * proj.area.max(1.0)
                );
            }
        }
    }

    #[test]
    fn reaction_matrix_reproduces_polynomial_masses() {
        let chart = Chart::flat(Domain::UnitSquare).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for k in 1..=3usize {
            let poly: Vec<[f64; 2]> = vec![[0.1, 0.1], [0.9, 0.15], [0.85, 0.9], [0.15, 0.8]];
            let proj = projectors(&poly, k, 0).unwrap();
            let forms =
                local_forms(&proj, &chart, [0.0, 0.0], 1.0, StabKind::default_for_order(k)).unwrap();
            let sym = &forms.c_react - forms.c_react.transpose();
            assert!(mat_scale(&sym) <= 1e-12 * mat_scale(&forms.c_react));
            let eig = forms.c_react.clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() >= -1e-12 * mat_scale(&forms.c_react));
            // for q, p ∈ P_{k−1}: qᵀ C p = ∫ q p
            let nkm1 = dim_pk(k - 1);
            let cq = DVector::from_fn(nkm1, |_, _| rng.gen_range(-1.0..1.0));
            let cp = DVector::from_fn(nkm1, |_, _| rng.gen_range(-1.0..1.0));
            let padded = |c: &DVector<f64>| {
                let mut v = DVector::zeros(dim_pk(k));
                v.rows_mut(0, nkm1).copy_from(c);
                v
            };
            let dof_q = &proj.d * padded(&cq);
            let dof_p = &proj.d * padded(&cp);
            let lhs = (dof_q.transpose() * &forms.c_react * &dof_p)[0];
            let h_sub = proj.h_mass.view((0, 0), (nkm1, nkm1)).into_owned();
            let rhs = (cq.transpose() * h_sub * &cp)[0];
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn advection_matrix_matches_polynomial_oracle() {
        let chart = Chart::flat(Domain::UnitSquare).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for k in 1..=3usize {
            let poly: Vec<[f64; 2]> = vec![[0.2, 0.1], [0.9, 0.3], [0.7, 0.9], [0.2, 0.7]];
            let proj = projectors(&poly, k, 0).unwrap();
            let w_hat = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let forms =
                local_forms(&proj, &chart, w_hat, 0.0, StabKind::default_for_order(k)).unwrap();
            // for trial q, test p ∈ P_{k−1}: pᵀ Badv q = ∫ (w·∇q) p
            let nkm1 = dim_pk(k - 1);
            let nk = dim_pk(k);
            let cq = DVector::from_fn(nkm1, |_, _| rng.gen_range(-1.0..1.0));
            let cp = DVector::from_fn(nkm1, |_, _| rng.gen_range(-1.0..1.0));
            let padded = |c: &DVector<f64>| {
                let mut v = DVector::zeros(nk);
                v.rows_mut(0, nkm1).copy_from(c);
                v
            };
            let dof_q = &proj.d * padded(&cq);
            let dof_p = &proj.d * padded(&cp);
            let lhs = (dof_p.transpose() * &forms.badv * &dof_q)[0];
            let mut vals = vec![0.0; nk];
            let mut gx = vec![0.0; nk];
            let mut gy = vec![0.0; nk];
            let mut rhs = 0.0;
            for (p, &w) in proj.rule.points.iter().zip(proj.rule.weights.iter()) {
                proj.basis.eval_with_grad_into(*p, &mut vals, &mut gx, &mut gy);
                let mut qdx = 0.0;
                let mut qdy = 0.0;
                let mut pv = 0.0;
                for a in 0..nkm1 {
                    qdx += cq[a] * gx[a];
                    qdy += cq[a] * gy[a];
                    pv += cp[a] * vals[a];
                }
                rhs += w * (w_hat[0] * qdx + w_hat[1] * qdy) * pv;
            }
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn projector_build_is_a_function_of_the_serialized_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let poly = random_star_polygon(&mut rng, 6);
        let proj = projectors(&poly, 3, 0).unwrap();
        let text = serde_json::to_string(&poly).unwrap();
        let poly2: Vec<[f64; 2]> = serde_json::from_str(&text).unwrap();
        let proj2 = projectors(&poly2, 3, 0).unwrap();
        assert_eq!(proj.pi_nabla, proj2.pi_nabla);
        assert_eq!(proj.pi0_k, proj2.pi0_k);
        assert_eq!(proj.pi0_grad[0], proj2.pi0_grad[0]);
        assert_eq!(proj.pi0_grad[1], proj2.pi0_grad[1]);
    }

    #[test]
    fn dofi_dofi_tracks_the_harmonic_energy_oracle_on_the_square() {
        let proj = projectors(&unit_square(), 1, 0).unwrap();
        let chart = Chart::flat(Domain::UnitSquare).unwrap();
        let forms = local_forms(&proj, &chart, [0.0, 0.0], 0.0, StabKind::DofiDofi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..3 {
            let v = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            // project onto the kernel of the elliptic projector
            let v = &v - &proj.d * (&proj.pi_nabla * &v);
            if v.amax() < 1e-8 {
                continue;
            }
            let s_vv = (v.transpose() * &forms.s * &v)[0];
            let a_vv = enhanced_energy_oracle(&proj, &v);
            let ratio = s_vv / a_vv;
            assert!(
                (0.1..=10.0).contains(&ratio),
                "stabilization/energy ratio {ratio} outside [0.1, 10]"
            );
        }
    }

    /// Energy ∫|∇v|² of the order-1 enhanced-space function on the unit
    /// square with the given vertex DOFs, via a fine piecewise-linear grid
    /// solve: v = harmonic part + Σ c_j u_j with Δu_j = m_j, u_j|∂ = 0, and
    /// the c_j fixed by the zero-moment conditions against ℙ_1.
    fn enhanced_energy_oracle(proj: &LocalProjectors, dofs: &DVector<f64>) -> f64 {
        const N: usize = 48;
        let h = 1.0 / N as f64;
        let idx = |i: usize, j: usize| j * (N + 1) + i;
        let corner = [dofs[0], dofs[1], dofs[2], dofs[3]];
        let trace = |x: f64, y: f64| -> f64 {
            if y == 0.0 {
                corner[0] + (corner[1] - corner[0]) * x
            } else if x == 1.0 {
                corner[1] + (corner[2] - corner[1]) * y
            } else if y == 1.0 {
                corner[2] + (corner[3] - corner[2]) * (1.0 - x)
            } else {
                corner[3] + (corner[0] - corner[3]) * (1.0 - y)
            }
        };
        let solve = |rhs: &dyn Fn(f64, f64) -> f64, bc: bool| -> Vec<f64> {
            let mut u = vec![0.0; (N + 1) * (N + 1)];
            if bc {
                for i in 0..=N {
                    for &(x, y, ii) in &[
                        (i as f64 * h, 0.0, idx(i, 0)),
                        (i as f64 * h, 1.0, idx(i, N)),
                        (0.0, i as f64 * h, idx(0, i)),
                        (1.0, i as f64 * h, idx(N, i)),
                    ] {
                        u[ii] = trace(x, y);
                    }
                }
            }
            // CG on the interior 5-point system: 4u − Σnbr = −h²·rhs + bc
            let interior: Vec<(usize, usize)> =
                (1..N).flat_map(|j| (1..N).map(move |i| (i, j))).collect();
            let apply = |u: &[f64], out: &mut [f64]| {
                for (t, &(i, j)) in interior.iter().enumerate() {
                    out[t] = 4.0 * u[idx(i, j)]
                        - u[idx(i - 1, j)]
                        - u[idx(i + 1, j)]
                        - u[idx(i, j + 1)]
                        - u[idx(i, j - 1)];
                }
            };
            let mut b = vec![0.0; interior.len()];
            {
                let mut ubc = vec![0.0; u.len()];
                ubc.copy_from_slice(&u);
                for v in interior.iter().map(|&(i, j)| idx(i, j)) {
                    ubc[v] = 0.0;
                }
                let mut tmp = vec![0.0; interior.len()];
                apply(&ubc, &mut tmp);
                for (t, &(i, j)) in interior.iter().enumerate() {
                    b[t] = -h * h * rhs(i as f64 * h, j as f64 * h) - tmp[t];
                }
            }
            let mut x = vec![0.0; interior.len()];
            let mut r = b.clone();
            let mut p = r.clone();
            let mut rs: f64 = r.iter().map(|v| v * v).sum();
            let mut full = vec![0.0; u.len()];
            let mut ap = vec![0.0; interior.len()];
            for _ in 0..4000 {
                if rs.sqrt() < 1e-12 {
                    break;
                }
                for v in full.iter_mut() {
                    *v = 0.0;
                }
                for (t, &(i, j)) in interior.iter().enumerate() {
                    full[idx(i, j)] = p[t];
                }
                apply(&full, &mut ap);
                let alpha = rs / p.iter().zip(ap.iter()).map(|(a, b)| a * b).sum::<f64>();
                for t in 0..x.len() {
                    x[t] += alpha * p[t];
                    r[t] -= alpha * ap[t];
                }
                let rs_new: f64 = r.iter().map(|v| v * v).sum();
                let beta = rs_new / rs;
                rs = rs_new;
                for t in 0..p.len() {
                    p[t] = r[t] + beta * p[t];
                }
            }
            for (t, &(i, j)) in interior.iter().enumerate() {
                u[idx(i, j)] = x[t];
            }
            u
        };
        let basis = proj.basis.clone();
        let m = |a: usize| {
            let basis = basis.clone();
            move |x: f64, y: f64| {
                let mut vals = vec![0.0; basis.len()];
                basis.eval_into([x, y], &mut vals);
                vals[a]
            }
        };
        let w = solve(&|_, _| 0.0, true);
        let u: Vec<Vec<f64>> = (0..3).map(|a| solve(&m(a), false)).collect();
        let moment = |u: &[f64], a: usize| -> f64 {
            let ma = m(a);
            let mut s = 0.0;
            for j in 0..=N {
                for i in 0..=N {
                    let wgt = if i == 0 || i == N { 0.5 } else { 1.0 }
                        * if j == 0 || j == N { 0.5 } else { 1.0 };
                    s += wgt * u[idx(i, j)] * ma(i as f64 * h, j as f64 * h);
                }
            }
            s * h * h
        };
        // moment conditions: ∫ v m_a = ∫ (Π∇v) m_a = 0 here
        let mut mat = DMatrix::zeros(3, 3);
        let mut rhs = DVector::zeros(3);
        for a in 0..3 {
            rhs[a] = -moment(&w, a);
            for j in 0..3 {
                mat[(a, j)] = moment(&u[j], a);
            }
        }
        let c = mat.lu().solve(&rhs).unwrap();
        let mut v = w;
        for j in 0..3 {
            for (t, val) in v.iter_mut().enumerate() {
                *val += c[j] * u[j][t];
            }
        }
        let mut energy = 0.0;
        for j in 0..N {
            for i in 0..N {
                let (v00, v10, v11, v01) =
                    (v[idx(i, j)], v[idx(i + 1, j)], v[idx(i + 1, j + 1)], v[idx(i, j + 1)]);
                let g1 = [(v10 - v00) / h, (v11 - v10) / h];
                let g2 = [(v11 - v01) / h, (v01 - v00) / h];
                energy += 0.5 * h * h * (g1[0] * g1[0] + g1[1] * g1[1]);
                energy += 0.5 * h * h * (g2[0] * g2[0] + g2[1] * g2[1]);
            }
        }
        energy
    }
}
