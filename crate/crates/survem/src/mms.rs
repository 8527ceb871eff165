//! Manufactured solution u = sin(2πx)·sin(2πy), its closed-form forcing on
//! any chart, discrete error norms through the L2 projectors, and
//! convergence-rate tables.

use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::assembly::DiscreteSolution;
use crate::chart::Chart;
use crate::error::Result;
use crate::quad::polygon_quadrature;
use crate::vem::{self, StabKind};

/// The manufactured boundary-value problem on one chart: exact solution
/// u = sin(2πx)·sin(2πy) in chart coordinates, advective field `w_hat`
/// (orthonormal-frame components), and reaction coefficient `gamma`.
pub struct ManufacturedCase {
    pub chart: Chart,
    pub w_hat: [f64; 2],
    pub gamma: f64,
}

impl ManufacturedCase {
    pub fn new(chart: Chart, w_hat: [f64; 2], gamma: f64) -> Self {
        ManufacturedCase { chart, w_hat, gamma }
    }

    /// Exact solution; vanishes on the coordinate axes.
    pub fn solution(&self, s: [f64; 2]) -> f64 {
        (2.0 * PI * s[0]).sin() * (2.0 * PI * s[1]).sin()
    }

    /// Chart-coordinate gradient of the exact solution.
    pub fn solution_gradient(&self, s: [f64; 2]) -> [f64; 2] {
        let (sx, cx) = (2.0 * PI * s[0]).sin_cos();
        let (sy, cy) = (2.0 * PI * s[1]).sin_cos();
        [2.0 * PI * cx * sy, 2.0 * PI * sx * cy]
    }

    /// Closed-form forcing obtained by applying the strong operator
    /// −Δ_G u + (G^{-1/2}ŵ)·∇u + γu to the exact solution, with the
    /// diagonal metric G = diag(g11, g22) of the chart:
    ///
    /// f = sin(2πy)·(2πw₁cos(2πx)/√g11 + γ·sin(2πx))
    ///   + π·sin(2πx)cos(2πy)·(g11·∂g22/∂y − ∂g11/∂y·g22)/(g22·det G)
    ///   + π·sin(2πy)·[cos(2πx)·(∂g11/∂x·g22 − g11·∂g22/∂x)/(g11·det G)
    ///                 + 4π·sin(2πx)·(g11 + g22)/det G]
    ///   + 2πw₂·sin(2πx)cos(2πy)/√g22.
    pub fn forcing(&self, s: [f64; 2]) -> Result<f64> {
        let m = self.chart.metric_at(s)?;
        let d = self.chart.metric_derivatives_at(s)?;
        let (sx, cx) = (2.0 * PI * s[0]).sin_cos();
        let (sy, cy) = (2.0 * PI * s[1]).sin_cos();
        let det = m.det_g;
        let advection_x = 2.0 * PI * self.w_hat[0] * cx * m.inv_sqrt_g11;
        let cross_y = PI * sx * cy * (m.g11 * d.dg22_dy - d.dg11_dy * m.g22) / (m.g22 * det);
        let cross_x = cx * (d.dg11_dx * m.g22 - m.g11 * d.dg22_dx) / (m.g11 * det);
        let laplace = 4.0 * PI * sx * (m.g11 + m.g22) / det;
        let advection_y = 2.0 * PI * self.w_hat[1] * sx * cy * m.inv_sqrt_g22;
        Ok(sy * (advection_x + self.gamma * sx)
            + cross_y
            + PI * sy * (cross_x + laplace)
            + advection_y)
    }

    /// Second-order central-difference application of the strong operator
    /// −Δ_G u + (G^{-1/2}ŵ)·∇u + γu to the exact solution. The
    /// Laplace–Beltrami term is used in its expanded form
    ///
    ///   Δ_G u = (1/√(det G))·(∂x(√(det G)/g11)·u_x + (√(det G)/g11)·u_xx
    ///                       + ∂y(√(det G)/g22)·u_y + (√(det G)/g22)·u_yy),
    ///
    /// with the coefficient functions evaluated from the chart's metric and
    /// metric derivatives while all derivatives of u come from central
    /// differences with the given step.
    pub fn strong_operator_fd(&self, s: [f64; 2], step: f64) -> Result<f64> {
        let m = self.chart.metric_at(s)?;
        let d = self.chart.metric_derivatives_at(s)?;
        let [x, y] = s;
        let u = |p: [f64; 2]| self.solution(p);
        let u0 = u(s);
        let (uxp, uxm) = (u([x + step, y]), u([x - step, y]));
        let (uyp, uym) = (u([x, y + step]), u([x, y - step]));
        let ux = (uxp - uxm) / (2.0 * step);
        let uy = (uyp - uym) / (2.0 * step);
        let uxx = (uxp - 2.0 * u0 + uxm) / (step * step);
        let uyy = (uyp - 2.0 * u0 + uym) / (step * step);

        let c1 = m.sqrt_det_g / m.g11;
        let c2 = m.sqrt_det_g / m.g22;
        let c1_x = (m.g11 * d.dg22_dx - m.g22 * d.dg11_dx)
            / (2.0 * m.g11.powf(1.5) * m.g22.sqrt());
        let c2_y = (m.g22 * d.dg11_dy - m.g11 * d.dg22_dy)
            / (2.0 * m.g22.powf(1.5) * m.g11.sqrt());
        let laplace = (c1_x * ux + c1 * uxx + c2_y * uy + c2 * uyy) / m.sqrt_det_g;
        let advection = self.w_hat[0] * ux * m.inv_sqrt_g11 + self.w_hat[1] * uy * m.inv_sqrt_g22;
        Ok(-laplace + advection + self.gamma * u0)
    }

    /// Divergence-form central-difference application of the strong
    /// operator: the fluxes √(det G)·u_x/g11 and √(det G)·u_y/g22 are
    /// evaluated exactly (metric values and the closed-form gradient of u)
    /// and their divergence is differenced. No metric derivatives are
    /// consumed, so this cross-checks the derivative terms of
    /// [`Self::forcing`] from values alone; the stencil must stay inside the
    /// chart domain.
    pub fn strong_operator_flux_fd(&self, s: [f64; 2], step: f64) -> Result<f64> {
        let flux = |p: [f64; 2], dir: usize| -> Result<f64> {
            let m = self.chart.metric_at(p)?;
            let gr = self.solution_gradient(p);
            Ok(if dir == 0 {
                m.sqrt_det_g * gr[0] / m.g11
            } else {
                m.sqrt_det_g * gr[1] / m.g22
            })
        };
        let [x, y] = s;
        let div = (flux([x + step, y], 0)? - flux([x - step, y], 0)?) / (2.0 * step)
            + (flux([x, y + step], 1)? - flux([x, y - step], 1)?) / (2.0 * step);
        let m = self.chart.metric_at(s)?;
        let gr = self.solution_gradient(s);
        let advection =
            self.w_hat[0] * gr[0] * m.inv_sqrt_g11 + self.w_hat[1] * gr[1] * m.inv_sqrt_g22;
        Ok(-div / m.sqrt_det_g + advection + self.gamma * self.solution(s))
    }
}

/// Which measure the error integrals use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorNorm {
    /// plain Lebesgue measure of the chart domain
    ChartDomain,
    /// surface measure: integrands weighted by √(det G)
    SurfaceWeighted,
}

/// Options for the error norms.
#[derive(Debug, Clone, Copy)]
pub struct ErrorOptions {
    pub norm: ErrorNorm,
    /// added to the default per-cell quadrature degree 2k + 4
    pub quadrature_boost: usize,
}

impl Default for ErrorOptions {
    fn default() -> Self {
        ErrorOptions { norm: ErrorNorm::ChartDomain, quadrature_boost: 0 }
    }
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// L2 and broken-H1 errors of a discrete solution against an arbitrary exact
/// field given by `u` and its chart gradient `grad_u`. Per cell, the discrete
/// field is represented by its L2 projection Π0_k u_h; the broken H1 norm is
/// the square root of the summed per-cell H1(P) norms (L2 part included).
pub fn compute_errors_with(
    sol: &DiscreteSolution,
    u: &(dyn Fn([f64; 2]) -> f64 + Sync),
    grad_u: &(dyn Fn([f64; 2]) -> [f64; 2] + Sync),
    opts: ErrorOptions,
) -> Result<(f64, f64)> {
    let mesh = sol.mesh;
    let k = sol.k;
    let per_cell: Vec<Result<(f64, f64)>> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let verts = mesh.cell_vertex_coords(c);
            let proj = vem::projectors(&verts, k, c)?;
            let gmap = sol.dof_map.cell_to_global(mesh, c);
            let u_loc = DVector::from_fn(gmap.len(), |i, _| sol.uh[gmap[i]]);
            let p = &proj.pi0_k * u_loc;
            let rule = if opts.quadrature_boost == 0 {
                proj.rule.clone()
            } else {
                polygon_quadrature(&verts, 2 * k + 4 + opts.quadrature_boost)?
            };
            let nk = proj.basis.len();
            let mut vals = vec![0.0; nk];
            let mut gx = vec![0.0; nk];
            let mut gy = vec![0.0; nk];
            let mut l2 = 0.0;
            let mut h1 = 0.0;
            for (pt, &w) in rule.points.iter().zip(rule.weights.iter()) {
                let weight = match opts.norm {
                    ErrorNorm::ChartDomain => 1.0,
                    ErrorNorm::SurfaceWeighted => sol.chart.metric_at(*pt)?.sqrt_det_g,
                };
                proj.basis.eval_with_grad_into(*pt, &mut vals, &mut gx, &mut gy);
                let mut ph = 0.0;
                let mut phx = 0.0;
                let mut phy = 0.0;
                for i in 0..nk {
                    ph += p[i] * vals[i];
                    phx += p[i] * gx[i];
                    phy += p[i] * gy[i];
                }
                let du = u(*pt) - ph;
                let g = grad_u(*pt);
                l2 += w * weight * du * du;
                h1 += w * weight * ((g[0] - phx).powi(2) + (g[1] - phy).powi(2));
            }
            Ok((l2, h1))
        })
        .collect();

    let mut l2s = Vec::with_capacity(per_cell.len());
    let mut h1s = Vec::with_capacity(per_cell.len());
    for r in per_cell {
        let (l2, h1) = r?;
        l2s.push(l2);
        h1s.push(h1);
    }
    let l2_sq = pairwise_sum(&l2s);
    let semi_sq = pairwise_sum(&h1s);
    Ok((l2_sq.sqrt(), (l2_sq + semi_sq).sqrt()))
}

/// Errors against the manufactured solution of `case`.
pub fn compute_errors(
    sol: &DiscreteSolution,
    case: &ManufacturedCase,
    opts: ErrorOptions,
) -> Result<(f64, f64)> {
    compute_errors_with(
        sol,
        &|s| case.solution(s),
        &|s| case.solution_gradient(s),
        opts,
    )
}

/// Per-level inputs for a convergence table.
#[derive(Debug, Clone, Copy)]
pub struct LevelData {
    pub h: f64,
    pub n_cells: usize,
    pub n_dofs: usize,
    pub err_l2: f64,
    pub err_h1: f64,
}

/// One row of a convergence table; rates are absent on the first level.
#[derive(Debug, Clone, Copy)]
pub struct LevelRecord {
    pub level: usize,
    pub h: f64,
    pub n_cells: usize,
    pub n_dofs: usize,
    pub err_l2: f64,
    pub err_h1: f64,
    pub eoc_l2: Option<f64>,
    pub eoc_h1: Option<f64>,
}

/// A finished convergence study for one polynomial order.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub k: usize,
    pub mesh_family: String,
    pub chart_label: String,
    pub stab: StabKind,
    pub levels: Vec<LevelRecord>,
}

/// Experimental order of convergence between two consecutive levels.
pub fn eoc(err_prev: f64, err_cur: f64, h_prev: f64, h_cur: f64) -> f64 {
    (err_prev / err_cur).ln() / (h_prev / h_cur).ln()
}

/// Build the per-level table with rates computed from the measured mesh
/// sizes.
pub fn eoc_table(
    k: usize,
    mesh_family: &str,
    chart_label: &str,
    stab: StabKind,
    data: &[LevelData],
) -> ConvergenceReport {
    let levels = data
        .iter()
        .enumerate()
        .map(|(i, d)| LevelRecord {
            level: i,
            h: d.h,
            n_cells: d.n_cells,
            n_dofs: d.n_dofs,
            err_l2: d.err_l2,
            err_h1: d.err_h1,
            eoc_l2: (i > 0).then(|| eoc(data[i - 1].err_l2, d.err_l2, data[i - 1].h, d.h)),
            eoc_h1: (i > 0).then(|| eoc(data[i - 1].err_h1, d.err_h1, data[i - 1].h, d.h)),
        })
        .collect();
    ConvergenceReport {
        k,
        mesh_family: mesh_family.to_string(),
        chart_label: chart_label.to_string(),
        stab,
        levels,
    }
}

/// Least-squares slope of log(err) against log(h) over all points.
pub fn ls_slope(hs: &[f64], errs: &[f64]) -> f64 {
    assert_eq!(hs.len(), errs.len());
    assert!(hs.len() >= 2, "slope needs at least two points");
    let n = hs.len() as f64;
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        num += (x - xbar) * (y - ybar);
        den += (x - xbar) * (x - xbar);
    }
    num / den
}

/// Least-squares slope over the last `tail` points only.
pub fn ls_slope_tail(hs: &[f64], errs: &[f64], tail: usize) -> f64 {
    let n = hs.len();
    let tail = tail.clamp(2, n);
    ls_slope(&hs[n - tail..], &errs[n - tail..])
}
