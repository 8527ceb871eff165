//! Surface parametrizations over planar reference domains.
//!
//! A chart maps a reference domain in the plane onto a surface patch in
//! ambient 3-space. The tangent vectors of the map are orthogonalized into a
//! frame (v1 = t1, v2 = t2 - ((t2.t1)/|t1|^2) t1), which makes the first
//! fundamental form diagonal, G = diag(|v1|^2, |v2|^2). All PDE coefficients
//! on the chart are algebraic functions of G and its determinant.
//!
//! Built-in charts carry hand-derived analytic metric derivatives. A
//! user-supplied chart only provides the ambient map; its metric is obtained
//! by central finite differences (step 1e-6 for tangents, 1e-5 for metric
//! derivatives) and is therefore noticeably less accurate near machine
//! precision — expect roughly 1e-9 relative error in the metric and 1e-6 in
//! its derivatives.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Boundary-inclusion tolerance for domain membership tests.
pub const DOMAIN_TOL: f64 = 1e-12;

/// Step for finite-difference tangents of user-supplied charts.
const FD_TANGENT_STEP: f64 = 1e-6;
/// Step for finite-difference metric derivatives.
const FD_METRIC_STEP: f64 = 1e-5;

/// Planar reference domain of a chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// {(x, y) : x >= 0, y >= 0, x^2 + y^2 <= 1}
    QuarterDisk,
    /// {(x, y) : x^2 + y^2 <= 1}
    UnitDisk,
    /// [0, 1]^2
    UnitSquare,
}

impl Domain {
    /// Membership with a small inclusion band so boundary quadrature points
    /// never fail the check.
    pub fn contains(&self, s: [f64; 2]) -> bool {
        let [x, y] = s;
        match self {
            Domain::QuarterDisk => {
                x >= -DOMAIN_TOL && y >= -DOMAIN_TOL && x.hypot(y) <= 1.0 + DOMAIN_TOL
            }
            Domain::UnitDisk => x.hypot(y) <= 1.0 + DOMAIN_TOL,
            Domain::UnitSquare => {
                (-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&x)
                    && (-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&y)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Domain::QuarterDisk => "quarter_disk",
            Domain::UnitDisk => "unit_disk",
            Domain::UnitSquare => "unit_square",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A user-supplied surface parametrization. Only the ambient map is required;
/// the metric is recovered by finite differences, so the map must be
/// evaluable in a small neighborhood (about 1e-5 wide) of the domain.
pub trait SurfaceMap: Send + Sync {
    fn position(&self, s: [f64; 2]) -> [f64; 3];
    fn domain(&self) -> Domain;
}

/// The parametrization family of a chart.
#[derive(Clone)]
pub enum ChartKind {
    /// Identity embedding of the plane, (x, y) -> (x, y, 0).
    Flat,
    /// Graph of the height function
    /// z = sqrt(r - x^2 - y^2 + a cos^2(freq (pi/2) (x^2 + y^2)))
    /// over the quarter disk.
    MongeTrig { r: f64, a: f64, freq: u32 },
    /// Inverse stereographic projection of the unit disk onto the northern
    /// hemisphere of the unit sphere: (x, y) -> (2x, 2y, 1 - x^2 - y^2)/(1 + x^2 + y^2).
    StereoNorth,
    /// Mirror chart onto the southern hemisphere, z -> -z.
    StereoSouth,
    /// User-supplied map; metric by finite differences.
    Custom(Arc<dyn SurfaceMap>),
}

impl fmt::Debug for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChartKind::Flat => write!(f, "Flat"),
            ChartKind::MongeTrig { r, a, freq } => {
                write!(f, "MongeTrig {{ r: {r}, a: {a}, freq: {freq} }}")
            }
            ChartKind::StereoNorth => write!(f, "StereoNorth"),
            ChartKind::StereoSouth => write!(f, "StereoSouth"),
            ChartKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Diagonalized first fundamental form at a chart point.
#[derive(Debug, Clone, Copy)]
pub struct MetricData {
    pub g11: f64,
    pub g22: f64,
    pub det_g: f64,
    pub sqrt_det_g: f64,
    pub inv_g11: f64,
    pub inv_g22: f64,
    pub inv_sqrt_g11: f64,
    pub inv_sqrt_g22: f64,
    /// Orthogonalized tangent frame [v1, v2] in ambient coordinates.
    pub frame: [[f64; 3]; 2],
}

impl MetricData {
    fn from_diag(g11: f64, g22: f64, frame: [[f64; 3]; 2]) -> Self {
        let det_g = g11 * g22;
        MetricData {
            g11,
            g22,
            det_g,
            sqrt_det_g: det_g.sqrt(),
            inv_g11: 1.0 / g11,
            inv_g22: 1.0 / g22,
            inv_sqrt_g11: 1.0 / g11.sqrt(),
            inv_sqrt_g22: 1.0 / g22.sqrt(),
            frame,
        }
    }
}

/// Partial derivatives of the metric diagonal entries.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricDerivatives {
    pub dg11_dx: f64,
    pub dg11_dy: f64,
    pub dg22_dx: f64,
    pub dg22_dy: f64,
}

/// Coefficients of the chart-form PDE at a point: the diagonal diffusion
/// tensor K = sqrt(det G) G^-1, the transported advection w~ =
/// sqrt(det G) G^{-1/2} w^, the scaled reaction, and the volume weight.
#[derive(Debug, Clone, Copy)]
pub struct PdeCoefficients {
    pub k11: f64,
    pub k22: f64,
    pub w_tilde: [f64; 2],
    pub gamma_tilde: f64,
    pub weight: f64,
}

/// A surface chart: a parametrization kind together with its reference domain.
#[derive(Debug, Clone)]
pub struct Chart {
    kind: ChartKind,
    domain: Domain,
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm2_3(a: [f64; 3]) -> f64 {
    dot3(a, a)
}

/// Height function of the trigonometrically perturbed sphere cap and the
/// scalars needed for its first and second derivatives.
#[derive(Clone, Copy)]
struct MongeEval {
    h: f64,
    hx: f64,
    hy: f64,
    hxx: f64,
    hxy: f64,
    hyy: f64,
}

fn monge_eval(r: f64, a: f64, freq: u32, s: [f64; 2]) -> Result<MongeEval> {
    let [x, y] = s;
    let rho2 = x * x + y * y;
    let c = freq as f64 * std::f64::consts::FRAC_PI_2;
    let theta = c * rho2;
    let (sin2t, cos2t) = (2.0 * theta).sin_cos();
    let q = r - rho2 + a * theta.cos().powi(2);
    if q <= 0.0 {
        return Err(Error::SingularMetric {
            x,
            y,
            reason: format!("height radicand {q:.3e} is non-positive"),
        });
    }
    // q_x = -x s_fac, with s_fac collecting both the sphere and the
    // trigonometric contribution.
    let s_fac = 2.0 + 2.0 * a * c * sin2t;
    let sx = 8.0 * a * c * c * x * cos2t;
    let sy = 8.0 * a * c * c * y * cos2t;
    let qx = -x * s_fac;
    let qy = -y * s_fac;
    let qxx = -s_fac - x * sx;
    let qyy = -s_fac - y * sy;
    let qxy = -x * sy;

    let h = q.sqrt();
    let inv2h = 0.5 / h;
    let hx = qx * inv2h;
    let hy = qy * inv2h;
    let inv4q32 = 0.25 / (q * h);
    let hxx = qxx * inv2h - qx * qx * inv4q32;
    let hyy = qyy * inv2h - qy * qy * inv4q32;
    let hxy = qxy * inv2h - qx * qy * inv4q32;
    Ok(MongeEval { h, hx, hy, hxx, hxy, hyy })
}

impl Chart {
    pub fn new(kind: ChartKind, domain: Domain) -> Result<Self> {
        let ok = match (&kind, domain) {
            (ChartKind::Flat, Domain::UnitSquare | Domain::QuarterDisk) => true,
            (ChartKind::MongeTrig { .. }, Domain::QuarterDisk) => true,
            (ChartKind::StereoNorth | ChartKind::StereoSouth, Domain::UnitDisk) => true,
            (ChartKind::Custom(map), d) => map.domain() == d,
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidChart(format!(
                "domain {domain} is not valid for chart kind {kind:?}"
            )));
        }
        if let ChartKind::MongeTrig { r, a, freq } = kind {
            if !(r.is_finite() && a.is_finite()) {
                return Err(Error::InvalidChart("non-finite chart parameters".into()));
            }
            // The height radicand must stay positive over the whole quarter
            // disk; sample densely, including the arc where rho = 1.
            let n = 200usize;
            for i in 0..=n {
                for j in 0..=n {
                    let s = [i as f64 / n as f64, j as f64 / n as f64];
                    if !domain.contains(s) {
                        continue;
                    }
                    monge_eval(r, a, freq, s).map_err(|_| {
                        Error::InvalidChart(format!(
                            "height radicand non-positive near ({}, {}) for r={r}, a={a}, freq={freq}",
                            s[0], s[1]
                        ))
                    })?;
                }
            }
            for j in 0..=4 * n {
                let t = std::f64::consts::FRAC_PI_2 * j as f64 / (4 * n) as f64;
                let s = [t.cos(), t.sin()];
                monge_eval(r, a, freq, s).map_err(|_| {
                    Error::InvalidChart(format!(
                        "height radicand non-positive on the boundary arc for r={r}, a={a}, freq={freq}"
                    ))
                })?;
            }
        }
        Ok(Chart { kind, domain })
    }

    pub fn flat(domain: Domain) -> Result<Self> {
        Chart::new(ChartKind::Flat, domain)
    }

    pub fn monge_trig(r: f64, a: f64, freq: u32) -> Result<Self> {
        Chart::new(ChartKind::MongeTrig { r, a, freq }, Domain::QuarterDisk)
    }

    pub fn stereo_north() -> Self {
        Chart { kind: ChartKind::StereoNorth, domain: Domain::UnitDisk }
    }

    pub fn stereo_south() -> Self {
        Chart { kind: ChartKind::StereoSouth, domain: Domain::UnitDisk }
    }

    pub fn custom(map: Arc<dyn SurfaceMap>) -> Self {
        let domain = map.domain();
        Chart { kind: ChartKind::Custom(map), domain }
    }

    /// Chart from its configuration name: "flat", "monge_trig",
    /// "stereo_north", or "stereo_south".
    pub fn from_name(name: &str, r: f64, a: f64, freq: u32) -> Result<Self> {
        match name {
            "flat" => Chart::flat(Domain::UnitSquare),
            "monge_trig" => Chart::monge_trig(r, a, freq),
            "stereo_north" => Ok(Chart::stereo_north()),
            "stereo_south" => Ok(Chart::stereo_south()),
            other => Err(Error::InvalidChart(format!(
                "unknown chart name {other:?}; expected flat, monge_trig, stereo_north, or stereo_south"
            ))),
        }
    }

    pub fn kind(&self) -> &ChartKind {
        &self.kind
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    fn check_domain(&self, s: [f64; 2]) -> Result<()> {
        if self.domain.contains(s) {
            Ok(())
        } else {
            Err(Error::Domain { x: s[0], y: s[1], domain: self.domain.name().into() })
        }
    }

    fn raw_position(&self, s: [f64; 2]) -> Result<[f64; 3]> {
        let [x, y] = s;
        Ok(match &self.kind {
            ChartKind::Flat => [x, y, 0.0],
            ChartKind::MongeTrig { r, a, freq } => {
                let m = monge_eval(*r, *a, *freq, s)?;
                [x, y, m.h]
            }
            ChartKind::StereoNorth => {
                let d = 1.0 + x * x + y * y;
                [2.0 * x / d, 2.0 * y / d, (2.0 - d) / d]
            }
            ChartKind::StereoSouth => {
                let d = 1.0 + x * x + y * y;
                [2.0 * x / d, 2.0 * y / d, (d - 2.0) / d]
            }
            ChartKind::Custom(map) => map.position(s),
        })
    }

    /// Ambient position of the chart point `s`.
    pub fn map_point(&self, s: [f64; 2]) -> Result<[f64; 3]> {
        self.check_domain(s)?;
        self.raw_position(s)
    }

    /// Raw (non-orthogonalized) tangent vectors of the parametrization.
    fn tangents(&self, s: [f64; 2]) -> Result<([f64; 3], [f64; 3])> {
        let [x, y] = s;
        Ok(match &self.kind {
            ChartKind::Flat => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
            ChartKind::MongeTrig { r, a, freq } => {
                let m = monge_eval(*r, *a, *freq, s)?;
                ([1.0, 0.0, m.hx], [0.0, 1.0, m.hy])
            }
            ChartKind::StereoNorth => {
                let d = 1.0 + x * x + y * y;
                let d2 = d * d;
                (
                    [2.0 * (1.0 + y * y - x * x) / d2, -4.0 * x * y / d2, -4.0 * x / d2],
                    [-4.0 * x * y / d2, 2.0 * (1.0 + x * x - y * y) / d2, -4.0 * y / d2],
                )
            }
            ChartKind::StereoSouth => {
                let d = 1.0 + x * x + y * y;
                let d2 = d * d;
                (
                    [2.0 * (1.0 + y * y - x * x) / d2, -4.0 * x * y / d2, 4.0 * x / d2],
                    [-4.0 * x * y / d2, 2.0 * (1.0 + x * x - y * y) / d2, 4.0 * y / d2],
                )
            }
            ChartKind::Custom(map) => {
                let d = FD_TANGENT_STEP;
                let px = map.position([x + d, y]);
                let mx = map.position([x - d, y]);
                let py = map.position([x, y + d]);
                let my = map.position([x, y - d]);
                (
                    [(px[0] - mx[0]) / (2.0 * d), (px[1] - mx[1]) / (2.0 * d), (px[2] - mx[2]) / (2.0 * d)],
                    [(py[0] - my[0]) / (2.0 * d), (py[1] - my[1]) / (2.0 * d), (py[2] - my[2]) / (2.0 * d)],
                )
            }
        })
    }

    fn metric_unchecked(&self, s: [f64; 2]) -> Result<MetricData> {
        let (t1, t2) = self.tangents(s)?;
        let n1 = norm2_3(t1);
        if n1 < 1e-14 {
            return Err(Error::SingularMetric {
                x: s[0],
                y: s[1],
                reason: format!("|v1|^2 = {n1:.3e} below 1e-14"),
            });
        }
        let lambda = dot3(t2, t1) / n1;
        let v2 = [t2[0] - lambda * t1[0], t2[1] - lambda * t1[1], t2[2] - lambda * t1[2]];
        let n2 = norm2_3(v2);
        if n2 < 1e-14 {
            return Err(Error::SingularMetric {
                x: s[0],
                y: s[1],
                reason: format!("|v2|^2 = {n2:.3e} below 1e-14"),
            });
        }
        let frame = [t1, v2];
        let (g11, g22) = match &self.kind {
            ChartKind::Flat => (1.0, 1.0),
            ChartKind::MongeTrig { .. } => {
                // g11 = 1 + h_x^2 and g22 = det/g11 with det = 1 + |grad h|^2
                let hx = t1[2];
                let hy = t2[2];
                let g11 = 1.0 + hx * hx;
                (g11, (1.0 + hx * hx + hy * hy) / g11)
            }
            ChartKind::StereoNorth | ChartKind::StereoSouth => {
                let d = 1.0 + s[0] * s[0] + s[1] * s[1];
                let g = 4.0 / (d * d);
                (g, g)
            }
            ChartKind::Custom(_) => (n1, n2),
        };
        Ok(MetricData::from_diag(g11, g22, frame))
    }

    /// Diagonalized metric and orthogonal frame at `s`.
    pub fn metric_at(&self, s: [f64; 2]) -> Result<MetricData> {
        self.check_domain(s)?;
        self.metric_unchecked(s)
    }

    /// Analytic partial derivatives of g11 and g22 (finite differences for
    /// user-supplied charts).
    pub fn metric_derivatives_at(&self, s: [f64; 2]) -> Result<MetricDerivatives> {
        self.check_domain(s)?;
        let [x, y] = s;
        Ok(match &self.kind {
            ChartKind::Flat => MetricDerivatives::default(),
            ChartKind::MongeTrig { r, a, freq } => {
                let m = monge_eval(*r, *a, *freq, s)?;
                let g11 = 1.0 + m.hx * m.hx;
                let det = 1.0 + m.hx * m.hx + m.hy * m.hy;
                let g22 = det / g11;
                let dg11_dx = 2.0 * m.hx * m.hxx;
                let dg11_dy = 2.0 * m.hx * m.hxy;
                let ddet_dx = 2.0 * (m.hx * m.hxx + m.hy * m.hxy);
                let ddet_dy = 2.0 * (m.hx * m.hxy + m.hy * m.hyy);
                MetricDerivatives {
                    dg11_dx,
                    dg11_dy,
                    dg22_dx: (ddet_dx - g22 * dg11_dx) / g11,
                    dg22_dy: (ddet_dy - g22 * dg11_dy) / g11,
                }
            }
            ChartKind::StereoNorth | ChartKind::StereoSouth => {
                let d = 1.0 + x * x + y * y;
                let d3 = d * d * d;
                MetricDerivatives {
                    dg11_dx: -16.0 * x / d3,
                    dg11_dy: -16.0 * y / d3,
                    dg22_dx: -16.0 * x / d3,
                    dg22_dy: -16.0 * y / d3,
                }
            }
            ChartKind::Custom(_) => {
                let d = FD_METRIC_STEP;
                let gxp = self.metric_unchecked([x + d, y])?;
                let gxm = self.metric_unchecked([x - d, y])?;
                let gyp = self.metric_unchecked([x, y + d])?;
                let gym = self.metric_unchecked([x, y - d])?;
                MetricDerivatives {
                    dg11_dx: (gxp.g11 - gxm.g11) / (2.0 * d),
                    dg11_dy: (gyp.g11 - gym.g11) / (2.0 * d),
                    dg22_dx: (gxp.g22 - gxm.g22) / (2.0 * d),
                    dg22_dy: (gyp.g22 - gym.g22) / (2.0 * d),
                }
            }
        })
    }

    /// Chart-form PDE coefficients at `s` for ambient advection `w_hat` and
    /// reaction `gamma`.
    pub fn pde_coefficients_at(&self, s: [f64; 2], w_hat: [f64; 2], gamma: f64) -> Result<PdeCoefficients> {
        if matches!(self.kind, ChartKind::Flat) {
            self.check_domain(s)?;
            return Ok(PdeCoefficients {
                k11: 1.0,
                k22: 1.0,
                w_tilde: w_hat,
                gamma_tilde: gamma,
                weight: 1.0,
            });
        }
        let m = self.metric_at(s)?;
        Ok(PdeCoefficients {
            k11: m.sqrt_det_g * m.inv_g11,
            k22: m.sqrt_det_g * m.inv_g22,
            w_tilde: [
                m.sqrt_det_g * m.inv_sqrt_g11 * w_hat[0],
                m.sqrt_det_g * m.inv_sqrt_g22 * w_hat[1],
            ],
            gamma_tilde: m.sqrt_det_g * gamma,
            weight: m.sqrt_det_g,
        })
    }

    /// The condition-number bound factor sqrt(det G) * cond(G^-1)
    /// = sqrt(max(g11,g22)^3 / min(g11,g22)).
    pub fn anisotropy_at(&self, s: [f64; 2]) -> Result<f64> {
        let m = self.metric_at(s)?;
        let hi = m.g11.max(m.g22);
        let lo = m.g11.min(m.g22);
        Ok((hi * hi * hi / lo).sqrt())
    }
}
