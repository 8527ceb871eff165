//! Polygonal meshes of the chart domains.
//!
//! A mesh stores counterclockwise vertex cycles over a shared vertex list;
//! edges, incidences, and boundary flags are derived and validated at
//! construction. Curved domain boundaries are always replaced by the polyline
//! through a fixed set of boundary nodes before meshing, and refinement never
//! moves or adds boundary geometry, so a mesh family shares its polygonal
//! domain across levels. Two generators are provided: a Delaunay
//! triangulation on a graded lattice, and a Lloyd-relaxed clipped Voronoi
//! partition whose boundary cells keep every fixed boundary node as a vertex
//! (collinear sub-edges remain distinct edges).

mod delaunay;

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust::{orient2d, Coord};
use serde::{Deserialize, Serialize};

use crate::chart::Domain;
use crate::error::{Error, Result};
use delaunay::Delaunay;

/// Sentinel cell index for the outer side of a boundary edge.
pub const NO_CELL: usize = usize::MAX;

/// An undirected mesh edge with its incident cells. `cells[1] == NO_CELL`
/// marks a boundary edge.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub v: [usize; 2],
    pub cells: [usize; 2],
}

/// A conforming polygonal mesh with derived connectivity.
#[derive(Debug, Clone)]
pub struct PolyMesh {
    vertices: Vec<[f64; 2]>,
    cells: Vec<Vec<usize>>,
    edges: Vec<Edge>,
    cell_edges: Vec<Vec<usize>>,
    boundary_vertex: Vec<bool>,
    h: f64,
}

/// Aggregated shape-regularity diagnostics.
#[derive(Debug, Clone)]
pub struct RegularityReport {
    /// min over cells of (inradius about the centroid / cell diameter)
    pub rho_estimate: f64,
    /// max over cells of (longest edge / shortest edge)
    pub edge_ratio: f64,
    /// min over cells of (shortest edge / cell diameter)
    pub min_edge_over_hp: f64,
    /// per-cell: is the cell star-shaped with respect to its centroid
    pub star_shaped_flags: Vec<bool>,
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    orient2d(Coord { x: a[0], y: a[1] }, Coord { x: b[0], y: b[1] }, Coord { x: c[0], y: c[1] })
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn signed_area(verts: &[[f64; 2]]) -> f64 {
    let n = verts.len();
    let mut a2 = 0.0;
    for i in 0..n {
        let p = verts[i];
        let q = verts[(i + 1) % n];
        a2 += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a2
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Proper or improper intersection of two closed segments that share no
/// endpoint index.
fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let o1 = orient(p1, p2, q1);
    let o2 = orient(p1, p2, q2);
    let o3 = orient(q1, q2, p1);
    let o4 = orient(q1, q2, p2);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    let on_seg = |o: f64, a: [f64; 2], b: [f64; 2], p: [f64; 2]| {
        o == 0.0
            && p[0] >= a[0].min(b[0])
            && p[0] <= a[0].max(b[0])
            && p[1] >= a[1].min(b[1])
            && p[1] <= a[1].max(b[1])
    };
    on_seg(o1, p1, p2, q1)
        || on_seg(o2, p1, p2, q2)
        || on_seg(o3, q1, q2, p1)
        || on_seg(o4, q1, q2, p2)
}

impl PolyMesh {
    /// Validates and indexes a mesh given as vertex coordinates and
    /// counterclockwise cell cycles. Clockwise cells are reoriented with a
    /// warning record; structural defects are errors.
    pub fn build(vertices: Vec<[f64; 2]>, mut cells: Vec<Vec<usize>>) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        let nv = vertices.len();
        if cells.is_empty() {
            return Err(Error::Topology("mesh has no cells".into()));
        }
        for (ci, cell) in cells.iter_mut().enumerate() {
            if cell.len() < 3 {
                return Err(Error::Topology(format!("cell {ci} has fewer than 3 vertices")));
            }
            let mut seen = cell.clone();
            seen.sort_unstable();
            for w in seen.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::Topology(format!(
                        "cell {ci} repeats vertex {}",
                        w[0]
                    )));
                }
            }
            if let Some(&bad) = cell.iter().find(|&&v| v >= nv) {
                return Err(Error::Topology(format!(
                    "cell {ci} references vertex {bad} out of range (mesh has {nv})"
                )));
            }
            let coords: Vec<[f64; 2]> = cell.iter().map(|&v| vertices[v]).collect();
            let area = signed_area(&coords);
            if area == 0.0 {
                return Err(Error::Topology(format!("cell {ci} has zero signed area")));
            }
            if area < 0.0 {
                cell.reverse();
                warnings.push(format!("cell {ci} was clockwise; reoriented counterclockwise"));
            }
            let coords: Vec<[f64; 2]> = cell.iter().map(|&v| vertices[v]).collect();
            let n = coords.len();
            for i in 0..n {
                let a = coords[i];
                let b = coords[(i + 1) % n];
                let c = coords[(i + 2) % n];
                if orient(a, b, c) == 0.0 {
                    let dot = (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1]);
                    if dot < 0.0 {
                        return Err(Error::Geometry(format!(
                            "cell {ci} folds back on itself at vertex {}",
                            cell[(i + 1) % n]
                        )));
                    }
                }
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    // skip edge pairs sharing a cycle vertex
                    if j == i + 1 || (i == 0 && j == n - 1) {
                        continue;
                    }
                    if segments_intersect(coords[i], coords[(i + 1) % n], coords[j], coords[(j + 1) % n]) {
                        return Err(Error::Geometry(format!(
                            "cell {ci} is self-intersecting between sides {i} and {j}"
                        )));
                    }
                }
            }
        }

        let mut edge_map: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut directed_seen: HashMap<(usize, usize), usize> = HashMap::new();
        let mut cell_edges = vec![Vec::new(); cells.len()];
        for (ci, cell) in cells.iter().enumerate() {
            let n = cell.len();
            for i in 0..n {
                let a = cell[i];
                let b = cell[(i + 1) % n];
                if let Some(&other) = directed_seen.get(&(a, b)) {
                    return Err(Error::Topology(format!(
                        "directed edge ({a}, {b}) traversed by both cell {other} and cell {ci}: inconsistent orientation or non-manifold mesh"
                    )));
                }
                directed_seen.insert((a, b), ci);
                let key = (a.min(b), a.max(b));
                let eid = match edge_map.get(&key) {
                    Some(&eid) => {
                        if edges[eid].cells[1] != NO_CELL {
                            return Err(Error::Topology(format!(
                                "edge ({}, {}) is shared by more than two cells",
                                key.0, key.1
                            )));
                        }
                        edges[eid].cells[1] = ci;
                        eid
                    }
                    None => {
                        edges.push(Edge { v: [key.0, key.1], cells: [ci, NO_CELL] });
                        edge_map.insert(key, edges.len() - 1);
                        edges.len() - 1
                    }
                };
                cell_edges[ci].push(eid);
            }
        }

        let mut used = vec![false; nv];
        for cell in &cells {
            for &v in cell {
                used[v] = true;
            }
        }
        if let Some(idx) = used.iter().position(|&u| !u) {
            return Err(Error::Topology(format!("vertex {idx} is not referenced by any cell")));
        }

        let mut boundary_vertex = vec![false; nv];
        for e in &edges {
            if e.cells[1] == NO_CELL {
                boundary_vertex[e.v[0]] = true;
                boundary_vertex[e.v[1]] = true;
            }
        }

        let mut h = 0.0f64;
        for cell in &cells {
            let coords: Vec<[f64; 2]> = cell.iter().map(|&v| vertices[v]).collect();
            for i in 0..coords.len() {
                for j in (i + 1)..coords.len() {
                    h = h.max(dist(coords[i], coords[j]));
                }
            }
        }

        Ok((
            PolyMesh { vertices, cells, edges, cell_edges, boundary_vertex, h },
            warnings,
        ))
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> [f64; 2] {
        self.vertices[i]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> Edge {
        self.edges[e]
    }

    /// Edge index of each side (v_i, v_{i+1}) of a cell, in cycle order.
    pub fn cell_edge_ids(&self, c: usize) -> &[usize] {
        &self.cell_edges[c]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.edges[e].cells[1] == NO_CELL
    }

    /// Mesh size: maximum cell diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cell_vertex_coords(&self, c: usize) -> Vec<[f64; 2]> {
        self.cells[c].iter().map(|&v| self.vertices[v]).collect()
    }

    /// Shoelace area, area-weighted centroid, and diameter of a cell.
    pub fn cell_geometry(&self, c: usize) -> (f64, [f64; 2], f64) {
        let coords = self.cell_vertex_coords(c);
        let n = coords.len();
        let mut a2 = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for i in 0..n {
            let p = coords[i];
            let q = coords[(i + 1) % n];
            let cross = p[0] * q[1] - q[0] * p[1];
            a2 += cross;
            cx += (p[0] + q[0]) * cross;
            cy += (p[1] + q[1]) * cross;
        }
        let mut diam = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                diam = diam.max(dist(coords[i], coords[j]));
            }
        }
        (0.5 * a2, [cx / (3.0 * a2), cy / (3.0 * a2)], diam)
    }

    /// Sum of all cell areas.
    pub fn total_area(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_geometry(c).0).sum()
    }

    /// Per-cell shape audits aggregated over the mesh.
    pub fn regularity_report(&self) -> RegularityReport {
        let mut rho_estimate = f64::MAX;
        let mut edge_ratio = 1.0f64;
        let mut min_edge_over_hp = f64::MAX;
        let mut star_shaped_flags = Vec::with_capacity(self.n_cells());
        for c in 0..self.n_cells() {
            let coords = self.cell_vertex_coords(c);
            let (_, centroid, diam) = self.cell_geometry(c);
            let n = coords.len();
            let mut min_edge = f64::MAX;
            let mut max_edge = 0.0f64;
            let mut inradius = f64::MAX;
            let mut star = true;
            for i in 0..n {
                let a = coords[i];
                let b = coords[(i + 1) % n];
                let len = dist(a, b);
                min_edge = min_edge.min(len);
                max_edge = max_edge.max(len);
                inradius = inradius.min(point_segment_distance(centroid, a, b));
                if orient(a, b, centroid) <= 0.0 {
                    star = false;
                }
            }
            star_shaped_flags.push(star);
            rho_estimate = rho_estimate.min(inradius / diam);
            edge_ratio = edge_ratio.max(max_edge / min_edge);
            min_edge_over_hp = min_edge_over_hp.min(min_edge / diam);
        }
        RegularityReport { rho_estimate, edge_ratio, min_edge_over_hp, star_shaped_flags }
    }
}

#[derive(Serialize, Deserialize)]
struct MeshFile {
    vertices: Vec<[f64; 2]>,
    cells: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary_vertices: Option<Vec<usize>>,
}

/// Parse a mesh from its JSON exchange form.
pub fn mesh_from_json(text: &str) -> Result<(PolyMesh, Vec<String>)> {
    let file: MeshFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("invalid mesh JSON: {e}")))?;
    let (mesh, mut warnings) = PolyMesh::build(file.vertices, file.cells)?;
    if let Some(listed) = file.boundary_vertices {
        let mut derived: Vec<usize> =
            (0..mesh.n_vertices()).filter(|&v| mesh.is_boundary_vertex(v)).collect();
        derived.sort_unstable();
        let mut listed = listed;
        listed.sort_unstable();
        listed.dedup();
        if listed != derived {
            warnings.push(
                "boundary_vertices in file disagree with edge-incidence-derived boundary; using the derived set"
                    .into(),
            );
        }
    }
    Ok((mesh, warnings))
}

/// Serialize a mesh to its JSON exchange form.
pub fn mesh_to_json(mesh: &PolyMesh) -> String {
    let boundary: Vec<usize> =
        (0..mesh.n_vertices()).filter(|&v| mesh.is_boundary_vertex(v)).collect();
    let file = MeshFile {
        vertices: mesh.vertices.clone(),
        cells: mesh.cells.clone(),
        boundary_vertices: Some(boundary),
    };
    serde_json::to_string_pretty(&file).expect("mesh serialization cannot fail")
}

pub fn import_mesh(path: &Path) -> Result<(PolyMesh, Vec<String>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    mesh_from_json(&text)
}

pub fn export_mesh(mesh: &PolyMesh, path: &Path) -> Result<()> {
    std::fs::write(path, mesh_to_json(mesh))
        .map_err(|e| Error::Parse(format!("cannot write {}: {e}", path.display())))
}

/// Polygonal approximation of a chart domain. Curved portions are replaced by
/// the polyline through `n_boundary_nodes` uniformly spaced boundary points;
/// this polygon is the computational domain for every refinement level.
pub fn domain_polygon(domain: Domain, n_boundary_nodes: usize) -> Result<Vec<[f64; 2]>> {
    if n_boundary_nodes < 4 {
        return Err(Error::Generation(format!(
            "need at least 4 boundary nodes, got {n_boundary_nodes}"
        )));
    }
    Ok(match domain {
        Domain::QuarterDisk => {
            let mut poly = vec![[0.0, 0.0]];
            for j in 0..n_boundary_nodes {
                let t = std::f64::consts::FRAC_PI_2 * j as f64 / (n_boundary_nodes - 1) as f64;
                poly.push([t.cos(), t.sin()]);
            }
            poly
        }
        Domain::UnitDisk => (0..n_boundary_nodes)
            .map(|j| {
                let t = std::f64::consts::TAU * j as f64 / n_boundary_nodes as f64;
                [t.cos(), t.sin()]
            })
            .collect(),
        Domain::UnitSquare => vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
    })
}

fn polygon_contains(poly: &[[f64; 2]], p: [f64; 2], tol: f64) -> bool {
    // convex polygon (possibly with collinear vertices): left of every edge
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let nx = b[1] - a[1];
        let ny = a[0] - b[0];
        let len = nx.hypot(ny);
        if len == 0.0 {
            continue;
        }
        let s = ((p[0] - a[0]) * nx + (p[1] - a[1]) * ny) / len;
        if s > tol {
            return false;
        }
    }
    true
}

fn distance_to_polygon_boundary(poly: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = poly.len();
    let mut d = f64::MAX;
    for i in 0..n {
        d = d.min(point_segment_distance(p, poly[i], poly[(i + 1) % n]));
    }
    d
}

/// Base lattice spacing chosen so that level 0 yields a few dozen cells.
fn base_spacing(domain: Domain) -> f64 {
    match domain {
        Domain::QuarterDisk => 0.17,
        Domain::UnitSquare => 0.2,
        Domain::UnitDisk => 0.4,
    }
}

fn triangle_min_angle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let la = dist(b, c);
    let lb = dist(a, c);
    let lc = dist(a, b);
    let angle = |opp: f64, s1: f64, s2: f64| {
        ((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2)).clamp(-1.0, 1.0).acos()
    };
    angle(la, lb, lc).min(angle(lb, la, lc)).min(angle(lc, la, lb))
}

/// Delaunay triangulation of the polygonal domain at refinement `level`.
/// The boundary polyline is fixed by `n_boundary_nodes`; each level divides
/// the target triangle area by 4 (spacing halves).
pub fn generate_triangulation(
    domain: Domain,
    level: u32,
    n_boundary_nodes: usize,
) -> Result<PolyMesh> {
    if level > 6 {
        return Err(Error::Generation(format!("refinement level {level} exceeds the supported 6")));
    }
    let poly = domain_polygon(domain, n_boundary_nodes)?;
    let spacing = base_spacing(domain) / (1u32 << level) as f64;

    for attempt in 0..3u64 {
        let mut points: Vec<[f64; 2]> = Vec::new();
        // boundary polyline, each segment subdivided to at most `spacing`
        let n = poly.len();
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            let m = (dist(a, b) / spacing).ceil().max(1.0) as usize;
            for k in 0..m {
                let t = k as f64 / m as f64;
                points.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        // interior lattice: near-hexagonal rows distributed evenly inside the
        // bounding box, then filtered to keep a clear band along the boundary
        let band = 0.6 * spacing;
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for p in &poly {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let mut jitter = ChaCha8Rng::seed_from_u64(0xA11CE + attempt);
        let jit = 0.15 * spacing;
        let height = hi[1] - lo[1] - 2.0 * band;
        let row_step = spacing * 3.0f64.sqrt() / 2.0;
        let n_rows = (height / row_step).floor().max(1.0) as usize + 1;
        let row_step = height / (n_rows.max(2) - 1) as f64;
        for r in 0..n_rows {
            let y = lo[1] + band + r as f64 * row_step;
            let offset = if r % 2 == 0 { 0.0 } else { 0.5 * spacing };
            let width = hi[0] - lo[0] - 2.0 * band - offset;
            let n_cols = (width / spacing).floor().max(0.0) as usize + 1;
            for q in 0..n_cols {
                let x = lo[0] + band + offset + q as f64 * spacing;
                let p = [
                    x + jit * (jitter.gen::<f64>() - 0.5),
                    y + jit * (jitter.gen::<f64>() - 0.5),
                ];
                if polygon_contains(&poly, p, -1e-12)
                    && distance_to_polygon_boundary(&poly, p) >= band
                {
                    points.push(p);
                }
            }
        }

        let dt = Delaunay::new(&points)?;
        let mut cells: Vec<Vec<usize>> = Vec::new();
        let mut min_angle = f64::MAX;
        for t in dt.triangles() {
            let (a, b, c) = (points[t[0]], points[t[1]], points[t[2]]);
            let centroid = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
            if !polygon_contains(&poly, centroid, 1e-12) {
                continue;
            }
            min_angle = min_angle.min(triangle_min_angle(a, b, c));
            cells.push(t.to_vec());
        }
        if min_angle < 15.0f64.to_radians() {
            continue;
        }
        let (mesh, _warnings) = PolyMesh::build(points, cells)?;
        return Ok(mesh);
    }
    Err(Error::Generation(format!(
        "triangulation of {domain} at level {level} kept a sliver below 15 degrees after retries"
    )))
}

/// Clip a convex polygon by the half-plane n.x <= c (Sutherland–Hodgman).
fn clip_halfplane(poly: &mut Vec<[f64; 2]>, scratch: &mut Vec<[f64; 2]>, nrm: [f64; 2], c: f64) {
    scratch.clear();
    let n = poly.len();
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let fp = nrm[0] * p[0] + nrm[1] * p[1] - c;
        let fq = nrm[0] * q[0] + nrm[1] * q[1] - c;
        if fp <= 0.0 {
            scratch.push(p);
        }
        if (fp < 0.0 && fq > 0.0) || (fp > 0.0 && fq < 0.0) {
            let t = fp / (fp - fq);
            scratch.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    std::mem::swap(poly, scratch);
}

/// Lloyd-relaxed, domain-clipped Voronoi partition with exactly `n_cells`
/// cells. Deterministic for fixed (seed, parameters).
pub fn generate_voronoi_polymesh(
    domain: Domain,
    n_cells: usize,
    n_boundary_nodes: usize,
    seed: u64,
    lloyd_iterations: u32,
) -> Result<PolyMesh> {
    generate_voronoi_polymesh_graded(domain, n_cells, n_boundary_nodes, seed, lloyd_iterations, None)
}

/// Centroidal Voronoi mesh with an optional spatially varying target spacing.
///
/// `spacing`, when given, returns the desired relative cell size at a point
/// (1 = nominal; smaller values concentrate cells).  Seeds are placed and
/// relaxed against the density 1/spacing², so cell areas scale like
/// spacing².  With `None` the generator is the plain uniform-density one.
pub fn generate_voronoi_polymesh_graded(
    domain: Domain,
    n_cells: usize,
    n_boundary_nodes: usize,
    seed: u64,
    lloyd_iterations: u32,
    spacing: Option<&(dyn Fn([f64; 2]) -> f64 + Sync)>,
) -> Result<PolyMesh> {
    if n_cells < 4 {
        return Err(Error::Generation(format!("need at least 4 cells, got {n_cells}")));
    }
    let poly = domain_polygon(domain, n_boundary_nodes)?;
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for p in &poly {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let density = |p: [f64; 2]| match spacing {
        None => 1.0,
        Some(s) => {
            let v = s(p).max(1e-3);
            1.0 / (v * v)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Upper bound of the density over the domain, estimated on a fixed grid,
    // for rejection sampling proportional to the density.
    let mut density_cap = 1.0f64;
    if spacing.is_some() {
        const PROBE: usize = 48;
        for i in 0..PROBE {
            for j in 0..PROBE {
                let p = [
                    lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / PROBE as f64,
                    lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / PROBE as f64,
                ];
                if polygon_contains(&poly, p, -1e-9) {
                    density_cap = density_cap.max(density(p));
                }
            }
        }
    }
    let mut seeds: Vec<[f64; 2]> = Vec::with_capacity(n_cells);
    let mut guard = 0usize;
    while seeds.len() < n_cells {
        guard += 1;
        if guard > 10_000_000 {
            return Err(Error::Generation("seed rejection sampling failed".into()));
        }
        let p = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
        if polygon_contains(&poly, p, -1e-9)
            && (spacing.is_none() || rng.gen::<f64>() * density_cap <= density(p))
        {
            seeds.push(p);
        }
    }

    let mut cell_polys: Vec<Vec<[f64; 2]>> = vec![Vec::new(); n_cells];
    let mut scratch: Vec<[f64; 2]> = Vec::new();
    for _iter in 0..=lloyd_iterations {
        let dt = Delaunay::new(&seeds)?;
        let nbrs = dt.vertex_neighbors();
        for i in 0..n_cells {
            let cell = &mut cell_polys[i];
            cell.clear();
            cell.extend_from_slice(&poly);
            let si = seeds[i];
            for &j in &nbrs[i] {
                let sj = seeds[j];
                // perpendicular bisector in the symmetric form
                // 2 (sj - si) . x <= |sj|^2 - |si|^2
                let nrm = [2.0 * (sj[0] - si[0]), 2.0 * (sj[1] - si[1])];
                let c = (sj[0] * sj[0] + sj[1] * sj[1]) - (si[0] * si[0] + si[1] * si[1]);
                clip_halfplane(cell, &mut scratch, nrm, c);
                if cell.len() < 3 {
                    break;
                }
            }
            if cell.len() < 3 {
                return Err(Error::Generation(format!(
                    "Voronoi cell {i} collapsed during Lloyd relaxation"
                )));
            }
        }
        if _iter == lloyd_iterations {
            break;
        }
        for i in 0..n_cells {
            let a2 = 2.0 * signed_area(&cell_polys[i]);
            if a2.abs() < 1e-300 {
                continue;
            }
            match spacing {
                None => {
                    let mut cx = 0.0;
                    let mut cy = 0.0;
                    let n = cell_polys[i].len();
                    for k in 0..n {
                        let p = cell_polys[i][k];
                        let q = cell_polys[i][(k + 1) % n];
                        let cross = p[0] * q[1] - q[0] * p[1];
                        cx += (p[0] + q[0]) * cross;
                        cy += (p[1] + q[1]) * cross;
                    }
                    seeds[i] = [cx / (3.0 * a2), cy / (3.0 * a2)];
                }
                Some(_) => {
                    // Density-weighted centroid: fan the (convex) cell into
                    // triangles and use the degree-2 edge-midpoint rule.
                    let cell = &cell_polys[i];
                    let v0 = cell[0];
                    let mut mass = 0.0;
                    let mut mx = 0.0;
                    let mut my = 0.0;
                    for t in 1..cell.len() - 1 {
                        let (v1, v2) = (cell[t], cell[t + 1]);
                        let tri_a = 0.5
                            * ((v1[0] - v0[0]) * (v2[1] - v0[1])
                                - (v2[0] - v0[0]) * (v1[1] - v0[1]));
                        for (a, b) in [(v0, v1), (v1, v2), (v2, v0)] {
                            let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                            let w = density(m) * tri_a / 3.0;
                            mass += w;
                            mx += w * m[0];
                            my += w * m[1];
                        }
                    }
                    if mass.abs() > 1e-300 {
                        seeds[i] = [mx / mass, my / mass];
                    }
                }
            }
        }
    }

    weld_cells_into_mesh(&cell_polys, &poly)
}

/// Merge per-cell clip polygons into a conforming mesh by welding vertices
/// that coincide up to a tolerance.
fn weld_cells_into_mesh(cell_polys: &[Vec<[f64; 2]>], poly: &[[f64; 2]]) -> Result<PolyMesh> {
    const WELD_TOL: f64 = 1e-9;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut verts: Vec<[f64; 2]> = Vec::new();
    let mut cells: Vec<Vec<usize>> = Vec::with_capacity(cell_polys.len());
    let key = |p: [f64; 2]| ((p[0] / WELD_TOL).round() as i64, (p[1] / WELD_TOL).round() as i64);
    for cp in cell_polys {
        let mut cell = Vec::with_capacity(cp.len());
        for &p in cp {
            let (kx, ky) = key(p);
            let mut found = None;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(ids) = grid.get(&(kx + dx, ky + dy)) {
                        for &id in ids {
                            if dist(verts[id], p) <= WELD_TOL {
                                found = Some(id);
                                break 'search;
                            }
                        }
                    }
                }
            }
            let id = match found {
                Some(id) => id,
                None => {
                    verts.push(p);
                    grid.entry((kx, ky)).or_default().push(verts.len() - 1);
                    verts.len() - 1
                }
            };
            if cell.last() != Some(&id) {
                cell.push(id);
            }
        }
        while cell.len() > 1 && cell.first() == cell.last() {
            cell.pop();
        }
        if cell.len() < 3 {
            return Err(Error::Generation("a Voronoi cell degenerated during welding".into()));
        }
        cells.push(cell);
    }
    let (mesh, _warnings) = PolyMesh::build(verts, cells)?;
    // every boundary edge must lie on the domain polygon boundary, otherwise
    // welding produced a non-conforming interface
    for e in 0..mesh.n_edges() {
        if !mesh.is_boundary_edge(e) {
            continue;
        }
        let edge = mesh.edge(e);
        let a = mesh.vertex(edge.v[0]);
        let b = mesh.vertex(edge.v[1]);
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        if distance_to_polygon_boundary(poly, mid) > 1e-7 {
            return Err(Error::Generation(
                "welded mesh has an interior boundary edge (non-conforming interface)".into(),
            ));
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn unit_square_mesh() -> PolyMesh {
        let (mesh, warnings) = PolyMesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![vec![0, 1, 2, 3]],
        )
        .unwrap();
        assert!(warnings.is_empty());
        mesh
    }

    #[test]
    fn single_square_cell_derivations() {
        let mesh = unit_square_mesh();
        assert_eq!(mesh.n_cells(), 1);
        assert_eq!(mesh.n_edges(), 4);
        assert!((0..4).all(|e| mesh.is_boundary_edge(e)));
        assert_relative_eq!(mesh.h(), 2.0f64.sqrt(), max_relative = 1e-15);
        let (area, centroid, diam) = mesh.cell_geometry(0);
        assert_relative_eq!(area, 1.0, max_relative = 1e-15);
        assert_abs_diff_eq!(centroid[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(centroid[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(diam, 2.0f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn two_triangles_share_one_interior_edge() {
        let (mesh, _) = PolyMesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![vec![0, 1, 2], vec![0, 2, 3]],
        )
        .unwrap();
        let interior: Vec<_> = (0..mesh.n_edges()).filter(|&e| !mesh.is_boundary_edge(e)).collect();
        assert_eq!(interior.len(), 1);
        let e = mesh.edge(interior[0]);
        assert_eq!(e.v, [0, 2]);
        assert_eq!(e.cells, [0, 1]);
    }

    #[test]
    fn clockwise_cell_is_reoriented_with_warning() {
        let (mesh, warnings) = PolyMesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![vec![0, 3, 2, 1]],
        )
        .unwrap();
        assert_eq!(warnings.len(), 1);
        let (area, _, _) = mesh.cell_geometry(0);
        assert!(area > 0.0);
    }

    #[test]
    fn topology_errors_are_detected() {
        // dangling vertex
        assert!(matches!(
            PolyMesh::build(
                vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [5.0, 5.0]],
                vec![vec![0, 1, 2]],
            ),
            Err(Error::Topology(_))
        ));
        // out-of-range index
        assert!(matches!(
            PolyMesh::build(vec![[0.0, 0.0], [1.0, 0.0]], vec![vec![0, 1, 7]]),
            Err(Error::Topology(_))
        ));
        // duplicate vertex within a cell
        assert!(matches!(
            PolyMesh::build(
                vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
                vec![vec![0, 1, 1, 2]],
            ),
            Err(Error::Topology(_))
        ));
        // non-manifold: three cells on one edge
        assert!(matches!(
            PolyMesh::build(
                vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [1.5, 1.0]],
                vec![vec![0, 1, 2], vec![0, 3, 1], vec![0, 1, 4]],
            ),
            Err(Error::Topology(_))
        ));
        // self-intersecting bow tie
        assert!(matches!(
            PolyMesh::build(
                vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]],
                vec![vec![0, 1, 2, 3]],
            ),
            Err(Error::Geometry(_)) | Err(Error::Topology(_))
        ));
    }

    #[test]
    fn json_round_trip_and_boundary_inference() {
        let text = r#"{"vertices": [[0,0],[1,0],[1,1],[0,1]], "cells": [[0,1,2],[0,2,3]]}"#;
        let (mesh, warnings) = mesh_from_json(text).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(mesh.n_cells(), 2);
        let json = mesh_to_json(&mesh);
        let (mesh2, _) = mesh_from_json(&json).unwrap();
        assert_eq!(mesh2.n_cells(), 2);
        assert_eq!(mesh2.n_edges(), mesh.n_edges());

        let bad = r#"{"vertices": [[0,0]], "cells": "#;
        assert!(matches!(mesh_from_json(bad), Err(Error::Parse(_))));

        let wrong_boundary = r#"{"vertices": [[0,0],[1,0],[1,1],[0,1]], "cells": [[0,1,2],[0,2,3]], "boundary_vertices": [0]}"#;
        let (_, warnings) = mesh_from_json(wrong_boundary).unwrap();
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn regularity_of_unit_squares() {
        let (mesh, _) = PolyMesh::build(
            vec![
                [0.0, 0.0], [1.0, 0.0], [2.0, 0.0],
                [0.0, 1.0], [1.0, 1.0], [2.0, 1.0],
            ],
            vec![vec![0, 1, 4, 3], vec![1, 2, 5, 4]],
        )
        .unwrap();
        let rep = mesh.regularity_report();
        // square: inradius about centroid 1/2, diameter sqrt(2)
        assert_abs_diff_eq!(rep.rho_estimate, 0.5 / 2.0f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(rep.edge_ratio, 1.0, epsilon = 1e-12);
        assert!(rep.star_shaped_flags.iter().all(|&f| f));
    }

    #[test]
    fn hexagon_geometry() {
        let verts: Vec<[f64; 2]> = (0..6)
            .map(|i| {
                let t = std::f64::consts::PI / 3.0 * i as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        let (mesh, _) = PolyMesh::build(verts, vec![vec![0, 1, 2, 3, 4, 5]]).unwrap();
        let (area, centroid, diam) = mesh.cell_geometry(0);
        assert_relative_eq!(area, 1.5 * 3.0f64.sqrt(), max_relative = 1e-13);
        assert_abs_diff_eq!(centroid[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(centroid[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(diam, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn quarter_disk_triangulation_level0() {
        let mesh = generate_triangulation(Domain::QuarterDisk, 0, 8).unwrap();
        assert!(
            (20..=80).contains(&mesh.n_cells()),
            "level-0 quarter disk has {} triangles",
            mesh.n_cells()
        );
        let rep = mesh.regularity_report();
        assert!(rep.star_shaped_flags.iter().all(|&f| f));
        assert!(rep.rho_estimate > 0.05);
        // area matches the polygonal domain
        let poly = domain_polygon(Domain::QuarterDisk, 8).unwrap();
        assert_relative_eq!(mesh.total_area(), signed_area(&poly), max_relative = 1e-10);
    }

    #[test]
    fn triangulation_h_halves_and_count_quadruples() {
        let mut hs = Vec::new();
        let mut counts = Vec::new();
        for level in 0..4 {
            let mesh = generate_triangulation(Domain::UnitSquare, level, 8).unwrap();
            hs.push(mesh.h());
            counts.push(mesh.n_cells() as f64);
        }
        for w in hs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (ratio - 2.0).abs() <= 0.2,
                "h ratio {ratio} deviates more than 10% from halving"
            );
        }
        for w in counts.windows(2) {
            let ratio = w[1] / w[0];
            assert!((3.5..=4.5).contains(&ratio), "cell count ratio {ratio}");
        }
    }

    #[test]
    fn voronoi_mesh_is_valid_convex_and_deterministic() {
        let mesh = generate_voronoi_polymesh(Domain::QuarterDisk, 25, 8, 42, 100).unwrap();
        assert_eq!(mesh.n_cells(), 25);
        let rep = mesh.regularity_report();
        assert!(rep.rho_estimate > 0.2, "rho {} too small", rep.rho_estimate);
        assert!(rep.star_shaped_flags.iter().all(|&f| f));
        // convexity: every vertex turn is non-negative
        for c in 0..mesh.n_cells() {
            let coords = mesh.cell_vertex_coords(c);
            let n = coords.len();
            for i in 0..n {
                assert!(
                    orient(coords[i], coords[(i + 1) % n], coords[(i + 2) % n]) >= 0.0,
                    "cell {c} is not convex"
                );
            }
        }
        let poly = domain_polygon(Domain::QuarterDisk, 8).unwrap();
        assert_relative_eq!(mesh.total_area(), signed_area(&poly), max_relative = 1e-10);

        let mesh2 = generate_voronoi_polymesh(Domain::QuarterDisk, 25, 8, 42, 100).unwrap();
        assert_eq!(mesh.vertices(), mesh2.vertices());
        assert_eq!(
            (0..mesh.n_cells()).map(|c| mesh.cell(c).to_vec()).collect::<Vec<_>>(),
            (0..mesh2.n_cells()).map(|c| mesh2.cell(c).to_vec()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn boundary_refinement_splits_boundary_cells_into_collinear_edges() {
        let coarse = generate_voronoi_polymesh(Domain::QuarterDisk, 25, 8, 7, 100).unwrap();
        let fine = generate_voronoi_polymesh(Domain::QuarterDisk, 25, 128, 7, 100).unwrap();
        assert_eq!(fine.n_cells(), 25);
        let rep_coarse = coarse.regularity_report();
        let rep_fine = fine.regularity_report();
        assert!(rep_fine.edge_ratio > rep_coarse.edge_ratio);
        assert!(rep_fine.edge_ratio >= 8.0, "edge ratio {}", rep_fine.edge_ratio);
        // at least one boundary cell carries >= 3 successive boundary edges
        // that are collinear up to the chord turn angle of the 128-node arc
        let mut found = false;
        'cells: for c in 0..fine.n_cells() {
            let coords = fine.cell_vertex_coords(c);
            let n = coords.len();
            for i in 0..n {
                let straight = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
                    let u = [q[0] - p[0], q[1] - p[1]];
                    let v = [r[0] - q[0], r[1] - q[1]];
                    let cross = u[0] * v[1] - u[1] * v[0];
                    let dot = u[0] * v[0] + u[1] * v[1];
                    dot > 0.0 && cross.atan2(dot).abs() < 0.05
                };
                let quad: Vec<[f64; 2]> = (0..4).map(|k| coords[(i + k) % n]).collect();
                if straight(quad[0], quad[1], quad[2]) && straight(quad[1], quad[2], quad[3]) {
                    found = true;
                    break 'cells;
                }
            }
        }
        assert!(found, "no boundary cell with 3+ near-collinear edges found");
    }
}
