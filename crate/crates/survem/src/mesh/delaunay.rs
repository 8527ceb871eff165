//! Incremental Delaunay triangulation with exact geometric predicates.
//!
//! Points are inserted in Morton order into a super-triangle; each insertion
//! splits the containing triangle (1→3, or 2→4 for a point exactly on an
//! interior edge) and restores the Delaunay property by edge flips. All
//! orientation and in-circle decisions use adaptive exact arithmetic, so
//! exactly collinear and cocircular inputs (subdivided straight boundaries,
//! points on a common arc) are resolved deterministically.

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Tri {
    v: [usize; 3],
    /// Neighbor across the edge opposite v[i]; -1 if none.
    nbr: [i32; 3],
}

pub struct Delaunay {
    /// Input points followed by the three super-triangle vertices.
    points: Vec<[f64; 2]>,
    tris: Vec<Tri>,
    n_real: usize,
    hint: usize,
    walk_state: u64,
}

fn coord(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

enum Locate {
    Interior(usize),
    OnEdge(usize, usize),
    OnVertex,
}

impl Delaunay {
    /// Delaunay triangulation of distinct points (at least 3, not all
    /// collinear). Exact duplicates must be removed by the caller.
    pub fn new(input: &[[f64; 2]]) -> Result<Self> {
        let n = input.len();
        if n < 3 {
            return Err(Error::Generation(format!("triangulation needs >= 3 points, got {n}")));
        }
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for p in input {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        let cx = 0.5 * (lo[0] + hi[0]);
        let cy = 0.5 * (lo[1] + hi[1]);
        let m = 32.0 * span;
        let mut points = input.to_vec();
        let s0 = points.len();
        points.push([cx - m, cy - 0.7 * m]);
        points.push([cx + m, cy - 0.7 * m]);
        points.push([cx, cy + m]);

        let mut dt = Delaunay {
            points,
            tris: vec![Tri { v: [s0, s0 + 1, s0 + 2], nbr: [-1, -1, -1] }],
            n_real: n,
            hint: 0,
            walk_state: 0x9e3779b97f4a7c15,
        };

        for idx in morton_order(input) {
            dt.insert(idx)?;
        }
        Ok(dt)
    }

    fn orient(&self, a: usize, b: usize, p: [f64; 2]) -> f64 {
        orient2d(coord(self.points[a]), coord(self.points[b]), coord(p))
    }

    /// Visibility walk from the hint triangle with randomized edge order.
    fn locate(&mut self, p: [f64; 2]) -> Result<Locate> {
        let mut cur = self.hint.min(self.tris.len() - 1);
        for _ in 0..(4 * self.tris.len() + 64) {
            let t = self.tris[cur];
            let o = [
                self.orient(t.v[1], t.v[2], p),
                self.orient(t.v[2], t.v[0], p),
                self.orient(t.v[0], t.v[1], p),
            ];
            // xorshift for a deterministic but varied starting edge
            self.walk_state ^= self.walk_state << 13;
            self.walk_state ^= self.walk_state >> 7;
            self.walk_state ^= self.walk_state << 17;
            let start = (self.walk_state % 3) as usize;
            let mut moved = false;
            for k in 0..3 {
                let e = (start + k) % 3;
                if o[e] < 0.0 {
                    if t.nbr[e] < 0 {
                        return Err(Error::Generation(
                            "point outside the super-triangle during walk".into(),
                        ));
                    }
                    cur = t.nbr[e] as usize;
                    moved = true;
                    break;
                }
            }
            if moved {
                continue;
            }
            let zeros: Vec<usize> = (0..3).filter(|&e| o[e] == 0.0).collect();
            self.hint = cur;
            return Ok(match zeros.len() {
                0 => Locate::Interior(cur),
                1 => Locate::OnEdge(cur, zeros[0]),
                _ => Locate::OnVertex,
            });
        }
        Err(Error::Generation("point location walk failed to terminate".into()))
    }

    fn set_nbr(&mut self, t: i32, old: usize, new: usize) {
        if t >= 0 {
            let tri = &mut self.tris[t as usize];
            for e in 0..3 {
                if tri.nbr[e] == old as i32 {
                    tri.nbr[e] = new as i32;
                    return;
                }
            }
            unreachable!("stale neighbor link");
        }
    }

    fn insert(&mut self, p_idx: usize) -> Result<()> {
        let p = self.points[p_idx];
        let mut stack: Vec<(usize, usize)> = Vec::with_capacity(16);
        match self.locate(p)? {
            Locate::OnVertex => {
                return Err(Error::Generation("duplicate point in triangulation input".into()))
            }
            Locate::Interior(ti) => {
                let t = self.tris[ti];
                let [a, b, c] = t.v;
                let ta = ti;
                let tb = self.tris.len();
                let tc = tb + 1;
                // (p, b, c), (p, c, a), (p, a, b), all counterclockwise
                self.tris[ta] = Tri { v: [p_idx, b, c], nbr: [t.nbr[0], tb as i32, tc as i32] };
                self.tris.push(Tri { v: [p_idx, c, a], nbr: [t.nbr[1], tc as i32, ta as i32] });
                self.tris.push(Tri { v: [p_idx, a, b], nbr: [t.nbr[2], ta as i32, tb as i32] });
                self.set_nbr(t.nbr[1], ti, tb);
                self.set_nbr(t.nbr[2], ti, tc);
                stack.push((ta, 0));
                stack.push((tb, 0));
                stack.push((tc, 0));
            }
            Locate::OnEdge(ti, e) => {
                let t = self.tris[ti];
                let a = t.v[e];
                let b = t.v[(e + 1) % 3];
                let c = t.v[(e + 2) % 3];
                let ni = t.nbr[e];
                if ni < 0 {
                    return Err(Error::Generation("point on the super-triangle boundary".into()));
                }
                let ni = ni as usize;
                let nt = self.tris[ni];
                let ne = (0..3)
                    .find(|&k| nt.nbr[k] == ti as i32)
                    .expect("neighbor link must be mutual");
                let d = nt.v[ne];
                // Triangles around p, replacing t and its edge neighbor:
                //   t1 = (a, b, p), t2 = (a, p, c), t3 = (d, p, b), t4 = (d, c, p)
                let t1 = ti;
                let t3 = ni;
                let t2 = self.tris.len();
                let t4 = t2 + 1;
                let nbr_ab = t.nbr[(e + 2) % 3];
                let nbr_ca = t.nbr[(e + 1) % 3];
                let nbr_db = nt.nbr[(ne + 1) % 3];
                let nbr_cd = nt.nbr[(ne + 2) % 3];
                self.tris[t1] = Tri { v: [a, b, p_idx], nbr: [t3 as i32, t2 as i32, nbr_ab] };
                self.tris[t3] = Tri { v: [d, p_idx, b], nbr: [t1 as i32, nbr_db, t4 as i32] };
                self.tris.push(Tri { v: [a, p_idx, c], nbr: [t4 as i32, nbr_ca, t1 as i32] });
                self.tris.push(Tri { v: [d, c, p_idx], nbr: [t2 as i32, t3 as i32, nbr_cd] });
                self.set_nbr(nbr_ca, ti, t2);
                self.set_nbr(nbr_cd, ni, t4);
                stack.push((t1, 2));
                stack.push((t3, 1));
                stack.push((t2, 1));
                stack.push((t4, 2));
            }
        }
        self.legalize(p_idx, &mut stack);
        self.hint = self.tris.len() - 1;
        Ok(())
    }

    /// Flip edges until every queued edge satisfies the in-circle test.
    fn legalize(&mut self, p_idx: usize, stack: &mut Vec<(usize, usize)>) {
        while let Some((ti, e)) = stack.pop() {
            let t = self.tris[ti];
            // only legalize edges opposite the inserted point
            if t.v[e] != p_idx {
                continue;
            }
            let ni = t.nbr[e];
            if ni < 0 {
                continue;
            }
            let ni = ni as usize;
            let nt = self.tris[ni];
            let ne = (0..3).find(|&k| nt.nbr[k] == ti as i32).expect("mutual link");
            let q = nt.v[ne];
            let pr = self.points[p_idx];
            let b = t.v[(e + 1) % 3];
            let c = t.v[(e + 2) % 3];
            let det = incircle(
                coord(pr),
                coord(self.points[b]),
                coord(self.points[c]),
                coord(self.points[q]),
            );
            if det <= 0.0 {
                continue;
            }
            // flip (b, c) -> (p, q): t becomes (p, b, q), n becomes (p, q, c)
            let nbr_pb = t.nbr[(e + 2) % 3];
            let nbr_cp = t.nbr[(e + 1) % 3];
            let nbr_bq = nt.nbr[(ne + 1) % 3];
            let nbr_qc = nt.nbr[(ne + 2) % 3];
            self.tris[ti] = Tri { v: [p_idx, b, q], nbr: [nbr_bq, ni as i32, nbr_pb] };
            self.tris[ni] = Tri { v: [p_idx, q, c], nbr: [nbr_qc, nbr_cp, ti as i32] };
            self.set_nbr(nbr_bq, ni, ti);
            self.set_nbr(nbr_cp, ti, ni);
            stack.push((ti, 0));
            stack.push((ni, 0));
        }
    }

    /// Triangles among the real (non-super) vertices, counterclockwise.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        self.tris
            .iter()
            .filter(|t| t.v.iter().all(|&v| v < self.n_real))
            .map(|t| t.v)
            .collect()
    }

    /// Adjacency among real vertices through real triangles.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.n_real];
        for t in self.triangles() {
            for i in 0..3 {
                let a = t[i];
                let b = t[(i + 1) % 3];
                if !nbrs[a].contains(&b) {
                    nbrs[a].push(b);
                }
                if !nbrs[b].contains(&a) {
                    nbrs[b].push(a);
                }
            }
        }
        nbrs
    }

    #[cfg(test)]
    fn check_consistency(&self) {
        for (ti, t) in self.tris.iter().enumerate() {
            assert!(
                self.orient(t.v[0], t.v[1], self.points[t.v[2]]) > 0.0,
                "triangle {ti} not counterclockwise"
            );
            for e in 0..3 {
                if t.nbr[e] >= 0 {
                    let nt = &self.tris[t.nbr[e] as usize];
                    assert!(
                        nt.nbr.contains(&(ti as i32)),
                        "neighbor link {ti}->{} not mutual",
                        t.nbr[e]
                    );
                }
            }
        }
    }

    #[cfg(test)]
    fn check_delaunay(&self) {
        for t in &self.tris {
            for (ti2, t2) in self.tris.iter().enumerate() {
                let _ = ti2;
                for &q in &t2.v {
                    if t.v.contains(&q) {
                        continue;
                    }
                    let det = incircle(
                        coord(self.points[t.v[0]]),
                        coord(self.points[t.v[1]]),
                        coord(self.points[t.v[2]]),
                        coord(self.points[q]),
                    );
                    assert!(det <= 0.0, "in-circle violation");
                }
            }
        }
    }
}

/// Indices of `points` sorted along a Morton (Z-order) curve, which keeps
/// successive insertions spatially close so the locate walk stays short.
fn morton_order(points: &[[f64; 2]]) -> Vec<usize> {
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let inv = [
        if hi[0] > lo[0] { 65535.0 / (hi[0] - lo[0]) } else { 0.0 },
        if hi[1] > lo[1] { 65535.0 / (hi[1] - lo[1]) } else { 0.0 },
    ];
    let mut keys: Vec<(u64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let qx = ((p[0] - lo[0]) * inv[0]) as u32;
            let qy = ((p[1] - lo[1]) * inv[1]) as u32;
            (interleave(qx) | (interleave(qy) << 1), i)
        })
        .collect();
    keys.sort_unstable();
    keys.into_iter().map(|(_, i)| i).collect()
}

fn interleave(x: u32) -> u64 {
    let mut v = x as u64;
    v = (v | (v << 16)) & 0x0000_ffff_0000_ffff;
    v = (v | (v << 8)) & 0x00ff_00ff_00ff_00ff;
    v = (v | (v << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    v = (v | (v << 2)) & 0x3333_3333_3333_3333;
    v = (v | (v << 1)) & 0x5555_5555_5555_5555;
    v
}
