//! Indexed triangle meshes: topology checks, OBJ / binary PLY I/O and
//! polygon-with-hole triangulation on exact orientation predicates.

use std::collections::HashMap;
use std::io::BufRead;

use robust::{orient2d, Coord};
use thiserror::Error;

use crate::geom::Vec3;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("malformed {format} input at line {line}: {reason}")]
    Parse { format: &'static str, line: usize, reason: String },
    #[error("polygon could not be triangulated: {0}")]
    Triangulation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

/// Edge-incidence summary of a mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Topology {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub boundary_edges: usize,
    pub nonmanifold_edges: usize,
    /// Directed edges used twice (inconsistent orientation).
    pub flipped_edges: usize,
}

impl Topology {
    pub fn euler(&self) -> i64 {
        self.vertices as i64 - self.edges as i64 + self.faces as i64
    }

    pub fn closed(&self) -> bool {
        self.boundary_edges == 0 && self.nonmanifold_edges == 0
    }

    pub fn oriented(&self) -> bool {
        self.flipped_edges == 0
    }
}

impl TriMesh {
    pub fn new() -> Self {
        TriMesh::default()
    }

    pub fn add_vertex(&mut self, p: Vec3) -> u32 {
        self.vertices.push(p);
        (self.vertices.len() - 1) as u32
    }

    pub fn topology(&self) -> Topology {
        let mut undirected: HashMap<(u32, u32), usize> = HashMap::new();
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                used[a as usize] = true;
                *undirected.entry((a.min(b), a.max(b))).or_default() += 1;
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        Topology {
            vertices: used.iter().filter(|u| **u).count(),
            edges: undirected.len(),
            faces: self.triangles.len(),
            boundary_edges: undirected.values().filter(|&&c| c == 1).count(),
            nonmanifold_edges: undirected.values().filter(|&&c| c > 2).count(),
            flipped_edges: directed.values().filter(|&&c| c > 1).count(),
        }
    }

    /// Copy keeping only referenced vertices, renumbered in first-use order.
    pub fn compact(&self) -> TriMesh {
        let mut map = vec![u32::MAX; self.vertices.len()];
        let mut out = TriMesh::new();
        for t in &self.triangles {
            let mut nt = [0u32; 3];
            for i in 0..3 {
                let v = t[i] as usize;
                if map[v] == u32::MAX {
                    map[v] = out.add_vertex(self.vertices[v]);
                }
                nt[i] = map[v];
            }
            out.triangles.push(nt);
        }
        out
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]]
    }

    /// Enclosed volume (positive for outward orientation).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = [self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]];
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn to_obj(&self, name: &str) -> String {
        let mut s = String::with_capacity(64 * (self.vertices.len() + self.triangles.len()));
        s.push_str(&format!("o {name}\n"));
        for v in &self.vertices {
            s.push_str(&format!("v {:e} {:e} {:e}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        s
    }

    pub fn from_obj<R: BufRead>(r: R) -> Result<TriMesh, MeshError> {
        let mut m = TriMesh::new();
        for (no, line) in r.lines().enumerate() {
            let line = line?;
            let mut it = line.split_whitespace();
            let err = |reason: &str| MeshError::Parse { format: "OBJ", line: no + 1, reason: reason.into() };
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it.take(3).map(|x| x.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| err("bad coordinate"))?;
                    if c.len() != 3 {
                        return Err(err("vertex needs three coordinates"));
                    }
                    m.vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|x| x.split('/').next().unwrap_or("").parse::<u32>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| err("bad face index"))?;
                    if idx.len() != 3 || idx.iter().any(|&i| i == 0 || i as usize > m.vertices.len()) {
                        return Err(err("faces must be triangles with valid indices"));
                    }
                    m.triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {}
            }
        }
        Ok(m)
    }

    /// Binary little-endian PLY with double coordinates.
    pub fn to_ply(&self) -> Vec<u8> {
        let header = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        );
        let mut out = header.into_bytes();
        out.reserve(24 * self.vertices.len() + 13 * self.triangles.len());
        for v in &self.vertices {
            for c in [v.x, v.y, v.z] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        for t in &self.triangles {
            out.push(3);
            for i in t {
                out.extend_from_slice(&(*i as i32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_ply<R: BufRead>(mut r: R) -> Result<TriMesh, MeshError> {
        let err = |line: usize, reason: &str| MeshError::Parse { format: "PLY", line, reason: reason.into() };
        let mut nv = None;
        let mut nf = None;
        let mut line_no = 0;
        loop {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(err(line_no, "missing end_header"));
            }
            line_no += 1;
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["ply"] | ["comment", ..] => {}
                ["format", f, _] if *f != "binary_little_endian" => return Err(err(line_no, "only binary_little_endian is supported")),
                ["format", ..] => {}
                ["element", "vertex", n] => nv = Some(n.parse::<usize>().map_err(|_| err(line_no, "bad count"))?),
                ["element", "face", n] => nf = Some(n.parse::<usize>().map_err(|_| err(line_no, "bad count"))?),
                ["property", "double", _] | ["property", "list", "uchar", "int", _] => {}
                ["property", ..] => return Err(err(line_no, "unsupported property layout")),
                ["end_header"] => break,
                _ => return Err(err(line_no, "unexpected header line")),
            }
        }
        let (nv, nf) = (nv.ok_or_else(|| err(line_no, "no vertex element"))?, nf.unwrap_or(0));
        let mut m = TriMesh::new();
        let mut buf8 = [0u8; 8];
        for _ in 0..nv {
            let mut c = [0.0; 3];
            for x in &mut c {
                r.read_exact(&mut buf8)?;
                *x = f64::from_le_bytes(buf8);
            }
            m.vertices.push(Vec3::new(c[0], c[1], c[2]));
        }
        let mut buf4 = [0u8; 4];
        for _ in 0..nf {
            let mut n = [0u8; 1];
            r.read_exact(&mut n)?;
            if n[0] != 3 {
                return Err(err(line_no, "faces must be triangles"));
            }
            let mut t = [0u32; 3];
            for x in &mut t {
                r.read_exact(&mut buf4)?;
                let i = i32::from_le_bytes(buf4);
                if i < 0 || i as usize >= nv {
                    return Err(err(line_no, "face index out of range"));
                }
                *x = i as u32;
            }
            m.triangles.push(t);
        }
        Ok(m)
    }
}

fn c2(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

/// Exact sign of the orientation of `a, b, c`.
pub fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    orient2d(c2(a), c2(b), c2(c))
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    let on = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
    };
    (o1 == 0.0 && on(a, b, c)) || (o2 == 0.0 && on(a, b, d)) || (o3 == 0.0 && on(c, d, a)) || (o4 == 0.0 && on(c, d, b))
}

/// Triangulates a simple CCW polygon `outer` with optional CW holes.
/// Returns triangles as indices into `outer ++ holes[0] ++ holes[1] ...`, CCW.
pub fn triangulate(outer: &[[f64; 2]], holes: &[Vec<[f64; 2]>]) -> Result<Vec<[usize; 3]>, MeshError> {
    let mut pts: Vec<[f64; 2]> = outer.to_vec();
    let mut ring: Vec<usize> = (0..outer.len()).collect();
    let mut offset = outer.len();
    // Bridge holes in order of decreasing rightmost x.
    let mut order: Vec<usize> = (0..holes.len()).collect();
    let rightmost = |h: &Vec<[f64; 2]>| h.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    order.sort_by(|&a, &b| rightmost(&holes[b]).total_cmp(&rightmost(&holes[a])));
    let mut starts = vec![0; holes.len()];
    for (hi, h) in holes.iter().enumerate() {
        starts[hi] = offset;
        pts.extend_from_slice(h);
        offset += h.len();
    }
    for &hi in &order {
        let h = &holes[hi];
        let base = starts[hi];
        let m = (0..h.len()).max_by(|&a, &b| h[a][0].total_cmp(&h[b][0]).then(b.cmp(&a))).expect("nonempty hole");
        let mp = h[m];
        let mut cands: Vec<usize> = (0..ring.len()).collect();
        cands.sort_by(|&a, &b| {
            let da = (pts[ring[a]][0] - mp[0]).powi(2) + (pts[ring[a]][1] - mp[1]).powi(2);
            let db = (pts[ring[b]][0] - mp[0]).powi(2) + (pts[ring[b]][1] - mp[1]).powi(2);
            da.total_cmp(&db).then(a.cmp(&b))
        });
        let mut edges: Vec<([f64; 2], [f64; 2], usize, usize)> = Vec::new();
        for i in 0..ring.len() {
            let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
            edges.push((pts[a], pts[b], a, b));
        }
        for (j, hh) in holes.iter().enumerate() {
            for i in 0..hh.len() {
                let (a, b) = (starts[j] + i, starts[j] + (i + 1) % hh.len());
                edges.push((pts[a], pts[b], a, b));
            }
        }
        let mi = base + m;
        let pick = cands.into_iter().find(|&c| {
            let p = ring[c];
            let pp = pts[p];
            // The bridge must leave p into the polygon interior.
            let prev = pts[ring[(c + ring.len() - 1) % ring.len()]];
            let next = pts[ring[(c + 1) % ring.len()]];
            let convex = orient(prev, pp, next) > 0.0;
            let inside = if convex {
                orient(prev, pp, mp) > 0.0 && orient(pp, next, mp) > 0.0
            } else {
                !(orient(prev, pp, mp) <= 0.0 && orient(pp, next, mp) <= 0.0)
            };
            inside
                && edges.iter().all(|&(a, b, ia, ib)| {
                    ia == p || ib == p || ia == mi || ib == mi || pts[ia] == pp || pts[ib] == pp || !segments_cross(a, b, pp, mp)
                })
        });
        let c = pick.ok_or_else(|| MeshError::Triangulation("no visible bridge vertex".into()))?;
        let p = ring[c];
        let mut spliced = Vec::with_capacity(ring.len() + h.len() + 2);
        spliced.extend_from_slice(&ring[..=c]);
        for s in 0..=h.len() {
            spliced.push(base + (m + s) % h.len());
        }
        spliced.push(p);
        spliced.extend_from_slice(&ring[c + 1..]);
        ring = spliced;
    }
    ear_clip(&pts, ring)
}

fn ear_clip(pts: &[[f64; 2]], mut ring: Vec<usize>) -> Result<Vec<[usize; 3]>, MeshError> {
    let mut out = Vec::with_capacity(ring.len());
    let mut guard = 0usize;
    let mut i = 0usize;
    while ring.len() > 3 {
        let n = ring.len();
        let (a, b, c) = (ring[(i + n - 1) % n], ring[i % n], ring[(i + 1) % n]);
        let (pa, pb, pc) = (pts[a], pts[b], pts[c]);
        let mut ear = orient(pa, pb, pc) > 0.0;
        if ear {
            for &v in &ring {
                let pv = pts[v];
                if v == a || v == b || v == c || pv == pa || pv == pb || pv == pc {
                    continue;
                }
                if orient(pa, pb, pv) >= 0.0 && orient(pb, pc, pv) >= 0.0 && orient(pc, pa, pv) >= 0.0 {
                    ear = false;
                    break;
                }
            }
        }
        if ear {
            out.push([a, b, c]);
            ring.remove(i % n);
            guard = 0;
            i = if i == 0 { 0 } else { i - 1 };
        } else {
            i = (i + 1) % n;
            guard += 1;
            if guard > 2 * n {
                return Err(MeshError::Triangulation(format!("no ear among {n} remaining vertices")));
            }
        }
    }
    if ring.len() == 3 {
        let (pa, pb, pc) = (pts[ring[0]], pts[ring[1]], pts[ring[2]]);
        if orient(pa, pb, pc) > 0.0 {
            out.push([ring[0], ring[1], ring[2]]);
        } else {
            return Err(MeshError::Triangulation("final triangle is degenerate".into()));
        }
    }
    Ok(out)
}
