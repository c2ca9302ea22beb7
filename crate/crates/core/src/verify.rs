//! Certification checks: exact mesh self-intersection and the surface-level
//! lemma tables.

use std::sync::Arc;

use rayon::prelude::*;
use robust::{orient3d, Coord3D};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::Bvh;
use crate::cantor::{BinaryIndex, CantorSystem};
use crate::curve::{ArcCurve, Curve};
use crate::geom::{any_orthogonal, point_segment_distance, point_triangle_distance, Aabb, Vec3};
use crate::mesh::{orient, TriMesh};
use crate::report::{LemmaEntry, LemmaReport};
use crate::surface::{tentacle_disk_mesh, EnergyLedger, SurfaceApprox, SurfaceConfig, SurfaceError};
use crate::tentacle::{make_tentacle, TubeMap};
use crate::tree::{Branch, CantorTree};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("{} degenerate triangles, first {:?}", .0.len(), .0.first())]
    Degenerate(Vec<usize>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BvhStats {
    pub triangles: usize,
    pub nodes: usize,
    pub candidate_pairs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntersectionReport {
    /// Offending pairs `(i, j)` with `i < j`, sorted.
    pub pairs: Vec<(usize, usize)>,
    pub bvh: BvhStats,
    pub shared_edge_pairs: usize,
    pub shared_vertex_pairs: usize,
}

impl IntersectionReport {
    pub fn pass(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Both orderings of every offending pair.
    pub fn symmetric_pairs(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = self.pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect();
        v.sort_unstable();
        v
    }
}

fn c3(p: &Vec3) -> Coord3D<f64> {
    Coord3D { x: p.x, y: p.y, z: p.z }
}

fn o3(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    orient3d(c3(a), c3(b), c3(c), c3(d))
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Exactly collinear (or coincident) corners.
pub fn is_degenerate(t: &[Vec3; 3]) -> bool {
    (0..3).all(|drop| {
        let p = |v: &Vec3| project(v, drop);
        orient(p(&t[0]), p(&t[1]), p(&t[2])) == 0.0
    })
}

fn project(v: &Vec3, drop: usize) -> [f64; 2] {
    match drop {
        0 => [v.y, v.z],
        1 => [v.z, v.x],
        _ => [v.x, v.y],
    }
}

/// Coordinate axis along which the triangle projects without collapsing.
fn dominant_axis(t: &[Vec3; 3]) -> usize {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
    let a = n.abs();
    if a.x >= a.y && a.x >= a.z {
        0
    } else if a.y >= a.z {
        1
    } else {
        2
    }
}

fn on_segment_2d(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> bool {
    r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
}

fn segments_meet_2d(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (o1, o2, o3, o4) = (sign(orient(a, b, c)), sign(orient(a, b, d)), sign(orient(c, d, a)), sign(orient(c, d, b)));
    if o1 * o2 < 0 && o3 * o4 < 0 {
        return true;
    }
    (o1 == 0 && on_segment_2d(a, b, c))
        || (o2 == 0 && on_segment_2d(a, b, d))
        || (o3 == 0 && on_segment_2d(c, d, a))
        || (o4 == 0 && on_segment_2d(c, d, b))
}

fn point_in_triangle_2d(p: [f64; 2], t: [[f64; 2]; 3]) -> bool {
    let s = [sign(orient(t[0], t[1], p)), sign(orient(t[1], t[2], p)), sign(orient(t[2], t[0], p))];
    !(s.contains(&1) && s.contains(&-1))
}

/// Closed segment against closed triangle, exact.
pub fn segment_meets_triangle(a: &Vec3, b: &Vec3, t: &[Vec3; 3]) -> bool {
    let sa = sign(o3(&t[0], &t[1], &t[2], a));
    let sb = sign(o3(&t[0], &t[1], &t[2], b));
    if sa * sb > 0 {
        return false;
    }
    if sa == 0 && sb == 0 {
        let ax = dominant_axis(t);
        let tp = [project(&t[0], ax), project(&t[1], ax), project(&t[2], ax)];
        let (pa, pb) = (project(a, ax), project(b, ax));
        return point_in_triangle_2d(pa, tp)
            || point_in_triangle_2d(pb, tp)
            || (0..3).any(|i| segments_meet_2d(pa, pb, tp[i], tp[(i + 1) % 3]));
    }
    let s = [sign(o3(a, b, &t[0], &t[1])), sign(o3(a, b, &t[1], &t[2])), sign(o3(a, b, &t[2], &t[0]))];
    !(s.contains(&1) && s.contains(&-1))
}

/// Closed triangles with no shared corners, exact.
pub fn triangles_meet(p: &[Vec3; 3], q: &[Vec3; 3]) -> bool {
    (0..3).any(|i| segment_meets_triangle(&p[i], &p[(i + 1) % 3], q))
        || (0..3).any(|i| segment_meets_triangle(&q[i], &q[(i + 1) % 3], p))
}

enum Adjacency {
    None,
    Vertex(usize, usize),
    Edge(usize, usize),
}

fn adjacency(a: &[u32; 3], b: &[u32; 3]) -> Adjacency {
    let mut shared = Vec::with_capacity(3);
    for (i, x) in a.iter().enumerate() {
        if let Some(j) = b.iter().position(|y| y == x) {
            shared.push((i, j));
        }
    }
    match shared.len() {
        0 => Adjacency::None,
        1 => Adjacency::Vertex(shared[0].0, shared[0].1),
        2 => {
            let ia = 3 - shared[0].0 - shared[1].0;
            let ib = 3 - shared[0].1 - shared[1].1;
            Adjacency::Edge(ia, ib)
        }
        _ => Adjacency::Edge(usize::MAX, usize::MAX),
    }
}

fn pair_intersects(p: &[Vec3; 3], q: &[Vec3; 3], adj: &Adjacency) -> bool {
    match *adj {
        Adjacency::None => triangles_meet(p, q),
        Adjacency::Vertex(i, j) => {
            // Contact beyond the shared corner reaches an opposite edge.
            segment_meets_triangle(&p[(i + 1) % 3], &p[(i + 2) % 3], q)
                || segment_meets_triangle(&q[(j + 1) % 3], &q[(j + 2) % 3], p)
        }
        Adjacency::Edge(i, j) => {
            if i == usize::MAX {
                return true;
            }
            // Folded onto each other: coplanar with both apexes on one side.
            if o3(&p[0], &p[1], &p[2], &q[j]) != 0.0 {
                return false;
            }
            let (e0, e1) = (p[(i + 1) % 3], p[(i + 2) % 3]);
            let ax = dominant_axis(p);
            let side = |v: &Vec3| sign(orient(project(&e0, ax), project(&e1, ax), project(v, ax)));
            side(&p[i]) == side(&q[j])
        }
    }
}

/// All intersecting triangle pairs, excluding the contact that adjacency implies.
pub fn self_intersection(mesh: &TriMesh) -> Result<IntersectionReport, VerifyError> {
    let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|i| mesh.triangle(i)).collect();
    let degenerate: Vec<usize> = tris.par_iter().enumerate().filter(|(_, t)| is_degenerate(t)).map(|(i, _)| i).collect();
    if !degenerate.is_empty() {
        return Err(VerifyError::Degenerate(degenerate));
    }
    let boxes: Vec<Aabb> = tris
        .iter()
        .map(|t| {
            let mut b = Aabb::empty();
            t.iter().for_each(|v| b.grow(v));
            b
        })
        .collect();
    let bvh = Bvh::build(boxes.clone());
    let per: Vec<(Vec<(usize, usize)>, usize, usize, usize)> = (0..tris.len())
        .into_par_iter()
        .map(|i| {
            let mut hits = Vec::new();
            let (mut cand, mut se, mut sv) = (0, 0, 0);
            for j in bvh.query(&boxes[i]) {
                if j <= i {
                    continue;
                }
                cand += 1;
                let adj = adjacency(&mesh.triangles[i], &mesh.triangles[j]);
                match adj {
                    Adjacency::Edge(..) => se += 1,
                    Adjacency::Vertex(..) => sv += 1,
                    Adjacency::None => {}
                }
                if pair_intersects(&tris[i], &tris[j], &adj) {
                    hits.push((i, j));
                }
            }
            hits.sort_unstable();
            (hits, cand, se, sv)
        })
        .collect();
    let mut report = IntersectionReport {
        bvh: BvhStats { triangles: tris.len(), nodes: bvh.node_count(), candidate_pairs: 0 },
        ..Default::default()
    };
    for (hits, cand, se, sv) in per {
        report.pairs.extend(hits);
        report.bvh.candidate_pairs += cand;
        report.shared_edge_pairs += se;
        report.shared_vertex_pairs += sv;
    }
    Ok(report)
}

/// Cells resolved this many levels below the checked level in distance bounds.
const RESOLVE: usize = 10;

fn parent_cell(system: &CantorSystem, index: &BinaryIndex) -> Result<(BinaryIndex, f64), SurfaceError> {
    let parent = index.parent().expect("site below the root");
    Ok((parent, system.cell(&parent)?.diameter))
}

/// Evenly spaced subset of at most `max` ids.
fn subsample(ids: &[usize], max: usize) -> Vec<usize> {
    if ids.len() <= max {
        return ids.to_vec();
    }
    (0..max).map(|i| ids[i * ids.len() / max]).collect()
}

/// Per level-`k` site: the largest certified distance from the images of the
/// site's region (its ball and everything grafted inside it) to
/// `C_{parent}`, against `2^{-k+4} + diam C_{parent}`.
pub fn verify_image_lemma(approx: &SurfaceApprox, system: &CantorSystem, k: usize, samples: usize) -> Result<LemmaReport, SurfaceError> {
    let sites: Vec<_> = approx.sites_at(k).collect();
    let depth = (k + RESOLVE).min(system.max_depth());
    let entries: Vec<LemmaEntry> = sites
        .par_iter()
        .map(|s| {
            let (parent, diam) = parent_cell(system, &s.index)?;
            let bound = 2f64.powi(4 - k as i32) + diam;
            let ids = subsample(&approx.subtree_vertex_ids(&s.index), samples);
            let measured = ids.iter().map(|&v| system.distance_upper(&approx.vertices[v], &parent, depth)).fold(0.0, f64::max);
            Ok(LemmaEntry::new(s.index.to_string(), measured, bound))
        })
        .collect::<Result<_, SurfaceError>>()?;
    Ok(LemmaReport::new("l2", k, samples, entries))
}

/// `2^{-k+4} + 2 max diam C_{i1..ik-1}`.
pub fn continuity_bound(system: &CantorSystem, k: usize) -> Result<f64, SurfaceError> {
    Ok(2f64.powi(4 - k as i32) + 2.0 * system.max_cell_diameter(k - 1)?)
}

/// Bounds for `k = 1..=depth` and whether they strictly decrease.
pub fn continuity_table(system: &CantorSystem, depth: usize) -> Result<(Vec<f64>, bool), SurfaceError> {
    let table: Vec<f64> = (1..=depth).map(|k| continuity_bound(system, k)).collect::<Result<_, _>>()?;
    let decreasing = table.windows(2).all(|w| w[1] < w[0]);
    Ok((table, decreasing))
}

/// Per length-`k` prefix: `sup |f(x) - c_code|` over the prefix's region,
/// with `c_code` the resolved point of the prefix extended by zeros plus its
/// error radius, against `2^{-k+4} + 2 diam C_{i1..ik-1}`.
pub fn continuity_modulus(approx: &SurfaceApprox, system: &CantorSystem, k: usize, samples: usize) -> Result<LemmaReport, SurfaceError> {
    let sites: Vec<_> = approx.sites_at(k).collect();
    let resolve = (k + RESOLVE).min(system.max_depth());
    let entries: Vec<LemmaEntry> = sites
        .par_iter()
        .map(|s| {
            let (_, diam) = parent_cell(system, &s.index)?;
            let bound = 2f64.powi(4 - k as i32) + 2.0 * diam;
            let (c, err) = SurfaceApprox::evaluate_code(system, &s.index, resolve)?;
            let ids = subsample(&approx.subtree_vertex_ids(&s.index), samples);
            let measured = ids.iter().map(|&v| (approx.vertices[v] - c).norm()).fold(0.0, f64::max) + err;
            Ok(LemmaEntry::new(s.index.to_string(), measured, bound))
        })
        .collect::<Result<_, SurfaceError>>()?;
    let (table, decreasing) = continuity_table(system, approx.depth.max(k))?;
    let note = format!("bounds by level {:?}, strictly decreasing: {decreasing}", table);
    Ok(LemmaReport::new("continuity", k, samples, entries).with_note(note))
}

/// Stage-`k` mesh against the branches of order above `k`.
pub fn tail_disjointness(approx: &SurfaceApprox, tree: &CantorTree, k: usize) -> Result<LemmaReport, SurfaceError> {
    let tris = approx.stage_triangles(k)?;
    let tail: Vec<&Branch> = tree.tail(k).collect();
    Ok(tail_disjointness_mesh(&approx.vertices, &tris, &tail, k))
}

/// Exact segment crossing tests of every branch polyline against the mesh,
/// plus the sampled mesh distance of every branch sample after the start.
/// A branch's start point is excluded (the tail meets the surface only at
/// the anchors it grows from), so its first segment starts a millionth of
/// the way along. Entries record `-distance` against `0`; a crossing
/// records `0` and fails.
pub fn tail_disjointness_mesh(vertices: &[Vec3], triangles: &[[u32; 3]], branches: &[&Branch], k: usize) -> LemmaReport {
    let tri = |i: usize| {
        let t = triangles[i];
        [vertices[t[0] as usize], vertices[t[1] as usize], vertices[t[2] as usize]]
    };
    let boxes: Vec<Aabb> = (0..triangles.len())
        .map(|i| {
            let mut b = Aabb::empty();
            tri(i).iter().for_each(|v| b.grow(v));
            b
        })
        .collect();
    let bvh = Bvh::build(boxes);
    let samples = branches.iter().map(|b| b.samples.len()).max().unwrap_or(0);
    let entries: Vec<LemmaEntry> = branches
        .par_iter()
        .map(|b| {
            let mut pts = b.samples.clone();
            pts[0] = pts[0] + (pts[1] - pts[0]) * 1e-6;
            let crossed = pts.windows(2).any(|w| {
                let mut bx = Aabb::empty();
                bx.grow(&w[0]);
                bx.grow(&w[1]);
                bvh.query(&bx).into_iter().any(|i| segment_meets_triangle(&w[0], &w[1], &tri(i)))
            });
            let dist = b.samples[1..]
                .iter()
                .filter_map(|p| {
                    bvh.nearest(p, |i| {
                        let [a, bb, c] = tri(i);
                        point_triangle_distance(p, &a, &bb, &c)
                    })
                })
                .map(|(_, d)| d)
                .fold(f64::INFINITY, f64::min);
            let measured = if crossed { 0.0 } else { -dist };
            LemmaEntry::new(b.index.to_string(), measured, 0.0)
        })
        .collect();
    LemmaReport::new("tail-disjoint", k, samples, entries)
}

/// Negative control for the tail check: a tentacle over branch `index`
/// (continued straight past its anchor) whose tube radius is widened until
/// its wall separates the two ends of some tail branch, so that branch must
/// cross it. Returns the open tentacle mesh and the tail report against
/// that branch.
pub fn widened_tentacle_control(tree: &CantorTree, index: &BinaryIndex, cfg: &SurfaceConfig) -> Result<(TriMesh, LemmaReport), SurfaceError> {
    let k = index.len();
    let branch = tree.branch(index).ok_or(SurfaceError::TreeTooShallow { have: tree.depth, need: k })?;
    let j = branch.curve.clone();
    let l = j.length();
    let ext = ArcCurve::from_fn(|t| j.point(t), 0.0, 2.0 * l, 256, Some(j.d1(0.0)), None, 1e-9)?;
    let axis = ext.samples(2048);
    let near = |p: &Vec3| {
        let (mut best, mut at) = (f64::INFINITY, 0);
        for (i, w) in axis.windows(2).enumerate() {
            let d = point_segment_distance(p, &w[0], &w[1]);
            if d < best {
                best = d;
                at = i;
            }
        }
        (best, at)
    };
    let interior = |at: usize| at > 0 && at + 2 < axis.len();
    let own = branch.end();
    let mut pick: Option<(&Branch, f64, f64)> = None;
    for b in tree.tail(k) {
        if b.start() == own {
            continue;
        }
        let ((d0, a0), (d1, a1)) = (near(&b.start()), near(&b.end()));
        if !(interior(a0) && interior(a1)) || !(d0 < 0.9 * d1) {
            continue;
        }
        if pick.is_none_or(|(_, p0, p1)| d0 / d1 < p0 / p1) {
            pick = Some((b, d0, d1));
        }
    }
    let (target, d0, d1) = pick.ok_or_else(|| SurfaceError::Config(format!("no tail branch separable around {index}")))?;
    let delta = d0 + d1;
    let tube = TubeMap::new(Arc::new(ext), any_orthogonal(&j.d1(0.0)), delta).map_err(|e| SurfaceError::Tentacle { index: index.to_string(), source: e })?;
    let t = make_tentacle(tube, [0.0, 0.0], delta, 2, 1e3, cfg.smoothing, f64::INFINITY).map_err(|e| SurfaceError::Tentacle { index: index.to_string(), source: e })?;
    if !(t.plateau_radius() > d0 && t.support_radius() < d1) {
        return Err(SurfaceError::Config(format!("widened wall [{:e}, {:e}] does not separate {:e} and {:e}", t.plateau_radius(), t.support_radius(), d0, d1)));
    }
    let mesh = tentacle_disk_mesh(&t, cfg);
    let report = tail_disjointness_mesh(&mesh.vertices, &mesh.triangles, &[target], k).with_note(format!("tentacle over {index} widened to δ = {delta:e}"));
    Ok((mesh, report))
}

/// Recomputes the energy ledger from the site certificates.
pub fn energy_ledger_check(approx: &SurfaceApprox) -> EnergyLedger {
    EnergyLedger::from_sites(&approx.sites, approx.schedule, approx.config.n, approx.depth)
}

/// Per level-`k` site: largest distance from the tentacle's vertices to its
/// curve against `2^{-k}`.
pub fn tube_proximity(approx: &SurfaceApprox, k: usize) -> LemmaReport {
    let sites: Vec<_> = approx.sites_at(k).collect();
    let entries: Vec<LemmaEntry> = sites
        .par_iter()
        .map(|s| {
            let t = approx.tentacle(&s.index).expect("meshed site");
            let curve = t.tube.curve.samples(512);
            let measured = approx
                .site_vertex_ids(&s.index)
                .map(|v| {
                    let p = approx.vertices[v];
                    curve.windows(2).map(|w| point_segment_distance(&p, &w[0], &w[1])).fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max);
            LemmaEntry::new(s.index.to_string(), measured, 0.5f64.powi(k as i32))
        })
        .collect();
    LemmaReport::new("tube", k, 512, entries)
}

/// UV sphere, outward CCW.
pub fn uv_sphere(center: Vec3, radius: f64, rings: usize, segments: usize) -> TriMesh {
    let mut m = TriMesh::new();
    let top = m.add_vertex(center + Vec3::z() * radius);
    for r in 1..rings {
        let phi = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let th = std::f64::consts::TAU * s as f64 / segments as f64;
            m.add_vertex(center + radius * Vec3::new(phi.sin() * th.cos(), phi.sin() * th.sin(), phi.cos()));
        }
    }
    let bottom = m.add_vertex(center - Vec3::z() * radius);
    let at = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
    for s in 0..segments {
        m.triangles.push([top, at(1, s), at(1, s + 1)]);
        m.triangles.push([bottom, at(rings - 1, s + 1), at(rings - 1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            m.triangles.push([at(r, s), at(r + 1, s), at(r + 1, s + 1)]);
            m.triangles.push([at(r, s), at(r + 1, s + 1), at(r, s + 1)]);
        }
    }
    m
}

/// Torus surface around `axis`, outward CCW.
pub fn torus_mesh(center: Vec3, axis: Vec3, major: f64, minor: f64, nu: usize, nv: usize) -> TriMesh {
    let w = axis.normalize();
    let u = crate::geom::any_orthogonal(&w);
    let v = w.cross(&u);
    let mut m = TriMesh::new();
    for i in 0..nu {
        let a = std::f64::consts::TAU * i as f64 / nu as f64;
        let radial = u * a.cos() + v * a.sin();
        for j in 0..nv {
            let b = std::f64::consts::TAU * j as f64 / nv as f64;
            m.add_vertex(center + radial * (major + minor * b.cos()) + w * (minor * b.sin()));
        }
    }
    let at = |i: usize, j: usize| ((i % nu) * nv + j % nv) as u32;
    for i in 0..nu {
        for j in 0..nv {
            m.triangles.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            m.triangles.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    m
}

/// Disjoint union of meshes.
pub fn merge(meshes: &[&TriMesh]) -> TriMesh {
    let mut out = TriMesh::new();
    for m in meshes {
        let off = out.vertices.len() as u32;
        out.vertices.extend_from_slice(&m.vertices);
        out.triangles.extend(m.triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::v3;

    #[test]
    fn sphere_is_clean() {
        let s = uv_sphere(Vec3::zeros(), 1.0, 24, 48);
        let topo = s.topology();
        assert_eq!(topo.euler(), 2);
        assert!(topo.closed() && topo.oriented());
        assert!(s.signed_volume() > 0.0);
        assert!(self_intersection(&s).unwrap().pass());
    }

    #[test]
    fn torus_is_clean_and_overlap_is_caught() {
        let a = torus_mesh(Vec3::zeros(), Vec3::z(), 1.0, 0.3, 48, 16);
        assert_eq!(a.topology().euler(), 0);
        assert!(a.signed_volume() > 0.0);
        assert!(self_intersection(&a).unwrap().pass());
        let b = torus_mesh(v3(0.5, 0.0, 0.0), Vec3::z(), 1.0, 0.3, 48, 16);
        let r = self_intersection(&merge(&[&a, &b])).unwrap();
        assert!(!r.pass());
        let n = a.triangles.len();
        assert!(r.pairs.iter().all(|&(i, j)| i < n && j >= n));
    }

    #[test]
    fn coplanar_cases() {
        let t = [v3(0.0, 0.0, 0.0), v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0)];
        let inner = [v3(0.1, 0.1, 0.0), v3(0.3, 0.1, 0.0), v3(0.1, 0.3, 0.0)];
        assert!(triangles_meet(&t, &inner));
        let apart = [v3(1.0, 1.0, 0.0), v3(2.0, 1.0, 0.0), v3(1.0, 2.0, 0.0)];
        assert!(!triangles_meet(&t, &apart));
        let touching = [v3(0.5, 0.5, 0.0), v3(2.0, 1.0, 0.0), v3(1.0, 2.0, 0.0)];
        assert!(triangles_meet(&t, &touching));
        // Flat fan: neighbours sharing an edge do not count.
        let mut m = TriMesh::new();
        for p in [v3(0.0, 0.0, 0.0), v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0), v3(-1.0, 0.0, 0.0), v3(0.0, -1.0, 0.0)] {
            m.add_vertex(p);
        }
        m.triangles = vec![[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]];
        let r = self_intersection(&m).unwrap();
        assert!(r.pass());
        assert_eq!(r.shared_edge_pairs, 4);
        // A folded flap over its neighbour does.
        m.triangles.push([0, 2, 5]);
        m.add_vertex(v3(0.4, 0.3, 0.0));
        assert!(!self_intersection(&m).unwrap().pass());
    }

    #[test]
    fn crossing_pair_and_degenerate() {
        let t = [v3(0.0, 0.0, 0.0), v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0)];
        let pierce = [v3(0.2, 0.2, -1.0), v3(0.2, 0.2, 1.0), v3(5.0, 5.0, 0.5)];
        assert!(triangles_meet(&t, &pierce));
        let above = [v3(0.2, 0.2, 0.1), v3(0.3, 0.2, 1.0), v3(0.2, 0.3, 1.0)];
        assert!(!triangles_meet(&t, &above));
        let mut m = TriMesh::new();
        for p in [v3(0.0, 0.0, 0.0), v3(1.0, 1.0, 1.0), v3(2.0, 2.0, 2.0)] {
            m.add_vertex(p);
        }
        m.triangles.push([0, 1, 2]);
        assert!(matches!(self_intersection(&m), Err(VerifyError::Degenerate(_))));
    }
}
