//! Anchor points near the Cantor cells and smooth branches joining them.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bvh::Bvh;
use crate::cantor::{BinaryIndex, CantorError, CantorSystem};
use crate::curve::{ArcCurve, Curve, CurveError};
use crate::geom::{any_orthogonal, point_segment_distance, segment_segment_distance, v3, Aabb, Vec3};
use crate::report::{LemmaEntry, LemmaReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("no admissible anchor for cell {index} after {attempts} attempts: {reason}")]
    AnchorFailed { index: String, attempts: usize, reason: String },
    #[error("routing branch {index} failed: {reason}; blocking: {blockers:?}")]
    RoutingFailed { index: String, reason: String, blockers: Vec<String> },
    #[error("branches {first} and {second} come within {distance:e} (required {required:e})")]
    BranchesTooClose { first: String, second: String, distance: f64, required: f64 },
    #[error("tree depth must be at least 1")]
    Depth,
    #[error(transparent)]
    Cantor(#[from] CantorError),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeConfig {
    /// Anchor offset below the cell as a fraction of `2^{-k}` (times the ambient scale when below 1).
    pub anchor_offset: f64,
    /// Lateral jitter radius as a fraction of the offset or the cell diameter, whichever is smaller.
    pub jitter: f64,
    /// Extra junction angle beyond a right angle, radians.
    pub angle_margin: f64,
    /// Required separation of non-adjacent branches as a fraction of the chord length.
    pub clearance: f64,
    pub retries: usize,
    /// Extra levels of cells used as exclusion geometry for C.
    pub exclusion_levels: usize,
    pub route_iterations: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { anchor_offset: 0.9, jitter: 0.05, angle_margin: 0.05, clearance: 1e-4, retries: 16, exclusion_levels: 8, route_iterations: 300 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub index: BinaryIndex,
    pub position: Vec3,
    /// Certified lower bound on the distance to C.
    pub clearance: f64,
    /// Certified upper bound on the distance to the anchor's own cell part of C.
    pub proximity: f64,
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub index: BinaryIndex,
    pub curve: Arc<ArcCurve>,
    /// Angle between the reversed incoming tangent and this branch's start tangent.
    pub junction_angle: f64,
    /// Largest sampled distance from the chord.
    pub deviation: f64,
    pub straight: bool,
    pub samples: Vec<Vec3>,
}

impl Branch {
    pub fn order(&self) -> usize {
        self.index.len()
    }

    pub fn length(&self) -> f64 {
        self.curve.length()
    }

    pub fn start(&self) -> Vec3 {
        self.curve.point(0.0)
    }

    pub fn end(&self) -> Vec3 {
        self.curve.point(self.curve.length())
    }

    pub fn start_tangent(&self) -> Vec3 {
        self.curve.tangent(0.0)
    }

    pub fn end_tangent(&self) -> Vec3 {
        self.curve.tangent(self.curve.length())
    }

    /// A rigidly shifted copy (used to build violated controls).
    pub fn translated(&self, v: Vec3) -> Result<Branch, TreeError> {
        let pts: Vec<Vec3> = self.curve.samples(64).iter().map(|p| p + v).collect();
        let curve = if self.straight {
            ArcCurve::straight(pts[0], pts[64])?
        } else {
            ArcCurve::fit(&pts, Some(self.start_tangent()), Some(self.end_tangent()), 1e-7)?
        };
        let samples = self.samples.iter().map(|p| p + v).collect();
        Ok(Branch { curve: Arc::new(curve), samples, ..self.clone() })
    }
}

fn sample_count(straight: bool, curve: &ArcCurve) -> usize {
    if straight {
        16
    } else {
        (4 * curve.knot_count()).clamp(64, 1024)
    }
}

#[derive(Clone, Debug)]
pub struct CantorTree {
    pub depth: usize,
    pub seed: u64,
    pub root: Vec3,
    /// Normal of the base disk; root branches leave along its side.
    pub normal: Vec3,
    pub config: TreeConfig,
    anchors: BTreeMap<BinaryIndex, Anchor>,
    branches: BTreeMap<BinaryIndex, Branch>,
}

fn index_seed(seed: u64, index: &BinaryIndex) -> u64 {
    let mut x = seed ^ (index.bits().rotate_left(7)) ^ ((index.len() as u64) << 57);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn exclusion_depth(system: &CantorSystem, k: usize, cfg: &TreeConfig) -> usize {
    (k + cfg.exclusion_levels).min(system.max_depth())
}

/// Picks `A_index` below the cell, off C and within `2^{-k}` of the cell.
pub fn select_anchor(system: &CantorSystem, index: &BinaryIndex, seed: u64, cfg: &TreeConfig) -> Result<Anchor, TreeError> {
    let k = index.len();
    let cell = system.cell(index)?;
    let scale = system.ambient().scale.min(1.0);
    let base = cell.geometry.anchor_base();
    let deep = exclusion_depth(system, k, cfg);
    let bound = 0.5f64.powi(k as i32);
    let mut rng = ChaCha8Rng::seed_from_u64(index_seed(seed, index));
    let mut reason = String::from("no attempts");
    for attempt in 0..cfg.retries {
        let off = cfg.anchor_offset * bound * scale * 0.85f64.powi(attempt as i32);
        let r = cfg.jitter * off.min(cell.diameter) * rng.random::<f64>().sqrt();
        let th = TAU * rng.random::<f64>();
        let p = base + v3(r * th.cos(), r * th.sin(), -off);
        let clearance = system.distance_lower(&p, &BinaryIndex::root(), deep);
        if !(clearance > 0.0) {
            reason = format!("candidate {attempt} touches C");
            continue;
        }
        let proximity = system.distance_upper(&p, index, deep);
        if proximity < bound {
            return Ok(Anchor { index: *index, position: p, clearance, proximity });
        }
        reason = format!("candidate {attempt} is {proximity:e} from its cell");
    }
    Err(TreeError::AnchorFailed { index: index.to_string(), attempts: cfg.retries, reason })
}

/// Polyline obstacles (other branches) with a segment hierarchy.
pub struct Obstacles {
    segs: Vec<(Vec3, Vec3, BinaryIndex)>,
    bvh: Bvh,
}

impl Obstacles {
    pub fn new<'a, I: IntoIterator<Item = &'a Branch>>(branches: I) -> Self {
        let mut segs = Vec::new();
        for b in branches {
            for w in b.samples.windows(2) {
                segs.push((w[0], w[1], b.index));
            }
        }
        let boxes = segs
            .iter()
            .map(|(a, b, _)| {
                let mut bx = Aabb::empty();
                bx.grow(a);
                bx.grow(b);
                bx
            })
            .collect();
        Obstacles { bvh: Bvh::build(boxes), segs }
    }

    pub fn empty() -> Self {
        Obstacles::new(std::iter::empty())
    }

    /// Nearest obstacle point, skipping branches for which `skip` holds.
    pub fn nearest<F: Fn(&BinaryIndex) -> bool>(&self, p: &Vec3, skip: F) -> Option<(Vec3, f64, BinaryIndex)> {
        let (i, d) = self.bvh.nearest(p, |i| {
            let (a, b, idx) = &self.segs[i];
            if skip(idx) {
                f64::INFINITY
            } else {
                point_segment_distance(p, a, b)
            }
        })?;
        if !d.is_finite() {
            return None;
        }
        let (a, b, idx) = &self.segs[i];
        let ab = b - a;
        let t = if ab.norm_squared() > 0.0 { ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
        Some((a + ab * t, d, *idx))
    }
}

fn adjacent(a: &BinaryIndex, b: &BinaryIndex) -> bool {
    a.parent() == b.parent() || a.parent().as_ref() == Some(b) || b.parent().as_ref() == Some(a)
}

/// Builds `J_index` from `start` (where the incoming branch has tangent `t_in`) to `end`.
#[allow(clippy::too_many_arguments)]
pub fn build_branch(
    system: &CantorSystem,
    obstacles: &Obstacles,
    index: &BinaryIndex,
    start: Vec3,
    t_in: Vec3,
    end: Vec3,
    cfg: &TreeConfig,
) -> Result<Branch, TreeError> {
    let k = index.len() - 1;
    let bound = 0.5f64.powi(k as i32);
    let chord = end - start;
    let len = chord.norm();
    if !(len > 0.0) {
        return Err(TreeError::RoutingFailed { index: index.to_string(), reason: "endpoints coincide".into(), blockers: vec![] });
    }
    let u = chord / len;
    let min_dot = cfg.angle_margin.sin();
    let t_in = t_in.normalize();
    let scale = system.ambient().scale.min(1.0);
    let deep = exclusion_depth(system, k + 1, cfg);
    let skip = |o: &BinaryIndex| o == index || adjacent(o, index);

    if t_in.dot(&u) > min_dot + 0.02 {
        let curve = ArcCurve::straight(start, end)?;
        if let Ok(b) = finish_branch(system, obstacles, index, curve, true, t_in, cfg, deep) {
            return Ok(b);
        }
    }
    // Start direction tilted toward the incoming tangent when the chord turns too sharply.
    let mut t0 = u;
    let mut mu = 0.0;
    while t0.dot(&t_in) < min_dot + 0.1 {
        mu = if mu == 0.0 { 0.1 } else { mu * 1.5 };
        t0 = (u + t_in * mu).normalize();
    }
    let n = 64usize;
    let target = (0.2 * cfg.anchor_offset * bound * scale).min(0.1 * len);
    let reach = (0.25 * len).min(0.5 * bound / t0.cross(&u).norm().max(1e-3));
    let ctrl = start + t0 * reach;
    let mut pts: Vec<Vec3> = (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            start * ((1.0 - s) * (1.0 - s)) + ctrl * (2.0 * s * (1.0 - s)) + end * (s * s)
        })
        .collect();
    let side = any_orthogonal(&u);
    let mut blockers = Vec::new();
    for _ in 0..cfg.route_iterations {
        let mut moved = false;
        blockers.clear();
        for j in 2..n - 1 {
            let p = pts[j];
            let leaf = system.nearest_leaf(&BinaryIndex::root(), deep, |g| g.distance(&p)).0;
            let geo = system.cell(&leaf)?.geometry;
            let qc = geo.closest_point(&p);
            let mut best = (qc, (p - qc).norm(), None);
            if let Some((q, d, who)) = obstacles.nearest(&p, skip) {
                if d < best.1 {
                    best = (q, d, Some(who));
                }
            }
            let (q, d, who) = best;
            if d < target {
                // Push across the chord; sliding along it never clears an obstacle.
                let w = (p - q) - u * u.dot(&(p - q));
                let dir = if d > 1e-14 * len && w.norm() > 1e-3 * d { w / w.norm() } else { escape_direction(system, &p, &u, &side, target, deep) };
                pts[j] += dir * (0.6 * (target - d));
                moved = true;
                blockers.push(who.map(|w| w.to_string()).unwrap_or_else(|| format!("C cell {leaf}")));
            }
        }
        let prev = pts.clone();
        for j in 2..n - 1 {
            pts[j] = prev[j] + (prev[j - 1] + prev[j + 1] - prev[j] * 2.0) * 0.25;
        }
        for p in pts.iter_mut().take(n).skip(1) {
            let s = (*p - start).dot(&u).clamp(0.0, len);
            let foot = start + u * s;
            let off = *p - foot;
            if off.norm() > 0.5 * bound {
                *p = foot + off * (0.5 * bound / off.norm());
            }
        }
        pts[1] = start + t0 * (pts[1] - start).norm();
        if !moved {
            break;
        }
    }
    let curve = ArcCurve::fit(&pts, Some(t0), None, 1e-7)?;
    finish_branch(system, obstacles, index, curve, false, t_in, cfg, deep).map_err(|e| match e {
        TreeError::RoutingFailed { index, reason, blockers: b } => {
            let mut all = b;
            all.extend(blockers.iter().cloned());
            all.sort();
            all.dedup();
            TreeError::RoutingFailed { index, reason, blockers: all }
        }
        e => e,
    })
}

/// For a sample lying on C: the direction across the chord, among eight,
/// that gets farthest from C after a step of `step`.
fn escape_direction(system: &CantorSystem, p: &Vec3, u: &Vec3, side: &Vec3, step: f64, deep: usize) -> Vec3 {
    let other = u.cross(side);
    (0..8)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 8.0;
            let dir = side * a.cos() + other * a.sin();
            (dir, system.distance_lower(&(p + dir * step), &BinaryIndex::root(), deep))
        })
        .fold((*side, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
        .0
}

#[allow(clippy::too_many_arguments)]
fn finish_branch(
    system: &CantorSystem,
    obstacles: &Obstacles,
    index: &BinaryIndex,
    curve: ArcCurve,
    straight: bool,
    t_in: Vec3,
    cfg: &TreeConfig,
    deep: usize,
) -> Result<Branch, TreeError> {
    let fail = |reason: String, blockers: Vec<String>| TreeError::RoutingFailed { index: index.to_string(), reason, blockers };
    let k = index.len() - 1;
    let bound = 0.5f64.powi(k as i32);
    let speed = curve.max_speed_deviation(4);
    if speed > 1e-6 {
        return Err(fail(format!("speed deviation {speed:e}"), vec![]));
    }
    let samples = curve.samples(sample_count(straight, &curve));
    let (a, b) = (samples[0], *samples.last().expect("samples"));
    let deviation = samples.iter().map(|p| point_segment_distance(p, &a, &b)).fold(0.0, f64::max);
    if !(deviation < bound) {
        return Err(fail(format!("deviation {deviation:e} from the chord exceeds {bound:e}"), vec![]));
    }
    let t0 = curve.tangent(0.0);
    let junction_angle = std::f64::consts::PI - t_in.dot(&t0).clamp(-1.0, 1.0).acos();
    if !(junction_angle > std::f64::consts::FRAC_PI_2 + cfg.angle_margin) {
        return Err(fail(format!("junction angle {junction_angle:.4} too small"), vec![]));
    }
    // The chord polyline stays within half a step of the curve only for straight branches;
    // curved ones are certified through their dense samples with a Lipschitz slack.
    let h = curve.length() / (samples.len() - 1) as f64;
    for w in samples.windows(2) {
        let d = system.segment_distance_lower(&w[0], &w[1], &BinaryIndex::root(), deep);
        let slack = if straight { 0.0 } else { 0.5 * h };
        if !(d > slack) {
            return Err(fail(format!("passes within {d:e} of C"), vec!["C".into()]));
        }
    }
    let required = cfg.clearance * curve.length();
    let skip = |o: &BinaryIndex| o == index || adjacent(o, index);
    for p in &samples {
        if let Some((_, d, who)) = obstacles.nearest(p, skip) {
            if d <= required {
                return Err(fail(format!("within {d:e} of branch {who}"), vec![who.to_string()]));
            }
        }
    }
    Ok(Branch { index: *index, curve: Arc::new(curve), junction_angle, deviation, straight, samples })
}

impl CantorTree {
    pub fn anchor(&self, index: &BinaryIndex) -> Option<&Anchor> {
        self.anchors.get(index)
    }

    pub fn branch(&self, index: &BinaryIndex) -> Option<&Branch> {
        self.branches.get(index)
    }

    pub fn anchors(&self) -> impl Iterator<Item = &Anchor> {
        self.anchors.values()
    }

    pub fn branches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.values()
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Branches of order `k` (index length `k`).
    pub fn order(&self, k: usize) -> impl Iterator<Item = &Branch> {
        self.branches.values().filter(move |b| b.order() == k)
    }

    /// `T_k`: branches of order greater than `k`.
    pub fn tail(&self, k: usize) -> impl Iterator<Item = &Branch> {
        self.branches.values().filter(move |b| b.order() > k)
    }

    /// `B_k`: branches of order at most `k`.
    pub fn base(&self, k: usize) -> impl Iterator<Item = &Branch> {
        self.branches.values().filter(move |b| b.order() <= k)
    }

    /// Start point of a branch: the parent anchor, or the root for order 1.
    pub fn start_of(&self, index: &BinaryIndex) -> Vec3 {
        match index.parent() {
            Some(p) if !p.is_root() => self.anchors[&p].position,
            _ => self.root,
        }
    }

    /// Tangent of the incoming branch at the start of `index` (the disk normal for order 1).
    pub fn incoming_tangent(&self, index: &BinaryIndex) -> Vec3 {
        match index.parent() {
            Some(p) if !p.is_root() => self.branches[&p].end_tangent(),
            _ => self.normal,
        }
    }

    /// Swaps in a modified branch (negative controls).
    pub fn replace_branch(&mut self, branch: Branch) {
        self.branches.insert(branch.index, branch);
    }

    /// Minimum sampled distance between non-adjacent branches, and between
    /// adjacent ones away from their shared endpoint.
    pub fn branch_separation(&self) -> Separation {
        let list: Vec<&Branch> = self.branches.values().collect();
        let mut segs = Vec::new();
        for (bi, b) in list.iter().enumerate() {
            let m = b.samples.len() - 1;
            for j in 0..m {
                segs.push((bi, j, m));
            }
        }
        // Each branch looks for neighbours within 1% of its own length.
        let reach = 0.01;
        let boxes: Vec<Aabb> = segs
            .iter()
            .map(|&(bi, j, _)| {
                let mut bx = Aabb::empty();
                bx.grow(&list[bi].samples[j]);
                bx.grow(&list[bi].samples[j + 1]);
                bx.inflate(0.5 * reach * list[bi].length())
            })
            .collect();
        let bvh = Bvh::build(boxes);
        let pairs = bvh.overlapping_pairs();
        let results: Vec<(f64, bool, usize, usize, f64)> = pairs
            .par_iter()
            .filter_map(|&(x, y)| {
                let (bi, i, mi) = segs[x];
                let (bj, j, mj) = segs[y];
                if bi == bj {
                    return None;
                }
                let (a, b) = (list[bi], list[bj]);
                let adj = adjacent(&a.index, &b.index);
                if adj {
                    // Skip the segments that touch the shared endpoint.
                    let touches = |br: &Branch, s: usize, m: usize, p: &Vec3| (s == 0 && br.samples[0] == *p) || (s == m - 1 && br.samples[m] == *p);
                    let shared = [a.samples[0], a.samples[mi]]
                        .into_iter()
                        .find(|p| *p == b.samples[0] || *p == b.samples[mj]);
                    if let Some(p) = shared {
                        if touches(a, i, mi, &p) || touches(b, j, mj, &p) {
                            return None;
                        }
                    }
                }
                let d = segment_segment_distance(&a.samples[i], &a.samples[i + 1], &b.samples[j], &b.samples[j + 1]);
                let req = self.config.clearance * a.length().min(b.length());
                Some((d, adj, bi, bj, req))
            })
            .collect();
        let mut sep = Separation { nonadjacent: f64::INFINITY, adjacent: f64::INFINITY, worst: None, search_radius: reach, pass: true };
        for (d, adj, bi, bj, req) in results {
            if adj {
                sep.adjacent = sep.adjacent.min(d);
                if !(d > 0.0) {
                    sep.pass = false;
                }
            } else {
                if d < sep.nonadjacent {
                    sep.nonadjacent = d;
                    sep.worst = Some((list[bi].index.to_string(), list[bj].index.to_string()));
                }
                if !(d > req) {
                    sep.pass = false;
                }
            }
        }
        sep
    }

    pub fn to_json(&self, samples: usize) -> Value {
        let anchors: Vec<Value> = self
            .anchors
            .values()
            .map(|a| json!({"index": a.index.to_string(), "position": [a.position.x, a.position.y, a.position.z], "clearance": a.clearance, "proximity": a.proximity}))
            .collect();
        let branches: Vec<Value> = self
            .branches
            .values()
            .map(|b| {
                let pts: Vec<[f64; 3]> = b.curve.samples(samples).iter().map(|p| [p.x, p.y, p.z]).collect();
                json!({"index": b.index.to_string(), "length": b.length(), "junction_angle": b.junction_angle, "deviation": b.deviation, "straight": b.straight, "polyline": pts})
            })
            .collect();
        json!({"depth": self.depth, "seed": self.seed, "root": [self.root.x, self.root.y, self.root.z], "anchors": anchors, "branches": branches})
    }

    /// Branch polylines as OBJ `l` elements.
    pub fn to_obj(&self, samples: usize) -> String {
        let mut out = String::from("# cantor tree branches\n");
        let mut base = 1usize;
        for b in self.branches.values() {
            out.push_str(&format!("o J{}\n", b.index));
            let pts = b.curve.samples(samples);
            for p in &pts {
                out.push_str(&format!("v {:.17e} {:.17e} {:.17e}\n", p.x, p.y, p.z));
            }
            out.push('l');
            for i in 0..pts.len() {
                out.push_str(&format!(" {}", base + i));
            }
            out.push('\n');
            base += pts.len();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub nonadjacent: f64,
    pub adjacent: f64,
    pub worst: Option<(String, String)>,
    /// Pairs farther apart than this fraction of the longer branch were not measured.
    pub search_radius: f64,
    pub pass: bool,
}

/// Anchors and branches through depth `depth`, one level at a time.
pub fn build_tree(system: &CantorSystem, depth: usize, seed: u64, cfg: &TreeConfig) -> Result<CantorTree, TreeError> {
    if depth == 0 {
        return Err(TreeError::Depth);
    }
    if depth > system.max_depth() {
        return Err(CantorError::DepthExceeded { index: format!("tree depth {depth}"), len: depth, max: system.max_depth() }.into());
    }
    let mut tree = CantorTree {
        depth,
        seed,
        root: Vec3::zeros(),
        normal: v3(0.0, 0.0, 1.0),
        config: cfg.clone(),
        anchors: BTreeMap::new(),
        branches: BTreeMap::new(),
    };
    let mut seen: HashSet<[u64; 3]> = HashSet::new();
    for k in 1..=depth {
        let level: Vec<BinaryIndex> = BinaryIndex::level(k).collect();
        let anchors: Vec<Anchor> = level.par_iter().map(|i| select_anchor(system, i, seed, cfg)).collect::<Result<_, _>>()?;
        for a in &anchors {
            if !seen.insert([a.position.x.to_bits(), a.position.y.to_bits(), a.position.z.to_bits()]) {
                return Err(TreeError::AnchorFailed { index: a.index.to_string(), attempts: 1, reason: "coincides with another anchor".into() });
            }
            tree.anchors.insert(a.index, a.clone());
        }
        let obstacles = Obstacles::new(tree.branches.values());
        let built: Vec<Branch> = level
            .par_iter()
            .map(|i| build_branch(system, &obstacles, i, tree.start_of(i), tree.incoming_tangent(i), tree.anchors[i].position, cfg))
            .collect::<Result<_, _>>()?;
        for b in built {
            if b.order() == 1 {
                let below = b.samples.iter().skip(1).find(|p| !(p.dot(&tree.normal) > 0.0));
                if below.is_some() {
                    return Err(TreeError::RoutingFailed { index: b.index.to_string(), reason: "root branch returns to the base plane".into(), blockers: vec![] });
                }
            }
            tree.branches.insert(b.index, b);
        }
    }
    let sep = tree.branch_separation();
    if !sep.pass {
        let (a, b) = sep.worst.clone().unwrap_or_default();
        return Err(TreeError::BranchesTooClose { first: a, second: b, distance: sep.nonadjacent.min(sep.adjacent), required: cfg.clearance });
    }
    Ok(tree)
}

/// Sampled check that every order-(k+1) branch lies within
/// `2^{-k+2} + diam C_w` of `C_w`, `w` its parent index.
pub fn verify_branch_proximity(tree: &CantorTree, system: &CantorSystem, k: usize) -> Result<LemmaReport, TreeError> {
    let deep = |len: usize| exclusion_depth(system, len, &tree.config);
    let branches: Vec<&Branch> = tree.order(k + 1).collect();
    let entries: Vec<LemmaEntry> = branches
        .par_iter()
        .map(|b| {
            let w = b.index.parent().expect("order >= 1");
            let cell = system.cell(&w)?;
            let bound = 0.5f64.powi(k as i32 - 2) + cell.diameter;
            let measured = b.samples.iter().map(|p| system.distance_upper(p, &w, deep(k + 1))).fold(0.0, f64::max);
            Ok(LemmaEntry::new(b.index.to_string(), measured, bound))
        })
        .collect::<Result<_, TreeError>>()?;
    let samples = branches.first().map_or(0, |b| b.samples.len());
    let mut rep = LemmaReport::new("l1", k, samples, entries);
    if k == 0 {
        rep = rep.with_note("order-1 branches start at the root point; the lemma is stated for k >= 1");
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub eps: f64,
    /// `ε_j` for `j = 0..=depth`.
    pub eps_table: Vec<f64>,
    pub eps_decreasing: bool,
    pub report: LemmaReport,
}

/// `ε_k = 2^{-k+2} + max diam C_w` over level-k cells.
pub fn tail_epsilon(system: &CantorSystem, k: usize) -> Result<f64, CantorError> {
    Ok(0.5f64.powi(k as i32 - 2) + system.max_cell_diameter(k)?)
}

/// Checks that every sample of `T_k` lies within `ε_k` of C.
pub fn verify_tail_neighborhood(tree: &CantorTree, system: &CantorSystem, k: usize) -> Result<TailReport, TreeError> {
    let eps = tail_epsilon(system, k)?;
    let eps_table = (0..=tree.depth).map(|j| tail_epsilon(system, j)).collect::<Result<Vec<_>, _>>()?;
    let eps_decreasing = eps_table.windows(2).all(|w| w[1] < w[0]);
    let branches: Vec<&Branch> = tree.tail(k).collect();
    let entries: Vec<LemmaEntry> = branches
        .par_iter()
        .map(|b| {
            let deep = exclusion_depth(system, b.order(), &tree.config);
            let measured = b.samples.iter().map(|p| system.distance_upper(p, &BinaryIndex::root(), deep)).fold(0.0, f64::max);
            LemmaEntry::new(b.index.to_string(), measured, eps)
        })
        .collect();
    let samples = branches.first().map_or(0, |b| b.samples.len());
    let mut report = LemmaReport::new("c1", k, samples, entries);
    if k == 0 {
        report = report.with_note("T_0 contains the root branches from the origin; the bound presumes the origin within 1 of C");
    }
    Ok(TailReport { eps, eps_table, eps_decreasing, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cantor::Placement;

    #[test]
    fn ternary_tree_depth_three() {
        let sys = CantorSystem::ternary(Placement::default());
        let tree = build_tree(&sys, 3, 7, &TreeConfig::default()).unwrap();
        assert_eq!(tree.branch_count(), 14);
        assert!(tree.branch_separation().pass);
        for b in tree.branches() {
            assert!(b.junction_angle > std::f64::consts::FRAC_PI_2 + 0.05);
        }
        let again = build_tree(&sys, 3, 7, &TreeConfig::default()).unwrap();
        for (a, b) in tree.anchors().zip(again.anchors()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn anchor_close_to_cell() {
        let sys = CantorSystem::ternary(Placement::default());
        let idx = BinaryIndex::parse("0110100101").unwrap();
        let a = select_anchor(&sys, &idx, 3, &TreeConfig::default()).unwrap();
        assert!(a.proximity < 0.5f64.powi(10));
        assert!(a.clearance > 0.0);
    }
}
