//! Binary-indexed nested cell systems for Cantor sets in R³: the middle-thirds
//! segment, similarity IFS attractors and Antoine necklaces.

use std::collections::BinaryHeap;
use std::cmp::Ordering;
use std::fmt;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geom::{any_orthogonal, point_segment_distance, segment_segment_distance, v3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CantorError {
    #[error("index {index} has length {len} but the generator only resolves depth {max}")]
    DepthExceeded { index: String, len: usize, max: usize },
    #[error("invalid binary index '{0}'")]
    BadIndex(String),
    #[error("link count m={0} must be even and at least 4")]
    BadLinkCount(usize),
    #[error("infeasible Antoine chain at stage {stage}: tori {first} and {second}: {reason}")]
    Infeasible { stage: usize, first: usize, second: usize, reason: String },
    #[error("invalid generator parameters: {0}")]
    BadParameters(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("curves are {distance:e} apart, below tolerance; raw linking sum {raw}")]
    TooClose { distance: f64, raw: f64 },
}

/// A finite word over {0, 1}; the empty word is the root.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BinaryIndex {
    bits: u64,
    len: u8,
}

impl BinaryIndex {
    pub const MAX_LEN: usize = 63;

    pub fn root() -> Self {
        BinaryIndex { bits: 0, len: 0 }
    }

    /// Word of length `len` whose first symbol is the most significant of `bits`.
    pub fn from_bits(bits: u64, len: usize) -> Self {
        assert!(len <= Self::MAX_LEN);
        let mask = if len == 0 { 0 } else { (1u64 << len) - 1 };
        BinaryIndex { bits: bits & mask, len: len as u8 }
    }

    pub fn parse(s: &str) -> Result<Self, CantorError> {
        if s.len() > Self::MAX_LEN {
            return Err(CantorError::BadIndex(s.to_string()));
        }
        let mut idx = Self::root();
        for c in s.chars() {
            let b = match c {
                '0' => 0,
                '1' => 1,
                _ => return Err(CantorError::BadIndex(s.to_string())),
            };
            idx = idx.child(b);
        }
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_root(&self) -> bool {
        self.len == 0
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Symbol at position `j` (0-based).
    pub fn bit(&self, j: usize) -> u8 {
        debug_assert!(j < self.len());
        ((self.bits >> (self.len() - 1 - j)) & 1) as u8
    }

    pub fn child(&self, b: u8) -> Self {
        assert!(self.len() < Self::MAX_LEN, "binary index overflow");
        BinaryIndex { bits: (self.bits << 1) | (b as u64 & 1), len: self.len + 1 }
    }

    pub fn children(&self) -> [Self; 2] {
        [self.child(0), self.child(1)]
    }

    pub fn parent(&self) -> Option<Self> {
        if self.len == 0 {
            None
        } else {
            Some(BinaryIndex { bits: self.bits >> 1, len: self.len - 1 })
        }
    }

    pub fn prefix(&self, k: usize) -> Self {
        assert!(k <= self.len());
        BinaryIndex { bits: self.bits >> (self.len() - k), len: k as u8 }
    }

    pub fn is_prefix_of(&self, other: &Self) -> bool {
        self.len <= other.len && other.prefix(self.len()) == *self
    }

    /// Extends by zeros up to length `k`.
    pub fn extend_zeros(&self, k: usize) -> Self {
        assert!(k >= self.len() && k <= Self::MAX_LEN);
        BinaryIndex { bits: self.bits << (k - self.len()), len: k as u8 }
    }

    /// All words of length `k` in increasing order.
    pub fn level(k: usize) -> impl Iterator<Item = BinaryIndex> {
        assert!(k <= 30, "enumerating level {k} is not sensible");
        (0..(1u64 << k)).map(move |b| BinaryIndex::from_bits(b, k))
    }

    /// All descendants of length `k`.
    pub fn descendants(&self, k: usize) -> impl Iterator<Item = BinaryIndex> {
        assert!(k >= self.len() && k - self.len() <= 30);
        let base = self.bits << (k - self.len());
        let n = 1u64 << (k - self.len());
        (0..n).map(move |b| BinaryIndex::from_bits(base | b, k))
    }
}

impl Ord for BinaryIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len.cmp(&other.len).then(self.bits.cmp(&other.bits))
    }
}

impl PartialOrd for BinaryIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for BinaryIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.len() {
            write!(f, "{}", self.bit(j))?;
        }
        Ok(())
    }
}

impl fmt::Debug for BinaryIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{self}\"")
    }
}

impl Serialize for BinaryIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BinaryIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        BinaryIndex::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Middle-thirds interval of a ternary code: `a = Σ 2 i_j 3^{-j}`, `b = a + 3^{-k}`.
/// Up to 33 digits the endpoints are exact rationals rounded once, so
/// children nest inside their parent bit for bit.
pub fn ternary_interval(index: &BinaryIndex) -> (f64, f64) {
    if index.len() <= 33 {
        let mut num = 0u64;
        let mut den = 1u64;
        for j in 0..index.len() {
            num = 3 * num + 2 * index.bit(j) as u64;
            den *= 3;
        }
        return (num as f64 / den as f64, (num + 1) as f64 / den as f64);
    }
    let mut a = 0.0;
    let mut w = 1.0;
    for j in 0..index.len() {
        w /= 3.0;
        a += 2.0 * index.bit(j) as f64 * w;
    }
    (a, a + w)
}

/// Solid torus: core circle (center, unit axis, major radius) thickened by `minor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Torus {
    pub center: [f64; 3],
    pub axis: [f64; 3],
    pub major: f64,
    pub minor: f64,
}

impl Torus {
    pub fn new(center: Vec3, axis: Vec3, major: f64, minor: f64) -> Self {
        let a = axis.normalize();
        Torus { center: [center.x, center.y, center.z], axis: [a.x, a.y, a.z], major, minor }
    }

    pub fn c(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn a(&self) -> Vec3 {
        Vec3::from(self.axis)
    }

    /// In-plane orthonormal basis of the core circle.
    pub fn basis(&self) -> (Vec3, Vec3) {
        let a = self.a();
        let e1 = any_orthogonal(&a);
        let e2 = a.cross(&e1);
        (e1, e2)
    }

    pub fn core_point(&self, angle: f64) -> Vec3 {
        let (e1, e2) = self.basis();
        self.c() + (e1 * angle.cos() + e2 * angle.sin()) * self.major
    }

    pub fn core_polyline(&self, n: usize) -> Vec<Vec3> {
        let (e1, e2) = self.basis();
        (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                self.c() + (e1 * t.cos() + e2 * t.sin()) * self.major
            })
            .collect()
    }

    pub fn core_distance(&self, p: &Vec3) -> f64 {
        let q = p - self.c();
        let z = q.dot(&self.a());
        let radial = (q.norm_squared() - z * z).max(0.0).sqrt();
        ((radial - self.major).powi(2) + z * z).sqrt()
    }

    /// Nearest point of the core circle.
    pub fn core_closest(&self, p: &Vec3) -> Vec3 {
        let q = p - self.c();
        let a = self.a();
        let inplane = q - a * q.dot(&a);
        let dir = if inplane.norm() > 0.0 { inplane.normalize() } else { self.basis().0 };
        self.c() + dir * self.major
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        (self.core_distance(p) - self.minor).max(0.0)
    }

    pub fn bounding_radius(&self) -> f64 {
        self.major + self.minor
    }

    pub fn transformed(&self, scale: f64, translation: &Vec3) -> Torus {
        Torus::new(self.c() * scale + translation, self.a(), self.major * scale, self.minor * scale)
    }
}

/// Region stored for a cell.
#[derive(Clone, Debug, PartialEq)]
pub enum CellGeometry {
    Segment { a: Vec3, b: Vec3 },
    Ball { center: Vec3, radius: f64 },
    Tori(Vec<Torus>),
}

impl CellGeometry {
    /// Exact distance from `p` to the region (0 inside).
    pub fn distance(&self, p: &Vec3) -> f64 {
        match self {
            CellGeometry::Segment { a, b } => point_segment_distance(p, a, b),
            CellGeometry::Ball { center, radius } => ((p - center).norm() - radius).max(0.0),
            CellGeometry::Tori(ts) => ts.iter().map(|t| t.distance(p)).fold(f64::INFINITY, f64::min),
        }
    }

    /// Lower bound on the distance from the segment `[a, b]` to the region.
    pub fn segment_distance_lower(&self, a: &Vec3, b: &Vec3) -> f64 {
        match self {
            CellGeometry::Segment { a: p, b: q } => segment_segment_distance(a, b, p, q),
            CellGeometry::Ball { center, radius } => (point_segment_distance(center, a, b) - radius).max(0.0),
            CellGeometry::Tori(ts) => {
                let len = (b - a).norm();
                let mut best = f64::INFINITY;
                for t in ts {
                    let coarse = point_segment_distance(&t.c(), a, b) - t.bounding_radius();
                    if coarse > 0.0 {
                        best = best.min(coarse);
                        continue;
                    }
                    // Samples every h along the segment; distance is 1-Lipschitz.
                    let m = ((len / (0.25 * t.minor)).ceil() as usize).clamp(1, 256);
                    let h = len / m as f64;
                    let mut d = f64::INFINITY;
                    for i in 0..=m {
                        d = d.min(t.distance(&(a + (b - a) * (i as f64 / m as f64))));
                    }
                    best = best.min((d - 0.5 * h).max(0.0));
                }
                best
            }
        }
    }

    /// A point of the region closest to `p`.
    pub fn closest_point(&self, p: &Vec3) -> Vec3 {
        match self {
            CellGeometry::Segment { a, b } => {
                let ab = b - a;
                let l2 = ab.norm_squared();
                let t = if l2 > 0.0 { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
                a + ab * t
            }
            CellGeometry::Ball { center, radius } => {
                let d = p - center;
                if d.norm() <= *radius {
                    *p
                } else {
                    center + d.normalize() * *radius
                }
            }
            CellGeometry::Tori(ts) => {
                let t = ts
                    .iter()
                    .min_by(|x, y| x.distance(p).total_cmp(&y.distance(p)))
                    .expect("nonempty torus group");
                let c = t.core_closest(p);
                let d = p - c;
                if d.norm() <= t.minor {
                    *p
                } else {
                    c + d.normalize() * t.minor
                }
            }
        }
    }

    /// The representative point used by `point_of`.
    pub fn center(&self) -> Vec3 {
        match self {
            CellGeometry::Segment { a, b } => (a + b) * 0.5,
            CellGeometry::Ball { center, .. } => *center,
            CellGeometry::Tori(ts) => ts[0].core_point(0.0),
        }
    }

    /// Centroid of the region's bounding pieces (the hole center for a single torus).
    pub fn anchor_base(&self) -> Vec3 {
        match self {
            CellGeometry::Tori(ts) => ts.iter().map(|t| t.c()).sum::<Vec3>() / ts.len() as f64,
            g => g.center(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CellGeometry::Segment { .. } => "segment",
            CellGeometry::Ball { .. } => "ball",
            CellGeometry::Tori(_) => "tori",
        }
    }

    /// Dense boundary/core samples used by brute-force oracles.
    pub fn samples(&self, n: usize) -> Vec<Vec3> {
        match self {
            CellGeometry::Segment { a, b } => (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect(),
            CellGeometry::Ball { center, radius } => fibonacci_sphere(n).into_iter().map(|d| center + d * *radius).collect(),
            CellGeometry::Tori(ts) => {
                let mut out = Vec::new();
                for t in ts {
                    let (e1, e2) = t.basis();
                    let a = t.a();
                    for i in 0..n {
                        let u = std::f64::consts::TAU * i as f64 / n as f64;
                        let radial = e1 * u.cos() + e2 * u.sin();
                        for j in 0..(n / 4).max(8) {
                            let w = std::f64::consts::TAU * j as f64 / (n / 4).max(8) as f64;
                            out.push(t.c() + radial * (t.major + t.minor * w.cos()) + a * (t.minor * w.sin()));
                        }
                    }
                }
                out
            }
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            CellGeometry::Segment { a, b } => json!({"type": "segment", "a": [a.x, a.y, a.z], "b": [b.x, b.y, b.z]}),
            CellGeometry::Ball { center, radius } => json!({"type": "ball", "center": [center.x, center.y, center.z], "radius": radius}),
            CellGeometry::Tori(ts) => json!({"type": "tori", "tori": ts}),
        }
    }
}

fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let t = golden * i as f64;
            v3(r * t.cos(), y, r * t.sin())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CantorCell {
    pub index: BinaryIndex,
    pub geometry: CellGeometry,
    pub diameter: f64,
}

impl CantorCell {
    pub fn to_json(&self) -> Value {
        json!({"index": self.index.to_string(), "geometry": self.geometry.to_json(), "diameter": self.diameter})
    }
}

/// Scale followed by translation, applied to the canonical generator geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ambient {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Ambient {
    pub fn identity() -> Self {
        Ambient { scale: 1.0, translation: [0.0; 3] }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + Vec3::from(self.translation)
    }
}

/// Where the root cell is put in space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    /// Unit diameter, nearest root-cell point at `distance` straight above the origin.
    Far { distance: f64 },
    /// Root diameter `diameter`, root center at height `height` above the origin.
    Desk { diameter: f64, height: f64 },
    /// The canonical coordinates unchanged.
    Canonical,
}

impl Default for Placement {
    fn default() -> Self {
        Placement::Far { distance: 150.0 }
    }
}

/// One contracting similarity `x ↦ ratio · R x + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub ratio: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Similarity {
    fn apply(&self, p: &Vec3) -> Vec3 {
        Matrix3::from_row_slice(&self.rotation.concat()) * p * self.ratio + Vec3::from(self.translation)
    }
}

/// Two-map IFS description; cells are images of a ball containing the attractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfsParams {
    pub maps: [Similarity; 2],
}

impl IfsParams {
    /// Ratio 0.4, offsets ±0.5 along x, the second map turning a quarter about x.
    pub fn default_pair() -> Self {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let quarter = [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]];
        IfsParams {
            maps: [
                Similarity { ratio: 0.4, rotation: id, translation: [-0.5, 0.0, 0.0] },
                Similarity { ratio: 0.4, rotation: quarter, translation: [0.5, 0.0, 0.0] },
            ],
        }
    }

    fn check(&self) -> Result<f64, CantorError> {
        let r0 = self.maps[0].ratio;
        if (self.maps[1].ratio - r0).abs() > 0.0 || !(r0 > 0.0 && r0 < 0.5) {
            return Err(CantorError::BadParameters("both maps need the same ratio in (0, 1/2)".into()));
        }
        let t0 = Vec3::from(self.maps[0].translation);
        let t1 = Vec3::from(self.maps[1].translation);
        let reach = t0.norm().max(t1.norm());
        // Ball of radius rho with S_i(B) inside B strictly: |t_i| + r rho < rho.
        let rho = 1.05 * reach / (1.0 - r0);
        if (t0 - t1).norm() <= 2.0 * r0 * rho {
            return Err(CantorError::BadParameters("first-level balls overlap".into()));
        }
        Ok(rho)
    }
}

/// Which Cantor set is represented.
#[derive(Clone, Debug)]
pub enum Generator {
    Ternary,
    Ifs { params: IfsParams, radius: f64 },
    Antoine(AntoineNecklace),
}

/// Nested binary cell system with an ambient placement.
#[derive(Clone, Debug)]
pub struct CantorSystem {
    generator: Generator,
    ambient: Ambient,
    max_depth: usize,
}

/// One parent's chain of linked child tori.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusChain {
    pub m: usize,
    pub tori: Vec<Torus>,
}

/// Child placement relative to a parent of unit major radius: tilt of the
/// first ring plane about the local tangent, child major radius and tube radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainLayout {
    pub tilt: f64,
    pub core: f64,
    pub tube: f64,
}

#[derive(Clone, Debug)]
struct TorusNode {
    torus: Torus,
    stage: usize,
    children: Vec<usize>,
}

/// Nested chains of linked tori, built stage by stage inside a seed torus.
#[derive(Clone, Debug)]
pub struct AntoineNecklace {
    m: usize,
    stages: usize,
    nodes: Vec<TorusNode>,
    layouts: Vec<ChainLayout>,
}

/// Samples per circle while searching and when certifying.
const SEARCH_SAMPLES: usize = 48;
const CERTIFY_SAMPLES: usize = 160;

fn canonical_children(m: usize, layout: &ChainLayout) -> Vec<Torus> {
    (0..m)
        .map(|j| {
            let th = std::f64::consts::TAU * j as f64 / m as f64;
            let u = v3(th.cos(), th.sin(), 0.0);
            let t = v3(-th.sin(), th.cos(), 0.0);
            let z = v3(0.0, 0.0, 1.0);
            let phi = layout.tilt + if j % 2 == 1 { std::f64::consts::FRAC_PI_2 } else { 0.0 };
            let w = u * phi.cos() + z * phi.sin();
            Torus::new(u, t.cross(&w), layout.core, layout.tube)
        })
        .collect()
}

/// Per-layout certificate pieces: allowed tube radius from containment and
/// from pairwise clearance, plus the first linking defect if any.
struct Margins {
    contain: f64,
    pair: f64,
    pair_at: (usize, usize),
    contain_at: usize,
    link_defect: Option<(usize, usize, i64)>,
}

fn chain_margins(m: usize, parent_tube: f64, layout: &ChainLayout, k: usize) -> Margins {
    let parent = Torus::new(Vec3::zeros(), v3(0.0, 0.0, 1.0), 1.0, parent_tube);
    let kids = canonical_children(m, &ChainLayout { tube: 0.0, ..*layout });
    let polys: Vec<Vec<Vec3>> = kids.iter().map(|t| t.core_polyline(k)).collect();
    let slack = std::f64::consts::PI * layout.core / k as f64;
    let mut contain = f64::INFINITY;
    let mut contain_at = 0;
    for (j, p) in polys.iter().enumerate() {
        let far = p.iter().map(|q| parent.core_distance(q)).fold(0.0, f64::max);
        let c = parent_tube - far - slack;
        if c < contain {
            contain = c;
            contain_at = j;
        }
    }
    let mut pair = f64::INFINITY;
    let mut pair_at = (0, 1);
    let mut link_defect = None;
    for i in 0..m {
        for j in (i + 1)..m {
            let d = polyline_distance(&polys[i], &polys[j]);
            let allowed = (d - 2.0 * slack) / 2.0;
            if allowed < pair {
                pair = allowed;
                pair_at = (i, j);
            }
            if link_defect.is_none() {
                let consecutive = j == i + 1 || (i == 0 && j == m - 1);
                let lk = linking_sum(&polys[i], &polys[j]).round() as i64;
                let ok = if consecutive { lk.abs() == 1 } else { lk == 0 };
                if !ok {
                    link_defect = Some((i, j, lk));
                }
            }
        }
    }
    Margins { contain, pair, pair_at, contain_at, link_defect }
}

fn polyline_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    let mut best = f64::INFINITY;
    let na = a.len();
    let nb = b.len();
    for i in 0..na {
        let (p0, p1) = (&a[i], &a[(i + 1) % na]);
        for j in 0..nb {
            let d = segment_segment_distance(p0, p1, &b[j], &b[(j + 1) % nb]);
            if d < best {
                best = d;
            }
        }
    }
    best
}

/// Finds the child layout with the fattest certified children for a parent of
/// unit major radius and tube `parent_tube`.
pub fn solve_chain_layout(m: usize, parent_tube: f64, stage: usize) -> Result<ChainLayout, CantorError> {
    if m < 4 || m % 2 == 1 {
        return Err(CantorError::BadLinkCount(m));
    }
    let tilts = [0.0, std::f64::consts::PI / 8.0, std::f64::consts::PI / 4.0];
    let mut grid = Vec::new();
    for &tilt in &tilts {
        let mut core = 0.1;
        while core < parent_tube.min(1.2) {
            grid.push((tilt, core));
            core += 0.02;
        }
    }
    let results: Vec<(f64, f64, Margins)> = grid
        .par_iter()
        .map(|&(tilt, core)| (tilt, core, chain_margins(m, parent_tube, &ChainLayout { tilt, core, tube: 0.0 }, SEARCH_SAMPLES)))
        .collect();
    let mut best: Option<(f64, ChainLayout)> = None;
    for (tilt, core, mg) in &results {
        if mg.link_defect.is_some() {
            continue;
        }
        let allowed = mg.contain.min(mg.pair);
        if allowed <= 0.0 {
            continue;
        }
        let tube = 0.8 * allowed;
        let aspect = tube / core;
        if best.is_none_or(|(a, _)| aspect > a) {
            best = Some((aspect, ChainLayout { tilt: *tilt, core: *core, tube }));
        }
    }
    let Some((_, mut layout)) = best else {
        // Report the first offending pair of the candidate closest to working.
        let linked: Vec<&(f64, f64, Margins)> = results.iter().filter(|r| r.2.link_defect.is_none()).collect();
        if let Some(r) = linked.iter().max_by(|x, y| x.2.contain.min(x.2.pair).total_cmp(&y.2.contain.min(y.2.pair))) {
            let mg = &r.2;
            return Err(if mg.contain <= mg.pair {
                CantorError::Infeasible {
                    stage,
                    first: mg.contain_at,
                    second: mg.contain_at,
                    reason: format!("child escapes the parent solid torus (margin {:.4} of parent major radius)", mg.contain),
                }
            } else {
                CantorError::Infeasible {
                    stage,
                    first: mg.pair_at.0,
                    second: mg.pair_at.1,
                    reason: format!("child cores only {:.4} apart, no room for tubes", 2.0 * mg.pair),
                }
            });
        }
        let (i, j, lk) = results.first().and_then(|r| r.2.link_defect).unwrap_or((0, 1, 0));
        return Err(CantorError::Infeasible { stage, first: i, second: j, reason: format!("linking number {lk} instead of the chain pattern") });
    };
    for _ in 0..8 {
        let mg = chain_margins(m, parent_tube, &ChainLayout { tube: 0.0, ..layout }, CERTIFY_SAMPLES);
        if mg.link_defect.is_none() && layout.tube < mg.contain.min(mg.pair) {
            return Ok(layout);
        }
        layout.tube *= 0.8;
    }
    Err(CantorError::Infeasible { stage, first: 0, second: 1, reason: "certification failed at dense sampling".into() })
}

impl AntoineNecklace {
    /// Grows `depth` stages of `m`-link chains inside `seed`.
    pub fn build(m: usize, seed: Torus, depth: usize) -> Result<Self, CantorError> {
        if m < 4 || m % 2 == 1 {
            return Err(CantorError::BadLinkCount(m));
        }
        if !(seed.minor > 0.0 && seed.minor < seed.major) {
            return Err(CantorError::BadParameters("seed torus needs 0 < tube < major radius".into()));
        }
        let mut layouts = Vec::new();
        let mut aspect = seed.minor / seed.major;
        for stage in 1..=depth {
            let l = solve_chain_layout(m, aspect, stage)?;
            aspect = l.tube / l.core;
            layouts.push(l);
        }
        let mut nodes = vec![TorusNode { torus: seed, stage: 0, children: Vec::new() }];
        let mut frontier = vec![0usize];
        for (s, layout) in layouts.iter().enumerate() {
            let canon = canonical_children(m, layout);
            let mut next = Vec::new();
            for &n in &frontier {
                let p = nodes[n].torus;
                let (e1, e2) = p.basis();
                let a = p.a();
                let map_dir = |v: &Vec3| e1 * v.x + e2 * v.y + a * v.z;
                let mut kids = Vec::with_capacity(m);
                for t in &canon {
                    let c = p.c() + map_dir(&t.c()) * p.major;
                    let child = Torus::new(c, map_dir(&t.a()), t.major * p.major, t.minor * p.major);
                    nodes.push(TorusNode { torus: child, stage: s + 1, children: Vec::new() });
                    kids.push(nodes.len() - 1);
                }
                nodes[n].children = kids.clone();
                next.extend(kids);
            }
            frontier = next;
        }
        Ok(AntoineNecklace { m, stages: depth, nodes, layouts })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn layouts(&self) -> &[ChainLayout] {
        &self.layouts
    }

    pub fn seed(&self) -> Torus {
        self.nodes[0].torus
    }

    /// Every torus of the given stage, in chain order.
    pub fn stage_tori(&self, stage: usize) -> Vec<Torus> {
        self.nodes.iter().filter(|n| n.stage == stage).map(|n| n.torus).collect()
    }

    /// All parent → chain relations, parents in creation order.
    pub fn chains(&self) -> Vec<(Torus, TorusChain)> {
        self.nodes
            .iter()
            .filter(|n| !n.children.is_empty())
            .map(|n| (n.torus, TorusChain { m: self.m, tori: n.children.iter().map(|&c| self.nodes[c].torus).collect() }))
            .collect()
    }

    fn binary_depth(&self, group: usize, stage_left: usize) -> usize {
        // Depth reachable below a group of `group` consecutive tori.
        if group >= 2 {
            1 + self.binary_depth(group.div_ceil(2), stage_left).min(self.binary_depth(group / 2, stage_left))
        } else if stage_left > 0 {
            self.binary_depth(self.m, stage_left - 1)
        } else {
            0
        }
    }

    fn max_depth(&self) -> usize {
        if self.stages == 0 {
            0
        } else {
            self.binary_depth(self.m, self.stages - 1)
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum TorusCell {
    Node(usize),
    Arc { parent: usize, lo: usize, hi: usize },
}

impl CantorSystem {
    /// Middle-thirds set on the unit segment of the x axis.
    pub fn ternary_unit() -> Self {
        CantorSystem { generator: Generator::Ternary, ambient: Ambient::identity(), max_depth: BinaryIndex::MAX_LEN }
    }

    pub fn ternary(placement: Placement) -> Self {
        Self::ternary_unit().placed(placement)
    }

    pub fn ifs(params: IfsParams, placement: Placement) -> Result<Self, CantorError> {
        let radius = params.check()?;
        let ratio = params.maps[0].ratio;
        let mut depth = 0;
        while depth < BinaryIndex::MAX_LEN && radius * ratio.powi(depth as i32 + 1) > 1e-12 {
            depth += 1;
        }
        Ok(CantorSystem { generator: Generator::Ifs { params, radius }, ambient: Ambient::identity(), max_depth: depth }.placed(placement))
    }

    pub fn antoine(necklace: AntoineNecklace, placement: Placement) -> Self {
        let max_depth = necklace.max_depth();
        CantorSystem { generator: Generator::Antoine(necklace), ambient: Ambient::identity(), max_depth }.placed(placement)
    }

    /// Vertical seed ring (axis along y) of unit major radius and the given tube.
    pub fn default_seed(aspect: f64) -> Torus {
        Torus::new(Vec3::zeros(), v3(0.0, 1.0, 0.0), 1.0, aspect)
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn kind(&self) -> &'static str {
        match self.generator {
            Generator::Ternary => "ternary",
            Generator::Ifs { .. } => "ifs",
            Generator::Antoine(_) => "antoine",
        }
    }

    pub fn ambient(&self) -> Ambient {
        self.ambient
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Re-places the root cell; earlier ambient settings are discarded.
    pub fn placed(mut self, placement: Placement) -> Self {
        self.ambient = Ambient::identity();
        let root = self.canonical_root();
        let d0 = self.canonical_diameter();
        let c0 = root.anchor_base();
        match placement {
            Placement::Canonical => {}
            Placement::Desk { diameter, height } => {
                let s = diameter / d0;
                let t = v3(0.0, 0.0, height) - c0 * s;
                self.ambient = Ambient { scale: s, translation: [t.x, t.y, t.z] };
            }
            Placement::Far { distance } => {
                let s = 1.0 / d0;
                let mut z = distance;
                for _ in 0..4 {
                    let t = v3(0.0, 0.0, z) - c0 * s;
                    self.ambient = Ambient { scale: s, translation: [t.x, t.y, t.z] };
                    let d = self.root_geometry().distance(&Vec3::zeros());
                    z += distance - d;
                }
                let t = v3(0.0, 0.0, z) - c0 * s;
                self.ambient = Ambient { scale: s, translation: [t.x, t.y, t.z] };
            }
        }
        self
    }

    fn canonical_diameter(&self) -> f64 {
        match &self.generator {
            Generator::Ternary => 1.0,
            Generator::Ifs { radius, .. } => 2.0 * radius,
            Generator::Antoine(n) => 2.0 * n.seed().bounding_radius(),
        }
    }

    fn canonical_root(&self) -> CellGeometry {
        match &self.generator {
            Generator::Ternary => CellGeometry::Segment { a: Vec3::zeros(), b: v3(1.0, 0.0, 0.0) },
            Generator::Ifs { radius, .. } => CellGeometry::Ball { center: Vec3::zeros(), radius: *radius },
            Generator::Antoine(n) => CellGeometry::Tori(vec![n.seed()]),
        }
    }

    pub fn root_geometry(&self) -> CellGeometry {
        self.cell(&BinaryIndex::root()).expect("root").geometry
    }

    fn check_depth(&self, index: &BinaryIndex) -> Result<(), CantorError> {
        if index.len() > self.max_depth {
            return Err(CantorError::DepthExceeded { index: index.to_string(), len: index.len(), max: self.max_depth });
        }
        Ok(())
    }

    /// Geometry and certified diameter of a cell.
    pub fn cell(&self, index: &BinaryIndex) -> Result<CantorCell, CantorError> {
        self.check_depth(index)?;
        let s = self.ambient.scale;
        let tr = Vec3::from(self.ambient.translation);
        let k = index.len();
        let (geometry, diameter) = match &self.generator {
            Generator::Ternary => {
                let (a, b) = ternary_interval(index);
                (CellGeometry::Segment { a: self.ambient.apply(&v3(a, 0.0, 0.0)), b: self.ambient.apply(&v3(b, 0.0, 0.0)) }, s * 3f64.powi(-(k as i32)))
            }
            Generator::Ifs { params, radius } => {
                let mut c = Vec3::zeros();
                for j in (0..k).rev() {
                    c = params.maps[index.bit(j) as usize].apply(&c);
                }
                let r = radius * params.maps[0].ratio.powi(k as i32);
                (CellGeometry::Ball { center: self.ambient.apply(&c), radius: s * r }, 2.0 * s * r)
            }
            Generator::Antoine(n) => {
                let mut cur = TorusCell::Node(0);
                let mut diam = 2.0 * n.nodes[0].torus.bounding_radius();
                for j in 0..k {
                    let b = index.bit(j) as usize;
                    let (parent, lo, hi) = match cur {
                        TorusCell::Node(id) => (id, 0, n.nodes[id].children.len()),
                        TorusCell::Arc { parent, lo, hi } => (parent, lo, hi),
                    };
                    let mid = lo + (hi - lo).div_ceil(2);
                    let (nlo, nhi) = if b == 0 { (lo, mid) } else { (mid, hi) };
                    cur = if nhi - nlo == 1 {
                        TorusCell::Node(n.nodes[parent].children[nlo])
                    } else {
                        TorusCell::Arc { parent, lo: nlo, hi: nhi }
                    };
                    let tori = torus_group(n, cur);
                    diam = diam.min(group_diameter_bound(&tori));
                }
                let tori: Vec<Torus> = torus_group(n, cur).iter().map(|t| t.transformed(s, &tr)).collect();
                (CellGeometry::Tori(tori), diam * s)
            }
        };
        Ok(CantorCell { index: *index, geometry, diameter })
    }

    /// Child `b` of a cell; segments split in thirds directly, other
    /// generators recompute from the index.
    pub fn child_cell(&self, parent: &CantorCell, b: u8) -> CantorCell {
        let index = parent.index.child(b);
        match (&self.generator, &parent.geometry) {
            (Generator::Ternary, CellGeometry::Segment { a, b: e }) => {
                let third = (e - a) / 3.0;
                let (na, nb) = if b == 0 { (*a, a + third) } else { (e - third, *e) };
                CantorCell { index, geometry: CellGeometry::Segment { a: na, b: nb }, diameter: parent.diameter / 3.0 }
            }
            _ => self.cell(&index).expect("depth checked"),
        }
    }

    /// Center of the depth-`resolve` cell extending `code` by zeros, with its diameter as error radius.
    pub fn point_of(&self, code: &BinaryIndex, resolve: usize) -> Result<(Vec3, f64), CantorError> {
        if resolve < code.len() {
            return Err(CantorError::BadParameters(format!("resolve depth {resolve} below code length {}", code.len())));
        }
        if resolve > self.max_depth {
            return Err(CantorError::DepthExceeded { index: code.to_string(), len: resolve, max: self.max_depth });
        }
        let cell = self.cell(&code.extend_zeros(resolve))?;
        Ok((cell.geometry.center(), cell.diameter))
    }

    /// Largest certified diameter among the level-`k` cells.
    pub fn max_cell_diameter(&self, k: usize) -> Result<f64, CantorError> {
        if k > self.max_depth {
            return Err(CantorError::DepthExceeded { index: format!("level {k}"), len: k, max: self.max_depth });
        }
        match &self.generator {
            Generator::Ternary => Ok(self.ambient.scale * 3f64.powi(-(k as i32))),
            Generator::Ifs { params, radius } => Ok(2.0 * self.ambient.scale * radius * params.maps[0].ratio.powi(k as i32)),
            Generator::Antoine(_) => {
                let mut best: f64 = 0.0;
                for idx in BinaryIndex::level(k) {
                    best = best.max(self.cell(&idx)?.diameter);
                }
                Ok(best)
            }
        }
    }

    /// Exact minimum distance from `p` to the length-`depth` cells below `within`
    /// (a certified lower bound on the distance to `C ∩ C_within`).
    pub fn distance_lower(&self, p: &Vec3, within: &BinaryIndex, depth: usize) -> f64 {
        self.nearest_leaf(within, depth, |g| g.distance(p)).1
    }

    /// Lower bound on the distance from segment `[a, b]` to `C ∩ C_within`.
    pub fn segment_distance_lower(&self, a: &Vec3, b: &Vec3, within: &BinaryIndex, depth: usize) -> f64 {
        self.nearest_leaf(within, depth, |g| g.segment_distance_lower(a, b)).1
    }

    /// Best-first search for the depth-`depth` cell minimizing a lower-bound
    /// function that is monotone under refinement (children inside parents).
    pub fn nearest_leaf<F: Fn(&CellGeometry) -> f64>(&self, within: &BinaryIndex, depth: usize, f: F) -> (BinaryIndex, f64) {
        let depth = depth.min(self.max_depth).max(within.len());
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
            }
        }
        let root = self.cell(within).expect("within depth");
        let mut cells = vec![root];
        let mut heap = BinaryHeap::new();
        heap.push(Item(f(&cells[0].geometry), 0));
        while let Some(Item(d, slot)) = heap.pop() {
            // Children lie inside parents, so the first leaf popped is the minimum.
            if cells[slot].index.len() == depth {
                return (cells[slot].index, d);
            }
            for b in [0, 1] {
                let cell = self.child_cell(&cells[slot], b);
                heap.push(Item(f(&cell.geometry).max(d), cells.len()));
                cells.push(cell);
            }
        }
        (*within, f64::INFINITY)
    }

    /// Both bounds on dist(p, C ∩ C_within) at the given resolution.
    pub fn distance_bounds(&self, p: &Vec3, within: &BinaryIndex, depth: usize) -> (f64, f64) {
        (self.distance_lower(p, within, depth), self.distance_upper(p, within, depth))
    }

    /// Upper bound on dist(p, C ∩ C_within): the best `dist + diameter` over
    /// cells down to `depth`, searched best-first.
    pub fn distance_upper(&self, p: &Vec3, within: &BinaryIndex, depth: usize) -> f64 {
        let depth = depth.min(self.max_depth).max(within.len());
        let root = self.cell(within).expect("within depth");
        let mut best = root.geometry.distance(p) + root.diameter;
        let d0 = root.geometry.distance(p);
        let mut stack = vec![(root, d0)];
        while let Some((parent, d)) = stack.pop() {
            if d >= best || parent.index.len() == depth {
                continue;
            }
            for b in [0, 1] {
                let cell = self.child_cell(&parent, b);
                let dc = cell.geometry.distance(p);
                best = best.min(dc + cell.diameter);
                if dc < best {
                    stack.push((cell, dc));
                }
            }
        }
        best
    }

    pub fn cells_at(&self, k: usize) -> Result<Vec<CantorCell>, CantorError> {
        if k > self.max_depth {
            return Err(CantorError::DepthExceeded { index: format!("level {k}"), len: k, max: self.max_depth });
        }
        BinaryIndex::level(k).collect::<Vec<_>>().par_iter().map(|i| self.cell(i)).collect()
    }

    pub fn to_json(&self, depth: usize) -> Result<Value, CantorError> {
        let mut cells = Vec::new();
        for k in 0..=depth.min(self.max_depth) {
            for c in self.cells_at(k)? {
                cells.push(c.to_json());
            }
        }
        Ok(json!({
            "generator": self.kind(),
            "ambient": {"scale": self.ambient.scale, "translation": self.ambient.translation},
            "max_depth": self.max_depth,
            "cells": cells,
        }))
    }
}

fn torus_group(n: &AntoineNecklace, cell: TorusCell) -> Vec<Torus> {
    match cell {
        TorusCell::Node(id) => vec![n.nodes[id].torus],
        TorusCell::Arc { parent, lo, hi } => n.nodes[parent].children[lo..hi].iter().map(|&c| n.nodes[c].torus).collect(),
    }
}

/// Diameter bound of a union of tori from their bounding spheres.
fn group_diameter_bound(ts: &[Torus]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in ts.iter().enumerate() {
        best = best.max(2.0 * a.bounding_radius());
        for b in &ts[i + 1..] {
            best = best.max((a.c() - b.c()).norm() + a.bounding_radius() + b.bounding_radius());
        }
    }
    best
}

/// Antoine necklace with `depth` stages of `m`-link chains inside `seed`, in canonical coordinates.
pub fn antoine_system(m: usize, seed: Torus, depth: usize) -> Result<CantorSystem, CantorError> {
    Ok(CantorSystem::antoine(AntoineNecklace::build(m, seed, depth)?, Placement::Canonical))
}

/// Raw Gauss linking sum of two closed polylines, exact per segment pair.
pub fn linking_sum(c1: &[Vec3], c2: &[Vec3]) -> f64 {
    let n1 = c1.len();
    let n2 = c2.len();
    let mut total = 0.0;
    for i in 0..n1 {
        let p1 = c1[i];
        let p2 = c1[(i + 1) % n1];
        for j in 0..n2 {
            total += segment_pair_solid_angle(&p1, &p2, &c2[j], &c2[(j + 1) % n2]);
        }
    }
    total / (4.0 * std::f64::consts::PI)
}

fn segment_pair_solid_angle(p1: &Vec3, p2: &Vec3, p3: &Vec3, p4: &Vec3) -> f64 {
    let r13 = p3 - p1;
    let r14 = p4 - p1;
    let r23 = p3 - p2;
    let r24 = p4 - p2;
    let unit = |v: Vec3| {
        let n = v.norm();
        if n > 0.0 {
            Some(v / n)
        } else {
            None
        }
    };
    let (Some(n1), Some(n2), Some(n3), Some(n4)) = (unit(r13.cross(&r14)), unit(r14.cross(&r24)), unit(r24.cross(&r23)), unit(r23.cross(&r13))) else {
        return 0.0;
    };
    let s = |a: &Vec3, b: &Vec3| a.dot(b).clamp(-1.0, 1.0).asin();
    let omega = s(&n1, &n2) + s(&n2, &n3) + s(&n3, &n4) + s(&n4, &n1);
    let r12 = p2 - p1;
    let r34 = p4 - p3;
    let sign = r34.cross(&r12).dot(&r13);
    if sign > 0.0 {
        omega
    } else if sign < 0.0 {
        -omega
    } else {
        0.0
    }
}

/// Gauss linking number of two disjoint closed polylines.
pub fn linking_number(c1: &[Vec3], c2: &[Vec3]) -> Result<i64, LinkError> {
    let raw = linking_sum(c1, c2);
    let d = polyline_distance(c1, c2);
    let scale = c1.iter().chain(c2).map(|p| p.norm()).fold(1e-300, f64::max);
    if d <= 1e-9 * scale {
        return Err(LinkError::TooClose { distance: d, raw });
    }
    Ok(raw.round() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss_midpoint(c1: &[Vec3], c2: &[Vec3]) -> f64 {
        // Independent oracle: midpoint rule on the double Gauss integral.
        let mut total = 0.0;
        for i in 0..c1.len() {
            let a = c1[i];
            let b = c1[(i + 1) % c1.len()];
            for j in 0..c2.len() {
                let c = c2[j];
                let d = c2[(j + 1) % c2.len()];
                let r = (a + b) * 0.5 - (c + d) * 0.5;
                total += (b - a).cross(&(d - c)).dot(&r) / r.norm().powi(3);
            }
        }
        total / (4.0 * std::f64::consts::PI)
    }

    #[test]
    fn ternary_intervals() {
        let (a, b) = ternary_interval(&BinaryIndex::parse("10").unwrap());
        assert!((a - 2.0 / 3.0).abs() < 1e-15 && (b - 7.0 / 9.0).abs() < 1e-15);
        let (a, b) = ternary_interval(&BinaryIndex::parse("11").unwrap());
        assert!((a - 8.0 / 9.0).abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
        let s = CantorSystem::ternary_unit();
        assert!((s.max_cell_diameter(3).unwrap() - 1.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn hopf_link() {
        let c1 = Torus::new(Vec3::zeros(), v3(0.0, 0.0, 1.0), 1.0, 0.1).core_polyline(200);
        let c2 = Torus::new(v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0), 1.0, 0.1).core_polyline(200);
        let lk = linking_number(&c1, &c2).unwrap();
        assert_eq!(lk.abs(), 1);
        assert!((linking_sum(&c1, &c2) - gauss_midpoint(&c1, &c2)).abs() < 1e-2);
        let c3 = Torus::new(v3(0.0, 0.0, 1.0), v3(0.0, 0.0, 1.0), 1.0, 0.1).core_polyline(200);
        assert_eq!(linking_number(&c1, &c3).unwrap(), 0);
    }

    #[test]
    fn depth_is_checked() {
        let s = CantorSystem::ternary_unit();
        assert!(matches!(s.point_of(&BinaryIndex::parse("1").unwrap(), 64), Err(CantorError::DepthExceeded { .. })));
        let (p, e) = s.point_of(&BinaryIndex::parse("1").unwrap(), 20).unwrap();
        assert!((p.x - 2.0 / 3.0).abs() <= e);
    }

    #[test]
    fn far_placement_distance() {
        let s = CantorSystem::ternary(Placement::default());
        let d = s.root_geometry().distance(&Vec3::zeros());
        assert!((d - 150.0).abs() < 1e-9);
        assert!((s.max_cell_diameter(0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn antoine_one_stage_halves() {
        let n = AntoineNecklace::build(8, CantorSystem::default_seed(0.75), 1).unwrap();
        let tori = n.stage_tori(1);
        let s = CantorSystem::antoine(n, Placement::Canonical);
        let cell = s.cell(&BinaryIndex::parse("1").unwrap()).unwrap();
        let CellGeometry::Tori(ts) = &cell.geometry else { panic!() };
        assert_eq!(ts.len(), 4);
        for (a, b) in ts.iter().zip(&tori[4..8]) {
            assert!((a.c() - b.c()).norm() < 1e-12);
        }
        let pts = cell.geometry.samples(64);
        let mut brute: f64 = 0.0;
        for p in &pts {
            for q in &pts {
                brute = brute.max((p - q).norm());
            }
        }
        assert!(brute <= cell.diameter * (1.0 + 1e-12));
    }
}
