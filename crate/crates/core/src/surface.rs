//! The inductive surface: a base sphere with a flat unit disk, tentacles
//! grafted level by level onto plateau disks, the nested site balls, the
//! energy ledger and pointwise evaluation of the stage maps.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI, TAU};
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cantor::{BinaryIndex, CantorError, CantorSystem};
use crate::curve::{ArcCurve, Curve, CurveError, Path};
use crate::geom::{v3, Vec3};
use crate::mesh::{triangulate, MeshError, TriMesh};
use crate::profile::{ball_volume, LogLogRadius};
use crate::tentacle::{certify, dphi_bound, make_tentacle, max_tube_radius, tentacle_energy, EnergyCertificate, Tentacle, TentacleError, TubeMap};
use crate::tree::{CantorTree, Obstacles};

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("tentacle {index}: {source}")]
    Tentacle { index: String, source: TentacleError },
    #[error("reroot of {index} failed: {reason}")]
    Reroot { index: String, reason: String },
    #[error("tree has depth {have}, the build needs {need}")]
    TreeTooShallow { have: usize, need: usize },
    #[error("invalid surface configuration: {0}")]
    Config(String),
    #[error("stage {stage} is not built")]
    NoStage { stage: usize },
    #[error("point lies in the unresolved patch of site {index} at this depth")]
    Unresolved { index: String },
    #[error("pointwise evaluation needs a meshed build")]
    NotMeshed,
    #[error(transparent)]
    Cantor(#[from] CantorError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Per-tentacle energy budget as a function of the level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BudgetSchedule {
    /// `4^{-nk}`.
    Paper,
    /// `a · ratio^k`.
    Geometric { a: f64, ratio: f64 },
}

impl BudgetSchedule {
    /// The meshable default `0.1 · 8^{-k}`.
    pub fn mesh_default() -> Self {
        BudgetSchedule::Geometric { a: 0.1, ratio: 0.125 }
    }

    pub fn name(&self) -> String {
        match self {
            BudgetSchedule::Paper => "paper".into(),
            BudgetSchedule::Geometric { a, ratio } => format!("geometric({a}, {ratio})"),
        }
    }

    pub fn ln_budget(&self, k: usize, n: usize) -> f64 {
        match self {
            BudgetSchedule::Paper => -((n * k) as f64) * 4f64.ln(),
            BudgetSchedule::Geometric { a, ratio } => a.ln() + k as f64 * ratio.ln(),
        }
    }

    pub fn budget(&self, k: usize, n: usize) -> f64 {
        self.ln_budget(k, n).exp()
    }

    /// `ln(2^k · budget(k))`, the cap on a whole level.
    pub fn ln_level_cap(&self, k: usize, n: usize) -> f64 {
        k as f64 * LN_2 + self.ln_budget(k, n)
    }

    /// Rejects schedules whose level caps `2^k budget(k)` do not sum.
    pub fn validate(&self, n: usize) -> Result<(), String> {
        match *self {
            BudgetSchedule::Paper if n >= 1 => Ok(()),
            BudgetSchedule::Paper => Err("dimension must be at least 1".into()),
            BudgetSchedule::Geometric { a, ratio } => {
                if !(a > 0.0 && a.is_finite()) {
                    return Err(format!("budget scale must be positive, got {a}"));
                }
                if !(ratio > 0.0 && 2.0 * ratio < 1.0) {
                    return Err(format!("sum of 2^k * {a} * {ratio}^k diverges: ratio must lie in (0, 1/2)"));
                }
                Ok(())
            }
        }
    }

    /// `Σ_{k=1..depth} 2^k budget(k)`.
    pub fn series_bound(&self, depth: usize, n: usize) -> f64 {
        (1..=depth).map(|k| self.ln_level_cap(k, n).exp()).sum()
    }

    /// For the paper schedule, `Σ_{k=1..depth} 2^{-nk}` (the looser chain
    /// `2^k 4^{-nk} < 2^{-nk}`); otherwise the series bound.
    pub fn chain_bound(&self, depth: usize, n: usize) -> f64 {
        match self {
            BudgetSchedule::Paper => (1..=depth).map(|k| (-((n * k) as f64) * LN_2).exp()).sum(),
            _ => self.series_bound(depth, n),
        }
    }
}

/// Radius schedule for the site balls used in dimension reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaSchedule {
    /// `e^{-2^k}`.
    DoubleExponential,
    /// `ratio^k`.
    Geometric { ratio: f64 },
}

impl DeltaSchedule {
    pub fn ln_delta(&self, k: usize) -> f64 {
        match self {
            DeltaSchedule::DoubleExponential => -(2f64.powi(k as i32)),
            DeltaSchedule::Geometric { ratio } => k as f64 * ratio.ln(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    /// Tentacles are realized and every stage is triangulated.
    Mesh,
    /// Certificates only, radii kept in the log domain.
    Analytic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    pub n: usize,
    /// Vertices per ring on tentacles and hole grading rings.
    pub ring: usize,
    /// Vertices per ring on the base disk and cap.
    pub base_ring: usize,
    /// Profile smoothing width (fraction of the height).
    pub smoothing: f64,
    /// Fraction of a branch's length used to blend the rerooted head.
    pub reroot_fraction: f64,
    /// Radius of the base inner patch as a fraction of the shorter root branch.
    pub base_patch_fraction: f64,
    /// Largest tube radius as a fraction of the clearance around the curve.
    pub clearance_fraction: f64,
    /// Wall rings per tentacle height (at least).
    pub wall_steps: usize,
    /// Largest radius ratio between consecutive rings.
    pub ring_ratio: f64,
    pub tube_cap: f64,
    pub cap_depth: f64,
    pub cap_rounding: f64,
    pub delta_schedule: DeltaSchedule,
    /// Apply the radius schedule in mesh mode too.
    pub delta_schedule_in_mesh: bool,
    pub energy_angular: usize,
    pub energy_tol: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            n: 2,
            ring: 32,
            base_ring: 64,
            smoothing: 0.1,
            reroot_fraction: 0.1,
            base_patch_fraction: 0.04,
            clearance_fraction: 0.25,
            wall_steps: 48,
            ring_ratio: 1.5,
            tube_cap: 1.0,
            cap_depth: 0.5,
            cap_rounding: 0.15,
            delta_schedule: DeltaSchedule::DoubleExponential,
            delta_schedule_in_mesh: false,
            energy_angular: 16,
            energy_tol: 1e-8,
        }
    }
}

impl SurfaceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n < 2 {
            return Err("dimension n must be at least 2".into());
        }
        if self.ring < 8 || !self.ring.is_multiple_of(4) || self.base_ring < 8 || !self.base_ring.is_multiple_of(4) {
            return Err("ring sizes must be multiples of 4, at least 8".into());
        }
        for (name, v, lo, hi) in [
            ("smoothing", self.smoothing, 0.0, 0.5),
            ("reroot_fraction", self.reroot_fraction, 0.0, 0.5),
            ("base_patch_fraction", self.base_patch_fraction, 0.0, 0.5),
            ("clearance_fraction", self.clearance_fraction, 0.0, 0.5),
        ] {
            if !(v > lo && v <= hi) {
                return Err(format!("{name} must lie in ({lo}, {hi}], got {v}"));
            }
        }
        if !(self.ring_ratio > 1.0 && self.ring_ratio <= 4.0) {
            return Err(format!("ring_ratio must lie in (1, 4], got {}", self.ring_ratio));
        }
        if self.wall_steps < 2 {
            return Err("wall_steps must be at least 2".into());
        }
        Ok(())
    }
}

/// One graft site `p_index` with its ball radii and tentacle certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraftSite {
    pub index: BinaryIndex,
    pub level: usize,
    /// Absolute parameter point in the flat disk (mesh mode only).
    pub center: Option<[f64; 2]>,
    /// Unit direction from the parent center, in the parent's parameter plane.
    pub direction: [f64; 2],
    /// `ln |p − p_parent|`.
    pub ln_offset: f64,
    pub ln_delta: f64,
    /// `ln(δ / R)` with `R` the host patch radius; the offset from the host
    /// center is always `R/2`. Kept separately since `ln δ` itself can be too
    /// large for differences to resolve.
    pub ln_delta_rel: f64,
    /// Plateau radius `δ′` (the support of the next level).
    pub plateau: LogLogRadius,
    /// Outer edge of the moving band.
    pub support: LogLogRadius,
    pub tau: f64,
    pub budget: f64,
    pub certificate: EnergyCertificate,
    /// Numeric energy of the realized tentacle.
    pub numeric: Option<f64>,
    /// Axis angle of the children in this site's plateau.
    pub child_axis: f64,
    /// Head position `f_k(p)` and the anchor it must equal.
    pub tip: Option<[f64; 3]>,
    pub anchor: [f64; 3],
    pub center_vertex: Option<u32>,
}

impl GraftSite {
    pub fn delta(&self) -> f64 {
        self.ln_delta.exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub index: String,
    pub level: usize,
    pub budget: f64,
    pub bound: f64,
    pub ln_bound: f64,
    pub numeric: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerLevel {
    pub level: usize,
    pub tentacles: usize,
    pub ln_sum: f64,
    pub sum: f64,
    /// `ln(2^k budget(k))`.
    pub ln_cap: f64,
    /// `ln 2^{-nk}` for the paper chain.
    pub ln_chain: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub schedule: BudgetSchedule,
    pub n: usize,
    pub entries: Vec<LedgerEntry>,
    pub levels: Vec<LedgerLevel>,
    pub total: f64,
    pub ln_total: f64,
    pub series_bound: f64,
    pub chain_bound: f64,
    pub pass: bool,
}

fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn ln_bound(c: &EnergyCertificate) -> f64 {
    let scale = c.chain_constant * c.dphi_norm.powi(c.n as i32);
    scale.ln() + log_sum_exp([c.ln_flat, c.profile_energy.ln()])
}

impl EnergyLedger {
    pub fn from_sites(sites: &[GraftSite], schedule: BudgetSchedule, n: usize, depth: usize) -> Self {
        let entries: Vec<LedgerEntry> = sites
            .iter()
            .map(|s| {
                let lb = ln_bound(&s.certificate);
                let ok = lb < schedule.ln_budget(s.level, n) && s.certificate.bound <= s.budget && s.numeric.is_none_or(|x| x <= s.certificate.bound);
                LedgerEntry { index: s.index.to_string(), level: s.level, budget: s.budget, bound: s.certificate.bound, ln_bound: lb, numeric: s.numeric, pass: ok }
            })
            .collect();
        let levels: Vec<LedgerLevel> = (1..=depth)
            .map(|k| {
                let at: Vec<&LedgerEntry> = entries.iter().filter(|e| e.level == k).collect();
                let ln_sum = log_sum_exp(at.iter().map(|e| e.ln_bound));
                let ln_cap = schedule.ln_level_cap(k, n);
                let ln_chain = -((n * k) as f64) * LN_2;
                let chain_ok = !matches!(schedule, BudgetSchedule::Paper) || (ln_sum < ln_chain && ln_cap < ln_chain);
                LedgerLevel { level: k, tentacles: at.len(), ln_sum, sum: ln_sum.exp(), ln_cap, ln_chain, pass: ln_sum <= ln_cap && chain_ok }
            })
            .collect();
        let ln_total = log_sum_exp(levels.iter().map(|l| l.ln_sum));
        let total = ln_total.exp();
        let series_bound = schedule.series_bound(depth, n);
        let chain_bound = schedule.chain_bound(depth, n);
        let chain_ok = !matches!(schedule, BudgetSchedule::Paper) || depth == 0 || total < chain_bound;
        let pass = entries.iter().all(|e| e.pass) && levels.iter().all(|l| l.pass) && total <= series_bound && chain_ok;
        EnergyLedger { schedule, n, entries, levels, total, ln_total, series_bound, chain_bound, pass }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("energy ledger, schedule {}, n = {}\n", self.schedule.name(), self.n);
        for l in &self.levels {
            s.push_str(&format!(
                "  level {:2}: {:5} tentacles, sum {:.6e} (ln {:.4}) <= cap {:.6e}: {}\n",
                l.level,
                l.tentacles,
                l.sum,
                l.ln_sum,
                l.ln_cap.exp(),
                if l.pass { "ok" } else { "FAIL" }
            ));
        }
        s.push_str(&format!("  total {:.6e} <= series {:.6e}: {}\n", self.total, self.series_bound, if self.pass { "ok" } else { "FAIL" }));
        s
    }
}

/// Box-count estimates `ln N(δ_k) / ln(1/δ_k)` with `N = 2^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionRow {
    pub level: usize,
    pub count_ln: f64,
    pub ln_delta: f64,
    pub estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalSet {
    /// Site codes at the deepest level.
    pub codes: Vec<String>,
    pub table: Vec<DimensionRow>,
    pub decreasing: bool,
}

impl ExceptionalSet {
    pub fn from_radii(depth: usize, ln_delta: impl Fn(usize) -> f64, codes: Vec<String>) -> Self {
        let table: Vec<DimensionRow> = (1..=depth)
            .map(|k| {
                let ld = ln_delta(k);
                let count_ln = k as f64 * LN_2;
                DimensionRow { level: k, count_ln, ln_delta: ld, estimate: count_ln / -ld }
            })
            .collect();
        let decreasing = table.windows(2).all(|w| w[1].estimate <= w[0].estimate * (1.0 + 1e-12));
        ExceptionalSet { codes, table, decreasing }
    }

    pub fn from_schedule(depth: usize, schedule: DeltaSchedule) -> Self {
        ExceptionalSet::from_radii(depth, |k| schedule.ln_delta(k), vec![])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct StagedTri {
    v: [u32; 3],
    stage: usize,
    /// Temporary disk filling the hole of this site until its own stage.
    fill: Option<u32>,
}

/// Stages `f_0 .. f_K` of the construction.
pub struct SurfaceApprox {
    pub depth: usize,
    pub mode: BuildMode,
    pub schedule: BudgetSchedule,
    pub config: SurfaceConfig,
    pub base_patch: f64,
    pub base_axis: f64,
    pub sites: Vec<GraftSite>,
    lookup: BTreeMap<BinaryIndex, usize>,
    tentacles: Vec<Option<Arc<Tentacle>>>,
    pub vertices: Vec<Vec3>,
    /// Parameter point on the base surface for every vertex.
    pub params: Vec<Vec3>,
    tris: Vec<StagedTri>,
    /// Vertices created while meshing each site's ball.
    site_vertices: Vec<Range<usize>>,
    pub ledger: EnergyLedger,
}

impl SurfaceApprox {
    pub fn site(&self, index: &BinaryIndex) -> Option<&GraftSite> {
        self.lookup.get(index).map(|&i| &self.sites[i])
    }

    pub fn tentacle(&self, index: &BinaryIndex) -> Option<&Tentacle> {
        self.lookup.get(index).and_then(|&i| self.tentacles[i].as_deref())
    }

    pub fn sites_at(&self, k: usize) -> impl Iterator<Item = &GraftSite> {
        self.sites.iter().filter(move |s| s.level == k)
    }

    /// Global vertex ids of the triangles of stage `k`.
    pub fn stage_triangles(&self, k: usize) -> Result<Vec<[u32; 3]>, SurfaceError> {
        if self.mode != BuildMode::Mesh || k > self.depth {
            return Err(SurfaceError::NoStage { stage: k });
        }
        Ok(self
            .tris
            .iter()
            .filter(|t| t.stage <= k && t.fill.is_none_or(|s| self.sites[s as usize].level > k))
            .map(|t| t.v)
            .collect())
    }

    /// Stage `k` as a standalone mesh (vertices renumbered in first-use order).
    pub fn stage_mesh(&self, k: usize) -> Result<TriMesh, SurfaceError> {
        let tris = self.stage_triangles(k)?;
        Ok(TriMesh { vertices: self.vertices.clone(), triangles: tris }.compact())
    }

    /// Vertices created inside the ball of a site.
    pub fn site_vertex_ids(&self, index: &BinaryIndex) -> Range<usize> {
        self.lookup.get(index).map(|&i| self.site_vertices[i].clone()).unwrap_or(0..0)
    }

    /// Vertices created inside the ball of a site or of any descendant.
    pub fn subtree_vertex_ids(&self, index: &BinaryIndex) -> Vec<usize> {
        self.sites
            .iter()
            .enumerate()
            .filter(|(_, s)| index.is_prefix_of(&s.index))
            .flat_map(|(i, _)| self.site_vertices[i].clone())
            .collect()
    }

    /// `f_k(x)` for a parameter point `x` on the base surface: the map of the
    /// deepest site ball (of level at most `k`) containing `x`.
    pub fn stage_value(&self, x: &Vec3, k: usize) -> Result<Vec3, SurfaceError> {
        if self.mode != BuildMode::Mesh {
            return Err(SurfaceError::NotMeshed);
        }
        if k > self.depth {
            return Err(SurfaceError::NoStage { stage: k });
        }
        match self.containing_site(x, k) {
            None => Ok(*x),
            Some(i) => {
                let c = self.sites[i].center.expect("meshed site");
                let t = self.tentacles[i].as_ref().expect("meshed site");
                Ok(t.eval_local([x.x - c[0], x.y - c[1]]))
            }
        }
    }

    /// Stabilized value of the limit map at `x`: `f_k(x)` for the first `k`
    /// with `x` outside `W_{k+1}`. Points in the patch that holds the next
    /// level's balls are unresolved at this depth.
    pub fn evaluate_f(&self, x: &Vec3) -> Result<Vec3, SurfaceError> {
        if self.mode != BuildMode::Mesh {
            return Err(SurfaceError::NotMeshed);
        }
        let site = self.containing_site(x, self.depth);
        let (center, patch, level, name) = match site {
            Some(i) => {
                let s = &self.sites[i];
                (s.center.expect("meshed site"), 0.5 * s.plateau.radius(), s.level, s.index.to_string())
            }
            None => ([0.0, 0.0], self.base_patch, 0, "root".to_string()),
        };
        if level == self.depth && x.z == 0.0 && ((x.x - center[0]).powi(2) + (x.y - center[1]).powi(2)).sqrt() < patch {
            return Err(SurfaceError::Unresolved { index: name });
        }
        self.stage_value(x, level)
    }

    /// Deepest site of level at most `k` whose open ball contains `x`.
    pub fn containing_site(&self, x: &Vec3, k: usize) -> Option<usize> {
        if x.z != 0.0 || k == 0 {
            return None;
        }
        let inside = |i: usize| {
            let s = &self.sites[i];
            let c = s.center.expect("meshed site");
            let d = ((x.x - c[0]).powi(2) + (x.y - c[1]).powi(2)).sqrt();
            d < s.delta() * (1.0 - 1e-9)
        };
        let mut cur = None;
        let mut candidates: Vec<BinaryIndex> = BinaryIndex::root().children().to_vec();
        loop {
            let next = candidates.iter().filter_map(|c| self.lookup.get(c).copied()).find(|&i| self.sites[i].level <= k && inside(i));
            match next {
                Some(i) => {
                    cur = Some(i);
                    candidates = self.sites[i].index.children().to_vec();
                }
                None => return cur,
            }
        }
    }

    /// Limit pairing on codes: `e_code ↦ c_code`.
    pub fn evaluate_code(system: &CantorSystem, code: &BinaryIndex, resolve: usize) -> Result<(Vec3, f64), SurfaceError> {
        Ok(system.point_of(code, resolve)?)
    }

    pub fn exceptional_set(&self) -> ExceptionalSet {
        let codes = self.sites_at(self.depth).map(|s| s.index.to_string()).collect();
        let sites = &self.sites;
        ExceptionalSet::from_radii(
            self.depth,
            |k| sites.iter().filter(|s| s.level == k).map(|s| s.ln_delta).fold(f64::NEG_INFINITY, f64::max),
            codes,
        )
    }

    pub fn sites_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.sites).expect("sites serialize")
    }

    /// Nested-ball invariants relative to the host patch radius `R`: a child
    /// ball at offset `R/2` stays inside the patch (`1/2 + δ/R < 1`) and the
    /// two children, `R` apart, are disjoint (`δ₀/R + δ₁/R < 1`). Each child
    /// patch is half its plateau, so containment in the plateau follows.
    /// Returns the smallest containment and sibling margins.
    pub fn nesting_margins(&self) -> (f64, f64) {
        let mut contain = f64::INFINITY;
        let mut sibling = f64::INFINITY;
        for s in &self.sites {
            contain = contain.min(0.5 - s.ln_delta_rel.exp());
            if s.index.bit(s.index.len() - 1) == 0 {
                let sib = s.index.parent().expect("nonroot").child(1);
                if let Some(&j) = self.lookup.get(&sib) {
                    sibling = sibling.min(1.0 - s.ln_delta_rel.exp() - self.sites[j].ln_delta_rel.exp());
                }
            }
        }
        (contain, sibling)
    }
}

// ---------------------------------------------------------------------------
// Site construction.

/// Where a level's sites live: the base disk or a parent plateau.
#[derive(Clone)]
struct Host {
    center: [f64; 2],
    /// Radius of the inner patch holding the two children.
    patch: f64,
    axis: f64,
    normal: Vec3,
    e1: Vec3,
    tentacle: Option<Arc<Tentacle>>,
}

impl Host {
    fn eval(&self, x: [f64; 2]) -> Vec3 {
        match &self.tentacle {
            None => v3(x[0], x[1], 0.0),
            Some(t) => t.eval_local([x[0] - self.center[0], x[1] - self.center[1]]),
        }
    }

    fn child_center(&self, bit: u8) -> [f64; 2] {
        let s = if bit == 1 { 0.5 } else { -0.5 } * self.patch;
        [self.center[0] + s * self.axis.cos(), self.center[1] + s * self.axis.sin()]
    }
}

fn smoothstep5(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// Moves the start of `j` to `start`, leaving along `normal` and blending
/// into `j` over the first `fraction` of its length.
pub fn reroot_curve(j: &Arc<ArcCurve>, start: Vec3, normal: Vec3, fraction: f64) -> Result<Path, CurveError> {
    let b = fraction * j.length();
    let a0 = j.point(0.0);
    let head = move |t: f64| {
        let s = smoothstep5(t / b);
        let h = start + normal * t;
        if s == 0.0 {
            h
        } else if s == 1.0 {
            j.point(t)
        } else {
            h * (1.0 - s) + j.point(t) * s
        }
    };
    let _ = a0;
    let n = 96;
    let pts: Vec<Vec3> = (0..=n).map(|i| head(b * i as f64 / n as f64)).collect();
    let fitted = ArcCurve::fit(&pts, Some(normal), Some(j.d1(b)), 1e-9)?;
    Ok(Path::splice(Arc::new(fitted), j.clone(), b))
}

/// Axis for two children in a plane with basis `(e1, e2)`, snapped to a multiple of `2π/n`.
fn children_axis(tree: &CantorTree, parent: &BinaryIndex, e1: &Vec3, e2: &Vec3, fraction: f64, n: usize) -> f64 {
    let [c0, c1] = parent.children();
    let (Some(b0), Some(b1)) = (tree.branch(&c0), tree.branch(&c1)) else { return 0.0 };
    let l = fraction * b0.length().min(b1.length());
    let d = b1.curve.point(l) - b0.curve.point(l);
    let (x, y) = (d.dot(e1), d.dot(e2));
    let raw = if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) };
    let step = TAU / n as f64;
    ((raw / step).round() * step).rem_euclid(TAU)
}

struct Planned {
    index: BinaryIndex,
    center: [f64; 2],
    direction: [f64; 2],
    ln_offset: f64,
    start: Vec3,
    frame_v1: Vec3,
    curve: Arc<Path>,
    limit_geom: f64,
    patch: f64,
}

fn clearance_of(curve: &Path, others: &[Vec3], obstacles: &Obstacles, skip: &[BinaryIndex], system: &CantorSystem, depth: usize) -> f64 {
    let pts = curve.samples(200);
    let mut best = f64::INFINITY;
    for p in &pts {
        if let Some((_, d, _)) = obstacles.nearest(p, |i| skip.contains(i)) {
            best = best.min(d);
        }
        best = best.min(system.distance_lower(p, &BinaryIndex::root(), depth));
        for q in others {
            best = best.min((p - q).norm());
        }
    }
    best
}

/// Builds the site tree (and, in mesh mode, every stage mesh).
pub fn build(system: &CantorSystem, tree: &CantorTree, depth: usize, cfg: &SurfaceConfig, schedule: BudgetSchedule, mode: BuildMode) -> Result<SurfaceApprox, SurfaceError> {
    cfg.validate().map_err(SurfaceError::Config)?;
    schedule.validate(cfg.n).map_err(SurfaceError::Config)?;
    if tree.depth < depth {
        return Err(SurfaceError::TreeTooShallow { have: tree.depth, need: depth });
    }
    let root = BinaryIndex::root();
    let [r0, r1] = root.children();
    let root_len = tree.branch(&r0).map(|b| b.length()).unwrap_or(1.0).min(tree.branch(&r1).map(|b| b.length()).unwrap_or(1.0));
    let base_patch = (cfg.base_patch_fraction * root_len).min(1.0);
    let base_axis = if depth == 0 { 0.0 } else { children_axis(tree, &root, &Vec3::x(), &Vec3::y(), cfg.reroot_fraction, cfg.base_ring) };
    let mut approx = SurfaceApprox {
        depth,
        mode,
        schedule,
        config: cfg.clone(),
        base_patch,
        base_axis,
        sites: vec![],
        lookup: BTreeMap::new(),
        tentacles: vec![],
        vertices: vec![],
        params: vec![],
        tris: vec![],
        site_vertices: vec![],
        ledger: EnergyLedger::from_sites(&[], schedule, cfg.n, 0),
    };
    match mode {
        BuildMode::Mesh => build_mesh_sites(&mut approx, system, tree)?,
        BuildMode::Analytic => build_analytic_sites(&mut approx, system, tree)?,
    }
    approx.ledger = EnergyLedger::from_sites(&approx.sites, schedule, cfg.n, depth);
    if mode == BuildMode::Mesh {
        mesh_all(&mut approx)?;
    }
    Ok(approx)
}

fn base_host(approx: &SurfaceApprox) -> Host {
    Host { center: [0.0, 0.0], patch: approx.base_patch, axis: approx.base_axis, normal: Vec3::z(), e1: Vec3::x(), tentacle: None }
}

fn build_mesh_sites(approx: &mut SurfaceApprox, system: &CantorSystem, tree: &CantorTree) -> Result<(), SurfaceError> {
    let cfg = approx.config.clone();
    let n = cfg.n;
    let obstacles = Obstacles::new(tree.branches());
    let mut hosts: BTreeMap<BinaryIndex, Host> = BTreeMap::new();
    hosts.insert(BinaryIndex::root(), base_host(approx));
    for k in 1..=approx.depth {
        let mut plans = Vec::new();
        for (pidx, host) in &hosts {
            for bit in [0u8, 1] {
                let index = pidx.child(bit);
                let branch = tree.branch(&index).ok_or(SurfaceError::TreeTooShallow { have: tree.depth, need: k })?;
                let center = host.child_center(bit);
                let start = host.eval(center);
                let curve = reroot_curve(&branch.curve, start, host.normal, cfg.reroot_fraction)?;
                let dir = if bit == 1 { 1.0 } else { -1.0 };
                let direction = [dir * host.axis.cos(), dir * host.axis.sin()];
                let tangent0 = curve.tangent(0.0);
                if tangent0.dot(&host.normal) < 0.999 {
                    return Err(SurfaceError::Reroot { index: index.to_string(), reason: format!("start tangent meets the normal at {}", tangent0.dot(&host.normal)) });
                }
                plans.push(Planned {
                    index,
                    center,
                    direction,
                    ln_offset: (0.5 * host.patch).ln(),
                    start,
                    frame_v1: host.e1,
                    curve: Arc::new(curve),
                    limit_geom: host.patch / 8.0,
                    patch: host.patch,
                });
            }
        }
        let samples: Vec<Vec<Vec3>> = plans.iter().map(|p| p.curve.samples(200)).collect();
        let deep = (k + 8).min(system.max_depth());
        let built: Vec<(GraftSite, Arc<Tentacle>)> = plans
            .par_iter()
            .enumerate()
            .map(|(i, plan)| {
                let idx = plan.index;
                let sib = i ^ 1;
                let mut skip = vec![idx, plans[sib].index];
                if let Some(p) = idx.parent() {
                    skip.push(p);
                }
                skip.extend(idx.children());
                let clear = clearance_of(&plan.curve, &samples[sib], &obstacles, &skip, system, deep);
                let limit = max_tube_radius(plan.curve.as_ref(), cfg.tube_cap).map_err(|e| SurfaceError::Tentacle { index: idx.to_string(), source: e })?;
                let budget = approx.schedule.budget(k, n);
                let dphi_est = dphi_bound(plan.curve.max_curvature(), plan.limit_geom);
                let scale = (n as f64).powf(n as f64 / 2.0) * 2f64.powi(n as i32 - 1) * dphi_est.powi(n as i32);
                let energy_limit = (0.5 * budget / (scale * ball_volume(n))).powf(1.0 / n as f64);
                let mut delta = plan.limit_geom.min(cfg.clearance_fraction * clear).min(limit).min(energy_limit);
                if cfg.delta_schedule_in_mesh {
                    delta = delta.min(cfg.delta_schedule.ln_delta(k).exp());
                }
                let tube = TubeMap::new(plan.curve.clone() as Arc<dyn Curve>, plan.frame_v1, delta).map_err(|e| SurfaceError::Tentacle { index: idx.to_string(), source: e })?;
                let t = make_tentacle(tube, [0.0, 0.0], delta, n, budget, cfg.smoothing, cfg.tube_cap).map_err(|e| SurfaceError::Tentacle { index: idx.to_string(), source: e })?;
                let numeric = tentacle_energy(&t, cfg.energy_angular, cfg.energy_tol).map_err(|e| SurfaceError::Tentacle { index: idx.to_string(), source: e })?.numeric;
                let tip = t.tip();
                let anchor = tree.anchor(&idx).map(|a| a.position).unwrap_or(tip);
                let fr = t.tube.frame(t.tube.length());
                let child_axis = children_axis(tree, &idx, &fr.v1, &fr.v2, cfg.reroot_fraction, cfg.ring);
                let site = GraftSite {
                    index: idx,
                    level: k,
                    center: Some(plan.center),
                    direction: plan.direction,
                    ln_offset: plan.ln_offset,
                    ln_delta: delta.ln(),
                    ln_delta_rel: (delta / plan.patch).ln(),
                    plateau: t.profile.plateau(),
                    support: t.profile.support(),
                    tau: t.tube.length(),
                    budget,
                    certificate: t.certificate.clone(),
                    numeric: Some(numeric),
                    child_axis,
                    tip: Some([tip.x, tip.y, tip.z]),
                    anchor: [anchor.x, anchor.y, anchor.z],
                    center_vertex: None,
                };
                let _ = plan.start;
                Ok((site, Arc::new(t)))
            })
            .collect::<Result<_, SurfaceError>>()?;
        hosts.clear();
        for (site, t) in built {
            let c = site.center.expect("mesh site");
            let fr = t.tube.frame(t.tube.length());
            hosts.insert(
                site.index,
                Host { center: c, patch: 0.5 * t.plateau_radius(), axis: site.child_axis, normal: fr.tangent, e1: fr.v1, tentacle: Some(t.clone()) },
            );
            approx.lookup.insert(site.index, approx.sites.len());
            approx.sites.push(site);
            approx.tentacles.push(Some(t));
        }
    }
    Ok(())
}

fn build_analytic_sites(approx: &mut SurfaceApprox, system: &CantorSystem, tree: &CantorTree) -> Result<(), SurfaceError> {
    let cfg = approx.config.clone();
    let n = cfg.n;
    let _ = system;
    // ln of the parent's inner patch radius, by parent index.
    let mut patch_ln: BTreeMap<BinaryIndex, f64> = BTreeMap::new();
    patch_ln.insert(BinaryIndex::root(), approx.base_patch.ln());
    for k in 1..=approx.depth {
        let level: Vec<BinaryIndex> = BinaryIndex::level(k).collect();
        let budget_ln = approx.schedule.ln_budget(k, n);
        let built: Vec<GraftSite> = level
            .par_iter()
            .map(|idx| {
                let branch = tree.branch(idx).ok_or(SurfaceError::TreeTooShallow { have: tree.depth, need: k })?;
                let parent = idx.parent().expect("nonroot");
                let lp = patch_ln[&parent];
                let l = branch.length();
                let b = cfg.reroot_fraction * l;
                let ln_offset = lp - LN_2;
                let turn = (tree.incoming_tangent(idx).dot(&branch.start_tangent())).clamp(-1.0, 1.0).acos();
                // Curvature of the blended head on top of the branch's own.
                let kappa = branch.curve.max_curvature() + 5.8 * ln_offset.exp() / (b * b) + 3.8 * turn / b;
                let d0 = max_tube_radius(branch.curve.as_ref(), cfg.tube_cap).map_err(|e| SurfaceError::Tentacle { index: idx.to_string(), source: e })?.min(0.9 / kappa);
                let dphi0 = dphi_bound(kappa, d0);
                let scale = (n as f64).powf(n as f64 / 2.0) * 2f64.powi(n as i32 - 1) * dphi0.powi(n as i32);
                let ln_energy = ((0.5f64).ln() + budget_ln - (scale * ball_volume(n)).ln()) / n as f64;
                // Relative to the patch first: `lp` may be far too large for `x - lp` to resolve.
                let ln_delta_rel = [cfg.delta_schedule.ln_delta(k), d0.ln(), ln_energy].iter().map(|c| c - lp).fold(-(8f64.ln()), f64::min);
                let ln_delta = if ln_delta_rel == -(8f64.ln()) { lp - 8f64.ln() } else { cfg.delta_schedule.ln_delta(k).min(d0.ln()).min(ln_energy) };
                let dphi = dphi_bound(kappa, ln_delta.exp());
                let budget = budget_ln.exp();
                let (profile, certificate) = certify(l, dphi, ln_delta, n, budget, cfg.smoothing).map_err(|e| SurfaceError::Tentacle { index: idx.to_string(), source: e })?;
                let anchor = tree.anchor(idx).map(|a| a.position).unwrap_or_else(|| branch.end());
                let bit = idx.bit(k - 1);
                Ok(GraftSite {
                    index: *idx,
                    level: k,
                    center: None,
                    direction: [if bit == 1 { 1.0 } else { -1.0 }, 0.0],
                    ln_offset,
                    ln_delta,
                    ln_delta_rel,
                    plateau: profile.plateau(),
                    support: profile.support(),
                    tau: l,
                    budget,
                    certificate,
                    numeric: None,
                    child_axis: 0.0,
                    tip: None,
                    anchor: [anchor.x, anchor.y, anchor.z],
                    center_vertex: None,
                })
            })
            .collect::<Result<_, SurfaceError>>()?;
        for s in built {
            patch_ln.insert(s.index, s.plateau.ln_radius() - LN_2);
            approx.lookup.insert(s.index, approx.sites.len());
            approx.sites.push(s);
            approx.tentacles.push(None);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Meshing.

struct Mesher {
    vertices: Vec<Vec3>,
    params: Vec<Vec3>,
    tris: Vec<StagedTri>,
    stage: usize,
    fill: Option<u32>,
}

impl Mesher {
    fn vertex(&mut self, pos: Vec3, param: Vec3) -> u32 {
        self.vertices.push(pos);
        self.params.push(param);
        (self.vertices.len() - 1) as u32
    }

    fn tri(&mut self, v: [u32; 3]) {
        self.tris.push(StagedTri { v, stage: self.stage, fill: self.fill });
    }

    /// Band between two rings with matching angles; `inner` lies closer to the center.
    fn annulus(&mut self, outer: &[u32], inner: &[u32]) {
        let n = outer.len();
        debug_assert_eq!(n, inner.len());
        for i in 0..n {
            let j = (i + 1) % n;
            self.tri([inner[i], outer[i], outer[j]]);
            self.tri([inner[i], outer[j], inner[j]]);
        }
    }

    fn fan(&mut self, center: u32, ring: &[u32]) {
        let n = ring.len();
        for i in 0..n {
            self.tri([center, ring[i], ring[(i + 1) % n]]);
        }
    }

    /// Closes a ring with a pole beyond it (farther from the center).
    fn cap(&mut self, ring: &[u32], pole: u32) {
        let n = ring.len();
        for i in 0..n {
            self.tri([ring[i], pole, ring[(i + 1) % n]]);
        }
    }

    /// Ring of `n` vertices at parameter radius `r` about `c` at angles `2πi/n`.
    fn param_ring(&mut self, c: [f64; 2], r: f64, n: usize, eval: &dyn Fn([f64; 2]) -> Vec3) -> Vec<u32> {
        (0..n)
            .map(|i| {
                let th = TAU * i as f64 / n as f64;
                let x = [c[0] + r * th.cos(), c[1] + r * th.sin()];
                self.vertex(eval(x), v3(x[0], x[1], 0.0))
            })
            .collect()
    }
}

fn geometric_radii(from: f64, to: f64, ratio: f64) -> Vec<f64> {
    // Radii strictly below `from` down to and including `to`.
    if !(from > to) {
        return vec![];
    }
    let m = ((from / to).ln() / ratio.ln()).ceil().max(1.0) as usize;
    (1..=m).map(|j| if j == m { to } else { from * (to / from).powf(j as f64 / m as f64) }).collect()
}

struct PatchChild {
    site: usize,
    center: [f64; 2],
    delta: f64,
}

/// Meshes the disk of radius `r_out` about `host.center` inside `outer`
/// (angles `2πi/N`): graded rings down to the patch radius, then two half
/// disks split across the child axis, each holding one child's graded hole.
/// Returns the rim rings of the children and the center vertex.
fn host_patch(m: &mut Mesher, host: &Host, outer: &[u32], r_out: f64, children: &[PatchChild; 2], ring: usize) -> Result<([Vec<u32>; 2], u32), SurfaceError> {
    let n_out = outer.len();
    let r = host.patch;
    let c = host.center;
    let eval = |x: [f64; 2]| host.eval(x);
    let mut prev = outer.to_vec();
    for rad in geometric_radii(r_out, r, 2.0) {
        let next = m.param_ring(c, rad, n_out, &eval);
        m.annulus(&prev, &next);
        prev = next;
    }
    let step = TAU / n_out as f64;
    let phi = host.axis;
    let i0 = (((phi - 0.5 * PI) / step).round() as i64).rem_euclid(n_out as i64) as usize;
    let half = n_out / 2;
    // Local frame: u across the axis, w along it.
    let (pu, pw) = ([phi.sin(), -phi.cos()], [phi.cos(), phi.sin()]);
    let md = ((n_out as f64 / TAU).round() as usize).max(2);
    let mut diameter = Vec::with_capacity(2 * md - 1);
    for t in 1..2 * md {
        let u = r * ((t as f64 - md as f64) / md as f64);
        let x = [c[0] + u * pu[0], c[1] + u * pu[1]];
        let id = m.vertex(eval(x), v3(x[0], x[1], 0.0));
        diameter.push((u, id));
    }
    let center = diameter[md - 1].1;
    let mut rims: [Vec<u32>; 2] = [vec![], vec![]];
    for side in 0..2 {
        let mut poly: Vec<[f64; 2]> = Vec::new();
        let mut ids: Vec<u32> = Vec::new();
        for j in 0..=half {
            let psi = PI * side as f64 + PI * j as f64 / half as f64;
            let p = if j == 0 {
                [if side == 0 { r } else { -r }, 0.0]
            } else if j == half {
                [if side == 0 { -r } else { r }, 0.0]
            } else {
                [r * psi.cos(), r * psi.sin()]
            };
            poly.push(p);
            ids.push(prev[(i0 + side * half + j) % n_out]);
        }
        let diam: Vec<&(f64, u32)> = if side == 0 { diameter.iter().collect() } else { diameter.iter().rev().collect() };
        for &&(u, id) in &diam {
            poly.push([u, 0.0]);
            ids.push(id);
        }
        // The child on this side: w > 0 for side 0.
        let want = if side == 0 { 1.0 } else { -1.0 };
        let child = children
            .iter()
            .find(|ch| {
                let d = [ch.center[0] - c[0], ch.center[1] - c[1]];
                (d[0] * pw[0] + d[1] * pw[1]) * want > 0.0
            })
            .ok_or_else(|| SurfaceError::Config("child site not on either side of the patch".into()))?;
        let levels = ((r / (4.0 * child.delta)).log2().floor() as i32).max(1);
        let mut hole_rings: Vec<Vec<u32>> = Vec::new();
        for jl in 0..=levels {
            let rad = child.delta * 2f64.powi(jl);
            hole_rings.push(m.param_ring(child.center, rad, ring, &eval));
        }
        for jl in (1..hole_rings.len()).rev() {
            let (o, i) = (hole_rings[jl].clone(), hole_rings[jl - 1].clone());
            m.annulus(&o, &i);
        }
        let outer_hole = hole_rings.last().expect("hole ring");
        let rad = child.delta * 2f64.powi(levels);
        let wc = 0.5 * r * want;
        let rot = -(phi - 0.5 * PI);
        let mut hole: Vec<[f64; 2]> = Vec::with_capacity(ring);
        let mut hole_ids: Vec<u32> = Vec::with_capacity(ring);
        for i in (0..ring).rev() {
            let th = TAU * i as f64 / ring as f64 + rot;
            hole.push([rad * th.cos(), wc + rad * th.sin()]);
            hole_ids.push(outer_hole[i]);
        }
        let all_ids: Vec<u32> = ids.iter().chain(hole_ids.iter()).copied().collect();
        for t in triangulate(&poly, &[hole])? {
            m.tri([all_ids[t[0]], all_ids[t[1]], all_ids[t[2]]]);
        }
        // Temporary fill of the child's ball.
        let save = m.fill;
        m.fill = Some(child.site as u32);
        let cv = m.vertex(eval(child.center), v3(child.center[0], child.center[1], 0.0));
        m.fan(cv, &hole_rings[0]);
        m.fill = save;
        let slot = children.iter().position(|ch| ch.site == child.site).expect("child");
        rims[slot] = hole_rings[0].clone();
    }
    Ok((rims, center))
}

fn base_mesh(m: &mut Mesher, approx: &SurfaceApprox) -> Vec<u32> {
    let cfg = &approx.config;
    let nb = cfg.base_ring;
    let id = |x: [f64; 2]| v3(x[0], x[1], 0.0);
    let rim = m.param_ring([0.0, 0.0], 1.0, nb, &id);
    let mut prev = rim.clone();
    for rad in geometric_radii(1.0, approx.base_patch, 2.0) {
        let next = m.param_ring([0.0, 0.0], rad, nb, &id);
        m.annulus(&prev, &next);
        prev = next;
    }
    // Cap below the disk: rounded rim, side wall, rounded foot, flat bottom.
    let (c, h) = (cfg.cap_rounding, cfg.cap_depth);
    let mut profile: Vec<(f64, f64)> = Vec::new();
    let arc = 10;
    for i in 1..=arc {
        let t = 0.5 * PI * i as f64 / arc as f64;
        profile.push((1.0 + c * t.sin(), -c + c * t.cos()));
    }
    let wall = (((h - 2.0 * c) / (c * PI / 20.0)).ceil() as usize).max(1);
    for i in 1..=wall {
        profile.push((1.0 + c, -c - (h - 2.0 * c) * i as f64 / wall as f64));
    }
    for i in 1..=arc {
        let t = 0.5 * PI * i as f64 / arc as f64;
        profile.push((1.0 + c * t.cos(), -h + c - c * t.sin()));
    }
    for i in 1..10 {
        profile.push((1.0 - 0.1 * i as f64, -h));
    }
    let mut ring_prev = rim;
    for &(rad, z) in &profile {
        let ring: Vec<u32> = (0..nb)
            .map(|i| {
                let th = TAU * i as f64 / nb as f64;
                let p = v3(rad * th.cos(), rad * th.sin(), z);
                m.vertex(p, p)
            })
            .collect();
        // Moving away from the disk center along the surface.
        m.annulus(&ring, &ring_prev);
        ring_prev = ring;
    }
    let pole = v3(0.0, 0.0, -h);
    let pv = m.vertex(pole, pole);
    m.cap(&ring_prev, pv);
    prev
}

/// Meshes one site's ball inside its rim ring; returns its plateau center vertex.
fn tentacle_mesh(m: &mut Mesher, approx: &SurfaceApprox, site: usize, rim: &[u32]) -> Result<(u32, Option<[Vec<u32>; 2]>), SurfaceError> {
    let cfg = &approx.config;
    let s = &approx.sites[site];
    let t = approx.tentacles[site].clone().expect("mesh site");
    let q = s.center.expect("mesh site");
    let prev = tentacle_rings(m, &t, q, rim, cfg);
    let rp = t.plateau_radius();
    if s.level == approx.depth {
        let cv = leaf_cap(m, &t, q, &prev, cfg.ring);
        return Ok((cv, None));
    }
    let fr = t.tube.frame(t.tube.length());
    let host = Host { center: q, patch: 0.5 * rp, axis: s.child_axis, normal: fr.tangent, e1: fr.v1, tentacle: Some(t.clone()) };
    let kids = child_patches(approx, &s.index);
    let (rims, center) = host_patch(m, &host, &prev, rp, &kids, cfg.ring)?;
    Ok((center, Some(rims)))
}

/// Flat annulus and band walls from the rim (radius δ) to the plateau edge.
fn tentacle_rings(m: &mut Mesher, t: &Tentacle, q: [f64; 2], rim: &[u32], cfg: &SurfaceConfig) -> Vec<u32> {
    let n = rim.len();
    let local = |x: [f64; 2]| t.eval_local([x[0] - q[0], x[1] - q[1]]);
    let mut prev = rim.to_vec();
    let flat = geometric_radii(t.delta, t.support_radius(), 2.0);
    for (j, rad) in flat.iter().enumerate() {
        let next = if j + 1 == flat.len() { polar_ring(m, t, q, t.profile.support().v, n) } else { m.param_ring(q, *rad, n, &local) };
        m.annulus(&prev, &next);
        prev = next;
    }
    let tau = t.tube.length();
    let kappa = t.tube.curve.max_curvature();
    let dh = (tau / cfg.wall_steps as f64).min(if kappa > 0.0 { 0.1 / kappa } else { f64::INFINITY });
    for w in t.profile.breakpoints().windows(2) {
        let len = w[1] - w[0];
        let dv_ratio = cfg.ring_ratio.ln() / w[1].exp();
        let count = ((len / dh.min(dv_ratio)).ceil() as usize).max(1);
        for i in 1..=count {
            let v = if i == count { w[1] } else { w[0] + len * i as f64 / count as f64 };
            let next = polar_ring(m, t, q, v, n);
            m.annulus(&prev, &next);
            prev = next;
        }
    }
    prev
}

/// Plateau of a leaf tentacle: one ring and a fan around the tip.
fn leaf_cap(m: &mut Mesher, t: &Tentacle, q: [f64; 2], edge: &[u32], n: usize) -> u32 {
    let local = |x: [f64; 2]| t.eval_local([x[0] - q[0], x[1] - q[1]]);
    let inner = m.param_ring(q, 0.5 * t.plateau_radius(), n, &local);
    m.annulus(edge, &inner);
    let cv = m.vertex(t.tip(), v3(q[0], q[1], 0.0));
    m.fan(cv, &inner);
    cv
}

/// A single tentacle over its parameter disk as an open mesh (boundary at radius δ).
pub fn tentacle_disk_mesh(t: &Tentacle, cfg: &SurfaceConfig) -> TriMesh {
    let mut m = Mesher { vertices: vec![], params: vec![], tris: vec![], stage: 0, fill: None };
    let q = [0.0, 0.0];
    let local = |x: [f64; 2]| t.eval_local(x);
    let rim = m.param_ring(q, t.delta, cfg.ring, &local);
    let edge = tentacle_rings(&mut m, t, q, &rim, cfg);
    leaf_cap(&mut m, t, q, &edge, cfg.ring);
    TriMesh { vertices: m.vertices, triangles: m.tris.iter().map(|t| t.v).collect() }
}

fn polar_ring(m: &mut Mesher, t: &Tentacle, q: [f64; 2], v: f64, n: usize) -> Vec<u32> {
    let r = LogLogRadius { v }.radius();
    (0..n)
        .map(|i| {
            let th = TAU * i as f64 / n as f64;
            m.vertex(t.eval_polar_v(v, th), v3(q[0] + r * th.cos(), q[1] + r * th.sin(), 0.0))
        })
        .collect()
}

fn child_patches(approx: &SurfaceApprox, parent: &BinaryIndex) -> [PatchChild; 2] {
    parent.children().map(|c| {
        let i = approx.lookup[&c];
        PatchChild { site: i, center: approx.sites[i].center.expect("mesh site"), delta: approx.sites[i].delta() }
    })
}

fn mesh_all(approx: &mut SurfaceApprox) -> Result<(), SurfaceError> {
    let mut m = Mesher { vertices: vec![], params: vec![], tris: vec![], stage: 0, fill: None };
    let inner = base_mesh(&mut m, approx);
    if approx.depth == 0 {
        let c = m.vertex(Vec3::zeros(), Vec3::zeros());
        m.fan(c, &inner);
        approx.vertices = m.vertices;
        approx.params = m.params;
        approx.tris = m.tris;
        return Ok(());
    }
    let host = base_host(approx);
    let kids = child_patches(approx, &BinaryIndex::root());
    let (rims, _) = host_patch(&mut m, &host, &inner, approx.base_patch, &kids, approx.config.ring)?;
    let mut pending: Vec<(usize, Vec<u32>)> = kids.iter().zip(rims).map(|(k, r)| (k.site, r)).collect();
    let mut ranges = vec![0..0; approx.sites.len()];
    for k in 1..=approx.depth {
        m.stage = k;
        let mut next = Vec::new();
        pending.sort_by_key(|(s, _)| approx.sites[*s].index);
        for (site, rim) in pending.drain(..) {
            let start = m.vertices.len();
            let (center, rims) = tentacle_mesh(&mut m, approx, site, &rim)?;
            ranges[site] = start..m.vertices.len();
            approx.sites[site].center_vertex = Some(center);
            if let Some(rims) = rims {
                let kids = child_patches(approx, &approx.sites[site].index);
                next.extend(kids.iter().zip(rims).map(|(k, r)| (k.site, r)));
            }
        }
        pending = next;
    }
    approx.vertices = m.vertices;
    approx.params = m.params;
    approx.tris = m.tris;
    approx.site_vertices = ranges;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let p = BudgetSchedule::Paper;
        assert!((p.budget(1, 2) - 1.0 / 16.0).abs() < 1e-15);
        assert!((p.chain_bound(60, 2) - 1.0 / 3.0).abs() < 1e-12);
        let g = BudgetSchedule::mesh_default();
        assert!((g.series_bound(60, 2) - 0.1 / 3.0).abs() < 1e-12);
        assert!(BudgetSchedule::Geometric { a: 1.0, ratio: 1.0 }.validate(2).is_err());
        assert!(BudgetSchedule::Geometric { a: 1.0, ratio: 0.5 }.validate(2).is_err());
    }

    #[test]
    fn dimension_table() {
        let e = ExceptionalSet::from_schedule(10, DeltaSchedule::DoubleExponential);
        assert!((e.table[5].estimate - 6.0 * LN_2 / 64.0).abs() < 1e-15);
        assert!(e.decreasing);
        let c = ExceptionalSet::from_schedule(40, DeltaSchedule::Geometric { ratio: 1.0 / 3.0 });
        assert!((c.table[39].estimate - LN_2 / 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn desk_build_is_closed_sphere() {
        use crate::cantor::Placement;
        use crate::tree::{build_tree, TreeConfig};
        let sys = CantorSystem::ternary(Placement::Desk { diameter: 1e-4, height: 4e-4 });
        let tree = build_tree(&sys, 3, 1, &TreeConfig::default()).unwrap();
        let t0 = std::time::Instant::now();
        let s = build(&sys, &tree, 2, &SurfaceConfig::default(), BudgetSchedule::mesh_default(), BuildMode::Mesh).unwrap();
        let empty = build(&sys, &tree, 0, &SurfaceConfig::default(), BudgetSchedule::mesh_default(), BuildMode::Mesh).unwrap();
        assert_eq!(empty.ledger.total, 0.0);
        assert_eq!(empty.stage_mesh(0).unwrap().topology().euler(), 2);
        eprintln!("build {:?}", t0.elapsed());
        for k in 0..=2 {
            let m = s.stage_mesh(k).unwrap();
            let topo = m.topology();
            eprintln!("stage {k}: {:?} chi {}", topo, topo.euler());
            assert!(topo.closed() && topo.oriented(), "stage {k}");
            assert_eq!(topo.euler(), 2);
            assert!(m.signed_volume() > 0.0);
            let r = crate::verify::self_intersection(&m).unwrap();
            assert!(r.pass(), "stage {k}: {:?}", &r.pairs[..r.pairs.len().min(5)]);
        }
        for site in s.sites_at(2) {
            assert_eq!(site.tip.unwrap(), site.anchor);
        }
        eprintln!("{}", s.ledger.to_text());
        assert!(s.ledger.pass);
    }
}
