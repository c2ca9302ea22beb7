//! Rotation-minimizing frames, the tube map around a unit-speed curve, the
//! tentacle map (tube map over the graph of a radial profile) and its energy
//! certificate.

use std::sync::Arc;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::Curve;
use crate::geom::Vec3;
use crate::profile::{ball_volume, smooth, solve_s_ln, LogLogRadius, ProfileError, RadialProfile};
use crate::quad::{integrate, QuadError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TentacleError {
    #[error("curve speed deviates from 1 by {deviation:e} at t={t}")]
    DegenerateTangent { t: f64, deviation: f64 },
    #[error("point ({x:?}) is outside the tube domain")]
    OutOfCylinder { x: [f64; 3] },
    #[error("curve comes within {distance:e} of itself")]
    SelfIntersecting { distance: f64 },
    #[error("δ = {delta:e} exceeds the tube injectivity radius {limit:e}")]
    DeltaTooLarge { delta: f64, limit: f64 },
    #[error("budget {budget:e} cannot cover the flat part {flat:e} at this δ")]
    BudgetTooSmall { budget: f64, flat: f64 },
    #[error("plateau radius exp(-exp({plateau_loglog})) is below 1e-12 δ (δ = {delta:e}); relax the budget or shorten the tentacle")]
    BelowResolution { plateau_loglog: f64, delta: f64, certificate: Box<EnergyCertificate> },
    #[error("only n = 2 tentacles can be realized (got n = {0})")]
    Dimension(usize),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub tangent: Vec3,
    pub v1: Vec3,
    pub v2: Vec3,
}

/// Normal frames sampled at equal steps along `[0, length]`.
#[derive(Clone, Debug)]
pub struct FrameField {
    step: f64,
    length: f64,
    frames: Vec<Frame>,
    curvature_normals: Vec<Vec3>,
}

/// Rotation-minimizing frame by double reflection starting from `v1` at `t = 0`.
pub fn frame_along(curve: &dyn Curve, v1: Vec3, step: f64) -> Result<FrameField, TentacleError> {
    let length = curve.length();
    let n = ((length / step).ceil() as usize).max(1);
    let h = length / n as f64;
    let mut frames = Vec::with_capacity(n + 1);
    let mut curvature_normals = Vec::with_capacity(n + 1);
    let mut pts = Vec::with_capacity(n + 1);
    let mut tans = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = if i == n { length } else { h * i as f64 };
        let d = curve.d1(t);
        let dev = (d.norm() - 1.0).abs();
        if dev > 1e-3 {
            return Err(TentacleError::DegenerateTangent { t, deviation: dev });
        }
        pts.push(curve.point(t));
        tans.push(d.normalize());
        curvature_normals.push(curve.d2(t));
    }
    let t0 = tans[0];
    let mut r = (v1 - t0 * t0.dot(&v1)).normalize();
    frames.push(Frame { tangent: t0, v1: r, v2: t0.cross(&r) });
    for i in 0..n {
        let a = pts[i + 1] - pts[i];
        let c1 = a.dot(&a);
        let (rl, tl) = if c1 > 0.0 {
            (r - a * (2.0 / c1 * a.dot(&r)), tans[i] - a * (2.0 / c1 * a.dot(&tans[i])))
        } else {
            (r, tans[i])
        };
        let b = tans[i + 1] - tl;
        let c2 = b.dot(&b);
        let mut next = if c2 > 0.0 { rl - b * (2.0 / c2 * b.dot(&rl)) } else { rl };
        let t1 = tans[i + 1];
        next = (next - t1 * t1.dot(&next)).normalize();
        r = next;
        frames.push(Frame { tangent: t1, v1: r, v2: t1.cross(&r) });
    }
    Ok(FrameField { step: h, length, frames, curvature_normals })
}

impl FrameField {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn samples(&self) -> &[Frame] {
        &self.frames
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Frame at arc length `t`; constant outside `[0, length]`, exact at the ends.
    pub fn at(&self, curve: &dyn Curve, t: f64) -> Frame {
        if t <= 0.0 {
            return self.frames[0];
        }
        if t >= self.length {
            return *self.frames.last().expect("frames");
        }
        let i = ((t / self.step) as usize).min(self.frames.len() - 2);
        let u = (t - self.step * i as f64) / self.step;
        let (f0, f1) = (&self.frames[i], &self.frames[i + 1]);
        // Hermite interpolation with the rotation-minimizing derivative v1' = -(v1·γ'') T.
        let d0 = -f0.tangent * f0.v1.dot(&self.curvature_normals[i]) * self.step;
        let d1 = -f1.tangent * f1.v1.dot(&self.curvature_normals[i + 1]) * self.step;
        let h00 = 2.0 * u * u * u - 3.0 * u * u + 1.0;
        let h10 = u * u * u - 2.0 * u * u + u;
        let h01 = -2.0 * u * u * u + 3.0 * u * u;
        let h11 = u * u * u - u * u;
        let tan = curve.d1(t).normalize();
        let raw = f0.v1 * h00 + d0 * h10 + f1.v1 * h01 + d1 * h11;
        let v1 = (raw - tan * tan.dot(&raw)).normalize();
        Frame { tangent: tan, v1, v2: tan.cross(&v1) }
    }

    /// Sum of absolute rotation angles of v1 about the tangent between samples.
    pub fn total_twist(&self) -> f64 {
        self.frames
            .windows(2)
            .map(|w| {
                let t = w[1].tangent;
                let prev = (w[0].v1 - t * t.dot(&w[0].v1)).normalize();
                let c = prev.dot(&w[1].v1).clamp(-1.0, 1.0);
                let s = t.dot(&prev.cross(&w[1].v1));
                s.atan2(c).abs()
            })
            .sum()
    }

    /// Largest angle between consecutive v1 samples.
    pub fn max_increment(&self) -> f64 {
        self.frames.windows(2).map(|w| w[0].v1.dot(&w[1].v1).clamp(-1.0, 1.0).acos()).fold(0.0, f64::max)
    }
}

/// `Φ(x) = γ(x₃) + x₁ v₁(x₃) + x₂ v₂(x₃)` on the cylinder of the given radius,
/// heights extended to `[-1, τ + 1]`.
#[derive(Clone)]
pub struct TubeMap {
    pub curve: Arc<dyn Curve>,
    pub frames: FrameField,
    pub radius: f64,
}

impl TubeMap {
    pub fn new(curve: Arc<dyn Curve>, v1: Vec3, radius: f64) -> Result<Self, TentacleError> {
        let step = (curve.length() / 2000.0).min(0.05 * curve.length().max(1e-300));
        let frames = frame_along(curve.as_ref(), v1, step)?;
        Ok(TubeMap { curve, frames, radius })
    }

    pub fn length(&self) -> f64 {
        self.curve.length()
    }

    pub fn frame(&self, t: f64) -> Frame {
        self.frames.at(self.curve.as_ref(), t)
    }

    fn check(&self, x: &[f64; 3]) -> Result<(), TentacleError> {
        let r2 = x[0] * x[0] + x[1] * x[1];
        if r2 > self.radius * self.radius * (1.0 + 1e-12) || x[2] < -1.0 || x[2] > self.length() + 1.0 {
            return Err(TentacleError::OutOfCylinder { x: *x });
        }
        Ok(())
    }

    pub fn eval(&self, x: [f64; 3]) -> Result<Vec3, TentacleError> {
        self.check(&x)?;
        Ok(self.eval_unchecked(x))
    }

    pub fn eval_unchecked(&self, x: [f64; 3]) -> Vec3 {
        let f = self.frame(x[2]);
        self.curve.point(x[2]) + f.v1 * x[0] + f.v2 * x[1]
    }

    /// Analytic derivative: columns `v₁, v₂, T (1 - x₁ κ₁ - x₂ κ₂)`.
    pub fn jacobian(&self, x: [f64; 3]) -> Matrix3<f64> {
        let f = self.frame(x[2]);
        let acc = self.curve.d2(x[2]);
        let stretch = 1.0 - x[0] * f.v1.dot(&acc) - x[1] * f.v2.dot(&acc);
        let d3 = self.curve.d1(x[2]) * stretch;
        Matrix3::from_columns(&[f.v1, f.v2, d3])
    }

    /// Jacobian determinant on the axis by central differences.
    pub fn axis_jacobian_fd(&self, t: f64, h: f64) -> f64 {
        let e = |x: [f64; 3]| self.eval_unchecked(x);
        let c1 = (e([h, 0.0, t]) - e([-h, 0.0, t])) / (2.0 * h);
        let c2 = (e([0.0, h, t]) - e([0.0, -h, t])) / (2.0 * h);
        let c3 = (e([0.0, 0.0, t + h]) - e([0.0, 0.0, t - h])) / (2.0 * h);
        Matrix3::from_columns(&[c1, c2, c3]).determinant()
    }

    /// Sampled sup of the Hilbert-Schmidt norm of DΦ over the cylinder of
    /// radius `delta`, inflated by 10%.
    pub fn dphi_norm(&self, delta: f64) -> f64 {
        let l = self.length();
        let n = 400usize;
        let kmax = self.curve.max_curvature();
        let mut best: f64 = 0.0;
        for i in 0..=n {
            let t = l * i as f64 / n as f64;
            for j in 0..16 {
                let th = std::f64::consts::TAU * j as f64 / 16.0;
                for r in [0.0, 0.5 * delta, delta] {
                    let j = self.jacobian([r * th.cos(), r * th.sin(), t]);
                    best = best.max(j.norm());
                }
            }
        }
        1.1 * best.max(dphi_bound(kmax, delta) / 1.1)
    }
}

/// `1.1 · sup |DΦ|` from the curvature bound alone: `|DΦ|² = 2 + (1 - x·κ)²`.
pub fn dphi_bound(kappa_max: f64, delta: f64) -> f64 {
    1.1 * (2.0 + (1.0 + delta * kappa_max).powi(2)).sqrt()
}

/// δ₀ = 0.9 · min(1/κ_max, ½ · non-local self-distance), capped.
pub fn max_tube_radius(curve: &dyn Curve, cap: f64) -> Result<f64, TentacleError> {
    let l = curve.length();
    let n = 1200usize;
    let kmax = curve.max_curvature();
    let local = if kmax > 0.0 { 1.0 / kmax } else { f64::INFINITY };
    let sep = if kmax > 0.0 { std::f64::consts::PI / kmax } else { f64::INFINITY };
    let ds = l / n as f64;
    let mut self_dist = f64::INFINITY;
    if sep.is_finite() {
        let pts: Vec<Vec3> = (0..=n).map(|i| curve.point(l * i as f64 / n as f64)).collect();
        let gap = (sep / ds).ceil() as usize;
        for i in 0..=n {
            for j in (i + gap.max(2))..=n {
                self_dist = self_dist.min((pts[i] - pts[j]).norm());
            }
        }
    }
    if self_dist <= 1e-12 * l.max(1e-300) {
        return Err(TentacleError::SelfIntersecting { distance: self_dist });
    }
    Ok((0.9 * local.min(0.5 * self_dist)).min(cap))
}

/// Certified energy data of one tentacle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCertificate {
    pub n: usize,
    pub budget: f64,
    /// `√n^n · 2^{n-1}`, the chain-rule constant.
    pub chain_constant: f64,
    pub dphi_norm: f64,
    /// Log of the flat part `ω_n δ^n`.
    pub ln_flat: f64,
    /// Closed-form profile energy times `1 + slack`.
    pub profile_energy: f64,
    /// `chain_constant · dphi_norm^n · (ω_n δ^n + profile_energy)`.
    pub bound: f64,
    pub support_bound: bool,
}

/// A tube map composed with the graph of a radial profile over a disk of radius δ.
#[derive(Clone)]
pub struct Tentacle {
    pub tube: TubeMap,
    pub profile: RadialProfile,
    pub center: [f64; 2],
    pub delta: f64,
    pub certificate: EnergyCertificate,
}

/// Analytic part of the construction: solve the profile for the budget after
/// paying for the tube factor and the flat disk. Works for tiny δ given as `ln δ`.
pub fn certify(tau: f64, dphi: f64, ln_delta: f64, n: usize, budget: f64, width: f64) -> Result<(RadialProfile, EnergyCertificate), TentacleError> {
    let chain = (n as f64).powf(n as f64 / 2.0) * 2f64.powi(n as i32 - 1);
    let ln_flat = ball_volume(n).ln() + n as f64 * ln_delta;
    let scale = chain * dphi.powi(n as i32);
    let room = budget / scale - ln_flat.exp();
    if !(room > 0.0) {
        return Err(TentacleError::BudgetTooSmall { budget, flat: scale * ln_flat.exp() });
    }
    let slack = 4.0 * width;
    // Aim slightly inside so the rounded bound stays strictly under budget.
    let sol = solve_s_ln(ln_delta, tau, n, (room * (1.0 - 1e-9)).ln(), slack)?;
    let base = RadialProfile::truncation(sol.s, tau, ln_delta, n);
    let profile = if width > 0.0 { smooth(&base, width)? } else { base };
    let pe = base.closed_energy() * (1.0 + slack);
    let bound = scale * (ln_flat.exp() + pe);
    Ok((profile, EnergyCertificate { n, budget, chain_constant: chain, dphi_norm: dphi, ln_flat, profile_energy: pe, bound, support_bound: sol.support_bound }))
}

/// Builds a meshable tentacle over the disk of radius `delta` around `center`.
pub fn make_tentacle(tube: TubeMap, center: [f64; 2], delta: f64, n: usize, budget: f64, width: f64, cap: f64) -> Result<Tentacle, TentacleError> {
    if n != 2 {
        return Err(TentacleError::Dimension(n));
    }
    let limit = max_tube_radius(tube.curve.as_ref(), cap)?;
    if delta > limit {
        return Err(TentacleError::DeltaTooLarge { delta, limit });
    }
    let mut tube = tube;
    tube.radius = delta;
    let dphi = tube.dphi_norm(delta);
    let (profile, certificate) = certify(tube.length(), dphi, delta.ln(), n, budget, width)?;
    let plateau = profile.plateau();
    if plateau.ln_radius() < (1e-12 * delta).ln() {
        return Err(TentacleError::BelowResolution { plateau_loglog: plateau.v, delta, certificate: Box::new(certificate) });
    }
    Ok(Tentacle { tube, profile, center, delta, certificate })
}

/// Energy figures of a realized tentacle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub numeric: f64,
    /// Numeric energy minus the isometric flat-disk value `2 π δ²`.
    pub excess: f64,
    pub bound: f64,
}

impl Tentacle {
    pub fn tip(&self) -> Vec3 {
        self.tube.eval_unchecked([0.0, 0.0, self.tube.length()])
    }

    /// Plateau radius (linear).
    pub fn plateau_radius(&self) -> f64 {
        self.profile.plateau().radius()
    }

    pub fn support_radius(&self) -> f64 {
        self.profile.support().radius()
    }

    /// `γ_δ(p + y)` for local offset `y` with `|y| ≤ δ`.
    pub fn eval_local(&self, y: [f64; 2]) -> Vec3 {
        let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
        let h = if r <= self.plateau_radius() { self.tube.length() } else { self.profile.rho(r) };
        self.tube.eval_unchecked([y[0], y[1], h])
    }

    /// Point at local polar coordinates given through `v = log(-log r)`.
    pub fn eval_polar_v(&self, v: f64, theta: f64) -> Vec3 {
        let r = LogLogRadius { v }.radius();
        let h = self.profile.rho_v(v);
        self.tube.eval_unchecked([r * theta.cos(), r * theta.sin(), h])
    }
}

/// Numeric n-energy (n = 2) of `γ_δ` by quadrature over the band in `(v, θ)`
/// using `∂γ/∂r = Φ_r + Φ₃ ∂ρ/∂r`, plus the exact flat parts.
pub fn tentacle_energy(t: &Tentacle, angular: usize, rel_tol: f64) -> Result<EnergyReport, TentacleError> {
    let p = &t.profile;
    let delta = t.delta;
    let rs = t.support_radius();
    let rp = t.plateau_radius();
    let flat = 2.0 * std::f64::consts::PI * (delta * delta - rs * rs + rp * rp);
    let band = |v: f64| {
        let u = v.exp();
        let r = (-u).exp();
        let ru = (v - u).exp();
        let h = p.rho_v(v);
        let slope = p.slope_v(v);
        let mut acc = 0.0;
        for j in 0..angular {
            let th = std::f64::consts::TAU * (j as f64 + 0.5) / angular as f64;
            let (s, c) = th.sin_cos();
            let jac = t.tube.jacobian([r * c, r * s, h]);
            let phi_r = jac.column(0) * c + jac.column(1) * s;
            let phi_t = -jac.column(0) * s + jac.column(1) * c;
            let jr = phi_r * ru - jac.column(2) * slope;
            let jt = phi_t * ru;
            acc += jr.norm_squared() + jt.norm_squared();
        }
        acc * std::f64::consts::TAU / angular as f64 * (-v).exp()
    };
    let bp = p.breakpoints();
    let mut numeric = flat;
    let scale = (-p.s).exp() * 1e-6;
    for w in bp.windows(2) {
        numeric += integrate(band, w[0], w[1], rel_tol * scale, rel_tol)?;
    }
    Ok(EnergyReport { numeric, excess: numeric - 2.0 * std::f64::consts::PI * delta * delta, bound: t.certificate.bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{ArcCurve, Path};
    use crate::geom::v3;
    use crate::profile::profile_energy;

    fn straight(l: f64) -> Arc<dyn Curve> {
        Arc::new(Path::single(Arc::new(ArcCurve::straight(v3(0.0, 0.0, 0.0), v3(0.0, 0.0, l)).unwrap())))
    }

    #[test]
    fn straight_frames_constant() {
        let c = straight(1.0);
        let f = frame_along(c.as_ref(), v3(1.0, 0.0, 0.0), 0.01).unwrap();
        for fr in f.samples() {
            assert!((fr.v1 - v3(1.0, 0.0, 0.0)).norm() < 1e-15);
            assert!((fr.v2 - v3(0.0, 1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn straight_tentacle_energy_matches_profile() {
        let tube = TubeMap::new(straight(0.05), v3(1.0, 0.0, 0.0), 0.02).unwrap();
        let t = make_tentacle(tube, [0.0, 0.0], 0.02, 2, 0.5, 0.1, 1.0).unwrap();
        let rep = tentacle_energy(&t, 16, 1e-10).unwrap();
        let pe = profile_energy(&t.profile, 1e-12).unwrap();
        assert!((rep.excess - pe).abs() / pe < 1e-4, "{} vs {}", rep.excess, pe);
        assert!(rep.numeric <= rep.bound && rep.bound <= 0.5);
        assert_eq!(t.tip(), v3(0.0, 0.0, 0.05));
    }

    #[test]
    fn outer_annulus_is_isometric() {
        let c: Arc<dyn Curve> = Arc::new(Path::single(Arc::new(
            ArcCurve::from_fn(|s| v3(0.002 * (40.0 * s).sin(), 0.0, s), 0.0, 0.05, 64, Some(v3(0.08, 0.0, 1.0)), None, 1e-8).unwrap(),
        )));
        let tube = TubeMap::new(c, v3(1.0, 0.0, 0.0), 0.01).unwrap();
        let t = make_tentacle(tube, [0.0, 0.0], 0.01, 2, 0.5, 0.1, 1.0).unwrap();
        let pts: [[f64; 2]; 4] = [[0.006, 0.0], [0.0, -0.0075], [-0.007, 0.002], [0.005, 0.005]];
        for a in &pts {
            for b in &pts {
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                assert!(((t.eval_local(*a) - t.eval_local(*b)).norm() - d).abs() < 1e-10);
            }
        }
    }
}
