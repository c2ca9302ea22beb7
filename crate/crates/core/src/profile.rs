//! The radial log-log bump: truncation between levels, C² smoothing in the
//! coordinate `v = log(-log r)`, closed-form energy and the budget solver.
//!
//! In `v`, the n-energy of a radial profile `ρ(v)` is
//! `σ_{n-1} ∫ ρ'(v)^n e^{-(n-1)v} dv`, which stays finite in floating point
//! even when the radii themselves underflow.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::quad::{integrate_pieces, QuadError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("radius {0} outside the open ball of radius 1/e (or zero)")]
    Domain(f64),
    #[error("truncation levels need 0 < s < t (got s={s}, t={t})")]
    Levels { s: f64, t: f64 },
    #[error("invalid profile parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Area of the unit (n-1)-sphere in R^n.
pub fn sphere_area(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / gamma_half(n)
}

/// Γ(n/2) for positive integers n.
fn gamma_half(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        (1..n / 2).map(|k| k as f64).product()
    } else {
        let mut g = std::f64::consts::PI.sqrt();
        let mut x = 0.5;
        while x + 1.0 <= n as f64 / 2.0 + 1e-12 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

/// Volume of the unit n-ball.
pub fn ball_volume(n: usize) -> f64 {
    sphere_area(n) / n as f64
}

/// A radius `r = exp(-exp(v))` kept through its double logarithm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogRadius {
    pub v: f64,
}

impl LogLogRadius {
    pub fn from_radius(r: f64) -> Self {
        assert!(r > 0.0 && r < 1.0);
        LogLogRadius { v: (-r.ln()).ln() }
    }

    /// `ln r = -e^v`.
    pub fn ln_radius(&self) -> f64 {
        -self.v.exp()
    }

    /// Linear radius; underflows to 0 for large `v`.
    pub fn radius(&self) -> f64 {
        self.ln_radius().exp()
    }
}

/// `log(-log r)` and its gradient magnitude `1/(r |log r|)`.
pub fn eta(r: f64) -> Result<(f64, f64), ProfileError> {
    if !(r > 0.0 && r < (-1.0f64).exp()) {
        return Err(ProfileError::Domain(r));
    }
    let l = -r.ln();
    Ok((l.ln(), 1.0 / (r * l)))
}

/// Truncation of `eta` between levels `s < t`.
pub fn truncate(s: f64, t: f64, r: f64) -> Result<f64, ProfileError> {
    if !(s > 0.0 && s < t) {
        return Err(ProfileError::Levels { s, t });
    }
    if r >= (-1.0f64).exp() {
        return Ok(0.0);
    }
    if r <= 0.0 {
        return Ok(t - s);
    }
    let (e, _) = eta(r)?;
    Ok((e - s).clamp(0.0, t - s))
}

/// Closed-form n-energy of the truncation of height `tau` starting at level `s`:
/// `σ_{n-1}/(n-1) · (e^{-s(n-1)} - e^{-(s+τ)(n-1)})`.
pub fn truncation_energy(s: f64, tau: f64, n: usize) -> f64 {
    ln_truncation_energy(s, tau, n).exp()
}

/// Natural logarithm of [`truncation_energy`], finite for any `s`.
pub fn ln_truncation_energy(s: f64, tau: f64, n: usize) -> f64 {
    if tau <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let l = (n - 1) as f64;
    sphere_area(n).ln() - l.ln() - s * l + (-(-tau * l).exp_m1()).ln()
}

/// Output of [`solve_s`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub s: f64,
    /// Plateau of the plain truncation, `e^{-e^{s+τ}}`.
    pub plateau: LogLogRadius,
    /// Which constraint fixed `s`.
    pub support_bound: bool,
}

/// Smallest `s` (bisection tolerance 1e-6, feasible end) with
/// `truncation_energy · (1 + slack) < budget` and support radius `≤ δ/2`,
/// where `δ = exp(ln_delta)`.
pub fn solve_s_ln(ln_delta: f64, tau: f64, n: usize, ln_budget: f64, slack: f64) -> Result<Solution, ProfileError> {
    if !(ln_delta < -1.0) {
        return Err(ProfileError::Parameter(format!("δ must be below 1/e (ln δ = {ln_delta})")));
    }
    if !(tau > 0.0) || n < 2 || !(slack >= 0.0) || ln_budget.is_nan() {
        return Err(ProfileError::Parameter("need τ > 0, n ≥ 2, slack ≥ 0".into()));
    }
    let l = (n - 1) as f64;
    // A relative margin of 1e-12 keeps the linear-scale energy under budget too.
    let feasible = |s: f64| ln_truncation_energy(s, tau, n) + slack.ln_1p() + 1e-12 < ln_budget;
    // Support: e^{-e^s} ≤ δ/2  ⇔  e^s ≥ ln 2 - ln δ.
    let need = std::f64::consts::LN_2 - ln_delta;
    let mut s_support = need.ln();
    // A few ulps below δ/2, since δ itself may come back from ln δ rounded.
    let half = 0.5 * ln_delta.exp() * (1.0 - 8.0 * f64::EPSILON);
    while -s_support.exp() > ln_delta - std::f64::consts::LN_2 || (half > 0.0 && (-s_support.exp()).exp() > half) {
        s_support = s_support.next_up();
    }
    let guess = (sphere_area(n).ln() - l.ln() + (-(-tau * l).exp_m1()).ln() + slack.ln_1p() - ln_budget) / l;
    let (mut lo, mut hi) = (guess - 1.0, guess + 1.0);
    while !feasible(hi) {
        hi += 1.0;
    }
    while feasible(lo) {
        lo -= 1.0;
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let support_bound = s_support >= hi;
    let s = hi.max(s_support).max(f64::MIN_POSITIVE);
    Ok(Solution { s, plateau: LogLogRadius { v: s + tau }, support_bound })
}

/// [`solve_s_ln`] with linear `δ` and budget.
pub fn solve_s(delta: f64, tau: f64, n: usize, budget: f64, slack: f64) -> Result<Solution, ProfileError> {
    if !(delta > 0.0) || !(budget > 0.0) {
        return Err(ProfileError::Parameter("δ and budget must be positive".into()));
    }
    solve_s_ln(delta.ln(), tau, n, budget.ln(), slack)
}

/// Truncated log-log profile with optional C² blends of width `width · τ` in `v`.
///
/// Lower blend on `[s, s+a]`: `ρ = a (t³ - t⁴/2)`; middle: `ρ = v - s - a/2`;
/// upper blend on `[s+τ, s+τ+a]`: `ρ = τ - a/2 + a (t - t³ + t⁴/2)`. The slope
/// never exceeds 1, so smoothing cannot raise the energy; the plateau starts at
/// `v = s + τ + a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub s: f64,
    pub tau: f64,
    pub ln_delta: f64,
    pub width: f64,
    pub n: usize,
}

impl RadialProfile {
    pub fn truncation(s: f64, tau: f64, ln_delta: f64, n: usize) -> Self {
        RadialProfile { s, tau, ln_delta, width: 0.0, n }
    }

    fn a(&self) -> f64 {
        self.width * self.tau
    }

    pub fn delta(&self) -> f64 {
        self.ln_delta.exp()
    }

    /// Outer edge of the moving band: `e^{-e^s}`.
    pub fn support(&self) -> LogLogRadius {
        LogLogRadius { v: self.s }
    }

    /// Radius below which `ρ = τ`.
    pub fn plateau(&self) -> LogLogRadius {
        LogLogRadius { v: self.s + self.tau + self.a() }
    }

    /// Band breakpoints in `v`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let a = self.a();
        if a > 0.0 {
            vec![self.s, self.s + a, self.s + self.tau, self.s + self.tau + a]
        } else {
            vec![self.s, self.s + self.tau]
        }
    }

    /// Height as a function of `v`.
    pub fn rho_v(&self, v: f64) -> f64 {
        let a = self.a();
        let s = self.s;
        let tau = self.tau;
        if v <= s {
            return 0.0;
        }
        if a == 0.0 {
            return if v >= s + tau { tau } else { (v - s).min(tau) };
        }
        if v < s + a {
            let t = (v - s) / a;
            a * (t * t * t - 0.5 * t.powi(4))
        } else if v <= s + tau {
            v - s - 0.5 * a
        } else if v < s + tau + a {
            let t = (v - s - tau) / a;
            tau - 0.5 * a + a * (t - t * t * t + 0.5 * t.powi(4))
        } else {
            tau
        }
    }

    /// `dρ/dv`.
    pub fn slope_v(&self, v: f64) -> f64 {
        let a = self.a();
        let s = self.s;
        let tau = self.tau;
        let smooth = |t: f64| 3.0 * t * t - 2.0 * t * t * t;
        if v <= s || v >= s + tau + a {
            return 0.0;
        }
        if a == 0.0 {
            return 1.0;
        }
        if v < s + a {
            smooth((v - s) / a)
        } else if v <= s + tau {
            1.0
        } else {
            1.0 - smooth((v - s - tau) / a)
        }
    }

    /// `d²ρ/dv²`.
    pub fn curvature_v(&self, v: f64) -> f64 {
        let a = self.a();
        if a == 0.0 || v <= self.s || v >= self.s + self.tau + a {
            return 0.0;
        }
        let ds = |t: f64| 6.0 * t - 6.0 * t * t;
        if v < self.s + a {
            ds((v - self.s) / a) / a
        } else if v <= self.s + self.tau {
            0.0
        } else {
            -ds((v - self.s - self.tau) / a) / a
        }
    }

    /// Height at linear radius `r`.
    pub fn rho(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        if r <= 0.0 {
            return self.tau;
        }
        self.rho_v((-r.ln()).ln())
    }

    /// `|∇ρ|` at linear radius `r`.
    pub fn grad(&self, r: f64) -> f64 {
        if !(r > 0.0 && r < 1.0) {
            return 0.0;
        }
        let u = -r.ln();
        self.slope_v(u.ln()) / (r * u)
    }

    /// Closed-form energy of the unsmoothed truncation with the same `s, τ`.
    pub fn closed_energy(&self) -> f64 {
        truncation_energy(self.s, self.tau, self.n)
    }

    /// Integrand `σ ρ'(v)^n e^{-(n-1)v}`.
    pub fn density_v(&self, v: f64) -> f64 {
        sphere_area(self.n) * self.slope_v(v).powi(self.n as i32) * (-((self.n - 1) as f64) * v).exp()
    }

    pub fn to_json(&self, samples: usize) -> Value {
        let bp = self.breakpoints();
        let lo = bp[0];
        let hi = *bp.last().expect("breakpoints");
        let table: Vec<[f64; 2]> = (0..=samples)
            .map(|i| {
                let v = lo + (hi - lo) * i as f64 / samples as f64;
                [v, self.rho_v(v)]
            })
            .collect();
        json!({
            "n": self.n,
            "s": self.s,
            "tau": self.tau,
            "ln_delta": self.ln_delta,
            "width": self.width,
            "support_loglog": self.support().v,
            "plateau_loglog": self.plateau().v,
            "rho_table_v": table,
        })
    }
}

/// Adds C² blends of width `width · τ` to a profile.
pub fn smooth(profile: &RadialProfile, width: f64) -> Result<RadialProfile, ProfileError> {
    if !(width > 0.0 && width <= 0.25) {
        return Err(ProfileError::Parameter(format!("smoothing width {width} outside (0, 1/4]")));
    }
    Ok(RadialProfile { width, ..*profile })
}

/// n-energy by adaptive quadrature in `v` over the band pieces; `rel_tol`
/// controls the refinement.
pub fn profile_energy(profile: &RadialProfile, rel_tol: f64) -> Result<f64, ProfileError> {
    if profile.tau <= 0.0 {
        return Ok(0.0);
    }
    let bp = profile.breakpoints();
    let scale = (-((profile.n - 1) as f64) * profile.s).exp();
    let e = integrate_pieces(|v| profile.density_v(v), &bp, rel_tol * scale * 1e-3, rel_tol)?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - std::f64::consts::TAU).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * std::f64::consts::PI.powi(2)).abs() < 1e-13);
        assert!((ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-13);
    }

    #[test]
    fn eta_values() {
        let (e, g) = eta((-std::f64::consts::E).exp()).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
        let r = (-std::f64::consts::E).exp();
        assert!((g - 1.0 / (r * std::f64::consts::E)).abs() / g < 1e-14);
        let (e0, _) = eta((-1.0f64).exp() * (1.0 - 1e-12)).unwrap();
        assert!(e0 > 0.0 && e0 < 1e-11);
        assert!(eta(0.5).is_err());
        assert!(eta(0.0).is_err());
    }

    #[test]
    fn truncation_pieces() {
        assert!(truncate(2.0, 2.0, 0.1).is_err());
        let (s, t) = (1.0, 2.0);
        // η(r) = 1.5 at r = exp(-e^1.5)
        let r = (-(1.5f64).exp()).exp();
        assert!((truncate(s, t, r).unwrap() - 0.5).abs() < 1e-12);
        let edge = (-(s.exp())).exp();
        assert_eq!(truncate(s, t, edge * 1.0001).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_example() {
        let e = truncation_energy(5.0, 1.0, 2);
        assert!((e - 0.026761).abs() < 5e-7, "{e}");
        assert_eq!(truncation_energy(5.0, 0.0, 2), 0.0);
        assert!(truncation_energy(6.0, 1.0, 3) < truncation_energy(5.0, 1.0, 3));
    }

    #[test]
    fn solve_example() {
        let sol = solve_s(0.1, 1.0, 2, 0.01, 0.0).unwrap();
        assert!((sol.s - 5.985).abs() < 1e-3, "{}", sol.s);
        assert!(truncation_energy(sol.s, 1.0, 2) < 0.01);
        assert!(truncation_energy(sol.s - 1e-5, 1.0, 2) >= 0.01 * (1.0 - 1e-4));
        // support: e^{-e^s} ≈ e^{-397}
        assert!((-sol.s.exp() - (-397.0)).abs() < 1.0);
        assert!(!sol.support_bound);
    }

    #[test]
    fn huge_budget_uses_support() {
        let sol = solve_s(0.1, 1.0, 2, 1e300, 0.0).unwrap();
        assert!(sol.support_bound);
        assert!((sol.s.exp() - (2.0f64 / 0.1).ln()).abs() < 1e-9);
    }

    #[test]
    fn smoothing_shape() {
        let p = smooth(&RadialProfile::truncation(3.0, 1.0, -3.0, 2), 0.2).unwrap();
        assert_eq!(p.rho_v(2.9), 0.0);
        assert_eq!(p.rho_v(p.plateau().v + 0.01), 1.0);
        for i in 0..=400 {
            let v = 2.9 + 1.5 * i as f64 / 400.0;
            let r = p.rho_v(v);
            assert!((0.0..=1.0).contains(&r));
            assert!(p.slope_v(v) <= 1.0 + 1e-15);
        }
        let e = profile_energy(&p, 1e-10).unwrap();
        assert!(e <= p.closed_energy());
    }
}
