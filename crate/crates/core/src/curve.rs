//! Arc-length parametrized C² curves: clamped cubic splines refit to unit speed,
//! plus composite paths that splice a fitted head onto an existing curve.

use std::sync::Arc;

use thiserror::Error;

use crate::geom::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("curve needs at least two distinct points")]
    TooFewPoints,
    #[error("unit-speed refit stalled: speed deviation {deviation:e} with {knots} knots")]
    SpeedNotReached { deviation: f64, knots: usize },
}

/// Common interface of unit-speed curves. Outside `[0, length]` curves are
/// continued by straight tangent rays.
pub trait Curve: Send + Sync {
    fn length(&self) -> f64;
    fn point(&self, t: f64) -> Vec3;
    fn d1(&self, t: f64) -> Vec3;
    fn d2(&self, t: f64) -> Vec3;

    fn tangent(&self, t: f64) -> Vec3 {
        self.d1(t).normalize()
    }

    /// Curvature of the (nearly) unit-speed curve.
    fn curvature(&self, t: f64) -> f64 {
        let a = self.d1(t);
        let b = self.d2(t);
        a.cross(&b).norm() / a.norm().powi(3)
    }

    /// Upper bound on the curvature over `[0, length]`.
    fn max_curvature(&self) -> f64 {
        let l = self.length();
        (0..=4000).map(|i| self.curvature(l * i as f64 / 4000.0)).fold(0.0, f64::max) * 1.01
    }

    fn samples(&self, n: usize) -> Vec<Vec3> {
        let l = self.length();
        (0..=n).map(|i| self.point(l * i as f64 / n as f64)).collect()
    }
}

/// Clamped cubic spline with arbitrary increasing knots.
#[derive(Clone, Debug)]
pub struct Spline {
    t: Vec<f64>,
    p: Vec<Vec3>,
    m: Vec<Vec3>,
}

impl Spline {
    pub fn clamped(t: Vec<f64>, p: Vec<Vec3>, d0: Vec3, dn: Vec3) -> Spline {
        let n = t.len() - 1;
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        // Tridiagonal system sub/diag/sup with vector right-hand side.
        let mut sub = vec![0.0; n + 1];
        let mut diag = vec![0.0; n + 1];
        let mut sup = vec![0.0; n + 1];
        let mut rhs = vec![Vec3::zeros(); n + 1];
        diag[0] = 2.0 * h[0];
        sup[0] = h[0];
        rhs[0] = ((p[1] - p[0]) / h[0] - d0) * 6.0;
        for i in 1..n {
            sub[i] = h[i - 1];
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            sup[i] = h[i];
            rhs[i] = ((p[i + 1] - p[i]) / h[i] - (p[i] - p[i - 1]) / h[i - 1]) * 6.0;
        }
        sub[n] = h[n - 1];
        diag[n] = 2.0 * h[n - 1];
        rhs[n] = (dn - (p[n] - p[n - 1]) / h[n - 1]) * 6.0;
        for i in 1..=n {
            let w = sub[i] / diag[i - 1];
            diag[i] -= w * sup[i - 1];
            let prev = rhs[i - 1];
            rhs[i] -= prev * w;
        }
        let mut m = vec![Vec3::zeros(); n + 1];
        m[n] = rhs[n] / diag[n];
        for i in (0..n).rev() {
            m[i] = (rhs[i] - m[i + 1] * sup[i]) / diag[i];
        }
        Spline { t, p, m }
    }

    pub fn start(&self) -> f64 {
        self.t[0]
    }

    pub fn end(&self) -> f64 {
        *self.t.last().expect("knots")
    }

    pub fn knots(&self) -> &[f64] {
        &self.t
    }

    fn locate(&self, t: f64) -> usize {
        let n = self.t.len() - 1;
        match self.t.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    pub fn eval(&self, t: f64) -> Vec3 {
        let i = self.locate(t);
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - t) / h;
        let b = (t - self.t[i]) / h;
        self.p[i] * a + self.p[i + 1] * b + (self.m[i] * (a * a * a - a) + self.m[i + 1] * (b * b * b - b)) * (h * h / 6.0)
    }

    pub fn deriv(&self, t: f64) -> Vec3 {
        let i = self.locate(t);
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - t) / h;
        let b = (t - self.t[i]) / h;
        (self.p[i + 1] - self.p[i]) / h + (self.m[i + 1] * (3.0 * b * b - 1.0) - self.m[i] * (3.0 * a * a - 1.0)) * (h / 6.0)
    }

    pub fn deriv2(&self, t: f64) -> Vec3 {
        let i = self.locate(t);
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - t) / h;
        let b = (t - self.t[i]) / h;
        self.m[i] * a + self.m[i + 1] * b
    }

    /// Arc length between knots `i` and parameter `t` within interval `i`.
    fn partial_length(&self, i: usize, t: f64) -> f64 {
        const X: [f64; 5] = [0.0, -0.538_469_310_105_683, 0.538_469_310_105_683, -0.906_179_845_938_664, 0.906_179_845_938_664];
        const W: [f64; 5] = [0.568_888_888_888_889, 0.478_628_670_499_366, 0.478_628_670_499_366, 0.236_926_885_056_189, 0.236_926_885_056_189];
        let a = self.t[i];
        let c = 0.5 * (a + t);
        let h = 0.5 * (t - a);
        (0..5).map(|k| W[k] * self.deriv(c + h * X[k]).norm()).sum::<f64>() * h
    }
}

/// Unit-speed cubic spline curve on `[0, length]`.
#[derive(Clone, Debug)]
pub struct ArcCurve {
    spline: Spline,
    length: f64,
    first: Vec3,
    last: Vec3,
}

impl ArcCurve {
    /// The straight segment from `a` to `b`.
    pub fn straight(a: Vec3, b: Vec3) -> Result<ArcCurve, CurveError> {
        let l = (b - a).norm();
        if !(l > 0.0) {
            return Err(CurveError::TooFewPoints);
        }
        let d = (b - a) / l;
        Ok(ArcCurve { spline: Spline::clamped(vec![0.0, l], vec![a, b], d, d), length: l, first: a, last: b })
    }

    /// Fits a C² curve through `points` (with optional start/end directions)
    /// and refits it on equal arc-length knots until the speed is within `tol` of 1.
    pub fn fit(points: &[Vec3], start_dir: Option<Vec3>, end_dir: Option<Vec3>, tol: f64) -> Result<ArcCurve, CurveError> {
        let mut q: Vec<Vec3> = Vec::with_capacity(points.len());
        for p in points {
            if q.last().is_none_or(|l: &Vec3| (p - l).norm() > 0.0) {
                q.push(*p);
            }
        }
        if q.len() < 2 {
            return Err(CurveError::TooFewPoints);
        }
        let n = q.len() - 1;
        let mut u = vec![0.0; n + 1];
        for i in 1..=n {
            u[i] = u[i - 1] + (q[i] - q[i - 1]).norm();
        }
        let d0 = start_dir.map(|d| d.normalize()).unwrap_or_else(|| (q[1] - q[0]).normalize());
        let dn = end_dir.map(|d| d.normalize()).unwrap_or_else(|| (q[n] - q[n - 1]).normalize());
        let s0 = Spline::clamped(u, q.clone(), d0, dn);
        let mut cum = vec![0.0; n + 1];
        for i in 0..n {
            cum[i + 1] = cum[i] + s0.partial_length(i, s0.t[i + 1]);
        }
        let total = cum[n];
        let mut knots = (2 * n).max(16);
        loop {
            let mut pts = Vec::with_capacity(knots + 1);
            for j in 0..=knots {
                let s = total * j as f64 / knots as f64;
                pts.push(if j == 0 {
                    q[0]
                } else if j == knots {
                    q[n]
                } else {
                    s0.eval(invert_length(&s0, &cum, s))
                });
            }
            let t: Vec<f64> = (0..=knots).map(|j| total * j as f64 / knots as f64).collect();
            let spline = Spline::clamped(t, pts, d0, dn);
            let curve = ArcCurve { spline, length: total, first: q[0], last: q[n] };
            let dev = curve.max_speed_deviation(4);
            if dev <= tol {
                return Ok(curve);
            }
            if knots >= 1 << 17 {
                return Err(CurveError::SpeedNotReached { deviation: dev, knots });
            }
            knots *= 2;
        }
    }

    /// Samples `f` on `[a, b]` at `n + 1` points and fits a unit-speed curve.
    pub fn from_fn<F: Fn(f64) -> Vec3>(f: F, a: f64, b: f64, n: usize, start_dir: Option<Vec3>, end_dir: Option<Vec3>, tol: f64) -> Result<ArcCurve, CurveError> {
        let pts: Vec<Vec3> = (0..=n).map(|i| f(a + (b - a) * i as f64 / n as f64)).collect();
        ArcCurve::fit(&pts, start_dir, end_dir, tol)
    }

    /// Largest |speed - 1| over `per` interior samples of each knot interval.
    pub fn max_speed_deviation(&self, per: usize) -> f64 {
        let k = self.spline.knots();
        let mut dev: f64 = 0.0;
        for w in k.windows(2) {
            for j in 0..=per {
                let t = w[0] + (w[1] - w[0]) * j as f64 / per as f64;
                dev = dev.max((self.spline.deriv(t).norm() - 1.0).abs());
            }
        }
        dev
    }

    pub fn knot_count(&self) -> usize {
        self.spline.knots().len()
    }
}

fn invert_length(s0: &Spline, cum: &[f64], s: f64) -> f64 {
    let i = match cum.binary_search_by(|c| c.total_cmp(&s)) {
        Ok(i) => return s0.t[i],
        Err(i) => i - 1,
    };
    let target = s - cum[i];
    let (mut lo, mut hi) = (s0.t[i], s0.t[i + 1]);
    let mut x = lo + (hi - lo) * target / (cum[i + 1] - cum[i]);
    for _ in 0..60 {
        let f = s0.partial_length(i, x) - target;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = s0.deriv(x).norm();
        let mut nx = x - f / d;
        if !(nx > lo && nx < hi) {
            nx = 0.5 * (lo + hi);
        }
        if (nx - x).abs() <= 1e-15 * (hi.abs() + 1e-300) {
            return nx;
        }
        x = nx;
    }
    x
}

impl Curve for ArcCurve {
    fn length(&self) -> f64 {
        self.length
    }

    fn point(&self, t: f64) -> Vec3 {
        if t <= 0.0 {
            return if t == 0.0 { self.first } else { self.first + self.d1(0.0) * t };
        }
        if t >= self.length {
            return if t == self.length { self.last } else { self.last + self.d1(self.length) * (t - self.length) };
        }
        self.spline.eval(t)
    }

    fn d1(&self, t: f64) -> Vec3 {
        self.spline.deriv(t.clamp(0.0, self.length))
    }

    fn d2(&self, t: f64) -> Vec3 {
        if t < 0.0 || t > self.length {
            return Vec3::zeros();
        }
        self.spline.deriv2(t)
    }

    // The second derivative is piecewise linear, so its norm peaks at knots;
    // the factor covers the speed tolerance.
    fn max_curvature(&self) -> f64 {
        self.spline.knots().iter().map(|&t| self.spline.deriv2(t).norm()).fold(0.0, f64::max) * (1.0 + 1e-4)
    }
}

#[derive(Clone, Debug)]
struct Piece {
    start: f64,
    len: f64,
    curve: Arc<ArcCurve>,
    offset: f64,
}

/// Concatenation of curve pieces; each piece may be a parameter window of a
/// shared curve, so a tail can coincide exactly with an existing branch.
#[derive(Clone, Debug)]
pub struct Path {
    pieces: Vec<Piece>,
    length: f64,
    first: Vec3,
    last: Vec3,
}

impl Path {
    pub fn single(curve: Arc<ArcCurve>) -> Path {
        let len = curve.length();
        let first = curve.point(0.0);
        let last = curve.point(len);
        Path { pieces: vec![Piece { start: 0.0, len, curve, offset: 0.0 }], length: len, first, last }
    }

    /// `head` followed by `tail` restricted to `[from, tail.length]`.
    pub fn splice(head: Arc<ArcCurve>, tail: Arc<ArcCurve>, from: f64) -> Path {
        let hl = head.length();
        let tl = tail.length() - from;
        let first = head.point(0.0);
        let last = tail.point(tail.length());
        Path {
            pieces: vec![
                Piece { start: 0.0, len: hl, curve: head, offset: 0.0 },
                Piece { start: hl, len: tl, curve: tail, offset: from },
            ],
            length: hl + tl,
            first,
            last,
        }
    }

    /// Parameter at which the last piece starts.
    pub fn tail_start(&self) -> f64 {
        self.pieces.last().map(|p| p.start).unwrap_or(0.0)
    }

    /// Map from a path parameter in the last piece to the parameter of the shared tail curve.
    pub fn tail_offset(&self) -> f64 {
        self.pieces.last().map(|p| p.offset - p.start).unwrap_or(0.0)
    }

    fn piece(&self, t: f64) -> &Piece {
        let idx = self.pieces.partition_point(|p| p.start <= t).saturating_sub(1);
        &self.pieces[idx]
    }

    pub fn start_point(&self) -> Vec3 {
        self.first
    }

    pub fn end_point(&self) -> Vec3 {
        self.last
    }
}

impl Curve for Path {
    fn length(&self) -> f64 {
        self.length
    }

    fn point(&self, t: f64) -> Vec3 {
        if t <= 0.0 {
            return if t == 0.0 { self.first } else { self.first + self.d1(0.0) * t };
        }
        if t >= self.length {
            return if t == self.length { self.last } else { self.last + self.d1(self.length) * (t - self.length) };
        }
        let p = self.piece(t);
        p.curve.point(t - p.start + p.offset)
    }

    fn d1(&self, t: f64) -> Vec3 {
        let t = t.clamp(0.0, self.length);
        let p = self.piece(t);
        p.curve.d1((t - p.start + p.offset).min(p.offset + p.len))
    }

    fn d2(&self, t: f64) -> Vec3 {
        if t < 0.0 || t > self.length {
            return Vec3::zeros();
        }
        let p = self.piece(t);
        p.curve.d2((t - p.start + p.offset).min(p.offset + p.len))
    }

    fn max_curvature(&self) -> f64 {
        self.pieces.iter().map(|p| p.curve.max_curvature()).fold(0.0, f64::max)
    }
}
