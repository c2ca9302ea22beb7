//! Small vector helpers shared by every module.

use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;

pub fn v3(x: f64, y: f64, z: f64) -> Vec3 {
    Vector3::new(x, y, z)
}

/// Closest distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Closest distance between segments `[p0, p1]` and `[q0, q1]`.
pub fn segment_segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= f64::MIN_POSITIVE && e <= f64::MIN_POSITIVE {
        return r.norm();
    }
    if a <= f64::MIN_POSITIVE {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::MIN_POSITIVE {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut ss = if denom > 0.0 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut tt = (b * ss + f) / e;
            if tt < 0.0 {
                tt = 0.0;
                ss = (-c / a).clamp(0.0, 1.0);
            } else if tt > 1.0 {
                tt = 1.0;
                ss = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = ss;
            t = tt;
        }
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

/// Closest distance from `p` to the triangle `(a, b, c)`.
pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    // Ericson, region classification.
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}

/// A unit vector orthogonal to `n` (which must be nonzero), chosen deterministically.
pub fn any_orthogonal(n: &Vec3) -> Vec3 {
    let n = n.normalize();
    let pick = if n.x.abs() < 0.6 {
        v3(1.0, 0.0, 0.0)
    } else if n.y.abs() < 0.6 {
        v3(0.0, 1.0, 0.0)
    } else {
        v3(0.0, 0.0, 1.0)
    };
    (pick - n * n.dot(&pick)).normalize()
}

/// Rodrigues rotation of `v` about unit `axis` by `angle`.
pub fn rotate_about(v: &Vec3, axis: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * axis.dot(v) * (1.0 - c)
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&o.min), max: self.max.sup(&o.max) }
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= o.max[i] && o.min[i] <= self.max[i])
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn inflate(&self, r: f64) -> Aabb {
        Aabb { min: self.min - Vec3::repeat(r), max: self.max + Vec3::repeat(r) }
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let e = (self.min[i] - p[i]).max(0.0).max(p[i] - self.max[i]);
            d2 += e * e;
        }
        d2.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distances() {
        let a = v3(0.0, 0.0, 0.0);
        let b = v3(1.0, 0.0, 0.0);
        assert!((point_segment_distance(&v3(0.5, 2.0, 0.0), &a, &b) - 2.0).abs() < 1e-15);
        assert!((point_segment_distance(&v3(-3.0, 4.0, 0.0), &a, &b) - 5.0).abs() < 1e-15);
        let d = segment_segment_distance(&a, &b, &v3(0.5, -1.0, 1.0), &v3(0.5, 1.0, 1.0));
        assert!((d - 1.0).abs() < 1e-15);
        let d = segment_segment_distance(&a, &b, &v3(2.0, 0.0, 0.0), &v3(3.0, 0.0, 0.0));
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_distance() {
        let a = v3(0.0, 0.0, 0.0);
        let b = v3(1.0, 0.0, 0.0);
        let c = v3(0.0, 1.0, 0.0);
        assert!((point_triangle_distance(&v3(0.2, 0.2, 3.0), &a, &b, &c) - 3.0).abs() < 1e-15);
        assert!((point_triangle_distance(&v3(2.0, 0.0, 0.0), &a, &b, &c) - 1.0).abs() < 1e-15);
        let d = point_triangle_distance(&v3(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rotation_keeps_length() {
        let v = v3(1.0, 2.0, 3.0);
        let axis = v3(0.0, 0.0, 1.0);
        let r = rotate_about(&v, &axis, 0.7);
        assert!((r.norm() - v.norm()).abs() < 1e-14);
        assert!((r.z - 3.0).abs() < 1e-15);
    }
}
