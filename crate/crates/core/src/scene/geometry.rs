use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Rigid transform `x ↦ R·x + t`, translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::new(x, y, z),
        }
    }

    /// Rotation by `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation: Vec3::zeros(),
        }
    }

    pub fn compose(&self, other: &Transform) -> Transform {
        Transform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Transform {
        let rt = self.rotation.transpose();
        Transform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        e.abs().max().max((self.rotation.determinant() - 1.0).abs())
    }
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Serialize for Transform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let r = &self.rotation;
        TransformRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Transform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = TransformRepr::deserialize(d)?;
        let m = r.rotation;
        Ok(Transform {
            rotation: Matrix3::new(
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ),
            translation: Vec3::from(r.translation),
        })
    }
}

/// Closest points between segments `p1q1` and `p2q2`; returns squared distance.
pub fn segment_distance_sq(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    const EPS: f64 = 1e-15;
    let (s, t);
    if a <= EPS && e <= EPS {
        return r.norm_squared();
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm_squared()
}

/// Nearest positive hit distance of a ray (unit or not) with a capsule.
pub fn ray_capsule(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, radius: f64) -> Option<f64> {
    let ba = b - a;
    let oa = origin - a;
    let baba = ba.dot(&ba);
    let bard = ba.dot(dir);
    let baoa = ba.dot(&oa);
    let rdoa = dir.dot(&oa);
    let oaoa = oa.dot(&oa);
    let rdrd = dir.dot(dir);
    let r2 = radius * radius;

    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > 0.0 && best.map_or(true, |b| t < b) {
            best = Some(t);
        }
    };

    // infinite cylinder, restricted to the segment's slab
    if baba > 0.0 {
        let qa = baba * rdrd - bard * bard;
        let qb = baba * rdoa - baoa * bard;
        let qc = baba * oaoa - baoa * baoa - r2 * baba;
        if qa.abs() > 1e-18 {
            let disc = qb * qb - qa * qc;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-qb - sq) / qa, (-qb + sq) / qa] {
                    let y = baoa + t * bard;
                    if y > 0.0 && y < baba {
                        consider(t);
                    }
                }
            }
        }
    }
    // end spheres
    for c in [a, b] {
        let oc = origin - c;
        let hb = dir.dot(&oc);
        let hc = oc.dot(&oc) - r2;
        let disc = hb * hb - rdrd * hc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            consider((-hb - sq) / rdrd);
            consider((-hb + sq) / rdrd);
        }
    }
    best
}

/// Outward surface normal of a capsule at surface point `p`.
pub fn capsule_normal(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let ba = b - a;
    let baba = ba.dot(&ba);
    let h = if baba > 0.0 {
        ((p - a).dot(&ba) / baba).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let n = p - (a + ba * h);
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vec3::z()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = Transform::from_axis_angle(&Vec3::new(1.0, 2.0, -0.5), 0.7)
            .compose(&Transform::from_translation(0.3, -1.0, 2.0));
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
        assert!(t.orthonormality_error() < 1e-12);
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = Transform::from_axis_angle(&Vec3::z(), FRAC_PI_2);
        let p = t.apply(&Vec3::new(0.5, 0.0, 0.0));
        assert!((p - Vec3::new(0.0, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn segment_distance_cases() {
        let o = Vec3::zeros();
        let x = Vec3::x();
        // parallel offset
        let d = segment_distance_sq(&o, &x, &Vec3::new(0.0, 1.0, 0.0), &Vec3::new(1.0, 1.0, 0.0));
        assert!((d - 1.0).abs() < 1e-12);
        // crossing skew lines
        let d = segment_distance_sq(
            &Vec3::new(-1.0, 0.0, 0.0),
            &Vec3::new(1.0, 0.0, 0.0),
            &Vec3::new(0.0, -1.0, 0.5),
            &Vec3::new(0.0, 1.0, 0.5),
        );
        assert!((d - 0.25).abs() < 1e-12);
        // endpoint to endpoint
        let d = segment_distance_sq(&o, &x, &Vec3::new(3.0, 0.0, 0.0), &Vec3::new(4.0, 0.0, 0.0));
        assert!((d - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ray_hits_capsule_side_and_cap() {
        let a = Vec3::new(-1.0, 0.0, 5.0);
        let b = Vec3::new(1.0, 0.0, 5.0);
        let t = ray_capsule(&Vec3::zeros(), &Vec3::z(), &a, &b, 0.5).unwrap();
        assert!((t - 4.5).abs() < 1e-12);
        // hits the spherical cap beyond the segment end
        let dir = Vec3::new(1.2, 0.0, 5.0).normalize();
        assert!(ray_capsule(&Vec3::zeros(), &dir, &a, &b, 0.5).is_some());
        let miss = Vec3::new(2.0, 0.0, 5.0).normalize();
        assert!(ray_capsule(&Vec3::zeros(), &miss, &a, &b, 0.5).is_none());
        // degenerate capsule is a sphere
        let t = ray_capsule(&Vec3::zeros(), &Vec3::z(), &b, &b, 0.25);
        assert!(t.is_none());
        let c = Vec3::new(0.0, 0.0, 3.0);
        assert!((ray_capsule(&Vec3::zeros(), &Vec3::z(), &c, &c, 0.25).unwrap() - 2.75).abs() < 1e-12);
    }
}
