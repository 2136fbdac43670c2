use crate::error::{CoreError, Result};

/// Unit-length tolerance accepted by operations that require unit quaternions.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Quaternion in (w, x, y, z) order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Quat {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle_rad: f64) -> Quat {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        debug_assert!(n > 1e-12, "axis must be nonzero");
        let half = angle_rad / 2.0;
        let s = half.sin() / n;
        Quat {
            w: half.cos(),
            x: axis[0] * s,
            y: axis[1] * s,
            z: axis[2] * s,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn normalized(&self) -> Result<Quat> {
        let n = self.norm();
        if n < 1e-12 {
            return Err(CoreError::ZeroNorm {
                context: "quaternion normalization",
            });
        }
        Ok(Quat {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        })
    }

    /// Flip sign so that w >= 0, fixing the double-cover representative.
    pub fn canonicalized(&self) -> Quat {
        if self.w < 0.0 {
            Quat {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            *self
        }
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    pub fn conjugate(&self) -> Quat {
        Quat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product self * other.
    pub fn multiply(&self, other: &Quat) -> Quat {
        let (w1, x1, y1, z1) = (self.w, self.x, self.y, self.z);
        let (w2, x2, y2, z2) = (other.w, other.x, other.y, other.z);
        Quat {
            w: w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            x: w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            y: w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            z: w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        }
    }

    /// Rotate a 3-vector by this (unit) quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.to_matrix();
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    /// Rotation matrix of a unit quaternion.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let Quat { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Quaternion of a rotation matrix (Shepperd's branch selection),
    /// canonicalized to w >= 0.
    pub fn from_matrix(r: &[[f64; 3]; 3]) -> Quat {
        let trace = r[0][0] + r[1][1] + r[2][2];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat {
                w: 0.25 * s,
                x: (r[2][1] - r[1][2]) / s,
                y: (r[0][2] - r[2][0]) / s,
                z: (r[1][0] - r[0][1]) / s,
            }
        } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
            let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
            Quat {
                w: (r[2][1] - r[1][2]) / s,
                x: 0.25 * s,
                y: (r[0][1] + r[1][0]) / s,
                z: (r[0][2] + r[2][0]) / s,
            }
        } else if r[1][1] > r[2][2] {
            let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
            Quat {
                w: (r[0][2] - r[2][0]) / s,
                x: (r[0][1] + r[1][0]) / s,
                y: 0.25 * s,
                z: (r[1][2] + r[2][1]) / s,
            }
        } else {
            let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
            Quat {
                w: (r[1][0] - r[0][1]) / s,
                x: (r[0][2] + r[2][0]) / s,
                y: (r[1][2] + r[2][1]) / s,
                z: 0.25 * s,
            }
        };
        q.normalized().expect("rotation matrix quaternion").canonicalized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU: f64 = std::f64::consts::TAU;

    #[test]
    fn axis_angle_round_trip() {
        let q = Quat::from_axis_angle([0.0, 0.0, 1.0], TAU / 8.0);
        assert!(q.is_unit());
        let r = q.to_matrix();
        let back = Quat::from_matrix(&r);
        assert!((q.dot(&back).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_rotation() {
        let q = Quat::IDENTITY;
        let v = [0.3, -0.7, 2.0];
        let r = q.rotate(v);
        for i in 0..3 {
            assert!((r[i] - v[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn ninety_degrees_about_z() {
        let q = Quat::from_axis_angle([0.0, 0.0, 1.0], TAU / 4.0);
        let r = q.rotate([1.0, 0.0, 0.0]);
        assert!((r[0]).abs() < 1e-12);
        assert!((r[1] - 1.0).abs() < 1e-12);
        assert!((r[2]).abs() < 1e-12);
    }

    #[test]
    fn canonical_sign() {
        let q = Quat::new(-0.5, 0.5, 0.5, 0.5).canonicalized();
        assert!(q.w >= 0.0);
        assert_eq!(q.x, -0.5);
    }

    #[test]
    fn product_composes_rotations() {
        let a = Quat::from_axis_angle([1.0, 0.0, 0.0], 0.3);
        let b = Quat::from_axis_angle([0.0, 1.0, 0.0], -0.8);
        let v = [0.2, 0.5, -1.0];
        let via_quat = a.multiply(&b).rotate(v);
        let via_steps = a.rotate(b.rotate(v));
        for i in 0..3 {
            assert!((via_quat[i] - via_steps[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_round_trip_many() {
        let mut rng = crate::rng::Rng::new(4);
        for _ in 0..200 {
            let axis = rng.unit_vector3();
            let angle = rng.range(-3.1, 3.1);
            let q = Quat::from_axis_angle(axis, angle).canonicalized();
            let back = Quat::from_matrix(&q.to_matrix());
            assert!(
                (q.dot(&back).abs() - 1.0).abs() < 1e-9,
                "round trip failed for {q:?} -> {back:?}"
            );
        }
    }
}
