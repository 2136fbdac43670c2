use crate::error::{CoreError, Result};

use super::quat::Quat;

/// Orthonormality/determinant tolerance for accepting a transform as rigid.
pub const RIGID_TOLERANCE: f64 = 1e-6;

/// Rigid transform: rotation matrix plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0, 0.0, 0.0],
    };

    pub fn from_parts(q: &Quat, translation: [f64; 3]) -> RigidTransform {
        RigidTransform {
            rotation: q.to_matrix(),
            translation,
        }
    }

    pub fn translation_only(t: [f64; 3]) -> RigidTransform {
        RigidTransform {
            rotation: RigidTransform::IDENTITY.rotation,
            translation: t,
        }
    }

    /// Max deviation from orthonormality plus determinant error.
    pub fn rigidity_defect(&self) -> f64 {
        let r = &self.rotation;
        let mut worst: f64 = 0.0;
        // R R^T == I
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += r[i][k] * r[j][k];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - expect).abs());
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        worst.max((det - 1.0).abs())
    }

    pub fn check_rigid(&self, context: &str) -> Result<()> {
        let defect = self.rigidity_defect();
        if defect > RIGID_TOLERANCE {
            return Err(CoreError::NonRigid {
                detail: format!("{context}: defect {defect:.3e}"),
            });
        }
        Ok(())
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    rotation[i][j] += self.rotation[i][k] * other.rotation[k][j];
                }
            }
        }
        let mut translation = self.translation;
        for i in 0..3 {
            for k in 0..3 {
                translation[i] += self.rotation[i][k] * other.translation[k];
            }
        }
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = self.rotation[j][i];
            }
        }
        let t = self.translation;
        let translation = [
            -(rotation[0][0] * t[0] + rotation[0][1] * t[1] + rotation[0][2] * t[2]),
            -(rotation[1][0] * t[0] + rotation[1][1] * t[1] + rotation[1][2] * t[2]),
            -(rotation[2][0] * t[0] + rotation[2][1] * t[1] + rotation[2][2] * t[2]),
        ];
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    /// Rotation angle in radians via the trace, clamped near identity.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle_of(&self.rotation)
    }

    pub fn translation_norm(&self) -> f64 {
        let t = self.translation;
        (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt()
    }

    /// Row-major 3x4 flattening used by the trajectory file format.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], //
            r[1][0], r[1][1], r[1][2], t[1], //
            r[2][0], r[2][1], r[2][2], t[2],
        ]
    }

    pub fn from_row_major_3x4(m: &[f64; 12]) -> RigidTransform {
        RigidTransform {
            rotation: [
                [m[0], m[1], m[2]],
                [m[4], m[5], m[6]],
                [m[8], m[9], m[10]],
            ],
            translation: [m[3], m[7], m[11]],
        }
    }
}

/// Angle of a rotation matrix in radians.
///
/// atan2 of the skew-part magnitude against the trace-derived cosine; the
/// plain arccos form loses ~8 digits near the identity, which would break
/// the exact-zero guarantees of the pairwise error metrics.
pub fn rotation_angle_of(r: &[[f64; 3]; 3]) -> f64 {
    let sx = r[2][1] - r[1][2];
    let sy = r[0][2] - r[2][0];
    let sz = r[1][0] - r[0][1];
    let sin = 0.5 * (sx * sx + sy * sy + sz * sz).sqrt();
    let cos = (((r[0][0] + r[1][1] + r[2][2]) - 1.0) / 2.0).clamp(-1.0, 1.0);
    sin.atan2(cos)
}

/// Whether a relative pose carries metric translation or only its direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleMode {
    Unit,
    Metric,
}

impl ScaleMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScaleMode::Unit => "unit",
            ScaleMode::Metric => "metric",
        }
    }

    pub fn parse(s: &str) -> Option<ScaleMode> {
        match s {
            "unit" => Some(ScaleMode::Unit),
            "metric" => Some(ScaleMode::Metric),
            _ => None,
        }
    }
}

/// Relative pose between a reference and a target camera.
///
/// Convention: the stored transform is the pose of the target camera
/// expressed in the reference frame, `X_ref = R X_tgt + t`, so chaining
/// consecutive relative poses left-composes into absolute poses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePose {
    q: Quat,
    t: [f64; 3],
    scale_mode: ScaleMode,
}

impl RelativePose {
    /// Normalizes and sign-canonicalizes the quaternion; unit mode
    /// additionally normalizes the translation direction.
    pub fn new(q: Quat, t: [f64; 3], scale_mode: ScaleMode) -> Result<RelativePose> {
        let q = q.normalized()?.canonicalized();
        let t = match scale_mode {
            ScaleMode::Metric => t,
            ScaleMode::Unit => {
                let n = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
                if n < 1e-12 {
                    return Err(CoreError::ZeroNorm {
                        context: "unit-scale translation",
                    });
                }
                [t[0] / n, t[1] / n, t[2] / n]
            }
        };
        Ok(RelativePose { q, t, scale_mode })
    }

    pub fn identity_metric() -> RelativePose {
        RelativePose {
            q: Quat::IDENTITY,
            t: [0.0, 0.0, 0.0],
            scale_mode: ScaleMode::Metric,
        }
    }

    pub fn quaternion(&self) -> &Quat {
        &self.q
    }

    pub fn translation(&self) -> [f64; 3] {
        self.t
    }

    pub fn scale_mode(&self) -> ScaleMode {
        self.scale_mode
    }

    /// Direction of the translation; error when the translation vanishes.
    pub fn translation_direction(&self) -> Result<[f64; 3]> {
        let t = self.t;
        let n = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
        if n < 1e-12 {
            return Err(CoreError::ZeroNorm {
                context: "translation direction",
            });
        }
        Ok([t[0] / n, t[1] / n, t[2] / n])
    }

    /// Unit-scale view of a metric pose (DeMoN convention).
    pub fn to_unit_scale(&self) -> Result<RelativePose> {
        RelativePose::new(self.q, self.t, ScaleMode::Unit)
    }

    pub fn to_rigid(&self) -> RigidTransform {
        RigidTransform::from_parts(&self.q, self.t)
    }

    /// Flat 7-vector [qw qx qy qz tx ty tz] used as the regression target.
    pub fn to_vector7(&self) -> [f64; 7] {
        [
            self.q.w, self.q.x, self.q.y, self.q.z, self.t[0], self.t[1], self.t[2],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_with_inverse_is_identity() {
        let q = Quat::from_axis_angle([0.3, -1.0, 0.2], 0.7);
        let m = RigidTransform::from_parts(&q, [1.0, -2.0, 0.5]);
        let id = m.compose(&m.inverse());
        assert!(id.rigidity_defect() < 1e-12);
        assert!(id.rotation_angle() < 1e-9);
        assert!(id.translation_norm() < 1e-12);
    }

    #[test]
    fn rotation_angle_known() {
        let q = Quat::from_axis_angle([0.0, 1.0, 0.0], 0.5);
        let m = RigidTransform::from_parts(&q, [0.0; 3]);
        assert!((m.rotation_angle() - 0.5).abs() < 1e-12);
        assert!(RigidTransform::IDENTITY.rotation_angle().abs() < 1e-9);
    }

    #[test]
    fn row_major_round_trip() {
        let q = Quat::from_axis_angle([1.0, 1.0, 0.0], -1.2);
        let m = RigidTransform::from_parts(&q, [4.0, 5.0, 6.0]);
        let back = RigidTransform::from_row_major_3x4(&m.to_row_major_3x4());
        assert_eq!(m, back);
    }

    #[test]
    fn unit_scale_normalizes_translation() {
        let p = RelativePose::new(Quat::IDENTITY, [3.0, 0.0, 4.0], ScaleMode::Unit).unwrap();
        let t = p.translation();
        assert!((t[0] - 0.6).abs() < 1e-15);
        assert!((t[2] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_translation_rejected_in_unit_mode() {
        assert!(RelativePose::new(Quat::IDENTITY, [0.0; 3], ScaleMode::Unit).is_err());
    }

    #[test]
    fn zero_quaternion_rejected() {
        let q = Quat::new(0.0, 0.0, 0.0, 0.0);
        assert!(RelativePose::new(q, [1.0, 0.0, 0.0], ScaleMode::Metric).is_err());
    }

    #[test]
    fn quaternion_sign_is_canonical() {
        let q = Quat::from_axis_angle([0.0, 0.0, 1.0], 0.4);
        let neg = Quat::new(-q.w, -q.x, -q.y, -q.z);
        let p = RelativePose::new(neg, [1.0, 0.0, 0.0], ScaleMode::Metric).unwrap();
        assert!(p.quaternion().w >= 0.0);
    }
}
