use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};

use super::rigid::{RelativePose, RigidTransform, ScaleMode};

/// Ordered absolute poses (camera-to-world), first pose the identity by
/// convention when built from relative poses.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    poses: Vec<RigidTransform>,
}

impl Trajectory {
    pub fn from_poses(poses: Vec<RigidTransform>) -> Trajectory {
        Trajectory { poses }
    }

    pub fn poses(&self) -> &[RigidTransform] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Cumulative path length in meters per frame, starting at 0.
    pub fn cumulative_lengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.poses.len());
        let mut acc = 0.0;
        out.push(0.0);
        for pair in self.poses.windows(2) {
            let a = pair[0].translation;
            let b = pair[1].translation;
            let d = [(b[0] - a[0]), (b[1] - a[1]), (b[2] - a[2])];
            acc += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            out.push(acc);
        }
        out
    }

    pub fn path_length(&self) -> f64 {
        self.cumulative_lengths().last().copied().unwrap_or(0.0)
    }
}

/// Left-compose metric relative poses into a trajectory starting at identity.
/// N relative poses produce N + 1 absolute poses.
pub fn accumulate_trajectory(relative_poses: &[RelativePose]) -> Result<Trajectory> {
    let mut poses = Vec::with_capacity(relative_poses.len() + 1);
    poses.push(RigidTransform::IDENTITY);
    let mut current = RigidTransform::IDENTITY;
    for rp in relative_poses {
        if rp.scale_mode() != ScaleMode::Metric {
            return Err(CoreError::UnitScalePose {
                context: "accumulate_trajectory",
            });
        }
        current = current.compose(&rp.to_rigid());
        poses.push(current);
    }
    Ok(Trajectory::from_poses(poses))
}

/// Write one line per frame: 12 floats, the row-major top 3x4 of the pose.
pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = String::new();
    for pose in traj.poses() {
        let row = pose.to_row_major_3x4();
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let text =
        fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(CoreError::parse(
                path.display().to_string(),
                lineno + 1,
                format!("expected 12 fields, got {}", fields.len()),
            ));
        }
        let mut row = [0.0; 12];
        for (i, f) in fields.iter().enumerate() {
            row[i] = f.parse::<f64>().map_err(|_| {
                CoreError::parse(
                    path.display().to_string(),
                    lineno + 1,
                    format!("field {} is not a number: {f:?}", i + 1),
                )
            })?;
        }
        poses.push(RigidTransform::from_row_major_3x4(&row));
    }
    Ok(Trajectory::from_poses(poses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quat::Quat;

    #[test]
    fn identities_stay_at_origin() {
        let steps = vec![RelativePose::identity_metric(); 5];
        let traj = accumulate_trajectory(&steps).unwrap();
        assert_eq!(traj.len(), 6);
        for p in traj.poses() {
            assert!(p.translation_norm() < 1e-15);
        }
    }

    #[test]
    fn unit_steps_accumulate_linearly() {
        let step =
            RelativePose::new(Quat::IDENTITY, [1.0, 0.0, 0.0], ScaleMode::Metric).unwrap();
        let traj = accumulate_trajectory(&vec![step; 4]).unwrap();
        for (k, p) in traj.poses().iter().enumerate() {
            assert!((p.translation[0] - k as f64).abs() < 1e-12);
        }
        assert!((traj.path_length() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn unit_scale_pose_rejected() {
        let step = RelativePose::new(Quat::IDENTITY, [1.0, 0.0, 0.0], ScaleMode::Unit).unwrap();
        assert!(accumulate_trajectory(&[step]).is_err());
    }

    #[test]
    fn inverse_pair_returns_to_identity() {
        let q = Quat::from_axis_angle([0.1, 0.9, -0.3], 0.6);
        let fwd = RelativePose::new(q, [0.5, -0.2, 1.0], ScaleMode::Metric).unwrap();
        let inv_rigid = fwd.to_rigid().inverse();
        let back = RelativePose::new(
            Quat::from_matrix(&inv_rigid.rotation),
            inv_rigid.translation,
            ScaleMode::Metric,
        )
        .unwrap();
        let traj = accumulate_trajectory(&[fwd, back]).unwrap();
        let last = traj.poses().last().unwrap();
        assert!(last.rotation_angle() < 1e-9);
        assert!(last.translation_norm() < 1e-9);
    }

    #[test]
    fn accumulate_matches_explicit_product_oracle() {
        let mut rng = crate::rng::Rng::new(31);
        let mut rels = Vec::new();
        for _ in 0..20 {
            let q = Quat::from_axis_angle(rng.unit_vector3(), rng.range(-1.0, 1.0));
            let t = [rng.range(-2.0, 2.0), rng.range(-2.0, 2.0), rng.range(-2.0, 2.0)];
            rels.push(RelativePose::new(q, t, ScaleMode::Metric).unwrap());
        }
        let traj = accumulate_trajectory(&rels).unwrap();

        // Oracle: explicit 4x4 homogeneous products.
        let mut acc = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        for (k, rp) in rels.iter().enumerate() {
            let m = rp.to_rigid();
            let mut h = [[0.0; 4]; 4];
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] = m.rotation[i][j];
                }
                h[i][3] = m.translation[i];
            }
            h[3][3] = 1.0;
            let mut next = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    for l in 0..4 {
                        next[i][j] += acc[i][l] * h[l][j];
                    }
                }
            }
            acc = next;
            let got = traj.poses()[k + 1];
            for i in 0..3 {
                for j in 0..3 {
                    assert!((got.rotation[i][j] - acc[i][j]).abs() <= 1e-10);
                }
                assert!((got.translation[i] - acc[i][3]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn trajectory_file_round_trip() {
        let q = Quat::from_axis_angle([0.2, 0.4, 0.9], 1.1);
        let step = RelativePose::new(q, [0.3, 0.01, 0.95], ScaleMode::Metric).unwrap();
        let traj = accumulate_trajectory(&vec![step; 7]).unwrap();
        let dir = std::env::temp_dir().join("plpose_traj_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.txt");
        save_trajectory(&traj, &path).unwrap();
        let back = load_trajectory(&path).unwrap();
        assert_eq!(traj, back);
    }

    #[test]
    fn malformed_trajectory_line_reports_position() {
        let dir = std::env::temp_dir().join("plpose_traj_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("malformed.txt");
        std::fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1\n").unwrap();
        let err = load_trajectory(&path).unwrap_err();
        assert!(err.to_string().contains(":1"), "{err}");
    }
}
