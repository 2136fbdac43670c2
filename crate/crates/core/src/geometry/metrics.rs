//! Angular pose-error metrics and pairwise/drift odometry evaluation.

use crate::error::{CoreError, Result};

use super::quat::Quat;
use super::rigid::{rotation_angle_of, RigidTransform};
use super::trajectory::Trajectory;

const RAD_TO_DEG: f64 = 180.0 / std::f64::consts::PI;

/// Fixed subsequence lengths (meters) of the drift evaluation protocol.
pub const DRIFT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Angular rotation error in degrees between two unit quaternions.
///
/// Uses the absolute dot product so that q and -q (the same rotation)
/// compare equal.
pub fn demon_rot_error(q_gt: &Quat, q_pred: &Quat) -> Result<f64> {
    for q in [q_gt, q_pred] {
        if !q.is_unit() {
            return Err(CoreError::NonUnitQuaternion { norm: q.norm() });
        }
    }
    let dot = q_gt.dot(q_pred).abs().clamp(0.0, 1.0);
    Ok(dot.acos() * RAD_TO_DEG)
}

/// Angular difference in degrees between two translation directions.
pub fn demon_tran_error(t_gt: [f64; 3], t_pred: [f64; 3]) -> Result<f64> {
    let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (ng, np) = (norm(t_gt), norm(t_pred));
    if ng < 1e-12 || np < 1e-12 {
        return Err(CoreError::ZeroNorm {
            context: "translation angular error",
        });
    }
    let dot =
        (t_gt[0] * t_pred[0] + t_gt[1] * t_pred[1] + t_gt[2] * t_pred[2]) / (ng * np);
    Ok(dot.clamp(-1.0, 1.0).acos() * RAD_TO_DEG)
}

/// Relative change of pose between two absolute poses: `P_A^{-1} P_B`.
pub fn relative_pose(p_a: &RigidTransform, p_b: &RigidTransform) -> Result<RigidTransform> {
    p_a.check_rigid("relative_pose first argument")?;
    p_b.check_rigid("relative_pose second argument")?;
    Ok(p_a.inverse().compose(p_b))
}

/// RMSE of rotation (degrees) and translation (meters) of the per-pair error
/// `E_i = dP_est^{-1} dP_gt` over consecutive frame pairs.
pub fn kitti_pairwise_errors(gt: &Trajectory, est: &Trajectory) -> Result<(f64, f64)> {
    if gt.len() != est.len() {
        return Err(CoreError::TrajectoryLengthMismatch {
            gt: gt.len(),
            est: est.len(),
        });
    }
    if gt.len() < 2 {
        return Err(CoreError::TrajectoryLengthMismatch {
            gt: gt.len(),
            est: est.len(),
        });
    }
    let m = gt.len() - 1;
    let mut rot_sq = 0.0;
    let mut tran_sq = 0.0;
    for i in 0..m {
        let d_gt = gt.poses()[i].inverse().compose(&gt.poses()[i + 1]);
        let d_est = est.poses()[i].inverse().compose(&est.poses()[i + 1]);
        let err = d_est.inverse().compose(&d_gt);
        let rot = err.rotation_angle() * RAD_TO_DEG;
        let tran = err.translation_norm();
        rot_sq += rot * rot;
        tran_sq += tran * tran;
    }
    Ok(((rot_sq / m as f64).sqrt(), (tran_sq / m as f64).sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftReport {
    /// Average translation drift, percent of traveled distance.
    pub t_rel_percent: f64,
    /// Average rotation drift, degrees per 100 m.
    pub r_rel_deg_per_100m: f64,
    pub segments_evaluated: usize,
    /// Subsequence lengths that did not fit in the trajectory.
    pub skipped_lengths: Vec<f64>,
}

/// Subsequence drift over the fixed length set, averaged over every start
/// frame, with errors normalized by the nominal subsequence length.
pub fn drift_per_100m(gt: &Trajectory, est: &Trajectory) -> Result<DriftReport> {
    if gt.len() != est.len() {
        return Err(CoreError::TrajectoryLengthMismatch {
            gt: gt.len(),
            est: est.len(),
        });
    }
    let dist = gt.cumulative_lengths();
    let total = dist.last().copied().unwrap_or(0.0);

    let mut t_sum = 0.0;
    let mut r_sum = 0.0;
    let mut count = 0usize;
    let mut skipped = Vec::new();

    for &length in &DRIFT_LENGTHS {
        let mut found_any = false;
        for start in 0..gt.len() {
            // First frame at least `length` meters past the start.
            let target = dist[start] + length;
            let end = match dist[start..].iter().position(|&d| d >= target) {
                Some(offset) => start + offset,
                None => break,
            };
            found_any = true;
            let d_gt = gt.poses()[start].inverse().compose(&gt.poses()[end]);
            let d_est = est.poses()[start].inverse().compose(&est.poses()[end]);
            let err = d_est.inverse().compose(&d_gt);
            t_sum += err.translation_norm() / length;
            r_sum += rotation_angle_of(&err.rotation) / length;
            count += 1;
        }
        if !found_any {
            skipped.push(length);
        }
    }

    if count == 0 {
        return Err(CoreError::PathTooShort {
            path_m: total,
            skipped,
        });
    }
    Ok(DriftReport {
        t_rel_percent: t_sum / count as f64 * 100.0,
        r_rel_deg_per_100m: r_sum / count as f64 * RAD_TO_DEG * 100.0,
        segments_evaluated: count,
        skipped_lengths: skipped,
    })
}
