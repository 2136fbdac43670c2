//! SE(3) pose algebra, angular error metrics, odometry drift evaluation,
//! and trajectory accumulation/serialization.

mod metrics;
mod quat;
mod rigid;
mod trajectory;

pub use metrics::{
    demon_rot_error, demon_tran_error, drift_per_100m, kitti_pairwise_errors, relative_pose,
    DriftReport, DRIFT_LENGTHS,
};
pub use quat::{Quat, UNIT_TOLERANCE};
pub use rigid::{rotation_angle_of, RelativePose, RigidTransform, ScaleMode, RIGID_TOLERANCE};
pub use trajectory::{accumulate_trajectory, load_trajectory, save_trajectory, Trajectory};
