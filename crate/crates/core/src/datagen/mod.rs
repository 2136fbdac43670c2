//! Synthetic two-view scenes with exact ground truth, match-set files, and
//! the fixed-count resampling policy.

mod appearance;
mod io;
mod resample;
mod scene;

pub use appearance::{
    node_appearance_matrix, sample_appearance, AppearanceSource, ImageGrid, PerNodeAppearance,
    ProceduralAppearance, ViewSide,
};
pub use io::{load_matchset, save_matchset};
pub use resample::resample_matches;
pub use scene::{epipolar_residual, generate_scene, generate_scene_with_pose, Intrinsics,
    SceneParams, SceneSample};

use crate::geometry::RelativePose;

/// One matched point: pixel coordinates in the reference and target images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMatch {
    pub x_r: f64,
    pub y_r: f64,
    pub x_t: f64,
    pub y_t: f64,
}

/// One matched line segment, endpoint-ordered: the first reference endpoint
/// corresponds to the first target endpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineMatch {
    pub r_start: [f64; 2],
    pub r_end: [f64; 2],
    pub t_start: [f64; 2],
    pub t_end: [f64; 2],
}

impl LineMatch {
    pub fn ref_length(&self) -> f64 {
        let dx = self.r_end[0] - self.r_start[0];
        let dy = self.r_end[1] - self.r_start[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn target_length(&self) -> f64 {
        let dx = self.t_end[0] - self.t_start[0];
        let dy = self.t_end[1] - self.t_start[1];
        (dx * dx + dy * dy).sqrt()
    }
}

/// The network's input unit: matched points and line segments between two
/// frames, plus image size, optional appearance, optional ground truth.
#[derive(Clone, Debug)]
pub struct MatchSet {
    pub points: Vec<PointMatch>,
    pub lines: Vec<LineMatch>,
    /// (width, height) in pixels.
    pub image_size: (u32, u32),
    pub appearance: AppearanceSource,
    pub gt: Option<RelativePose>,
}

impl MatchSet {
    pub fn new(image_size: (u32, u32)) -> MatchSet {
        MatchSet {
            points: Vec::new(),
            lines: Vec::new(),
            image_size,
            appearance: AppearanceSource::None,
            gt: None,
        }
    }
}
