//! Synthetic two-view scene generation with exact ground truth.

use crate::error::{CoreError, Result};
use crate::geometry::{Quat, RelativePose, RigidTransform, ScaleMode};
use crate::rng::Rng;

use super::appearance::{AppearanceSource, PerNodeAppearance, ProceduralAppearance};
use super::{LineMatch, MatchSet, PointMatch};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn project(&self, p_cam: [f64; 3]) -> [f64; 2] {
        [
            self.fx * p_cam[0] / p_cam[2] + self.cx,
            self.fy * p_cam[1] / p_cam[2] + self.cy,
        ]
    }

    /// Normalized image coordinates (x/z, y/z) of a pixel.
    pub fn normalize(&self, pixel: [f64; 2]) -> [f64; 2] {
        [(pixel[0] - self.cx) / self.fx, (pixel[1] - self.cy) / self.fy]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub n_points: usize,
    pub n_lines: usize,
    /// (width, height) in pixels.
    pub image_size: (u32, u32),
    pub focal: f64,
    /// Depth of generated geometry in the reference camera, meters.
    pub depth_range: (f64, f64),
    /// Camera baseline magnitude, meters.
    pub baseline_range: (f64, f64),
    /// Relative rotation magnitude, radians.
    pub rotation_range: (f64, f64),
    /// Gaussian noise added to every projected coordinate, pixels.
    pub pixel_noise_sigma: f64,
    /// Probability that a match is replaced by a uniform re-draw.
    pub outlier_fraction: f64,
    /// Gaussian slide of target line endpoints along the 2-D line, pixels.
    pub endpoint_perturbation: f64,
    /// Per-view noise on appearance values.
    pub appearance_noise_sigma: f64,
    /// Minimum projected segment length in both views, pixels.
    pub min_line_length_px: f64,
    /// 3-D segment length range, meters.
    pub segment_length_range: (f64, f64),
}

impl Default for SceneParams {
    fn default() -> SceneParams {
        SceneParams {
            n_points: 48,
            n_lines: 24,
            image_size: (256, 192),
            focal: 220.0,
            depth_range: (4.0, 12.0),
            baseline_range: (0.3, 1.2),
            rotation_range: (0.0, 0.25),
            pixel_noise_sigma: 0.0,
            outlier_fraction: 0.0,
            endpoint_perturbation: 0.0,
            appearance_noise_sigma: 0.0,
            min_line_length_px: 2.0,
            segment_length_range: (0.5, 3.0),
        }
    }
}

impl SceneParams {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: self.image_size.0 as f64 / 2.0,
            cy: self.image_size.1 as f64 / 2.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ranges = [
            ("depth_range", self.depth_range),
            ("baseline_range", self.baseline_range),
            ("rotation_range", self.rotation_range),
            ("segment_length_range", self.segment_length_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(CoreError::Config(format!("{name} is empty: ({lo}, {hi})")));
            }
        }
        if self.depth_range.0 <= 0.0 {
            return Err(CoreError::Config("depth_range must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(CoreError::Config(format!(
                "outlier_fraction must be in [0, 1): {}",
                self.outlier_fraction
            )));
        }
        if self.image_size.0 < 8 || self.image_size.1 < 8 {
            return Err(CoreError::Config("image_size too small".into()));
        }
        Ok(())
    }
}

/// A generated scene: latent 3-D geometry in the reference camera frame,
/// both camera extrinsics, the derived match set, and outlier bookkeeping.
#[derive(Clone, Debug)]
pub struct SceneSample {
    pub points_3d: Vec<[f64; 3]>,
    pub segments_3d: Vec<[[f64; 3]; 2]>,
    pub intrinsics: Intrinsics,
    /// World-to-camera extrinsics; the world frame is the reference camera.
    pub reference_extrinsic: RigidTransform,
    pub target_extrinsic: RigidTransform,
    pub gt: RelativePose,
    pub matchset: MatchSet,
    pub point_is_outlier: Vec<bool>,
    pub line_is_outlier: Vec<bool>,
    pub params: SceneParams,
}

const MAX_TRIES_PER_ITEM: usize = 200;

struct Projector {
    intrinsics: Intrinsics,
    world_to_target: RigidTransform,
    width: f64,
    height: f64,
}

impl Projector {
    /// Projection into both views when the point is in front of both cameras
    /// and inside both frames.
    fn project_visible(&self, p: [f64; 3]) -> Option<([f64; 2], [f64; 2])> {
        if p[2] < 0.1 {
            return None;
        }
        let ref_px = self.intrinsics.project(p);
        let p_t = self.world_to_target.transform_point(p);
        if p_t[2] < 0.1 {
            return None;
        }
        let tgt_px = self.intrinsics.project(p_t);
        for px in [ref_px, tgt_px] {
            if !(0.0..self.width).contains(&px[0]) || !(0.0..self.height).contains(&px[1]) {
                return None;
            }
        }
        Some((ref_px, tgt_px))
    }
}

pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneSample> {
    generate_scene_with_pose(seed, params, None)
}

/// Like `generate_scene` but with a caller-supplied relative pose, used when
/// synthesizing consecutive-frame sequences.
pub fn generate_scene_with_pose(
    seed: u64,
    params: &SceneParams,
    pose: Option<RelativePose>,
) -> Result<SceneSample> {
    params.validate()?;
    let mut rng = Rng::new(seed);
    let (w, h) = (params.image_size.0 as f64, params.image_size.1 as f64);
    let intrinsics = params.intrinsics();

    let gt = match pose {
        Some(p) => {
            if p.scale_mode() != ScaleMode::Metric {
                return Err(CoreError::UnitScalePose {
                    context: "generate_scene_with_pose",
                });
            }
            p
        }
        None => {
            let angle = rng.range(params.rotation_range.0, params.rotation_range.1);
            let q = Quat::from_axis_angle(rng.unit_vector3(), angle);
            let dir = rng.unit_vector3();
            let mag = rng.range(params.baseline_range.0, params.baseline_range.1);
            RelativePose::new(
                q,
                [dir[0] * mag, dir[1] * mag, dir[2] * mag],
                ScaleMode::Metric,
            )?
        }
    };

    // gt maps target-camera coordinates into the reference frame; cameras
    // observe world points through the inverse.
    let projector = Projector {
        intrinsics,
        world_to_target: gt.to_rigid().inverse(),
        width: w,
        height: h,
    };

    let sample_world_point = |rng: &mut Rng| -> [f64; 3] {
        let z = rng.range(params.depth_range.0, params.depth_range.1);
        let margin = 0.08;
        let px = rng.range(w * margin, w * (1.0 - margin));
        let py = rng.range(h * margin, h * (1.0 - margin));
        let n = intrinsics.normalize([px, py]);
        [n[0] * z, n[1] * z, z]
    };

    // Points visible in both views.
    let mut points_3d = Vec::with_capacity(params.n_points);
    let mut point_pixels = Vec::with_capacity(params.n_points);
    let mut tries = 0;
    while points_3d.len() < params.n_points {
        tries += 1;
        if tries > MAX_TRIES_PER_ITEM * (params.n_points + 1) {
            return Err(CoreError::SceneGeneration(format!(
                "could not place {} visible points (seed {seed})",
                params.n_points
            )));
        }
        let p = sample_world_point(&mut rng);
        if let Some(pair) = projector.project_visible(p) {
            points_3d.push(p);
            point_pixels.push(pair);
        }
    }

    // Segments with both endpoints visible and long enough in both views.
    let mut segments_3d = Vec::with_capacity(params.n_lines);
    let mut line_pixels = Vec::with_capacity(params.n_lines);
    tries = 0;
    while segments_3d.len() < params.n_lines {
        tries += 1;
        if tries > MAX_TRIES_PER_ITEM * (params.n_lines + 1) {
            return Err(CoreError::SceneGeneration(format!(
                "could not place {} visible segments (seed {seed})",
                params.n_lines
            )));
        }
        let a = sample_world_point(&mut rng);
        let dir = rng.unit_vector3();
        let len = rng.range(params.segment_length_range.0, params.segment_length_range.1);
        let b = [a[0] + dir[0] * len, a[1] + dir[1] * len, a[2] + dir[2] * len];
        let (Some(pa), Some(pb)) = (projector.project_visible(a), projector.project_visible(b))
        else {
            continue;
        };
        let len2 = |u: [f64; 2], v: [f64; 2]| (u[0] - v[0]).hypot(u[1] - v[1]);
        if len2(pa.0, pb.0) < params.min_line_length_px
            || len2(pa.1, pb.1) < params.min_line_length_px
        {
            continue;
        }
        segments_3d.push([a, b]);
        line_pixels.push((pa, pb));
    }

    // Assemble the match set: noise, outliers, endpoint perturbation.
    let clamp_px = |p: [f64; 2]| -> [f64; 2] {
        [
            p[0].clamp(0.0, w - 1e-9),
            p[1].clamp(0.0, h - 1e-9),
        ]
    };
    let noisy = |p: [f64; 2], rng: &mut Rng| -> [f64; 2] {
        if params.pixel_noise_sigma > 0.0 {
            clamp_px([
                p[0] + rng.gaussian() * params.pixel_noise_sigma,
                p[1] + rng.gaussian() * params.pixel_noise_sigma,
            ])
        } else {
            p
        }
    };

    let appearance_fn = ProceduralAppearance::new(seed);
    let mut appearance = PerNodeAppearance::default();
    let sample_app = |f: &ProceduralAppearance, p: [f64; 3], rng: &mut Rng, sigma: f64| {
        let mut v = f.value(p);
        if sigma > 0.0 {
            for c in v.iter_mut() {
                *c += rng.gaussian() * sigma;
            }
        }
        v
    };

    let mut points = Vec::with_capacity(params.n_points);
    let mut point_is_outlier = Vec::with_capacity(params.n_points);
    for (i, &(ref_px, tgt_px)) in point_pixels.iter().enumerate() {
        let outlier = params.outlier_fraction > 0.0 && rng.uniform() < params.outlier_fraction;
        let r = noisy(ref_px, &mut rng);
        let t = if outlier {
            [rng.range(0.0, w), rng.range(0.0, h)]
        } else {
            noisy(tgt_px, &mut rng)
        };
        points.push(PointMatch {
            x_r: r[0],
            y_r: r[1],
            x_t: t[0],
            y_t: t[1],
        });
        point_is_outlier.push(outlier);

        let latent = points_3d[i];
        appearance.point_ref.push(sample_app(
            &appearance_fn,
            latent,
            &mut rng,
            params.appearance_noise_sigma,
        ));
        let tgt_latent = if outlier {
            // An outlier's target pixel does not observe the same geometry.
            [rng.range(-5.0, 5.0), rng.range(-5.0, 5.0), rng.range(1.0, 20.0)]
        } else {
            latent
        };
        appearance.point_tgt.push(sample_app(
            &appearance_fn,
            tgt_latent,
            &mut rng,
            params.appearance_noise_sigma,
        ));
    }

    let mut lines = Vec::with_capacity(params.n_lines);
    let mut line_is_outlier = Vec::with_capacity(params.n_lines);
    for (i, &((ra, ta), (rb, tb))) in line_pixels.iter().enumerate() {
        let outlier = params.outlier_fraction > 0.0 && rng.uniform() < params.outlier_fraction;
        let r_start = noisy(ra, &mut rng);
        let r_end = noisy(rb, &mut rng);
        let (mut t_start, mut t_end) = if outlier {
            (
                [rng.range(0.0, w), rng.range(0.0, h)],
                [rng.range(0.0, w), rng.range(0.0, h)],
            )
        } else {
            (noisy(ta, &mut rng), noisy(tb, &mut rng))
        };
        if !outlier && params.endpoint_perturbation > 0.0 {
            // Slide endpoints along the infinite 2-D line in the target view,
            // reproducing wrong-endpoint-length matches.
            let dx = t_end[0] - t_start[0];
            let dy = t_end[1] - t_start[1];
            let norm = dx.hypot(dy).max(1e-9);
            let (ux, uy) = (dx / norm, dy / norm);
            let s0 = rng.gaussian() * params.endpoint_perturbation;
            let s1 = rng.gaussian() * params.endpoint_perturbation;
            t_start = clamp_px([t_start[0] + ux * s0, t_start[1] + uy * s0]);
            t_end = clamp_px([t_end[0] + ux * s1, t_end[1] + uy * s1]);
        }
        lines.push(LineMatch {
            r_start,
            r_end,
            t_start,
            t_end,
        });
        line_is_outlier.push(outlier);

        let [la, lb] = segments_3d[i];
        let mut line_ref = [[0.0; 3]; 2];
        let mut line_tgt = [[0.0; 3]; 2];
        for (e, latent) in [la, lb].into_iter().enumerate() {
            line_ref[e] =
                sample_app(&appearance_fn, latent, &mut rng, params.appearance_noise_sigma);
            let tgt_latent = if outlier {
                [rng.range(-5.0, 5.0), rng.range(-5.0, 5.0), rng.range(1.0, 20.0)]
            } else {
                latent
            };
            line_tgt[e] =
                sample_app(&appearance_fn, tgt_latent, &mut rng, params.appearance_noise_sigma);
        }
        appearance.line_ref.push(line_ref);
        appearance.line_tgt.push(line_tgt);
    }

    let matchset = MatchSet {
        points,
        lines,
        image_size: params.image_size,
        appearance: AppearanceSource::PerNode(appearance),
        gt: Some(gt),
    };

    Ok(SceneSample {
        points_3d,
        segments_3d,
        intrinsics,
        reference_extrinsic: RigidTransform::IDENTITY,
        target_extrinsic: gt.to_rigid().inverse(),
        gt,
        matchset,
        point_is_outlier,
        line_is_outlier,
        params: params.clone(),
    })
}

/// Epipolar residual `x_t^T E x_r` in normalized coordinates, with E built
/// from the ground-truth pose and a unit-norm baseline.
pub fn epipolar_residual(
    gt: &RelativePose,
    intrinsics: &Intrinsics,
    ref_px: [f64; 2],
    tgt_px: [f64; 2],
) -> f64 {
    // World-to-target transform: X_t = R' X_r + t'.
    let wt = gt.to_rigid().inverse();
    let r = wt.rotation;
    let mut t = wt.translation;
    let norm = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
    if norm > 1e-12 {
        t = [t[0] / norm, t[1] / norm, t[2] / norm];
    }
    // E = [t']_x R'
    let tx = [
        [0.0, -t[2], t[1]],
        [t[2], 0.0, -t[0]],
        [-t[1], t[0], 0.0],
    ];
    let mut e = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                e[i][j] += tx[i][k] * r[k][j];
            }
        }
    }
    let nr = intrinsics.normalize(ref_px);
    let nt = intrinsics.normalize(tgt_px);
    let xr = [nr[0], nr[1], 1.0];
    let xt = [nt[0], nt[1], 1.0];
    let mut ex = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            ex[i] += e[i][j] * xr[j];
        }
    }
    xt[0] * ex[0] + xt[1] * ex[1] + xt[2] * ex[2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::sample_appearance;
    use crate::datagen::ViewSide;

    #[test]
    fn zero_noise_scene_satisfies_epipolar_constraint() {
        let params = SceneParams::default();
        let scene = generate_scene(7, &params).unwrap();
        let m = &scene.matchset;
        for p in &m.points {
            let res = epipolar_residual(
                &scene.gt,
                &scene.intrinsics,
                [p.x_r, p.y_r],
                [p.x_t, p.y_t],
            );
            assert!(res.abs() <= 1e-6, "point residual {res}");
        }
        for l in &m.lines {
            for (r, t) in [(l.r_start, l.t_start), (l.r_end, l.t_end)] {
                let res = epipolar_residual(&scene.gt, &scene.intrinsics, r, t);
                assert!(res.abs() <= 1e-6, "endpoint residual {res}");
            }
        }
    }

    #[test]
    fn identity_pose_maps_matches_onto_themselves() {
        let params = SceneParams {
            n_points: 20,
            n_lines: 5,
            ..SceneParams::default()
        };
        let pose = RelativePose::identity_metric();
        let scene = generate_scene_with_pose(3, &params, Some(pose)).unwrap();
        for p in &scene.matchset.points {
            assert!((p.x_r - p.x_t).abs() < 1e-9);
            assert!((p.y_r - p.y_t).abs() < 1e-9);
        }
    }

    #[test]
    fn outlier_fraction_bookkeeping() {
        let params = SceneParams {
            n_points: 1000,
            n_lines: 0,
            outlier_fraction: 0.3,
            ..SceneParams::default()
        };
        let scene = generate_scene(11, &params).unwrap();
        let outliers = scene.point_is_outlier.iter().filter(|&&o| o).count();
        assert!(
            (outliers as f64 - 300.0).abs() < 60.0,
            "flagged {outliers} of 1000"
        );
    }

    #[test]
    fn reprojection_of_latent_geometry_is_exact_at_zero_noise() {
        let scene = generate_scene(19, &SceneParams::default()).unwrap();
        for (i, p) in scene.points_3d.iter().enumerate() {
            let m = &scene.matchset.points[i];
            let rp = scene.intrinsics.project(*p);
            assert!((rp[0] - m.x_r).abs() <= 1e-6 && (rp[1] - m.y_r).abs() <= 1e-6);
            let pt = scene.target_extrinsic.transform_point(*p);
            let tp = scene.intrinsics.project(pt);
            assert!((tp[0] - m.x_t).abs() <= 1e-6 && (tp[1] - m.y_t).abs() <= 1e-6);
        }
    }

    #[test]
    fn same_seed_is_bit_reproducible() {
        let params = SceneParams {
            pixel_noise_sigma: 0.4,
            outlier_fraction: 0.1,
            appearance_noise_sigma: 0.02,
            endpoint_perturbation: 1.0,
            ..SceneParams::default()
        };
        let a = generate_scene(23, &params).unwrap();
        let b = generate_scene(23, &params).unwrap();
        assert_eq!(a.matchset.points, b.matchset.points);
        assert_eq!(a.matchset.lines, b.matchset.lines);
        assert_eq!(a.matchset.appearance, b.matchset.appearance);
        let c = generate_scene(24, &params).unwrap();
        assert_ne!(a.matchset.points, c.matchset.points);
    }

    #[test]
    fn photoconsistency_at_zero_appearance_noise() {
        let scene = generate_scene(29, &SceneParams::default()).unwrap();
        let m = &scene.matchset;
        for p in &m.points {
            let r = sample_appearance(m, p.x_r, p.y_r, ViewSide::Reference).unwrap();
            let t = sample_appearance(m, p.x_t, p.y_t, ViewSide::Target).unwrap();
            for c in 0..3 {
                assert!((r[c] - t[c]).abs() <= 1e-9);
            }
        }
        for l in &m.lines {
            let r = sample_appearance(m, l.r_start[0], l.r_start[1], ViewSide::Reference).unwrap();
            let t = sample_appearance(m, l.t_start[0], l.t_start[1], ViewSide::Target).unwrap();
            for c in 0..3 {
                assert!((r[c] - t[c]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn segments_respect_min_projected_length() {
        let scene = generate_scene(31, &SceneParams::default()).unwrap();
        for l in &scene.matchset.lines {
            assert!(l.ref_length() >= 2.0);
            assert!(l.target_length() >= 2.0);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = SceneParams {
            outlier_fraction: 1.0,
            ..SceneParams::default()
        };
        assert!(generate_scene(1, &bad).is_err());
        let bad2 = SceneParams {
            depth_range: (5.0, 2.0),
            ..SceneParams::default()
        };
        assert!(generate_scene(1, &bad2).is_err());
    }
}
