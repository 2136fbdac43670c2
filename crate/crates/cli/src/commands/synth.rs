use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use plpose_core::datagen::{generate_scene, generate_scene_with_pose, save_matchset, SceneParams};
use plpose_core::geometry::{Quat, RelativePose, ScaleMode};

use crate::dataset::{Manifest, ManifestEntry, MANIFEST_NAME};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
    /// Number of match sets to generate
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// pairs: independent two-view scenes; sequence: consecutive frames
    #[arg(long, default_value = "pairs")]
    pub mode: String,
    /// 3-D points per scene
    #[arg(long, default_value_t = 48)]
    pub points: usize,
    /// 3-D line segments per scene
    #[arg(long, default_value_t = 24)]
    pub lines: usize,
    #[arg(long, default_value_t = 256)]
    pub image_width: u32,
    #[arg(long, default_value_t = 192)]
    pub image_height: u32,
    /// Gaussian pixel noise sigma
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Outlier fraction in [0, 1)
    #[arg(long, default_value_t = 0.0)]
    pub outliers: f64,
    /// Slide target line endpoints along the line by this sigma (px)
    #[arg(long, default_value_t = 0.0)]
    pub endpoint_perturbation: f64,
    /// Per-view appearance noise sigma
    #[arg(long, default_value_t = 0.0)]
    pub appearance_noise: f64,
    /// Forward step per frame in sequence mode, meters
    #[arg(long, default_value_t = 1.0)]
    pub step_m: f64,
    /// Peak per-frame yaw in sequence mode, radians
    #[arg(long, default_value_t = 0.02)]
    pub turn_rad: f64,
    /// Scene depth range in meters, as lo,hi
    #[arg(long, value_delimiter = ',', default_values_t = [4.0, 12.0])]
    pub depth_range: Vec<f64>,
    /// Camera baseline range in meters, as lo,hi
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 1.2])]
    pub baseline_range: Vec<f64>,
    /// Relative rotation magnitude range in radians, as lo,hi
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25])]
    pub rotation_range: Vec<f64>,
}

fn scene_params(args: &SynthArgs) -> SceneParams {
    SceneParams {
        n_points: args.points,
        n_lines: args.lines,
        image_size: (args.image_width, args.image_height),
        pixel_noise_sigma: args.noise,
        outlier_fraction: args.outliers,
        endpoint_perturbation: args.endpoint_perturbation,
        appearance_noise_sigma: args.appearance_noise,
        depth_range: (args.depth_range[0], args.depth_range[1]),
        baseline_range: (args.baseline_range[0], args.baseline_range[1]),
        rotation_range: (args.rotation_range[0], args.rotation_range[1]),
        ..SceneParams::default()
    }
}

/// Smooth forward motion with a slowly varying heading; deterministic in the
/// frame index alone so a sequence is reproducible per seed.
fn sequence_pose(args: &SynthArgs, frame: usize) -> Result<RelativePose> {
    let phase = frame as f64 * 0.11;
    let yaw = args.turn_rad * phase.sin();
    let q = Quat::from_axis_angle([0.0, 1.0, 0.0], yaw);
    // Mostly forward (+z), slight lateral drift to make the path 2-D.
    let t = [0.08 * args.step_m * (phase * 0.7).cos(), 0.0, args.step_m];
    Ok(RelativePose::new(q, t, ScaleMode::Metric)?)
}

pub fn run(args: SynthArgs) -> Result<()> {
    if args.mode != "pairs" && args.mode != "sequence" {
        bail!("bad mode {:?} (pairs or sequence)", args.mode);
    }
    for (name, range) in [
        ("depth-range", &args.depth_range),
        ("baseline-range", &args.baseline_range),
        ("rotation-range", &args.rotation_range),
    ] {
        if range.len() != 2 {
            bail!("--{name} wants two values lo,hi, got {}", range.len());
        }
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let params = scene_params(&args);

    let params_line = format!(
        "mode={} points={} lines={} image={}x{} noise={} outliers={} endpoint_perturbation={} appearance_noise={} depth={}..{} baseline={}..{} rotation={}..{} step_m={} turn_rad={} seed={}",
        args.mode,
        args.points,
        args.lines,
        args.image_width,
        args.image_height,
        args.noise,
        args.outliers,
        args.endpoint_perturbation,
        args.appearance_noise,
        args.depth_range[0],
        args.depth_range[1],
        args.baseline_range[0],
        args.baseline_range[1],
        args.rotation_range[0],
        args.rotation_range[1],
        args.step_m,
        args.turn_rad,
        args.seed
    );

    let mut entries = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let scene_seed = args
            .seed
            .wrapping_mul(0x9E3779B97F4A7C15)
            .wrapping_add(i as u64);
        let scene = if args.mode == "sequence" {
            let pose = sequence_pose(&args, i)?;
            generate_scene_with_pose(scene_seed, &params, Some(pose))?
        } else {
            generate_scene(scene_seed, &params)?
        };
        let file = format!("pair_{i:05}.pms");
        save_matchset(&scene.matchset, &args.out.join(&file))?;
        entries.push(ManifestEntry {
            file,
            seed: scene_seed,
        });
    }

    let manifest = Manifest {
        mode: args.mode.clone(),
        params_line,
        entries,
    };
    std::fs::write(args.out.join(MANIFEST_NAME), manifest.render())
        .with_context(|| format!("writing manifest in {}", args.out.display()))?;
    println!(
        "synth: wrote {} match sets to {} ({} mode)",
        args.count,
        args.out.display(),
        args.mode
    );
    Ok(())
}
