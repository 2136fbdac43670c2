use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use plpose_core::geometry::{
    accumulate_trajectory, drift_per_100m, kitti_pairwise_errors, relative_pose, save_trajectory,
    RelativePose, ScaleMode,
};
use plpose_core::model::Model;

use crate::dataset::{load_dataset, manifest_mode};
use crate::report::{render_path_svg, write_pairwise_csv};

#[derive(Args, Debug)]
pub struct TrajArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sequence dataset directory (consecutive-frame pairs, metric scale)
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for trajectory files, CSV, and the SVG plot
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pipeline self-checks: use ground-truth or identity relative poses
    /// in place of predictions
    #[arg(long, value_parser = ["gt", "identity"])]
    pub inject: Option<String>,
}

pub fn run(args: TrajArgs) -> Result<()> {
    let model = Model::load_checkpoint(&args.checkpoint)?;
    if model.config().scale_mode != ScaleMode::Metric && args.inject.is_none() {
        bail!(
            "checkpoint {} predicts unit-scale translations; trajectory accumulation needs a metric-scale model",
            args.checkpoint.display()
        );
    }
    if let Some(mode) = manifest_mode(&args.data)? {
        if mode != "sequence" {
            eprintln!("warning: dataset mode is {mode:?}, expected a sequence");
        }
    }
    let dataset = load_dataset(&args.data)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let mut gt_rels = Vec::with_capacity(dataset.len());
    let mut est_rels = Vec::with_capacity(dataset.len());
    for (i, m) in dataset.iter().enumerate() {
        let gt = match m.gt {
            Some(gt) if gt.scale_mode() == ScaleMode::Metric => gt,
            Some(_) => bail!("pair {i} ground truth is not metric"),
            None => bail!("pair {i} has no ground truth"),
        };
        gt_rels.push(gt);
        let est = match args.inject.as_deref() {
            Some("gt") => gt,
            Some("identity") => RelativePose::identity_metric(),
            _ => model.predict_pose(m, args.seed)?.pose,
        };
        est_rels.push(est);
    }

    let gt_traj = accumulate_trajectory(&gt_rels)?;
    let est_traj = accumulate_trajectory(&est_rels)?;
    save_trajectory(&gt_traj, &args.out.join("gt_trajectory.txt"))?;
    save_trajectory(&est_traj, &args.out.join("est_trajectory.txt"))?;

    // Per-pair errors for the CSV: E_i = dP_est^-1 dP_gt per consecutive pair.
    let mut rows = Vec::new();
    for i in 0..gt_traj.len() - 1 {
        let d_gt = relative_pose(&gt_traj.poses()[i], &gt_traj.poses()[i + 1])?;
        let d_est = relative_pose(&est_traj.poses()[i], &est_traj.poses()[i + 1])?;
        let err = d_est.inverse().compose(&d_gt);
        rows.push((
            i,
            err.rotation_angle().to_degrees(),
            err.translation_norm(),
        ));
    }
    write_pairwise_csv(&rows, &args.out.join("per_pair_errors.csv"))?;

    let gt_positions: Vec<[f64; 3]> = gt_traj.poses().iter().map(|p| p.translation).collect();
    let est_positions: Vec<[f64; 3]> = est_traj.poses().iter().map(|p| p.translation).collect();
    let svg = render_path_svg(
        &gt_positions,
        &est_positions,
        &format!("top-down paths: {}", args.data.display()),
    );
    std::fs::write(args.out.join("trajectory.svg"), svg)
        .with_context(|| format!("writing plot in {}", args.out.display()))?;

    let (rot_rmse, tran_rmse) = kitti_pairwise_errors(&gt_traj, &est_traj)?;
    println!("traj: pairwise rot RMSE {rot_rmse:.6} deg/pair, tran RMSE {tran_rmse:.6} m/pair");
    match drift_per_100m(&gt_traj, &est_traj) {
        Ok(report) => {
            println!(
                "traj: drift t_rel {:.4} %, r_rel {:.6} deg/100m over {} segments{}",
                report.t_rel_percent,
                report.r_rel_deg_per_100m,
                report.segments_evaluated,
                if report.skipped_lengths.is_empty() {
                    String::new()
                } else {
                    format!(" (skipped lengths {:?} m)", report.skipped_lengths)
                }
            );
        }
        Err(err) => println!("traj: drift skipped: {err}"),
    }
    println!("traj: wrote trajectories, CSV and plot to {}", args.out.display());
    Ok(())
}
