use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use plpose_core::model::{evaluate, median, EvalSummary, Model, PairErrors};

use crate::config::load_config;
use crate::dataset::load_dataset;
use crate::report::EvalReport;

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report file (JSON)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Config to cross-check against the checkpoint hyperparameters
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pipeline self-check: score ground truth against itself
    #[arg(long, value_parser = ["gt"])]
    pub inject: Option<String>,
}

pub fn run(args: EvalArgs) -> Result<()> {
    let model = Model::load_checkpoint(&args.checkpoint)?;
    if let Some(config_path) = &args.config {
        let settings = load_config(config_path)?;
        if settings.model != *model.config() {
            bail!(
                "hyperparameter mismatch between checkpoint {} and config {}: checkpoint {:?}, config {:?}",
                args.checkpoint.display(),
                config_path.display(),
                model.config(),
                settings.model
            );
        }
    }
    let dataset = load_dataset(&args.data)?;

    let summary = if args.inject.as_deref() == Some("gt") {
        injected_gt_summary(&dataset)?
    } else {
        evaluate(&model, &dataset, args.seed)?
    };

    let report = EvalReport::from_summary(
        &summary,
        &args.checkpoint.display().to_string(),
        &args.data.display().to_string(),
        args.seed,
    );
    report.save(&args.out)?;
    println!(
        "eval: {} pairs, rot mean {:.4} / median {:.4} deg, tran mean {:.4} / median {:.4} deg -> {}",
        report.pairs,
        report.mean_rot_deg,
        report.median_rot_deg,
        report.mean_tran_deg,
        report.median_tran_deg,
        args.out.display()
    );
    Ok(())
}

/// Score every pair's ground truth against itself; all errors must be zero.
fn injected_gt_summary(dataset: &[plpose_core::datagen::MatchSet]) -> Result<EvalSummary> {
    use plpose_core::geometry::{demon_rot_error, demon_tran_error};
    let mut per_pair = Vec::with_capacity(dataset.len());
    for (i, m) in dataset.iter().enumerate() {
        let Some(gt) = m.gt else {
            bail!("pair {i} has no ground truth");
        };
        per_pair.push(PairErrors {
            rot_deg: demon_rot_error(gt.quaternion(), gt.quaternion())?,
            tran_deg: demon_tran_error(
                gt.translation_direction()?,
                gt.translation_direction()?,
            )?,
        });
    }
    if per_pair.is_empty() {
        bail!("evaluation dataset is empty");
    }
    let rots: Vec<f64> = per_pair.iter().map(|p| p.rot_deg).collect();
    let trans: Vec<f64> = per_pair.iter().map(|p| p.tran_deg).collect();
    Ok(EvalSummary {
        mean_rot_deg: rots.iter().sum::<f64>() / rots.len() as f64,
        median_rot_deg: median(&rots),
        mean_tran_deg: trans.iter().sum::<f64>() / trans.len() as f64,
        median_tran_deg: median(&trans),
        per_pair,
        degenerate_predictions: 0,
    })
}
