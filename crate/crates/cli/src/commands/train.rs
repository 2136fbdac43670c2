use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use plpose_core::model::Model;
use plpose_core::train::Trainer;

use crate::config::{load_config, snapshot, Overrides, Settings};
use crate::dataset::load_dataset;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Config file (key = value); flags override file values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Training dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out evaluation directory; defaults to a slice of the train set
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Output directory for checkpoint and run manifest
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut settings = match &args.config {
        Some(path) => load_config(path)?,
        None => Settings::default(),
    };
    args.overrides.apply(&mut settings)?;

    let dataset = load_dataset(&args.data)?;
    let eval_set = match &args.eval_data {
        Some(dir) => load_dataset(dir)?,
        None => dataset[..dataset.len().min(64)].to_vec(),
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let start = Instant::now();
    let model = Model::new(settings.model, settings.train.seed)?;
    let mut trainer = Trainer::new(model, settings.train.clone())?;
    trainer.run(&dataset, &eval_set)?;

    let checkpoint_path = args.out.join("checkpoint.ckpt");
    trainer.model().save_checkpoint(&checkpoint_path)?;

    let mut manifest = String::from("plpose run manifest v1\n");
    let _ = writeln!(manifest, "revision {}", source_revision());
    manifest.push_str(&snapshot(&settings));
    let _ = writeln!(manifest, "train_pairs {}", dataset.len());
    let _ = writeln!(manifest, "eval_pairs {}", eval_set.len());
    for record in trainer.history() {
        let s = &record.summary;
        let _ = writeln!(
            manifest,
            "history step={} loss={} mean_rot={} median_rot={} mean_tran={} median_tran={} degenerate={}",
            record.step,
            record.mean_loss,
            s.mean_rot_deg,
            s.median_rot_deg,
            s.mean_tran_deg,
            s.median_tran_deg,
            s.degenerate_predictions
        );
    }
    let _ = writeln!(manifest, "checkpoint {}", checkpoint_path.display());
    let _ = writeln!(manifest, "wall_clock_s {:.3}", start.elapsed().as_secs_f64());
    std::fs::write(args.out.join("run_manifest.txt"), manifest)
        .with_context(|| format!("writing manifest in {}", args.out.display()))?;

    if let Some(last) = trainer.history().last() {
        println!(
            "train: {} steps, final loss {:.4}, median rot {:.3} deg, median tran {:.3} deg -> {}",
            trainer.steps_done(),
            last.mean_loss,
            last.summary.median_rot_deg,
            last.summary.median_tran_deg,
            checkpoint_path.display()
        );
    }
    Ok(())
}

fn source_revision() -> String {
    let from_git = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    match from_git {
        Some(rev) => format!("{} (v{})", rev, env!("CARGO_PKG_VERSION")),
        None => format!("unknown (v{})", env!("CARGO_PKG_VERSION")),
    }
}
