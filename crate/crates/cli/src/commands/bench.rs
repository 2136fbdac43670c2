use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use plpose_core::bench::{benchmark_forward, BenchConfig};
use plpose_core::model::Model;
use serde::Serialize;

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Timed runs per node count
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    /// Total node counts, each divisible by 4 (half points, quarter lines)
    #[arg(long, default_value = "192,384,768", value_delimiter = ',')]
    pub nodes: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Optional JSON report file; the report always prints to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct BenchReport {
    checkpoint: String,
    runs: usize,
    results: Vec<BenchRow>,
}

#[derive(Serialize)]
struct BenchRow {
    nodes: usize,
    points: usize,
    lines: usize,
    runs: usize,
    mean_ms: f64,
    p95_ms: f64,
}

pub fn run(args: BenchArgs) -> Result<()> {
    let model = Model::load_checkpoint(&args.checkpoint)?;
    let mut node_counts = Vec::with_capacity(args.nodes.len());
    for &n in &args.nodes {
        if n == 0 || n % 4 != 0 {
            bail!("node count {n} must be a positive multiple of 4");
        }
        node_counts.push((n / 2, n / 4));
    }
    let config = BenchConfig {
        runs: args.runs,
        node_counts,
        seed: args.seed,
        ..BenchConfig::default()
    };
    let results = benchmark_forward(&model, &config)?;
    let report = BenchReport {
        checkpoint: args.checkpoint.display().to_string(),
        runs: args.runs,
        results: results
            .iter()
            .map(|r| BenchRow {
                nodes: r.n_nodes,
                points: r.n_points,
                lines: r.n_lines,
                runs: r.runs,
                mean_ms: r.mean_ms,
                p95_ms: r.p95_ms,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(path) = &args.out {
        std::fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
