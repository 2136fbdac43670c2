//! Forward-latency measurement over repeated runs at fixed node counts.

use std::time::Instant;

use crate::datagen::{generate_scene, SceneParams};
use crate::error::{CoreError, Result};
use crate::model::Model;

pub const DEFAULT_RUNS: usize = 100;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    /// Timed runs per node count; at least 100 for a stable average.
    pub runs: usize,
    pub warmup: usize,
    /// (points, lines) pairs; node count is points + 2 * lines.
    pub node_counts: Vec<(usize, usize)>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> BenchConfig {
        BenchConfig {
            runs: DEFAULT_RUNS,
            warmup: 3,
            node_counts: vec![(96, 48), (192, 96), (384, 192)],
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub n_points: usize,
    pub n_lines: usize,
    pub n_nodes: usize,
    pub runs: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

/// Average and p95 forward latency per configured node count.
pub fn benchmark_forward(model: &Model, config: &BenchConfig) -> Result<Vec<BenchResult>> {
    if config.runs == 0 {
        return Err(CoreError::Config("bench needs at least one run".into()));
    }
    let mut results = Vec::with_capacity(config.node_counts.len());
    for &(n_points, n_lines) in &config.node_counts {
        let scene_params = SceneParams {
            n_points: n_points.min(512),
            n_lines: n_lines.clamp(1, 256),
            ..SceneParams::default()
        };
        let scene = generate_scene(config.seed, &scene_params)?;
        let (m, nodes) = model.prepare_with_counts(
            &scene.matchset,
            n_points,
            if model.config().flags.include_lines { n_lines } else { 0 },
            config.seed,
        )?;

        for _ in 0..config.warmup {
            let mut tape = crate::diffcore::Tape::new();
            model.forward(&mut tape, &m, &nodes)?;
        }
        let mut times_ms = Vec::with_capacity(config.runs);
        for _ in 0..config.runs {
            let start = Instant::now();
            let mut tape = crate::diffcore::Tape::new();
            let out = model.forward(&mut tape, &m, &nodes)?;
            let elapsed = start.elapsed();
            // Touch the output so the pass cannot be optimized away.
            let _ = tape.value(out.mu).data()[0];
            times_ms.push(elapsed.as_secs_f64() * 1e3);
        }
        times_ms.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
        let mean_ms = times_ms.iter().sum::<f64>() / times_ms.len() as f64;
        let p95_idx = ((times_ms.len() as f64 * 0.95).ceil() as usize)
            .clamp(1, times_ms.len())
            - 1;
        results.push(BenchResult {
            n_points,
            n_lines,
            n_nodes: n_points + 2 * n_lines,
            runs: config.runs,
            mean_ms,
            p95_ms: times_ms[p95_idx],
        });
    }
    Ok(results)
}
