//! Batched Adam training with deterministic seeding and sample-level
//! parallelism. Per-sample gradients are computed on independent tapes and
//! merged in slot order by a single reducer, so results do not depend on the
//! thread count.

use crate::datagen::MatchSet;
use crate::diffcore::{AdamConfig, AdamState, Tape, Tensor};
use crate::error::{CoreError, Result};
use crate::model::{evaluate, EvalSummary, Model};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Evaluate every this many steps; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Worker threads for the batch; 0 picks the available parallelism.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 16,
            steps: 1000,
            seed: 0,
            eval_every: 0,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(CoreError::Config(format!(
                "bad learning rate {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    fn worker_threads(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        }
    }
}

/// One evaluation snapshot in the metric history.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub mean_loss: f64,
    pub summary: EvalSummary,
}

pub struct Trainer {
    model: Model,
    adam: AdamState,
    config: TrainConfig,
    history: Vec<EvalRecord>,
    step: usize,
    degenerate_seen: usize,
}

fn batch_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(step as u64)
        .wrapping_mul(0xBF58476D1CE4E5B9)
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let adam = AdamState::new(
            model.params(),
            AdamConfig {
                learning_rate: config.learning_rate,
                ..AdamConfig::default()
            },
        );
        Ok(Trainer {
            model,
            adam,
            config,
            history: Vec::new(),
            step: 0,
            degenerate_seen: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn history(&self) -> &[EvalRecord] {
        &self.history
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// One optimizer step over a seeded batch; returns the mean batch loss.
    pub fn step(&mut self, dataset: &[MatchSet]) -> Result<f64> {
        if dataset.is_empty() {
            return Err(CoreError::Config("training dataset is empty".into()));
        }
        let seed = batch_seed(self.config.seed, self.step);
        let mut rng = Rng::new(seed);
        let batch: Vec<usize> = (0..self.config.batch_size)
            .map(|_| rng.index(dataset.len()))
            .collect();
        let resample_seeds: Vec<u64> = (0..batch.len()).map(|_| rng.u64()).collect();

        let model = &self.model;
        let jobs: Vec<(usize, u64)> = batch.iter().copied().zip(resample_seeds).collect();
        let threads = self.config.worker_threads().min(jobs.len()).max(1);

        // Per-sample forward/backward on worker threads; merge below in
        // deterministic slot order.
        type SampleResult = Result<(Vec<Tensor>, f64)>;
        let results: Vec<SampleResult> = if threads == 1 {
            jobs.iter()
                .map(|&(idx, rs)| sample_gradients(model, &dataset[idx], rs))
                .collect()
        } else {
            let mut slots: Vec<Option<SampleResult>> = (0..jobs.len()).map(|_| None).collect();
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for (chunk_id, chunk) in jobs.chunks(jobs.len().div_ceil(threads)).enumerate() {
                    let chunk = chunk.to_vec();
                    handles.push((
                        chunk_id,
                        chunk.len(),
                        scope.spawn(move || {
                            chunk
                                .into_iter()
                                .map(|(idx, rs)| sample_gradients(model, &dataset[idx], rs))
                                .collect::<Vec<_>>()
                        }),
                    ));
                }
                let chunk_size = jobs.len().div_ceil(threads);
                for (chunk_id, len, handle) in handles {
                    let outs = handle.join().expect("worker panicked");
                    for (k, out) in outs.into_iter().enumerate() {
                        debug_assert!(k < len);
                        slots[chunk_id * chunk_size + k] = Some(out);
                    }
                }
            });
            slots.into_iter().map(|s| s.expect("slot filled")).collect()
        };

        let mut total_loss = 0.0;
        let mut grad_sum: Option<Vec<Tensor>> = None;
        for result in results {
            let (grads, loss) = result?;
            total_loss += loss;
            match &mut grad_sum {
                None => grad_sum = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let mean_loss = total_loss / self.config.batch_size as f64;
        if !mean_loss.is_finite() {
            return Err(CoreError::Diverged {
                step: self.step,
                batch_seed: seed,
            });
        }
        let scale = 1.0 / self.config.batch_size as f64;
        let mut grads = grad_sum.expect("batch nonempty");
        for g in &mut grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
        self.adam.step(self.model.params_mut(), &grads)?;
        self.step += 1;
        Ok(mean_loss)
    }

    /// Run the configured number of steps, recording the metric history.
    pub fn run(&mut self, dataset: &[MatchSet], eval_set: &[MatchSet]) -> Result<()> {
        let mut window_loss = 0.0;
        let mut window = 0usize;
        for _ in 0..self.config.steps {
            let loss = self.step(dataset)?;
            window_loss += loss;
            window += 1;
            let due = self.config.eval_every > 0 && self.step.is_multiple_of(self.config.eval_every);
            if due {
                self.record_eval(eval_set, window_loss / window as f64)?;
                window_loss = 0.0;
                window = 0;
            }
        }
        if window > 0 || self.history.is_empty() {
            let mean = if window > 0 {
                window_loss / window as f64
            } else {
                f64::NAN
            };
            self.record_eval(eval_set, mean)?;
        }
        Ok(())
    }

    fn record_eval(&mut self, eval_set: &[MatchSet], mean_loss: f64) -> Result<()> {
        let summary = evaluate(&self.model, eval_set, self.config.seed)?;
        if summary.degenerate_predictions > self.degenerate_seen {
            self.degenerate_seen = summary.degenerate_predictions;
            eprintln!(
                "warning: {} degenerate quaternion predictions normalized to identity",
                summary.degenerate_predictions
            );
        }
        self.history.push(EvalRecord {
            step: self.step,
            mean_loss,
            summary,
        });
        Ok(())
    }
}

/// Gradients and loss of a single sample on its own tape.
fn sample_gradients(model: &Model, m: &MatchSet, resample_seed: u64) -> Result<(Vec<Tensor>, f64)> {
    let (resampled, nodes) = model.prepare(m, resample_seed)?;
    let mut tape = Tape::new();
    let (out, loss) = model.sample_loss(&mut tape, &resampled, &nodes)?;
    let loss_value = tape.value(loss).scalar_value();
    tape.backward(loss)?;
    let grads = out.bound.collect_grads(&tape, model.params());
    Ok((grads, loss_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_scene, SceneParams};
    use crate::dualgraph::AblationFlags;
    use crate::geometry::ScaleMode;
    use crate::model::ModelConfig;

    fn tiny_model(seed: u64) -> Model {
        Model::new(
            ModelConfig {
                width: 8,
                depth: 1,
                heads: 2,
                flags: AblationFlags::FULL,
                scale_mode: ScaleMode::Unit,
                n_points: 6,
                n_lines: 2,
            },
            seed,
        )
        .unwrap()
    }

    fn dataset(n: usize, base_seed: u64) -> Vec<MatchSet> {
        (0..n)
            .map(|i| {
                generate_scene(base_seed + i as u64, &SceneParams::default())
                    .unwrap()
                    .matchset
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let model = tiny_model(1);
        let before: Vec<Tensor> = model
            .params()
            .ids()
            .map(|id| model.params().value(id).clone())
            .collect();
        let mut trainer = Trainer::new(
            model,
            TrainConfig {
                learning_rate: 0.0,
                batch_size: 4,
                steps: 1,
                seed: 3,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let data = dataset(4, 100);
        trainer.step(&data).unwrap();
        for (id, b) in trainer.model().params().ids().zip(&before) {
            assert_eq!(trainer.model().params().value(id), b);
        }
    }

    #[test]
    fn loss_decreases_on_small_overfit() {
        let model = tiny_model(2);
        let mut trainer = Trainer::new(
            model,
            TrainConfig {
                learning_rate: 3e-3,
                batch_size: 4,
                steps: 0,
                seed: 4,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let data = dataset(4, 200);
        let first = trainer.step(&data).unwrap();
        let mut last = first;
        for _ in 0..60 {
            last = trainer.step(&data).unwrap();
        }
        assert!(
            last < first,
            "loss did not decrease: first {first}, last {last}"
        );
    }

    #[test]
    fn training_is_deterministic_and_thread_invariant() {
        let data = dataset(6, 300);
        let run = |threads: usize| -> (f64, Vec<f64>) {
            let model = tiny_model(3);
            let mut trainer = Trainer::new(
                model,
                TrainConfig {
                    learning_rate: 1e-3,
                    batch_size: 5,
                    steps: 0,
                    seed: 9,
                    threads,
                    ..TrainConfig::default()
                },
            )
            .unwrap();
            let mut losses = Vec::new();
            for _ in 0..5 {
                losses.push(trainer.step(&data).unwrap());
            }
            let id = trainer.model().params().ids().next().unwrap();
            (trainer.model().params().value(id).data()[0], losses)
        };
        let (p1, l1) = run(1);
        let (p2, l2) = run(4);
        assert_eq!(p1.to_bits(), p2.to_bits());
        for (a, b) in l1.iter().zip(&l2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn metric_history_is_reproducible() {
        let data = dataset(5, 400);
        let eval = dataset(3, 500);
        let run = || {
            let model = tiny_model(4);
            let mut trainer = Trainer::new(
                model,
                TrainConfig {
                    learning_rate: 1e-3,
                    batch_size: 3,
                    steps: 6,
                    seed: 11,
                    eval_every: 2,
                    ..TrainConfig::default()
                },
            )
            .unwrap();
            trainer.run(&data, &eval).unwrap();
            trainer
                .history()
                .iter()
                .map(|r| (r.step, r.summary.median_rot_deg.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut trainer = Trainer::new(tiny_model(5), TrainConfig::default()).unwrap();
        assert!(trainer.step(&[]).is_err());
    }

    #[test]
    fn divergence_reports_batch_seed() {
        let mut model = tiny_model(6);
        // Poison the head bias so the loss goes non-finite (earlier layers
        // would be masked by relu, which maps NaN to zero).
        let id = model.params().ids().last().unwrap();
        model.params_mut().value_mut(id).data_mut()[0] = f64::NAN;
        let mut trainer = Trainer::new(
            model,
            TrainConfig {
                batch_size: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let data = dataset(2, 600);
        match trainer.step(&data) {
            Err(CoreError::Diverged { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
