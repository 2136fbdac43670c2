//! The assembled pose network: configuration, parameter allocation, forward
//! pass, checkpoint container, and dataset evaluation.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::datagen::{resample_matches, MatchSet};
use crate::diffcore::{BoundParams, MlpParams, ParamSet, Tape, Tensor, Var};
use crate::dualgraph::{run_dual_graph, AblationFlags, GraphState, LayerParams};
use crate::encoders::{build_nodeset, encode_lse, encode_pe, encode_sce, InitialFeatures, NodeSet};
use crate::error::{CoreError, Result};
use crate::geometry::{demon_rot_error, demon_tran_error, ScaleMode};
use crate::posehead::{derive_pose, fuse_features, predict, uncertainty_loss, FusionParams,
    PosePrediction};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Feature width D.
    pub width: usize,
    /// Number of dual-graph layers.
    pub depth: usize,
    /// Attention heads per layer.
    pub heads: usize,
    pub flags: AblationFlags,
    pub scale_mode: ScaleMode,
    /// Resampling targets applied to every input match set.
    pub n_points: usize,
    pub n_lines: usize,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            width: 128,
            depth: 3,
            heads: 4,
            flags: AblationFlags::FULL,
            scale_mode: ScaleMode::Unit,
            n_points: 384,
            n_lines: 192,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.flags.validate()?;
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(CoreError::Config(format!(
                "heads {} must divide width {}",
                self.heads, self.width
            )));
        }
        if self.n_points == 0 {
            return Err(CoreError::Config("n_points must be positive".into()));
        }
        if self.flags.include_lines && self.n_lines == 0 {
            return Err(CoreError::Config(
                "n_lines must be positive when line nodes are enabled".into(),
            ));
        }
        Ok(())
    }

    fn resample_lines(&self) -> usize {
        if self.flags.include_lines {
            self.n_lines
        } else {
            0
        }
    }
}

struct Architecture {
    coord_encoder: MlpParams,
    line_encoder: Option<MlpParams>,
    pixel_encoder: Option<MlpParams>,
    layers: Vec<LayerParams>,
    fusion: FusionParams,
}

/// The trainable model: a configuration plus named parameters.
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    arch: Architecture,
}

pub struct ForwardOutput {
    pub bound: BoundParams,
    pub state: GraphState,
    pub mu: Var,
    pub log_var: Var,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = Rng::new(seed ^ 0x0D06_F00D_BAAD_5EED);
        let d = config.width;
        let coord_encoder = MlpParams::alloc(&mut params, "enc.coord", 4, d, d, &mut rng);
        let line_encoder = config
            .flags
            .line_passing
            .then(|| MlpParams::alloc(&mut params, "enc.line", 8, d, d, &mut rng));
        let pixel_encoder = config
            .flags
            .visual_graph
            .then(|| MlpParams::alloc(&mut params, "enc.pixel", 6, d, d, &mut rng));
        let mut layers = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            layers.push(LayerParams::alloc(
                &mut params,
                &format!("layer{l}"),
                d,
                config.heads,
                &config.flags,
                &mut rng,
            )?);
        }
        let fusion = FusionParams::alloc(&mut params, "fusion", d, &config.flags, &mut rng);
        Ok(Model {
            config,
            params,
            arch: Architecture {
                coord_encoder,
                line_encoder,
                pixel_encoder,
                layers,
                fusion,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Resample to the configured counts and build the node set.
    pub fn prepare(&self, m: &MatchSet, resample_seed: u64) -> Result<(MatchSet, NodeSet)> {
        self.prepare_with_counts(m, self.config.n_points, self.config.resample_lines(), resample_seed)
    }

    pub fn prepare_with_counts(
        &self,
        m: &MatchSet,
        n_points: usize,
        n_lines: usize,
        resample_seed: u64,
    ) -> Result<(MatchSet, NodeSet)> {
        let resampled = resample_matches(m, n_points, n_lines, resample_seed)?;
        let nodes = build_nodeset(&resampled, self.config.flags.include_lines);
        Ok((resampled, nodes))
    }

    /// Forward pass on a prepared sample. Binds parameters onto the tape and
    /// returns the binding so callers can read gradients after `backward`.
    pub fn forward(&self, tape: &mut Tape, m: &MatchSet, nodes: &NodeSet) -> Result<ForwardOutput> {
        let bound = self.params.bind(tape);
        self.forward_bound(tape, &bound, m, nodes).map(|(state, mu, log_var)| ForwardOutput {
            bound,
            state,
            mu,
            log_var,
        })
    }

    fn forward_bound(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        m: &MatchSet,
        nodes: &NodeSet,
    ) -> Result<(GraphState, Var, Var)> {
        let f_geo = encode_sce(tape, bound, &self.arch.coord_encoder, nodes)?;
        let line_codes = match &self.arch.line_encoder {
            Some(enc) if self.config.flags.line_passing => {
                Some(encode_lse(tape, bound, enc, nodes)?)
            }
            _ => None,
        };
        let f_vis = match &self.arch.pixel_encoder {
            Some(enc) if self.config.flags.visual_graph => {
                Some(encode_pe(tape, bound, enc, m, nodes)?)
            }
            _ => None,
        };
        let init = InitialFeatures {
            f_geo,
            f_vis,
            line_codes,
        };
        let state = run_dual_graph(
            tape,
            bound,
            &init,
            nodes,
            &self.arch.layers,
            &self.config.flags,
        )?;
        let fused = fuse_features(tape, bound, &state, &self.arch.fusion)?;
        let (mu, log_var) = predict(tape, bound, fused, &self.arch.fusion)?;
        Ok((state, mu, log_var))
    }

    /// Training loss of one prepared sample.
    pub fn sample_loss(&self, tape: &mut Tape, m: &MatchSet, nodes: &NodeSet) -> Result<(ForwardOutput, Var)> {
        let gt = m.gt.ok_or_else(|| {
            CoreError::Config("sample has no ground-truth pose for training".into())
        })?;
        let out = self.forward(tape, m, nodes)?;
        let loss = uncertainty_loss(tape, out.mu, out.log_var, &gt, self.config.scale_mode)?;
        Ok((out, loss))
    }

    /// Inference: resample, run, and derive the normalized pose.
    pub fn predict_pose(&self, m: &MatchSet, resample_seed: u64) -> Result<PosePrediction> {
        let (resampled, nodes) = self.prepare(m, resample_seed)?;
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &resampled, &nodes)?;
        let mu_t = tape.value(out.mu);
        let lv_t = tape.value(out.log_var);
        if !mu_t.all_finite() || !lv_t.all_finite() {
            return Err(CoreError::NonFinite {
                context: "pose prediction head outputs".into(),
            });
        }
        let mut mu = [0.0; 7];
        mu.copy_from_slice(mu_t.data());
        let mut lv = [0.0; 7];
        lv.copy_from_slice(lv_t.data());
        Ok(derive_pose(&mu, &lv, self.config.scale_mode))
    }

    // ---- checkpoints ---------------------------------------------------------

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CKPT_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes()); // format version
        bytes.extend_from_slice(&(self.config.width as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.config.depth as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.config.heads as u32).to_le_bytes());
        let f = &self.config.flags;
        let flag_bits = (f.include_lines as u8)
            | (f.line_passing as u8) << 1
            | (f.visual_graph as u8) << 2
            | (f.weighted_fusion as u8) << 3;
        bytes.push(flag_bits);
        bytes.push(match self.config.scale_mode {
            ScaleMode::Unit => 0,
            ScaleMode::Metric => 1,
        });
        bytes.extend_from_slice(&(self.config.n_points as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.config.n_lines as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for id in self.params.ids() {
            let name = self.params.name(id).as_bytes();
            bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
            bytes.extend_from_slice(name);
            let value = self.params.value(id);
            bytes.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
            for &dim in value.shape() {
                bytes.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &v in value.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|e| CoreError::io(path.display().to_string(), e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Model> {
        let mut file =
            fs::File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0, path };

        let magic = cur.take(CKPT_MAGIC.len())?;
        if magic != CKPT_MAGIC {
            return Err(CoreError::Checkpoint(format!(
                "{}: not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let version = cur.u32()?;
        if version != 1 {
            return Err(CoreError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let width = cur.u32()? as usize;
        let depth = cur.u32()? as usize;
        let heads = cur.u32()? as usize;
        let flag_bits = cur.u8()?;
        let flags = AblationFlags {
            include_lines: flag_bits & 1 != 0,
            line_passing: flag_bits & 2 != 0,
            visual_graph: flag_bits & 4 != 0,
            weighted_fusion: flag_bits & 8 != 0,
        };
        let scale_mode = match cur.u8()? {
            0 => ScaleMode::Unit,
            1 => ScaleMode::Metric,
            other => {
                return Err(CoreError::Checkpoint(format!("bad scale mode byte {other}")))
            }
        };
        let n_points = cur.u32()? as usize;
        let n_lines = cur.u32()? as usize;
        let config = ModelConfig {
            width,
            depth,
            heads,
            flags,
            scale_mode,
            n_points,
            n_lines,
        };
        let mut model = Model::new(config, 0)?;
        let count = cur.u64()? as usize;
        if count != model.params.len() {
            return Err(CoreError::Checkpoint(format!(
                "parameter count {count} does not match architecture ({})",
                model.params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| CoreError::Checkpoint("parameter name is not UTF-8".into()))?;
            if name != model.params.name(id) {
                return Err(CoreError::Checkpoint(format!(
                    "parameter order mismatch: {} vs {}",
                    name,
                    model.params.name(id)
                )));
            }
            let ndim = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cur.u32()? as usize);
            }
            if shape != model.params.value(id).shape() {
                return Err(CoreError::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    shape,
                    model.params.value(id).shape()
                )));
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(cur.f32()? as f64);
            }
            *model.params.value_mut(id) = Tensor::from_vec(shape, data)?;
        }
        if cur.pos != bytes.len() {
            return Err(CoreError::Checkpoint(format!(
                "{} trailing bytes after parameters",
                bytes.len() - cur.pos
            )));
        }
        Ok(model)
    }

    /// Downcast every parameter to f32 storage precision in place, making
    /// in-memory state identical to a saved-then-loaded checkpoint.
    pub fn round_to_storage_precision(&mut self) {
        for id in self.params.ids().collect::<Vec<_>>() {
            for v in self.params.value_mut(id).data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

const CKPT_MAGIC: &[u8] = b"PLPOSECKPT\n";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::Checkpoint(format!(
                "{}: truncated at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

// ---- evaluation ----------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairErrors {
    pub rot_deg: f64,
    pub tran_deg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub per_pair: Vec<PairErrors>,
    pub mean_rot_deg: f64,
    pub median_rot_deg: f64,
    pub mean_tran_deg: f64,
    pub median_tran_deg: f64,
    pub degenerate_predictions: usize,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Rotation/translation angular errors of the model on every pair with
/// ground truth, with mean and median aggregates. Every pair is resampled
/// with the same seed, so aggregates do not depend on dataset order.
pub fn evaluate(model: &Model, dataset: &[MatchSet], seed: u64) -> Result<EvalSummary> {
    let mut per_pair = Vec::with_capacity(dataset.len());
    let mut degenerate = 0;
    for (i, m) in dataset.iter().enumerate() {
        let gt = m
            .gt
            .ok_or_else(|| CoreError::Config(format!("pair {i} has no ground truth")))?;
        let pred = model.predict_pose(m, seed)?;
        if pred.degenerate_quaternion {
            degenerate += 1;
        }
        let rot_deg = demon_rot_error(gt.quaternion(), pred.pose.quaternion())?;
        let tran_deg = demon_tran_error(
            gt.translation_direction()?,
            pred.pose.translation_direction()?,
        )?;
        per_pair.push(PairErrors { rot_deg, tran_deg });
    }
    if per_pair.is_empty() {
        return Err(CoreError::Config("evaluation dataset is empty".into()));
    }
    let mut rots: Vec<f64> = per_pair.iter().map(|p| p.rot_deg).collect();
    let mut trans: Vec<f64> = per_pair.iter().map(|p| p.tran_deg).collect();
    // Sum in sorted order so aggregates are independent of dataset order.
    rots.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    trans.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(EvalSummary {
        mean_rot_deg: rots.iter().sum::<f64>() / rots.len() as f64,
        median_rot_deg: median(&rots),
        mean_tran_deg: trans.iter().sum::<f64>() / trans.len() as f64,
        median_tran_deg: median(&trans),
        per_pair,
        degenerate_predictions: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_scene, SceneParams};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            width: 8,
            depth: 2,
            heads: 2,
            flags: AblationFlags::FULL,
            scale_mode: ScaleMode::Unit,
            n_points: 6,
            n_lines: 2,
        }
    }

    fn dataset(n: usize) -> Vec<MatchSet> {
        (0..n)
            .map(|i| {
                generate_scene(1000 + i as u64, &SceneParams::default())
                    .unwrap()
                    .matchset
            })
            .collect()
    }

    #[test]
    fn forward_produces_seven_vectors() {
        let model = Model::new(tiny_config(), 1).unwrap();
        let data = dataset(1);
        let (m, nodes) = model.prepare(&data[0], 0).unwrap();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &m, &nodes).unwrap();
        assert_eq!(tape.value(out.mu).shape(), &[1, 7]);
        assert_eq!(tape.value(out.log_var).shape(), &[1, 7]);
        assert!(tape.value(out.mu).all_finite());
    }

    #[test]
    fn predictions_are_deterministic() {
        let model = Model::new(tiny_config(), 2).unwrap();
        let data = dataset(1);
        let a = model.predict_pose(&data[0], 5).unwrap();
        let b = model.predict_pose(&data[0], 5).unwrap();
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.log_var, b.log_var);
    }

    #[test]
    fn every_variant_constructs_and_runs() {
        for flags in AblationFlags::standard_variants() {
            let config = ModelConfig {
                flags,
                ..tiny_config()
            };
            let model = Model::new(config, 3).unwrap();
            let data = dataset(1);
            let pred = model.predict_pose(&data[0], 1).unwrap();
            assert!((pred.pose.quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let model = Model::new(tiny_config(), 4).unwrap();
        let dir = std::env::temp_dir().join("plpose_model_test");
        fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.ckpt");
        let p2 = dir.join("b.ckpt");
        model.save_checkpoint(&p1).unwrap();
        let loaded = Model::load_checkpoint(&p1).unwrap();
        loaded.save_checkpoint(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn checkpoint_preserves_eval_metrics_bitwise() {
        let mut model = Model::new(tiny_config(), 5).unwrap();
        // Round in-memory params to storage precision so metrics before and
        // after the disk trip are comparable bit-for-bit.
        model.round_to_storage_precision();
        let data = dataset(3);
        let before = evaluate(&model, &data, 7).unwrap();
        let dir = std::env::temp_dir().join("plpose_model_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("eval.ckpt");
        model.save_checkpoint(&path).unwrap();
        let loaded = Model::load_checkpoint(&path).unwrap();
        let after = evaluate(&loaded, &data, 7).unwrap();
        for (x, y) in before.per_pair.iter().zip(&after.per_pair) {
            assert_eq!(x.rot_deg.to_bits(), y.rot_deg.to_bits());
            assert_eq!(x.tran_deg.to_bits(), y.tran_deg.to_bits());
        }
    }

    #[test]
    fn corrupted_checkpoint_rejected() {
        let dir = std::env::temp_dir().join("plpose_model_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(Model::load_checkpoint(&path).is_err());
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let model = Model::new(tiny_config(), 6).unwrap();
        let dir = std::env::temp_dir().join("plpose_model_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.ckpt");
        model.save_checkpoint(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(Model::load_checkpoint(&path).is_err());
    }

    #[test]
    fn evaluation_aggregates_are_order_invariant() {
        let model = Model::new(tiny_config(), 8).unwrap();
        let data = dataset(5);
        let forward = evaluate(&model, &data, 3).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let backward = evaluate(&model, &rev, 3).unwrap();
        assert_eq!(forward.median_rot_deg.to_bits(), backward.median_rot_deg.to_bits());
        assert_eq!(forward.median_tran_deg.to_bits(), backward.median_tran_deg.to_bits());
        for (a, b) in forward.per_pair.iter().zip(backward.per_pair.iter().rev()) {
            assert_eq!(a.rot_deg.to_bits(), b.rot_deg.to_bits());
        }
    }

    #[test]
    fn missing_ground_truth_fails_eval() {
        let model = Model::new(tiny_config(), 9).unwrap();
        let mut data = dataset(1);
        data[0].gt = None;
        assert!(evaluate(&model, &data, 0).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = tiny_config();
        c.heads = 3; // does not divide 8
        assert!(Model::new(c, 0).is_err());
        let mut c2 = tiny_config();
        c2.n_points = 0;
        assert!(Model::new(c2, 0).is_err());
    }
}
