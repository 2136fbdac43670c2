//! Feature-weighted fusion of the two graphs, the pose and log-variance
//! heads, and the heteroscedastic regression loss.

use crate::diffcore::{BoundParams, LinearParams, MlpParams, ParamSet, Tape, Var};
use crate::dualgraph::{AblationFlags, GraphState};
use crate::error::{CoreError, Result};
use crate::geometry::{Quat, RelativePose, ScaleMode};
use crate::rng::Rng;

/// log-variance clamp inside the loss, preventing runaway confidence.
///
/// The bound also caps the inverse-variance gradient amplification e^{-s} on
/// well-fit components; a loose bound lets components that converge early
/// starve the rest of the shared trunk's gradient signal.
pub const LOG_VAR_CLAMP: f64 = 4.0;

/// Fusion projections and the two output heads.
#[derive(Clone, Debug)]
pub struct FusionParams {
    /// Per-graph scalar weight projections, present under weighted fusion.
    pub geo_weight: Option<LinearParams>,
    pub vis_weight: Option<LinearParams>,
    pub pose_head: MlpParams,
    pub uncertainty_head: MlpParams,
    fused_width: usize,
}

impl FusionParams {
    pub fn alloc(
        params: &mut ParamSet,
        prefix: &str,
        width: usize,
        flags: &AblationFlags,
        rng: &mut Rng,
    ) -> FusionParams {
        let fused_width = if flags.visual_graph { 2 * width } else { width };
        let geo_weight = flags
            .weighted_fusion
            .then(|| LinearParams::alloc(params, &format!("{prefix}.geo_weight"), width, 1, rng));
        let vis_weight = (flags.weighted_fusion && flags.visual_graph)
            .then(|| LinearParams::alloc(params, &format!("{prefix}.vis_weight"), width, 1, rng));
        let pose_head = MlpParams::alloc(
            params,
            &format!("{prefix}.pose_head"),
            fused_width,
            width,
            7,
            rng,
        );
        let uncertainty_head = MlpParams::alloc(
            params,
            &format!("{prefix}.uncertainty_head"),
            fused_width,
            width,
            7,
            rng,
        );
        FusionParams {
            geo_weight,
            vis_weight,
            pose_head,
            uncertainty_head,
            fused_width,
        }
    }

    pub fn fused_width(&self) -> usize {
        self.fused_width
    }
}

/// Sigmoid-weighted normalized pooling of one feature matrix; plain column
/// mean when no weight projection is given.
fn pool(
    tape: &mut Tape,
    bound: &BoundParams,
    features: Var,
    weight: Option<&LinearParams>,
) -> Result<Var> {
    if tape.value(features).rows() == 0 {
        return Err(CoreError::ShapeMismatch {
            op: "weighted_fusion",
            detail: "empty node set".into(),
        });
    }
    match weight {
        None => Ok(tape.mean_axis0(features)),
        Some(w) => {
            let logits = w.apply(tape, bound, features)?; // [n, 1]
            let weights = tape.sigmoid(logits);
            let wt = tape.transpose(weights); // [1, n]
            let weighted_sum = tape.matmul(wt, features)?; // [1, D]
            let total = tape.sum_all(weights); // [1]
            tape.div(weighted_sum, total)
        }
    }
}

/// Pool each graph and concatenate: `[pooled_geo || pooled_vis]`.
pub fn fuse_features(
    tape: &mut Tape,
    bound: &BoundParams,
    state: &GraphState,
    fusion: &FusionParams,
) -> Result<Var> {
    let pooled_geo = pool(tape, bound, state.f_geo, fusion.geo_weight.as_ref())?;
    match state.f_vis {
        None => Ok(pooled_geo),
        Some(f_vis) => {
            let pooled_vis = pool(tape, bound, f_vis, fusion.vis_weight.as_ref())?;
            tape.concat_cols(&[pooled_geo, pooled_vis])
        }
    }
}

/// Raw head outputs: 7-vector pose mean and 7-vector log-variance.
pub fn predict(
    tape: &mut Tape,
    bound: &BoundParams,
    fused: Var,
    fusion: &FusionParams,
) -> Result<(Var, Var)> {
    if tape.value(fused).cols() != fusion.fused_width {
        return Err(CoreError::ShapeMismatch {
            op: "predict",
            detail: format!(
                "fused width {} does not match heads ({})",
                tape.value(fused).cols(),
                fusion.fused_width
            ),
        });
    }
    let mu = fusion.pose_head.apply(tape, bound, fused)?;
    let log_var = fusion.uncertainty_head.apply(tape, bound, fused)?;
    Ok((mu, log_var))
}

/// A pose prediction: raw head outputs plus the derived normalized pose.
#[derive(Clone, Debug)]
pub struct PosePrediction {
    pub mu: [f64; 7],
    pub log_var: [f64; 7],
    pub pose: RelativePose,
    /// Set when the raw quaternion was too small to normalize and the
    /// identity fallback was used; transient in early training.
    pub degenerate_quaternion: bool,
}

/// Normalize raw head outputs into a valid pose, falling back to the
/// identity rotation (and a fixed direction in unit mode) when degenerate.
pub fn derive_pose(mu: &[f64; 7], log_var: &[f64; 7], scale_mode: ScaleMode) -> PosePrediction {
    let q_raw = Quat::new(mu[0], mu[1], mu[2], mu[3]);
    let (q, mut degenerate) = match q_raw.normalized() {
        Ok(q) => (q.canonicalized(), false),
        Err(_) => (Quat::IDENTITY, true),
    };
    let t_raw = [mu[4], mu[5], mu[6]];
    let t = match scale_mode {
        ScaleMode::Metric => t_raw,
        ScaleMode::Unit => {
            let n = (t_raw[0] * t_raw[0] + t_raw[1] * t_raw[1] + t_raw[2] * t_raw[2]).sqrt();
            if n < 1e-12 {
                degenerate = true;
                [0.0, 0.0, 1.0]
            } else {
                [t_raw[0] / n, t_raw[1] / n, t_raw[2] / n]
            }
        }
    };
    let pose = RelativePose::new(q, t, scale_mode).expect("inputs sanitized above");
    PosePrediction {
        mu: *mu,
        log_var: *log_var,
        pose,
        degenerate_quaternion: degenerate,
    }
}

/// Ground-truth 7-vector with the quaternion sign flipped onto the
/// prediction's hemisphere, removing the double-cover discontinuity.
pub fn align_gt_to_prediction(gt: &RelativePose, mu: &[f64; 7]) -> [f64; 7] {
    let mut v = gt.to_vector7();
    let dot = v[0] * mu[0] + v[1] * mu[1] + v[2] * mu[2] + v[3] * mu[3];
    if dot < 0.0 {
        for c in v[..4].iter_mut() {
            *c = -*c;
        }
    }
    v
}

/// Heteroscedastic regression loss, summed over the 7 pose components:
/// `sum_c [ s_c + (theta_c - mu_c)^2 * exp(-s_c) ]` with `s` clamped.
pub fn uncertainty_loss(
    tape: &mut Tape,
    mu: Var,
    log_var: Var,
    gt: &RelativePose,
    scale_mode: ScaleMode,
) -> Result<Var> {
    let gt = match scale_mode {
        ScaleMode::Metric => *gt,
        ScaleMode::Unit => gt.to_unit_scale()?,
    };
    let mu_values: &[f64] = tape.value(mu).data();
    if mu_values.len() != 7 || tape.value(log_var).numel() != 7 {
        return Err(CoreError::ShapeMismatch {
            op: "uncertainty_loss",
            detail: format!(
                "expected 7-vectors, got {:?} and {:?}",
                tape.value(mu).shape(),
                tape.value(log_var).shape()
            ),
        });
    }
    let mut mu7 = [0.0; 7];
    mu7.copy_from_slice(mu_values);
    let theta = align_gt_to_prediction(&gt, &mu7);
    let theta_const = tape.constant(crate::diffcore::Tensor::from_vec(
        vec![1, 7],
        theta.to_vec(),
    )?);

    let s = tape.clamp(log_var, -LOG_VAR_CLAMP, LOG_VAR_CLAMP);
    let residual = tape.sub(theta_const, mu)?;
    let squared = tape.mul(residual, residual)?;
    let neg_s = tape.mul_scalar(s, -1.0);
    let inv_var = tape.exp(neg_s);
    let weighted = tape.mul(squared, inv_var)?;
    let per_component = tape.add(s, weighted)?;
    Ok(tape.sum_all(per_component))
}

/// Minimizer of `s + r^2 exp(-s)` over s: `ln(r^2)`. None when the residual
/// is zero (the minimizer diverges to negative infinity).
pub fn optimal_log_variance(residual: f64) -> Option<f64> {
    let r2 = residual * residual;
    if r2 <= 0.0 {
        None
    } else {
        Some(r2.ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{finite_difference_audit, Tensor, DEFAULT_STEP, DEFAULT_TOLERANCE};

    fn rand_features(n: usize, d: usize, rng: &mut Rng) -> Tensor {
        Tensor::from_vec(
            vec![n, d],
            (0..n * d).map(|_| rng.range(-1.0, 1.0)).collect(),
        )
        .unwrap()
    }

    fn full_fusion(width: usize, seed: u64) -> (ParamSet, FusionParams) {
        let mut params = ParamSet::new();
        let mut rng = Rng::new(seed);
        let fusion = FusionParams::alloc(
            &mut params,
            "fusion",
            width,
            &AblationFlags::FULL,
            &mut rng,
        );
        (params, fusion)
    }

    #[test]
    fn single_node_pools_to_itself() {
        let (params, fusion) = full_fusion(4, 1);
        let mut rng = Rng::new(2);
        let f = rand_features(1, 4, &mut rng);
        let expect = f.data().to_vec();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let fv = tape.constant(f);
        let pooled = super::pool(&mut tape, &bound, fv, fusion.geo_weight.as_ref()).unwrap();
        for (got, want) in tape.value(pooled).data().iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_weight_projection_equals_unweighted_mean() {
        let (mut params, fusion) = full_fusion(4, 3);
        let gw = fusion.geo_weight.as_ref().unwrap();
        params.value_mut(gw.weight).data_mut().fill(0.0);
        params.value_mut(gw.bias).data_mut().fill(0.0);
        let mut rng = Rng::new(4);
        let f = rand_features(6, 4, &mut rng);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let fv = tape.constant(f);
        let weighted = super::pool(&mut tape, &bound, fv, fusion.geo_weight.as_ref()).unwrap();
        let plain = tape.mean_axis0(fv);
        for (a, b) in tape
            .value(weighted)
            .data()
            .iter()
            .zip(tape.value(plain).data())
        {
            assert_eq!(a.to_bits(), b.to_bits(), "must equal the mean bit-for-bit");
        }
    }

    #[test]
    fn weighted_pool_matches_explicit_loop_oracle() {
        let (params, fusion) = full_fusion(4, 5);
        let mut rng = Rng::new(6);
        let f = rand_features(6, 4, &mut rng);
        let gw = fusion.geo_weight.as_ref().unwrap();
        let w = params.value(gw.weight);
        let b = params.value(gw.bias).data()[0];

        // oracle
        let mut weights = Vec::new();
        for i in 0..6 {
            let logit: f64 = (0..4).map(|j| f.at2(i, j) * w.at2(j, 0)).sum::<f64>() + b;
            weights.push(1.0 / (1.0 + (-logit).exp()));
        }
        let total: f64 = weights.iter().sum();
        let expect: Vec<f64> = (0..4)
            .map(|j| (0..6).map(|i| weights[i] * f.at2(i, j)).sum::<f64>() / total)
            .collect();

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let fv = tape.constant(f);
        let pooled = super::pool(&mut tape, &bound, fv, fusion.geo_weight.as_ref()).unwrap();
        for (got, want) in tape.value(pooled).data().iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_node_set_is_an_error() {
        let (params, fusion) = full_fusion(4, 7);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let empty = tape.constant(Tensor::zeros(vec![0, 4]));
        assert!(super::pool(&mut tape, &bound, empty, fusion.geo_weight.as_ref()).is_err());
    }

    #[test]
    fn heads_output_seven_wide_vectors() {
        let (params, fusion) = full_fusion(8, 8);
        let mut rng = Rng::new(9);
        let fused = rand_features(1, 16, &mut rng);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let fv = tape.constant(fused);
        let (mu, log_var) = predict(&mut tape, &bound, fv, &fusion).unwrap();
        assert_eq!(tape.value(mu).shape(), &[1, 7]);
        assert_eq!(tape.value(log_var).shape(), &[1, 7]);
    }

    #[test]
    fn fused_width_mismatch_rejected() {
        let (params, fusion) = full_fusion(8, 10);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let wrong = tape.constant(Tensor::zeros(vec![1, 8]));
        assert!(predict(&mut tape, &bound, wrong, &fusion).is_err());
    }

    #[test]
    fn derived_pose_is_always_valid() {
        let mut rng = Rng::new(11);
        for _ in 0..100 {
            let mut mu = [0.0; 7];
            for v in mu.iter_mut() {
                *v = rng.range(-3.0, 3.0);
            }
            for mode in [ScaleMode::Unit, ScaleMode::Metric] {
                let pred = derive_pose(&mu, &[0.0; 7], mode);
                assert!((pred.pose.quaternion().norm() - 1.0).abs() <= 1e-9);
                assert!(pred.pose.quaternion().w >= 0.0);
                if mode == ScaleMode::Unit {
                    let t = pred.pose.translation();
                    let n = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
                    assert!((n - 1.0).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_head_output_falls_back_to_identity() {
        let pred = derive_pose(&[0.0; 7], &[0.0; 7], ScaleMode::Unit);
        assert!(pred.degenerate_quaternion);
        assert_eq!(pred.pose.quaternion().w, 1.0);
    }

    fn loss_value(mu: [f64; 7], log_var: [f64; 7], gt: &RelativePose) -> f64 {
        let mut tape = Tape::new();
        let muv = tape.leaf(Tensor::from_vec(vec![1, 7], mu.to_vec()).unwrap());
        let lvv = tape.leaf(Tensor::from_vec(vec![1, 7], log_var.to_vec()).unwrap());
        let loss = uncertainty_loss(&mut tape, muv, lvv, gt, ScaleMode::Unit).unwrap();
        tape.value(loss).scalar_value()
    }

    #[test]
    fn loss_is_zero_at_perfect_prediction_with_unit_variance() {
        let gt = RelativePose::new(
            Quat::from_axis_angle([0.0, 1.0, 0.0], 0.4),
            [0.6, 0.0, 0.8],
            ScaleMode::Unit,
        )
        .unwrap();
        let l = loss_value(gt.to_vector7(), [0.0; 7], &gt);
        assert!(l.abs() <= 1e-12, "loss {l}");
    }

    #[test]
    fn loss_spot_values() {
        // One component off by 1 with s = 0 adds exactly 1.
        let gt = RelativePose::new(Quat::IDENTITY, [0.0, 0.0, 1.0], ScaleMode::Unit).unwrap();
        let mut mu = gt.to_vector7();
        mu[4] += 1.0;
        let l = loss_value(mu, [0.0; 7], &gt);
        assert!((l - 1.0).abs() <= 1e-12, "loss {l}");

        // residual^2 = 2 with s = ln 2 on that component: ln 2 + 1.
        let mut mu2 = gt.to_vector7();
        mu2[4] += 2.0_f64.sqrt();
        let mut lv = [0.0; 7];
        lv[4] = 2.0_f64.ln();
        let l2 = loss_value(mu2, lv, &gt);
        assert!((l2 - (2.0_f64.ln() + 1.0)).abs() <= 1e-12, "loss {l2}");
    }

    #[test]
    fn loss_is_invariant_to_gt_quaternion_sign() {
        let q = Quat::from_axis_angle([1.0, 0.5, -0.2], 1.0);
        let gt = RelativePose::new(q, [0.0, 0.0, 1.0], ScaleMode::Unit).unwrap();
        let mut mu = gt.to_vector7();
        mu[1] += 0.3;
        // negate the prediction quaternion: alignment must flip gt back
        let mut mu_neg = mu;
        for c in mu_neg[..4].iter_mut() {
            *c = -*c;
        }
        let l = loss_value(mu, [0.1; 7], &gt);
        let l_neg = loss_value(mu_neg, [0.1; 7], &gt);
        assert!((l - l_neg).abs() <= 1e-12);
    }

    #[test]
    fn optimal_log_variance_matches_analytic_minimizer() {
        assert_eq!(optimal_log_variance(1.0), Some(0.0));
        let e = std::f64::consts::E;
        let got = optimal_log_variance(e.sqrt()).unwrap();
        assert!((got - 1.0).abs() <= 1e-12);
        assert_eq!(optimal_log_variance(0.0), None);
    }

    #[test]
    fn gradient_descent_on_log_variance_converges_to_ln_r_squared() {
        let r: f64 = 0.7;
        let target = (r * r).ln();
        let mut s: f64 = 3.0;
        for _ in 0..2000 {
            // d/ds [s + r^2 e^{-s}] = 1 - r^2 e^{-s}
            let grad = 1.0 - r * r * (-s).exp();
            s -= 0.05 * grad;
        }
        assert!((s - target).abs() <= 1e-3, "s {s} target {target}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let gt = RelativePose::new(
            Quat::from_axis_angle([0.2, 1.0, 0.1], 0.7),
            [0.3, -0.4, 0.86],
            ScaleMode::Unit,
        )
        .unwrap();
        let mut params = ParamSet::new();
        let mut rng = Rng::new(13);
        let mu_id = params.alloc("mu", rand_features(1, 7, &mut rng));
        let lv_id = params.alloc("log_var", rand_features(1, 7, &mut rng));

        let run = |p: &ParamSet| -> (Tape, Var) {
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape);
            let loss = uncertainty_loss(
                &mut tape,
                bound.var(mu_id),
                bound.var(lv_id),
                &gt,
                ScaleMode::Unit,
            )
            .unwrap();
            (tape, loss)
        };
        let (mut tape, loss) = run(&params);
        tape.backward(loss).unwrap();
        let grads: Vec<Tensor> = [mu_id, lv_id]
            .iter()
            .enumerate()
            .map(|(i, _)| tape.grad_tensor(Var(i)).unwrap())
            .collect();
        let report = finite_difference_audit(
            &mut params,
            &grads,
            |p| {
                let (t, l) = run(p);
                Ok(t.value(l).scalar_value())
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(report.passed(), "worst {}", report.worst());
    }

    #[test]
    fn fusion_is_invariant_under_node_permutation() {
        let (params, fusion) = full_fusion(4, 14);
        let mut rng = Rng::new(15);
        let f = rand_features(6, 4, &mut rng);
        let mut reversed_rows: Vec<f64> = Vec::new();
        for i in (0..6).rev() {
            for j in 0..4 {
                reversed_rows.push(f.at2(i, j));
            }
        }
        let f_rev = Tensor::from_vec(vec![6, 4], reversed_rows).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let a = tape.constant(f);
        let b = tape.constant(f_rev);
        let pa = super::pool(&mut tape, &bound, a, fusion.geo_weight.as_ref()).unwrap();
        let pb = super::pool(&mut tape, &bound, b, fusion.geo_weight.as_ref()).unwrap();
        for (x, y) in tape.value(pa).data().iter().zip(tape.value(pb).data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}
