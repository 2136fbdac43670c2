use anyhow::{bail, Result};
use clap::Args;
use plpose_core::datagen::{generate_scene, SceneParams};
use plpose_core::diffcore::{finite_difference_audit, Tape};
use plpose_core::dualgraph::AblationFlags;
use plpose_core::geometry::ScaleMode;
use plpose_core::model::{Model, ModelConfig};

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    /// Resampled point count of the probe sample
    #[arg(long, default_value_t = 6)]
    pub points: usize,
    /// Resampled line count of the probe sample
    #[arg(long, default_value_t = 2)]
    pub lines: usize,
    #[arg(long, default_value = "full")]
    pub variant: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Maximum accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

pub fn run(args: GradcheckArgs) -> Result<()> {
    let flags = AblationFlags::parse(&args.variant)
        .ok_or_else(|| anyhow::anyhow!("bad variant {:?}", args.variant))?;
    let config = ModelConfig {
        width: args.width,
        depth: args.depth,
        heads: args.heads,
        flags,
        scale_mode: ScaleMode::Unit,
        n_points: args.points,
        n_lines: args.lines,
    };
    let mut model = Model::new(config, args.seed)?;
    let scene = generate_scene(args.seed.wrapping_add(17), &SceneParams::default())?;
    let (sample, nodes) = model.prepare(&scene.matchset, args.seed)?;

    // Analytic gradients of the training loss.
    let mut tape = Tape::new();
    let (out, loss) = model.sample_loss(&mut tape, &sample, &nodes)?;
    tape.backward(loss)?;
    let grads = out.bound.collect_grads(&tape, model.params());

    // Probe model sharing the architecture; the audit substitutes parameter
    // values and re-evaluates the loss from scratch.
    let mut probe = Model::new(config, 0)?;
    let report = finite_difference_audit(
        model.params_mut(),
        &grads,
        |params| {
            *probe.params_mut() = params.clone();
            let mut tape = Tape::new();
            let (_, loss) = probe.sample_loss(&mut tape, &sample, &nodes)?;
            Ok(tape.value(loss).scalar_value())
        },
        args.step,
        args.tolerance,
    )?;

    println!(
        "gradcheck: model {} (width {}, depth {}, heads {}), {} parameter groups, {} elements",
        flags.variant_name(),
        args.width,
        args.depth,
        args.heads,
        report.groups.len(),
        report.groups.iter().map(|g| g.elements).sum::<usize>()
    );
    for group in &report.groups {
        let status = if group.worst_relative_error <= report.tolerance {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "group {:40} elements {:5} worst_rel {:10.3e} {}",
            group.name, group.elements, group.worst_relative_error, status
        );
    }
    println!(
        "gradcheck: worst relative error {:.3e} (tolerance {:.1e})",
        report.worst(),
        report.tolerance
    );
    if !report.passed() {
        let failing: Vec<&str> = report.failing_groups().map(|g| g.name.as_str()).collect();
        bail!(
            "gradient audit failed for {} group(s): {}",
            failing.len(),
            failing.join(", ")
        );
    }
    println!("gradcheck: PASS");
    Ok(())
}
