//! Stacked dual-graph layers: a geometric graph updated by intra-graph
//! self-attention and line-endpoint message passing, and a visual graph
//! updated by self-attention plus cross-attention queried by the geometric
//! features of the same layer.

use crate::diffcore::{
    xavier_matrix, BoundParams, LinearParams, MlpParams, ParamId, ParamSet, Tape, Var,
};
use crate::encoders::{InitialFeatures, NodeSet};
use crate::error::{CoreError, Result};
use crate::rng::Rng;

/// Which architectural pieces are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationFlags {
    /// Include line-segment endpoints as graph nodes.
    pub include_lines: bool,
    /// Line endpoint message passing with the line structure codes.
    pub line_passing: bool,
    /// The visual graph with geometry-guided cross-attention.
    pub visual_graph: bool,
    /// Sigmoid-weighted pooling in the fusion stage.
    pub weighted_fusion: bool,
}

impl AblationFlags {
    pub const BASELINE: AblationFlags = AblationFlags {
        include_lines: false,
        line_passing: false,
        visual_graph: false,
        weighted_fusion: false,
    };

    pub const FULL: AblationFlags = AblationFlags {
        include_lines: true,
        line_passing: true,
        visual_graph: true,
        weighted_fusion: true,
    };

    pub fn validate(&self) -> Result<()> {
        if self.line_passing && !self.include_lines {
            return Err(CoreError::Config(
                "line message passing requires line nodes".into(),
            ));
        }
        Ok(())
    }

    pub fn variant_name(&self) -> &'static str {
        match (
            self.include_lines,
            self.line_passing,
            self.visual_graph,
            self.weighted_fusion,
        ) {
            (false, false, false, false) => "baseline",
            (true, false, false, false) => "lines",
            (true, true, false, false) => "line-passing",
            (false, false, true, false) => "visual",
            (false, false, true, true) => "visual-weighted",
            (true, true, true, true) => "full",
            _ => "custom",
        }
    }

    pub fn parse(name: &str) -> Option<AblationFlags> {
        let mut f = AblationFlags::BASELINE;
        match name {
            "baseline" => {}
            "lines" => f.include_lines = true,
            "line-passing" => {
                f.include_lines = true;
                f.line_passing = true;
            }
            "visual" => f.visual_graph = true,
            "visual-weighted" => {
                f.visual_graph = true;
                f.weighted_fusion = true;
            }
            "full" => f = AblationFlags::FULL,
            _ => return None,
        }
        Some(f)
    }

    /// The six standard variants, weakest first.
    pub fn standard_variants() -> [AblationFlags; 6] {
        [
            AblationFlags::parse("baseline").unwrap(),
            AblationFlags::parse("lines").unwrap(),
            AblationFlags::parse("line-passing").unwrap(),
            AblationFlags::parse("visual").unwrap(),
            AblationFlags::parse("visual-weighted").unwrap(),
            AblationFlags::parse("full").unwrap(),
        ]
    }
}

/// Multi-head attention projections: per-head Q/K/V (no bias) plus a biased
/// output projection over the concatenated heads.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    query: Vec<ParamId>,
    key: Vec<ParamId>,
    value: Vec<ParamId>,
    output: LinearParams,
    head_width: usize,
}

impl AttentionParams {
    pub fn alloc(
        params: &mut ParamSet,
        prefix: &str,
        width: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<AttentionParams> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(CoreError::Config(format!(
                "head count {heads} must divide feature width {width}"
            )));
        }
        let head_width = width / heads;
        let mut mk = |role: &str| -> Vec<ParamId> {
            (0..heads)
                .map(|h| {
                    params.alloc(
                        format!("{prefix}.{role}{h}"),
                        xavier_matrix(width, head_width, rng),
                    )
                })
                .collect()
        };
        let query = mk("q");
        let key = mk("k");
        let value = mk("v");
        let output = LinearParams::alloc(params, &format!("{prefix}.out"), width, width, rng);
        Ok(AttentionParams {
            query,
            key,
            value,
            output,
            head_width,
        })
    }

    pub fn heads(&self) -> usize {
        self.query.len()
    }

    /// Per-head attention probability matrices softmax(Q K^T / sqrt(D_k)).
    pub fn attention_probs(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        queries_from: Var,
        keys_from: Var,
    ) -> Result<Vec<Var>> {
        let scale = 1.0 / (self.head_width as f64).sqrt();
        let mut probs = Vec::with_capacity(self.heads());
        for h in 0..self.heads() {
            let q = tape.matmul(queries_from, bound.var(self.query[h]))?;
            let k = tape.matmul(keys_from, bound.var(self.key[h]))?;
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt)?;
            let scaled = tape.mul_scalar(scores, scale);
            probs.push(tape.softmax_rows(scaled));
        }
        Ok(probs)
    }

    /// Aggregated multi-head message: heads concatenated, then projected.
    pub fn apply(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        queries_from: Var,
        keys_values_from: Var,
    ) -> Result<Var> {
        let probs = self.attention_probs(tape, bound, queries_from, keys_values_from)?;
        let mut head_messages = Vec::with_capacity(self.heads());
        for (h, a) in probs.into_iter().enumerate() {
            let v = tape.matmul(keys_values_from, bound.var(self.value[h]))?;
            head_messages.push(tape.matmul(a, v)?);
        }
        let concat = tape.concat_cols(&head_messages)?;
        self.output.apply(tape, bound, concat)
    }
}

/// Parameters of one dual-graph layer; optional parts follow the ablation.
#[derive(Clone, Debug)]
pub struct LayerParams {
    pub geo_attention: AttentionParams,
    pub geo_update: MlpParams,
    pub line_update: Option<MlpParams>,
    pub vis_attention: Option<AttentionParams>,
    pub vis_update: Option<MlpParams>,
    pub cross_attention: Option<AttentionParams>,
    pub guide_update: Option<MlpParams>,
}

impl LayerParams {
    pub fn alloc(
        params: &mut ParamSet,
        prefix: &str,
        width: usize,
        heads: usize,
        flags: &AblationFlags,
        rng: &mut Rng,
    ) -> Result<LayerParams> {
        let geo_attention =
            AttentionParams::alloc(params, &format!("{prefix}.geo.attn"), width, heads, rng)?;
        let geo_update = MlpParams::alloc(
            params,
            &format!("{prefix}.geo.update"),
            2 * width,
            width,
            width,
            rng,
        );
        let line_update = flags.line_passing.then(|| {
            MlpParams::alloc(
                params,
                &format!("{prefix}.line.update"),
                3 * width,
                width,
                width,
                rng,
            )
        });
        let (vis_attention, vis_update, cross_attention, guide_update) = if flags.visual_graph {
            (
                Some(AttentionParams::alloc(
                    params,
                    &format!("{prefix}.vis.attn"),
                    width,
                    heads,
                    rng,
                )?),
                Some(MlpParams::alloc(
                    params,
                    &format!("{prefix}.vis.update"),
                    2 * width,
                    width,
                    width,
                    rng,
                )),
                Some(AttentionParams::alloc(
                    params,
                    &format!("{prefix}.cross.attn"),
                    width,
                    heads,
                    rng,
                )?),
                Some(MlpParams::alloc(
                    params,
                    &format!("{prefix}.cross.update"),
                    2 * width,
                    width,
                    width,
                    rng,
                )),
            )
        } else {
            (None, None, None, None)
        };
        Ok(LayerParams {
            geo_attention,
            geo_update,
            line_update,
            vis_attention,
            vis_update,
            cross_attention,
            guide_update,
        })
    }
}

/// Features of both graphs after some number of layers.
#[derive(Clone, Copy, Debug)]
pub struct GraphState {
    pub f_geo: Var,
    pub f_vis: Option<Var>,
    pub layer: usize,
}

/// Residual self-attention update: f + F([f || message(f)]).
fn self_attention_update(
    tape: &mut Tape,
    bound: &BoundParams,
    attention: &AttentionParams,
    update: &MlpParams,
    features: Var,
) -> Result<Var> {
    let message = attention.apply(tape, bound, features, features)?;
    let cat = tape.concat_cols(&[features, message])?;
    let delta = update.apply(tape, bound, cat)?;
    tape.add(features, delta)
}

/// Line endpoint message passing. Every endpoint has exactly one neighbor on
/// its endpoint edge (its partner), so the neighbor mean is the single term
/// F_L([self || partner || line code]). Point rows pass through untouched.
fn line_endpoint_update(
    tape: &mut Tape,
    bound: &BoundParams,
    update: &MlpParams,
    features: Var,
    line_codes: Var,
    nodes: &NodeSet,
) -> Result<Var> {
    let endpoints = nodes.endpoint_indices();
    if endpoints.is_empty() {
        return Ok(features);
    }
    let partners = nodes.partner_indices();
    let line_ids = nodes.endpoint_line_ids();
    let self_rows = tape.gather_rows(features, &endpoints);
    let partner_rows = tape.gather_rows(features, &partners);
    let code_rows = tape.gather_rows(line_codes, &line_ids);
    let cat = tape.concat_cols(&[self_rows, partner_rows, code_rows])?;
    let delta = update.apply(tape, bound, cat)?;
    let new_rows = tape.add(self_rows, delta)?;
    tape.row_update(features, new_rows, &endpoints)
}

/// Cross-attention from the geometric graph into the visual graph:
/// queries from this layer's geometric output, keys/values from the visual
/// features, applied as an additive residual through the guide MLP.
fn geometry_guided_update(
    tape: &mut Tape,
    bound: &BoundParams,
    attention: &AttentionParams,
    update: &MlpParams,
    f_geo: Var,
    f_vis: Var,
) -> Result<Var> {
    let message = attention.apply(tape, bound, f_geo, f_vis)?;
    let cat = tape.concat_cols(&[f_vis, message])?;
    let delta = update.apply(tape, bound, cat)?;
    tape.add(f_vis, delta)
}

/// Run the full stack. Layer order: geometric self-attention, line endpoint
/// update, visual self-attention, geometry-guided cross-attention.
pub fn run_dual_graph(
    tape: &mut Tape,
    bound: &BoundParams,
    init: &InitialFeatures,
    nodes: &NodeSet,
    layers: &[LayerParams],
    flags: &AblationFlags,
) -> Result<GraphState> {
    flags.validate()?;
    if flags.visual_graph && init.f_vis.is_none() {
        return Err(CoreError::Config(
            "visual graph enabled but no visual features provided".into(),
        ));
    }
    if flags.line_passing && init.line_codes.is_none() {
        return Err(CoreError::Config(
            "line message passing enabled but no line codes provided".into(),
        ));
    }
    let mut f_geo = init.f_geo;
    let mut f_vis = if flags.visual_graph { init.f_vis } else { None };

    for (layer_index, layer) in layers.iter().enumerate() {
        f_geo = self_attention_update(
            tape,
            bound,
            &layer.geo_attention,
            &layer.geo_update,
            f_geo,
        )?;
        if flags.line_passing {
            let update = layer.line_update.as_ref().ok_or_else(|| {
                CoreError::Config(format!("layer {layer_index} lacks line update params"))
            })?;
            f_geo = line_endpoint_update(
                tape,
                bound,
                update,
                f_geo,
                init.line_codes.expect("validated above"),
                nodes,
            )?;
        }
        if flags.visual_graph {
            let (attn, upd, cross, guide) = (
                layer.vis_attention.as_ref(),
                layer.vis_update.as_ref(),
                layer.cross_attention.as_ref(),
                layer.guide_update.as_ref(),
            );
            let (Some(attn), Some(upd), Some(cross), Some(guide)) = (attn, upd, cross, guide)
            else {
                return Err(CoreError::Config(format!(
                    "layer {layer_index} lacks visual graph params"
                )));
            };
            let vis = f_vis.expect("validated above");
            let vis = self_attention_update(tape, bound, attn, upd, vis)?;
            let vis = geometry_guided_update(tape, bound, cross, guide, f_geo, vis)?;
            f_vis = Some(vis);
        }
    }
    Ok(GraphState {
        f_geo,
        f_vis,
        layer: layers.len(),
    })
}
