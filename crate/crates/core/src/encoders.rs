//! Initialization encoders: spatial coordinates, line-segment structure, and
//! sampled pixel values, each a small shared MLP producing D-wide features.

use crate::datagen::{node_appearance_matrix, MatchSet};
use crate::diffcore::{BoundParams, MlpParams, Tape, Tensor, Var};
use crate::error::Result;

/// Node taxonomy: ordinary matched points and line-segment endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Point,
    Endpoint { line: usize, partner: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct NodeRecord {
    /// Normalized coordinates [u_r, v_r, u_t, v_t].
    pub coords: [f64; 4],
    pub kind: NodeKind,
}

#[derive(Clone, Copy, Debug)]
pub struct LineRecord {
    /// Normalized [u_r, v_r, du_r, dv_r, u_t, v_t, du_t, dv_t].
    pub features: [f64; 8],
}

/// Graph nodes in a fixed order: all point nodes first, then the two
/// endpoints of each line consecutively.
#[derive(Clone, Debug, Default)]
pub struct NodeSet {
    pub nodes: Vec<NodeRecord>,
    pub lines: Vec<LineRecord>,
    pub n_points: usize,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    /// Node indices of line endpoints, in node order.
    pub fn endpoint_indices(&self) -> Vec<usize> {
        (self.n_points..self.nodes.len()).collect()
    }

    /// For each endpoint node (in node order), its partner node index.
    pub fn partner_indices(&self) -> Vec<usize> {
        self.nodes[self.n_points..]
            .iter()
            .map(|n| match n.kind {
                NodeKind::Endpoint { partner, .. } => partner,
                NodeKind::Point => unreachable!("points are ordered before endpoints"),
            })
            .collect()
    }

    /// For each endpoint node (in node order), the owning line index.
    pub fn endpoint_line_ids(&self) -> Vec<usize> {
        self.nodes[self.n_points..]
            .iter()
            .map(|n| match n.kind {
                NodeKind::Endpoint { line, .. } => line,
                NodeKind::Point => unreachable!("points are ordered before endpoints"),
            })
            .collect()
    }
}

/// Coordinate normalization: u = (2x - W) / max(W, H), v = (2y - H) / max(W, H).
fn normalizer(image_size: (u32, u32)) -> impl Fn(f64, f64) -> [f64; 2] {
    let w = image_size.0 as f64;
    let h = image_size.1 as f64;
    let m = w.max(h);
    move |x: f64, y: f64| [(2.0 * x - w) / m, (2.0 * y - h) / m]
}

/// Build the node set of a (resampled) match set. Line endpoints are included
/// only when `include_lines` is set; the points-only variant runs without them.
pub fn build_nodeset(m: &MatchSet, include_lines: bool) -> NodeSet {
    let norm = normalizer(m.image_size);
    let scale = 2.0 / (m.image_size.0 as f64).max(m.image_size.1 as f64);

    let mut nodes = Vec::with_capacity(m.points.len() + 2 * m.lines.len());
    for p in &m.points {
        let r = norm(p.x_r, p.y_r);
        let t = norm(p.x_t, p.y_t);
        nodes.push(NodeRecord {
            coords: [r[0], r[1], t[0], t[1]],
            kind: NodeKind::Point,
        });
    }
    let mut lines = Vec::new();
    if include_lines {
        for (li, l) in m.lines.iter().enumerate() {
            let first = nodes.len();
            let rs = norm(l.r_start[0], l.r_start[1]);
            let ts = norm(l.t_start[0], l.t_start[1]);
            let re = norm(l.r_end[0], l.r_end[1]);
            let te = norm(l.t_end[0], l.t_end[1]);
            nodes.push(NodeRecord {
                coords: [rs[0], rs[1], ts[0], ts[1]],
                kind: NodeKind::Endpoint {
                    line: li,
                    partner: first + 1,
                },
            });
            nodes.push(NodeRecord {
                coords: [re[0], re[1], te[0], te[1]],
                kind: NodeKind::Endpoint {
                    line: li,
                    partner: first,
                },
            });
            lines.push(LineRecord {
                features: [
                    rs[0],
                    rs[1],
                    (l.r_end[0] - l.r_start[0]) * scale,
                    (l.r_end[1] - l.r_start[1]) * scale,
                    ts[0],
                    ts[1],
                    (l.t_end[0] - l.t_start[0]) * scale,
                    (l.t_end[1] - l.t_start[1]) * scale,
                ],
            });
        }
    }
    NodeSet {
        nodes,
        lines,
        n_points: m.points.len(),
    }
}

/// Per-node coordinate features: shared MLP over [u_r || v_r || u_t || v_t].
pub fn encode_sce(
    tape: &mut Tape,
    bound: &BoundParams,
    mlp: &MlpParams,
    nodes: &NodeSet,
) -> Result<Var> {
    let rows: Vec<f64> = nodes.nodes.iter().flat_map(|n| n.coords).collect();
    let input = tape.constant(Tensor::from_vec(vec![nodes.len(), 4], rows)?);
    mlp.apply(tape, bound, input)
}

/// Per-line structure features over endpoint coordinates and differences.
pub fn encode_lse(
    tape: &mut Tape,
    bound: &BoundParams,
    mlp: &MlpParams,
    nodes: &NodeSet,
) -> Result<Var> {
    let rows: Vec<f64> = nodes.lines.iter().flat_map(|l| l.features).collect();
    let input = tape.constant(Tensor::from_vec(vec![nodes.n_lines(), 8], rows)?);
    mlp.apply(tape, bound, input)
}

/// Per-node visual features over sampled pixel values of both views.
pub fn encode_pe(
    tape: &mut Tape,
    bound: &BoundParams,
    mlp: &MlpParams,
    m: &MatchSet,
    nodes: &NodeSet,
) -> Result<Var> {
    let all = node_appearance_matrix(m)?;
    let rows: Vec<f64> = all
        .iter()
        .take(nodes.len())
        .flat_map(|r| r.iter().copied())
        .collect();
    let input = tape.constant(Tensor::from_vec(vec![nodes.len(), 6], rows)?);
    mlp.apply(tape, bound, input)
}

/// Initial feature handles for the dual-graph stack.
#[derive(Clone, Copy, Debug)]
pub struct InitialFeatures {
    pub f_geo: Var,
    pub f_vis: Option<Var>,
    pub line_codes: Option<Var>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_scene, resample_matches, SceneParams};
    use crate::diffcore::ParamSet;
    use crate::rng::Rng;

    fn scene_matchset(seed: u64) -> MatchSet {
        generate_scene(seed, &SceneParams::default()).unwrap().matchset
    }

    #[test]
    fn standard_resample_counts_produce_768_nodes() {
        let m = scene_matchset(1);
        let r = resample_matches(&m, 384, 192, 9).unwrap();
        let nodes = build_nodeset(&r, true);
        assert_eq!(nodes.len(), 384 + 2 * 192);
        assert_eq!(nodes.n_points, 384);
        assert_eq!(nodes.n_lines(), 192);
    }

    #[test]
    fn baseline_has_only_point_nodes() {
        let m = scene_matchset(2);
        let nodes = build_nodeset(&m, false);
        assert_eq!(nodes.len(), m.points.len());
        assert!(nodes.nodes.iter().all(|n| n.kind == NodeKind::Point));
        assert_eq!(nodes.n_lines(), 0);
    }

    #[test]
    fn partner_is_an_involution_sharing_line_id() {
        let m = scene_matchset(3);
        let nodes = build_nodeset(&m, true);
        for (i, n) in nodes.nodes.iter().enumerate() {
            if let NodeKind::Endpoint { line, partner } = n.kind {
                match nodes.nodes[partner].kind {
                    NodeKind::Endpoint {
                        line: pl,
                        partner: pp,
                    } => {
                        assert_eq!(pp, i, "partner of my partner must be me");
                        assert_eq!(pl, line, "partners share a line id");
                    }
                    NodeKind::Point => panic!("partner of an endpoint is a point"),
                }
            }
        }
    }

    #[test]
    fn normalized_coordinates_are_centered() {
        let mut m = MatchSet::new((200, 100));
        m.points.push(crate::datagen::PointMatch {
            x_r: 100.0,
            y_r: 50.0,
            x_t: 0.0,
            y_t: 0.0,
        });
        let nodes = build_nodeset(&m, false);
        let c = nodes.nodes[0].coords;
        assert_eq!(c[0], 0.0);
        assert_eq!(c[1], 0.0);
        assert_eq!(c[2], -1.0);
        assert_eq!(c[3], -0.5);
    }

    #[test]
    fn lse_deltas_match_hand_arithmetic() {
        let mut m = MatchSet::new((100, 100));
        m.lines.push(crate::datagen::LineMatch {
            r_start: [10.0, 20.0],
            r_end: [30.0, 50.0],
            t_start: [5.0, 5.0],
            t_end: [6.0, 7.0],
        });
        let nodes = build_nodeset(&m, true);
        let f = nodes.lines[0].features;
        // raw deltas 20 and 30, scaled by 2/100
        assert!((f[2] - 20.0 * 0.02).abs() < 1e-15);
        assert!((f[3] - 30.0 * 0.02).abs() < 1e-15);
    }

    #[test]
    fn lse_delta_translation_invariance() {
        let mk = |shift: f64| {
            let mut m = MatchSet::new((100, 100));
            m.lines.push(crate::datagen::LineMatch {
                r_start: [10.0 + shift, 20.0 + shift],
                r_end: [30.0 + shift, 50.0 + shift],
                t_start: [5.0 + shift, 5.0 + shift],
                t_end: [6.0 + shift, 7.0 + shift],
            });
            build_nodeset(&m, true).lines[0].features
        };
        let a = mk(0.0);
        let b = mk(13.0);
        for i in [2usize, 3, 6, 7] {
            assert!((a[i] - b[i]).abs() < 1e-12, "delta component {i} changed");
        }
    }

    #[test]
    fn zero_length_line_encodes_without_error() {
        let mut m = MatchSet::new((100, 100));
        m.lines.push(crate::datagen::LineMatch {
            r_start: [10.0, 10.0],
            r_end: [10.0, 10.0],
            t_start: [20.0, 20.0],
            t_end: [20.0, 20.0],
        });
        let nodes = build_nodeset(&m, true);
        assert_eq!(nodes.lines[0].features[2], 0.0);
        assert_eq!(nodes.lines[0].features[3], 0.0);
        let mut params = ParamSet::new();
        let mut rng = Rng::new(0);
        let mlp = MlpParams::alloc(&mut params, "lse", 8, 16, 16, &mut rng);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = encode_lse(&mut tape, &bound, &mlp, &nodes).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 16]);
        assert!(tape.value(out).all_finite());
    }

    #[test]
    fn encoders_have_contract_shapes_and_are_pure() {
        let m = scene_matchset(4);
        let r = resample_matches(&m, 32, 16, 5).unwrap();
        let nodes = build_nodeset(&r, true);
        let d = 16;
        let mut params = ParamSet::new();
        let mut rng = Rng::new(7);
        let sce = MlpParams::alloc(&mut params, "sce", 4, d, d, &mut rng);
        let lse = MlpParams::alloc(&mut params, "lse", 8, d, d, &mut rng);
        let pe = MlpParams::alloc(&mut params, "pe", 6, d, d, &mut rng);

        let run = || {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let g = encode_sce(&mut tape, &bound, &sce, &nodes).unwrap();
            let l = encode_lse(&mut tape, &bound, &lse, &nodes).unwrap();
            let v = encode_pe(&mut tape, &bound, &pe, &r, &nodes).unwrap();
            (
                tape.value(g).clone(),
                tape.value(l).clone(),
                tape.value(v).clone(),
            )
        };
        let (g1, l1, v1) = run();
        let (g2, l2, v2) = run();
        assert_eq!(g1.shape(), &[64, d]);
        assert_eq!(l1.shape(), &[16, d]);
        assert_eq!(v1.shape(), &[64, d]);
        assert_eq!(g1, g2);
        assert_eq!(l1, l2);
        assert_eq!(v1, v2);
    }

    #[test]
    fn identical_coordinates_give_identical_rows() {
        let mut m = MatchSet::new((64, 64));
        for _ in 0..2 {
            m.points.push(crate::datagen::PointMatch {
                x_r: 10.0,
                y_r: 12.0,
                x_t: 14.0,
                y_t: 16.0,
            });
        }
        let nodes = build_nodeset(&m, false);
        let mut params = ParamSet::new();
        let mut rng = Rng::new(1);
        let sce = MlpParams::alloc(&mut params, "sce", 4, 8, 8, &mut rng);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = encode_sce(&mut tape, &bound, &sce, &nodes).unwrap();
        let t = tape.value(out);
        for j in 0..8 {
            assert_eq!(t.at2(0, j), t.at2(1, j));
        }
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let m = scene_matchset(6);
        let nodes = build_nodeset(&m, true);
        let mut params = ParamSet::new();
        let mut rng = Rng::new(2);
        let sce = MlpParams::alloc(&mut params, "sce", 4, 8, 8, &mut rng);
        params.zero_all();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = encode_sce(&mut tape, &bound, &sce, &nodes).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn photoconsistent_scene_has_equal_view_samples_per_node() {
        let m = scene_matchset(8);
        let nodes = build_nodeset(&m, true);
        let rows = node_appearance_matrix(&m).unwrap();
        for row in rows.iter().take(nodes.len()) {
            for c in 0..3 {
                assert!((row[c] - row[c + 3]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn permutation_equivariance_of_sce() {
        let m = scene_matchset(9);
        let mut permuted = m.clone();
        permuted.points.reverse();
        let nodes = build_nodeset(&m, false);
        let nodes_p = build_nodeset(&permuted, false);
        let mut params = ParamSet::new();
        let mut rng = Rng::new(3);
        let sce = MlpParams::alloc(&mut params, "sce", 4, 8, 8, &mut rng);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let a = encode_sce(&mut tape, &bound, &sce, &nodes).unwrap();
        let b = encode_sce(&mut tape, &bound, &sce, &nodes_p).unwrap();
        let (ta, tb) = (tape.value(a), tape.value(b));
        let n = nodes.len();
        for i in 0..n {
            for j in 0..8 {
                assert_eq!(ta.at2(i, j), tb.at2(n - 1 - i, j));
            }
        }
    }

    #[test]
    fn encoder_gradients_pass_finite_difference_check() {
        use crate::diffcore::{finite_difference_audit, DEFAULT_STEP, DEFAULT_TOLERANCE};
        let m = scene_matchset(10);
        let r = resample_matches(&m, 6, 3, 1).unwrap();
        let nodes = build_nodeset(&r, true);
        let mut params = ParamSet::new();
        let mut rng = Rng::new(4);
        let sce = MlpParams::alloc(&mut params, "sce", 4, 6, 6, &mut rng);
        let lse = MlpParams::alloc(&mut params, "lse", 8, 6, 6, &mut rng);
        let pe = MlpParams::alloc(&mut params, "pe", 6, 6, 6, &mut rng);

        let forward = |p: &ParamSet| -> crate::error::Result<(Tape, Var, BoundParams)> {
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape);
            let g = encode_sce(&mut tape, &bound, &sce, &nodes)?;
            let l = encode_lse(&mut tape, &bound, &lse, &nodes)?;
            let v = encode_pe(&mut tape, &bound, &pe, &r, &nodes)?;
            let gs = tape.sum_all(g);
            let gl = tape.sum_all(l);
            let gv = tape.sum_all(v);
            let gg = tape.mul(gs, gv)?;
            let loss = tape.add(gg, gl)?;
            Ok((tape, loss, bound))
        };

        let (mut tape, loss, bound) = forward(&params).unwrap();
        tape.backward(loss).unwrap();
        let grads = bound.collect_grads(&tape, &params);
        let report = finite_difference_audit(
            &mut params,
            &grads,
            |p| {
                let (t, l, _) = forward(p)?;
                Ok(t.value(l).scalar_value())
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(report.passed(), "worst {}", report.worst());
    }
}
