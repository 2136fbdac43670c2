//! Appearance sources: dense image grids with bilinear sampling, or
//! per-match values from a procedural function of the latent 3-D geometry.

use crate::error::{CoreError, Result};
use crate::rng::Rng;

use super::MatchSet;

pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewSide {
    Reference,
    Target,
}

/// Dense H x W x 3 grid of f64 samples, row-major by (y, x, channel).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<ImageGrid> {
        if data.len() != width * height * CHANNELS {
            return Err(CoreError::ShapeMismatch {
                op: "ImageGrid::new",
                detail: format!(
                    "{}x{}x{} grid wants {} values, got {}",
                    height,
                    width,
                    CHANNELS,
                    width * height * CHANNELS,
                    data.len()
                ),
            });
        }
        Ok(ImageGrid {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: [f64; 3]) -> ImageGrid {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for _ in 0..width * height {
            data.extend_from_slice(&value);
        }
        ImageGrid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let base = (y * self.width + x) * CHANNELS;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    /// Bilinear interpolation; coordinates clamp to the valid rectangle.
    pub fn bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        let mut out = [0.0; 3];
        for c in 0..CHANNELS {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bottom * fy;
        }
        out
    }
}

/// Appearance values stored per match, in match order. Produced by the scene
/// generator, where every value is a function of the match's 3-D point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerNodeAppearance {
    pub point_ref: Vec<[f64; 3]>,
    pub point_tgt: Vec<[f64; 3]>,
    /// Per line: values at [start, end] endpoints.
    pub line_ref: Vec<[[f64; 3]; 2]>,
    pub line_tgt: Vec<[[f64; 3]; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AppearanceSource {
    None,
    Grids {
        reference: ImageGrid,
        target: ImageGrid,
    },
    PerNode(PerNodeAppearance),
}

impl AppearanceSource {
    pub fn is_none(&self) -> bool {
        matches!(self, AppearanceSource::None)
    }
}

/// Smooth seeded sum of 3-D sinusoids; identical in both views by
/// construction because it is evaluated at the latent 3-D point.
#[derive(Clone, Debug)]
pub struct ProceduralAppearance {
    waves: Vec<[Wave; 4]>,
}

#[derive(Clone, Copy, Debug)]
struct Wave {
    k: [f64; 3],
    phase: f64,
    amplitude: f64,
}

impl ProceduralAppearance {
    pub fn new(seed: u64) -> ProceduralAppearance {
        let mut rng = Rng::new(seed ^ 0x5EED_AB1E_D00D_F00D);
        let mut waves = Vec::with_capacity(CHANNELS);
        for _ in 0..CHANNELS {
            let mut channel = [Wave {
                k: [0.0; 3],
                phase: 0.0,
                amplitude: 0.0,
            }; 4];
            for (octave, wave) in channel.iter_mut().enumerate() {
                let freq = 0.35 * (1 << octave) as f64;
                wave.k = [
                    rng.gaussian() * freq,
                    rng.gaussian() * freq,
                    rng.gaussian() * freq,
                ];
                wave.phase = rng.range(0.0, std::f64::consts::TAU);
                wave.amplitude = 1.0 / (1 << octave) as f64;
            }
            waves.push(channel);
        }
        ProceduralAppearance { waves }
    }

    /// Appearance value in [0, 1]^3 at a 3-D point.
    pub fn value(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, channel) in self.waves.iter().enumerate() {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for wave in channel {
                acc += wave.amplitude
                    * (wave.k[0] * p[0] + wave.k[1] * p[1] + wave.k[2] * p[2] + wave.phase)
                        .sin();
                norm += wave.amplitude;
            }
            out[c] = 0.5 + 0.5 * acc / norm;
        }
        out
    }
}

/// Sample the appearance of `m` at pixel coordinates in one view.
///
/// Grid sources interpolate bilinearly with clamping; per-node sources look
/// up the stored value of the match whose coordinates land closest (within
/// half a pixel) to the query.
pub fn sample_appearance(m: &MatchSet, x: f64, y: f64, view: ViewSide) -> Result<[f64; 3]> {
    match &m.appearance {
        AppearanceSource::None => Err(CoreError::NoAppearance),
        AppearanceSource::Grids { reference, target } => Ok(match view {
            ViewSide::Reference => reference.bilinear(x, y),
            ViewSide::Target => target.bilinear(x, y),
        }),
        AppearanceSource::PerNode(per) => {
            let mut best: Option<(f64, [f64; 3])> = None;
            let mut consider = |px: f64, py: f64, value: [f64; 3]| {
                let d = (px - x).hypot(py - y);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, value));
                }
            };
            for (i, p) in m.points.iter().enumerate() {
                match view {
                    ViewSide::Reference => consider(p.x_r, p.y_r, per.point_ref[i]),
                    ViewSide::Target => consider(p.x_t, p.y_t, per.point_tgt[i]),
                }
            }
            for (i, l) in m.lines.iter().enumerate() {
                match view {
                    ViewSide::Reference => {
                        consider(l.r_start[0], l.r_start[1], per.line_ref[i][0]);
                        consider(l.r_end[0], l.r_end[1], per.line_ref[i][1]);
                    }
                    ViewSide::Target => {
                        consider(l.t_start[0], l.t_start[1], per.line_tgt[i][0]);
                        consider(l.t_end[0], l.t_end[1], per.line_tgt[i][1]);
                    }
                }
            }
            match best {
                Some((d, v)) if d <= 0.5 => Ok(v),
                _ => Err(CoreError::NoAppearance),
            }
        }
    }
}

/// Per-node appearance rows `[ref_rgb || tgt_rgb]` in node order: all points
/// first, then line endpoints in (start, end) pairs.
pub fn node_appearance_matrix(m: &MatchSet) -> Result<Vec<[f64; 6]>> {
    let mut rows = Vec::with_capacity(m.points.len() + 2 * m.lines.len());
    match &m.appearance {
        AppearanceSource::None => return Err(CoreError::NoAppearance),
        AppearanceSource::Grids { reference, target } => {
            for p in &m.points {
                let r = reference.bilinear(p.x_r, p.y_r);
                let t = target.bilinear(p.x_t, p.y_t);
                rows.push([r[0], r[1], r[2], t[0], t[1], t[2]]);
            }
            for l in &m.lines {
                for (rp, tp) in [(l.r_start, l.t_start), (l.r_end, l.t_end)] {
                    let r = reference.bilinear(rp[0], rp[1]);
                    let t = target.bilinear(tp[0], tp[1]);
                    rows.push([r[0], r[1], r[2], t[0], t[1], t[2]]);
                }
            }
        }
        AppearanceSource::PerNode(per) => {
            if per.point_ref.len() != m.points.len() || per.line_ref.len() != m.lines.len() {
                return Err(CoreError::ShapeMismatch {
                    op: "node_appearance_matrix",
                    detail: format!(
                        "appearance stores {} points / {} lines, match set has {} / {}",
                        per.point_ref.len(),
                        per.line_ref.len(),
                        m.points.len(),
                        m.lines.len()
                    ),
                });
            }
            for i in 0..m.points.len() {
                let r = per.point_ref[i];
                let t = per.point_tgt[i];
                rows.push([r[0], r[1], r[2], t[0], t[1], t[2]]);
            }
            for i in 0..m.lines.len() {
                for e in 0..2 {
                    let r = per.line_ref[i][e];
                    let t = per.line_tgt[i][e];
                    rows.push([r[0], r[1], r[2], t[0], t[1], t[2]]);
                }
            }
        }
    }
    Ok(rows)
}
