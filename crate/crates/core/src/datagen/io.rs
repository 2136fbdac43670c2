//! Match-set file format: a versioned line-oriented UTF-8 text schema with
//! typed sections, plus a little-endian binary sidecar for appearance grids.
//!
//! ```text
//! plpose matchset v1
//! image_size <W> <H>
//! gt none | gt <metric|unit> <qw> <qx> <qy> <qz> <tx> <ty> <tz>
//! points <N>
//! <x_r> <y_r> <x_t> <y_t>            (N lines)
//! lines <M>
//! <x_rA> <y_rA> <x_rB> <y_rB> <x_tA> <y_tA> <x_tB> <y_tB>
//! appearance none
//!   | appearance grids <ref-sidecar> <tgt-sidecar>
//!   | appearance pernode  (followed by point_appearance / line_appearance)
//! ```
//!
//! Floats are printed with Rust's shortest round-trip formatting, so a
//! save/load cycle is lossless at 64-bit precision.

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::geometry::{Quat, RelativePose, ScaleMode};

use super::appearance::{AppearanceSource, ImageGrid, PerNodeAppearance, CHANNELS};
use super::{LineMatch, MatchSet, PointMatch};

const HEADER: &str = "plpose matchset v1";
const GRID_MAGIC: &[u8; 8] = b"PLGRID1\n";

fn fmt_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn save_matchset(m: &MatchSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(&format!("image_size {} {}\n", m.image_size.0, m.image_size.1));
    match &m.gt {
        None => out.push_str("gt none\n"),
        Some(p) => {
            let q = p.quaternion();
            let t = p.translation();
            out.push_str(&format!(
                "gt {} {}\n",
                p.scale_mode().as_str(),
                fmt_floats(&[q.w, q.x, q.y, q.z, t[0], t[1], t[2]])
            ));
        }
    }
    out.push_str(&format!("points {}\n", m.points.len()));
    for p in &m.points {
        out.push_str(&fmt_floats(&[p.x_r, p.y_r, p.x_t, p.y_t]));
        out.push('\n');
    }
    out.push_str(&format!("lines {}\n", m.lines.len()));
    for l in &m.lines {
        out.push_str(&fmt_floats(&[
            l.r_start[0],
            l.r_start[1],
            l.r_end[0],
            l.r_end[1],
            l.t_start[0],
            l.t_start[1],
            l.t_end[0],
            l.t_end[1],
        ]));
        out.push('\n');
    }
    match &m.appearance {
        AppearanceSource::None => out.push_str("appearance none\n"),
        AppearanceSource::PerNode(per) => {
            out.push_str("appearance pernode\n");
            out.push_str(&format!("point_appearance {}\n", per.point_ref.len()));
            for i in 0..per.point_ref.len() {
                let mut row = per.point_ref[i].to_vec();
                row.extend_from_slice(&per.point_tgt[i]);
                out.push_str(&fmt_floats(&row));
                out.push('\n');
            }
            out.push_str(&format!("line_appearance {}\n", per.line_ref.len()));
            for i in 0..per.line_ref.len() {
                let mut row = Vec::with_capacity(12);
                row.extend_from_slice(&per.line_ref[i][0]);
                row.extend_from_slice(&per.line_ref[i][1]);
                row.extend_from_slice(&per.line_tgt[i][0]);
                row.extend_from_slice(&per.line_tgt[i][1]);
                out.push_str(&fmt_floats(&row));
                out.push('\n');
            }
        }
        AppearanceSource::Grids { reference, target } => {
            let stem = path
                .file_name()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "matchset".to_string());
            let ref_name = format!("{stem}.refgrid");
            let tgt_name = format!("{stem}.tgtgrid");
            out.push_str(&format!("appearance grids {ref_name} {tgt_name}\n"));
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            save_grid(reference, &dir.join(&ref_name))?;
            save_grid(target, &dir.join(&tgt_name))?;
        }
    }
    fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

fn save_grid(grid: &ImageGrid, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + grid.data().len() * 8);
    bytes.extend_from_slice(GRID_MAGIC);
    bytes.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    bytes.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
    for v in grid.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| CoreError::io(path.display().to_string(), e))
}

fn load_grid(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let parse_err = |detail: &str| CoreError::parse(path.display().to_string(), 0, detail);
    if bytes.len() < 20 || &bytes[..8] != GRID_MAGIC {
        return Err(parse_err("not a grid sidecar (bad magic)"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let width = u32_at(8) as usize;
    let height = u32_at(12) as usize;
    let channels = u32_at(16) as usize;
    if channels != CHANNELS {
        return Err(parse_err(&format!("unsupported channel count {channels}")));
    }
    let expected = 20 + width * height * CHANNELS * 8;
    if bytes.len() != expected {
        return Err(parse_err(&format!(
            "payload length {} does not match {}x{} grid",
            bytes.len() - 20,
            width,
            height
        )));
    }
    let mut data = Vec::with_capacity(width * height * CHANNELS);
    for chunk in bytes[20..].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    ImageGrid::new(width, height, data)
}

struct Lines<'a> {
    path: &'a Path,
    lines: Vec<&'a str>,
    cursor: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        while self.cursor < self.lines.len() {
            let lineno = self.cursor + 1;
            let line = self.lines[self.cursor].trim();
            self.cursor += 1;
            if !line.is_empty() {
                return Ok((lineno, line));
            }
        }
        Err(CoreError::parse(
            self.path.display().to_string(),
            self.lines.len(),
            format!("unexpected end of file, expected {what}"),
        ))
    }

    fn err(&self, lineno: usize, detail: impl Into<String>) -> CoreError {
        CoreError::parse(self.path.display().to_string(), lineno, detail)
    }

    fn floats(&mut self, what: &str, count: usize) -> Result<Vec<f64>> {
        let (lineno, line) = self.next(what)?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != count {
            return Err(self.err(
                lineno,
                format!("{what}: expected {count} fields, got {}", fields.len()),
            ));
        }
        fields
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.parse::<f64>().map_err(|_| {
                    self.err(lineno, format!("{what}: field {} is not a number: {f:?}", i + 1))
                })
            })
            .collect()
    }

    fn counted_section(&mut self, keyword: &str) -> Result<usize> {
        let (lineno, line) = self.next(keyword)?;
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or("");
        if head != keyword {
            return Err(self.err(lineno, format!("expected section {keyword:?}, got {head:?}")));
        }
        let count = parts
            .next()
            .ok_or_else(|| self.err(lineno, format!("{keyword}: missing count")))?;
        count
            .parse::<usize>()
            .map_err(|_| self.err(lineno, format!("{keyword}: bad count {count:?}")))
    }
}

pub fn load_matchset(path: &Path) -> Result<MatchSet> {
    let text =
        fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut reader = Lines {
        path,
        lines: text.lines().collect(),
        cursor: 0,
    };

    let (lineno, header) = reader.next("header")?;
    if header != HEADER {
        return Err(reader.err(lineno, format!("bad header {header:?}")));
    }

    let (lineno, size_line) = reader.next("image_size")?;
    let size_fields: Vec<&str> = size_line.split_whitespace().collect();
    if size_fields.len() != 3 || size_fields[0] != "image_size" {
        return Err(reader.err(lineno, "expected: image_size <W> <H>"));
    }
    let width: u32 = size_fields[1]
        .parse()
        .map_err(|_| reader.err(lineno, format!("bad width {:?}", size_fields[1])))?;
    let height: u32 = size_fields[2]
        .parse()
        .map_err(|_| reader.err(lineno, format!("bad height {:?}", size_fields[2])))?;

    let (lineno, gt_line) = reader.next("gt")?;
    let gt_fields: Vec<&str> = gt_line.split_whitespace().collect();
    let gt = match gt_fields.as_slice() {
        ["gt", "none"] => None,
        ["gt", mode, rest @ ..] if rest.len() == 7 => {
            let mode = ScaleMode::parse(mode)
                .ok_or_else(|| reader.err(lineno, format!("bad scale mode {mode:?}")))?;
            let mut v = [0.0; 7];
            for (i, f) in rest.iter().enumerate() {
                v[i] = f.parse::<f64>().map_err(|_| {
                    reader.err(lineno, format!("gt: field {} is not a number: {f:?}", i + 1))
                })?;
            }
            Some(
                RelativePose::new(Quat::new(v[0], v[1], v[2], v[3]), [v[4], v[5], v[6]], mode)
                    .map_err(|e| reader.err(lineno, format!("gt: {e}")))?,
            )
        }
        _ => return Err(reader.err(lineno, "expected: gt none | gt <mode> <7 floats>")),
    };

    let n_points = reader.counted_section("points")?;
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let v = reader.floats("point match", 4)?;
        points.push(PointMatch {
            x_r: v[0],
            y_r: v[1],
            x_t: v[2],
            y_t: v[3],
        });
    }

    let n_lines = reader.counted_section("lines")?;
    let mut lines = Vec::with_capacity(n_lines);
    for _ in 0..n_lines {
        let v = reader.floats("line match", 8)?;
        lines.push(LineMatch {
            r_start: [v[0], v[1]],
            r_end: [v[2], v[3]],
            t_start: [v[4], v[5]],
            t_end: [v[6], v[7]],
        });
    }

    let (lineno, app_line) = reader.next("appearance")?;
    let app_fields: Vec<&str> = app_line.split_whitespace().collect();
    let appearance = match app_fields.as_slice() {
        ["appearance", "none"] => AppearanceSource::None,
        ["appearance", "pernode"] => {
            let np = reader.counted_section("point_appearance")?;
            if np != points.len() {
                return Err(reader.err(
                    lineno,
                    format!("point_appearance count {np} != points {}", points.len()),
                ));
            }
            let mut per = PerNodeAppearance::default();
            for _ in 0..np {
                let v = reader.floats("point appearance", 6)?;
                per.point_ref.push([v[0], v[1], v[2]]);
                per.point_tgt.push([v[3], v[4], v[5]]);
            }
            let nl = reader.counted_section("line_appearance")?;
            if nl != lines.len() {
                return Err(reader.err(
                    lineno,
                    format!("line_appearance count {nl} != lines {}", lines.len()),
                ));
            }
            for _ in 0..nl {
                let v = reader.floats("line appearance", 12)?;
                per.line_ref.push([[v[0], v[1], v[2]], [v[3], v[4], v[5]]]);
                per.line_tgt
                    .push([[v[6], v[7], v[8]], [v[9], v[10], v[11]]]);
            }
            AppearanceSource::PerNode(per)
        }
        ["appearance", "grids", ref_name, tgt_name] => {
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            AppearanceSource::Grids {
                reference: load_grid(&dir.join(ref_name))?,
                target: load_grid(&dir.join(tgt_name))?,
            }
        }
        _ => {
            return Err(reader.err(
                lineno,
                "expected: appearance none | pernode | grids <ref> <tgt>",
            ))
        }
    };

    Ok(MatchSet {
        points,
        lines,
        image_size: (width, height),
        appearance,
        gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_scene, SceneParams};

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("plpose_io_test").join(name);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn round_trip_with_pernode_appearance() {
        let scene = generate_scene(5, &SceneParams::default()).unwrap();
        let m = &scene.matchset;
        let path = tmpdir("pernode").join("scene.pms");
        save_matchset(m, &path).unwrap();
        let back = load_matchset(&path).unwrap();
        assert_eq!(m.points, back.points);
        assert_eq!(m.lines, back.lines);
        assert_eq!(m.image_size, back.image_size);
        assert_eq!(m.appearance, back.appearance);
        assert_eq!(m.gt.unwrap().to_vector7(), back.gt.unwrap().to_vector7());
    }

    #[test]
    fn round_trip_with_grids() {
        let mut m = MatchSet::new((8, 6));
        m.points.push(PointMatch {
            x_r: 1.0,
            y_r: 2.0,
            x_t: 3.0,
            y_t: 4.0,
        });
        let mk = |scale: f64| {
            let data: Vec<f64> = (0..8 * 6 * 3).map(|i| i as f64 * scale).collect();
            ImageGrid::new(8, 6, data).unwrap()
        };
        m.appearance = AppearanceSource::Grids {
            reference: mk(0.25),
            target: mk(0.5),
        };
        let path = tmpdir("grids").join("scene.pms");
        save_matchset(&m, &path).unwrap();
        let back = load_matchset(&path).unwrap();
        assert_eq!(m.appearance, back.appearance);
    }

    #[test]
    fn missing_gt_loads_for_inference() {
        let mut m = MatchSet::new((32, 32));
        m.points.push(PointMatch {
            x_r: 1.5,
            y_r: 2.5,
            x_t: 3.5,
            y_t: 4.5,
        });
        let path = tmpdir("nogt").join("scene.pms");
        save_matchset(&m, &path).unwrap();
        let back = load_matchset(&path).unwrap();
        assert!(back.gt.is_none());
        assert_eq!(back.points, m.points);
    }

    #[test]
    fn malformed_numeric_field_is_reported_with_location() {
        let path = tmpdir("badnum").join("scene.pms");
        fs::write(
            &path,
            "plpose matchset v1\nimage_size 10 10\ngt none\npoints 1\n1.0 oops 3.0 4.0\nlines 0\nappearance none\n",
        )
        .unwrap();
        let err = load_matchset(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":5"), "missing line number: {msg}");
        assert!(msg.contains("field 2"), "missing field name: {msg}");
    }

    #[test]
    fn truncated_file_is_reported() {
        let path = tmpdir("trunc").join("scene.pms");
        fs::write(&path, "plpose matchset v1\nimage_size 10 10\ngt none\npoints 2\n1 2 3 4\n").unwrap();
        assert!(load_matchset(&path).is_err());
    }

    #[test]
    fn shortest_round_trip_formatting_is_lossless() {
        let mut m = MatchSet::new((100, 100));
        m.points.push(PointMatch {
            x_r: 1.0 / 3.0,
            y_r: std::f64::consts::PI,
            x_t: 2.0_f64.sqrt(),
            y_t: 1e-17,
        });
        let path = tmpdir("precision").join("scene.pms");
        save_matchset(&m, &path).unwrap();
        let back = load_matchset(&path).unwrap();
        let (a, b) = (m.points[0], back.points[0]);
        assert_eq!(a.x_r.to_bits(), b.x_r.to_bits());
        assert_eq!(a.y_r.to_bits(), b.y_r.to_bits());
        assert_eq!(a.x_t.to_bits(), b.x_t.to_bits());
        assert_eq!(a.y_t.to_bits(), b.y_t.to_bits());
    }
}
