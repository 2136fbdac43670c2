//! Fixed-count resampling by seeded random repetition or deletion.

use crate::error::{CoreError, Result};
use crate::rng::Rng;

use super::appearance::AppearanceSource;
use super::MatchSet;

/// Indices realizing the target count: identity when already exact, a sorted
/// random subset when deleting, all inputs plus random repeats when short.
fn resample_indices(len: usize, target: usize, rng: &mut Rng) -> Vec<usize> {
    if len == target {
        return (0..len).collect();
    }
    if len > target {
        // Partial Fisher-Yates selection, then input order restored.
        let mut pool: Vec<usize> = (0..len).collect();
        for i in 0..target {
            let j = i + rng.index(len - i);
            pool.swap(i, j);
        }
        let mut keep = pool[..target].to_vec();
        keep.sort_unstable();
        keep
    } else {
        let mut out: Vec<usize> = (0..len).collect();
        out.extend((0..target - len).map(|_| rng.index(len)));
        out
    }
}

/// Resample to exactly `n_points` points and `n_lines` line segments.
pub fn resample_matches(
    m: &MatchSet,
    n_points: usize,
    n_lines: usize,
    seed: u64,
) -> Result<MatchSet> {
    if m.points.is_empty() && n_points > 0 {
        return Err(CoreError::EmptyResampleInput {
            kind: "points",
            target: n_points,
        });
    }
    if m.lines.is_empty() && n_lines > 0 {
        return Err(CoreError::EmptyResampleInput {
            kind: "lines",
            target: n_lines,
        });
    }
    let mut rng = Rng::new(seed ^ 0xC0FF_EE00_5EED_1234);
    let point_idx = if n_points > 0 {
        resample_indices(m.points.len(), n_points, &mut rng)
    } else {
        Vec::new()
    };
    let line_idx = if n_lines > 0 {
        resample_indices(m.lines.len(), n_lines, &mut rng)
    } else {
        Vec::new()
    };

    let points = point_idx.iter().map(|&i| m.points[i]).collect();
    let lines = line_idx.iter().map(|&i| m.lines[i]).collect();
    let appearance = match &m.appearance {
        AppearanceSource::PerNode(per) => {
            let mut out = super::appearance::PerNodeAppearance::default();
            for &i in &point_idx {
                out.point_ref.push(per.point_ref[i]);
                out.point_tgt.push(per.point_tgt[i]);
            }
            for &i in &line_idx {
                out.line_ref.push(per.line_ref[i]);
                out.line_tgt.push(per.line_tgt[i]);
            }
            AppearanceSource::PerNode(out)
        }
        other => other.clone(),
    };

    Ok(MatchSet {
        points,
        lines,
        image_size: m.image_size,
        appearance,
        gt: m.gt,
    })
}
