//! Script-to-shot alignment and segment timing.
//!
//! Spans are character offsets into the scene script. Times are integer
//! milliseconds; with narration the segment durations always sum to the
//! narration length exactly.

use serde::{Deserialize, Serialize};

use crate::ids::ShotId;
use crate::model::{check_spans, Correspondence, Scene, TimedSegment};

pub const DEFAULT_SHOT_MS: u64 = 4_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlignError {
    #[error("scene script is empty")]
    EmptyScript,
    #[error("scene has no shots")]
    NoShots,
    #[error("invalid spans: {0}")]
    SpanViolation(String),
    #[error("correspondences cover no characters")]
    ZeroCoverage,
    #[error("narration of {narration_ms} ms cannot hold {segments} segments")]
    NarrationTooShort { narration_ms: u64, segments: usize },
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
}

/// Turns ordered `(shot, excerpt)` pairs into correspondences. Each excerpt
/// is searched from the end of the previous match; empty excerpts are
/// dropped. Gaps are absorbed: the first span starts at 0, each span runs
/// to the start of the next, and the last runs to the end of the text.
pub fn resolve_excerpts(text: &str, items: &[(ShotId, String)]) -> Result<Vec<Correspondence>, String> {
    let mut found: Vec<(ShotId, usize)> = Vec::new();
    let mut cursor = 0usize;
    for (i, (shot, excerpt)) in items.iter().enumerate() {
        let excerpt = excerpt.trim();
        if excerpt.is_empty() {
            continue;
        }
        let Some(at) = text[cursor..].find(excerpt) else {
            return Err(format!(
                "$[{i}].excerpt: not found in the script after the previous excerpt (shot {shot})"
            ));
        };
        let start_byte = cursor + at;
        found.push((shot.clone(), text[..start_byte].chars().count()));
        cursor = start_byte + excerpt.len();
    }
    let len = text.chars().count();
    let mut out = Vec::with_capacity(found.len());
    for (k, (shot, _)) in found.iter().enumerate() {
        let start = if k == 0 { 0 } else { found[k].1 };
        let end = found.get(k + 1).map(|(_, s)| *s).unwrap_or(len);
        if start < end {
            out.push(Correspondence {
                shot_id: shot.clone(),
                span: (start, end),
            });
        }
    }
    Ok(out)
}

/// One span covering the whole script for a single-shot scene.
pub fn single_shot(scene: &Scene) -> Result<Vec<Correspondence>, AlignError> {
    let len = scene.script.char_len();
    if scene.script.is_blank() {
        return Err(AlignError::EmptyScript);
    }
    let shot = scene.shots.first().ok_or(AlignError::NoShots)?;
    Ok(vec![Correspondence {
        shot_id: shot.clone(),
        span: (0, len),
    }])
}

/// Character weight of each correspondence with gaps absorbed into the
/// preceding span and the first span extended to 0.
pub fn effective_lengths(correspondences: &[Correspondence]) -> Vec<u64> {
    let n = correspondences.len();
    (0..n)
        .map(|k| {
            let start = if k == 0 { 0 } else { correspondences[k].span.0 };
            let end = if k + 1 < n {
                correspondences[k + 1].span.0
            } else {
                correspondences[k].span.1
            };
            end.saturating_sub(start) as u64
        })
        .collect()
}

/// Segment timings for ordered correspondences. With narration each
/// segment gets `narration × effective_chars / total_chars` milliseconds,
/// rounded down, and the last segment takes the remainder. Without
/// narration every segment lasts `default_shot_ms`.
pub fn compute_timings(
    correspondences: &[Correspondence],
    narration_ms: Option<u64>,
    default_shot_ms: u64,
) -> Result<Vec<TimedSegment>, AlignError> {
    if let Some(last) = correspondences.last() {
        check_spans(correspondences, last.span.1).map_err(AlignError::SpanViolation)?;
    }
    let durations = match narration_ms {
        None => vec![default_shot_ms.max(1); correspondences.len()],
        Some(total_ms) => proportional(&effective_lengths(correspondences), total_ms)?,
    };
    Ok(lay_out(correspondences.iter().map(|c| c.shot_id.clone()).zip(durations)))
}

/// Splits `total_ms` in proportion to `weights`, each part at least 1 ms,
/// summing to `total_ms` exactly.
pub fn proportional(weights: &[u64], total_ms: u64) -> Result<Vec<u64>, AlignError> {
    let n = weights.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let total: u64 = weights.iter().sum();
    if total == 0 {
        return Err(AlignError::ZeroCoverage);
    }
    if total_ms < n as u64 {
        return Err(AlignError::NarrationTooShort {
            narration_ms: total_ms,
            segments: n,
        });
    }
    let mut out: Vec<u64> = weights[..n - 1]
        .iter()
        .map(|w| ((total_ms as u128 * *w as u128) / total as u128) as u64)
        .map(|d| d.max(1))
        .collect();
    let used: u64 = out.iter().sum();
    let mut last = total_ms as i128 - used as i128;
    // Minimum-length bumps can overdraw the remainder; repay from the
    // longest segments.
    while last < 1 {
        let (i, _) = out
            .iter()
            .enumerate()
            .max_by_key(|(i, d)| (**d, std::cmp::Reverse(*i)))
            .expect("n > 1 here");
        out[i] -= 1;
        last += 1;
    }
    out.push(last as u64);
    Ok(out)
}

fn lay_out(items: impl IntoIterator<Item = (ShotId, u64)>) -> Vec<TimedSegment> {
    let mut start = 0;
    items
        .into_iter()
        .map(|(shot_id, duration_ms)| {
            let s = TimedSegment {
                shot_id,
                start_ms: start,
                duration_ms,
            };
            start += duration_ms;
            s
        })
        .collect()
}

/// Timings used when compiling a scene: the stored timing if any, else
/// computed from correspondences, else one equal slot per shot.
pub fn scene_timings(scene: &Scene) -> Result<Vec<TimedSegment>, AlignError> {
    if let Some(t) = &scene.timing {
        return Ok(t.clone());
    }
    let narration_ms = scene.narration.as_ref().and_then(|a| a.duration_ms());
    if !scene.correspondences.is_empty() {
        return compute_timings(&scene.correspondences, narration_ms, DEFAULT_SHOT_MS);
    }
    let durations = match narration_ms {
        Some(total) => proportional(&vec![1; scene.shots.len()], total)?,
        None => vec![DEFAULT_SHOT_MS; scene.shots.len()],
    };
    Ok(lay_out(scene.shots.iter().cloned().zip(durations)))
}

/// A user edit on the scene timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "edit", rename_all = "snake_case")]
pub enum Edit {
    /// Grow (or shrink, if negative) segment `index`. When the total is
    /// conserved the neighbors absorb the change, split between them.
    Resize { index: usize, delta_ms: i64 },
    /// Move the cut between `index` and `index + 1`.
    MoveBoundary { index: usize, delta_ms: i64 },
}

pub fn manual_adjust(segments: &[TimedSegment], edit: &Edit, conserve_total: bool) -> Result<Vec<TimedSegment>, AlignError> {
    let mut d: Vec<i64> = segments.iter().map(|s| s.duration_ms as i64).collect();
    let n = d.len();
    match *edit {
        Edit::Resize { index, delta_ms } => {
            if index >= n {
                return Err(AlignError::InvalidEdit(format!("no segment {index}")));
            }
            d[index] += delta_ms;
            if conserve_total {
                let (prev, next) = (index.checked_sub(1), (index + 1 < n).then_some(index + 1));
                match (prev, next) {
                    (None, None) => {
                        return Err(AlignError::InvalidEdit(
                            "a lone segment cannot change length while narration fixes the total".into(),
                        ))
                    }
                    (Some(p), None) => d[p] -= delta_ms,
                    (None, Some(x)) => d[x] -= delta_ms,
                    (Some(p), Some(x)) => {
                        let half = delta_ms / 2;
                        d[p] -= half;
                        d[x] -= delta_ms - half;
                    }
                }
            }
        }
        Edit::MoveBoundary { index, delta_ms } => {
            if index + 1 >= n {
                return Err(AlignError::InvalidEdit(format!("no boundary after segment {index}")));
            }
            d[index] += delta_ms;
            d[index + 1] -= delta_ms;
        }
    }
    if let Some(i) = d.iter().position(|x| *x <= 0) {
        return Err(AlignError::InvalidEdit(format!("segment {i} would have non-positive length")));
    }
    Ok(lay_out(
        segments
            .iter()
            .map(|s| s.shot_id.clone())
            .zip(d.into_iter().map(|x| x as u64)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_segments;
    use proptest::prelude::*;

    fn corr(spans: &[(usize, usize)]) -> Vec<Correspondence> {
        spans
            .iter()
            .enumerate()
            .map(|(i, s)| Correspondence {
                shot_id: ShotId::new(format!("shot-{i}")),
                span: *s,
            })
            .collect()
    }

    fn ms(segs: &[TimedSegment]) -> Vec<u64> {
        segs.iter().map(|s| s.duration_ms).collect()
    }

    /// Independent oracle: every character carries an equal share of the
    /// narration, accumulated per segment in floating point.
    fn per_char_oracle(lengths: &[u64], narration_ms: u64) -> Vec<f64> {
        let total: u64 = lengths.iter().sum();
        let per_char = narration_ms as f64 / total as f64;
        lengths.iter().map(|n| (0..*n).fold(0.0, |acc, _| acc + per_char)).collect()
    }

    #[test]
    fn thirty_sixty_thirty_over_ten_seconds() {
        let c = corr(&[(0, 30), (30, 90), (90, 120)]);
        let t = compute_timings(&c, Some(10_000), DEFAULT_SHOT_MS).unwrap();
        assert_eq!(ms(&t), vec![2_500, 5_000, 2_500]);
        let oracle = per_char_oracle(&[30, 60, 30], 10_000);
        for (got, want) in ms(&t).iter().zip(oracle) {
            assert!((*got as f64 - want).abs() < 0.5);
        }
        let secs: Vec<f64> = t.iter().map(|s| s.duration_s()).collect();
        assert_eq!(secs, vec![2.5, 5.0, 2.5]);
    }

    #[test]
    fn gaps_are_absorbed_before_timing() {
        // Spans with gaps: [5,30) [40,90) [95,120) → 40/55/25 effective.
        let c = corr(&[(5, 30), (40, 90), (95, 120)]);
        assert_eq!(effective_lengths(&c), vec![40, 55, 25]);
        let t = compute_timings(&c, Some(12_000), DEFAULT_SHOT_MS).unwrap();
        assert_eq!(ms(&t).iter().sum::<u64>(), 12_000);
    }

    #[test]
    fn equal_spans_and_default_path() {
        let c = corr(&[(0, 40), (40, 80), (80, 120)]);
        assert_eq!(ms(&compute_timings(&c, Some(12_000), 4_000).unwrap()), vec![4_000; 3]);
        let two = corr(&[(0, 3), (3, 9)]);
        assert_eq!(ms(&compute_timings(&two, None, 4_000).unwrap()), vec![4_000, 4_000]);
    }

    #[test]
    fn errors() {
        let zero = vec![Correspondence {
            shot_id: ShotId::new("a"),
            span: (0, 0),
        }];
        assert!(compute_timings(&zero, Some(1000), 4000).is_err());
        let c = corr(&[(0, 1), (1, 2), (2, 3)]);
        assert!(matches!(
            compute_timings(&c, Some(2), 4000),
            Err(AlignError::NarrationTooShort { .. })
        ));
    }

    #[test]
    fn excerpts_resolve_in_order_with_gap_absorption() {
        let text = "Morning at the dock. Then the long ferry ride! Finally home.";
        let items = vec![
            (ShotId::new("a"), "at the dock.".to_string()),
            (ShotId::new("b"), "the long ferry".to_string()),
            (ShotId::new("c"), "Finally home.".to_string()),
        ];
        let c = resolve_excerpts(text, &items).unwrap();
        let len = text.chars().count();
        assert_eq!(c[0].span.0, 0);
        assert_eq!(c[0].span.1, c[1].span.0);
        assert_eq!(c[2].span.1, len);
        assert!(check_spans(&c, len).is_ok());
        let bad = vec![
            (ShotId::new("a"), "Finally".to_string()),
            (ShotId::new("b"), "Morning".to_string()),
        ];
        assert!(resolve_excerpts(text, &bad).unwrap_err().contains("$[1]"));
    }

    #[test]
    fn widening_with_narration_conserves_total() {
        let segs = compute_timings(&corr(&[(0, 10), (10, 20), (20, 30)]), Some(9_000), 4000).unwrap();
        let out = manual_adjust(
            &segs,
            &Edit::Resize {
                index: 1,
                delta_ms: 1_000,
            },
            true,
        )
        .unwrap();
        assert_eq!(ms(&out), vec![2_500, 4_000, 2_500]);
        assert!(check_segments(&out).is_ok());
    }

    #[test]
    fn shrinking_to_zero_fails_and_free_widening_extends() {
        let segs = compute_timings(&corr(&[(0, 10), (10, 20)]), None, 4000).unwrap();
        assert!(manual_adjust(
            &segs,
            &Edit::Resize {
                index: 0,
                delta_ms: -4_000
            },
            false
        )
        .is_err());
        let out = manual_adjust(
            &segs,
            &Edit::Resize {
                index: 0,
                delta_ms: 1_500,
            },
            false,
        )
        .unwrap();
        assert_eq!(ms(&out), vec![5_500, 4_000]);
        assert_eq!(out[1].start_ms, 5_500);
        let moved = manual_adjust(
            &segs,
            &Edit::MoveBoundary {
                index: 0,
                delta_ms: -1_000,
            },
            false,
        )
        .unwrap();
        assert_eq!(ms(&moved), vec![3_000, 5_000]);
    }

    fn spans_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0usize..5, 1usize..80), 1..12).prop_map(|parts| {
            let mut at = 0;
            parts
                .into_iter()
                .map(|(gap, len)| {
                    let s = at + gap;
                    at = s + len;
                    (s, at)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn timings_conserve_narration(spans in spans_strategy(), narration in 50u64..600_000) {
            let c = corr(&spans);
            let t = compute_timings(&c, Some(narration), DEFAULT_SHOT_MS).unwrap();
            prop_assert_eq!(ms(&t).iter().sum::<u64>(), narration);
            prop_assert!(check_segments(&t).is_ok());
            let again = compute_timings(&c, Some(narration), DEFAULT_SHOT_MS).unwrap();
            prop_assert_eq!(t, again);
        }

        #[test]
        fn adjustments_keep_contiguity_and_total(
            spans in spans_strategy(),
            narration in 1_000u64..120_000,
            index in 0usize..12,
            delta in -2_000i64..2_000,
        ) {
            let t = compute_timings(&corr(&spans), Some(narration), DEFAULT_SHOT_MS).unwrap();
            let edit = Edit::Resize { index: index % t.len(), delta_ms: delta };
            if let Ok(out) = manual_adjust(&t, &edit, true) {
                prop_assert_eq!(ms(&out).iter().sum::<u64>(), narration);
                prop_assert!(check_segments(&out).is_ok());
            }
        }
    }
}
