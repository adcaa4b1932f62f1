use std::path::Path;

use super::{ActionSequence, DatasetMeta, Joint, SkeletonFrame};
use crate::error::{Error, Result};

/// One entry of `actionLabel.txt`: an action performed between two raw
/// frame ids (inclusive) of recording `sXX_eYY`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtkSegment {
    pub recording: String,
    pub action: String,
    /// `None` when the index lists `NaN` bounds; such segments are skipped.
    pub bounds: Option<(u64, u64)>,
}

pub(crate) fn parse_action_index(text: &str) -> Result<Vec<UtkSegment>> {
    let mut out = Vec::new();
    let mut recording: Option<String> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once(':') {
            None => recording = Some(line.to_string()),
            Some((action, rest)) => {
                let rec = recording
                    .clone()
                    .ok_or_else(|| Error::parse(line_no, "segment before any recording header"))?;
                let toks: Vec<&str> = rest.split_whitespace().collect();
                if toks.len() != 2 {
                    return Err(Error::parse(line_no, "expected '<action>: <start> <end>'"));
                }
                let bounds = match (toks[0].parse::<u64>(), toks[1].parse::<u64>()) {
                    (Ok(a), Ok(b)) if a <= b => Some((a, b)),
                    _ if toks.iter().any(|t| t.eq_ignore_ascii_case("nan")) => None,
                    _ => return Err(Error::parse(line_no, format!("bad frame bounds '{}'", rest.trim()))),
                };
                out.push(UtkSegment {
                    recording: rec,
                    action: action.trim().to_string(),
                    bounds,
                });
            }
        }
    }
    Ok(out)
}

/// Cuts one `joints_sXX_eYY.txt` recording into labeled action sequences.
/// Rows are `frame_id` followed by `3 · joint_count` coordinates. A repeated
/// frame id keeps its first row; rows with NaN coordinates mark every joint
/// of that row missing.
pub fn parse_utkinect(
    path: &Path,
    text: &str,
    segments: &[UtkSegment],
    meta: &DatasetMeta,
) -> Result<Vec<ActionSequence>> {
    let bad = |msg: String| Error::BadPath {
        path: path.to_path_buf(),
        msg,
    };
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let recording = name
        .strip_prefix("joints_")
        .and_then(|s| s.strip_suffix(".txt"))
        .ok_or_else(|| bad("file name does not follow joints_sXX_eYY.txt".into()))?;
    let subject: u32 = recording
        .split('_')
        .next()
        .and_then(|s| s.strip_prefix('s'))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("cannot read subject from '{recording}'")))?;

    let jc = meta.joint_count;
    let mut rows: Vec<(u64, Vec<Joint>)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 1 + 3 * jc {
            return Err(bad(format!(
                "line {line_no}: expected {} values, found {}",
                1 + 3 * jc,
                toks.len()
            )));
        }
        let frame_id: u64 = toks[0]
            .parse()
            .map_err(|_| bad(format!("line {line_no}: bad frame id '{}'", toks[0])))?;
        if rows.last().is_some_and(|(f, _)| *f >= frame_id) {
            continue;
        }
        let mut joints = Vec::with_capacity(jc);
        for c in toks[1..].chunks(3) {
            let mut p = [0.0; 3];
            let mut nan = false;
            for (k, t) in c.iter().enumerate() {
                let v: f64 = t
                    .parse()
                    .map_err(|_| bad(format!("line {line_no}: non-numeric token '{t}'")))?;
                nan |= !v.is_finite();
                p[k] = v;
            }
            joints.push(if nan { Joint::missing() } else { Joint::new(p[0], p[1], p[2]) });
        }
        rows.push((frame_id, joints));
    }

    let mut out = Vec::new();
    for seg in segments.iter().filter(|s| s.recording == recording) {
        let Some((start, end)) = seg.bounds else { continue };
        let label = meta
            .category_names
            .iter()
            .position(|n| n == &seg.action)
            .ok_or_else(|| bad(format!("unknown action '{}'", seg.action)))?
            + 1;
        let frames: Vec<SkeletonFrame> = rows
            .iter()
            .filter(|(f, _)| (start..=end).contains(f))
            .enumerate()
            .map(|(t, (_, j))| SkeletonFrame {
                joints: j.clone(),
                timestamp_index: t,
            })
            .collect();
        if frames.is_empty() {
            return Err(bad(format!("segment {} {start}..{end} has no frames", seg.action)));
        }
        out.push(ActionSequence {
            frames,
            label: Some(label),
            subject_id: subject,
            instance_id: format!("{recording}_{}", seg.action),
        });
    }
    Ok(out)
}
