use super::{ActionSequence, DatasetMeta, Joint, SkeletonFrame};
use crate::error::{Error, Result};

/// Parses the Florence3D-Action world-coordinate file. Each row is
/// `video_id actor_id action_id` followed by `3 · joint_count` coordinates.
/// Consecutive rows with the same video id form one sequence.
pub fn parse_florence(text: &str, meta: &DatasetMeta) -> Result<Vec<ActionSequence>> {
    let jc = meta.joint_count;
    let mut out: Vec<ActionSequence> = Vec::new();
    let mut current_video: Option<String> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 3 + 3 * jc {
            return Err(Error::parse(
                line_no,
                format!("expected {} values, found {}", 3 + 3 * jc, toks.len()),
            ));
        }
        let int = |t: &str| -> Result<u32> {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                .map(|v| v as u32)
                .ok_or_else(|| Error::parse(line_no, format!("bad id '{t}'")))
        };
        let video = toks[0].to_string();
        let actor = int(toks[1])?;
        let action = int(toks[2])? as usize;
        if action == 0 || action > meta.category_count {
            return Err(Error::parse(line_no, format!("action {action} outside 1..={}", meta.category_count)));
        }
        let mut joints = Vec::with_capacity(jc);
        for c in toks[3..].chunks(3) {
            let mut p = [0.0; 3];
            for (k, t) in c.iter().enumerate() {
                p[k] = t
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(line_no, format!("non-numeric token '{t}'")))?;
            }
            joints.push(Joint::new(p[0], p[1], p[2]));
        }
        if current_video.as_deref() != Some(video.as_str()) {
            out.push(ActionSequence {
                frames: Vec::new(),
                label: Some(action),
                subject_id: actor,
                instance_id: video.clone(),
            });
            current_video = Some(video);
        }
        let seq = out.last_mut().expect("sequence pushed above");
        if seq.label != Some(action) || seq.subject_id != actor {
            return Err(Error::parse(line_no, "actor/action changes within one video"));
        }
        let t = seq.frames.len();
        seq.frames.push(SkeletonFrame {
            joints,
            timestamp_index: t,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(video: u32, actor: u32, action: u32, v: f64) -> String {
        let coords: Vec<String> = (0..45).map(|i| format!("{}", v + i as f64)).collect();
        format!("{video} {actor} {action} {}\n", coords.join(" "))
    }

    #[test]
    fn groups_rows_by_video() {
        let meta = DatasetMeta::florence3d();
        let text = [row(1, 1, 1, 0.0), row(1, 1, 1, 1.0), row(2, 3, 9, 5.0)].concat();
        let seqs = parse_florence(&text, &meta).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].frames.len(), 2);
        assert_eq!((seqs[1].label, seqs[1].subject_id), (Some(9), 3));
        assert_eq!(seqs[1].frames[0].joints[14].z, 5.0 + 44.0);
    }

    #[test]
    fn short_row_is_rejected() {
        let meta = DatasetMeta::florence3d();
        assert!(matches!(
            parse_florence("1 1 1 0.0 1.0\n", &meta),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
