use super::{ActionSequence, DatasetMeta, Joint, SkeletonFrame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsrFileName {
    pub action: usize,
    pub subject: u32,
    pub episode: u32,
}

/// Decodes `aXX_sYY_eZZ_skeleton3D.txt`.
pub fn parse_msr_file_name(name: &str) -> Option<MsrFileName> {
    let stem = name.strip_suffix("_skeleton3D.txt")?;
    let mut parts = stem.split('_');
    let mut field = |prefix: char| -> Option<u32> {
        let p = parts.next()?;
        let digits = p.strip_prefix(prefix)?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok()
    };
    let action = field('a')? as usize;
    let subject = field('s')?;
    let episode = field('e')?;
    if parts.next().is_some() {
        return None;
    }
    Some(MsrFileName {
        action,
        subject,
        episode,
    })
}

/// Parses one MSR-Action3D `skeleton3D` file: `joint_count` rows per frame,
/// each row `x y z confidence`. Blank lines are ignored. Joints with
/// confidence 0 are flagged missing; their coordinates are kept.
///
/// Label, subject and instance come from the file name, see
/// [`super::parse_dataset`]; this function leaves them empty.
pub fn parse_msr_skeleton(text: &str, meta: &DatasetMeta) -> Result<ActionSequence> {
    let jc = meta.joint_count;
    if jc == 0 {
        return Err(Error::config("joint_count must be positive"));
    }
    let mut joints = Vec::new();
    let mut last_line = 0;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        last_line = line_no;
        let mut vals = [0.0f64; 4];
        let mut n = 0;
        for tok in line.split_whitespace() {
            if n == 4 {
                return Err(Error::parse(line_no, "more than 4 values on row"));
            }
            vals[n] = tok
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line_no, format!("non-numeric token '{tok}'")))?;
            n += 1;
        }
        if n != 4 {
            return Err(Error::parse(line_no, format!("expected 4 values, found {n}")));
        }
        let conf = vals[3];
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::parse(line_no, format!("confidence {conf} outside [0, 1]")));
        }
        joints.push(Joint {
            x: vals[0],
            y: vals[1],
            z: vals[2],
            confidence: Some(conf),
            is_missing: conf == 0.0,
        });
    }
    if joints.is_empty() {
        return Err(Error::parse(1, "empty skeleton file"));
    }
    if joints.len() % jc != 0 {
        return Err(Error::parse(
            last_line,
            format!("{} joint rows is not a multiple of {jc}", joints.len()),
        ));
    }
    let frames = joints
        .chunks(jc)
        .enumerate()
        .map(|(t, c)| SkeletonFrame {
            joints: c.to_vec(),
            timestamp_index: t,
        })
        .collect();
    Ok(ActionSequence {
        frames,
        label: None,
        subject_id: 0,
        instance_id: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize, conf_zero: &[usize]) -> String {
        (0..n)
            .map(|i| {
                let c = if conf_zero.contains(&i) { 0.0 } else { 1.0 };
                format!("{} {} {} {}\n", i as f64 * 0.5, -(i as f64), 2.25, c)
            })
            .collect()
    }

    #[test]
    fn one_frame_file() {
        let meta = DatasetMeta::msr_action3d();
        let seq = parse_msr_skeleton(&rows(20, &[]), &meta).unwrap();
        assert_eq!(seq.frames.len(), 1);
        assert_eq!(seq.frames[0].joints.len(), 20);
        assert!(seq.frames[0].joints.iter().all(|j| !j.is_missing));
    }

    #[test]
    fn partial_frame_reports_last_row() {
        let meta = DatasetMeta::msr_action3d();
        match parse_msr_skeleton(&rows(41, &[]), &meta) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 41),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_confidence_flags_missing_and_keeps_coordinates() {
        let meta = DatasetMeta::msr_action3d();
        let seq = parse_msr_skeleton(&rows(40, &[5, 25]), &meta).unwrap();
        let j = seq.frames[0].joints[5];
        assert!(j.is_missing);
        assert_eq!((j.x, j.y, j.z), (2.5, -5.0, 2.25));
        assert!(seq.frames[1].joints[5].is_missing);
        assert!(!seq.frames[1].joints[4].is_missing);
        assert_eq!(seq.frames[1].timestamp_index, 1);
    }

    #[test]
    fn non_numeric_token_names_line() {
        let meta = DatasetMeta::msr_action3d();
        let mut text = rows(20, &[]);
        text.push_str("1 2 x 1\n");
        match parse_msr_skeleton(&text, &meta) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 21);
                assert!(msg.contains("'x'"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let meta = DatasetMeta::msr_action3d();
        assert!(parse_msr_skeleton("", &meta).is_err());
        assert!(parse_msr_skeleton("\n\n", &meta).is_err());
    }

    #[test]
    fn file_name_convention() {
        assert_eq!(
            parse_msr_file_name("a01_s03_e02_skeleton3D.txt"),
            Some(MsrFileName {
                action: 1,
                subject: 3,
                episode: 2
            })
        );
        assert_eq!(parse_msr_file_name("a01_s03_skeleton3D.txt"), None);
        assert_eq!(parse_msr_file_name("a1x_s03_e02_skeleton3D.txt"), None);
        assert_eq!(parse_msr_file_name("a01_s03_e02_depth.bin"), None);
    }
}
