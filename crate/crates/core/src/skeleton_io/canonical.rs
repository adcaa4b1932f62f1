//! Line-delimited JSON interchange format, one sequence per line:
//!
//! ```text
//! {"label":1,"subject":3,"instance":"e02","joint_count":20,"frames":[[[x,y,z,conf,is_missing],...],...]}
//! ```
//!
//! Reals are rounded to 9 significant digits and then written in their
//! shortest round-trip form, so output is byte-stable and any value that
//! already has at most 9 significant digits survives a write/parse cycle
//! unchanged.

use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeTuple;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ActionSequence, DatasetMeta, Joint, SkeletonFrame};
use crate::error::{Error, Result};

/// Rounds to 9 significant digits.
pub fn format_real(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

struct CanonJoint(Joint);

impl Serialize for CanonJoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let j = &self.0;
        let mut t = s.serialize_tuple(5)?;
        t.serialize_element(&format_real(j.x))?;
        t.serialize_element(&format_real(j.y))?;
        t.serialize_element(&format_real(j.z))?;
        t.serialize_element(&j.confidence.map(format_real))?;
        t.serialize_element(&j.is_missing)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for CanonJoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = CanonJoint;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("[x, y, z, confidence|null, is_missing]")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<CanonJoint, A::Error> {
                let x: f64 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let y: f64 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(1, &self))?;
                let z: f64 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(2, &self))?;
                let confidence: Option<f64> =
                    seq.next_element()?.ok_or_else(|| de::Error::invalid_length(3, &self))?;
                let is_missing: bool = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(4, &self))?;
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::invalid_length(6, &self));
                }
                Ok(CanonJoint(Joint {
                    x,
                    y,
                    z,
                    confidence,
                    is_missing,
                }))
            }
        }
        d.deserialize_tuple(5, V)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    label: Option<usize>,
    subject: u32,
    instance: String,
    joint_count: usize,
    frames: Vec<Vec<CanonJoint>>,
}

pub fn write_canonical(dataset: &[ActionSequence], meta: &DatasetMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for seq in dataset {
        seq.validate(meta.joint_count)?;
        let rec = Record {
            label: seq.label,
            subject: seq.subject_id,
            instance: seq.instance_id.clone(),
            joint_count: meta.joint_count,
            frames: seq
                .frames
                .iter()
                .map(|f| f.joints.iter().map(|j| CanonJoint(*j)).collect())
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn parse_canonical(text: &str) -> Result<Vec<ActionSequence>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::parse(line_no, e.to_string()))?;
        let frames: Vec<SkeletonFrame> = rec
            .frames
            .into_iter()
            .enumerate()
            .map(|(t, joints)| SkeletonFrame {
                joints: joints.into_iter().map(|j| j.0).collect(),
                timestamp_index: t,
            })
            .collect();
        let seq = ActionSequence {
            frames,
            label: rec.label,
            subject_id: rec.subject,
            instance_id: rec.instance,
        };
        seq.validate(rec.joint_count)
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        out.push(seq);
    }
    Ok(out)
}
