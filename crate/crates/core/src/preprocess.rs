//! View, position and body-size normalization, length resampling and the
//! category / temporal-chunk target vectors.
//!
//! All functions are deterministic and side-effect free.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton_io::{ActionSequence, DatasetMeta, Joint, SkeletonFrame, SkeletonLayout};

pub const DEFAULT_CHUNKS: usize = 7;
pub const DEFAULT_LENGTH: usize = 70;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConfig {
    pub layout: SkeletonLayout,
    /// Bone lengths are taken from this frame.
    pub reference_skeleton: SkeletonFrame,
    pub target_length: usize,
    pub chunk_count: usize,
}

impl NormalizationConfig {
    pub fn new(
        meta: &DatasetMeta,
        reference_skeleton: SkeletonFrame,
        target_length: usize,
        chunk_count: usize,
    ) -> Result<Self> {
        let cfg = NormalizationConfig {
            layout: meta.layout(),
            reference_skeleton,
            target_length,
            chunk_count,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_count == 0 || self.target_length == 0 || self.target_length % self.chunk_count != 0 {
            return Err(Error::config(format!(
                "target length {} must be a positive multiple of chunk count {}",
                self.target_length, self.chunk_count
            )));
        }
        if self.target_length < 2 {
            return Err(Error::config("target length must be at least 2"));
        }
        if self.reference_skeleton.joints.len() != self.layout.parents.len() {
            return Err(Error::config("reference skeleton joint count differs from the layout"));
        }
        reference_bone_lengths(&self.reference_skeleton, &self.layout).map(|_| ())
    }

    /// Reference bone length per joint (distance to its parent; 0 for the root).
    pub fn bone_lengths(&self) -> Result<Vec<f64>> {
        reference_bone_lengths(&self.reference_skeleton, &self.layout)
    }
}

fn reference_bone_lengths(frame: &SkeletonFrame, layout: &SkeletonLayout) -> Result<Vec<f64>> {
    let mut out = vec![0.0; layout.parents.len()];
    for (j, p) in layout.parents.iter().enumerate() {
        if let Some(p) = *p {
            let (a, b) = (&frame.joints[j], &frame.joints[p]);
            if a.is_missing || b.is_missing {
                return Err(Error::config("reference skeleton has missing joints"));
            }
            let len = norm(sub(a.position(), b.position()));
            if !(len > 0.0) {
                return Err(Error::config(format!("reference skeleton bone {p}->{j} has zero length")));
            }
            out[j] = len;
        }
    }
    Ok(out)
}

/// Picks the reference skeleton: the first complete frame of the first
/// sequence in `(instance_id, label, subject)` order that has one.
pub fn select_reference_frame(train: &[&ActionSequence], layout: &SkeletonLayout) -> Result<SkeletonFrame> {
    let mut sorted: Vec<&&ActionSequence> = train.iter().collect();
    sorted.sort_by(|a, b| {
        (a.instance_id.as_str(), a.label, a.subject_id).cmp(&(b.instance_id.as_str(), b.label, b.subject_id))
    });
    sorted
        .iter()
        .flat_map(|s| s.frames.iter())
        .find(|f| reference_bone_lengths(f, layout).is_ok())
        .cloned()
        .ok_or_else(|| Error::data("no complete skeleton frame available as reference"))
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

/// Translates every joint so the hip joint sits at the origin.
pub fn hip_center(frame: &SkeletonFrame, cfg: &NormalizationConfig) -> Result<SkeletonFrame> {
    let hip = frame
        .joints
        .get(cfg.layout.hip)
        .ok_or_else(|| Error::data("hip joint index out of range"))?;
    if hip.is_missing {
        return Err(Error::data(format!(
            "hip joint missing at frame {}",
            frame.timestamp_index
        )));
    }
    let o = hip.position();
    let mut out = frame.clone();
    for j in &mut out.joints {
        *j = j.with_position(sub(j.position(), o));
    }
    // exact zero, independent of rounding in the subtraction
    out.joints[cfg.layout.hip] = out.joints[cfg.layout.hip].with_position([0.0; 3]);
    Ok(out)
}

/// Rotation taking the unit vector `v` onto `+x`.
fn rotation_onto_x(v: [f64; 3]) -> [[f64; 3]; 3] {
    // For c < 0 the closed form below loses precision, so flip half a turn
    // about +y first.
    let flip = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
    let (pre, v) = if v[0] < 0.0 {
        (flip, mat_vec(&flip, v))
    } else {
        ([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], v)
    };
    // w = v × e_x, c = v · e_x; R = cI + [w]x + w wᵀ / (1 + c)
    let w = [0.0, v[2], -v[1]];
    let c = v[0];
    let k = 1.0 / (1.0 + c);
    let r = [
        [c + w[0] * w[0] * k, -w[2] + w[0] * w[1] * k, w[1] + w[0] * w[2] * k],
        [w[2] + w[1] * w[0] * k, c + w[1] * w[1] * k, -w[0] + w[1] * w[2] * k],
        [-w[1] + w[2] * w[0] * k, w[0] + w[2] * w[1] * k, c + w[2] * w[2] * k],
    ];
    mat_mul(&r, &pre)
}

/// Rotates a hip-centered frame about the origin so the left→right hip
/// vector points along `+x`.
pub fn align_hip_bone(frame: &SkeletonFrame, cfg: &NormalizationConfig) -> Result<SkeletonFrame> {
    let (l, r) = (cfg.layout.left_hip, cfg.layout.right_hip);
    let (lj, rj) = (frame.joints[l], frame.joints[r]);
    if lj.is_missing || rj.is_missing {
        return Err(Error::data(format!("hip joints missing at frame {}", frame.timestamp_index)));
    }
    let v = sub(rj.position(), lj.position());
    let n = norm(v);
    if !(n > 0.0) {
        return Err(Error::data(format!("coincident hip joints at frame {}", frame.timestamp_index)));
    }
    let rot = rotation_onto_x([v[0] / n, v[1] / n, v[2] / n]);
    let mut out = frame.clone();
    for j in &mut out.joints {
        *j = j.with_position(mat_vec(&rot, j.position()));
    }
    Ok(out)
}

fn scale_frame(frame: &SkeletonFrame, layout: &SkeletonLayout, ref_len: &[f64]) -> Result<SkeletonFrame> {
    let parents = &layout.parents;
    let order = layout.root_outward_order();
    let orig: Vec<[f64; 3]> = frame.joints.iter().map(Joint::position).collect();
    let present = |j: usize| !frame.joints[j].is_missing;

    // Bones with a missing parent are rescaled by the frame's mean length
    // ratio, measured from their nearest present ancestor.
    let mut ratios = Vec::new();
    for j in 0..parents.len() {
        if let Some(p) = parents[j] {
            if present(j) && present(p) {
                let len = norm(sub(orig[j], orig[p]));
                if len == 0.0 {
                    return Err(Error::data(format!(
                        "zero-length bone {p}->{j} at frame {}",
                        frame.timestamp_index
                    )));
                }
                ratios.push(ref_len[j] / len);
            }
        }
    }
    let frame_ratio = if ratios.is_empty() {
        1.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    };

    let mut out = frame.clone();
    let mut newpos = orig.clone();
    for &j in &order[1..] {
        let p = parents[j].expect("non-root joint");
        if !present(j) {
            newpos[j] = newpos[p];
            continue;
        }
        let mut anc = p;
        while !present(anc) {
            match parents[anc] {
                Some(a) => anc = a,
                None => break,
            }
        }
        let d = sub(orig[j], orig[anc]);
        let scale = if anc == p {
            ref_len[j] / norm(d)
        } else {
            frame_ratio
        };
        newpos[j] = [0, 1, 2].map(|a| newpos[anc][a] + d[a] * scale);
    }
    for (j, joint) in out.joints.iter_mut().enumerate() {
        if present(j) {
            *joint = joint.with_position(newpos[j]);
        }
    }
    Ok(out)
}

/// Rescales every bone to the reference skeleton's length, keeping its
/// direction, walking the kinematic tree from the hip outward.
pub fn scale_normalize(sequence: &ActionSequence, cfg: &NormalizationConfig) -> Result<ActionSequence> {
    let ref_len = cfg.bone_lengths()?;
    let frames = sequence
        .frames
        .iter()
        .map(|f| scale_frame(f, &cfg.layout, &ref_len))
        .collect::<Result<Vec<_>>>()?;
    Ok(ActionSequence {
        frames,
        ..sequence.clone()
    })
}

/// Linear interpolation onto `target_len` uniformly spaced time points; the
/// first and last frames are kept. An interpolated joint is missing if either
/// contributing frame has it missing.
pub fn resample(sequence: &ActionSequence, target_len: usize) -> Result<ActionSequence> {
    let n = sequence.frames.len();
    if n < 2 {
        return Err(Error::data(format!(
            "sequence {} has {n} frame(s); resampling needs at least 2",
            sequence.instance_id
        )));
    }
    if target_len < 2 {
        return Err(Error::config("resampling target length must be at least 2"));
    }
    let frames = (0..target_len)
        .map(|t| {
            let pos = t as f64 * (n - 1) as f64 / (target_len - 1) as f64;
            let i0 = (pos.floor() as usize).min(n - 1);
            let w = pos - i0 as f64;
            let joints = if w == 0.0 || i0 == n - 1 {
                sequence.frames[i0].joints.clone()
            } else {
                let (a, b) = (&sequence.frames[i0], &sequence.frames[i0 + 1]);
                a.joints
                    .iter()
                    .zip(&b.joints)
                    .map(|(ja, jb)| {
                        if ja.is_missing || jb.is_missing {
                            Joint::missing()
                        } else {
                            let pa = ja.position();
                            let pb = jb.position();
                            Joint {
                                x: pa[0] + w * (pb[0] - pa[0]),
                                y: pa[1] + w * (pb[1] - pa[1]),
                                z: pa[2] + w * (pb[2] - pa[2]),
                                confidence: match (ja.confidence, jb.confidence) {
                                    (Some(ca), Some(cb)) => Some(ca + w * (cb - ca)),
                                    _ => None,
                                },
                                is_missing: false,
                            }
                        }
                    })
                    .collect()
            };
            SkeletonFrame {
                joints,
                timestamp_index: t,
            }
        })
        .collect();
    Ok(ActionSequence {
        frames,
        ..sequence.clone()
    })
}

/// Full chain: hip centering and hip-bone alignment per frame, bone-length
/// normalization, then resampling to the configured length.
pub fn preprocess_sequence(sequence: &ActionSequence, cfg: &NormalizationConfig) -> Result<ActionSequence> {
    let frames = sequence
        .frames
        .iter()
        .map(|f| hip_center(f, cfg).and_then(|f| align_hip_bone(&f, cfg)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::data(format!("sequence {}: {e}", sequence.instance_id)))?;
    let aligned = ActionSequence {
        frames,
        ..sequence.clone()
    };
    let scaled = scale_normalize(&aligned, cfg)
        .map_err(|e| Error::data(format!("sequence {}: {e}", sequence.instance_id)))?;
    resample(&scaled, cfg.target_length)
}

/// One-hot relative temporal position: chunk `⌊i · chunks / T⌋`.
pub fn temporal_chunk_vector(frame_index: usize, length: usize, chunk_count: usize) -> Result<Vec<f64>> {
    if frame_index >= length {
        return Err(Error::data(format!("frame index {frame_index} outside 0..{length}")));
    }
    if chunk_count == 0 {
        return Err(Error::config("chunk count must be positive"));
    }
    let mut v = vec![0.0; chunk_count];
    v[frame_index * chunk_count / length] = 1.0;
    Ok(v)
}

/// One-hot category vector for a 1-based label.
pub fn one_hot_category(label: usize, category_count: usize) -> Result<Vec<f64>> {
    if label == 0 || label > category_count {
        return Err(Error::data(format!("label {label} outside 1..={category_count}")));
    }
    let mut v = vec![0.0; category_count];
    v[label - 1] = 1.0;
    Ok(v)
}

/// Training-only side targets of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintTargets {
    pub c: Vec<f64>,
    pub t: Vec<f64>,
}

impl ConstraintTargets {
    pub fn new(label: usize, category_count: usize, frame_index: usize, length: usize, chunk_count: usize) -> Result<Self> {
        Ok(ConstraintTargets {
            c: one_hot_category(label, category_count)?,
            t: temporal_chunk_vector(frame_index, length, chunk_count)?,
        })
    }
}

/// `(x, y, z)` per joint in joint order; missing joints give zeros.
pub fn flatten_frame(frame: &SkeletonFrame) -> Vec<f64> {
    frame
        .joints
        .iter()
        .flat_map(|j| if j.is_missing { [0.0; 3] } else { j.position() })
        .collect()
}

/// Inverse of [`flatten_frame`] for complete frames.
pub fn unflatten_frame(values: &[f64], timestamp_index: usize) -> Result<SkeletonFrame> {
    if values.len() % 3 != 0 {
        return Err(Error::Dimension {
            expected: values.len() / 3 * 3,
            got: values.len(),
        });
    }
    Ok(SkeletonFrame {
        joints: values.chunks(3).map(|c| Joint::new(c[0], c[1], c[2])).collect(),
        timestamp_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(points: &[[f64; 3]]) -> SkeletonFrame {
        SkeletonFrame {
            joints: points.iter().map(|p| Joint::new(p[0], p[1], p[2])).collect(),
            timestamp_index: 0,
        }
    }

    /// 0 = hip, 1 = left hip, 2 = right hip, 3 = chain off the hip.
    fn toy_cfg(reference: SkeletonFrame) -> NormalizationConfig {
        let layout = SkeletonLayout {
            parents: vec![None, Some(0), Some(0), Some(0)],
            hip: 0,
            left_hip: 1,
            right_hip: 2,
        };
        NormalizationConfig {
            layout,
            reference_skeleton: reference,
            target_length: 70,
            chunk_count: 7,
        }
    }

    fn toy_frame() -> SkeletonFrame {
        frame(&[[1.0, 2.0, 3.0], [0.0, 2.0, 3.0], [2.0, 2.0, 3.0], [1.0, 3.0, 3.5]])
    }

    fn pairwise(f: &SkeletonFrame) -> Vec<f64> {
        let mut out = Vec::new();
        for a in &f.joints {
            for b in &f.joints {
                out.push(norm(sub(a.position(), b.position())));
            }
        }
        out
    }

    #[test]
    fn hip_center_translates_everything() {
        let cfg = toy_cfg(toy_frame());
        let f = hip_center(&toy_frame(), &cfg).unwrap();
        assert_eq!(f.joints[0].position(), [0.0; 3]);
        assert_eq!(f.joints[3].position(), [0.0, 1.0, 0.5]);
        assert_eq!(hip_center(&f, &cfg).unwrap(), f);
    }

    #[test]
    fn hip_center_needs_the_hip() {
        let cfg = toy_cfg(toy_frame());
        let mut f = toy_frame();
        f.joints[0] = Joint::missing();
        assert!(hip_center(&f, &cfg).is_err());
    }

    #[test]
    fn aligned_hip_bone_is_left_alone() {
        let cfg = toy_cfg(toy_frame());
        let f = hip_center(&toy_frame(), &cfg).unwrap();
        let g = align_hip_bone(&f, &cfg).unwrap();
        for (a, b) in f.joints.iter().zip(&g.joints) {
            for k in 0..3 {
                assert!((a.position()[k] - b.position()[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hip_bone_along_y_rotates_minus_quarter_turn_about_z() {
        // left hip at (0,-1,0), right hip at (0,1,0): bone along +y.
        let f = frame(&[[0.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 2.0]]);
        let cfg = toy_cfg(f.clone());
        let g = align_hip_bone(&f, &cfg).unwrap();
        // Rz(-90°) maps (x, y, z) to (y, -x, z).
        let expect = [[0.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, -1.0, 2.0]];
        for (j, e) in g.joints.iter().zip(expect) {
            for k in 0..3 {
                assert!((j.position()[k] - e[k]).abs() < 1e-12, "{:?} vs {:?}", j.position(), e);
            }
        }
    }

    #[test]
    fn reversed_hip_bone_is_flipped() {
        let f = frame(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 1e-9, 0.0], [0.3, 0.7, -0.2]]);
        let cfg = toy_cfg(f.clone());
        let g = align_hip_bone(&f, &cfg).unwrap();
        let v = sub(g.joints[2].position(), g.joints[1].position());
        assert!(v[0] > 0.0 && v[1].abs() < 1e-9 && v[2].abs() < 1e-9);
        let (pa, pb) = (pairwise(&f), pairwise(&g));
        for (a, b) in pa.iter().zip(&pb) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn coincident_hips_are_rejected() {
        let f = frame(&[[0.0; 3], [0.5, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        assert!(align_hip_bone(&f, &toy_cfg(toy_frame())).is_err());
    }

    #[test]
    fn scale_chain_to_reference_lengths() {
        // hip(0) -> 1 -> 3 chain with bone lengths (1, 1), reference (2, 3)
        let layout = SkeletonLayout {
            parents: vec![None, Some(0), Some(0), Some(1)],
            hip: 0,
            left_hip: 1,
            right_hip: 2,
        };
        let reference = frame(&[[0.0; 3], [2.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [2.0, 3.0, 0.0]]);
        let cfg = NormalizationConfig {
            layout,
            reference_skeleton: reference,
            target_length: 7,
            chunk_count: 7,
        };
        let f = frame(&[[0.0; 3], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]);
        let seq = ActionSequence {
            frames: vec![f],
            label: Some(1),
            subject_id: 1,
            instance_id: "t".into(),
        };
        let out = scale_normalize(&seq, &cfg).unwrap();
        let j = &out.frames[0].joints;
        assert_eq!(j[1].position(), [0.0, 2.0, 0.0]);
        assert_eq!(j[3].position(), [0.0, 2.0, 3.0]);
        assert_eq!(j[2].position(), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_length_bone_is_rejected() {
        let cfg = toy_cfg(toy_frame());
        let f = frame(&[[0.0; 3], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0; 3]]);
        let seq = ActionSequence {
            frames: vec![f],
            label: None,
            subject_id: 0,
            instance_id: "z".into(),
        };
        assert!(scale_normalize(&seq, &cfg).is_err());
    }

    #[test]
    fn resample_midpoint_and_identity() {
        let seq = ActionSequence {
            frames: vec![
                frame(&[[0.0, 0.0, 0.0], [2.0, 4.0, 6.0]]),
                SkeletonFrame {
                    timestamp_index: 1,
                    ..frame(&[[1.0, 1.0, 1.0], [4.0, 4.0, 4.0]])
                },
            ],
            label: None,
            subject_id: 0,
            instance_id: "r".into(),
        };
        let r = resample(&seq, 3).unwrap();
        assert_eq!(r.frames[1].joints[0].position(), [0.5, 0.5, 0.5]);
        assert_eq!(r.frames[1].joints[1].position(), [3.0, 4.0, 5.0]);
        assert_eq!(r.frames[2].joints, seq.frames[1].joints);
        assert_eq!(resample(&seq, 2).unwrap(), seq);
        let single = ActionSequence {
            frames: vec![seq.frames[0].clone()],
            ..seq.clone()
        };
        assert!(resample(&single, 3).is_err());
    }

    #[test]
    fn chunk_vectors() {
        let v = temporal_chunk_vector(0, 70, 7).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(temporal_chunk_vector(69, 70, 7).unwrap()[6], 1.0);
        assert_eq!(temporal_chunk_vector(35, 70, 7).unwrap()[3], 1.0);
        assert!(temporal_chunk_vector(70, 70, 7).is_err());
        // 10 frames per chunk when 7 divides 70
        for k in 0..7 {
            for i in k * 10..(k + 1) * 10 {
                assert_eq!(temporal_chunk_vector(i, 70, 7).unwrap()[k], 1.0);
            }
        }
    }

    #[test]
    fn category_vectors() {
        assert_eq!(one_hot_category(1, 8).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(one_hot_category(8, 8).unwrap()[7], 1.0);
        for l in 1..=8 {
            assert_eq!(one_hot_category(l, 8).unwrap().iter().sum::<f64>(), 1.0);
        }
        assert!(one_hot_category(0, 8).is_err());
        assert!(one_hot_category(9, 8).is_err());
    }

    #[test]
    fn flatten_layout() {
        let meta = DatasetMeta::msr_action3d();
        let f = SkeletonFrame {
            joints: (0..meta.joint_count).map(|i| Joint::new(i as f64, 0.5, -1.0)).collect(),
            timestamp_index: 3,
        };
        let v = flatten_frame(&f);
        assert_eq!(v.len(), 60);
        assert_eq!(&v[3..6], &[1.0, 0.5, -1.0]);
        assert_eq!(unflatten_frame(&v, 3).unwrap(), f);
        let missing = SkeletonFrame {
            joints: vec![Joint::missing(); 20],
            timestamp_index: 0,
        };
        assert!(flatten_frame(&missing).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn length_must_be_multiple_of_chunks() {
        let mut cfg = toy_cfg(toy_frame());
        cfg.target_length = 71;
        assert!(cfg.validate().is_err());
    }
}
