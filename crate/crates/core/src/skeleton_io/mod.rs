//! Skeleton data model, raw dataset parsers, the canonical JSONL format and
//! the synthetic dataset generator.
//!
//! Frame timestamps are always renumbered `0..n` in file order; raw frame ids
//! (UTKinect) are only used to cut action segments.

mod canonical;
mod florence;
mod layout;
mod msr;
mod synthetic;
mod utkinect;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use canonical::{format_real, parse_canonical, write_canonical};
pub use florence::parse_florence;
pub use layout::SkeletonLayout;
pub use msr::{parse_msr_file_name, parse_msr_skeleton, MsrFileName};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use utkinect::{parse_utkinect, UtkSegment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub confidence: Option<f64>,
    pub is_missing: bool,
}

impl Joint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Joint {
            x,
            y,
            z,
            confidence: None,
            is_missing: false,
        }
    }

    pub fn missing() -> Self {
        Joint {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            confidence: Some(0.0),
            is_missing: true,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn with_position(&self, p: [f64; 3]) -> Self {
        Joint {
            x: p[0],
            y: p[1],
            z: p[2],
            ..*self
        }
    }

    pub fn is_valid(&self) -> bool {
        let conf_ok = self.confidence.map_or(true, |c| (0.0..=1.0).contains(&c));
        let coords_ok = self.is_missing || (self.x.is_finite() && self.y.is_finite() && self.z.is_finite());
        conf_ok && coords_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFrame {
    pub joints: Vec<Joint>,
    pub timestamp_index: usize,
}

impl SkeletonFrame {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn has_missing(&self) -> bool {
        self.joints.iter().any(|j| j.is_missing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSequence {
    pub frames: Vec<SkeletonFrame>,
    /// 1-based category index.
    pub label: Option<usize>,
    pub subject_id: u32,
    pub instance_id: String,
}

impl ActionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::data(format!("sequence {} has no frames", self.instance_id)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.joints.len() != joint_count {
                return Err(Error::data(format!(
                    "sequence {} frame {i}: {} joints, expected {joint_count}",
                    self.instance_id,
                    f.joints.len()
                )));
            }
            if i > 0 && f.timestamp_index <= self.frames[i - 1].timestamp_index {
                return Err(Error::data(format!(
                    "sequence {}: timestamps not strictly increasing at frame {i}",
                    self.instance_id
                )));
            }
            if let Some(bad) = f.joints.iter().position(|j| !j.is_valid()) {
                return Err(Error::data(format!(
                    "sequence {} frame {i} joint {bad}: invalid coordinates or confidence",
                    self.instance_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub joint_count: usize,
    pub category_count: usize,
    pub sequence_count: usize,
    pub hip_joint_index: usize,
    pub left_hip_index: usize,
    pub right_hip_index: usize,
    pub category_names: Vec<String>,
    /// Kinematic tree: `parents[j]` is the parent joint of `j`, `None` for
    /// the root (the hip center).
    pub parents: Vec<Option<usize>>,
}

impl DatasetMeta {
    pub fn from_layout(layout: &SkeletonLayout, category_names: Vec<String>) -> Self {
        DatasetMeta {
            joint_count: layout.parents.len(),
            category_count: category_names.len(),
            sequence_count: 0,
            hip_joint_index: layout.hip,
            left_hip_index: layout.left_hip,
            right_hip_index: layout.right_hip,
            category_names,
            parents: layout.parents.clone(),
        }
    }

    pub fn msr_action3d() -> Self {
        let names = MSR_ACTIONS.iter().map(|s| s.to_string()).collect();
        Self::from_layout(&SkeletonLayout::msr_action3d(), names)
    }

    pub fn utkinect() -> Self {
        let names = UTK_ACTIONS.iter().map(|s| s.to_string()).collect();
        Self::from_layout(&SkeletonLayout::kinect_sdk(), names)
    }

    pub fn florence3d() -> Self {
        let names = FLORENCE_ACTIONS.iter().map(|s| s.to_string()).collect();
        Self::from_layout(&SkeletonLayout::florence3d(), names)
    }

    pub fn validate(&self) -> Result<()> {
        if self.category_count < 2 {
            return Err(Error::config("at least two categories are required"));
        }
        if self.category_names.len() != self.category_count {
            return Err(Error::config("category_names length differs from category_count"));
        }
        for (name, idx) in [
            ("hip_joint_index", self.hip_joint_index),
            ("left_hip_index", self.left_hip_index),
            ("right_hip_index", self.right_hip_index),
        ] {
            if idx >= self.joint_count {
                return Err(Error::config(format!("{name} {idx} out of range")));
            }
        }
        if self.parents.len() != self.joint_count {
            return Err(Error::config("parent map length differs from joint_count"));
        }
        layout::check_tree(&self.parents, self.hip_joint_index)
    }

    pub fn layout(&self) -> SkeletonLayout {
        SkeletonLayout {
            parents: self.parents.clone(),
            hip: self.hip_joint_index,
            left_hip: self.left_hip_index,
            right_hip: self.right_hip_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Msr,
    Utkinect,
    Florence,
    Canonical,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msr" => Ok(DatasetFormat::Msr),
            "utkinect" => Ok(DatasetFormat::Utkinect),
            "florence" => Ok(DatasetFormat::Florence),
            "canonical" => Ok(DatasetFormat::Canonical),
            other => Err(Error::config(format!("unknown dataset format '{other}'"))),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::BadPath {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::BadPath {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Reads a dataset in any supported layout.
///
/// * `msr`: one `aXX_sYY_eZZ_skeleton3D.txt` file per sequence.
/// * `utkinect`: `joints_sXX_eYY.txt` recordings plus the `actionLabel.txt`
///   segmentation index (must be among `paths`).
/// * `florence`: the single whitespace-separated world-coordinate file.
/// * `canonical`: one or more JSONL files, concatenated in order.
pub fn parse_dataset(
    format: DatasetFormat,
    paths: &[PathBuf],
    meta: &DatasetMeta,
) -> Result<Vec<ActionSequence>> {
    let mut out = Vec::new();
    match format {
        DatasetFormat::Msr => {
            for p in paths {
                let name = p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .unwrap_or_default();
                let id = parse_msr_file_name(name).ok_or_else(|| Error::BadPath {
                    path: p.clone(),
                    msg: "file name does not follow aXX_sYY_eZZ_skeleton3D.txt".into(),
                })?;
                if id.action == 0 || id.action > meta.category_count {
                    return Err(Error::BadPath {
                        path: p.clone(),
                        msg: format!("action a{:02} outside 1..={}", id.action, meta.category_count),
                    });
                }
                let text = read_text(p)?;
                let mut seq = with_path(p, parse_msr_skeleton(&text, meta))?;
                seq.label = Some(id.action);
                seq.subject_id = id.subject;
                seq.instance_id = format!("e{:02}", id.episode);
                out.push(seq);
            }
        }
        DatasetFormat::Utkinect => {
            if paths.is_empty() {
                return Ok(out);
            }
            let (index, recordings): (Vec<&PathBuf>, Vec<&PathBuf>) = paths
                .iter()
                .partition(|p| p.file_name().and_then(|n| n.to_str()) == Some("actionLabel.txt"));
            let index = index.first().ok_or_else(|| Error::BadPath {
                path: paths[0].clone(),
                msg: "UTKinect input needs the actionLabel.txt index file".into(),
            })?;
            let index_text = read_text(index)?;
            let segments = with_path(index, utkinect::parse_action_index(&index_text))?;
            for p in recordings {
                let text = read_text(p)?;
                out.extend(parse_utkinect(p, &text, &segments, meta)?);
            }
        }
        DatasetFormat::Florence => {
            for p in paths {
                let text = read_text(p)?;
                out.extend(with_path(p, parse_florence(&text, meta))?);
            }
        }
        DatasetFormat::Canonical => {
            for p in paths {
                let text = read_text(p)?;
                out.extend(with_path(p, parse_canonical(&text))?);
            }
        }
    }
    for s in &out {
        s.validate(meta.joint_count)?;
    }
    Ok(out)
}

/// Action names in dataset order (`a01` .. `a20`).
pub const MSR_ACTIONS: [&str; 20] = [
    "high arm wave",
    "horizontal arm wave",
    "hammer",
    "hand catch",
    "forward punch",
    "high throw",
    "draw x",
    "draw tick",
    "draw circle",
    "hand clap",
    "two hand wave",
    "side boxing",
    "bend",
    "forward kick",
    "side kick",
    "jogging",
    "tennis swing",
    "tennis serve",
    "golf swing",
    "pickup and throw",
];

/// Action names as spelled in UTKinect's `actionLabel.txt`.
pub const UTK_ACTIONS: [&str; 10] = [
    "walk", "sitDown", "standUp", "pickUp", "carry", "throw", "push", "pull", "waveHands", "clapHands",
];

pub const FLORENCE_ACTIONS: [&str; 9] = [
    "wave",
    "drink from a bottle",
    "answer phone",
    "clap",
    "tight lace",
    "sit down",
    "stand up",
    "read watch",
    "bow",
];
