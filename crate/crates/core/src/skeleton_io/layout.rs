use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint parent map and hip indices of one skeleton model. All indices are
/// 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonLayout {
    pub parents: Vec<Option<usize>>,
    pub hip: usize,
    pub left_hip: usize,
    pub right_hip: usize,
}

impl SkeletonLayout {
    /// MSR-Action3D native order:
    /// 1 left shoulder, 2 right shoulder, 3 neck, 4 spine, 5 left hip,
    /// 6 right hip, 7 hip center, 8 left elbow, 9 right elbow, 10 left wrist,
    /// 11 right wrist, 12 left hand, 13 right hand, 14 left knee,
    /// 15 right knee, 16 left ankle, 17 right ankle, 18 left foot,
    /// 19 right foot, 20 head (1-based, as in the dataset documentation).
    pub fn msr_action3d() -> Self {
        let one_based: [usize; 20] = [3, 3, 4, 7, 7, 7, 0, 1, 2, 8, 9, 10, 11, 5, 6, 14, 15, 16, 17, 3];
        SkeletonLayout {
            parents: one_based.iter().map(|&p| p.checked_sub(1)).collect(),
            hip: 6,
            left_hip: 4,
            right_hip: 5,
        }
    }

    /// Kinect SDK v1 order (UTKinect-Action):
    /// hip center, spine, shoulder center, head, left shoulder, left elbow,
    /// left wrist, left hand, right shoulder, right elbow, right wrist,
    /// right hand, left hip, left knee, left ankle, left foot, right hip,
    /// right knee, right ankle, right foot.
    pub fn kinect_sdk() -> Self {
        let p = [
            None,
            Some(0),
            Some(1),
            Some(2),
            Some(2),
            Some(4),
            Some(5),
            Some(6),
            Some(2),
            Some(8),
            Some(9),
            Some(10),
            Some(0),
            Some(12),
            Some(13),
            Some(14),
            Some(0),
            Some(16),
            Some(17),
            Some(18),
        ];
        SkeletonLayout {
            parents: p.to_vec(),
            hip: 0,
            left_hip: 12,
            right_hip: 16,
        }
    }

    /// OpenNI 15-joint order (Florence3D-Action):
    /// head, neck, torso, left shoulder, left elbow, left wrist,
    /// right shoulder, right elbow, right wrist, left hip, left knee,
    /// left ankle, right hip, right knee, right ankle. The torso joint acts
    /// as the hip center since the model has none.
    pub fn florence3d() -> Self {
        let p = [
            Some(1),
            Some(2),
            None,
            Some(1),
            Some(3),
            Some(4),
            Some(1),
            Some(6),
            Some(7),
            Some(2),
            Some(9),
            Some(10),
            Some(2),
            Some(12),
            Some(13),
        ];
        SkeletonLayout {
            parents: p.to_vec(),
            hip: 2,
            left_hip: 9,
            right_hip: 12,
        }
    }

    /// Layout used by the synthetic generator: 0 hip center, 1 left hip,
    /// 2 right hip, 3 neck, 4/5 left/right shoulder, then two arm chains
    /// alternating left (even) and right (odd).
    pub fn synthetic(joint_count: usize) -> Result<Self> {
        if joint_count < 4 {
            return Err(Error::config("synthetic skeletons need at least 4 joints"));
        }
        let parents = (0..joint_count)
            .map(|j| match j {
                0 => None,
                1..=3 => Some(0),
                4 | 5 => Some(3),
                _ => Some(j - 2),
            })
            .collect();
        Ok(SkeletonLayout {
            parents,
            hip: 0,
            left_hip: 1,
            right_hip: 2,
        })
    }

    /// Joints ordered so every parent precedes its children.
    pub fn root_outward_order(&self) -> Vec<usize> {
        root_outward(&self.parents, self.hip)
    }
}

pub(crate) fn root_outward(parents: &[Option<usize>], root: usize) -> Vec<usize> {
    let mut order = vec![root];
    let mut head = 0;
    while head < order.len() {
        let p = order[head];
        for (j, par) in parents.iter().enumerate() {
            if *par == Some(p) {
                order.push(j);
            }
        }
        head += 1;
    }
    order
}

pub(crate) fn check_tree(parents: &[Option<usize>], root: usize) -> Result<()> {
    if parents.get(root).copied().flatten().is_some() {
        return Err(Error::config("hip joint must be the root of the parent map"));
    }
    let roots = parents.iter().filter(|p| p.is_none()).count();
    if roots != 1 {
        return Err(Error::config(format!("parent map has {roots} roots, expected 1")));
    }
    if root_outward(parents, root).len() != parents.len() {
        return Err(Error::config("parent map is not a tree reachable from the hip joint"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_layouts_are_trees() {
        for l in [
            SkeletonLayout::msr_action3d(),
            SkeletonLayout::kinect_sdk(),
            SkeletonLayout::florence3d(),
            SkeletonLayout::synthetic(6).unwrap(),
            SkeletonLayout::synthetic(11).unwrap(),
        ] {
            check_tree(&l.parents, l.hip).unwrap();
            assert_eq!(l.parents[l.left_hip], Some(l.hip));
            assert_eq!(l.parents[l.right_hip], Some(l.hip));
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let parents = vec![None, Some(2), Some(1)];
        assert!(check_tree(&parents, 0).is_err());
    }
}
