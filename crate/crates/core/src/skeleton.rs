//! Skeleton and animation data model with forward kinematics.
//!
//! Joints are bone heads. Each joint stores the offset of its head from its
//! parent's head in the rest pose; local rotations compose in the parent
//! frame, so `global_j = global_parent * local_j`.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Quaternions read from disk must have unit norm within this tolerance.
pub const UNIT_QUATERNION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct JointDef {
    pub name: String,
    pub parent: Option<usize>,
    pub rest_offset: Vector3<f64>,
}

impl JointDef {
    pub fn new(name: impl Into<String>, parent: Option<usize>, rest_offset: Vector3<f64>) -> Self {
        Self {
            name: name.into(),
            parent,
            rest_offset,
        }
    }
}

/// A validated joint hierarchy in topological order.
///
/// The root is the only joint without a parent and is always joint 0, since
/// every other joint must reference a parent with a smaller index. The root's
/// `rest_offset` does not participate in kinematics: the root head is placed
/// at the pose's `root_translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<JointDef>,
    children: Vec<Vec<usize>>,
}

impl Skeleton {
    pub fn new(joints: Vec<JointDef>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::invalid("skeleton", "skeleton has no joints"));
        }
        let mut roots = Vec::new();
        for (i, joint) in joints.iter().enumerate() {
            match joint.parent {
                None => roots.push(i),
                Some(p) if p >= i => {
                    return Err(Error::invalid(
                        "skeleton",
                        format!(
                            "topological order violated: joint {i} ('{}') has parent {p} >= own index",
                            joint.name
                        ),
                    ))
                }
                Some(_) => {
                    let len = joint.rest_offset.norm();
                    if !(len > 0.0 && len.is_finite()) {
                        return Err(Error::invalid(
                            "skeleton",
                            format!(
                                "bone rest length must be positive: joint {i} ('{}') has length {len}",
                                joint.name
                            ),
                        ));
                    }
                }
            }
            if !joint.rest_offset.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(
                    "skeleton",
                    format!("joint {i} has a non-finite rest offset"),
                ));
            }
        }
        if roots.len() != 1 {
            return Err(Error::invalid(
                "skeleton",
                format!("exactly one root required, found {}", roots.len()),
            ));
        }
        for i in 0..joints.len() {
            for j in 0..i {
                if joints[i].name == joints[j].name {
                    return Err(Error::invalid(
                        "skeleton",
                        format!("duplicate joint name '{}'", joints[i].name),
                    ));
                }
            }
        }
        let mut children = vec![Vec::new(); joints.len()];
        for (i, joint) in joints.iter().enumerate() {
            if let Some(p) = joint.parent {
                children[p].push(i);
            }
        }
        Ok(Self { joints, children })
    }

    pub fn joints(&self) -> &[JointDef] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn root_index(&self) -> usize {
        0
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.joints[joint].parent
    }

    pub fn children(&self, joint: usize) -> &[usize] {
        &self.children[joint]
    }

    /// `(parent, child)` pairs in child order.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.parent.map(|p| (p, i)))
    }

    /// Rest length of every bone, ordered like the non-root joints.
    pub fn bone_lengths(&self) -> Vec<f64> {
        self.joints
            .iter()
            .filter(|j| j.parent.is_some())
            .map(|j| j.rest_offset.norm())
            .collect()
    }

    /// Joint positions for identity rotations and zero root translation.
    pub fn rest_positions(&self) -> JointPositions3D {
        forward_kinematics(self, &Pose::identity(self.joint_count()))
            .expect("identity pose always matches its skeleton")
    }

    /// Copy of this skeleton with every rest offset multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let joints = self
            .joints
            .iter()
            .map(|j| JointDef {
                name: j.name.clone(),
                parent: j.parent,
                rest_offset: j.rest_offset * factor,
            })
            .collect();
        Self::new(joints)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: SkeletonFile = io::read_json(path)?;
        Self::try_from(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, &SkeletonFile::from(self))
    }
}

/// Local joint rotations plus the root translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub root_translation: Vector3<f64>,
}

impl Pose {
    pub fn identity(joint_count: usize) -> Self {
        Self {
            rotations: vec![UnitQuaternion::identity(); joint_count],
            root_translation: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnimationClip {
    pub fps: f64,
    pub frames: Vec<Pose>,
}

impl AnimationClip {
    pub fn new(fps: f64, frames: Vec<Pose>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::invalid("clip", format!("fps must be positive, got {fps}")));
        }
        if let Some(first) = frames.first() {
            let n = first.rotations.len();
            if let Some(i) = frames.iter().position(|f| f.rotations.len() != n) {
                return Err(Error::invalid(
                    "clip",
                    format!(
                        "frame {i} has {} rotations, frame 0 has {n}",
                        frames[i].rotations.len()
                    ),
                ));
            }
        }
        Ok(Self { fps, frames })
    }

    pub fn joint_count(&self) -> Option<usize> {
        self.frames.first().map(|f| f.rotations.len())
    }

    /// Checks the clip against a skeleton's joint count.
    pub fn check_skeleton(&self, skeleton: &Skeleton) -> Result<()> {
        match self.joint_count() {
            Some(n) if n != skeleton.joint_count() => Err(Error::Structural(format!(
                "clip has {n} joints, skeleton has {}",
                skeleton.joint_count()
            ))),
            _ => Ok(()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ClipFile = io::read_json(path)?;
        Self::try_from(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, &ClipFile::from(self))
    }
}

/// World-space joint heads with a validity flag per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPositions3D {
    pub positions: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl JointPositions3D {
    pub fn all_valid(positions: Vec<Vector3<f64>>) -> Self {
        let valid = vec![true; positions.len()];
        Self { positions, valid }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Diagonal of the axis-aligned box around the valid joints.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for (p, _) in self.positions.iter().zip(&self.valid).filter(|(_, v)| **v) {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if lo.x > hi.x {
            0.0
        } else {
            (hi - lo).norm()
        }
    }
}

pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<JointPositions3D> {
    let n = skeleton.joint_count();
    if pose.rotations.len() != n {
        return Err(Error::Structural(format!(
            "pose has {} rotations, skeleton has {n} joints",
            pose.rotations.len()
        )));
    }
    let mut global = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    for (i, joint) in skeleton.joints().iter().enumerate() {
        match joint.parent {
            None => {
                global.push(pose.rotations[i]);
                positions.push(pose.root_translation);
            }
            Some(p) => {
                let pos = positions[p] + global[p] * joint.rest_offset;
                global.push(global[p] * pose.rotations[i]);
                positions.push(pos);
            }
        }
    }
    Ok(JointPositions3D::all_valid(positions))
}

pub fn bone_lengths(skeleton: &Skeleton) -> Vec<f64> {
    skeleton.bone_lengths()
}

// JSON interchange records.

#[derive(Debug, Serialize, Deserialize)]
struct SkeletonFile {
    joints: Vec<JointFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JointFile {
    name: String,
    parent: Option<usize>,
    rest_offset: [f64; 3],
}

impl From<&Skeleton> for SkeletonFile {
    fn from(s: &Skeleton) -> Self {
        Self {
            joints: s
                .joints()
                .iter()
                .map(|j| JointFile {
                    name: j.name.clone(),
                    parent: j.parent,
                    rest_offset: [j.rest_offset.x, j.rest_offset.y, j.rest_offset.z],
                })
                .collect(),
        }
    }
}

impl TryFrom<SkeletonFile> for Skeleton {
    type Error = Error;

    fn try_from(f: SkeletonFile) -> Result<Self> {
        Skeleton::new(
            f.joints
                .into_iter()
                .map(|j| JointDef::new(j.name, j.parent, Vector3::from(j.rest_offset)))
                .collect(),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ClipFile {
    fps: f64,
    frames: Vec<FrameFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameFile {
    root_translation: [f64; 3],
    /// (w, x, y, z)
    rotations: Vec<[f64; 4]>,
}

impl From<&AnimationClip> for ClipFile {
    fn from(c: &AnimationClip) -> Self {
        Self {
            fps: c.fps,
            frames: c
                .frames
                .iter()
                .map(|p| FrameFile {
                    root_translation: [p.root_translation.x, p.root_translation.y, p.root_translation.z],
                    rotations: p
                        .rotations
                        .iter()
                        .map(|q| [q.w, q.i, q.j, q.k])
                        .collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ClipFile> for AnimationClip {
    type Error = Error;

    fn try_from(f: ClipFile) -> Result<Self> {
        let mut frames = Vec::with_capacity(f.frames.len());
        for (fi, frame) in f.frames.into_iter().enumerate() {
            let mut rotations = Vec::with_capacity(frame.rotations.len());
            for (ji, [w, x, y, z]) in frame.rotations.into_iter().enumerate() {
                let q = Quaternion::new(w, x, y, z);
                let norm = q.norm();
                if !((norm - 1.0).abs() <= UNIT_QUATERNION_TOL) {
                    return Err(Error::invalid(
                        "clip",
                        format!("unit quaternion required: frame {fi} joint {ji} has norm {norm}"),
                    ));
                }
                rotations.push(UnitQuaternion::new_unchecked(q));
            }
            frames.push(Pose {
                rotations,
                root_translation: Vector3::from(frame.root_translation),
            });
        }
        AnimationClip::new(f.fps, frames)
    }
}
