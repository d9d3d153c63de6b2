//! Joint rotations from 3D joint heads.
//!
//! The skeleton is traversed root to leaves. With ancestor rotations fixed,
//! each joint gets the local rotation that points its rest-pose child offsets
//! at the target child directions: shortest arc for one child, orthogonal
//! (Kabsch) alignment for several. Twist about a single bone is not
//! observable from heads, so it is left at zero.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{forward_kinematics, AnimationClip, JointPositions3D, Pose, Skeleton};

const DIRECTION_EPS: f64 = 1e-12;

/// Shortest-arc rotation taking `from` onto `to`.
///
/// Antiparallel inputs rotate by π about an axis perpendicular to `from`,
/// chosen from the coordinate axis least aligned with it.
pub fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Result<UnitQuaternion<f64>> {
    let (nf, nt) = (from.norm(), to.norm());
    if !(nf > DIRECTION_EPS && nt > DIRECTION_EPS) {
        return Err(Error::DegenerateDirection(format!(
            "zero-length direction (|from| = {nf}, |to| = {nt})"
        )));
    }
    let a = from / nf;
    let b = to / nt;
    let cos = a.dot(&b).clamp(-1.0, 1.0);
    let axis = a.cross(&b);
    if cos < -1.0 + 1e-12 && axis.norm() < 1e-6 {
        let helper = match a.iamin() {
            0 => Vector3::x(),
            1 => Vector3::y(),
            _ => Vector3::z(),
        };
        let perp = Unit::new_normalize(a.cross(&helper));
        return Ok(UnitQuaternion::from_axis_angle(&perp, std::f64::consts::PI));
    }
    // Half-angle construction: q = (1 + a·b, a × b), normalized.
    let q = nalgebra::Quaternion::new(1.0 + cos, axis.x, axis.y, axis.z);
    Ok(UnitQuaternion::from_quaternion(q))
}

/// Rotation `R` minimizing `Σ ‖R a_i − b_i‖²` (proper rotation, det = +1).
pub fn orthogonal_alignment(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> UnitQuaternion<f64> {
    let mut h = Matrix3::zeros();
    for (a, b) in pairs {
        h += b * a.transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkFrameResult {
    pub pose: Pose,
    /// Distance between FK of `pose` and the target, per joint; 0 for invalid targets.
    pub residuals: Vec<f64>,
}

impl IkFrameResult {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

fn renormalized(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

pub fn solve_frame(skeleton: &Skeleton, template: &JointPositions3D, target: &JointPositions3D) -> Result<IkFrameResult> {
    let n = skeleton.joint_count();
    if template.len() != n || target.len() != n {
        return Err(Error::Structural(format!(
            "template has {} joints, target has {}, skeleton has {n}",
            template.len(),
            target.len()
        )));
    }
    let root = skeleton.root_index();
    let root_translation = if target.valid[root] {
        target.positions[root] - template.positions[root]
    } else {
        Vector3::zeros()
    };

    let mut local = vec![UnitQuaternion::identity(); n];
    let mut global = vec![UnitQuaternion::identity(); n];
    for j in 0..n {
        let parent_global = skeleton.parent(j).map(|p| global[p]).unwrap_or_else(UnitQuaternion::identity);
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = if target.valid[j] {
            skeleton
                .children(j)
                .iter()
                .filter(|c| target.valid[**c])
                .filter_map(|&c| {
                    let desired = parent_global.inverse() * (target.positions[c] - target.positions[j]);
                    let rest = template.positions[c] - template.positions[j];
                    let (dn, rn) = (desired.norm(), rest.norm());
                    (dn > DIRECTION_EPS && rn > DIRECTION_EPS).then(|| (rest / rn, desired / dn))
                })
                .collect()
        } else {
            Vec::new()
        };
        local[j] = match pairs.len() {
            0 => UnitQuaternion::identity(),
            1 => rotation_between(&pairs[0].0, &pairs[0].1)?,
            _ => orthogonal_alignment(&pairs),
        };
        local[j] = renormalized(local[j]);
        global[j] = parent_global * local[j];
    }

    let pose = Pose {
        rotations: local,
        root_translation,
    };
    let fk = forward_kinematics(skeleton, &pose)?;
    let residuals = (0..n)
        .map(|j| {
            if target.valid[j] {
                (fk.positions[j] - target.positions[j]).norm()
            } else {
                0.0
            }
        })
        .collect();
    Ok(IkFrameResult { pose, residuals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkFrameReport {
    pub frame: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
    /// The frame had no valid joints and repeats the previous pose.
    pub filled_from_previous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSolve {
    pub clip: AnimationClip,
    pub frames: Vec<IkFrameReport>,
}

/// Per-frame IK. Frames without any valid joint repeat the previous pose
/// (rest pose for the first frame).
pub fn solve_clip(
    skeleton: &Skeleton,
    template: &JointPositions3D,
    targets: &[JointPositions3D],
    fps: f64,
) -> Result<ClipSolve> {
    if targets.is_empty() {
        return Err(Error::invalid("ik targets", "at least one frame required"));
    }
    let mut poses: Vec<Pose> = Vec::with_capacity(targets.len());
    let mut reports = Vec::with_capacity(targets.len());
    for (f, target) in targets.iter().enumerate() {
        if !target.valid.iter().any(|v| *v) {
            let prev = poses.last().cloned().unwrap_or_else(|| Pose::identity(skeleton.joint_count()));
            poses.push(prev);
            reports.push(IkFrameReport {
                frame: f,
                max_residual: 0.0,
                mean_residual: 0.0,
                filled_from_previous: true,
            });
            continue;
        }
        let r = solve_frame(skeleton, template, target).map_err(|e| match e {
            Error::Structural(m) => Error::Structural(format!("frame {f}: {m}")),
            Error::DegenerateDirection(m) => Error::DegenerateDirection(format!("frame {f}: {m}")),
            other => other,
        })?;
        let valid = target.valid.iter().filter(|v| **v).count().max(1);
        reports.push(IkFrameReport {
            frame: f,
            max_residual: r.max_residual(),
            mean_residual: r.residuals.iter().sum::<f64>() / valid as f64,
            filled_from_previous: false,
        });
        poses.push(r.pose);
    }
    Ok(ClipSolve {
        clip: AnimationClip::new(fps, poses)?,
        frames: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::JointDef;
    use approx::assert_relative_eq;
    use nalgebra::Quaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.1 {
                return v.normalize();
            }
        }
    }

    fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
        UnitQuaternion::from_quaternion(Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ))
    }

    #[test]
    fn quarter_turn_example() {
        let q = rotation_between(&Vector3::y(), &Vector3::x()).unwrap();
        let (axis, angle) = q.axis_angle().unwrap();
        assert_relative_eq!(angle, FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(axis.into_inner(), Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_eq!(rotation_between(&Vector3::z(), &Vector3::z()).unwrap(), UnitQuaternion::identity());
        assert!(matches!(rotation_between(&Vector3::zeros(), &Vector3::x()), Err(Error::DegenerateDirection(_))));
    }

    #[test]
    fn random_pairs_and_antiparallel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (a, b) = (unit(&mut rng), unit(&mut rng));
            let q = rotation_between(&a, &b).unwrap();
            assert!((q * a - b).norm() < 1e-9);
            assert!(q.angle() <= PI + 1e-12);
            assert!((q.norm() - 1.0).abs() < 1e-9);
        }
        for a in [Vector3::x(), Vector3::y(), Vector3::z(), unit(&mut rng)] {
            let q = rotation_between(&a, &-a).unwrap();
            assert!((q * a + a).norm() < 1e-9);
        }
    }

    #[test]
    fn alignment_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let pairs: Vec<_> = (0..3).map(|_| {
                let a = unit(&mut rng);
                (a, r * a)
            }).collect();
            let got = orthogonal_alignment(&pairs);
            assert!(got.angle_to(&r) < 1e-9);
        }
    }

    fn single_bone() -> Skeleton {
        Skeleton::new(vec![
            JointDef::new("root", None, Vector3::zeros()),
            JointDef::new("tip", Some(0), Vector3::new(0.0, 1.0, 0.0)),
        ])
        .unwrap()
    }

    #[test]
    fn identity_target_and_quarter_turn() {
        let s = single_bone();
        let rest = s.rest_positions();
        let r = solve_frame(&s, &rest, &rest).unwrap();
        assert!(r.pose.rotations.iter().all(|q| q.angle() < 1e-12));
        assert_eq!(r.pose.root_translation, Vector3::zeros());

        let mut target = rest.clone();
        target.positions[1] = Vector3::new(-1.0, 0.0, 0.0);
        let r = solve_frame(&s, &rest, &target).unwrap();
        let expected = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        assert!(r.pose.rotations[0].angle_to(&expected) < 1e-12);
        assert!(r.max_residual() < 1e-12);
    }

    fn branching(rng: &mut impl Rng) -> Skeleton {
        let parents = [None, Some(0), Some(1), Some(0), Some(3), Some(0), Some(5), Some(2), Some(2)];
        Skeleton::new(
            parents
                .iter()
                .enumerate()
                .map(|(i, p)| JointDef::new(format!("j{i}"), *p, if p.is_some() { unit(rng) * rng.random_range(0.2..0.5) } else { Vector3::zeros() }))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn fk_ik_fk_round_trip_branching() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = branching(&mut rng);
        let rest = s.rest_positions();
        for _ in 0..200 {
            let pose = Pose {
                rotations: (0..s.joint_count()).map(|_| random_rotation(&mut rng)).collect(),
                root_translation: unit(&mut rng),
            };
            let target = forward_kinematics(&s, &pose).unwrap();
            let r = solve_frame(&s, &rest, &target).unwrap();
            let back = forward_kinematics(&s, &r.pose).unwrap();
            for (a, b) in back.positions.iter().zip(&target.positions) {
                assert!((a - b).norm() < 1e-6);
            }
            for q in &r.pose.rotations {
                assert!((q.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_joints_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = branching(&mut rng);
        let rest = s.rest_positions();
        let pose = Pose {
            rotations: (0..s.joint_count()).map(|_| random_rotation(&mut rng)).collect(),
            root_translation: Vector3::zeros(),
        };
        let mut target = forward_kinematics(&s, &pose).unwrap();
        target.valid[4] = false;
        target.positions[4] = Vector3::repeat(f64::NAN);
        let r = solve_frame(&s, &rest, &target).unwrap();
        // Joint 3's only child is invalid, so its local rotation is identity.
        assert_eq!(r.pose.rotations[3], UnitQuaternion::identity());
        assert_eq!(r.residuals[4], 0.0);
        assert!(r.residuals.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn clip_with_dropout_frame() {
        let s = single_bone();
        let rest = s.rest_positions();
        let mut moved = rest.clone();
        moved.positions[1] = Vector3::new(0.0, 0.0, 1.0);
        let mut dropped = rest.clone();
        dropped.valid = vec![false, false];
        let solved = solve_clip(&s, &rest, &[moved.clone(), dropped, moved.clone()], 24.0).unwrap();
        assert_eq!(solved.clip.frames.len(), 3);
        assert!(solved.frames[1].filled_from_previous);
        assert_eq!(solved.clip.frames[1], solved.clip.frames[0]);

        let constant = solve_clip(&s, &rest, &[moved.clone(), moved.clone(), moved], 24.0).unwrap();
        assert!(constant.clip.frames.windows(2).all(|w| w[0] == w[1]));
        assert!(solve_clip(&s, &rest, &[], 24.0).is_err());
    }
}
