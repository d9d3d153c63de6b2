//! Procedural skeletons and labelled periodic motions.

use std::f64::consts::{PI, TAU};

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jointdit::model::MOTION_LABELS;
use crate::skeleton::{forward_kinematics, AnimationClip, JointDef, Pose, Skeleton};

use super::{motion_score, ClipRecord, Source};

/// Largest rest-pose distance from the bounding-box center.
pub const REST_RADIUS: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub frames: usize,
    pub fps: f64,
    pub min_joints: usize,
    pub max_joints: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            frames: 32,
            fps: 30.0,
            min_joints: 2,
            max_joints: 20,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 || self.fps <= 0.0 {
            return Err(Error::invalid("synth params", "need at least 2 frames and positive fps"));
        }
        if self.min_joints < 2 || self.max_joints < self.min_joints {
            return Err(Error::invalid(
                "synth params",
                format!("joint range {}..={} invalid", self.min_joints, self.max_joints),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkeletonKind {
    Chain,
    Quadruped,
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn chain_offsets(n: usize, rng: &mut impl Rng) -> Vec<(Option<usize>, Vector3<f64>, String)> {
    let mut dir = random_unit(rng);
    let mut out = vec![(None, Vector3::zeros(), "chain_0".to_string())];
    for k in 1..n {
        dir = (dir + 0.5 * random_unit(rng)).normalize();
        out.push((Some(k - 1), dir * rng.random_range(0.7..1.3), format!("chain_{k}")));
    }
    out
}

fn quadruped_offsets(n: usize, rng: &mut impl Rng) -> Vec<(Option<usize>, Vector3<f64>, String)> {
    let per_leg = if n >= 14 { 2 } else { 1 };
    let legs = ((n - 2) / per_leg).min(4);
    let spine = n - legs * per_leg;
    let mut out = vec![(None, Vector3::zeros(), "spine_0".to_string())];
    for k in 1..spine {
        let jitter = Vector3::new(0.0, rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
        out.push((Some(k - 1), Vector3::x() * rng.random_range(0.8..1.2) + jitter, format!("spine_{k}")));
    }
    let anchors = [0, 0, spine - 1, spine - 1];
    let sides = [1.0, -1.0, 1.0, -1.0];
    for leg in 0..legs {
        let mut parent = anchors[leg];
        for seg in 0..per_leg {
            let offset = if seg == 0 {
                Vector3::new(rng.random_range(-0.2..0.2), sides[leg] * rng.random_range(0.4..0.7), -rng.random_range(0.6..1.0))
            } else {
                Vector3::new(rng.random_range(0.1..0.3), sides[leg] * 0.1, -rng.random_range(0.6..1.0))
            };
            out.push((Some(parent), offset, format!("leg{leg}_{seg}")));
            parent = out.len() - 1;
        }
    }
    out
}

/// Random skeleton with `n` joints, rescaled so the rest pose fits within
/// `REST_RADIUS` of its bounding-box center. Returns the skeleton and the
/// rest-pose center.
pub fn random_skeleton(n: usize, kind: SkeletonKind, rng: &mut impl Rng) -> Result<(Skeleton, Vector3<f64>)> {
    if n < 2 {
        return Err(Error::invalid("synthetic skeleton", "at least two joints required"));
    }
    let raw = match kind {
        SkeletonKind::Chain => chain_offsets(n, rng),
        SkeletonKind::Quadruped if n >= 6 => quadruped_offsets(n, rng),
        SkeletonKind::Quadruped => chain_offsets(n, rng),
    };
    let joints: Vec<JointDef> = raw.into_iter().map(|(p, o, name)| JointDef::new(name, p, o)).collect();
    let skel = Skeleton::new(joints)?;
    let rest = skel.rest_positions();
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for p in &rest.positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let center = 0.5 * (lo + hi);
    let radius = rest.positions.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
    let s = REST_RADIUS / radius;
    Ok((skel.scaled(s)?, center * s))
}

/// Per-joint oscillator.
#[derive(Debug, Clone)]
struct JointMotion {
    axis: Unit<Vector3<f64>>,
    amplitude: f64,
    phase: f64,
}

#[derive(Debug, Clone)]
struct LabelMotion {
    cycles: f64,
    amplitude_deg: f64,
    /// Only joints at this depth fraction or deeper move.
    distal_from: f64,
    shared_axis: bool,
    alternate_phase: bool,
    bob: f64,
    hop: f64,
    sway: f64,
    yaw_sweep_deg: f64,
    root_swing_deg: f64,
}

fn label_motion(label: usize) -> LabelMotion {
    let base = LabelMotion {
        cycles: 1.0,
        amplitude_deg: 25.0,
        distal_from: 0.0,
        shared_axis: false,
        alternate_phase: false,
        bob: 0.0,
        hop: 0.0,
        sway: 0.0,
        yaw_sweep_deg: 0.0,
        root_swing_deg: 0.0,
    };
    match MOTION_LABELS[label % MOTION_LABELS.len()] {
        "walk" => LabelMotion { alternate_phase: true, bob: 0.02, ..base },
        "run" => LabelMotion { cycles: 2.0, amplitude_deg: 35.0, alternate_phase: true, bob: 0.05, ..base },
        "jump" => LabelMotion { amplitude_deg: 20.0, shared_axis: true, hop: 0.15, ..base },
        "wave" => LabelMotion { cycles: 2.0, amplitude_deg: 45.0, distal_from: 0.5, ..base },
        "turn" => LabelMotion { amplitude_deg: 10.0, yaw_sweep_deg: 90.0, ..base },
        "idle-sway" => LabelMotion { amplitude_deg: 8.0, sway: 0.03, ..base },
        "open-close" => LabelMotion { amplitude_deg: 30.0, shared_axis: true, ..base },
        _ => LabelMotion { amplitude_deg: 10.0, root_swing_deg: 20.0, ..base },
    }
}

fn depths(skel: &Skeleton) -> Vec<usize> {
    let mut d = vec![0; skel.joint_count()];
    for j in 0..skel.joint_count() {
        if let Some(p) = skel.parent(j) {
            d[j] = d[p] + 1;
        }
    }
    d
}

/// Axis perpendicular to the mean child direction of `joint`.
fn bending_axis(skel: &Skeleton, joint: usize, rng: &mut impl Rng) -> Unit<Vector3<f64>> {
    let mean: Vector3<f64> = skel.children(joint).iter().map(|c| skel.joints()[*c].rest_offset.normalize()).sum();
    loop {
        let r = random_unit(rng);
        let a = if mean.norm() > 1e-9 {
            let m = mean.normalize();
            r - m * m.dot(&r)
        } else {
            r
        };
        if a.norm() > 0.2 {
            return Unit::new_normalize(a);
        }
    }
}

/// Labelled clip on `skel`. The root is yawed by `yaw` and translated so the
/// rest-pose center sits at the origin.
pub fn synth_motion(
    skel: &Skeleton,
    center: &Vector3<f64>,
    label: usize,
    yaw: f64,
    params: &SynthParams,
    rng: &mut impl Rng,
) -> Result<AnimationClip> {
    let m = label_motion(label);
    let n = skel.joint_count();
    let depth = depths(skel);
    let max_depth = depth.iter().copied().max().unwrap_or(0).max(1);
    let scale = (3.0 / n as f64).sqrt().min(1.0);
    let shared = bending_axis(skel, 0, rng);
    let motions: Vec<JointMotion> = (0..n)
        .map(|j| {
            let moving = j > 0
                && !skel.children(j).is_empty()
                && depth[j] as f64 / max_depth as f64 >= m.distal_from;
            let axis = if m.shared_axis { shared } else { bending_axis(skel, j, rng) };
            let phase = if m.alternate_phase {
                PI * (depth[j] % 2) as f64
            } else {
                rng.random_range(-0.3..0.3)
            };
            let amplitude = if moving {
                m.amplitude_deg.to_radians() * scale * rng.random_range(0.8..1.2)
            } else {
                0.0
            };
            JointMotion { axis, amplitude, phase }
        })
        .collect();
    let base = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
    let swing_axis = Unit::new_normalize(Vector3::new(yaw.cos(), yaw.sin(), 0.0));
    let root_axis = bending_axis(skel, 0, rng);
    let frames = (0..params.frames)
        .map(|f| {
            let u = f as f64 / params.frames as f64;
            let w = TAU * m.cycles * u;
            let mut rotations: Vec<UnitQuaternion<f64>> = motions
                .iter()
                .map(|jm| UnitQuaternion::from_axis_angle(&jm.axis, jm.amplitude * (w + jm.phase).sin()))
                .collect();
            let yaw_now = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), m.yaw_sweep_deg.to_radians() * (u - 0.5));
            let swing = UnitQuaternion::from_axis_angle(&swing_axis, m.root_swing_deg.to_radians() * w.sin());
            let wobble = UnitQuaternion::from_axis_angle(&root_axis, 0.5 * motions[1.min(n - 1)].amplitude * w.cos());
            let root = yaw_now * swing * base * wobble;
            rotations[0] = root;
            let lift = m.bob * w.sin().abs() + m.hop * w.sin().max(0.0);
            let root_translation = -(root * center) + Vector3::new(m.sway * w.sin(), 0.0, lift);
            Pose {
                rotations,
                root_translation,
            }
        })
        .collect();
    AnimationClip::new(params.fps, frames)
}

fn source_for(seed: u64) -> Source {
    match seed % 4 {
        0 => Source::MixamoLike,
        1 => Source::VroidLike,
        _ => Source::ObjaverseLike,
    }
}

/// One synthetic record, fully determined by `seed`.
pub fn synth_clip(seed: u64, params: &SynthParams) -> Result<ClipRecord> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0xa11c_e5ed);
    let n = rng.random_range(params.min_joints..=params.max_joints);
    let kind = if n >= 6 && rng.random_bool(0.5) {
        SkeletonKind::Quadruped
    } else {
        SkeletonKind::Chain
    };
    let (skeleton, center) = random_skeleton(n, kind, &mut rng)?;
    let label = rng.random_range(0..MOTION_LABELS.len());
    let yaw = rng.random_range(15.0f64..75.0).to_radians() + PI * 0.5 * rng.random_range(0..4) as f64;
    let clip = synth_motion(&skeleton, &center, label, yaw, params, &mut rng)?;
    let motion_score = motion_score(&skeleton, &clip)?;
    Ok(ClipRecord {
        id: format!("synth_{seed:05}"),
        source: source_for(seed),
        label,
        kind: Some(kind),
        seed: Some(seed),
        skeleton,
        clip,
        motion_score,
    })
}

/// `count` records with seeds `seed, seed+1, ...`.
pub fn synth_records(count: usize, seed: u64, params: &SynthParams) -> Result<Vec<ClipRecord>> {
    if count == 0 {
        return Err(Error::invalid("synthetic dataset", "count must be >= 1"));
    }
    (0..count as u64).map(|k| synth_clip(seed + k, params)).collect()
}

/// Largest joint distance from the origin over every frame.
pub fn clip_radius(record: &ClipRecord) -> Result<f64> {
    let mut r: f64 = 0.0;
    for pose in &record.clip.frames {
        let pos = forward_kinematics(&record.skeleton, pose)?;
        for p in &pos.positions {
            r = r.max(p.norm());
        }
    }
    Ok(r)
}
