//! Render, decode, triangulate, solve IK and score against ground truth.

use nalgebra::{Point3, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{framing_distance, rig_with_azimuths, Camera, DEFAULT_VFOV_DEG};
use crate::error::{Error, Result};
use crate::kinematics::{solve_clip, IkFrameReport};
use crate::posemap::{decode_posemap_with, marker_radius, render_posemap, ColorPalette, DecodeParams, Joints2D, PoseMap};
use crate::reconstruct::{triangulate_frame, FrameReport, TriangulationProblem, DEFAULT_LAMBDA_BONE};
use crate::skeleton::{forward_kinematics, AnimationClip, JointPositions3D, Skeleton};

/// Margin on the clip radius when framing the rig.
pub const RIG_MARGIN: f64 = 1.05;

/// Horizon rig framing every joint of every frame.
pub fn fit_rig(skeleton: &Skeleton, clip: &AnimationClip, resolution: u32, azimuths_deg: &[f64]) -> Result<Vec<Camera>> {
    clip.check_skeleton(skeleton)?;
    let mut radius: f64 = 0.0;
    for pose in &clip.frames {
        for p in forward_kinematics(skeleton, pose)?.positions {
            radius = radius.max(p.norm());
        }
    }
    let distance = framing_distance(radius.max(1e-3) * RIG_MARGIN, DEFAULT_VFOV_DEG);
    rig_with_azimuths(distance, resolution, azimuths_deg, DEFAULT_VFOV_DEG)
}

/// Pose maps indexed `[view][frame]`.
pub fn render_clip(skeleton: &Skeleton, clip: &AnimationClip, cameras: &[Camera], palette: &ColorPalette) -> Result<Vec<Vec<PoseMap>>> {
    clip.check_skeleton(skeleton)?;
    let positions = clip
        .frames
        .iter()
        .map(|p| forward_kinematics(skeleton, p))
        .collect::<Result<Vec<_>>>()?;
    cameras
        .iter()
        .enumerate()
        .map(|(v, cam)| {
            positions
                .iter()
                .enumerate()
                .map(|(f, pos)| {
                    let mut m = render_posemap(skeleton, pos, cam, palette)?;
                    m.view = v;
                    m.frame = f;
                    Ok(m)
                })
                .collect()
        })
        .collect()
}

/// Exact projections of `positions` into every camera (no rasterization).
pub fn project_observations(positions: &JointPositions3D, cameras: &[Camera]) -> Vec<Joints2D> {
    cameras
        .iter()
        .map(|cam| {
            let proj: Vec<_> = positions.positions.iter().map(|p| cam.project(&Point3::from(*p))).collect();
            Joints2D {
                positions: proj.iter().map(|p| p.pixel).collect(),
                valid: proj.iter().zip(&positions.valid).map(|(p, v)| *v && p.in_front()).collect(),
                support: vec![0; proj.len()],
            }
        })
        .collect()
}

/// Adds isotropic Gaussian pixel noise to every valid observation.
pub fn add_pixel_noise(observations: &mut [Joints2D], sigma: f64, seed: u64) -> Result<()> {
    let dist = Normal::new(0.0, sigma).map_err(|e| Error::invalid("noise sigma", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for obs in observations {
        for (p, v) in obs.positions.iter_mut().zip(&obs.valid) {
            if *v {
                *p += Vector2::new(dist.sample(&mut rng), dist.sample(&mut rng));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructSettings {
    pub lambda_bone: f64,
    pub color_threshold: f64,
    /// Scale observation weights by the visible fraction of each marker.
    pub occlusion_weighting: bool,
}

impl Default for ReconstructSettings {
    fn default() -> Self {
        Self {
            lambda_bone: DEFAULT_LAMBDA_BONE,
            color_threshold: crate::posemap::DEFAULT_COLOR_THRESHOLD,
            occlusion_weighting: true,
        }
    }
}

impl ReconstructSettings {
    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            color_threshold: self.color_threshold,
            ..DecodeParams::default()
        }
    }
}

/// Number of pixel centers covered by a full marker of `radius`.
pub fn marker_area(radius: f64) -> usize {
    let r = radius.ceil() as i64;
    let mut n = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                n += 1;
            }
        }
    }
    n
}

/// Weight per joint from the fraction of its marker that survived
/// overdraw: fully visible markers weigh 1, partial ones the squared fraction.
pub fn occlusion_weights(obs: &Joints2D, image_height: u32) -> Vec<f64> {
    let full = marker_area(marker_radius(image_height)) as f64;
    obs.valid
        .iter()
        .zip(&obs.support)
        .map(|(v, s)| {
            if !*v {
                0.0
            } else if *s == 0 {
                1.0
            } else {
                let frac = (*s as f64 / full).min(1.0);
                (frac * frac).max(1e-4)
            }
        })
        .collect()
}

/// Decodes `[view][frame]` maps into `[frame][view]` observations.
pub fn decode_clip(maps: &[Vec<PoseMap>], palette: &ColorPalette, params: DecodeParams) -> Result<Vec<Vec<Joints2D>>> {
    let frames = maps.first().map_or(0, Vec::len);
    if maps.iter().any(|v| v.len() != frames) {
        return Err(Error::Structural("views have different frame counts".into()));
    }
    Ok((0..frames)
        .map(|f| maps.iter().map(|v| decode_posemap_with(&v[f], palette, params)).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub reproj_rms_px: f64,
    pub bone_rms: f64,
    pub lm_iterations: usize,
    pub converged: bool,
    pub ik_max_residual: f64,
    pub ik_mean_residual: f64,
    pub filled_from_previous: bool,
}

fn merge_metrics(tri: &FrameReport, ik: &IkFrameReport) -> FrameMetrics {
    FrameMetrics {
        frame: tri.frame,
        reproj_rms_px: tri.reproj_rms_px,
        bone_rms: tri.bone_rms,
        lm_iterations: tri.iterations,
        converged: tri.converged,
        ik_max_residual: ik.max_residual,
        ik_mean_residual: ik.mean_residual,
        filled_from_previous: ik.filled_from_previous,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub clip: AnimationClip,
    /// Triangulated joint positions per frame.
    pub triangulated: Vec<JointPositions3D>,
    pub frames: Vec<FrameMetrics>,
}

/// Triangulates every frame, then solves IK against the rest pose.
pub fn reconstruct_clip(
    observations: &[Vec<Joints2D>],
    cameras: &[Camera],
    skeleton: &Skeleton,
    fps: f64,
    settings: &ReconstructSettings,
) -> Result<Reconstruction> {
    if observations.is_empty() {
        return Err(Error::invalid("reconstruction", "no frames to reconstruct"));
    }
    let mut triangulated = Vec::with_capacity(observations.len());
    let mut reports = Vec::with_capacity(observations.len());
    for (f, obs) in observations.iter().enumerate() {
        let mut problem = TriangulationProblem::new(obs, cameras, skeleton, settings.lambda_bone)?;
        if settings.occlusion_weighting {
            problem.weights = obs.iter().zip(cameras).map(|(o, c)| occlusion_weights(o, c.height)).collect();
        }
        match triangulate_frame(&problem) {
            Ok(r) => {
                reports.push(r.report(f));
                triangulated.push(r.positions);
            }
            Err(Error::EmptyObservations(_)) => {
                let n = skeleton.joint_count();
                reports.push(FrameReport {
                    frame: f,
                    reproj_rms_px: 0.0,
                    bone_rms: 0.0,
                    iterations: 0,
                    converged: false,
                });
                triangulated.push(JointPositions3D {
                    positions: vec![nalgebra::Vector3::zeros(); n],
                    valid: vec![false; n],
                });
            }
            Err(e) => return Err(e),
        }
    }
    let solved = solve_clip(skeleton, &skeleton.rest_positions(), &triangulated, fps)?;
    let frames = reports.iter().zip(&solved.frames).map(|(t, i)| merge_metrics(t, i)).collect();
    Ok(Reconstruction {
        clip: solved.clip,
        triangulated,
        frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub frame: usize,
    /// Joint position errors divided by the rest-pose bounding-box diagonal.
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub bbox_diagonal: f64,
    pub mean: f64,
    pub max: f64,
    pub frames: Vec<FrameError>,
}

/// Per-frame FK position errors of `estimate` against `truth`, normalized by
/// the rest-pose bounding-box diagonal.
pub fn position_errors(skeleton: &Skeleton, truth: &AnimationClip, estimate: &AnimationClip) -> Result<ErrorSummary> {
    if truth.frames.len() != estimate.frames.len() {
        return Err(Error::Structural(format!(
            "{} reference frames, {} estimated",
            truth.frames.len(),
            estimate.frames.len()
        )));
    }
    let diag = skeleton.rest_positions().bbox_diagonal();
    let mut frames = Vec::with_capacity(truth.frames.len());
    let (mut total, mut count, mut worst) = (0.0, 0usize, 0.0f64);
    for (f, (a, b)) in truth.frames.iter().zip(&estimate.frames).enumerate() {
        let pa = forward_kinematics(skeleton, a)?;
        let pb = forward_kinematics(skeleton, b)?;
        let errs: Vec<f64> = pa.positions.iter().zip(&pb.positions).map(|(x, y)| (x - y).norm() / diag).collect();
        let max = errs.iter().copied().fold(0.0, f64::max);
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        total += errs.iter().sum::<f64>();
        count += errs.len();
        worst = worst.max(max);
        frames.push(FrameError { frame: f, mean, max });
    }
    Ok(ErrorSummary {
        bbox_diagonal: diag,
        mean: total / count.max(1) as f64,
        max: worst,
        frames,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roundtrip {
    pub reconstruction: Reconstruction,
    pub errors: ErrorSummary,
}

/// Render, decode, triangulate, IK and score one clip.
pub fn roundtrip(
    skeleton: &Skeleton,
    clip: &AnimationClip,
    cameras: &[Camera],
    palette: &ColorPalette,
    settings: &ReconstructSettings,
) -> Result<Roundtrip> {
    let maps = render_clip(skeleton, clip, cameras, palette)?;
    let obs = decode_clip(&maps, palette, settings.decode_params())?;
    let reconstruction = reconstruct_clip(&obs, cameras, skeleton, clip.fps, settings)?;
    let errors = position_errors(skeleton, clip, &reconstruction.clip)?;
    Ok(Roundtrip { reconstruction, errors })
}

/// Relative bone-length deviations `|len − rest| / rest` of triangulated
/// frames, one entry per bone per frame.
pub fn bone_length_deviations(skeleton: &Skeleton, frames: &[JointPositions3D]) -> Vec<f64> {
    let rest = skeleton.bone_lengths();
    let bones: Vec<(usize, usize)> = skeleton.bones().collect();
    let mut out = Vec::with_capacity(frames.len() * bones.len());
    for pos in frames {
        for ((p, c), l) in bones.iter().zip(&rest) {
            if pos.valid[*p] && pos.valid[*c] {
                out.push(((pos.positions[*c] - pos.positions[*p]).norm() - l).abs() / l);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::synth::{synth_clip, SynthParams};
    use crate::posemap::make_palette;

    #[test]
    fn marker_area_matches_rendered_disc() {
        let mut map = PoseMap::filled(64, 64, [0, 0, 0]);
        crate::posemap::draw_disc(&mut map, Vector2::new(30.3, 31.7), 6.0, [255, 0, 0]);
        let lit = map.pixels.iter().filter(|p| **p == [255, 0, 0]).count();
        assert!((lit as i64 - marker_area(6.0) as i64).abs() <= 4, "{lit} vs {}", marker_area(6.0));
    }

    #[test]
    fn synthetic_clip_round_trips() {
        let p = SynthParams { frames: 8, max_joints: 8, ..SynthParams::default() };
        let rec = synth_clip(2, &p).unwrap();
        let cams = fit_rig(&rec.skeleton, &rec.clip, 256, &crate::camera::CANONICAL_AZIMUTHS_DEG).unwrap();
        let pal = make_palette(rec.skeleton.joint_count(), 2).unwrap();
        let rt = roundtrip(&rec.skeleton, &rec.clip, &cams, &pal, &ReconstructSettings::default()).unwrap();
        assert!(rt.errors.mean < 0.01, "{:?}", rt.errors);
    }

    #[test]
    fn rest_clip_round_trip_is_near_exact() {
        let p = SynthParams { frames: 4, max_joints: 6, ..SynthParams::default() };
        let rec = synth_clip(4, &p).unwrap();
        let mut clip = rec.clip.clone();
        for f in &mut clip.frames {
            *f = rec.clip.frames[0].clone();
        }
        let cams = fit_rig(&rec.skeleton, &clip, 512, &crate::camera::CANONICAL_AZIMUTHS_DEG).unwrap();
        let pal = make_palette(rec.skeleton.joint_count(), 0).unwrap();
        let rt = roundtrip(&rec.skeleton, &clip, &cams, &pal, &ReconstructSettings::default()).unwrap();
        assert!(rt.errors.mean < 0.01);
    }
}
