//! Toy latent space: pose maps and an rgb proxy rendered at low resolution
//! and folded into `patch × patch` space-to-depth tokens.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::camera::{framing_distance, rig_with_azimuths, Camera, DEFAULT_VFOV_DEG};
use crate::error::{Error, Result};
use crate::jointdit::layout::{LatentDims, TokenGrid, TEMPORAL_COMPRESSION};
use crate::jointdit::layout::MultiViewGrid;
use crate::jointdit::model::grid_with_cameras;
use crate::jointdit::train::ToyExample;
use crate::pipeline::{reconstruct_clip, ReconstructSettings};
use crate::posemap::{decode_posemap, draw_disc, draw_segment, make_palette, render_posemap, ColorPalette, Joints2D, PoseMap, Rgb};
use crate::skeleton::{forward_kinematics, JointPositions3D};

use super::synth::clip_radius;
use super::ClipRecord;

pub const PROXY_BACKGROUND: Rgb = [24, 24, 24];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLatentConfig {
    pub resolution: u32,
    pub patch: usize,
    pub f: usize,
    pub azimuths_deg: Vec<f64>,
}

impl Default for ToyLatentConfig {
    fn default() -> Self {
        Self {
            resolution: 16,
            patch: 4,
            f: 2,
            azimuths_deg: vec![0.0, 90.0],
        }
    }
}

impl ToyLatentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.resolution as usize % self.patch != 0 {
            return Err(Error::invalid(
                "toy latent config",
                format!("resolution {} not divisible by patch {}", self.resolution, self.patch),
            ));
        }
        if self.f == 0 || self.azimuths_deg.is_empty() {
            return Err(Error::invalid("toy latent config", "need f >= 1 and at least one view"));
        }
        Ok(())
    }

    pub fn dims(&self) -> LatentDims {
        let side = self.resolution as usize / self.patch;
        LatentDims {
            f: self.f,
            h: side,
            w: side,
            c: 3 * self.patch * self.patch,
            views: self.azimuths_deg.len(),
        }
    }

    /// Clip frames used for the `1 + f` latent frames.
    pub fn frame_indices(&self) -> Vec<usize> {
        (0..=self.f).map(|i| i * TEMPORAL_COMPRESSION).collect()
    }
}

pub fn encode_value(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

pub fn decode_value(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Space-to-depth: token `(k, j)` holds its `patch × patch` block as
/// `[dy][dx][rgb]`.
pub fn patchify(map: &PoseMap, patch: usize) -> Vec<f64> {
    let (h, w) = (map.height as usize / patch, map.width as usize / patch);
    let mut out = Vec::with_capacity(h * w * 3 * patch * patch);
    for k in 0..h {
        for j in 0..w {
            for dy in 0..patch {
                for dx in 0..patch {
                    let px = map.get((j * patch + dx) as u32, (k * patch + dy) as u32);
                    out.extend(px.iter().map(|v| encode_value(*v)));
                }
            }
        }
    }
    out
}

pub fn depatchify(values: &[f64], h: usize, w: usize, patch: usize) -> PoseMap {
    let (width, height) = ((w * patch) as u32, (h * patch) as u32);
    let mut map = PoseMap::filled(width, height, [0, 0, 0]);
    let mut it = values.chunks_exact(3);
    for k in 0..h {
        for j in 0..w {
            for dy in 0..patch {
                for dx in 0..patch {
                    let c = it.next().expect("value count matches grid");
                    let idx = (k * patch + dy) * width as usize + j * patch + dx;
                    map.pixels[idx] = [decode_value(c[0]), decode_value(c[1]), decode_value(c[2])];
                }
            }
        }
    }
    map
}

/// Shaded stick rendering standing in for the rgb video: bones as thick
/// strokes colored by height and camera depth, drawn far to near.
pub fn render_rgb_proxy(record: &ClipRecord, positions: &JointPositions3D, camera: &Camera) -> PoseMap {
    let mut map = PoseMap::filled(camera.width, camera.height, PROXY_BACKGROUND);
    let proj: Vec<_> = positions.positions.iter().map(|p| camera.project(&Point3::from(*p))).collect();
    let half = (0.04 * camera.height as f64).max(1.0);
    let shade = |z: f64, depth: f64| -> Rgb {
        let d = ((depth - camera.center().coords.norm()) * 0.5 + 0.5).clamp(0.0, 1.0);
        [
            (60.0 + 150.0 * (0.5 * z + 0.5).clamp(0.0, 1.0)) as u8,
            (200.0 - 120.0 * d) as u8,
            (90.0 + 40.0 * d) as u8,
        ]
    };
    let mut bones: Vec<(usize, usize)> = record.skeleton.bones().filter(|(p, c)| proj[*p].in_front() && proj[*c].in_front()).collect();
    bones.sort_by(|a, b| {
        let da = proj[a.0].depth + proj[a.1].depth;
        let db = proj[b.0].depth + proj[b.1].depth;
        db.total_cmp(&da)
    });
    for (p, c) in bones {
        let z = 0.5 * (positions.positions[p].z + positions.positions[c].z);
        let color = shade(z, 0.5 * (proj[p].depth + proj[c].depth));
        draw_segment(&mut map, proj[p].pixel, proj[c].pixel, half, color);
        draw_disc(&mut map, proj[c].pixel, half, color);
    }
    let root = proj[0];
    if root.in_front() {
        draw_disc(&mut map, root.pixel, half * 1.5, shade(positions.positions[0].z, root.depth));
    }
    map
}

/// Clean toy training clip with everything needed to decode and score it.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClip {
    pub id: String,
    pub example: ToyExample,
    pub cameras: Vec<Camera>,
    pub palette: ColorPalette,
    /// Ground-truth joint positions of the `1 + f` latent frames.
    pub targets: Vec<JointPositions3D>,
    pub rest: JointPositions3D,
}

pub fn toy_cameras(record: &ClipRecord, config: &ToyLatentConfig) -> Result<Vec<Camera>> {
    let radius = clip_radius(record)?.max(1e-3);
    let distance = framing_distance(radius * 1.1, DEFAULT_VFOV_DEG);
    rig_with_azimuths(distance, config.resolution, &config.azimuths_deg, DEFAULT_VFOV_DEG)
}

pub fn toy_clip(record: &ClipRecord, config: &ToyLatentConfig, palette_seed: u64) -> Result<ToyClip> {
    config.validate()?;
    let dims = config.dims();
    let frames = config.frame_indices();
    if *frames.last().expect("f >= 1") >= record.clip.frames.len() {
        return Err(Error::invalid(
            "toy clip",
            format!("{} needs {} frames, has {}", record.id, frames.last().unwrap() + 1, record.clip.frames.len()),
        ));
    }
    let cameras = toy_cameras(record, config)?;
    let palette = make_palette(record.skeleton.joint_count(), palette_seed)?;
    let rest = record.skeleton.rest_positions();
    let targets = frames
        .iter()
        .map(|f| forward_kinematics(&record.skeleton, &record.clip.frames[*f]))
        .collect::<Result<Vec<_>>>()?;
    // Template shares the clip's first-frame root placement.
    let template_pose = {
        let mut p = record.clip.frames[0].clone();
        for r in p.rotations.iter_mut().skip(1) {
            *r = nalgebra::UnitQuaternion::identity();
        }
        p
    };
    let template = forward_kinematics(&record.skeleton, &template_pose)?;
    let mut views = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let cond_rgb = patchify(&render_rgb_proxy(record, &template, cam), config.patch);
        let cond_pose = patchify(&render_posemap(&record.skeleton, &template, cam, &palette)?, config.patch);
        let mut noisy_rgb = Vec::new();
        let mut noisy_pose = Vec::new();
        for t in &targets {
            noisy_rgb.extend(patchify(&render_rgb_proxy(record, t, cam), config.patch));
            noisy_pose.extend(patchify(&render_posemap(&record.skeleton, t, cam, &palette)?, config.patch));
        }
        views.push(crate::jointdit::layout::build_token_sequence(
            LatentDims { views: cameras.len(), ..dims },
            &cond_rgb,
            &noisy_rgb,
            &cond_pose,
            &noisy_pose,
        )?);
    }
    Ok(ToyClip {
        id: record.id.clone(),
        example: ToyExample {
            grid: grid_with_cameras(views, &cameras)?,
            label: record.label,
        },
        cameras,
        palette,
        targets,
        rest,
    })
}

/// Decodes the pose stream of one view: one map and 2D joints per latent frame.
pub fn decode_pose_latents(grid: &TokenGrid, patch: usize, palette: &ColorPalette) -> Vec<(PoseMap, Joints2D)> {
    let d = grid.dims;
    let frame = d.spatial() * d.c;
    grid.noisy_pose()
        .chunks(frame)
        .map(|chunk| {
            let map = depatchify(chunk, d.h, d.w, patch);
            let joints = decode_posemap(&map, palette);
            (map, joints)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    /// RMS of the pose-latent error over the RMS of the clean pose latents.
    pub pose_latent_rel_rms: f64,
    /// FK joint errors over the rest-pose bounding-box diagonal.
    pub fk_mean: f64,
    pub fk_max: f64,
    /// Fraction of joint observations the decoder recovered.
    pub decoded_fraction: f64,
}

/// Decodes every view of a sampled grid, reconstructs the `1 + f` frames
/// with the clip's toy cameras and compares them to the clean clip.
pub fn score_sample(
    toy: &ToyClip,
    record: &ClipRecord,
    sampled: &MultiViewGrid,
    patch: usize,
    settings: &ReconstructSettings,
) -> Result<SampleScore> {
    let clean = &toy.example.grid;
    if sampled.dims != clean.dims {
        return Err(Error::Structural("sampled grid does not match the clip's dimensions".into()));
    }
    let (mut err2, mut ref2) = (0.0, 0.0);
    for (s, c) in sampled.views.iter().zip(&clean.views) {
        for (a, b) in s.noisy_pose().iter().zip(c.noisy_pose()) {
            err2 += (a - b) * (a - b);
            ref2 += b * b;
        }
    }
    let per_view: Vec<Vec<Joints2D>> = sampled
        .views
        .iter()
        .map(|v| decode_pose_latents(v, patch, &toy.palette).into_iter().map(|(_, j)| j).collect())
        .collect();
    let frames = toy.targets.len();
    let observations: Vec<Vec<Joints2D>> = (0..frames).map(|f| per_view.iter().map(|v| v[f].clone()).collect()).collect();
    let total: usize = observations.iter().flatten().map(Joints2D::len).sum();
    let found: usize = observations.iter().flatten().map(|o| o.valid.iter().filter(|v| **v).count()).sum();
    let rec = reconstruct_clip(&observations, &toy.cameras, &record.skeleton, record.clip.fps, settings)?;
    let diag = toy.rest.bbox_diagonal();
    let (mut sum, mut count, mut max) = (0.0, 0usize, 0.0f64);
    for (pose, target) in rec.clip.frames.iter().zip(&toy.targets) {
        let got = forward_kinematics(&record.skeleton, pose)?;
        for (a, b) in got.positions.iter().zip(&target.positions) {
            let e = (a - b).norm() / diag;
            sum += e;
            count += 1;
            max = max.max(e);
        }
    }
    Ok(SampleScore {
        pose_latent_rel_rms: (err2 / ref2.max(1e-300)).sqrt(),
        fk_mean: sum / count.max(1) as f64,
        fk_max: max,
        decoded_fraction: found as f64 / total.max(1) as f64,
    })
}
