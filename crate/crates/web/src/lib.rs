//! Browser bindings: a synthetic clip seen by a horizon rig, with pose-map
//! rendering, a reconstruction round trip and ray-map previews.

use animaxkit::camera::{azimuth_deg, plucker_map, Camera, CANONICAL_AZIMUTHS_DEG};
use animaxkit::datakit::{synth_clip, ClipRecord, SynthParams};
use animaxkit::jointdit::model::MOTION_LABELS;
use animaxkit::pipeline::{
    add_pixel_noise, bone_length_deviations, decode_clip, fit_rig, position_errors, project_observations, reconstruct_clip,
    ReconstructSettings,
};
use animaxkit::posemap::{make_palette, render_posemap, ColorPalette};
use animaxkit::skeleton::{forward_kinematics, JointPositions3D};
use animaxkit::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Scene {
    record: ClipRecord,
    cameras: Vec<Camera>,
    palette: ColorPalette,
    positions: Vec<JointPositions3D>,
}

#[derive(Debug, Serialize)]
pub struct RoundtripSummary {
    pub mode: &'static str,
    pub lambda_bone: f64,
    pub mean_error: f64,
    pub max_error: f64,
    pub bones_within_1pct: f64,
    pub frame_mean_errors: Vec<f64>,
}

fn js(e: animaxkit::Error) -> JsError {
    JsError::new(&e.to_string())
}

impl Scene {
    pub fn build(seed: u32, max_joints: usize, resolution: u32, views: usize) -> Result<Self> {
        let params = SynthParams {
            max_joints: max_joints.clamp(2, 20),
            ..SynthParams::default()
        };
        let record = synth_clip(seed as u64, &params)?;
        let azimuths = &CANONICAL_AZIMUTHS_DEG[..views.clamp(1, CANONICAL_AZIMUTHS_DEG.len())];
        let cameras = fit_rig(&record.skeleton, &record.clip, resolution.clamp(32, 1024), azimuths)?;
        let palette = make_palette(record.skeleton.joint_count(), seed as u64)?;
        let positions = record
            .clip
            .frames
            .iter()
            .map(|p| forward_kinematics(&record.skeleton, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { record, cameras, palette, positions })
    }

    pub fn render_rgba(&self, view: usize, frame: usize) -> Result<Vec<u8>> {
        let cam = &self.cameras[view.min(self.cameras.len() - 1)];
        let pos = &self.positions[frame.min(self.positions.len() - 1)];
        let map = render_posemap(&self.record.skeleton, pos, cam, &self.palette)?;
        Ok(map.pixels.iter().flat_map(|p| [p[0], p[1], p[2], 255]).collect())
    }

    /// Rendered maps when `noise_px` is 0, noisy exact projections otherwise.
    pub fn roundtrip_summary(&self, lambda_bone: f64, noise_px: f64) -> Result<RoundtripSummary> {
        let settings = ReconstructSettings {
            lambda_bone,
            ..ReconstructSettings::default()
        };
        let (mode, obs) = if noise_px > 0.0 {
            let mut obs: Vec<_> = self.positions.iter().map(|p| project_observations(p, &self.cameras)).collect();
            for (f, o) in obs.iter_mut().enumerate() {
                add_pixel_noise(o, noise_px, f as u64)?;
            }
            ("projected", obs)
        } else {
            let maps = self
                .cameras
                .iter()
                .map(|c| {
                    self.positions
                        .iter()
                        .map(|p| render_posemap(&self.record.skeleton, p, c, &self.palette))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            ("rendered", decode_clip(&maps, &self.palette, settings.decode_params())?)
        };
        let rec = reconstruct_clip(&obs, &self.cameras, &self.record.skeleton, self.record.clip.fps, &settings)?;
        let errors = position_errors(&self.record.skeleton, &self.record.clip, &rec.clip)?;
        let dev = bone_length_deviations(&self.record.skeleton, &rec.triangulated);
        Ok(RoundtripSummary {
            mode,
            lambda_bone,
            mean_error: errors.mean,
            max_error: errors.max,
            bones_within_1pct: dev.iter().filter(|d| **d <= 0.01).count() as f64 / dev.len().max(1) as f64,
            frame_mean_errors: errors.frames.iter().map(|f| f.mean).collect(),
        })
    }

    /// Ray directions mapped to colors at `size × size`.
    pub fn ray_rgba(&self, view: usize, size: usize) -> Vec<u8> {
        let cam = &self.cameras[view.min(self.cameras.len() - 1)];
        let map = plucker_map(cam, size.max(1), size.max(1));
        let byte = |x: f64| ((0.5 + 0.5 * x).clamp(0.0, 1.0) * 255.0).round() as u8;
        map.rays.iter().flat_map(|r| [byte(r[0]), byte(r[1]), byte(r[2]), 255]).collect()
    }
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, max_joints: usize, resolution: u32, views: usize) -> std::result::Result<Scene, JsError> {
        Self::build(seed, max_joints, resolution, views).map_err(js)
    }

    pub fn frames(&self) -> usize {
        self.positions.len()
    }

    pub fn views(&self) -> usize {
        self.cameras.len()
    }

    pub fn joints(&self) -> usize {
        self.record.skeleton.joint_count()
    }

    pub fn resolution(&self) -> u32 {
        self.cameras[0].width
    }

    pub fn label(&self) -> String {
        MOTION_LABELS[self.record.label].to_string()
    }

    pub fn azimuths(&self) -> Vec<f64> {
        self.cameras.iter().map(azimuth_deg).collect()
    }

    /// RGBA pixels of one pose map.
    pub fn render(&self, view: usize, frame: usize) -> std::result::Result<Vec<u8>, JsError> {
        self.render_rgba(view, frame).map_err(js)
    }

    /// Round-trip metrics as JSON.
    pub fn roundtrip(&self, lambda_bone: f64, noise_px: f64) -> std::result::Result<String, JsError> {
        let s = self.roundtrip_summary(lambda_bone, noise_px).map_err(js)?;
        serde_json::to_string(&s).map_err(|e| JsError::new(&e.to_string()))
    }

    /// RGBA preview of the view's Plücker ray directions.
    pub fn rays(&self, view: usize, size: usize) -> Vec<u8> {
        self.ray_rgba(view, size)
    }
}
