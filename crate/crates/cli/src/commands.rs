use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use animaxkit::camera::{azimuth_deg, framing_distance, load_cameras, rig_with_azimuths, save_cameras, Camera, CameraRecord, DEFAULT_VFOV_DEG};
use animaxkit::datakit::latent::{decode_pose_latents, score_sample, toy_clip};
use animaxkit::datakit::manifest::{load_record, write_dataset, Manifest, RenderOptions, MANIFEST_VERSION};
use animaxkit::datakit::toy::ToySetup;
use animaxkit::datakit::{filter_clip, synth_clip, FilterParams, SynthParams};
use animaxkit::io::{read_json, write_atomic, write_json};
use animaxkit::jointdit::checkpoint;
use animaxkit::jointdit::layout::LatentDims;
use animaxkit::jointdit::train::{loss_csv, sample, train_toy, SampleSettings};
use animaxkit::pipeline::{
    add_pixel_noise, bone_length_deviations, fit_rig, position_errors, project_observations, reconstruct_clip, ReconstructSettings,
    RIG_MARGIN,
};
use animaxkit::posemap::{decode_posemap_with, make_palette, render_posemap, ColorPalette, Joints2D, PoseMap};
use animaxkit::skeleton::{forward_kinematics, AnimationClip, JointPositions3D, Skeleton};
use animaxkit::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::report::RunReport;
use crate::RigArgs;

fn frame_png(dir: &Path, view: usize, frame: usize) -> PathBuf {
    dir.join(format!("view{view}")).join(format!("frame{frame:03}.png"))
}

fn load_clip(report: &mut RunReport, skeleton: &Path, clip: &Path) -> Result<(Skeleton, AnimationClip)> {
    report.input("skeleton", skeleton);
    report.input("clip", clip);
    let s = Skeleton::load(skeleton)?;
    let c = AnimationClip::load(clip)?;
    c.check_skeleton(&s)?;
    Ok((s, c))
}

fn clip_positions(skeleton: &Skeleton, clip: &AnimationClip) -> Result<Vec<JointPositions3D>> {
    clip.frames.par_iter().map(|p| forward_kinematics(skeleton, p)).collect()
}

fn write_maps(dir: &Path, maps: Vec<((usize, usize), PoseMap)>) -> Result<()> {
    maps.par_iter().try_for_each(|((v, f), m)| m.save_png(&frame_png(dir, *v, *f)))
}

pub fn render(
    report: &mut RunReport,
    skeleton: &Path,
    clip: &Path,
    cameras: Option<&Path>,
    rig: &RigArgs,
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    report.stage("load");
    let (skel, clip) = load_clip(report, skeleton, clip)?;
    let cams = match cameras {
        Some(p) => {
            report.input("cameras", p);
            load_cameras(p)?
        }
        None => fit_rig(&skel, &clip, rig.resolution, &rig.azimuths()?)?,
    };
    let palette = make_palette(skel.joint_count(), seed)?;

    report.stage("render");
    let positions = clip_positions(&skel, &clip)?;
    let jobs: Vec<(usize, usize)> = (0..cams.len()).flat_map(|v| (0..positions.len()).map(move |f| (v, f))).collect();
    let maps = jobs
        .par_iter()
        .map(|&(v, f)| Ok(((v, f), render_posemap(&skel, &positions[f], &cams[v], &palette)?)))
        .collect::<Result<Vec<_>>>()?;

    report.stage("write");
    write_maps(out_dir, maps)?;
    save_cameras(&out_dir.join("cameras.json"), &cams)?;
    palette.save(&out_dir.join("palette.json"))?;
    report.output("posemaps", out_dir);
    report.output("cameras", &out_dir.join("cameras.json"));
    report.output("palette", &out_dir.join("palette.json"));
    report.metric("views", cams.len());
    report.metric("frames", positions.len());
    report.metric("images", jobs.len());
    report.metric("azimuths_deg", cams.iter().map(azimuth_deg).collect::<Vec<_>>());
    report.metric("resolution", [cams[0].width, cams[0].height]);
    Ok(())
}

fn missing(path: &Path, what: String) -> Error {
    Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, what))
}

#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    report: &mut RunReport,
    posemaps: &Path,
    cameras: &Path,
    palette: &Path,
    skeleton: &Path,
    out_clip: &Path,
    fps: f64,
    settings: &ReconstructSettings,
) -> Result<()> {
    report.stage("load");
    report.input("posemaps", posemaps);
    report.input("cameras", cameras);
    report.input("palette", palette);
    report.input("skeleton", skeleton);
    let cams = load_cameras(cameras)?;
    let palette = ColorPalette::load(palette)?;
    let skel = Skeleton::load(skeleton)?;
    if palette.joints.len() < skel.joint_count() {
        return Err(Error::invalid(
            "palette",
            format!("{} colors for {} joints", palette.joints.len(), skel.joint_count()),
        ));
    }
    for v in 0..cams.len() {
        let dir = posemaps.join(format!("view{v}"));
        if !dir.is_dir() {
            return Err(missing(&dir, format!("pose maps for view {v} not found")));
        }
    }
    let frames = (0..).take_while(|f| frame_png(posemaps, 0, *f).is_file()).count();
    if frames == 0 {
        return Err(missing(&frame_png(posemaps, 0, 0), "view0 has no frames".into()));
    }

    report.stage("decode");
    let params = settings.decode_params();
    let observations = (0..frames)
        .into_par_iter()
        .map(|f| {
            cams.iter()
                .enumerate()
                .map(|(v, cam)| {
                    let path = frame_png(posemaps, v, f);
                    if !path.is_file() {
                        return Err(missing(&path, format!("view {v} is missing frame {f}")));
                    }
                    let map = PoseMap::load_png(&path)?;
                    if (map.width, map.height) != (cam.width, cam.height) {
                        return Err(Error::invalid(
                            "pose map",
                            format!("{} is {}x{}, camera {v} expects {}x{}", path.display(), map.width, map.height, cam.width, cam.height),
                        ));
                    }
                    Ok(decode_posemap_with(&map, &palette, params))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    report.stage("solve");
    let rec = reconstruct_clip(&observations, &cams, &skel, fps, settings)?;

    report.stage("write");
    rec.clip.save(out_clip)?;
    report.output("clip", out_clip);
    report.metric("views", cams.len());
    report.metric("frames", frames);
    report.metric("lambda_bone", settings.lambda_bone);
    summarize_frames(report, &rec.frames);
    report.frames = rec.frames;
    Ok(())
}

fn summarize_frames(report: &mut RunReport, frames: &[animaxkit::pipeline::FrameMetrics]) {
    let n = frames.len().max(1) as f64;
    report.metric("mean_reproj_rms_px", frames.iter().map(|f| f.reproj_rms_px).sum::<f64>() / n);
    report.metric("max_ik_residual", frames.iter().map(|f| f.ik_max_residual).fold(0.0, f64::max));
}

#[allow(clippy::too_many_arguments)]
pub fn roundtrip(
    report: &mut RunReport,
    skeleton: &Path,
    clip: &Path,
    rig: &RigArgs,
    settings: &ReconstructSettings,
    noise_px: Option<f64>,
    out_clip: Option<&Path>,
    seed: u64,
) -> Result<()> {
    report.stage("load");
    let (skel, clip) = load_clip(report, skeleton, clip)?;
    let cams = fit_rig(&skel, &clip, rig.resolution, &rig.azimuths()?)?;
    let positions = clip_positions(&skel, &clip)?;

    let observations: Vec<Vec<Joints2D>> = match noise_px {
        Some(sigma) => {
            report.stage("project");
            let mut obs: Vec<Vec<Joints2D>> = positions.iter().map(|p| project_observations(p, &cams)).collect();
            if sigma > 0.0 {
                for (f, o) in obs.iter_mut().enumerate() {
                    add_pixel_noise(o, sigma, seed.wrapping_add(f as u64))?;
                }
            } else if sigma < 0.0 || !sigma.is_finite() {
                return Err(Error::invalid("--noise-px", format!("{sigma} must be finite and >= 0")));
            }
            obs
        }
        None => {
            report.stage("render+decode");
            let palette = make_palette(skel.joint_count(), seed)?;
            let params = settings.decode_params();
            positions
                .par_iter()
                .map(|p| {
                    cams.iter()
                        .map(|c| Ok(decode_posemap_with(&render_posemap(&skel, p, c, &palette)?, &palette, params)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    report.stage("solve");
    let rec = reconstruct_clip(&observations, &cams, &skel, clip.fps, settings)?;
    report.stage("score");
    let errors = position_errors(&skel, &clip, &rec.clip)?;
    let dev = bone_length_deviations(&skel, &rec.triangulated);
    let within = dev.iter().filter(|d| **d <= 0.01).count();

    if let Some(p) = out_clip {
        report.stage("write");
        rec.clip.save(p)?;
        report.output("clip", p);
    }
    report.metric("views", cams.len());
    report.metric("frames", clip.frames.len());
    report.metric("mode", if noise_px.is_some() { "projected" } else { "rendered" });
    report.metric("bbox_diagonal", errors.bbox_diagonal);
    report.metric("mean_error", errors.mean);
    report.metric("max_error", errors.max);
    report.metric("frame_errors", &errors.frames);
    report.metric("bones_within_1pct", within as f64 / dev.len().max(1) as f64);
    summarize_frames(report, &rec.frames);
    report.frames = rec.frames;
    Ok(())
}

pub struct ToyOverrides {
    pub count: Option<usize>,
    pub train_steps: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub cond_drop: f64,
}

pub fn toy_train(report: &mut RunReport, config: Option<&Path>, o: &ToyOverrides, out_dir: &Path, seed: u64) -> Result<()> {
    report.stage("setup");
    let mut setup = match config {
        Some(p) => {
            report.input("config", p);
            read_json::<ToySetup>(p)?
        }
        None => ToySetup::default(),
    };
    if let Some(n) = o.count {
        setup.count = n;
    }
    if let Some(s) = o.train_steps {
        setup.train.steps = s;
    }
    if let Some(b) = o.batch {
        setup.train.batch = b;
    }
    if let Some(lr) = o.lr {
        setup.train.lr = lr;
    }
    setup.model.cond_drop = o.cond_drop;
    setup.model.dims = setup.latent.dims();
    setup.train.seed = seed;
    setup.validate()?;

    report.stage("data");
    let records: Vec<_> = (0..setup.count as u64)
        .into_par_iter()
        .map(|k| synth_clip(setup.seed + k, &setup.synth))
        .collect::<Result<_>>()?;
    let clips = setup.clips(&records)?;
    let examples = ToySetup::examples(&clips);

    report.stage("train");
    let model = setup.model(seed)?;
    let params = model.params.scalar_count();
    let outcome = train_toy(model, &examples, &setup.train, |_, _| {})?;

    report.stage("write");
    let ckpt = out_dir.join("model.ckpt");
    checkpoint::save(&ckpt, &outcome.model)?;
    write_atomic(&out_dir.join("loss.csv"), loss_csv(&outcome.curve).as_bytes())?;
    write_atomic(&out_dir.join("eval.csv"), loss_csv(&outcome.eval_curve).as_bytes())?;
    write_json(&out_dir.join("toy.json"), &setup)?;
    for (name, file) in [("checkpoint", "model.ckpt"), ("loss", "loss.csv"), ("eval", "eval.csv"), ("setup", "toy.json")] {
        report.output(name, &out_dir.join(file));
    }
    report.metric("clips", setup.count);
    report.metric("parameters", params);
    report.metric("steps", setup.train.steps);
    report.metric("initial_eval_loss", outcome.initial_eval());
    report.metric("final_eval_loss", outcome.final_eval());
    report.metric("loss_ratio", outcome.final_eval() / outcome.initial_eval());
    Ok(())
}

#[derive(Serialize)]
struct SampledLatents<'a> {
    dims: LatentDims,
    label: usize,
    guidance: f64,
    steps: usize,
    seed: u64,
    /// Per view: the `(1 + f)` noisy rgb slots then the noisy pose slots.
    noisy_rgb: Vec<&'a [f64]>,
    noisy_pose: Vec<&'a [f64]>,
}

#[derive(Serialize)]
struct Joints2DRecord {
    positions: Vec<[f64; 2]>,
    valid: Vec<bool>,
    support: Vec<usize>,
}

impl From<&Joints2D> for Joints2DRecord {
    fn from(j: &Joints2D) -> Self {
        Self {
            positions: j.positions.iter().map(|p| [p.x, p.y]).collect(),
            valid: j.valid.clone(),
            support: j.support.clone(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn toy_sample(
    report: &mut RunReport,
    model_dir: &Path,
    clip_index: usize,
    label: Option<usize>,
    guidance: f64,
    steps: usize,
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    report.stage("load");
    report.input("model_dir", model_dir);
    let setup: ToySetup = read_json(&model_dir.join("toy.json"))?;
    let model = checkpoint::load(&model_dir.join("model.ckpt"))?;
    if clip_index >= setup.count {
        return Err(Error::invalid("--clip-index", format!("{clip_index} outside the {} training clips", setup.count)));
    }
    if !guidance.is_finite() {
        return Err(Error::invalid("--guidance", "must be finite"));
    }
    let record = synth_clip(setup.seed + clip_index as u64, &setup.synth)?;
    let toy = toy_clip(&record, &setup.latent, record.seed.unwrap_or(clip_index as u64))?;
    let label = label.unwrap_or(record.label);
    if label >= model.config.labels {
        return Err(Error::invalid("--label", format!("{label} outside vocabulary of {}", model.config.labels)));
    }

    report.stage("sample");
    let settings = SampleSettings { guidance, steps, seed };
    let sampled = sample(&model, &toy.example.grid, label, &settings)?;

    report.stage("decode");
    let decoded: Vec<Vec<(PoseMap, Joints2D)>> = sampled.views.iter().map(|v| decode_pose_latents(v, setup.latent.patch, &toy.palette)).collect();
    let score = score_sample(&toy, &record, &sampled, setup.latent.patch, &ReconstructSettings::default())?;

    report.stage("write");
    let latents = SampledLatents {
        dims: sampled.dims,
        label,
        guidance,
        steps,
        seed,
        noisy_rgb: sampled.views.iter().map(|v| v.noisy_rgb()).collect(),
        noisy_pose: sampled.views.iter().map(|v| v.noisy_pose()).collect(),
    };
    write_json(&out_dir.join("latents.json"), &latents)?;
    let joints: Vec<Vec<Joints2DRecord>> = decoded.iter().map(|v| v.iter().map(|(_, j)| j.into()).collect()).collect();
    write_json(&out_dir.join("joints.json"), &joints)?;
    let maps = decoded
        .into_iter()
        .enumerate()
        .flat_map(|(v, frames)| frames.into_iter().enumerate().map(move |(f, (m, _))| ((v, f), m)))
        .collect();
    write_maps(&out_dir.join("posemaps"), maps)?;
    save_cameras(&out_dir.join("posemaps").join("cameras.json"), &toy.cameras)?;
    toy.palette.save(&out_dir.join("posemaps").join("palette.json"))?;
    report.output("latents", &out_dir.join("latents.json"));
    report.output("joints", &out_dir.join("joints.json"));
    report.output("posemaps", &out_dir.join("posemaps"));
    report.metric("clip_id", &record.id);
    report.metric("label", label);
    report.metric("guidance", guidance);
    report.metric("steps", steps);
    report.metric("pose_latent_rel_rms", score.pose_latent_rel_rms);
    report.metric("fk_mean_error", score.fk_mean);
    report.metric("fk_max_error", score.fk_max);
    report.metric("decoded_fraction", score.decoded_fraction);
    Ok(())
}

#[derive(Serialize)]
struct Rejection {
    id: String,
    reason: String,
}

pub fn filter(report: &mut RunReport, manifest: &Path, min_frames: usize, min_motion: f64, out: Option<&Path>) -> Result<()> {
    report.stage("load");
    report.input("manifest", manifest);
    let m = Manifest::load(manifest)?;
    let root = manifest.parent().unwrap_or(Path::new(""));
    let params = FilterParams { min_frames, min_motion };

    report.stage("filter");
    let decisions = m
        .records
        .par_iter()
        .map(|e| Ok(filter_clip(&load_record(root, e)?, &params)))
        .collect::<Result<Vec<_>>>()?;
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (e, d) in m.records.iter().zip(decisions) {
        match d.reason {
            None => accepted.push(e.clone()),
            Some(reason) => rejected.push(Rejection { id: e.id.clone(), reason }),
        }
    }
    let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &rejected {
        *reasons.entry(r.reason.as_str()).or_default() += 1;
    }
    report.metric("input", m.records.len());
    report.metric("accepted_count", accepted.len());
    report.metric("rejected_count", rejected.len());
    report.metric("rejections_by_reason", &reasons);
    report.metric("accepted", accepted.iter().map(|e| e.id.as_str()).collect::<Vec<_>>());
    report.metric("rejected", &rejected);

    if let Some(out) = out {
        report.stage("write");
        let src = canonical_dir(manifest)?;
        if canonical_dir(out)? != src {
            // Record paths are relative to the manifest; anchor them when it moves.
            let fix = |p: &str| src.join(p).display().to_string();
            for e in &mut accepted {
                e.skeleton = fix(&e.skeleton);
                e.clip = fix(&e.clip);
                e.cameras = e.cameras.as_deref().map(fix);
                e.palette = e.palette.as_deref().map(fix);
                e.posemaps = e.posemaps.as_deref().map(fix);
            }
        }
        Manifest { version: MANIFEST_VERSION, records: accepted }.save(out)?;
        report.output("manifest", out);
    }
    Ok(())
}

fn canonical_dir(file: &Path) -> Result<PathBuf> {
    let dir = match file.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    std::fs::canonicalize(dir).map_err(|e| Error::io(dir, e))
}

pub fn rig(
    report: &mut RunReport,
    rig: &RigArgs,
    distance: Option<f64>,
    fit: Option<(&Path, &Path)>,
    out: Option<&Path>,
) -> Result<()> {
    report.stage("rig");
    let az = rig.azimuths()?;
    let cams: Vec<Camera> = match fit {
        Some((s, c)) => {
            let (skel, clip) = load_clip(report, s, c)?;
            fit_rig(&skel, &clip, rig.resolution, &az)?
        }
        None => {
            let d = distance.unwrap_or_else(|| framing_distance(RIG_MARGIN, DEFAULT_VFOV_DEG));
            rig_with_azimuths(d, rig.resolution, &az, DEFAULT_VFOV_DEG)?
        }
    };
    report.metric("distance", cams[0].center().coords.norm());
    report.metric("azimuths_deg", cams.iter().map(azimuth_deg).collect::<Vec<_>>());
    report.metric("cameras", cams.iter().map(CameraRecord::from).collect::<Vec<_>>());
    if let Some(p) = out {
        save_cameras(p, &cams)?;
        report.output("cameras", p);
    }
    Ok(())
}

pub fn synth(
    report: &mut RunReport,
    count: usize,
    params: &SynthParams,
    render: Option<&RigArgs>,
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    report.stage("generate");
    params.validate()?;
    if count == 0 {
        return Err(Error::invalid("--count", "must be >= 1"));
    }
    let records: Vec<_> = (0..count as u64).into_par_iter().map(|k| synth_clip(seed + k, params)).collect::<Result<_>>()?;
    report.stage("write");
    let opts = match render {
        Some(r) => Some(RenderOptions { resolution: r.resolution, azimuths_deg: r.azimuths()? }),
        None => None,
    };
    let manifest = write_dataset(out_dir, &records, opts.as_ref())?;
    let mut sources: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *sources.entry(r.source.as_str()).or_default() += 1;
    }
    report.output("manifest", &out_dir.join("manifest.json"));
    report.metric("count", manifest.records.len());
    report.metric("sources", &sources);
    report.metric("joints", records.iter().map(|r| r.skeleton.joint_count()).collect::<Vec<_>>());
    Ok(())
}
