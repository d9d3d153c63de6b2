//! Dataset manifest and on-disk layout.
//!
//! ```text
//! manifest.json
//! clips/<id>/skeleton.json
//! clips/<id>/clip.json
//! clips/<id>/cameras.json        (when rendered)
//! clips/<id>/palette.json        (when rendered)
//! clips/<id>/posemaps/view{v}/frame{NNN}.png
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::save_cameras;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::jointdit::model::MOTION_LABELS;
use crate::pipeline::{fit_rig, render_clip};
use crate::posemap::make_palette;
use crate::skeleton::{AnimationClip, Skeleton};

use super::{motion_score, ClipRecord, SkeletonKind, Source};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source: Source,
    pub label: usize,
    pub label_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SkeletonKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub frames: usize,
    pub joints: usize,
    pub motion_score: f64,
    /// Paths relative to the manifest directory.
    pub skeleton: String,
    pub clip: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cameras: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posemaps: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub records: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = read_json(path)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::invalid("manifest", format!("unsupported version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Loads every record; paths resolve against `root`. The motion score is
/// recomputed from the clip.
pub fn load_record(root: &Path, entry: &ManifestEntry) -> Result<ClipRecord> {
    let skeleton = Skeleton::load(&root.join(&entry.skeleton))?;
    let clip = AnimationClip::load(&root.join(&entry.clip))?;
    let score = motion_score(&skeleton, &clip)?;
    Ok(ClipRecord {
        id: entry.id.clone(),
        source: entry.source,
        label: entry.label,
        kind: entry.kind,
        seed: entry.seed,
        skeleton,
        clip,
        motion_score: score,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub resolution: u32,
    pub azimuths_deg: Vec<f64>,
}

fn rel(p: &Path, root: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// Writes records (and optionally their pose maps) under `dir`.
pub fn write_dataset(dir: &Path, records: &[ClipRecord], render: Option<&RenderOptions>) -> Result<Manifest> {
    let mut entries = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let clip_dir: PathBuf = dir.join("clips").join(&r.id);
        let skel_path = clip_dir.join("skeleton.json");
        let clip_path = clip_dir.join("clip.json");
        r.skeleton.save(&skel_path)?;
        r.clip.save(&clip_path)?;
        let mut entry = ManifestEntry {
            id: r.id.clone(),
            source: r.source,
            label: r.label,
            label_name: MOTION_LABELS[r.label % MOTION_LABELS.len()].to_string(),
            kind: r.kind,
            seed: r.seed,
            frames: r.clip.frames.len(),
            joints: r.skeleton.joint_count(),
            motion_score: r.motion_score,
            skeleton: rel(&skel_path, dir),
            clip: rel(&clip_path, dir),
            cameras: None,
            palette: None,
            posemaps: None,
        };
        if let Some(opts) = render {
            let cameras = fit_rig(&r.skeleton, &r.clip, opts.resolution, &opts.azimuths_deg)?;
            let palette = make_palette(r.skeleton.joint_count(), r.seed.unwrap_or(i as u64))?;
            let cam_path = clip_dir.join("cameras.json");
            let pal_path = clip_dir.join("palette.json");
            let maps_dir = clip_dir.join("posemaps");
            save_cameras(&cam_path, &cameras)?;
            palette.save(&pal_path)?;
            for (v, frames) in render_clip(&r.skeleton, &r.clip, &cameras, &palette)?.iter().enumerate() {
                for (f, map) in frames.iter().enumerate() {
                    map.save_png(&maps_dir.join(format!("view{v}")).join(format!("frame{f:03}.png")))?;
                }
            }
            entry.cameras = Some(rel(&cam_path, dir));
            entry.palette = Some(rel(&pal_path, dir));
            entry.posemaps = Some(rel(&maps_dir, dir));
        }
        entries.push(entry);
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        records: entries,
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
