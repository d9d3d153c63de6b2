//! Clip filtering, source-balanced sampling and synthetic datasets.

pub mod latent;
pub mod manifest;
pub mod synth;
pub mod toy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{forward_kinematics, AnimationClip, Skeleton};

pub use synth::{synth_clip, synth_records, SkeletonKind, SynthParams};

pub const DEFAULT_MIN_FRAMES: usize = 16;
pub const DEFAULT_MIN_MOTION: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "mixamo-like")]
    MixamoLike,
    #[serde(rename = "vroid-like")]
    VroidLike,
    #[serde(rename = "objaverse-like")]
    ObjaverseLike,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::MixamoLike, Source::VroidLike, Source::ObjaverseLike];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::MixamoLike => "mixamo-like",
            Source::VroidLike => "vroid-like",
            Source::ObjaverseLike => "objaverse-like",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub id: String,
    pub source: Source,
    pub label: usize,
    pub kind: Option<SkeletonKind>,
    pub seed: Option<u64>,
    pub skeleton: Skeleton,
    pub clip: AnimationClip,
    /// Mean per-frame joint displacement in model units.
    pub motion_score: f64,
}

/// Mean over consecutive frame pairs of the mean joint displacement.
pub fn motion_score(skeleton: &Skeleton, clip: &AnimationClip) -> Result<f64> {
    clip.check_skeleton(skeleton)?;
    if clip.frames.len() < 2 {
        return Ok(0.0);
    }
    let positions = clip
        .frames
        .iter()
        .map(|p| forward_kinematics(skeleton, p))
        .collect::<Result<Vec<_>>>()?;
    let n = skeleton.joint_count() as f64;
    let total: f64 = positions
        .windows(2)
        .map(|w| {
            w[0].positions
                .iter()
                .zip(&w[1].positions)
                .map(|(a, b)| (b - a).norm())
                .sum::<f64>()
                / n
        })
        .sum();
    Ok(total / (positions.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub min_frames: usize,
    pub min_motion: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            min_frames: DEFAULT_MIN_FRAMES,
            min_motion: DEFAULT_MIN_MOTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub accepted: bool,
    /// `"frame_count"` or `"motion"` when rejected.
    pub reason: Option<String>,
}

/// Rejects clips with `min_frames` frames or fewer, or with motion below
/// `min_motion`.
pub fn filter_clip(record: &ClipRecord, params: &FilterParams) -> FilterDecision {
    let reject = |r: &str| FilterDecision {
        accepted: false,
        reason: Some(r.to_string()),
    };
    if record.clip.frames.len() <= params.min_frames {
        reject("frame_count")
    } else if !(record.motion_score >= params.min_motion) {
        reject("motion")
    } else {
        FilterDecision {
            accepted: true,
            reason: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mixamo_like: f64,
    pub vroid_like: f64,
    pub objaverse_like: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mixamo_like: 0.25,
            vroid_like: 0.25,
            objaverse_like: 0.5,
        }
    }
}

impl SamplerConfig {
    pub fn probability(&self, source: Source) -> f64 {
        match source {
            Source::MixamoLike => self.mixamo_like,
            Source::VroidLike => self.vroid_like,
            Source::ObjaverseLike => self.objaverse_like,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ps = Source::ALL.map(|s| self.probability(s));
        if ps.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid("sampler config", format!("probabilities must be nonnegative: {ps:?}")));
        }
        let sum: f64 = ps.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("sampler config", format!("probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Seeded source-balanced sampler: picks a source by its probability, then a
/// record of that source uniformly.
pub struct WeightedSampler<'a> {
    records: &'a [ClipRecord],
    by_source: Vec<(Source, f64, Vec<usize>)>,
    rng: ChaCha8Rng,
}

impl<'a> WeightedSampler<'a> {
    pub fn new(records: &'a [ClipRecord], config: &SamplerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut by_source = Vec::new();
        for s in Source::ALL {
            let p = config.probability(s);
            if p == 0.0 {
                continue;
            }
            let idx: Vec<usize> = records.iter().enumerate().filter(|(_, r)| r.source == s).map(|(i, _)| i).collect();
            if idx.is_empty() {
                return Err(Error::invalid(
                    "sampler",
                    format!("source {} has probability {p} but no records", s.as_str()),
                ));
            }
            by_source.push((s, p, idx));
        }
        Ok(Self {
            records,
            by_source,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl<'a> Iterator for WeightedSampler<'a> {
    type Item = &'a ClipRecord;

    fn next(&mut self) -> Option<Self::Item> {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let last = self.by_source.len() - 1;
        for (k, (_, p, idx)) in self.by_source.iter().enumerate() {
            acc += p;
            if u < acc || k == last {
                let i = idx[self.rng.random_range(0..idx.len())];
                return Some(&self.records[i]);
            }
        }
        None
    }
}

pub fn weighted_sampler<'a>(records: &'a [ClipRecord], config: &SamplerConfig, seed: u64) -> Result<WeightedSampler<'a>> {
    WeightedSampler::new(records, config, seed)
}
