//! Default toy training setup shared by the command line and the tests.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::jointdit::model::{Denoiser, DenoiserConfig, MOTION_LABELS};
use crate::jointdit::train::{TrainConfig, ToyExample};

use super::latent::{toy_clip, ToyClip, ToyLatentConfig};
use super::synth::{synth_records, SynthParams};
use super::ClipRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySetup {
    pub count: usize,
    /// First synthetic seed; clip `i` uses `seed + i`.
    pub seed: u64,
    pub synth: SynthParams,
    pub latent: ToyLatentConfig,
    pub model: DenoiserConfig,
    pub train: TrainConfig,
}

impl Default for ToySetup {
    fn default() -> Self {
        let latent = ToyLatentConfig::default();
        Self {
            count: 50,
            seed: 0,
            synth: SynthParams {
                min_joints: 3,
                max_joints: 5,
                ..SynthParams::default()
            },
            model: DenoiserConfig {
                dims: latent.dims(),
                blocks: 2,
                heads: 2,
                width: 64,
                mlp_ratio: 2,
                labels: MOTION_LABELS.len(),
                cond_drop: 0.2,
                guidance: 3.0,
                steps: 50,
            },
            latent,
            train: TrainConfig::default(),
        }
    }
}

impl ToySetup {
    pub fn validate(&self) -> Result<()> {
        self.latent.validate()?;
        self.synth.validate()?;
        self.train.validate()?;
        let mut model = self.model.clone();
        model.dims = self.latent.dims();
        model.validate()
    }

    pub fn records(&self) -> Result<Vec<ClipRecord>> {
        synth_records(self.count, self.seed, &self.synth)
    }

    /// Toy clips of `records`; palettes are seeded by the record seed.
    pub fn clips(&self, records: &[ClipRecord]) -> Result<Vec<ToyClip>> {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| toy_clip(r, &self.latent, r.seed.unwrap_or(i as u64)))
            .collect()
    }

    /// Untrained model whose dimensions follow the latent config.
    pub fn model(&self, seed: u64) -> Result<Denoiser> {
        let mut cfg = self.model.clone();
        cfg.dims = self.latent.dims();
        Denoiser::new(cfg, seed)
    }

    pub fn examples(clips: &[ToyClip]) -> Vec<ToyExample> {
        clips.iter().map(|c| c.example.clone()).collect()
    }
}
