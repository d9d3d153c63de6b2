//! Temporal token layout of the joint video-pose sequence.
//!
//! Per view the sequence holds `T = 2f + 4` temporal slots:
//!
//! ```text
//! slot 0            clean rgb condition
//! slots 1..=f+1     noisy rgb latents
//! slot f+2          clean pose condition
//! slots f+3..=2f+3  noisy pose latents
//! ```
//!
//! Tokens are stored row-major as `[slot][row k < h][col j < w][channel]`.

use serde::{Deserialize, Serialize};

use crate::camera::PluckerMap;
use crate::error::{Error, Result};

pub const TEMPORAL_COMPRESSION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentDims {
    /// Latent video length is `1 + f`.
    pub f: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub views: usize,
}

impl LatentDims {
    pub fn validate(&self) -> Result<()> {
        if self.f < 1 || self.h < 1 || self.w < 1 || self.c < 1 || self.views < 1 {
            return Err(Error::invalid("latent dims", format!("all dims must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        2 * self.f + 4
    }

    /// Slots per modality half, and the offset between paired positions.
    pub fn half(&self) -> usize {
        self.f + 2
    }

    pub fn video_frames(&self) -> usize {
        self.f + 1
    }

    /// Pixel-space frame count `F` (the pixel video has `1 + F` frames).
    pub fn pixel_frames(&self) -> usize {
        TEMPORAL_COMPRESSION * self.f
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }

    pub fn tokens_per_view(&self) -> usize {
        self.slots() * self.spatial()
    }

    pub fn slot_kind(&self, slot: usize) -> SlotKind {
        let half = self.half();
        match slot {
            0 => SlotKind::CondRgb,
            s if s < half => SlotKind::NoisyRgb(s - 1),
            s if s == half => SlotKind::CondPose,
            s => SlotKind::NoisyPose(s - half - 1),
        }
    }

    /// 0 for the rgb half, 1 for the pose half.
    pub fn modality(&self, slot: usize) -> usize {
        usize::from(slot >= self.half())
    }

    pub fn is_noisy(&self, slot: usize) -> bool {
        matches!(self.slot_kind(slot), SlotKind::NoisyRgb(_) | SlotKind::NoisyPose(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    CondRgb,
    NoisyRgb(usize),
    CondPose,
    NoisyPose(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub dims: LatentDims,
    pub values: Vec<f64>,
}

impl TokenGrid {
    pub fn zeros(dims: LatentDims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.tokens_per_view() * dims.c],
        }
    }

    fn slot_len(&self) -> usize {
        self.dims.spatial() * self.dims.c
    }

    pub fn slot(&self, s: usize) -> &[f64] {
        let n = self.slot_len();
        &self.values[s * n..(s + 1) * n]
    }

    pub fn slot_mut(&mut self, s: usize) -> &mut [f64] {
        let n = self.slot_len();
        &mut self.values[s * n..(s + 1) * n]
    }

    pub fn token(&self, slot: usize, k: usize, j: usize) -> &[f64] {
        let c = self.dims.c;
        let start = ((slot * self.dims.h + k) * self.dims.w + j) * c;
        &self.values[start..start + c]
    }

    pub fn token_mut(&mut self, slot: usize, k: usize, j: usize) -> &mut [f64] {
        let c = self.dims.c;
        let start = ((slot * self.dims.h + k) * self.dims.w + j) * c;
        &mut self.values[start..start + c]
    }

    /// Splits back into `(cond_rgb, noisy_rgb, cond_pose, noisy_pose)`.
    pub fn split(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.slot_len();
        let half = self.dims.half();
        let v = &self.values;
        (
            v[..n].to_vec(),
            v[n..half * n].to_vec(),
            v[half * n..(half + 1) * n].to_vec(),
            v[(half + 1) * n..].to_vec(),
        )
    }

    pub fn noisy_rgb(&self) -> &[f64] {
        let n = self.slot_len();
        &self.values[n..self.dims.half() * n]
    }

    pub fn noisy_pose(&self) -> &[f64] {
        let n = self.slot_len();
        &self.values[(self.dims.half() + 1) * n..]
    }
}

/// Concatenates the four streams along time. Values are copied.
pub fn build_token_sequence(
    dims: LatentDims,
    cond_rgb: &[f64],
    noisy_rgb: &[f64],
    cond_pose: &[f64],
    noisy_pose: &[f64],
) -> Result<TokenGrid> {
    dims.validate()?;
    let frame = dims.spatial() * dims.c;
    let video = dims.video_frames() * frame;
    for (name, got, want) in [
        ("cond_rgb", cond_rgb.len(), frame),
        ("noisy_rgb", noisy_rgb.len(), video),
        ("cond_pose", cond_pose.len(), frame),
        ("noisy_pose", noisy_pose.len(), video),
    ] {
        if got != want {
            return Err(Error::Structural(format!("{name} has {got} values, expected {want}")));
        }
    }
    let mut values = Vec::with_capacity(dims.tokens_per_view() * dims.c);
    values.extend_from_slice(cond_rgb);
    values.extend_from_slice(noisy_rgb);
    values.extend_from_slice(cond_pose);
    values.extend_from_slice(noisy_pose);
    Ok(TokenGrid { dims, values })
}

/// All views of one sample with their camera ray maps.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewGrid {
    pub dims: LatentDims,
    pub views: Vec<TokenGrid>,
    pub rays: Vec<PluckerMap>,
}

impl MultiViewGrid {
    pub fn new(views: Vec<TokenGrid>, rays: Vec<PluckerMap>) -> Result<Self> {
        let Some(first) = views.first() else {
            return Err(Error::invalid("multi-view grid", "at least one view required"));
        };
        let dims = LatentDims {
            views: views.len(),
            ..first.dims
        };
        if views.iter().any(|v| LatentDims { views: dims.views, ..v.dims } != dims) {
            return Err(Error::Structural("views disagree on latent dims".into()));
        }
        if rays.len() != views.len() {
            return Err(Error::Structural(format!("{} ray maps for {} views", rays.len(), views.len())));
        }
        if rays.iter().any(|r| r.height != dims.h || r.width != dims.w) {
            return Err(Error::Structural("ray map resolution differs from latent grid".into()));
        }
        let views = views.into_iter().map(|mut v| {
            v.dims = dims;
            v
        });
        Ok(Self {
            dims,
            views: views.collect(),
            rays,
        })
    }

    /// Per-token features: latent channels followed by the 6 ray channels,
    /// rows ordered `[view][slot][k][j]`.
    pub fn token_features(&self) -> (usize, Vec<f64>) {
        let d = self.dims;
        let cols = d.c + 6;
        let mut out = Vec::with_capacity(d.views * d.tokens_per_view() * cols);
        for (grid, rays) in self.views.iter().zip(&self.rays) {
            for s in 0..d.slots() {
                for k in 0..d.h {
                    for j in 0..d.w {
                        out.extend_from_slice(grid.token(s, k, j));
                        out.extend_from_slice(rays.at(k, j));
                    }
                }
            }
        }
        (cols, out)
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            dims: self.dims,
            views: order.iter().map(|i| self.views[*i].clone()).collect(),
            rays: order.iter().map(|i| self.rays[*i].clone()).collect(),
        }
    }
}

/// Row indices of the inflated multi-view operand: for each slot `t`, the
/// `N·h·w` tokens of every view at that slot, in view-major order.
pub fn inflation_index(dims: &LatentDims) -> Vec<Vec<usize>> {
    let per_view = dims.tokens_per_view();
    let spatial = dims.spatial();
    (0..dims.slots())
        .map(|t| {
            (0..dims.views)
                .flat_map(|v| (0..spatial).map(move |s| v * per_view + t * spatial + s))
                .collect()
        })
        .collect()
}

/// Shape `(2f+4, N·h·w, channels)` of the inflated operand.
pub fn inflated_shape(dims: &LatentDims, channels: usize) -> (usize, usize, usize) {
    let idx = inflation_index(dims);
    (idx.len(), idx[0].len(), channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(f: usize) -> LatentDims {
        LatentDims { f, h: 2, w: 3, c: 2, views: 1 }
    }

    #[test]
    fn slot_layout() {
        let d = dims(2);
        assert_eq!(d.slots(), 8);
        let kinds: Vec<_> = (0..8).map(|s| d.slot_kind(s)).collect();
        assert_eq!(
            kinds,
            vec![
                SlotKind::CondRgb,
                SlotKind::NoisyRgb(0),
                SlotKind::NoisyRgb(1),
                SlotKind::NoisyRgb(2),
                SlotKind::CondPose,
                SlotKind::NoisyPose(0),
                SlotKind::NoisyPose(1),
                SlotKind::NoisyPose(2),
            ]
        );
        assert_eq!(dims(1).slots(), 6);
        assert_eq!(d.pixel_frames(), 8);
        assert_eq!((0..8).map(|s| d.modality(s)).collect::<Vec<_>>(), vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn split_concat_round_trip() {
        let d = dims(2);
        let frame = d.spatial() * d.c;
        let gen = |n: usize, base: f64| (0..n).map(|i| base + i as f64).collect::<Vec<_>>();
        let (a, b, c, e) = (gen(frame, 0.0), gen(3 * frame, 100.0), gen(frame, 200.0), gen(3 * frame, 300.0));
        let grid = build_token_sequence(d, &a, &b, &c, &e).unwrap();
        assert_eq!(grid.split(), (a, b, c, e));
        assert!(build_token_sequence(d, &[0.0], &[], &[], &[]).is_err());
    }

    #[test]
    fn inflated_operand_shape() {
        let d = LatentDims { f: 2, h: 4, w: 4, c: 8, views: 2 };
        assert_eq!(inflated_shape(&d, 8), (8, 32, 8));
        let idx = inflation_index(&d);
        let mut all: Vec<usize> = idx.concat();
        all.sort_unstable();
        assert_eq!(all, (0..2 * d.tokens_per_view()).collect::<Vec<_>>());
    }
}
