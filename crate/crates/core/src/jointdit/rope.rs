//! 3D rotary position table with rgb/pose sharing.
//!
//! Channel pairs `(2p, 2p+1)` are split into three groups: one third of the
//! pairs each for the column (`j`) and row (`k`) axes, the remainder for the
//! temporal axis. The table covers temporal positions `0..f+2`; slot `s` of
//! the `2f+4`-slot sequence uses temporal position `s mod (f+2)`, so the rgb
//! token at `(i, j, k)` and the pose token at `(i+f+2, j, k)` receive the same
//! rotation.

use std::rc::Rc;

use crate::error::{Error, Result};

use super::autodiff::RotaryAngles;
use super::layout::{LatentDims, TokenGrid};

pub const ROPE_BASE: f64 = 10000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RopeTable {
    pub positions: usize,
    pub h: usize,
    pub w: usize,
    pub dim: usize,
    /// `[i][k][j][pair]` rotation angles.
    angles: Vec<f64>,
}

fn axis_frequencies(pairs: usize) -> Vec<f64> {
    (0..pairs)
        .map(|p| ROPE_BASE.powf(-(p as f64) / pairs.max(1) as f64))
        .collect()
}

impl RopeTable {
    /// Table for a sequence with latent length `1 + f`, over channel width `dim`.
    pub fn new(f: usize, h: usize, w: usize, dim: usize) -> Result<Self> {
        if dim % 2 != 0 || dim == 0 {
            return Err(Error::invalid("rope table", format!("channel width must be even, got {dim}")));
        }
        let pairs = dim / 2;
        let spatial = pairs / 3;
        let temporal = pairs - 2 * spatial;
        let (ft, fj, fk) = (axis_frequencies(temporal), axis_frequencies(spatial), axis_frequencies(spatial));
        let positions = f + 2;
        let mut angles = Vec::with_capacity(positions * h * w * pairs);
        for i in 0..positions {
            for k in 0..h {
                for j in 0..w {
                    angles.extend(ft.iter().map(|w| i as f64 * w));
                    angles.extend(fj.iter().map(|w| j as f64 * w));
                    angles.extend(fk.iter().map(|w| k as f64 * w));
                }
            }
        }
        Ok(Self {
            positions,
            h,
            w,
            dim,
            angles,
        })
    }

    pub fn pairs(&self) -> usize {
        self.dim / 2
    }

    /// Rotation angles of table position `(i, j, k)`.
    pub fn angles(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let p = self.pairs();
        let start = ((i * self.h + k) * self.w + j) * p;
        &self.angles[start..start + p]
    }

    /// Temporal table index used by sequence slot `slot`.
    pub fn position_of_slot(&self, slot: usize) -> usize {
        slot % self.positions
    }

    pub fn slot_angles(&self, slot: usize, j: usize, k: usize) -> &[f64] {
        self.angles(self.position_of_slot(slot), j, k)
    }

    /// Cos/sin rows for `slots` consecutive slots of one view, row order
    /// `[slot][k][j]`.
    pub fn rotary_angles(&self, slots: usize) -> Rc<RotaryAngles> {
        let p = self.pairs();
        let n = slots * self.h * self.w;
        let (mut cos, mut sin) = (Vec::with_capacity(n * p), Vec::with_capacity(n * p));
        for s in 0..slots {
            for k in 0..self.h {
                for j in 0..self.w {
                    for a in self.slot_angles(s, j, k) {
                        cos.push(a.cos());
                        sin.push(a.sin());
                    }
                }
            }
        }
        Rc::new(RotaryAngles { pairs: p, cos, sin })
    }
}

pub fn rotate_pairs(x: &mut [f64], angles: &[f64]) {
    for (p, a) in angles.iter().enumerate() {
        let (c, s) = (a.cos(), a.sin());
        let (x0, x1) = (x[2 * p], x[2 * p + 1]);
        x[2 * p] = x0 * c - x1 * s;
        x[2 * p + 1] = x0 * s + x1 * c;
    }
}

/// Applies the shared rotary encoding to every token of `grid`.
pub fn shared_rope(grid: &TokenGrid, table: &RopeTable) -> Result<TokenGrid> {
    let d: LatentDims = grid.dims;
    if table.positions != d.half() || table.h != d.h || table.w != d.w || table.dim != d.c {
        return Err(Error::Structural(format!(
            "rope table ({} positions, {}x{}, dim {}) does not match grid (f+2 = {}, {}x{}, c = {})",
            table.positions,
            table.h,
            table.w,
            table.dim,
            d.half(),
            d.h,
            d.w,
            d.c
        )));
    }
    let mut out = grid.clone();
    for s in 0..d.slots() {
        for k in 0..d.h {
            for j in 0..d.w {
                rotate_pairs(out.token_mut(s, k, j), table.slot_angles(s, j, k));
            }
        }
    }
    Ok(out)
}
