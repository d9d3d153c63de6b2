//! Toy denoiser: modality-aware timestep conditioning, per-view 3D attention
//! with shared rotary encoding, multi-view attention, label cross-attention.

use std::collections::HashMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{plucker_map, Camera};
use crate::error::{Error, Result};

use super::autodiff::{Graph, RotaryAngles, Tensor, Var};
use super::layout::{inflation_index, LatentDims, MultiViewGrid, TokenGrid};
use super::rope::RopeTable;

pub const MODALITY_FREQS: usize = 16;
pub const TIMESTEP_FREQS: usize = 16;
pub const TIMESTEP_SCALE: f64 = 1000.0;
pub const MOTION_LABELS: [&str; 8] = ["walk", "run", "jump", "wave", "turn", "idle-sway", "open-close", "swing"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub dims: LatentDims,
    pub blocks: usize,
    pub heads: usize,
    pub width: usize,
    pub mlp_ratio: usize,
    /// Size of the label vocabulary used for cross-attention.
    pub labels: usize,
    pub cond_drop: f64,
    pub guidance: f64,
    pub steps: usize,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let bad = |m: String| Err(Error::invalid("denoiser config", m));
        if self.blocks == 0 || self.heads == 0 || self.width == 0 || self.mlp_ratio == 0 {
            return bad("blocks, heads, width and mlp_ratio must be >= 1".into());
        }
        if self.width % self.heads != 0 {
            return bad(format!("width {} not divisible by heads {}", self.width, self.heads));
        }
        if self.head_dim() % 2 != 0 {
            return bad(format!("head width {} must be even", self.head_dim()));
        }
        if self.labels == 0 {
            return bad("label vocabulary must be non-empty".into());
        }
        if !(0.0..=1.0).contains(&self.cond_drop) {
            return bad(format!("cond_drop {} outside [0, 1]", self.cond_drop));
        }
        if self.steps == 0 || !self.guidance.is_finite() {
            return bad("steps must be >= 1 and guidance finite".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
    }

    pub fn id(&self, name: &str) -> usize {
        *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.id(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let id = self.id(name);
        &mut self.tensors[id]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    fn var(&self, g: &mut Graph, name: &str) -> Var {
        let id = self.id(name);
        g.param(id, &self.tensors[id])
    }

    fn linear(&self, g: &mut Graph, x: Var, name: &str) -> Var {
        let w = self.var(g, &format!("{name}.w"));
        let b = self.var(g, &format!("{name}.b"));
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

struct Init {
    rng: ChaCha8Rng,
    /// Every tensor, including ones normally zero-initialized, gets noise.
    randomize_all: bool,
}

impl Init {
    fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(&mut self.rng)).collect())
    }

    fn linear(&mut self, store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f64) {
        let w = self.normal(fan_in, fan_out, gain / (fan_in as f64).sqrt());
        let b = if self.randomize_all {
            self.normal(1, fan_out, 0.1)
        } else {
            Tensor::zeros(1, fan_out)
        };
        store.insert(&format!("{name}.w"), w);
        store.insert(&format!("{name}.b"), b);
    }

    fn zero_linear(&mut self, store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) {
        if self.randomize_all {
            self.linear(store, name, fan_in, fan_out, 1.0);
        } else {
            store.insert(&format!("{name}.w"), Tensor::zeros(fan_in, fan_out));
            store.insert(&format!("{name}.b"), Tensor::zeros(1, fan_out));
        }
    }
}

/// Sinusoidal features `[sin(x·ω_k), cos(x·ω_k)]` with `ω_k = 10000^(-k/K)`.
pub fn frequency_encode(x: f64, freqs: usize) -> Vec<f64> {
    let omegas: Vec<f64> = (0..freqs)
        .map(|k| (-(10000f64.ln()) * k as f64 / freqs as f64).exp())
        .collect();
    omegas.iter().map(|w| (x * w).sin()).chain(omegas.iter().map(|w| (x * w).cos())).collect()
}

fn attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize, rope: Option<&Rc<RotaryAngles>>) -> Var {
    let width = g.shape(q).1;
    let hd = width / heads;
    let inv = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let mut qh = g.slice_cols(q, h * hd, hd);
        let mut kh = g.slice_cols(k, h * hd, hd);
        if let Some(r) = rope {
            qh = g.rotary(qh, Rc::clone(r));
            kh = g.rotary(kh, Rc::clone(r));
        }
        let vh = g.slice_cols(v, h * hd, hd);
        let s = g.matmul_bt(qh, kh);
        let s = g.scale(s, inv);
        let p = g.softmax_rows(s);
        outs.push(g.matmul(p, vh));
    }
    if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)
    }
}

fn modulate(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Var {
    let s1 = g.add_scalar(scale, 1.0);
    let y = g.mul(x, s1);
    g.add(y, shift)
}

/// Attention across all views at every temporal slot. `x` rows are ordered
/// `[view][slot][k][j]`; the result keeps that order.
fn multiview_mix(g: &mut Graph, store: &ParamStore, x: Var, dims: &LatentDims, heads: usize, prefix: &str) -> Var {
    let q = store.linear(g, x, &format!("{prefix}.q"));
    let k = store.linear(g, x, &format!("{prefix}.k"));
    let v = store.linear(g, x, &format!("{prefix}.v"));
    let groups = inflation_index(dims);
    let mut parts = Vec::with_capacity(groups.len());
    let mut order = Vec::with_capacity(dims.views * dims.tokens_per_view());
    for idx in groups {
        order.extend_from_slice(&idx);
        let idx = Rc::new(idx);
        let qt = g.gather_rows(q, Rc::clone(&idx));
        let kt = g.gather_rows(k, Rc::clone(&idx));
        let vt = g.gather_rows(v, idx);
        parts.push(attention(g, qt, kt, vt, heads, None));
    }
    let mixed = g.concat_rows(&parts);
    let mut inverse = vec![0; order.len()];
    for (pos, row) in order.iter().enumerate() {
        inverse[*row] = pos;
    }
    let restored = g.gather_rows(mixed, Rc::new(inverse));
    store.linear(g, restored, &format!("{prefix}.o"))
}

fn feature_tensor(grid: &MultiViewGrid, drop_rgb: bool) -> Tensor {
    let (cols, mut data) = grid.token_features();
    if drop_rgb {
        let per_view = grid.dims.tokens_per_view();
        for v in 0..grid.dims.views {
            for s in 0..grid.dims.spatial() {
                let row = v * per_view + s;
                data[row * cols..row * cols + grid.dims.c].fill(0.0);
            }
        }
    }
    Tensor::from_vec(data.len() / cols, cols, data)
}

fn check_grid(config: &DenoiserConfig, grid: &MultiViewGrid) -> Result<()> {
    let d = grid.dims;
    let want = config.dims;
    if (d.f, d.h, d.w, d.c) != (want.f, want.h, want.w, want.c) {
        return Err(Error::Structural(format!(
            "grid dims (f={}, h={}, w={}, c={}) do not match model (f={}, h={}, w={}, c={})",
            d.f, d.h, d.w, d.c, want.f, want.h, want.w, want.c
        )));
    }
    Ok(())
}

/// Conditioning inputs for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Conditioning {
    pub timestep: f64,
    pub label: usize,
    /// Replace the rgb condition slot by zeros.
    pub drop_rgb: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParamStore,
}

impl Denoiser {
    /// Standard initialization: the modality MLP output layer starts at zero.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        Self::init(config, seed, false)
    }

    /// Every tensor drawn at random, used for gradient checks.
    pub fn random(config: DenoiserConfig, seed: u64) -> Result<Self> {
        Self::init(config, seed, true)
    }

    fn init(config: DenoiserConfig, seed: u64, randomize_all: bool) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            randomize_all,
        };
        let mut p = ParamStore::default();
        let w = config.width;
        let c = config.dims.c;
        init.linear(&mut p, "in", c + 6, w, 1.0);
        init.linear(&mut p, "temb.l1", 2 * TIMESTEP_FREQS, w, 1.0);
        init.linear(&mut p, "temb.l2", w, w, 1.0);
        init.linear(&mut p, "mod.l1", 2 * MODALITY_FREQS, w, 1.0);
        init.zero_linear(&mut p, "mod.l2", w, w);
        let emb = init.normal(config.labels, w, 1.0);
        p.insert("label.emb", emb);
        let null = init.normal(1, w, 1.0);
        p.insert("label.null", null);
        for b in 0..config.blocks {
            init.linear(&mut p, &format!("b{b}.ada"), w, 6 * w, 0.1);
            for part in ["attn", "mv", "x"] {
                for proj in ["q", "k", "v", "o"] {
                    init.linear(&mut p, &format!("b{b}.{part}.{proj}"), w, w, 1.0);
                }
            }
            init.linear(&mut p, &format!("b{b}.mlp.l1"), w, config.mlp_ratio * w, 1.0);
            init.linear(&mut p, &format!("b{b}.mlp.l2"), config.mlp_ratio * w, w, 1.0);
        }
        init.linear(&mut p, "final.ada", w, 2 * w, 0.1);
        init.linear(&mut p, "out", w, c, 1.0);
        Ok(Self { config, params: p })
    }

    /// Builds the forward pass; returns the per-token output `(N·T·h·w) × c`.
    pub fn forward(&self, g: &mut Graph, grid: &MultiViewGrid, cond: Conditioning) -> Result<Var> {
        check_grid(&self.config, grid)?;
        if cond.label >= self.config.labels {
            return Err(Error::invalid(
                "label",
                format!("{} outside vocabulary of {}", cond.label, self.config.labels),
            ));
        }
        if !(0.0..=1.0).contains(&cond.timestep) {
            return Err(Error::invalid("timestep", format!("{} outside [0, 1]", cond.timestep)));
        }
        let p = &self.params;
        let cfg = &self.config;
        let dims = grid.dims;
        let heads = cfg.heads;

        let feats = g.constant(feature_tensor(grid, cond.drop_rgb));
        let mut x = p.linear(g, feats, "in");

        let t_in = g.constant(Tensor::from_vec(
            1,
            2 * TIMESTEP_FREQS,
            frequency_encode(TIMESTEP_SCALE * cond.timestep, TIMESTEP_FREQS),
        ));
        let temb = p.linear(g, t_in, "temb.l1");
        let temb = g.silu(temb);
        let temb = p.linear(g, temb, "temb.l2");
        let bias = modality_graph(g, p);
        let cond2 = g.add_row(bias, temb);
        let cond2 = g.silu(cond2);

        let per_view = dims.tokens_per_view();
        let rows = dims.views * per_view;
        let token_modality: Rc<Vec<usize>> = Rc::new(
            (0..rows)
                .map(|r| dims.modality((r % per_view) / dims.spatial()))
                .collect(),
        );

        let table = RopeTable::new(dims.f, dims.h, dims.w, cfg.head_dim())?;
        let angles = table.rotary_angles(dims.slots());

        let label_table = p.var(g, "label.emb");
        let label_row = g.gather_rows(label_table, Rc::new(vec![cond.label]));
        let null = p.var(g, "label.null");
        let context = g.concat_rows(&[label_row, null]);

        let w = cfg.width;
        for b in 0..cfg.blocks {
            let ada = p.linear(g, cond2, &format!("b{b}.ada"));
            let ada = g.gather_rows(ada, Rc::clone(&token_modality));
            let chunk: Vec<Var> = (0..6).map(|i| g.slice_cols(ada, i * w, w)).collect();

            let h = g.layer_norm(x);
            let h = modulate(g, h, chunk[0], chunk[1]);
            let q = p.linear(g, h, &format!("b{b}.attn.q"));
            let k = p.linear(g, h, &format!("b{b}.attn.k"));
            let v = p.linear(g, h, &format!("b{b}.attn.v"));
            let mut per = Vec::with_capacity(dims.views);
            for view in 0..dims.views {
                let qv = g.slice_rows(q, view * per_view, per_view);
                let kv = g.slice_rows(k, view * per_view, per_view);
                let vv = g.slice_rows(v, view * per_view, per_view);
                per.push(attention(g, qv, kv, vv, heads, Some(&angles)));
            }
            let a = if per.len() == 1 { per[0] } else { g.concat_rows(&per) };
            let a = p.linear(g, a, &format!("b{b}.attn.o"));
            let gate = g.add_scalar(chunk[2], 1.0);
            let a = g.mul(a, gate);
            x = g.add(x, a);

            let h = g.layer_norm(x);
            let m = multiview_mix(g, p, h, &dims, heads, &format!("b{b}.mv"));
            x = g.add(x, m);

            let h = g.layer_norm(x);
            let q = p.linear(g, h, &format!("b{b}.x.q"));
            let k = p.linear(g, context, &format!("b{b}.x.k"));
            let v = p.linear(g, context, &format!("b{b}.x.v"));
            let a = attention(g, q, k, v, heads, None);
            let a = p.linear(g, a, &format!("b{b}.x.o"));
            x = g.add(x, a);

            let h = g.layer_norm(x);
            let h = modulate(g, h, chunk[3], chunk[4]);
            let h = p.linear(g, h, &format!("b{b}.mlp.l1"));
            let h = g.silu(h);
            let h = p.linear(g, h, &format!("b{b}.mlp.l2"));
            let gate = g.add_scalar(chunk[5], 1.0);
            let h = g.mul(h, gate);
            x = g.add(x, h);
        }

        let fa = p.linear(g, cond2, "final.ada");
        let fa = g.gather_rows(fa, token_modality);
        let shift = g.slice_cols(fa, 0, w);
        let scale = g.slice_cols(fa, w, w);
        let h = g.layer_norm(x);
        let h = modulate(g, h, shift, scale);
        Ok(p.linear(g, h, "out"))
    }

    /// Current modality embedding as a standalone module.
    pub fn modality_embedding(&self) -> ModalityEmbedding {
        let p = &self.params;
        ModalityEmbedding {
            l1_w: p.get("mod.l1.w").clone(),
            l1_b: p.get("mod.l1.b").clone(),
            l2_w: p.get("mod.l2.w").clone(),
            l2_b: p.get("mod.l2.b").clone(),
        }
    }
}

/// Rows 0 and 1 hold the modality bias of identifiers 0 and 1.
fn modality_graph(g: &mut Graph, p: &ParamStore) -> Var {
    let enc: Vec<f64> = (0..2).flat_map(|id| frequency_encode(id as f64, MODALITY_FREQS)).collect();
    let enc = g.constant(Tensor::from_vec(2, 2 * MODALITY_FREQS, enc));
    let h = p.linear(g, enc, "mod.l1");
    let h = g.silu(h);
    p.linear(g, h, "mod.l2")
}

/// Learned bias separating rgb (0) from pose (1) tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEmbedding {
    pub l1_w: Tensor,
    pub l1_b: Tensor,
    pub l2_w: Tensor,
    pub l2_b: Tensor,
}

impl ModalityEmbedding {
    pub fn bias(&self, identifier: usize) -> Result<Vec<f64>> {
        if identifier > 1 {
            return Err(Error::invalid("modality identifier", format!("{identifier} is not 0 or 1")));
        }
        let enc = Tensor::from_vec(1, 2 * MODALITY_FREQS, frequency_encode(identifier as f64, MODALITY_FREQS));
        let mut h = super::autodiff::matmul(&enc, &self.l1_w);
        for (x, b) in h.data.iter_mut().zip(&self.l1_b.data) {
            *x += b;
            *x /= 1.0 + (-*x).exp();
        }
        let mut out = super::autodiff::matmul(&h, &self.l2_w);
        for (x, b) in out.data.iter_mut().zip(&self.l2_b.data) {
            *x += b;
        }
        Ok(out.data)
    }

    /// `timestep_emb + bias(identifier)`.
    pub fn forward(&self, timestep_emb: &[f64], identifier: usize) -> Result<Vec<f64>> {
        let bias = self.bias(identifier)?;
        if bias.len() != timestep_emb.len() {
            return Err(Error::Structural(format!(
                "timestep embedding width {} != modality width {}",
                timestep_emb.len(),
                bias.len()
            )));
        }
        Ok(timestep_emb.iter().zip(bias).map(|(a, b)| a + b).collect())
    }
}

pub fn modality_bias(embedding: &ModalityEmbedding, timestep_emb: &[f64], identifier: usize) -> Result<Vec<f64>> {
    embedding.forward(timestep_emb, identifier)
}

/// Builds a grid with ray maps from cameras at the latent resolution.
pub fn grid_with_cameras(views: Vec<TokenGrid>, cameras: &[Camera]) -> Result<MultiViewGrid> {
    let Some(first) = views.first() else {
        return Err(Error::invalid("multi-view grid", "at least one view required"));
    };
    let (h, w) = (first.dims.h, first.dims.w);
    let rays = cameras.iter().map(|c| plucker_map(c, h, w)).collect();
    MultiViewGrid::new(views, rays)
}

fn output_grids(g: &Graph, out: Var, dims: LatentDims) -> Vec<TokenGrid> {
    let t = g.value(out);
    let per_view = dims.tokens_per_view() * dims.c;
    t.data
        .chunks(per_view)
        .map(|chunk| TokenGrid {
            dims,
            values: chunk.to_vec(),
        })
        .collect()
}

/// Predicted velocity for every slot of every view.
pub fn denoise_step(model: &Denoiser, grid: &MultiViewGrid, cond: Conditioning) -> Result<Vec<TokenGrid>> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, grid, cond)?;
    Ok(output_grids(&g, out, grid.dims))
}

/// Standalone multi-view attention layer from token features (latent plus
/// ray channels) to `c` output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewAttention {
    pub heads: usize,
    pub width: usize,
    pub params: ParamStore,
}

impl MultiViewAttention {
    pub fn new(c: usize, width: usize, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::invalid("multi-view attention", format!("width {width} not divisible by heads {heads}")));
        }
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            randomize_all: true,
        };
        let mut p = ParamStore::default();
        init.linear(&mut p, "in", c + 6, width, 1.0);
        for proj in ["q", "k", "v", "o"] {
            init.linear(&mut p, &format!("mv.{proj}"), width, width, 1.0);
        }
        init.linear(&mut p, "out", width, c, 1.0);
        Ok(Self { heads, width, params: p })
    }

    pub fn forward(&self, grid: &MultiViewGrid) -> Result<Vec<TokenGrid>> {
        let c = self.params.get("out.w").cols;
        if grid.dims.c != c {
            return Err(Error::Structural(format!("grid has {} channels, layer expects {c}", grid.dims.c)));
        }
        let mut g = Graph::new();
        let feats = g.constant(feature_tensor(grid, false));
        let x = self.params.linear(&mut g, feats, "in");
        let m = multiview_mix(&mut g, &self.params, x, &grid.dims, self.heads, "mv");
        let out = self.params.linear(&mut g, m, "out");
        Ok(output_grids(&g, out, grid.dims))
    }
}

pub fn multiview_attention(layer: &MultiViewAttention, grid: &MultiViewGrid) -> Result<Vec<TokenGrid>> {
    layer.forward(grid)
}
