//! Rectified-flow training and guided Euler sampling.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::autodiff::{Graph, Tensor};
use super::layout::{MultiViewGrid, TokenGrid};
use super::model::{denoise_step, Conditioning, Denoiser};

/// One clean training clip: all slots filled, plus its label.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyExample {
    pub grid: MultiViewGrid,
    pub label: usize,
}

/// Noise draw for one example: timestep and per-value noise for every slot
/// (only noisy slots use it).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub timestep: f64,
    pub noise: Vec<Vec<f64>>,
    pub drop_rgb: bool,
}

impl NoiseDraw {
    pub fn sample(example: &ToyExample, cond_drop: f64, rng: &mut impl Rng) -> Self {
        let timestep = rng.random_range(0.0..1.0);
        let noise = example
            .grid
            .views
            .iter()
            .map(|v| (0..v.values.len()).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let drop_rgb = cond_drop > 0.0 && rng.random_bool(cond_drop);
        Self { timestep, noise, drop_rgb }
    }
}

/// Row mask of noisy-slot tokens over `[view][slot][k][j]`.
pub fn noisy_row_mask(grid: &MultiViewGrid) -> Vec<bool> {
    let d = grid.dims;
    (0..d.views * d.tokens_per_view())
        .map(|r| d.is_noisy((r % d.tokens_per_view()) / d.spatial()))
        .collect()
}

/// Noised input grid and velocity target `ε − x₀` (zero on condition slots).
pub fn noised_pair(example: &ToyExample, draw: &NoiseDraw) -> (MultiViewGrid, Tensor) {
    let grid = &example.grid;
    let d = grid.dims;
    let t = draw.timestep;
    let mut noised = grid.clone();
    let mut target = Vec::with_capacity(d.views * d.tokens_per_view() * d.c);
    let slot_len = d.spatial() * d.c;
    for (clean, eps) in noised.views.iter_mut().zip(&draw.noise) {
        for (i, x) in clean.values.iter_mut().enumerate() {
            if d.is_noisy(i / slot_len) {
                let x0 = *x;
                *x = (1.0 - t) * x0 + t * eps[i];
                target.push(eps[i] - x0);
            } else {
                target.push(0.0);
            }
        }
    }
    let rows = d.views * d.tokens_per_view();
    (noised, Tensor::from_vec(rows, d.c, target))
}

/// Builds the masked velocity loss; returns the graph and the loss value.
pub fn loss_graph(model: &Denoiser, example: &ToyExample, draw: &NoiseDraw) -> Result<(Graph, super::autodiff::Var)> {
    let (input, target) = noised_pair(example, draw);
    let mask = noisy_row_mask(&input);
    let mut g = Graph::new();
    let out = model.forward(
        &mut g,
        &input,
        Conditioning {
            timestep: draw.timestep,
            label: example.label,
            drop_rgb: draw.drop_rgb,
        },
    )?;
    let loss = g.masked_mse(out, Rc::new(target), Rc::new(mask));
    Ok((g, loss))
}

pub fn loss_value(model: &Denoiser, example: &ToyExample, draw: &NoiseDraw) -> Result<f64> {
    let (g, loss) = loss_graph(model, example, draw)?;
    Ok(g.value(loss).data[0])
}

/// Loss and gradients (indexed like the parameter store).
pub fn loss_and_grads(model: &Denoiser, example: &ToyExample, draw: &NoiseDraw) -> Result<(f64, Vec<Tensor>)> {
    let (mut g, loss) = loss_graph(model, example, draw)?;
    let value = g.value(loss).data[0];
    g.backward(loss);
    let mut grads: Vec<Tensor> = model.params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
    for (id, gr) in g.param_grads() {
        for (a, b) in grads[id].data.iter_mut().zip(&gr.data) {
            *a += b;
        }
    }
    Ok((value, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    /// Final learning rate as a fraction of `lr` after cosine decay.
    pub min_lr_ratio: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Fixed-draw evaluation set size and interval in steps.
    pub eval_size: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 4,
            lr: 3e-3,
            warmup: 50,
            min_lr_ratio: 0.05,
            clip_norm: 1.0,
            seed: 0,
            eval_size: 32,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::invalid("train config", "steps and batch must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("train config", format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = (self.steps - self.warmup.min(self.steps)).max(1) as f64;
        let progress = ((step - self.warmup) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cosine)
    }
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i].data, &mut self.v[i].data);
            for (k, (w, gk)) in p.data.iter_mut().zip(&g.data).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| &g.data).map(|x| x * x).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for x in grads.iter_mut().flat_map(|g| g.data.iter_mut()) {
            *x *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Denoiser,
    /// Mean minibatch loss per step.
    pub curve: Vec<(usize, f64)>,
    /// Loss on the fixed evaluation draws, at step 0 and every `eval_every`.
    pub eval_curve: Vec<(usize, f64)>,
}

impl TrainOutcome {
    pub fn initial_eval(&self) -> f64 {
        self.eval_curve.first().map_or(f64::NAN, |e| e.1)
    }

    pub fn final_eval(&self) -> f64 {
        self.eval_curve.last().map_or(f64::NAN, |e| e.1)
    }
}

fn eval_set(dataset: &[ToyExample], config: &TrainConfig) -> Vec<(usize, NoiseDraw)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e7a1);
    (0..config.eval_size.max(1))
        .map(|i| {
            let idx = i % dataset.len();
            (idx, NoiseDraw::sample(&dataset[idx], 0.0, &mut rng))
        })
        .collect()
}

pub fn eval_loss(model: &Denoiser, dataset: &[ToyExample], draws: &[(usize, NoiseDraw)]) -> Result<f64> {
    let mut total = 0.0;
    for (idx, draw) in draws {
        total += loss_value(model, &dataset[*idx], draw)?;
    }
    Ok(total / draws.len().max(1) as f64)
}

/// Trains from `model` on `dataset`; `progress` sees `(step, loss)`.
pub fn train_toy(
    mut model: Denoiser,
    dataset: &[ToyExample],
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("dataset", "no training examples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let draws = eval_set(dataset, config);
    let mut adam = Adam::new(model.params.tensors());
    let mut curve = Vec::with_capacity(config.steps);
    let mut eval_curve = vec![(0, eval_loss(&model, dataset, &draws)?)];
    let cond_drop = model.config.cond_drop;
    for step in 0..config.steps {
        let mut grads: Vec<Tensor> = model.params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        let mut loss = 0.0;
        for _ in 0..config.batch {
            let example = &dataset[rng.random_range(0..dataset.len())];
            let draw = NoiseDraw::sample(example, cond_drop, &mut rng);
            let (l, g) = loss_and_grads(&model, example, &draw)?;
            loss += l;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                for (a, b) in acc.data.iter_mut().zip(&gi.data) {
                    *a += b;
                }
            }
        }
        let inv = 1.0 / config.batch as f64;
        for x in grads.iter_mut().flat_map(|g| g.data.iter_mut()) {
            *x *= inv;
        }
        loss *= inv;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss became {loss} at step {step}")));
        }
        clip_global_norm(&mut grads, config.clip_norm);
        adam.step(model.params.tensors_mut(), &grads, config.lr_at(step));
        curve.push((step, loss));
        progress(step, loss);
        let done = step + 1;
        if done % config.eval_every.max(1) == 0 || done == config.steps {
            eval_curve.push((done, eval_loss(&model, dataset, &draws)?));
        }
    }
    Ok(TrainOutcome {
        model,
        curve,
        eval_curve,
    })
}

/// Renders `(step, loss)` rows as CSV.
pub fn loss_csv(curve: &[(usize, f64)]) -> String {
    let mut s = String::from("step,loss\n");
    for (step, loss) in curve {
        s.push_str(&format!("{step},{loss}\n"));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSettings {
    pub guidance: f64,
    pub steps: usize,
    pub seed: u64,
}

/// Guided velocity `v_u + s·(v_c − v_u)`; the unconditional branch drops
/// the rgb condition. With `s = 1` only the conditional branch runs.
pub fn guided_velocity(model: &Denoiser, grid: &MultiViewGrid, t: f64, label: usize, guidance: f64) -> Result<Vec<TokenGrid>> {
    let cond = Conditioning { timestep: t, label, drop_rgb: false };
    let vc = denoise_step(model, grid, cond)?;
    if guidance == 1.0 {
        return Ok(vc);
    }
    let vu = denoise_step(model, grid, Conditioning { drop_rgb: true, ..cond })?;
    Ok(vc
        .into_iter()
        .zip(vu)
        .map(|(mut c, u)| {
            for (a, b) in c.values.iter_mut().zip(&u.values) {
                *a = b + guidance * (*a - b);
            }
            c
        })
        .collect())
}

/// Integrates from noise at `t = 1` to `t = 0`. `conditions` supplies the
/// condition slots (and ray maps); its noisy slots are ignored.
pub fn sample(model: &Denoiser, conditions: &MultiViewGrid, label: usize, settings: &SampleSettings) -> Result<MultiViewGrid> {
    if settings.steps == 0 {
        return Err(Error::invalid("sampling steps", "must be >= 1"));
    }
    let d = conditions.dims;
    let slot_len = d.spatial() * d.c;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut x = conditions.clone();
    for view in &mut x.views {
        for (i, v) in view.values.iter_mut().enumerate() {
            if d.is_noisy(i / slot_len) {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v = n;
            }
        }
    }
    let dt = 1.0 / settings.steps as f64;
    for step in 0..settings.steps {
        let t = 1.0 - step as f64 * dt;
        let v = guided_velocity(model, &x, t, label, settings.guidance)?;
        for (view, vel) in x.views.iter_mut().zip(&v) {
            for (i, (a, b)) in view.values.iter_mut().zip(&vel.values).enumerate() {
                if d.is_noisy(i / slot_len) {
                    *a -= dt * b;
                }
            }
        }
    }
    Ok(x)
}

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<(String, usize, f64, f64)>,
}

/// Central-difference check of `count` randomly chosen parameter scalars.
pub fn gradient_check(
    model: &Denoiser,
    example: &ToyExample,
    draw: &NoiseDraw,
    count: usize,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheck> {
    let (_, grads) = loss_and_grads(model, example, draw)?;
    let total = model.params.scalar_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut max_rel = 0.0f64;
    let mut failures = Vec::new();
    for _ in 0..count {
        let mut flat = rng.random_range(0..total);
        let mut id = 0;
        while flat >= model.params.tensors()[id].len() {
            flat -= model.params.tensors()[id].len();
            id += 1;
        }
        let orig = model.params.tensors()[id].data[flat];
        probe.params.tensors_mut()[id].data[flat] = orig + step;
        let up = loss_value(&probe, example, draw)?;
        probe.params.tensors_mut()[id].data[flat] = orig - step;
        let down = loss_value(&probe, example, draw)?;
        probe.params.tensors_mut()[id].data[flat] = orig;
        let numeric = (up - down) / (2.0 * step);
        let analytic = grads[id].data[flat];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
        if rel >= tolerance {
            failures.push((model.params.names()[id].clone(), flat, analytic, numeric));
        }
    }
    Ok(GradCheck {
        checked: count,
        max_rel_error: max_rel,
        failures,
    })
}
