//! Small trainable noise predictor: 3x3 conv, tanh, residual multi-view
//! attention, 3x3 conv. Inputs per latent cell are the noisy latent, the
//! one-hot class, the prompt and `(sqrt(abar_t), sqrt(1 - abar_t))`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::sampler::training_sample;
use super::{Condition, Denoiser, DiffusionSchedule, LatentStack, LATENT_CHANNELS, PROMPT_DIM};
use crate::attention::{mv_attention_backward, mv_attention_traced, AttentionOutput, AttentionParams};
use crate::correspondence::RigMaps;
use crate::projection::class;
use crate::rng::{stream, CounterRng};
use crate::tensor::Tensor3;
use crate::{Error, Result};

pub const TINY_HIDDEN: usize = 8;
pub const TINY_INPUTS: usize = LATENT_CHANNELS + class::COUNT + PROMPT_DIM + 2;

/// Weights are `[out][ky][kx][in]`, zero padding.
fn conv3x3(input: &Tensor3, weight: &[f64], bias: &[f64]) -> Tensor3 {
    let (h, w, cin) = input.shape();
    let cout = bias.len();
    let mut out = Tensor3::zeros(h, w, cout);
    for i in 0..h {
        for j in 0..w {
            let cell = out.cell_mut(i, j);
            cell.copy_from_slice(bias);
            for dy in 0..3 {
                let Some(y) = (i + dy).checked_sub(1).filter(|&y| y < h) else { continue };
                for dx in 0..3 {
                    let Some(x) = (j + dx).checked_sub(1).filter(|&x| x < w) else { continue };
                    let src = input.cell(y, x);
                    for (o, acc) in cell.iter_mut().enumerate() {
                        let k = &weight[((o * 3 + dy) * 3 + dx) * cin..][..cin];
                        *acc += k.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
fn conv3x3_backward(
    input: &Tensor3,
    weight: &[f64],
    d_out: &Tensor3,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    want_input: bool,
) -> Option<Tensor3> {
    let (h, w, cin) = input.shape();
    let mut d_in = want_input.then(|| Tensor3::zeros(h, w, cin));
    for i in 0..h {
        for j in 0..w {
            let g = d_out.cell(i, j);
            for (db, gv) in d_bias.iter_mut().zip(g) {
                *db += gv;
            }
            for dy in 0..3 {
                let Some(y) = (i + dy).checked_sub(1).filter(|&y| y < h) else { continue };
                for dx in 0..3 {
                    let Some(x) = (j + dx).checked_sub(1).filter(|&x| x < w) else { continue };
                    let src = input.cell(y, x);
                    for (o, &gv) in g.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let base = ((o * 3 + dy) * 3 + dx) * cin;
                        for (dw, s) in d_weight[base..base + cin].iter_mut().zip(src) {
                            *dw += gv * s;
                        }
                        if let Some(d) = d_in.as_mut() {
                            for (di, k) in d.cell_mut(y, x).iter_mut().zip(&weight[base..base + cin]) {
                                *di += gv * k;
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyDenoiser {
    pub conv1: Vec<f64>,
    pub bias1: Vec<f64>,
    pub attention: AttentionParams,
    pub conv2: Vec<f64>,
    pub bias2: Vec<f64>,
    /// Attention window `K`.
    pub window: usize,
    maps: Option<RigMaps>,
}

struct Cache {
    inputs: Vec<Tensor3>,
    hidden: Vec<Tensor3>,
    trace: Option<AttentionOutput>,
    residual: Vec<Tensor3>,
}

impl TinyDenoiser {
    /// Random initialization. Without maps the attention block is skipped.
    pub fn new(seed: u64, maps: Option<RigMaps>, window: usize) -> Result<Self> {
        if window == 0 || window % 2 == 0 {
            return Err(Error::Config(format!("window size {window} must be odd and positive")));
        }
        let rng = CounterRng::new(seed, stream::INIT);
        let draw = |tag: u64, n: usize, scale: f64| -> Vec<f64> {
            (0..n as u64).map(|i| scale * rng.normal([tag, i, 0])).collect()
        };
        let conv1 = draw(0, TINY_HIDDEN * 9 * TINY_INPUTS, 1.0 / libm::sqrt((9 * TINY_INPUTS) as f64));
        let conv2 = draw(1, LATENT_CHANNELS * 9 * TINY_HIDDEN, 0.1 / libm::sqrt((9 * TINY_HIDDEN) as f64));
        let attention = AttentionParams::random(TINY_HIDDEN, 0.1, &rng.fork(2));
        Ok(Self {
            conv1,
            bias1: vec![0.0; TINY_HIDDEN],
            attention,
            conv2,
            bias2: vec![0.0; LATENT_CHANNELS],
            window,
            maps,
        })
    }

    pub fn maps(&self) -> Option<&RigMaps> {
        self.maps.as_ref()
    }

    pub fn set_maps(&mut self, maps: Option<RigMaps>) {
        self.maps = maps;
    }

    /// Parameter tensors in flattening order with their shapes.
    pub fn parameter_shapes() -> [(&'static str, Vec<usize>); 7] {
        [
            ("conv1", vec![TINY_HIDDEN, 3, 3, TINY_INPUTS]),
            ("bias1", vec![TINY_HIDDEN]),
            ("query", vec![TINY_HIDDEN, TINY_HIDDEN]),
            ("key", vec![TINY_HIDDEN, TINY_HIDDEN]),
            ("value", vec![TINY_HIDDEN, TINY_HIDDEN]),
            ("conv2", vec![LATENT_CHANNELS, 3, 3, TINY_HIDDEN]),
            ("bias2", vec![LATENT_CHANNELS]),
        ]
    }

    pub fn parameter_count() -> usize {
        Self::parameter_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::parameter_count());
        for part in [&self.conv1, &self.bias1, &self.attention.query, &self.attention.key, &self.attention.value, &self.conv2, &self.bias2] {
            out.extend_from_slice(part);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != Self::parameter_count() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                Self::parameter_count(),
                params.len()
            )));
        }
        if !params.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        let mut rest = params;
        for part in [
            &mut self.conv1,
            &mut self.bias1,
            &mut self.attention.query,
            &mut self.attention.key,
            &mut self.attention.value,
            &mut self.conv2,
            &mut self.bias2,
        ] {
            let (head, tail) = rest.split_at(part.len());
            part.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn input_features(latent: &Tensor3, view: usize, alpha_bar: f64, condition: &Condition) -> Tensor3 {
        let (h, w, c) = latent.shape();
        let time = [libm::sqrt(alpha_bar), libm::sqrt(1.0 - alpha_bar)];
        let mut x = Tensor3::zeros(h, w, TINY_INPUTS);
        for i in 0..h {
            for j in 0..w {
                let cell = x.cell_mut(i, j);
                cell[..c].copy_from_slice(latent.cell(i, j));
                cell[c + condition.label(view, i, j) as usize] = 1.0;
                cell[c + class::COUNT..c + class::COUNT + PROMPT_DIM].copy_from_slice(condition.prompt());
                cell[TINY_INPUTS - 2..].copy_from_slice(&time);
            }
        }
        x
    }

    fn forward(&self, latents: &[Tensor3], t: usize, schedule: &DiffusionSchedule, condition: &Condition) -> Result<(Vec<Tensor3>, Cache)> {
        schedule.check_step(t)?;
        if latents.iter().any(|l| l.channels() != LATENT_CHANNELS || (l.height(), l.width()) != condition.shape())
            || latents.len() != condition.views()
        {
            return Err(Error::Config("latents do not match the condition or channel count".into()));
        }
        let a = schedule.alpha_bar(t);
        let inputs: Vec<Tensor3> = latents
            .iter()
            .enumerate()
            .map(|(v, l)| Self::input_features(l, v, a, condition))
            .collect();
        let hidden: Vec<Tensor3> = inputs
            .iter()
            .map(|x| {
                let mut hdn = conv3x3(x, &self.conv1, &self.bias1);
                hdn.data_mut().iter_mut().for_each(|v| *v = libm::tanh(*v));
                hdn
            })
            .collect();
        let (trace, residual) = match &self.maps {
            Some(maps) => {
                let trace = mv_attention_traced(&hidden, &self.attention, maps, self.window)?;
                let residual = trace
                    .outputs
                    .iter()
                    .zip(&hidden)
                    .map(|(a, z)| {
                        let mut r = a.clone();
                        r.data_mut().iter_mut().zip(z.data()).for_each(|(x, y)| *x += y);
                        r
                    })
                    .collect();
                (Some(trace), residual)
            }
            None => (None, hidden.clone()),
        };
        let out = residual.iter().map(|r| conv3x3(r, &self.conv2, &self.bias2)).collect();
        Ok((out, Cache { inputs, hidden, trace, residual }))
    }

    fn backward(&self, cache: &Cache, d_out: &[Tensor3]) -> Vec<f64> {
        let mut g_conv1 = vec![0.0; self.conv1.len()];
        let mut g_bias1 = vec![0.0; self.bias1.len()];
        let mut g_conv2 = vec![0.0; self.conv2.len()];
        let mut g_bias2 = vec![0.0; self.bias2.len()];
        let mut d_hidden: Vec<Tensor3> = cache
            .residual
            .iter()
            .zip(d_out)
            .map(|(r, d)| conv3x3_backward(r, &self.conv2, d, &mut g_conv2, &mut g_bias2, true).expect("requested"))
            .collect();
        let (mut gq, mut gk, mut gv) = (vec![0.0; self.attention.query.len()], vec![0.0; self.attention.key.len()], vec![0.0; self.attention.value.len()]);
        if let Some(trace) = &cache.trace {
            let g = mv_attention_backward(&cache.hidden, &self.attention, trace, &d_hidden);
            for (dh, gf) in d_hidden.iter_mut().zip(&g.features) {
                dh.data_mut().iter_mut().zip(gf.data()).for_each(|(a, b)| *a += b);
            }
            (gq, gk, gv) = (g.query, g.key, g.value);
        }
        for ((dh, z), x) in d_hidden.iter_mut().zip(&cache.hidden).zip(&cache.inputs) {
            dh.data_mut().iter_mut().zip(z.data()).for_each(|(d, z)| *d *= 1.0 - z * z);
            conv3x3_backward(x, &self.conv1, dh, &mut g_conv1, &mut g_bias1, false);
        }
        let mut out = Vec::with_capacity(Self::parameter_count());
        for part in [g_conv1, g_bias1, gq, gk, gv, g_conv2, g_bias2] {
            out.extend(part);
        }
        out
    }

    /// Training loss (as in `training_loss`) and its parameter gradient.
    pub fn loss_and_grad(
        &self,
        batch: &[LatentStack],
        conditions: &[Condition],
        schedule: &DiffusionSchedule,
        maps: &RigMaps,
        seed: u64,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() || batch.len() != conditions.len() {
            return Err(Error::Config("batch and conditions must be non-empty and aligned".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; Self::parameter_count()];
        for (b, (l0, cond)) in batch.iter().zip(conditions).enumerate() {
            let s = training_sample(l0, maps, schedule, seed, b as u64)?;
            let (pred, cache) = self.forward(&s.noisy.views, s.t, schedule, cond)?;
            let mut d_out = Vec::with_capacity(pred.len());
            for (e, p) in s.noise.views.iter().zip(&pred) {
                let (h, w, c) = p.shape();
                let mut d = Vec::with_capacity(h * w * c);
                for (a, b) in e.data().iter().zip(p.data()) {
                    loss += scale * (a - b) * (a - b);
                    d.push(-2.0 * scale * (a - b));
                }
                d_out.push(Tensor3::from_vec(h, w, c, d).expect("shape preserved"));
            }
            for (g, x) in grad.iter_mut().zip(self.backward(&cache, &d_out)) {
                *g += x;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric("training loss is not finite".into()));
        }
        Ok((loss, grad))
    }
}

impl Denoiser for TinyDenoiser {
    fn channels(&self) -> usize {
        LATENT_CHANNELS
    }

    fn predict(&self, latents: &[Tensor3], t: usize, schedule: &DiffusionSchedule, condition: &Condition) -> Result<Vec<Tensor3>> {
        Ok(self.forward(latents, t, schedule, condition)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-2, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean loss over the fixed evaluation draws, before and after.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Minibatch loss at every step.
    pub step_losses: Vec<f64>,
}

/// Number of fixed noise/timestep draws used to score a model.
pub const EVAL_DRAWS: u64 = 8;

fn evaluation_loss(
    model: &TinyDenoiser,
    batch: &[LatentStack],
    conditions: &[Condition],
    schedule: &DiffusionSchedule,
    maps: &RigMaps,
    seed: u64,
) -> Result<f64> {
    let rng = CounterRng::new(seed, stream::TRAIN);
    let mut total = 0.0;
    for k in 0..EVAL_DRAWS {
        total += super::training_loss(batch, conditions, model, schedule, maps, rng.bits([1, k, 0]))?;
    }
    Ok(total / EVAL_DRAWS as f64)
}

/// Adam on fresh timestep/noise draws of a fixed clean batch.
pub fn train(
    model: &mut TinyDenoiser,
    batch: &[LatentStack],
    conditions: &[Condition],
    schedule: &DiffusionSchedule,
    maps: &RigMaps,
    steps: usize,
    adam: &AdamConfig,
    seed: u64,
) -> Result<TrainReport> {
    let initial_loss = evaluation_loss(model, batch, conditions, schedule, maps, seed)?;
    let rng = CounterRng::new(seed, stream::TRAIN);
    let mut params = model.parameters();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut step_losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grad) = model.loss_and_grad(batch, conditions, schedule, maps, rng.bits([0, step as u64, 0]))?;
        step_losses.push(loss);
        let k = (step + 1) as i32;
        let (c1, c2) = (1.0 - libm::pow(adam.beta1, k as f64), 1.0 - libm::pow(adam.beta2, k as f64));
        for i in 0..params.len() {
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * grad[i];
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
            params[i] -= adam.learning_rate * (m[i] / c1) / (libm::sqrt(v[i] / c2) + adam.epsilon);
        }
        model.set_parameters(&params)?;
    }
    let final_loss = evaluation_loss(model, batch, conditions, schedule, maps, seed)?;
    Ok(TrainReport { initial_loss, final_loss, step_losses })
}
