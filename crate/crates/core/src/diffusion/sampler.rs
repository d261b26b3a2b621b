use alloc::format;
use alloc::vec::Vec;

use super::codec::decode_latent;
use super::sync::{raw_noise, sync_in_place, synced_noise};
use super::{Condition, Denoiser, DiffusionSchedule, LatentStack, NoiseStack};
use crate::correspondence::RigMaps;
use crate::rng::{stream, CounterRng};
use crate::tensor::{RgbImage, Tensor3};
use crate::{Error, Result};

/// `l_t = sqrt(abar_t) l0 + sqrt(1 - abar_t) eps` per view.
pub fn forward_noise(l0: &LatentStack, t: usize, schedule: &DiffusionSchedule, noise: &NoiseStack) -> Result<LatentStack> {
    schedule.check_step(t)?;
    if noise.views.len() != l0.len() || noise.views.iter().any(|n| n.shape() != l0.shape()) {
        return Err(Error::Config("noise does not match latents".into()));
    }
    let a = schedule.alpha_bar(t);
    let (sa, s1a) = (libm::sqrt(a), libm::sqrt(1.0 - a));
    let views = l0
        .views
        .iter()
        .zip(&noise.views)
        .map(|(x, e)| {
            let (h, w, c) = x.shape();
            let data = x.data().iter().zip(e.data()).map(|(x, e)| sa * x + s1a * e).collect();
            Tensor3::from_vec(h, w, c, data).expect("shape preserved")
        })
        .collect();
    Ok(LatentStack { views, t })
}

/// Deterministic DDIM update from `l_t.t` to `l_t.t - 1`.
pub fn denoise_step(
    lt: &LatentStack,
    denoiser: &dyn Denoiser,
    condition: &Condition,
    schedule: &DiffusionSchedule,
) -> Result<LatentStack> {
    let t = lt.t;
    schedule.check_step(t)?;
    let eps = denoiser.predict(&lt.views, t, schedule, condition)?;
    if eps.len() != lt.len() || eps.iter().any(|e| e.shape() != lt.shape()) {
        return Err(Error::Config("denoiser output does not match latents".into()));
    }
    let (a, a_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
    let (sa, s1a) = (libm::sqrt(a), libm::sqrt(1.0 - a));
    let (sp, s1p) = (libm::sqrt(a_prev), libm::sqrt(1.0 - a_prev));
    let mut views = Vec::with_capacity(lt.len());
    for (x, e) in lt.views.iter().zip(&eps) {
        let (h, w, c) = x.shape();
        let data: Vec<f64> = x
            .data()
            .iter()
            .zip(e.data())
            .map(|(&x, &e)| {
                let x0 = (x - s1a * e) / sa;
                if t == 1 {
                    x0
                } else {
                    sp * x0 + s1p * e
                }
            })
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite latent at step {t}")));
        }
        views.push(Tensor3::from_vec(h, w, c, data).expect("shape preserved"));
    }
    Ok(LatentStack { views, t: t - 1 })
}

/// Closed-form endpoint of the deterministic sampler under the analytic
/// Gaussian denoiser, for one element started at `lt` at step `t`. Each
/// step scales the centered value `u = l - sqrt(abar) mean` by
/// `(sqrt(abar') sqrt(abar) var + sqrt(1-abar') sqrt(1-abar)) / (abar var + 1 - abar)`,
/// and the last step lands on `E[l0 | l_1]`.
pub fn gaussian_posterior_endpoint(lt: f64, t: usize, mean: f64, variance: f64, schedule: &DiffusionSchedule) -> f64 {
    let mut u = lt - libm::sqrt(schedule.alpha_bar(t)) * mean;
    for s in (1..=t).rev() {
        let (a, ap) = (schedule.alpha_bar(s), schedule.alpha_bar(s - 1));
        let var_t = a * variance + 1.0 - a;
        u *= (libm::sqrt(ap * a) * variance + libm::sqrt((1.0 - ap) * (1.0 - a))) / var_t;
    }
    mean + u
}

/// One draw of the training objective for a clean multi-view sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub t: usize,
    pub noise: NoiseStack,
    pub noisy: LatentStack,
}

/// Shared timestep and synchronized noise for sample `index` under `seed`.
pub fn training_sample(
    l0: &LatentStack,
    maps: &RigMaps,
    schedule: &DiffusionSchedule,
    seed: u64,
    index: u64,
) -> Result<TrainingSample> {
    if maps.view_count() != l0.len() || maps.shape() != (l0.shape().0, l0.shape().1) {
        return Err(Error::Config("maps do not match the latent stack".into()));
    }
    let t = CounterRng::new(seed, stream::TIMESTEP).range_inclusive([index, 0, 0], 1, schedule.steps());
    let noise = synced_noise(&CounterRng::new(seed, stream::NOISE).fork(index), maps, l0.shape().2);
    let noisy = forward_noise(l0, t, schedule, &noise)?;
    Ok(TrainingSample { t, noise, noisy })
}

/// Batch mean of `sum_m ||eps_m - delta(l_t)_m||^2`.
pub fn training_loss(
    batch: &[LatentStack],
    conditions: &[Condition],
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    maps: &RigMaps,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() || batch.len() != conditions.len() {
        return Err(Error::Config("batch and conditions must be non-empty and aligned".into()));
    }
    let mut total = 0.0;
    for (b, (l0, cond)) in batch.iter().zip(conditions).enumerate() {
        let s = training_sample(l0, maps, schedule, seed, b as u64)?;
        let pred = denoiser.predict(&s.noisy.views, s.t, schedule, cond)?;
        for (e, p) in s.noise.views.iter().zip(&pred) {
            total += e.data().iter().zip(p.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("training loss is not finite".into()));
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub synced_noise: bool,
    pub reassign: bool,
    /// Fraction of the reverse steps followed by latent re-assignment.
    pub cutoff: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { synced_noise: true, reassign: true, cutoff: 0.6 }
    }
}

impl GenerateOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cutoff) {
            return Err(Error::Config(format!("cutoff {} outside [0, 1]", self.cutoff)));
        }
        Ok(())
    }

    /// `floor(cutoff * T)`, robust to the representation error of decimal
    /// fractions such as 0.6.
    pub fn reassign_steps(&self, steps: usize) -> usize {
        if !self.reassign {
            return 0;
        }
        (libm::floor(self.cutoff * steps as f64 + 1e-9) as usize).min(steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub latents: LatentStack,
    pub images: Vec<RgbImage>,
    pub reassign_calls: usize,
}

/// Samples all views from step `T` down to 0. `maps` may be omitted only
/// when neither synchronization nor re-assignment is requested.
pub fn generate(
    condition: &Condition,
    maps: Option<&RigMaps>,
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    opts: &GenerateOptions,
    seed: u64,
) -> Result<Generation> {
    opts.validate()?;
    let (h, w) = condition.shape();
    let views = condition.views();
    let c = denoiser.channels();
    let reassign_steps = opts.reassign_steps(schedule.steps());
    let needs_maps = opts.synced_noise || reassign_steps > 0;
    let maps = match maps {
        Some(m) if m.view_count() != views || m.shape() != (h, w) => {
            return Err(Error::Config("maps do not match the condition".into()))
        }
        None if needs_maps => return Err(Error::Config("synchronization needs correspondence maps".into())),
        m => m,
    };
    let mut noise = raw_noise(&CounterRng::new(seed, stream::NOISE), views, (h, w, c));
    if opts.synced_noise {
        sync_in_place(&mut noise, maps.expect("checked above"));
    }
    let mut latents = LatentStack { views: noise, t: schedule.steps() };
    let mut reassign_calls = 0;
    for step in 1..=schedule.steps() {
        latents = denoise_step(&latents, denoiser, condition, schedule)?;
        if step <= reassign_steps {
            sync_in_place(&mut latents.views, maps.expect("checked above"));
            reassign_calls += 1;
        }
    }
    let images = latents.views.iter().map(decode_latent).collect::<Result<Vec<_>>>()?;
    Ok(Generation { latents, images, reassign_calls })
}
