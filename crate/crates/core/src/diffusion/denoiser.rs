use alloc::format;
use alloc::vec::Vec;

use super::codec::{color_to_latent, lift_matrix};
use super::{Condition, DiffusionSchedule, TrainingSample};
use crate::scene::PALETTE;
use crate::tensor::Tensor3;
use crate::{Error, Result};

/// Noise predictor `delta_theta(l_t, t, c)` over all views at once.
pub trait Denoiser {
    fn channels(&self) -> usize;

    fn predict(
        &self,
        latents: &[Tensor3],
        t: usize,
        schedule: &DiffusionSchedule,
        condition: &Condition,
    ) -> Result<Vec<Tensor3>>;
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroDenoiser {
    pub channels: usize,
}

impl Denoiser for ZeroDenoiser {
    fn channels(&self) -> usize {
        self.channels
    }

    fn predict(&self, latents: &[Tensor3], _: usize, _: &DiffusionSchedule, _: &Condition) -> Result<Vec<Tensor3>> {
        Ok(latents.iter().map(|l| Tensor3::zeros(l.height(), l.width(), l.channels())).collect())
    }
}

/// Returns the true noise of known training samples, found by bit-exact
/// lookup of the noisy latents.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDenoiser {
    pub samples: Vec<TrainingSample>,
}

impl Denoiser for OracleDenoiser {
    fn channels(&self) -> usize {
        self.samples.first().map_or(0, |s| s.noisy.shape().2)
    }

    fn predict(&self, latents: &[Tensor3], t: usize, _: &DiffusionSchedule, _: &Condition) -> Result<Vec<Tensor3>> {
        self.samples
            .iter()
            .find(|s| s.t == t && s.noisy.views.len() == latents.len() && s.noisy.views.iter().zip(latents).all(|(a, b)| a.bit_eq(b)))
            .map(|s| s.noise.views.clone())
            .ok_or_else(|| Error::Domain("oracle denoiser queried off its sample set".into()))
    }
}

/// Exact noise prediction for data `l0 ~ N(mean, variance I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticGaussianDenoiser {
    pub mean: Vec<Tensor3>,
    pub variance: f64,
}

impl AnalyticGaussianDenoiser {
    /// A zero variance is accepted and means a point-mass prior.
    pub fn new(mean: Vec<Tensor3>, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::Domain(format!("variance {variance} must be finite and non-negative")));
        }
        if mean.is_empty() || mean.iter().any(|m| m.shape() != mean[0].shape() || !m.is_finite()) {
            return Err(Error::Config("prior mean must be finite, one equal-shape tensor per view".into()));
        }
        Ok(Self { mean, variance })
    }

    pub fn constant(views: usize, shape: (usize, usize, usize), mean: f64, variance: f64) -> Result<Self> {
        Self::new(alloc::vec![Tensor3::filled(shape.0, shape.1, shape.2, mean); views], variance)
    }

    /// `E[l0 | l_t]` for one element.
    #[inline]
    pub fn posterior_mean(mean: f64, variance: f64, alpha_bar: f64, lt: f64) -> f64 {
        let sa = libm::sqrt(alpha_bar);
        let gain = variance * sa / (alpha_bar * variance + 1.0 - alpha_bar);
        mean + gain * (lt - sa * mean)
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn channels(&self) -> usize {
        self.mean[0].channels()
    }

    fn predict(&self, latents: &[Tensor3], t: usize, schedule: &DiffusionSchedule, _: &Condition) -> Result<Vec<Tensor3>> {
        schedule.check_step(t)?;
        if latents.len() != self.mean.len() || latents.iter().any(|l| l.shape() != self.mean[0].shape()) {
            return Err(Error::Config("latents do not match the prior mean".into()));
        }
        let a = schedule.alpha_bar(t);
        let (sa, s1a) = (libm::sqrt(a), libm::sqrt(1.0 - a));
        Ok(latents
            .iter()
            .zip(&self.mean)
            .map(|(l, m)| {
                let data = l
                    .data()
                    .iter()
                    .zip(m.data())
                    .map(|(&x, &mu)| (x - sa * Self::posterior_mean(mu, self.variance, a, x)) / s1a)
                    .collect();
                Tensor3::from_vec(l.height(), l.width(), l.channels(), data).expect("shape preserved")
            })
            .collect())
    }
}

/// Gaussian prior whose per-cell mean is the encoded palette color of the
/// conditioning class.
#[derive(Debug, Clone, PartialEq)]
pub struct PaletteGaussianDenoiser {
    pub channels: usize,
    pub variance: f64,
}

impl PaletteGaussianDenoiser {
    pub fn new(channels: usize, variance: f64) -> Result<Self> {
        lift_matrix(channels)?;
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::Domain(format!("variance {variance} must be finite and non-negative")));
        }
        Ok(Self { channels, variance })
    }

    pub fn prior_mean(&self, condition: &Condition) -> Vec<Tensor3> {
        let lift = lift_matrix(self.channels).expect("validated in new");
        let colors: Vec<Vec<f64>> = PALETTE.iter().map(|&c| color_to_latent(c, &lift)).collect();
        let (h, w) = condition.shape();
        (0..condition.views())
            .map(|v| Tensor3::from_fn(h, w, self.channels, |i, j, k| colors[condition.label(v, i, j) as usize][k]))
            .collect()
    }
}

impl Denoiser for PaletteGaussianDenoiser {
    fn channels(&self) -> usize {
        self.channels
    }

    fn predict(&self, latents: &[Tensor3], t: usize, schedule: &DiffusionSchedule, condition: &Condition) -> Result<Vec<Tensor3>> {
        AnalyticGaussianDenoiser::new(self.prior_mean(condition), self.variance)?.predict(latents, t, schedule, condition)
    }
}
