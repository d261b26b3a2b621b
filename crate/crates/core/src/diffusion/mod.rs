//! Toy latent diffusion: schedule, stand-in codec, cross-view noise and
//! latent synchronization, denoisers, a DDIM sampler and instance blending.

mod blend;
mod codec;
mod denoiser;
mod sampler;
mod schedule;
mod sync;
mod tiny;

pub use blend::{blend_instance_latents, downsample_mask_any};
pub use codec::{color_to_latent, decode_latent, encode_image, latent_to_color, lift_matrix, BLOCK};
pub use denoiser::{AnalyticGaussianDenoiser, Denoiser, OracleDenoiser, PaletteGaussianDenoiser, ZeroDenoiser};
pub use sampler::{
    denoise_step, forward_noise, gaussian_posterior_endpoint, generate, training_loss, training_sample,
    GenerateOptions, Generation, TrainingSample,
};
pub use schedule::{DiffusionSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
pub use sync::{chain_pairs, raw_noise, reassign_latents, sample_synced_noise, synced_noise, sync_in_place};
pub use tiny::{train, AdamConfig, TinyDenoiser, TrainReport, TINY_HIDDEN};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::projection::{class, PerspectiveSemantics};
use crate::tensor::Tensor3;
use crate::{Error, Result};

/// Length of the prompt vector standing in for a text embedding.
pub const PROMPT_DIM: usize = 4;

/// Default latent channel count.
pub const LATENT_CHANNELS: usize = 4;

/// One latent tensor per view at a common timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStack {
    pub views: Vec<Tensor3>,
    pub t: usize,
}

impl LatentStack {
    pub fn new(views: Vec<Tensor3>, t: usize) -> Result<Self> {
        let Some(first) = views.first() else {
            return Err(Error::Config("latent stack needs at least one view".into()));
        };
        if views.iter().any(|v| v.shape() != first.shape()) {
            return Err(Error::Config("latent views differ in shape".into()));
        }
        if !views.iter().all(Tensor3::is_finite) {
            return Err(Error::Numeric("non-finite latent".into()));
        }
        Ok(Self { views, t })
    }

    pub fn zeros(views: usize, (h, w, c): (usize, usize, usize)) -> Self {
        Self { views: vec![Tensor3::zeros(h, w, c); views], t: 0 }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.views[0].shape()
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.t == other.t && self.views.len() == other.views.len() && self.views.iter().zip(&other.views).all(|(a, b)| a.bit_eq(b))
    }
}

/// Standard-normal draws per view, synchronized across views.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStack {
    pub views: Vec<Tensor3>,
}

/// Per-view semantics at latent resolution plus a prompt vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    height: usize,
    width: usize,
    labels: Vec<Vec<u8>>,
    prompt: Vec<f64>,
}

impl Condition {
    pub fn new(height: usize, width: usize, labels: Vec<Vec<u8>>, prompt: Vec<f64>) -> Result<Self> {
        if labels.is_empty() || labels.iter().any(|l| l.len() != height * width) {
            return Err(Error::Config(format!("condition labels must be {height}x{width} per view")));
        }
        if labels.iter().flatten().any(|&l| l as usize >= class::COUNT) {
            return Err(Error::Config("condition label outside the class set".into()));
        }
        if prompt.len() != PROMPT_DIM || !prompt.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("prompt must be {PROMPT_DIM} finite values")));
        }
        Ok(Self { height, width, labels, prompt })
    }

    /// Downsamples full-resolution semantics by block majority (ties go to
    /// the smaller class id).
    pub fn from_perspective(views: &[PerspectiveSemantics], (h, w): (usize, usize), prompt: Vec<f64>) -> Result<Self> {
        let mut labels = Vec::with_capacity(views.len());
        for sem in views {
            if h == 0 || w == 0 || sem.height % h != 0 || sem.width % w != 0 || sem.height / h != sem.width / w {
                return Err(Error::Config(format!(
                    "semantics {}x{} do not downsample to {h}x{w}",
                    sem.height, sem.width
                )));
            }
            let f = sem.height / h;
            let mut out = vec![0u8; h * w];
            for i in 0..h {
                for j in 0..w {
                    let mut counts = [0usize; class::COUNT];
                    for r in 0..f {
                        for c in 0..f {
                            counts[sem.labels[(i * f + r) * sem.width + j * f + c] as usize] += 1;
                        }
                    }
                    let best = (0..class::COUNT).fold(0, |b, k| if counts[k] > counts[b] { k } else { b });
                    out[i * w + j] = best as u8;
                }
            }
            labels.push(out);
        }
        Self::new(h, w, labels, prompt)
    }

    pub fn views(&self) -> usize {
        self.labels.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self, view: usize) -> &[u8] {
        &self.labels[view]
    }

    pub fn label(&self, view: usize, i: usize, j: usize) -> u8 {
        self.labels[view][i * self.width + j]
    }

    pub fn prompt(&self) -> &[f64] {
        &self.prompt
    }
}

/// Per-view binary masks of one object instance at image resolution, with
/// the color requested for it.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub id: u32,
    pub color: [f64; 3],
    pub height: usize,
    pub width: usize,
    pub masks: Vec<Vec<bool>>,
}

impl InstanceMask {
    pub fn empty(id: u32, color: [f64; 3], views: usize, (height, width): (usize, usize)) -> Self {
        Self { id, color, height, width, masks: vec![vec![false; height * width]; views] }
    }

    pub fn full(id: u32, color: [f64; 3], views: usize, (height, width): (usize, usize)) -> Self {
        Self { id, color, height, width, masks: vec![vec![true; height * width]; views] }
    }

    pub fn pixel_count(&self, view: usize) -> usize {
        self.masks[view].iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_downsamples_by_majority() {
        let mut labels = vec![class::DRIVABLE; 16 * 16];
        // 40 of 64 pixels in block (0, 1) are vehicle, a 32/32 tie in block (1, 0).
        for r in 0..5 {
            for c in 8..16 {
                labels[r * 16 + c] = class::VEHICLE;
            }
        }
        for r in 8..16 {
            for c in 0..4 {
                labels[r * 16 + c] = class::BUILDING;
            }
        }
        let sem = PerspectiveSemantics { view: 1, height: 16, width: 16, labels };
        let cond = Condition::from_perspective(&[sem], (2, 2), vec![0.0; PROMPT_DIM]).unwrap();
        assert_eq!(cond.labels(0), &[class::DRIVABLE, class::VEHICLE, class::DRIVABLE, class::DRIVABLE]);
        assert!(Condition::new(1, 1, vec![vec![9]], vec![0.0; 4]).is_err());
        assert!(Condition::new(1, 1, vec![vec![1]], vec![0.0; 3]).is_err());
    }

    #[test]
    fn latent_stack_validation() {
        assert!(LatentStack::new(vec![], 0).is_err());
        assert!(LatentStack::new(vec![Tensor3::zeros(2, 2, 4), Tensor3::zeros(2, 3, 4)], 0).is_err());
        assert!(LatentStack::new(vec![Tensor3::filled(1, 1, 1, f64::NAN)], 0).is_err());
    }
}
