//! Stand-in image autoencoder: 8x8 block means, centered to `[-1, 1]` and
//! lifted into `c` channels by a fixed matrix with orthonormal columns.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{RgbImage, Tensor3};
use crate::{Error, Result};

pub const BLOCK: usize = 8;

/// `c x 3` lift, row-major. Hadamard columns scaled by `1/sqrt(c)` when `c`
/// is a power of two (entries are then dyadic for `c = 4`), otherwise the
/// identity padded with zeros.
pub fn lift_matrix(channels: usize) -> Result<Vec<f64>> {
    if channels < 3 {
        return Err(Error::Config(format!("latents need at least 3 channels, got {channels}")));
    }
    let mut lift = vec![0.0; channels * 3];
    if channels.is_power_of_two() {
        let scale = 1.0 / libm::sqrt(channels as f64);
        for r in 0..channels {
            for k in 0..3 {
                // Sylvester Hadamard entry (-1)^popcount(r & k); skip the constant column.
                let sign = if (r & (k + 1)).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                lift[r * 3 + k] = sign * scale;
            }
        }
    } else {
        for k in 0..3 {
            lift[k * 3 + k] = 1.0;
        }
    }
    Ok(lift)
}

pub fn color_to_latent(rgb: [f64; 3], lift: &[f64]) -> Vec<f64> {
    let centered = rgb.map(|v| 2.0 * v - 1.0);
    lift.chunks_exact(3).map(|row| row[0] * centered[0] + row[1] * centered[1] + row[2] * centered[2]).collect()
}

pub fn latent_to_color(cell: &[f64], lift: &[f64]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (v, row) in cell.iter().zip(lift.chunks_exact(3)) {
        for k in 0..3 {
            out[k] += row[k] * v;
        }
    }
    out.map(|v| (v + 1.0) * 0.5)
}

pub fn encode_image(image: &RgbImage, channels: usize) -> Result<Tensor3> {
    if image.height % BLOCK != 0 || image.width % BLOCK != 0 || image.height == 0 || image.width == 0 {
        return Err(Error::Config(format!(
            "image {}x{} is not a multiple of {BLOCK}",
            image.height, image.width
        )));
    }
    let lift = lift_matrix(channels)?;
    let (h, w) = (image.height / BLOCK, image.width / BLOCK);
    let mut out = Tensor3::zeros(h, w, channels);
    let norm = 1.0 / (BLOCK * BLOCK) as f64;
    for i in 0..h {
        for j in 0..w {
            let mut acc = [0.0; 3];
            for r in 0..BLOCK {
                for c in 0..BLOCK {
                    let px = image.pixel(i * BLOCK + r, j * BLOCK + c);
                    for k in 0..3 {
                        acc[k] += px[k];
                    }
                }
            }
            out.cell_mut(i, j).copy_from_slice(&color_to_latent(acc.map(|v| v * norm), &lift));
        }
    }
    Ok(out)
}

/// Unclamped decode; values can leave `[0, 1]` for off-manifold latents.
pub fn decode_latent(latent: &Tensor3) -> Result<RgbImage> {
    let lift = lift_matrix(latent.channels())?;
    let (h, w) = (latent.height(), latent.width());
    let mut img = RgbImage::filled(h * BLOCK, w * BLOCK, [0.0; 3]);
    for i in 0..h {
        for j in 0..w {
            let rgb = latent_to_color(latent.cell(i, j), &lift);
            for r in 0..BLOCK {
                for c in 0..BLOCK {
                    img.set_pixel(i * BLOCK + r, j * BLOCK + c, rgb);
                }
            }
        }
    }
    Ok(img)
}
