use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{InstanceMask, LatentStack};
use crate::{Error, Result};

/// A coarse cell is set if any pixel of its block is.
pub fn downsample_mask_any(mask: &[bool], (hh, ww): (usize, usize), (h, w): (usize, usize)) -> Result<Vec<bool>> {
    if mask.len() != hh * ww || h == 0 || w == 0 || hh % h != 0 || ww % w != 0 {
        return Err(Error::Config(format!("mask {hh}x{ww} does not downsample to {h}x{w}")));
    }
    let (fy, fx) = (hh / h, ww / w);
    let mut out = vec![false; h * w];
    for r in 0..hh {
        for c in 0..ww {
            if mask[r * ww + c] {
                out[(r / fy) * w + c / fx] = true;
            }
        }
    }
    Ok(out)
}

/// Per view and latent cell: the instance latent whose mask covers the cell,
/// or the scene latent where no mask does.
pub fn blend_instance_latents(scene: &LatentStack, instances: &[(LatentStack, InstanceMask)]) -> Result<LatentStack> {
    let (h, w, _) = scene.shape();
    let mut out = scene.clone();
    for v in 0..scene.len() {
        let mut owner: Vec<Option<usize>> = vec![None; h * w];
        for (n, (latent, inst)) in instances.iter().enumerate() {
            if latent.len() != scene.len() || latent.shape() != scene.shape() || inst.masks.len() != scene.len() {
                return Err(Error::Config(format!("instance {} does not match the scene stack", inst.id)));
            }
            let cells = downsample_mask_any(&inst.masks[v], (inst.height, inst.width), (h, w))?;
            for (o, &set) in owner.iter_mut().zip(&cells) {
                if set {
                    if o.is_some() {
                        return Err(Error::Conflict { view: v + 1 });
                    }
                    *o = Some(n);
                }
            }
        }
        for (s, o) in owner.iter().enumerate() {
            if let Some(n) = o {
                let src = instances[*n].0.views[v].cell(s / w, s % w);
                out.views[v].cell_mut(s / w, s % w).copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3;

    fn stack(value: f64) -> LatentStack {
        LatentStack::new(vec![Tensor3::filled(4, 6, 4, value); 2], 0).unwrap()
    }

    #[test]
    fn blending_examples() {
        let scene = stack(1.0);
        assert_eq!(blend_instance_latents(&scene, &[]).unwrap(), scene);
        let full = InstanceMask::full(1, [1.0, 0.0, 0.0], 2, (32, 48));
        assert_eq!(blend_instance_latents(&scene, &[(stack(2.0), full)]).unwrap(), stack(2.0));

        // A 16x16 pixel square aligned to the latent grid covers 2x2 cells.
        let mut square = InstanceMask::empty(2, [0.0, 1.0, 0.0], 2, (32, 48));
        for r in 8..24 {
            for c in 16..32 {
                square.masks[0][r * 48 + c] = true;
            }
        }
        let out = blend_instance_latents(&scene, &[(stack(3.0), square.clone())]).unwrap();
        let differing = (0..24).filter(|&s| out.views[0].cell(s / 6, s % 6) != scene.views[0].cell(s / 6, s % 6)).count();
        assert_eq!(differing, 4);
        assert_eq!(out.views[1], scene.views[1]);
        // Any-coverage: one pixel is enough.
        let mut dot = InstanceMask::empty(3, [0.0; 3], 2, (32, 48));
        dot.masks[1][0] = true;
        let out = blend_instance_latents(&scene, &[(stack(3.0), dot)]).unwrap();
        assert_eq!(out.views[1].cell(0, 0), &[3.0; 4]);
        // Overlap after downsampling is a conflict.
        let mut touching = InstanceMask::empty(4, [0.0; 3], 2, (32, 48));
        touching.masks[0][8 * 48 + 15] = true;
        touching.masks[0][7 * 48 + 15] = true;
        assert!(blend_instance_latents(&scene, &[(stack(3.0), square.clone())]).is_ok());
        let mut neighbor = InstanceMask::empty(5, [0.0; 3], 2, (32, 48));
        neighbor.masks[0][23 * 48 + 31] = true;
        assert!(matches!(
            blend_instance_latents(&scene, &[(stack(3.0), square), (stack(4.0), neighbor)]),
            Err(Error::Conflict { view: 1 })
        ));
        assert!(blend_instance_latents(&scene, &[(stack(3.0), touching)]).is_ok());
    }
}
