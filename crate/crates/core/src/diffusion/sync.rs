//! Cross-view copying of noise and latents along the right-neighbor chain.
//!
//! Starting at view 1, each view writes its values into its right neighbor
//! at every valid rounded correspondence, then the neighbor becomes the
//! source. The walk stops once the next target would be view 1 again, so
//! view 1 is never overwritten and every pair along the chain agrees
//! exactly afterwards. Targets hit by several source cells keep the value of
//! the last one in row-major order.

use alloc::vec::Vec;

use super::{LatentStack, NoiseStack};
use crate::correspondence::RigMaps;
use crate::rng::{stream, CounterRng};
use crate::tensor::Tensor3;

/// Ordered `(source, target)` views (1-based) visited by the chain.
pub fn chain_pairs(maps: &RigMaps) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut m = 1;
    for _ in 0..maps.view_count() {
        let next = maps.right[m - 1].target();
        if next == 1 {
            break;
        }
        out.push((m, next));
        m = next;
    }
    out
}

pub fn sync_in_place(views: &mut [Tensor3], maps: &RigMaps) {
    for (src, dst) in chain_pairs(maps) {
        let map = &maps.right[src - 1];
        let (_, w) = map.shape();
        // Split borrows so the source can be read while the target is written.
        let (a, b) = if src < dst {
            let (lo, hi) = views.split_at_mut(dst - 1);
            (&lo[src - 1], &mut hi[0])
        } else {
            let (lo, hi) = views.split_at_mut(src - 1);
            (&hi[0], &mut lo[dst - 1])
        };
        for (s, entry) in map.entries().iter().enumerate() {
            if let Some(c) = entry {
                let value = a.cell(s / w, s % w);
                b.cell_mut(c.cell.0, c.cell.1).copy_from_slice(value);
            }
        }
    }
}

/// Independent standard normals keyed by `(view, cell, channel)`.
pub fn raw_noise(rng: &CounterRng, views: usize, (h, w, c): (usize, usize, usize)) -> Vec<Tensor3> {
    (0..views)
        .map(|v| Tensor3::from_fn(h, w, c, |i, j, k| rng.normal([v as u64, (i * w + j) as u64, k as u64])))
        .collect()
}

pub fn synced_noise(rng: &CounterRng, maps: &RigMaps, c: usize) -> NoiseStack {
    let (h, w) = maps.shape();
    let mut views = raw_noise(rng, maps.view_count(), (h, w, c));
    sync_in_place(&mut views, maps);
    NoiseStack { views }
}

pub fn sample_synced_noise(seed: u64, maps: &RigMaps, c: usize) -> NoiseStack {
    synced_noise(&CounterRng::new(seed, stream::NOISE), maps, c)
}

pub fn reassign_latents(latents: &LatentStack, maps: &RigMaps) -> LatentStack {
    let mut out = latents.clone();
    sync_in_place(&mut out.views, maps);
    out
}
