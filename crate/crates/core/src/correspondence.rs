//! Per-cell cross-view correspondence at grid (usually latent) resolution.
//!
//! A grid of `h x w` cells over an `H x W` image uses the scale factor
//! `H / h`; cell `(i, j)` is sampled at grid coordinate `(j + 0.5, i + 0.5)`,
//! i.e. full-resolution pixel `((j + 0.5) f, (i + 0.5) f)`. A continuous
//! target coordinate resolves to the cell whose center is nearest, ties
//! rounding away from zero. Noise synchronization, latent re-assignment and
//! attention all share this one notion of "same cell".

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Vector2, Vector3};

use crate::camera::{CameraRig, MIN_DEPTH};
use crate::homography::{ground_plane_homography, ground_plane_in_camera, infinite_homography, relative_pose, Homography};
use crate::{Error, Result};

/// Image-to-latent downsampling factor.
pub const LATENT_FACTOR: f64 = 8.0;

/// Translation below which a camera pair is treated as a pure rotation, for
/// which one homography is exact at every depth.
const PURE_ROTATION_EPS: f64 = 1e-12;

/// Conjugates a pixel-space homography into a grid `factor` times coarser:
/// `S H S^-1` with `S = diag(1/factor, 1/factor, 1)`.
pub fn latent_scale_homography(h: &Homography, factor: f64) -> Result<Homography> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Domain(format!("scale factor {factor} must be positive")));
    }
    h.rescaled(1.0 / factor)
}

/// Nearest-center cell index of a continuous grid coordinate.
#[inline]
pub fn nearest_cell(coord: f64) -> i64 {
    libm::round(coord - 0.5) as i64
}

#[inline]
pub fn cell_center(i: usize, j: usize) -> Vector2<f64> {
    Vector2::new(j as f64 + 0.5, i as f64 + 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Continuous target grid coordinate `(x, y)`.
    pub coord: Vector2<f64>,
    /// Nearest target cell `(row, col)`.
    pub cell: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrespondenceMode {
    /// Ground-plane homography; cells whose rays miss the ground in front of
    /// both cameras are invalid (unless the pair is a pure rotation).
    #[default]
    GroundPlane,
    /// Ground plane below the horizon, infinite homography above it.
    GroundAndInfinity,
}

/// Mapping of every source cell into a target view.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    source: usize,
    target: usize,
    h: usize,
    w: usize,
    forward: Homography,
    backward: Homography,
    entries: Vec<Option<Correspondence>>,
}

impl CorrespondenceMap {
    pub fn source(&self) -> usize {
        self.source
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// Grid-space homography, source to target.
    pub fn forward(&self) -> &Homography {
        &self.forward
    }

    /// Grid-space homography, target back to source.
    pub fn backward(&self) -> &Homography {
        &self.backward
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&Correspondence> {
        self.entries[i * self.w + j].as_ref()
    }

    pub fn entries(&self) -> &[Option<Correspondence>] {
        &self.entries
    }

    pub fn valid_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn overlap_fraction(&self) -> f64 {
        self.valid_count() as f64 / self.entries.len() as f64
    }

    /// Binary overlap mask; true exactly where the map is valid.
    pub fn overlap_mask(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.is_some()).collect()
    }

    /// Copy instructions `(source cell, target cell)` in row-major source
    /// order, keeping only the last source for targets hit more than once.
    /// After a scan-order copy these are exactly the pairs that agree.
    pub fn effective_pairs(&self) -> Vec<((usize, usize), (usize, usize))> {
        let mut last = alloc::vec![usize::MAX; self.h * self.w];
        for (s, e) in self.entries.iter().enumerate() {
            if let Some(c) = e {
                last[c.cell.0 * self.w + c.cell.1] = s;
            }
        }
        let mut out: Vec<_> = last
            .iter()
            .enumerate()
            .filter(|(_, &s)| s != usize::MAX)
            .map(|(t, &s)| ((s / self.w, s % self.w), (t / self.w, t % self.w)))
            .collect();
        out.sort_unstable();
        out
    }
}

fn grid_factor(rig: &CameraRig, h: usize, w: usize) -> Result<f64> {
    let (ih, iw) = rig.image_size();
    if h == 0 || w == 0 || ih % h != 0 || iw % w != 0 || ih / h != iw / w {
        return Err(Error::Config(format!(
            "grid {h}x{w} is not a uniform downsampling of image {ih}x{iw}"
        )));
    }
    Ok((ih / h) as f64)
}

/// Correspondence map from view `src` to view `dst` (1-based) on an
/// `h x w` grid.
pub fn pair_map(
    rig: &CameraRig,
    src: usize,
    dst: usize,
    h: usize,
    w: usize,
    mode: CorrespondenceMode,
) -> Result<CorrespondenceMap> {
    let factor = grid_factor(rig, h, w)?;
    let (cam_src, cam_dst) = (rig.camera(src)?, rig.camera(dst)?);
    let forward = latent_scale_homography(&ground_plane_homography(cam_src, cam_dst)?, factor)?;
    let backward = forward.inverse()?;
    let far = latent_scale_homography(&infinite_homography(cam_src, cam_dst), factor)?;
    let (normal, dist) = ground_plane_in_camera(cam_src)?;
    let (r_rel, t_rel) = relative_pose(cam_src, cam_dst);
    let pure_rotation = t_rel.norm() < PURE_ROTATION_EPS;
    let k_inv = cam_src.intrinsics.inverse_matrix();

    let mut entries = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let p = cell_center(i, j);
            let ray = k_inv * Vector3::new(p.x * factor, p.y * factor, 1.0);
            let toward_ground = normal.dot(&ray);
            let homography = if pure_rotation {
                ((r_rel * ray).z > 0.0).then_some(&forward)
            } else if toward_ground > 0.0 {
                let on_plane = ray * (dist / toward_ground);
                ((r_rel * on_plane + t_rel).z > MIN_DEPTH).then_some(&forward)
            } else if mode == CorrespondenceMode::GroundAndInfinity {
                ((r_rel * ray).z > 0.0).then_some(&far)
            } else {
                None
            };
            let entry = homography.and_then(|hm| hm.apply(&p).ok()).and_then(|q| {
                let (row, col) = (nearest_cell(q.y), nearest_cell(q.x));
                (row >= 0 && col >= 0 && (row as usize) < h && (col as usize) < w)
                    .then(|| Correspondence { coord: q, cell: (row as usize, col as usize) })
            });
            entries.push(entry);
        }
    }
    Ok(CorrespondenceMap { source: src, target: dst, h, w, forward, backward, entries })
}

/// Maps from view `m` into its right and left neighbors.
pub fn build_correspondence_map(
    rig: &CameraRig,
    m: usize,
    h: usize,
    w: usize,
) -> Result<(CorrespondenceMap, CorrespondenceMap)> {
    let right = pair_map(rig, m, rig.right_of(m)?, h, w, CorrespondenceMode::GroundPlane)?;
    let left = pair_map(rig, m, rig.left_of(m)?, h, w, CorrespondenceMode::GroundPlane)?;
    Ok((right, left))
}

/// Neighbor maps for every view of a rig, indexed by 0-based view.
#[derive(Debug, Clone, PartialEq)]
pub struct RigMaps {
    pub right: Vec<CorrespondenceMap>,
    pub left: Vec<CorrespondenceMap>,
}

impl RigMaps {
    pub fn build(rig: &CameraRig, h: usize, w: usize) -> Result<Self> {
        let (mut right, mut left) = (Vec::new(), Vec::new());
        for m in 1..=rig.len() {
            let (r, l) = build_correspondence_map(rig, m, h, w)?;
            right.push(r);
            left.push(l);
        }
        Ok(Self { right, left })
    }

    pub fn from_parts(right: Vec<CorrespondenceMap>, left: Vec<CorrespondenceMap>) -> Result<Self> {
        if right.len() != left.len() || right.len() < 2 {
            return Err(Error::Config("maps must cover every view on both sides".into()));
        }
        let shape = right[0].shape();
        if right.iter().chain(&left).any(|m| m.shape() != shape) {
            return Err(Error::Config("maps disagree on grid shape".into()));
        }
        Ok(Self { right, left })
    }

    pub fn view_count(&self) -> usize {
        self.right.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.right[0].shape()
    }

    /// Maps out of view `m` (1-based) to its distinct neighbors, right first.
    pub fn neighbors_of(&self, m: usize) -> impl Iterator<Item = &CorrespondenceMap> {
        let right = &self.right[m - 1];
        let left = &self.left[m - 1];
        core::iter::once(right).chain((left.target() != right.target()).then_some(left))
    }
}

/// Builds a map from an explicit homography with plain bounds validity.
/// Used for synthetic setups that have no camera geometry behind them.
pub fn map_from_homography(
    source: usize,
    target: usize,
    h: usize,
    w: usize,
    forward: Homography,
) -> Result<CorrespondenceMap> {
    let backward = forward.inverse()?;
    let entries = (0..h * w)
        .map(|s| {
            let q = forward.apply(&cell_center(s / w, s % w)).ok()?;
            let (row, col) = (nearest_cell(q.y), nearest_cell(q.x));
            (row >= 0 && col >= 0 && (row as usize) < h && (col as usize) < w)
                .then(|| Correspondence { coord: q, cell: (row as usize, col as usize) })
        })
        .collect();
    Ok(CorrespondenceMap { source, target, h, w, forward, backward, entries })
}

/// Map with no valid cell.
pub fn empty_map(source: usize, target: usize, h: usize, w: usize) -> CorrespondenceMap {
    CorrespondenceMap {
        source,
        target,
        h,
        w,
        forward: Homography::identity(),
        backward: Homography::identity(),
        entries: alloc::vec![None; h * w],
    }
}

/// The `k x k` window of target cells around the correspondence of source
/// cell `p`, clipped to the grid, in row-major order.
pub fn neighborhood(map: &CorrespondenceMap, p: (usize, usize), k: usize) -> Result<Vec<(usize, usize)>> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::Config(format!("window size {k} must be odd and positive")));
    }
    let c = map.get(p.0, p.1).ok_or(Error::NoCorrespondence { row: p.0, col: p.1 })?;
    let r = (k / 2) as i64;
    let (h, w) = map.shape();
    let (ci, cj) = (c.cell.0 as i64, c.cell.1 as i64);
    let mut out = Vec::with_capacity(k * k);
    for i in (ci - r).max(0)..=(ci + r).min(h as i64 - 1) {
        for j in (cj - r).max(0)..=(cj + r).min(w as i64 - 1) {
            out.push((i as usize, j as usize));
        }
    }
    Ok(out)
}
