//! Ground-plane projection between the top-down semantic grid and the
//! perspective views.
//!
//! Grid convention: row index grows backwards (toward -x), column index
//! grows to the right (toward -y). The ego vehicle sits at the corner shared
//! by cells `(rows/2 - 1, cols/2 - 1)` and `(rows/2, cols/2)`, i.e. world
//! point (0, 0) falls in cell `(rows/2, cols/2)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Vector2, Vector3};

use crate::camera::{yaw_rotation, Camera, CameraRig};
use crate::{Error, Result};

/// Class ids used across the crate.
pub mod class {
    pub const VOID: u8 = 0;
    pub const DRIVABLE: u8 = 1;
    pub const VEHICLE: u8 = 2;
    pub const BUILDING: u8 = 3;
    pub const VEGETATION: u8 = 4;
    pub const COUNT: usize = 5;
}

/// Shape and resolution of a top-down grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevGrid {
    pub rows: usize,
    pub cols: usize,
    pub meters_per_cell: f64,
    pub class_count: usize,
}

impl BevGrid {
    /// 80 m x 80 m at 0.2 m per cell.
    pub const DEFAULT: BevGrid = BevGrid { rows: 400, cols: 400, meters_per_cell: 0.2, class_count: class::COUNT };

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("empty BEV grid".into()));
        }
        if !(self.meters_per_cell > 0.0) || !self.meters_per_cell.is_finite() {
            return Err(Error::Config(format!("meters_per_cell {} must be positive", self.meters_per_cell)));
        }
        if self.class_count == 0 || self.class_count > 256 {
            return Err(Error::Config(format!("class_count {} outside 1..=256", self.class_count)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ego_cell(&self) -> (usize, usize) {
        (self.rows / 2, self.cols / 2)
    }

    /// Continuous (row, col) coordinate of a ground point.
    pub fn world_to_grid(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.rows as f64 / 2.0 - x / self.meters_per_cell,
            self.cols as f64 / 2.0 - y / self.meters_per_cell,
        )
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (r, c) = self.world_to_grid(x, y);
        if r >= 0.0 && c >= 0.0 && r < self.rows as f64 && c < self.cols as f64 {
            Some((libm::floor(r) as usize, libm::floor(c) as usize))
        } else {
            None
        }
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (self.rows as f64 / 2.0 - (row as f64 + 0.5)) * self.meters_per_cell,
            (self.cols as f64 / 2.0 - (col as f64 + 0.5)) * self.meters_per_cell,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevSemantics {
    grid: BevGrid,
    labels: Vec<u8>,
}

impl BevSemantics {
    pub fn new(grid: BevGrid, labels: Vec<u8>) -> Result<Self> {
        grid.validate()?;
        if labels.len() != grid.len() {
            return Err(Error::Config(format!("expected {} labels, got {}", grid.len(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= grid.class_count) {
            return Err(Error::Config(format!("label {bad} not below class count {}", grid.class_count)));
        }
        Ok(Self { grid, labels })
    }

    pub fn filled(grid: BevGrid, label: u8) -> Result<Self> {
        Self::new(grid, vec![label; grid.len()])
    }

    pub fn grid(&self) -> &BevGrid {
        &self.grid
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.grid.cols + col]
    }

    pub fn label_at(&self, x: f64, y: f64) -> Option<u8> {
        self.grid.cell_of(x, y).map(|(r, c)| self.label(r, c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerspectiveSemantics {
    /// 1-based view index.
    pub view: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl PerspectiveSemantics {
    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }
}

pub fn pixel_center(row: usize, col: usize) -> Vector2<f64> {
    Vector2::new(col as f64 + 0.5, row as f64 + 0.5)
}

fn check_above_ground(cam: &Camera) -> Result<()> {
    let h = cam.center().z;
    if !(h > 0.0) {
        return Err(Error::Geometry(format!("camera height {h} is not above the ground plane")));
    }
    Ok(())
}

/// Per-pixel ground intersections of a camera, `None` where the ray misses
/// the ground in front of the camera.
pub fn ground_hits(cam: &Camera, image_size: (usize, usize)) -> Result<Vec<Option<Vector3<f64>>>> {
    check_above_ground(cam)?;
    let (h, w) = image_size;
    let k_inv = cam.intrinsics.inverse_matrix();
    let r_t = cam.extrinsics.rotation.transpose();
    let center = cam.center();
    let mut out = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let p = pixel_center(row, col);
            let dir = r_t * (k_inv * Vector3::new(p.x, p.y, 1.0));
            out.push(if dir.z < 0.0 { Some(center + dir * (-center.z / dir.z)) } else { None });
        }
    }
    Ok(out)
}

/// Inverse warp: every pixel takes the label of the cell its ray hits.
pub fn project_bev_to_view(
    bev: &BevSemantics,
    cam: &Camera,
    view: usize,
    image_size: (usize, usize),
) -> Result<PerspectiveSemantics> {
    let labels = ground_hits(cam, image_size)?
        .into_iter()
        .map(|hit| hit.and_then(|p| bev.label_at(p.x, p.y)).unwrap_or(class::VOID))
        .collect();
    Ok(PerspectiveSemantics { view, height: image_size.0, width: image_size.1, labels })
}

pub fn project_all_views(bev: &BevSemantics, rig: &CameraRig) -> Result<Vec<PerspectiveSemantics>> {
    rig.cameras()
        .iter()
        .enumerate()
        .map(|(i, cam)| project_bev_to_view(bev, cam, i + 1, rig.image_size()))
        .collect()
}

/// Partial top-down labels recovered from perspective labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BevCoverage {
    pub grid: BevGrid,
    /// Majority label per cell; `VOID` where uncovered.
    pub labels: Vec<u8>,
    pub covered: Vec<bool>,
}

impl BevCoverage {
    pub fn covered_count(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }
}

/// Vote accumulator for fusing several views into one grid.
#[derive(Debug, Clone)]
pub struct BevVotes {
    grid: BevGrid,
    counts: Vec<u32>,
}

impl BevVotes {
    pub fn new(grid: BevGrid) -> Result<Self> {
        grid.validate()?;
        Ok(Self { grid, counts: vec![0; grid.len() * grid.class_count] })
    }

    /// Each non-void pixel votes for its label in the cell under its ground
    /// intersection.
    pub fn add_view(&mut self, sem: &PerspectiveSemantics, cam: &Camera) -> Result<()> {
        let hits = ground_hits(cam, (sem.height, sem.width))?;
        let nc = self.grid.class_count;
        for (hit, &label) in hits.iter().zip(&sem.labels) {
            if label == class::VOID || label as usize >= nc {
                continue;
            }
            if let Some((r, c)) = hit.and_then(|p| self.grid.cell_of(p.x, p.y)) {
                self.counts[(r * self.grid.cols + c) * nc + label as usize] += 1;
            }
        }
        Ok(())
    }

    /// Majority label per cell; ties go to the smaller class id.
    pub fn finish(self) -> BevCoverage {
        let nc = self.grid.class_count;
        let mut labels = vec![class::VOID; self.grid.len()];
        let mut covered = vec![false; self.grid.len()];
        for (cell, votes) in self.counts.chunks_exact(nc).enumerate() {
            let mut best = (0u32, 0usize);
            for (label, &n) in votes.iter().enumerate() {
                if n > best.0 {
                    best = (n, label);
                }
            }
            if best.0 > 0 {
                labels[cell] = best.1 as u8;
                covered[cell] = true;
            }
        }
        BevCoverage { grid: self.grid, labels, covered }
    }
}

pub fn unproject_view_to_bev(sem: &PerspectiveSemantics, cam: &Camera, grid: &BevGrid) -> Result<BevCoverage> {
    let mut votes = BevVotes::new(*grid)?;
    votes.add_view(sem, cam)?;
    Ok(votes.finish())
}

/// Resamples the grid so that content turns by `yaw_deg` about the ego
/// (nearest-neighbor; cells sampling outside the grid become void).
pub fn rotate_bev(bev: &BevSemantics, yaw_deg: f64) -> BevSemantics {
    let grid = bev.grid;
    let inverse = yaw_rotation(-yaw_deg);
    let mut labels = Vec::with_capacity(grid.len());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let (x, y) = grid.cell_center(r, c);
            let src = inverse * Vector3::new(x, y, 0.0);
            labels.push(bev.label_at(src.x, src.y).unwrap_or(class::VOID));
        }
    }
    BevSemantics { grid, labels }
}
