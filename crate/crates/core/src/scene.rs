//! Deterministic synthetic driving scenes and their flat-shaded renders.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::camera::{Camera, CameraExtrinsics, CameraIntrinsics, CameraRig};
use crate::diffusion::InstanceMask;
use crate::projection::{class, ground_hits, BevGrid, BevSemantics, PerspectiveSemantics};
use crate::rng::{stream, CounterRng};
use crate::tensor::RgbImage;
use crate::{Error, Result};

pub const DEFAULT_IMAGE_SIZE: (usize, usize) = (256, 448);
/// Headings of the six default cameras, ordered so each view's right
/// neighbor is the next entry.
pub const DEFAULT_YAWS_DEG: [f64; 6] = [0.0, -55.0, -110.0, 180.0, 110.0, 55.0];
pub const DEFAULT_HFOV_DEG: f64 = 90.0;
pub const DEFAULT_MOUNT_HEIGHT: f64 = 1.5;
/// Cameras sit on a circle of this radius around the ego origin.
pub const DEFAULT_MOUNT_RADIUS: f64 = 1.0;

/// Flat shading color per class id. Void renders as sky.
pub const PALETTE: [[f64; 3]; class::COUNT] = [
    [0.55, 0.75, 0.95],
    [0.35, 0.35, 0.38],
    [0.90, 0.90, 0.90],
    [0.60, 0.45, 0.35],
    [0.20, 0.55, 0.20],
];

pub fn make_default_rig() -> CameraRig {
    make_rig_with_size(DEFAULT_IMAGE_SIZE).expect("default size is valid")
}

/// The default rig geometry at another image resolution.
pub fn make_rig_with_size(size: (usize, usize)) -> Result<CameraRig> {
    let k = CameraIntrinsics::from_horizontal_fov(DEFAULT_HFOV_DEG, size)?;
    let cameras = DEFAULT_YAWS_DEG
        .iter()
        .map(|&yaw| {
            let (s, c) = libm::sincos(yaw.to_radians());
            let position = Vector3::new(DEFAULT_MOUNT_RADIUS * c, DEFAULT_MOUNT_RADIUS * s, DEFAULT_MOUNT_HEIGHT);
            Camera::new(k, CameraExtrinsics::mounted(yaw, 0.0, position).expect("proper rotation"))
        })
        .collect();
    CameraRig::new(cameras, size)
}

/// Axis-aligned vehicle footprint on the ground, in world meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSpec {
    pub center: (f64, f64),
    /// Extent along x.
    pub length: f64,
    /// Extent along y.
    pub width: f64,
    pub color: [f64; 3],
}

impl VehicleSpec {
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let (x, y) = self.center;
        (x - self.length / 2.0, x + self.length / 2.0, y - self.width / 2.0, y + self.width / 2.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, x1, y0, y1) = self.bounds();
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    fn overlaps(&self, other: &VehicleSpec) -> bool {
        let (a0, a1, b0, b1) = self.bounds();
        let (c0, c1, d0, d1) = other.bounds();
        a0 < c1 && c0 < a1 && b0 < d1 && d0 < b1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub grid: BevGrid,
    /// Width of one lane; the road carries two lanes.
    pub lane_width: f64,
    /// Road centerline is `y = curvature * x^2 / 2`.
    pub curvature: f64,
    pub vehicles: Vec<VehicleSpec>,
    /// Classes of the roadside bands, nearest band first.
    pub background: Vec<u8>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: BevGrid::DEFAULT,
            lane_width: 3.5,
            curvature: 0.004,
            vehicles: vec![
                VehicleSpec { center: (10.0, -1.5), length: 4.5, width: 2.0, color: [0.80, 0.10, 0.10] },
                VehicleSpec { center: (-9.0, 2.0), length: 4.6, width: 1.9, color: [0.10, 0.20, 0.80] },
                VehicleSpec { center: (21.0, 2.8), length: 4.8, width: 2.0, color: [0.95, 0.80, 0.10] },
                VehicleSpec { center: (-20.0, 0.2), length: 4.4, width: 1.9, color: [0.10, 0.10, 0.10] },
            ],
            background: vec![class::VEGETATION, class::BUILDING],
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.lane_width > 0.0) || !self.curvature.is_finite() {
            return Err(Error::Spec(format!(
                "lane width {} must be positive and curvature finite",
                self.lane_width
            )));
        }
        if self.background.is_empty() {
            return Err(Error::Spec("at least one background class is required".into()));
        }
        if let Some(b) = self.background.iter().find(|&&b| b == class::VOID || b as usize >= self.grid.class_count) {
            return Err(Error::Spec(format!("background class {b} is void or out of range")));
        }
        let half_x = self.grid.rows as f64 * self.grid.meters_per_cell / 2.0;
        let half_y = self.grid.cols as f64 * self.grid.meters_per_cell / 2.0;
        for (i, v) in self.vehicles.iter().enumerate() {
            let (x0, x1, y0, y1) = v.bounds();
            if !(v.length > 0.0 && v.width > 0.0) {
                return Err(Error::Spec(format!("vehicle {} has a non-positive footprint", i + 1)));
            }
            if !(x0 > -half_x && x1 < half_x && y0 > -half_y && y1 < half_y) {
                return Err(Error::Spec(format!("vehicle {} leaves the BEV extent", i + 1)));
            }
            if !v.color.iter().all(|c| (0.0..=1.0).contains(c)) {
                return Err(Error::Spec(format!("vehicle {} color outside [0, 1]", i + 1)));
            }
            for (j, other) in self.vehicles.iter().enumerate().skip(i + 1) {
                if v.overlaps(other) {
                    return Err(Error::Spec(format!("vehicles {} and {} overlap", i + 1, j + 1)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevScene {
    pub semantics: BevSemantics,
    /// 1-based vehicle index per cell, 0 where no vehicle.
    pub instances: Vec<u16>,
    pub vehicles: Vec<VehicleSpec>,
}

impl BevScene {
    pub fn instance(&self, row: usize, col: usize) -> u16 {
        self.instances[row * self.semantics.grid().cols + col]
    }
}

/// Roadside segments along x; each gets its own band width per side.
const SEGMENT_LENGTH: f64 = 8.0;

pub fn synth_bev_scene(spec: &SceneSpec) -> Result<BevScene> {
    spec.validate()?;
    let grid = spec.grid;
    let rng = CounterRng::new(spec.seed, stream::SCENE);
    let mut labels = Vec::with_capacity(grid.len());
    let mut instances = Vec::with_capacity(grid.len());
    let last_band = spec.background.len() - 1;
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let (x, y) = grid.cell_center(r, c);
            if let Some(i) = spec.vehicles.iter().position(|v| v.contains(x, y)) {
                labels.push(class::VEHICLE);
                instances.push(i as u16 + 1);
                continue;
            }
            instances.push(0);
            let offset = y - spec.curvature * x * x / 2.0;
            let edge = offset.abs() - spec.lane_width;
            if edge <= 0.0 {
                labels.push(class::DRIVABLE);
                continue;
            }
            let segment = libm::floor(x / SEGMENT_LENGTH) as i64;
            let side = (offset > 0.0) as u64;
            let band_width = 2.0 + 4.0 * rng.uniform([segment as u64, side, 0]);
            let band = ((edge / band_width) as usize).min(last_band);
            labels.push(spec.background[band]);
        }
    }
    Ok(BevScene { semantics: BevSemantics::new(grid, labels)?, instances, vehicles: spec.vehicles.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthViews {
    pub images: Vec<RgbImage>,
    pub semantics: Vec<PerspectiveSemantics>,
    /// One entry per vehicle, covering all views.
    pub instances: Vec<InstanceMask>,
}

/// Flat-shaded renders by ground-plane ray casting.
pub fn render_gt_views(scene: &BevScene, rig: &CameraRig) -> Result<GroundTruthViews> {
    let (h, w) = rig.image_size();
    let grid = *scene.semantics.grid();
    let mut images = Vec::with_capacity(rig.len());
    let mut semantics = Vec::with_capacity(rig.len());
    let mut instances: Vec<InstanceMask> = scene
        .vehicles
        .iter()
        .enumerate()
        .map(|(i, v)| InstanceMask::empty(i as u32 + 1, v.color, rig.len(), (h, w)))
        .collect();
    for (m, cam) in rig.cameras().iter().enumerate() {
        let mut image = RgbImage::filled(h, w, PALETTE[class::VOID as usize]);
        let mut labels = vec![class::VOID; h * w];
        for (p, hit) in ground_hits(cam, (h, w))?.into_iter().enumerate() {
            let Some((r, c)) = hit.and_then(|g| grid.cell_of(g.x, g.y)) else { continue };
            let label = scene.semantics.label(r, c);
            labels[p] = label;
            let inst = scene.instance(r, c);
            let color = if inst > 0 {
                instances[inst as usize - 1].masks[m][p] = true;
                scene.vehicles[inst as usize - 1].color
            } else {
                PALETTE[label as usize]
            };
            image.set_pixel(p / w, p % w, color);
        }
        images.push(image);
        semantics.push(PerspectiveSemantics { view: m + 1, height: h, width: w, labels });
    }
    Ok(GroundTruthViews { images, semantics, instances })
}
