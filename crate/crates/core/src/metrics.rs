//! Consistency and controllability metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::camera::CameraRig;
use crate::correspondence::{pair_map, CorrespondenceMode};
use crate::diffusion::InstanceMask;
use crate::projection::{BevSemantics, BevVotes, PerspectiveSemantics};
use crate::tensor::RgbImage;
use crate::{Error, Result};

pub const PSNR_CAP_DB: f64 = 99.0;

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * libm::log10(1.0 / mse)).min(PSNR_CAP_DB)
}

/// PSNR (peak 1) over the entries of `a` and `b` whose pixel is set in
/// `mask`; `None` for an empty mask. Entries are per-channel, `channels`
/// per pixel.
pub fn masked_psnr(a: &[f64], b: &[f64], mask: &[bool], channels: usize) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, &m) in mask.iter().enumerate() {
        if m {
            for k in 0..channels {
                let d = a[p * channels + k] - b[p * channels + k];
                sum += d * d;
            }
            n += channels;
        }
    }
    (n > 0).then(|| psnr_from_mse(sum / n as f64))
}

/// Bilinear sample at a continuous pixel coordinate (pixel centers at
/// half-integers), clamped at the border.
pub fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let fx = (x - 0.5).clamp(0.0, (img.width - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (img.height - 1) as f64);
    let (x0, y0) = (libm::floor(fx) as usize, libm::floor(fy) as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let (a, b, c, d) = (img.pixel(y0, x0), img.pixel(y0, x1), img.pixel(y1, x0), img.pixel(y1, x1));
    [0, 1, 2].map(|k| (1.0 - ty) * ((1.0 - tx) * a[k] + tx * b[k]) + ty * ((1.0 - tx) * c[k] + tx * d[k]))
}

/// The neighbor image resampled into `view`'s pixel grid through the ground
/// homography, and the mask of pixels where that is defined.
pub fn warp_neighbor(images: &[RgbImage], rig: &CameraRig, view: usize, neighbor: usize) -> Result<(RgbImage, Vec<bool>)> {
    let (h, w) = rig.image_size();
    let map = pair_map(rig, view, neighbor, h, w, CorrespondenceMode::GroundPlane)?;
    let src = &images[neighbor - 1];
    let mut out = RgbImage::filled(h, w, [0.0; 3]);
    let mut mask = vec![false; h * w];
    for (s, entry) in map.entries().iter().enumerate() {
        if let Some(c) = entry {
            out.set_pixel(s / w, s % w, sample_bilinear(src, c.coord.x, c.coord.y));
            mask[s] = true;
        }
    }
    Ok((out, mask))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairPsnr {
    pub view: usize,
    pub neighbor: usize,
    pub overlap_pixels: usize,
    /// `None` when the pair has no overlap.
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapPsnr {
    pub pairs: Vec<PairPsnr>,
    /// Mean over pairs with overlap.
    pub mean: Option<f64>,
}

/// PSNR between each view and its right neighbor warped into it. Images
/// are clamped to the unit range first.
pub fn overlap_psnr(images: &[RgbImage], rig: &CameraRig) -> Result<OverlapPsnr> {
    if images.len() != rig.len() {
        return Err(Error::Config(format!("{} images for {} cameras", images.len(), rig.len())));
    }
    let (h, w) = rig.image_size();
    if images.iter().any(|im| (im.height, im.width) != (h, w)) {
        return Err(Error::Config(format!("images must be {h}x{w}")));
    }
    let images: Vec<RgbImage> = images.iter().map(RgbImage::clamped).collect();
    let mut pairs = Vec::new();
    for m in 1..=rig.len() {
        let n = rig.right_of(m)?;
        if rig.len() == 2 && m == 2 {
            break;
        }
        let (warped, mask) = warp_neighbor(&images, rig, m, n)?;
        let psnr = masked_psnr(&images[m - 1].data, &warped.data, &mask, 3);
        pairs.push(PairPsnr { view: m, neighbor: n, overlap_pixels: mask.iter().filter(|&&b| b).count(), psnr });
    }
    let valid: Vec<f64> = pairs.iter().filter_map(|p| p.psnr).collect();
    let mean = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    Ok(OverlapPsnr { pairs, mean })
}

/// Per-view PSNR of whole images against references.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityPsnr {
    pub per_view: Vec<f64>,
    pub mean: f64,
}

pub fn fidelity_psnr(images: &[RgbImage], references: &[RgbImage]) -> Result<FidelityPsnr> {
    if images.is_empty() || images.len() != references.len() {
        return Err(Error::Config("need one reference per image".into()));
    }
    let mut per_view = Vec::with_capacity(images.len());
    for (a, b) in images.iter().zip(references) {
        if (a.height, a.width) != (b.height, b.width) {
            return Err(Error::Config("image and reference sizes differ".into()));
        }
        let (a, b) = (a.clamped(), b.clamped());
        let mask = vec![true; a.height * a.width];
        per_view.push(masked_psnr(&a.data, &b.data, &mask, 3).unwrap_or(PSNR_CAP_DB));
    }
    let mean = per_view.iter().sum::<f64>() / per_view.len() as f64;
    Ok(FidelityPsnr { per_view, mean })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// `None` for classes absent from both inputs.
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

fn iou_from_counts(inter: &[usize], union: &[usize]) -> IouReport {
    let per_class: Vec<Option<f64>> =
        inter.iter().zip(union).map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64)).collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    IouReport { per_class, mean }
}

fn count_iou(pred: &[u8], gt: &[u8], class_count: usize, keep: impl Fn(usize) -> bool) -> Result<IouReport> {
    if pred.len() != gt.len() {
        return Err(Error::Config(format!("label grids differ in size: {} vs {}", pred.len(), gt.len())));
    }
    let (mut inter, mut union) = (vec![0usize; class_count], vec![0usize; class_count]);
    for (s, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        if !keep(s) {
            continue;
        }
        let (p, g) = (p as usize, g as usize);
        if p >= class_count || g >= class_count {
            return Err(Error::Config(format!("label outside {class_count} classes")));
        }
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    Ok(iou_from_counts(&inter, &union))
}

pub fn semantic_iou(pred: &[u8], gt: &[u8], class_count: usize) -> Result<IouReport> {
    count_iou(pred, gt, class_count, |_| true)
}

/// IoU pooled over all views.
pub fn multi_view_iou(pred: &[PerspectiveSemantics], gt: &[PerspectiveSemantics], class_count: usize) -> Result<IouReport> {
    if pred.len() != gt.len() {
        return Err(Error::Config("view counts differ".into()));
    }
    let p: Vec<u8> = pred.iter().flat_map(|s| s.labels.iter().copied()).collect();
    let g: Vec<u8> = gt.iter().flat_map(|s| s.labels.iter().copied()).collect();
    semantic_iou(&p, &g, class_count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevIouReport {
    pub iou: IouReport,
    pub covered_cells: usize,
}

/// Unprojects every view onto the ground grid, fuses by majority and scores
/// the covered cells against `gt`.
pub fn bev_iou(pred_views: &[PerspectiveSemantics], rig: &CameraRig, gt: &BevSemantics) -> Result<BevIouReport> {
    let mut votes = BevVotes::new(*gt.grid())?;
    for sem in pred_views {
        votes.add_view(sem, rig.camera(sem.view)?)?;
    }
    let fused = votes.finish();
    let covered_cells = fused.covered_count();
    let iou = count_iou(&fused.labels, gt.labels(), gt.grid().class_count, |s| fused.covered[s])?;
    Ok(BevIouReport { iou, covered_cells })
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        libm::pow((c + 0.055) / 1.055, 2.4)
    }
}

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// CIE L*a*b* of an sRGB triple, relative to the D65 white of the sRGB
/// matrix itself so neutrals have `a* = b* = 0`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> Result<[f64; 3]> {
    if !rgb.iter().all(|c| (0.0..=1.0).contains(c)) {
        return Err(Error::Domain(format!("sRGB components {rgb:?} outside [0, 1]")));
    }
    let lin = rgb.map(srgb_to_linear);
    let xyz = SRGB_TO_XYZ.map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]);
    let white = SRGB_TO_XYZ.map(|row| row[0] + row[1] + row[2]);
    const D: f64 = 6.0 / 29.0;
    let f = |t: f64| if t > D * D * D { libm::cbrt(t) } else { t / (3.0 * D * D) + 4.0 / 29.0 };
    let (fx, fy, fz) = (f(xyz[0] / white[0]), f(xyz[1] / white[1]), f(xyz[2] / white[2]));
    Ok([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)])
}

pub fn delta_e_cie76(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    let (la, lb) = (srgb_to_lab(a)?, srgb_to_lab(b)?);
    Ok(libm::sqrt((0..3).map(|k| (la[k] - lb[k]) * (la[k] - lb[k])).sum()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceColor {
    pub id: u32,
    pub pixels: usize,
    pub mean_color: Option<[f64; 3]>,
    /// `None` for an empty mask.
    pub delta_e: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorReport {
    pub instances: Vec<InstanceColor>,
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
}

pub fn mean_and_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, libm::sqrt(var)))
}

/// Per instance: Delta-E between the mean clamped color over its masked
/// pixels (all views) and its target color.
pub fn instance_color_report(images: &[RgbImage], masks: &[InstanceMask]) -> Result<ColorReport> {
    let mut instances = Vec::with_capacity(masks.len());
    for inst in masks {
        if inst.masks.len() != images.len() {
            return Err(Error::Config(format!("instance {} covers {} views, not {}", inst.id, inst.masks.len(), images.len())));
        }
        let (mut acc, mut pixels) = ([0.0; 3], 0usize);
        for (img, mask) in images.iter().zip(&inst.masks) {
            if (img.height, img.width) != (inst.height, inst.width) {
                return Err(Error::Config(format!("instance {} mask size differs from the images", inst.id)));
            }
            for (p, &on) in mask.iter().enumerate() {
                if on {
                    let px = img.pixel(p / img.width, p % img.width);
                    for k in 0..3 {
                        acc[k] += px[k].clamp(0.0, 1.0);
                    }
                    pixels += 1;
                }
            }
        }
        let mean_color = (pixels > 0).then(|| acc.map(|v| (v / pixels as f64).clamp(0.0, 1.0)));
        let delta_e = mean_color.map(|c| delta_e_cie76(c, inst.color)).transpose()?;
        instances.push(InstanceColor { id: inst.id, pixels, mean_color, delta_e });
    }
    let values: Vec<f64> = instances.iter().filter_map(|i| i.delta_e).collect();
    let stats = mean_and_std(&values);
    Ok(ColorReport { instances, mean: stats.map(|s| s.0), std: stats.map(|s| s.1) })
}

/// All metrics of one evaluation. Absent sections were not requested.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub overlap: Option<OverlapPsnr>,
    pub fidelity: Option<FidelityPsnr>,
    pub semantic: Option<IouReport>,
    pub bev: Option<BevIouReport>,
    pub color: Option<ColorReport>,
}

impl MetricsReport {
    /// Flat `(key, value)` list with stable names; `None` marks a skipped or
    /// undefined value.
    pub fn entries(&self) -> Vec<(String, Option<f64>)> {
        let mut out = Vec::new();
        if let Some(o) = &self.overlap {
            for p in &o.pairs {
                out.push((format!("overlap_psnr.pair_{}_{}", p.view, p.neighbor), p.psnr));
            }
            out.push(("overlap_psnr.mean".into(), o.mean));
        }
        if let Some(f) = &self.fidelity {
            for (v, p) in f.per_view.iter().enumerate() {
                out.push((format!("fidelity_psnr.view_{}", v + 1), Some(*p)));
            }
            out.push(("fidelity_psnr.mean".into(), Some(f.mean)));
        }
        let iou = |out: &mut Vec<(String, Option<f64>)>, prefix: &str, r: &IouReport| {
            for (k, v) in r.per_class.iter().enumerate() {
                out.push((format!("{prefix}.class_{k}"), *v));
            }
            out.push((format!("{prefix}.mean"), r.mean));
        };
        if let Some(s) = &self.semantic {
            iou(&mut out, "semantic_iou", s);
        }
        if let Some(b) = &self.bev {
            iou(&mut out, "bev_iou", &b.iou);
            out.push(("bev_iou.covered_cells".into(), Some(b.covered_cells as f64)));
        }
        if let Some(c) = &self.color {
            for i in &c.instances {
                out.push((format!("delta_e.instance_{}", i.id), i.delta_e));
            }
            out.push(("delta_e.mean".into(), c.mean));
            out.push(("delta_e.std".into(), c.std));
        }
        out
    }
}
