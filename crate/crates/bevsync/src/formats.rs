//! On-disk formats for everything the CLI reads or writes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bevsync_core::camera::{Camera, CameraExtrinsics, CameraIntrinsics, CameraRig};
use bevsync_core::homography::Homography;
use bevsync_core::projection::{class, BevGrid};
use bevsync_core::scene::{SceneSpec, VehicleSpec, PALETTE};
use bevsync_core::tensor::RgbImage;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn parse_floats(path: &Path, line_no: usize, fields: &[&str]) -> CliResult<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::format(path, format!("line {line_no}: bad number {f:?}")))
        })
        .collect()
}

/// Significant lines with their 1-based numbers; `#` starts a comment.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

// Rig files:
//   image <height> <width>
//   camera fx fy cx cy skew r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz
// one camera line per view, in view order.

pub fn format_rig(rig: &CameraRig) -> String {
    let (h, w) = rig.image_size();
    let mut out = format!("# camera rig: intrinsics, world-to-camera rotation (row-major), translation\nimage {h} {w}\n");
    for cam in rig.cameras() {
        let k = &cam.intrinsics;
        let (r, t) = (&cam.extrinsics.rotation, &cam.extrinsics.translation);
        let mut line = format!("camera {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.skew);
        for i in 0..3 {
            for j in 0..3 {
                write!(line, " {}", r[(i, j)]).unwrap();
            }
        }
        write!(line, " {} {} {}", t.x, t.y, t.z).unwrap();
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn parse_rig(path: &Path, text: &str) -> CliResult<CameraRig> {
    let mut size = None;
    let mut cameras = Vec::new();
    for (n, line) in content_lines(text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "image" if fields.len() == 3 => {
                let parse = |s: &str| s.parse::<usize>().map_err(|_| CliError::format(path, format!("line {n}: bad size")));
                size = Some((parse(fields[1])?, parse(fields[2])?));
            }
            "camera" if fields.len() == 18 => {
                let v = parse_floats(path, n, &fields[1..])?;
                let k = CameraIntrinsics::new(v[0], v[1], v[2], v[3], v[4])?;
                let r = Matrix3::from_row_slice(&v[5..14]);
                let e = CameraExtrinsics::new(r, Vector3::new(v[14], v[15], v[16]))?;
                cameras.push(Camera::new(k, e));
            }
            other => return Err(CliError::format(path, format!("line {n}: unexpected {other:?} record"))),
        }
    }
    let size = size.ok_or_else(|| CliError::format(path, "missing image size"))?;
    Ok(CameraRig::new(cameras, size)?)
}

pub fn read_rig(path: &Path) -> CliResult<CameraRig> {
    parse_rig(path, &read_text(path)?)
}

/// Nine row-major entries with 9 decimals on one line.
pub fn format_homography(h: &Homography) -> String {
    let m = h.matrix();
    let entries: Vec<String> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| format!("{:.9}", m[(i, j)])).collect();
    entries.join(" ") + "\n"
}

pub fn parse_homography(path: &Path, text: &str) -> CliResult<Homography> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 9 {
        return Err(CliError::format(path, format!("expected 9 entries, got {}", fields.len())));
    }
    let v = parse_floats(path, 1, &fields)?;
    Ok(Homography::from_matrix(Matrix3::from_row_slice(&v))?)
}

/// Binary PGM (P5). Labels are written as raw byte values.
pub fn write_pgm(path: &Path, height: usize, width: usize, values: &[u8]) -> CliResult<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(values);
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_pgm(path: &Path) -> CliResult<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let bad = || CliError::format(path, "not a binary 8-bit PGM");
    // Header: magic, width, height, maxval, each followed by whitespace.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let width: usize = fields[1].parse().map_err(|_| bad())?;
    let height: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos..pos + width * height).ok_or_else(bad)?.to_vec();
    Ok((height, width, data))
}

/// Label map as PGM plus a `.meta` sidecar naming the view and classes.
pub fn write_label_map(path: &Path, view: Option<usize>, height: usize, width: usize, labels: &[u8]) -> CliResult<()> {
    write_pgm(path, height, width, labels)?;
    let mut meta = String::new();
    if let Some(v) = view {
        writeln!(meta, "view={v}").unwrap();
    }
    writeln!(meta, "height={height}\nwidth={width}\nclasses={}", class::COUNT).unwrap();
    for (k, name) in ["void", "drivable", "vehicle", "building", "vegetation"].iter().enumerate() {
        writeln!(meta, "class_{k}={name}").unwrap();
    }
    write_text(&path.with_extension("meta"), &meta)
}

pub fn to_rgb8(img: &RgbImage) -> image::RgbImage {
    let bytes = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes).expect("buffer matches size")
}

pub fn from_rgb8(img: &image::RgbImage) -> RgbImage {
    RgbImage {
        height: img.height() as usize,
        width: img.width() as usize,
        data: img.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
    }
}

pub fn write_png(path: &Path, img: &RgbImage) -> CliResult<()> {
    to_rgb8(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::format(path, e.to_string()))
}

pub fn read_png(path: &Path) -> CliResult<RgbImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::io(path, io),
        other => CliError::format(path, other.to_string()),
    })?;
    Ok(from_rgb8(&img.to_rgb8()))
}

/// Palette-colored preview of a label map.
pub fn label_preview(height: usize, width: usize, labels: &[u8]) -> RgbImage {
    let mut img = RgbImage::filled(height, width, [0.0; 3]);
    for (p, &l) in labels.iter().enumerate() {
        img.set_pixel(p / width, p % width, PALETTE[(l as usize).min(class::COUNT - 1)]);
    }
    img
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleFile {
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
    pub color: [f64; 3],
}

/// Declarative scene description. Omitted fields take the built-in
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub seed: Option<u64>,
    pub lane_width: Option<f64>,
    pub curvature: Option<f64>,
    pub meters_per_cell: Option<f64>,
    pub grid_cells: Option<usize>,
    pub background: Option<Vec<u8>>,
    pub vehicles: Option<Vec<VehicleFile>>,
}

impl SceneFile {
    pub fn from_spec(spec: &SceneSpec) -> Self {
        Self {
            seed: Some(spec.seed),
            lane_width: Some(spec.lane_width),
            curvature: Some(spec.curvature),
            meters_per_cell: Some(spec.grid.meters_per_cell),
            grid_cells: Some(spec.grid.rows),
            background: Some(spec.background.clone()),
            vehicles: Some(
                spec.vehicles
                    .iter()
                    .map(|v| VehicleFile { x: v.center.0, y: v.center.1, length: v.length, width: v.width, color: v.color })
                    .collect(),
            ),
        }
    }

    /// `fallback_seed` applies when the file names no seed.
    pub fn to_spec(&self, fallback_seed: u64) -> SceneSpec {
        let d = SceneSpec::default();
        let cells = self.grid_cells.unwrap_or(d.grid.rows);
        SceneSpec {
            seed: self.seed.unwrap_or(fallback_seed),
            grid: BevGrid {
                rows: cells,
                cols: cells,
                meters_per_cell: self.meters_per_cell.unwrap_or(d.grid.meters_per_cell),
                class_count: class::COUNT,
            },
            lane_width: self.lane_width.unwrap_or(d.lane_width),
            curvature: self.curvature.unwrap_or(d.curvature),
            vehicles: match &self.vehicles {
                Some(vs) => vs
                    .iter()
                    .map(|v| VehicleSpec { center: (v.x, v.y), length: v.length, width: v.width, color: v.color })
                    .collect(),
                None => d.vehicles,
            },
            background: self.background.clone().unwrap_or(d.background),
        }
    }
}

pub fn parse_scene(path: &Path, text: &str, fallback_seed: u64) -> CliResult<SceneSpec> {
    let file: SceneFile = toml::from_str(text).map_err(|e| CliError::format(path, e.to_string()))?;
    let spec = file.to_spec(fallback_seed);
    spec.validate()?;
    Ok(spec)
}

pub fn read_scene(path: &Path, fallback_seed: u64) -> CliResult<SceneSpec> {
    parse_scene(path, &read_text(path)?, fallback_seed)
}

pub fn format_scene(spec: &SceneSpec) -> String {
    toml::to_string(&SceneFile::from_spec(spec)).expect("scene serializes")
}

/// Named flat tensor: `tensor <name> <dims...>` then the values, one per
/// line, in shortest round-trip decimal form.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// `header` lines are written first as `key value...` records.
pub fn format_tensors(header: &[(String, String)], tensors: &[NamedTensor]) -> String {
    let mut out = String::new();
    for (k, v) in header {
        writeln!(out, "{k} {v}").unwrap();
    }
    for t in tensors {
        let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        writeln!(out, "tensor {} {}", t.name, dims.join(" ")).unwrap();
        for v in &t.values {
            writeln!(out, "{v:?}").unwrap();
        }
    }
    out
}

pub fn parse_tensors(path: &Path, text: &str) -> CliResult<(Vec<(String, String)>, Vec<NamedTensor>)> {
    let mut header = Vec::new();
    let mut tensors: Vec<NamedTensor> = Vec::new();
    for (n, line) in content_lines(text) {
        let mut fields = line.split_whitespace();
        let first = fields.next().unwrap_or("");
        if first == "tensor" {
            let name = fields.next().ok_or_else(|| CliError::format(path, format!("line {n}: unnamed tensor")))?;
            let shape = fields
                .map(|d| d.parse::<usize>().map_err(|_| CliError::format(path, format!("line {n}: bad dimension {d:?}"))))
                .collect::<CliResult<Vec<_>>>()?;
            tensors.push(NamedTensor { name: name.to_string(), shape, values: Vec::new() });
        } else if let Some(t) = tensors.last_mut() {
            t.values.extend(parse_floats(path, n, &[first])?);
        } else {
            header.push((first.to_string(), fields.collect::<Vec<_>>().join(" ")));
        }
    }
    for t in &tensors {
        if t.values.len() != t.shape.iter().product::<usize>() {
            return Err(CliError::format(path, format!("tensor {} has {} values for shape {:?}", t.name, t.values.len(), t.shape)));
        }
    }
    Ok((header, tensors))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `key=value` lines.
pub fn format_key_values(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_key_values(path: &Path, text: &str) -> CliResult<Vec<(String, String)>> {
    content_lines(text)
        .map(|(n, line)| {
            line.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::format(path, format!("line {n}: expected key=value")))
        })
        .collect()
}

/// Metric values with 6 decimals; undefined values print as `nan`.
pub fn format_metric(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.6}"),
        None => "nan".to_string(),
    }
}

/// Flat JSON object; undefined values become `null`.
pub fn metrics_json(entries: &[(String, Option<f64>)]) -> String {
    let mut map = serde_json::Map::new();
    for (k, v) in entries {
        let value = v.and_then(serde_json::Number::from_f64).map_or(serde_json::Value::Null, serde_json::Value::Number);
        map.insert(k.clone(), value);
    }
    serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("json serializes") + "\n"
}
