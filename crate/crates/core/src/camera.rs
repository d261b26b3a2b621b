//! Pinhole cameras, multi-camera rigs and their cyclic neighbor topology.
//!
//! World frame: ego vehicle at the origin, x forward, y left, z up, ground
//! plane z = 0. Camera frame: x right, y down, z along the optical axis.
//! Pixel coordinates are continuous with pixel `(u, v)` covering
//! `[u, u + 1) x [v, v + 1)`, so its center is `(u + 0.5, v + 0.5)`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::{Error, Result};

/// Depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self> {
        let all_finite = [fx, fy, cx, cy, skew].iter().all(|v| v.is_finite());
        if !all_finite || fx <= 0.0 || fy <= 0.0 {
            return Err(Error::Domain(format!(
                "intrinsics need finite values and positive focal lengths (fx={fx}, fy={fy})"
            )));
        }
        Ok(Self { fx, fy, cx, cy, skew })
    }

    /// Square pixels with the principal point at the image center, focal
    /// length chosen so the image spans `hfov_deg` horizontally.
    pub fn from_horizontal_fov(hfov_deg: f64, image_size: (usize, usize)) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::Domain(format!("horizontal fov {hfov_deg} outside (0, 180)")));
        }
        let (h, w) = (image_size.0 as f64, image_size.1 as f64);
        let f = 0.5 * w / libm::tan(0.5 * hfov_deg.to_radians());
        Self::new(f, f, 0.5 * w, 0.5 * h, 0.0)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed-form inverse of the upper-triangular calibration matrix.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let (fx, fy, s, cx, cy) = (self.fx, self.fy, self.skew, self.cx, self.cy);
        Matrix3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// World-to-camera rigid transform: `X_cam = rotation * X_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Frobenius norm of `R^T R - I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::Domain("extrinsics contain non-finite values".into()));
        }
        let ortho = orthonormality_error(&rotation);
        let det = rotation.determinant();
        if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::Domain(format!(
                "rotation is not a proper rotation (|R^T R - I| = {ortho:e}, det = {det})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera mounted at `position` (world meters), looking along heading
    /// `yaw_deg` (counter-clockwise from +x) and tilted down by `pitch_deg`.
    pub fn mounted(yaw_deg: f64, pitch_deg: f64, position: Vector3<f64>) -> Result<Self> {
        let (sy, cy) = libm::sincos(yaw_deg.to_radians());
        let (sp, cp) = libm::sincos(pitch_deg.to_radians());
        let right = Vector3::new(sy, -cy, 0.0);
        let level_forward = Vector3::new(cy, sy, 0.0);
        let level_down = Vector3::new(0.0, 0.0, -1.0);
        let forward = level_forward * cp + level_down * sp;
        let down = level_down * cp - level_forward * sp;
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * position);
        Self::new(rotation, translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, extrinsics: CameraExtrinsics) -> Self {
        Self { intrinsics, extrinsics }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.extrinsics.center()
    }

    pub fn to_camera_frame(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsics.rotation * world + self.extrinsics.translation
    }

    /// Projects a world point to `(pixel, depth)`.
    pub fn project_point(&self, world: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
        let xc = self.to_camera_frame(world);
        let depth = xc.z;
        if !(depth > MIN_DEPTH) {
            return Err(Error::BehindCamera { depth });
        }
        let q = self.intrinsics.matrix() * xc;
        Ok((Vector2::new(q.x / q.z, q.y / q.z), depth))
    }

    /// Camera-frame ray through `pixel`, scaled to unit depth.
    pub fn pixel_ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        self.intrinsics.inverse_matrix() * Vector3::new(pixel.x, pixel.y, 1.0)
    }

    /// World-frame direction of the ray through `pixel` (not normalized).
    pub fn pixel_ray_world(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        self.extrinsics.rotation.transpose() * self.pixel_ray(pixel)
    }

    /// Inverse of [`Camera::project_point`]: the world point seen at `pixel`
    /// with camera-frame depth `depth`.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let xc = self.pixel_ray(pixel) * depth;
        self.extrinsics.rotation.transpose() * (xc - self.extrinsics.translation)
    }

    /// Intersection of the pixel ray with the ground plane z = 0, if the ray
    /// points downward.
    pub fn ground_hit(&self, pixel: &Vector2<f64>) -> Option<Vector3<f64>> {
        let c = self.center();
        let d = self.pixel_ray_world(pixel);
        if !(d.z < 0.0) || !(c.z > 0.0) {
            return None;
        }
        let s = -c.z / d.z;
        Some(c + d * s)
    }
}

/// Rotation about the world vertical axis by `yaw_deg` (counter-clockwise
/// seen from above).
pub fn yaw_rotation(yaw_deg: f64) -> Matrix3<f64> {
    let (s, c) = libm::sincos(yaw_deg.to_radians());
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// An ordered ring of cameras sharing one image size.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<Camera>,
    image_size: (usize, usize),
}

impl CameraRig {
    /// `image_size` is `(height, width)` in pixels.
    pub fn new(cameras: Vec<Camera>, image_size: (usize, usize)) -> Result<Self> {
        if cameras.len() < 2 {
            return Err(Error::Config(format!("a rig needs at least 2 cameras, got {}", cameras.len())));
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(Error::Config(format!("empty image size {image_size:?}")));
        }
        Ok(Self { cameras, image_size })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    /// 1-based camera lookup.
    pub fn camera(&self, m: usize) -> Result<&Camera> {
        check_view(m, self.len())?;
        Ok(&self.cameras[m - 1])
    }

    pub fn left_of(&self, m: usize) -> Result<usize> {
        left_neighbor(m, self.len())
    }

    pub fn right_of(&self, m: usize) -> Result<usize> {
        right_neighbor(m, self.len())
    }
}

fn check_view(m: usize, count: usize) -> Result<()> {
    if m == 0 || m > count {
        return Err(Error::Domain(format!("view index {m} outside 1..={count}")));
    }
    Ok(())
}

/// Cyclic left neighbor, `((m + M - 2) mod M) + 1`.
pub fn left_neighbor(m: usize, count: usize) -> Result<usize> {
    check_view(m, count)?;
    Ok((m + count - 2) % count + 1)
}

/// Cyclic right neighbor, `(m mod M) + 1`.
pub fn right_neighbor(m: usize, count: usize) -> Result<usize> {
    check_view(m, count)?;
    Ok(m % count + 1)
}

/// Rotates the whole rig rigidly about the ego vertical axis. Camera centers
/// and headings turn by `yaw_deg`; intrinsics are untouched.
pub fn rotate_rig(rig: &CameraRig, yaw_deg: f64) -> CameraRig {
    let world_rot_inv = yaw_rotation(-yaw_deg);
    let cameras = rig
        .cameras
        .iter()
        .map(|cam| Camera {
            intrinsics: cam.intrinsics,
            extrinsics: CameraExtrinsics {
                rotation: cam.extrinsics.rotation * world_rot_inv,
                translation: cam.extrinsics.translation,
            },
        })
        .collect();
    CameraRig { cameras, image_size: rig.image_size }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn simple_camera() -> Camera {
        Camera::new(
            CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 0.0).unwrap(),
            CameraExtrinsics::identity(),
        )
    }

    #[test]
    fn neighbor_examples() {
        assert_eq!(left_neighbor(1, 6).unwrap(), 6);
        assert_eq!(left_neighbor(2, 6).unwrap(), 1);
        assert_eq!(left_neighbor(6, 6).unwrap(), 5);
        assert_eq!(right_neighbor(6, 6).unwrap(), 1);
        assert_eq!(right_neighbor(1, 6).unwrap(), 2);
        assert_eq!(right_neighbor(5, 6).unwrap(), 6);
        assert!(left_neighbor(0, 6).is_err());
        assert!(right_neighbor(7, 6).is_err());
    }

    #[test]
    fn neighbors_are_inverse() {
        for count in 2..10 {
            for m in 1..=count {
                assert_eq!(right_neighbor(left_neighbor(m, count).unwrap(), count).unwrap(), m);
                assert_eq!(left_neighbor(right_neighbor(m, count).unwrap(), count).unwrap(), m);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let cam = simple_camera();
        let (px, depth) = cam.project_point(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!((px.x, px.y, depth), (100.0, 50.0, 2.0));
        let (axis, _) = cam.project_point(&Vector3::new(0.0, 0.0, 17.5)).unwrap();
        assert_eq!((axis.x, axis.y), (50.0, 50.0));
        assert!(matches!(
            cam.project_point(&Vector3::new(3.0, 1.0, 0.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn invalid_intrinsics_and_rotation_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0, 0.0).is_err());
        let reflect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(CameraExtrinsics::new(reflect, Vector3::zeros()).is_err());
        let scaled = Matrix3::identity() * 1.001;
        assert!(CameraExtrinsics::new(scaled, Vector3::zeros()).is_err());
    }

    #[test]
    fn inverse_matrix_with_skew() {
        let k = CameraIntrinsics::new(310.0, 290.0, 120.5, 80.25, 1.75).unwrap();
        let err = (k.matrix() * k.inverse_matrix() - Matrix3::identity()).norm();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn mounted_camera_looks_along_heading() {
        let cam = Camera::new(
            CameraIntrinsics::new(200.0, 200.0, 100.0, 80.0, 0.0).unwrap(),
            CameraExtrinsics::mounted(90.0, 0.0, Vector3::new(0.0, 0.5, 1.5)).unwrap(),
        );
        // A point straight to the left of the ego at camera height is on axis.
        let (px, depth) = cam.project_point(&Vector3::new(0.0, 10.5, 1.5)).unwrap();
        assert!((px.x - 100.0).abs() < 1e-9 && (px.y - 80.0).abs() < 1e-9);
        assert!((depth - 10.0).abs() < 1e-12);
        assert!((cam.center() - Vector3::new(0.0, 0.5, 1.5)).norm() < 1e-12);
    }

    #[test]
    fn ground_hit_only_below_horizon() {
        let cam = Camera::new(
            CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 0.0).unwrap(),
            CameraExtrinsics::mounted(0.0, 0.0, Vector3::new(0.0, 0.0, 1.5)).unwrap(),
        );
        assert!(cam.ground_hit(&Vector2::new(50.0, 40.0)).is_none());
        assert!(cam.ground_hit(&Vector2::new(50.0, 50.0)).is_none());
        let hit = cam.ground_hit(&Vector2::new(50.0, 65.0)).unwrap();
        assert!((hit - Vector3::new(10.0, 0.0, 0.0)).norm() < 1e-12);
    }

    fn ring() -> CameraRig {
        let k = CameraIntrinsics::from_horizontal_fov(84.0, (256, 448)).unwrap();
        let cams = [0.0, -55.0, -110.0, 180.0, 110.0, 55.0]
            .iter()
            .map(|&yaw: &f64| {
                let (s, c) = yaw.to_radians().sin_cos();
                Camera::new(k, CameraExtrinsics::mounted(yaw, 0.0, Vector3::new(c, s, 1.5)).unwrap())
            })
            .collect();
        CameraRig::new(cams, (256, 448)).unwrap()
    }

    #[test]
    fn rig_requires_two_cameras() {
        assert!(CameraRig::new(vec![simple_camera()], (10, 10)).is_err());
        let rig = ring();
        assert!(rig.camera(0).is_err() && rig.camera(7).is_err());
        assert_eq!(rig.left_of(1).unwrap(), 6);
    }

    #[test]
    fn rotate_rig_identity_and_composition() {
        let rig = ring();
        let same = rotate_rig(&rig, 0.0);
        for (a, b) in rig.cameras().iter().zip(same.cameras()) {
            assert!((a.extrinsics.rotation - b.extrinsics.rotation).norm() < 1e-12);
            assert!((a.extrinsics.translation - b.extrinsics.translation).norm() < 1e-12);
        }
        let twice = rotate_rig(&rotate_rig(&rig, 15.0), 10.0);
        let once = rotate_rig(&rig, 25.0);
        for (a, b) in twice.cameras().iter().zip(once.cameras()) {
            assert!((a.extrinsics.rotation - b.extrinsics.rotation).norm() < 1e-9);
            assert!((a.center() - b.center()).norm() < 1e-9);
            assert_eq!(a.intrinsics, b.intrinsics);
        }
    }

    #[test]
    fn rotate_rig_moves_ground_point() {
        let rig = ring();
        let point = Vector3::new(8.0, -1.0, 0.0);
        let before = rig.camera(1).unwrap().project_point(&point).unwrap().0;
        let after = rotate_rig(&rig, 25.0).camera(1).unwrap().project_point(&point).unwrap().0;
        assert!((before.x - after.x).abs() > 1.0);
    }

    #[test]
    fn rotations_stay_orthonormal() {
        let mut rig = ring();
        for i in 0..500 {
            rig = rotate_rig(&rig, 0.37 * i as f64 - 40.0);
        }
        for cam in rig.cameras() {
            assert!(orthonormality_error(&cam.extrinsics.rotation) < 1e-9);
        }
    }

    #[test]
    fn project_unproject_round_trip() {
        let rig = ring();
        let pts = [
            Vector3::new(12.0, 3.0, 0.4),
            Vector3::new(-7.0, -9.0, 2.0),
            Vector3::new(0.5, 20.0, -0.3),
            Vector3::new(30.0, -30.0, 5.0),
        ];
        for cam in rig.cameras() {
            for p in &pts {
                if let Ok((px, depth)) = cam.project_point(p) {
                    let back = cam.unproject(&px, depth);
                    assert!((back - p).norm() < 1e-9);
                }
            }
        }
    }
}
