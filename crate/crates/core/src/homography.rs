//! Projective maps between image planes.
//!
//! A [`Homography`] is stored normalized: bottom-right entry 1 when it is
//! not vanishingly small, otherwise unit Frobenius norm with a positive
//! first nonzero entry. Two homographies describing the same map therefore
//! compare equal entry-wise.

use alloc::format;

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use crate::camera::Camera;
use crate::{Error, Result};

const H33_EPS: f64 = 1e-9;
const DET_EPS: f64 = 1e-12;
const W_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

fn normalize(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    let h33 = m[(2, 2)];
    if h33.abs() > H33_EPS {
        return Some(m / h33);
    }
    let norm = m.norm();
    if norm == 0.0 {
        return None;
    }
    // Row-major scan for the first nonzero entry.
    let first = (0..9).map(|i| m[(i / 3, i % 3)]).find(|v| *v != 0.0)?;
    Some(m / (norm * first.signum()))
}

impl Homography {
    /// Normalizes `m` and rejects rank-deficient or non-finite matrices.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let m = normalize(&m).ok_or(Error::Singular)?;
        if !(m.determinant().abs() > DET_EPS) {
            return Err(Error::Singular);
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// `H * [x, y, 1]^T` without the perspective division.
    pub fn apply_homogeneous(&self, p: &Vector2<f64>) -> Vector3<f64> {
        self.m * Vector3::new(p.x, p.y, 1.0)
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Result<Vector2<f64>> {
        let q = self.apply_homogeneous(p);
        if !(q.z.abs() >= W_EPS) {
            return Err(Error::PointAtInfinity);
        }
        Ok(Vector2::new(q.x / q.z, q.y / q.z))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.m.try_inverse().ok_or(Error::Singular)?;
        Self::from_matrix(inv)
    }

    /// The map `p -> next(self(p))`.
    pub fn then(&self, next: &Homography) -> Result<Self> {
        Self::from_matrix(next.m * self.m)
    }

    /// Conjugates by an isotropic scale: if `self` maps `p` to `q`, the
    /// result maps `p * scale` to `q * scale`.
    pub fn rescaled(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Domain(format!("scale {scale} must be positive")));
        }
        let s = Matrix3::new(scale, 0.0, 0.0, 0.0, scale, 0.0, 0.0, 0.0, 1.0);
        let s_inv = Matrix3::new(1.0 / scale, 0.0, 0.0, 0.0, 1.0 / scale, 0.0, 0.0, 0.0, 1.0);
        Self::from_matrix(s * self.m * s_inv)
    }
}

/// Rotation and translation taking source-camera coordinates to
/// destination-camera coordinates.
pub fn relative_pose(src: &Camera, dst: &Camera) -> (Matrix3<f64>, Vector3<f64>) {
    let r_rel = dst.extrinsics.rotation * src.extrinsics.rotation.transpose();
    let t_rel = dst.extrinsics.translation - r_rel * src.extrinsics.translation;
    (r_rel, t_rel)
}

/// Unnormalized Euclidean homography `K_dst (R + t n^T / d) K_src^-1` for
/// the plane `n . X = d` expressed in the source camera frame. Keeps the
/// sign of the homogeneous coordinate, which encodes cheirality.
pub fn plane_induced_matrix(
    src: &Camera,
    dst: &Camera,
    normal: &Vector3<f64>,
    distance: f64,
) -> Result<Matrix3<f64>> {
    if !((normal.norm() - 1.0).abs() < 1e-9) {
        return Err(Error::Domain(format!("plane normal has norm {}", normal.norm())));
    }
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::Geometry(format!(
            "camera center must lie strictly off the plane (distance {distance})"
        )));
    }
    let (r_rel, t_rel) = relative_pose(src, dst);
    let euclidean = r_rel + t_rel * normal.transpose() / distance;
    Ok(dst.intrinsics.matrix() * euclidean * src.intrinsics.inverse_matrix())
}

/// Homography induced by the plane `n . X = d` (source camera frame).
/// Exact for every point on that plane.
pub fn plane_induced_homography(
    src: &Camera,
    dst: &Camera,
    normal: &Vector3<f64>,
    distance: f64,
) -> Result<Homography> {
    Homography::from_matrix(plane_induced_matrix(src, dst, normal, distance)?)
}

/// The world ground plane z = 0 in `cam`'s frame as `(n, d)` with `n . X = d`
/// and `d` the camera height.
pub fn ground_plane_in_camera(cam: &Camera) -> Result<(Vector3<f64>, f64)> {
    let height = cam.center().z;
    if !(height > 0.0) {
        return Err(Error::Geometry(format!("camera height {height} is not above the ground")));
    }
    let down = cam.extrinsics.rotation * Vector3::new(0.0, 0.0, -1.0);
    Ok((down, height))
}

pub fn ground_plane_homography(src: &Camera, dst: &Camera) -> Result<Homography> {
    let (n, d) = ground_plane_in_camera(src)?;
    plane_induced_homography(src, dst, &n, d)
}

/// Rotation-only homography `K_dst R_rel K_src^-1`, exact for points at
/// infinity.
pub fn infinite_homography(src: &Camera, dst: &Camera) -> Homography {
    let (r_rel, _) = relative_pose(src, dst);
    let m = dst.intrinsics.matrix() * r_rel * src.intrinsics.inverse_matrix();
    // Product of invertible factors.
    Homography::from_matrix(m).expect("rotation homography is invertible")
}

/// Similarity transform moving the centroid to the origin with mean
/// distance sqrt(2).
fn hartley_normalizer(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let centroid = points.clone().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.map(|p| (p - centroid).norm()).sum::<f64>() / n;
    if !(mean_dist > 1e-300) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = core::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0))
}

/// Normalized direct linear transform. `pairs` holds `(source, target)`
/// pixel pairs; the result maps sources to targets.
pub fn estimate_homography_dlt(pairs: &[(Vector2<f64>, Vector2<f64>)]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::Arity { needed: 4, got: pairs.len() });
    }
    if !pairs.iter().all(|(a, b)| a.iter().chain(b.iter()).all(|v| v.is_finite())) {
        return Err(Error::Domain("non-finite correspondence".into()));
    }
    let t_src = hartley_normalizer(pairs.iter().map(|(a, _)| *a))?;
    let t_dst = hartley_normalizer(pairs.iter().map(|(_, b)| *b))?;

    // Zero rows pad the system to at least 9 rows so the SVD exposes the
    // full right singular basis.
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, (src, dst)) in pairs.iter().enumerate() {
        let p = t_src * Vector3::new(src.x, src.y, 1.0);
        let q = t_dst * Vector3::new(dst.x, dst.y, 1.0);
        let (x, y) = (p.x / p.z, p.y / p.z);
        let (u, v) = (q.x / q.z, q.y / q.z);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * k, j)] = r0[j];
            a[(2 * k + 1, j)] = r1[j];
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::Numeric("svd did not converge".into()))?;
    let sv = &svd.singular_values;
    let mut order: [usize; 9] = [0, 1, 2, 3, 4, 5, 6, 7, 8];
    order.sort_by(|&i, &j| sv[i].partial_cmp(&sv[j]).unwrap_or(core::cmp::Ordering::Equal));
    let largest = sv[order[8]];
    if !(sv[order[1]] > 1e-10 * largest) {
        return Err(Error::Degenerate(format!(
            "rank-deficient system (second smallest singular value {:e})",
            sv[order[1]]
        )));
    }
    let h = v_t.row(order[0]);
    let h_norm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().ok_or(Error::Singular)?;
    Homography::from_matrix(t_dst_inv * h_norm * t_src)
}
