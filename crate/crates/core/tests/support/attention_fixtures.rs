// Fixtures shared by the attention tests and the acceptance suite.
#![allow(dead_code)]

use bevsync_core::attention::{mv_attention, mv_attention_backward, mv_attention_traced, AttentionParams};
use bevsync_core::correspondence::{map_from_homography, CorrespondenceMap, RigMaps};
use bevsync_core::homography::Homography;
use bevsync_core::rng::{stream, CounterRng};
use bevsync_core::tensor::Tensor3;
use nalgebra::Matrix3;

use super::oracle::ScalarParams;

pub fn affine(src: usize, dst: usize, h: usize, w: usize, m: Matrix3<f64>) -> CorrespondenceMap {
    map_from_homography(src, dst, h, w, Homography::from_matrix(m).unwrap()).unwrap()
}

/// Two views on a 2x2 grid; some cells fall off the neighbor grid.
pub fn tiny_maps() -> RigMaps {
    let fwd = Matrix3::new(1.0, 0.1, 0.6, 0.0, 0.9, -0.3, 0.0, 0.05, 1.0);
    let bwd = fwd.try_inverse().unwrap();
    let right = vec![affine(1, 2, 2, 2, fwd), affine(2, 1, 2, 2, bwd)];
    RigMaps::from_parts(right.clone(), right).unwrap()
}

pub fn features(views: usize, h: usize, w: usize, c: usize, seed: u64, scale: f64) -> Vec<Tensor3> {
    let rng = CounterRng::new(seed, stream::TEST);
    (0..views)
        .map(|v| Tensor3::from_fn(h, w, c, |i, j, k| scale * rng.normal([v as u64, (i * w + j) as u64, k as u64])))
        .collect()
}

pub fn integer_params(c: usize) -> AttentionParams {
    let entry = |which: i64, i: usize| -> f64 { (((i as i64) * 7 + which * 3) % 5 - 2) as f64 };
    AttentionParams::new(
        c,
        (0..c * c).map(|i| entry(1, i)).collect(),
        (0..c * c).map(|i| entry(2, i)).collect(),
        (0..c * c).map(|i| entry(3, i)).collect(),
    )
    .unwrap()
}

pub fn max_diff(ours: &[Tensor3], theirs: &[Vec<f64>]) -> f64 {
    ours.iter()
        .zip(theirs)
        .flat_map(|(a, b)| a.data().iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

pub fn scalar(p: &AttentionParams) -> ScalarParams<'_> {
    ScalarParams { c: p.channels, q: &p.query, k: &p.key, v: &p.value, encode: p.encode_displacement }
}

/// Loss `sum(weights . attention)` and the worst relative error between
/// central differences and backprop for Q, K, V and the features.
pub fn gradient_check(maps: &RigMaps, feats: &[Tensor3], params: &AttentionParams, window: usize) -> f64 {
    let (h, w, c) = feats[0].shape();
    let wrng = CounterRng::new(99, stream::TEST);
    let weights: Vec<Tensor3> = (0..feats.len())
        .map(|v| Tensor3::from_fn(h, w, c, |i, j, k| wrng.normal([v as u64, (i * w + j) as u64, k as u64])))
        .collect();
    let loss = |f: &[Tensor3], p: &AttentionParams| -> f64 {
        mv_attention(f, p, maps, window)
            .unwrap()
            .iter()
            .zip(&weights)
            .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    };
    let trace = mv_attention_traced(feats, params, maps, window).unwrap();
    let grads = mv_attention_backward(feats, params, &trace, &weights);
    let eps = 1e-6;
    let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
    let mut worst: f64 = 0.0;
    for which in 0..3 {
        for idx in 0..c * c {
            let mut plus = params.clone();
            let mut minus = params.clone();
            let (p, m, an) = match which {
                0 => (&mut plus.query, &mut minus.query, grads.query[idx]),
                1 => (&mut plus.key, &mut minus.key, grads.key[idx]),
                _ => (&mut plus.value, &mut minus.value, grads.value[idx]),
            };
            p[idx] += eps;
            m[idx] -= eps;
            let fd = (loss(feats, &plus) - loss(feats, &minus)) / (2.0 * eps);
            worst = worst.max(rel(fd, an));
        }
    }
    for v in 0..feats.len() {
        for idx in 0..h * w * c {
            let mut plus = feats.to_vec();
            let mut minus = feats.to_vec();
            plus[v].data_mut()[idx] += eps;
            minus[v].data_mut()[idx] -= eps;
            let fd = (loss(&plus, params) - loss(&minus, params)) / (2.0 * eps);
            worst = worst.max(rel(fd, grads.features[v].data()[idx]));
        }
    }
    worst
}
