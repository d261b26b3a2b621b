//! Multi-view attention over homography-corresponding windows.
//!
//! For a query cell `p` of view `m`, candidates are the `K x K` cells around
//! the correspondence of `p` in each distinct neighbor view. A candidate's
//! feature is shifted by a sinusoidal encoding of the displacement between
//! `p` and the candidate mapped back into view `m`; keys and values are both
//! taken from the shifted feature. Scores are plain dot products (no
//! `1/sqrt(c)` scaling) and one softmax runs jointly over all candidates of
//! both neighbors. Cells without any candidate output zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::Vector2;

use crate::correspondence::{cell_center, neighborhood, RigMaps};
use crate::rng::CounterRng;
use crate::tensor::Tensor3;
use crate::{Error, Result};

pub type FeatureMap = Tensor3;

/// Query, key and value projections, each `c x c` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub channels: usize,
    pub query: Vec<f64>,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    /// Adds the displacement encoding to neighbor features when set.
    pub encode_displacement: bool,
}

impl AttentionParams {
    pub fn new(channels: usize, query: Vec<f64>, key: Vec<f64>, value: Vec<f64>) -> Result<Self> {
        let n = channels * channels;
        if channels == 0 || query.len() != n || key.len() != n || value.len() != n {
            return Err(Error::Config(format!("attention projections must be {channels}x{channels}")));
        }
        if !query.iter().chain(&key).chain(&value).all(|v| v.is_finite()) {
            return Err(Error::Config("attention projections must be finite".into()));
        }
        Ok(Self { channels, query, key, value, encode_displacement: true })
    }

    /// Gaussian entries with standard deviation `scale`.
    pub fn random(channels: usize, scale: f64, rng: &CounterRng) -> Self {
        let n = channels * channels;
        let draw = |which: u64| (0..n as u64).map(|i| scale * rng.normal([which, i, 0])).collect();
        Self { channels, query: draw(0), key: draw(1), value: draw(2), encode_displacement: true }
    }

    pub fn zeros(channels: usize) -> Self {
        let n = channels * channels;
        Self { channels, query: vec![0.0; n], key: vec![0.0; n], value: vec![0.0; n], encode_displacement: true }
    }
}

#[inline]
fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let c = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i * c..(i + 1) * c].iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

#[inline]
fn matvec_t_acc(m: &[f64], x: &[f64], out: &mut [f64]) {
    let c = x.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            for (o, a) in out.iter_mut().zip(&m[i * c..(i + 1) * c]) {
                *o += a * xi;
            }
        }
    }
}

#[inline]
fn outer_acc(grad: &mut [f64], left: &[f64], right: &[f64]) {
    let c = right.len();
    for (i, &l) in left.iter().enumerate() {
        if l != 0.0 {
            for (g, r) in grad[i * c..(i + 1) * c].iter_mut().zip(right) {
                *g += l * r;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Interleaved `[sin dx, cos dx, sin dy, cos dy]` at `channels / 4`
/// frequencies whose wavelengths grow geometrically from 1 to `2 * extent`.
pub fn displacement_encoding(delta: Vector2<f64>, channels: usize, extent: usize) -> Result<Vec<f64>> {
    if channels == 0 || channels % 4 != 0 {
        return Err(Error::Config(format!("encoding needs a positive multiple of 4 channels, got {channels}")));
    }
    let mut out = vec![0.0; channels];
    encode_into(delta, extent, &mut out);
    Ok(out)
}

fn wavelength(k: usize, bands: usize, extent: usize) -> f64 {
    if bands == 1 {
        1.0
    } else {
        libm::pow(2.0 * extent.max(1) as f64, k as f64 / (bands - 1) as f64)
    }
}

fn encode_into(delta: Vector2<f64>, extent: usize, out: &mut [f64]) {
    let bands = out.len() / 4;
    for k in 0..bands {
        let omega = 2.0 * PI / wavelength(k, bands, extent);
        let (sx, cx) = libm::sincos(omega * delta.x);
        let (sy, cy) = libm::sincos(omega * delta.y);
        out[4 * k..4 * k + 4].copy_from_slice(&[sx, cx, sy, cy]);
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| libm::exp(s - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// 1-based neighbor view.
    pub view: usize,
    pub cell: (usize, usize),
    /// Candidate mapped back into the query view, minus the query position.
    pub displacement: Vector2<f64>,
}

/// Candidates and softmax weights of one query cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryTrace {
    pub candidates: Vec<Candidate>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub outputs: Vec<FeatureMap>,
    /// Per view, per cell (row-major).
    pub traces: Vec<Vec<QueryTrace>>,
}

fn check_shapes(features: &[FeatureMap], params: &AttentionParams, maps: &RigMaps, window: usize) -> Result<()> {
    let Some(first) = features.first() else {
        return Err(Error::Config("no feature maps".into()));
    };
    let (h, w, c) = first.shape();
    if features.iter().any(|f| f.shape() != (h, w, c)) {
        return Err(Error::Config("feature maps differ in shape".into()));
    }
    if c != params.channels {
        return Err(Error::Config(format!("features have {c} channels, attention expects {}", params.channels)));
    }
    if params.encode_displacement && c % 4 != 0 {
        return Err(Error::Config(format!("displacement encoding needs channels divisible by 4, got {c}")));
    }
    if maps.view_count() != features.len() || maps.shape() != (h, w) {
        return Err(Error::Config("correspondence maps do not match the feature maps".into()));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!("window size {window} must be odd and positive")));
    }
    Ok(())
}

/// Candidate set of query cell `(i, j)` in view `m` (1-based).
pub fn gather_candidates(maps: &RigMaps, m: usize, (i, j): (usize, usize), window: usize) -> Vec<Candidate> {
    let p = cell_center(i, j);
    let mut out = Vec::new();
    for map in maps.neighbors_of(m) {
        let Ok(cells) = neighborhood(map, (i, j), window) else { continue };
        for cell in cells {
            let Ok(back) = map.backward().apply(&cell_center(cell.0, cell.1)) else { continue };
            out.push(Candidate { view: map.target(), cell, displacement: back - p });
        }
    }
    out
}

/// Candidate features: neighbor feature plus the displacement encoding.
fn shifted_feature(features: &[FeatureMap], params: &AttentionParams, cand: &Candidate, extent: usize, out: &mut [f64]) {
    out.copy_from_slice(features[cand.view - 1].cell(cand.cell.0, cand.cell.1));
    if params.encode_displacement {
        let mut enc = vec![0.0; out.len()];
        encode_into(cand.displacement, extent, &mut enc);
        for (o, e) in out.iter_mut().zip(enc) {
            *o += e;
        }
    }
}

pub fn mv_attention_traced(
    features: &[FeatureMap],
    params: &AttentionParams,
    maps: &RigMaps,
    window: usize,
) -> Result<AttentionOutput> {
    check_shapes(features, params, maps, window)?;
    let (h, w, c) = features[0].shape();
    let extent = h.max(w);
    let mut outputs = Vec::with_capacity(features.len());
    let mut traces = Vec::with_capacity(features.len());
    let (mut q, mut g, mut k, mut v) = (vec![0.0; c], vec![0.0; c], vec![0.0; c], vec![0.0; c]);
    for m in 1..=features.len() {
        let mut out = Tensor3::zeros(h, w, c);
        let mut view_traces = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let candidates = gather_candidates(maps, m, (i, j), window);
                if candidates.is_empty() {
                    view_traces.push(QueryTrace::default());
                    continue;
                }
                matvec(&params.query, features[m - 1].cell(i, j), &mut q);
                let mut scores = Vec::with_capacity(candidates.len());
                let mut values = Vec::with_capacity(candidates.len() * c);
                for cand in &candidates {
                    shifted_feature(features, params, cand, extent, &mut g);
                    matvec(&params.key, &g, &mut k);
                    matvec(&params.value, &g, &mut v);
                    scores.push(dot(&q, &k));
                    values.extend_from_slice(&v);
                }
                let weights = softmax(&scores);
                let cell = out.cell_mut(i, j);
                for (wt, val) in weights.iter().zip(values.chunks_exact(c)) {
                    for (o, x) in cell.iter_mut().zip(val) {
                        *o += wt * x;
                    }
                }
                view_traces.push(QueryTrace { candidates, weights });
            }
        }
        outputs.push(out);
        traces.push(view_traces);
    }
    Ok(AttentionOutput { outputs, traces })
}

pub fn mv_attention(
    features: &[FeatureMap],
    params: &AttentionParams,
    maps: &RigMaps,
    window: usize,
) -> Result<Vec<FeatureMap>> {
    Ok(mv_attention_traced(features, params, maps, window)?.outputs)
}

/// `F_m + attention(F)_m` for every view.
pub fn attend_residual(
    features: &[FeatureMap],
    params: &AttentionParams,
    maps: &RigMaps,
    window: usize,
) -> Result<Vec<FeatureMap>> {
    let mut out = mv_attention(features, params, maps, window)?;
    for (o, f) in out.iter_mut().zip(features) {
        for (a, b) in o.data_mut().iter_mut().zip(f.data()) {
            *a += b;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub query: Vec<f64>,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub features: Vec<FeatureMap>,
}

/// Reverse-mode gradients of `sum(d_out . attention(features))` given the
/// trace of the forward pass.
pub fn mv_attention_backward(
    features: &[FeatureMap],
    params: &AttentionParams,
    trace: &AttentionOutput,
    d_out: &[FeatureMap],
) -> AttentionGrads {
    let (h, w, c) = features[0].shape();
    let extent = h.max(w);
    let mut grads = AttentionGrads {
        query: vec![0.0; c * c],
        key: vec![0.0; c * c],
        value: vec![0.0; c * c],
        features: features.iter().map(|f| Tensor3::zeros(f.height(), f.width(), f.channels())).collect(),
    };
    let (mut q, mut g, mut k, mut v, mut dq, mut dg) =
        (vec![0.0; c], vec![0.0; c], vec![0.0; c], vec![0.0; c], vec![0.0; c], vec![0.0; c]);
    for (m, view_traces) in trace.traces.iter().enumerate() {
        for (s, qt) in view_traces.iter().enumerate() {
            if qt.candidates.is_empty() {
                continue;
            }
            let (i, j) = (s / w, s % w);
            let da = d_out[m].cell(i, j);
            let fq = features[m].cell(i, j);
            matvec(&params.query, fq, &mut q);
            // Recompute per-candidate keys/values and d(loss)/d(weight).
            let mut shifted = Vec::with_capacity(qt.candidates.len() * c);
            let mut keys = Vec::with_capacity(qt.candidates.len() * c);
            let mut dweights = Vec::with_capacity(qt.candidates.len());
            for cand in &qt.candidates {
                shifted_feature(features, params, cand, extent, &mut g);
                matvec(&params.key, &g, &mut k);
                matvec(&params.value, &g, &mut v);
                dweights.push(dot(da, &v));
                shifted.extend_from_slice(&g);
                keys.extend_from_slice(&k);
            }
            let mean_dw: f64 = qt.weights.iter().zip(&dweights).map(|(a, b)| a * b).sum();
            dq.iter_mut().for_each(|x| *x = 0.0);
            for (n, cand) in qt.candidates.iter().enumerate() {
                let wt = qt.weights[n];
                let ds = wt * (dweights[n] - mean_dw);
                let gn = &shifted[n * c..(n + 1) * c];
                let kn = &keys[n * c..(n + 1) * c];
                // value path
                let dv: Vec<f64> = da.iter().map(|x| wt * x).collect();
                outer_acc(&mut grads.value, &dv, gn);
                dg.iter_mut().for_each(|x| *x = 0.0);
                matvec_t_acc(&params.value, &dv, &mut dg);
                // score path
                for (a, b) in dq.iter_mut().zip(kn) {
                    *a += ds * b;
                }
                let dk: Vec<f64> = q.iter().map(|x| ds * x).collect();
                outer_acc(&mut grads.key, &dk, gn);
                matvec_t_acc(&params.key, &dk, &mut dg);
                for (a, b) in grads.features[cand.view - 1].cell_mut(cand.cell.0, cand.cell.1).iter_mut().zip(&dg) {
                    *a += b;
                }
            }
            outer_acc(&mut grads.query, &dq, fq);
            let mut df = vec![0.0; c];
            matvec_t_acc(&params.query, &dq, &mut df);
            for (a, b) in grads.features[m].cell_mut(i, j).iter_mut().zip(&df) {
                *a += b;
            }
        }
    }
    grads
}
