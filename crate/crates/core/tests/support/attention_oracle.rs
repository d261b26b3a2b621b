// Brute-force evaluation of multi-view attention with explicit scalar loops.
// Shares nothing with the library beyond reading the correspondence maps.

use bevsync_core::correspondence::RigMaps;
use bevsync_core::tensor::Tensor3;

pub struct ScalarParams<'a> {
    pub c: usize,
    pub q: &'a [f64],
    pub k: &'a [f64],
    pub v: &'a [f64],
    pub encode: bool,
}

fn encoding(dx: f64, dy: f64, c: usize, extent: usize) -> Vec<f64> {
    let bands = c / 4;
    let mut out = Vec::new();
    for b in 0..bands {
        let lambda = if bands == 1 { 1.0 } else { (2.0 * extent as f64).powf(b as f64 / (bands - 1) as f64) };
        let om = 2.0 * std::f64::consts::PI / lambda;
        out.push((om * dx).sin());
        out.push((om * dx).cos());
        out.push((om * dy).sin());
        out.push((om * dy).cos());
    }
    out
}

/// Outputs indexed `[view][(i * w + j) * c + ch]`. `reverse` enumerates the
/// candidates in the opposite order.
pub fn scalar_attention(
    feats: &[Tensor3],
    p: &ScalarParams,
    maps: &RigMaps,
    window: usize,
    reverse: bool,
) -> Vec<Vec<f64>> {
    let (h, w, c) = feats[0].shape();
    assert_eq!(c, p.c);
    let r = (window / 2) as i64;
    let mut all = Vec::new();
    for m in 0..feats.len() {
        let mut out = vec![0.0; h * w * c];
        for i in 0..h {
            for j in 0..w {
                let px = j as f64 + 0.5;
                let py = i as f64 + 0.5;
                let mut neighbor_maps = vec![&maps.right[m]];
                if maps.left[m].target() != maps.right[m].target() {
                    neighbor_maps.push(&maps.left[m]);
                }
                // (score, value) for every candidate
                let mut cands: Vec<(f64, Vec<f64>)> = Vec::new();
                for map in neighbor_maps {
                    let Some(corr) = map.get(i, j) else { continue };
                    let nb = map.target() - 1;
                    let hb = map.backward().matrix();
                    for a in (corr.cell.0 as i64 - r)..=(corr.cell.0 as i64 + r) {
                        for b in (corr.cell.1 as i64 - r)..=(corr.cell.1 as i64 + r) {
                            if a < 0 || b < 0 || a >= h as i64 || b >= w as i64 {
                                continue;
                            }
                            let (a, b) = (a as usize, b as usize);
                            let (x, y) = (b as f64 + 0.5, a as f64 + 0.5);
                            let zx = hb[(0, 0)] * x + hb[(0, 1)] * y + hb[(0, 2)];
                            let zy = hb[(1, 0)] * x + hb[(1, 1)] * y + hb[(1, 2)];
                            let zw = hb[(2, 0)] * x + hb[(2, 1)] * y + hb[(2, 2)];
                            let mut fbar = vec![0.0; c];
                            for ch in 0..c {
                                fbar[ch] = feats[nb].get(a, b, ch);
                            }
                            if p.encode {
                                let e = encoding(zx / zw - px, zy / zw - py, c, h.max(w));
                                for ch in 0..c {
                                    fbar[ch] += e[ch];
                                }
                            }
                            let mut score = 0.0;
                            for row in 0..c {
                                let mut qf = 0.0;
                                let mut kf = 0.0;
                                for col in 0..c {
                                    qf += p.q[row * c + col] * feats[m].get(i, j, col);
                                    kf += p.k[row * c + col] * fbar[col];
                                }
                                score += qf * kf;
                            }
                            let mut val = vec![0.0; c];
                            for row in 0..c {
                                for col in 0..c {
                                    val[row] += p.v[row * c + col] * fbar[col];
                                }
                            }
                            cands.push((score, val));
                        }
                    }
                }
                if cands.is_empty() {
                    continue;
                }
                if reverse {
                    cands.reverse();
                }
                let mut max = f64::NEG_INFINITY;
                for (s, _) in &cands {
                    if *s > max {
                        max = *s;
                    }
                }
                let mut denom = 0.0;
                for (s, _) in &cands {
                    denom += (s - max).exp();
                }
                for (s, val) in &cands {
                    let wt = (s - max).exp() / denom;
                    for ch in 0..c {
                        out[(i * w + j) * c + ch] += wt * val[ch];
                    }
                }
            }
        }
        all.push(out);
    }
    all
}
