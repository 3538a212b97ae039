//! Independent reference implementations. Nothing here calls into the
//! library's numerics; matrices are plain `Vec<Vec<f64>>`.

#![allow(dead_code)]

use expressivity::linalg::Matrix;
use expressivity::model::{HeadWeights, LayerWeights, ScsaParams, Variant};

pub type Dense = Vec<Vec<f64>>;

pub fn dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn from_dense(a: &Dense) -> Matrix {
    Matrix::from_rows(a).unwrap()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Singular values by one-sided Jacobi rotations, sorted descending.
pub fn jacobi_singular_values(a: &Dense) -> Vec<f64> {
    // Work on the orientation with fewer columns.
    let mut u = if a[0].len() <= a.len() { a.clone() } else { transpose(a) };
    let (m, n) = (u.len(), u[0].len());
    for _sweep in 0..100 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for row in u.iter() {
                    alpha += row[p] * row[p];
                    beta += row[q] * row[q];
                    gamma += row[p] * row[q];
                }
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for row in u.iter_mut().take(m) {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|j| u.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

pub fn oracle_spectral_norm(m: &Matrix) -> f64 {
    jacobi_singular_values(&dense(m))[0]
}

/// Principal Lambert W by bisection on `w e^w = x`.
pub fn oracle_lambert_w0(x: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, x.max(1.0));
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid * mid.exp() < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// One attention head computed entry by entry.
pub fn oracle_head(x: &Dense, head: &HeadWeights, variant: Variant, scsa: Option<&ScsaParams>) -> Dense {
    let q = matmul(x, &dense(head.w_q()));
    let k = matmul(x, &dense(head.w_k()));
    let v = matmul(x, &dense(head.w_v()));
    let n = x.len();
    let dh = q[0].len() as f64;
    match variant {
        Variant::DotProduct | Variant::L2Tied => {
            let mut out = vec![vec![0.0; v[0].len()]; n];
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| {
                        if variant == Variant::DotProduct {
                            q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / dh.sqrt()
                        } else {
                            -q[i].iter().zip(&k[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / dh.sqrt()
                        }
                    })
                    .collect();
                let p = softmax_row(&logits);
                for j in 0..n {
                    for c in 0..v[0].len() {
                        out[i][c] += p[j] * v[j][c];
                    }
                }
            }
            out
        }
        Variant::Scsa => {
            let p = scsa.unwrap();
            let normalize = |m: &Dense| -> Dense {
                m.iter()
                    .map(|r| {
                        let nr = r.iter().map(|a| a * a).sum::<f64>().sqrt() + p.nabla;
                        r.iter().map(|a| a / nr).collect()
                    })
                    .collect()
            };
            let (qn, kn, vn) = (normalize(&q), normalize(&k), normalize(&v));
            let mut out = vec![vec![0.0; v[0].len()]; n];
            for i in 0..n {
                let start = (i / p.window) * p.window;
                let logits: Vec<f64> = (start..start + p.window)
                    .map(|j| p.tau * qn[i].iter().zip(&kn[j]).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                let w = softmax_row(&logits);
                for (t, j) in (start..start + p.window).enumerate() {
                    for c in 0..v[0].len() {
                        out[i][c] += p.nu * w[t] * vn[j][c];
                    }
                }
            }
            out
        }
    }
}

pub fn oracle_mha(x: &Dense, layer: &LayerWeights, variant: Variant, scsa: Option<&ScsaParams>) -> Dense {
    let heads: Vec<Dense> = layer.heads.iter().map(|h| oracle_head(x, h, variant, scsa)).collect();
    let concat: Dense = (0..x.len())
        .map(|i| heads.iter().flat_map(|h| h[i].iter().copied()).collect())
        .collect();
    matmul(&concat, &dense(&layer.w_o))
}

pub fn oracle_center_norm(x: &Dense) -> Dense {
    let d = x[0].len() as f64;
    x.iter()
        .map(|r| {
            let mean = r.iter().sum::<f64>() / d;
            r.iter().map(|v| d / (d - 1.0) * (v - mean)).collect()
        })
        .collect()
}

fn add(a: &Dense, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn oracle_block(x: &Dense, layer: &LayerWeights, variant: Variant, scsa: Option<&ScsaParams>) -> Dense {
    let mid = oracle_center_norm(&add(x, &oracle_mha(x, layer, variant, scsa)));
    let fed: Dense = matmul(&mid, &dense(&layer.w_ffn))
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    oracle_center_norm(&add(&mid, &fed))
}

/// Closed-form per-layer constants, recomputed from Jacobi singular values.
pub fn oracle_c1(
    layer: &LayerWeights,
    variant: Variant,
    n: usize,
    d: usize,
    bound: f64,
    scsa: Option<&ScsaParams>,
) -> f64 {
    let h = layer.heads.len() as f64;
    let dh = d as f64 / h;
    let wo = oracle_spectral_norm(&layer.w_o);
    let norms: Vec<(f64, f64, f64)> = layer
        .heads
        .iter()
        .map(|hd| {
            (
                oracle_spectral_norm(hd.w_q()),
                oracle_spectral_norm(hd.w_k()),
                oracle_spectral_norm(hd.w_v()),
            )
        })
        .collect();
    match variant {
        Variant::DotProduct => {
            let worst = norms
                .iter()
                .map(|&(q, k, v)| v * (4.0 * n as f64 / dh.sqrt() * bound * bound * q * k + 1.0))
                .fold(0.0, f64::max);
            1.0 + wo * h.sqrt() * worst
        }
        Variant::L2Tied => {
            let s: f64 = norms.iter().map(|&(q, _, v)| q * q * v * v).sum();
            let w0 = oracle_lambert_w0(n as f64 / std::f64::consts::E);
            1.0 + (n as f64).sqrt() / dh.sqrt() * (4.0 * w0 + 1.0) * s.sqrt() * wo
        }
        Variant::Scsa => {
            let p = scsa.unwrap();
            let w = p.window as f64;
            let r = p.nabla.powf(-0.5);
            let worst = norms
                .iter()
                .map(|&(q, k, v)| {
                    2.0 * w * (w - 1.0) * p.nu * p.tau * r * k
                        + 2.0 * (w - 1.0) * p.nu * p.tau * r * q
                        + 2.0 * w * p.nu * r * v
                })
                .fold(0.0, f64::max);
            1.0 + wo * h.sqrt() * worst
        }
    }
}

pub fn oracle_c2(layer: &LayerWeights) -> f64 {
    1.0 + oracle_spectral_norm(&layer.w_ffn)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
