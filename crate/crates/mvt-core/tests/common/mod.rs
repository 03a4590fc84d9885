//! Shared helpers for the integration suites: seeded random tensors and
//! independent straight-loop reference implementations the tape results
//! are checked against. The references deliberately use different loop
//! orders and their own erf series so they share no code with the library.

#![allow(dead_code)]

use mvt_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn assert_close(a: &Tensor<f64>, b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.numel(), b.len(), "{what}: length mismatch");
    for (i, (&x, &y)) in a.data().iter().zip(b.iter()).enumerate() {
        assert!(
            (x - y).abs() <= tol,
            "{what}: entry {i} differs, {x} vs {y} (tol {tol})"
        );
    }
}

/// Triple-loop matrix product in i, j, p order (dot-product accumulation),
/// a different order than the library kernel uses.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Maclaurin series for erf, summed until the term drops below 1e-18.
/// Converges quickly for the |x| <= 4 range the tests use.
pub fn erf_series(x: f64) -> f64 {
    let two_over_sqrt_pi = 2.0 / std::f64::consts::PI.sqrt();
    let mut term = x;
    let mut sum = 0.0;
    let mut n = 0u32;
    while term.abs() > 1e-18 && n < 200 {
        sum += term / (2.0 * n as f64 + 1.0);
        n += 1;
        term *= -x * x / n as f64;
    }
    two_over_sqrt_pi * sum
}

pub fn naive_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

pub fn naive_softmax_row(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

pub fn naive_layer_norm(row: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let d = row.len() as f64;
    let mu: f64 = row.iter().sum::<f64>() / d;
    let var: f64 = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d;
    let inv = 1.0 / (var + eps).sqrt();
    row.iter()
        .enumerate()
        .map(|(j, &v)| gamma[j] * (v - mu) * inv + beta[j])
        .collect()
}

/// Plain-loop multi-head attention on [n, dim] tokens, allow-mask aware.
/// Scores use scale 1/sqrt(dim/heads).
pub struct NaiveMsaWeights<'a> {
    pub wq: &'a [f64],
    pub bq: &'a [f64],
    pub wk: &'a [f64],
    pub bk: &'a [f64],
    pub wv: &'a [f64],
    pub bv: &'a [f64],
    pub wo: &'a [f64],
    pub bo: &'a [f64],
}

pub fn naive_msa(
    x: &[f64],
    n: usize,
    dim: usize,
    heads: usize,
    w: &NaiveMsaWeights,
    allow: Option<&[bool]>,
) -> Vec<f64> {
    let d = dim / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let project = |wm: &[f64], bias: &[f64]| -> Vec<f64> {
        let mut out = naive_matmul(x, wm, n, dim, dim);
        for i in 0..n {
            for j in 0..dim {
                out[i * dim + j] += bias[j];
            }
        }
        out
    };
    let q = project(w.wq, w.bq);
    let k = project(w.wk, w.bk);
    let v = project(w.wv, w.bv);
    let mut concat = vec![0.0; n * dim];
    for h in 0..heads {
        for i in 0..n {
            let mut scores = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                if let Some(a) = allow {
                    if !a[i * n + j] {
                        continue;
                    }
                }
                let mut s = 0.0;
                for c in 0..d {
                    s += q[i * dim + h * d + c] * k[j * dim + h * d + c];
                }
                scores[j] = s * scale;
            }
            let probs = naive_softmax_row(&scores);
            for c in 0..d {
                let mut acc = 0.0;
                for j in 0..n {
                    if probs[j] > 0.0 {
                        acc += probs[j] * v[j * dim + h * d + c];
                    }
                }
                concat[i * dim + h * d + c] = acc;
            }
        }
    }
    let mut out = naive_matmul(&concat, w.wo, n, dim, dim);
    for i in 0..n {
        for j in 0..dim {
            out[i * dim + j] += w.bo[j];
        }
    }
    out
}

pub struct NaiveMlpWeights<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
}

pub fn naive_mlp(x: &[f64], n: usize, dim: usize, hidden: usize, w: &NaiveMlpWeights) -> Vec<f64> {
    let mut h = naive_matmul(x, w.w1, n, dim, hidden);
    for i in 0..n {
        for j in 0..hidden {
            h[i * hidden + j] = naive_gelu(h[i * hidden + j] + w.b1[j]);
        }
    }
    let mut out = naive_matmul(&h, w.w2, n, hidden, dim);
    for i in 0..n {
        for j in 0..dim {
            out[i * dim + j] += w.b2[j];
        }
    }
    out
}
