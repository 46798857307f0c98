//! Statistics behind the emergence of a coherent mean: nonlinearities that
//! regenerate a positive mean, frequency-weighted embedding means, and the
//! `√H` growth of the mean norm.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::theorems::MC_SLACK;
use crate::activation::Activation;
use crate::error::{contract, Result};
use crate::linalg::{self, Matrix};
use crate::rng;

const CHUNK: usize = 8192;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegenerationStats {
    pub activation: Activation,
    pub trials: usize,
    /// Monte Carlo estimate of `E[φ(z)]`, `z ~ N(0, 1)`.
    pub estimate: f64,
    pub stderr: f64,
    pub closed_form: Option<f64>,
    /// `estimate > 4·stderr`.
    pub positive: bool,
}

pub fn nonlinearity_mean_regeneration(phi: Activation, trials: usize, seed: u64) -> Result<RegenerationStats> {
    if trials < 2 {
        return Err(contract("need at least two trials"));
    }
    let chunks = trials.div_ceil(CHUNK);
    let (s1, s2) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = CHUNK.min(trials - c * CHUNK);
            let mut r = rng::stream(seed, rng::mix(&[0x6e6c, c as u64]));
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for _ in 0..n {
                let z: f64 = StandardNormal.sample(&mut r);
                let y = phi.apply(z);
                s1 += y;
                s2 += y * y;
            }
            (s1, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = trials as f64;
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    let stderr = (var / n).sqrt();
    Ok(RegenerationStats {
        activation: phi,
        trials,
        estimate: mean,
        stderr,
        closed_form: phi.gaussian_mean(),
        positive: mean > MC_SLACK * stderr,
    })
}

/// `p(v) ∝ v^{−s}` over ranks `1..=vocab`.
pub fn zipf_probabilities(vocab: usize, exponent: f64) -> Result<Vec<f64>> {
    if vocab == 0 {
        return Err(contract("vocabulary must be non-empty"));
    }
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(contract(format!("Zipf exponent must be > 0, got {exponent}")));
    }
    let w: Vec<f64> = (1..=vocab).map(|v| (v as f64).powf(-exponent)).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// `Σ_v p(v) E_v` for embedding rows `E_v`.
pub fn embedding_mean(embeddings: &Matrix, p: &[f64]) -> Result<Vec<f64>> {
    linalg::vec_mat(p, embeddings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZipfConfig {
    pub vocab_size: usize,
    pub exponent: f64,
    pub embed_dim: usize,
    /// Number of top-ranked tokens that share the aligned direction.
    pub aligned_top: usize,
    /// Aligned component added to those rows, in units of `√dim`.
    pub aligned_strength: f64,
}

impl Default for ZipfConfig {
    fn default() -> Self {
        Self { vocab_size: 1000, exponent: 1.0, embed_dim: 256, aligned_top: 10, aligned_strength: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZipfEmbeddingReport {
    pub config: ZipfConfig,
    pub zipf_mean: Vec<f64>,
    pub uniform_mean: Vec<f64>,
    pub zipf_norm: f64,
    pub uniform_norm: f64,
    pub aligned_direction: Vec<f64>,
    pub cos_zipf_aligned: f64,
    pub cos_uniform_aligned: f64,
}

/// Embeddings with i.i.d. `N(0, 1)` entries, the top `aligned_top` ranks
/// shifted by `aligned_strength·√dim·u` for a random unit `u`.
pub fn synthetic_embeddings(cfg: &ZipfConfig, seed: u64) -> Result<(Matrix, Vec<f64>)> {
    if cfg.vocab_size == 0 || cfg.embed_dim == 0 {
        return Err(contract("vocabulary and embedding dimension must be positive"));
    }
    if cfg.aligned_top > cfg.vocab_size {
        return Err(contract("aligned_top exceeds the vocabulary"));
    }
    let mut r = rng::stream(seed, 0x7a69);
    let u: Vec<f64> = (0..cfg.embed_dim).map(|_| StandardNormal.sample(&mut r)).collect();
    let un = linalg::norm(&u);
    let u: Vec<f64> = u.into_iter().map(|x| x / un).collect();
    let mut e = Matrix::gaussian(cfg.vocab_size, cfg.embed_dim, 1.0, &mut r);
    let shift = cfg.aligned_strength * (cfg.embed_dim as f64).sqrt();
    for row in e.data_mut().chunks_exact_mut(cfg.embed_dim).take(cfg.aligned_top) {
        for (x, uj) in row.iter_mut().zip(&u) {
            *x += shift * uj;
        }
    }
    Ok((e, u))
}

pub fn zipf_embedding_mean(cfg: &ZipfConfig, seed: u64) -> Result<ZipfEmbeddingReport> {
    let p = zipf_probabilities(cfg.vocab_size, cfg.exponent)?;
    let (e, u) = synthetic_embeddings(cfg, seed)?;
    let zipf_mean = embedding_mean(&e, &p)?;
    let uniform = vec![1.0 / cfg.vocab_size as f64; cfg.vocab_size];
    let uniform_mean = embedding_mean(&e, &uniform)?;
    let zipf_norm = linalg::norm(&zipf_mean);
    let uniform_norm = linalg::norm(&uniform_mean);
    let cos = |v: &[f64], n: f64| if n > 0.0 { linalg::dot(v, &u) / n } else { 0.0 };
    Ok(ZipfEmbeddingReport {
        config: cfg.clone(),
        cos_zipf_aligned: cos(&zipf_mean, zipf_norm),
        cos_uniform_aligned: cos(&uniform_mean, uniform_norm),
        zipf_mean,
        uniform_mean,
        zipf_norm,
        uniform_norm,
        aligned_direction: u,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub h_values: Vec<usize>,
    /// Coherent per-coordinate bias.
    pub mu_bar: f64,
    pub sigma: f64,
    /// Tokens per sample; the column mean is taken over these.
    pub tokens: usize,
    pub trials: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self { h_values: vec![64, 256, 1024, 4096], mu_bar: 0.1, sigma: 1.0, tokens: 256, trials: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub h: usize,
    /// Mean of `‖μ‖₂` over trials.
    pub mean_norm: f64,
    /// `√H · μ̄`.
    pub coherent_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub config: ScalingConfig,
    /// Least-squares slope of `ln‖μ‖₂` against `ln H`.
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<ScalingPoint>,
}

/// Samples `X = μ̄·1 1ᵀ + σZ` (`tokens × H`) for each `H`, measures the
/// column-mean norm and fits `ln‖μ‖₂ = a + b ln H`.
pub fn dimension_scaling_check(cfg: &ScalingConfig, seed: u64) -> Result<ScalingReport> {
    let mut hs = cfg.h_values.clone();
    hs.sort_unstable();
    hs.dedup();
    if hs.len() < 4 || hs[0] == 0 || hs[hs.len() - 1] < 16 * hs[0] {
        return Err(contract("need at least 4 distinct positive H values spanning a factor of 16"));
    }
    if cfg.tokens == 0 || cfg.trials == 0 || !(cfg.sigma >= 0.0) || !cfg.mu_bar.is_finite() {
        return Err(contract("need tokens > 0, trials > 0, sigma ≥ 0 and finite mu_bar"));
    }
    let points: Vec<ScalingPoint> = cfg
        .h_values
        .iter()
        .enumerate()
        .map(|(hi, &h)| {
            let total: f64 = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let mut r = rng::stream(seed, rng::mix(&[0x7371, hi as u64, t as u64]));
                    let mut x = Matrix::gaussian(cfg.tokens, h, cfg.sigma, &mut r);
                    x.add_row_broadcast(&vec![cfg.mu_bar; h]);
                    linalg::norm(&linalg::column_mean(&x))
                })
                .sum();
            ScalingPoint { h, mean_norm: total / cfg.trials as f64, coherent_norm: (h as f64).sqrt() * cfg.mu_bar }
        })
        .collect();
    if points.iter().any(|p| !(p.mean_norm > 0.0)) {
        return Err(contract("mean norm vanished; slope undefined"));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.h as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_norm.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    Ok(ScalingReport { config: cfg.clone(), slope, intercept, points })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    (b, my - b * mx)
}
