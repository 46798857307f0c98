//! Synthetic activation generators standing in for real checkpoint dumps.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, center, Matrix};
use crate::rng;

fn normal(r: &mut rng::Rng) -> f64 {
    StandardNormal.sample(r)
}

fn unit_vector(dim: usize, r: &mut rng::Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| normal(r)).collect();
    let n = linalg::norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// `X = 1μᵀ + σZ` with `μ_j ~ N(0, mean_scale²)`. Returns `(X, μ)`.
pub fn mean_biased(rows: usize, cols: usize, mean_scale: f64, sigma: f64, seed: u64) -> (Matrix, Vec<f64>) {
    let mut r = rng::stream(seed, 0x6d62);
    let mu: Vec<f64> = (0..cols).map(|_| mean_scale * normal(&mut r)).collect();
    let mut x = Matrix::gaussian(rows, cols, sigma, &mut r);
    x.add_row_broadcast(&mu);
    (x, mu)
}

/// Centered rank-one matrix `a bᵀ` with `‖b‖ = 1` and `a ~ N(0, scale²)` centered.
pub fn centered_rank_one(rows: usize, cols: usize, scale: f64, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 0x7231);
    let a: Vec<f64> = (0..rows).map(|_| scale * normal(&mut r)).collect();
    let b = unit_vector(cols, &mut r);
    center(&Matrix::outer(&a, &b))
}

/// Knobs for [`anisotropic`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnisotropicConfig {
    /// Per-token coefficient on the leading direction, in units of `sqrt(m)`.
    pub lead_strength: f64,
    /// Relative jitter of the leading coefficients (kept positive).
    pub lead_jitter: f64,
    /// Secondary directions with symmetric (sign-alternating) coefficients.
    pub secondary_spikes: usize,
    pub secondary_strength: f64,
    pub noise: f64,
}

impl Default for AnisotropicConfig {
    fn default() -> Self {
        Self { lead_strength: 1.0, lead_jitter: 0.2, secondary_spikes: 3, secondary_strength: 0.5, noise: 0.5 }
    }
}

/// Activations with a dominant leading singular direction whose token
/// coefficients share one sign, plus weaker symmetric spikes and noise.
/// Returns `(X, leading direction)`.
pub fn anisotropic(rows: usize, cols: usize, cfg: &AnisotropicConfig, seed: u64) -> (Matrix, Vec<f64>) {
    let mut r = rng::stream(seed, 0x616e);
    let root_m = (cols as f64).sqrt();
    let lead = unit_vector(cols, &mut r);
    let coeff: Vec<f64> = (0..rows)
        .map(|_| cfg.lead_strength * root_m * (1.0 + cfg.lead_jitter * normal(&mut r)).abs())
        .collect();
    let mut x = Matrix::outer(&coeff, &lead);
    for _ in 0..cfg.secondary_spikes {
        let dir = unit_vector(cols, &mut r);
        let c: Vec<f64> = (0..rows).map(|_| cfg.secondary_strength * root_m * normal(&mut r)).collect();
        x = x.add(&Matrix::outer(&c, &dir)).expect("same shape");
    }
    let noise = Matrix::gaussian(rows, cols, cfg.noise, &mut r);
    (x.add(&noise).expect("same shape"), lead)
}
