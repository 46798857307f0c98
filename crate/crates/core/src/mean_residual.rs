//! Mean–residual quantized GeMM.
//!
//! Activations `X` and output gradients `D` are split into a column-mean
//! vector and a zero-mean residual. The two parts are quantized on their
//! own and recombined through rank-one broadcasts, so the mean matrix
//! `1μᵀ` is never formed:
//!
//! ```text
//! Ŷ      = 1(μ̄_X W̄) + X̄_R W̄
//! ∂L/∂X  = 1(μ̄_D W̄ᵀ) + D̄_R W̄ᵀ
//! ∂L/∂W  = X̄_RᵀD̄_R + X̄_Rᵀ(1μ̄_D) + (1μ̄_X)ᵀD̄_R + (1μ̄_X)ᵀ(1μ̄_D)
//! ```
//!
//! The all-ones broadcast is exact; accumulation is in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, column_mean, column_sums, gemm, gemm_nt, gemm_tn, vec_mat, vec_mat_t, Matrix};
use crate::quantizer::{fake_quantize, fake_quantize_vector, QuantConfig};

/// Stream ids keeping each quantized operand's stochastic rounding independent.
mod stream {
    pub const MEAN_X: u64 = 1;
    pub const RESIDUAL_X: u64 = 2;
    pub const WEIGHT: u64 = 3;
    pub const MEAN_D: u64 = 4;
    pub const RESIDUAL_D: u64 = 5;
    pub const FULL_X: u64 = 6;
    pub const FULL_D: u64 = 7;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanResidualSplit {
    pub mean: Vec<f64>,
    pub residual: Matrix,
    pub source_shape: (usize, usize),
}

impl MeanResidualSplit {
    /// `1μᵀ + R`.
    pub fn reconstruct(&self) -> Matrix {
        let mut out = self.residual.clone();
        out.add_row_broadcast(&self.mean);
        out
    }
}

pub fn split(x: &Matrix) -> MeanResidualSplit {
    let mean = column_mean(x);
    let mut residual = x.clone();
    let neg: Vec<f64> = mean.iter().map(|v| -v).collect();
    residual.add_row_broadcast(&neg);
    MeanResidualSplit { mean, residual, source_shape: x.shape() }
}

/// Quantized forward operands, reusable by the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardState {
    pub mean_x: Vec<f64>,
    pub residual_x: Matrix,
    pub weight: Matrix,
    pub output: Matrix,
}

fn check_forward(x: &Matrix, w: &Matrix) -> Result<()> {
    if x.cols() != w.rows() {
        return Err(Error::DimensionMismatch {
            op: "mean_residual::forward",
            detail: format!("X {}x{} vs W {}x{}", x.rows(), x.cols(), w.rows(), w.cols()),
        });
    }
    Ok(())
}

fn check_grad(x: &Matrix, w: &Matrix, d: &Matrix) -> Result<()> {
    check_forward(x, w)?;
    if d.shape() != (x.rows(), w.cols()) {
        return Err(Error::DimensionMismatch {
            op: "mean_residual::backward",
            detail: format!("D {:?}, expected {:?}", d.shape(), (x.rows(), w.cols())),
        });
    }
    Ok(())
}

/// `Ŷ = 1(μ̄_X W̄) + X̄_R W̄`, keeping the quantized operands.
pub fn forward_state(x: &Matrix, w: &Matrix, cfg: &QuantConfig) -> Result<ForwardState> {
    check_forward(x, w)?;
    let parts = split(x);
    let mean_x = fake_quantize_vector(&parts.mean, cfg, stream::MEAN_X)?;
    let residual_x = fake_quantize(&parts.residual, cfg, stream::RESIDUAL_X)?;
    let weight = fake_quantize(w, cfg, stream::WEIGHT)?;
    let mut output = gemm(&residual_x, &weight)?;
    output.add_row_broadcast(&vec_mat(&mean_x, &weight)?);
    Ok(ForwardState { mean_x, residual_x, weight, output })
}

pub fn forward(x: &Matrix, w: &Matrix, cfg: &QuantConfig) -> Result<Matrix> {
    Ok(forward_state(x, w, cfg)?.output)
}

/// The four addends of the weight gradient, in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightGradTerms {
    /// `X̄_Rᵀ D̄_R`
    pub residual_residual: Matrix,
    /// `X̄_Rᵀ (1 μ̄_D)`
    pub residual_mean: Matrix,
    /// `(1 μ̄_X)ᵀ D̄_R`
    pub mean_residual: Matrix,
    /// `(1 μ̄_X)ᵀ (1 μ̄_D)`
    pub mean_mean: Matrix,
}

impl WeightGradTerms {
    /// Sum in declaration order; this is exactly how the gradient is formed.
    pub fn sum(&self) -> Matrix {
        let s = self.residual_residual.add(&self.residual_mean).expect("same shape");
        let s = s.add(&self.mean_residual).expect("same shape");
        s.add(&self.mean_mean).expect("same shape")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverisGrads {
    pub grad_input: Matrix,
    pub grad_weight: Matrix,
    pub terms: WeightGradTerms,
}

pub fn backward(x: &Matrix, w: &Matrix, d: &Matrix, cfg: &QuantConfig) -> Result<AverisGrads> {
    check_grad(x, w, d)?;
    let state = forward_state(x, w, cfg)?;
    backward_from(&state, d, cfg)
}

/// Backward pass reusing the quantized operands of a forward call.
pub fn backward_from(state: &ForwardState, d: &Matrix, cfg: &QuantConfig) -> Result<AverisGrads> {
    let (l, n) = (state.residual_x.rows(), state.weight.cols());
    if d.shape() != (l, n) {
        return Err(Error::DimensionMismatch {
            op: "mean_residual::backward",
            detail: format!("D {:?}, expected {:?}", d.shape(), (l, n)),
        });
    }
    let parts = split(d);
    let mean_d = fake_quantize_vector(&parts.mean, cfg, stream::MEAN_D)?;
    let residual_d = fake_quantize(&parts.residual, cfg, stream::RESIDUAL_D)?;

    let mut grad_input = gemm_nt(&residual_d, &state.weight)?;
    grad_input.add_row_broadcast(&vec_mat_t(&mean_d, &state.weight)?);

    let terms = WeightGradTerms {
        residual_residual: gemm_tn(&state.residual_x, &residual_d)?,
        residual_mean: Matrix::outer(&column_sums(&state.residual_x), &mean_d),
        mean_residual: Matrix::outer(&state.mean_x, &column_sums(&residual_d)),
        mean_mean: Matrix::outer(&state.mean_x, &mean_d).scale(l as f64),
    };
    Ok(AverisGrads { grad_input, grad_weight: terms.sum(), terms })
}

/// Quantized operands of a direct `Q(X)·Q(W)` forward.
#[derive(Clone, Debug)]
pub struct VanillaState {
    pub x: Matrix,
    pub weight: Matrix,
    pub output: Matrix,
}

pub fn forward_vanilla_state(x: &Matrix, w: &Matrix, cfg: &QuantConfig) -> Result<VanillaState> {
    check_forward(x, w)?;
    let xq = fake_quantize(x, cfg, stream::FULL_X)?;
    let weight = fake_quantize(w, cfg, stream::WEIGHT)?;
    let output = gemm(&xq, &weight)?;
    Ok(VanillaState { x: xq, weight, output })
}

/// Direct `Q(X)·Q(W)` without splitting.
pub fn forward_vanilla(x: &Matrix, w: &Matrix, cfg: &QuantConfig) -> Result<Matrix> {
    Ok(forward_vanilla_state(x, w, cfg)?.output)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanillaGrads {
    pub grad_input: Matrix,
    pub grad_weight: Matrix,
}

/// `(Q(D)Q(W)ᵀ, Q(X)ᵀQ(D))`.
pub fn backward_vanilla(x: &Matrix, w: &Matrix, d: &Matrix, cfg: &QuantConfig) -> Result<VanillaGrads> {
    check_grad(x, w, d)?;
    backward_vanilla_from(&forward_vanilla_state(x, w, cfg)?, d, cfg)
}

pub fn backward_vanilla_from(state: &VanillaState, d: &Matrix, cfg: &QuantConfig) -> Result<VanillaGrads> {
    let dq = fake_quantize(d, cfg, stream::FULL_D)?;
    Ok(VanillaGrads { grad_input: gemm_nt(&dq, &state.weight)?, grad_weight: gemm_tn(&state.x, &dq)? })
}

/// `‖a − b‖_F / ‖b‖_F` (absolute when `b` is zero).
pub fn relative_error(a: &Matrix, b: &Matrix) -> Result<f64> {
    let diff = a.sub(b)?.frobenius();
    let base = b.frobenius();
    Ok(if base > 0.0 { diff / base } else { diff })
}

/// Output error of both paths against the exact product, for one config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardErrors {
    pub averis: f64,
    pub vanilla: f64,
    /// Errors of the column-centered outputs, i.e. of the token-varying part.
    pub averis_centered: f64,
    pub vanilla_centered: f64,
}

pub fn compare_forward(x: &Matrix, w: &Matrix, cfg: &QuantConfig) -> Result<ForwardErrors> {
    let exact = linalg::gemm(x, w)?;
    let averis = forward(x, w, cfg)?;
    let vanilla = forward_vanilla(x, w, cfg)?;
    let exact_c = linalg::center(&exact);
    Ok(ForwardErrors {
        averis: relative_error(&averis, &exact)?,
        vanilla: relative_error(&vanilla, &exact)?,
        averis_centered: relative_error(&linalg::center(&averis), &exact_c)?,
        vanilla_centered: relative_error(&linalg::center(&vanilla), &exact_c)?,
    })
}
