//! Blockwise E2M1 (FP4) quantization emulated in `f64`.
//!
//! Each block of `block_size` consecutive entries (in the configured
//! flattening order) shares one scale `amax / 6`, and every entry is mapped
//! onto the signed grid `±{0, 0.5, 1, 1.5, 2, 3, 4, 6} · scale`.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Non-negative E2M1 magnitudes, indexed by the low three code bits.
pub const E2M1_GRID: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
pub const E2M1_MAX: f64 = 6.0;
/// Widest gap between adjacent grid magnitudes (between 4 and 6).
pub const E2M1_MAX_GAP: f64 = 2.0;

const SIGN_BIT: u8 = 0b1000;
const BLOCKS_PER_TASK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    Nearest,
    Stochastic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Scales kept at working precision.
    Real,
    /// Scales rounded to the nearest FP8 E4M3 value in `[2^-9, 448]`.
    E4m3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockLayout {
    /// Blocks run along the row-major flattening.
    RowMajor,
    /// Blocks run down columns (column-major flattening).
    ColumnMajor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    E2m1,
    /// Identity quantizer; used to check that quantized paths reduce to exact arithmetic.
    PassThrough,
}

macro_rules! parse_names {
    ($ty:ty, $what:literal, $($name:literal => $v:expr),+ $(,)?) => {
        impl std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($v),)+
                    other => Err(format!(concat!("unknown ", $what, " `{}` ({})"), other, [$($name),+].join("|"))),
                }
            }
        }
    };
}

parse_names!(Rounding, "rounding", "nearest" => Rounding::Nearest, "stochastic" => Rounding::Stochastic);
parse_names!(ScaleMode, "scale mode", "real" => ScaleMode::Real, "e4m3" => ScaleMode::E4m3);
parse_names!(BlockLayout, "block layout", "row" => BlockLayout::RowMajor, "col" => BlockLayout::ColumnMajor);
parse_names!(Format, "format", "e2m1" => Format::E2m1, "pass_through" => Format::PassThrough);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub format: Format,
    pub block_size: usize,
    pub rounding: Rounding,
    pub scale_mode: ScaleMode,
    pub layout: BlockLayout,
    pub seed: u64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            format: Format::E2m1,
            block_size: 16,
            rounding: Rounding::Stochastic,
            scale_mode: ScaleMode::Real,
            layout: BlockLayout::RowMajor,
            seed: 0,
        }
    }
}

impl QuantConfig {
    pub fn nearest() -> Self {
        Self { rounding: Rounding::Nearest, ..Self::default() }
    }

    pub fn stochastic(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn pass_through() -> Self {
        Self { format: Format::PassThrough, ..Self::default() }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(contract("block_size must be at least 1"));
        }
        Ok(())
    }

    pub fn is_pass_through(&self) -> bool {
        self.format == Format::PassThrough
    }
}

/// FP4 codes (one per entry, row-major) plus one scale per block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub rows: usize,
    pub cols: usize,
    /// `sign << 3 | grid index`, stored in row-major entry order.
    pub codes: Vec<u8>,
    pub scales: Vec<f64>,
    pub config: QuantConfig,
}

impl QuantizedTensor {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let n = self.rows * self.cols;
        if self.codes.len() != n {
            return Err(contract(format!("{} codes for {n} entries", self.codes.len())));
        }
        if self.scales.len() != n.div_ceil(self.config.block_size) {
            return Err(contract(format!(
                "{} scales, expected {}",
                self.scales.len(),
                n.div_ceil(self.config.block_size)
            )));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(contract("block scales must be positive and finite"));
        }
        if self.codes.iter().any(|&c| c > 0x0f) {
            return Err(contract("codes must fit in 4 bits"));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.scales.len()
    }

    /// Block holding row-major entry `(i, j)`.
    pub fn block_of(&self, i: usize, j: usize) -> usize {
        flat_position(self.config.layout, self.rows, self.cols, i, j) / self.config.block_size
    }
}

/// Magnitude of a 4-bit code times its sign, in grid units.
#[inline]
pub fn grid_value(code: u8) -> f64 {
    const SIGNED: [f64; 16] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, -0.0, -0.5, -1.0, -1.5, -2.0, -3.0, -4.0, -6.0];
    SIGNED[(code & 0b1111) as usize]
}

#[inline]
fn flat_position(layout: BlockLayout, rows: usize, cols: usize, i: usize, j: usize) -> usize {
    match layout {
        BlockLayout::RowMajor => i * cols + j,
        BlockLayout::ColumnMajor => j * rows + i,
    }
}

/// Row-major index of flattened position `f`.
#[inline]
fn entry_at(layout: BlockLayout, rows: usize, cols: usize, f: usize) -> usize {
    match layout {
        BlockLayout::RowMajor => f,
        BlockLayout::ColumnMajor => (f % rows) * cols + f / rows,
    }
}

pub fn quantize(x: &Matrix, cfg: &QuantConfig) -> Result<QuantizedTensor> {
    quantize_with_stream(x, cfg, 0)
}

/// Quantizes `x`; stochastic rounding draws from `(cfg.seed, stream)`.
///
/// The uniform variate for flattened position `f` is the `f`-th `u64` of that
/// stream, so results do not depend on how blocks are split across threads.
pub fn quantize_with_stream(x: &Matrix, cfg: &QuantConfig, stream: u64) -> Result<QuantizedTensor> {
    cfg.validate()?;
    let (rows, cols) = x.shape();
    let n = rows * cols;
    let bs = cfg.block_size;
    let nblocks = n.div_ceil(bs);
    let data = x.data();

    let mut codes_flat = vec![0u8; n];
    let mut scales = vec![0.0; nblocks];
    let base = rng::stream(cfg.seed, stream);

    let work = |(task, (codes, scales)): (usize, (&mut [u8], &mut [f64]))| {
        let first_block = task * BLOCKS_PER_TASK;
        let mut r = base.clone();
        if cfg.rounding == Rounding::Stochastic {
            r.set_word_pos(2 * (first_block * bs) as u128);
        }
        for (b, scale_slot) in scales.iter_mut().enumerate() {
            let start = (first_block + b) * bs;
            let end = (start + bs).min(n);
            let amax = (start..end)
                .map(|f| data[entry_at(cfg.layout, rows, cols, f)].abs())
                .fold(0.0, f64::max);
            let scale = block_scale(amax, cfg.scale_mode);
            *scale_slot = scale;
            for f in start..end {
                let v = data[entry_at(cfg.layout, rows, cols, f)];
                let u = match cfg.rounding {
                    Rounding::Nearest => 0.0,
                    Rounding::Stochastic => r.random::<f64>(),
                };
                codes[f - first_block * bs] = encode(v / scale, cfg.rounding, u);
            }
        }
    };

    let code_chunks = codes_flat.chunks_mut(BLOCKS_PER_TASK * bs);
    let scale_chunks = scales.chunks_mut(BLOCKS_PER_TASK);
    if n >= 1 << 14 {
        code_chunks
            .zip(scale_chunks)
            .collect::<Vec<_>>()
            .into_par_iter()
            .enumerate()
            .for_each(work);
    } else {
        code_chunks.zip(scale_chunks).enumerate().for_each(work);
    }

    let codes = match cfg.layout {
        BlockLayout::RowMajor => codes_flat,
        BlockLayout::ColumnMajor => {
            let mut out = vec![0u8; n];
            for (f, c) in codes_flat.into_iter().enumerate() {
                out[entry_at(cfg.layout, rows, cols, f)] = c;
            }
            out
        }
    };
    Ok(QuantizedTensor { rows, cols, codes, scales, config: *cfg })
}

/// `v` as a `1 × n` tensor. An all-empty vector is rejected.
pub fn quantize_vector(v: &[f64], cfg: &QuantConfig) -> Result<QuantizedTensor> {
    quantize_vector_with_stream(v, cfg, 0)
}

pub fn quantize_vector_with_stream(v: &[f64], cfg: &QuantConfig, stream: u64) -> Result<QuantizedTensor> {
    let m = Matrix::new(1, v.len(), v.to_vec())?;
    quantize_with_stream(&m, cfg, stream)
}

pub fn dequantize(q: &QuantizedTensor) -> Matrix {
    let (rows, cols) = (q.rows, q.cols);
    let bs = q.config.block_size;
    let data = match q.config.layout {
        BlockLayout::RowMajor => {
            let mut out = vec![0.0; rows * cols];
            for ((o, codes), &s) in out.chunks_mut(bs).zip(q.codes.chunks(bs)).zip(&q.scales) {
                for (v, &c) in o.iter_mut().zip(codes) {
                    *v = grid_value(c) * s;
                }
            }
            out
        }
        BlockLayout::ColumnMajor => {
            let mut out = vec![0.0; rows * cols];
            for f in 0..rows * cols {
                let e = entry_at(BlockLayout::ColumnMajor, rows, cols, f);
                out[e] = grid_value(q.codes[e]) * q.scales[f / bs];
            }
            out
        }
    };
    Matrix::from_parts(rows, cols, data)
}

/// `dequantize(quantize(x))`, or `x` itself for the pass-through format.
pub fn fake_quantize(x: &Matrix, cfg: &QuantConfig, stream: u64) -> Result<Matrix> {
    if cfg.is_pass_through() {
        return Ok(x.clone());
    }
    Ok(dequantize(&quantize_with_stream(x, cfg, stream)?))
}

pub fn fake_quantize_vector(v: &[f64], cfg: &QuantConfig, stream: u64) -> Result<Vec<f64>> {
    if cfg.is_pass_through() {
        return Ok(v.to_vec());
    }
    Ok(dequantize(&quantize_vector_with_stream(v, cfg, stream)?).into_data())
}

/// `‖Q(x) − x‖_F / ‖x‖_F`, with 0 for the zero matrix.
pub fn quantization_error(x: &Matrix, cfg: &QuantConfig) -> Result<f64> {
    let norm = x.frobenius();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let q = fake_quantize(x, cfg, 0)?;
    Ok(q.sub(x)?.frobenius() / norm)
}

fn block_scale(amax: f64, mode: ScaleMode) -> f64 {
    if amax == 0.0 {
        return 1.0;
    }
    let s = amax / E2M1_MAX;
    match mode {
        ScaleMode::Real => s,
        ScaleMode::E4m3 => round_to_e4m3(s),
    }
}

/// Nearest positive E4M3 value, clamped into `[2^-9, 448]`.
pub fn round_to_e4m3(s: f64) -> f64 {
    const MIN_SUB: f64 = 1.0 / 512.0;
    const MAX: f64 = 448.0;
    let s = s.clamp(MIN_SUB, MAX);
    let e = s.log2().floor() as i32;
    let step = if e < -6 { MIN_SUB } else { 2f64.powi(e - 3) };
    ((s / step).round_ties_even() * step).clamp(MIN_SUB, MAX)
}

/// Encodes a value already divided by its block scale. `u` is the uniform
/// variate for stochastic rounding and ignored for nearest.
///
/// The grid is uniform on `[0, 2]`, `[2, 4]` and `[4, 6]` with gaps that are
/// powers of two, so the position inside a segment is computed exactly.
#[inline]
fn encode(a: f64, rounding: Rounding, u: f64) -> u8 {
    const BASE: [u8; 3] = [0, 4, 6];
    const START: [f64; 3] = [0.0, 2.0, 4.0];
    const INV_GAP: [f64; 3] = [2.0, 1.0, 0.5];
    // adding and removing 2^52 rounds a small non-negative value to the
    // nearest integer, ties to even
    const ROUND: f64 = 4_503_599_627_370_496.0;

    let mag = a.abs().min(E2M1_MAX);
    let seg = (mag >= 2.0) as usize + (mag >= 4.0) as usize;
    let pos = (mag - START[seg]) * INV_GAP[seg];
    let local = match rounding {
        // segment bases are even, so ties-to-even locally is ties-to-even on the index
        Rounding::Nearest => ((pos + ROUND) - ROUND) as u8,
        Rounding::Stochastic => {
            let lo = pos as u8;
            lo + (u < pos - lo as f64) as u8
        }
    };
    let idx = BASE[seg] + local;
    let sign = if a < 0.0 && idx > 0 { SIGN_BIT } else { 0 };
    sign | idx
}

/// Half the gap around magnitude `mag` (grid units): the nearest-rounding error bound.
pub fn half_gap(mag: f64) -> f64 {
    let mag = mag.abs().min(E2M1_MAX);
    let hi = E2M1_GRID.iter().position(|&g| g >= mag).unwrap_or(7).max(1);
    (E2M1_GRID[hi] - E2M1_GRID[hi - 1]) / 2.0
}
