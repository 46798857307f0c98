//! Mean + spike + tail split of an activation matrix, outlier attribution,
//! and mean-direction diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{self, center, column_mean, truncated_svd, Matrix, TruncatedSvd};

/// Default spike rank `max(1, ⌊0.01·m⌋)`.
pub fn default_rank(cols: usize) -> usize {
    (cols / 100).max(1)
}

/// `X = 1μᵀ + X_spike + X_tail`, where the spike is the rank-`k` truncated
/// SVD of the centered matrix and the tail is what remains.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decomposition {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    /// Set when `⌊0.01·m⌋` was zero and the rank was raised to 1.
    pub k_raised_to_one: bool,
    pub mean_vector: Vec<f64>,
    /// Truncated SVD of `X − 1μᵀ`.
    pub spike: TruncatedSvd,
    pub total_energy: f64,
    pub mean_energy: f64,
    pub spike_energy: f64,
    pub tail_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    pub k_raised_to_one: bool,
    pub total_energy: f64,
    pub mean_energy: f64,
    pub spike_energy: f64,
    pub tail_energy: f64,
    pub mean_share: f64,
    pub spike_share: f64,
    pub tail_share: f64,
    /// `|total − (mean + spike + tail)| / total`.
    pub energy_residual: f64,
    pub mean_norm: f64,
    pub centered_singular_values: Vec<f64>,
}

impl Decomposition {
    pub fn mean_matrix(&self) -> Matrix {
        Matrix::broadcast_row(self.rows, &self.mean_vector)
    }

    pub fn spike_matrix(&self) -> Matrix {
        self.spike.reconstruct()
    }

    /// `X − 1μᵀ − X_spike`; `x` must be the matrix this was computed from.
    pub fn tail_matrix(&self, x: &Matrix) -> Result<Matrix> {
        self.check_source(x)?;
        center(x).sub(&self.spike_matrix())
    }

    pub fn energy_sum(&self) -> f64 {
        self.mean_energy + self.spike_energy + self.tail_energy
    }

    pub fn summary(&self) -> EnergySummary {
        let total = self.total_energy;
        let share = |e: f64| if total > 0.0 { e / total } else { 0.0 };
        EnergySummary {
            rows: self.rows,
            cols: self.cols,
            k: self.k,
            k_raised_to_one: self.k_raised_to_one,
            total_energy: total,
            mean_energy: self.mean_energy,
            spike_energy: self.spike_energy,
            tail_energy: self.tail_energy,
            mean_share: share(self.mean_energy),
            spike_share: share(self.spike_energy),
            tail_share: share(self.tail_energy),
            energy_residual: if total > 0.0 { (total - self.energy_sum()).abs() / total } else { 0.0 },
            mean_norm: linalg::norm(&self.mean_vector),
            centered_singular_values: self.spike.s.clone(),
        }
    }

    fn check_source(&self, x: &Matrix) -> Result<()> {
        if x.shape() != (self.rows, self.cols) {
            return Err(Error::DimensionMismatch {
                op: "decomposition",
                detail: format!("source {:?} vs decomposition {:?}", x.shape(), (self.rows, self.cols)),
            });
        }
        Ok(())
    }
}

pub fn decompose(x: &Matrix, k: Option<usize>, seed: u64) -> Result<Decomposition> {
    let (l, m) = x.shape();
    if l < 2 || m < 2 {
        return Err(contract(format!("decompose needs at least 2x2, got {l}x{m}")));
    }
    let raised = k.is_none() && m / 100 == 0;
    let k = k.unwrap_or_else(|| default_rank(m));
    if k == 0 || k > l.min(m) {
        return Err(contract(format!("spike rank {k} outside 1..={}", l.min(m))));
    }
    let mu = column_mean(x);
    let centered = center(x);
    let spike = truncated_svd(&centered, k, seed)?;
    let spike_m = spike.reconstruct();
    let tail = centered.sub(&spike_m)?;
    let mean_energy = l as f64 * mu.iter().map(|v| v * v).sum::<f64>();
    Ok(Decomposition {
        rows: l,
        cols: m,
        k,
        k_raised_to_one: raised,
        total_energy: x.frobenius_sq(),
        mean_energy,
        spike_energy: spike_m.frobenius_sq(),
        tail_energy: tail.frobenius_sq(),
        mean_vector: mu,
        spike,
    })
}

/// Squared-magnitude shares of one outlier entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierShare {
    pub row: usize,
    pub col: usize,
    pub value: f64,
    pub mean: f64,
    pub spike: f64,
    pub tail: f64,
    /// `1 − (mean + spike + tail)`: the elementwise cross terms.
    pub cross_term: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Shares {
    pub mean: f64,
    pub spike: f64,
    pub tail: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    /// `max(1, ⌊0.001·l·m⌋)`.
    pub target_count: usize,
    /// Fewer than `target_count` only when the matrix has too few nonzero entries.
    pub outlier_count: usize,
    pub aggregate: Shares,
    pub mean_abs_cross_term: f64,
    pub max_abs_cross_term: f64,
    pub entries: Vec<OutlierShare>,
}

pub fn outlier_count(rows: usize, cols: usize) -> usize {
    ((rows * cols) as f64 * 0.001).floor().max(1.0) as usize
}

/// Shares of mean, spike and tail in the top 0.1% entries by `|X_ij|`.
///
/// Ties are broken by `(i, j)` order; exact zeros never enter the set.
pub fn attribute_outliers(x: &Matrix, d: &Decomposition) -> Result<AttributionReport> {
    d.check_source(x)?;
    let (l, m) = x.shape();
    let target = outlier_count(l, m);
    let mut order: Vec<usize> = (0..l * m).filter(|&f| x.data()[f] != 0.0).collect();
    order.sort_by(|&a, &b| x.data()[b].abs().total_cmp(&x.data()[a].abs()).then(a.cmp(&b)));
    order.truncate(target);

    let entries: Vec<OutlierShare> = order
        .into_iter()
        .map(|f| {
            let (i, j) = (f / m, f % m);
            let value = x.data()[f];
            let mean_part = d.mean_vector[j];
            let spike_part = d.spike.entry(i, j);
            let tail_part = value - mean_part - spike_part;
            let v2 = value * value;
            let (mean, spike, tail) = (mean_part.powi(2) / v2, spike_part.powi(2) / v2, tail_part.powi(2) / v2);
            OutlierShare { row: i, col: j, value, mean, spike, tail, cross_term: 1.0 - (mean + spike + tail) }
        })
        .collect();

    let n = entries.len().max(1) as f64;
    let aggregate = Shares {
        mean: entries.iter().map(|e| e.mean).sum::<f64>() / n,
        spike: entries.iter().map(|e| e.spike).sum::<f64>() / n,
        tail: entries.iter().map(|e| e.tail).sum::<f64>() / n,
    };
    Ok(AttributionReport {
        target_count: target,
        outlier_count: entries.len(),
        aggregate,
        mean_abs_cross_term: entries.iter().map(|e| e.cross_term.abs()).sum::<f64>() / n,
        max_abs_cross_term: entries.iter().map(|e| e.cross_term.abs()).fold(0.0, f64::max),
        entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanDiagnostics {
    /// `‖μ‖ / sqrt(‖X‖_F² / l)`.
    pub r_ratio: f64,
    pub mean_norm: f64,
    /// Share of tokens whose projection on `μ̂` has the majority sign.
    pub projection_sign_fraction: f64,
    /// `α_i = (σ_i / l) u_iᵀ1` for the supplied (uncentered) SVD modes.
    pub alpha: Vec<f64>,
    /// `|μ̂ᵀ v₁|` against the top right singular vector of the uncentered matrix.
    pub cos_mu_v1: f64,
    pub singular_values: Vec<f64>,
}

/// Divisor `N` inside `sqrt(‖X‖_F² / N)` for the `R` ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RNormalization {
    /// `N = l`: mean squared row norm.
    #[default]
    PerToken,
    /// `N = l·m`: mean squared entry.
    PerEntry,
}

impl std::str::FromStr for RNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_token" | "per-token" | "token" => Ok(Self::PerToken),
            "per_entry" | "per-entry" | "entry" => Ok(Self::PerEntry),
            _ => Err(contract(format!("unknown R normalization {s:?} (per_token, per_entry)"))),
        }
    }
}

/// `‖μ‖₂ / sqrt(‖X‖_F² / l)`, with 0 for the zero matrix.
pub fn r_ratio(x: &Matrix) -> f64 {
    r_ratio_with(x, RNormalization::PerToken)
}

pub fn r_ratio_with(x: &Matrix, norm: RNormalization) -> f64 {
    let n = match norm {
        RNormalization::PerToken => x.rows(),
        RNormalization::PerEntry => x.rows() * x.cols(),
    };
    let energy = x.frobenius_sq() / n as f64;
    if energy == 0.0 {
        return 0.0;
    }
    linalg::norm(&column_mean(x)) / energy.sqrt()
}

/// Mean-direction statistics; `svd` must factor `x` itself (not the centered
/// matrix), since the α-expansion and `v₁` alignment refer to `X`.
pub fn mean_diagnostics(x: &Matrix, svd: &TruncatedSvd) -> Result<MeanDiagnostics> {
    let (l, m) = x.shape();
    if svd.u.rows() != l || svd.v.rows() != m || svd.k == 0 {
        return Err(Error::DimensionMismatch {
            op: "mean_diagnostics",
            detail: format!("svd factors {}x{} / {}x{} for {l}x{m}", svd.u.rows(), svd.k, svd.v.rows(), svd.k),
        });
    }
    let mu = column_mean(x);
    let mu_norm = linalg::norm(&mu);

    let (sign_fraction, cos) = if mu_norm > 0.0 {
        let hat: Vec<f64> = mu.iter().map(|v| v / mu_norm).collect();
        let nonneg = (0..l).filter(|&i| linalg::dot(x.row(i), &hat) >= 0.0).count();
        let frac = nonneg.max(l - nonneg) as f64 / l as f64;
        let v1 = svd.v.col(0);
        (frac, linalg::dot(&hat, &v1).abs().min(1.0))
    } else {
        (0.5, 0.0)
    };

    let alpha = (0..svd.k)
        .map(|t| svd.s[t] / l as f64 * (0..l).map(|i| svd.u.get(i, t)).sum::<f64>())
        .collect();

    Ok(MeanDiagnostics {
        r_ratio: r_ratio(x),
        mean_norm: mu_norm,
        projection_sign_fraction: sign_fraction,
        alpha,
        cos_mu_v1: cos,
        singular_values: svd.s.clone(),
    })
}

/// [`mean_diagnostics`] on a rank-`k` SVD of the uncentered matrix.
pub fn diagnose(x: &Matrix, k: usize, seed: u64) -> Result<MeanDiagnostics> {
    let svd = truncated_svd(x, k, seed)?;
    mean_diagnostics(x, &svd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::thin_svd;
    use crate::rng;
    use crate::synth;

    #[test]
    fn default_rank_rule() {
        assert_eq!(default_rank(64), 1);
        assert_eq!(default_rank(128), 1);
        assert_eq!(default_rank(256), 2);
        assert_eq!(default_rank(4096), 40);
    }

    #[test]
    fn pure_mean_has_no_spike_or_tail() {
        let x = Matrix::broadcast_row(10, &[3.0, -1.0, 0.5, 2.0]);
        let d = decompose(&x, None, 0).unwrap();
        assert!(d.k_raised_to_one);
        assert!(d.spike_energy < 1e-20 && d.tail_energy < 1e-20);
        assert!((d.mean_energy - x.frobenius_sq()).abs() <= 1e-12 * x.frobenius_sq());
    }

    #[test]
    fn centered_rank_one_has_no_tail() {
        let a = [1.0, -1.0, 2.0, -2.0, 0.5, -0.5];
        let x = Matrix::outer(&a, &[0.3, -1.2, 0.8]);
        let d = decompose(&x, Some(1), 0).unwrap();
        assert!(d.tail_energy <= 1e-20 * x.frobenius_sq().max(1.0));
        assert!(d.mean_energy < 1e-24);
    }

    #[test]
    fn decompose_preconditions() {
        assert!(decompose(&Matrix::zeros(1, 5), None, 0).is_err());
        assert!(decompose(&Matrix::zeros(5, 4), Some(5), 0).is_err());
        assert!(decompose(&Matrix::zeros(5, 4), Some(0), 0).is_err());
    }

    #[test]
    fn attribution_count_and_tie_order() {
        assert_eq!(outlier_count(10, 10), 1);
        assert_eq!(outlier_count(1000, 10), 10);
        let x = Matrix::new(2, 3, vec![0.0, 5.0, -5.0, 1.0, 5.0, 0.0]).unwrap();
        let d = decompose(&x, Some(1), 0).unwrap();
        let rep = attribute_outliers(&x, &d).unwrap();
        assert_eq!(rep.outlier_count, 1);
        assert_eq!((rep.entries[0].row, rep.entries[0].col), (0, 1));
    }

    #[test]
    fn zero_entries_never_count_as_outliers() {
        let x = Matrix::new(2, 2, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let d = decompose(&x, Some(1), 0).unwrap();
        let rep = attribute_outliers(&x, &d).unwrap();
        assert_eq!(rep.outlier_count, 0);
        assert_eq!(rep.target_count, 1);
    }

    #[test]
    fn pure_mean_attribution() {
        let x = Matrix::broadcast_row(2000, &[4.0, -3.0, 1.0, 0.25]);
        let d = decompose(&x, None, 0).unwrap();
        let rep = attribute_outliers(&x, &d).unwrap();
        assert_eq!(rep.outlier_count, 8);
        assert!((rep.aggregate.mean - 1.0).abs() < 1e-12);
        assert!(rep.aggregate.spike < 1e-12 && rep.aggregate.tail < 1e-12);
    }

    #[test]
    fn pure_spike_attribution() {
        let x = synth::centered_rank_one(400, 50, 3.0, 1);
        let d = decompose(&x, Some(1), 0).unwrap();
        let rep = attribute_outliers(&x, &d).unwrap();
        assert!((rep.aggregate.spike - 1.0).abs() < 1e-9, "{:?}", rep.aggregate);
    }

    #[test]
    fn mismatched_source_is_rejected() {
        let x = Matrix::broadcast_row(4, &[1.0, 2.0]);
        let d = decompose(&x, Some(1), 0).unwrap();
        assert!(attribute_outliers(&Matrix::zeros(3, 2), &d).is_err());
    }

    #[test]
    fn coherent_mean_diagnostics() {
        let mut r = rng::stream(5, 0);
        let mu = [2.0, -1.0, 0.5, 3.0, 1.0];
        let mut x = Matrix::gaussian(300, 5, 1e-3, &mut r);
        x.add_row_broadcast(&mu);
        let diag = diagnose(&x, 1, 0).unwrap();
        assert_eq!(diag.projection_sign_fraction, 1.0);
        assert!(diag.cos_mu_v1 > 0.999_99);
        assert!(diag.r_ratio > 0.999);
    }

    #[test]
    fn null_diagnostics() {
        let mut r = rng::stream(6, 0);
        let x = Matrix::gaussian(2000, 40, 1.0, &mut r);
        let diag = diagnose(&x, 1, 0).unwrap();
        assert!(diag.r_ratio < 3.0 / (2000f64).sqrt(), "R = {}", diag.r_ratio);
        assert!((diag.projection_sign_fraction - 0.5).abs() < 0.1);
    }

    #[test]
    fn alpha_expansion_recovers_mean() {
        let mut r = rng::stream(8, 0);
        let mut x = Matrix::gaussian(12, 7, 1.0, &mut r);
        x.add_row_broadcast(&[1.0, 0.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        let svd = thin_svd(&x);
        let diag = mean_diagnostics(&x, &svd).unwrap();
        let mu = column_mean(&x);
        for j in 0..7 {
            let rebuilt: f64 = (0..svd.k).map(|t| diag.alpha[t] * svd.v.get(j, t)).sum();
            assert!((rebuilt - mu[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_mean_reports_zero_cosine() {
        let x = Matrix::new(2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let diag = diagnose(&x, 1, 0).unwrap();
        assert_eq!(diag.cos_mu_v1, 0.0);
        assert_eq!(diag.projection_sign_fraction, 0.5);
    }
}
