//! Monte Carlo checks of the extreme-value bounds for `x = μ + σ·ε`.
//!
//! Every estimate is compared against its bound with a slack of four
//! binomial (or sample) standard errors.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::normal::{normal_cdf, normal_upper_quantile};
use crate::error::{contract, Result};
use crate::rng;

/// Trials per independent RNG stream.
const CHUNK: usize = 2048;
/// Standard errors of slack allowed between an estimate and its bound.
pub const MC_SLACK: f64 = 4.0;

const TAG_ENTRY: u64 = 0x7431;
const TAG_ROW: u64 = 0x7432;
const TAG_MAX: u64 = 0x7433;

/// Zero-mean, unit-proxy noise law for `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Gaussian,
    Rademacher,
    /// Uniform on `[-√3, √3]` (unit variance).
    Uniform,
}

impl std::str::FromStr for NoiseDistribution {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "rademacher" => Ok(Self::Rademacher),
            "uniform" => Ok(Self::Uniform),
            other => Err(format!("unknown distribution `{other}` (gaussian|rademacher|uniform)")),
        }
    }
}

impl NoiseDistribution {
    pub fn sample(self, r: &mut rng::Rng) -> f64 {
        match self {
            Self::Gaussian => StandardNormal.sample(r),
            Self::Rademacher => {
                if r.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::Uniform => 3f64.sqrt() * r.random_range(-1.0..=1.0),
        }
    }
}

/// One channel (or row) of `l` entries `μ + σ ε_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub mu: f64,
    pub sigma: f64,
    pub l: usize,
    pub distribution: NoiseDistribution,
}

impl TailModel {
    pub fn gaussian(mu: f64, sigma: f64, l: usize) -> Self {
        Self { mu, sigma, l, distribution: NoiseDistribution::Gaussian }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(contract(format!("need finite mu and sigma > 0, got mu={} sigma={}", self.mu, self.sigma)));
        }
        if self.l == 0 {
            return Err(contract("row length l must be positive"));
        }
        Ok(())
    }

    fn with_mu(self, mu: f64) -> Self {
        Self { mu, ..self }
    }

    fn sample(&self, r: &mut rng::Rng) -> f64 {
        self.mu + self.sigma * self.distribution.sample(r)
    }
}

/// Whether an estimate was checked against its bound, and how it fared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Violated,
    /// Preconditions of the bound are not met; nothing was asserted.
    OutOfRegime,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self != Self::Violated
    }

    fn lower(estimate: f64, bound: f64, stderr: f64) -> Self {
        if estimate >= bound - MC_SLACK * stderr {
            Self::Holds
        } else {
            Self::Violated
        }
    }

    fn upper(estimate: f64, bound: f64, stderr: f64) -> Self {
        if estimate <= bound + MC_SLACK * stderr {
            Self::Holds
        } else {
            Self::Violated
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceStats {
    pub threshold: f64,
    pub trials: usize,
    /// Per-entry probability estimate of `|x| > t`.
    pub empirical_prob: f64,
    pub mc_stderr: f64,
    /// Per-entry probability bound (lower for the mean regime, upper for
    /// the variance regime).
    pub theoretical_bound: f64,
    /// Mean of `#{i : |x_i| > t}` over rows of length `l`.
    pub empirical_count_mean: f64,
    pub empirical_count_stderr: f64,
    pub count_bound: f64,
    pub verdict: Verdict,
}

fn chunk_sizes(trials: usize) -> impl IndexedParallelIterator<Item = (usize, usize)> {
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks).into_par_iter().map(move |c| (c, CHUNK.min(trials - c * CHUNK)))
}

fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Single-entry bound `P(|x| > t) ≥ 1 − 2exp(−(|μ|−t)²/(2σ²))` for
/// `t < |μ|`. Thresholds outside that regime are reported, not asserted.
pub fn verify_extreme_dominance(model: &TailModel, t: f64, trials: usize, seed: u64) -> Result<ExceedanceStats> {
    model.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(contract(format!("threshold must be finite and ≥ 0, got {t}")));
    }
    if trials < 10_000 {
        return Err(contract(format!("need at least 10000 trials, got {trials}")));
    }
    let hits: u64 = chunk_sizes(trials)
        .map(|(c, n)| {
            let mut r = rng::stream(seed, rng::mix(&[TAG_ENTRY, c as u64]));
            (0..n).filter(|_| model.sample(&mut r).abs() > t).count() as u64
        })
        .sum();
    let p = hits as f64 / trials as f64;
    let se = binomial_stderr(p, trials);
    let gap = model.mu.abs() - t;
    let bound = 1.0 - 2.0 * (-gap * gap / (2.0 * model.sigma * model.sigma)).exp();
    let l = model.l as f64;
    let verdict = if t < model.mu.abs() { Verdict::lower(p, bound, se) } else { Verdict::OutOfRegime };
    Ok(ExceedanceStats {
        threshold: t,
        trials,
        empirical_prob: p,
        mc_stderr: se,
        theoretical_bound: bound,
        empirical_count_mean: l * p,
        empirical_count_stderr: l * se,
        count_bound: l * bound,
        verdict,
    })
}

struct RowCounts {
    mean: f64,
    stderr: f64,
}

fn row_exceedance(model: &TailModel, t: f64, trials: usize, seed: u64, tag: u64) -> RowCounts {
    let (s1, s2) = chunk_sizes(trials)
        .map(|(c, n)| {
            let mut r = rng::stream(seed, rng::mix(&[tag, c as u64]));
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for _ in 0..n {
                let k = (0..model.l).filter(|_| model.sample(&mut r).abs() > t).count() as f64;
                s1 += k;
                s2 += k * k;
            }
            (s1, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = trials as f64;
    let mean = s1 / n;
    let var = if trials > 1 { ((s2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    RowCounts { mean, stderr: (var / n).sqrt() }
}

/// Row-count bounds on `C = #{i : |x_i| > t}`. Returns
/// `(mean regime, variance regime)`:
/// `E[C] ≥ l(1 − 2exp(−(|μ|−t)²/(2σ²)))` with `model.mu`, and
/// `E[C] ≤ 2l·exp(−t²/(2σ²))` with the same noise and `μ = 0`.
pub fn verify_dense_amplification(
    model: &TailModel,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<(ExceedanceStats, ExceedanceStats)> {
    model.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(contract(format!("threshold must be finite and ≥ 0, got {t}")));
    }
    if trials < 1_000 {
        return Err(contract(format!("need at least 1000 row trials, got {trials}")));
    }
    let l = model.l as f64;
    let s2 = 2.0 * model.sigma * model.sigma;

    let mean_regime = if t < model.mu.abs() {
        let rc = row_exceedance(model, t, trials, seed, rng::mix(&[TAG_ROW, 0]));
        let gap = model.mu.abs() - t;
        let bound = 1.0 - 2.0 * (-gap * gap / s2).exp();
        ExceedanceStats {
            threshold: t,
            trials,
            empirical_prob: rc.mean / l,
            mc_stderr: rc.stderr / l,
            theoretical_bound: bound,
            empirical_count_mean: rc.mean,
            empirical_count_stderr: rc.stderr,
            count_bound: l * bound,
            verdict: Verdict::lower(rc.mean, l * bound, rc.stderr),
        }
    } else {
        ExceedanceStats {
            threshold: t,
            trials: 0,
            empirical_prob: f64::NAN,
            mc_stderr: f64::NAN,
            theoretical_bound: f64::NAN,
            empirical_count_mean: f64::NAN,
            empirical_count_stderr: f64::NAN,
            count_bound: f64::NAN,
            verdict: Verdict::OutOfRegime,
        }
    };

    let centered = model.with_mu(0.0);
    let rc = row_exceedance(&centered, t, trials, seed, rng::mix(&[TAG_ROW, 1]));
    let bound = 2.0 * (-t * t / s2).exp();
    let variance_regime = ExceedanceStats {
        threshold: t,
        trials,
        empirical_prob: rc.mean / l,
        mc_stderr: rc.stderr / l,
        theoretical_bound: bound,
        empirical_count_mean: rc.mean,
        empirical_count_stderr: rc.stderr,
        count_bound: l * bound,
        verdict: Verdict::upper(rc.mean, l * bound, rc.stderr),
    };
    Ok((mean_regime, variance_regime))
}

/// `q_{l,δ} = σ Φ⁻¹((1−δ)^{1/l})`, the level a maximum of `l` i.i.d.
/// `N(0, σ²)` draws stays below with probability `1 − δ`.
pub fn q_l_delta(sigma: f64, l: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) || l == 0 {
        return Err(contract(format!("need delta in (0, 1) and l > 0, got delta={delta} l={l}")));
    }
    // 1 − (1−δ)^{1/l} without cancellation
    let upper = -((-delta).ln_1p() / l as f64).exp_m1();
    Ok(sigma * normal_upper_quantile(upper)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxStats {
    pub l: usize,
    pub delta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub trials: usize,
    pub q_l_delta: f64,
    /// `P(M ≥ |μ| + q_{l,δ})` for `M = maxᵢ |xᵢ|`.
    pub empirical_prob_above_mu_plus_q: f64,
    pub stderr_above_mu_plus_q: f64,
    /// Against the claimed level `1 − δ`.
    pub verdict_above_mu_plus_q: Verdict,
    /// Against `δ`, the level that `M ≥ |μ| + maxᵢ s·zᵢ` guarantees.
    pub verdict_above_mu_plus_q_provable: Verdict,
    /// `P(M ≥ |μ|)`.
    pub empirical_prob_above_mu: f64,
    pub stderr_above_mu: f64,
    /// `1 − 2^{−l}`, a lower bound on `P(M ≥ |μ|)`.
    pub prob_above_mu_closed_form: f64,
    /// Exact `1 − (½ − Φ(−2|μ|/σ))^l`.
    pub prob_above_mu_exact: f64,
    /// Two-sided check against `1 − 2^{−l}`; only asserted for `|μ| ≥ 3σ`,
    /// where it agrees with the exact value.
    pub verdict_above_mu: Verdict,
    /// `σ √(2 ln(2l/δ))`.
    pub variance_only_max_bound: f64,
    /// Fraction of centered rows whose maximum stays within that bound.
    pub frac_within_variance_bound: f64,
    pub stderr_within_variance_bound: f64,
    pub verdict_variance_bound: Verdict,
}

impl MaxStats {
    pub fn passed(&self) -> bool {
        self.verdict_above_mu_plus_q.passed() && self.verdict_above_mu.passed() && self.verdict_variance_bound.passed()
    }
}

fn row_maxima(model: &TailModel, trials: usize, seed: u64, tag: u64) -> Vec<f64> {
    let chunks = trials.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = CHUNK.min(trials - c * CHUNK);
            let mut r = rng::stream(seed, rng::mix(&[tag, c as u64]));
            (0..n).map(|_| (0..model.l).map(|_| model.sample(&mut r).abs()).fold(0.0, f64::max)).collect()
        })
        .collect();
    per_chunk.concat()
}

fn fraction(v: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    v.iter().filter(|&&m| pred(m)).count() as f64 / v.len() as f64
}

/// Gaussian row maxima `M = maxᵢ |μ + σ zᵢ|`:
/// (a) `P(M ≥ |μ| + q_{l,δ}) ≥ 1 − δ` as claimed, alongside the level `δ`,
/// (b) `P(M ≥ |μ|) = 1 − 2^{−l}`,
/// (c) for `μ = 0`, `P(M ≤ σ√(2 ln(2l/δ))) ≥ 1 − δ`.
pub fn verify_extreme_separation(model: &TailModel, delta: f64, trials: usize, seed: u64) -> Result<MaxStats> {
    model.validate()?;
    if model.distribution != NoiseDistribution::Gaussian {
        return Err(contract("maximum bounds are stated for Gaussian noise"));
    }
    if trials == 0 {
        return Err(contract("need at least one trial"));
    }
    let q = q_l_delta(model.sigma, model.l, delta)?;
    let mu = model.mu.abs();
    let l = model.l as f64;
    let n = trials;

    let maxima = row_maxima(model, trials, seed, rng::mix(&[TAG_MAX, 0]));

    let pa = fraction(&maxima, |m| m >= mu + q);
    let se_a = binomial_stderr(pa, n);

    let pb = fraction(&maxima, |m| m >= mu);
    let closed = 1.0 - 0.5f64.powf(l);
    let exact = 1.0 - (0.5 - normal_cdf(-2.0 * mu / model.sigma)).powf(l);
    let se_b = binomial_stderr(closed, n);
    let verdict_b = if mu >= 3.0 * model.sigma {
        if (pb - closed).abs() <= MC_SLACK * se_b {
            Verdict::Holds
        } else {
            Verdict::Violated
        }
    } else {
        Verdict::OutOfRegime
    };

    let centered =
        if model.mu == 0.0 { maxima } else { row_maxima(&model.with_mu(0.0), trials, seed, rng::mix(&[TAG_MAX, 1])) };
    let vbound = model.sigma * (2.0 * (2.0 * l / delta).ln()).sqrt();
    let pc = fraction(&centered, |m| m <= vbound);
    let se_c = binomial_stderr(pc, n);

    Ok(MaxStats {
        l: model.l,
        delta,
        mu: model.mu,
        sigma: model.sigma,
        trials,
        q_l_delta: q,
        empirical_prob_above_mu_plus_q: pa,
        stderr_above_mu_plus_q: se_a,
        verdict_above_mu_plus_q: Verdict::lower(pa, 1.0 - delta, se_a),
        verdict_above_mu_plus_q_provable: Verdict::lower(pa, delta, se_a),
        empirical_prob_above_mu: pb,
        stderr_above_mu: se_b,
        prob_above_mu_closed_form: closed,
        prob_above_mu_exact: exact,
        verdict_above_mu: verdict_b,
        variance_only_max_bound: vbound,
        frac_within_variance_bound: pc,
        stderr_within_variance_bound: se_c,
        verdict_variance_bound: Verdict::lower(pc, 1.0 - delta, se_c),
    })
}
