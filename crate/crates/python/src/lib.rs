//! Python bindings. Matrices cross the boundary as lists of rows (any nested
//! sequence of floats is accepted, including 2-D numpy arrays); structured
//! results come back as plain dicts.

use ::averis::decomposition::{self, RNormalization};
use ::averis::extreme_stats::{self, NoiseDistribution, ScalingConfig, TailModel, ZipfConfig};
use ::averis::io::{self, DType};
use ::averis::linalg::Matrix;
use ::averis::mean_residual;
use ::averis::quantizer::{self, BlockLayout, Rounding, ScaleMode};
use ::averis::trainer::{self, Mode, ModelConfig, Task, ToyModel, TrainConfig};
use ::averis::{Activation, Error};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| PyValueError::new_err(e.to_string()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(py_err)
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Blockwise FP4 quantizer settings.
#[pyclass(module = "averis", from_py_object)]
#[derive(Clone)]
pub struct QuantConfig {
    inner: quantizer::QuantConfig,
}

#[pymethods]
impl QuantConfig {
    #[new]
    #[pyo3(signature = (rounding="stochastic", block_size=16, scale_mode="real", layout="row", seed=0, pass_through=false))]
    fn new(rounding: &str, block_size: usize, scale_mode: &str, layout: &str, seed: u64, pass_through: bool) -> PyResult<Self> {
        let base = if pass_through { quantizer::QuantConfig::pass_through() } else { quantizer::QuantConfig::default() };
        let inner = quantizer::QuantConfig {
            rounding: parse::<Rounding>(rounding)?,
            block_size,
            scale_mode: parse::<ScaleMode>(scale_mode)?,
            layout: parse::<BlockLayout>(layout)?,
            seed,
            ..base
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn block_size(&self) -> usize {
        self.inner.block_size
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn is_pass_through(&self) -> bool {
        self.inner.is_pass_through()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("QuantConfig({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

fn qcfg(cfg: Option<QuantConfig>) -> quantizer::QuantConfig {
    cfg.map(|c| c.inner).unwrap_or_default()
}

/// Mean + spike + tail split of an activation matrix.
#[pyclass(module = "averis")]
pub struct Decomposition {
    inner: decomposition::Decomposition,
    source: Matrix,
}

#[pymethods]
impl Decomposition {
    #[new]
    #[pyo3(signature = (x, k=None, seed=0))]
    fn new(x: Vec<Vec<f64>>, k: Option<usize>, seed: u64) -> PyResult<Self> {
        let source = matrix(x)?;
        let inner = decomposition::decompose(&source, k, seed).map_err(py_err)?;
        Ok(Self { inner, source })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn total_energy(&self) -> f64 {
        self.inner.total_energy
    }

    #[getter]
    fn mean_energy(&self) -> f64 {
        self.inner.mean_energy
    }

    #[getter]
    fn spike_energy(&self) -> f64 {
        self.inner.spike_energy
    }

    #[getter]
    fn tail_energy(&self) -> f64 {
        self.inner.tail_energy
    }

    #[getter]
    fn mean_vector(&self) -> Vec<f64> {
        self.inner.mean_vector.clone()
    }

    fn mean_matrix(&self) -> Vec<Vec<f64>> {
        self.inner.mean_matrix().to_rows()
    }

    fn spike_matrix(&self) -> Vec<Vec<f64>> {
        self.inner.spike_matrix().to_rows()
    }

    fn tail_matrix(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.tail_matrix(&self.source).map_err(py_err)?.to_rows())
    }

    fn summary(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.summary())
    }

    /// Per-outlier shares for the top 0.1% entries.
    fn attribute_outliers(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &decomposition::attribute_outliers(&self.source, &self.inner).map_err(py_err)?)
    }
}

#[pyfunction]
#[pyo3(signature = (x, k=None, seed=0))]
fn decompose(x: Vec<Vec<f64>>, k: Option<usize>, seed: u64) -> PyResult<Decomposition> {
    Decomposition::new(x, k, seed)
}

#[pyfunction]
#[pyo3(signature = (x, k=4, seed=0))]
fn diagnose(py: Python<'_>, x: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<Py<PyAny>> {
    to_py(py, &decomposition::diagnose(&matrix(x)?, k, seed).map_err(py_err)?)
}

#[pyfunction]
#[pyo3(signature = (x, normalization="per_token"))]
fn r_ratio(x: Vec<Vec<f64>>, normalization: &str) -> PyResult<f64> {
    Ok(decomposition::r_ratio_with(&matrix(x)?, parse::<RNormalization>(normalization)?))
}

/// Quantize then dequantize.
#[pyfunction]
#[pyo3(signature = (x, config=None, stream=0))]
fn fake_quantize(x: Vec<Vec<f64>>, config: Option<QuantConfig>, stream: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(quantizer::fake_quantize(&matrix(x)?, &qcfg(config), stream).map_err(py_err)?.to_rows())
}

#[pyfunction]
#[pyo3(signature = (x, config=None))]
fn quantization_error(x: Vec<Vec<f64>>, config: Option<QuantConfig>) -> PyResult<f64> {
    quantizer::quantization_error(&matrix(x)?, &qcfg(config)).map_err(py_err)
}

/// Mean-residual quantized `X W`.
#[pyfunction]
#[pyo3(signature = (x, w, config=None))]
fn averis_forward(x: Vec<Vec<f64>>, w: Vec<Vec<f64>>, config: Option<QuantConfig>) -> PyResult<Vec<Vec<f64>>> {
    Ok(mean_residual::forward(&matrix(x)?, &matrix(w)?, &qcfg(config)).map_err(py_err)?.to_rows())
}

/// Direct quantized `X W`.
#[pyfunction]
#[pyo3(signature = (x, w, config=None))]
fn vanilla_forward(x: Vec<Vec<f64>>, w: Vec<Vec<f64>>, config: Option<QuantConfig>) -> PyResult<Vec<Vec<f64>>> {
    Ok(mean_residual::forward_vanilla(&matrix(x)?, &matrix(w)?, &qcfg(config)).map_err(py_err)?.to_rows())
}

/// `(grad_input, grad_weight)` of the mean-residual GeMM.
#[pyfunction]
#[pyo3(signature = (x, w, d, config=None))]
#[allow(clippy::type_complexity)]
fn averis_backward(
    x: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    config: Option<QuantConfig>,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let g = mean_residual::backward(&matrix(x)?, &matrix(w)?, &matrix(d)?, &qcfg(config)).map_err(py_err)?;
    Ok((g.grad_input.to_rows(), g.grad_weight.to_rows()))
}

#[pyfunction]
#[pyo3(signature = (x, w, config=None))]
fn compare_forward(py: Python<'_>, x: Vec<Vec<f64>>, w: Vec<Vec<f64>>, config: Option<QuantConfig>) -> PyResult<Py<PyAny>> {
    to_py(py, &mean_residual::compare_forward(&matrix(x)?, &matrix(w)?, &qcfg(config)).map_err(py_err)?)
}

fn tail_model(mu: f64, sigma: f64, l: usize, distribution: &str) -> PyResult<TailModel> {
    Ok(TailModel { mu, sigma, l, distribution: parse::<NoiseDistribution>(distribution)? })
}

#[pyfunction]
#[pyo3(signature = (mu, sigma, t, trials=100_000, seed=0, distribution="gaussian"))]
fn verify_extreme_dominance(py: Python<'_>, mu: f64, sigma: f64, t: f64, trials: usize, seed: u64, distribution: &str) -> PyResult<Py<PyAny>> {
    let m = tail_model(mu, sigma, 1, distribution)?;
    to_py(py, &extreme_stats::verify_extreme_dominance(&m, t, trials, seed).map_err(py_err)?)
}

/// `(mean_regime, variance_regime)` row-count checks.
#[pyfunction]
#[pyo3(signature = (mu, sigma, t, l=1024, trials=1_000, seed=0, distribution="gaussian"))]
#[allow(clippy::too_many_arguments)]
fn verify_dense_amplification(
    py: Python<'_>,
    mu: f64,
    sigma: f64,
    t: f64,
    l: usize,
    trials: usize,
    seed: u64,
    distribution: &str,
) -> PyResult<(Py<PyAny>, Py<PyAny>)> {
    let m = tail_model(mu, sigma, l, distribution)?;
    let (a, b) = extreme_stats::verify_dense_amplification(&m, t, trials, seed).map_err(py_err)?;
    Ok((to_py(py, &a)?, to_py(py, &b)?))
}

#[pyfunction]
#[pyo3(signature = (mu, sigma, l, delta, trials=100_000, seed=0))]
fn verify_extreme_separation(py: Python<'_>, mu: f64, sigma: f64, l: usize, delta: f64, trials: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let m = TailModel::gaussian(mu, sigma, l);
    to_py(py, &extreme_stats::verify_extreme_separation(&m, delta, trials, seed).map_err(py_err)?)
}

#[pyfunction]
fn q_l_delta(sigma: f64, l: usize, delta: f64) -> PyResult<f64> {
    extreme_stats::q_l_delta(sigma, l, delta).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (activation, trials=200_000, seed=0))]
fn nonlinearity_mean_regeneration(py: Python<'_>, activation: &str, trials: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let phi = parse::<Activation>(activation)?;
    to_py(py, &extreme_stats::nonlinearity_mean_regeneration(phi, trials, seed).map_err(py_err)?)
}

#[pyfunction]
#[pyo3(signature = (h_values=None, mu_bar=0.1, sigma=1.0, tokens=256, trials=8, seed=0))]
fn dimension_scaling_check(
    py: Python<'_>,
    h_values: Option<Vec<usize>>,
    mu_bar: f64,
    sigma: f64,
    tokens: usize,
    trials: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let cfg = ScalingConfig { h_values: h_values.unwrap_or_else(|| ScalingConfig::default().h_values), mu_bar, sigma, tokens, trials };
    to_py(py, &extreme_stats::dimension_scaling_check(&cfg, seed).map_err(py_err)?)
}

#[pyfunction]
#[pyo3(signature = (vocab_size=1000, exponent=1.0, embed_dim=256, aligned_top=10, aligned_strength=2.0, seed=0))]
fn zipf_embedding_mean(
    py: Python<'_>,
    vocab_size: usize,
    exponent: f64,
    embed_dim: usize,
    aligned_top: usize,
    aligned_strength: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let cfg = ZipfConfig { vocab_size, exponent, embed_dim, aligned_top, aligned_strength };
    to_py(py, &extreme_stats::zipf_embedding_mean(&cfg, seed).map_err(py_err)?)
}

/// One toy training run; returns the run log as a dict.
#[pyfunction]
#[pyo3(signature = (mode="fp4_averis", task="teacher_regression_biased", steps=2000, seed=0, lr=None, hidden=128, depth=4, quantize_grads=true, config=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    mode: &str,
    task: &str,
    steps: usize,
    seed: u64,
    lr: Option<f64>,
    hidden: usize,
    depth: usize,
    quantize_grads: bool,
    config: Option<QuantConfig>,
) -> PyResult<Py<PyAny>> {
    let base = TrainConfig::default();
    let cfg = TrainConfig {
        mode: parse::<Mode>(mode)?,
        task: parse::<Task>(task)?,
        steps,
        seed,
        lr: lr.unwrap_or(base.lr),
        quantize_grads,
        quant: config.map(|c| c.inner).unwrap_or(base.quant),
        ..base
    };
    let model = ToyModel::new(ModelConfig { hidden, depth, ..Default::default() }, seed).map_err(py_err)?;
    let (_, log) = py.detach(|| trainer::train(&model, &cfg)).map_err(py_err)?;
    to_py(py, &log)
}

#[pyfunction]
#[pyo3(signature = (path, x, dtype="f64"))]
fn write_tensor(path: &str, x: Vec<Vec<f64>>, dtype: &str) -> PyResult<()> {
    io::write_tensor(path, &matrix(x)?, parse::<DType>(dtype)?).map_err(py_err)
}

#[pyfunction]
fn read_tensor(path: &str) -> PyResult<Vec<Vec<f64>>> {
    Ok(io::read_tensor(path).map_err(py_err)?.to_rows())
}

#[pymodule]
fn averis(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<QuantConfig>()?;
    m.add_class::<Decomposition>()?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(diagnose, m)?)?;
    m.add_function(wrap_pyfunction!(r_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(fake_quantize, m)?)?;
    m.add_function(wrap_pyfunction!(quantization_error, m)?)?;
    m.add_function(wrap_pyfunction!(averis_forward, m)?)?;
    m.add_function(wrap_pyfunction!(vanilla_forward, m)?)?;
    m.add_function(wrap_pyfunction!(averis_backward, m)?)?;
    m.add_function(wrap_pyfunction!(compare_forward, m)?)?;
    m.add_function(wrap_pyfunction!(verify_extreme_dominance, m)?)?;
    m.add_function(wrap_pyfunction!(verify_dense_amplification, m)?)?;
    m.add_function(wrap_pyfunction!(verify_extreme_separation, m)?)?;
    m.add_function(wrap_pyfunction!(q_l_delta, m)?)?;
    m.add_function(wrap_pyfunction!(nonlinearity_mean_regeneration, m)?)?;
    m.add_function(wrap_pyfunction!(dimension_scaling_check, m)?)?;
    m.add_function(wrap_pyfunction!(zipf_embedding_mean, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(write_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(read_tensor, m)?)?;
    Ok(())
}
