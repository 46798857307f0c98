"""Smoke test for the averis Python bindings.

Build and install first:

    pip install --no-build-isolation ./crates/python
    python python/smoke_test.py
"""

import math
import os
import tempfile

import numpy as np

import averis


def biased(rows, cols, scale, seed):
    rng = np.random.default_rng(seed)
    mu = rng.normal(0.0, scale, size=cols)
    return (mu + rng.normal(size=(rows, cols))).tolist()


def check_decomposition():
    x = biased(256, 64, 5.0, 0)
    d = averis.decompose(x)
    assert d.k == 1
    total = np.sum(np.square(x))
    parts = d.mean_energy + d.spike_energy + d.tail_energy
    assert abs(parts - total) <= 1e-10 * total
    recon = np.array(d.mean_matrix()) + np.array(d.spike_matrix()) + np.array(d.tail_matrix())
    assert np.allclose(recon, x, rtol=0, atol=1e-9)
    assert np.allclose(d.mean_vector, np.mean(x, axis=0), rtol=0, atol=1e-12)
    s = d.summary()
    assert s["mean_share"] > 0.9
    att = d.attribute_outliers()
    assert att["outlier_count"] == att["target_count"] > 0

    diag = averis.diagnose(x)
    assert diag["cos_mu_v1"] > 0.99
    r = averis.r_ratio(x)
    mu = np.mean(x, axis=0)
    expected = np.linalg.norm(mu) / math.sqrt(np.sum(np.square(x)) / len(x))
    assert abs(r - expected) <= 1e-12 * expected


def check_quantizer():
    x = biased(32, 64, 1.0, 1)
    ident = averis.QuantConfig(pass_through=True)
    assert averis.fake_quantize(x, ident) == x
    rtn = averis.QuantConfig(rounding="nearest")
    q = np.array(averis.fake_quantize(x, rtn))
    assert q.shape == (32, 64)
    assert np.max(np.abs(q - np.array(x))) <= 0.25 * np.max(np.abs(x))
    sr = averis.QuantConfig(seed=7)
    assert averis.fake_quantize(x, sr, 3) == averis.fake_quantize(x, sr, 3)
    assert averis.quantization_error(x, ident) == 0.0


def check_mean_residual():
    x = biased(128, 64, 5.0, 2)
    w = np.random.default_rng(3).normal(size=(64, 16)).tolist()
    d = np.random.default_rng(4).normal(size=(128, 16)).tolist()
    ident = averis.QuantConfig(pass_through=True)
    y = np.array(averis.averis_forward(x, w, ident))
    exact = np.array(x) @ np.array(w)
    assert np.max(np.abs(y - exact)) <= 1e-10 * np.max(np.abs(exact))
    out = averis.averis_backward(x, w, d, ident)
    gx, gw = np.array(out[0]), np.array(out[1])
    assert np.allclose(gx, np.array(d) @ np.array(w).T, rtol=1e-10, atol=1e-10)
    assert np.allclose(gw, np.array(x).T @ np.array(d), rtol=1e-10, atol=1e-9)
    errs = averis.compare_forward(x, w, averis.QuantConfig(rounding="nearest"))
    assert set(errs) >= {"averis", "vanilla", "averis_centered", "vanilla_centered"}


def check_extreme_stats():
    s = averis.verify_extreme_dominance(3.0, 1.0, 1.0, trials=20_000, seed=0)
    assert abs(s["theoretical_bound"] - (1 - 2 * math.exp(-2))) < 1e-12
    assert s["verdict"] == "holds"
    sep = averis.verify_extreme_separation(2.0, 1.0, 4, 0.05, trials=20_000, seed=0)
    assert sep["prob_above_mu_closed_form"] == 0.9375
    assert averis.q_l_delta(1.0, 1, 0.05) > 1.64
    reg = averis.nonlinearity_mean_regeneration("relu", trials=50_000, seed=0)
    assert abs(reg["estimate"] - 1 / math.sqrt(2 * math.pi)) < 5 * reg["stderr"]
    fit = averis.dimension_scaling_check()
    assert 0.45 <= fit["slope"] <= 0.55


def check_trainer():
    a = averis.train(mode="fullprec", steps=30, hidden=32, depth=2, seed=1)
    b = averis.train(mode="fp4_averis", steps=30, hidden=32, depth=2, seed=1, config=averis.QuantConfig(pass_through=True))
    assert len(a["losses"]) == 30 and not a["diverged"]
    assert max(abs(p - q) for p, q in zip(a["losses"], b["losses"])) <= 1e-8


def check_io():
    x = biased(7, 5, 1.0, 5)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "x.avts")
        averis.write_tensor(path, x)
        assert averis.read_tensor(path) == x
        averis.write_tensor(path, x, "f32")
        back = np.array(averis.read_tensor(path))
        assert np.array_equal(back, np.array(x, dtype=np.float32).astype(np.float64))
    try:
        averis.decompose(x, k=9)
    except ValueError:
        pass
    else:
        raise AssertionError("rank above min(l, m) accepted")


if __name__ == "__main__":
    for check in (check_decomposition, check_quantizer, check_mean_residual, check_extreme_stats, check_trainer, check_io):
        check()
        print(f"ok  {check.__name__}")
    print("all checks passed")
