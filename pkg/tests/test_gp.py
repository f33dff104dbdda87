import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtrgp.errors import NumericalError
from dtrgp.gp import (
    KernelSpec,
    TuneConfig,
    _factor,
    _pack,
    gp_fit,
    gp_predict,
    gp_predict_many,
    kernel_eval,
    kernel_matrix,
    log_marginal_likelihood,
    nlml_and_grad,
    tune_hyperparameters,
    GpModel,
)
from scipy.stats import multivariate_normal


def dense_condition(kernel, x, y, q, noise):
    """Condition the joint Gaussian of (targets, f(q)) directly."""
    pts = np.vstack([x, q[None, :]])
    joint = kernel_matrix(kernel, pts, pts)
    n = len(y)
    joint[:n, :n] += np.diag(noise)
    s11, s12, s22 = joint[:n, :n], joint[:n, n], joint[n, n]
    w = np.linalg.solve(s11, s12)
    return float(w @ y), float(s22 - s12 @ w)


def test_kernel_examples():
    assert kernel_eval(KernelSpec(1.5, 1.0, (1.0,)), [0.3], [0.3]) == pytest.approx(1.0)
    expected = 2 * (1 + math.sqrt(3)) * math.exp(-math.sqrt(3))
    assert kernel_eval(KernelSpec(1.5, 2.0, (1.0,)), [0.0], [1.0]) == pytest.approx(expected, abs=1e-12)
    # hand value of the closed form: 2 * 2.7320508 * 0.1769212 = 0.96672
    assert expected == pytest.approx(0.96672, abs=1e-5)
    assert kernel_eval(KernelSpec(0.5, 1.0, (1.0,)), [0.0], [1.0]) == pytest.approx(math.exp(-1), abs=1e-12)


def test_kernel_argument_errors():
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec(1.5, 1.0, (1.0, 1.0)), [0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        KernelSpec(1.5, 1.0, (0.0,))
    with pytest.raises(ValueError):
        KernelSpec(1.0, 1.0, (1.0,))


@given(
    st.sampled_from([0.5, 1.5, 2.5]),
    st.floats(0.1, 5.0),
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
)
def test_kernel_symmetric_and_bounded(nu, sf2, a, b):
    k = KernelSpec(nu, sf2, (0.7, 1.3))
    assert kernel_eval(k, a, b) == pytest.approx(kernel_eval(k, b, a), abs=1e-14)
    assert kernel_eval(k, a, b) <= sf2 + 1e-12


def test_single_pair_interpolates():
    m = gp_fit(KernelSpec(1.5, 1.0, (1.0,)), [((0.5,), 1.0)], center=False)
    p = gp_predict(m, [0.5])
    assert p.mean == pytest.approx(1.0)
    assert p.variance == pytest.approx(0.0, abs=1e-12)


def test_duplicates_with_noise_fit():
    m = gp_fit(KernelSpec(1.5, 1.0, (1.0,), 0.1), [((0.2,), 1.0), ((0.2,), 2.0)])
    assert np.isfinite(gp_predict(m, [0.2]).mean)


def test_scalar_predictive_by_hand():
    m = gp_fit(KernelSpec(0.5, 1.0, (1.0,)), [((0.0,), 1.0)], center=False)
    p = gp_predict(m, [1.0])
    assert p.mean == pytest.approx(math.exp(-1), abs=1e-12)
    assert p.variance == pytest.approx(1 - math.exp(-2), abs=1e-12)


def test_matches_dense_conditioning_at_training_points(rng):
    k = KernelSpec(2.5, 0.8, (0.3, 0.6), 1e-3)
    x = rng.uniform(size=(5, 2))
    y = rng.normal(size=5)
    m = gp_fit(k, x, y, center=False)
    for xi in x:
        mu, var = dense_condition(k, x, y, xi, np.full(5, 1e-3))
        p = gp_predict(m, xi)
        assert p.mean == pytest.approx(mu, abs=1e-8)
        assert p.variance == pytest.approx(var, abs=1e-8)


def test_jitter_ladder_reports_failure():
    with pytest.raises(NumericalError, match="1e-06"):
        _factor(-np.eye(3))


def test_negative_variance_clamped_and_noiseless_training_variance():
    k = KernelSpec(1.5, 1.0, (0.5,))
    x = np.linspace(0, 1, 8)[:, None]
    m = gp_fit(k, x, np.sin(x[:, 0]), center=False)
    _, var = gp_predict_many(m, x)
    assert np.all(var >= 0) and np.all(var <= 1e-8)


@given(st.integers(0, 10_000))
def test_adding_point_never_increases_variance(seed):
    r = np.random.default_rng(seed)
    k = KernelSpec(1.5, 1.0, (0.4, 0.4), 1e-4)
    x = r.uniform(size=(7, 2))
    y = r.normal(size=7)
    q = r.uniform(size=(4, 2))
    _, v_small = gp_predict_many(gp_fit(k, x[:6], y[:6]), q)
    _, v_big = gp_predict_many(gp_fit(k, x, y), q)
    assert np.all(v_big <= v_small + 1e-9)


def test_lml_examples(rng):
    k = KernelSpec(1.5, 1.0, (1.0,))
    assert log_marginal_likelihood(k, [((0.0,), 0.0)]) == pytest.approx(-0.5 * math.log(2 * math.pi))
    x = rng.uniform(size=(6, 2))
    y = rng.normal(size=6)
    k2 = KernelSpec(1.5, 1.3, (0.5, 0.9), 0.05)
    cov = kernel_matrix(k2, x, x) + 0.05 * np.eye(6)
    assert log_marginal_likelihood(k2, x, y) == pytest.approx(
        multivariate_normal(np.zeros(6), cov).logpdf(y), abs=1e-8
    )
    # zero targets: only the log-determinant and constant remain
    zero = log_marginal_likelihood(k2, x, np.zeros(6))
    logdet = np.linalg.slogdet(cov)[1]
    assert zero == pytest.approx(-0.5 * logdet - 3 * math.log(2 * math.pi), abs=1e-10)


def test_gradient_matches_central_differences(rng):
    x = rng.uniform(size=(12, 2))
    y = np.sin(4 * x[:, 0]) + 0.1 * rng.normal(size=12)
    params = _pack(KernelSpec(1.5, 0.7, (0.3, 0.8), 0.01))
    _, grad = nlml_and_grad(params, x, y, 1.5)
    h = 1e-5
    for j in range(params.size):
        e = np.zeros_like(params)
        e[j] = h
        fd = (nlml_and_grad(params + e, x, y, 1.5)[0] - nlml_and_grad(params - e, x, y, 1.5)[0]) / (2 * h)
        assert grad[j] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_tuning_constant_targets():
    x = np.linspace(0, 1, 10)[:, None]
    k = tune_hyperparameters(x, np.full(10, 0.7), seed=1)
    m = gp_fit(k, x, np.full(10, 0.7))
    mu, _ = gp_predict_many(m, np.linspace(-0.5, 1.5, 21)[:, None])
    assert np.all((mu >= 0.7 - 1e-9) & (mu <= 0.7 + 1e-9))


def test_tuning_recovers_lengthscale():
    r = np.random.default_rng(3)
    truth = KernelSpec(1.5, 1.0, (0.2,), 0.01)
    x = r.uniform(size=(60, 1))
    cov = kernel_matrix(truth, x, x) + 0.01 * np.eye(60)
    y = np.linalg.cholesky(cov) @ r.standard_normal(60)
    k = tune_hyperparameters(x, y, config=TuneConfig(center=False), seed=0)
    assert abs(math.log(k.lengthscales[0]) - math.log(0.2)) < 0.5


def test_tuning_deterministic(rng):
    x = rng.uniform(size=(15, 2))
    y = rng.normal(size=15)
    assert tune_hyperparameters(x, y, seed=4) == tune_hyperparameters(x, y, seed=4)
    with pytest.raises(ValueError):
        tune_hyperparameters(x[:2], y[:2])


def test_nelder_mead_agrees_with_gradient_search(rng):
    x = rng.uniform(size=(20, 2))
    y = np.cos(3 * x[:, 0]) + 0.05 * rng.normal(size=20)
    a = tune_hyperparameters(x, y, seed=0)
    b = tune_hyperparameters(x, y, config=TuneConfig(method="nelder-mead"), seed=0)
    la = log_marginal_likelihood(a, x, y - y.mean())
    lb = log_marginal_likelihood(b, x, y - y.mean())
    assert la >= lb - 1e-3


def test_model_json_roundtrip(rng):
    x = rng.uniform(size=(6, 2))
    y = rng.normal(size=6)
    m = gp_fit(KernelSpec(1.5, 1.0, (0.5, 0.5), 1e-3), x, y, per_point_noise=np.full(6, 1e-3))
    m2 = GpModel.from_json(m.to_json())
    q = rng.uniform(size=(3, 2))
    assert np.allclose(gp_predict_many(m, q)[0], gp_predict_many(m2, q)[0], atol=0, rtol=0)


def test_point_predictor_matches_batch(rng):
    x = rng.uniform(size=(10, 2))
    m = gp_fit(KernelSpec(1.5, 1.0, (0.5, 0.5), 1e-3), x, rng.normal(size=10))
    f = m.point_predictor()
    q = rng.uniform(size=(5, 2))
    mu, var = gp_predict_many(m, q)
    for i in range(5):
        a, b = f(q[i])
        assert a == pytest.approx(mu[i], abs=1e-10)
        assert b == pytest.approx(var[i], abs=1e-10)
