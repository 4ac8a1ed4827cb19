import numpy as np
import pytest

from qlt.errors import FitDivergenceError, NonFiniteError
from qlt.optimize import AdamConfig, FitTrace, adam_minimize, central_gradient, gradient, pack, unpack


def test_quadratic_gradient():
    theta = np.array([0.3, -1.5, 2.0, 7.0])
    np.testing.assert_allclose(central_gradient(lambda x: np.sum(x**2), theta), 2 * theta, atol=1e-8)


def test_constant_gradient():
    np.testing.assert_allclose(central_gradient(lambda x: 4.2, np.ones(3)), 0, atol=1e-8)


def test_gradient_prefers_analytic():
    g = gradient(lambda x: 0.0, np.zeros(2), analytic=lambda x: np.array([1.0, 2.0]))
    np.testing.assert_array_equal(g, [1.0, 2.0])


def test_gradient_rejects_nonfinite_loss():
    with pytest.raises(NonFiniteError):
        central_gradient(lambda x: np.inf, np.zeros(2))
    with pytest.raises(NonFiniteError):
        central_gradient(lambda x: np.inf if x[0] < 0 else x[0], np.zeros(1))


def test_scalar_quadratic():
    theta, trace = adam_minimize(lambda x: float((x[0] - 3) ** 2), lambda x: 2 * (x - 3), np.zeros(1),
                                 AdamConfig(step_size=0.05))
    assert abs(theta[0] - 3) < 1e-4
    assert trace.reason in ("converged", "stalled", "max_iters")


def test_rosenbrock():
    def f(x):
        return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

    def g(x):
        return np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])

    theta, trace = adam_minimize(f, g, np.array([-1.2, 1.0]), AdamConfig(step_size=2e-2, max_iters=20000))
    assert f(theta) < 1e-5
    assert trace.iterations <= 20000


def test_numeric_fallback_matches_analytic():
    loss = lambda x: float(np.sum((x - 1.5) ** 2))
    a, _ = adam_minimize(loss, None, np.zeros(3), AdamConfig(step_size=0.05, max_iters=3000))
    np.testing.assert_allclose(a, 1.5, atol=1e-4)


def test_determinism():
    loss = lambda x: float(np.sum(np.cos(x) + 0.1 * x**2))
    grad = lambda x: -np.sin(x) + 0.2 * x
    a, ta = adam_minimize(loss, grad, np.array([0.4, -2.0]), rng_seed=3)
    b, tb = adam_minimize(loss, grad, np.array([0.4, -2.0]), rng_seed=3)
    np.testing.assert_array_equal(a, b)
    assert ta.losses == tb.losses


def test_running_minimum_monotone_and_best_returned():
    loss = lambda x: float(np.sum(x**2))
    theta, trace = adam_minimize(loss, lambda x: 2 * x, np.array([1.0, -2.0]), AdamConfig(step_size=0.5, max_iters=300))
    running = np.minimum.accumulate(trace.losses)
    assert np.all(np.diff(running) <= 0)
    assert loss(theta) == pytest.approx(min(trace.losses))


def test_scale_invariance():
    a_mat = np.array([[3.0, 0.5], [0.5, 1.0]])
    b_vec = np.array([1.0, -2.0])
    target = np.linalg.solve(a_mat, b_vec)
    cfg = AdamConfig(step_size=0.05, max_iters=20000, grad_tolerance=1e-12, patience=2000, decay=0.9995)
    results = []
    for c in (1.0, 50.0):
        loss = lambda x, c=c: c * float(0.5 * x @ a_mat @ x - b_vec @ x)
        grad = lambda x, c=c: c * (a_mat @ x - b_vec)
        results.append(adam_minimize(loss, grad, np.zeros(2), cfg)[0])
    np.testing.assert_allclose(results[0], target, atol=1e-6)
    np.testing.assert_allclose(results[1], results[0], atol=1e-6)


def test_divergence_reported_with_trace():
    with pytest.raises(FitDivergenceError) as info:
        adam_minimize(lambda x: float(np.exp(x[0] ** 2)), lambda x: np.array([np.inf]), np.array([1.0]))
    assert info.value.trace.reason == "diverged"


def test_rejects_nonfinite_start_and_bad_config():
    with pytest.raises(NonFiniteError):
        adam_minimize(lambda x: 0.0, None, np.array([np.nan]))
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)
    with pytest.raises(ValueError):
        AdamConfig(step_size=0)


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    b = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    v = pack(a, b)
    assert v.dtype == float and v.size == 20
    assert v[0] == a[0, 0].real and v[1] == a[0, 0].imag and v[2] == a[0, 1].real
    ra, rb = unpack(v, a.shape, b.shape)
    np.testing.assert_array_equal(ra, a)
    np.testing.assert_array_equal(rb, b)
    with pytest.raises(ValueError):
        unpack(v, (2, 2))


def test_config_and_trace_serialization(tmp_path):
    cfg = AdamConfig(step_size=0.02, decay=0.99)
    assert AdamConfig.from_dict(cfg.to_dict()) == cfg
    tr = FitTrace([3.0, 2.0], [1.0, 0.5], 1, "converged")
    assert tr.summary()["best_loss"] == 2.0
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss,grad_norm" and len(lines) == 3
