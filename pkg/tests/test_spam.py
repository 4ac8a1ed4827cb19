import numpy as np
import pytest

from qlt.errors import DatasetError, NotPositiveError, ParameterError
from qlt.metrics import povm_fidelity, state_fidelity
from qlt.optimize import AdamConfig, central_gradient, pack
from qlt.probes import enumerate_configs, simulate_dataset, spam_configs
from qlt.spam import (
    Povm,
    SpamEstimate,
    SpamLoss,
    fit_spam,
    ideal_parameters,
    povm_param,
    rho_param,
    spam_objective,
)
from qlt.synth import perturbed_spam

from conftest import random_complex


def ideal_spam(d):
    rho = np.zeros((d, d), dtype=complex)
    rho[0, 0] = 1
    return rho, Povm.computational(d).elements


def test_rho_param_identity():
    np.testing.assert_allclose(rho_param(np.eye(3)), np.eye(3) / 3)


def test_rho_param_rank_one_is_pure(rng):
    theta = np.zeros((4, 4), dtype=complex)
    theta[:, 2] = random_complex(4, rng)
    rho = rho_param(theta)
    assert abs(np.trace(rho @ rho) - 1) < 1e-12


def test_rho_param_random_is_state(rng):
    for _ in range(20):
        rho = rho_param(random_complex((4, 4), rng))
        assert abs(np.trace(rho) - 1) < 1e-12
        assert np.linalg.eigvalsh(rho)[0] >= -1e-14


def test_rho_param_rejects_zero():
    with pytest.raises(ParameterError):
        rho_param(np.zeros((2, 2)))


def test_povm_param_ideal():
    _, t2 = ideal_parameters(4)
    np.testing.assert_allclose(povm_param(t2).elements, Povm.computational(4).elements, atol=1e-14)


def test_povm_param_random(rng):
    for _ in range(20):
        p = povm_param(random_complex((16, 4), rng))
        assert p.completeness_error() < 1e-10
        p.validate(1e-10)


def test_povm_param_errors(rng):
    with pytest.raises(ParameterError):
        povm_param(random_complex((8, 4), rng))
    with pytest.raises(ParameterError):
        povm_param(np.zeros((4, 2)))


def test_povm_validation():
    bad = Povm(np.array([np.eye(2), np.zeros((2, 2))]) * 0.9)
    with pytest.raises(NotPositiveError):
        bad.validate()


def test_analytic_gradient_matches_central_differences(rng):
    rho0, povm = perturbed_spam(2, 1)
    ds = simulate_dataset(None, rho0, povm.elements, spam_configs(2), 500, 3, kind="spam")
    value, value_and_grad, shapes = spam_objective(ds)
    for _ in range(3):
        theta = pack(random_complex(shapes[0], rng), random_complex(shapes[1], rng))
        f, g = value_and_grad(theta)
        assert f == pytest.approx(value(theta), rel=1e-12)
        num = central_gradient(value, theta)
        assert np.linalg.norm(g - num) <= 1e-5 * np.linalg.norm(num)


# the loss is quartic in directions leaving the pure-state boundary, so a tight
# stopping rule is needed to push the infidelity below 1e-6
TIGHT = AdamConfig(step_size=3e-3, max_iters=40000, grad_tolerance=1e-12, patience=5000, min_rel_improvement=1e-12)


@pytest.mark.parametrize("n", [
    1,
    pytest.param(2, marks=pytest.mark.xfail(reason="stalls at loss ~5e-12 with infidelity ~4e-6 along flat directions")),
])
def test_exact_ideal_spam_recovered(n):
    d = 2**n
    rho, povm = ideal_spam(d)
    ds = simulate_dataset(None, rho, povm, spam_configs(n), None, kind="spam")
    est = fit_spam(ds, TIGHT, seed=0, restarts=1)
    assert state_fidelity(rho, est.rho0) >= 1 - 1e-6
    assert povm_fidelity(povm, est.povm) >= 1 - 1e-6


def test_estimate_invariants_and_loss_decrease():
    rho0, povm = perturbed_spam(1, 4)
    ds = simulate_dataset(None, rho0, povm.elements, spam_configs(1), 100, 9, kind="spam")
    est = fit_spam(ds, AdamConfig(max_iters=3000), seed=2, restarts=1)
    est.povm.validate(1e-10)
    assert abs(np.trace(est.rho0) - 1) < 1e-12
    assert np.linalg.eigvalsh(est.rho0)[0] > -1e-12
    assert est.loss <= est.trace.losses[0]


def test_distinct_spam_sets_share_probability_table():
    # exact data from perturbed SPAM is fitted to near-zero loss by a different SPAM set
    rho0, povm = perturbed_spam(1, 0)
    ds = simulate_dataset(None, rho0, povm.elements, spam_configs(1), None, kind="spam")
    loss = SpamLoss(ds)
    assert loss.loss(rho0, povm.elements) < 1e-25
    est = fit_spam(ds, TIGHT, seed=0, restarts=1)
    table = loss.predict(est.rho0, est.povm.elements)
    assert np.max(np.abs(table - loss.target)) < 1e-5
    assert np.max(np.abs(est.rho0 - rho0)) > 1e-3


def test_dataset_kind_checked():
    rho, povm = ideal_spam(2)
    proc = simulate_dataset(np.eye(4), rho, povm, enumerate_configs(1), 10, 0)
    with pytest.raises(DatasetError):
        SpamLoss(proc)


def test_estimate_round_trip():
    rho, povm = ideal_spam(2)
    ds = simulate_dataset(None, rho, povm, spam_configs(1), 100, 0, kind="spam")
    est = fit_spam(ds, AdamConfig(max_iters=200), restarts=1)
    back = SpamEstimate.from_dict(est.to_dict())
    np.testing.assert_array_equal(back.rho0, est.rho0)
    np.testing.assert_array_equal(back.povm.elements, est.povm.elements)
