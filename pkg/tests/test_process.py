import numpy as np
import pytest

from qlt.core import SIGMA, choi_matrix, trace_preservation_error
from qlt.errors import DatasetError, ParameterError
from qlt.metrics import process_fidelity
from qlt.optimize import AdamConfig, FitTrace, central_gradient, pack
from qlt.probes import enumerate_configs, simulate_dataset, spam_configs
from qlt.process import (
    KrausMap,
    MapEstimate,
    ProbeLoss,
    fit_map,
    identity_stacking,
    kraus_param,
    kraus_to_superoperator,
    map_objective,
    qr_semi_unitary,
)
from qlt.spam import Povm
from qlt.synth import perturbed_spam, random_kraus_map

from conftest import random_complex, random_state


def ideal_spam(d):
    rho = np.zeros((d, d), dtype=complex)
    rho[0, 0] = 1
    return rho, Povm.computational(d).elements


def bloch(superop, axis):
    """Bloch-vector image of the unit vector along ``axis``."""
    rho = (np.eye(2) + SIGMA[axis]) / 2
    out = (superop @ rho.reshape(-1)).reshape(2, 2)
    return np.array([np.trace(out @ SIGMA[a]).real for a in "xyz"])


def test_semi_unitary_theta_is_fixed_point(rng):
    u, _ = qr_semi_unitary(random_complex((8, 2), rng))
    np.testing.assert_allclose(kraus_param(u).operators.reshape(8, 2), u, atol=1e-12)


def test_rank_one_is_unitary(rng):
    e = kraus_param(random_complex((3, 3), rng)).operators[0]
    np.testing.assert_allclose(e @ e.conj().T, np.eye(3), atol=1e-10)


def test_qr_phase_gauge(rng):
    theta = random_complex((8, 2), rng)
    u, _ = qr_semi_unitary(theta)
    np.testing.assert_allclose(kraus_param(u).operators, kraus_param(theta).operators, atol=1e-12)


def test_kraus_param_errors(rng):
    with pytest.raises(ParameterError):
        kraus_param(random_complex((5, 2), rng))
    with pytest.raises(ParameterError):
        kraus_param(np.zeros((4, 2)))


def test_identity_kraus_superoperator():
    np.testing.assert_allclose(kraus_to_superoperator(KrausMap(np.eye(2)[None])), np.eye(4))
    np.testing.assert_allclose(kraus_param(identity_stacking(2, 3)).superoperator(), np.eye(4), atol=1e-14)


def test_bit_flip_channel():
    p = 0.3
    s = KrausMap(np.array([np.sqrt(1 - p) * np.eye(2), np.sqrt(p) * SIGMA["x"]])).superoperator()
    np.testing.assert_allclose(bloch(s, "x"), [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(bloch(s, "y"), [0, 0.4, 0], atol=1e-12)
    np.testing.assert_allclose(bloch(s, "z"), [0, 0, 0.4], atol=1e-12)
    assert trace_preservation_error(s) < 1e-10


def test_kraus_representation_invariance(rng):
    k = random_kraus_map(3, 2, 5)
    q, _ = np.linalg.qr(random_complex((3, 3), rng))
    rotated = KrausMap(np.einsum("nm,mab->nab", q, k.operators))
    np.testing.assert_allclose(rotated.superoperator(), k.superoperator(), atol=1e-12)


def test_superoperator_matches_kraus_action(rng):
    k = random_kraus_map(4, 4, 1)
    rho = random_state(4, rng)
    np.testing.assert_allclose((k.superoperator() @ rho.reshape(-1)).reshape(4, 4), k.apply(rho), atol=1e-12)


def test_analytic_gradient_matches_central_differences(rng):
    rho0, povm = perturbed_spam(1, 2)
    ds = simulate_dataset(random_kraus_map(4, 2, 0).superoperator(), rho0, povm.elements, enumerate_configs(1), 200, 1)
    for rank in (1, 4):
        value, value_and_grad = map_objective(ds, rho0, povm.elements, rank)
        theta = pack(random_complex((rank * 2, 2), rng))
        f, g = value_and_grad(theta)
        assert f == pytest.approx(value(theta), rel=1e-12)
        num = central_gradient(value, theta)
        assert np.linalg.norm(g - num) <= 1e-5 * np.linalg.norm(num)


def test_exact_random_one_qubit_map_recovered():
    truth = random_kraus_map(4, 2, 7).superoperator()
    rho, povm = ideal_spam(2)
    ds = simulate_dataset(truth, rho, povm, enumerate_configs(1), None)
    cfg = AdamConfig(step_size=1e-2, max_iters=20000, grad_tolerance=1e-10, patience=2000, decay=0.9998)
    est = fit_map(ds, rho, povm, config=cfg, seed=0)
    assert process_fidelity(truth, est.superoperator()) >= 1 - 1e-4


def test_estimate_is_cptp_and_fits_data():
    rho0, povm = perturbed_spam(1, 6)
    truth = random_kraus_map(4, 2, 3).superoperator()
    ds = simulate_dataset(truth, rho0, povm.elements, enumerate_configs(1), 1000, 2)
    est = fit_map(ds, rho0, povm.elements, config=AdamConfig(step_size=1e-2, max_iters=5000), seed=1)
    s = est.superoperator()
    assert est.kraus.completeness_error() < 1e-10
    assert trace_preservation_error(s) < 1e-10
    assert np.linalg.eigvalsh(choi_matrix(s))[0] >= -1e-9
    probe = ProbeLoss(ds, rho0, povm.elements)
    assert est.loss <= 1.1 * probe.loss(truth)
    assert est.loss <= est.trace.losses[0]


def test_fit_map_argument_checks():
    rho, povm = ideal_spam(2)
    spam_ds = simulate_dataset(None, rho, povm, spam_configs(1), 10, 0, kind="spam")
    with pytest.raises(DatasetError):
        fit_map(spam_ds, rho, povm)
    ds = simulate_dataset(np.eye(4), rho, povm, enumerate_configs(1), 10, 0)
    with pytest.raises(ValueError):
        fit_map(ds, rho, povm, rank=5)
    with pytest.raises(ValueError):
        fit_map(ds, rho, povm, rank=0)


def test_probe_loss_masks_missing_configs():
    rho, povm = ideal_spam(4)
    configs = enumerate_configs(2, 30, seed=4)
    ds = simulate_dataset(np.eye(16), rho, povm, configs, None)
    loss = ProbeLoss(ds, rho, povm)
    assert loss.n_terms == 30 * 4
    assert loss.loss(np.eye(16)) < 1e-28


def test_map_estimate_round_trip():
    k = random_kraus_map(2, 2, 0)
    est = MapEstimate(k, 0.1, FitTrace([0.2], [1.0], 1, "converged"))
    back = MapEstimate.from_dict(est.to_dict())
    np.testing.assert_array_equal(back.superoperator(), est.superoperator())
    assert est.to_dict()["rank"] == 2
