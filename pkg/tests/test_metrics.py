import numpy as np
import pytest

from qlt.core import expm, unitary_superop
from qlt.errors import DimensionError, NotPositiveError
from qlt.metrics import greedy_pairing, povm_fidelity, process_fidelity, r2, spectrum_compare, state_fidelity
from qlt.process import KrausMap
from qlt.spam import Povm
from qlt.synth import random_kraus_map

from conftest import random_complex, random_state


def depolarizing(d):
    # X -> Tr[X] 1/d in row-major vectorization
    return np.outer(np.eye(d).reshape(-1), np.eye(d).reshape(-1)) / d


def test_state_fidelity_examples(rng):
    rho = random_state(3, rng)
    assert state_fidelity(rho, rho) == pytest.approx(1, abs=1e-10)
    zero, one = np.diag([1.0, 0]), np.diag([0, 1.0])
    assert state_fidelity(zero, one) == pytest.approx(0, abs=1e-10)
    assert state_fidelity(zero, np.eye(2) / 2) == pytest.approx(0.5, abs=1e-12)


def test_state_fidelity_symmetric(rng):
    for _ in range(20):
        a, b = random_state(4, rng), random_state(4, rng, rank=2)
        assert state_fidelity(a, b) == pytest.approx(state_fidelity(b, a), abs=1e-9)
        assert 0 <= state_fidelity(a, b) < 1


def test_state_fidelity_pure_overlap(rng):
    u = random_complex(3, rng)
    v = random_complex(3, rng)
    u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
    assert state_fidelity(np.outer(u, u.conj()), np.outer(v, v.conj())) == pytest.approx(abs(u.conj() @ v) ** 2)


def test_state_fidelity_errors():
    with pytest.raises(DimensionError):
        state_fidelity(np.eye(2) / 2, np.eye(3) / 3)
    with pytest.raises(NotPositiveError):
        state_fidelity(np.eye(2) / 2, np.diag([1.5, -0.5]))


def test_povm_fidelity_examples():
    ideal = Povm.computational(2)
    assert povm_fidelity(ideal, ideal) == pytest.approx(1)
    uniform = np.array([np.eye(2) / 2, np.eye(2) / 2])
    assert povm_fidelity(ideal, uniform) == pytest.approx(0.5)
    swapped = ideal.elements[::-1]
    assert povm_fidelity(ideal, swapped) < 1
    with pytest.raises(DimensionError):
        povm_fidelity(ideal, Povm.computational(4))


def test_process_fidelity_examples():
    k = random_kraus_map(3, 2, 1).superoperator()
    assert process_fidelity(k, k) == pytest.approx(1, abs=1e-9)
    assert process_fidelity(np.eye(4), depolarizing(2)) == pytest.approx(0.25, abs=1e-12)


def test_process_fidelity_unitaries(rng):
    # identity vs unitary U: F = |Tr U|^2 / d^2
    h = random_complex((2, 2), rng)
    u = expm(-1j * (h + h.conj().T) / 2)
    assert process_fidelity(np.eye(4), unitary_superop(u)) == pytest.approx(abs(np.trace(u)) ** 2 / 4, abs=1e-10)


def test_process_fidelity_kraus_invariant(rng):
    k = random_kraus_map(3, 2, 4)
    other = random_kraus_map(4, 2, 5).superoperator()
    q, _ = np.linalg.qr(random_complex((3, 3), rng))
    mixed = KrausMap(np.einsum("nm,mab->nab", q, k.operators)).superoperator()
    assert process_fidelity(mixed, other) == pytest.approx(process_fidelity(k.superoperator(), other), abs=1e-10)


def test_process_fidelity_rejects_non_cp():
    with pytest.raises(NotPositiveError):
        process_fidelity(-np.eye(4), np.eye(4))


def test_r2_examples():
    y = np.array([0.0, 1.0, 2.0])
    assert r2(y, y) == 1
    assert r2(y, np.full(3, y.mean())) == 0
    assert r2(y, [0.0, 1.0, 1.0]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        r2(np.ones(3), np.ones(3))
    with pytest.raises(DimensionError):
        r2(y, y[:2])


def test_r2_bounded_and_affine_invariant(rng):
    for _ in range(20):
        y = rng.standard_normal(30)
        f = y + 0.3 * rng.standard_normal(30)
        assert r2(y, f) <= 1
        assert r2(3 * y - 2, 3 * f - 2) == pytest.approx(r2(y, f), abs=1e-12)


def test_spectrum_identical():
    a = random_kraus_map(4, 2, 0).superoperator()
    cmp = spectrum_compare(a, a)
    assert cmp.mismatch == pytest.approx(0, abs=1e-12)
    assert len(cmp.rows()) == 8


def test_spectrum_under_exponential(rng):
    a = random_complex((4, 4), rng)
    l0 = a - a.conj().T - 0.3 * (a @ a.conj().T)
    t = 0.7
    cmp = spectrum_compare(None, None, np.linalg.eigvals(expm(t * l0)), np.exp(t * np.linalg.eigvals(l0)))
    assert cmp.mismatch < 1e-8


def test_spectrum_conjugate_pairs():
    w = np.linalg.eigvals(random_kraus_map(4, 4, 3).superoperator())
    cmp = spectrum_compare(None, None, w, w.conj())
    assert cmp.mismatch < 1e-8


def test_greedy_pairing_is_one_to_one():
    x = np.array([0.0, 1.0, 1.1])
    y = np.array([1.05, 0.02, 5.0])
    ix, iy = greedy_pairing(x, y)
    assert sorted(ix) == [0, 1, 2] and sorted(iy) == [0, 1, 2]
    pairs = dict(zip(ix.tolist(), iy.tolist()))
    assert pairs[0] == 1
    assert pairs[1] == 0 and pairs[2] == 2


def test_slow_mismatch_uses_slow_modes():
    first = np.array([-0.1, -0.2, -5.0, -6.0])
    second = np.array([-0.1, -0.3, -5.0, -9.0])
    cmp = spectrum_compare(None, None, first, second)
    assert cmp.slow_mismatch() == pytest.approx(0.05)
    with pytest.raises(DimensionError):
        spectrum_compare(None, None, first, second[:3])
