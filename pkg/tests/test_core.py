import numpy as np
import pytest
from conftest import random_complex, random_hermitian, random_state

from qlt.core import (
    SIGMA,
    apply_superop,
    choi_matrix,
    commutator_superop,
    devectorize,
    expm,
    hermitian_sqrt,
    partial_trace_env,
    pauli_basis,
    sandwich,
    superop_from_choi,
    unitary_superop,
    vectorize,
)
from qlt.errors import MalformedVectorError, NonFiniteError, NotPositiveError
from qlt.process import kraus_to_superoperator
from qlt.synth import random_kraus_map


@pytest.mark.parametrize("n", [1, 2, 3])
def test_pauli_basis_orthonormal(n):
    b = pauli_basis(n)
    assert len(b) == 4**n
    gram = np.einsum("mab,nba->mn", b.elements, b.elements)
    np.testing.assert_allclose(gram, np.eye(4**n), atol=1e-12)
    traces = np.einsum("maa->m", b.elements[1:])
    np.testing.assert_allclose(traces, 0, atol=1e-12)


def test_pauli_basis_single_qubit_elements():
    b = pauli_basis(1)
    np.testing.assert_allclose(b[3], SIGMA["z"] / np.sqrt(2))
    assert abs(np.trace(b[3] @ b[3]) - 1) < 1e-12
    assert abs(np.trace(b[1] @ b[2])) < 1e-12
    np.testing.assert_allclose(b[0], np.eye(2) / np.sqrt(2))


def test_pauli_basis_two_qubit_label_ordering():
    b = pauli_basis(2)
    assert b.labels[:5] == ("00", "0x", "0y", "0z", "x0")
    np.testing.assert_allclose(b[b.index("zx")], np.kron(SIGMA["z"], SIGMA["x"]) / 2)


def test_vectorize_row_major():
    np.testing.assert_array_equal(vectorize(SIGMA["z"]), [1, 0, 0, -1])
    np.testing.assert_array_equal(vectorize(np.array([[1, 2], [3, 4]])), [1, 2, 3, 4])


def test_devectorize_round_trip(rng):
    h = random_hermitian(4, rng)
    np.testing.assert_array_equal(devectorize(vectorize(h)), h)


def test_devectorize_rejects_non_square_length():
    with pytest.raises(MalformedVectorError):
        devectorize(np.zeros(5))


def test_vectorization_contract(rng):
    for _ in range(100):
        d = rng.integers(2, 5)
        a, x, b = (random_complex((d, d), rng) for _ in range(3))
        lhs = vectorize(a @ x @ b)
        rhs = sandwich(a, b) @ vectorize(x)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(1.0, np.linalg.norm(lhs))


def test_commutator_superoperator(rng):
    h = random_hermitian(4, rng)
    rho = random_state(4, rng)
    lhs = (np.kron(h, np.eye(4)) - np.kron(np.eye(4), h.T)) @ vectorize(rho)
    np.testing.assert_allclose(lhs, vectorize(h @ rho - rho @ h), atol=1e-12)
    np.testing.assert_allclose(apply_superop(commutator_superop(h), rho), -1j * (h @ rho - rho @ h), atol=1e-12)


def test_choi_identity_channel_is_maximally_entangled_projector():
    phi = choi_matrix(np.eye(4))
    omega = np.array([1, 0, 0, 1]) / np.sqrt(2)
    np.testing.assert_allclose(phi, np.outer(omega, omega), atol=1e-15)
    assert abs(np.trace(phi) - 1) < 1e-12
    np.testing.assert_allclose(np.linalg.eigvalsh(phi), [0, 0, 0, 1], atol=1e-12)


def test_choi_of_completely_depolarizing_channel():
    # X -> Tr[X] I / 2, i.e. S = vec(I) vec(I)^T / 2
    vid = np.eye(2).reshape(-1)
    s = np.outer(vid, vid) / 2
    np.testing.assert_allclose(choi_matrix(s), np.eye(4) / 4, atol=1e-15)


def test_choi_by_explicit_construction(rng):
    # (Lambda x id)(|Omega><Omega|) built entrywise from Lambda(|a><b|)
    kraus = random_kraus_map(3, 2, rng)
    s = kraus.superoperator()
    d = 2
    explicit = np.zeros((d * d, d * d), dtype=complex)
    for a in range(d):
        for b in range(d):
            eab = np.zeros((d, d))
            eab[a, b] = 1
            explicit += np.kron(apply_superop(s, eab), eab) / d
    np.testing.assert_allclose(choi_matrix(s), explicit, atol=1e-14)
    np.testing.assert_allclose(superop_from_choi(choi_matrix(s)), s, atol=1e-14)


def test_choi_positive_for_random_kraus_maps(rng):
    for k in range(50):
        kraus = random_kraus_map(int(rng.integers(1, 17)), 4, rng)
        phi = choi_matrix(kraus_to_superoperator(kraus))
        assert np.linalg.eigvalsh(phi)[0] >= -1e-9
        assert abs(np.trace(phi) - 1) < 1e-10


def test_partial_trace_product_state(rng):
    rs, re = random_state(2, rng), random_state(4, rng)
    np.testing.assert_allclose(partial_trace_env(np.kron(rs, re), 2, 4), rs, atol=1e-14)


def test_partial_trace_bell_state():
    psi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    np.testing.assert_allclose(partial_trace_env(np.outer(psi, psi), 2, 2), np.eye(2) / 2)


def test_partial_trace_matches_explicit_sum(rng):
    joint = random_state(16, rng)
    out = np.zeros((4, 4), dtype=complex)
    for i in range(4):
        for j in range(4):
            out[i, j] = sum(joint[i * 4 + m, j * 4 + m] for m in range(4))
    np.testing.assert_allclose(partial_trace_env(joint, 4, 4), out, atol=1e-14)


def test_expm_known_values():
    np.testing.assert_allclose(expm(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(expm(-1j * np.pi / 2 * SIGMA["x"]), -1j * SIGMA["x"], atol=1e-14)


def test_expm_semigroup(rng):
    a = random_hermitian(4, rng)
    s, t = 0.3, 0.7
    lhs = expm(a * (s + t))
    rhs = expm(a * s) @ expm(a * t)
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * np.linalg.norm(lhs)


def test_expm_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        expm(np.array([[np.nan, 0], [0, 1]]))


def test_hermitian_sqrt(rng):
    np.testing.assert_allclose(hermitian_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    a = random_state(4, rng, rank=2)
    r = hermitian_sqrt(a)
    assert np.linalg.norm(r @ r - a) <= 1e-9 * np.linalg.norm(a)


def test_hermitian_sqrt_clips_tiny_negative_and_rejects_large():
    out = hermitian_sqrt(np.diag([1.0, -1e-12]))
    np.testing.assert_allclose(out, np.diag([1.0, 0.0]))
    with pytest.raises(NotPositiveError):
        hermitian_sqrt(np.diag([1.0, -1e-3]))


def test_unitary_superop_matches_conjugation(rng):
    u = np.linalg.qr(random_complex((3, 3), rng))[0]
    x = random_complex((3, 3), rng)
    np.testing.assert_allclose(apply_superop(unitary_superop(u), x), u @ x @ u.conj().T, atol=1e-13)
