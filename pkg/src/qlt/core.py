"""Dense linear algebra shared by the rest of the package.

Conventions
-----------
Operators are vectorized row-major, so that ``vec(A @ X @ B) == kron(A, B.T) @ vec(X)``.
A superoperator is a ``d**2 x d**2`` complex array acting on such vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from itertools import product

import numpy as np
import scipy.linalg

from .errors import DimensionError, MalformedVectorError, NonFiniteError, NotPositiveError

PSD_TOL = 1e-10

SIGMA = {
    "0": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
PAULI_LABELS = ("0", "x", "y", "z")


def kron_all(ops) -> np.ndarray:
    """Kronecker product of a sequence of matrices, first factor leftmost."""
    return reduce(np.kron, ops)


@dataclass(frozen=True)
class PauliBasis:
    """Hilbert-Schmidt orthonormal basis of normalized Pauli strings.

    ``elements[mu]`` is the tensor product of single-qubit Paulis named by
    ``labels[mu]`` divided by ``sqrt(d)``. Element 0 is proportional to identity;
    all others are traceless.
    """

    n_qubits: int
    labels: tuple[str, ...]
    elements: np.ndarray

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, mu: int) -> np.ndarray:
        return self.elements[mu]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def coefficients(self, op: np.ndarray) -> np.ndarray:
        """Expansion coefficients ``Tr[G_mu op]`` (exact since the basis is Hermitian)."""
        return np.einsum("mab,ba->m", self.elements, op)

    def operator(self, coeffs, skip_identity: bool = False) -> np.ndarray:
        """Inverse of :meth:`coefficients`; with ``skip_identity`` coeffs start at mu=1."""
        elems = self.elements[1:] if skip_identity else self.elements
        return np.tensordot(np.asarray(coeffs), elems, axes=1)


def pauli_basis(n_qubits: int) -> PauliBasis:
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    d = 2**n_qubits
    labels, elems = [], []
    for combo in product(PAULI_LABELS, repeat=n_qubits):
        labels.append("".join(combo))
        elems.append(kron_all([SIGMA[c] for c in combo]) / np.sqrt(d))
    return PauliBasis(n_qubits, tuple(labels), np.array(elems))


def vectorize(op: np.ndarray) -> np.ndarray:
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {op.shape}")
    return op.reshape(-1).copy()


def devectorize(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec)
    d = int(round(np.sqrt(vec.size)))
    if vec.ndim != 1 or d * d != vec.size:
        raise MalformedVectorError(f"length {vec.size} is not a perfect square")
    return vec.reshape(d, d).copy()


def sandwich(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> a @ X @ b``."""
    return np.kron(a, np.asarray(b).T)


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> -i[h, X]``."""
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def unitary_superop(u: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> u @ X @ u^dagger``."""
    return np.kron(u, u.conj())


def apply_superop(superop: np.ndarray, op: np.ndarray) -> np.ndarray:
    d = op.shape[0]
    return (superop @ op.reshape(-1)).reshape(d, d)


def superop_dim(superop: np.ndarray) -> int:
    n = superop.shape[0]
    d = int(round(np.sqrt(n)))
    if superop.shape != (n, n) or d * d != n:
        raise DimensionError(f"superoperator shape {superop.shape} is not d^2 x d^2")
    return d


def choi_matrix(superop: np.ndarray) -> np.ndarray:
    """Unit-trace Choi state ``(Lambda x id)(|Omega><Omega|)``.

    With row-major vectorization this is a reshuffle of the superoperator:
    ``Phi[(a,k),(b,k')] = S[(a,b),(k,k')] / d``.
    """
    d = superop_dim(superop)
    s = superop.reshape(d, d, d, d)
    return s.transpose(0, 2, 1, 3).reshape(d * d, d * d) / d


def superop_from_choi(choi: np.ndarray) -> np.ndarray:
    """Inverse of :func:`choi_matrix`."""
    d = superop_dim(choi)
    return d * choi.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)


def partial_trace_env(joint: np.ndarray, dim_sys: int, dim_env: int) -> np.ndarray:
    """Trace out the right tensor factor of a ``(dim_sys*dim_env)``-dimensional operator."""
    n = dim_sys * dim_env
    if joint.shape != (n, n):
        raise DimensionError(f"joint operator shape {joint.shape} != ({n}, {n})")
    return np.einsum("imjm->ij", joint.reshape(dim_sys, dim_env, dim_sys, dim_env))


def is_hermitian(a: np.ndarray, atol: float = 1e-12) -> bool:
    return a.shape[0] == a.shape[1] and bool(np.allclose(a, a.conj().T, rtol=0, atol=atol))


def _check_finite(a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("matrix has non-finite entries")


def expm(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    _check_finite(a)
    return scipy.linalg.expm(a)


def psd_eigh(a: np.ndarray, tol: float = PSD_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian PSD matrix with small negative eigenvalues clipped.

    Raises :class:`NotPositiveError` if an eigenvalue is below ``-tol`` (relative to
    ``max(1, ||a||)``).
    """
    a = np.asarray(a)
    _check_finite(a)
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w[0] < -tol * scale:
        raise NotPositiveError(f"minimum eigenvalue {w[0]:.3e} below -{tol:g}")
    return np.clip(w, 0.0, None), v


def hermitian_sqrt(a: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    w, v = psd_eigh(a, tol)
    return (v * np.sqrt(w)) @ v.conj().T


def eigvals(a: np.ndarray) -> np.ndarray:
    _check_finite(a)
    return np.linalg.eigvals(a)


def eigh(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _check_finite(a)
    return np.linalg.eigh(a)


def check_density_matrix(rho: np.ndarray, tol: float = 1e-10) -> None:
    """Raise if ``rho`` is not Hermitian, unit trace and PSD within ``tol``."""
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"density matrix must be square, got {rho.shape}")
    if not is_hermitian(rho, atol=max(tol, 1e-12)):
        raise NotPositiveError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise NotPositiveError(f"density matrix trace {np.trace(rho).real:.12g} != 1")
    if np.linalg.eigvalsh(rho)[0] < -tol:
        raise NotPositiveError("density matrix has a negative eigenvalue")


def trace_preservation_error(superop: np.ndarray) -> float:
    """Max deviation of ``vec(I)^T S`` from ``vec(I)^T`` (zero for trace-preserving maps)."""
    d = superop_dim(superop)
    vid = np.eye(d).reshape(-1)
    return float(np.max(np.abs(vid @ superop - vid)))


def generator_trace_error(superop: np.ndarray) -> float:
    """Max entry of ``vec(I)^T L``; zero for trace-preserving generators."""
    d = superop_dim(superop)
    return float(np.max(np.abs(np.eye(d).reshape(-1) @ superop)))


def hermiticity_preservation_error(superop: np.ndarray) -> float:
    """Max anti-Hermitian part of the images of the (Hermitian) Pauli basis."""
    d = superop_dim(superop)
    basis = pauli_basis(int(round(np.log2(d)))).elements
    out = np.einsum("ij,mj->mi", superop, basis.reshape(len(basis), -1)).reshape(-1, d, d)
    return float(np.max(np.abs(out - out.conj().transpose(0, 2, 1))))
