"""Fidelities, coefficient of determination and spectral comparison."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import choi_matrix, psd_eigh, superop_dim
from .errors import DimensionError

CHOI_TOL = 1e-8


def _psd_sqrt(a: np.ndarray, tol: float) -> np.ndarray:
    # eigenvalues at round-off level are zeroed: their square roots (~1e-8) would
    # otherwise bias fidelities of rank-deficient inputs
    w, v = psd_eigh(a, tol)
    w = np.where(w > w.size * np.finfo(float).eps * max(w.max(initial=0.0), 1e-300), w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def _sqrt_trace(a: np.ndarray, b: np.ndarray, tol: float) -> float:
    """``Tr sqrt(sqrt(a) b sqrt(a))`` for PSD ``a``, ``b``, as the nuclear norm of ``sqrt(a) sqrt(b)``."""
    m = _psd_sqrt(a, tol) @ _psd_sqrt(b, tol)
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def state_fidelity(a: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(a) b sqrt(a)))^2``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise DimensionError(f"state shapes differ: {a.shape} vs {b.shape}")
    psd_eigh(b, tol)
    return float(min(1.0, _sqrt_trace(a, b, tol) ** 2))


def povm_fidelity(a, b) -> float:
    """``(sum_l Tr sqrt(M_l N_l))^2 / d^2``; order-sensitive in the outcome labels."""
    ea = np.asarray(getattr(a, "elements", a), dtype=complex)
    eb = np.asarray(getattr(b, "elements", b), dtype=complex)
    if ea.shape != eb.shape:
        raise DimensionError(f"POVM shapes differ: {ea.shape} vs {eb.shape}")
    d = ea.shape[1]
    total = sum(_sqrt_trace(m, n, 1e-10) for m, n in zip(ea, eb))
    return float(min(1.0, total**2 / d**2))


def process_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """State fidelity between the unit-trace Choi matrices of two superoperators."""
    if superop_dim(a) != superop_dim(b):
        raise DimensionError("superoperator dimensions differ")
    ca, cb = choi_matrix(a), choi_matrix(b)
    psd_eigh(ca, CHOI_TOL)
    return state_fidelity(ca, cb, CHOI_TOL)


def r2(observed, predicted) -> float:
    """``1 - SS_res / SS_tot`` with the total sum of squares about the grand mean."""
    y = np.asarray(observed, dtype=float).ravel()
    f = np.asarray(predicted, dtype=float).ravel()
    if y.shape != f.shape:
        raise DimensionError("observed and predicted tables differ in shape")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise ValueError("observed values have zero variance")
    return 1.0 - float(np.sum((y - f) ** 2)) / ss_tot


@dataclass
class SpectrumComparison:
    first: np.ndarray  # eigenvalues of the first argument, pair order
    second: np.ndarray  # paired eigenvalues of the second argument
    distances: np.ndarray

    @property
    def mismatch(self) -> float:
        return float(np.mean(self.distances))

    def slow_mismatch(self) -> float:
        """Mean paired distance over modes whose second-argument ``|Re|`` is at most the median."""
        decay = np.abs(self.second.real)
        keep = decay <= np.median(decay)
        return float(np.mean(self.distances[keep]))

    def rows(self) -> list[tuple[float, float, str, int]]:
        """Plot rows ``(re, im, source, pair_id)``."""
        out = []
        for k, (x, y) in enumerate(zip(self.first, self.second)):
            out.append((float(x.real), float(x.imag), "first", k))
            out.append((float(y.real), float(y.imag), "second", k))
        return out


def greedy_pairing(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Repeatedly pair the closest remaining ``(x_i, y_j)``; returns index arrays."""
    dist = np.abs(x[:, None] - y[None, :])
    n = len(x)
    used_x = np.zeros(n, bool)
    used_y = np.zeros(n, bool)
    order = np.argsort(dist, axis=None, kind="stable")
    ix, iy = [], []
    for flat in order:
        i, j = divmod(int(flat), n)
        if used_x[i] or used_y[j]:
            continue
        used_x[i] = used_y[j] = True
        ix.append(i)
        iy.append(j)
        if len(ix) == n:
            break
    return np.array(ix), np.array(iy)


def spectrum_compare(a: np.ndarray, b: np.ndarray, eig_a: np.ndarray | None = None,
                     eig_b: np.ndarray | None = None) -> SpectrumComparison:
    """Greedy nearest-neighbour pairing of the eigenvalues of two superoperators.

    Precomputed eigenvalues may be passed instead of matrices (e.g. ``exp(t * eig(L))``).
    """
    ea = np.linalg.eigvals(a) if eig_a is None else np.asarray(eig_a)
    eb = np.linalg.eigvals(b) if eig_b is None else np.asarray(eig_b)
    if ea.shape != eb.shape:
        raise DimensionError("spectra have different sizes")
    ix, iy = greedy_pairing(ea, eb)
    return SpectrumComparison(ea[ix], eb[iy], np.abs(ea[ix] - eb[iy]))
