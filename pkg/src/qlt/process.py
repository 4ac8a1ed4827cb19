"""CPTP map reconstruction from process probe data.

Maps are parameterized by an unconstrained complex ``(r*d) x d`` matrix whose
QR factor (with the phase of ``R``'s diagonal fixed to be real positive) is a
semi-unitary matrix; its ``d``-row blocks are the Kraus operators.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import choi_matrix
from .errors import DatasetError, ParameterError
from .io import decode_matrices, encode_matrices, encode_matrix
from .optimize import AdamConfig, FitTrace, adam_minimize, pack, unpack
from .probes import PauliDataset, input_states, measurement_effects

QR_PHASE_TOL = 1e-14


@dataclass(frozen=True)
class KrausMap:
    operators: np.ndarray  # (r, d, d)

    @property
    def rank(self) -> int:
        return self.operators.shape[0]

    @property
    def dim(self) -> int:
        return self.operators.shape[1]

    def superoperator(self) -> np.ndarray:
        return kraus_to_superoperator(self)

    def completeness_error(self) -> float:
        e = self.operators
        s = np.einsum("mba,mbc->ac", e.conj(), e)
        return float(np.max(np.abs(s - np.eye(self.dim))))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        e = self.operators
        return np.einsum("mab,bc,mdc->ad", e, rho, e.conj())


def qr_semi_unitary(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """QR factorization ``theta = U R`` with ``R``'s diagonal real and positive."""
    q, r = np.linalg.qr(theta)
    diag = np.diagonal(r)
    mag = np.abs(diag)
    if np.any(mag < QR_PHASE_TOL):
        raise ParameterError("parameter matrix is rank deficient; QR phase undefined")
    phase = diag / mag
    return q * phase, r / phase[:, None]


def qr_semi_unitary_backward(u: np.ndarray, r: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    """Pull a gradient on ``U`` back to ``theta``.

    Gradients of real losses w.r.t. complex matrices are represented as
    ``dL/dRe + i dL/dIm``.
    """
    b = u.conj().T @ grad_u
    low = np.tril(b, -1)
    psi = low - np.tril(b.conj().T, -1) + 1j * np.diag(np.diagonal(b).imag)
    y = grad_u + u @ (psi - b)
    return y @ np.linalg.inv(r).conj().T


def kraus_param(theta: np.ndarray) -> KrausMap:
    """Kraus operators from an unconstrained ``(r*d) x d`` parameter matrix."""
    theta = np.asarray(theta, dtype=complex)
    m, d = theta.shape
    if m % d:
        raise ParameterError(f"parameter rows {m} are not a multiple of {d}")
    u, _ = qr_semi_unitary(theta)
    return KrausMap(u.reshape(m // d, d, d))


def kraus_to_superoperator(kraus: KrausMap) -> np.ndarray:
    e = kraus.operators
    r, d, _ = e.shape
    return np.einsum("mab,mcd->acbd", e, e.conj()).reshape(d * d, d * d)


def identity_stacking(dim: int, rank: int) -> np.ndarray:
    """Parameter matrix of the identity channel: first Kraus block is the identity."""
    theta = np.zeros((rank * dim, dim), dtype=complex)
    theta[:dim] = np.eye(dim)
    return theta


class ProbeLoss:
    """Mean squared error between dataset frequencies and Born-rule predictions.

    Predictions are ``Re(effects @ S @ states^T)`` on the full grid of
    (measurement, outcome) x preparation; configurations absent from the dataset are
    masked out.
    """

    def __init__(self, dataset: PauliDataset, rho0: np.ndarray, povm_elements: np.ndarray):
        d = dataset.dim
        pi, mj = dataset.index
        states = input_states(rho0)
        effects = measurement_effects(povm_elements)
        n_meas, n_out = effects.shape[:2]
        self.dim = d
        self.states = states
        self.x = states.reshape(len(states), -1)
        # Tr[X M] = vec(X) . vec(M^T)
        self.eff = effects.transpose(0, 1, 3, 2).reshape(n_meas * n_out, d * d)
        self.eff_mats = effects.reshape(n_meas * n_out, d, d)
        target = np.zeros((n_meas, n_out, len(states)))
        mask = np.zeros_like(target)
        freqs = dataset.frequencies
        for k in range(len(dataset)):
            target[mj[k], :, pi[k]] = freqs[k]
            mask[mj[k], :, pi[k]] = 1.0
        self.target = target.reshape(n_meas * n_out, -1)
        self.mask = mask.reshape(n_meas * n_out, -1)
        self.n_terms = float(self.mask.sum())

    def predict(self, superop: np.ndarray) -> np.ndarray:
        return (self.eff @ superop @ self.x.T).real

    def loss(self, superop: np.ndarray) -> float:
        r = self.mask * (self.predict(superop) - self.target)
        return float(np.sum(r * r) / self.n_terms)

    def kraus_value_and_grad(self, kraus_ops: np.ndarray) -> tuple[float, np.ndarray]:
        """Loss and its gradient w.r.t. each Kraus operator."""
        r_, d, _ = kraus_ops.shape
        s = np.einsum("mab,mcd->acbd", kraus_ops, kraus_ops.conj()).reshape(d * d, d * d)
        res = self.mask * (self.predict(s) - self.target)
        f = float(np.sum(res * res) / self.n_terms)
        # dL/dE_mu* ~ sum_i W_i E_mu rho_i with W_i = sum_a res[a, i] M_a,
        # assembled as the superoperator Z = sum_i W_i (x) rho_i^T acting on vec(E_mu)
        q = self.eff_mats.reshape(len(self.eff_mats), -1).T @ res  # (d*d [p,r], n_prep)
        z = (q @ self.x).reshape(d, d, d, d)  # [p, r, s, q] = sum_i W_i[p, r] rho_i[s, q]
        z = z.transpose(0, 3, 1, 2).reshape(d * d, d * d)  # [(p,q), (r,s)]
        g = (4.0 / self.n_terms) * (kraus_ops.reshape(r_, -1) @ z.T)
        return f, g.reshape(r_, d, d)


@dataclass
class MapEstimate:
    kraus: KrausMap
    loss: float
    trace: FitTrace
    config: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.kraus.rank

    def superoperator(self) -> np.ndarray:
        return self.kraus.superoperator()

    def choi(self) -> np.ndarray:
        return choi_matrix(self.superoperator())

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "rank": self.rank,
            "kraus": encode_matrices(self.kraus.operators),
            "choi": encode_matrix(self.choi()),
            "loss": self.loss,
            "trace": self.trace.summary(),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: dict) -> MapEstimate:
        trace = FitTrace(iterations=data["trace"]["iterations"], reason=data["trace"]["reason"])
        return cls(KrausMap(decode_matrices(data["kraus"])), data["loss"], trace, data.get("config", {}))


def _map_objective(loss: ProbeLoss, shape):
    def value_and_grad(theta_vec):
        (theta,) = unpack(theta_vec, shape)
        u, r = qr_semi_unitary(theta)
        d = shape[1]
        f, g = loss.kraus_value_and_grad(u.reshape(-1, d, d))
        gt = qr_semi_unitary_backward(u, r, g.reshape(shape))
        return f, pack(gt)

    def value(theta_vec):
        (theta,) = unpack(theta_vec, shape)
        return loss.loss(kraus_to_superoperator(kraus_param(theta)))

    return value, value_and_grad


def map_objective(dataset: PauliDataset, rho0, povm_elements, rank: int):
    """``(value, value_and_grad)`` of the process loss over packed parameters."""
    return _map_objective(ProbeLoss(dataset, rho0, povm_elements), (rank * dataset.dim, dataset.dim))


def fit_map(
    dataset: PauliDataset,
    rho0: np.ndarray,
    povm_elements: np.ndarray,
    rank: int | None = None,
    config: AdamConfig | None = None,
    seed=0,
    jitter: float = 0.05,
    restarts: int = 1,
    theta0: np.ndarray | None = None,
) -> MapEstimate:
    """Fit a rank-``rank`` Kraus map to process data with SPAM held fixed.

    Initialization is the identity channel plus complex Gaussian jitter; the best of
    ``restarts`` runs is kept.
    """
    if dataset.kind != "process":
        raise DatasetError(f"expected a process dataset, got {dataset.kind!r}")
    d = dataset.dim
    rank = d * d if rank is None else rank
    if not 1 <= rank <= d * d:
        raise ValueError(f"Kraus rank must be in [1, {d * d}], got {rank}")
    cfg = config or AdamConfig()
    shape = (rank * d, d)
    loss = ProbeLoss(dataset, rho0, povm_elements)
    value, value_and_grad = _map_objective(loss, shape)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        base = identity_stacking(d, rank) if theta0 is None else np.asarray(theta0, dtype=complex)
        init = base + jitter * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        theta, trace = adam_minimize(value, None, pack(init), cfg, value_and_grad=value_and_grad)
        f = value(theta)
        if best is None or f < best[0]:
            best = (f, theta, trace)
    f, theta, trace = best
    (mat,) = unpack(theta, shape)
    echo = {"rank": rank, "jitter": jitter, "restarts": restarts, "seed": seed, "adam": cfg.to_dict()}
    return MapEstimate(kraus_param(mat), f, trace, echo)
