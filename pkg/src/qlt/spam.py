"""Self-consistent reconstruction of the initial state and readout POVM."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import psd_eigh
from .errors import DatasetError, DimensionError, NotPositiveError, ParameterError
from .io import decode_matrices, decode_matrix, encode_matrices, encode_matrix
from .optimize import AdamConfig, FitTrace, adam_minimize, pack, unpack
from .probes import PauliDataset, meas_unitaries, prep_unitaries
from .process import qr_semi_unitary, qr_semi_unitary_backward


@dataclass(frozen=True)
class Povm:
    elements: np.ndarray  # (n_outcomes, d, d)

    def __post_init__(self):
        e = np.asarray(self.elements, dtype=complex)
        if e.ndim != 3 or e.shape[1] != e.shape[2]:
            raise DimensionError(f"POVM elements must have shape (n, d, d), got {e.shape}")
        object.__setattr__(self, "elements", e)

    @property
    def dim(self) -> int:
        return self.elements.shape[1]

    def __len__(self) -> int:
        return self.elements.shape[0]

    def completeness_error(self) -> float:
        return float(np.max(np.abs(self.elements.sum(axis=0) - np.eye(self.dim))))

    def validate(self, tol: float = 1e-10) -> None:
        if self.completeness_error() > tol:
            raise NotPositiveError("POVM elements do not sum to the identity")
        for m in self.elements:
            psd_eigh(m, tol)

    @classmethod
    def computational(cls, dim: int) -> Povm:
        return cls(np.array([np.diag(row) for row in np.eye(dim)], dtype=complex))


def rho_param(theta: np.ndarray) -> np.ndarray:
    """Density matrix ``theta theta^dag / Tr[theta theta^dag]``."""
    theta = np.asarray(theta, dtype=complex)
    x = theta @ theta.conj().T
    tr = np.trace(x).real
    if tr <= 0:
        raise ParameterError("state parameter matrix is zero")
    return x / tr


def povm_param(theta: np.ndarray) -> Povm:
    """POVM ``M_l = E_l^dag E_l`` from the semi-unitary QR factor of a ``d^2 x d`` matrix."""
    theta = np.asarray(theta, dtype=complex)
    m, d = theta.shape
    if m != d * d:
        raise ParameterError(f"POVM parameters must be {d * d} x {d}, got {theta.shape}")
    u, _ = qr_semi_unitary(theta)
    e = u.reshape(d, d, d)
    return Povm(e.conj().transpose(0, 2, 1) @ e)


def ideal_parameters(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Parameters of ``|0><0|`` and the computational-basis projective measurement."""
    t1 = np.zeros((dim, dim), dtype=complex)
    t1[0, 0] = 1.0
    t2 = np.zeros((dim * dim, dim), dtype=complex)
    for l in range(dim):
        t2[l * dim + l, l] = 1.0
    return t1, t2


@dataclass
class SpamEstimate:
    rho0: np.ndarray
    povm: Povm
    loss: float
    trace: FitTrace
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "rho0": encode_matrix(self.rho0),
            "povm": encode_matrices(self.povm.elements),
            "loss": self.loss,
            "trace": self.trace.summary(),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SpamEstimate:
        trace = FitTrace(iterations=data["trace"]["iterations"], reason=data["trace"]["reason"])
        return cls(decode_matrix(data["rho0"]), Povm(decode_matrices(data["povm"])), data["loss"], trace,
                   data.get("config", {}))


class SpamLoss:
    """MSE between SPAM frequencies and ``Tr[R_i rho R_i^dag M_l]``.

    The dataset's Z measurement labels correspond to identity rotations, so the
    general probe machinery applies unchanged.
    """

    def __init__(self, dataset: PauliDataset):
        if dataset.kind != "spam":
            raise DatasetError(f"expected a spam dataset, got {dataset.kind!r}")
        self.dim = d = dataset.dim
        pi, mj = dataset.index
        n = dataset.n_qubits
        self.prep_idx = pi
        self.meas_idx = mj
        self.r_prep = prep_unitaries(n)[pi]
        self.r_meas = meas_unitaries(n)[mj]
        self.target = dataset.frequencies
        self.n_terms = float(self.target.size)

    def _states(self, rho):
        r = self.r_prep
        return r @ rho @ r.conj().transpose(0, 2, 1)

    def _effects(self, m):
        r = self.r_meas
        return r.conj().transpose(0, 2, 1)[:, None] @ m[None] @ r[:, None]

    def predict(self, rho: np.ndarray, povm_elements: np.ndarray) -> np.ndarray:
        states = self._states(rho)
        eff = self._effects(np.asarray(povm_elements))
        return np.einsum("kab,klba->kl", states, eff).real

    def loss(self, rho, povm_elements) -> float:
        r = self.predict(rho, povm_elements) - self.target
        return float(np.sum(r * r) / self.n_terms)

    def value_and_grad(self, theta1: np.ndarray, theta2: np.ndarray):
        d = self.dim
        xx = theta1 @ theta1.conj().T
        tau = np.trace(xx).real
        rho = xx / tau
        u, rq = qr_semi_unitary(theta2)
        e = u.reshape(d, d, d)
        m = e.conj().transpose(0, 2, 1) @ e
        states = self._states(rho)
        eff = self._effects(m)
        res = np.einsum("kab,klba->kl", states, eff).real - self.target
        f = float(np.sum(res * res) / self.n_terms)
        c = 2.0 / self.n_terms
        # dL/drho = c sum_kl res R_k^dag M_lk R_k ; dL/dM_l = c sum_k res R_j rho_k R_j^dag
        g_rho = c * np.einsum("kl,klab->ab", res, self.r_prep.conj().transpose(0, 2, 1)[:, None] @ eff @ self.r_prep[:, None])
        rot_states = self.r_meas @ states @ self.r_meas.conj().transpose(0, 2, 1)
        g_m = c * np.einsum("kl,kab->lab", res, rot_states)
        gp = g_rho / tau - (np.trace(g_rho @ rho).real / tau) * np.eye(d)
        g_theta1 = 2.0 * gp @ theta1
        g_e = 2.0 * e @ g_m
        g_theta2 = qr_semi_unitary_backward(u, rq, g_e.reshape(d * d, d))
        return f, g_theta1, g_theta2


def spam_objective(dataset: PauliDataset):
    """``(value, value_and_grad)`` of the SPAM loss over packed ``(theta1, theta2)``."""
    loss = SpamLoss(dataset)
    d = loss.dim
    shapes = ((d, d), (d * d, d))

    def value_and_grad(vec):
        t1, t2 = unpack(vec, *shapes)
        f, g1, g2 = loss.value_and_grad(t1, t2)
        return f, pack(g1, g2)

    def value(vec):
        t1, t2 = unpack(vec, *shapes)
        return loss.loss(rho_param(t1), povm_param(t2).elements)

    return value, value_and_grad, shapes


def fit_spam(
    dataset: PauliDataset,
    config: AdamConfig | None = None,
    seed=0,
    jitter: float = 0.05,
    restarts: int = 3,
) -> SpamEstimate:
    """Fit ``(rho0, {M_l})`` starting near ideal SPAM; keep the best of ``restarts`` runs."""
    if len(dataset) == 0:
        raise DatasetError("empty dataset")
    value, value_and_grad, shapes = spam_objective(dataset)
    cfg = config or AdamConfig()
    d = dataset.dim
    t1, t2 = ideal_parameters(d)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        j1 = jitter * (rng.standard_normal(shapes[0]) + 1j * rng.standard_normal(shapes[0]))
        j2 = jitter * (rng.standard_normal(shapes[1]) + 1j * rng.standard_normal(shapes[1]))
        theta, trace = adam_minimize(value, None, pack(t1 + j1, t2 + j2), cfg, value_and_grad=value_and_grad)
        f = value(theta)
        if best is None or f < best[0]:
            best = (f, theta, trace)
    f, theta, trace = best
    p1, p2 = unpack(theta, *shapes)
    echo = {"jitter": jitter, "restarts": restarts, "seed": seed, "adam": cfg.to_dict()}
    return SpamEstimate(rho_param(p1), povm_param(p2), f, trace, echo)
