"""Ground-truth open-system dynamics for benchmarks.

A system of ``n_sys`` qubits is coupled to ``n_env`` environment qubits that are in
turn damped by a Markovian reservoir. The joint evolution is a static Lindbladian;
tracing out the environment gives a generically non-Markovian family of system maps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import commutator_superop, expm, pauli_basis
from .errors import DimensionError, SingularMapError
from .io import decode_matrix, encode_matrix
from .liouvillian import canonical_decomposition, canonical_split
from .process import KrausMap, kraus_param
from .spam import Povm, povm_param, rho_param

COND_LIMIT = 1e12


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_gue(dim: int, rng_seed=None) -> np.ndarray:
    """``(A + A^dag) / 2`` with ``A`` i.i.d. standard complex normal (``E|A_ij|^2 = 1``)."""
    if dim < 2:
        raise ValueError("dim must be >= 2")
    rng = _rng(rng_seed)
    a = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    return (a + a.conj().T) / 2


def sample_env_jump(dim_env: int, rng_seed=None) -> np.ndarray:
    """``A + iB`` with ``A``, ``B`` real standard normal."""
    rng = _rng(rng_seed)
    return rng.standard_normal((dim_env, dim_env)) + 1j * rng.standard_normal((dim_env, dim_env))


def lindblad_dissipator(jumps, weights=None) -> np.ndarray:
    """Superoperator of ``sum_k w_k (J rho J^dag - {J^dag J, rho}/2)``."""
    jumps = list(jumps)
    d = jumps[0].shape[0]
    eye = np.eye(d)
    out = np.zeros((d * d, d * d), dtype=complex)
    weights = np.ones(len(jumps)) if weights is None else weights
    for w, j in zip(weights, jumps):
        jj = j.conj().T @ j
        out += w * (np.kron(j, j.conj()) - 0.5 * (np.kron(jj, eye) + np.kron(eye, jj.T)))
    return out


@dataclass
class ReservoirModel:
    n_sys: int
    n_env: int
    h_sys: np.ndarray
    h_env: np.ndarray
    h_int: np.ndarray
    env_jumps: list[np.ndarray]
    alpha: float = 1.0
    g: float = 0.5
    rho_env: np.ndarray | None = None
    seed: int | None = None
    _joint: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ds, de = self.dim_sys, self.dim_env
        if self.h_sys.shape != (ds, ds) or self.h_env.shape != (de, de):
            raise DimensionError("system/environment Hamiltonian dimensions are inconsistent")
        if self.h_int.shape != (ds * de, ds * de):
            raise DimensionError("interaction Hamiltonian must act on system x environment")
        if any(j.shape != (de, de) for j in self.env_jumps):
            raise DimensionError("environment jump operators must be dim_env x dim_env")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.rho_env is None:
            self.rho_env = np.eye(de, dtype=complex) / de
        elif self.rho_env.shape != (de, de):
            raise DimensionError("rho_env has the wrong dimension")

    @property
    def dim_sys(self) -> int:
        return 2**self.n_sys

    @property
    def dim_env(self) -> int:
        return 2**self.n_env

    def hamiltonian(self) -> np.ndarray:
        ds, de = self.dim_sys, self.dim_env
        return (np.kron(self.h_sys, np.eye(de)) + np.kron(np.eye(ds), self.h_env)
                + 2 * self.g * self.h_int)

    def joint_liouvillian(self) -> np.ndarray:
        if self._joint is None:
            self._joint = build_joint_liouvillian(self)
        return self._joint

    def to_dict(self) -> dict:
        return {
            "n_sys": self.n_sys,
            "n_env": self.n_env,
            "alpha": self.alpha,
            "g": self.g,
            "seed": self.seed,
            "gue_normalization": "A_ij ~ CN(0, 1), H = (A + A^dag)/2",
            "h_sys": encode_matrix(self.h_sys),
            "h_env": encode_matrix(self.h_env),
            "h_int": encode_matrix(self.h_int),
            "env_jumps": [encode_matrix(j) for j in self.env_jumps],
            "rho_env": encode_matrix(self.rho_env),
        }

    @classmethod
    def from_dict(cls, data: dict) -> ReservoirModel:
        return cls(
            data["n_sys"], data["n_env"],
            decode_matrix(data["h_sys"]), decode_matrix(data["h_env"]), decode_matrix(data["h_int"]),
            [decode_matrix(j) for j in data["env_jumps"]],
            alpha=data["alpha"], g=data["g"], rho_env=decode_matrix(data["rho_env"]), seed=data.get("seed"),
        )


def random_reservoir_model(n_sys: int = 2, n_env: int = 2, seed=None, alpha: float = 1.0, g: float = 0.5,
                           rho_env: np.ndarray | None = None) -> ReservoirModel:
    """Draw ``H_S``, ``H_E``, ``H_int`` from the GUE and ``4**n_env - 1`` environment jumps."""
    rng = np.random.default_rng(seed)
    ds, de = 2**n_sys, 2**n_env
    h_sys = sample_gue(ds, rng)
    h_env = sample_gue(de, rng)
    h_int = sample_gue(ds * de, rng)
    jumps = [sample_env_jump(de, rng) for _ in range(4**n_env - 1)]
    return ReservoirModel(n_sys, n_env, h_sys, h_env, h_int, jumps, alpha, g, rho_env,
                          seed if isinstance(seed, (int, np.integer)) else None)


def build_joint_liouvillian(model: ReservoirModel) -> np.ndarray:
    """Static system+environment Lindbladian with jumps ``1_S (x) J_E``.

    The dissipator prefactor is ``alpha / (4**n_sys - 1)``.
    """
    ds = model.dim_sys
    jumps = [np.kron(np.eye(ds), j) for j in model.env_jumps]
    pref = model.alpha / (4**model.n_sys - 1)
    return commutator_superop(model.hamiltonian()) + pref * lindblad_dissipator(jumps)


def reduce_joint_superop(joint: np.ndarray, rho_env: np.ndarray, dim_sys: int) -> np.ndarray:
    """System superoperator ``X -> Tr_E[T(X (x) rho_env)]`` of a joint superoperator ``T``."""
    de = rho_env.shape[0]
    ds = dim_sys
    t = joint.reshape(ds, de, ds, de, ds, de, ds, de)
    out = np.einsum("imkmjnlo,no->ikjl", t, rho_env)
    return out.reshape(ds * ds, ds * ds)


def reduced_map(model: ReservoirModel, t: float) -> np.ndarray:
    """``Lambda_t(X) = Tr_E[exp(t L_SE)(X (x) rho_E)]`` as a system superoperator."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return _reduced_map_any_t(model, t)


def _reduced_map_any_t(model: ReservoirModel, t: float) -> np.ndarray:
    prop = expm(t * model.joint_liouvillian())
    return reduce_joint_superop(prop, model.rho_env, model.dim_sys)


def reduced_map_derivative(model: ReservoirModel, t: float) -> np.ndarray:
    """Exact ``d Lambda_t / dt = Tr_E[L_SE exp(t L_SE)(. (x) rho_E)]``."""
    lj = model.joint_liouvillian()
    return reduce_joint_superop(lj @ expm(t * lj), model.rho_env, model.dim_sys)


def projected_generator(model: ReservoirModel) -> np.ndarray:
    """Time-local generator at ``t = 0``: ``Tr_E[L_SE(. (x) rho_E)]``."""
    return reduce_joint_superop(model.joint_liouvillian(), model.rho_env, model.dim_sys)


def right_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """``num @ inv(den)`` via a linear solve, guarding against ill-conditioning."""
    cond = np.linalg.cond(den)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMapError(f"map condition number {cond:.3e} exceeds {COND_LIMIT:g}")
    return np.linalg.solve(den.T, num.T).T


def finite_difference_generator(map_at: Callable[[float], np.ndarray], t: float, dt: float) -> np.ndarray:
    """``L_t = [Lambda(t+dt) - Lambda(t-dt)] / (2 dt) Lambda(t)^-1``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    deriv = (map_at(t + dt) - map_at(t - dt)) / (2 * dt)
    return right_divide(deriv, map_at(t))


def ground_truth_generator(model, t: float, dt: float = 1e-4) -> np.ndarray:
    """Central-difference time-local generator of a reservoir model (or any ``t -> Lambda_t``)."""
    if isinstance(model, ReservoirModel):
        return finite_difference_generator(lambda s: _reduced_map_any_t(model, s), t, dt)
    return finite_difference_generator(model, t, dt)


def perturbed_spam(n_qubits: int, rng_seed=None, state_weight: float = 0.9,
                   povm_weight: float = 0.8) -> tuple[np.ndarray, Povm]:
    """``rho0 = 0.9|0><0| + 0.1 drho`` and ``M_l = 0.8|l><l| + 0.2 dM_l`` with random perturbations."""
    rng = _rng(rng_seed)
    d = 2**n_qubits
    a1, b1 = rng.standard_normal((d, d)), rng.standard_normal((d, d))
    a2, b2 = rng.standard_normal((d * d, d)), rng.standard_normal((d * d, d))
    drho = rho_param(a1 + 1j * b1)
    dm = povm_param(a2 + 1j * b2).elements
    ideal = np.zeros((d, d), dtype=complex)
    ideal[0, 0] = 1.0
    rho0 = state_weight * ideal + (1 - state_weight) * drho
    povm = povm_weight * Povm.computational(d).elements + (1 - povm_weight) * dm
    return rho0, Povm(povm)


def random_kraus_map(rank: int, dim: int, rng_seed=None) -> KrausMap:
    rng = _rng(rng_seed)
    a = rng.standard_normal((rank * dim, dim))
    b = rng.standard_normal((rank * dim, dim))
    return kraus_param(a + 1j * b)


class GroundTruth:
    """Maps, generators and canonical forms of a reservoir model, cached per time."""

    def __init__(self, model: ReservoirModel, dt: float = 1e-4):
        self.model = model
        self.dt = dt
        self._maps: dict[float, np.ndarray] = {}
        self._gens: dict[float, np.ndarray] = {}

    def map(self, t: float) -> np.ndarray:
        if t not in self._maps:
            self._maps[t] = reduced_map(self.model, t)
        return self._maps[t]

    def generator(self, t: float) -> np.ndarray:
        if t not in self._gens:
            self._gens[t] = ground_truth_generator(self.model, t, self.dt)
        return self._gens[t]

    def canonical(self, t: float):
        basis = pauli_basis(self.model.n_sys)
        return canonical_decomposition(canonical_split(self.generator(t), basis), basis)
