"""Time-local Liouvillian regression from derivatives of probe probabilities.

The generator is parameterized as

    L(h, K) = -i (H (x) 1 - 1 (x) H^T)
              + sum_{mu,nu>=1} gamma_{mu nu} [G_mu (x) G_nu^* - (G_nu G_mu (x) 1 + 1 (x) (G_nu G_mu)^T) / 2]

with ``H = sum_{mu>=1} h_mu G_mu`` and ``gamma = K + K^dag`` over the normalized
Pauli basis ``G``. ``L`` is linear in ``(h, gamma)``, so the fit is a linear least
squares problem; it is solved either with Adam over the unconstrained ``(h, K)`` or
directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import PauliBasis, commutator_superop, pauli_basis, superop_dim
from .errors import DatasetError, DimensionError, NotLindbladError
from .io import decode_matrix, encode_matrices, encode_matrix
from .optimize import AdamConfig, FitTrace, adam_minimize, pack, unpack
from .probes import PauliConfig, PauliDataset, input_states, measurement_effects

DEGENERACY_GAP = 1e-8
SPLIT_RESIDUAL_LIMIT = 1e-6


def hermitian_to_coords(gamma: np.ndarray) -> np.ndarray:
    """Real coordinates of a Hermitian matrix: diagonal, then Re and Im of the upper triangle."""
    iu = np.triu_indices(gamma.shape[0], 1)
    up = gamma[iu]
    return np.concatenate([np.diagonal(gamma).real, up.real, up.imag])


def coords_to_hermitian(coords: np.ndarray, n: int) -> np.ndarray:
    iu = np.triu_indices(n, 1)
    m = len(iu[0])
    gamma = np.diag(coords[:n]).astype(complex)
    up = coords[n:n + m] + 1j * coords[n + m:n + 2 * m]
    gamma[iu] = up
    gamma[(iu[1], iu[0])] = up.conj()
    return gamma


@dataclass
class LiouvillianParams:
    h: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.K = np.asarray(self.K, dtype=complex)
        n = self.h.size
        if self.K.shape != (n, n):
            raise DimensionError(f"K must be {n} x {n}, got {self.K.shape}")

    @property
    def gamma(self) -> np.ndarray:
        return self.K + self.K.conj().T

    @property
    def n_qubits(self) -> int:
        return int(round(np.log2(self.h.size + 1) / 2))

    def to_dict(self) -> dict:
        return {"h": self.h.tolist(), "K": encode_matrix(self.K), "gamma": encode_matrix(self.gamma)}

    @classmethod
    def from_dict(cls, data: dict) -> LiouvillianParams:
        return cls(data["h"], decode_matrix(data["K"]))

    def coords(self) -> np.ndarray:
        return np.concatenate([self.h, hermitian_to_coords(self.gamma)])

    @classmethod
    def from_coords(cls, coords: np.ndarray, n: int) -> LiouvillianParams:
        return cls(coords[:n], coords_to_hermitian(coords[n:], n) / 2)

    @classmethod
    def from_gamma(cls, h, gamma) -> LiouvillianParams:
        return cls(h, np.asarray(gamma) / 2)

    def superoperator(self, basis: PauliBasis | None = None) -> np.ndarray:
        return liouvillian_superoperator(self, basis or pauli_basis(self.n_qubits))


def liouvillian_superoperator(params: LiouvillianParams, basis: PauliBasis) -> np.ndarray:
    g = basis.elements[1:]
    n = len(g)
    if params.h.size != n:
        raise DimensionError(f"parameters have {params.h.size} components, basis needs {n}")
    d = basis.dim
    eye = np.eye(d)
    gamma = params.gamma
    ham = np.tensordot(params.h, g, axes=1)
    jump_part = np.einsum("mn,mab,ncd->acbd", gamma, g, g.conj()).reshape(d * d, d * d)
    anti = np.einsum("mn,nab,mbc->ac", gamma, g, g)
    return commutator_superop(ham) + jump_part - 0.5 * (np.kron(anti, eye) + np.kron(eye, anti.T))


@lru_cache(maxsize=None)
def _generator_basis(n_qubits: int) -> np.ndarray:
    """Superoperators for each real coordinate in ``LiouvillianParams.coords`` order."""
    basis = pauli_basis(n_qubits)
    g = basis.elements[1:]
    n = len(g)
    d = basis.dim
    eye = np.eye(d)

    def dmat(mu, nu):
        prod = g[nu] @ g[mu]
        return np.kron(g[mu], g[nu].conj()) - 0.5 * (np.kron(prod, eye) + np.kron(eye, prod.T))

    out = [commutator_superop(g[mu]) for mu in range(n)]
    out += [dmat(mu, mu) for mu in range(n)]
    iu = np.triu_indices(n, 1)
    pairs = list(zip(*iu))
    out += [dmat(mu, nu) + dmat(nu, mu) for mu, nu in pairs]
    out += [1j * (dmat(mu, nu) - dmat(nu, mu)) for mu, nu in pairs]
    return np.array(out)


@lru_cache(maxsize=None)
def _split_solver(n_qubits: int) -> tuple[np.ndarray, np.ndarray]:
    b = _generator_basis(n_qubits)
    flat = b.reshape(len(b), -1).T
    real = np.vstack([flat.real, flat.imag])
    return real, np.linalg.pinv(real)


def canonical_split(superop: np.ndarray, basis: PauliBasis, return_residual: bool = False):
    """Express a generator in the ``(h, gamma)`` coordinates (inverse of :func:`liouvillian_superoperator`).

    Raises :class:`NotLindbladError` when the best fit leaves a residual above 1e-6.
    """
    d = superop_dim(superop)
    if d != basis.dim:
        raise DimensionError("superoperator and basis dimensions differ")
    real, pinv = _split_solver(basis.n_qubits)
    rhs = np.concatenate([superop.real.ravel(), superop.imag.ravel()])
    coords = pinv @ rhs
    residual = float(np.max(np.abs(real @ coords - rhs)))
    if residual > SPLIT_RESIDUAL_LIMIT:
        raise NotLindbladError(f"superoperator is not of generator form (residual {residual:.3e})", residual)
    params = LiouvillianParams.from_coords(coords, len(basis) - 1)
    return (params, residual) if return_residual else params


@dataclass
class CanonicalLiouvillian:
    """Hamiltonian, rates (descending) and unit-norm traceless jump operators.

    ``jump_coeffs[k]`` holds the expansion of jump ``k`` over ``G_1 ... G_{d^2-1}``.
    """

    h: np.ndarray
    hamiltonian: np.ndarray
    rates: np.ndarray
    jump_coeffs: np.ndarray
    jumps: np.ndarray
    degenerate: bool
    non_markovian: bool

    def gamma(self) -> np.ndarray:
        j = self.jump_coeffs
        return np.einsum("k,ka,kb->ab", self.rates, j, j.conj())

    def to_dict(self) -> dict:
        return {
            "h": self.h.tolist(),
            "rates": self.rates.tolist(),
            "jump_coeffs": encode_matrix(self.jump_coeffs),
            "jumps": encode_matrices(self.jumps),
            "degenerate": self.degenerate,
            "non_markovian": self.non_markovian,
        }


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(vec)))
    if abs(vec[k]) == 0:
        return vec
    return vec * (abs(vec[k]) / vec[k])


def canonical_decomposition(params: LiouvillianParams, basis: PauliBasis | None = None,
                            negative_tol: float = 1e-9) -> CanonicalLiouvillian:
    """Diagonalize ``gamma``: rates are its eigenvalues, jumps its eigenvectors in the basis.

    Each eigenvector's phase is fixed so its largest-magnitude component is real positive.
    """
    basis = basis or pauli_basis(params.n_qubits)
    g = basis.elements[1:]
    gamma = params.gamma
    w, v = np.linalg.eigh(0.5 * (gamma + gamma.conj().T))
    order = np.argsort(w)[::-1]
    rates = w[order]
    coeffs = np.array([_fix_phase(v[:, k]) for k in order])
    jumps = np.tensordot(coeffs, g, axes=1)
    gaps = np.abs(np.diff(rates))
    scale = max(1.0, float(np.max(np.abs(rates)))) if rates.size else 1.0
    return CanonicalLiouvillian(
        h=params.h.copy(),
        hamiltonian=np.tensordot(params.h, g, axes=1),
        rates=rates,
        jump_coeffs=coeffs,
        jumps=jumps,
        degenerate=bool(np.any(gaps < DEGENERACY_GAP)),
        non_markovian=bool(np.any(rates < -negative_tol * scale)),
    )


def markovianity_witness(canonical, rate_errors, tolerance: float = 1e-8) -> str:
    """Classify rates against their error bars.

    ``non_markovian`` if some rate is negative by more than its error bar,
    ``markovian_consistent`` if every rate minus its error bar exceeds ``-tolerance``,
    ``inconclusive`` otherwise.
    """
    rates = np.asarray(getattr(canonical, "rates", canonical), dtype=float)
    errs = np.asarray(rate_errors, dtype=float)
    if rates.shape != errs.shape:
        raise ValueError(f"{rates.size} rates but {errs.size} error bars")
    if np.any(rates + errs < 0):
        return "non_markovian"
    if np.all(rates - errs > -tolerance):
        return "markovian_consistent"
    return "inconclusive"


# --- derivative estimation -------------------------------------------------

SCHEMES = ("central", "forward")


@dataclass
class DerivativeTable:
    values: np.ndarray  # (n_configs, n_outcomes)
    configs: list[PauliConfig]
    scheme: str
    dt: float
    time: float
    source_times: tuple[float, ...]

    @property
    def n_qubits(self) -> int:
        return self.configs[0].n_qubits

    def __len__(self) -> int:
        return len(self.configs)


def _check_compatible(datasets: list[PauliDataset]) -> None:
    ref = datasets[0]
    for ds in datasets[1:]:
        if ds.kind != ref.kind or ds.n_qubits != ref.n_qubits:
            raise DatasetError("datasets differ in kind or qubit number")
        if ds.configs != ref.configs:
            raise DatasetError("datasets have mismatched configuration sets")
        if ds.shots != ref.shots:
            raise DatasetError("datasets have different shot counts")


def _stencil(datasets, scheme):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    ds = sorted(datasets, key=lambda x: x.time_tag)
    _check_compatible(ds)
    if scheme == "central":
        if len(ds) != 3:
            raise DatasetError("central differences need datasets at t-dt, t, t+dt")
        h1 = ds[1].time_tag - ds[0].time_tag
        h2 = ds[2].time_tag - ds[1].time_tag
        if h1 <= 0 or abs(h1 - h2) > 1e-9 * max(1.0, abs(h1)):
            raise DatasetError(f"non-uniform time spacing ({h1}, {h2})")
        return ds[0], ds[2], ds[1].time_tag, 0.5 * (h1 + h2), ds
    if len(ds) not in (2, 3):
        raise DatasetError("forward differences need datasets at t, t+dt")
    lo, hi = ds[-2], ds[-1]
    dt = hi.time_tag - lo.time_tag
    if dt <= 0:
        raise DatasetError("datasets must be at distinct times")
    return lo, hi, lo.time_tag, dt, ds


def estimate_derivatives(datasets: list[PauliDataset], scheme: str = "central") -> DerivativeTable:
    """Finite-difference estimate of ``d p_{l|ij} / dt``.

    ``central`` takes three datasets at ``t - dt, t, t + dt``; ``forward`` takes
    ``t, t + dt`` (given three, the last two are used).
    """
    lo, hi, t, dt, ds = _stencil(datasets, scheme)
    span = hi.time_tag - lo.time_tag
    values = (hi.frequencies - lo.frequencies) / span
    return DerivativeTable(values, list(lo.configs), scheme, dt, t, tuple(d.time_tag for d in ds))


def dt_adequacy(datasets: list[PauliDataset], shots: int | None = None, scheme: str | None = None) -> dict:
    """Compare the mean absolute finite difference with the shot-noise floor ``1/sqrt(N_s)``."""
    if scheme is None:
        scheme = "central" if len(datasets) == 3 else "forward"
    lo, hi, *_ = _stencil(datasets, scheme)
    shots = shots if shots is not None else lo.shots
    diff = float(np.mean(np.abs(hi.frequencies - lo.frequencies)))
    floor = 1.0 / np.sqrt(shots) if shots else 0.0
    return {"mean_abs_diff": diff, "shot_noise_floor": float(floor), "adequate": bool(diff > floor)}


# --- regression ------------------------------------------------------------

class LiouvillianDesign:
    """Linear model ``dp/dt = A @ coords`` for one derivative table.

    Row ``(k, l)`` corresponds to configuration ``k`` and outcome ``l``; columns follow
    :meth:`LiouvillianParams.coords`.
    """

    def __init__(self, derivs: DerivativeTable, superop: np.ndarray, rho0: np.ndarray, povm_elements: np.ndarray):
        n_q = derivs.n_qubits
        d = 2**n_q
        if superop_dim(superop) != d or rho0.shape != (d, d):
            raise DimensionError("map/SPAM dimensions do not match the derivative table")
        self.n_qubits = n_q
        self.n = d * d - 1
        states = input_states(rho0)
        evolved = states.reshape(len(states), -1) @ superop.T  # rows: vec Lambda(rho_i)
        effects = measurement_effects(povm_elements)
        n_meas, n_out = effects.shape[:2]
        eff = effects.transpose(0, 1, 3, 2).reshape(n_meas * n_out, d * d)
        basis = _generator_basis(n_q)
        # pred[c, a, i] = Re(eff_a . B_c . vec Lambda(rho_i))
        tmp = np.einsum("cpq,iq->cpi", basis, evolved)
        pred = np.einsum("ap,cpi->cai", eff, tmp).real
        pi = np.array([c.prep_index() for c in derivs.configs])
        mj = np.array([c.meas_index() for c in derivs.configs])
        rows_a = (mj[:, None] * n_out + np.arange(n_out)[None, :]).ravel()
        rows_i = np.repeat(pi, n_out)
        self.matrix = pred[:, rows_a, rows_i].T
        self.target = derivs.values.ravel()
        self.n_terms = float(self.target.size)

    def predict(self, coords: np.ndarray) -> np.ndarray:
        return self.matrix @ coords

    def loss(self, coords: np.ndarray) -> float:
        r = self.predict(coords) - self.target
        return float(r @ r / self.n_terms)

    def lstsq(self) -> tuple[np.ndarray, int]:
        coords, _, rank, _ = np.linalg.lstsq(self.matrix, self.target, rcond=None)
        return coords, int(rank)

    def raw_jacobian(self) -> np.ndarray:
        """Linear map from packed ``(h, K)`` to coords."""
        n = self.n
        n_raw = n + 2 * n * n
        jac = np.empty((n + n * n, n_raw))
        for k in range(n_raw):
            e = np.zeros(n_raw)
            e[k] = 1.0
            jac[:, k] = _raw_to_coords(e, n)
        return jac


def _raw_to_coords(theta: np.ndarray, n: int) -> np.ndarray:
    (k,) = unpack(theta[n:], (n, n))
    return np.concatenate([theta[:n], hermitian_to_coords(k + k.conj().T)])


def _raw_to_params(theta: np.ndarray, n: int) -> LiouvillianParams:
    (k,) = unpack(theta[n:], (n, n))
    return LiouvillianParams(theta[:n], k)


def liouvillian_objective(design: LiouvillianDesign):
    """``(value, value_and_grad)`` of the regression loss over packed ``(h, K)``."""
    a = design.matrix @ design.raw_jacobian()
    c = 1.0 / design.n_terms
    normal = c * (a.T @ a)
    rhs = c * (a.T @ design.target)
    yy = c * float(design.target @ design.target)

    def value(theta):
        r = a @ theta - design.target
        return float(r @ r) * c

    def value_and_grad(theta):
        nt = normal @ theta
        return float(theta @ nt - 2 * rhs @ theta + yy), 2.0 * (nt - rhs)

    return value, value_and_grad


@dataclass
class LiouvillianFit:
    params: LiouvillianParams
    loss: float
    method: str
    rank: int
    null_dim: int
    trace: FitTrace | None = None
    config: dict = field(default_factory=dict)
    # loss of the direct least-squares solution, for comparison
    oracle_loss: float | None = None

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "loss": self.loss,
            "oracle_loss": self.oracle_loss,
            "method": self.method,
            "rank": self.rank,
            "null_dim": self.null_dim,
            "trace": self.trace.summary() if self.trace else None,
            "config": self.config,
        }


LIOUVILLIAN_ADAM = AdamConfig(step_size=1e-2, max_iters=60000, grad_tolerance=1e-10, patience=2000,
                              min_rel_improvement=1e-12, decay=0.9999)


def _as_superop(map_est) -> np.ndarray:
    return map_est if isinstance(map_est, np.ndarray) else map_est.superoperator()


def _as_spam(spam) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(spam, tuple):
        rho0, povm = spam
    else:
        rho0, povm = spam.rho0, spam.povm
    return np.asarray(rho0), np.asarray(getattr(povm, "elements", povm))


def fit_liouvillian(derivs: DerivativeTable, map_est, spam, config: AdamConfig | None = None,
                    method: str = "adam", design: LiouvillianDesign | None = None) -> LiouvillianFit:
    """Regress ``(h, K)`` from a derivative table, a map estimate and SPAM.

    ``map_est`` is a :class:`~qlt.process.MapEstimate` or a superoperator; ``spam`` a
    :class:`~qlt.spam.SpamEstimate` or ``(rho0, povm_elements)``. ``method='least_squares'``
    solves the normal equations directly (minimum-norm on rank deficiency); ``'adam'``
    minimizes the same loss iteratively from zero.
    """
    if len(derivs) == 0:
        raise DatasetError("empty derivative table")
    rho0, povm = _as_spam(spam)
    design = design or LiouvillianDesign(derivs, _as_superop(map_est), rho0, povm)
    n = design.n
    n_coords = design.matrix.shape[1]
    coords, rank = design.lstsq()
    if method == "least_squares":
        params = LiouvillianParams.from_coords(coords, n)
        f = design.loss(coords)
        return LiouvillianFit(params, f, method, rank, n_coords - rank, oracle_loss=f)
    if method != "adam":
        raise ValueError(f"unknown method {method!r}")
    cfg = config or LIOUVILLIAN_ADAM
    value, value_and_grad = liouvillian_objective(design)
    theta, trace = adam_minimize(value, None, np.zeros(n + 2 * n * n), cfg, value_and_grad=value_and_grad)
    params = _raw_to_params(theta, n)
    return LiouvillianFit(params, value(theta), method, rank, n_coords - rank, trace, {"adam": cfg.to_dict()},
                          design.loss(coords))
