"""Pauli-string probe circuits: rotations, Born-rule probabilities and finite-shot data.

Rotation convention: ``R_A(theta) = exp(-i theta sigma_A / 2)``. The six preparation
rotations applied to ``|0>`` give the six Pauli eigenstates. A measurement in basis
``X``/``Y``/``Z`` is a rotation followed by a computational-basis readout, with the
rotation chosen so that outcome 0 corresponds to the +1 eigenstate on ideal hardware.
Qubit 0 is the leftmost tensor factor and the most significant bit of an outcome index.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from .core import SIGMA, kron_all, superop_dim
from .errors import DatasetError, ModelViolationError

PREP_LABELS = ("RY+", "RY-", "RX+", "RX-", "X", "I")
MEAS_LABELS = ("X", "Y", "Z")
KINDS = ("process", "spam")

CLIP_TOL = 1e-10
VIOLATION_TOL = 1e-6


def _axis_rotation(axis: str, theta: float) -> np.ndarray:
    s = SIGMA[axis]
    return np.cos(theta / 2) * np.eye(2) - 1j * np.sin(theta / 2) * s


def rotation_gate(label: str) -> np.ndarray:
    if label == "RY+":
        return _axis_rotation("y", np.pi / 2)
    if label == "RY-":
        return _axis_rotation("y", -np.pi / 2)
    if label == "RX+":
        return _axis_rotation("x", np.pi / 2)
    if label == "RX-":
        return _axis_rotation("x", -np.pi / 2)
    if label == "X":
        return SIGMA["x"].copy()
    if label == "I":
        return np.eye(2, dtype=complex)
    raise ValueError(f"unknown preparation label {label!r}")


def measurement_rotation(basis: str) -> np.ndarray:
    if basis == "Z":
        return np.eye(2, dtype=complex)
    if basis == "X":
        return _axis_rotation("y", -np.pi / 2)
    if basis == "Y":
        return _axis_rotation("x", np.pi / 2)
    raise ValueError(f"unknown measurement basis {basis!r}")


@dataclass(frozen=True, order=True)
class PauliConfig:
    prep: tuple[str, ...]
    meas: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "prep", tuple(self.prep))
        object.__setattr__(self, "meas", tuple(self.meas))
        if len(self.prep) != len(self.meas):
            raise ValueError("prep and meas must have one label per qubit")
        for p in self.prep:
            if p not in PREP_LABELS:
                raise ValueError(f"unknown preparation label {p!r}")
        for m in self.meas:
            if m not in MEAS_LABELS:
                raise ValueError(f"unknown measurement basis {m!r}")

    @property
    def n_qubits(self) -> int:
        return len(self.prep)

    def prep_index(self) -> int:
        idx = 0
        for p in self.prep:
            idx = idx * len(PREP_LABELS) + PREP_LABELS.index(p)
        return idx

    def meas_index(self) -> int:
        idx = 0
        for m in self.meas:
            idx = idx * len(MEAS_LABELS) + MEAS_LABELS.index(m)
        return idx


def prep_strings(n_qubits: int) -> list[tuple[str, ...]]:
    return list(product(PREP_LABELS, repeat=n_qubits))


def meas_strings(n_qubits: int) -> list[tuple[str, ...]]:
    return list(product(MEAS_LABELS, repeat=n_qubits))


def enumerate_configs(n_qubits: int, n_subset: int | None = None, seed: int | None = None) -> list[PauliConfig]:
    """All ``18**n_qubits`` probe configurations, or a seeded random subset of them.

    The full list is ordered lexicographically, preparation string first. A subset
    keeps that relative order.
    """
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    full = [PauliConfig(p, m) for p in prep_strings(n_qubits) for m in meas_strings(n_qubits)]
    if n_subset is None:
        return full
    if not 1 <= n_subset <= len(full):
        raise ValueError(f"subset size {n_subset} not in [1, {len(full)}]")
    idx = np.sort(np.random.default_rng(seed).choice(len(full), size=n_subset, replace=False))
    return [full[i] for i in idx]


def spam_configs(n_qubits: int) -> list[PauliConfig]:
    """One configuration per preparation string; measured without a basis rotation."""
    z = ("Z",) * n_qubits
    return [PauliConfig(p, z) for p in prep_strings(n_qubits)]


@lru_cache(maxsize=None)
def _prep_unitaries(n_qubits: int) -> np.ndarray:
    singles = {lab: rotation_gate(lab) for lab in PREP_LABELS}
    return np.array([kron_all([singles[c] for c in s]) for s in prep_strings(n_qubits)])


@lru_cache(maxsize=None)
def _meas_unitaries(n_qubits: int) -> np.ndarray:
    singles = {lab: measurement_rotation(lab) for lab in MEAS_LABELS}
    return np.array([kron_all([singles[c] for c in s]) for s in meas_strings(n_qubits)])


def prep_unitaries(n_qubits: int) -> np.ndarray:
    """``(6**n, d, d)`` array of preparation unitaries in enumeration order."""
    return _prep_unitaries(n_qubits).copy()


def meas_unitaries(n_qubits: int) -> np.ndarray:
    """``(3**n, d, d)`` array of measurement rotations in enumeration order."""
    return _meas_unitaries(n_qubits).copy()


def input_states(rho0: np.ndarray) -> np.ndarray:
    """All prepared states ``R_i rho0 R_i^dagger``, shape ``(6**n, d, d)``."""
    n = int(round(np.log2(rho0.shape[0])))
    r = _prep_unitaries(n)
    return r @ rho0 @ r.conj().transpose(0, 2, 1)


def measurement_effects(povm_elements: np.ndarray, rotate: bool = True) -> np.ndarray:
    """Effects ``R_j^dagger M_l R_j``, shape ``(3**n, n_outcomes, d, d)``.

    With ``rotate=False`` the single unrotated POVM is returned with a leading axis of 1.
    """
    m = np.asarray(povm_elements)
    if not rotate:
        return m[None].copy()
    n = int(round(np.log2(m.shape[-1])))
    r = _meas_unitaries(n)
    return r.conj().transpose(0, 2, 1)[:, None] @ m[None] @ r[:, None]


def probability_table(
    superop: np.ndarray | None, rho0: np.ndarray, povm_elements: np.ndarray, rotate: bool = True
) -> np.ndarray:
    """Born-rule probabilities for every (preparation, measurement) pair.

    Returns an array of shape ``(n_prep, n_meas, n_outcomes)``; ``superop=None`` means
    the identity channel. Entries are raw (not clipped).
    """
    states = input_states(rho0)
    if superop is not None:
        d = superop_dim(superop)
        states = (states.reshape(len(states), -1) @ superop.T).reshape(-1, d, d)
    effects = measurement_effects(povm_elements, rotate)
    # Tr[X M] = sum_ab X_ab M_ba
    return np.einsum("iab,jlba->ijl", states, effects).real


def check_probabilities(p: np.ndarray) -> np.ndarray:
    """Clip numerical noise to [0, 1]; raise on genuine violations."""
    lo, hi = float(np.min(p)), float(np.max(p))
    if lo < -VIOLATION_TOL or hi > 1 + VIOLATION_TOL:
        raise ModelViolationError(f"probabilities span [{lo:.3e}, {hi:.6f}]")
    return np.clip(p, 0.0, 1.0)


def born_probabilities(superop, rho0, povm_elements, config: PauliConfig) -> np.ndarray:
    """Outcome distribution ``p_{l|ij} = Tr[Lambda(R_i rho0 R_i^dag) R_j^dag M_l R_j]``."""
    ri = _prep_unitaries(config.n_qubits)[config.prep_index()]
    rj = _meas_unitaries(config.n_qubits)[config.meas_index()]
    d = rho0.shape[0]
    state = ri @ rho0 @ ri.conj().T
    if superop is not None:
        state = (superop @ state.reshape(-1)).reshape(d, d)
    effects = rj.conj().T @ np.asarray(povm_elements) @ rj
    return check_probabilities(np.einsum("ab,lba->l", state, effects).real)


def spam_probabilities(rho0, povm_elements, prep: tuple[str, ...]) -> np.ndarray:
    """``p_{l|i} = Tr[R_i rho0 R_i^dag M_l]``: preparation followed by direct readout."""
    cfg = PauliConfig(tuple(prep), ("Z",) * len(prep))
    return born_probabilities(None, rho0, povm_elements, cfg)


def sample_counts(probs, shots: int, rng_seed=None) -> np.ndarray:
    """Multinomial outcome counts. ``probs`` may be 1-d or a stack of distributions.

    ``rng_seed`` may be an integer seed or a ``numpy.random.Generator``.
    """
    p = np.asarray(probs, dtype=float)
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if np.any(p < -VIOLATION_TOL):
        raise ModelViolationError("negative probability")
    p = np.clip(p, 0.0, None)
    total = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(total - 1) > 1e-8):
        raise ModelViolationError("probabilities do not sum to 1 within 1e-8")
    p = p / total
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.multinomial(shots, p).astype(np.int64)


@dataclass
class PauliDataset:
    """Outcome record for a list of probe configurations at one evolution time.

    Either ``counts`` (finite shots) or ``probabilities`` (exact, ``shots=None``)
    is populated; :attr:`frequencies` gives the empirical estimate in both cases.
    """

    n_qubits: int
    time_tag: float
    shots: int | None
    kind: str
    configs: list[PauliConfig]
    counts: np.ndarray | None = None
    probabilities: np.ndarray | None = None
    _index: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"unknown dataset kind {self.kind!r}")
        self.configs = list(self.configs)
        if not self.configs:
            raise DatasetError("dataset has no configurations")
        d = 2**self.n_qubits
        if any(c.n_qubits != self.n_qubits for c in self.configs):
            raise DatasetError("configuration size does not match n_qubits")
        if self.counts is not None:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (len(self.configs), d):
                raise DatasetError(f"counts shape {self.counts.shape} != ({len(self.configs)}, {d})")
            if np.any(self.counts < 0):
                raise DatasetError("negative counts")
            if self.shots is None or np.any(self.counts.sum(axis=1) != self.shots):
                raise DatasetError("counts do not sum to the number of shots")
        elif self.probabilities is not None:
            self.probabilities = np.asarray(self.probabilities, dtype=float)
            if self.probabilities.shape != (len(self.configs), d):
                raise DatasetError("probabilities shape mismatch")
        else:
            raise DatasetError("dataset needs counts or exact probabilities")

    def __len__(self) -> int:
        return len(self.configs)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @property
    def frequencies(self) -> np.ndarray:
        if self.counts is not None:
            return self.counts / self.shots
        return self.probabilities

    @property
    def index(self) -> tuple[np.ndarray, np.ndarray]:
        """Preparation and measurement indices of each configuration."""
        if self._index is None:
            self._index = (
                np.array([c.prep_index() for c in self.configs]),
                np.array([c.meas_index() for c in self.configs]),
            )
        return self._index

    def with_counts(self, counts: np.ndarray) -> PauliDataset:
        return PauliDataset(self.n_qubits, self.time_tag, self.shots, self.kind, self.configs, counts=counts)

    def to_dict(self) -> dict:
        records = []
        for k, c in enumerate(self.configs):
            rec = {"prep": list(c.prep), "meas": list(c.meas)}
            if self.counts is not None:
                rec["counts"] = [int(x) for x in self.counts[k]]
            else:
                rec["probabilities"] = [float(x) for x in self.probabilities[k]]
            records.append(rec)
        return {
            "schema_version": 1,
            "n_qubits": self.n_qubits,
            "time_tag": float(self.time_tag),
            "shots": self.shots,
            "kind": self.kind,
            "records": records,
        }

    @classmethod
    def from_dict(cls, data: dict) -> PauliDataset:
        recs = data["records"]
        configs = [PauliConfig(r["prep"], r["meas"]) for r in recs]
        if recs and "counts" in recs[0]:
            return cls(data["n_qubits"], data["time_tag"], data["shots"], data["kind"], configs,
                       counts=np.array([r["counts"] for r in recs]))
        return cls(data["n_qubits"], data["time_tag"], data.get("shots"), data["kind"], configs,
                   probabilities=np.array([r["probabilities"] for r in recs]))


def simulate_dataset(
    superop: np.ndarray | None,
    rho0: np.ndarray,
    povm_elements: np.ndarray,
    configs: list[PauliConfig],
    shots: int | None,
    seed=None,
    time_tag: float = 0.0,
    kind: str = "process",
) -> PauliDataset:
    """Sample (or, with ``shots=None``, tabulate exactly) the probe outcomes of a channel."""
    n = configs[0].n_qubits
    # spam configurations carry Z bases, whose rotation is the identity
    table = probability_table(None if kind == "spam" else superop, rho0, povm_elements)
    pi = np.array([c.prep_index() for c in configs])
    mj = np.array([c.meas_index() for c in configs])
    probs = check_probabilities(table[pi, mj])
    if shots is None:
        return PauliDataset(n, time_tag, None, kind, configs, probabilities=probs)
    return PauliDataset(n, time_tag, shots, kind, configs, counts=sample_counts(probs, shots, seed))
