"""Staged reconstruction: SPAM, then the map at each time, then the generator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import pauli_basis
from .liouvillian import (
    LIOUVILLIAN_ADAM,
    CanonicalLiouvillian,
    DerivativeTable,
    LiouvillianDesign,
    LiouvillianFit,
    canonical_decomposition,
    estimate_derivatives,
    fit_liouvillian,
)
from .metrics import r2
from .optimize import AdamConfig
from .probes import PauliDataset
from .process import MapEstimate, ProbeLoss, fit_map
from .spam import SpamEstimate, SpamLoss, fit_spam


@dataclass
class PipelineSettings:
    spam_adam: AdamConfig = field(default_factory=AdamConfig)
    map_adam: AdamConfig = field(default_factory=AdamConfig)
    liouvillian_adam: AdamConfig = field(default_factory=lambda: LIOUVILLIAN_ADAM)
    spam_restarts: int = 3
    map_restarts: int = 1
    jitter: float = 0.05
    rank: int | None = None
    scheme: str = "central"
    method: str = "adam"

    def to_dict(self) -> dict:
        return {
            "spam_adam": self.spam_adam.to_dict(),
            "map_adam": self.map_adam.to_dict(),
            "liouvillian_adam": self.liouvillian_adam.to_dict(),
            "spam_restarts": self.spam_restarts,
            "map_restarts": self.map_restarts,
            "jitter": self.jitter,
            "rank": self.rank,
            "scheme": self.scheme,
            "method": self.method,
        }

    @classmethod
    def from_dict(cls, data: dict | None) -> PipelineSettings:
        data = dict(data or {})
        for key in ("spam_adam", "map_adam", "liouvillian_adam"):
            if key in data:
                data[key] = AdamConfig.from_dict(data[key])
        return cls(**data)


@dataclass
class TimeStep:
    time: float
    map_est: MapEstimate
    derivs: DerivativeTable
    fit: LiouvillianFit
    canonical: CanonicalLiouvillian
    r2_map: float
    r2_liouvillian: float


@dataclass
class PipelineResult:
    spam: SpamEstimate
    steps: list[TimeStep]
    r2_spam: float

    def step(self, t: float) -> TimeStep:
        for s in self.steps:
            if abs(s.time - t) < 1e-12:
                return s
        raise KeyError(t)

    def observables(self) -> dict[str, np.ndarray]:
        """Arrays indexed ``[time, component]`` for bootstrap error bars."""
        return {
            "h": np.array([s.canonical.h for s in self.steps]),
            "rates": np.array([s.canonical.rates for s in self.steps]),
            "jump_re": np.array([s.canonical.jump_coeffs.real for s in self.steps]),
            "jump_im": np.array([s.canonical.jump_coeffs.imag for s in self.steps]),
        }


def _safe_r2(observed, predicted) -> float:
    try:
        return r2(observed, predicted)
    except ValueError:
        return float("nan")


def _centre(group: list[PauliDataset], t: float) -> PauliDataset:
    return min(group, key=lambda d: abs(d.time_tag - t))


def run_time_step(spam: SpamEstimate, group: list[PauliDataset], settings: PipelineSettings,
                  seed: int = 0) -> TimeStep:
    """Map fit on the dataset at ``t`` and generator regression from the stencil ``group``."""
    derivs = estimate_derivatives(group, settings.scheme)
    t = derivs.time
    centre = _centre(group, t)
    povm = spam.povm.elements
    map_est = fit_map(centre, spam.rho0, povm, settings.rank, settings.map_adam, seed=seed,
                      jitter=settings.jitter, restarts=settings.map_restarts)
    superop = map_est.superoperator()
    design = LiouvillianDesign(derivs, superop, spam.rho0, povm)
    fit = fit_liouvillian(derivs, superop, (spam.rho0, povm), settings.liouvillian_adam, settings.method, design)
    canonical = canonical_decomposition(fit.params, pauli_basis(derivs.n_qubits))
    probe = ProbeLoss(centre, spam.rho0, povm)
    mask = probe.mask.astype(bool)
    r2_map = _safe_r2(probe.target[mask], probe.predict(superop)[mask])
    r2_l = _safe_r2(design.target, design.predict(fit.params.coords()))
    return TimeStep(t, map_est, derivs, fit, canonical, r2_map, r2_l)


def run_pipeline(spam_dataset: PauliDataset, groups: list[list[PauliDataset]],
                 settings: PipelineSettings | None = None, seed: int = 0) -> PipelineResult:
    """SPAM fit once, then one :class:`TimeStep` per stencil group."""
    settings = settings or PipelineSettings()
    spam = fit_spam(spam_dataset, settings.spam_adam, seed=seed, jitter=settings.jitter,
                    restarts=settings.spam_restarts)
    loss = SpamLoss(spam_dataset)
    r2_spam = _safe_r2(loss.target, loss.predict(spam.rho0, spam.povm.elements))
    steps = [run_time_step(spam, g, settings, seed=seed + 1 + k) for k, g in enumerate(groups)]
    return PipelineResult(spam, steps, r2_spam)


@dataclass
class Benchmark:
    spam_dataset: PauliDataset
    groups: list[list[PauliDataset]]
    times: list[float]
    dt: float


def stencil_times(t: float, dt: float, scheme: str = "central") -> tuple[float, ...]:
    return (t - dt, t, t + dt) if scheme == "central" else (t, t + dt)


def simulate_benchmark(map_at, rho0: np.ndarray, povm_elements: np.ndarray, times, dt: float,
                       shots: int | None, seed: int = 0, configs=None, scheme: str = "central") -> Benchmark:
    """SPAM dataset plus one stencil of process datasets per time.

    ``map_at`` maps a time to a superoperator. Each dataset gets its own child seed
    of ``seed`` so the files are reproducible individually.
    """
    from .probes import enumerate_configs, spam_configs, simulate_dataset

    n_qubits = int(round(np.log2(rho0.shape[0])))
    configs = configs or enumerate_configs(n_qubits)
    times = [float(t) for t in times]
    stencils = [stencil_times(t, dt, scheme) for t in times]
    children = np.random.SeedSequence(seed).spawn(1 + sum(len(s) for s in stencils))
    spam_ds = simulate_dataset(None, rho0, povm_elements, spam_configs(n_qubits), shots,
                               np.random.default_rng(children[0]), 0.0, "spam")
    groups, k = [], 1
    for st in stencils:
        group = []
        for s in st:
            group.append(simulate_dataset(map_at(s), rho0, povm_elements, configs, shots,
                                          np.random.default_rng(children[k]), s))
            k += 1
        groups.append(group)
    return Benchmark(spam_ds, groups, times, dt)


def flatten_datasets(spam_dataset: PauliDataset, groups: list[list[PauliDataset]]) -> list[PauliDataset]:
    return [spam_dataset] + [ds for g in groups for ds in g]


@dataclass
class ChainReplica:
    """Picklable ``datasets -> observables`` callable for :func:`qlt.bootstrap.bootstrap`.

    The dataset list is ``[spam, *group_0, *group_1, ...]`` as built by :func:`flatten_datasets`.
    """

    settings: PipelineSettings
    group_sizes: tuple[int, ...]
    seed: int = 0

    def split(self, datasets: list[PauliDataset]) -> tuple[PauliDataset, list[list[PauliDataset]]]:
        groups, k = [], 1
        for n in self.group_sizes:
            groups.append(list(datasets[k:k + n]))
            k += n
        return datasets[0], groups

    def __call__(self, datasets: list[PauliDataset]) -> dict[str, np.ndarray]:
        spam, groups = self.split(datasets)
        return run_pipeline(spam, groups, self.settings, self.seed).observables()
