"""Multinomial bootstrap of any count-based reconstruction."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DatasetError, QLTError
from .probes import PauliDataset, sample_counts

Observables = dict[str, np.ndarray]


def resample(dataset: PauliDataset, rng) -> PauliDataset:
    """Redraw every configuration's counts from its empirical frequencies at the original shot count."""
    if dataset.counts is None:
        raise DatasetError("exact-probability datasets cannot be resampled")
    return dataset.with_counts(sample_counts(dataset.frequencies, dataset.shots, rng))


def replica_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def resample_all(datasets: list[PauliDataset], replica_seed: int) -> list[PauliDataset]:
    return [resample(ds, np.random.default_rng([replica_seed, k])) for k, ds in enumerate(datasets)]


@dataclass
class BootstrapReport:
    requested: int
    seeds: list[int]
    original: Observables
    replicas: dict[str, np.ndarray]  # each (M_effective, ...)
    failures: list[dict] = field(default_factory=list)

    @property
    def effective(self) -> int:
        return len(self.seeds) - len(self.failures)

    @property
    def errors(self) -> Observables:
        """``sqrt(mean_m (O_m - O_original)^2)`` per observable entry."""
        return {k: np.sqrt(np.mean((v - self.original[k]) ** 2, axis=0)) for k, v in self.replicas.items()}

    @property
    def means(self) -> Observables:
        return {k: v.mean(axis=0) for k, v in self.replicas.items()}

    def to_dict(self) -> dict:
        errs, means = self.errors, self.means
        return {
            "schema_version": 1,
            "requested": self.requested,
            "effective": self.effective,
            "replica_seeds": self.seeds,
            "failures": self.failures,
            "observables": {
                k: {"original": np.asarray(self.original[k]).tolist(), "mean": means[k].tolist(),
                    "error": errs[k].tolist()}
                for k in self.replicas
            },
        }


def _run_replica(args):
    pipeline, datasets, s = args
    try:
        return s, pipeline(resample_all(datasets, s)), None
    except (QLTError, ValueError, np.linalg.LinAlgError) as exc:
        return s, None, f"{type(exc).__name__}: {exc}"


def bootstrap(pipeline: Callable[[list[PauliDataset]], Observables], datasets: list[PauliDataset], n_replicas: int,
              rng_seed: int = 0, original: Observables | None = None, jobs: int = 1) -> BootstrapReport:
    """Refit ``n_replicas`` resampled copies of ``datasets`` and collect observables.

    ``pipeline`` maps a list of datasets (same order as ``datasets``) to a dict of arrays.
    The spread is taken about ``original`` (computed from the unresampled data if omitted).
    Replicas whose fit raises a numerical error are dropped and listed in ``failures``.
    """
    if n_replicas < 2:
        raise ValueError("bootstrap needs at least 2 replicas")
    if original is None:
        original = pipeline(list(datasets))
    seeds = replica_seeds(rng_seed, n_replicas)
    tasks = [(pipeline, list(datasets), s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_replica, tasks))
    else:
        results = [_run_replica(t) for t in tasks]
    collected: dict[str, list] = {k: [] for k in original}
    failures = []
    for s, obs, err in results:
        if obs is None:
            failures.append({"seed": s, "error": err})
            continue
        for k in collected:
            collected[k].append(np.asarray(obs[k], dtype=float))
    if len(failures) == n_replicas:
        raise QLTError("every bootstrap replica failed")
    replicas = {k: np.array(v) for k, v in collected.items()}
    return BootstrapReport(n_replicas, seeds, {k: np.asarray(v, dtype=float) for k, v in original.items()},
                           replicas, failures)
