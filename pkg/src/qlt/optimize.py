"""Adam minimization and gradient utilities shared by the three fits.

Complex parameter matrices are optimized as real vectors: entries are flattened
row-major with the real part of each entry immediately followed by its imaginary part.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import FitDivergenceError, NonFiniteError


def pack(*arrays: np.ndarray) -> np.ndarray:
    """Concatenate complex arrays into one interleaved real vector."""
    parts = []
    for a in arrays:
        a = np.asarray(a, dtype=complex)
        parts.append(np.stack([a.real, a.imag], axis=-1).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def unpack(theta: np.ndarray, *shapes: tuple[int, ...]) -> list[np.ndarray]:
    """Inverse of :func:`pack`."""
    out, k = [], 0
    for shape in shapes:
        n = int(np.prod(shape))
        chunk = theta[k:k + 2 * n].reshape(*shape, 2)
        out.append(chunk[..., 0] + 1j * chunk[..., 1])
        k += 2 * n
    if k != theta.size:
        raise ValueError(f"parameter vector has {theta.size} entries, shapes need {k}")
    return out


@dataclass
class AdamConfig:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iters: int = 20000
    grad_tolerance: float = 1e-7
    patience: int = 500
    min_rel_improvement: float = 1e-9
    # multiplicative step-size decay applied every iteration (1.0 disables it)
    decay: float = 1.0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1 or self.patience < 1:
            raise ValueError("max_iters and patience must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> AdamConfig:
        return cls(**(data or {}))


@dataclass
class FitTrace:
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    iterations: int = 0
    reason: str = "max_iters"

    @property
    def best_loss(self) -> float:
        return min(self.losses) if self.losses else float("nan")

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "reason": self.reason,
            "initial_loss": self.losses[0] if self.losses else None,
            "best_loss": self.best_loss,
            "final_grad_norm": self.grad_norms[-1] if self.grad_norms else None,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "grad_norm"])
            for k, (l, g) in enumerate(zip(self.losses, self.grad_norms)):
                w.writerow([k, repr(l), repr(g)])


def central_gradient(loss: Callable[[np.ndarray], float], theta: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient with step ``rel_step * max(1, |theta_k|)``."""
    theta = np.asarray(theta, dtype=float)
    if not np.isfinite(loss(theta)):
        raise NonFiniteError("loss is not finite at theta")
    grad = np.empty_like(theta)
    for k in range(theta.size):
        h = rel_step * max(1.0, abs(theta[k]))
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        fp, fm = loss(tp), loss(tm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite loss in stencil of coordinate {k}")
        grad[k] = (fp - fm) / (2 * h)
    return grad


def gradient(loss, theta, analytic: Callable | None = None) -> np.ndarray:
    """Gradient of ``loss`` at ``theta``: ``analytic(theta)`` if given, else central differences."""
    if analytic is not None:
        return np.asarray(analytic(theta), dtype=float)
    return central_gradient(loss, theta)


def adam_minimize(
    loss: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray] | None,
    theta0: np.ndarray,
    config: AdamConfig | None = None,
    rng_seed=None,
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None,
) -> tuple[np.ndarray, FitTrace]:
    """Minimize ``loss`` with bias-corrected Adam and return the best iterate seen.

    ``grad=None`` falls back to central differences. ``value_and_grad`` may be passed to
    evaluate both in one call. The update itself is deterministic; ``rng_seed`` is
    accepted for interface symmetry with the fits, which draw their initial points from it.
    """
    cfg = config or AdamConfig()
    theta = np.array(theta0, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise NonFiniteError("theta0 has non-finite entries")
    if value_and_grad is None:
        def value_and_grad(x):
            return loss(x), gradient(loss, x, grad)

    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    trace = FitTrace()
    best_theta, best = theta.copy(), np.inf
    ref_best, since = np.inf, 0
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.epsilon
    lr = cfg.step_size
    for it in range(cfg.max_iters):
        f, g = value_and_grad(theta)
        gnorm = float(np.linalg.norm(g))
        if not (np.isfinite(f) and np.isfinite(gnorm)):
            trace.iterations = it
            trace.reason = "diverged"
            raise FitDivergenceError(f"non-finite loss at iteration {it}", trace)
        trace.losses.append(float(f))
        trace.grad_norms.append(gnorm)
        if f < best:
            best, best_theta = f, theta.copy()
        if gnorm < cfg.grad_tolerance:
            trace.iterations = it
            trace.reason = "converged"
            return best_theta, trace
        if best < ref_best - cfg.min_rel_improvement * abs(ref_best) or not np.isfinite(ref_best):
            ref_best, since = best, 0
        else:
            since += 1
            if since >= cfg.patience:
                trace.iterations = it
                trace.reason = "stalled"
                return best_theta, trace
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        t = it + 1
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        lr *= cfg.decay
    trace.iterations = cfg.max_iters
    trace.reason = "max_iters"
    f, g = value_and_grad(theta)
    if np.isfinite(f):
        trace.losses.append(float(f))
        trace.grad_norms.append(float(np.linalg.norm(g)))
        if f < best:
            best_theta = theta.copy()
    return best_theta, trace
