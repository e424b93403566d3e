"""Sample-average objective for the per-level drift parameter and its Newton solver.

For weights ``h_k >= 0`` and terminal Brownian values ``W_k`` the empirical
second moment under the shifted measure is

    v(lam) = mean_k h_k exp(-lam . W_k + |lam|^2 T / 2)

and the solver works on ``u = log v``:

    u(lam) = |lam|^2 T / 2 + log mean_k h_k exp(-lam . W_k)

whose Hessian is ``T I`` plus the covariance of ``W`` under the Gibbs weights
``p_k ~ h_k exp(-lam . W_k)``, hence bounded below by ``T I``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class DegenerateSampleSet(ValueError):
    """All weights vanish, so the objective is ``log 0``."""


class NewtonDidNotConverge(RuntimeError):
    def __init__(self, message, last_iterate, grad_norm):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm


def girsanov_minus(w, lam, horizon):
    """Likelihood ratio ``exp(-lam . w - |lam|^2 T / 2)``; ``w`` may be a batch ``(n, q)``."""
    w = np.asarray(w, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return np.exp(-(w @ lam) - 0.5 * float(lam @ lam) * horizon)


def girsanov_plus(w, lam, horizon):
    """``exp(-lam . w + |lam|^2 T / 2)``, the weight of second moments under the original measure."""
    w = np.asarray(w, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return np.exp(-(w @ lam) + 0.5 * float(lam @ lam) * horizon)


@dataclass(frozen=True, eq=False)
class WeightedSampleSet:
    """Precomputed weights and terminal Brownian values for one level.

    Level 0 (and single-level Monte Carlo) uses ``h = psi(X)^2``; level
    ``l >= 1`` uses ``m^l / ((m - 1) T) * (psi(fine) - psi(coarse))^2``.
    """

    weights: np.ndarray
    brownians: np.ndarray
    horizon: float
    level: int = 0

    def __post_init__(self):
        h = np.asarray(self.weights, dtype=float).reshape(-1)
        w = np.asarray(self.brownians, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.ndim != 2 or w.shape[0] != h.size:
            raise ValueError(f"{h.size} weights but brownians have shape {w.shape}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(w))):
            raise ValueError("weights and brownians must be finite")
        if np.any(h < 0):
            raise ValueError("weights must be nonnegative")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "weights", h)
        object.__setattr__(self, "brownians", w)

    @property
    def size(self):
        return self.weights.size

    @property
    def dim(self):
        return self.brownians.shape[1]

    @property
    def is_degenerate(self):
        return not np.any(self.weights > 0)

    @cached_property
    def _active(self):
        keep = self.weights > 0
        return np.log(self.weights[keep]), self.brownians[keep]


def saa_objective(sample_set, lam):
    """Value, gradient and Hessian of ``u`` at ``lam``."""
    if sample_set.is_degenerate:
        raise DegenerateSampleSet("all sample weights are zero")
    log_h, w = sample_set._active
    lam = np.asarray(lam, dtype=float)
    T = sample_set.horizon
    a = log_h - w @ lam
    top = a.max()
    e = np.exp(a - top)
    total = e.sum()
    p = e / total
    u = 0.5 * T * float(lam @ lam) + top + math.log(total) - math.log(sample_set.size)
    mean = p @ w
    grad = T * lam - mean
    centered = w - mean
    hess = T * np.eye(lam.size) + (centered * p[:, None]).T @ centered
    return u, grad, hess


def empirical_variance_v(sample_set, lam):
    """Empirical second moment ``mean_k h_k E^+(W_k, lam)``; equals ``exp(u(lam))``."""
    lam = np.asarray(lam, dtype=float)
    return float(np.mean(sample_set.weights * girsanov_plus(sample_set.brownians, lam,
                                                             sample_set.horizon)))


@dataclass(frozen=True)
class NewtonOptions:
    tolerance: float = 1e-8
    max_iterations: int = 50
    initial: np.ndarray | None = None

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class NewtonResult:
    lam: np.ndarray
    iterations: int
    grad_norm: float


def newton_solve(sample_set, options=None):
    """Root of ``grad u`` by pure Newton steps.

    A trial point with a non-finite objective has its step halved, at most 30
    times.  Raises :class:`NewtonDidNotConverge` after ``max_iterations``.
    """
    options = options or NewtonOptions()
    q = sample_set.dim
    lam = np.zeros(q) if options.initial is None else np.asarray(options.initial, dtype=float).copy()
    _, grad, hess = saa_objective(sample_set, lam)
    norm = float(np.linalg.norm(grad))
    iterations = 0
    while norm > options.tolerance:
        if iterations == options.max_iterations:
            raise NewtonDidNotConverge(
                f"Newton did not reach |grad u| <= {options.tolerance} in "
                f"{options.max_iterations} iterations (|grad u| = {norm:.3e})", lam, norm)
        step = np.linalg.solve(hess, grad)
        for _ in range(31):
            trial = lam - step
            with np.errstate(over="ignore", invalid="ignore"):
                u, g, h = saa_objective(sample_set, trial)
            if np.isfinite(u) and np.all(np.isfinite(g)):
                break
            step = 0.5 * step
        else:
            raise NewtonDidNotConverge("no finite trial point after 30 step halvings", lam, norm)
        lam, grad, hess = trial, g, h
        norm = float(np.linalg.norm(grad))
        iterations += 1
    return NewtonResult(lam, iterations, norm)
