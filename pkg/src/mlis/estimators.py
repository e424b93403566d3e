"""Multilevel importance sampling estimator and its baselines.

Samples within a level are processed in fixed-size blocks; block ``b`` of
level ``l`` draws from ``RngStreamKey(seed, l, phase, b)``.  Per-block sums
are reduced in block order, so results do not depend on the worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from .paths import Phase, RngStreamKey, euler_coupled_pair, euler_single
from .saa import (DegenerateSampleSet, NewtonOptions, WeightedSampleSet,
                  empirical_variance_v, girsanov_minus, newton_solve)

Z_95 = 1.959964
BATCH_SIZE = 4096
# level slot used for the streams of single-level Monte Carlo
SINGLE_LEVEL = 0


@dataclass(frozen=True)
class LevelPlan:
    """Sample sizes per level.

    ``samples[l]`` is the estimation size ``N_l`` and ``opt_samples[l]`` the
    optimization size ``N'_l``.
    """

    m: int
    levels: int
    horizon: float
    samples: tuple
    opt_samples: tuple
    weak_order: float = 1.0
    a: tuple = ()

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if len(self.samples) != self.levels + 1 or len(self.opt_samples) != self.levels + 1:
            raise ValueError("need one sample size per level 0..L")
        if min(self.samples) < 1 or min(self.opt_samples) < 1:
            raise ValueError("sample sizes must be >= 1")


def rho(m, weak_order, levels, horizon):
    return m ** (2 * weak_order * levels) * (m - 1) * horizon


def _ceil(x):
    # guard against 1536.0000000002-style rounding noise
    return max(1, math.ceil(x * (1 - 1e-12)))


def level_plan(m, weak_order, levels, horizon=1.0, a=None, nprime_floor=1000,
               nprime_cap=500_000, sample_scale=1.0):
    """Sample sizes ``N_l = ceil(rho(L) / (m^l a_l) * sum_{k=1..L} a_k)``.

    ``rho(L) = m^(2 gamma L) (m - 1) T`` and
    ``N'_l = clamp(ceil(N_l m^l / (m^l + 15)), floor, cap)``.  ``sample_scale``
    multiplies every ``N_l`` (1 reproduces the formula).
    """
    if m < 2 or int(m) != m:
        raise ValueError("m must be an integer >= 2")
    if levels < 1:
        raise ValueError("L must be >= 1")
    if not 0.5 <= weak_order <= 1.0:
        raise ValueError("weak order must lie in [1/2, 1]")
    if not horizon > 0 or not sample_scale > 0:
        raise ValueError("horizon and sample_scale must be positive")
    if nprime_floor < 1 or nprime_cap < nprime_floor:
        raise ValueError("need 1 <= nprime_floor <= nprime_cap")
    a = tuple(1.0 for _ in range(levels + 1)) if a is None else tuple(float(x) for x in a)
    if len(a) != levels + 1 or min(a) <= 0:
        raise ValueError("a must hold L + 1 positive weights")
    r = rho(m, weak_order, levels, horizon)
    total = sum(a[1:])
    samples = tuple(_ceil(sample_scale * r * total / (m ** l * a[l])) for l in range(levels + 1))
    opt = tuple(min(nprime_cap, max(nprime_floor, _ceil(n * m ** l / (m ** l + 15))))
                for l, n in enumerate(samples))
    return LevelPlan(m, levels, horizon, samples, opt, weak_order, a)


@dataclass
class LevelStats:
    """Outcome of one level.

    ``v_tilde`` and ``xi_tilde`` are the online second-moment and mean
    statistics of the weighted level differences, scaled by
    ``m^l / ((m - 1) T)`` (resp. its square root) for ``l >= 1``.
    """

    level: int
    mean: float
    v_tilde: float
    xi_tilde: float
    samples: int
    lam: np.ndarray | None = None
    iterations: int = 0
    degenerate: bool = False
    opt_samples: int = 0
    v_opt: float = float("nan")
    v_zero: float = float("nan")
    time_optimization: float = 0.0
    time_estimation: float = 0.0


@dataclass
class MlisResult:
    method: str
    estimate: float
    levels: list
    variance: float
    half_width: float
    time_optimization: float = 0.0
    time_estimation: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def time_total(self):
        return self.time_optimization + self.time_estimation


@dataclass(frozen=True)
class LevelOptimization:
    lam: np.ndarray
    iterations: int
    degenerate: bool
    v_opt: float
    v_zero: float
    seconds: float
    sample_set: WeightedSampleSet | None = None


def _blocks(total, batch_size):
    return [(b, min(batch_size, total - b * batch_size))
            for b in range(-(-total // batch_size))]


def _level_scale(level, m, horizon):
    return 1.0 if level == 0 else m ** level / ((m - 1) * horizon)


def _payoff_values(model, payoff, state):
    return payoff.evaluate(model.prices(state)) * payoff.discount_factor(model)


def _level_block(model, payoff, level, m, lam, key, n):
    """Level differences ``psi(fine) - psi(coarse)`` and ``Z_T`` for one block."""
    s = euler_coupled_pair(model, level, m, lam, key, n)
    diff = _payoff_values(model, payoff, s.fine_terminal)
    if s.coarse_terminal is not None:
        diff = diff - _payoff_values(model, payoff, s.coarse_terminal)
    return diff, s.w_terminal


def _single_block(model, payoff, steps, lam, key, n):
    x, z = euler_single(model, steps, lam, key, n)
    return _payoff_values(model, payoff, x), z


def _map_blocks(fn, blocks, workers, deterministic):
    """Apply ``fn(b, n)`` to every block; returns results in block order or completion order."""
    if workers <= 1 or len(blocks) == 1:
        return [fn(b, n) for b, n in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, b, n) for b, n in blocks]
        if deterministic:
            return [f.result() for f in futures]
        return [f.result() for f in as_completed(futures)]


def build_sample_set(model, payoff, level, m, nprime, seed, batch_size=BATCH_SIZE,
                     workers=1, steps=None):
    """Weighted sample set of ``nprime`` unshifted paths from optimization-phase streams.

    ``steps`` switches to a single ``steps``-step scheme (single-level Monte Carlo).
    """
    q = model.driving_dim
    zero = np.zeros(q)
    slot = SINGLE_LEVEL if steps is not None else level

    def run(b, n):
        key = RngStreamKey(seed, slot, Phase.OPTIMIZATION, b)
        if steps is not None:
            return _single_block(model, payoff, steps, zero, key, n)
        return _level_block(model, payoff, level, m, zero, key, n)

    parts = _map_blocks(run, _blocks(nprime, batch_size), workers, True)
    diff = np.concatenate([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    scale = 1.0 if steps is not None else _level_scale(level, m, model.horizon)
    return WeightedSampleSet(scale * diff ** 2, w, model.horizon, level)


def optimize_level(model, payoff, level, m, nprime, seed, options=None,
                   batch_size=BATCH_SIZE, workers=1, steps=None, keep_set=False):
    """Drift parameter minimizing the empirical level variance.

    A degenerate sample set (all weights zero) yields ``lam = 0`` with the
    ``degenerate`` flag set.
    """
    start = time.perf_counter()
    sset = build_sample_set(model, payoff, level, m, nprime, seed, batch_size, workers, steps)
    zero = np.zeros(model.driving_dim)
    if sset.is_degenerate:
        return LevelOptimization(zero, 0, True, 0.0, 0.0, time.perf_counter() - start,
                                 sset if keep_set else None)
    try:
        res = newton_solve(sset, options)
    except DegenerateSampleSet:
        return LevelOptimization(zero, 0, True, 0.0, 0.0, time.perf_counter() - start,
                                 sset if keep_set else None)
    return LevelOptimization(res.lam, res.iterations, False,
                             empirical_variance_v(sset, res.lam),
                             empirical_variance_v(sset, zero),
                             time.perf_counter() - start, sset if keep_set else None)


def estimate_level(model, payoff, level, m, lam, samples, seed, batch_size=BATCH_SIZE,
                   workers=1, deterministic=True, steps=None):
    """Importance-sampled level mean over ``samples`` estimation-phase paths.

    Returns a :class:`LevelStats` with the online moments needed for the
    variance estimate.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    start = time.perf_counter()
    q = model.driving_dim
    lam = np.zeros(q) if lam is None else np.asarray(lam, dtype=float)
    slot = SINGLE_LEVEL if steps is not None else level

    def run(b, n):
        key = RngStreamKey(seed, slot, Phase.ESTIMATION, b)
        if steps is not None:
            diff, w = _single_block(model, payoff, steps, lam, key, n)
        else:
            diff, w = _level_block(model, payoff, level, m, lam, key, n)
        y = diff * girsanov_minus(w, lam, model.horizon)
        return float(np.sum(y)), float(np.sum(y * y))

    parts = _map_blocks(run, _blocks(samples, batch_size), workers, deterministic)
    s1 = s2 = 0.0
    for a, b in parts:
        s1 += a
        s2 += b
    mean = s1 / samples
    scale = 1.0 if steps is not None else _level_scale(level, m, model.horizon)
    return LevelStats(level=level, mean=mean, v_tilde=scale * s2 / samples,
                      xi_tilde=math.sqrt(scale) * mean, samples=samples, lam=lam,
                      time_estimation=time.perf_counter() - start)


def level_variance_term(stats, m, horizon):
    """Contribution ``N^-1 (m-1) T / m^l (v - xi^2)`` of one level, floored at 0."""
    weight = 1.0 if stats.level == 0 else (m - 1) * horizon / m ** stats.level
    return max(0.0, weight * (stats.v_tilde - stats.xi_tilde ** 2) / stats.samples)


def aggregate_variance_ci(stats, m, horizon, levels=None):
    """Total variance and 95% half-width from per-level statistics."""
    present = sorted(s.level for s in stats)
    expected = list(range(len(stats) if levels is None else levels + 1))
    if present != expected:
        raise ValueError(f"level statistics cover {present}, expected {expected}")
    variance = sum(level_variance_term(s, m, horizon) for s in stats)
    return variance, Z_95 * math.sqrt(variance)


def _check_lambdas(lambdas, plan, q):
    if lambdas is None:
        return None
    if len(lambdas) != plan.levels + 1:
        raise ValueError("need one drift parameter per level")
    out = [np.broadcast_to(np.asarray(x, dtype=float), (q,)).copy() for x in lambdas]
    return out


def estimate_mlis(model, payoff, plan, seed, lambdas=None, options=None,
                  batch_size=BATCH_SIZE, workers=1, deterministic=True):
    """Multilevel importance sampling estimate ``Q_L``.

    Each level first fits its drift parameter on optimization-phase samples,
    then estimates its importance-sampled mean on independent
    estimation-phase samples.  ``lambdas`` bypasses the optimization with
    fixed parameters.
    """
    q = model.driving_dim
    fixed = _check_lambdas(lambdas, plan, q)
    stats = []
    for level in range(plan.levels + 1):
        if fixed is None:
            opt = optimize_level(model, payoff, level, plan.m, plan.opt_samples[level], seed,
                                 options, batch_size, workers)
            lam = opt.lam
        else:
            opt, lam = None, fixed[level]
        st = estimate_level(model, payoff, level, plan.m, lam, plan.samples[level], seed,
                            batch_size, workers, deterministic)
        if opt is not None:
            st.iterations = opt.iterations
            st.degenerate = opt.degenerate
            st.opt_samples = plan.opt_samples[level]
            st.v_opt, st.v_zero = opt.v_opt, opt.v_zero
            st.time_optimization = opt.seconds
        stats.append(st)
    return _assemble("mlis", stats, plan.m, model.horizon)


def estimate_mlmc(model, payoff, plan, seed, batch_size=BATCH_SIZE, workers=1,
                  deterministic=True):
    """Plain multilevel Monte Carlo over the telescoping sum."""
    zero = np.zeros(model.driving_dim)
    stats = [estimate_level(model, payoff, level, plan.m, zero, plan.samples[level], seed,
                            batch_size, workers, deterministic)
             for level in range(plan.levels + 1)]
    return _assemble("mlmc", stats, plan.m, model.horizon)


def _assemble(method, stats, m, horizon):
    variance, hw = aggregate_variance_ci(stats, m, horizon)
    return MlisResult(method=method, estimate=sum(s.mean for s in stats), levels=stats,
                      variance=variance, half_width=hw,
                      time_optimization=sum(s.time_optimization for s in stats),
                      time_estimation=sum(s.time_estimation for s in stats))


def estimate_mc(model, payoff, steps, samples=None, seed=0, batch_size=BATCH_SIZE,
                workers=1, deterministic=True):
    """Crude Euler Monte Carlo; ``samples`` defaults to ``steps**2``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    samples = steps ** 2 if samples is None else samples
    st = estimate_level(model, payoff, 0, 2, None, samples, seed, batch_size, workers,
                        deterministic, steps=steps)
    result = _assemble("mc", [st], 2, model.horizon)
    result.extra["steps"] = steps
    return result


def estimate_mc_is(model, payoff, steps, samples=None, opt_samples=None, seed=0, theta=None,
                   options=None, batch_size=BATCH_SIZE, workers=1, deterministic=True):
    """Two-stage adaptive Monte Carlo with importance sampling.

    The drift ``theta`` is fitted on ``opt_samples`` independent paths
    (default ``samples``) with weights ``psi(X^n_T)^2``, then the
    importance-sampled mean is taken on fresh paths.  Passing ``theta`` skips
    the first stage.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    samples = steps ** 2 if samples is None else samples
    opt_samples = samples if opt_samples is None else opt_samples
    if theta is None:
        opt = optimize_level(model, payoff, 0, 2, opt_samples, seed, options, batch_size,
                             workers, steps=steps)
        lam = opt.lam
    else:
        opt, lam = None, np.broadcast_to(np.asarray(theta, dtype=float), (model.driving_dim,))
    st = estimate_level(model, payoff, 0, 2, lam, samples, seed, batch_size, workers,
                        deterministic, steps=steps)
    if opt is not None:
        st.iterations, st.degenerate = opt.iterations, opt.degenerate
        st.opt_samples = opt_samples
        st.v_opt, st.v_zero = opt.v_opt, opt.v_zero
        st.time_optimization = opt.seconds
    result = _assemble("mc-is", [st], 2, model.horizon)
    result.extra["steps"] = steps
    return result
