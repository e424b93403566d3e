"""Reproducible Brownian streams and drift-shifted Euler schemes.

All schemes run on a batch of paths at once and generate increments one time
step at a time, so memory scales with the batch and not with the grid.  The
drift shift ``lam`` acts on the standard motion ``Z``: each step uses the
correlated increment ``L (dZ + lam dt)``; the Girsanov weight is then a
function of the unshifted terminal value ``Z_T``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Phase(enum.IntEnum):
    OPTIMIZATION = 0
    ESTIMATION = 1


@dataclass(frozen=True)
class RngStreamKey:
    """Identifies one independent random stream.

    The key is mixed into the generator state with :class:`numpy.random.SeedSequence`
    (``entropy=seed``, ``spawn_key=(level, phase, index)``), which is
    platform independent.  ``index`` numbers a block of samples within a level.
    """

    seed: int
    level: int = 0
    phase: Phase = Phase.ESTIMATION
    index: int = 0

    def generator(self):
        ss = np.random.SeedSequence(int(self.seed),
                                    spawn_key=(int(self.level), int(self.phase), int(self.index)))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class CoupledPathSample:
    """Terminal states of a fine/coarse pair driven by one Brownian path.

    Arrays carry a leading batch axis when the sample was drawn for several
    paths.  ``coarse_terminal`` is ``None`` at level 0.
    """

    fine_terminal: np.ndarray
    coarse_terminal: np.ndarray | None
    w_terminal: np.ndarray


def _draw(gen, sqdt, n_paths, q):
    return gen.standard_normal((n_paths, q)) * sqdt


def sample_brownian_increments(key, steps, q, horizon=1.0, n_paths=None):
    """Standard Brownian increments on ``steps`` uniform steps over ``[0, horizon]``.

    Returns an array of shape ``(steps, q)``, or ``(steps, n_paths, q)`` when
    ``n_paths`` is given.  The draws are identical to those consumed by the
    Euler schemes for the same key.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    gen = key.generator()
    sqdt = np.sqrt(horizon / steps)
    batch = 1 if n_paths is None else int(n_paths)
    out = np.empty((steps, batch, q))
    for k in range(steps):
        out[k] = _draw(gen, sqdt, batch, q)
    return out[:, 0, :] if n_paths is None else out


def aggregate_increments(increments, m):
    """Sum consecutive groups of ``m`` increments along the time axis.

    The summation order matches the one used inside :func:`euler_coupled_pair`.
    """
    steps = increments.shape[0]
    if steps % m:
        raise ValueError(f"{steps} steps cannot be grouped by {m}")
    out = np.zeros((steps // m,) + increments.shape[1:])
    for k in range(steps):
        out[k // m] += increments[k]
    return out


def _step(model, t, x, dz_shifted, dt):
    dw = dz_shifted @ model.correlation_factor.T
    drift, diff = model.coefficients(t, x)
    return x + drift * dt + diff * dw


def _start(model, batch):
    return np.tile(model.initial_state(), (batch, 1))


def _finish(result, n_paths):
    if n_paths is None:
        return tuple(None if a is None else a[0] for a in result)
    return result


def euler_from_increments(model, increments, lam=None):
    """Run the shifted Euler scheme on given standard increments.

    ``increments`` has shape ``(steps, q)`` or ``(steps, batch, q)``.  Used to
    replay a path exactly; the production schemes below never materialize a
    full path.
    """
    increments = np.asarray(increments, dtype=float)
    single = increments.ndim == 2
    if single:
        increments = increments[:, None, :]
    steps, batch, q = increments.shape
    lam = np.zeros(q) if lam is None else np.asarray(lam, dtype=float)
    dt = model.horizon / steps
    shift = lam * dt
    x = _start(model, batch)
    for k in range(steps):
        x = _step(model, k * dt, x, increments[k] + shift, dt)
    return x[0] if single else x


def euler_single(model, n, lam, key, n_paths=None):
    """``n``-step Euler terminal state of the ``lam``-shifted dynamics.

    Returns ``(terminal, w_terminal)`` where ``w_terminal`` is the unshifted
    standard Brownian value at the horizon.
    """
    if n < 1:
        raise ValueError("number of steps must be >= 1")
    q = model.driving_dim
    lam = np.zeros(q) if lam is None else np.asarray(lam, dtype=float)
    batch = 1 if n_paths is None else int(n_paths)
    gen = key.generator()
    dt = model.horizon / n
    sqdt = np.sqrt(dt)
    shift = lam * dt
    x = _start(model, batch)
    z = np.zeros((batch, q))
    with np.errstate(over="raise", invalid="raise"):
        for k in range(n):
            dz = _draw(gen, sqdt, batch, q)
            z += dz
            x = _step(model, k * dt, x, dz + shift, dt)
    return _finish((x, z), n_paths)


def euler_coupled_pair(model, level, m, lam, key, n_paths=None):
    """Fine (``m**level`` steps) and coarse (``m**(level-1)`` steps) Euler terminals.

    Both legs consume the same Brownian path: each coarse increment is the sum
    of ``m`` consecutive fine increments.  The fine leg is bitwise identical to
    :func:`euler_single` with ``n = m**level`` and the same key.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    if m < 2:
        raise ValueError("m must be >= 2")
    q = model.driving_dim
    lam = np.zeros(q) if lam is None else np.asarray(lam, dtype=float)
    if not np.all(np.isfinite(lam)):
        raise ValueError("drift shift must be finite")
    if level == 0:
        x, z = euler_single(model, 1, lam, key, n_paths)
        return CoupledPathSample(x, None, z)

    batch = 1 if n_paths is None else int(n_paths)
    gen = key.generator()
    n_fine = m ** level
    dt = model.horizon / n_fine
    dtc = model.horizon / (n_fine // m)
    sqdt = np.sqrt(dt)
    shift, shift_c = lam * dt, lam * dtc
    xf = _start(model, batch)
    xc = _start(model, batch)
    z = np.zeros((batch, q))
    zc = np.zeros((batch, q))
    with np.errstate(over="raise", invalid="raise"):
        for k in range(n_fine):
            dz = _draw(gen, sqdt, batch, q)
            z += dz
            zc += dz
            xf = _step(model, k * dt, xf, dz + shift, dt)
            if (k + 1) % m == 0:
                j = k // m
                xc = _step(model, j * dtc, xc, zc + shift_c, dtc)
                zc = np.zeros((batch, q))
    xf, xc, z = _finish((xf, xc, z), n_paths)
    return CoupledPathSample(xf, xc, z)
