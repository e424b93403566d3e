"""SDE models and payoffs used by the estimators.

Every model is driven by a standard Brownian motion ``Z`` in ``R^q`` through a
lower-triangular correlation factor ``L`` (``W = L Z``).  Each state component
is driven by exactly one component of the correlated motion ``W``, so the
diffusion matrix is square and diagonal; :meth:`SdeModel.coefficients` returns
its diagonal for a batch of states.

State layouts
-------------
* ``local_vol`` / ``constant_vol``: ``d`` asset prices, ``q = d``.
* ``heston``: ``d`` prices followed by ``d`` variances, ``q = 2d``.  The driving
  motion is ``(B, W)`` with covariance
  ``[[G, g G], [g G, g^2 G + (1 - g^2) I]]`` where ``G`` is the equicorrelated
  asset matrix and ``g`` the asset/variance correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MODEL_KINDS = ("local_vol", "heston", "constant_vol")
PAYOFF_KINDS = ("basket", "best_of", "call")


class CorrelationError(ValueError):
    """Raised when a correlation parameter makes the covariance singular."""


def local_vol(t, x, r, s):
    """Local volatility surface ``0.6 (1.2 - e^{-0.1 t} e^{-0.001 (x e^{rt} - s)^2}) e^{-0.05 sqrt(t)}``.

    Vectorized over ``t`` and ``x``.  The smile bottom sits at the forward
    ``x e^{rt} = s``; values lie in ``(0, 0.72]``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
        raise ValueError("local_vol: non-finite input")
    if np.any(t < 0):
        raise ValueError("local_vol: t must be nonnegative")
    smile = np.exp(-0.1 * t) * np.exp(-0.001 * (x * np.exp(r * t) - s) ** 2)
    out = 0.6 * (1.2 - smile) * np.exp(-0.05 * np.sqrt(t))
    return out if out.ndim else float(out)


def equicorrelation(d, rho):
    """``d x d`` matrix with unit diagonal and ``rho`` elsewhere."""
    c = np.full((d, d), float(rho))
    np.fill_diagonal(c, 1.0)
    return c


def _check_asset_correlation(d, rho):
    if d >= 2:
        lo = -1.0 / (d - 1)
        if not lo < rho < 1.0:
            raise CorrelationError(
                f"correlation out of admissible range: correlation={rho} "
                f"must lie in ({lo:.6g}, 1) for {d} assets"
            )
    elif not -1.0 < rho < 1.0:
        raise CorrelationError(f"correlation out of admissible range: correlation={rho}")


def _as_vector(value, d, name):
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if v.size == 1:
        v = np.full(d, v.item())
    if v.shape != (d,):
        raise ValueError(f"{name} must be a scalar or have length {d}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


@dataclass(frozen=True, eq=False)
class SdeModel:
    """Diffusion model with its correlation structure.

    Build instances with :meth:`local_vol`, :meth:`heston` or
    :meth:`constant_vol` rather than the raw constructor.
    """

    kind: str
    spot: np.ndarray
    rate: float
    horizon: float
    correlation: float = 0.0
    smile_center: float = 100.0
    volatility: float = 0.0
    kappa: np.ndarray | None = None
    mean_variance: np.ndarray | None = None
    vol_of_vol: np.ndarray | None = None
    spot_vol_correlation: float = 0.0
    initial_variance: np.ndarray | None = None
    correlation_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        spot = np.atleast_1d(np.asarray(self.spot, dtype=float))
        if spot.ndim != 1 or spot.size == 0 or not np.all(np.isfinite(spot)) or np.any(spot <= 0):
            raise ValueError("spot must be a non-empty vector of positive prices")
        object.__setattr__(self, "spot", spot)
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        d = spot.size
        if self.kind == "heston":
            for name in ("kappa", "mean_variance", "vol_of_vol", "initial_variance"):
                vec = _as_vector(getattr(self, name), d, name)
                if name != "initial_variance" and np.any(vec <= 0):
                    raise ValueError(f"{name} must be strictly positive")
                if name == "initial_variance" and np.any(vec < 0):
                    raise ValueError("initial_variance must be nonnegative")
                object.__setattr__(self, name, vec)
        object.__setattr__(self, "correlation_factor", build_correlation(self))

    # constructors

    @classmethod
    def local_vol(cls, spot, rate, horizon, correlation=0.0, smile_center=None, assets=None):
        spot = _spot_vector(spot, assets)
        if smile_center is None:
            smile_center = float(spot[0])
        return cls("local_vol", spot, float(rate), float(horizon), float(correlation),
                   smile_center=float(smile_center))

    @classmethod
    def constant_vol(cls, spot, rate, horizon, volatility, correlation=0.0, assets=None):
        return cls("constant_vol", _spot_vector(spot, assets), float(rate), float(horizon),
                   float(correlation), volatility=float(volatility))

    @classmethod
    def heston(cls, spot, rate, horizon, kappa, mean_variance, vol_of_vol,
               spot_vol_correlation, correlation=0.0, initial_variance=None, assets=None):
        if initial_variance is None:
            initial_variance = mean_variance
        return cls("heston", _spot_vector(spot, assets), float(rate), float(horizon),
                   float(correlation), kappa=kappa, mean_variance=mean_variance,
                   vol_of_vol=vol_of_vol, spot_vol_correlation=float(spot_vol_correlation),
                   initial_variance=initial_variance)

    # shape information

    @property
    def asset_count(self):
        return self.spot.size

    @property
    def driving_dim(self):
        return 2 * self.asset_count if self.kind == "heston" else self.asset_count

    @property
    def state_dim(self):
        return self.driving_dim

    @property
    def discount_factor(self):
        return math.exp(-self.rate * self.horizon)

    def initial_state(self):
        if self.kind == "heston":
            return np.concatenate([self.spot, self.initial_variance])
        return self.spot.copy()

    def prices(self, state):
        """Asset-price block of a state (or batch of states)."""
        return state[..., : self.asset_count]

    def coefficients(self, t, x):
        """Drift and diffusion diagonal at time ``t`` for a ``(batch, state_dim)`` array."""
        if self.kind == "local_vol":
            return self.rate * x, x * local_vol(t, x, self.rate, self.smile_center)
        if self.kind == "constant_vol":
            return self.rate * x, self.volatility * x
        d = self.asset_count
        s, v = x[..., :d], x[..., d:]
        root = np.sqrt(np.maximum(v, 0.0))
        drift = np.concatenate([self.rate * s, self.kappa * (self.mean_variance - v)], axis=-1)
        diff = np.concatenate([root * s, self.vol_of_vol * root], axis=-1)
        return drift, diff


def _spot_vector(spot, assets):
    spot = np.atleast_1d(np.asarray(spot, dtype=float))
    if assets is not None:
        if spot.size == 1:
            spot = np.full(int(assets), spot.item())
        elif spot.size != assets:
            raise ValueError(f"spot has {spot.size} entries but assets={assets}")
    return spot


def target_covariance(model):
    """Covariance of the correlated driving motion per unit time."""
    d = model.asset_count
    _check_asset_correlation(d, model.correlation)
    gs = equicorrelation(d, model.correlation)
    if model.kind != "heston":
        return gs
    g = model.spot_vol_correlation
    if not -1.0 < g < 1.0:
        raise CorrelationError(
            f"spot_vol_correlation out of admissible range: {g} must lie in (-1, 1)")
    return np.block([[gs, g * gs], [g * gs, g * g * gs + (1.0 - g * g) * np.eye(d)]])


def build_correlation(model):
    """Lower-triangular Cholesky factor of the driving covariance."""
    cov = target_covariance(model)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise CorrelationError(
            f"covariance is not positive definite (correlation={model.correlation}, "
            f"spot_vol_correlation={model.spot_vol_correlation})") from exc


def drift_diffusion(model, t, state):
    """Drift vector and full ``state_dim x q`` diffusion matrix at one state.

    The diffusion acts on the *correlated* increments ``L dZ``.
    """
    state = np.asarray(state, dtype=float)
    if state.shape != (model.state_dim,):
        raise ValueError(f"state must have length {model.state_dim}, got shape {state.shape}")
    if not np.all(np.isfinite(state)):
        raise FloatingPointError("non-finite state")
    drift, diag = model.coefficients(t, state)
    return np.asarray(drift, dtype=float), np.diag(diag)


@dataclass(frozen=True)
class Payoff:
    """Terminal payoff on the asset prices.

    ``basket``: ``(sum_i w_i S_i - K)_+`` with algebraic weights;
    ``best_of``: ``(max_i S_i - K)_+``; ``call``: ``(S_asset - K)_+``.
    """

    kind: str
    strike: float
    weights: tuple | None = None
    asset: int = 0
    discount: bool = True

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}; expected one of {PAYOFF_KINDS}")
        if not math.isfinite(self.strike):
            raise ValueError("strike must be finite")
        if self.kind == "basket":
            if self.weights is None:
                raise ValueError("basket payoff needs weights")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def evaluate(self, prices):
        """Undiscounted payoff for a ``(..., d)`` array of prices."""
        prices = np.asarray(prices, dtype=float)
        if self.kind == "basket":
            if prices.shape[-1] != len(self.weights):
                raise ValueError(
                    f"basket has {len(self.weights)} weights but prices have {prices.shape[-1]} assets")
            level = prices @ np.asarray(self.weights)
        elif self.kind == "best_of":
            level = prices.max(axis=-1)
        else:
            if not 0 <= self.asset < prices.shape[-1]:
                raise ValueError(f"call asset index {self.asset} out of range")
            level = prices[..., self.asset]
        return np.maximum(level - self.strike, 0.0)

    def discount_factor(self, model):
        return model.discount_factor if self.discount else 1.0


def payoff_eval(payoff, terminal, model=None):
    """Payoff of one terminal price vector; discounted iff the flag is set and a model is given."""
    terminal = np.asarray(terminal, dtype=float)
    if terminal.ndim != 1:
        raise ValueError("terminal must be a price vector")
    if not np.all(np.isfinite(terminal)):
        raise ValueError("terminal prices must be finite")
    value = float(payoff.evaluate(terminal))
    if model is not None:
        value *= payoff.discount_factor(model)
    return value


def black_scholes_call(spot, strike, rate, volatility, horizon):
    """Discounted Black-Scholes call price."""
    if strike <= 0:
        return float(spot)
    sd = volatility * math.sqrt(horizon)
    d1 = (math.log(spot / strike) + (rate + 0.5 * volatility ** 2) * horizon) / sd
    d2 = d1 - sd
    ncdf = lambda z: 0.5 * math.erfc(-z / math.sqrt(2.0))
    return spot * ncdf(d1) - strike * math.exp(-rate * horizon) * ncdf(d2)
