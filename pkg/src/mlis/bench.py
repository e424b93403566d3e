"""Benchmark harness: RMSE versus CPU time over replicated runs.

Configuration files are TOML; see ``configs/`` and the README for the schema.
"""

from __future__ import annotations

import csv
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .estimators import (estimate_mc, estimate_mc_is, estimate_mlis, estimate_mlmc,
                         level_plan)
from .models import Payoff, SdeModel, black_scholes_call

log = logging.getLogger(__name__)

METHODS = ("mc", "mc-is", "mlmc", "mlis")
MULTILEVEL = ("mlmc", "mlis")
CSV_COLUMNS = ("method", "knob", "estimate", "bias", "variance", "rmse", "cpu_mean_s",
               "replications")

_MODEL_COMMON = {"kind", "assets", "spot", "rate", "horizon", "correlation"}
_MODEL_KEYS = {
    "local_vol": _MODEL_COMMON | {"smile_center"},
    "constant_vol": _MODEL_COMMON | {"volatility"},
    "heston": _MODEL_COMMON | {"kappa", "mean_variance", "vol_of_vol", "spot_vol_correlation",
                               "initial_variance"},
}
_PAYOFF_KEYS = {"kind", "strike", "weights", "asset", "discount"}
_PLAN_KEYS = {"m", "weak_order", "nprime_floor", "nprime_cap", "sample_scale", "a"}
_MC_KEYS = {"sample_factor", "opt_samples"}
_REFERENCE_KEYS = {"mode", "levels", "sample_scale", "seed"}
_TOP_KEYS = {"seed", "replications", "methods", "output", "deterministic", "workers", "model",
             "payoff", "plan", "ladder", "mc", "reference"}


class ConfigError(ValueError):
    """Invalid benchmark configuration; the message names the offending field."""


@dataclass(frozen=True)
class PlanSpec:
    m: int = 4
    weak_order: float = 1.0
    nprime_floor: int = 1000
    nprime_cap: int = 500_000
    sample_scale: float = 1.0
    a: tuple | None = None


@dataclass(frozen=True)
class ReferenceSpec:
    mode: str = "mlmc"
    levels: int = 7
    sample_scale: float = 1e-3
    seed: int | None = None


@dataclass(frozen=True)
class BenchmarkConfig:
    model: SdeModel
    payoff: Payoff
    methods: tuple
    ladder: dict
    replications: int
    seed: int
    reference: ReferenceSpec
    plan: PlanSpec = PlanSpec()
    mc_sample_factor: float = 1.0
    mc_opt_samples: int | None = None
    output: str | None = None
    deterministic: bool = True
    workers: int = 1

    def plan_for(self, levels, sample_scale=None):
        p = self.plan
        return level_plan(p.m, p.weak_order, levels, self.model.horizon,
                          a=None if p.a is None else p.a[: levels + 1],
                          nprime_floor=p.nprime_floor, nprime_cap=p.nprime_cap,
                          sample_scale=p.sample_scale if sample_scale is None else sample_scale)

    def mc_samples(self, steps):
        return max(1, math.ceil(self.mc_sample_factor * steps ** 2))


@dataclass
class BenchmarkRow:
    method: str
    knob: int
    estimate: float
    bias: float
    variance: float
    rmse: float
    cpu_mean_s: float
    replications: int
    half_width: float = float("nan")

    def as_csv(self):
        values = (self.estimate, self.bias, self.variance, self.rmse, self.cpu_mean_s)
        return [self.method, self.knob, *(repr(float(v)) for v in values), self.replications]


@dataclass(frozen=True)
class Reference:
    value: float
    half_width: float
    mode: str


@dataclass
class BenchmarkReport:
    rows: list
    reference: Reference
    failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


# parsing

def _reject_unknown(table, allowed, prefix):
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {prefix}{key}")


def _get(table, key, prefix, kind, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"missing required field {prefix}{key}")
        return default
    value = table[key]
    try:
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is list:
            if not isinstance(value, list):
                raise TypeError
            return value
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"field {prefix}{key} has invalid value {value!r}") from None
    return value


def _scalar_or_list(table, key, prefix, required=False, default=None):
    if key not in table:
        if required:
            raise ConfigError(f"missing required field {prefix}{key}")
        return default
    value = table[key]
    if isinstance(value, list):
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"field {prefix}{key} has invalid value {value!r}") from None
    return _get(table, key, prefix, float)


def _parse_model(table):
    p = "model."
    kind = _get(table, "kind", p, str, required=True)
    if kind not in _MODEL_KEYS:
        raise ConfigError(f"field model.kind must be one of {sorted(_MODEL_KEYS)}, got {kind!r}")
    _reject_unknown(table, _MODEL_KEYS[kind], p)
    assets = _get(table, "assets", p, int, default=None)
    spot = _scalar_or_list(table, "spot", p, required=True)
    rate = _get(table, "rate", p, float, required=True)
    horizon = _get(table, "horizon", p, float, default=1.0)
    corr = _get(table, "correlation", p, float, default=0.0)
    try:
        if kind == "local_vol":
            return SdeModel.local_vol(spot, rate, horizon, corr,
                                      smile_center=_get(table, "smile_center", p, float),
                                      assets=assets)
        if kind == "constant_vol":
            return SdeModel.constant_vol(spot, rate, horizon,
                                         _get(table, "volatility", p, float, required=True),
                                         corr, assets=assets)
        return SdeModel.heston(
            spot, rate, horizon,
            kappa=_scalar_or_list(table, "kappa", p, required=True),
            mean_variance=_scalar_or_list(table, "mean_variance", p, required=True),
            vol_of_vol=_scalar_or_list(table, "vol_of_vol", p, required=True),
            spot_vol_correlation=_get(table, "spot_vol_correlation", p, float, required=True),
            correlation=corr,
            initial_variance=_scalar_or_list(table, "initial_variance", p),
            assets=assets)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None


def _parse_payoff(table, model):
    p = "payoff."
    _reject_unknown(table, _PAYOFF_KEYS, p)
    kind = _get(table, "kind", p, str, required=True)
    strike = _get(table, "strike", p, float, required=True)
    weights = _get(table, "weights", p, list)
    d = model.asset_count
    if kind == "basket":
        if weights is None:
            weights = [1.0 / d] * d
        if len(weights) != d:
            raise ConfigError(f"field payoff.weights must have {d} entries, got {len(weights)}")
    elif weights is not None:
        raise ConfigError(f"field payoff.weights only applies to basket payoffs")
    asset = _get(table, "asset", p, int, default=0)
    if kind == "call" and not 0 <= asset < d:
        raise ConfigError(f"field payoff.asset must lie in [0, {d})")
    try:
        return Payoff(kind, strike, tuple(weights) if weights else None, asset,
                      _get(table, "discount", p, bool, default=True))
    except ValueError as exc:
        raise ConfigError(f"payoff: {exc}") from None


def parse_config(text):
    """Parse and validate a TOML benchmark configuration."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    _reject_unknown(doc, _TOP_KEYS, "")
    for section in ("model", "payoff"):
        if not isinstance(doc.get(section), dict):
            raise ConfigError(f"missing required section [{section}]")
    model = _parse_model(doc["model"])
    payoff = _parse_payoff(doc["payoff"], model)

    methods = tuple(_get(doc, "methods", "", list, required=True))
    if not methods:
        raise ConfigError("field methods must not be empty")
    for mth in methods:
        if mth not in METHODS:
            raise ConfigError(f"field methods: unknown method {mth!r}; expected {METHODS}")

    ladder_tab = doc.get("ladder", {})
    _reject_unknown(ladder_tab, set(METHODS), "ladder.")
    ladder = {}
    for mth in methods:
        knobs = _get(ladder_tab, mth, "ladder.", list, required=True)
        if not knobs or any(isinstance(k, bool) or not isinstance(k, int) for k in knobs):
            raise ConfigError(f"field ladder.{mth} must be a non-empty list of integers")
        low = 1
        if any(k < low for k in knobs):
            raise ConfigError(f"field ladder.{mth} entries must be >= {low}")
        ladder[mth] = tuple(knobs)

    plan_tab = doc.get("plan", {})
    _reject_unknown(plan_tab, _PLAN_KEYS, "plan.")
    a = _get(plan_tab, "a", "plan.", list)
    plan = PlanSpec(m=_get(plan_tab, "m", "plan.", int, default=4),
                    weak_order=_get(plan_tab, "weak_order", "plan.", float, default=1.0),
                    nprime_floor=_get(plan_tab, "nprime_floor", "plan.", int, default=1000),
                    nprime_cap=_get(plan_tab, "nprime_cap", "plan.", int, default=500_000),
                    sample_scale=_get(plan_tab, "sample_scale", "plan.", float, default=1.0),
                    a=None if a is None else tuple(float(x) for x in a))
    if plan.m < 2:
        raise ConfigError("field plan.m must be >= 2")
    if not 0.5 <= plan.weak_order <= 1.0:
        raise ConfigError("field plan.weak_order must lie in [0.5, 1]")
    if plan.a is not None:
        need = max([0] + [max(ladder[m_]) for m_ in methods if m_ in MULTILEVEL]) + 1
        if len(plan.a) < need or min(plan.a) <= 0:
            raise ConfigError(f"field plan.a must hold at least {need} positive weights")

    mc_tab = doc.get("mc", {})
    _reject_unknown(mc_tab, _MC_KEYS, "mc.")
    ref_tab = doc.get("reference", {})
    _reject_unknown(ref_tab, _REFERENCE_KEYS, "reference.")
    reference = ReferenceSpec(mode=_get(ref_tab, "mode", "reference.", str, default="mlmc"),
                              levels=_get(ref_tab, "levels", "reference.", int, default=7),
                              sample_scale=_get(ref_tab, "sample_scale", "reference.", float,
                                                default=1e-3),
                              seed=_get(ref_tab, "seed", "reference.", int))
    if reference.mode not in ("analytic", "mlmc"):
        raise ConfigError("field reference.mode must be 'analytic' or 'mlmc'")

    replications = _get(doc, "replications", "", int, default=20)
    if replications < 2:
        raise ConfigError("field replications must be >= 2")
    workers = _get(doc, "workers", "", int, default=1)
    if workers < 1:
        raise ConfigError("field workers must be >= 1")
    seed = _get(doc, "seed", "", int, default=0)
    if seed < 0:
        raise ConfigError("field seed must be nonnegative")
    return BenchmarkConfig(
        model=model, payoff=payoff, methods=methods, ladder=ladder,
        replications=replications, seed=seed, reference=reference, plan=plan,
        mc_sample_factor=_get(mc_tab, "sample_factor", "mc.", float, default=1.0),
        mc_opt_samples=_get(mc_tab, "opt_samples", "mc.", int),
        output=_get(doc, "output", "", str),
        deterministic=_get(doc, "deterministic", "", bool, default=True),
        workers=workers)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# running

def derive_seed(master, *path):
    """64-bit seed for a (method, knob, replication, ...) cell."""
    state = np.random.SeedSequence(int(master), spawn_key=tuple(int(x) for x in path))
    lo, hi = state.generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def run_method(config, method, knob, seed, workers=1, deterministic=True):
    """Single run of one method at one accuracy knob."""
    model, payoff = config.model, config.payoff
    if method == "mlis":
        return estimate_mlis(model, payoff, config.plan_for(knob), seed, workers=workers,
                             deterministic=deterministic)
    if method == "mlmc":
        return estimate_mlmc(model, payoff, config.plan_for(knob), seed, workers=workers,
                             deterministic=deterministic)
    samples = config.mc_samples(knob)
    if method == "mc":
        return estimate_mc(model, payoff, knob, samples, seed, workers=workers,
                           deterministic=deterministic)
    if method == "mc-is":
        return estimate_mc_is(model, payoff, knob, samples, config.mc_opt_samples, seed,
                              workers=workers, deterministic=deterministic)
    raise ValueError(f"unknown method {method!r}")


def compute_reference(config):
    """Reference value for the bias: closed form, or a deep multilevel run."""
    spec = config.reference
    model, payoff = config.model, config.payoff
    if spec.mode == "analytic":
        if model.kind != "constant_vol" or payoff.kind != "call":
            raise ConfigError("reference.mode = 'analytic' needs a constant_vol model "
                              "with a call payoff")
        i = payoff.asset
        value = black_scholes_call(model.spot[i], payoff.strike, model.rate, model.volatility,
                                   model.horizon)
        if not payoff.discount:
            value *= math.exp(model.rate * model.horizon)
        return Reference(value, 0.0, "analytic")
    seed = spec.seed if spec.seed is not None else derive_seed(config.seed, 99)
    plan = config.plan_for(spec.levels, spec.sample_scale)
    res = estimate_mlmc(model, payoff, plan, seed)
    return Reference(res.estimate, res.half_width, "mlmc")


def _job(args):
    config, method, knob, rep = args
    seed = derive_seed(config.seed, METHODS.index(method), knob, rep)
    start = time.perf_counter()
    try:
        res = run_method(config, method, knob, seed)
    except Exception as exc:  # reported per row, other rows proceed
        return method, knob, rep, None, None, f"{type(exc).__name__}: {exc}"
    return method, knob, rep, res.estimate, time.perf_counter() - start, res.half_width


def run_benchmark(config, workers=None, reference=None):
    """Replicate every (method, knob) cell and summarize bias, variance and RMSE."""
    workers = config.workers if workers is None else workers
    reference = compute_reference(config) if reference is None else reference
    jobs = [(config, mth, knob, rep) for mth in config.methods
            for knob in config.ladder[mth] for rep in range(config.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs, chunksize=1))
    else:
        results = [_job(j) for j in jobs]

    cells = {}
    for method, knob, rep, est, secs, extra in results:
        cells.setdefault((method, knob), []).append((rep, est, secs, extra))
    rows, failures = [], []
    for (method, knob), reps in sorted(cells.items()):
        reps.sort()
        bad = [r for r in reps if r[1] is None]
        if bad:
            msg = f"{method} knob={knob}: replication {bad[0][0]} failed: {bad[0][3]}"
            log.error(msg)
            failures.append(msg)
            continue
        est = np.array([r[1] for r in reps])
        mean = float(est.mean())
        bias = mean - float(reference.value)
        variance = float(est.var(ddof=1))
        rows.append(BenchmarkRow(method, knob, mean, bias, variance,
                                 math.sqrt(bias * bias + variance),
                                 float(np.mean([r[2] for r in reps])), len(reps),
                                 float(np.mean([r[3] for r in reps]))))

    report = BenchmarkReport(rows, reference, failures)
    if reference.mode != "analytic" and rows:
        smallest = min(r.half_width for r in rows)
        if reference.half_width > smallest / 4:
            msg = (f"reference half-width {reference.half_width:.3g} exceeds a quarter of the "
                   f"smallest ladder half-width {smallest:.3g}")
            log.warning(msg)
            report.warnings.append(msg)
    return report


def write_csv(rows, path_or_file):
    """Write rows with the fixed column order; ``path_or_file`` may be an open text file."""
    if hasattr(path_or_file, "write"):
        _write_rows(rows, path_or_file)
        return
    with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
        _write_rows(rows, fh)


def _write_rows(rows, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.as_csv())
