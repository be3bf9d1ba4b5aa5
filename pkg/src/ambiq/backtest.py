"""Walk-forward rebalancing backtest and the mean-variance baseline.

At each rebalance index ``t`` a moment model is fitted on rows
``[t - window, t)`` and the chosen weights are held for rows
``[t, t + freq)``.  No row at or after ``t`` is visible to the fit.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np
from scipy import linalg

from . import divergence as dv
from .core import FeasibleSet, PortfolioSolution
from .dro import DroConfig, Order, _cho, scalars_abc, solve_dro_closed_form, solve_dro_numeric
from .errors import AmbiqError, DomainError, InfeasibleError
from .moments import ReturnMatrix, estimate_moments

log = logging.getLogger(__name__)

__all__ = [
    "DRO",
    "Nominal",
    "MeanVariance",
    "BacktestConfig",
    "BacktestStats",
    "SeriesSummary",
    "solve_mean_variance",
    "solve_nominal",
    "run_backtest",
    "summarize",
]


@dataclass(frozen=True)
class DRO:
    rho: float
    divergence: dv.DivergenceSpec = dv.KL
    order: Order = Order.SECOND

    name = "dro"


@dataclass(frozen=True)
class Nominal:
    name = "nominal"


@dataclass(frozen=True)
class MeanVariance:
    r_target: float = -math.inf

    name = "mv"


Strategy = Union[DRO, Nominal, MeanVariance]


@dataclass(frozen=True)
class BacktestConfig:
    window: int
    freq: int
    strategy: Strategy
    lower_bound: float | None = -1.0

    def __post_init__(self):
        if int(self.freq) != self.freq or self.freq < 1:
            raise DomainError(f"freq must be a positive integer, got {self.freq}", boundary=1)
        if int(self.window) != self.window or self.window < 1:
            raise DomainError(f"window must be a positive integer, got {self.window}")

    @property
    def feasible(self):
        return FeasibleSet(self.lower_bound)


class SeriesSummary(NamedTuple):
    mean: float
    variance: float
    skewness: float

    @property
    def degenerate(self):
        return self.variance == 0.0


@dataclass
class BacktestStats:
    mean: float
    variance: float
    skewness: float
    series: np.ndarray
    weights: np.ndarray
    rebalance_index: list
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "mean": self.mean,
            "variance": self.variance,
            "skewness": self.skewness,
            "degenerate": self.degenerate,
            "periods": int(self.series.size),
            "rebalances": len(self.rebalance_index),
            "diagnostics": self.diagnostics,
        }


def summarize(series) -> SeriesSummary:
    """Sample mean, unbiased variance and skewness of a return series.

    Skewness is ``m3 / m2**1.5`` with biased central moments.  A constant
    series has variance 0 and skewness defined as 0.
    """
    s = np.asarray(series, dtype=float).ravel()
    if s.size < 3:
        raise DomainError(f"need at least 3 observations, got {s.size}", boundary=3)
    mean = float(s.mean())
    if np.ptp(s) == 0:
        return SeriesSummary(float(s[0]), 0.0, 0.0)
    d = s - mean
    scale = float(np.max(np.abs(d)))
    if scale == 0.0:
        # spread below floating resolution
        return SeriesSummary(mean, float(np.var(s, ddof=1)), 0.0)
    # skewness is scale free; rescaling keeps m2**1.5 away from underflow
    z = d / scale
    m2 = float(np.mean(z * z))
    m3 = float(np.mean(z * z * z))
    return SeriesSummary(mean, float(np.var(s, ddof=1)), m3 / m2**1.5)


def solve_mean_variance(model, r_target=-math.inf) -> PortfolioSolution:
    """Minimum variance subject to ``x'mu >= r_target`` and ``sum(x) = 1``.

    Returns the global minimum-variance portfolio when it already meets the
    target, otherwise the efficient portfolio earning exactly ``r_target``.
    """
    abc = scalars_abc(model)
    A, B, C = abc.A, abc.B, abc.C
    cf = _cho(model.sigma)
    mu = np.asarray(model.mu, dtype=float)
    e = np.ones(len(mu))
    if B / A >= r_target:
        x = linalg.cho_solve(cf, e) / A
        binding = False
    else:
        det = A * C - B * B
        if det <= 1e-12 * A * C:
            raise InfeasibleError(
                f"target {r_target:g} exceeds the only attainable mean {B / A:g}",
                report={"max_mean": B / A, "r_target": r_target},
            )
        a = (A * r_target - B) / det
        b = (C - B * r_target) / det
        x = linalg.cho_solve(cf, a * mu + b * e)
        binding = True
    var = float(x @ model.sigma @ x)
    return PortfolioSolution(
        x, var, {"method": "kkt", "binding": binding, "mean": float(mu @ x), "variance": var}
    )


def solve_nominal(model, feasible: FeasibleSet) -> PortfolioSolution:
    """Maximize ``mu'x`` over ``{sum(x) = 1, x >= l}``.

    The linear program puts all slack on the asset with the largest mean
    (first index on ties).
    """
    mu = np.asarray(model.mu, dtype=float)
    n = len(mu)
    if not feasible.bounded:
        raise InfeasibleError("nominal problem is unbounded without lower bounds")
    feasible.check(n)
    lo = feasible.lower_vector(n)
    x = lo.copy()
    k = int(np.argmax(mu))
    x[k] += 1.0 - lo.sum()
    return PortfolioSolution(x, float(mu @ x), {"method": "vertex", "asset": k})


def _solve(model, config: BacktestConfig) -> PortfolioSolution:
    st = config.strategy
    if isinstance(st, MeanVariance):
        return solve_mean_variance(model, st.r_target)
    if isinstance(st, Nominal):
        return solve_nominal(model, config.feasible)
    if isinstance(st, DRO):
        cfg = DroConfig(st.rho, st.order, st.divergence)
        if not config.feasible.bounded and cfg.order is Order.SECOND:
            return solve_dro_closed_form(model, cfg)
        return solve_dro_numeric(model, cfg, config.feasible)
    raise TypeError(f"unknown strategy {st!r}")


def run_backtest(returns: ReturnMatrix, config: BacktestConfig) -> BacktestStats:
    """Walk-forward backtest of one strategy.

    A window whose solve fails keeps the previous weights (equal weights
    before the first success); failures are counted by error type in
    ``diagnostics["skipped"]``.
    """
    T, n = returns.shape
    W, K = int(config.window), int(config.freq)
    if W < n + 2:
        raise DomainError(f"window must be at least n+2={n + 2}, got {W}", boundary=n + 2)
    if T <= W + K:
        raise DomainError(f"need more than window+freq={W + K} rows, got {T}", boundary=W + K + 1)
    R = returns.values
    x = np.full(n, 1.0 / n)
    have_weights = False
    skipped = Counter()
    series, weights, times = [], [], []
    for t in range(W, T, K):
        try:
            model = estimate_moments(ReturnMatrix(R[t - W:t]))
            x = np.asarray(_solve(model, config).x, dtype=float)
            have_weights = True
        except AmbiqError as exc:
            skipped[type(exc).__name__] += 1
            log.info("rebalance at row %d failed (%s); carrying weights", t, exc)
            if not have_weights:
                skipped["equal_weight_fallback"] += 1
        times.append(t)
        weights.append(x.copy())
        series.extend(R[t:t + K] @ x)
    s = np.asarray(series)
    summ = summarize(s)
    return BacktestStats(
        mean=summ.mean, variance=summ.variance, skewness=summ.skewness, series=s,
        weights=np.asarray(weights), rebalance_index=times, degenerate=summ.degenerate,
        diagnostics={"strategy": config.strategy.name, "window": W, "freq": K,
                     "lower_bound": config.lower_bound, "skipped": dict(skipped),
                     "skipped_total": sum(v for k, v in skipped.items() if k != "equal_weight_fallback")},
    )
