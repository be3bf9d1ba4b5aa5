"""Strategy sets and the solution record returned by every solver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError

__all__ = ["FeasibleSet", "UNBOUNDED", "PortfolioSolution", "project_budget"]


@dataclass(frozen=True)
class FeasibleSet:
    """Budget hyperplane ``sum(x) = 1`` with optional elementwise lower bounds."""

    lower: float | np.ndarray | None = None

    def lower_vector(self, n):
        if self.lower is None:
            return None
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        if not np.all(np.isfinite(lo)):
            raise ValueError("lower bounds must be finite")
        return lo

    @property
    def bounded(self):
        return self.lower is not None

    def check(self, n):
        lo = self.lower_vector(n)
        if lo is not None and lo.sum() > 1.0:
            raise InfeasibleError(f"lower bounds sum to {lo.sum():g} > 1: empty set")
        return lo

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        if abs(x.sum() - 1.0) > tol:
            return False
        lo = self.lower_vector(x.size)
        return lo is None or bool(np.all(x >= lo - tol))

    def project(self, y):
        return project_budget(y, self.lower_vector(len(y)))

    def random_point(self, n, rng):
        """A random point of the set (strictly interior when bounded)."""
        lo = self.lower_vector(n)
        if lo is None:
            z = rng.normal(size=n)
            return z - (z.sum() - 1.0) / n
        slack = 1.0 - lo.sum()
        if slack <= 0:
            raise InfeasibleError("set has empty interior")
        return lo + slack * rng.dirichlet(np.ones(n))


UNBOUNDED = FeasibleSet()


def project_budget(y, lower=None):
    """Euclidean projection onto ``{x : sum(x) = 1, x >= lower}``.

    The solution is ``max(y - tau, lower)`` with ``tau`` found by bisection
    on the piecewise-linear, decreasing budget residual.
    """
    y = np.asarray(y, dtype=float)
    if lower is None:
        return y - (y.sum() - 1.0) / y.size
    if lower.sum() > 1.0:
        raise InfeasibleError("lower bounds sum exceeds the budget")

    def resid(tau):
        return np.maximum(y - tau, lower).sum() - 1.0

    lo = np.min(y - lower) - 1.0  # resid(lo) >= 0
    hi = np.max(y - lower)  # resid(hi) = sum(lower) - 1 <= 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if resid(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    tau = 0.5 * (lo + hi)
    x = np.maximum(y - tau, lower)
    # exact budget: spread the residual over the free coordinates
    free = x > lower
    if free.any():
        x[free] -= (x.sum() - 1.0) / free.sum()
    return x



@dataclass
class PortfolioSolution:
    x: np.ndarray
    value: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, assets=None):
        names = assets if assets is not None else [f"a{i}" for i in range(len(self.x))]
        return {
            "weights": {a: float(w) for a, w in zip(names, self.x)},
            "value": float(self.value),
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
