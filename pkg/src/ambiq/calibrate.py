"""Translate between an ambiguity radius and chance parameters.

Two problems are called equivalent when their optimal *values* coincide:
the robust problem at radius ``rho`` and the VaR-constrained problem at
``(eps, delta)``.  Both values are monotone in their parameter (robust
value decreasing in ``rho``, chance value increasing in ``delta``), so each
direction is a one-dimensional bisection.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .cco import ChanceSpec, min_var_approx, solve_cco_closed_form, solve_cco_numeric
from .core import UNBOUNDED, FeasibleSet
from .dro import DroConfig, Order, dro_threshold, solve_dro_closed_form, solve_dro_numeric
from .errors import AmbiqError, InfeasibleError, NoEquivalentError
from .moments import kappa

log = logging.getLogger(__name__)

__all__ = [
    "CalibrationResult",
    "FrontierPoint",
    "dro_value",
    "cco_value",
    "equivalent_rho",
    "equivalent_delta",
    "frontier",
]

RHO_FLOOR = 1e-16
VALUE_RTOL = 1e-10


@dataclass
class CalibrationResult:
    rho: float
    cco_value: float
    dro_value: float
    gap: float
    bracket: tuple
    iterations: int
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)


@dataclass
class FrontierPoint:
    eps: float
    delta: float | None
    status: str = "ok"
    dro_value: float | None = None
    cco_value: float | None = None
    message: str = ""


class _DroCurve:
    """Memoized robust optimum as a function of the radius.

    Numeric solves are warm-started from the nearest radius already seen.
    """

    def __init__(self, model, divergence, feasible, order):
        self.model = model
        self.divergence = divergence
        self.feasible = feasible
        self.order = Order.parse(order)
        self.cache = {}
        self.threshold = None
        if not feasible.bounded and self.order is Order.SECOND:
            self.threshold = dro_threshold(model, divergence)

    def solve(self, rho):
        cfg = DroConfig(rho, self.order, self.divergence)
        if not self.feasible.bounded and self.order is Order.SECOND:
            if rho <= self.threshold:
                return None  # unbounded above
            return solve_dro_closed_form(self.model, cfg)
        x0 = None
        if self.cache and self.order is Order.SECOND:
            near = min(self.cache, key=lambda r: abs(math.log(r) - math.log(rho)))
            x0 = self.cache[near].x
        sol = solve_dro_numeric(self.model, cfg, self.feasible, x0=x0)
        self.cache[rho] = sol
        return sol

    def value(self, rho):
        sol = self.solve(rho)
        return math.inf if sol is None else sol.value


def dro_value(model, divergence, rho, feasible=UNBOUNDED, order=Order.SECOND):
    return _DroCurve(model, divergence, feasible, order).value(rho)


def cco_value(model, spec: ChanceSpec, feasible=UNBOUNDED, **kw):
    if feasible.bounded:
        return solve_cco_numeric(model, spec, feasible, **kw).value
    return solve_cco_closed_form(model, spec).value


def _tol(v):
    return VALUE_RTOL * (1.0 + abs(v))


def _midpoint(lo, hi):
    if lo > 0 and hi / lo > 2.0:
        return math.sqrt(lo * hi)
    return 0.5 * (lo + hi)


def equivalent_rho(model, divergence, spec: ChanceSpec, feasible: FeasibleSet = UNBOUNDED,
                   order=Order.SECOND, max_iter=400) -> CalibrationResult:
    """Radius whose robust optimum equals the chance-constrained optimum.

    Raises
    ------
    NoEquivalentError
        When even a vanishing radius leaves the robust value below the
        chance-constrained value (always the case on the unbounded
        hyperplane, where the chance problem dominates).
    """
    target = cco_value(model, spec, feasible)
    curve = _DroCurve(model, divergence, feasible, order)
    lo = RHO_FLOOR
    if curve.threshold is not None and lo <= curve.threshold:
        lo = curve.threshold * (1.0 + 1e-12) + RHO_FLOOR
    v_lo = curve.value(lo)
    if v_lo < target:
        raise NoEquivalentError(
            f"robust value {v_lo:.10g} at rho={lo:g} is already below the chance-constrained "
            f"value {target:.10g}; no radius is equivalent",
            report={"cco_value": target, "dro_value_at_floor": v_lo, "rho_floor": lo},
        )
    hi = max(1.0, 2.0 * lo)
    v_hi = curve.value(hi)
    while v_hi > target:
        lo, v_lo = hi, v_hi
        hi *= 10.0
        if hi > 1e12:
            raise NoEquivalentError("robust value never drops to the chance-constrained value",
                                    report={"cco_value": target, "rho_max": hi})
        v_hi = curve.value(hi)
    it = 0
    best = (lo, v_lo) if abs(v_lo - target) <= abs(v_hi - target) else (hi, v_hi)
    converged = abs(best[1] - target) < _tol(target)
    while not converged and it < max_iter and hi - lo >= 1e-18:
        it += 1
        mid = _midpoint(lo, hi)
        if not lo < mid < hi:
            break
        v = curve.value(mid)
        if abs(v - target) < abs(best[1] - target):
            best = (mid, v)
        if abs(v - target) < _tol(target):
            converged = True
            break
        if v > target:
            lo = mid
        else:
            hi = mid
    rho, v = best
    return CalibrationResult(
        rho=rho, cco_value=target, dro_value=v, gap=v - target, bracket=(lo, hi), iterations=it,
        converged=converged,
        diagnostics={"order": curve.order.value, "divergence": str(divergence), "eps": spec.eps,
                     "delta": spec.delta, "bounded": feasible.bounded},
    )


def _delta_band(model, eps, feasible):
    """Left end of the feasible ``delta`` range on the set."""
    if not feasible.bounded:
        from .dro import scalars_abc

        abc = scalars_abc(model)
        k2 = kappa(model, eps) ** 2
        if not k2 > abc.C - abc.B**2 / abc.A:
            raise InfeasibleError("chance problem is unbounded for this eps on the hyperplane")
        # smallest delta with k^2 < A d^2 + 2 B d + C and B + d A > 0
        return (-abc.B + math.sqrt(abc.A * k2 - (abc.A * abc.C - abc.B**2))) / abc.A
    return min_var_approx(model, eps, feasible)[0]


def equivalent_delta(model, divergence, rho, eps, feasible: FeasibleSet = UNBOUNDED,
                     order=Order.SECOND, max_iter=400) -> FrontierPoint:
    """Loss threshold whose chance-constrained optimum equals the robust optimum."""
    v = _DroCurve(model, divergence, feasible, order).value(rho)
    if not math.isfinite(v):
        raise InfeasibleError(f"robust problem is unbounded at rho={rho:g}")
    d_min = _delta_band(model, eps, feasible)
    lo = max(d_min, 0.0)
    lo = lo + 1e-6 * (1.0 + abs(lo))

    def c(d):
        return cco_value(model, ChanceSpec(eps, d), feasible)

    c_lo = c(lo)
    if c_lo > v:
        raise NoEquivalentError(
            f"smallest feasible delta={lo:.6g} already yields value {c_lo:.10g} above the robust "
            f"value {v:.10g}",
            report={"delta_min": d_min, "cco_at_min": c_lo, "dro_value": v},
        )
    hi = max(2.0 * lo, lo + 1e-3)
    c_hi = c(hi)
    while c_hi < v:
        lo, c_lo = hi, c_hi
        hi *= 2.0
        if hi > 1e6:
            raise NoEquivalentError("chance-constrained value never reaches the robust value",
                                    report={"delta_max": hi, "dro_value": v})
        c_hi = c(hi)
    best = (lo, c_lo) if abs(c_lo - v) <= abs(c_hi - v) else (hi, c_hi)
    it = 0
    while abs(best[1] - v) >= _tol(v) and it < max_iter and hi - lo > 1e-16 * hi:
        it += 1
        mid = 0.5 * (lo + hi)
        cm = c(mid)
        if abs(cm - v) < abs(best[1] - v):
            best = (mid, cm)
        if cm < v:
            lo = mid
        else:
            hi = mid
    status = "ok" if abs(best[1] - v) < _tol(v) else "tolerance"
    return FrontierPoint(eps=eps, delta=best[0], status=status, dro_value=v, cco_value=best[1])


def _workers():
    try:
        return max(1, int(os.environ.get("AMBIQ_THREADS", "1")))
    except ValueError:
        return 1


def frontier(model, divergence, rho, eps_grid, feasible: FeasibleSet = UNBOUNDED,
             order=Order.SECOND) -> list:
    """Equivalent ``(eps, delta)`` pairs at a fixed radius, in grid order."""

    def one(eps):
        try:
            return equivalent_delta(model, divergence, rho, eps, feasible, order)
        except AmbiqError as exc:
            status = "no-equivalent" if isinstance(exc, NoEquivalentError) else "infeasible"
            return FrontierPoint(eps=eps, delta=None, status=status, message=str(exc))

    grid = list(eps_grid)
    workers = min(_workers(), max(len(grid), 1))
    if workers <= 1:
        return [one(e) for e in grid]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(one, grid))
