"""Chance-constrained portfolio selection through the VaR approximation.

The constraint ``Pr(x'r <= -delta) <= eps`` is replaced by
``kappa(eps) * sqrt(x'Sigma x) - x'mu <= delta``, a second-order cone
constraint that is convex whenever ``kappa > 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

from .core import UNBOUNDED, FeasibleSet, PortfolioSolution
from .dro import _cho, scalars_abc
from .errors import ConvergenceError, DomainError, InfeasibleError, UnsupportedError
from .moments import Family, kappa, portfolio_moments, sample

log = logging.getLogger(__name__)

__all__ = [
    "ChanceSpec",
    "FeasibilityReport",
    "var_approx",
    "check_feasibility",
    "solve_cco_closed_form",
    "solve_cco_numeric",
    "min_var_approx",
    "verify_chance",
]


@dataclass(frozen=True)
class ChanceSpec:
    eps: float
    delta: float

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise DomainError(f"eps must lie in (0, 1), got {self.eps}")
        if not self.delta > 0 or not math.isfinite(self.delta):
            raise DomainError(f"delta must be positive, got {self.delta}", boundary=0.0)


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    kappa_sq: float
    lower_limit: float
    upper_limit: float
    slope_check: float

    def to_dict(self):
        return asdict(self)


def var_approx(model, eps, x, k=None):
    """``kappa(eps) * sqrt(x'Sigma x) - x'mu``."""
    mean, var = portfolio_moments(model, x)
    k = kappa(model, eps) if k is None else k
    return k * math.sqrt(var) - mean


def check_feasibility(model, spec: ChanceSpec, abc=None) -> FeasibilityReport:
    """Closed-form solvability conditions on the budget hyperplane."""
    abc = abc or scalars_abc(model)
    k2 = kappa(model, spec.eps) ** 2
    d = spec.delta
    lower = abc.C - abc.B**2 / abc.A
    upper = d * d * abc.A + 2.0 * d * abc.B + abc.C
    slope = abc.B + d * abc.A
    return FeasibilityReport(bool(lower < k2 < upper and slope > 0), k2, lower, upper, slope)


def solve_cco_closed_form(model, spec: ChanceSpec) -> PortfolioSolution:
    """Optimum of the VaR-constrained problem on ``{x : sum(x) = 1}``."""
    abc = scalars_abc(model)
    rep = check_feasibility(model, spec, abc)
    A, B, C = abc.A, abc.B, abc.C
    k = math.sqrt(rep.kappa_sq)
    d = spec.delta
    cf = _cho(model.sigma)
    e = np.ones(model.n)
    mu = np.asarray(model.mu, dtype=float)
    det = A * C - B * B
    degenerate = det <= 1e-12 * A * C or rep.lower_limit <= 1e-12 * abs(C)
    if degenerate:
        # mu is proportional to e: every budget portfolio earns B/A, so
        # return the minimum-variance one if it satisfies the constraint
        x = linalg.cho_solve(cf, e) / A
        if not (k * k < rep.upper_limit and rep.slope_check > 0):
            raise InfeasibleError("chance constraint infeasible (degenerate mean vector)", report=rep)
        return PortfolioSolution(
            x, B / A,
            {"method": "closed-form", "degenerate": True, "feasibility": rep.to_dict(),
             "iterations": 0, "active_bounds": []},
        )
    if not rep.feasible:
        raise InfeasibleError("chance parameters violate the solvability conditions", report=rep)
    root_det = math.sqrt(det)
    lam = root_det / (A * k * k - det) * (k * (B + A * d) / math.sqrt(rep.upper_limit - k * k) + root_det)
    theta = ((C + d * B) * (lam + 1.0) - lam * k * k) / (B + d * A)
    x = linalg.cho_solve(cf, (1.0 + lam) * mu - theta * e) / ((1.0 + lam) * B - theta * A)
    return PortfolioSolution(
        x, lam * d + theta,
        {"method": "closed-form", "degenerate": False, "lambda": lam, "theta": theta,
         "feasibility": rep.to_dict(), "iterations": 0, "active_bounds": [],
         "constraint_residual": var_approx(model, spec.eps, x, k) - d},
    )


# --------------------------------------------------------------------------
# Log-barrier interior point


class _Problem:
    """Value and derivatives of ``g(x) = k sqrt(x'Sx) - mu'x - delta``."""

    def __init__(self, model, k, delta, lower):
        self.mu = np.asarray(model.mu, dtype=float)
        self.S = np.asarray(model.sigma, dtype=float)
        self.k = k
        self.delta = delta
        self.lower = lower
        n = self.mu.size
        q, _ = np.linalg.qr(np.column_stack([np.ones(n), np.eye(n)[:, : n - 1]]))
        self.Z = q[:, 1:]  # orthonormal basis of {d : sum(d) = 0}

    def g(self, x):
        return self.k * math.sqrt(max(float(x @ self.S @ x), 0.0)) - float(self.mu @ x) - self.delta

    def g_derivs(self, x):
        Sx = self.S @ x
        s = math.sqrt(max(float(x @ Sx), 1e-300))
        grad = self.k * Sx / s - self.mu
        hess = self.k * (self.S / s - np.outer(Sx, Sx) / s**3)
        return self.k * s - float(self.mu @ x) - self.delta, grad, hess

    def slack_ok(self, x, gval=None):
        if self.lower is not None and np.any(x <= self.lower):
            return False
        return (self.g(x) if gval is None else gval) < 0


def _newton(prob, x, value_grad_hess, feasible_ok, *, tol=1e-13, max_iter=200, stop=None):
    """Damped Newton on the affine budget set, keeping iterates feasible.

    Stops when half the squared Newton decrement drops below
    ``tol * (1 + |f|)``, or when no step passes the Armijo test.
    """
    Z = prob.Z
    for it in range(1, max_iter + 1):
        f, grad, hess = value_grad_hess(x)
        gr = Z.T @ grad
        Hr = Z.T @ hess @ Z
        try:
            dy = -linalg.solve(Hr, gr, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            dy = -gr
        dx = Z @ dy
        dec = -float(gr @ dy)
        if dec <= 0:
            dx, dec = -(Z @ gr), float(gr @ gr)
        if dec / 2.0 <= tol * (1.0 + abs(f)):
            return x, it, True
        t = 1.0
        while t > 1e-20:
            xn = x + t * dx
            if feasible_ok(xn):
                fn = value_grad_hess(xn, value_only=True)
                if math.isfinite(fn) and fn <= f - 0.25 * t * dec:
                    break
            t *= 0.5
        else:
            return x, it, True  # no further progress possible at this precision
        x = xn
        if stop is not None and stop(x):
            return x, it, True
        if np.linalg.norm(x) > 1e8:
            raise InfeasibleError("objective is unbounded on the strategy set")
    return x, max_iter, False


def _barrier_terms(prob, w):
    lower = prob.lower

    def vgh(x, value_only=False):
        gval, gg, gh = prob.g_derivs(x)
        if gval >= 0 or (lower is not None and np.any(x <= lower)):
            return math.inf if value_only else (math.inf, None, None)
        f = -float(prob.mu @ x) - w * math.log(-gval)
        if lower is not None:
            f -= w * float(np.sum(np.log(x - lower)))
        if value_only:
            return f
        grad = -prob.mu - w * gg / gval
        hess = w * (np.outer(gg, gg) / gval**2 - gh / gval)
        if lower is not None:
            r = 1.0 / (x - lower)
            grad = grad - w * r
            hess = hess + w * np.diag(r * r)
        return f, grad, hess

    return vgh


def _phase_one(prob, x0, tau_grid=(1e-2, 1e-4, 1e-6, 1e-8, 0.0)):
    """Drive ``g`` below zero while staying inside the bounds."""
    lower = prob.lower
    x = x0
    target = -0.5 * prob.delta
    iters = 0
    for tau in tau_grid:
        if tau == 0.0 and lower is not None:
            continue

        def vgh(x, value_only=False, tau=tau):
            gval, gg, gh = prob.g_derivs(x)
            if lower is not None and np.any(x <= lower):
                return math.inf if value_only else (math.inf, None, None)
            f, grad, hess = gval, gg, gh
            if lower is not None and tau > 0:
                r = 1.0 / (x - lower)
                f = f - tau * float(np.sum(np.log(x - lower)))
                grad = grad - tau * r
                hess = hess + tau * np.diag(r * r)
            return f if value_only else (f, grad, hess)

        ok = (lambda z: lower is None or bool(np.all(z > lower)))
        x, it, _ = _newton(prob, x, vgh, ok, stop=lambda z: prob.g(z) <= target)
        iters += it
        if prob.g(x) < 0:
            return x, iters
    raise InfeasibleError(
        "no strictly feasible point: the chance constraint cannot be met on this set",
        report={"min_constraint_value": prob.g(x) + prob.delta, "delta": prob.delta},
    )


def solve_cco_numeric(model, spec: ChanceSpec, feasible: FeasibleSet = UNBOUNDED, *,
                      barrier_start=1.0, barrier_end=1e-10) -> PortfolioSolution:
    """Log-barrier interior-point solution of the VaR-constrained problem.

    The barrier weight is cut by 10x from ``barrier_start`` to
    ``barrier_end``; each stage is solved by damped Newton on the budget
    hyperplane.  The suboptimality bound is ``(n_constraints) * barrier_end``.
    """
    n = len(model.mu)
    lower = feasible.check(n)
    k = kappa(model, spec.eps)
    if not k > 0:
        raise DomainError(f"kappa(eps) must be positive for a convex constraint, got {k}")
    prob = _Problem(model, k, spec.delta, lower)
    if lower is not None:
        slack = 1.0 - lower.sum()
        if slack <= 0:
            raise InfeasibleError("strategy set has empty interior")
        x = lower + slack / n
    else:
        x = linalg.cho_solve(_cho(model.sigma), np.ones(n))
        x = x / x.sum()
    x, iters = _phase_one(prob, x)
    w = barrier_start
    stages = 0
    while w >= barrier_end * (1 - 1e-9):
        x, it, ok = _newton(prob, x, _barrier_terms(prob, w), prob.slack_ok)
        iters += it
        stages += 1
        if not ok:
            raise ConvergenceError(f"barrier stage w={w:g} did not converge",
                                   best=PortfolioSolution(x, float(prob.mu @ x), {}))
        w /= 10.0
    m = 1 + (n if lower is not None else 0)
    x = x - (x.sum() - 1.0) / n if lower is None else x
    return PortfolioSolution(
        x, float(prob.mu @ x),
        {"method": "log-barrier", "iterations": iters, "stages": stages,
         "constraint_slack": -prob.g(x), "duality_gap_bound": m * barrier_end,
         "active_bounds": ([] if lower is None else [int(i) for i in np.flatnonzero(x - lower < 1e-7)])},
    )


def min_var_approx(model, eps, feasible: FeasibleSet = UNBOUNDED):
    """Smallest attainable VaR approximation on the set and its minimizer.

    This is the left end of the feasible band in ``delta``.
    """
    n = len(model.mu)
    lower = feasible.check(n)
    k = kappa(model, eps)
    prob = _Problem(model, k, 0.0, lower)
    if lower is not None:
        x = lower + (1.0 - lower.sum()) / n
    else:
        x = linalg.cho_solve(_cho(model.sigma), np.ones(n))
        x = x / x.sum()
    w = 1e-2
    while w >= 1e-12:
        def vgh(z, value_only=False, w=w):
            if lower is not None and np.any(z <= lower):
                return math.inf if value_only else (math.inf, None, None)
            gval, gg, gh = prob.g_derivs(z)
            if lower is not None:
                r = 1.0 / (z - lower)
                gval = gval - w * float(np.sum(np.log(z - lower)))
                gg = gg - w * r
                gh = gh + w * np.diag(r * r)
            return gval if value_only else (gval, gg, gh)

        x, _, _ = _newton(prob, x, vgh, lambda z: lower is None or bool(np.all(z > lower)))
        if lower is None:
            break
        w /= 10.0
    return prob.g(x), x


def verify_chance(model, x, spec: ChanceSpec, count: int, seed: int, chunk=250_000):
    """Monte Carlo frequency of ``x'r <= -delta`` and its standard error.

    Draws are generated in chunks with child seeds spawned from ``seed``,
    so the result depends only on ``(count, seed, chunk)``.
    """
    if model.family is Family.EMPIRICAL:
        raise UnsupportedError("empirical family has no generative model")
    if count < 1:
        raise DomainError("count must be >= 1")
    x = np.asarray(x, dtype=float)
    if x.size != model.n:
        raise ValueError(f"weight vector has length {x.size}, model has n={model.n}")
    sizes = [chunk] * (count // chunk) + ([count % chunk] if count % chunk else [])
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    hits = 0
    for size, child in zip(sizes, children):
        r = sample(model, size, child).values
        hits += int(np.count_nonzero(r @ x <= -spec.delta))
    p = hits / count
    return p, math.sqrt(p * (1.0 - p) / count)
