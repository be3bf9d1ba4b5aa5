"""Distributionally robust portfolio selection under phi-divergence balls.

The worst-case expected return over ``{P : D(P || P0) <= rho}`` is
evaluated three ways:

* ``Order.SECOND``  mean minus ``sqrt(2 rho Var / phi''(1))``
* ``Order.FOURTH``  the truncated deviation expansion with skewness and
  kurtosis corrections, minimized over the dual multiplier ``eta2``
* ``Order.EXACT_KL`` the exact KL dual, a one-dimensional concave problem
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from . import divergence as dv
from ._numerics import central_gradient, golden_section, projected_ascent
from .core import UNBOUNDED, FeasibleSet, PortfolioSolution
from .errors import (
    ConvergenceError,
    DomainError,
    HeavyTailError,
    InfeasibleError,
    NotPositiveDefiniteError,
    UnsupportedError,
)
from .moments import PayoffMoments, ReturnMatrix, portfolio_moments

log = logging.getLogger(__name__)

__all__ = [
    "Order",
    "DroConfig",
    "ScalarsABC",
    "scalars_abc",
    "solve_eta1_quartic_stationarity",
    "companion_roots",
    "deviation_expansion",
    "inner_infimum",
    "exact_kl_inner",
    "dro_threshold",
    "solve_dro_closed_form",
    "solve_dro_numeric",
]

VARIANCE_FLOOR = 1e-16


class Order(str, enum.Enum):
    SECOND = "2"
    FOURTH = "4"
    EXACT_KL = "exact-kl"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        s = str(value).strip().lower()
        return {"2": cls.SECOND, "second": cls.SECOND, "4": cls.FOURTH, "fourth": cls.FOURTH,
                "exact-kl": cls.EXACT_KL, "exact": cls.EXACT_KL, "exactkl": cls.EXACT_KL}[s]


@dataclass(frozen=True)
class DroConfig:
    rho: float
    order: Order = Order.SECOND
    divergence: dv.DivergenceSpec = dv.KL

    def __post_init__(self):
        object.__setattr__(self, "order", Order.parse(self.order))
        if not self.rho >= 0 or not math.isfinite(self.rho):
            raise DomainError(f"rho must be a non-negative finite number, got {self.rho}")
        if self.order is Order.EXACT_KL and self.divergence.kind is not dv.Kind.KL:
            raise DomainError("exact inner solution exists only for the KL divergence")

    def replace(self, **kw):
        d = {"rho": self.rho, "order": self.order, "divergence": self.divergence}
        d.update(kw)
        return DroConfig(**d)


@dataclass(frozen=True)
class ScalarsABC:
    A: float
    B: float
    C: float

    @property
    def gap(self):
        """``C - B**2/A >= 0``; zero iff mu is proportional to e."""
        return max(self.C - self.B**2 / self.A, 0.0)

    @property
    def det(self):
        """``A C - B**2``."""
        return max(self.A * self.C - self.B**2, 0.0)


def _cho(sigma):
    try:
        return linalg.cho_factor(np.asarray(sigma, dtype=float), lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError("covariance is not positive definite") from None


def scalars_abc(model) -> ScalarsABC:
    """``A = e'S^-1 e``, ``B = mu'S^-1 e``, ``C = mu'S^-1 mu`` via Cholesky."""
    cf = _cho(model.sigma)
    mu = np.asarray(model.mu, dtype=float)
    e = np.ones_like(mu)
    se = linalg.cho_solve(cf, e)
    smu = linalg.cho_solve(cf, mu)
    return ScalarsABC(float(e @ se), float(mu @ se), float(mu @ smu))


# --------------------------------------------------------------------------
# Deviation expansion


def _truncated_sum(b, m2, m3, m4, eta1, eta2):
    """``sum_k b_k E[(X + eta1)^(k+1)] eta2^k`` with ``E[X] = 0``."""
    a = eta1
    terms = [m2 + a * a]
    if len(b) > 1:
        terms.append(m3 + 3.0 * a * m2 + a**3)
        terms.append(m4 + 4.0 * a * m3 + 6.0 * a * a * m2 + a**4)
    return sum(bk * t * eta2 ** (k + 1) for k, (bk, t) in enumerate(zip(b, terms)))


def _cubic_coefficients(b, m2, m3, eta2):
    """Stationarity polynomial in eta1, highest degree first."""
    b1, b2, b3 = b
    return np.array([
        4.0 * b3 * eta2**3,
        3.0 * b2 * eta2**2,
        2.0 * b1 * eta2 + 12.0 * b3 * eta2**3 * m2,
        4.0 * b3 * eta2**3 * m3 + 3.0 * b2 * eta2**2 * m2,
    ])


def _horner(coef, r):
    v = 0.0
    for c in coef:
        v = v * r + c
    return v


def companion_roots(coef):
    """All roots of a polynomial (highest degree first) as companion eigenvalues."""
    coef = [float(c) for c in coef]
    while coef and coef[0] == 0.0:
        coef.pop(0)
    deg = len(coef) - 1
    if deg < 1:
        raise DomainError("degenerate stationarity polynomial: all coefficients vanish")
    comp = np.zeros((deg, deg))
    comp[0, :] = [-c / coef[0] for c in coef[1:]]
    comp[np.arange(1, deg), np.arange(deg - 1)] = 1.0
    return np.linalg.eigvals(comp), coef


def _real_roots(coef):
    roots, coef = companion_roots(coef)
    real = roots[np.abs(roots.imag) < 1e-10 * np.abs(roots.real) + 1e-12].real
    if real.size == 0:
        # numerically complex pair straddling a double root
        real = roots[[np.argmin(np.abs(roots.imag))]].real
    deg = len(coef) - 1
    dcoef = [c * (deg - k) for k, c in enumerate(coef[:-1])]
    return [_polish(coef, dcoef, float(r)) for r in real]


def _polish(coef, dcoef, r):
    """A few guarded Newton steps on a real root estimate."""
    pr = _horner(coef, r)
    for _ in range(3):
        d = _horner(dcoef, r)
        if d == 0.0 or pr == 0.0:
            break
        r_new = r - pr / d
        p_new = _horner(coef, r_new)
        if not abs(p_new) < abs(pr):
            break
        r, pr = r_new, p_new
    return r


def solve_eta1_quartic_stationarity(coeffs, m2, m3, eta2, m4=0.0, info=None):
    """Optimal ``eta1`` for the fourth-order truncated deviation sum.

    Solves the cubic stationarity condition by companion-matrix roots.
    With several real roots the one giving the smallest truncated sum is
    returned (ties: smallest ``|eta1|``).  ``m4`` only shifts the sum by a
    constant and does not influence the choice.

    If ``info`` is a dict it receives the candidate roots and their values.
    """
    if m2 < 0:
        raise DomainError("second central moment must be non-negative")
    b = coeffs.b if isinstance(coeffs, dv.ExpansionCoefficients) else tuple(coeffs)
    if len(b) == 1:
        return 0.0
    if len(b) != 3:
        raise UnsupportedError("only orders 2 and 4 are supported")
    if eta2 <= 0:
        raise DomainError("eta2 must be positive")
    coef = _cubic_coefficients(b, m2, m3, eta2)
    # divide out eta2 so the linear term is O(1)
    roots = _real_roots(coef / eta2)
    vals = [_truncated_sum(b, m2, m3, m4, r, eta2) for r in roots]
    best = min(range(len(roots)), key=lambda i: (vals[i], abs(roots[i])))
    if info is not None:
        info.update(roots=roots, values=vals, chosen=best)
    return roots[best]


def deviation_expansion(coeffs, moments, eta2):
    """Truncated deviation expansion at multiplier ``eta2``.

    ``moments`` is a :class:`PayoffMoments` or a sequence ``(m2, m3, m4)``
    of central moments of the payoff.
    """
    b = coeffs.b if isinstance(coeffs, dv.ExpansionCoefficients) else tuple(coeffs)
    if isinstance(moments, PayoffMoments):
        m2, m3, m4 = moments.m2, moments.m3, moments.m4
    else:
        m = list(moments) + [None] * 3
        m2, m3, m4 = m[0], m[1], m[2]
    if m2 is None:
        raise DomainError("second central moment is required")
    if len(b) == 1:
        return b[0] * m2 * eta2
    if m3 is None or m4 is None or not (math.isfinite(m3) and math.isfinite(m4)):
        raise DomainError("fourth-order expansion needs finite third and fourth central moments")
    eta1 = solve_eta1_quartic_stationarity(b, m2, m3, eta2, m4=m4)
    return _truncated_sum(b, m2, m3, m4, eta1, eta2)


def _payoff_moments(source, x):
    if hasattr(source, "payoff_moments"):
        return source.payoff_moments(x)
    if isinstance(source, PayoffMoments):
        return source
    raise TypeError("need a model exposing payoff_moments(x) or a PayoffMoments record")


def _fourth_order_penalty(coeffs, pm, rho, info=None):
    """``min_{eta2 in (0, cap]} rho/eta2 + D4(eta2)`` by golden section."""
    var = max(pm.m2, VARIANCE_FLOOR)
    phi2 = 1.0 / (2.0 * coeffs.b[0])
    eta_star = math.sqrt(2.0 * rho * phi2 / var)
    # golden section in log(eta2): bracket around the second-order optimum
    lo, hi = math.log(eta_star) - math.log(100.0), math.log(eta_star) + math.log(100.0)

    def obj(t):
        e2 = math.exp(t)
        return rho / e2 + deviation_expansion(coeffs, pm, e2)

    t, val = golden_section(obj, lo, hi, tol=1e-12 / eta_star)
    if info is not None:
        e2 = math.exp(t)
        info.update(inner_eta2=e2, inner_eta1=solve_eta1_quartic_stationarity(coeffs, pm.m2, pm.m3, e2, pm.m4))
    return val


def inner_infimum(source, config: DroConfig, x, info=None):
    """Worst-case expected payoff of ``x`` over the ambiguity ball.

    ``source`` is a :class:`~ambiq.moments.MomentModel` (or any object with
    ``mu``, ``sigma`` and, for the fourth order, ``payoff_moments``).  For
    ``Order.EXACT_KL`` it must provide ``log_mgf`` or be a sample matrix.
    """
    rho = config.rho
    if config.order is Order.EXACT_KL:
        return exact_kl_inner(source, x, rho, info=info)
    phi2 = dv.phi_second_at_one(config.divergence)
    if config.order is Order.SECOND:
        mean, var = portfolio_moments(source, x)
        if var == 0.0:
            log.debug("zero payoff variance: worst case equals nominal")
            return mean
        return mean - math.sqrt(2.0 * rho * var / phi2)
    pm = _payoff_moments(source, x)
    if rho == 0.0 or pm.m2 <= 0.0:
        return pm.mean
    coeffs = dv.expansion_coefficients(config.divergence, 4)
    return pm.mean - _fourth_order_penalty(coeffs, pm, rho, info)


# --------------------------------------------------------------------------
# Exact KL


def exact_kl_inner(source, x, rho, info=None):
    """Exact worst-case mean under a KL ball of radius ``rho``.

    Maximizes ``-a rho - a log E[exp(-f/a)]`` over ``a > 0`` by golden
    section in ``log a`` on ``[1e-6, 1e6] * std(f)``.  The expectation is a
    log-sum-exp sample average when ``source`` holds samples, or the
    analytic ``source.log_mgf(x, s)`` otherwise.
    """
    if rho < 0:
        raise DomainError("rho must be non-negative")
    x = np.asarray(x, dtype=float)
    if hasattr(source, "log_mgf"):
        pm = source.payoff_moments(x)
        mean, std = pm.mean, math.sqrt(max(pm.m2, 0.0))

        def log_mgf(s):
            return source.log_mgf(x, s)

    else:
        vals = source.values if isinstance(source, ReturnMatrix) else np.asarray(source, dtype=float)
        f = vals @ x
        mean, std = float(np.mean(f)), float(np.std(f))
        logN = math.log(f.size)

        def log_mgf(s):
            return float(logsumexp(s * f)) - logN

    if std == 0.0:
        return mean
    lo, hi = math.log(1e-6 * std), math.log(1e6 * std)
    if rho == 0.0:
        # supremum is the a -> infinity limit
        if info is not None:
            info.update(kl_multiplier=math.exp(hi), at_bracket_top=True)
        return mean

    def neg_dual(t):
        a = math.exp(t)
        lm = log_mgf(-1.0 / a)
        if not math.isfinite(lm):
            return math.inf
        return a * rho + a * lm

    t, v = golden_section(neg_dual, lo, hi, tol=1e-12)
    if not math.isfinite(v):
        raise HeavyTailError("exponential moment of the payoff is not finite on the search bracket")
    if info is not None:
        info.update(kl_multiplier=math.exp(t), at_bracket_top=bool(hi - t < 1e-6))
    return -v


# --------------------------------------------------------------------------
# Outer problems


def dro_threshold(model, divergence=dv.KL, abc=None):
    """Smallest radius (exclusive) with a closed-form optimum on the hyperplane."""
    abc = abc or scalars_abc(model)
    return dv.phi_second_at_one(divergence) * abc.gap / 2.0


def solve_dro_closed_form(model, config: DroConfig) -> PortfolioSolution:
    """Mean-deviation optimum over ``{x : sum(x) = 1}`` in closed form."""
    if config.order is not Order.SECOND:
        raise UnsupportedError("the closed form applies to the second-order reformulation only")
    abc = scalars_abc(model)
    A, B, C = abc.A, abc.B, abc.C
    phi2 = dv.phi_second_at_one(config.divergence)
    threshold = phi2 * abc.gap / 2.0
    if not config.rho > threshold:
        raise InfeasibleError(
            f"rho={config.rho:g} must exceed phi''(1)(C - B^2/A)/2 = {threshold:g}",
            report={"threshold": threshold, "rho": config.rho},
        )
    disc = B * B - A * (C - 2.0 * config.rho / phi2)
    lam = B / A - math.sqrt(max(disc, 0.0)) / A
    cf = _cho(model.sigma)
    e = np.ones(model.n)
    x = linalg.cho_solve(cf, np.asarray(model.mu) - lam * e) / (B - lam * A)
    return PortfolioSolution(
        x, lam,
        {"method": "closed-form", "threshold": threshold, "A": A, "B": B, "C": C, "iterations": 0,
         "active_bounds": [], **_second_order_multipliers(model, x, config.rho, phi2)},
    )


def _second_order_multipliers(model, x, rho, phi2):
    """Dual multipliers at which the second-order penalty is attained."""
    var = max(portfolio_moments(model, x)[1], VARIANCE_FLOOR)
    return {"inner_eta2": math.sqrt(2.0 * rho * phi2 / var), "inner_eta1": 0.0}


def _second_order_objective(model, rho, phi2):
    mu = np.asarray(model.mu, dtype=float)
    S = np.asarray(model.sigma, dtype=float)
    c = math.sqrt(2.0 * rho / phi2)

    def fun(x):
        return float(x @ mu) - c * math.sqrt(max(float(x @ S @ x), VARIANCE_FLOOR))

    def grad(x):
        Sx = S @ x
        return mu - c * Sx / math.sqrt(max(float(x @ Sx), VARIANCE_FLOOR))

    return fun, grad


def _active(x, feasible, tol=1e-9):
    lo = feasible.lower_vector(len(x))
    if lo is None:
        return []
    return [int(i) for i in np.flatnonzero(x <= lo + tol)]


def solve_dro_numeric(model, config: DroConfig, feasible: FeasibleSet = UNBOUNDED, *, seed=0,
                      x0=None, max_iter=100_000) -> PortfolioSolution:
    """Maximize the robust objective over a budget set with lower bounds.

    Second order uses the analytic gradient of the concave mean-deviation
    objective.  Fourth order and exact KL use central differences and a
    multistart (second-order solution, equal weights, three random points).
    """
    n = len(model.mu)
    feasible.check(n)
    if config.order is Order.SECOND:
        fun, grad = _second_order_objective(model, config.rho, dv.phi_second_at_one(config.divergence))
        start = x0 if x0 is not None else _second_order_start(model, config, feasible)
        try:
            res = projected_ascent(fun, grad, start, feasible, rtol=1e-10, max_iter=max_iter)
        except ConvergenceError as exc:
            b = exc.best
            raise ConvergenceError(
                str(exc), best=PortfolioSolution(b.x, b.value, {"iterations": b.iterations})
            ) from None
        return PortfolioSolution(
            res.x, res.value,
            {"method": "projected-gradient", "iterations": res.iterations,
             "active_bounds": _active(res.x, feasible),
             **_second_order_multipliers(model, res.x, config.rho, dv.phi_second_at_one(config.divergence))},
        )

    def fun(x):
        return inner_infimum(model, config, x)

    def grad(x):
        return central_gradient(fun, x, 1e-6)

    rng = np.random.default_rng(seed)
    starts = [_second_order_start(model, config.replace(order=Order.SECOND), feasible),
              feasible.project(np.full(n, 1.0 / n))]
    starts += [feasible.random_point(n, rng) for _ in range(3)]
    if x0 is not None:
        starts.insert(0, np.asarray(x0, dtype=float))
    results = []
    for s in starts:
        try:
            results.append(projected_ascent(fun, grad, s, feasible, rtol=1e-10, max_iter=max_iter))
        except ConvergenceError as exc:
            results.append(exc.best)
    # deterministic reduction: best value, ties by start index
    best_i = max(range(len(results)), key=lambda i: (results[i].value, -i))
    best = results[best_i]
    info = {}
    inner_infimum(model, config, best.x, info=info)
    diag = {
        "method": "multistart-projected-gradient",
        "iterations": int(sum(r.iterations for r in results)),
        "start_values": [float(r.value) for r in results],
        "best_start": best_i,
        "active_bounds": _active(best.x, feasible),
        **info,
    }
    if not best.converged:
        raise ConvergenceError("no multistart run converged", best=PortfolioSolution(best.x, best.value, diag))
    return PortfolioSolution(best.x, best.value, diag)


def _second_order_start(model, config, feasible):
    """Closed-form solution when it exists, else the minimum-variance point."""
    n = len(model.mu)
    try:
        x = solve_dro_closed_form(model, config.replace(order=Order.SECOND)).x
    except InfeasibleError:
        cf = _cho(model.sigma)
        x = linalg.cho_solve(cf, np.ones(n))
        x = x / x.sum()
    return feasible.project(x)
