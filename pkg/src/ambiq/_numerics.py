"""Small numerical kernels: golden-section search, projection, ascent."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI2 = (3.0 - math.sqrt(5.0)) / 2.0


def golden_section(f, a, b, tol=1e-12, max_iter=500):
    """Minimize a unimodal ``f`` on ``[a, b]``.

    Returns ``(x, f(x))`` for the best point seen; stops once the bracket
    is narrower than ``tol``.  Non-finite function values are treated as
    ``+inf``.
    """

    def g(t):
        v = f(t)
        return v if np.isfinite(v) else math.inf

    a, b = min(a, b), max(a, b)
    h = b - a
    c = a + INV_PHI2 * h
    d = a + INV_PHI * h
    yc, yd = g(c), g(d)
    best = (c, yc) if yc <= yd else (d, yd)
    for _ in range(max_iter):
        if h <= tol:
            break
        if yc <= yd:
            b, d, yd = d, c, yc
            h = INV_PHI * h
            c = a + INV_PHI2 * h
            yc = g(c)
            if yc < best[1]:
                best = (c, yc)
        else:
            a, c, yc = c, d, yd
            h = INV_PHI * h
            d = a + INV_PHI * h
            yd = g(d)
            if yd < best[1]:
                best = (d, yd)
    # endpoints can win for monotone objectives
    for t in (a, b):
        v = g(t)
        if v < best[1]:
            best = (t, v)
    return best


@dataclass
class AscentResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def projected_ascent(fun, grad, x0, feasible, *, rtol=1e-10, max_iter=100_000):
    """Spectral projected-gradient ascent for a concave objective.

    Barzilai-Borwein steps with a nonmonotone Armijo safeguard along the
    projection arc.  Converged when ``|x_new - x| <= rtol * (1 + |x|)``.
    """
    x = feasible.project(np.asarray(x0, dtype=float))
    fx = fun(x)
    g = grad(x)
    alpha = 1.0 / max(np.linalg.norm(g), 1e-12)
    recent = [fx]
    for it in range(1, max_iter + 1):
        ref = max(recent[-10:])
        step = alpha
        while True:
            xn = feasible.project(x + step * g)
            d = xn - x
            fn = fun(xn)
            if np.isfinite(fn) and fn >= ref + 1e-4 * float(g @ d) - 1e-15 * abs(ref):
                break
            step *= 0.5
            if step < 1e-30:
                xn, fn, d = x, fx, np.zeros_like(x)
                break
        gn = grad(xn)
        moved = np.linalg.norm(d)
        if moved <= rtol * (1.0 + np.linalg.norm(x)):
            return AscentResult(xn, fn, it, True)
        sg = gn - g
        sy = -float(d @ sg)
        alpha = float(d @ d) / sy if sy > 0 else 10.0 * step
        alpha = min(max(alpha, 1e-12), 1e12)
        x, fx, g = xn, fn, gn
        recent.append(fx)
    raise ConvergenceError(
        f"projected ascent did not converge in {max_iter} iterations",
        best=AscentResult(x, fx, max_iter, False),
    )


def central_gradient(fun, x, h=1e-6):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def parse_grid(text):
    """Parse ``start:stop:count``, a comma list, or a single value."""
    parts = text.split(":")
    if len(parts) == 1:
        try:
            return [float(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise ValueError(f"grid must be start:stop:count or a comma list, got {text!r}") from None
    if len(parts) != 3:
        raise ValueError(f"grid must be start:stop:count or a comma list, got {text!r}")
    start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 0:
        raise ValueError("grid count must be non-negative")
    return [float(v) for v in np.linspace(start, stop, count)]
