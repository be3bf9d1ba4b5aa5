"""phi-divergences: pointwise generator, conjugate, and expansion coefficients.

Two families are supported, Kullback-Leibler and Cressie-Read of order
``theta > 2``.  Both are normalised so that ``phi(1) = phi'(1) = 0`` and
``phi''(1) = 1``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import DomainError, UnsupportedError

__all__ = [
    "Kind",
    "DivergenceSpec",
    "ExpansionCoefficients",
    "KL",
    "cressie_read",
    "phi",
    "phi_conjugate",
    "phi_second_at_one",
    "expansion_coefficients",
]


class Kind(str, enum.Enum):
    KL = "kl"
    CRESSIE_READ = "cressie-read"


@dataclass(frozen=True)
class DivergenceSpec:
    kind: Kind
    theta: float | None = None

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is Kind.CRESSIE_READ:
            if self.theta is None:
                raise DomainError("Cressie-Read divergence requires theta")
            if not self.theta > 2:
                # coefficient formulas are only established for theta > 2
                raise DomainError(
                    f"Cressie-Read theta must exceed 2, got {self.theta}", boundary=2.0
                )
            object.__setattr__(self, "theta", float(self.theta))
        elif self.theta is not None:
            raise DomainError("theta is only meaningful for Cressie-Read")

    @classmethod
    def parse(cls, name: str, theta: float | None = None) -> "DivergenceSpec":
        """Build a spec from CLI-style names (``kl``, ``cressie-read``)."""
        name = name.strip().lower().replace("_", "-")
        if name in ("kl", "kullback-leibler"):
            return cls(Kind.KL)
        if name in ("cressie-read", "cr"):
            return cls(Kind.CRESSIE_READ, theta)
        raise DomainError(f"unknown divergence {name!r}")

    def __str__(self):
        if self.kind is Kind.KL:
            return "kl"
        return f"cressie-read(theta={self.theta:g})"


KL = DivergenceSpec(Kind.KL)


def cressie_read(theta: float) -> DivergenceSpec:
    return DivergenceSpec(Kind.CRESSIE_READ, theta)


@dataclass(frozen=True)
class ExpansionCoefficients:
    """Coefficients ``b_1 .. b_{K-1}`` of the deviation expansion of order K."""

    order: int
    b: tuple[float, ...]

    def __post_init__(self):
        if self.order < 2 or self.order % 2:
            raise DomainError(f"expansion order must be an even integer >= 2, got {self.order}")
        if len(self.b) != self.order - 1:
            raise DomainError("need exactly order-1 coefficients")


def phi(spec: DivergenceSpec, t: float) -> float:
    """Evaluate the divergence generator at ``t >= 0``."""
    if t < 0 or math.isnan(t):
        raise DomainError(f"phi is defined for t >= 0, got {t}", boundary=0.0)
    if spec.kind is Kind.KL:
        if t == 0:
            return 1.0
        return t * math.log(t) - t + 1.0
    th = spec.theta
    return (1.0 - th + th * t - t**th) / (th * (1.0 - th))


def conjugate_domain(spec: DivergenceSpec) -> float | None:
    """Lower end of the conjugate's formula domain, or None if unrestricted.

    For ``theta > 1`` the closed form holds for ``s >= 1/(1 - theta)``; below
    that point the supremum sits at ``t = 0``.
    """
    if spec.kind is Kind.KL:
        return None
    return 1.0 / (1.0 - spec.theta)


def phi_conjugate(spec: DivergenceSpec, s: float) -> float:
    """Legendre-Fenchel conjugate ``sup_{t>=0} {s t - phi(t)}``.

    Raises
    ------
    DomainError
        For Cressie-Read when ``s`` lies below ``1/(1-theta)``; the error
        carries that boundary.
    """
    if spec.kind is Kind.KL:
        return math.expm1(s)
    th = spec.theta
    lo = 1.0 / (1.0 - th)
    if s < lo:
        raise DomainError(
            f"Cressie-Read conjugate requires s >= {lo:g} for theta={th:g}, got {s}",
            boundary=lo,
        )
    base = 1.0 - s * (1.0 - th)
    return base ** (th / (th - 1.0)) / th - 1.0 / th


def phi_second_at_one(spec: DivergenceSpec) -> float:
    # KL: phi'' = 1/t ; Cressie-Read: phi'' = t**(theta-2)
    return 1.0


def expansion_coefficients(spec: DivergenceSpec, order: int) -> ExpansionCoefficients:
    """Coefficients of the K-th order deviation expansion, K in {2, 4}.

    ``b_k = (-1)**(k+1) z^(k)(0) / (k+1)!`` where ``z' = 1/phi''(z)``,
    ``z(0) = 1``.  The derivatives of ``z`` are hardcoded per family.
    """
    if order % 2 or order < 2:
        raise UnsupportedError(f"expansion order must be even, got {order}")
    if order > 4:
        raise UnsupportedError(f"expansion order {order} > 4 is not supported")
    b1 = 1.0 / (2.0 * phi_second_at_one(spec))
    if order == 2:
        return ExpansionCoefficients(2, (b1,))
    if spec.kind is Kind.KL:
        return ExpansionCoefficients(4, (b1, -1.0 / 6.0, 1.0 / 24.0))
    th = spec.theta
    return ExpansionCoefficients(4, (b1, (th - 2.0) / 6.0, (th - 2.0) * (2.0 * th - 3.0) / 24.0))
