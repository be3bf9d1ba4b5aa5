"""Nominal return distributions: estimation, VaR multipliers, sampling.

``MomentModel.sigma`` always holds the return covariance.  For the
Student-t family the scale matrix ``(nu - 2)/nu * sigma`` is derived on
demand wherever the density or the generator needs it.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import DomainError, NotPositiveDefiniteError, UnsupportedError

log = logging.getLogger(__name__)

__all__ = [
    "Family",
    "ReturnMatrix",
    "MomentModel",
    "PayoffMoments",
    "ExponentialIID",
    "DEFAULT_NU_GRID",
    "read_returns_csv",
    "write_returns_csv",
    "estimate_moments",
    "fit_student_t",
    "kappa",
    "student_t_tail_constant",
    "sample",
    "portfolio_moments",
]

DEFAULT_NU_GRID = tuple(float(v) for v in np.geomspace(2.1, 50.0, 60))


class Family(str, enum.Enum):
    NORMAL = "normal"
    STUDENT_T = "t"
    EMPIRICAL = "empirical"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        name = str(name).strip().lower()
        aliases = {"student-t": "t", "studentt": "t", "student_t": "t"}
        return cls(aliases.get(name, name))


@dataclass
class ReturnMatrix:
    """T x n simple returns with asset names and row labels."""

    values: np.ndarray
    assets: list = None
    dates: list = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        T, n = self.values.shape
        if self.assets is None:
            self.assets = [f"a{i}" for i in range(n)]
        if self.dates is None:
            self.dates = list(range(T))
        if len(self.assets) != n or len(self.dates) != T:
            raise ValueError("asset/date labels do not match the value matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("return matrix contains missing or non-finite values")

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return self.values.shape[0]

    def rows(self, start, stop):
        return ReturnMatrix(self.values[start:stop], list(self.assets), self.dates[start:stop])


def read_returns_csv(path) -> ReturnMatrix:
    """Strictly parse ``date,<asset1>,...`` CSV; any bad cell is an error."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 2 or header[0].strip().lower() != "date":
            raise ValueError(f"{path}: header must start with 'date' and name at least one asset")
        assets = [h.strip() for h in header[1:]]
        dates, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            dates.append(row[0].strip())
            vals = []
            for col, cell in zip(assets, row[1:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric value {cell!r} for {col}") from None
                if not math.isfinite(v):
                    raise ValueError(f"{path}:{lineno}: non-finite value {cell!r} for {col}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return ReturnMatrix(np.array(rows), assets, dates)


def write_returns_csv(path, returns: ReturnMatrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *returns.assets])
        for d, row in zip(returns.dates, returns.values):
            w.writerow([d, *(repr(float(v)) for v in row)])


@dataclass(frozen=True)
class PayoffMoments:
    """Mean and central moments of a scalar payoff ``x'r``."""

    mean: float
    m2: float
    m3: float = 0.0
    m4: float = math.nan

    def central(self, order):
        return {2: self.m2, 3: self.m3, 4: self.m4}[order]


@dataclass
class MomentModel:
    family: Family
    mu: np.ndarray
    sigma: np.ndarray
    nu: float | None = None
    data: np.ndarray | None = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.family = Family.parse(self.family)
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        n = self.mu.size
        if self.sigma.shape != (n, n):
            raise ValueError(f"sigma must be {n}x{n}, got {self.sigma.shape}")
        if np.max(np.abs(self.sigma - self.sigma.T), initial=0.0) > 1e-12 * max(1.0, np.abs(self.sigma).max()):
            raise ValueError("sigma is not symmetric")
        self.sigma = 0.5 * (self.sigma + self.sigma.T)
        try:
            np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError("sigma is not positive definite") from None
        if self.family is Family.STUDENT_T:
            if self.nu is None or not self.nu > 2:
                raise DomainError(f"Student-t needs nu > 2, got {self.nu}", boundary=2.0)
            self.nu = float(self.nu)

    @property
    def n(self):
        return self.mu.size

    @property
    def scale(self):
        """Dispersion matrix of the generating distribution."""
        if self.family is Family.STUDENT_T:
            return (self.nu - 2.0) / self.nu * self.sigma
        return self.sigma

    def with_family(self, family, nu=None):
        """Same (mu, sigma) under another family tag."""
        return MomentModel(family, self.mu.copy(), self.sigma.copy(), nu=nu, data=self.data)

    def payoff_moments(self, x) -> PayoffMoments:
        """Mean and central moments (orders 2..4) of ``x'r``.

        Normal and Student-t (nu > 4) use closed forms; otherwise the
        retained sample is used.
        """
        mean, var = portfolio_moments(self, x)
        if self.family is Family.NORMAL:
            return PayoffMoments(mean, var, 0.0, 3.0 * var * var)
        if self.family is Family.STUDENT_T and self.nu > 4:
            return PayoffMoments(mean, var, 0.0, 3.0 * var * var * (self.nu - 2.0) / (self.nu - 4.0))
        if self.data is None:
            raise UnsupportedError(
                f"fourth moment unavailable for family {self.family.value}"
                + (f" with nu={self.nu:g}" if self.nu else "")
                + " and no retained sample"
            )
        z = self.data @ np.asarray(x, dtype=float) - mean
        return PayoffMoments(mean, var, float(np.mean(z**3)), float(np.mean(z**4)))

    def to_dict(self):
        return {
            "family": self.family.value,
            "nu": self.nu,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], d["mu"], d["sigma"], nu=d.get("nu"), diagnostics=d.get("diagnostics", {}))


@dataclass
class ExponentialIID:
    """i.i.d. exponential asset returns with common rate.

    Mean ``1/rate``, standard deviation ``1/rate``, skewness 2, kurtosis 9
    (excess 6).  Exposes analytic portfolio cumulants and the log-MGF used
    by the exact KL evaluation.
    """

    n: int
    rate: float = 5.0

    @property
    def mu(self):
        return np.full(self.n, 1.0 / self.rate)

    @property
    def sigma(self):
        return np.eye(self.n) / self.rate**2

    def as_model(self):
        return MomentModel(Family.EMPIRICAL, self.mu, self.sigma)

    def payoff_moments(self, x):
        x = np.asarray(x, dtype=float)
        lam = self.rate
        # cumulants of Exp(lam): (k-1)!/lam**k
        k2 = np.sum(x**2) / lam**2
        k3 = 2.0 * np.sum(x**3) / lam**3
        k4 = 6.0 * np.sum(x**4) / lam**4
        return PayoffMoments(float(np.sum(x) / lam), float(k2), float(k3), float(k4 + 3.0 * k2 * k2))

    def log_mgf(self, x, s):
        """``log E[exp(s * x'r)]``; ``+inf`` where the MGF diverges."""
        t = s * np.asarray(x, dtype=float)
        if np.any(t >= self.rate):
            return math.inf
        return float(np.sum(np.log(self.rate) - np.log(self.rate - t)))

    def sample(self, count, seed):
        rng = np.random.default_rng(seed)
        return rng.exponential(1.0 / self.rate, size=(count, self.n))


def _check_fit_size(returns):
    T, n = returns.shape
    if T < n + 2:
        raise DomainError(f"need at least n+2={n + 2} observations, got {T}", boundary=n + 2)


def _covariance(values):
    mu = values.mean(axis=0)
    sig = np.atleast_2d(np.cov(values, rowvar=False, ddof=1))
    sig = 0.5 * (sig + sig.T)
    diag = {}
    if np.any(np.ptp(values, axis=0) == 0):
        diag["rank_warning"] = "constant column(s): covariance is rank deficient"
    eig_min = float(np.linalg.eigvalsh(sig)[0])
    if eig_min <= 0 or not _is_pd(sig):
        n = sig.shape[0]
        ridge = 1e-10 * np.trace(sig) / n
        if ridge <= 0:
            raise NotPositiveDefiniteError("sample covariance is identically zero; cannot regularize")
        sig = sig + ridge * np.eye(n)
        diag["ridge"] = ridge
        diag.setdefault("rank_warning", "covariance not positive definite; ridge added")
        if not _is_pd(sig):
            raise NotPositiveDefiniteError("covariance is not positive definite even after ridge")
    return mu, sig, diag


def _is_pd(m):
    try:
        np.linalg.cholesky(m)
        return True
    except np.linalg.LinAlgError:
        return False


def estimate_moments(returns: ReturnMatrix) -> MomentModel:
    """Sample mean and unbiased sample covariance (family ``empirical``)."""
    _check_fit_size(returns)
    mu, sig, diag = _covariance(returns.values)
    if "rank_warning" in diag:
        warnings.warn(diag["rank_warning"], RuntimeWarning, stacklevel=2)
    diag["T"] = len(returns)
    return MomentModel(Family.EMPIRICAL, mu, sig, data=returns.values, diagnostics=diag)


def estimate_normal(returns: ReturnMatrix) -> MomentModel:
    model = estimate_moments(returns)
    return MomentModel(Family.NORMAL, model.mu, model.sigma, data=model.data, diagnostics=model.diagnostics)


def _t_loglik(values, mu, scale, nu):
    return float(np.sum(stats.multivariate_t.logpdf(values, loc=mu, shape=scale, df=nu)))


def fit_student_t(returns: ReturnMatrix, nu_grid=DEFAULT_NU_GRID) -> MomentModel:
    """Profile-likelihood fit of the degrees of freedom over ``nu_grid``.

    Location and dispersion are moment-matched: the scale matrix is tied to
    the sample covariance by ``scale = (nu - 2)/nu * cov``, so only ``nu``
    is searched.
    """
    grid = [float(v) for v in nu_grid]
    if not grid:
        raise DomainError("nu_grid is empty")
    if min(grid) <= 2:
        raise DomainError("every nu in the grid must exceed 2", boundary=2.0)
    _check_fit_size(returns)
    mu, sig, diag = _covariance(returns.values)
    ll = [_t_loglik(returns.values, mu, (nu - 2.0) / nu * sig, nu) for nu in grid]
    best = int(np.argmax(ll))
    diag.update(T=len(returns), loglik=ll[best], nu_grid_size=len(grid))
    return MomentModel(Family.STUDENT_T, mu, sig, nu=grid[best], data=returns.values, diagnostics=diag)


def student_t_tail_constant(nu, n=1):
    """``D`` in the asymptotic Student-t multiplier ``D * eps**(-1/nu)``.

    Evaluated in log-gamma arithmetic from the n-dimensional density
    constant; the dimension cancels analytically.
    """
    log_cn = (
        special.gammaln((nu + n) / 2.0)
        - special.gammaln(nu / 2.0)
        + (nu / 2.0) * math.log(nu)
        - (n / 2.0) * math.log(math.pi)
    )
    log_inner = (
        log_cn
        + ((n - 1) / 2.0) * math.log(math.pi)
        + special.gammaln((nu + 1) / 2.0)
        - math.log(nu)
        - special.gammaln((nu + n) / 2.0)
    )
    return math.exp(log_inner / nu)


def kappa(model: MomentModel, eps: float) -> float:
    """VaR multiplier for the approximation ``kappa * std - mean``.

    normal: ``-Phi^{-1}(eps)``; Student-t: the small-``eps`` asymptote
    ``D * eps**(-1/nu)``; empirical: the distribution-free bound
    ``sqrt((1 - eps)/eps)``.
    """
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    fam = model.family
    if fam is Family.NORMAL:
        return float(-special.ndtri(eps))
    if fam is Family.STUDENT_T:
        if eps > 0.1:
            warnings.warn(
                f"Student-t kappa is asymptotic in eps -> 0; eps={eps} is large",
                RuntimeWarning,
                stacklevel=2,
            )
        return student_t_tail_constant(model.nu, model.n) * eps ** (-1.0 / model.nu)
    return math.sqrt((1.0 - eps) / eps)


def sample(model: MomentModel, count: int, seed: int) -> ReturnMatrix:
    """Draw ``count`` return vectors; deterministic given ``seed``."""
    if count < 1:
        raise DomainError("count must be >= 1")
    if model.family is Family.EMPIRICAL:
        raise UnsupportedError("empirical family has no generative model")
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(model.scale)
    z = rng.standard_normal((count, model.n)) @ L.T
    if model.family is Family.STUDENT_T:
        w = np.sqrt(rng.chisquare(model.nu, size=count) / model.nu)
        z = z / w[:, None]
    return ReturnMatrix(model.mu + z)


def portfolio_moments(model, x) -> tuple[float, float]:
    """``(x'mu, x'Sigma x)``."""
    x = np.asarray(x, dtype=float).ravel()
    mu = np.asarray(model.mu)
    if x.size != mu.size:
        raise ValueError(f"weight vector has length {x.size}, model has n={mu.size}")
    var = float(x @ np.asarray(model.sigma) @ x)
    return float(x @ mu), max(var, 0.0)
