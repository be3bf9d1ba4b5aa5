import math
import warnings

import numpy as np
import pytest
from scipy import stats

from ambiq.errors import DomainError, NotPositiveDefiniteError, UnsupportedError
from ambiq.moments import (
    ExponentialIID,
    Family,
    MomentModel,
    ReturnMatrix,
    _covariance,
    estimate_moments,
    fit_student_t,
    kappa,
    portfolio_moments,
    read_returns_csv,
    sample,
    student_t_tail_constant,
    write_returns_csv,
)

from conftest import random_model


# -- model validation --------------------------------------------------------


def test_model_rejects_asymmetric_sigma():
    with pytest.raises(ValueError):
        MomentModel("normal", [0, 0], [[1.0, 0.1], [0.2, 1.0]])


def test_model_rejects_non_pd_sigma():
    with pytest.raises(NotPositiveDefiniteError):
        MomentModel("normal", [0, 0], [[1.0, 2.0], [2.0, 1.0]])


@pytest.mark.parametrize("nu", [None, 2.0, 1.5])
def test_student_t_needs_nu_above_two(nu):
    with pytest.raises(DomainError):
        MomentModel("t", [0, 0], np.eye(2), nu=nu)


def test_family_parse_aliases():
    assert Family.parse("Student-T") is Family.STUDENT_T
    assert Family.parse(Family.NORMAL) is Family.NORMAL
    with pytest.raises(ValueError):
        Family.parse("lognormal")


def test_model_dict_roundtrip():
    m = MomentModel("t", [0.1, 0.2], [[0.04, 0.01], [0.01, 0.09]], nu=4.5)
    m2 = MomentModel.from_dict(m.to_dict())
    assert m2.family is Family.STUDENT_T and m2.nu == 4.5
    np.testing.assert_array_equal(m2.sigma, m.sigma)


# -- estimation --------------------------------------------------------------


def test_covariance_two_observation_example():
    # T < n + 2 here, so the helper behind estimate_moments is exercised
    mu, sig, diag = _covariance(np.array([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(mu, [0.5, 0.5])
    ridge = diag["ridge"]
    np.testing.assert_allclose(sig, np.array([[0.5, -0.5], [-0.5, 0.5]]) + ridge * np.eye(2), atol=1e-15)
    assert ridge == pytest.approx(1e-10 * 0.5)


def test_estimate_moments_requires_n_plus_two_rows():
    with pytest.raises(DomainError):
        estimate_moments(ReturnMatrix([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]))


def test_identical_rows_are_rejected():
    with pytest.raises(NotPositiveDefiniteError):
        estimate_moments(ReturnMatrix(np.ones((10, 3))))


def test_constant_column_warns_and_ridges():
    rng = np.random.default_rng(1)
    R = rng.normal(size=(20, 3))
    R[:, 1] = 0.01
    with pytest.warns(RuntimeWarning):
        m = estimate_moments(ReturnMatrix(R))
    assert "rank_warning" in m.diagnostics and "ridge" in m.diagnostics
    np.linalg.cholesky(m.sigma)


def test_estimate_moments_clt_band():
    T = 100_000
    R = np.random.default_rng(3).standard_normal((T, 3))
    m = estimate_moments(ReturnMatrix(R))
    assert m.family is Family.EMPIRICAL
    assert np.all(np.abs(m.mu) < 3.0 / math.sqrt(T))
    np.testing.assert_allclose(m.sigma, np.cov(R, rowvar=False, ddof=1), rtol=1e-12)


def test_sample_estimate_roundtrip(rng):
    m = random_model(rng, 4)
    T = 100_000
    est = estimate_moments(sample(m, T, seed=4))
    se_mu = np.sqrt(np.diag(m.sigma) / T)
    assert np.all(np.abs(est.mu - m.mu) < 4 * se_mu)
    sd = np.sqrt(np.diag(m.sigma))
    # entrywise CLT band for the covariance of a normal sample
    se_sig = np.sqrt((m.sigma**2 + np.outer(sd**2, sd**2)) / T)
    assert np.all(np.abs(est.sigma - m.sigma) < 5 * se_sig)


# -- Student-t fit -----------------------------------------------------------


def test_fit_student_t_recovers_nu():
    m = MomentModel("t", [0.0, 0.0], [[1.0, 0.3], [0.3, 1.0]], nu=3.0)
    fit = fit_student_t(sample(m, 50_000, seed=21))
    assert 2.5 <= fit.nu <= 3.6
    assert fit.family is Family.STUDENT_T
    # sigma stores the covariance, not the scale
    np.testing.assert_allclose(fit.sigma, np.cov(fit.data, rowvar=False), rtol=1e-10)


def test_fit_student_t_normal_data_picks_grid_max():
    R = ReturnMatrix(np.random.default_rng(5).standard_normal((20_000, 2)))
    grid = [2.5, 5.0, 10.0, 30.0, 200.0]
    assert fit_student_t(R, grid).nu == 200.0


def test_fit_student_t_single_candidate():
    R = ReturnMatrix(np.random.default_rng(6).standard_normal((50, 2)))
    assert fit_student_t(R, [3.0]).nu == 3.0


@pytest.mark.parametrize("grid", [[], [2.0, 3.0]])
def test_fit_student_t_bad_grid(grid):
    R = ReturnMatrix(np.random.default_rng(6).standard_normal((50, 2)))
    with pytest.raises(DomainError):
        fit_student_t(R, grid)


def test_t_loglik_matches_manual_density():
    # independent check of the scale tie on a 1-d sample
    R = ReturnMatrix(np.random.default_rng(8).standard_t(4, size=(500, 1)) * 0.1)
    fit = fit_student_t(R, [4.0])
    x = R.values[:, 0]
    s2 = np.var(x, ddof=1) * (4.0 - 2.0) / 4.0
    manual = np.sum(stats.t.logpdf(x, df=4.0, loc=x.mean(), scale=math.sqrt(s2)))
    assert fit.diagnostics["loglik"] == pytest.approx(manual, rel=1e-10)


# -- kappa -------------------------------------------------------------------


def _inverse_normal_by_bisection(p):
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2.0)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_kappa_normal_examples():
    m = MomentModel("normal", [0.0], [[1.0]])
    assert kappa(m, 0.5) == pytest.approx(0.0, abs=1e-15)
    assert kappa(m, 0.02) == pytest.approx(-_inverse_normal_by_bisection(0.02), abs=1e-10)
    assert kappa(m, 0.02) == pytest.approx(2.0537489106, abs=1e-9)


@pytest.mark.parametrize("eps", [1e-8, 1e-4, 0.01, 0.1, 0.3, 0.49])
def test_kappa_normal_inverse_cdf_accuracy(eps):
    m = MomentModel("normal", [0.0], [[1.0]])
    assert kappa(m, eps) == pytest.approx(-_inverse_normal_by_bisection(eps), abs=1e-10)


def test_kappa_empirical():
    m = MomentModel("empirical", [0.0], [[1.0]])
    assert kappa(m, 0.05) == pytest.approx(math.sqrt(19.0), rel=1e-15)


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 1.5])
def test_kappa_domain(eps):
    with pytest.raises(DomainError):
        kappa(MomentModel("normal", [0.0], [[1.0]]), eps)


def test_kappa_normal_strictly_decreasing():
    m = MomentModel("normal", [0.0], [[1.0]])
    k = [kappa(m, e) for e in np.linspace(0.001, 0.5, 100)]
    assert all(a > b for a, b in zip(k, k[1:]))


@pytest.mark.parametrize("nu,n", [(3.0, 1), (3.0, 5), (4.5, 2), (10.0, 15)])
def test_kappa_t_times_eps_power_is_constant(nu, n):
    m = MomentModel("t", np.zeros(n), np.eye(n), nu=nu)
    D = student_t_tail_constant(nu, n)
    for eps in np.geomspace(1e-6, 0.1, 25):
        assert kappa(m, eps) * eps ** (1.0 / nu) == pytest.approx(D, rel=1e-12)


def test_tail_constant_independent_of_dimension():
    for nu in (2.5, 3.0, 7.0):
        base = student_t_tail_constant(nu, 1)
        for n in (2, 5, 40):
            assert student_t_tail_constant(nu, n) == pytest.approx(base, rel=1e-12)


def test_tail_constant_matches_direct_gamma_formula():
    nu = 3.0
    direct = (math.gamma((nu + 1) / 2) * nu ** (nu / 2 - 1) / (math.sqrt(math.pi) * math.gamma(nu / 2))) ** (1 / nu)
    assert student_t_tail_constant(nu) == pytest.approx(direct, rel=1e-13)


def test_tail_constant_reproduces_univariate_t_tail():
    # P(T > D eps^(-1/nu)) -> eps for a standard t as eps -> 0
    nu = 3.0
    D = student_t_tail_constant(nu)
    for eps in (1e-6, 1e-8):
        assert stats.t.sf(D * eps ** (-1 / nu), nu) == pytest.approx(eps, rel=1e-3)


def test_kappa_t_warns_for_large_eps():
    m = MomentModel("t", [0.0], [[1.0]], nu=3.0)
    with pytest.warns(RuntimeWarning):
        kappa(m, 0.2)


def test_t_var_tracks_monte_carlo_quantile():
    # one-sided loss quantile at eps = 0.001 versus kappa * scale (n = 1)
    nu, eps = 3.0, 1e-3
    m = MomentModel("t", [0.0], [[1.0]], nu=nu)
    losses = -sample(m, 10_000_000, seed=99).values[:, 0]
    q = np.quantile(losses, 1.0 - eps)
    approx = kappa(m, eps) * math.sqrt(m.scale[0, 0])
    assert abs(approx - q) / q < 0.15


# -- sampling ----------------------------------------------------------------


def test_sample_normal_covariance_band():
    m = MomentModel("normal", [0.0, 0.0], np.eye(2))
    R = sample(m, 100_000, seed=7)
    np.testing.assert_allclose(np.cov(R.values, rowvar=False), np.eye(2), atol=0.02)


def test_sample_t_heavy_tails():
    m = MomentModel("t", [0.0, 0.0], np.eye(2), nu=5.0)
    R = sample(m, 100_000, seed=7).values
    kurt = stats.kurtosis(R, axis=0, fisher=False)
    assert np.all(kurt > 4.0)
    np.testing.assert_allclose(np.cov(R, rowvar=False), np.eye(2), atol=0.05)


def test_sample_deterministic():
    m = MomentModel("t", [0.1, 0.0], np.eye(2), nu=4.0)
    np.testing.assert_array_equal(sample(m, 100, 3).values, sample(m, 100, 3).values)
    assert not np.array_equal(sample(m, 100, 3).values, sample(m, 100, 4).values)


def test_sample_empirical_unsupported():
    with pytest.raises(UnsupportedError):
        sample(MomentModel("empirical", [0.0], [[1.0]]), 10, 0)


def test_sample_count_domain():
    with pytest.raises(DomainError):
        sample(MomentModel("normal", [0.0], [[1.0]]), 0, 0)


# -- portfolio moments -------------------------------------------------------


def test_portfolio_moments_symmetric():
    n, c = 5, 0.03
    m = MomentModel("normal", np.full(n, c), np.eye(n))
    mean, var = portfolio_moments(m, np.full(n, 1.0 / n))
    assert mean == pytest.approx(c) and var == pytest.approx(1.0 / n)


def test_portfolio_moments_unit_vector(rng):
    m = random_model(rng, 4)
    mean, var = portfolio_moments(m, np.eye(4)[2])
    assert mean == m.mu[2] and var == pytest.approx(m.sigma[2, 2], rel=1e-15)


def test_portfolio_moments_double_loop(rng):
    m = random_model(rng, 6)
    x = rng.normal(size=6)
    loop = sum(x[i] * m.sigma[i, j] * x[j] for i in range(6) for j in range(6))
    mean, var = portfolio_moments(m, x)
    assert var == pytest.approx(loop, rel=1e-12)
    assert mean == pytest.approx(sum(a * b for a, b in zip(x, m.mu)), rel=1e-12)


def test_portfolio_moments_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        portfolio_moments(random_model(rng, 3), np.ones(4))


# -- payoff moments and the exponential center --------------------------------


def test_exponential_payoff_moments_match_samples():
    c = ExponentialIID(6, 5.0)
    x = np.array([0.3, 0.1, 0.2, 0.15, 0.15, 0.1])
    pm = c.payoff_moments(x)
    f = c.sample(2_000_000, seed=1) @ x
    z = f - f.mean()
    assert pm.mean == pytest.approx(f.mean(), rel=2e-3)
    assert pm.m2 == pytest.approx(np.mean(z**2), rel=1e-2)
    assert pm.m3 == pytest.approx(np.mean(z**3), rel=5e-2)
    assert pm.m4 == pytest.approx(np.mean(z**4), rel=5e-2)


def test_exponential_log_mgf():
    c = ExponentialIID(2, 5.0)
    x = np.array([0.5, 0.5])
    # E exp(s x'r) = prod (1 - s x_i / rate)^-1
    s = -3.0
    assert c.log_mgf(x, s) == pytest.approx(-2 * math.log(1 - s * 0.5 / 5.0), rel=1e-14)
    assert c.log_mgf(x, 10.0) == math.inf


def test_exponential_center_summary_statistics():
    c = ExponentialIID(6, 5.0)
    np.testing.assert_allclose(c.mu, 0.2)
    np.testing.assert_allclose(np.sqrt(np.diag(c.sigma)), 0.2)
    pm = c.payoff_moments(np.eye(6)[0])
    assert pm.m3 / pm.m2**1.5 == pytest.approx(2.0)
    assert pm.m4 / pm.m2**2 - 3.0 == pytest.approx(6.0)


def test_payoff_moments_t_low_nu_without_data_unsupported():
    m = MomentModel("t", [0.0, 0.0], np.eye(2), nu=3.0)
    with pytest.raises(UnsupportedError):
        m.payoff_moments(np.array([0.5, 0.5]))


def test_payoff_moments_normal_closed_form():
    m = MomentModel("normal", [0.1, 0.2], np.eye(2))
    pm = m.payoff_moments(np.array([0.5, 0.5]))
    assert (pm.mean, pm.m2, pm.m3, pm.m4) == pytest.approx((0.15, 0.5, 0.0, 0.75))


# -- CSV ---------------------------------------------------------------------


def test_csv_roundtrip(tmp_path):
    R = ReturnMatrix(np.array([[0.01, -0.02], [0.0, 0.5]]), ["A", "B"], ["2024-01-01", "2024-01-02"])
    p = tmp_path / "r.csv"
    write_returns_csv(p, R)
    back = read_returns_csv(p)
    assert back.assets == ["A", "B"] and back.dates == ["2024-01-01", "2024-01-02"]
    np.testing.assert_array_equal(back.values, R.values)


@pytest.mark.parametrize(
    "text",
    [
        "",
        "day,A\n2024-01-01,0.1\n",
        "date,A,B\n2024-01-01,0.1\n",
        "date,A\n2024-01-01,abc\n",
        "date,A\n2024-01-01,nan\n",
        "date,A\n2024-01-01,\n",
        "date,A\n",
    ],
)
def test_csv_strict_parse(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ValueError):
        read_returns_csv(p)


def test_return_matrix_rejects_nonfinite():
    with pytest.raises(ValueError):
        ReturnMatrix([[0.1, math.inf]])
