import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ambiq.cco import (
    ChanceSpec,
    check_feasibility,
    min_var_approx,
    solve_cco_closed_form,
    solve_cco_numeric,
    var_approx,
    verify_chance,
)
from ambiq.core import UNBOUNDED, FeasibleSet
from ambiq.dro import DroConfig, dro_threshold, scalars_abc, solve_dro_closed_form
from ambiq.errors import DomainError, InfeasibleError, UnsupportedError
from ambiq.moments import MomentModel, kappa

from conftest import diag2_model, random_model


def _random_feasible_spec(rng, m):
    """Draw (eps, delta) inside the closed-form feasibility band."""
    abc = scalars_abc(m)
    for _ in range(1000):
        eps = rng.uniform(0.005, 0.2)
        k2 = kappa(m, eps) ** 2
        if not k2 > abc.gap:
            continue
        d_min = (-abc.B + math.sqrt(abc.A * k2 - (abc.A * abc.C - abc.B**2))) / abc.A
        delta = max(d_min, 0.0) + rng.uniform(0.01, 0.5)
        spec = ChanceSpec(eps, delta)
        if check_feasibility(m, spec).feasible:
            return spec
    raise RuntimeError("no feasible spec drawn")


# -- spec and VaR approximation ---------------------------------------------


@pytest.mark.parametrize("eps,delta", [(0.0, 0.1), (1.0, 0.1), (1.5, 0.1), (0.05, 0.0), (0.05, -1.0),
                                       (0.05, math.inf)])
def test_chance_spec_validation(eps, delta):
    with pytest.raises(DomainError):
        ChanceSpec(eps, delta)


def test_var_approx_half_eps_is_negative_mean(rng):
    m = random_model(rng, 3)
    x = np.array([0.2, 0.3, 0.5])
    assert var_approx(m, 0.5, x) == pytest.approx(-float(m.mu @ x), abs=1e-15)


def test_var_approx_symmetric():
    n, c = 4, 0.01
    m = MomentModel("normal", np.full(n, c), np.eye(n))
    assert var_approx(m, 0.02, np.full(n, 1 / n)) == pytest.approx(2.0537489106 / math.sqrt(n) - c, abs=1e-9)


def test_var_approx_matches_exact_normal_quantile():
    mu, sd, eps = 0.03, 0.2, 0.01
    m = MomentModel("normal", [mu], [[sd * sd]])
    exact = -stats.norm.ppf(eps, loc=mu, scale=sd)  # loss quantile
    assert var_approx(m, eps, np.array([1.0])) == pytest.approx(exact, abs=1e-10)


def test_var_approx_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        var_approx(random_model(rng, 3), 0.05, np.ones(2))


# -- feasibility -------------------------------------------------------------


def test_feasibility_symmetric():
    n, c = 4, 0.01
    m = MomentModel("normal", np.full(n, c), np.eye(n))
    for eps, delta in [(0.05, 0.1), (0.05, 1.0), (0.01, 0.5), (0.2, 0.3)]:
        k = kappa(m, eps)
        rep = check_feasibility(m, ChanceSpec(eps, delta))
        assert rep.feasible == (0 < k < math.sqrt(n) * (delta + c))
        assert rep.lower_limit == pytest.approx(0.0, abs=1e-12)


def test_feasibility_lower_limit_violated_means_unbounded():
    m = diag2_model()
    spec = ChanceSpec(0.45, 0.1)
    rep = check_feasibility(m, spec)
    assert not rep.feasible and rep.kappa_sq < rep.lower_limit
    # the VaR-constrained mean is unbounded along the hyperplane
    x1 = np.linspace(-1000, 1000, 200_001)
    X = np.column_stack([x1, 1 - x1])
    ok = np.array([var_approx(m, spec.eps, x) <= spec.delta for x in X[::100]])
    means = X[::100] @ m.mu
    assert means[ok].max() > 40
    with pytest.raises(InfeasibleError) as ei:
        solve_cco_closed_form(m, spec)
    assert ei.value.report is rep or ei.value.report.feasible is False


def test_feasibility_upper_limit_violated_for_tiny_eps():
    m = diag2_model().with_family("t", nu=3.0)
    rep = check_feasibility(m, ChanceSpec(1e-12, 0.25))
    assert not rep.feasible and rep.kappa_sq > rep.upper_limit


def test_feasibility_never_raises(rng):
    m = random_model(rng, 3)
    for eps in (1e-9, 0.01, 0.3, 0.7, 0.99):
        for delta in (1e-6, 0.1, 10.0):
            rep = check_feasibility(m, ChanceSpec(eps, delta))
            expect = rep.lower_limit < rep.kappa_sq < rep.upper_limit and rep.slope_check > 0
            assert rep.feasible == expect


# -- closed form -------------------------------------------------------------


def test_closed_form_degenerate():
    n, c = 3, 0.02
    m = MomentModel("normal", np.full(n, c), np.eye(n))
    sol = solve_cco_closed_form(m, ChanceSpec(0.05, 1.0))
    assert sol.value == pytest.approx(c)
    assert sol.diagnostics["degenerate"]
    np.testing.assert_allclose(sol.x, np.full(n, 1 / n))


def test_closed_form_degenerate_infeasible():
    m = MomentModel("normal", np.full(3, 0.02), np.eye(3))
    with pytest.raises(InfeasibleError):
        solve_cco_closed_form(m, ChanceSpec(0.001, 0.01))


def test_closed_form_diag_example_against_grid():
    m = diag2_model()
    spec = ChanceSpec(0.05, 0.25)
    sol = solve_cco_closed_form(m, spec)
    x1 = np.arange(-10.0, 10.0 + 1e-12, 1e-5)
    k = kappa(m, 0.05)
    mean = 0.1 * x1 + 0.05 * (1 - x1)
    g = k * np.sqrt(0.04 * x1**2 + 0.01 * (1 - x1) ** 2) - mean
    assert sol.value == pytest.approx(mean[g <= 0.25].max(), abs=1e-4)
    assert abs(sol.diagnostics["constraint_residual"]) < 1e-8


def test_closed_form_dominates_dro_example():
    m = diag2_model()
    v_dro = solve_dro_closed_form(m, DroConfig(0.045)).value
    assert v_dro == pytest.approx(0.042111, abs=1e-6)
    for eps, delta in [(0.05, 0.25), (0.01, 0.3), (0.1, 0.05), (0.2, 0.01)]:
        spec = ChanceSpec(eps, delta)
        if check_feasibility(m, spec).feasible:
            assert solve_cco_closed_form(m, spec).value >= v_dro - 1e-9


def test_closed_form_constraint_binds(rng):
    for _ in range(200):
        m = random_model(rng, int(rng.integers(2, 9)))
        spec = _random_feasible_spec(rng, m)
        sol = solve_cco_closed_form(m, spec)
        assert abs(var_approx(m, spec.eps, sol.x) - spec.delta) < 1e-8
        assert abs(sol.x.sum() - 1) < 1e-10


def test_closed_form_kkt_against_random_feasible_points(rng):
    m = random_model(rng, 4)
    spec = _random_feasible_spec(rng, m)
    sol = solve_cco_closed_form(m, spec)
    for _ in range(2000):
        x = sol.x + rng.normal(scale=0.3, size=4)
        x = x - (x.sum() - 1) / 4
        if var_approx(m, spec.eps, x) <= spec.delta:
            assert float(m.mu @ x) <= sol.value + 1e-12


def test_closed_form_monotone_in_delta_and_eps(rng):
    m = random_model(rng, 5)
    spec = _random_feasible_spec(rng, m)
    deltas = spec.delta + np.linspace(0, 1, 15)
    v = [solve_cco_closed_form(m, ChanceSpec(spec.eps, d)).value for d in deltas]
    assert all(b >= a for a, b in zip(v, v[1:]))
    epss = np.linspace(spec.eps, 0.3, 15)
    v = []
    for e in epss:
        s = ChanceSpec(float(e), spec.delta)
        if check_feasibility(m, s).feasible:
            v.append(solve_cco_closed_form(m, s).value)
    assert len(v) >= 2 and all(b >= a - 1e-12 for a, b in zip(v, v[1:]))


def test_dominance_random_instances(rng):
    for _ in range(300):
        m = random_model(rng, int(rng.integers(2, 9)))
        rho = dro_threshold(m) * rng.uniform(1.01, 20.0)
        spec = _random_feasible_spec(rng, m)
        assert solve_cco_closed_form(m, spec).value >= solve_dro_closed_form(m, DroConfig(rho)).value - 1e-9


# -- convexity of the constraint --------------------------------------------


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 10.0))
def test_constraint_convexity(seed, k):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 4)
    x, y = rng.normal(size=4), rng.normal(size=4)

    def g(z):
        return k * math.sqrt(z @ m.sigma @ z) - m.mu @ z

    assert g((x + y) / 2) <= (g(x) + g(y)) / 2 + 1e-12


# -- numeric -----------------------------------------------------------------


def test_numeric_matches_closed_form(rng):
    for _ in range(20):
        m = random_model(rng, int(rng.integers(2, 9)))
        spec = _random_feasible_spec(rng, m)
        cf = solve_cco_closed_form(m, spec)
        sol = solve_cco_numeric(m, spec, UNBOUNDED)
        assert sol.value == pytest.approx(cf.value, abs=1e-6)
        assert var_approx(m, spec.eps, sol.x) <= spec.delta + 1e-8
        assert abs(sol.x.sum() - 1) < 1e-8


def test_numeric_inactive_bounds_give_same_value():
    m = diag2_model()
    spec = ChanceSpec(0.05, 0.25)
    cf = solve_cco_closed_form(m, spec)
    assert np.all(cf.x > -1)
    sol = solve_cco_numeric(m, spec, FeasibleSet(-1.0))
    assert sol.value == pytest.approx(cf.value, abs=1e-6)
    assert sol.diagnostics["active_bounds"] == []


def test_numeric_simplex_against_dirichlet_grid():
    m = MomentModel("normal", [0.12, 0.06, 0.03], np.diag([0.09, 0.02, 0.005]))
    spec = ChanceSpec(0.05, 0.15)
    sol = solve_cco_numeric(m, spec, FeasibleSet(0.0))
    best = -math.inf
    for i, j in itertools.product(range(101), repeat=2):
        if i + j <= 100:
            x = np.array([i, j, 100 - i - j]) / 100
            if var_approx(m, spec.eps, x) <= spec.delta:
                best = max(best, float(m.mu @ x))
    assert sol.value == pytest.approx(best, abs=1e-3)
    assert sol.value >= best - 1e-9
    assert np.all(sol.x >= -1e-9)
    assert var_approx(m, spec.eps, sol.x) <= spec.delta + 1e-8
    assert sol.value <= solve_cco_closed_form(m, spec).value + 1e-12


def test_numeric_certificate_on_bounded_sets(rng):
    for _ in range(10):
        n = int(rng.integers(3, 7))
        m = random_model(rng, n)
        lower = -0.3
        eps = 0.05
        dmin, _ = min_var_approx(m, eps, FeasibleSet(lower))
        spec = ChanceSpec(eps, max(dmin, 0) + 0.05)
        sol = solve_cco_numeric(m, spec, FeasibleSet(lower))
        assert np.all(sol.x >= lower - 1e-8)
        assert abs(sol.x.sum() - 1) < 1e-8
        assert var_approx(m, eps, sol.x) <= spec.delta + 1e-8
        assert sol.diagnostics["constraint_slack"] >= -1e-8


def test_numeric_empty_interior():
    m = diag2_model()
    with pytest.raises(InfeasibleError):
        solve_cco_numeric(m, ChanceSpec(0.01, 0.001), FeasibleSet(0.0))


def test_numeric_unbounded_objective():
    m = diag2_model()
    with pytest.raises(InfeasibleError):
        solve_cco_numeric(m, ChanceSpec(0.45, 0.1), UNBOUNDED)


def test_min_var_approx_is_minimal(rng):
    m = random_model(rng, 4)
    F = FeasibleSet(-0.5)
    v, x = min_var_approx(m, 0.05, F)
    assert np.all(x >= -0.5) and x.sum() == pytest.approx(1.0)
    for _ in range(500):
        y = F.random_point(4, rng)
        assert var_approx(m, 0.05, y) >= v - 1e-10


# -- Monte Carlo verification ------------------------------------------------


def test_verify_huge_delta_zero_probability(rng):
    m = random_model(rng, 3)
    p, se = verify_chance(m, np.full(3, 1 / 3), ChanceSpec(0.05, 1e6), 10_000, seed=1)
    assert p == 0.0 and se == 0.0


def test_verify_exact_normal_quantile():
    mu, sd, eps = 0.01, 0.1, 0.05
    m = MomentModel("normal", [mu], [[sd * sd]])
    delta = kappa(m, eps) * sd - mu
    p, se = verify_chance(m, np.array([1.0]), ChanceSpec(eps, delta), 1_000_000, seed=3)
    assert abs(p - eps) <= 3 * se


def test_verify_cco_solution(rng):
    m = random_model(rng, 4)
    spec = _random_feasible_spec(rng, m)
    sol = solve_cco_closed_form(m, spec)
    p, se = verify_chance(m, sol.x, spec, 400_000, seed=9)
    assert p <= spec.eps + 3 * se


def test_verify_deterministic_and_chunk_invariant_count(rng):
    m = random_model(rng, 3)
    spec = ChanceSpec(0.05, 0.1)
    x = np.full(3, 1 / 3)
    a = verify_chance(m, x, spec, 30_000, seed=5, chunk=7_000)
    b = verify_chance(m, x, spec, 30_000, seed=5, chunk=7_000)
    assert a == b


def test_verify_empirical_unsupported():
    m = MomentModel("empirical", [0.0], [[1.0]])
    with pytest.raises(UnsupportedError):
        verify_chance(m, np.array([1.0]), ChanceSpec(0.05, 0.1), 10, 0)
