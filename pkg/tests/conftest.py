import numpy as np
import pytest

from ambiq.moments import MomentModel


def random_model(rng, n, family="normal", nu=None, scale=0.04, mu_range=(0.02, 0.12)):
    """Random PD covariance with condition number kept moderate."""
    M = rng.normal(size=(n, n))
    S = (M @ M.T / n + 0.5 * np.eye(n)) * scale
    mu = rng.uniform(*mu_range, size=n)
    return MomentModel(family, mu, S, nu=nu)


def diag2_model(family="normal"):
    return MomentModel(family, [0.1, 0.05], np.diag([0.04, 0.01]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
