import numpy as np
import pytest


def rel_err(a, b):
    """Mismatch relative to the larger magnitude, floored at 1 so
    near-zero quantities are compared absolutely."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


@pytest.fixture
def analytic_problem():
    from mfdgm.problems import make_analytic_gaussian
    return make_analytic_gaussian(1, nu=1.0, beta=1.0, gamma=0.0)


@pytest.fixture
def traffic_problem():
    from mfdgm.problems import make_traffic_lwr
    return make_traffic_lwr(nu=0.0)
