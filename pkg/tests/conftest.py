import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stgarch.core import CovarianceModel, GarchOrder, ParameterPoint, ParameterSurface
from stgarch.simulate import FieldSampler, simulate_stgarch

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def garch11():
    return ParameterPoint(0.1, [0.2], [0.5])


def constant_panel(point, m=25, T=1000, seed=0, model=None, burn_in=300, locations=None):
    """Panel from a constant-parameter surface on random (or given) sites."""
    rng = np.random.default_rng(seed)
    loc = rng.uniform(size=(m, 2)) if locations is None else np.asarray(locations, dtype=float)
    model = CovarianceModel("exponential", 1.0, 0.5, 0.0) if model is None else model
    eta = FieldSampler(loc, model, seed=seed + 1).sample(T + burn_in)
    return simulate_stgarch(ParameterSurface.constant(point), eta, loc, burn_in)


@pytest.fixture
def order11():
    return GarchOrder(1, 1)


@pytest.fixture(scope="session")
def trend_report():
    """MC=20 at n1=100 over T = 100, 200, 300 (local fits only; covariance not needed)."""
    from stgarch.experiments import MCConfig, run_monte_carlo

    cfg = MCConfig(replications=20, n1=(100,), n2=50, T=(100, 200, 300), seed=0, fit_covariance=False)
    return run_monte_carlo(cfg)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
