import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rande_prmf.distributions import GaussianComponent, GaussianMixtureSpec
from rande_prmf.synthdata import DataSetSpec, generate_dataset, split_fit_predict

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_spec(**kw) -> DataSetSpec:
    """Coarse dataset that solves in well under a second."""
    base = dict(n_x=41, n_t=21, mesh_D=8, mesh_rho=8, sigma=0.01, t_split=1.0, seed=3)
    base.update(kw)
    return DataSetSpec(**base)


@pytest.fixture(scope="session")
def small_data():
    return generate_dataset(small_spec())


@pytest.fixture(scope="session")
def small_views(small_data):
    return split_fit_predict(small_data)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def single_component(mean_D, mean_rho, std_D=1e-4, std_rho=1e-2) -> GaussianMixtureSpec:
    return GaussianMixtureSpec((GaussianComponent(mean_D, std_D, mean_rho, std_rho, 1.0),))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
