import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cfstrat.models import counterfactual_strategy, impatient_strategy, loan_mdp

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=40
)
settings.load_profile("default")

REJECTED = 8


@pytest.fixture(scope="session")
def loan():
    return loan_mdp()


@pytest.fixture(scope="session")
def sigma(loan):
    return impatient_strategy(loan)


@pytest.fixture(scope="session")
def sigma_star(loan):
    return counterfactual_strategy(loan)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
