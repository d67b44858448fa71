import pytest

from tessfuse.simkit import build_network, t1_scenario, t2_scenario


@pytest.fixture(scope="session")
def t1_net():
    return build_network(t1_scenario(horizon=12))


@pytest.fixture(scope="session")
def t2_net():
    return build_network(t2_scenario(horizon=12))
