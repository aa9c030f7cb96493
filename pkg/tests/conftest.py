import numpy as np
import pytest

from fdialab import kinematics as kin
from fdialab.estimator import steady_state_gains
from fdialab.plant import PlantModel


@pytest.fixture(scope="session")
def model():
    return PlantModel.double_integrator()


@pytest.fixture(scope="session")
def gains(model):
    return steady_state_gains(model)


@pytest.fixture(scope="session")
def chain():
    return kin.default_chain()


@pytest.fixture(scope="session")
def q_home():
    return np.deg2rad([0.0, 15.0, 180.0, 230.0, 0.0, 55.0, 90.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split()[0]), s)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
