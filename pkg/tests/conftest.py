import numpy as np
import pytest

from soar.problems import build_integral_problem


@pytest.fixture(scope="session")
def example1_small():
    return build_integral_problem(50, "example1")


@pytest.fixture(scope="session")
def example2_small():
    return build_integral_problem(50, "example2")


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)
