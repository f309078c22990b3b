import numpy as np
import pytest
from prefect.settings import PREFECT_ASYNC_FETCH_STATE_RESULT, temporary_settings
from prefect.testing.utilities import prefect_test_harness

from prefect_roe_lab.space import generate


@pytest.fixture(scope="session", autouse=True)
def prefect_db():
    """
    Sets up test harness for temporary DB during test runs.
    """
    with prefect_test_harness():
        yield


@pytest.fixture(autouse=True)
def reset_object_registry():
    """
    Ensures each test has a clean object registry.
    """
    from prefect.context import PrefectObjectRegistry

    with PrefectObjectRegistry():
        yield


@pytest.fixture(autouse=True)
def fetch_state_result():
    with temporary_settings(updates={PREFECT_ASYNC_FETCH_STATE_RESULT: True}):
        yield


@pytest.fixture
def path5():
    return generate("path", n=5)


@pytest.fixture
def cycle12():
    return generate("cycle", n=12)


@pytest.fixture
def z12():
    return generate("cayley", group="z12", generators=[1, 3])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
