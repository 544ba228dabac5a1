import pytest

from simba import tensor as T


@pytest.fixture(autouse=True)
def _float64_default():
    """Oracle precision by default; tests that train switch it themselves."""
    T.set_default_dtype("float64")
    yield
    T.set_default_dtype("float64")
