"""
Shared pytest configuration
"""

import pytest
from src.core.caching import gram_cache
from src.core.structured_logging import configure_logging


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo or multi-seed tests taking more than a few seconds")


@pytest.fixture(autouse=True)
def _fresh_state():
    # the CLI rebinds the log handler to the stderr of the test that ran it
    configure_logging("WARNING")
    gram_cache.clear()
    yield
    gram_cache.clear()
