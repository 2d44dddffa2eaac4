import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cascade_asr.fixtures import random_encoder, random_model

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("default")

SESSION_START = time.perf_counter()


def pytest_collection_modifyitems(config, items):
    # run the acceptance gate last so criterion 10 can time the whole suite
    items.sort(key=lambda item: item.path.name == "test_acceptance.py")


@pytest.fixture
def report(capsys):
    """Print a line straight to the terminal, bypassing capture."""

    def emit(line: str) -> None:
        with capsys.disabled():
            print("\n" + line)

    return emit


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model(rng):
    return random_model(rng, vocab_size=4, dim=4, d_enc=3, heads=2, context=3)


@pytest.fixture
def small_encoder(rng, small_model):
    return random_encoder(rng, frames=5, d_enc=small_model.d_enc)
