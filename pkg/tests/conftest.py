"""
Shared fixtures: small stations, tiny networks and seeded generators
"""

import os

os.environ.setdefault("ENVIRONMENT", "testing")

import numpy as np  # noqa: E402
import pytest  # noqa: E402
from loguru import logger  # noqa: E402

from config import DetectionConfig, RunConfig, TrainingConfig  # noqa: E402
from station_sim import SessionDistributions, StationConfig  # noqa: E402
from thermal import ThermalParams  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def station():
    return StationConfig()


@pytest.fixture
def mean_params():
    return ThermalParams(r_eq=1e-3, r_hs=1.5e-3, c_hs=80_000.0, t_amb=20.0)


@pytest.fixture
def tiny_training():
    return TrainingConfig(
        n_members=3,
        window=8,
        hidden_sizes=(6, 4),
        epochs=3,
        batch_size=32,
    )


@pytest.fixture(scope="session")
def small_run_config():
    """Busy two-hour, two-block station with a tiny ensemble"""
    return RunConfig(
        station=StationConfig(n_blocks=2, horizon=7200.0),
        sessions=SessionDistributions(hourly_arrival_rates=[6.0] * 24),
        training=TrainingConfig(n_members=3, window=16, hidden_sizes=(8, 4), epochs=2, batch_size=64),
        detection=DetectionConfig(sma_window=50),
    )


@pytest.fixture
def log_messages():
    """Capture loguru output for assertions"""
    messages = []
    handler_id = logger.add(lambda message: messages.append(message.record), level="DEBUG")
    yield messages
    logger.remove(handler_id)
