import importlib.resources

import numpy as np
import pytest

from tsforge.series import aggregate_events, read_event_csv


def bundled_crashes_path():
    return importlib.resources.files("tsforge").joinpath("data/crashes_1908_2009.csv")


@pytest.fixture(scope="session")
def crash_events():
    return read_event_csv(bundled_crashes_path())


@pytest.fixture(scope="session")
def crash_series_12m(crash_events):
    return aggregate_events(crash_events, step_months=12)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
