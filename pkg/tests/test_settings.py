import logging

import pytest

from coagkit_logging import get_logging_level_from_name
from coagkit_settings import CoagkitSettings, settings


def test_options_are_cast_per_section():
    assert isinstance(settings.defaultNmax, int)
    assert isinstance(settings.lambdaBase, float)
    assert isinstance(settings.rkMethod, str)
    assert settings.validate_option("Solver", "maxAtoms", "12") == 12
    with pytest.raises(ValueError, match="Invalid configuration"):
        settings.validate_option("Solver", "rtol", "tight")


def test_log_levels():
    assert get_logging_level_from_name("debug") == logging.DEBUG
    assert get_logging_level_from_name("chatty") == ""
    assert settings.validate_option("Log", "coagkitLogLevel", "chatty") == logging.INFO


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("COAGKIT_SEED", "77")
    monkeypatch.setenv("COAGKIT_WORKERS", "3")
    fresh = CoagkitSettings()
    assert fresh.defaultSeed == 77
    assert fresh.worker_count() == 3


def test_zero_workers_means_physical_cores():
    fresh = CoagkitSettings()
    fresh.workerThreads = 0
    assert fresh.worker_count() >= 1
