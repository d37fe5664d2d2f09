"""Shared fixtures: one stable wave and its spectral data, built once."""

import pytest

from modwave import bloch
from modwave.models import rgl_model
from modwave.profiles import rgl_wave

KAPPA = 0.35


@pytest.fixture(scope="session")
def model():
    return rgl_model()


@pytest.fixture(scope="session")
def profile():
    return rgl_wave(KAPPA, n_points=32)


@pytest.fixture(scope="session")
def branch(profile, model):
    return bloch.critical_branch(profile, model)


@pytest.fixture(scope="session")
def pair0(profile, model):
    return bloch.eigenfunctions(profile, model, 0.0)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
