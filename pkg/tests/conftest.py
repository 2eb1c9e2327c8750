"""
Pytest configuration and fixtures for the Hopfield toolkit tests
"""
import numpy as np
import pytest

from classical import PatternSet
from meanfield import ModelParams


@pytest.fixture
def rng():
    """Seeded generator so every test run draws the same numbers"""
    return np.random.default_rng(20240611)


@pytest.fixture
def small_patterns(rng):
    """Three random patterns over twelve spins"""
    return PatternSet.random(3, 12, rng)


@pytest.fixture
def single_pattern():
    """One all-up pattern over four spins"""
    return PatternSet(np.ones((1, 4), dtype=int))


@pytest.fixture
def fm_params_x4():
    """x=4, Omega=0 deep in the five-root regime"""
    return ModelParams(x=4, p=1, beta=3.0, omega=0.0)


@pytest.fixture
def lc_params_x2():
    """x=2 at T=0.5, Omega=0.6: origin is an unstable spiral"""
    return ModelParams(x=2, p=1, temperature=0.5, omega=0.6)


@pytest.fixture
def out_dir(tmp_path):
    """Fresh output directory for files written by a test"""
    path = tmp_path / "out"
    path.mkdir()
    return path
