"""Shared fixtures: coarse lookup tables built once per session.

The production grid (0.1 steps) takes minutes to build; a 0.5-step grid
is accurate enough for every functional test and builds in seconds.
"""

import numpy as np
import pytest

from fanfilter import bingham as bg


@pytest.fixture(scope="session")
def conv_lut():
    return bg.build_conv_lut(kappa_step=0.5, beta_step=0.5)


@pytest.fixture(scope="session")
def init_lut(conv_lut):
    return bg.build_init_lut(conv_lut)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
