import numpy as np
import pytest

from gposmc.models import GSV, ThetaVector, simulate
from gposmc.rng import RngStream


@pytest.fixture(scope="session")
def gsv_series():
    """One synthetic Gaussian-volatility series reused across test modules."""
    theta = ThetaVector(GSV, (0.20, 0.96, 0.15))
    x, y = simulate(GSV, theta, 100, RngStream(424242).child(0).generator())
    return theta, x, y
