"""Shared fixtures for the spherical_ot test suite."""

from typing import Tuple

import numpy as np
import pytest

from spherical_ot.base import CostKernel
from spherical_ot.kernels import kernel_from_name
from spherical_ot.log_kernel import LogKernel
from spherical_ot.sphere import DiscreteMeasure


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240229)


@pytest.fixture
def log_kernel() -> LogKernel:
    return LogKernel()


@pytest.fixture(params=["log", "power:1", "power:2"])
def kernel(request) -> CostKernel:
    return kernel_from_name(request.param)


@pytest.fixture
def circle_pair() -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """Sources at 0 and 90 degrees, targets at 180 and 270 degrees on S^1."""
    mu = DiscreteMeasure(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.5, 0.5]))
    nu = DiscreteMeasure(np.array([[-1.0, 0.0], [0.0, -1.0]]), np.array([0.5, 0.5]))
    return mu, nu
