"""Logarithmic (reflector) cost kernel."""

import math

import numpy as np
from numpy.typing import ArrayLike

from .base import CostKernel
from .errors import KernelDomainError


class LogKernel(CostKernel):
    """l(t) = -log t, so c(x, y) = -log(1 - x.y), the far-field reflector cost."""

    name = "log"

    # g(t) = (2 - t) / t is onto [0, inf), so M reaches every nonzero a
    g_sup = math.inf

    def l(self, t: np.ndarray) -> np.ndarray:
        return -np.log(t)

    def l_prime(self, t: np.ndarray) -> np.ndarray:
        return -1.0 / np.asarray(t, dtype=float)

    def l_second(self, t: np.ndarray) -> np.ndarray:
        return 1.0 / np.asarray(t, dtype=float) ** 2

    def g_inverse(self, r: ArrayLike) -> np.ndarray:
        """Closed form t = 2 / (1 + r)."""
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise KernelDomainError("Value outside the range of g", kernel=self.name)
        return 2.0 / (1.0 + r)
