"""Power-law cost kernels."""

import numpy as np

from .base import CostKernel
from .errors import ArgumentError


class PowerKernel(CostKernel):
    """l(t) = t^(-q).

    Any nonzero q is accepted. For q > 0 the kernel is admissible; q < 0
    gives costs that vanish on the diagonal (q = -1 is the quadratic cost
    |x - y|^2 / 2) and fail the admissibility report.
    """

    def __init__(self, q: float):
        q = float(q)
        if q == 0 or not np.isfinite(q):
            raise ArgumentError("Power kernel exponent must be finite and nonzero", q=q)
        self.q = q
        self.name = f"power:{q:g}"
        super().__init__()

    def l(self, t: np.ndarray) -> np.ndarray:
        return np.asarray(t, dtype=float) ** (-self.q)

    def l_prime(self, t: np.ndarray) -> np.ndarray:
        return -self.q * np.asarray(t, dtype=float) ** (-self.q - 1.0)

    def l_second(self, t: np.ndarray) -> np.ndarray:
        return self.q * (self.q + 1.0) * np.asarray(t, dtype=float) ** (-self.q - 2.0)
