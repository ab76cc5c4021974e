"""Base cost kernel class for spherical_ot.

A kernel is the profile l of the cost c(x, y) = l(|x - y|^2 / 2) on S^d.
Subclasses supply l and its first two derivatives; everything else
(the admissibility function g, its inverse and the inverse map M) is
derived here.
"""

from abc import ABC, abstractmethod
from functools import cached_property
from typing import List, Literal, Optional, Tuple

import numpy as np
import structlog
from numpy.typing import ArrayLike
from pydantic import BaseModel, Field

from .config import settings
from .errors import ArgumentError, KernelDomainError
from .sphere import (
    TangentVector,
    UnitVector,
    dot,
    half_sq_dist,
    pairwise_half_sq_dist,
    tangential_project,
)

logger = structlog.get_logger()

# Smallest t used when bracketing g^{-1}; |x - y| below ~1.4e-6 is out of M's reach.
T_MIN = 1e-12

_DIVERGENCE_STEPS = np.array([10.0 ** -k for k in range(1, 301)])


class AdmissibilityReport(BaseModel):
    """Outcome of the runtime checks on a kernel profile."""

    kernel: str
    l_prime_nonzero: bool
    diverges_at_zero: bool
    g_monotone: bool
    direction: Literal["decreasing", "increasing", "none"]
    delta: float
    domain_of_M: Optional[Tuple[float, float]] = None
    failures: List[Tuple[float, str]] = Field(default_factory=list)

    @property
    def admissible(self) -> bool:
        return self.l_prime_nonzero and self.diverges_at_zero and self.g_monotone


class CostKernel(ABC):
    """Abstract base class for all cost profiles."""

    name: str = "kernel"

    def __init__(self):
        self.log = logger.bind(kernel=self.name)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({self.name!r})"

    @abstractmethod
    def l(self, t: np.ndarray) -> np.ndarray:
        """Profile l(t) for t in (0, 2]."""
        pass

    @abstractmethod
    def l_prime(self, t: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def l_second(self, t: np.ndarray) -> np.ndarray:
        pass

    # -- costs --------------------------------------------------------

    def _profile(self, t: np.ndarray) -> np.ndarray:
        """l(t) with l(0) = +inf and a hard failure on NaN."""
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t)
        out = np.full(flat.shape, np.inf)
        off_diagonal = flat > 0
        with np.errstate(over="ignore", divide="ignore"):
            out[off_diagonal] = self.l(flat[off_diagonal])
        if np.any(np.isnan(out)):
            raise ArgumentError("Cost evaluation produced NaN", kernel=self.name)
        return out.reshape(t.shape)

    def cost(self, x: ArrayLike, y: ArrayLike) -> float:
        """c(x, y), equal to +inf exactly on the diagonal."""
        return float(self._profile(half_sq_dist(np.asarray(x, dtype=float), np.asarray(y, dtype=float))))

    def costs(self, X: ArrayLike, Y: ArrayLike) -> np.ndarray:
        """Row-wise c(x_i, y_i)."""
        return self._profile(half_sq_dist(X, Y))

    def cost_matrix(self, X: ArrayLike, Y: ArrayLike) -> np.ndarray:
        """Matrix C[i, j] = c(x_i, y_j)."""
        return self._profile(pairwise_half_sq_dist(X, Y))

    @cached_property
    def cost_floor(self) -> float:
        """Infimum of c over pairs of distinct points (l(2) for decreasing l)."""
        samples = np.concatenate([np.linspace(1e-3, 2.0, 2001), np.logspace(-12, -3, 200)])
        return float(np.min(self._profile(samples)))

    def shift(self) -> float:
        """Constant added to c so that the shifted cost is nonnegative."""
        return -min(0.0, self.cost_floor)

    # -- derivatives --------------------------------------------------

    def tangential_gradient(self, x: ArrayLike, y: ArrayLike) -> TangentVector:
        """a = -l'(t) (y - (x.y) x), the gradient of c(., y) along S^d at x."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = half_sq_dist(x, y)
        if np.any(t == 0):
            raise KernelDomainError("Cost is not differentiable on the diagonal", kernel=self.name)
        y_par = tangential_project(y, x)
        scale = -self.l_prime(t)
        return TangentVector(base=x, vec=np.expand_dims(np.asarray(scale), -1) * y_par.vec)

    def g_value(self, t: ArrayLike) -> np.ndarray:
        """g(t) = t (2 - t) l'(t)^2."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0) or np.any(t > 2):
            raise KernelDomainError("g is defined on (0, 2]", kernel=self.name)
        return t * (2.0 - t) * self.l_prime(t) ** 2

    def g_prime(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        lp = self.l_prime(t)
        return (2.0 - 2.0 * t) * lp ** 2 + 2.0 * t * (2.0 - t) * lp * self.l_second(t)

    @cached_property
    def g_sup(self) -> float:
        """Largest |a|^2 that g^{-1} can resolve, g(T_MIN)."""
        with np.errstate(over="ignore"):
            return float(self.g_value(T_MIN))

    def g_inverse(self, r: ArrayLike) -> np.ndarray:
        """Solve g(t) = r on (0, 2] by bisection followed by a Newton polish."""
        if not self._g_decreasing:
            raise KernelDomainError("g is not monotone; g^{-1} does not exist", kernel=self.name)
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or np.any(r > self.g_sup) or np.any(np.isnan(r)):
            raise KernelDomainError("Value outside the range of g", kernel=self.name, sup=self.g_sup)
        lo = np.full(r.shape, T_MIN)
        hi = np.full(r.shape, 2.0)
        with np.errstate(over="ignore"):
            for _ in range(settings.bisection_max_iter):
                width = hi - lo
                if np.all(width <= settings.bisection_xtol * hi):
                    break
                geometric = hi > 4.0 * lo
                mid = np.where(geometric, np.sqrt(lo * hi), 0.5 * (lo + hi))
                above = self.g_value(mid) > r
                # g decreases, so g(mid) > r puts the root to the right of mid
                lo = np.where(above, mid, lo)
                hi = np.where(above, hi, mid)
            t = 0.5 * (lo + hi)
            for _ in range(2):
                slope = self.g_prime(t)
                step = np.where(slope != 0, (self.g_value(t) - r) / np.where(slope != 0, slope, 1.0), 0.0)
                candidate = t - step
                t = np.where((candidate >= lo) & (candidate <= hi), candidate, t)
        return t

    @cached_property
    def _g_decreasing(self) -> bool:
        return self.admissibility().g_monotone

    # -- inverse map --------------------------------------------------

    def _apply_M(self, x: np.ndarray, a: np.ndarray, r: np.ndarray) -> np.ndarray:
        s = np.asarray(self.g_inverse(r))
        y = np.expand_dims(1.0 - s, -1) * x - a / np.expand_dims(np.asarray(self.l_prime(s)), -1)
        return y / np.linalg.norm(y, axis=-1, keepdims=True)

    def inverse_map_M(self, a: TangentVector) -> UnitVector:
        """M(a, x) = (1 - g^{-1}(|a|^2)) x - a / l'(g^{-1}(|a|^2)), the unique y with grad c(x, y) = a."""
        x = np.asarray(a.base, dtype=float).reshape(-1)
        vec = np.asarray(a.vec, dtype=float).reshape(-1)
        r = float(np.dot(vec, vec))
        if r == 0.0:
            raise KernelDomainError("M is undefined at a = 0", kernel=self.name)
        if r > self.g_sup:
            raise KernelDomainError("|a|^2 exceeds the range of g", kernel=self.name, value=r)
        if r <= settings.boundary_tol:
            self.log.debug("Evaluating M near the antipodal boundary", norm_sq=r)
        return UnitVector(self._apply_M(x, vec, np.asarray(r)))

    def inverse_map_M_batch(self, x: ArrayLike, a: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row-wise M without raising.

        Returns (Y, valid, boundary): invalid rows (a = 0 or |a|^2 beyond
        the range of g) hold NaN; boundary rows have |a|^2 within
        ``boundary_tol`` of zero, i.e. near-antipodal targets.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = np.atleast_2d(np.asarray(a, dtype=float))
        r = dot(a, a)
        valid = (r > 0) & (r <= self.g_sup)
        Y = np.full(x.shape, np.nan)
        if np.any(valid):
            Y[valid] = self._apply_M(x[valid], a[valid], r[valid])
        boundary = valid & (r <= settings.boundary_tol)
        return Y, valid, boundary

    # -- admissibility ------------------------------------------------

    def admissibility(self, delta: float = 0.1) -> AdmissibilityReport:
        """Check l' != 0, divergence at 0 and monotonicity of g on sampled t.

        The reported domain of M is g[delta^2 / 2, 2], the values of |a|^2
        reachable from targets at chord distance at least ``delta``.
        """
        if not 0 < delta <= 2:
            raise ArgumentError("Separation must lie in (0, 2]", delta=delta)
        failures: List[Tuple[float, str]] = []
        t = np.unique(np.concatenate([np.linspace(1e-3, 2.0, 2001), np.logspace(-12, -3, 200)]))
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            lp = self.l_prime(t)
            bad = ~np.isfinite(lp) | (lp == 0)
            failures.extend((float(s), "l' vanishes or is not finite") for s in t[bad][:10])
            l_prime_nonzero = not np.any(bad)

            tail = self.l(_DIVERGENCE_STEPS)
            # once l overflows to +inf the remaining steps are trivially non-decreasing
            increasing = bool(np.all((np.diff(tail) >= 0) | np.isposinf(tail[1:])))
            far, near = tail[149], tail[-1]
            diverges = increasing and (np.isinf(near) or near - far > 0.5)
            if not diverges:
                failures.append((float(_DIVERGENCE_STEPS[-1]), "l does not diverge as t -> 0+"))

            g = t * (2.0 - t) * lp ** 2
            gp = self.g_prime(t)
            rising = np.diff(g) >= 0
            failures.extend((float(s), "g is not decreasing") for s in t[1:][rising][:10])
            g_decreasing = (not np.any(rising)) and bool(np.all(gp[np.isfinite(gp)] <= 0))
            g_increasing = bool(np.all(np.diff(g) > 0))

        direction = "decreasing" if g_decreasing else ("increasing" if g_increasing else "none")
        domain = None
        if g_decreasing:
            with np.errstate(over="ignore"):
                domain = (0.0, float(self.g_value(delta * delta / 2.0)))
        report = AdmissibilityReport(
            kernel=self.name,
            l_prime_nonzero=l_prime_nonzero,
            diverges_at_zero=diverges,
            g_monotone=g_decreasing,
            direction=direction,
            delta=delta,
            domain_of_M=domain,
            failures=failures,
        )
        self.log.debug("Checked kernel admissibility", admissible=report.admissible, direction=direction)
        return report
