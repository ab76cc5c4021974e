"""c-concave potentials: evaluation, c-transforms, superdifferentials and chain potentials."""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import structlog
from numpy.typing import ArrayLike

from .base import CostKernel
from .config import settings
from .errors import ArgumentError, MonotonicityViolation
from .monotonicity import check_cyclical_monotonicity

logger = structlog.get_logger()


@dataclass(frozen=True, eq=False)
class PotentialFn:
    """psi(x) = min_j c(x, y_j) + lambda_j over a finite anchor set."""

    kernel: CostKernel
    anchors: np.ndarray
    lambdas: np.ndarray

    def __post_init__(self):
        anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        lambdas = np.asarray(self.lambdas, dtype=float).reshape(-1)
        if anchors.shape[0] == 0:
            raise ArgumentError("A potential needs at least one anchor")
        if anchors.shape[0] != lambdas.size:
            raise ArgumentError("One offset per anchor is required")
        if not np.all(np.isfinite(lambdas)):
            raise ArgumentError("Anchor offsets must be finite")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "lambdas", lambdas)

    def __len__(self) -> int:
        return self.lambdas.size

    def branches(self, X: ArrayLike) -> np.ndarray:
        """Matrix of c(x_i, y_j) + lambda_j."""
        return self.kernel.cost_matrix(X, self.anchors) + self.lambdas[None, :]

    def __call__(self, X: ArrayLike) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        values = self.branches(X).min(axis=1)
        return values[0] if X.ndim == 1 else values

    def argmin(self, X: ArrayLike, tie_tol: float = None) -> Tuple[np.ndarray, np.ndarray]:
        """Active anchor per point and whether it wins by more than ``tie_tol`` (relative)."""
        tie_tol = settings.tie_tol if tie_tol is None else tie_tol
        B = self.branches(np.atleast_2d(np.asarray(X, dtype=float)))
        best = np.argmin(B, axis=1)
        lowest = B[np.arange(B.shape[0]), best]
        if B.shape[1] == 1:
            return best, np.isfinite(lowest)
        runner_up = np.partition(B, 1, axis=1)[:, 1]
        with np.errstate(invalid="ignore"):
            unique = (runner_up - lowest) > tie_tol * np.maximum(1.0, np.abs(lowest))
        return best, unique & np.isfinite(lowest)


def c_transform(psi: PotentialFn, X: ArrayLike) -> PotentialFn:
    """psi^c(y) = min_{x in X} c(x, y) - psi(x), returned as a potential anchored at X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    values = psi(X)
    finite = np.isfinite(values)
    if not np.any(finite):
        raise ArgumentError("Potential is not finite anywhere on the evaluation set")
    return PotentialFn(psi.kernel, X[finite], -values[finite])


def double_c_transform(psi: PotentialFn, X: ArrayLike) -> PotentialFn:
    """psi^{cc} with the inner transform taken over X and the outer over psi's anchors."""
    return c_transform(c_transform(psi, X), psi.anchors)


@dataclass(frozen=True, eq=False)
class Superdifferential:
    rows: np.ndarray
    cols: np.ndarray
    delta: float
    psi_values: np.ndarray
    psi_c_values: np.ndarray

    def __len__(self) -> int:
        return self.rows.size


def superdifferential(psi: PotentialFn, X: ArrayLike, Y: ArrayLike, tol: float = None) -> Superdifferential:
    """Pairs (x_i, y_j) with |psi(x_i) + psi^c(y_j) - c(x_i, y_j)| <= tol.

    psi^c is taken over X. ``delta`` is the smallest chord |x - y| among the
    returned pairs.
    """
    tol = settings.optimality_tol if tol is None else tol
    if tol <= 0:
        raise ArgumentError("Tolerance must be positive", tol=tol)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    psi_x = psi(X)
    psi_c_y = c_transform(psi, X)(Y)
    C = psi.kernel.cost_matrix(X, Y)
    with np.errstate(invalid="ignore"):
        gap = np.abs(psi_x[:, None] + psi_c_y[None, :] - C)
    rows, cols = np.nonzero(np.isfinite(C) & (gap <= tol))
    delta = float(np.min(np.linalg.norm(X[rows] - Y[cols], axis=1))) if rows.size else float("inf")
    return Superdifferential(rows=rows, cols=cols, delta=delta, psi_values=psi_x, psi_c_values=psi_c_y)


def shortest_paths(W: np.ndarray, source: int) -> np.ndarray:
    """Bellman-Ford distances from ``source`` on a dense weight matrix (inf = no edge)."""
    n = W.shape[0]
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    scale = 1.0 + float(np.max(np.abs(W[np.isfinite(W)]), initial=0.0))
    eps = 1e-13 * scale
    for _ in range(n):
        candidate = np.min(dist[:, None] + W, axis=0)
        improve = candidate < dist - eps
        if not np.any(improve):
            return dist
        dist = np.where(improve, candidate, dist)
    raise MonotonicityViolation("Chain graph has a negative cycle", nodes=n)


def chain_potential(kernel: CostKernel, X: ArrayLike, Y: ArrayLike, base: int = 0) -> PotentialFn:
    """c-concave potential whose superdifferential contains the pairs (x_i, y_i).

    psi(x) is the infimum over chains base = i_0, ..., i_k of
    c(x, y_k) + sum c(x_{l+1}, y_l) - sum c(x_l, y_l), found as shortest
    paths with edge weight w(i -> j) = c(x_j, y_i) - c(x_i, y_i).
    psi(x_base) = 0 exactly.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = X.shape[0]
    if not 0 <= base < n:
        raise ArgumentError("Base index out of range", base=base, pairs=n)
    report = check_cyclical_monotonicity(kernel, X, Y, max_n=3)
    if not report.monotone:
        raise MonotonicityViolation("Pair set is not c-cyclically monotone", deficit=report.violation.deficit,
                                    indices=report.violation.indices)

    C = kernel.cost_matrix(X, Y)  # C[j, i] = c(x_j, y_i)
    own = np.diag(C).copy()
    W = C.T - own[:, None]
    np.fill_diagonal(W, np.inf)
    dist = shortest_paths(W, base)
    if not np.all(np.isfinite(dist)):
        raise ArgumentError("Some pairs cannot be reached by a finite chain", unreachable=int(np.sum(np.isinf(dist))))
    lambdas = dist - own
    # terms that round below zero at x_base are pinned so psi(x_base) stays 0
    at_base = kernel.cost_matrix(X[base:base + 1], Y)[0]
    lambdas[base] = -at_base[base]
    low = at_base + lambdas < 0
    lambdas[low] = -at_base[low]
    logger.debug("Built chain potential", pairs=n, base=base)
    return PotentialFn(kernel, Y, lambdas)
